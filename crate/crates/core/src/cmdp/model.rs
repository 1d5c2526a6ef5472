use std::fmt;

use crate::error::{Error, Result};

/// Row-sum and simplex tolerance for stochastic vectors.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// Upper bound on `|S|·|A|` for the dense solvers.
pub const MAX_STATE_ACTIONS: usize = 10_000;

/// Raw, unvalidated description of a tabular CMDP.
///
/// Channels `0..m` are objectives (maximized) and channels `m..m+p` are
/// constraint costs with limits `limits[i - m]`. Tables are stored flat and
/// row-major: `transition[(s * A + a) * S + s2]` and `rewards[(i * S + s) * A + a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CmdpParts {
    pub n_states: usize,
    pub n_actions: usize,
    pub n_objectives: usize,
    pub n_constraints: usize,
    pub gamma: f64,
    pub r_max: f64,
    pub rho: Vec<f64>,
    pub limits: Vec<f64>,
    pub transition: Vec<f64>,
    pub rewards: Vec<f64>,
}

impl CmdpParts {
    pub fn n_channels(&self) -> usize {
        self.n_objectives + self.n_constraints
    }

    pub fn transition_index(&self, s: usize, a: usize, next: usize) -> usize {
        (s * self.n_actions + a) * self.n_states + next
    }

    pub fn reward_index(&self, channel: usize, s: usize, a: usize) -> usize {
        (channel * self.n_states + s) * self.n_actions + a
    }
}

/// Structural problems found by [`validate_cmdp`]; empty means valid.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub issues: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.issues.is_empty()
    }

    fn push(&mut self, issue: impl Into<String>) {
        self.issues.push(issue.into());
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.issues.is_empty() {
            return write!(f, "valid");
        }
        write!(f, "{}", self.issues.join("; "))
    }
}

/// Checks every structural invariant of a CMDP description and reports the
/// violations instead of failing on the first one.
pub fn validate_cmdp(parts: &CmdpParts) -> ValidationReport {
    let mut report = ValidationReport::default();
    let (ns, na) = (parts.n_states, parts.n_actions);
    let nc = parts.n_channels();

    if ns == 0 {
        report.push("n_states must be positive");
    }
    if na == 0 {
        report.push("n_actions must be positive");
    }
    if parts.n_objectives == 0 {
        report.push("at least one objective channel is required");
    }
    if ns.saturating_mul(na) > MAX_STATE_ACTIONS {
        report.push(format!(
            "|S|*|A| = {} exceeds the dense-solver cap {MAX_STATE_ACTIONS}",
            ns.saturating_mul(na)
        ));
    }
    if !(parts.gamma >= 0.0 && parts.gamma < 1.0) {
        report.push(format!("discount out of [0,1): {}", parts.gamma));
    }
    if !(parts.r_max.is_finite() && parts.r_max > 0.0) {
        report.push(format!("r_max must be positive and finite: {}", parts.r_max));
    }

    if parts.rho.len() != ns {
        report.push(format!("rho has length {} (expected {ns})", parts.rho.len()));
    } else {
        check_distribution(&parts.rho, "rho", &mut report);
    }

    if parts.limits.len() != parts.n_constraints {
        report.push(format!(
            "limits has length {} (expected {})",
            parts.limits.len(),
            parts.n_constraints
        ));
    } else if let Some(i) = parts.limits.iter().position(|c| !c.is_finite()) {
        report.push(format!("limit for channel {} is not finite", parts.n_objectives + i));
    }

    if parts.transition.len() != ns * na * ns {
        report.push(format!(
            "transition has {} entries (expected {})",
            parts.transition.len(),
            ns * na * ns
        ));
    } else {
        for s in 0..ns {
            for a in 0..na {
                let row = &parts.transition[(s * na + a) * ns..(s * na + a + 1) * ns];
                check_distribution(row, &format!("row ({s},{a})"), &mut report);
            }
        }
    }

    if parts.rewards.len() != nc * ns * na {
        report.push(format!(
            "rewards has {} entries (expected {})",
            parts.rewards.len(),
            nc * ns * na
        ));
    } else {
        for i in 0..nc {
            let block = &parts.rewards[i * ns * na..(i + 1) * ns * na];
            if let Some(k) = block.iter().position(|r| !r.is_finite()) {
                report.push(format!("channel {i} value not finite at ({},{})", k / na, k % na));
            } else if let Some(k) = block.iter().position(|&r| r < 0.0) {
                report.push(format!("channel {i} value below 0 at ({},{})", k / na, k % na));
            } else if let Some(k) = block.iter().position(|&r| r > parts.r_max) {
                report.push(format!(
                    "channel {i} value above r_max at ({},{})",
                    k / na,
                    k % na
                ));
            }
        }
    }
    report
}

fn check_distribution(values: &[f64], name: &str, report: &mut ValidationReport) {
    if values.iter().any(|v| !v.is_finite()) {
        report.push(format!("{name} has non-finite entries"));
        return;
    }
    if let Some(v) = values.iter().find(|&&v| v < 0.0) {
        report.push(format!("{name} has negative entry {v}"));
    }
    let sum: f64 = values.iter().sum();
    if (sum - 1.0).abs() > STOCHASTIC_TOL {
        report.push(format!("{name} sums to {sum}"));
    }
}

/// A validated tabular constrained multi-objective MDP.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularCmdp {
    parts: CmdpParts,
}

impl TabularCmdp {
    pub fn new(parts: CmdpParts) -> Result<Self> {
        let report = validate_cmdp(&parts);
        if !report.is_valid() {
            return Err(Error::InvalidModel(report.to_string()));
        }
        Ok(Self { parts })
    }

    pub fn parts(&self) -> &CmdpParts {
        &self.parts
    }

    pub fn into_parts(self) -> CmdpParts {
        self.parts
    }

    pub fn n_states(&self) -> usize {
        self.parts.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.parts.n_actions
    }

    /// `|S|·|A|`, the parameter dimension of a tabular softmax policy.
    pub fn n_state_actions(&self) -> usize {
        self.parts.n_states * self.parts.n_actions
    }

    pub fn n_objectives(&self) -> usize {
        self.parts.n_objectives
    }

    pub fn n_constraints(&self) -> usize {
        self.parts.n_constraints
    }

    pub fn n_channels(&self) -> usize {
        self.parts.n_channels()
    }

    pub fn gamma(&self) -> f64 {
        self.parts.gamma
    }

    pub fn r_max(&self) -> f64 {
        self.parts.r_max
    }

    pub fn rho(&self) -> &[f64] {
        &self.parts.rho
    }

    /// Limits for the constraint channels, indexed from 0 (channel `m`).
    pub fn limits(&self) -> &[f64] {
        &self.parts.limits
    }

    /// Limit of a constraint channel given by its absolute channel index.
    pub fn limit(&self, channel: usize) -> Option<f64> {
        channel
            .checked_sub(self.parts.n_objectives)
            .and_then(|k| self.parts.limits.get(k).copied())
    }

    pub fn constraint_channels(&self) -> std::ops::Range<usize> {
        self.parts.n_objectives..self.parts.n_channels()
    }

    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let start = self.parts.transition_index(s, a, 0);
        &self.parts.transition[start..start + self.parts.n_states]
    }

    pub fn reward(&self, channel: usize, s: usize, a: usize) -> f64 {
        self.parts.rewards[self.parts.reward_index(channel, s, a)]
    }

    /// Reward table of one channel, flat over `(s, a)`.
    pub fn reward_channel(&self, channel: usize) -> &[f64] {
        let n = self.n_state_actions();
        &self.parts.rewards[channel * n..(channel + 1) * n]
    }

    /// Upper bound on any discounted return, `r_max / (1 - γ)`.
    pub fn value_bound(&self) -> f64 {
        self.parts.r_max / (1.0 - self.parts.gamma)
    }

    /// Returns a copy with a different discount; validation is rerun.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        let mut parts = self.parts.clone();
        parts.gamma = gamma;
        Self::new(parts)
    }

    /// Returns a copy with different constraint limits.
    pub fn with_limits(&self, limits: Vec<f64>) -> Result<Self> {
        let mut parts = self.parts.clone();
        parts.limits = limits;
        Self::new(parts)
    }

    /// Returns a copy with a different initial distribution.
    pub fn with_rho(&self, rho: Vec<f64>) -> Result<Self> {
        let mut parts = self.parts.clone();
        parts.rho = rho;
        Self::new(parts)
    }
}
