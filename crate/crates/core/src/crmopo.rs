//! Constraint-rectified multi-objective policy optimization.
//!
//! Each iteration evaluates the current policy, estimates the constraint
//! values and then either improves the objectives with a momentum-blended
//! CA-NPG step (all constraints within `c_i + β`) or takes one NPG descent
//! step on a violated constraint. Improve iterations form the set `N_0`
//! from which the output policy is drawn.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cmdp::{exact_values, gradient_from_q, visitation_measure, Policy, SoftmaxPolicy, TabularCmdp};
use crate::error::{Error, Result};
use crate::eval::{estimate_constraints, mc_q_tables, td_evaluate_channels, McConfig, TdConfig};
use crate::manipulate::{ca_npg_direction, closed_form_npg_update, fisher_from_visitation, momentum_blend, CaNpgConfig};

/// Step size and constraint tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub step_size: f64,
    pub tolerance: f64,
}

/// Step size `η` and tolerance `β` from the convergence schedule:
///
/// ```text
/// η = (1−γ)² / (r_max m B1) · √(KL / (|S||A| T))
/// β = 4 m B1 √(|S||A|) / ((1−γ)² √T) · (r_max √KL + 1)
/// ```
///
/// `kl_budget` stands in for the expected KL divergence between an optimal
/// policy and the initial one.
pub fn schedule_hyperparams(
    model: &TabularCmdp,
    m: usize,
    max_weight: f64,
    kl_budget: f64,
    horizon: usize,
) -> Result<Hyperparams> {
    if m == 0 || horizon == 0 {
        return Err(Error::InvalidArgument("schedule needs m ≥ 1 and T ≥ 1".into()));
    }
    if !(max_weight.is_finite() && max_weight > 0.0) {
        return Err(Error::InvalidArgument("B1 must be positive".into()));
    }
    if !(kl_budget.is_finite() && kl_budget > 0.0) {
        return Err(Error::InvalidArgument("kl_budget must be positive".into()));
    }
    let sa = model.n_state_actions() as f64;
    let (m, t) = (m as f64, horizon as f64);
    let gap = (1.0 - model.gamma()).powi(2);
    let r_max = model.r_max();
    let step_size = gap / (r_max * m * max_weight) * (kl_budget / (sa * t)).sqrt();
    let tolerance = 4.0 * m * max_weight * sa.sqrt() / (gap * t.sqrt()) * (r_max * kl_budget.sqrt() + 1.0);
    Ok(Hyperparams { step_size, tolerance })
}

/// How `η` and `β` are chosen for a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "rule")]
pub enum Schedule {
    Fixed { step_size: f64, tolerance: f64 },
    /// [`schedule_hyperparams`]; `kl_budget` defaults to `ln |A|`.
    Theorem {
        #[serde(default)]
        kl_budget: Option<f64>,
    },
}

/// Policy-evaluation source for the Q tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum EvalMode {
    /// Exact dynamic programming; constraint estimates are the exact `f_i`.
    #[default]
    Exact,
    /// TD(0) per channel; the per-iteration seed replaces `seed`.
    Td(TdConfig),
    /// Unbiased Monte-Carlo estimates at every pair.
    MonteCarlo(McConfig),
}

/// Momentum coefficient `α_τ` rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case", tag = "rule", content = "alpha")]
pub enum MomentumSchedule {
    Zero,
    /// `α_τ = max(0, 1 − (1−γ) / (m τ √(|S||A|)))`.
    #[default]
    TheoremRate,
    Constant(f64),
}

impl MomentumSchedule {
    pub fn alpha(&self, tau: usize, m: usize, gamma: f64, n_state_actions: usize) -> f64 {
        match *self {
            MomentumSchedule::Zero => 0.0,
            MomentumSchedule::Constant(alpha) => alpha,
            MomentumSchedule::TheoremRate => {
                let denom = m as f64 * tau.max(1) as f64 * (n_state_actions as f64).sqrt();
                (1.0 - (1.0 - gamma) / denom).max(0.0)
            }
        }
    }
}

/// Which violated constraint a rectify step targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RectifyRule {
    #[default]
    LowestIndex,
    LargestViolation,
}

/// Form of the improve step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ImproveStep {
    /// `w + η Σ λ̂_i (1+ψ2) M⁻¹ ∇f_i`, exact for CA-NPG.
    #[default]
    ParameterSpace,
    /// `w + (η/(1−γ)) Σ λ̂_i Q_i`, the pure-NPG exponentiated-Q form.
    ClosedForm,
}

fn default_batch_size() -> usize {
    1000
}
fn default_true() -> bool {
    true
}

/// Full configuration of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub horizon: usize,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default)]
    pub eval: EvalMode,
    /// `|B_t|` for sampled constraint estimates.
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub ca_npg: CaNpgConfig,
    #[serde(default)]
    pub momentum: MomentumSchedule,
    #[serde(default)]
    pub rectify_rule: RectifyRule,
    #[serde(default)]
    pub improve_step: ImproveStep,
    /// Fold constraints into the objectives (negated, unit preference) and
    /// never rectify.
    #[serde(default)]
    pub soft_mode: bool,
    /// Record exact `f_i` of every iterate.
    #[serde(default = "default_true")]
    pub log_exact: bool,
    #[serde(default)]
    pub seed: u64,
    /// Initial softmax parameters, flat over `(s, a)`; zeros when absent.
    #[serde(default)]
    pub initial_params: Option<Vec<f64>>,
    /// Momentum state to continue from instead of a fresh start.
    #[serde(default)]
    pub resume: Option<MomentumState>,
}

/// Blended weights `λ̂` and improve count `τ` carried between iterations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentumState {
    pub lambda_hat: Vec<f64>,
    pub tau: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule::Theorem { kl_budget: None }
    }
}

impl RunConfig {
    /// Exact evaluation, theorem schedule and theorem-rate momentum.
    pub fn exact(model: &TabularCmdp, horizon: usize) -> Self {
        Self {
            horizon,
            schedule: Schedule::Theorem { kl_budget: None },
            eval: EvalMode::Exact,
            batch_size: default_batch_size(),
            ca_npg: CaNpgConfig::new(model.n_objectives()),
            momentum: MomentumSchedule::TheoremRate,
            rectify_rule: RectifyRule::default(),
            improve_step: ImproveStep::default(),
            soft_mode: false,
            log_exact: true,
            seed: 0,
            initial_params: None,
            resume: None,
        }
    }

    /// Number of objectives seen by CA-NPG (`m`, or `m + p` in soft mode).
    pub fn effective_objectives(&self, model: &TabularCmdp) -> usize {
        if self.soft_mode {
            model.n_channels()
        } else {
            model.n_objectives()
        }
    }

    /// Resolves `η` and `β` for `model`.
    pub fn hyperparams(&self, model: &TabularCmdp) -> Result<Hyperparams> {
        match &self.schedule {
            Schedule::Fixed { step_size, tolerance } => {
                if !(step_size.is_finite() && *step_size > 0.0) {
                    return Err(Error::InvalidArgument("step size must be positive".into()));
                }
                if !(tolerance.is_finite() && *tolerance >= 0.0) {
                    return Err(Error::InvalidArgument("tolerance must be nonnegative".into()));
                }
                Ok(Hyperparams {
                    step_size: *step_size,
                    tolerance: *tolerance,
                })
            }
            Schedule::Theorem { kl_budget } => schedule_hyperparams(
                model,
                self.effective_objectives(model),
                self.ca_npg.weight_bounds.max_entry,
                kl_budget.unwrap_or((model.n_actions() as f64).ln().max(f64::MIN_POSITIVE)),
                self.horizon,
            ),
        }
    }

    /// Preferences used by CA-NPG: unit weights when none are given, and
    /// unit weights for the folded constraints in soft mode.
    pub fn preferences(&self, model: &TabularCmdp) -> Result<Vec<f64>> {
        let given = &self.ca_npg.preferences;
        let m = model.n_objectives();
        let want = self.effective_objectives(model);
        if given.is_empty() {
            Ok(vec![1.0; want])
        } else if given.len() == want {
            Ok(given.clone())
        } else if self.soft_mode && given.len() == m {
            let mut prefs = given.clone();
            prefs.resize(want, 1.0);
            Ok(prefs)
        } else {
            Err(Error::DimensionMismatch {
                what: "preferences",
                expected: want,
                actual: given.len(),
            })
        }
    }
}

/// Outcome of the constraint check.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConstraintCheck {
    AllSatisfied,
    /// Positions (within the constraint list) with `J̄_i > c_i + β`.
    Violated(Vec<usize>),
}

/// Compares constraint estimates with `limits + β`; the boundary counts as
/// satisfied.
pub fn check_constraints(estimates: &[f64], limits: &[f64], tolerance: f64) -> ConstraintCheck {
    let violated: Vec<usize> = estimates
        .iter()
        .zip(limits)
        .enumerate()
        .filter(|(_, (j, c))| **j > **c + tolerance)
        .map(|(k, _)| k)
        .collect();
    if violated.is_empty() {
        ConstraintCheck::AllSatisfied
    } else {
        ConstraintCheck::Violated(violated)
    }
}

/// One NPG descent step on constraint channel `channel` using exact Q values.
pub fn rectify_step(model: &TabularCmdp, w: &SoftmaxPolicy, channel: usize, step_size: f64) -> Result<SoftmaxPolicy> {
    if !model.constraint_channels().contains(&channel) {
        return Err(Error::InvalidArgument(format!("channel {channel} is not a constraint channel")));
    }
    let values = exact_values(model, &w.policy()?)?;
    rectify_with_q(w, &values.q[channel], step_size, model.gamma())
}

fn rectify_with_q(w: &SoftmaxPolicy, q: &[f64], step_size: f64, gamma: f64) -> Result<SoftmaxPolicy> {
    Ok(closed_form_npg_update(w, std::slice::from_ref(&q.to_vec()), &[1.0], -step_size, gamma)?.params)
}

/// Branch taken at one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "channel")]
pub enum Branch {
    Improve,
    /// Rectification of the given (absolute) constraint channel.
    Rectify(usize),
}

impl std::fmt::Display for Branch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Branch::Improve => write!(f, "improve"),
            Branch::Rectify(i) => write!(f, "rectify:{i}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub t: usize,
    pub branch: Branch,
    pub in_n0: bool,
    /// Estimates `J̄_i` for every channel.
    pub estimates: Vec<f64>,
    /// Exact `f_i` of `π_{w_t}` when exact logging is on.
    pub exact: Option<Vec<f64>>,
    pub theta: Option<Vec<f64>>,
    /// Unblended CA-NPG weights `λ_τ` (after bound enforcement).
    pub lambda: Option<Vec<f64>>,
    /// Blended weights `λ̂_τ`.
    pub lambda_hat: Option<Vec<f64>>,
    pub alpha: Option<f64>,
    /// Norm of the parameter-space update direction.
    pub direction_norm: f64,
}

/// Complete record of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub records: Vec<IterationRecord>,
    /// Improve iterations, in order.
    pub n0: Vec<usize>,
    /// Parameters `w_t` for each iteration in `n0`.
    pub n0_params: Vec<SoftmaxPolicy>,
    pub final_params: SoftmaxPolicy,
    /// Momentum state after the last iteration; feed it to
    /// [`RunConfig::resume`] together with `final_params` to continue.
    pub momentum: MomentumState,
    pub hyperparams: Hyperparams,
    pub n_objectives: usize,
    pub n_constraints: usize,
    /// Preferences over the objectives (all channels in soft mode).
    pub preferences: Vec<f64>,
}

impl RunTrace {
    /// Iterations that rectified each constraint channel `N_i`, keyed by
    /// absolute channel.
    pub fn rectify_sets(&self) -> Vec<(usize, Vec<usize>)> {
        let channels = self.n_objectives..self.n_objectives + self.n_constraints;
        channels
            .map(|i| {
                let ts = self
                    .records
                    .iter()
                    .filter(|r| r.branch == Branch::Rectify(i))
                    .map(|r| r.t)
                    .collect();
                (i, ts)
            })
            .collect()
    }

    /// Writes one CSV row per iteration.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        let nc = self.n_objectives + self.n_constraints;
        let exact = self.records.first().is_some_and(|r| r.exact.is_some());
        let n_weights = self
            .records
            .iter()
            .find_map(|r| r.lambda_hat.as_ref().map(Vec::len))
            .unwrap_or(self.preferences.len());

        let mut header = vec!["t".to_string(), "branch".into(), "in_n0".into()];
        header.extend((self.n_objectives..nc).map(|i| format!("J_{i}")));
        if exact {
            header.extend((0..nc).map(|i| format!("f_{i}")));
        }
        header.push("direction_norm".into());
        header.extend((0..n_weights).map(|i| format!("lambda_hat_{i}")));
        header.extend((0..n_weights).map(|i| format!("lambda_{i}")));
        out.write_record(&header)?;

        for r in &self.records {
            let mut row = vec![r.t.to_string(), r.branch.to_string(), r.in_n0.to_string()];
            row.extend(r.estimates[self.n_objectives..].iter().map(f64::to_string));
            if exact {
                if let Some(f) = &r.exact {
                    row.extend(f.iter().map(f64::to_string));
                }
            }
            row.push(r.direction_norm.to_string());
            for weights in [&r.lambda_hat, &r.lambda] {
                match weights {
                    Some(l) => row.extend(l.iter().map(f64::to_string)),
                    None => row.extend(std::iter::repeat_n(String::new(), n_weights)),
                }
            }
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

fn start_weights(preferences: &[f64], config: &CaNpgConfig) -> Vec<f64> {
    let m = preferences.len() as f64;
    let psi2 = config.anchor_weight;
    let raw: Vec<f64> = preferences.iter().map(|x| x * (1.0 / m + psi2) / (1.0 + psi2)).collect();
    config.weight_bounds.enforce(&raw)
}

/// Runs the optimization loop for `config.horizon` iterations.
pub fn run(model: &TabularCmdp, config: &RunConfig) -> Result<RunTrace> {
    if config.horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    let hyper = config.hyperparams(model)?;
    let preferences = config.preferences(model)?;
    let mut ca_config = config.ca_npg.clone();
    ca_config.preferences = preferences.clone();
    ca_config.validate()?;
    if matches!(config.eval, EvalMode::Td(_) | EvalMode::MonteCarlo(_)) && config.batch_size == 0 {
        return Err(Error::Empty("constraint-estimation batch"));
    }

    let (ns, na) = (model.n_states(), model.n_actions());
    let gamma = model.gamma();
    let m = model.n_objectives();
    let n_eff = preferences.len();
    // objective list for CA-NPG: channel and sign
    let objectives: Vec<(usize, f64)> = (0..n_eff).map(|i| (i, if i < m { 1.0 } else { -1.0 })).collect();

    let mut w = match &config.initial_params {
        Some(params) => SoftmaxPolicy::new(ns, na, params.clone())?,
        None => SoftmaxPolicy::zeros(ns, na),
    };
    let mut seeds = ChaCha8Rng::seed_from_u64(config.seed);
    let (mut lambda_hat, mut tau) = match &config.resume {
        Some(state) if state.lambda_hat.len() != n_eff => {
            return Err(Error::DimensionMismatch {
                what: "resumed momentum weights",
                expected: n_eff,
                actual: state.lambda_hat.len(),
            })
        }
        Some(state) => (state.lambda_hat.clone(), state.tau),
        None => (start_weights(&preferences, &ca_config), 0),
    };
    let mut records = Vec::with_capacity(config.horizon);
    let mut n0 = Vec::new();
    let mut n0_params = Vec::new();

    for t in 0..config.horizon {
        let eval_seed: u64 = seeds.random();
        let batch_seed: u64 = seeds.random();
        let policy = w.policy()?;
        let visitation = visitation_measure(model, &policy)?;
        let exact = if config.log_exact || config.eval == EvalMode::Exact {
            Some(exact_values(model, &policy)?)
        } else {
            None
        };
        let q_tables = match &config.eval {
            EvalMode::Exact => exact.as_ref().expect("exact values computed").q.clone(),
            EvalMode::Td(td) => {
                let channels: Vec<usize> = (0..model.n_channels()).collect();
                let td = TdConfig { seed: eval_seed, ..td.clone() };
                td_evaluate_channels(model, &policy, &channels, &td)?
            }
            EvalMode::MonteCarlo(mc) => mc_q_tables(model, &policy, &McConfig { seed: eval_seed, ..mc.clone() })?,
        };
        let estimates = match &config.eval {
            EvalMode::Exact => exact.as_ref().expect("exact values computed").objective.clone(),
            _ => estimate_constraints(model, &policy, &q_tables, config.batch_size, batch_seed)?.values,
        };

        let check = if config.soft_mode {
            ConstraintCheck::AllSatisfied
        } else {
            check_constraints(&estimates[m..], model.limits(), hyper.tolerance)
        };

        let record = match check {
            ConstraintCheck::AllSatisfied => {
                tau += 1;
                n0.push(t);
                n0_params.push(w.clone());
                let gradients: Vec<_> = objectives
                    .iter()
                    .map(|&(i, sign)| gradient_from_q(&policy, &visitation, &q_tables[i], gamma) * sign)
                    .collect();
                let fisher = fisher_from_visitation(&policy, &visitation);
                let result = ca_npg_direction(&gradients, &fisher, &ca_config)?;
                let alpha = config.momentum.alpha(tau, n_eff, gamma, model.n_state_actions());
                lambda_hat = momentum_blend(&lambda_hat, &result.lambda, alpha)?;
                let direction_norm = match config.improve_step {
                    ImproveStep::ParameterSpace => {
                        let d = result.combine(&lambda_hat);
                        w = w.stepped(&d, hyper.step_size)?;
                        d.norm()
                    }
                    ImproveStep::ClosedForm => {
                        let signed: Vec<Vec<f64>> = objectives
                            .iter()
                            .map(|&(i, sign)| q_tables[i].iter().map(|q| sign * q).collect())
                            .collect();
                        let next = closed_form_npg_update(&w, &signed, &lambda_hat, hyper.step_size, gamma)?.params;
                        let moved = next
                            .params()
                            .iter()
                            .zip(w.params())
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum::<f64>()
                            .sqrt();
                        w = next;
                        moved / hyper.step_size
                    }
                };
                IterationRecord {
                    t,
                    branch: Branch::Improve,
                    in_n0: true,
                    estimates,
                    exact: exact.map(|e| e.objective),
                    theta: Some(result.theta),
                    lambda: Some(result.lambda),
                    lambda_hat: Some(lambda_hat.clone()),
                    alpha: Some(alpha),
                    direction_norm,
                }
            }
            ConstraintCheck::Violated(violated) => {
                let k = match config.rectify_rule {
                    RectifyRule::LowestIndex => violated[0],
                    RectifyRule::LargestViolation => *violated
                        .iter()
                        .max_by(|&&a, &&b| {
                            let excess = |k: usize| estimates[m + k] - model.limits()[k];
                            excess(a).total_cmp(&excess(b)).then(b.cmp(&a))
                        })
                        .expect("nonempty violated set"),
                };
                let channel = m + k;
                let next = rectify_with_q(&w, &q_tables[channel], hyper.step_size, gamma)?;
                let moved = next
                    .params()
                    .iter()
                    .zip(w.params())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                w = next;
                IterationRecord {
                    t,
                    branch: Branch::Rectify(channel),
                    in_n0: false,
                    estimates,
                    exact: exact.map(|e| e.objective),
                    theta: None,
                    lambda: None,
                    lambda_hat: None,
                    alpha: None,
                    direction_norm: moved / hyper.step_size,
                }
            }
        };
        records.push(record);
    }

    Ok(RunTrace {
        records,
        n0,
        n0_params,
        final_params: w,
        momentum: MomentumState { lambda_hat, tau },
        hyperparams: hyper,
        n_objectives: m,
        n_constraints: model.n_constraints(),
        preferences,
    })
}

/// Rule for picking the output policy from `N_0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputRule {
    /// Seeded uniform draw from `N_0`.
    Uniform,
    /// Latest member of `N_0`.
    Last,
    /// Member of `N_0` maximizing `Σ ξ_i f_i` over the objectives (needs
    /// exact logging). A diagnostic rule.
    BestScalarized,
}

impl OutputRule {
    pub const ALL: [OutputRule; 3] = [OutputRule::Uniform, OutputRule::Last, OutputRule::BestScalarized];
}

/// Selected output: the iteration index and its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectedOutput {
    pub t: usize,
    pub params: SoftmaxPolicy,
}

impl SelectedOutput {
    pub fn policy(&self) -> Result<Policy> {
        self.params.policy()
    }
}

pub fn select_output(trace: &RunTrace, rule: OutputRule, seed: u64) -> Result<SelectedOutput> {
    if trace.n0.is_empty() {
        return Err(Error::Empty("improve set N_0"));
    }
    let position = match rule {
        OutputRule::Uniform => ChaCha8Rng::seed_from_u64(seed).random_range(0..trace.n0.len()),
        OutputRule::Last => trace.n0.len() - 1,
        OutputRule::BestScalarized => {
            let m = trace.n_objectives;
            let mut best: Option<(usize, f64)> = None;
            for (pos, &t) in trace.n0.iter().enumerate() {
                let f = trace.records[t]
                    .exact
                    .as_ref()
                    .ok_or_else(|| Error::InvalidArgument("best-scalarized output needs exact logging".into()))?;
                let score: f64 = trace.preferences[..m].iter().zip(f).map(|(x, v)| x * v).sum();
                if best.is_none_or(|(_, b)| score > b) {
                    best = Some((pos, score));
                }
            }
            best.expect("nonempty N_0").0
        }
    };
    Ok(SelectedOutput {
        t: trace.n0[position],
        params: trace.n0_params[position].clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cmdp::{exact_objectives, CmdpParts};
    use crate::generate::{flip_chain, flip_chain_single_objective};

    #[test]
    fn schedule_formula() {
        let model = flip_chain(0.9, 0.5);
        let kl = 2f64.ln();
        let h = schedule_hyperparams(&model, 2, 2.0, kl, 10_000).unwrap();
        let eta = 0.01 / 4.0 * (kl / 40_000.0).sqrt();
        let beta = 4.0 * 2.0 * 2.0 * 2.0 / (0.01 * 100.0) * (kl.sqrt() + 1.0);
        assert!((h.step_size - eta).abs() <= 1e-15 * eta);
        assert!((h.tolerance - beta).abs() <= 1e-12 * beta);
        assert!(schedule_hyperparams(&model, 2, 2.0, 0.0, 10).is_err());
        assert!(schedule_hyperparams(&model, 0, 2.0, 1.0, 10).is_err());
    }

    #[test]
    fn constraint_check_cases() {
        assert_eq!(check_constraints(&[], &[], 0.1), ConstraintCheck::AllSatisfied);
        assert_eq!(check_constraints(&[0.6], &[0.5], 0.1), ConstraintCheck::AllSatisfied);
        assert_eq!(check_constraints(&[0.7, 0.2], &[0.5, 0.5], 0.1), ConstraintCheck::Violated(vec![0]));
    }

    #[test]
    fn always_flip_violates_flip_budget() {
        let model = flip_chain(0.9, 0.5);
        let f = exact_objectives(&model, &Policy::deterministic(2, &[1, 1]).unwrap()).unwrap();
        assert!((f[2] - 10.0).abs() < 1e-10);
        assert_eq!(check_constraints(&f[2..], model.limits(), 0.1), ConstraintCheck::Violated(vec![0]));
    }

    #[test]
    fn rectify_decreases_flip_cost() {
        let model = flip_chain(0.9, 0.5);
        let w = SoftmaxPolicy::new(2, 2, vec![-3.0, 3.0, -3.0, 3.0]).unwrap();
        let before = exact_objectives(&model, &w.policy().unwrap()).unwrap()[2];
        let next = rectify_step(&model, &w, 2, 0.01).unwrap();
        let after = exact_objectives(&model, &next.policy().unwrap()).unwrap()[2];
        assert!(after < before);
        let same = rectify_step(&model, &w, 2, 0.0).unwrap();
        assert_eq!(same, w);
        assert!(rectify_step(&model, &w, 0, 0.1).is_err());
    }

    #[test]
    fn rectify_at_flat_cost_is_fixed_point() {
        // cost 1 for every action: Q is constant across actions in each state
        let mut parts = flip_chain(0.9, 0.5).into_parts();
        for k in 8..12 {
            parts.rewards[k] = 1.0;
        }
        let model = TabularCmdp::new(CmdpParts { limits: vec![0.5], ..parts }).unwrap();
        let w = SoftmaxPolicy::new(2, 2, vec![0.4, -0.2, 0.1, 0.3]).unwrap();
        let next = rectify_step(&model, &w, 2, 0.5).unwrap();
        assert!(next.policy().unwrap().max_total_variation(&w.policy().unwrap()) < 1e-10);
    }

    #[test]
    fn single_objective_run_is_monotone() {
        let model = flip_chain_single_objective(0.9);
        let trace = run(&model, &RunConfig::exact(&model, 200)).unwrap();
        assert_eq!(trace.n0.len(), 200);
        let f: Vec<f64> = trace.records.iter().map(|r| r.exact.as_ref().unwrap()[0]).collect();
        for pair in f.windows(2) {
            assert!(pair[1] >= pair[0] - 1e-9);
        }
        assert!(f[199] > f[0]);
    }

    #[test]
    fn infeasible_model_always_rectifies() {
        let model = flip_chain(0.9, 0.5).with_limits(vec![-1.0]).unwrap();
        let mut config = RunConfig::exact(&model, 30);
        config.schedule = Schedule::Fixed {
            step_size: 0.05,
            tolerance: 0.0,
        };
        let trace = run(&model, &config).unwrap();
        assert!(trace.n0.is_empty());
        assert!(trace.records.iter().all(|r| r.branch == Branch::Rectify(2)));
        assert!(select_output(&trace, OutputRule::Uniform, 0).is_err());
        // each rectify step does not increase the cost
        let cost: Vec<f64> = trace.records.iter().map(|r| r.exact.as_ref().unwrap()[2]).collect();
        for pair in cost.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-9);
        }
    }

    #[test]
    fn soft_mode_never_rectifies() {
        let model = flip_chain(0.9, 0.5).with_limits(vec![-1.0]).unwrap();
        let mut config = RunConfig::exact(&model, 20);
        config.soft_mode = true;
        let trace = run(&model, &config).unwrap();
        assert_eq!(trace.n0.len(), 20);
        assert_eq!(trace.preferences, vec![1.0, 1.0, 1.0]);
        assert_eq!(trace.records[0].lambda_hat.as_ref().unwrap().len(), 3);
    }

    #[test]
    fn runs_are_reproducible() {
        let model = flip_chain(0.9, 0.5);
        let mut config = RunConfig::exact(&model, 15);
        config.eval = EvalMode::MonteCarlo(McConfig::new(20, 0));
        config.batch_size = 50;
        config.seed = 77;
        let a = run(&model, &config).unwrap();
        let b = run(&model, &config).unwrap();
        assert_eq!(a, b);
        config.seed = 78;
        assert_ne!(a, run(&model, &config).unwrap());
    }

    #[test]
    fn partition_and_selection() {
        let model = flip_chain(0.9, 0.5);
        let mut config = RunConfig::exact(&model, 60);
        config.schedule = Schedule::Fixed {
            step_size: 0.5,
            tolerance: 0.0,
        };
        config.initial_params = Some(vec![-2.0, 2.0, 0.0, 0.0]);
        let trace = run(&model, &config).unwrap();
        let rectified: usize = trace.rectify_sets().iter().map(|(_, ts)| ts.len()).sum();
        assert_eq!(trace.n0.len() + rectified, 60);
        for r in &trace.records {
            assert_eq!(r.in_n0, r.branch == Branch::Improve);
            assert_eq!(r.in_n0, trace.n0.contains(&r.t));
        }
        assert!(!trace.n0.is_empty() && rectified > 0);
        for rule in OutputRule::ALL {
            let out = select_output(&trace, rule, 3).unwrap();
            assert!(trace.n0.contains(&out.t));
        }
        assert_eq!(
            select_output(&trace, OutputRule::Uniform, 3).unwrap(),
            select_output(&trace, OutputRule::Uniform, 3).unwrap()
        );
    }

    #[test]
    fn resumed_run_matches_uninterrupted_run() {
        let model = flip_chain(0.9, 0.5);
        let config = |horizon| RunConfig {
            schedule: Schedule::Fixed {
                step_size: 0.05,
                tolerance: 1.0,
            },
            ..RunConfig::exact(&model, horizon)
        };
        let full = run(&model, &config(20)).unwrap();
        let head = run(&model, &config(12)).unwrap();
        let mut tail_config = config(8);
        tail_config.initial_params = Some(head.final_params.params().to_vec());
        tail_config.resume = Some(head.momentum.clone());
        let tail = run(&model, &tail_config).unwrap();
        assert_eq!(tail.final_params, full.final_params);
        assert_eq!(tail.momentum, full.momentum);
    }

    #[test]
    fn trace_csv_layout() {
        let model = flip_chain(0.9, 0.5);
        let trace = run(&model, &RunConfig::exact(&model, 3)).unwrap();
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "t,branch,in_n0,J_2,f_0,f_1,f_2,direction_norm,lambda_hat_0,lambda_hat_1,lambda_0,lambda_1"
        );
        assert_eq!(lines.count(), 3);
    }
}
