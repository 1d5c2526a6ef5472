//! Natural-gradient machinery for the tabular softmax policy: Fisher
//! information, pseudo-inverse NPG directions, the exponentiated-Q form of
//! the NPG update, the conflict-averse (CA-NPG) direction and momentum
//! blending of its composite weights.
//!
//! CA-NPG picks the update direction `d` solving
//!
//! ```text
//! max_d min_i  ξ_i ∇f_iᵀ d − (ψ1/2) dᵀ F d − (ψ2/2) ‖d − v0‖²,   v0 = Σ ξ_i ∇f_i
//! ```
//!
//! through its dual over the simplex: for `θ ∈ S_m`, with `g_θ = Σ θ_i ξ_i ∇f_i`
//! and `M = ψ1 F + ψ2 I`, the inner maximizer is `d(θ) = M⁻¹ (g_θ + ψ2 v0)`
//! and the dual value is `½ (g_θ + ψ2 v0)ᵀ M⁻¹ (g_θ + ψ2 v0) − (ψ2/2) ‖v0‖²`,
//! a convex quadratic in `θ`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cmdp::{visitation_measure, Policy, SoftmaxPolicy, TabularCmdp, Visitation};
use crate::error::{Error, Result};

/// Relative singular-value cutoff of the Fisher pseudo-inverse.
pub const PINV_CUTOFF: f64 = 1e-9;

/// Fisher information `E_ν[φ φᵀ]` from a visitation measure.
///
/// The matrix is block diagonal over states with blocks
/// `μ(s) (diag π_s − π_s π_sᵀ)`.
pub fn fisher_from_visitation(policy: &Policy, visitation: &Visitation) -> DMatrix<f64> {
    let na = policy.n_actions();
    let n = policy.n_states() * na;
    let mut fisher = DMatrix::zeros(n, n);
    for s in 0..policy.n_states() {
        let mass = visitation.mu_state[s];
        if mass == 0.0 {
            continue;
        }
        let row = policy.row(s);
        for a in 0..na {
            for b in 0..na {
                let diag = if a == b { row[a] } else { 0.0 };
                fisher[(s * na + a, s * na + b)] = mass * (diag - row[a] * row[b]);
            }
        }
    }
    fisher
}

/// Fisher information matrix of the softmax policy `π_w` on `model`.
pub fn fisher_matrix(model: &TabularCmdp, w: &SoftmaxPolicy) -> Result<DMatrix<f64>> {
    let policy = w.policy()?;
    let visitation = visitation_measure(model, &policy)?;
    Ok(fisher_from_visitation(&policy, &visitation))
}

/// Moore-Penrose pseudo-inverse of a symmetric PSD matrix applied to `grad`,
/// via eigendecomposition. Eigenvalues below `PINV_CUTOFF · λ_max` are
/// treated as zero, so any component in the null space is dropped.
pub fn npg_direction(fisher: &DMatrix<f64>, grad: &DVector<f64>) -> Result<DVector<f64>> {
    if !fisher.is_square() || fisher.nrows() != grad.len() {
        return Err(Error::DimensionMismatch {
            what: "gradient vs Fisher matrix",
            expected: fisher.nrows(),
            actual: grad.len(),
        });
    }
    if grad.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("gradient"));
    }
    let eig = fisher.clone().symmetric_eigen();
    let top = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let cutoff = PINV_CUTOFF * top;
    let coords = eig.eigenvectors.transpose() * grad;
    let scaled = DVector::from_iterator(
        coords.len(),
        coords.iter().zip(eig.eigenvalues.iter()).map(|(c, &l)| if l > cutoff { c / l } else { 0.0 }),
    );
    Ok(&eig.eigenvectors * scaled)
}

/// Result of the exponentiated-Q NPG update.
#[derive(Debug, Clone, PartialEq)]
pub struct NpgUpdate {
    /// `w + (η/(1−γ)) Σ λ_i Q_i`.
    pub params: SoftmaxPolicy,
    /// `π(a|s) exp(η Σ λ_i Q_i(s,a)/(1−γ)) / Z(s)`, computed multiplicatively.
    pub policy: Policy,
}

/// Closed-form multi-objective NPG step for the tabular softmax policy.
///
/// A negative `eta` gives the descent step used for constraint rectification.
pub fn closed_form_npg_update(
    w: &SoftmaxPolicy,
    q_tables: &[Vec<f64>],
    lambda: &[f64],
    eta: f64,
    gamma: f64,
) -> Result<NpgUpdate> {
    if q_tables.len() != lambda.len() {
        return Err(Error::DimensionMismatch {
            what: "weights vs Q tables",
            expected: q_tables.len(),
            actual: lambda.len(),
        });
    }
    let n = w.params().len();
    if let Some(q) = q_tables.iter().find(|q| q.len() != n) {
        return Err(Error::DimensionMismatch {
            what: "Q table",
            expected: n,
            actual: q.len(),
        });
    }
    let scale = eta / (1.0 - gamma);
    let combined: Vec<f64> = (0..n)
        .map(|k| scale * q_tables.iter().zip(lambda).map(|(q, l)| l * q[k]).sum::<f64>())
        .collect();
    if combined.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("NPG update"));
    }

    let current = w.policy()?;
    let na = w.n_actions();
    let mut probs = Vec::with_capacity(n);
    for s in 0..w.n_states() {
        let exps = &combined[s * na..(s + 1) * na];
        let shift = exps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let unnormalized: Vec<f64> = (0..na).map(|a| current.prob(s, a) * (exps[a] - shift).exp()).collect();
        let z: f64 = unnormalized.iter().sum();
        probs.extend(unnormalized.into_iter().map(|p| p / z));
    }
    let params = SoftmaxPolicy::new(
        w.n_states(),
        na,
        w.params().iter().zip(&combined).map(|(a, b)| a + b).collect(),
    )?;
    Ok(NpgUpdate {
        params,
        policy: Policy::from_probs(w.n_states(), na, probs)?,
    })
}

/// Simplex solver used for the CA-NPG dual.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SimplexSolver {
    /// Grid for `m ≤ 3`, projected gradient otherwise.
    #[default]
    Auto,
    Grid,
    ProjectedGradient,
}

/// Bounds enforced on the composite weights: `0 ≤ λ_i ≤ max_entry` and
/// `Σ λ_i ≥ min_sum`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightBounds {
    pub max_entry: f64,
    pub min_sum: f64,
}

impl Default for WeightBounds {
    fn default() -> Self {
        Self {
            max_entry: 2.0,
            min_sum: 0.1,
        }
    }
}

impl WeightBounds {
    /// Clips entries into `[0, max_entry]`, then rescales up if the sum is
    /// below `min_sum` (never past `max_entry`).
    pub fn enforce(&self, weights: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = weights.iter().map(|l| l.clamp(0.0, self.max_entry)).collect();
        let sum: f64 = out.iter().sum();
        if sum < self.min_sum {
            if sum > 0.0 {
                let factor = self.min_sum / sum;
                out.iter_mut().for_each(|l| *l = (*l * factor).min(self.max_entry));
            } else {
                let fill = (self.min_sum / out.len() as f64).min(self.max_entry);
                out.iter_mut().for_each(|l| *l = fill);
            }
        }
        out
    }
}

/// CA-NPG settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaNpgConfig {
    /// Preference weights `ξ_i > 0`, one per objective. Left empty in a run
    /// configuration it means unit preferences.
    #[serde(default)]
    pub preferences: Vec<f64>,
    /// `ψ1`: weight of the KL (Fisher) trust term.
    #[serde(default = "default_trust_weight")]
    pub trust_weight: f64,
    /// `ψ2`: weight of the pull toward the preference-weighted gradient.
    #[serde(default = "default_anchor_weight")]
    pub anchor_weight: f64,
    #[serde(default)]
    pub simplex_solver: SimplexSolver,
    #[serde(default = "default_solver_tolerance")]
    pub solver_tolerance: f64,
    /// Extra diagonal added to the metric `ψ1 F + ψ2 I`.
    #[serde(default)]
    pub ridge: f64,
    #[serde(default)]
    pub weight_bounds: WeightBounds,
}

fn default_trust_weight() -> f64 {
    1.0
}
fn default_anchor_weight() -> f64 {
    0.01
}
fn default_solver_tolerance() -> f64 {
    1e-12
}

impl Default for CaNpgConfig {
    fn default() -> Self {
        Self::with_preferences(Vec::new())
    }
}

impl CaNpgConfig {
    /// Unit preferences for `m` objectives and default weights.
    pub fn new(m: usize) -> Self {
        Self::with_preferences(vec![1.0; m])
    }

    pub fn with_preferences(preferences: Vec<f64>) -> Self {
        Self {
            preferences,
            trust_weight: default_trust_weight(),
            anchor_weight: default_anchor_weight(),
            simplex_solver: SimplexSolver::Auto,
            solver_tolerance: default_solver_tolerance(),
            ridge: 0.0,
            weight_bounds: WeightBounds::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.preferences.is_empty() || self.preferences.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return Err(Error::InvalidArgument("preferences must be positive".into()));
        }
        if !(self.trust_weight.is_finite() && self.trust_weight > 0.0) {
            return Err(Error::InvalidArgument("trust_weight must be positive".into()));
        }
        if !(self.anchor_weight.is_finite() && self.anchor_weight > 0.0) {
            return Err(Error::InvalidArgument("anchor_weight must be positive".into()));
        }
        if !(self.solver_tolerance.is_finite() && self.solver_tolerance > 0.0) {
            return Err(Error::InvalidArgument("solver_tolerance must be positive".into()));
        }
        if !(self.ridge.is_finite() && self.ridge >= 0.0) {
            return Err(Error::InvalidArgument("ridge must be nonnegative".into()));
        }
        let b = self.weight_bounds;
        if !(b.max_entry > 0.0 && b.min_sum > 0.0 && b.min_sum <= b.max_entry * self.preferences.len() as f64) {
            return Err(Error::InvalidArgument("inconsistent weight bounds".into()));
        }
        Ok(())
    }
}

/// CA-NPG output.
#[derive(Debug, Clone, PartialEq)]
pub struct ManipulationResult {
    /// Dual minimizer `θ*` on the simplex.
    pub theta: Vec<f64>,
    /// Composite weights `ξ_i (θ*_i + ψ2) / (1 + ψ2)` after bound enforcement.
    pub lambda: Vec<f64>,
    /// The same weights before bound enforcement.
    pub raw_lambda: Vec<f64>,
    /// `v0 = Σ ξ_i ∇f_i`.
    pub anchor: DVector<f64>,
    /// `d* = M⁻¹ (g_θ* + ψ2 v0)`.
    pub direction: DVector<f64>,
    /// Metric-solved objective directions `(1 + ψ2) M⁻¹ ∇f_i`, so that
    /// `d* = Σ raw_lambda_i · objective_directions[i]`.
    pub objective_directions: Vec<DVector<f64>>,
    /// Dual value at `θ*`.
    pub dual_value: f64,
}

impl ManipulationResult {
    /// `Σ weights_i · objective_directions[i]`.
    pub fn combine(&self, weights: &[f64]) -> DVector<f64> {
        let mut d = DVector::zeros(self.anchor.len());
        for (w, dir) in weights.iter().zip(&self.objective_directions) {
            d.axpy(*w, dir, 1.0);
        }
        d
    }
}

/// The CA-NPG dual reduced to a quadratic over the simplex:
/// `D(θ) = ½ θᵀ K θ + bᵀ θ + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualProblem {
    pub k: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: f64,
    /// `M⁻¹ ∇f_i` as columns.
    solved: DMatrix<f64>,
    anchor: DVector<f64>,
}

impl DualProblem {
    pub fn new(gradients: &[DVector<f64>], fisher: &DMatrix<f64>, config: &CaNpgConfig) -> Result<Self> {
        config.validate()?;
        let m = gradients.len();
        if m == 0 {
            return Err(Error::Empty("objective gradients"));
        }
        if m != config.preferences.len() {
            return Err(Error::DimensionMismatch {
                what: "preferences vs gradients",
                expected: m,
                actual: config.preferences.len(),
            });
        }
        let n = fisher.nrows();
        if let Some(g) = gradients.iter().find(|g| g.len() != n) {
            return Err(Error::DimensionMismatch {
                what: "gradient",
                expected: n,
                actual: g.len(),
            });
        }
        if gradients.iter().any(|g| g.iter().any(|x| !x.is_finite())) || fisher.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("CA-NPG inputs"));
        }
        let (psi1, psi2) = (config.trust_weight, config.anchor_weight);
        let metric = fisher * psi1 + DMatrix::identity(n, n) * (psi2 + config.ridge);
        let chol = metric.cholesky().ok_or(Error::Solver("metric is not positive definite"))?;
        let grads = DMatrix::from_columns(gradients);
        let solved = chol.solve(&grads);
        let xi = DVector::from_column_slice(&config.preferences);
        let anchor = &grads * &xi;

        // K = diag(ξ) ∇Fᵀ M⁻¹ ∇F diag(ξ), b = ψ2 diag(ξ) ∇Fᵀ M⁻¹ v0
        let gram = grads.transpose() * &solved;
        let k = DMatrix::from_fn(m, m, |i, j| xi[i] * gram[(i, j)] * xi[j]);
        let solved_anchor = &solved * &xi;
        let b = DVector::from_fn(m, |i, _| psi2 * xi[i] * grads.column(i).dot(&solved_anchor));
        let c = 0.5 * psi2 * psi2 * anchor.dot(&solved_anchor) - 0.5 * psi2 * anchor.norm_squared();
        Ok(Self {
            k,
            b,
            c,
            solved,
            anchor,
        })
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn value(&self, theta: &[f64]) -> f64 {
        let t = DVector::from_column_slice(theta);
        0.5 * t.dot(&(&self.k * &t)) + self.b.dot(&t) + self.c
    }

    fn gradient(&self, theta: &DVector<f64>) -> DVector<f64> {
        &self.k * theta + &self.b
    }

    /// Largest curvature along the simplex's tangent space.
    fn tangent_lipschitz(&self) -> f64 {
        let m = self.dim();
        let proj = DMatrix::identity(m, m) - DMatrix::from_element(m, m, 1.0 / m as f64);
        let reduced = &proj * &self.k * &proj;
        reduced.symmetric_eigen().eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b))
    }

    /// Projected gradient from `start` with step `1/L`; stops once the
    /// iterate moves less than `tol` (Euclidean) or after `max_iter` steps.
    fn projected_gradient(&self, start: &[f64], tol: f64, max_iter: usize) -> Vec<f64> {
        let lip = self.tangent_lipschitz();
        let mut theta = DVector::from_column_slice(start);
        if lip <= 0.0 {
            return theta.as_slice().to_vec();
        }
        for _ in 0..max_iter {
            let step = &theta - self.gradient(&theta) / lip;
            let next = DVector::from_vec(project_to_simplex(step.as_slice()));
            let moved = (&next - &theta).norm();
            theta = next;
            if moved < tol {
                break;
            }
        }
        theta.as_slice().to_vec()
    }
}

/// Euclidean projection onto the probability simplex (sort-and-threshold).
pub fn project_to_simplex(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut threshold = 0.0;
    for (k, &x) in sorted.iter().enumerate() {
        cumulative += x;
        let t = (cumulative - 1.0) / (k + 1) as f64;
        if x - t > 0.0 {
            threshold = t;
        }
    }
    v.iter().map(|x| (x - threshold).max(0.0)).collect()
}

/// Integer compositions of `total` into `parts` nonnegative terms, in
/// lexicographic order.
pub(crate) fn compositions(total: usize, parts: usize, visit: &mut impl FnMut(&[usize])) {
    fn go(rest: usize, slots: usize, prefix: &mut Vec<usize>, visit: &mut impl FnMut(&[usize])) {
        if slots == 1 {
            prefix.push(rest);
            visit(prefix);
            prefix.pop();
            return;
        }
        for k in 0..=rest {
            prefix.push(k);
            go(rest - k, slots - 1, prefix, visit);
            prefix.pop();
        }
    }
    go(total, parts, &mut Vec::with_capacity(parts), visit);
}

const GRID_RESOLUTION: usize = 200;
const REFINE_RESOLUTION: usize = 20;
const PG_ITERATIONS: usize = 500;

fn grid_minimum(dual: &DualProblem) -> Vec<f64> {
    let m = dual.dim();
    let mut best = (f64::INFINITY, vec![0.0; m]);
    compositions(GRID_RESOLUTION, m, &mut |counts| {
        let theta: Vec<f64> = counts.iter().map(|&c| c as f64 / GRID_RESOLUTION as f64).collect();
        let value = dual.value(&theta);
        if value < best.0 {
            best = (value, theta);
        }
    });

    // one refinement: a finer grid on the box of half-width one coarse cell
    let center = best.1.clone();
    let fine = 1.0 / (GRID_RESOLUTION * REFINE_RESOLUTION) as f64;
    let span = REFINE_RESOLUTION as i64;
    let mut offsets = vec![-span; m - 1];
    loop {
        let mut theta = center.clone();
        for (i, &o) in offsets.iter().enumerate() {
            theta[i] += o as f64 * fine;
        }
        theta[m - 1] = 1.0 - theta[..m - 1].iter().sum::<f64>();
        if theta.iter().all(|&t| t >= -1e-15) {
            theta.iter_mut().for_each(|t| *t = t.max(0.0));
            let value = dual.value(&theta);
            if value < best.0 {
                best = (value, theta);
            }
        }
        // odometer over the m-1 free offsets
        let mut i = 0;
        while i < m - 1 {
            offsets[i] += 1;
            if offsets[i] <= span {
                break;
            }
            offsets[i] = -span;
            i += 1;
        }
        if i == m - 1 {
            break;
        }
    }
    best.1
}

/// Minimizes the CA-NPG dual over the simplex.
///
/// The grid solver scans the simplex at resolution 1/200 in lexicographic
/// order (ties keep the earliest point), refines once on a 20× finer grid
/// around the best point, then polishes with projected gradient. The
/// projected-gradient solver starts from the simplex center. Both run at
/// most 500 projected-gradient steps and stop when the step is below
/// `solver_tolerance`.
pub fn solve_theta(gradients: &[DVector<f64>], fisher: &DMatrix<f64>, config: &CaNpgConfig) -> Result<Vec<f64>> {
    let dual = DualProblem::new(gradients, fisher, config)?;
    Ok(solve_dual(&dual, config))
}

fn solve_dual(dual: &DualProblem, config: &CaNpgConfig) -> Vec<f64> {
    let m = dual.dim();
    if m == 1 {
        return vec![1.0];
    }
    let use_grid = match config.simplex_solver {
        SimplexSolver::Grid => true,
        SimplexSolver::ProjectedGradient => false,
        SimplexSolver::Auto => m <= 3,
    };
    let start = if use_grid {
        grid_minimum(dual)
    } else {
        vec![1.0 / m as f64; m]
    };
    let polished = dual.projected_gradient(&start, config.solver_tolerance, PG_ITERATIONS);
    if dual.value(&polished) < dual.value(&start) {
        polished
    } else {
        start
    }
}

/// Computes the CA-NPG direction and its composite weights.
pub fn ca_npg_direction(
    gradients: &[DVector<f64>],
    fisher: &DMatrix<f64>,
    config: &CaNpgConfig,
) -> Result<ManipulationResult> {
    let dual = DualProblem::new(gradients, fisher, config)?;
    let theta = solve_dual(&dual, config);
    let psi2 = config.anchor_weight;
    let xi = &config.preferences;

    let raw_lambda: Vec<f64> = theta
        .iter()
        .zip(xi)
        .map(|(t, x)| x * (t + psi2) / (1.0 + psi2))
        .collect();
    let objective_directions: Vec<DVector<f64>> = dual
        .solved
        .column_iter()
        .map(|col| col.into_owned() * (1.0 + psi2))
        .collect();
    let mut direction = DVector::zeros(fisher.nrows());
    for (i, col) in dual.solved.column_iter().enumerate() {
        direction.axpy(xi[i] * (theta[i] + psi2), &col, 1.0);
    }
    if direction.iter().any(|x| !x.is_finite()) {
        return Err(Error::Solver("non-finite CA-NPG direction"));
    }
    Ok(ManipulationResult {
        lambda: config.weight_bounds.enforce(&raw_lambda),
        dual_value: dual.value(&theta),
        theta,
        raw_lambda,
        anchor: dual.anchor.clone(),
        direction,
        objective_directions,
    })
}

/// Exponential blending `α prev + (1 − α) current` of composite weights.
pub fn momentum_blend(prev: &[f64], current: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("momentum coefficient {alpha} outside [0,1]")));
    }
    if prev.len() != current.len() {
        return Err(Error::DimensionMismatch {
            what: "momentum weights",
            expected: prev.len(),
            actual: current.len(),
        });
    }
    Ok(prev
        .iter()
        .zip(current)
        .map(|(p, c)| alpha * p + (1.0 - alpha) * c)
        .collect())
}
