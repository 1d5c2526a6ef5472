//! Independent reference computations shared by the integration tests.
//!
//! Nothing here calls the library routine it is used to check.

#![allow(dead_code)]

use crmopo::cmdp::{exact_objectives, Policy, SoftmaxPolicy, TabularCmdp};
use crmopo::generate::{random_cmdp, RandomCmdpSpec};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random model with `|S| ≤ max_states`, `|A| ≤ max_actions`.
pub fn random_model(rng: &mut ChaCha8Rng, max_states: usize, max_actions: usize, m: usize, p: usize) -> TabularCmdp {
    let ns = rng.random_range(1..=max_states);
    let na = rng.random_range(1..=max_actions);
    let gamma = rng.random_range(0.5..0.95);
    random_cmdp(&RandomCmdpSpec::new(ns, na, m, p).gamma(gamma), rng.random()).unwrap()
}

pub fn random_params(rng: &mut ChaCha8Rng, model: &TabularCmdp, scale: f64) -> SoftmaxPolicy {
    let params = (0..model.n_state_actions())
        .map(|_| rng.random_range(-scale..scale))
        .collect();
    SoftmaxPolicy::new(model.n_states(), model.n_actions(), params).unwrap()
}

/// `Q_i` by repeated Bellman backups from zero.
pub fn value_iteration(model: &TabularCmdp, policy: &Policy, channel: usize, sweeps: usize) -> Vec<f64> {
    let (ns, na) = (model.n_states(), model.n_actions());
    let mut q = vec![0.0; ns * na];
    for _ in 0..sweeps {
        let v: Vec<f64> = (0..ns)
            .map(|s| (0..na).map(|a| policy.prob(s, a) * q[s * na + a]).sum())
            .collect();
        q = (0..ns * na)
            .map(|k| {
                let (s, a) = (k / na, k % na);
                let next: f64 = model.transition_row(s, a).iter().zip(&v).map(|(p, v)| p * v).sum();
                model.reward(channel, s, a) + model.gamma() * next
            })
            .collect();
    }
    q
}

/// `‖Q − (r + γ P Π Q)‖_∞` written out from the model tables.
pub fn bellman_residual(model: &TabularCmdp, policy: &Policy, q: &[f64], channel: usize) -> f64 {
    let (ns, na) = (model.n_states(), model.n_actions());
    let mut worst = 0.0f64;
    for s in 0..ns {
        for a in 0..na {
            let mut backup = model.reward(channel, s, a);
            for (next, p) in model.transition_row(s, a).iter().enumerate() {
                for b in 0..na {
                    backup += model.gamma() * p * policy.prob(next, b) * q[next * na + b];
                }
            }
            worst = worst.max((q[s * na + a] - backup).abs());
        }
    }
    worst
}

/// Central finite differences of `f_channel(π_w)` with step `h`.
pub fn finite_difference_gradient(model: &TabularCmdp, w: &SoftmaxPolicy, channel: usize, h: f64) -> DVector<f64> {
    let base = w.params().to_vec();
    let eval = |params: Vec<f64>| {
        let w = SoftmaxPolicy::new(w.n_states(), w.n_actions(), params).unwrap();
        exact_objectives(model, &w.policy().unwrap()).unwrap()[channel]
    };
    DVector::from_iterator(
        base.len(),
        (0..base.len()).map(|k| {
            let mut up = base.clone();
            let mut down = base.clone();
            up[k] += h;
            down[k] -= h;
            (eval(up) - eval(down)) / (2.0 * h)
        }),
    )
}

/// A solution of `F x = g` for a softmax Fisher matrix and a policy gradient
/// `g`: `x(s, a) = g(s, a) / (μ(s) π(a|s))`. Within a state `Σ_a g(s, a) = 0`,
/// so `x` solves each block exactly; it differs from `F† g` only by per-state
/// constants, which leave the softmax policy unchanged.
pub fn natural_gradient_by_blocks(policy: &Policy, state_mass: &[f64], gradient: &DVector<f64>) -> DVector<f64> {
    let na = policy.n_actions();
    DVector::from_iterator(
        gradient.len(),
        gradient.iter().enumerate().map(|(k, g)| {
            let (s, a) = (k / na, k % na);
            g / (state_mass[s] * policy.prob(s, a))
        }),
    )
}

/// Value of the inner maximization of CA-NPG at `(d, θ)`:
/// `Σ θ_i ξ_i ∇f_iᵀ d − (ψ1/2) dᵀ F d − (ψ2/2) ‖d − v0‖²`.
pub fn inner_objective(
    gradients: &[DVector<f64>],
    fisher: &DMatrix<f64>,
    xi: &[f64],
    psi1: f64,
    psi2: f64,
    theta: &[f64],
    d: &DVector<f64>,
) -> f64 {
    let n = d.len();
    let mut g = DVector::zeros(n);
    let mut v0 = DVector::zeros(n);
    for i in 0..gradients.len() {
        g += &gradients[i] * (theta[i] * xi[i]);
        v0 += &gradients[i] * xi[i];
    }
    g.dot(d) - 0.5 * psi1 * d.dot(&(fisher * d)) - 0.5 * psi2 * (d - v0).norm_squared()
}

/// Maximizer of [`inner_objective`] in `d` by a direct linear solve.
pub fn inner_argmax(
    gradients: &[DVector<f64>],
    fisher: &DMatrix<f64>,
    xi: &[f64],
    psi1: f64,
    psi2: f64,
    theta: &[f64],
) -> DVector<f64> {
    let n = fisher.nrows();
    let mut rhs = DVector::zeros(n);
    for i in 0..gradients.len() {
        rhs += &gradients[i] * (xi[i] * (theta[i] + psi2));
    }
    let metric = fisher * psi1 + DMatrix::identity(n, n) * psi2;
    metric.lu().solve(&rhs).unwrap()
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

pub fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
