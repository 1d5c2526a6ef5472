//! Exact dynamic-programming quantities for a fixed policy: values,
//! discounted visitation and policy gradients.

use nalgebra::{DMatrix, DVector};

use super::model::TabularCmdp;
use super::policy::{Policy, SoftmaxPolicy};
use crate::error::{Error, Result};

/// Per-channel value tables of a fixed policy. Tables are flat over `(s, a)`
/// (or over `s` for `v`) and indexed by channel first.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueProfile {
    pub q: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub adv: Vec<Vec<f64>>,
    /// Discounted returns `f_i = E_{s~ρ, a~π}[Q_i(s, a)]`.
    pub objective: Vec<f64>,
}

/// Normalized discounted state-action occupancy of a policy.
#[derive(Debug, Clone, PartialEq)]
pub struct Visitation {
    /// `ν(s, a) = (1-γ) Σ_t γ^t Pr(s_t = s, a_t = a)`, flat over `(s, a)`.
    pub nu: Vec<f64>,
    /// State marginal of `nu`.
    pub mu_state: Vec<f64>,
}

fn check_policy(model: &TabularCmdp, policy: &Policy) -> Result<()> {
    if policy.n_states() != model.n_states() {
        return Err(Error::DimensionMismatch {
            what: "policy states",
            expected: model.n_states(),
            actual: policy.n_states(),
        });
    }
    if policy.n_actions() != model.n_actions() {
        return Err(Error::DimensionMismatch {
            what: "policy actions",
            expected: model.n_actions(),
            actual: policy.n_actions(),
        });
    }
    Ok(())
}

/// State-to-state kernel `P_π[s][s'] = Σ_a π(a|s) P[s][a][s']`.
pub fn policy_kernel(model: &TabularCmdp, policy: &Policy) -> DMatrix<f64> {
    let ns = model.n_states();
    let mut kernel = DMatrix::zeros(ns, ns);
    for s in 0..ns {
        for a in 0..model.n_actions() {
            let p = policy.prob(s, a);
            if p == 0.0 {
                continue;
            }
            for (next, &t) in model.transition_row(s, a).iter().enumerate() {
                kernel[(s, next)] += p * t;
            }
        }
    }
    kernel
}

/// Solves `(I - γ K) X = B` with one round of iterative refinement.
fn solve_discounted(kernel: &DMatrix<f64>, gamma: f64, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = kernel.nrows();
    let system = DMatrix::identity(n, n) - kernel * gamma;
    let lu = system.clone().lu();
    let mut x = lu.solve(rhs).ok_or(Error::Solver("singular discounted system"))?;
    let residual = rhs - &system * &x;
    if let Some(dx) = lu.solve(&residual) {
        x += dx;
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Solver("non-finite solution"));
    }
    Ok(x)
}

/// Exact Q, V, advantage and objective values for every channel.
///
/// Solves the state-value system `V = r_π + γ P_π V` for all channels at
/// once and recovers `Q = r + γ P V`.
pub fn exact_values(model: &TabularCmdp, policy: &Policy) -> Result<ValueProfile> {
    check_policy(model, policy)?;
    let (ns, na, nc) = (model.n_states(), model.n_actions(), model.n_channels());
    let gamma = model.gamma();

    let mut rhs = DMatrix::zeros(ns, nc);
    for i in 0..nc {
        for s in 0..ns {
            rhs[(s, i)] = (0..na).map(|a| policy.prob(s, a) * model.reward(i, s, a)).sum();
        }
    }
    let kernel = policy_kernel(model, policy);
    let values = solve_discounted(&kernel, gamma, &rhs)?;

    let mut q = Vec::with_capacity(nc);
    let mut v = Vec::with_capacity(nc);
    let mut adv = Vec::with_capacity(nc);
    let mut objective = Vec::with_capacity(nc);
    for i in 0..nc {
        let vi: Vec<f64> = values.column(i).iter().copied().collect();
        let mut qi = vec![0.0; ns * na];
        for s in 0..ns {
            for a in 0..na {
                let next: f64 = model
                    .transition_row(s, a)
                    .iter()
                    .zip(&vi)
                    .map(|(p, v)| p * v)
                    .sum();
                qi[s * na + a] = model.reward(i, s, a) + gamma * next;
            }
        }
        let ai: Vec<f64> = (0..ns * na).map(|k| qi[k] - vi[k / na]).collect();
        let fi = (0..ns)
            .map(|s| {
                model.rho()[s] * (0..na).map(|a| policy.prob(s, a) * qi[s * na + a]).sum::<f64>()
            })
            .sum();
        q.push(qi);
        v.push(vi);
        adv.push(ai);
        objective.push(fi);
    }
    Ok(ValueProfile {
        q,
        v,
        adv,
        objective,
    })
}

/// Exact objective vector `f_0..f_{m+p-1}`.
pub fn exact_objectives(model: &TabularCmdp, policy: &Policy) -> Result<Vec<f64>> {
    Ok(exact_values(model, policy)?.objective)
}

/// `‖Q_i - (r_i + γ P Π Q_i)‖_∞` for one channel.
pub fn bellman_residual(model: &TabularCmdp, policy: &Policy, q: &[f64], channel: usize) -> f64 {
    let (ns, na) = (model.n_states(), model.n_actions());
    let pi_q: Vec<f64> = (0..ns)
        .map(|s| (0..na).map(|a| policy.prob(s, a) * q[s * na + a]).sum())
        .collect();
    let mut worst: f64 = 0.0;
    for s in 0..ns {
        for a in 0..na {
            let next: f64 = model
                .transition_row(s, a)
                .iter()
                .zip(&pi_q)
                .map(|(p, v)| p * v)
                .sum();
            let target = model.reward(channel, s, a) + model.gamma() * next;
            worst = worst.max((q[s * na + a] - target).abs());
        }
    }
    worst
}

/// Discounted visitation from the occupancy system
/// `d = (1-γ) ρ + γ P_πᵀ d`, with `ν(s, a) = d(s) π(a|s)`.
pub fn visitation_measure(model: &TabularCmdp, policy: &Policy) -> Result<Visitation> {
    check_policy(model, policy)?;
    let (ns, na) = (model.n_states(), model.n_actions());
    let gamma = model.gamma();
    let kernel_t = policy_kernel(model, policy).transpose();
    let rhs = DMatrix::from_iterator(ns, 1, model.rho().iter().map(|r| (1.0 - gamma) * r));
    let d = solve_discounted(&kernel_t, gamma, &rhs)?;
    let mu_state: Vec<f64> = d.iter().map(|x| x.max(0.0)).collect();
    let nu = (0..ns * na).map(|k| mu_state[k / na] * policy.prob(k / na, k % na)).collect();
    Ok(Visitation { nu, mu_state })
}

/// Policy gradient `(1/(1-γ)) Σ_{s,a} ν(s,a) Q(s,a) φ_w(s,a)` for an
/// arbitrary (possibly estimated) Q table.
pub fn gradient_from_q(policy: &Policy, visitation: &Visitation, q: &[f64], gamma: f64) -> DVector<f64> {
    let na = policy.n_actions();
    let scale = 1.0 / (1.0 - gamma);
    let mut grad = DVector::zeros(q.len());
    for s in 0..policy.n_states() {
        let base = s * na;
        let weighted: f64 = (0..na).map(|a| visitation.nu[base + a] * q[base + a]).sum();
        for b in 0..na {
            grad[base + b] = scale * (visitation.nu[base + b] * q[base + b] - policy.prob(s, b) * weighted);
        }
    }
    grad
}

/// Exact gradient `∇_w f_i(π_w)` of one channel.
pub fn policy_gradient(model: &TabularCmdp, w: &SoftmaxPolicy, channel: usize) -> Result<DVector<f64>> {
    if channel >= model.n_channels() {
        return Err(Error::OutOfRange {
            what: "channel",
            index: channel,
            limit: model.n_channels(),
        });
    }
    let policy = w.policy()?;
    let values = exact_values(model, &policy)?;
    let visitation = visitation_measure(model, &policy)?;
    Ok(gradient_from_q(&policy, &visitation, &values.q[channel], model.gamma()))
}

/// Exact gradients of every channel, sharing one evaluation.
pub fn policy_gradients(model: &TabularCmdp, w: &SoftmaxPolicy) -> Result<Vec<DVector<f64>>> {
    let policy = w.policy()?;
    let values = exact_values(model, &policy)?;
    let visitation = visitation_measure(model, &policy)?;
    Ok(values
        .q
        .iter()
        .map(|q| gradient_from_q(&policy, &visitation, q, model.gamma()))
        .collect())
}
