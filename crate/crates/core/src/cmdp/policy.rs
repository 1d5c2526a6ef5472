use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A stochastic tabular policy: one action distribution per state, stored
/// flat and row-major over `(s, a)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

impl Policy {
    /// Builds a policy from explicit rows; each row must be a distribution
    /// within `1e-12`.
    pub fn from_probs(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != n_states * n_actions {
            return Err(Error::DimensionMismatch {
                what: "policy table",
                expected: n_states * n_actions,
                actual: probs.len(),
            });
        }
        for (s, row) in probs.chunks(n_actions).enumerate() {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) || (sum - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidArgument(format!(
                    "policy row {s} is not a distribution (sum {sum})"
                )));
            }
        }
        Ok(Self {
            n_states,
            n_actions,
            probs,
        })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            probs: vec![1.0 / n_actions as f64; n_states * n_actions],
        }
    }

    /// Deterministic policy choosing `actions[s]` in state `s`.
    pub fn deterministic(n_actions: usize, actions: &[usize]) -> Result<Self> {
        let mut probs = vec![0.0; actions.len() * n_actions];
        for (s, &a) in actions.iter().enumerate() {
            if a >= n_actions {
                return Err(Error::OutOfRange {
                    what: "action",
                    index: a,
                    limit: n_actions,
                });
            }
            probs[s * n_actions + a] = 1.0;
        }
        Ok(Self {
            n_states: actions.len(),
            n_actions,
            probs,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.n_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    /// Largest per-state total-variation distance to `other`.
    pub fn max_total_variation(&self, other: &Policy) -> f64 {
        (0..self.n_states)
            .map(|s| {
                0.5 * self
                    .row(s)
                    .iter()
                    .zip(other.row(s))
                    .map(|(p, q)| (p - q).abs())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }
}

/// Tabular softmax parameterization `π_w(a|s) ∝ exp(w[s][a])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxPolicy {
    n_states: usize,
    n_actions: usize,
    params: Vec<f64>,
}

impl SoftmaxPolicy {
    pub fn new(n_states: usize, n_actions: usize, params: Vec<f64>) -> Result<Self> {
        if params.len() != n_states * n_actions {
            return Err(Error::DimensionMismatch {
                what: "softmax parameters",
                expected: n_states * n_actions,
                actual: params.len(),
            });
        }
        Ok(Self {
            n_states,
            n_actions,
            params,
        })
    }

    /// All-zero parameters, i.e. the uniform policy.
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            params: vec![0.0; n_states * n_actions],
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn param(&self, s: usize, a: usize) -> f64 {
        self.params[s * self.n_actions + a]
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.params)
    }

    /// Parameters moved by `step * direction`.
    pub fn stepped(&self, direction: &DVector<f64>, step: f64) -> Result<Self> {
        if direction.len() != self.params.len() {
            return Err(Error::DimensionMismatch {
                what: "update direction",
                expected: self.params.len(),
                actual: direction.len(),
            });
        }
        let params = self
            .params
            .iter()
            .zip(direction.iter())
            .map(|(w, d)| w + step * d)
            .collect();
        Ok(Self { params, ..*self })
    }

    /// Adds `shift[s]` to every entry of row `s`.
    pub fn shifted(&self, shift: &[f64]) -> Self {
        let mut params = self.params.clone();
        for (s, row) in params.chunks_mut(self.n_actions).enumerate() {
            row.iter_mut().for_each(|w| *w += shift[s]);
        }
        Self { params, ..*self }
    }

    /// The induced policy `π_w`; see [`policy_from_params`].
    pub fn policy(&self) -> Result<Policy> {
        policy_from_params(self)
    }
}

/// Row-wise softmax of the parameter table.
pub fn policy_from_params(w: &SoftmaxPolicy) -> Result<Policy> {
    if w.params.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("softmax parameters"));
    }
    let mut probs = Vec::with_capacity(w.params.len());
    for row in w.params.chunks(w.n_actions) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let start = probs.len();
        probs.extend(row.iter().map(|x| (x - max).exp()));
        let z: f64 = probs[start..].iter().sum();
        probs[start..].iter_mut().for_each(|p| *p /= z);
    }
    Ok(Policy {
        n_states: w.n_states,
        n_actions: w.n_actions,
        probs,
    })
}

/// Score function `∇_w log π_w(a|s)` as a flat parameter-space vector.
///
/// Only row `s` is nonzero; entry `(s, b)` is `1{b = a} - π_w(b|s)`.
pub fn score_function(w: &SoftmaxPolicy, s: usize, a: usize) -> Result<DVector<f64>> {
    if s >= w.n_states {
        return Err(Error::OutOfRange {
            what: "state",
            index: s,
            limit: w.n_states,
        });
    }
    if a >= w.n_actions {
        return Err(Error::OutOfRange {
            what: "action",
            index: a,
            limit: w.n_actions,
        });
    }
    let pi = policy_from_params(w)?;
    let mut score = DVector::zeros(w.params.len());
    for b in 0..w.n_actions {
        let indicator = if a == b { 1.0 } else { 0.0 };
        score[s * w.n_actions + b] = indicator - pi.prob(s, b);
    }
    Ok(score)
}
