//! Sampled policy evaluation: TD(0) on state-action values, unbiased
//! Monte-Carlo Q estimates with a geometric horizon, and batch constraint
//! estimates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cmdp::{Policy, TabularCmdp};
use crate::error::{Error, Result};

/// TD(0) settings; the step size at update `k ≥ 1` is `step_scale / k^step_exponent`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TdConfig {
    pub n_iterations: usize,
    #[serde(default = "default_step_exponent")]
    pub step_exponent: f64,
    #[serde(default = "default_step_scale")]
    pub step_scale: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_step_exponent() -> f64 {
    0.66
}
fn default_step_scale() -> f64 {
    1.0
}

impl TdConfig {
    pub fn new(n_iterations: usize, seed: u64) -> Self {
        Self {
            n_iterations,
            step_exponent: default_step_exponent(),
            step_scale: default_step_scale(),
            seed,
        }
    }

    fn check(&self) -> Result<()> {
        if !(self.step_exponent > 0.0 && self.step_exponent < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "TD step exponent must lie in (0,1), got {}",
                self.step_exponent
            )));
        }
        if !(self.step_scale.is_finite() && self.step_scale > 0.0) {
            return Err(Error::InvalidArgument("TD step scale must be positive".into()));
        }
        Ok(())
    }
}

/// Monte-Carlo settings: independent rollouts averaged per estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub n_rollouts: usize,
    #[serde(default)]
    pub seed: u64,
}

impl McConfig {
    pub fn new(n_rollouts: usize, seed: u64) -> Self {
        Self { n_rollouts, seed }
    }
}

/// Mean and standard error of a Monte-Carlo estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n: usize,
}

/// Constraint (and objective) estimates from a batch of sampled pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchEstimate {
    pub batch: Vec<(usize, usize)>,
    pub weights: Vec<f64>,
    /// One estimate per channel of the supplied Q tables.
    pub values: Vec<f64>,
}

fn sample_index<R: Rng>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding: fall back to the last entry with positive mass
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

fn sample_start<R: Rng>(rng: &mut R, model: &TabularCmdp, policy: &Policy) -> (usize, usize) {
    let s = sample_index(rng, model.rho());
    (s, sample_index(rng, policy.row(s)))
}

/// TD(0) estimate of `Q_i` for the given channel, starting from `Q_0 = 0`.
pub fn td_evaluate(model: &TabularCmdp, policy: &Policy, channel: usize, config: &TdConfig) -> Result<Vec<f64>> {
    if channel >= model.n_channels() {
        return Err(Error::OutOfRange {
            what: "channel",
            index: channel,
            limit: model.n_channels(),
        });
    }
    Ok(td_evaluate_channels(model, policy, &[channel], config)?.remove(0))
}

/// TD(0) for several channels along one shared trajectory.
///
/// Transitions come from an on-policy trajectory that starts at `ρ` and
/// restarts from `ρ` with probability `1 - γ` after every step, so the
/// updated pairs are distributed according to the discounted visitation.
pub fn td_evaluate_channels(
    model: &TabularCmdp,
    policy: &Policy,
    channels: &[usize],
    config: &TdConfig,
) -> Result<Vec<Vec<f64>>> {
    config.check()?;
    let na = model.n_actions();
    let gamma = model.gamma();
    let mut q = vec![vec![0.0; model.n_state_actions()]; channels.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (mut s, mut a) = sample_start(&mut rng, model, policy);
    for k in 1..=config.n_iterations {
        let step = config.step_scale / (k as f64).powf(config.step_exponent);
        let next = sample_index(&mut rng, model.transition_row(s, a));
        let next_action = sample_index(&mut rng, policy.row(next));
        let (here, there) = (s * na + a, next * na + next_action);
        for (table, &i) in q.iter_mut().zip(channels) {
            let target = model.reward(i, s, a) + gamma * table[there];
            table[here] += step * (target - table[here]);
        }
        if rng.random::<f64>() < 1.0 - gamma {
            (s, a) = sample_start(&mut rng, model, policy);
        } else {
            (s, a) = (next, next_action);
        }
    }
    Ok(q)
}

/// Draws `H` with `P(H = h) = (1 - q) q^h`, `h ≥ 0`, by inverting the CDF.
pub fn geometric_horizon<R: Rng>(rng: &mut R, q: f64) -> usize {
    if q <= 0.0 {
        return 0;
    }
    // u in (0, 1]
    let u = 1.0 - rng.random::<f64>();
    (u.ln() / q.ln()).floor() as usize
}

/// One rollout of `r(s_0,a_0) + Σ_{h=1}^{H} γ^{h/2} r(s_h,a_h)` for every
/// channel, with `H ~ Geom(1 - γ^{1/2})`.
pub fn rollout_estimate<R: Rng>(
    rng: &mut R,
    model: &TabularCmdp,
    policy: &Policy,
    s: usize,
    a: usize,
    out: &mut [f64],
) {
    let q = model.gamma().sqrt();
    let horizon = geometric_horizon(rng, q);
    for (i, o) in out.iter_mut().enumerate() {
        *o = model.reward(i, s, a);
    }
    let (mut s, mut a) = (s, a);
    let mut discount = 1.0;
    for _ in 0..horizon {
        s = sample_index(rng, model.transition_row(s, a));
        a = sample_index(rng, policy.row(s));
        discount *= q;
        for (i, o) in out.iter_mut().enumerate() {
            *o += discount * model.reward(i, s, a);
        }
    }
}

fn check_pair(model: &TabularCmdp, s: usize, a: usize) -> Result<()> {
    if s >= model.n_states() {
        return Err(Error::OutOfRange {
            what: "state",
            index: s,
            limit: model.n_states(),
        });
    }
    if a >= model.n_actions() {
        return Err(Error::OutOfRange {
            what: "action",
            index: a,
            limit: model.n_actions(),
        });
    }
    Ok(())
}

fn mc_with_rng<R: Rng>(
    rng: &mut R,
    model: &TabularCmdp,
    policy: &Policy,
    s: usize,
    a: usize,
    n_rollouts: usize,
) -> Vec<McEstimate> {
    let nc = model.n_channels();
    let mut sums = vec![0.0; nc];
    let mut squares = vec![0.0; nc];
    let mut sample = vec![0.0; nc];
    for _ in 0..n_rollouts {
        rollout_estimate(rng, model, policy, s, a, &mut sample);
        for i in 0..nc {
            sums[i] += sample[i];
            squares[i] += sample[i] * sample[i];
        }
    }
    let n = n_rollouts as f64;
    (0..nc)
        .map(|i| {
            let mean = sums[i] / n;
            let var = if n_rollouts > 1 {
                ((squares[i] - n * mean * mean) / (n - 1.0)).max(0.0)
            } else {
                0.0
            };
            McEstimate {
                mean,
                std_error: (var / n).sqrt(),
                n: n_rollouts,
            }
        })
        .collect()
}

/// Mean of `n_rollouts` unbiased single-rollout estimates of `Q_i(s, a)`.
pub fn mc_unbiased_q(
    model: &TabularCmdp,
    policy: &Policy,
    s: usize,
    a: usize,
    channel: usize,
    config: &McConfig,
) -> Result<McEstimate> {
    if channel >= model.n_channels() {
        return Err(Error::OutOfRange {
            what: "channel",
            index: channel,
            limit: model.n_channels(),
        });
    }
    Ok(mc_unbiased_q_all(model, policy, s, a, config)?[channel])
}

/// Monte-Carlo estimates of every channel at `(s, a)` from shared rollouts.
pub fn mc_unbiased_q_all(
    model: &TabularCmdp,
    policy: &Policy,
    s: usize,
    a: usize,
    config: &McConfig,
) -> Result<Vec<McEstimate>> {
    check_pair(model, s, a)?;
    if config.n_rollouts == 0 {
        return Err(Error::InvalidArgument("n_rollouts must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream((s * model.n_actions() + a) as u64);
    Ok(mc_with_rng(&mut rng, model, policy, s, a, config.n_rollouts))
}

/// Monte-Carlo Q tables for every channel and every `(s, a)`. Each pair
/// uses its own RNG stream derived from the seed.
pub fn mc_q_tables(model: &TabularCmdp, policy: &Policy, config: &McConfig) -> Result<Vec<Vec<f64>>> {
    let na = model.n_actions();
    let mut tables = vec![vec![0.0; model.n_state_actions()]; model.n_channels()];
    for s in 0..model.n_states() {
        for a in 0..na {
            for (i, est) in mc_unbiased_q_all(model, policy, s, a, config)?.into_iter().enumerate() {
                tables[i][s * na + a] = est.mean;
            }
        }
    }
    Ok(tables)
}

/// `J̄_i = Σ_j weights[j] · Q_i(s_j, a_j)` for every table.
pub fn weighted_estimate(pairs: &[(usize, usize)], weights: &[f64], q_tables: &[Vec<f64>], n_actions: usize) -> Vec<f64> {
    q_tables
        .iter()
        .map(|q| {
            pairs
                .iter()
                .zip(weights)
                .map(|(&(s, a), w)| w * q[s * n_actions + a])
                .sum()
        })
        .collect()
}

/// Samples `batch_size` pairs from `ρ·π` and averages the Q tables over
/// them with uniform weights `1/|B|`.
pub fn estimate_constraints(
    model: &TabularCmdp,
    policy: &Policy,
    q_tables: &[Vec<f64>],
    batch_size: usize,
    seed: u64,
) -> Result<BatchEstimate> {
    estimate_constraints_weighted(model, policy, q_tables, batch_size, seed, |_, _| 1.0)
}

/// As [`estimate_constraints`], with per-pair importance weights `weight(s, a)`
/// normalized to sum to one over the batch.
pub fn estimate_constraints_weighted<F>(
    model: &TabularCmdp,
    policy: &Policy,
    q_tables: &[Vec<f64>],
    batch_size: usize,
    seed: u64,
    weight: F,
) -> Result<BatchEstimate>
where
    F: Fn(usize, usize) -> f64,
{
    if batch_size == 0 {
        return Err(Error::Empty("constraint-estimation batch"));
    }
    if let Some(q) = q_tables.iter().find(|q| q.len() != model.n_state_actions()) {
        return Err(Error::DimensionMismatch {
            what: "Q table",
            expected: model.n_state_actions(),
            actual: q.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let batch: Vec<(usize, usize)> = (0..batch_size).map(|_| sample_start(&mut rng, model, policy)).collect();
    let raw: Vec<f64> = batch.iter().map(|&(s, a)| weight(s, a)).collect();
    let total: f64 = raw.iter().sum();
    if raw.iter().any(|w| !w.is_finite() || *w < 0.0) || total <= 0.0 {
        return Err(Error::InvalidArgument("batch weights must be nonnegative with positive sum".into()));
    }
    let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
    let values = weighted_estimate(&batch, &weights, q_tables, model.n_actions());
    Ok(BatchEstimate { batch, weights, values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cmdp::exact_values;
    use crate::generate::{flip_chain, random_cmdp, RandomCmdpSpec};

    #[test]
    fn td_zero_discount_with_unit_first_step() {
        let model = random_cmdp(&RandomCmdpSpec::new(3, 2, 1, 1), 2).unwrap().with_gamma(0.0).unwrap();
        let pi = Policy::uniform(3, 2);
        for seed in 0..10 {
            // ℓ_1 = 1: the single visited entry jumps straight to its reward
            let q = td_evaluate(&model, &pi, 1, &TdConfig::new(1, seed)).unwrap();
            let visited: Vec<usize> = (0..6).filter(|&k| q[k] != 0.0).collect();
            assert!(visited.len() <= 1);
            for k in visited {
                assert!((q[k] - model.reward_channel(1)[k]).abs() < 1e-15);
            }
        }
        // later updates only move entries toward r, never past it
        let q = td_evaluate(&model, &pi, 1, &TdConfig::new(2000, 4)).unwrap();
        for (k, &value) in q.iter().enumerate() {
            let r = model.reward_channel(1)[k];
            assert!(value <= r + 1e-15 && value >= 0.0);
            assert!((value - r).abs() < 0.05 * r.max(1e-3));
        }
    }

    #[test]
    fn td_no_iterations_is_identity() {
        let model = flip_chain(0.9, 0.5);
        let q = td_evaluate(&model, &Policy::uniform(2, 2), 0, &TdConfig::new(0, 1)).unwrap();
        assert_eq!(q, vec![0.0; 4]);
    }

    #[test]
    fn td_rejects_bad_exponent() {
        let model = flip_chain(0.9, 0.5);
        let mut config = TdConfig::new(10, 1);
        config.step_exponent = 1.0;
        assert!(td_evaluate(&model, &Policy::uniform(2, 2), 0, &config).is_err());
    }

    #[test]
    fn td_is_deterministic() {
        let model = flip_chain(0.9, 0.5);
        let pi = Policy::uniform(2, 2);
        let a = td_evaluate(&model, &pi, 2, &TdConfig::new(5000, 8)).unwrap();
        let b = td_evaluate(&model, &pi, 2, &TdConfig::new(5000, 8)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn td_converges_on_flip_chain() {
        let model = flip_chain(0.9, 0.5);
        let pi = Policy::uniform(2, 2);
        let exact = exact_values(&model, &pi).unwrap();
        let tol = 0.05 * model.value_bound();
        let hits = (0..20)
            .filter(|&seed| {
                let q = td_evaluate(&model, &pi, 0, &TdConfig::new(200_000, seed)).unwrap();
                let err = q.iter().zip(&exact.q[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                err <= tol
            })
            .count();
        assert!(hits >= 18, "only {hits}/20 seeds within {tol}");
    }

    #[test]
    fn horizon_law() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let q: f64 = 0.6;
        let n = 200_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            let h = geometric_horizon(&mut rng, q);
            if h < 4 {
                counts[h] += 1;
            }
        }
        for (h, &c) in counts.iter().enumerate() {
            let p = (1.0 - q) * q.powi(h as i32);
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((c as f64 / n as f64 - p).abs() < 4.0 * se, "h={h}");
        }
        assert_eq!(geometric_horizon(&mut rng, 0.0), 0);
    }

    #[test]
    fn vanishing_discount_collapses_horizon() {
        let model = flip_chain(0.9, 0.5).with_gamma(1e-12).unwrap();
        let est = mc_unbiased_q(&model, &Policy::uniform(2, 2), 0, 1, 2, &McConfig::new(1000, 1)).unwrap();
        assert!((est.mean - 1.0).abs() < 1e-6);
    }

    #[test]
    fn self_loop_rollout_is_geometric_sum() {
        // s0 with `stay` forever, channel 0 pays 1.
        let model = flip_chain(0.9, 0.5);
        let pi = Policy::deterministic(2, &[0, 0]).unwrap();
        let q = 0.9f64.sqrt();
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut out = vec![0.0; 3];
            rollout_estimate(&mut rng, &model, &pi, 0, 0, &mut out);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let h = geometric_horizon(&mut rng, q);
            let expected: f64 = (0..=h).map(|k| q.powi(k as i32)).sum();
            assert!((out[0] - expected).abs() < 1e-12);
        }
        // E[Σ_{h≤H} q^h] = Σ_h P(H ≥ h) q^h = Σ_h γ^h = 1/(1-γ)
        let closed: f64 = (0..10_000).map(|h| q.powi(h) * q.powi(h)).sum();
        assert!((closed - 10.0).abs() < 1e-9);
        let est = mc_unbiased_q(&model, &pi, 0, 0, 0, &McConfig::new(200_000, 5)).unwrap();
        assert!((est.mean - 10.0).abs() <= 3.0 * est.std_error);
    }

    #[test]
    fn full_support_exact_weights_recover_objectives() {
        let model = random_cmdp(&RandomCmdpSpec::new(4, 3, 2, 1), 6).unwrap();
        let pi = Policy::from_probs(4, 3, (0..12).map(|k| [0.5, 0.25, 0.25][k % 3]).collect()).unwrap();
        let values = exact_values(&model, &pi).unwrap();
        let pairs: Vec<(usize, usize)> = (0..4).flat_map(|s| (0..3).map(move |a| (s, a))).collect();
        let weights: Vec<f64> = pairs.iter().map(|&(s, a)| model.rho()[s] * pi.prob(s, a)).collect();
        let j = weighted_estimate(&pairs, &weights, &values.q, 3);
        for i in 0..3 {
            assert!((j[i] - values.objective[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn singleton_batch() {
        let model = flip_chain(0.9, 0.5);
        let pi = Policy::uniform(2, 2);
        let q = exact_values(&model, &pi).unwrap().q;
        let est = estimate_constraints(&model, &pi, &q, 1, 9).unwrap();
        let (s, a) = est.batch[0];
        assert_eq!(est.weights, vec![1.0]);
        for i in 0..3 {
            assert_eq!(est.values[i], q[i][s * 2 + a]);
        }
        assert!(matches!(estimate_constraints(&model, &pi, &q, 0, 9), Err(Error::Empty(_))));
    }

    #[test]
    fn batch_estimate_of_flip_cost() {
        let model = flip_chain(0.9, 0.5);
        let pi = Policy::uniform(2, 2);
        let values = exact_values(&model, &pi).unwrap();
        let est = estimate_constraints(&model, &pi, &values.q, 10_000, 17).unwrap();
        // Q_2(s0, ·) takes two values with equal probability.
        let (lo, hi) = (values.q[2][0], values.q[2][1]);
        let sd = 0.5 * (hi - lo).abs();
        let se = sd / (10_000f64).sqrt();
        assert!((est.values[2] - values.objective[2]).abs() <= 3.0 * se);
        let total: f64 = est.weights.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn importance_weights_are_normalized() {
        let model = flip_chain(0.9, 0.5);
        let pi = Policy::uniform(2, 2);
        let q = exact_values(&model, &pi).unwrap().q;
        let est = estimate_constraints_weighted(&model, &pi, &q, 50, 2, |_, a| 1.0 + a as f64).unwrap();
        let total: f64 = est.weights.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(estimate_constraints_weighted(&model, &pi, &q, 5, 2, |_, _| -1.0).is_err());
    }
}
