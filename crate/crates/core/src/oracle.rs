//! Brute-force ground truth for tiny CMDPs: grid enumeration of stochastic
//! policies, the safe Pareto frontier and the optimality-gap metric.
//!
//! Objectives are maximized; constraints are satisfied when `f_i ≤ c_i`.

use std::io::Write;

use rayon::prelude::*;

use crate::cmdp::{exact_objectives, Policy, TabularCmdp};
use crate::error::{Error, Result};
use crate::manipulate::compositions;

/// Largest number of policies a grid may enumerate.
pub const ENUMERATION_BUDGET: u128 = 10_000_000;

/// Default number of steps per axis of the weight simplex in
/// [`optimality_gap`].
pub const GAP_SIMPLEX_RESOLUTION: usize = 200;

/// `a` dominates `b`: no worse everywhere and strictly better somewhere.
pub fn dominates(a: &[f64], b: &[f64]) -> Result<bool> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            what: "objective vector",
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(dominates_unchecked(a, b))
}

fn dominates_unchecked(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| x >= y) && a.iter().zip(b).any(|(x, y)| x > y)
}

/// Product grid of stochastic policies: every state row ranges over the
/// points of the action simplex with spacing `1 / (resolution − 1)`.
///
/// With `include_deterministic = false` rows that put all mass on one action
/// are left out (softmax parameters can only approach those).
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyGrid {
    resolution: usize,
    include_deterministic: bool,
    n_states: usize,
    n_actions: usize,
    rows: Vec<Vec<f64>>,
}

impl PolicyGrid {
    pub fn new(n_states: usize, n_actions: usize, resolution: usize, include_deterministic: bool) -> Result<Self> {
        if resolution < 2 {
            return Err(Error::InvalidArgument("grid resolution must be at least 2 points per axis".into()));
        }
        if n_states == 0 || n_actions == 0 {
            return Err(Error::InvalidArgument("grid needs at least one state and one action".into()));
        }
        let steps = resolution - 1;
        let mut rows = Vec::new();
        compositions(steps, n_actions, &mut |counts| {
            if !include_deterministic && n_actions > 1 && counts.contains(&steps) {
                return;
            }
            let mut row: Vec<f64> = counts.iter().map(|&c| c as f64 / steps as f64).collect();
            // put the rounding residue on the largest entry
            let residue = 1.0 - row.iter().sum::<f64>();
            let k = (0..n_actions).max_by(|&i, &j| row[i].total_cmp(&row[j])).unwrap_or(0);
            row[k] += residue;
            rows.push(row);
        });
        if rows.is_empty() {
            return Err(Error::Empty("policy grid row set"));
        }
        let requested = (rows.len() as u128).checked_pow(n_states as u32).unwrap_or(u128::MAX);
        if requested > ENUMERATION_BUDGET {
            return Err(Error::BudgetExceeded {
                requested,
                budget: ENUMERATION_BUDGET,
            });
        }
        Ok(Self {
            resolution,
            include_deterministic,
            n_states,
            n_actions,
            rows,
        })
    }

    /// Grid sized for `model`.
    pub fn for_model(model: &TabularCmdp, resolution: usize) -> Result<Self> {
        Self::new(model.n_states(), model.n_actions(), resolution, true)
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn include_deterministic(&self) -> bool {
        self.include_deterministic
    }

    /// Points of the action simplex used for every state.
    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len().pow(self.n_states as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Policy number `index`, decoding it in mixed radix with state 0 as the
    /// most significant digit.
    pub fn policy(&self, index: usize) -> Result<Policy> {
        if index >= self.len() {
            return Err(Error::OutOfRange {
                what: "policy index",
                index,
                limit: self.len(),
            });
        }
        let base = self.rows.len();
        let mut digits = vec![0; self.n_states];
        let mut rest = index;
        for d in digits.iter_mut().rev() {
            *d = rest % base;
            rest /= base;
        }
        let probs = digits.iter().flat_map(|&d| self.rows[d].iter().copied()).collect();
        Policy::from_probs(self.n_states, self.n_actions, probs)
    }

    pub fn policies(&self) -> impl Iterator<Item = Policy> + '_ {
        (0..self.len()).map(|i| self.policy(i).expect("index in range"))
    }
}

/// One evaluated grid policy.
#[derive(Debug, Clone, PartialEq)]
pub struct FrontierPoint {
    pub policy: Policy,
    /// `f_0..f_{m-1}`.
    pub objectives: Vec<f64>,
    /// `f_m..f_{m+p-1}`.
    pub constraints: Vec<f64>,
    /// Every constraint within its limit.
    pub safe: bool,
}

/// Evaluates every grid policy exactly, in grid order.
pub fn evaluate_grid(model: &TabularCmdp, grid: &PolicyGrid) -> Result<Vec<FrontierPoint>> {
    if grid.n_states != model.n_states() || grid.n_actions != model.n_actions() {
        return Err(Error::InvalidArgument(format!(
            "grid is {}x{} but the model has {} states and {} actions",
            grid.n_states,
            grid.n_actions,
            model.n_states(),
            model.n_actions()
        )));
    }
    let m = model.n_objectives();
    (0..grid.len())
        .into_par_iter()
        .map(|index| {
            let policy = grid.policy(index)?;
            let mut values = exact_objectives(model, &policy)?;
            let constraints = values.split_off(m);
            let safe = constraints.iter().zip(model.limits()).all(|(f, c)| f <= c);
            Ok(FrontierPoint {
                policy,
                objectives: values,
                constraints,
                safe,
            })
        })
        .collect()
}

/// Nondominated subset of `points`, keeping their relative order.
pub fn nondominated(points: Vec<FrontierPoint>) -> Vec<FrontierPoint> {
    // sweep in decreasing lexicographic order: a point can only be dominated
    // by one that sorts before it
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&i, &j| {
        let (a, b) = (&points[i].objectives, &points[j].objectives);
        b.iter()
            .zip(a)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let dominated = kept
            .iter()
            .any(|&k| dominates_unchecked(&points[k].objectives, &points[i].objectives));
        if !dominated {
            kept.push(i);
        }
    }
    kept.sort_unstable();
    let mut keep = vec![false; points.len()];
    kept.iter().for_each(|&i| keep[i] = true);
    points.into_iter().zip(keep).filter(|(_, k)| *k).map(|(p, _)| p).collect()
}

/// The safe Pareto frontier over the grid.
pub fn safe_pareto_front(model: &TabularCmdp, grid: &PolicyGrid) -> Result<Vec<FrontierPoint>> {
    let safe = evaluate_grid(model, grid)?.into_iter().filter(|p| p.safe).collect();
    Ok(nondominated(safe))
}

/// `max_{π*} max(0, min_λ λᵀ(F(π*) − F(candidate)))` with `λ` on the
/// simplex grid of [`GAP_SIMPLEX_RESOLUTION`] steps per axis.
pub fn optimality_gap(frontier: &[FrontierPoint], candidate: &[f64]) -> Result<f64> {
    optimality_gap_with_resolution(frontier, candidate, GAP_SIMPLEX_RESOLUTION)
}

pub fn optimality_gap_with_resolution(frontier: &[FrontierPoint], candidate: &[f64], resolution: usize) -> Result<f64> {
    if frontier.is_empty() {
        return Err(Error::Empty("frontier"));
    }
    if resolution == 0 {
        return Err(Error::InvalidArgument("simplex resolution must be positive".into()));
    }
    let m = candidate.len();
    if m == 0 {
        return Err(Error::Empty("candidate objective vector"));
    }
    let mut weights = Vec::new();
    compositions(resolution, m, &mut |counts| {
        weights.extend(counts.iter().map(|&c| c as f64 / resolution as f64));
    });
    let mut gap = 0.0f64;
    for point in frontier {
        if point.objectives.len() != m {
            return Err(Error::DimensionMismatch {
                what: "frontier objective vector",
                expected: m,
                actual: point.objectives.len(),
            });
        }
        let shortfall: Vec<f64> = point.objectives.iter().zip(candidate).map(|(a, b)| a - b).collect();
        let least = weights
            .chunks(m)
            .map(|lambda| lambda.iter().zip(&shortfall).map(|(l, d)| l * d).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        gap = gap.max(least);
    }
    Ok(gap)
}

/// Writes one CSV row per point: objectives, constraints, safety flag and the
/// policy rows flattened over `(s, a)`.
pub fn write_frontier_csv<W: Write>(points: &[FrontierPoint], writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    let Some(first) = points.first() else {
        out.flush()?;
        return Ok(());
    };
    let (m, p) = (first.objectives.len(), first.constraints.len());
    let (ns, na) = (first.policy.n_states(), first.policy.n_actions());
    let mut header: Vec<String> = (0..m + p).map(|i| format!("f_{i}")).collect();
    header.push("safe".into());
    for s in 0..ns {
        header.extend((0..na).map(|a| format!("pi_{s}_{a}")));
    }
    out.write_record(&header)?;
    for point in points {
        let mut row: Vec<String> = point.objectives.iter().chain(&point.constraints).map(f64::to_string).collect();
        row.push(point.safe.to_string());
        row.extend(point.policy.as_slice().iter().map(f64::to_string));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}
