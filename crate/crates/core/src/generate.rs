//! Model generators: the two-state flip chain used throughout the tests,
//! seeded random CMDPs and gridworlds with goal and energy channels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::cmdp::{exact_objectives, CmdpParts, Policy, TabularCmdp};
use crate::error::{Error, Result};

/// Two-state chain with actions `stay` (0) and `flip` (1).
///
/// `stay` keeps the state and `flip` switches it. Channel 0 pays 1 in state
/// 0, channel 1 pays 1 in state 1 and channel 2 (the single constraint, with
/// limit `limit`) costs 1 per flip. The chain starts in state 0.
pub fn flip_chain(gamma: f64, limit: f64) -> TabularCmdp {
    let mut rewards = vec![0.0; 3 * 4];
    // channel 0: state 0
    rewards[0] = 1.0;
    rewards[1] = 1.0;
    // channel 1: state 1
    rewards[4 + 2] = 1.0;
    rewards[4 + 3] = 1.0;
    // channel 2: flip
    rewards[8 + 1] = 1.0;
    rewards[8 + 3] = 1.0;
    TabularCmdp::new(CmdpParts {
        n_states: 2,
        n_actions: 2,
        n_objectives: 2,
        n_constraints: 1,
        gamma,
        r_max: 1.0,
        rho: vec![1.0, 0.0],
        limits: vec![limit],
        transition: flip_transitions(),
        rewards,
    })
    .expect("flip chain is valid")
}

/// The flip chain reduced to its first channel (`m = 1`, `p = 0`).
pub fn flip_chain_single_objective(gamma: f64) -> TabularCmdp {
    TabularCmdp::new(CmdpParts {
        n_states: 2,
        n_actions: 2,
        n_objectives: 1,
        n_constraints: 0,
        gamma,
        r_max: 1.0,
        rho: vec![1.0, 0.0],
        limits: vec![],
        transition: flip_transitions(),
        rewards: vec![1.0, 1.0, 0.0, 0.0],
    })
    .expect("flip chain is valid")
}

fn flip_transitions() -> Vec<f64> {
    // [s][a][s']
    vec![
        1.0, 0.0, // s0 stay
        0.0, 1.0, // s0 flip
        0.0, 1.0, // s1 stay
        1.0, 0.0, // s1 flip
    ]
}

/// How constraint limits are chosen for a random CMDP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "rule", content = "value")]
pub enum LimitsRule {
    /// Explicit limits, one per constraint channel.
    Fixed(Vec<f64>),
    /// `limit_i = scale * f_i(uniform policy)`.
    UniformScale(f64),
}

/// Random CMDP with Dirichlet transition rows and sparse uniform rewards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomCmdpSpec {
    pub n_states: usize,
    pub n_actions: usize,
    pub m: usize,
    pub p: usize,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_r_max")]
    pub r_max: f64,
    /// Dirichlet concentration of every transition row.
    #[serde(default = "default_concentration")]
    pub concentration: f64,
    /// Probability that a reward entry is zero.
    #[serde(default)]
    pub sparsity: f64,
    #[serde(default = "default_limits")]
    pub limits: LimitsRule,
}

fn default_gamma() -> f64 {
    0.9
}
fn default_r_max() -> f64 {
    1.0
}
fn default_concentration() -> f64 {
    1.0
}
fn default_limits() -> LimitsRule {
    LimitsRule::UniformScale(0.8)
}

impl RandomCmdpSpec {
    pub fn new(n_states: usize, n_actions: usize, m: usize, p: usize) -> Self {
        Self {
            n_states,
            n_actions,
            m,
            p,
            gamma: default_gamma(),
            r_max: default_r_max(),
            concentration: default_concentration(),
            sparsity: 0.0,
            limits: default_limits(),
        }
    }

    pub fn gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }
}

/// Deterministic random CMDP for a fixed seed.
pub fn random_cmdp(spec: &RandomCmdpSpec, seed: u64) -> Result<TabularCmdp> {
    if spec.n_states == 0 || spec.n_actions == 0 || spec.m == 0 {
        return Err(Error::InvalidArgument(format!(
            "random-cmdp needs positive n_states, n_actions and m (got {}, {}, {})",
            spec.n_states, spec.n_actions, spec.m
        )));
    }
    if !(spec.concentration.is_finite() && spec.concentration > 0.0) {
        return Err(Error::InvalidArgument("concentration must be positive".into()));
    }
    if !(0.0..1.0).contains(&spec.sparsity) {
        return Err(Error::InvalidArgument("sparsity must lie in [0,1)".into()));
    }
    let (ns, na, nc) = (spec.n_states, spec.n_actions, spec.m + spec.p);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gamma_dist = Gamma::new(spec.concentration, 1.0)
        .map_err(|e| Error::InvalidArgument(format!("concentration: {e}")))?;

    let mut transition = Vec::with_capacity(ns * na * ns);
    for _ in 0..ns * na {
        transition.extend(dirichlet_row(&mut rng, &gamma_dist, ns));
    }
    let rewards = (0..nc * ns * na)
        .map(|_| {
            if rng.random::<f64>() < spec.sparsity {
                0.0
            } else {
                spec.r_max * rng.random::<f64>()
            }
        })
        .collect();

    let mut parts = CmdpParts {
        n_states: ns,
        n_actions: na,
        n_objectives: spec.m,
        n_constraints: spec.p,
        gamma: spec.gamma,
        r_max: spec.r_max,
        rho: vec![1.0 / ns as f64; ns],
        limits: vec![0.0; spec.p],
        transition,
        rewards,
    };
    match &spec.limits {
        LimitsRule::Fixed(values) => parts.limits = values.clone(),
        LimitsRule::UniformScale(scale) => {
            let provisional = TabularCmdp::new(parts.clone())?;
            let f = exact_objectives(&provisional, &Policy::uniform(ns, na))?;
            parts.limits = f[spec.m..].iter().map(|v| scale * v).collect();
        }
    }
    TabularCmdp::new(parts)
}

fn dirichlet_row(rng: &mut ChaCha8Rng, dist: &Gamma<f64>, n: usize) -> Vec<f64> {
    loop {
        let mut row: Vec<f64> = (0..n).map(|_| dist.sample(rng)).collect();
        let sum: f64 = row.iter().sum();
        if sum > 0.0 && sum.is_finite() {
            row.iter_mut().for_each(|x| *x /= sum);
            // push the rounding residue into the largest entry
            let residue = 1.0 - row.iter().sum::<f64>();
            let argmax = (0..n).max_by(|&i, &j| row[i].total_cmp(&row[j])).unwrap_or(0);
            row[argmax] += residue;
            return row;
        }
    }
}

/// Gridworld actions, in index order.
pub const GRID_ACTIONS: [&str; 5] = ["stay", "up", "down", "left", "right"];

/// Deterministic gridworld: one goal-reward channel per objective and one
/// energy channel charging `move_cost` for every non-`stay` action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridworldSpec {
    pub width: usize,
    pub height: usize,
    /// Goal cells `(x, y)` per objective channel.
    pub goals: Vec<Vec<(usize, usize)>>,
    #[serde(default = "default_move_cost")]
    pub move_cost: f64,
    pub limit: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default)]
    pub start: (usize, usize),
}

fn default_move_cost() -> f64 {
    1.0
}

/// Builds a gridworld. States are `y * width + x`; moves into walls leave
/// the agent in place.
pub fn gridworld(spec: &GridworldSpec) -> Result<TabularCmdp> {
    let (w, h) = (spec.width, spec.height);
    if w == 0 || h == 0 {
        return Err(Error::InvalidArgument("gridworld needs positive width and height".into()));
    }
    if spec.goals.is_empty() {
        return Err(Error::InvalidArgument("gridworld needs at least one goal objective".into()));
    }
    let in_grid = |&(x, y): &(usize, usize)| x < w && y < h;
    if !in_grid(&spec.start) || spec.goals.iter().flatten().any(|c| !in_grid(c)) {
        return Err(Error::InvalidArgument("gridworld cell outside the grid".into()));
    }
    if !(spec.move_cost.is_finite() && spec.move_cost > 0.0) {
        return Err(Error::InvalidArgument("move_cost must be positive".into()));
    }
    let (ns, na) = (w * h, GRID_ACTIONS.len());
    let m = spec.goals.len();
    let mut transition = vec![0.0; ns * na * ns];
    for s in 0..ns {
        let (x, y) = (s % w, s / w);
        for a in 0..na {
            let (nx, ny) = match a {
                1 => (x, y.saturating_sub(1)),
                2 => (x, (y + 1).min(h - 1)),
                3 => (x.saturating_sub(1), y),
                4 => ((x + 1).min(w - 1), y),
                _ => (x, y),
            };
            transition[(s * na + a) * ns + ny * w + nx] = 1.0;
        }
    }
    let mut rewards = vec![0.0; (m + 1) * ns * na];
    for (i, cells) in spec.goals.iter().enumerate() {
        for &(x, y) in cells {
            let s = y * w + x;
            for a in 0..na {
                rewards[(i * ns + s) * na + a] = 1.0;
            }
        }
    }
    for s in 0..ns {
        for a in 1..na {
            rewards[(m * ns + s) * na + a] = spec.move_cost;
        }
    }
    let mut rho = vec![0.0; ns];
    rho[spec.start.1 * w + spec.start.0] = 1.0;
    TabularCmdp::new(CmdpParts {
        n_states: ns,
        n_actions: na,
        n_objectives: m,
        n_constraints: 1,
        gamma: spec.gamma,
        r_max: spec.move_cost.max(1.0),
        rho,
        limits: vec![spec.limit],
        transition,
        rewards,
    })
}

/// Serializable generator description, as used by experiment files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    #[serde(default)]
    pub seed: u64,
    #[serde(flatten)]
    pub kind: GeneratorKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GeneratorKind {
    RandomCmdp(RandomCmdpSpec),
    Gridworld(GridworldSpec),
    FlipChain { gamma: f64, limit: f64 },
}

/// Generates the model described by `spec`; deterministic in the seed.
pub fn generate(spec: &GeneratorSpec) -> Result<TabularCmdp> {
    match &spec.kind {
        GeneratorKind::RandomCmdp(random) => random_cmdp(random, spec.seed),
        GeneratorKind::Gridworld(grid) => gridworld(grid),
        GeneratorKind::FlipChain { gamma, limit } => {
            TabularCmdp::new(CmdpParts { gamma: *gamma, ..flip_chain(0.9, *limit).into_parts() })
        }
    }
}
