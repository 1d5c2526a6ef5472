//! Tabular constrained multi-objective policy optimization.
//!
//! The crate evaluates softmax policies on finite CMDPs (exactly, by TD(0) or
//! by unbiased Monte-Carlo rollouts), computes conflict-averse natural policy
//! gradient directions and runs the constraint-rectified optimization loop.
//! The [`oracle`] module enumerates policy grids to build safe Pareto
//! frontiers for small models.

pub mod cmdp;
pub mod crmopo;
pub mod error;
pub mod eval;
pub mod generate;
pub mod io;
pub mod manipulate;
pub mod oracle;

pub use cmdp::{Policy, SoftmaxPolicy, TabularCmdp};
pub use crmopo::{run, select_output, OutputRule, RunConfig, RunTrace};
pub use error::{Error, Result};
pub use generate::{generate, GeneratorSpec};
pub use io::{load_cmdp, parse_cmdp, save_cmdp};
pub use manipulate::CaNpgConfig;
pub use oracle::{optimality_gap, safe_pareto_front, FrontierPoint, PolicyGrid};
