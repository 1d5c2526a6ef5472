//! Tabular CMDP model, softmax policies and exact dynamic programming.

mod exact;
mod model;
mod policy;

pub use exact::{
    bellman_residual, exact_objectives, exact_values, gradient_from_q, policy_gradient, policy_gradients,
    policy_kernel, visitation_measure, ValueProfile, Visitation,
};
pub use model::{validate_cmdp, CmdpParts, TabularCmdp, ValidationReport, MAX_STATE_ACTIONS, STOCHASTIC_TOL};
pub use policy::{policy_from_params, score_function, Policy, SoftmaxPolicy};
