//! Ground-truth solvers and error metrics.

pub mod coupled;
pub mod metrics;
pub mod subsidized;

pub use coupled::{
    coupled_value_iteration, evaluate_policy, index_policy, optimal_action_sets, suboptimal_action_fraction,
    JointSpace, PolicySpec, TieBreak, ValueFunctionCoupled,
};
pub use metrics::{averaged_bre, bellman_relative_error, misordering_fraction, misordering_fraction_sampled, BreReport};
pub use subsidized::{
    indexability_check, linear_grid, solve_subsidized_arm, solve_subsidized_arm_from, whittle_bisection,
    whittle_indices, IndexabilityReport, SubsidizedSolution,
};
