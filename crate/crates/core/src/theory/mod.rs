//! Finite-MDP checks of TD learning with tanh-transformed features.

mod features;
mod mdp;
mod quadratic;
mod report;
mod tabular;
mod td;

pub use features::{check_linear_independence, gaussian_matrix, numerical_rank, singular_values, FeatureMap, RankReport, RANK_TOL};
pub use mdp::{
    bellman_optimality, check_ergodic, sample_row, stationary_distribution, uniform_policy, value_iteration, FiniteMdp, Policy,
};
pub use quadratic::{regularized_gd, regularized_quadratic, regularized_quadratic_mc, GdRun, RegularizedQuadratic};
pub use report::*;
pub use tabular::{convex_pair, greedy, tabular_convex_q, HistoryPoint, TabularConfig, TabularRun};
pub use td::{
    project_ball, projected_bellman_residual, run_td0, semi_gradient_variance, tanh_features, td0_step, td0_tanh_step, td_fixed_point,
    StepSchedule, TdRun, VarianceReport,
};
