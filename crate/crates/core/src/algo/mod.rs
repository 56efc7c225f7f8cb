//! Actor-critic training with convex Q targets and sample multiple reuse.

mod config;
mod state;
mod train;

pub use config::{TrainConfig, CONFIG_KEYS};
pub use state::{
    cdq_target, convex_target_from_values, ActorStats, CriticStats, SmrMetrics, TargetValues,
    TrainState,
};
pub use train::{
    curve_to_csv, evaluate, random_policy_return, train, train_with, CurvePoint, RunSummary,
    TrainOutcome, CSV_HEADER,
};

#[cfg(test)]
mod tests;
