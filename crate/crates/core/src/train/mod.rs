//! Loss, optimisation, data splitting, metrics and experiment drivers.

pub mod experiment;
pub mod loss;
pub mod metrics;
pub mod optim;
pub mod split;
pub mod trainer;

pub use experiment::{
    cross_validate, grid_search, train_and_test, write_rows_csv, GridResult, HeldOut, GridSpace, MetricResult, RunRow, Summary,
};
pub use loss::{cross_entropy, logit_gradient};
pub use metrics::{auc_pr, auc_roc};
pub use optim::{clip_global_norm, lr_schedule, Adam, Grads};
pub use split::{stratified_holdout, upsample_positives, SplitPlan};
pub use trainer::{evaluate, normalize_with_train_stats, train_model, EpochStats, Scores, TrainConfig, TrainOutcome};
