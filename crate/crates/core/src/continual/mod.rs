//! Sequential training over a task sequence and the measurements taken
//! along the way.

mod ewc;
mod gridsearch;
mod harness;
mod metrics;

pub use ewc::{ewc_estimate_fisher, ewc_penalized_gradients, EwcAnchor, EwcConfig, EwcState};
pub use gridsearch::{gridsearch_mu, with_mu, GridScore, GridSearchOutcome, Tuning};
pub use harness::{
    evaluate_view, run_continual, train_epoch, ContinualOutcome, ContinualRunConfig, MethodTag,
    RecordKind, RunRecord, SeedOutcome, SeedRun, TaskSequence, TaskSpec,
};
pub use metrics::{
    average_accuracy, resource_report, AccuracyMatrix, MethodCost, ReferenceCost, ResourceEntry,
    ResourceReport, REFERENCE_RELATIVE_COSTS,
};
