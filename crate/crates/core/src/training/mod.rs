//! Training loop, evaluation runs and the gradient-check suite.

mod cases;
mod config;
mod evaluate;
pub mod gradcheck;
mod train;

pub use cases::{load_case, Case};
pub use config::TrainConfig;
pub use evaluate::{case_logits, evaluate, evaluate_cases, write_report, EvalOptions, EvalReport};
pub use gradcheck::{gradcheck_suite, GradcheckSuiteReport, GRADCHECK_TOLERANCE};
pub use train::{train, train_on_cases, train_step, StepRecord, TrainLog, TrainOutcome};
