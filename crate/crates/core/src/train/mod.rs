//! Optimizers, weight averaging, metrics and the training loop.

pub mod ema;
pub mod metrics;
pub mod optim;
pub mod trainer;

pub use ema::Ema;
pub use metrics::{evaluate_predictions, normalize_answer, ExampleScores, MetricReport, Prf};
pub use optim::{OptimConfig, OptimState, Optimizer, OptimizerKind, StepInfo};
pub use trainer::{evaluate, train, Dataset, EarlyStopping, EpochLog, TrainConfig, TrainOutcome};
