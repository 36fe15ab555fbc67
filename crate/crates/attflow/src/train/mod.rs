//! Deterministic gradient-descent training over flow samples, with exact
//! resume, evaluation, and forward-pass benchmarking.

mod config;
mod optim;
mod state;
mod trainer;

pub use config::{IterationRecord, LrSchedule, OptimizerKind, TrainConfig, TrainReport};
pub use optim::Optimizer;
pub use state::TrainState;
pub use trainer::{bench, evaluate, train, BenchResult};
