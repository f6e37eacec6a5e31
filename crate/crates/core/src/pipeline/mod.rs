//! Datasets, training, evaluation, checkpoints and the command line.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod eval;
pub mod optim;
pub mod report;
pub mod synth;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{EvalConfig, RunConfig, TrainConfig};
pub use data::{load_dataset, DatasetSpec, Sample, Split};
pub use eval::{evaluate, ConstantScorer, Evaluation, ModelScorer, OracleScorer, Scorer};
pub use optim::AdamW;
pub use synth::{synth_dataset, SynthConfig, SynthSummary};
pub use train::{train, train_student, StepRecord, TrainLogs, TrainSummary};
