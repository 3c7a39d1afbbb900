//! Adversarial training, evaluation against held-out views and the
//! reference-spacing sweep.

mod config;
mod data;
mod eval;
mod train;

pub use config::TrainConfig;
pub use data::{make_batches, stack, tau_steps, Batch, BatchSampler, SampleInfo, ViewCache};
pub use eval::{evaluate, sweep_tau, write_sweep_csv, EvalReport, EvalRow, SweepRow};
pub use train::{
    train, Optimizer, StepLog, TrainOutcome, Trainer, DISC_PREFIXES, FINAL_CHECKPOINT, LOSS_CSV,
};
