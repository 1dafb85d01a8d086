//! Experiment harness: synthetic datasets, greedy evaluation, structured
//! metrics logs, the text config format, sweep drivers, and the invariant
//! check battery.

pub mod checks;
mod config;
mod dataset;
mod eval;
mod runlog;
mod sweep;

pub use config::{build_datasets, RunConfig, TaskConfig};
pub use dataset::{make_copy_task, Dataset, Split};
pub use eval::{corpus_eval, greedy_decode};
pub use runlog::{EpochRecord, RunLog, RunLogHeader, METRICS_FORMAT_VERSION};
pub use sweep::{grid_sweep, grid_tsv, sweep_tsv, tau_sweep, GridRow, SweepRow};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("dataset would be empty")]
    EmptyDataset,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Seq(#[from] crate::seq::SeqError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
