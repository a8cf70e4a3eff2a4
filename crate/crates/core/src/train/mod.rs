//! Training loop, run configuration, checkpoints and metrics files.

mod checkpoint;
mod heads_log;
mod metrics;
mod run;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointHeader, FORMAT_VERSION, MAGIC};
pub use heads_log::read_head_tables;
pub use metrics::{
    csv_header, csv_row, read_metrics, MetricsRecord, MetricsWriter, QueryAccuracy,
    CSV_BASE_COLUMNS,
};
pub use run::{train_run, Manifest, ProbeSettings, RunConfig, RunLayout, RunStatus, TrainOptions, TrainSummary};
