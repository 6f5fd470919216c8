//! Training, evaluation, metrics, checkpoints and benchmarks.

mod bench;
mod checkpoint;
mod data;
mod metrics;
mod train;

pub use bench::{bench_neighbors, median, uniform_cloud, BenchConfig, BenchOp, BenchReport, BenchRow};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, MAGIC, VERSION};
pub use data::{prepare_all, prepare_sample, read_dataset, write_dataset, PreparedSample, Preprocess};
pub use metrics::{compute_metrics, MetricsReport};
pub use train::{
    evaluate, evaluate_prepared, run_training, train, DataSource, EpochRecord, TrainConfig, TrainOutcome,
    TrainSummary, BEST_CHECKPOINT, CSV_FILE, CSV_HEADER,
};
