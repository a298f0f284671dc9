//! Synthetic data, metrics, optimization, and the training loop.

pub mod adam;
pub mod data;
pub mod metrics;
pub mod train;

pub use adam::{Adam, AdamConfig};
pub use data::{gen_sample, Dataset, Sample, SampleMode, Split};
pub use metrics::{MetricReport, SampleMetrics};
pub use train::{evaluate, predict, train, train_on, EpochLog, TrainConfig, TrainOutcome};
