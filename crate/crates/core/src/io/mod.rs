//! Files: images, run configs, checkpoints, datasets.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod netpbm;

pub use checkpoint::Checkpoint;
pub use config::RunConfig;
