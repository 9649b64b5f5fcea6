//! Synthetic task generation, the combined objective, optimisation and
//! evaluation.

pub mod config;
pub mod data;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod synth;
pub mod train;

pub use config::{FusionMode, TrainConfig, FINE_TUNE_LEARNING_RATE};
pub use data::{fit_points, Blob, Sample, SampleMeta, Split};
pub use loss::total_loss;
pub use metrics::{evaluate, mean_correspondence_ce, MetricsReport, PCK_THRESHOLDS};
pub use model::{Forward, GemModel, SampleLoss};
pub use optim::AdamW;
pub use train::{train_epoch, EpochTrace};
