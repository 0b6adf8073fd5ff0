//! The episodic training loop and its loss terms.

pub mod config;
pub mod episode;
pub mod losses;
pub mod trainer;

pub use config::{Preset, TrainConfig, Variant};
pub use episode::{sample_assignment, EpisodeAssignment};
pub use losses::{
    loss_agg, loss_ds, loss_epic, loss_epif, loss_epir, AgnosticGrads, ClassifierGrads, DomainBatches,
    DomainSpecificGrads, FeatureGrads,
};
pub use trainer::{run_training, write_metrics_csv, LossReport, MetricRow, Trainer, METRICS_HEADER};
