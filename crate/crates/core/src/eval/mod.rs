//! Measurement procedures run on trained banks. None of them modify the
//! models they are given.

pub mod accuracy;
pub mod ensemble;
pub mod probe;
pub mod routing;
pub mod sharpness;

pub use accuracy::{argmax, count_correct, evaluate_accuracy, predictions, target_accuracy};
pub use ensemble::{ensemble_accuracy, ensemble_baseline};
pub use probe::{extract_probe_features, hetero_probe, write_probe_csv, LinearProbe, ProbeMode, ProbeResult};
pub use routing::{routing_analysis, RoutingMatrix, RoutingMode};
pub use sharpness::{sharpness_analysis, SharpnessCurve, SharpnessPoint};
