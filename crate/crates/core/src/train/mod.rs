//! Self-supervised training: sensor normalization, augmentation, ADAM and evaluation.

mod adam;
mod augment;
mod data;
mod eval;
mod normalize;
mod trainer;

pub use adam::{Adam, AdamConfig};
pub use augment::{augment_flip, augment_timescale, flip_displacement, MIRROR_NEGATED_UNITS};
pub use data::{Dataset, GroundTruth, Sample, SequenceData, Triplet};
pub use eval::{endpoint_error, endpoint_error_sum, evaluate, synthesize_view, view_synthesis_errors, EpeSum, EvalReport};
pub use normalize::{average_sensor_window, normalize_sensors, NormalizationStats};
pub use trainer::{
    batch_indices, prepare_batch, sample_gradient, train, train_step, PreparedSample, SampleOutcome, StepMetrics,
    TrainConfig, TrainOutcome, TrainState,
};
