//! Patient-level splitting, photometric augmentation, Adam and the epoch
//! loop with early stopping.

pub mod adam;
pub mod augment;
pub mod fit;
pub mod split;

pub use adam::{adam_step, adam_update_slice, AdamHyper, AdamState};
pub use augment::{augment, augment_with, AugmentParams, AugmentRanges};
pub use fit::{
    batch_sizes, fit, fit_with_progress, image_to_chw, mask_to_plane, run_epoch, run_schedule,
    Datasets, EarlyStopping, EpochMetrics, EpochRunner, EpochStats, Example, FitOutcome,
    Observation, Schedule, TrainConfig, IMPROVEMENT_TOLERANCE, INPUT_MEAN, INPUT_STD,
};
pub use split::{split_by_patient, Split, SplitAssignment};
