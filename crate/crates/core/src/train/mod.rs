//! Optimizer, dataset splitting, augmentation and the training loops.

mod adam;
mod augment;
mod classifier;
mod config;
mod gan;
mod split;
mod synth;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use augment::{augment, parse_ops, AugmentOp, Augmenter};
pub use classifier::{
    classifier_hash, prepare_classifier_data, run_classifier, score_images, scored_set,
    train_classifier, ClassifierOutcome, ClassifierState, EpochRecord, LabeledImages,
};
pub use config::{config_hash, TrainConfig};
pub use gan::{
    discriminator_accuracy, latent_batch, run_gan, train_gan, BatchSource, GanLossRecord,
    GanObserver, GanPhase, GanSchedule, GanState,
};
pub use split::{split_dataset, train_count, SplitConfig};
pub use synth::{synth_file_name, synthesize};
