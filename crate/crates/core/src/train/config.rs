use serde::{Deserialize, Serialize};

use super::adam::AdamConfig;
use super::augment::AugmentOp;
use crate::data::sha256_hex;
use crate::error::{Error, Result};

/// Hyper-parameters shared by the GAN and classifier loops.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Real images drawn per GAN iteration.
    pub real_per_iter: usize,
    /// Synthetic images to generate after GAN training.
    pub target_synthetic: usize,
    pub augment_ops: Vec<AugmentOp>,
    /// Redraw augmentation parameters and latent vectors every iteration.
    pub temporal_resample: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::gan()
    }
}

impl TrainConfig {
    pub fn gan() -> Self {
        let adam = AdamConfig::gan();
        TrainConfig {
            learning_rate: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            batch_size: 16,
            epochs: 10,
            seed: 0,
            real_per_iter: 200,
            target_synthetic: 10_000,
            augment_ops: AugmentOp::ALL.to_vec(),
            temporal_resample: true,
        }
    }

    pub fn classifier() -> Self {
        let adam = AdamConfig::classifier();
        TrainConfig {
            learning_rate: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            augment_ops: Vec::new(),
            ..TrainConfig::gan()
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    /// Checks everything except `epochs`, which each loop checks itself.
    pub fn validate(&self) -> Result<()> {
        self.adam().validate()?;
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch_size must be at least 2 for batch normalization, got {}",
                self.batch_size
            )));
        }
        if self.real_per_iter < 2 {
            return Err(Error::Config(format!(
                "real_per_iter must be at least 2, got {}",
                self.real_per_iter
            )));
        }
        Ok(())
    }

    /// Digest of every field that shapes the training trajectory. `epochs`
    /// is left out so a run can be extended on resume.
    pub fn resume_hash(&self) -> String {
        config_hash(&TrainConfig {
            epochs: 0,
            ..self.clone()
        })
    }
}

/// SHA-256 of the canonical JSON encoding of `value`.
pub fn config_hash<S: Serialize>(value: &S) -> String {
    sha256_hex(&serde_json::to_vec(value).expect("config serializes"))
}
