use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamState};
use super::augment::augment;
use super::config::TrainConfig;
use crate::data::{decode_manifest, Checkpoint, CheckpointMeta, DatasetManifest};
use crate::error::{Error, Result};
use crate::models::{check_gan_pair, ImageShape, NetworkSpec};
use crate::nn::{bce_loss, Mode};
use crate::rng::{derive_seed, Stream};
use crate::tensor::{backward, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GanLossRecord {
    pub iter: u64,
    pub d_loss: f64,
    pub g_loss: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GanPhase {
    Discriminator,
    Generator,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BatchSource {
    Real,
    Synthetic,
}

/// Instrumentation called with the BCE targets just before each loss.
pub trait GanObserver {
    fn on_targets(&mut self, iter: u64, phase: GanPhase, source: BatchSource, targets: &[f32]);
}

/// Everything needed to continue adversarial training.
#[derive(Clone, Debug)]
pub struct GanState {
    pub generator: NetworkSpec,
    pub discriminator: NetworkSpec,
    pub g_adam: AdamState,
    pub d_adam: AdamState,
    /// Iterations completed.
    pub iteration: u64,
    pub history: Vec<GanLossRecord>,
}

/// Iteration layout for `n` real images.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GanSchedule {
    /// Real images (and latent vectors) per iteration.
    pub per_iter: usize,
    pub iters_per_epoch: u64,
    pub total_iters: u64,
}

impl GanSchedule {
    pub fn new(n: usize, cfg: &TrainConfig) -> Result<Self> {
        if n < cfg.batch_size {
            return Err(Error::InsufficientData(format!(
                "{n} real images, batch size is {}",
                cfg.batch_size
            )));
        }
        let per_iter = cfg.real_per_iter.min(n);
        let iters_per_epoch = n.div_ceil(per_iter) as u64;
        Ok(GanSchedule {
            per_iter,
            iters_per_epoch,
            total_iters: iters_per_epoch * cfg.epochs as u64,
        })
    }
}

impl GanState {
    pub fn new(generator: NetworkSpec, discriminator: NetworkSpec) -> Result<Self> {
        check_gan_pair(&generator.arch, &discriminator.arch)?;
        Ok(GanState {
            g_adam: AdamState::new(&generator.store)?,
            d_adam: AdamState::new(&discriminator.store)?,
            generator,
            discriminator,
            iteration: 0,
            history: Vec::new(),
        })
    }

    fn meta(&self, kind: &str, cfg: &TrainConfig, per_epoch: u64) -> CheckpointMeta {
        CheckpointMeta {
            kind: kind.into(),
            config_hash: cfg.resume_hash(),
            seed: cfg.seed,
            iteration: self.iteration,
            epoch: self.iteration / per_epoch.max(1),
            rng_cursor: self.iteration,
            extra: serde_json::Value::Null,
        }
    }

    /// Generator and discriminator checkpoints. The loss history travels
    /// with the generator.
    pub fn to_checkpoints(
        &self,
        cfg: &TrainConfig,
        schedule: &GanSchedule,
    ) -> (Checkpoint, Checkpoint) {
        let mut gm = self.meta("generator", cfg, schedule.iters_per_epoch);
        gm.extra = serde_json::json!({ "train_config": cfg, "history": self.history });
        let mut dm = self.meta("discriminator", cfg, schedule.iters_per_epoch);
        dm.extra = serde_json::json!({ "train_config": cfg });
        (
            Checkpoint::new(self.generator.clone(), Some(self.g_adam.clone()), gm),
            Checkpoint::new(self.discriminator.clone(), Some(self.d_adam.clone()), dm),
        )
    }

    /// Rebuilds the state, refusing checkpoints written under another config.
    pub fn from_checkpoints(g: Checkpoint, d: Checkpoint, cfg: &TrainConfig) -> Result<Self> {
        let current = cfg.resume_hash();
        for m in [&g.meta, &d.meta] {
            if m.config_hash != current {
                return Err(Error::ConfigMismatch {
                    checkpoint: m.config_hash.clone(),
                    current,
                });
            }
        }
        if g.meta.iteration != d.meta.iteration {
            return Err(Error::InconsistentState(format!(
                "generator at iteration {}, discriminator at {}",
                g.meta.iteration, d.meta.iteration
            )));
        }
        let history: Vec<GanLossRecord> = match g.meta.extra.get("history") {
            Some(h) => serde_json::from_value(h.clone())
                .map_err(|e| Error::Corruption(format!("bad loss history: {e}")))?,
            None => Vec::new(),
        };
        let missing = || Error::InconsistentState("checkpoint carries no optimizer state".into());
        Ok(GanState {
            g_adam: g.adam.ok_or_else(missing)?,
            d_adam: d.adam.ok_or_else(missing)?,
            generator: g.network,
            discriminator: d.network,
            iteration: g.meta.iteration,
            history,
        })
    }
}

fn constant(n: usize, v: f32) -> Result<Tensor> {
    Tensor::from_vec(vec![v; n], &[n, 1])
}

/// Standard-normal latent batch `[n, z_dim]` for a stream index.
pub fn latent_batch(seed: u64, tag: &str, index: u64, n: usize, z_dim: usize) -> Result<Tensor> {
    let mut s = Stream::derive(seed, tag, index);
    let z: Vec<f32> = (0..n * z_dim).map(|_| s.normal(0.0, 1.0) as f32).collect();
    Tensor::from_vec(z, &[n, z_dim])
}

/// Runs iterations `state.iteration..min(stop, total)` over decoded images.
pub fn run_gan(
    state: &mut GanState,
    reals: &[Tensor],
    cfg: &TrainConfig,
    stop: Option<u64>,
    mut observer: Option<&mut dyn GanObserver>,
) -> Result<()> {
    cfg.validate()?;
    if cfg.epochs == 0 {
        return Err(Error::Config(
            "GAN training needs at least one epoch".into(),
        ));
    }
    let sched = GanSchedule::new(reals.len(), cfg)?;
    let adam = cfg.adam();
    let z_dim = state.generator.input_shape()[0];
    let r = sched.per_iter;
    let n = reals.len();
    let end = stop.map_or(sched.total_iters, |s| s.min(sched.total_iters));
    let mut perm: Option<(u64, Vec<usize>)> = None;

    while state.iteration < end {
        let t = state.iteration;
        let epoch = t / sched.iters_per_epoch;
        let j = (t % sched.iters_per_epoch) as usize;
        if perm.as_ref().is_none_or(|(e, _)| *e != epoch) {
            perm = Some((
                epoch,
                Stream::derive(cfg.seed, "gan-epoch", epoch).permutation(n),
            ));
        }
        let order = &perm.as_ref().expect("permutation").1;
        let draw = if cfg.temporal_resample { t } else { 0 };
        let aug_seed = derive_seed(cfg.seed, "gan-augment", draw);
        let batch: Vec<Tensor> = (0..r)
            .into_par_iter()
            .map(|q| {
                let img = &reals[order[(j * r + q) % n]];
                augment(
                    img,
                    &cfg.augment_ops,
                    &mut Stream::derive(aug_seed, "image", q as u64),
                )
            })
            .collect::<Result<_>>()?;
        let real = Tensor::stack(&batch)?;
        let z = latent_batch(cfg.seed, "gan-latent", draw, r, z_dim)?;

        let fake = state.generator.forward(&z, Mode::Train)?;

        let ones = constant(r, 1.0)?;
        let zeros = constant(r, 0.0)?;
        let d_real = state.discriminator.forward(&real, Mode::Train)?;
        let d_fake = state.discriminator.forward(&fake.detach(), Mode::Train)?;
        if let Some(o) = observer.as_deref_mut() {
            o.on_targets(t, GanPhase::Discriminator, BatchSource::Real, ones.data());
            o.on_targets(
                t,
                GanPhase::Discriminator,
                BatchSource::Synthetic,
                zeros.data(),
            );
        }
        let d_loss = bce_loss(&d_real, &ones)?.add(&bce_loss(&d_fake, &zeros)?)?;
        let grads = backward(&d_loss)?;
        adam_step(
            &mut state.discriminator.store,
            &grads,
            &mut state.d_adam,
            &adam,
        )?;

        let g_score = state
            .discriminator
            .forward_with(&fake, Mode::Train, false)?;
        if let Some(o) = observer.as_deref_mut() {
            o.on_targets(t, GanPhase::Generator, BatchSource::Synthetic, ones.data());
        }
        let g_loss = bce_loss(&g_score, &ones)?;
        let grads = backward(&g_loss)?;
        adam_step(&mut state.generator.store, &grads, &mut state.g_adam, &adam)?;

        let rec = GanLossRecord {
            iter: t,
            d_loss: d_loss.item()?.into(),
            g_loss: g_loss.item()?.into(),
        };
        log::debug!(
            "gan iter {t}: d_loss {:.4} g_loss {:.4}",
            rec.d_loss,
            rec.g_loss
        );
        if !(rec.d_loss.is_finite() && rec.g_loss.is_finite()) {
            return Err(Error::InconsistentState(format!(
                "non-finite GAN loss at iteration {t}"
            )));
        }
        state.history.push(rec);
        state.iteration += 1;
    }
    Ok(())
}

/// Trains a fresh pair on the images of `real` for `cfg.epochs` epochs.
pub fn train_gan(
    real: &DatasetManifest,
    g: NetworkSpec,
    d: NetworkSpec,
    cfg: &TrainConfig,
) -> Result<GanState> {
    let mut state = GanState::new(g, d)?;
    let reals = decode_manifest(
        real,
        ImageShape::from_dims(&state.discriminator.arch.input)?,
    )?;
    run_gan(&mut state, &reals, cfg, None, None)?;
    Ok(state)
}

/// Fraction of a probe batch the discriminator labels correctly at 0.5.
pub fn discriminator_accuracy(d: &mut NetworkSpec, real: &Tensor, fake: &Tensor) -> Result<f64> {
    let pr = d.predict(real)?;
    let pf = d.predict(fake)?;
    let hits = pr.data().iter().filter(|&&p| p >= 0.5).count()
        + pf.data().iter().filter(|&&p| p < 0.5).count();
    Ok(hits as f64 / (pr.numel() + pf.numel()) as f64)
}
