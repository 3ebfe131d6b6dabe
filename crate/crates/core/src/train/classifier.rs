use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamState};
use super::augment::augment;
use super::config::{config_hash, TrainConfig};
use super::split::{split_dataset, SplitConfig};
use crate::data::{decode_manifest, Checkpoint, CheckpointMeta, DatasetManifest, Label};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport, Scored, DEFAULT_THRESHOLD};
use crate::models::{ImageShape, NetworkSpec};
use crate::nn::{bce_loss, Mode};
use crate::rng::{derive_seed, Stream};
use crate::tensor::{backward, Tensor};

const PREDICT_BATCH: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u64,
    pub train_loss: f64,
    pub test_acc: f64,
}

#[derive(Clone, Debug)]
pub struct ClassifierState {
    pub net: NetworkSpec,
    pub adam: AdamState,
    /// Epochs completed.
    pub epoch: u64,
    /// Optimizer steps taken.
    pub iteration: u64,
    pub history: Vec<EpochRecord>,
}

/// Decoded images with their labels.
#[derive(Clone, Debug)]
pub struct LabeledImages {
    pub images: Vec<Tensor>,
    pub labels: Vec<Label>,
}

impl LabeledImages {
    pub fn load(m: &DatasetManifest, shape: ImageShape) -> Result<Self> {
        Ok(LabeledImages {
            images: decode_manifest(m, shape)?,
            labels: m.entries.iter().map(|e| e.label).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct ClassifierOutcome {
    pub state: ClassifierState,
    pub report: EvalReport,
    pub train: DatasetManifest,
    pub test: DatasetManifest,
}

/// Digest identifying a classifier run for resume checks.
pub fn classifier_hash(cfg: &TrainConfig, split: &SplitConfig) -> String {
    config_hash(&(
        TrainConfig {
            epochs: 0,
            ..cfg.clone()
        },
        split,
    ))
}

impl ClassifierState {
    pub fn new(net: NetworkSpec) -> Result<Self> {
        Ok(ClassifierState {
            adam: AdamState::new(&net.store)?,
            net,
            epoch: 0,
            iteration: 0,
            history: Vec::new(),
        })
    }

    pub fn to_checkpoint(&self, cfg: &TrainConfig, split: &SplitConfig) -> Checkpoint {
        let meta = CheckpointMeta {
            kind: "classifier".into(),
            config_hash: classifier_hash(cfg, split),
            seed: cfg.seed,
            iteration: self.iteration,
            epoch: self.epoch,
            rng_cursor: self.epoch,
            extra: serde_json::json!({
                "train_config": cfg,
                "split_config": split,
                "history": self.history,
            }),
        };
        Checkpoint::new(self.net.clone(), Some(self.adam.clone()), meta)
    }

    pub fn from_checkpoint(c: Checkpoint, cfg: &TrainConfig, split: &SplitConfig) -> Result<Self> {
        let current = classifier_hash(cfg, split);
        if c.meta.config_hash != current {
            return Err(Error::ConfigMismatch {
                checkpoint: c.meta.config_hash,
                current,
            });
        }
        let history = match c.meta.extra.get("history") {
            Some(h) => serde_json::from_value(h.clone())
                .map_err(|e| Error::Corruption(format!("bad epoch history: {e}")))?,
            None => Vec::new(),
        };
        Ok(ClassifierState {
            adam: c.adam.ok_or_else(|| {
                Error::InconsistentState("checkpoint carries no optimizer state".into())
            })?,
            net: c.network,
            epoch: c.meta.epoch,
            iteration: c.meta.iteration,
            history,
        })
    }
}

/// Eval-mode sigmoid scores, in input order.
pub fn score_images(net: &mut NetworkSpec, images: &[Tensor]) -> Result<Vec<f64>> {
    let mut scores = Vec::with_capacity(images.len());
    for chunk in images.chunks(PREDICT_BATCH) {
        let out = net.predict(&Tensor::stack(chunk)?)?;
        scores.extend(out.data().iter().map(|&p| p as f64));
    }
    Ok(scores)
}

pub fn scored_set(net: &mut NetworkSpec, data: &LabeledImages) -> Result<Vec<Scored>> {
    Ok(score_images(net, &data.images)?
        .into_iter()
        .zip(&data.labels)
        .map(|(s, &l)| Scored::new(s, l))
        .collect())
}

/// Mini-batch boundaries for one epoch; a trailing batch of one joins the
/// previous batch so batch normalization always sees two samples.
fn batch_bounds(n: usize, size: usize) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = (0..n)
        .step_by(size)
        .map(|s| (s, (s + size).min(n)))
        .collect();
    if out.len() > 1 && out.last().is_some_and(|&(s, e)| e - s < 2) {
        let (_, e) = out.pop().expect("last batch");
        out.last_mut().expect("previous batch").1 = e;
    }
    out
}

/// Trains epochs `state.epoch..min(stop, cfg.epochs)`.
pub fn run_classifier(
    state: &mut ClassifierState,
    train: &LabeledImages,
    test: &LabeledImages,
    cfg: &TrainConfig,
    stop: Option<u64>,
) -> Result<()> {
    cfg.validate()?;
    if train.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{} training images",
            train.len()
        )));
    }
    let adam = cfg.adam();
    let end = stop.map_or(cfg.epochs as u64, |s| s.min(cfg.epochs as u64));
    while state.epoch < end {
        let e = state.epoch;
        let order = Stream::derive(cfg.seed, "classifier-epoch", e).permutation(train.len());
        let aug_seed = derive_seed(cfg.seed, "classifier-augment", e);
        let mut loss_sum = 0.0;
        for (s, t) in batch_bounds(order.len(), cfg.batch_size) {
            let mut imgs = Vec::with_capacity(t - s);
            let mut targets = Vec::with_capacity(t - s);
            for (k, &i) in order[s..t].iter().enumerate() {
                let img = if cfg.augment_ops.is_empty() {
                    train.images[i].clone()
                } else {
                    let mut st = Stream::derive(aug_seed, "image", (s + k) as u64);
                    augment(&train.images[i], &cfg.augment_ops, &mut st)?
                };
                imgs.push(img);
                targets.push(train.labels[i].target() as f32);
            }
            let n = imgs.len();
            let pred = state.net.forward(&Tensor::stack(&imgs)?, Mode::Train)?;
            let loss = bce_loss(&pred, &Tensor::from_vec(targets, &[n, 1])?)?;
            let grads = backward(&loss)?;
            adam_step(&mut state.net.store, &grads, &mut state.adam, &adam)?;
            state.iteration += 1;
            let l: f64 = loss.item()?.into();
            if !l.is_finite() {
                return Err(Error::InconsistentState(format!(
                    "non-finite loss in epoch {e}"
                )));
            }
            loss_sum += l * n as f64;
        }
        let test_acc = if test.is_empty() {
            f64::NAN
        } else {
            let scores = score_images(&mut state.net, &test.images)?;
            let hits = scores
                .iter()
                .zip(&test.labels)
                .filter(|(s, l)| (**s >= DEFAULT_THRESHOLD) == (**l == Label::BonaFide))
                .count();
            hits as f64 / test.len() as f64
        };
        let rec = EpochRecord {
            epoch: e,
            train_loss: loss_sum / train.len() as f64,
            test_acc,
        };
        log::info!(
            "epoch {e}: train_loss {:.5} test_acc {:.4}",
            rec.train_loss,
            rec.test_acc
        );
        state.history.push(rec);
        state.epoch += 1;
    }
    Ok(())
}

/// Splits, decodes and checks both labels are present.
pub fn prepare_classifier_data(
    labeled: &DatasetManifest,
    shape: ImageShape,
    split: &SplitConfig,
) -> Result<(
    DatasetManifest,
    DatasetManifest,
    LabeledImages,
    LabeledImages,
)> {
    for label in [Label::BonaFide, Label::Attack] {
        if labeled.count(label) == 0 {
            return Err(Error::InsufficientData(format!(
                "manifest has no {label} entries"
            )));
        }
    }
    let (train_m, test_m) = split_dataset(labeled, split)?;
    if test_m.is_empty() {
        return Err(Error::InsufficientData("test split is empty".into()));
    }
    let train = LabeledImages::load(&train_m, shape)?;
    let test = LabeledImages::load(&test_m, shape)?;
    Ok((train_m, test_m, train, test))
}

/// Splits `labeled`, trains `net` and evaluates on the held-out part.
pub fn train_classifier(
    labeled: &DatasetManifest,
    net: NetworkSpec,
    cfg: &TrainConfig,
    split: &SplitConfig,
) -> Result<ClassifierOutcome> {
    let shape = ImageShape::from_dims(&net.arch.input)?;
    let (train_m, test_m, train, test) = prepare_classifier_data(labeled, shape, split)?;
    let mut state = ClassifierState::new(net)?;
    run_classifier(&mut state, &train, &test, cfg, None)?;
    let report = evaluate(&scored_set(&mut state.net, &test)?, DEFAULT_THRESHOLD)?;
    Ok(ClassifierOutcome {
        state,
        report,
        train: train_m,
        test: test_m,
    })
}
