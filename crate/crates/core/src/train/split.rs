use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{DatasetManifest, Eye, Label};
use crate::error::{Error, Result};
use crate::rng::Stream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train_fraction: f64,
    pub seed: u64,
    pub stratify_by_label: bool,
    /// Also stratify by the `eye` field.
    pub stratify_by_eye: bool,
    /// Split without strata instead of failing when a stratum is too small.
    pub allow_unstratified: bool,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            train_fraction: 0.8,
            seed: 0,
            stratify_by_label: true,
            stratify_by_eye: false,
            allow_unstratified: false,
        }
    }
}

impl SplitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train_fraction must lie in (0, 1), got {}",
                self.train_fraction
            )));
        }
        Ok(())
    }
}

/// Number of training items drawn from a stratum of `n`.
pub fn train_count(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64).round() as usize).min(n)
}

fn partition(
    manifest: &DatasetManifest,
    strata: &BTreeMap<(Option<Label>, Option<Eye>), Vec<usize>>,
    cfg: &SplitConfig,
) -> (DatasetManifest, DatasetManifest) {
    let mut stream = Stream::derive(cfg.seed, "split", 0);
    let mut in_train = vec![false; manifest.len()];
    for members in strata.values() {
        let mut idx = members.clone();
        stream.shuffle(&mut idx);
        for &i in &idx[..train_count(idx.len(), cfg.train_fraction)] {
            in_train[i] = true;
        }
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (e, t) in manifest.entries.iter().zip(in_train) {
        if t { &mut train } else { &mut test }.push(e.clone());
    }
    (
        DatasetManifest { entries: train },
        DatasetManifest { entries: test },
    )
}

/// Deterministic train/test partition. With stratification each stratum
/// contributes `round(fraction · size)` training items. Both outputs keep
/// manifest order.
pub fn split_dataset(
    manifest: &DatasetManifest,
    cfg: &SplitConfig,
) -> Result<(DatasetManifest, DatasetManifest)> {
    cfg.validate()?;
    if manifest.is_empty() {
        return Err(Error::EmptyInput("cannot split an empty manifest".into()));
    }
    let mut strata: BTreeMap<_, Vec<usize>> = BTreeMap::new();
    for (i, e) in manifest.entries.iter().enumerate() {
        let key = (
            cfg.stratify_by_label.then_some(e.label),
            cfg.stratify_by_eye.then_some(e.eye),
        );
        strata.entry(key).or_default().push(i);
    }
    let stratified = cfg.stratify_by_label || cfg.stratify_by_eye;
    if stratified {
        if let Some((key, m)) = strata.iter().find(|(_, m)| m.len() < 2) {
            if !cfg.allow_unstratified {
                return Err(Error::Stratification(format!(
                    "stratum {key:?} has {} entr{}; at least 2 are needed",
                    m.len(),
                    if m.len() == 1 { "y" } else { "ies" }
                )));
            }
            log::warn!("stratum {key:?} too small, splitting without strata");
            strata = BTreeMap::from([((None, None), (0..manifest.len()).collect())]);
        }
    }
    Ok(partition(manifest, &strata, cfg))
}
