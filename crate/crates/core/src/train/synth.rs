use std::fs;
use std::path::Path;

use super::gan::latent_batch;
use crate::data::{encode_image, DatasetManifest, Entry, Label, MANIFEST_FILE};
use crate::error::{Error, Result};
use crate::models::NetworkSpec;

const SYNTH_BATCH: usize = 32;

/// File name for synthetic image `index` drawn under `seed`.
pub fn synth_file_name(seed: u64, index: usize) -> String {
    format!("synth_s{seed}_{index:06}.png")
}

/// Generates `count` attack images with an eval-mode generator.
///
/// Image `i` uses its own latent stream, so the output does not depend on
/// batching. Writes the PNGs and `manifest.jsonl` into `out_dir`.
pub fn synthesize(
    g: &mut NetworkSpec,
    count: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let z_dim = g.input_shape()[0];
    let mut entries = Vec::with_capacity(count);
    let mut start = 0;
    while start < count {
        let n = SYNTH_BATCH.min(count - start);
        let zs = (start..start + n)
            .map(|i| latent_batch(seed, "synth-latent", i as u64, 1, z_dim))
            .collect::<Result<Vec<_>>>()?;
        let z = crate::Tensor::stack(&zs)?.reshape(&[n, z_dim])?;
        let images = g.predict(&z)?;
        for k in 0..n {
            let img = images.slice_first(k, k + 1)?;
            let img = img.reshape(&img.shape()[1..])?;
            let name = synth_file_name(seed, start + k);
            encode_image(&img, &out_dir.join(&name))?;
            let mut e = Entry::new(name, Label::Attack);
            e.subset = Some("synthetic".into());
            e.root = out_dir.to_path_buf();
            entries.push(e);
        }
        start += n;
    }
    let manifest = DatasetManifest::new(entries)?;
    manifest.save(&out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}
