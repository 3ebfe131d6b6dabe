//! Manifests, PNG I/O, the toy corpus and binary persistence.

mod blob;
mod checkpoint;
mod image;
mod manifest;
mod toy;

pub use blob::{
    decode_blob, encode_blob, load_tensor, read_blob_header, save_tensor, write_blob, BlobHeader,
    BLOB_MAGIC, BLOB_VERSION,
};
pub use checkpoint::{
    load_checkpoint, save_checkpoint, sha256_hex, Checkpoint, CheckpointMeta, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use image::{decode_image, decode_manifest, encode_image, to_pixel};
pub use manifest::{load_manifest, DatasetManifest, Entry, Eye, Label};
pub use toy::{gen_toy_corpus, toy_image, MANIFEST_FILE};
