//! Binary record files with a JSON manifest, and model checkpoints.
//!
//! Record file (little-endian): `"RXA1"`, then per record `tx u32, rx u32,
//! day u16, n u32` followed by `n` interleaved `I f32, Q f32` pairs.
//!
//! Checkpoint: `"RXAF"`, `version u32`, `header_len u32`, a JSON header with
//! the architecture, tensor names/shapes and provenance, then every tensor as
//! raw `f64` little-endian values in header order.

mod checkpoint;
mod records;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, CheckpointKind,
    ClassifierMeta, Provenance, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use records::{
    decode_records, digest_bytes, encode_records, read_dataset, write_dataset, DatasetManifest, Device,
    ExternalTag, Record, FORMAT_VERSION, MANIFEST_FILE, RECORDS_FILE, RECORD_HEADER_BYTES, RECORD_MAGIC,
};
