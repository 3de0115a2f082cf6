//! Paired image/text embedding datasets.
//!
//! A [`Dataset`] holds one global embedding and a fixed number of local
//! (part) embeddings per modality for every pair, plus the correspondence
//! flag `y`. Rows are stored as `f32`, which is also the on-disk precision;
//! batches are widened to `f64` for training.

mod batch;
mod dataset;
mod manifest;
mod noise;
mod rrse;
mod synthetic;

pub use batch::{batch_iter, Batches, PairBatch, DEFAULT_BATCH_SIZE};
pub use dataset::Dataset;
pub use manifest::{load_dataset, DatasetManifest};
pub use noise::{inject_noise, NoiseSpec};
pub use rrse::{decode_dataset, encode_dataset, read_dataset, write_dataset, RRSE_MAGIC, RRSE_VERSION};
pub use synthetic::{generate_synthetic, SyntheticConfig, DEFAULT_LOCAL_PARTS};
