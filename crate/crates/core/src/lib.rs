//! Noise-robust image-text retrieval training over precomputed embeddings.
//!
//! Pairs are scored with fused global and local cosine similarity, split
//! into clean, ambiguous and noisy buckets by their contrastive loss, and
//! trained with self-paced weights plus a triplet term whose margin grows
//! with how badly a positive trails its hardest negative.

pub mod data;
pub mod error;
pub mod evaluation;
pub mod hyper;
pub mod losses;
pub mod objective;
pub mod selfpaced;
pub mod similarity;
pub mod trainer;

pub use data::{Dataset, NoiseSpec, PairBatch};
pub use error::{Error, Result};
pub use evaluation::{detection_metrics, evaluate, recall_at_k, DetectionReport, RetrievalReport};
pub use hyper::Hyper;
pub use objective::{ObjectiveOptions, Variant};
pub use selfpaced::{optimal_weight, Bucket, Partition, SplWeights};
pub use similarity::LocalAggregation;
pub use trainer::{ablate, train, ProjectionHeads, TrainLog, TrainOptions};
