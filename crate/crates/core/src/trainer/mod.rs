//! Projection heads over raw embeddings and the machinery that trains them.

mod checkpoint;
mod grad;
mod heads;
mod optim;
mod train;

pub use checkpoint::{decode_heads, encode_heads, read_heads, write_heads, RRSP_MAGIC, RRSP_VERSION};
pub use grad::{
    batch_similarities, frozen_gradients, frozen_objective, gradients, gradients_with, BatchInputs, GradientReport,
};
pub(crate) use heads::project_rows;
pub use heads::{forward, ProjectedBatch, ProjectionHeads};
pub use optim::{clip_grad_norm, lr_at, Adam};
pub use train::{
    ablate, initial_heads, train, write_trace_csv, EpochRecord, TraceRow, TrainLog, TrainOptions, WEIGHT_BINS,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::PairBatch;
use crate::error::Result;
use crate::hyper::Hyper;
use crate::objective::{ObjectiveConfig, ObjectiveOptions, ObjectiveParts, Variant};
use crate::selfpaced::{Partition, SplWeights};

/// The full objective on one batch, with the weight step it was built on.
#[derive(Debug, Clone)]
pub struct ObjectiveReport {
    pub parts: ObjectiveParts,
    pub partition: Partition,
    pub weights: SplWeights,
}

pub fn overall_objective(heads: &ProjectionHeads, batch: &PairBatch<'_>, hyper: &Hyper) -> Result<ObjectiveReport> {
    hyper.validate()?;
    let cfg = ObjectiveConfig::new(hyper, Variant::Full, ObjectiveOptions::default());
    let x = BatchInputs::from_batch(batch);
    let (sg, sl) = batch_similarities(heads, &x, &cfg)?;
    let frozen = crate::objective::assess(
        sg.view(),
        sl.as_ref().map(|s| s.view()),
        &cfg,
        &mut ChaCha8Rng::seed_from_u64(hyper.seed),
    )?;
    let (parts, _) = crate::objective::evaluate(sg.view(), sl.as_ref().map(|s| s.view()), &cfg, &frozen, false)?;
    Ok(ObjectiveReport {
        parts,
        partition: frozen.partition,
        weights: frozen.weights,
    })
}
