//! The epoch loop: alternate weight and parameter steps, log, and keep the
//! best checkpoint on a clean validation split.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::grad::{gradients_with, BatchInputs};
use super::heads::ProjectionHeads;
use super::optim::{clip_grad_norm, lr_at, Adam};
use crate::data::{batch_iter, Dataset};
use crate::error::{Error, Result};
use crate::evaluation::evaluate_with;
use crate::hyper::Hyper;
use crate::objective::{ObjectiveConfig, ObjectiveOptions, Variant};
use crate::selfpaced::Bucket;

pub const WEIGHT_BINS: usize = 10;

/// Settings that shape a run without being hyperparameters.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOptions {
    pub variant: Variant,
    pub objective: ObjectiveOptions,
    /// 1-based epochs whose per-pair weights are kept in the log.
    pub trace_epochs: Vec<usize>,
    pub record_timing: bool,
    /// Head output width; defaults to the dataset width.
    pub dim_out: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    pub l_overall: f64,
    pub l_s1: f64,
    pub l_s2: f64,
    pub l_soft: f64,
    pub clean: usize,
    pub ambiguous: usize,
    pub noisy: usize,
    /// Counts of per-pair weights in ten equal bins over `[0, 1]`.
    pub weight_histogram: [usize; WEIGHT_BINS],
    pub mean_weight: f64,
    pub mean_grad_norm: f64,
    pub lr: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_mr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_clock_s: Option<f64>,
}

/// Per-pair state from the weight step that last visited the pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub epoch: usize,
    pub pair_id: usize,
    pub y: u8,
    pub loss: f64,
    pub weight: f64,
    pub bucket: Bucket,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub variant: Variant,
    pub records: Vec<EpochRecord>,
    /// Epoch of the returned checkpoint; 0 means the initial heads.
    pub best_epoch: usize,
    pub best_val_mr: Option<f64>,
    pub traces: BTreeMap<usize, Vec<TraceRow>>,
    /// Last-epoch rows sorted by pair id; pairs in a dropped tail are absent.
    pub final_pairs: Vec<TraceRow>,
}

impl TrainLog {
    /// One JSON object per epoch record.
    pub fn write_jsonl(&self, mut out: impl Write) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Writes rows as `epoch,pair_id,y,loss,weight,bucket` CSV with a header.
pub fn write_trace_csv(rows: &[TraceRow], mut out: impl Write) -> Result<()> {
    writeln!(out, "epoch,pair_id,y,loss,weight,bucket")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.epoch, r.pair_id, r.y, r.loss, r.weight, r.bucket
        )?;
    }
    Ok(())
}

/// Independent streams derived from the run seed.
#[derive(Debug, Clone, Copy)]
enum Stream {
    Init,
    Shuffle(u64),
    Weights,
}

fn derive_seed(seed: u64, stream: Stream) -> u64 {
    let salt = match stream {
        Stream::Init => 0x1,
        Stream::Shuffle(epoch) => 0x2 ^ (epoch << 8),
        Stream::Weights => 0x3,
    };
    // SplitMix64 finalizer.
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Heads a run with this seed starts from.
pub fn initial_heads(dim_in: usize, dim_out: usize, seed: u64) -> ProjectionHeads {
    ProjectionHeads::init(
        dim_in,
        dim_out,
        &mut ChaCha8Rng::seed_from_u64(derive_seed(seed, Stream::Init)),
    )
}

fn numeric(epoch: usize, step: usize, what: impl std::fmt::Display) -> Error {
    Error::Numeric(format!("epoch {epoch}, step {step}: {what}"))
}

/// Trains heads on `train`, selecting the checkpoint with the best mR on
/// `val` when given, otherwise returning the final heads.
pub fn train(
    train: &Dataset,
    val: Option<&Dataset>,
    hyper: &Hyper,
    options: &TrainOptions,
) -> Result<(ProjectionHeads, TrainLog)> {
    hyper.validate()?;
    if let Some(v) = val {
        if v.dim() != train.dim() || v.d1() != train.d1() || v.d2() != train.d2() {
            return Err(Error::config("validation set shape differs from training set"));
        }
        if v.noisy_count() > 0 {
            return Err(Error::Data("validation set must contain only clean pairs".into()));
        }
    }
    if let Some(&bad) = options.trace_epochs.iter().find(|&&e| e == 0) {
        return Err(Error::config(format!("trace epochs are 1-based, got {bad}")));
    }
    let dim_out = options.dim_out.unwrap_or(train.dim());
    if dim_out < 2 {
        return Err(Error::config(format!("dim_out must be >= 2, got {dim_out}")));
    }

    let mut heads = initial_heads(train.dim(), dim_out, hyper.seed);
    let decay_mask = heads.decay_mask();
    let mut adam = Adam::new(heads.num_params());
    let mut weight_rng = ChaCha8Rng::seed_from_u64(derive_seed(hyper.seed, Stream::Weights));
    let steps_per_epoch = batch_iter(train, hyper.batch_size, 0)?.count_total();
    if steps_per_epoch == 0 {
        return Err(Error::config(format!(
            "{} pairs give no batch of at least 2 with batch_size {}",
            train.n_pairs(),
            hyper.batch_size
        )));
    }
    let total_steps = steps_per_epoch * hyper.epochs;
    let alpha = options.variant.inference_alpha(hyper.alpha);
    let aggregation = options.objective.local_aggregation;

    let mut log = TrainLog {
        variant: options.variant,
        records: Vec::with_capacity(hyper.epochs),
        best_epoch: 0,
        best_val_mr: None,
        traces: BTreeMap::new(),
        final_pairs: Vec::new(),
    };
    let mut best = heads.clone();
    let mut step = 0usize;
    let started = Instant::now();

    for epoch in 1..=hyper.epochs {
        let epoch_hyper = Hyper {
            gamma2: hyper.gamma2_at(epoch),
            ..hyper.clone()
        };
        let cfg = ObjectiveConfig::new(&epoch_hyper, options.variant, options.objective);
        let mut sums = [0.0f64; 4];
        let mut buckets = [0usize; 3];
        let mut hist = [0usize; WEIGHT_BINS];
        let (mut weight_sum, mut grad_norm_sum, mut seen) = (0.0, 0.0, 0usize);
        let mut rows: Vec<TraceRow> = Vec::with_capacity(train.n_pairs());
        let mut lr = 0.0;
        let batches = batch_iter(
            train,
            hyper.batch_size,
            derive_seed(hyper.seed, Stream::Shuffle(epoch as u64)),
        )?;

        for (local_step, batch) in batches.enumerate() {
            let x = BatchInputs::from_batch(&batch);
            let report = gradients_with(&heads, &x, &cfg, &mut weight_rng).map_err(|e| match e {
                Error::Numeric(m) => numeric(epoch, local_step, m),
                other => other,
            })?;
            let p = report.parts;
            if !p.overall.is_finite() {
                return Err(numeric(epoch, local_step, "non-finite L_overall"));
            }
            sums[0] += p.overall;
            sums[1] += p.s1;
            sums[2] += p.s2;
            sums[3] += p.soft;

            let frozen = &report.frozen;
            let y = batch.y();
            for (i, &pair_id) in batch.indices().iter().enumerate() {
                let bucket = frozen.partition.bucket(i);
                buckets[bucket as usize] += 1;
                let w = frozen.weights.w[i];
                hist[((w * WEIGHT_BINS as f64) as usize).min(WEIGHT_BINS - 1)] += 1;
                weight_sum += w;
                seen += 1;
                rows.push(TraceRow {
                    epoch,
                    pair_id,
                    y: y[i],
                    loss: frozen.losses.total[i],
                    weight: w,
                    bucket,
                });
            }

            let mut flat = report.grads.to_flat();
            if flat.iter().any(|g| !g.is_finite()) {
                return Err(numeric(epoch, local_step, "non-finite gradient"));
            }
            grad_norm_sum += clip_grad_norm(&mut flat, hyper.max_grad_norm);
            lr = lr_at(step, hyper, total_steps);
            let mut params = heads.to_flat();
            adam.step(&mut params, &flat, lr, hyper.weight_decay, &decay_mask);
            heads.set_flat(&params);
            if !heads.is_finite() {
                return Err(numeric(epoch, local_step, "parameters diverged"));
            }
            step += 1;
        }

        let n_steps = steps_per_epoch as f64;
        let val_mr = match val {
            Some(v) => Some(evaluate_with(&heads, v, alpha, aggregation)?.mr),
            None => None,
        };
        if let Some(mr) = val_mr {
            if log.best_val_mr.is_none_or(|b| mr > b) {
                log.best_val_mr = Some(mr);
                log.best_epoch = epoch;
                best = heads.clone();
            }
        }
        log.records.push(EpochRecord {
            epoch,
            steps: steps_per_epoch,
            l_overall: sums[0] / n_steps,
            l_s1: sums[1] / n_steps,
            l_s2: sums[2] / n_steps,
            l_soft: sums[3] / n_steps,
            clean: buckets[Bucket::Clean as usize],
            ambiguous: buckets[Bucket::Ambiguous as usize],
            noisy: buckets[Bucket::Noisy as usize],
            weight_histogram: hist,
            mean_weight: weight_sum / seen as f64,
            mean_grad_norm: grad_norm_sum / n_steps,
            lr,
            val_mr,
            wall_clock_s: options.record_timing.then(|| started.elapsed().as_secs_f64()),
        });

        rows.sort_by_key(|r| r.pair_id);
        if options.trace_epochs.contains(&epoch) {
            log.traces.insert(epoch, rows.clone());
        }
        if epoch == hyper.epochs {
            log.final_pairs = rows;
        }
    }

    if val.is_none() {
        log.best_epoch = hyper.epochs;
        best = heads;
    }
    Ok((best, log))
}

/// [`train`] under an ablation variant with default interpretation options.
pub fn ablate(
    train_set: &Dataset,
    val: Option<&Dataset>,
    hyper: &Hyper,
    variant: Variant,
) -> Result<(ProjectionHeads, TrainLog)> {
    let options = TrainOptions {
        variant,
        ..TrainOptions::default()
    };
    train(train_set, val, hyper, &options)
}
