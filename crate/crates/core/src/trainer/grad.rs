//! Hand-derived reverse pass: objective → similarity matrices → unit rows →
//! affine heads.

use ndarray::{s, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::heads::{project, project_backward, Projection, ProjectionHeads};
use crate::data::PairBatch;
use crate::error::{Error, Result};
use crate::hyper::Hyper;
use crate::objective::{assess, evaluate, FrozenState, ObjectiveConfig, ObjectiveOptions, ObjectiveParts, Variant};
use crate::similarity::{aggregate_blocks, LocalAggregation};

/// Raw batch rows, widened and with local parts stacked pair-major.
#[derive(Debug, Clone)]
pub struct BatchInputs {
    pub image_global: Array2<f64>,
    pub text_global: Array2<f64>,
    pub image_parts: Array2<f64>,
    pub text_parts: Array2<f64>,
    pub d1: usize,
    pub d2: usize,
}

impl BatchInputs {
    pub fn from_batch(batch: &PairBatch<'_>) -> Self {
        let ds = batch.dataset();
        let (b, dim, d1, d2) = (batch.len(), ds.dim(), ds.d1(), ds.d2());
        Self {
            image_global: batch.image_global(),
            text_global: batch.text_global(),
            image_parts: batch
                .image_local()
                .into_shape_with_order((b * d1, dim))
                .expect("standard layout"),
            text_parts: batch
                .text_local()
                .into_shape_with_order((b * d2, dim))
                .expect("standard layout"),
            d1,
            d2,
        }
    }

    pub fn len(&self) -> usize {
        self.image_global.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

struct Forward {
    img_g: Projection,
    txt_g: Projection,
    local: Option<LocalForward>,
    sg: Array2<f64>,
}

struct LocalForward {
    img_l: Projection,
    txt_l: Projection,
    parts: Array2<f64>,
    sl: Array2<f64>,
}

fn run_forward(heads: &ProjectionHeads, x: &BatchInputs, cfg: &ObjectiveConfig) -> Result<Forward> {
    if x.image_global.ncols() != heads.dim_in() {
        return Err(Error::config(format!(
            "heads expect width {}, batch has {}",
            heads.dim_in(),
            x.image_global.ncols()
        )));
    }
    let img_g = project(&heads.w_img, &heads.b_img, x.image_global.view());
    let txt_g = project(&heads.w_txt, &heads.b_txt, x.text_global.view());
    let sg = img_g.u.dot(&txt_g.u.t());
    let local = if cfg.use_local {
        let img_l = project(&heads.w_img, &heads.b_img, x.image_parts.view());
        let txt_l = project(&heads.w_txt, &heads.b_txt, x.text_parts.view());
        let parts = img_l.u.dot(&txt_l.u.t());
        let sl = aggregate_blocks(parts.view(), x.d1, x.d2, cfg.aggregation);
        Some(LocalForward {
            img_l,
            txt_l,
            parts,
            sl,
        })
    } else {
        None
    };
    Ok(Forward {
        img_g,
        txt_g,
        local,
        sg,
    })
}

/// `∂L/∂parts` from `∂L/∂Sl`, block by block.
fn local_block_backward(
    parts: &Array2<f64>,
    sl: &Array2<f64>,
    dsl: &Array2<f64>,
    d1: usize,
    d2: usize,
    aggregation: LocalAggregation,
) -> Array2<f64> {
    let mut dparts = Array2::zeros(parts.dim());
    let count = (d1 * d2) as f64;
    for ((i, j), &g) in dsl.indexed_iter() {
        if g == 0.0 {
            continue;
        }
        let rows = s![i * d1..(i + 1) * d1, j * d2..(j + 1) * d2];
        let mut block = dparts.slice_mut(rows);
        match aggregation {
            LocalAggregation::NormalizedFrobenius => {
                // Sl = ||P|| / c  ⇒  ∂Sl/∂P = P / (||P|| · c) = P / (Sl · c²).
                let norm_c = sl[[i, j]] * count;
                if norm_c > 0.0 {
                    block.scaled_add(g / norm_c, &parts.slice(rows));
                }
            }
            LocalAggregation::MeanCosine => {
                block.fill(g / count);
            }
        }
    }
    dparts
}

fn backward(
    heads: &ProjectionHeads,
    x: &BatchInputs,
    fwd: &Forward,
    dsg: &Array2<f64>,
    dsl: Option<&Array2<f64>>,
    cfg: &ObjectiveConfig,
) -> ProjectionHeads {
    let mut grads = ProjectionHeads::zeros(heads.dim_in(), heads.dim_out());
    let du_img = dsg.dot(&fwd.txt_g.u);
    let du_txt = dsg.t().dot(&fwd.img_g.u);
    project_backward(
        x.image_global.view(),
        &fwd.img_g,
        &du_img,
        &mut grads.w_img,
        &mut grads.b_img,
    );
    project_backward(
        x.text_global.view(),
        &fwd.txt_g,
        &du_txt,
        &mut grads.w_txt,
        &mut grads.b_txt,
    );
    if let (Some(local), Some(dsl)) = (&fwd.local, dsl) {
        let dparts = local_block_backward(&local.parts, &local.sl, dsl, x.d1, x.d2, cfg.aggregation);
        let du_img = dparts.dot(&local.txt_l.u);
        let du_txt = dparts.t().dot(&local.img_l.u);
        project_backward(
            x.image_parts.view(),
            &local.img_l,
            &du_img,
            &mut grads.w_img,
            &mut grads.b_img,
        );
        project_backward(
            x.text_parts.view(),
            &local.txt_l,
            &du_txt,
            &mut grads.w_txt,
            &mut grads.b_txt,
        );
    }
    grads
}

/// Result of one alternating step at fixed parameters.
#[derive(Debug, Clone)]
pub struct GradientReport {
    pub parts: ObjectiveParts,
    pub grads: ProjectionHeads,
    pub frozen: FrozenState,
}

/// Weight step followed by the gradient of the objective with those weights
/// (and margins) frozen, all at the current parameters.
pub fn gradients_with(
    heads: &ProjectionHeads,
    x: &BatchInputs,
    cfg: &ObjectiveConfig,
    rng: &mut impl Rng,
) -> Result<GradientReport> {
    let fwd = run_forward(heads, x, cfg)?;
    let sl = fwd.local.as_ref().map(|l| l.sl.view());
    let frozen = assess(fwd.sg.view(), sl, cfg, rng)?;
    let (parts, grads) = evaluate(fwd.sg.view(), sl, cfg, &frozen, true)?;
    let g = grads.expect("requested");
    let grads = backward(heads, x, &fwd, &g.global, g.local.as_ref(), cfg);
    Ok(GradientReport { parts, grads, frozen })
}

/// Full-objective gradients for a batch.
pub fn gradients(heads: &ProjectionHeads, batch: &PairBatch<'_>, hyper: &Hyper) -> Result<GradientReport> {
    hyper.validate()?;
    let cfg = ObjectiveConfig::new(hyper, Variant::Full, ObjectiveOptions::default());
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    gradients_with(heads, &BatchInputs::from_batch(batch), &cfg, &mut rng)
}

/// Objective value and gradient under an existing frozen weight step.
pub fn frozen_gradients(
    heads: &ProjectionHeads,
    x: &BatchInputs,
    cfg: &ObjectiveConfig,
    frozen: &FrozenState,
) -> Result<(ObjectiveParts, ProjectionHeads)> {
    let fwd = run_forward(heads, x, cfg)?;
    let sl = fwd.local.as_ref().map(|l| l.sl.view());
    let (parts, grads) = evaluate(fwd.sg.view(), sl, cfg, frozen, true)?;
    let g = grads.expect("requested");
    Ok((parts, backward(heads, x, &fwd, &g.global, g.local.as_ref(), cfg)))
}

/// Objective value only, under an existing frozen weight step.
pub fn frozen_objective(
    heads: &ProjectionHeads,
    x: &BatchInputs,
    cfg: &ObjectiveConfig,
    frozen: &FrozenState,
) -> Result<ObjectiveParts> {
    let fwd = run_forward(heads, x, cfg)?;
    let sl = fwd.local.as_ref().map(|l| l.sl.view());
    Ok(evaluate(fwd.sg.view(), sl, cfg, frozen, false)?.0)
}

/// Similarity matrices of a batch under the heads (global, optional local).
pub fn batch_similarities(
    heads: &ProjectionHeads,
    x: &BatchInputs,
    cfg: &ObjectiveConfig,
) -> Result<(Array2<f64>, Option<Array2<f64>>)> {
    let fwd = run_forward(heads, x, cfg)?;
    Ok((fwd.sg, fwd.local.map(|l| l.sl)))
}
