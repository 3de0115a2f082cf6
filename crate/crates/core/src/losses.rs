//! Symmetric InfoNCE and the adaptive-margin robust triplet loss.
//!
//! Every loss here is a function of a square similarity matrix whose
//! diagonal holds the positives. Each one also comes with an exact gradient
//! with respect to that matrix; the trainer chains these into the projection
//! heads.

use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};

fn check_square(s: &ArrayView2<'_, f64>) -> Result<usize> {
    let (r, c) = s.dim();
    if r != c {
        return Err(Error::config(format!("similarity matrix must be square, got {r}x{c}")));
    }
    if r < 2 {
        return Err(Error::config(format!("batch needs at least 2 pairs, got {r}")));
    }
    Ok(r)
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::config(format!("temperature must be > 0, got {tau}")))
    }
}

fn logsumexp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Row and column log-sum-exp of `s / tau`.
fn lse_rows_cols(s: &ArrayView2<'_, f64>, tau: f64) -> (Vec<f64>, Vec<f64>) {
    let b = s.nrows();
    let rows = (0..b).map(|j| logsumexp(s.row(j).iter().map(|v| v / tau))).collect();
    let cols = (0..b).map(|j| logsumexp(s.column(j).iter().map(|v| v / tau))).collect();
    (rows, cols)
}

/// Per-pair symmetric InfoNCE: image-to-text plus text-to-image
/// cross-entropy of pair `j` against the in-batch candidates.
pub fn infonce_per_pair(s: ArrayView2<'_, f64>, tau: f64) -> Result<Array1<f64>> {
    check_tau(tau)?;
    let b = check_square(&s)?;
    let (rows, cols) = lse_rows_cols(&s, tau);
    Ok(Array1::from_shape_fn(b, |j| {
        let pos = s[[j, j]] / tau;
        (rows[j] - pos) + (cols[j] - pos)
    }))
}

/// Gradient of `sum_j coeffs[j] * l_j` with respect to `s`.
pub fn infonce_backward(s: ArrayView2<'_, f64>, tau: f64, coeffs: &[f64]) -> Result<Array2<f64>> {
    check_tau(tau)?;
    let b = check_square(&s)?;
    if coeffs.len() != b {
        return Err(Error::Internal(format!(
            "{} coefficients for batch of {b}",
            coeffs.len()
        )));
    }
    let (rows, cols) = lse_rows_cols(&s, tau);
    let mut grad = Array2::zeros((b, b));
    for j in 0..b {
        for k in 0..b {
            let x = s[[j, k]] / tau;
            // Row j belongs to pair j's image-to-text term, column k to pair
            // k's text-to-image term.
            let p_row = (x - rows[j]).exp();
            let p_col = (x - cols[k]).exp();
            let mut g = coeffs[j] * p_row + coeffs[k] * p_col;
            if j == k {
                g -= 2.0 * coeffs[j];
            }
            grad[[j, k]] = g / tau;
        }
    }
    Ok(grad)
}

/// Batch InfoNCE losses over the global and local matrices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InfoNceBatch {
    pub global: f64,
    pub local: f64,
    pub total: f64,
}

pub fn infonce_batch(sg: ArrayView2<'_, f64>, sl: ArrayView2<'_, f64>, tau: f64) -> Result<InfoNceBatch> {
    let global = infonce_per_pair(sg, tau)?.mean().unwrap_or(0.0);
    let local = infonce_per_pair(sl, tau)?.mean().unwrap_or(0.0);
    Ok(InfoNceBatch {
        global,
        local,
        total: global + local,
    })
}

/// Per-pair contrastive losses; `total[i]` is the loss used to partition and
/// weight pair `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct PerPairLoss {
    pub global: Array1<f64>,
    pub local: Array1<f64>,
    pub total: Array1<f64>,
}

impl PerPairLoss {
    /// With `sl = None` the local term is zero.
    pub fn compute(sg: ArrayView2<'_, f64>, sl: Option<ArrayView2<'_, f64>>, tau: f64) -> Result<Self> {
        let global = infonce_per_pair(sg, tau)?;
        let local = match sl {
            Some(sl) => {
                if sl.dim() != sg.dim() {
                    return Err(Error::config("global and local similarity shapes differ"));
                }
                infonce_per_pair(sl, tau)?
            }
            None => Array1::zeros(global.len()),
        };
        let total = &global + &local;
        Ok(Self { global, local, total })
    }
}

/// Hardest in-batch negatives: for image `i` the most similar foreign text,
/// for text `i` the most similar foreign image. Ties go to the lowest index.
pub fn hardest_negatives(sg: ArrayView2<'_, f64>) -> Result<(Vec<usize>, Vec<usize>)> {
    let b = check_square(&sg)?;
    let argmax_excluding = |i: usize, get: &dyn Fn(usize) -> f64| {
        let mut best = usize::MAX;
        let mut best_val = f64::NEG_INFINITY;
        for j in (0..b).filter(|&j| j != i) {
            let v = get(j);
            if best == usize::MAX || v > best_val {
                best = j;
                best_val = v;
            }
        }
        best
    };
    let hard_txt = (0..b).map(|i| argmax_excluding(i, &|j| sg[[i, j]])).collect();
    let hard_img = (0..b).map(|i| argmax_excluding(i, &|j| sg[[j, i]])).collect();
    Ok((hard_txt, hard_img))
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::config(format!("base margin must be > 0, got {sigma}")))
    }
}

/// Soft margins inflated by how far the hardest negative beats the positive:
/// `sigma * (1 + max(0, S_neg - S_pos))` in each direction.
pub fn adaptive_margins(
    sg: ArrayView2<'_, f64>,
    hard_txt: &[usize],
    hard_img: &[usize],
    sigma: f64,
) -> Result<(Array1<f64>, Array1<f64>)> {
    check_sigma(sigma)?;
    let b = check_square(&sg)?;
    if hard_txt.len() != b || hard_img.len() != b {
        return Err(Error::Internal("hard-negative index length mismatch".into()));
    }
    let mu = Array1::from_shape_fn(b, |i| sigma * (1.0 + (sg[[i, hard_txt[i]]] - sg[[i, i]]).max(0.0)));
    let zeta = Array1::from_shape_fn(b, |i| sigma * (1.0 + (sg[[hard_img[i], i]] - sg[[i, i]]).max(0.0)));
    Ok((mu, zeta))
}

/// Robust triplet loss state for one batch.
///
/// Margins and hard-negative indices are fixed when the result is built;
/// [`RtlResult::loss_at`] and [`RtlResult::backward`] re-evaluate the hinge on
/// another similarity matrix with those held constant.
#[derive(Debug, Clone, PartialEq)]
pub struct RtlResult {
    pub loss: f64,
    pub mu_hat: Array1<f64>,
    pub zeta_hat: Array1<f64>,
    pub hard_txt_idx: Vec<usize>,
    pub hard_img_idx: Vec<usize>,
}

/// Adaptive-margin triplet loss with hardest-negative mining, averaged over
/// the batch.
pub fn robust_triplet_loss(sg: ArrayView2<'_, f64>, sigma: f64) -> Result<RtlResult> {
    let (hard_txt, hard_img) = hardest_negatives(sg)?;
    let (mu, zeta) = adaptive_margins(sg, &hard_txt, &hard_img, sigma)?;
    RtlResult::with_margins(sg, mu, zeta, hard_txt, hard_img)
}

/// Same mining, but every margin is the constant `sigma`.
pub fn fixed_margin_triplet_loss(sg: ArrayView2<'_, f64>, sigma: f64) -> Result<RtlResult> {
    check_sigma(sigma)?;
    let (hard_txt, hard_img) = hardest_negatives(sg)?;
    let b = hard_txt.len();
    RtlResult::with_margins(
        sg,
        Array1::from_elem(b, sigma),
        Array1::from_elem(b, sigma),
        hard_txt,
        hard_img,
    )
}

impl RtlResult {
    pub fn with_margins(
        sg: ArrayView2<'_, f64>,
        mu_hat: Array1<f64>,
        zeta_hat: Array1<f64>,
        hard_txt_idx: Vec<usize>,
        hard_img_idx: Vec<usize>,
    ) -> Result<Self> {
        let b = check_square(&sg)?;
        if [mu_hat.len(), zeta_hat.len(), hard_txt_idx.len(), hard_img_idx.len()]
            .iter()
            .any(|&l| l != b)
        {
            return Err(Error::Internal("triplet state length mismatch".into()));
        }
        let mut out = Self {
            loss: 0.0,
            mu_hat,
            zeta_hat,
            hard_txt_idx,
            hard_img_idx,
        };
        out.loss = out.loss_at(sg, None);
        Ok(out)
    }

    fn hinges(&self, sg: &ArrayView2<'_, f64>, i: usize) -> (f64, f64) {
        let pos = sg[[i, i]];
        let h_t = self.mu_hat[i] - pos + sg[[i, self.hard_txt_idx[i]]];
        let h_v = self.zeta_hat[i] - pos + sg[[self.hard_img_idx[i], i]];
        (h_t, h_v)
    }

    /// Hinge loss on `sg` with the stored margins and indices. `mask` limits
    /// the sum to selected anchors; normalization is always by batch size.
    pub fn loss_at(&self, sg: ArrayView2<'_, f64>, mask: Option<&[bool]>) -> f64 {
        let b = self.mu_hat.len();
        let mut sum = 0.0;
        for i in 0..b {
            if mask.is_some_and(|m| !m[i]) {
                continue;
            }
            let (h_t, h_v) = self.hinges(&sg, i);
            sum += h_t.max(0.0) + h_v.max(0.0);
        }
        sum / b as f64
    }

    /// Gradient of `scale * loss_at(sg, mask)` with respect to `sg`.
    pub fn backward(&self, sg: ArrayView2<'_, f64>, mask: Option<&[bool]>, scale: f64) -> Array2<f64> {
        let b = self.mu_hat.len();
        let mut grad = Array2::zeros((b, b));
        let unit = scale / b as f64;
        for i in 0..b {
            if mask.is_some_and(|m| !m[i]) {
                continue;
            }
            let (h_t, h_v) = self.hinges(&sg, i);
            if h_t > 0.0 {
                grad[[i, i]] -= unit;
                grad[[i, self.hard_txt_idx[i]]] += unit;
            }
            if h_v > 0.0 {
                grad[[i, i]] -= unit;
                grad[[self.hard_img_idx[i], i]] += unit;
            }
        }
        grad
    }
}
