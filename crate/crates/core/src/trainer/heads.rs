use ndarray::{Array1, Array2, Array3, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::data::PairBatch;
use crate::error::{Error, Result};
use crate::similarity::NORM_EPS;

const INIT_NOISE_STD: f64 = 0.01;

/// One affine head per modality, shared by global and local features, each
/// followed by unit-norm renormalization.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionHeads {
    pub w_img: Array2<f64>,
    pub b_img: Array1<f64>,
    pub w_txt: Array2<f64>,
    pub b_txt: Array1<f64>,
}

impl ProjectionHeads {
    pub fn zeros(dim_in: usize, dim_out: usize) -> Self {
        Self {
            w_img: Array2::zeros((dim_out, dim_in)),
            b_img: Array1::zeros(dim_out),
            w_txt: Array2::zeros((dim_out, dim_in)),
            b_txt: Array1::zeros(dim_out),
        }
    }

    /// Identity (padded or truncated to `dim_out`) with zero bias.
    pub fn identity(dim_in: usize, dim_out: usize) -> Self {
        let mut h = Self::zeros(dim_in, dim_out);
        for k in 0..dim_in.min(dim_out) {
            h.w_img[[k, k]] = 1.0;
            h.w_txt[[k, k]] = 1.0;
        }
        h
    }

    /// Identity plus small Gaussian noise on the weights, zero bias.
    pub fn init(dim_in: usize, dim_out: usize, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0, INIT_NOISE_STD).expect("valid std");
        let mut h = Self::identity(dim_in, dim_out);
        for v in h.w_img.iter_mut().chain(h.w_txt.iter_mut()) {
            *v += normal.sample(rng);
        }
        h
    }

    pub fn dim_in(&self) -> usize {
        self.w_img.ncols()
    }

    pub fn dim_out(&self) -> usize {
        self.w_img.nrows()
    }

    pub fn num_params(&self) -> usize {
        2 * (self.w_img.len() + self.b_img.len())
    }

    /// Parameters in the order `w_img, b_img, w_txt, b_txt`, row-major.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        out.extend(self.w_img.iter());
        out.extend(self.b_img.iter());
        out.extend(self.w_txt.iter());
        out.extend(self.b_txt.iter());
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params(), "flat parameter length");
        let mut it = flat.iter().copied();
        for v in self
            .w_img
            .iter_mut()
            .chain(self.b_img.iter_mut())
            .chain(self.w_txt.iter_mut())
            .chain(self.b_txt.iter_mut())
        {
            *v = it.next().expect("length checked");
        }
    }

    /// `true` for weight-matrix entries, `false` for biases, in flat order.
    pub fn decay_mask(&self) -> Vec<bool> {
        let (w, b) = (self.w_img.len(), self.b_img.len());
        let mut m = vec![true; w];
        m.extend(std::iter::repeat_n(false, b));
        m.extend(std::iter::repeat_n(true, w));
        m.extend(std::iter::repeat_n(false, b));
        m
    }

    pub fn is_finite(&self) -> bool {
        self.to_flat().iter().all(|v| v.is_finite())
    }
}

/// Affine map of a block of rows and its renormalization, kept for backward.
#[derive(Debug, Clone)]
pub(crate) struct Projection {
    pub z: Array2<f64>,
    pub norms: Array1<f64>,
    pub u: Array2<f64>,
}

pub(crate) fn project(w: &Array2<f64>, b: &Array1<f64>, x: ArrayView2<'_, f64>) -> Projection {
    let z = x.dot(&w.t()) + b;
    let norms: Array1<f64> = z.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    let mut u = z.clone();
    for (mut row, &n) in u.rows_mut().into_iter().zip(norms.iter()) {
        row /= n + NORM_EPS;
    }
    Projection { z, norms, u }
}

/// Accumulates `∂L/∂W` and `∂L/∂b` given `∂L/∂u`.
pub(crate) fn project_backward(
    x: ArrayView2<'_, f64>,
    proj: &Projection,
    du: &Array2<f64>,
    dw: &mut Array2<f64>,
    db: &mut Array1<f64>,
) {
    let mut dz = du.clone();
    for ((mut row, z), &n) in dz.rows_mut().into_iter().zip(proj.z.rows()).zip(proj.norms.iter()) {
        let ne = n + NORM_EPS;
        let zdu = z.dot(&row);
        row /= ne;
        if n > 0.0 {
            row.scaled_add(-zdu / (n * ne * ne), &z);
        }
    }
    *dw += &dz.t().dot(&x);
    *db += &dz.sum_axis(Axis(0));
}

/// Unit rows of `x` under the image (`image = true`) or text head.
pub(crate) fn project_rows(heads: &ProjectionHeads, image: bool, x: ArrayView2<'_, f64>) -> Array2<f64> {
    if image {
        project(&heads.w_img, &heads.b_img, x).u
    } else {
        project(&heads.w_txt, &heads.b_txt, x).u
    }
}

/// A batch after projection: every row unit-norm in the output space.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedBatch {
    pub image_global: Array2<f64>,
    pub image_local: Array3<f64>,
    pub text_global: Array2<f64>,
    pub text_local: Array3<f64>,
    pub y: Vec<u8>,
}

/// Applies the heads to all four embedding blocks of a batch.
pub fn forward(heads: &ProjectionHeads, batch: &PairBatch<'_>) -> Result<ProjectedBatch> {
    let ds = batch.dataset();
    if ds.dim() != heads.dim_in() {
        return Err(Error::config(format!(
            "heads expect width {}, dataset has {}",
            heads.dim_in(),
            ds.dim()
        )));
    }
    let b = batch.len();
    let (d1, d2, out) = (ds.d1(), ds.d2(), heads.dim_out());
    let flat = |a: Array3<f64>, d: usize| {
        a.into_shape_with_order((b * d, ds.dim()))
            .expect("owned standard layout")
    };
    let ig = project(&heads.w_img, &heads.b_img, batch.image_global().view()).u;
    let tg = project(&heads.w_txt, &heads.b_txt, batch.text_global().view()).u;
    let il = project(&heads.w_img, &heads.b_img, flat(batch.image_local(), d1).view()).u;
    let tl = project(&heads.w_txt, &heads.b_txt, flat(batch.text_local(), d2).view()).u;
    Ok(ProjectedBatch {
        image_global: ig,
        image_local: il.into_shape_with_order((b, d1, out)).expect("reshape"),
        text_global: tg,
        text_local: tl.into_shape_with_order((b, d2, out)).expect("reshape"),
        y: batch.y(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_synthetic;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_heads_preserve_unit_rows() {
        let ds = generate_synthetic(6, 2, 5, 2, 3, 0.4, 1).unwrap();
        let batch = PairBatch::new(&ds, vec![0, 3, 5]).unwrap();
        let p = forward(&ProjectionHeads::identity(5, 5), &batch).unwrap();
        for (a, b) in p.image_global.iter().zip(batch.image_global().iter()) {
            assert!((a - b).abs() < 1e-6);
        }
        for (a, b) in p.text_local.iter().zip(batch.text_local().iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn scaling_weights_changes_nothing() {
        let ds = generate_synthetic(6, 2, 5, 2, 3, 0.4, 1).unwrap();
        let batch = PairBatch::new(&ds, vec![1, 2]).unwrap();
        let h = ProjectionHeads::init(5, 5, &mut ChaCha8Rng::seed_from_u64(3));
        let mut scaled = h.clone();
        scaled.w_img *= 3.5;
        scaled.w_txt *= 0.2;
        let a = forward(&h, &batch).unwrap();
        let b = forward(&scaled, &batch).unwrap();
        for (x, y) in a.image_local.iter().zip(b.image_local.iter()) {
            assert!((x - y).abs() < 1e-9);
        }
        for (x, y) in a.text_global.iter().zip(b.text_global.iter()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn shapes_follow_dim_out() {
        let ds = generate_synthetic(6, 2, 5, 2, 3, 0.4, 1).unwrap();
        let batch = PairBatch::new(&ds, vec![0, 1, 2, 3]).unwrap();
        let h = ProjectionHeads::init(5, 7, &mut ChaCha8Rng::seed_from_u64(3));
        let p = forward(&h, &batch).unwrap();
        assert_eq!(p.image_global.dim(), (4, 7));
        assert_eq!(p.image_local.dim(), (4, 2, 7));
        assert_eq!(p.text_local.dim(), (4, 3, 7));
        for row in p.text_local.rows() {
            assert!((row.dot(&row).sqrt() - 1.0).abs() < 1e-9);
        }
        assert!(forward(&ProjectionHeads::identity(4, 4), &batch).is_err());
    }

    #[test]
    fn flat_round_trip() {
        let h = ProjectionHeads::init(3, 4, &mut ChaCha8Rng::seed_from_u64(0));
        let mut g = ProjectionHeads::zeros(3, 4);
        g.set_flat(&h.to_flat());
        assert_eq!(g, h);
        assert_eq!(h.decay_mask().iter().filter(|&&m| m).count(), 24);
    }
}
