//! Global, local and fused image-text similarity matrices.
//!
//! Rows of every similarity matrix index images, columns index texts.

use ndarray::{s, Array2, ArrayView2, ArrayView3, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Added to row norms before division.
pub const NORM_EPS: f64 = 1e-12;

/// How the `d1 x d2` matrix of part-to-part cosines collapses to one score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalAggregation {
    /// `||M||_F / sqrt(d1 * d2)`: L2 over one axis, then L2 of the result,
    /// scaled into `[0, 1]`. Discards the sign of the part cosines.
    #[default]
    NormalizedFrobenius,
    /// Signed mean of the part cosines, in `[-1, 1]`.
    MeanCosine,
}

impl std::str::FromStr for LocalAggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normalized_frobenius" | "frobenius" => Ok(Self::NormalizedFrobenius),
            "mean_cosine" | "mean" => Ok(Self::MeanCosine),
            other => Err(Error::config(format!("unknown local aggregation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityBundle {
    pub global: Array2<f64>,
    pub local: Array2<f64>,
    pub fused: Array2<f64>,
    pub alpha: f64,
}

impl SimilarityBundle {
    pub fn compute(
        image_global: ArrayView2<'_, f64>,
        image_local: ArrayView3<'_, f64>,
        text_global: ArrayView2<'_, f64>,
        text_local: ArrayView3<'_, f64>,
        alpha: f64,
        aggregation: LocalAggregation,
    ) -> Result<Self> {
        let global = global_similarity(image_global, text_global)?;
        let local = local_similarity(image_local, text_local, aggregation)?;
        let fused = fused_similarity(global.view(), local.view(), alpha)?;
        Ok(Self {
            global,
            local,
            fused,
            alpha,
        })
    }
}

/// Scales every row to unit length. A row of exact zeros has no direction
/// and is rejected.
pub fn normalize_rows(x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let mut out = x.to_owned();
    for (r, mut row) in out.rows_mut().into_iter().enumerate() {
        let norm = row.dot(&row).sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::Domain(format!("row {r} has norm {norm}, cosine undefined")));
        }
        row /= norm + NORM_EPS;
    }
    Ok(out)
}

/// `S[i][j] = cos(image_i, text_j)`.
pub fn global_similarity(image: ArrayView2<'_, f64>, text: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if image.ncols() != text.ncols() {
        return Err(Error::config(format!(
            "embedding widths differ: {} vs {}",
            image.ncols(),
            text.ncols()
        )));
    }
    let u = normalize_rows(image)?;
    let v = normalize_rows(text)?;
    Ok(u.dot(&v.t()))
}

/// Local similarity of every (image, text) pair from their part embeddings.
///
/// `image` is `b1 x d1 x dim`, `text` is `b2 x d2 x dim`.
pub fn local_similarity(
    image: ArrayView3<'_, f64>,
    text: ArrayView3<'_, f64>,
    aggregation: LocalAggregation,
) -> Result<Array2<f64>> {
    let (b1, d1, dim) = image.dim();
    let (_, d2, dim_t) = text.dim();
    if dim != dim_t {
        return Err(Error::config(format!("embedding widths differ: {dim} vs {dim_t}")));
    }
    let a = normalize_rows(flatten(image).view())?;
    let t = normalize_rows(flatten(text).view())?;
    Ok(local_from_unit_rows(a.view(), t.view(), b1, d1, d2, aggregation))
}

fn flatten(x: ArrayView3<'_, f64>) -> Array2<f64> {
    let (b, d, dim) = x.dim();
    x.as_standard_layout()
        .into_owned()
        .into_shape_with_order((b * d, dim))
        .expect("standard layout reshapes")
}

/// Local similarities from already unit-norm part rows, stacked pair-major
/// (`b1*d1 x dim` and `b2*d2 x dim`). Processes images in chunks so the
/// part-cosine matrix never has to exist in full.
pub fn local_from_unit_rows(
    image_parts: ArrayView2<'_, f64>,
    text_parts: ArrayView2<'_, f64>,
    b1: usize,
    d1: usize,
    d2: usize,
    aggregation: LocalAggregation,
) -> Array2<f64> {
    const CHUNK: usize = 64;
    let b2 = text_parts.nrows() / d2;
    let mut out = Array2::zeros((b1, b2));
    let tt = text_parts.t();
    let mut start = 0;
    while start < b1 {
        let end = (start + CHUNK).min(b1);
        let g = image_parts.slice(s![start * d1..end * d1, ..]).dot(&tt);
        let block = aggregate_blocks(g.view(), d1, d2, aggregation);
        out.slice_mut(s![start..end, ..]).assign(&block);
        start = end;
    }
    out
}

/// Collapses each `d1 x d2` block of a part-cosine matrix to one score.
pub fn aggregate_blocks(g: ArrayView2<'_, f64>, d1: usize, d2: usize, aggregation: LocalAggregation) -> Array2<f64> {
    let (rows, cols) = g.dim();
    let (b1, b2) = (rows / d1, cols / d2);
    let scale = ((d1 * d2) as f64).sqrt();
    Array2::from_shape_fn((b1, b2), |(i, j)| {
        let block = g.slice(s![i * d1..(i + 1) * d1, j * d2..(j + 1) * d2]);
        match aggregation {
            LocalAggregation::NormalizedFrobenius => {
                let mut sq = 0.0;
                for row in block.rows() {
                    for &v in row {
                        sq += v * v;
                    }
                }
                sq.sqrt() / scale
            }
            LocalAggregation::MeanCosine => {
                let mut sum = 0.0;
                for row in block.rows() {
                    for &v in row {
                        sum += v;
                    }
                }
                sum / (d1 * d2) as f64
            }
        }
    })
}

/// `alpha * global + (1 - alpha) * local`.
pub fn fused_similarity(global: ArrayView2<'_, f64>, local: ArrayView2<'_, f64>, alpha: f64) -> Result<Array2<f64>> {
    if global.dim() != local.dim() {
        return Err(Error::config(format!(
            "similarity shapes differ: {:?} vs {:?}",
            global.dim(),
            local.dim()
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::config(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    let mut out = Array2::zeros(global.dim());
    Zip::from(&mut out)
        .and(&global)
        .and(&local)
        .for_each(|o, &g, &l| *o = alpha * g + (1.0 - alpha) * l);
    Ok(out)
}

/// Renders a matrix as headerless CSV, one line per image.
pub fn to_csv(matrix: ArrayView2<'_, f64>) -> String {
    let mut out = String::new();
    for row in matrix.axis_iter(Axis(0)) {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array3};
    use proptest::prelude::*;

    fn cos(a: &[f64], b: &[f64]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    }

    #[test]
    fn global_examples() {
        // The norm guard costs about 2e-12 on a unit self-match.
        let s = global_similarity(array![[1.0, 0.0]].view(), array![[1.0, 0.0]].view()).unwrap();
        assert!((s[[0, 0]] - 1.0).abs() < 1e-11);
        let s = global_similarity(array![[1.0, 0.0]].view(), array![[0.0, 3.0]].view()).unwrap();
        assert!(s[[0, 0]].abs() < 1e-12);
        let h = 2f64.sqrt() / 2.0;
        let s = global_similarity(array![[1.0, 0.0]].view(), array![[h, h]].view()).unwrap();
        assert!((s[[0, 0]] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-9);
    }

    #[test]
    fn zero_row_is_a_domain_error() {
        let r = global_similarity(array![[0.0, 0.0]].view(), array![[1.0, 0.0]].view());
        assert!(matches!(r, Err(Error::Domain(_))));
        let r = local_similarity(
            Array3::zeros((1, 1, 2)).view(),
            Array3::ones((1, 1, 2)).view(),
            LocalAggregation::default(),
        );
        assert!(matches!(r, Err(Error::Domain(_))));
    }

    #[test]
    fn local_examples() {
        // All part cosines equal to one.
        let img = Array3::from_shape_fn((1, 2, 2), |_| 1.0);
        let s = local_similarity(img.view(), img.view(), LocalAggregation::NormalizedFrobenius).unwrap();
        assert!((s[[0, 0]] - 1.0).abs() < 1e-10);
        // Orthogonal parts.
        let a = Array3::from_shape_vec((1, 1, 2), vec![1.0, 0.0]).unwrap();
        let b = Array3::from_shape_vec((1, 1, 2), vec![0.0, 1.0]).unwrap();
        let s = local_similarity(a.view(), b.view(), LocalAggregation::NormalizedFrobenius).unwrap();
        assert!(s[[0, 0]].abs() < 1e-12);
        // Identity part-cosine matrix.
        let e = Array3::from_shape_vec((1, 2, 2), vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let s = local_similarity(e.view(), e.view(), LocalAggregation::NormalizedFrobenius).unwrap();
        assert!((s[[0, 0]] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-9);
        let s = local_similarity(e.view(), e.view(), LocalAggregation::MeanCosine).unwrap();
        assert!((s[[0, 0]] - 0.5).abs() < 1e-10);
    }

    #[test]
    fn fused_examples() {
        let g = array![[0.5]];
        let l = array![[0.3]];
        assert!((fused_similarity(g.view(), l.view(), 0.9).unwrap()[[0, 0]] - 0.48).abs() < 1e-12);
        assert_eq!(fused_similarity(g.view(), l.view(), 1.0).unwrap(), g);
        assert_eq!(fused_similarity(g.view(), l.view(), 0.0).unwrap(), l);
        assert!(fused_similarity(g.view(), array![[0.1, 0.2]].view(), 0.5).is_err());
        assert!(fused_similarity(g.view(), l.view(), 1.5).is_err());
    }

    fn blocks(b: usize, d: usize, dim: usize) -> impl Strategy<Value = Array3<f64>> {
        prop::collection::vec(0.1f64..1.0, b * d * dim).prop_flat_map(move |mags| {
            prop::collection::vec(prop::bool::ANY, b * d * dim).prop_map(move |signs| {
                let v: Vec<f64> = mags
                    .iter()
                    .zip(&signs)
                    .map(|(m, s)| if *s { *m } else { -*m })
                    .collect();
                Array3::from_shape_vec((b, d, dim), v).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn matches_triple_loop_oracle(
            (img, txt) in (1usize..=4, 1usize..=3, 1usize..=3, 2usize..=5)
                .prop_flat_map(|(b, d1, d2, dim)| (blocks(b, d1, dim), blocks(b, d2, dim)))
        ) {
            let (b, d1, dim) = img.dim();
            let d2 = txt.dim().1;
            let sl = local_similarity(img.view(), txt.view(), LocalAggregation::NormalizedFrobenius).unwrap();
            let ig = img.index_axis(Axis(1), 0).to_owned();
            let tg = txt.index_axis(Axis(1), 0).to_owned();
            let sg = global_similarity(ig.view(), tg.view()).unwrap();
            for i in 0..b {
                for j in 0..b {
                    let mut sq = 0.0;
                    for p in 0..d1 {
                        for q in 0..d2 {
                            let a: Vec<f64> = (0..dim).map(|k| img[[i, p, k]]).collect();
                            let c: Vec<f64> = (0..dim).map(|k| txt[[j, q, k]]).collect();
                            sq += cos(&a, &c).powi(2);
                        }
                    }
                    let oracle = sq.sqrt() / ((d1 * d2) as f64).sqrt();
                    prop_assert!((sl[[i, j]] - oracle).abs() < 1e-10);
                    let a: Vec<f64> = (0..dim).map(|k| img[[i, 0, k]]).collect();
                    let c: Vec<f64> = (0..dim).map(|k| txt[[j, 0, k]]).collect();
                    prop_assert!((sg[[i, j]] - cos(&a, &c)).abs() < 1e-10);
                    prop_assert!(sg[[i, j]].abs() <= 1.0 + 1e-6);
                    prop_assert!(sl[[i, j]] >= 0.0);
                }
            }
        }

        #[test]
        fn global_is_scale_invariant(img in blocks(3, 1, 4), txt in blocks(3, 1, 4), c in 0.01f64..100.0) {
            let ig = img.index_axis(Axis(1), 0).to_owned();
            let tg = txt.index_axis(Axis(1), 0).to_owned();
            let a = global_similarity(ig.view(), tg.view()).unwrap();
            let b = global_similarity((&ig * c).view(), tg.view()).unwrap();
            for (x, y) in a.iter().zip(b.iter()) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn local_swaps_roles_by_transposition(img in blocks(3, 2, 3), txt in blocks(2, 3, 3)) {
            let ab = local_similarity(img.view(), txt.view(), LocalAggregation::NormalizedFrobenius).unwrap();
            let ba = local_similarity(txt.view(), img.view(), LocalAggregation::NormalizedFrobenius).unwrap();
            for i in 0..3 {
                for j in 0..2 {
                    prop_assert!((ab[[i, j]] - ba[[j, i]]).abs() < 1e-12);
                }
            }
        }
    }
}
