//! Retrieval metrics over fused similarities and noisy-pair detection
//! metrics against injected ground truth.

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::hyper::Hyper;
use crate::selfpaced::Bucket;
use crate::similarity::{fused_similarity, local_from_unit_rows, LocalAggregation};
use crate::trainer::{project_rows, ProjectionHeads, TraceRow};

pub const RECALL_KS: [usize; 3] = [1, 5, 10];

/// 0-based rank of each query's ground-truth item: the number of items that
/// score higher, plus equal-scoring items with a smaller index.
pub fn ground_truth_ranks(s: ArrayView2<'_, f64>, gt: &[usize]) -> Result<Vec<usize>> {
    let (nq, ng) = s.dim();
    if gt.len() != nq {
        return Err(Error::config(format!(
            "{} ground-truth indices for {nq} queries",
            gt.len()
        )));
    }
    if let Some(q) = gt.iter().position(|&g| g >= ng) {
        return Err(Error::config(format!(
            "query {q}: ground truth {} out of {ng} items",
            gt[q]
        )));
    }
    if s.iter().any(|v| v.is_nan()) {
        return Err(Error::Numeric("similarity matrix contains NaN".into()));
    }
    Ok((0..nq)
        .into_par_iter()
        .map(|q| {
            let row = s.row(q);
            let target = row[gt[q]];
            row.iter()
                .enumerate()
                .filter(|&(j, &v)| v > target || (v == target && j < gt[q]))
                .count()
        })
        .collect())
}

/// Percentage of queries whose ground-truth item is among the top `k`.
pub fn recall_at_k(s: ArrayView2<'_, f64>, gt: &[usize], k: usize) -> Result<f64> {
    check_k(k, s.ncols())?;
    Ok(recall_from_ranks(&ground_truth_ranks(s, gt)?, k))
}

fn check_k(k: usize, ng: usize) -> Result<()> {
    if k == 0 || k > ng {
        return Err(Error::config(format!("k must lie in 1..={ng}, got {k}")));
    }
    Ok(())
}

fn recall_from_ranks(ranks: &[usize], k: usize) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    100.0 * ranks.iter().filter(|&&r| r < k).count() as f64 / ranks.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub i2t_r1: f64,
    pub i2t_r5: f64,
    pub i2t_r10: f64,
    pub t2i_r1: f64,
    pub t2i_r5: f64,
    pub t2i_r10: f64,
    pub mr: f64,
}

impl RetrievalReport {
    pub const CSV_HEADER: &'static str = "i2t_r1,i2t_r5,i2t_r10,t2i_r1,t2i_r5,t2i_r10,mr";

    pub fn recalls(&self) -> [f64; 6] {
        [
            self.i2t_r1,
            self.i2t_r5,
            self.i2t_r10,
            self.t2i_r1,
            self.t2i_r5,
            self.t2i_r10,
        ]
    }

    pub fn csv_row(&self) -> String {
        let mut cells: Vec<String> = self.recalls().iter().map(|v| format!("{v:.4}")).collect();
        cells.push(format!("{:.4}", self.mr));
        cells.join(",")
    }
}

/// Both retrieval directions over a square matrix whose diagonal holds the
/// matching pairs (rows are images).
pub fn retrieval_report(sf: ArrayView2<'_, f64>) -> Result<RetrievalReport> {
    let (n, m) = sf.dim();
    if n != m {
        return Err(Error::config(format!("retrieval needs a square matrix, got {n}x{m}")));
    }
    check_k(RECALL_KS[2], n)?;
    let gt: Vec<usize> = (0..n).collect();
    let i2t = ground_truth_ranks(sf, &gt)?;
    let t2i = ground_truth_ranks(sf.t(), &gt)?;
    let [i1, i5, i10] = RECALL_KS.map(|k| recall_from_ranks(&i2t, k));
    let [t1, t5, t10] = RECALL_KS.map(|k| recall_from_ranks(&t2i, k));
    Ok(RetrievalReport {
        i2t_r1: i1,
        i2t_r5: i5,
        i2t_r10: i10,
        t2i_r1: t1,
        t2i_r5: t5,
        t2i_r10: t10,
        mr: (i1 + i5 + i10 + t1 + t5 + t10) / 6.0,
    })
}

/// Fused similarity of a whole dataset under the heads.
pub fn dataset_similarity(
    heads: &ProjectionHeads,
    ds: &Dataset,
    alpha: f64,
    aggregation: LocalAggregation,
) -> Result<Array2<f64>> {
    if ds.dim() != heads.dim_in() {
        return Err(Error::config(format!(
            "heads expect width {}, dataset has {}",
            heads.dim_in(),
            ds.dim()
        )));
    }
    let (n, dim, d1, d2) = (ds.n_pairs(), ds.dim(), ds.d1(), ds.d2());
    let widen = |a: ArrayView2<'_, f32>| a.mapv(f64::from);
    let img_g = project_rows(heads, true, widen(ds.image_global()).view());
    let txt_g = project_rows(heads, false, widen(ds.text_global()).view());
    let sg = img_g.dot(&txt_g.t());
    if alpha == 1.0 {
        return Ok(sg);
    }
    let flat = |a: ndarray::ArrayView3<'_, f32>, d: usize| {
        a.mapv(f64::from)
            .into_shape_with_order((n * d, dim))
            .expect("owned standard layout")
    };
    let img_l = project_rows(heads, true, flat(ds.image_local(), d1).view());
    let txt_l = project_rows(heads, false, flat(ds.text_local(), d2).view());
    let sl = local_from_unit_rows(img_l.view(), txt_l.view(), n, d1, d2, aggregation);
    fused_similarity(sg.view(), sl.view(), alpha)
}

/// Retrieval report on a clean test set with `alpha` from `hyper`.
pub fn evaluate(heads: &ProjectionHeads, test: &Dataset, hyper: &Hyper) -> Result<RetrievalReport> {
    evaluate_with(heads, test, hyper.alpha, LocalAggregation::default())
}

pub fn evaluate_with(
    heads: &ProjectionHeads,
    test: &Dataset,
    alpha: f64,
    aggregation: LocalAggregation,
) -> Result<RetrievalReport> {
    let noisy = test.noisy_count();
    if noisy > 0 {
        return Err(Error::Data(format!(
            "evaluation needs clean pairs, test set has {noisy} with y = 0"
        )));
    }
    let sf = dataset_similarity(heads, test, alpha, aggregation)?;
    retrieval_report(sf.view())
}

/// Noisy-bucket membership scored as a prediction of `y = 0`.
///
/// Conventions: an empty noisy bucket has precision 1; without any `y = 0`
/// pair recall is 1 and `has_ground_truth_noise` is false. Bucket purity is
/// the share of `y = 1` pairs in the clean and ambiguous buckets and of
/// `y = 0` pairs in the noisy bucket, `None` for an empty bucket.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positives: usize,
    pub predicted_noisy: usize,
    pub actual_noisy: usize,
    pub clean_purity: Option<f64>,
    pub ambiguous_purity: Option<f64>,
    pub noisy_purity: Option<f64>,
    pub has_ground_truth_noise: bool,
}

pub fn detection_metrics(buckets: &[Bucket], y: &[u8]) -> Result<DetectionReport> {
    if buckets.len() != y.len() {
        return Err(Error::Internal(format!(
            "{} bucket labels for {} pairs",
            buckets.len(),
            y.len()
        )));
    }
    // [bucket][y]
    let mut counts = [[0usize; 2]; 3];
    for (&b, &yi) in buckets.iter().zip(y) {
        counts[b as usize][usize::from(yi != 0)] += 1;
    }
    let share = |b: Bucket, label: usize| {
        let c = counts[b as usize];
        let total = c[0] + c[1];
        (total > 0).then(|| c[label] as f64 / total as f64)
    };
    let tp = counts[Bucket::Noisy as usize][0];
    let predicted = tp + counts[Bucket::Noisy as usize][1];
    let actual = y.iter().filter(|&&v| v == 0).count();
    let precision = if predicted == 0 {
        1.0
    } else {
        tp as f64 / predicted as f64
    };
    let recall = if actual == 0 { 1.0 } else { tp as f64 / actual as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(DetectionReport {
        precision,
        recall,
        f1,
        true_positives: tp,
        predicted_noisy: predicted,
        actual_noisy: actual,
        clean_purity: share(Bucket::Clean, 1),
        ambiguous_purity: share(Bucket::Ambiguous, 1),
        noisy_purity: share(Bucket::Noisy, 0),
        has_ground_truth_noise: actual > 0,
    })
}

/// [`detection_metrics`] over the rows of a weight trace.
pub fn detection_from_trace(rows: &[TraceRow]) -> DetectionReport {
    let buckets: Vec<Bucket> = rows.iter().map(|r| r.bucket).collect();
    let y: Vec<u8> = rows.iter().map(|r| r.y).collect();
    detection_metrics(&buckets, &y).expect("equal lengths")
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    /// Full stable sort by descending score; equal scores keep index order.
    fn sort_oracle(s: &Array2<f64>, gt: &[usize], k: usize) -> f64 {
        let mut hits = 0;
        for (q, row) in s.rows().into_iter().enumerate() {
            let mut order: Vec<usize> = (0..row.len()).collect();
            order.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap());
            if order[..k].contains(&gt[q]) {
                hits += 1;
            }
        }
        100.0 * hits as f64 / s.nrows() as f64
    }

    #[test]
    fn hand_ranked_three_by_three() {
        let s = array![[0.9, 0.8, 0.1], [0.2, 0.3, 0.9], [0.5, 0.4, 0.6]];
        let r1 = recall_at_k(s.view(), &[0, 1, 2], 1).unwrap();
        assert!((r1 - 200.0 / 3.0).abs() < 1e-12);
        assert_eq!(recall_at_k(s.view(), &[0, 1, 2], 3).unwrap(), 100.0);
    }

    #[test]
    fn ties_go_to_the_lower_index() {
        let s = array![[0.5, 0.5], [0.5, 0.5]];
        assert_eq!(ground_truth_ranks(s.view(), &[0, 1]).unwrap(), vec![0, 1]);
        assert_eq!(recall_at_k(s.view(), &[0, 1], 1).unwrap(), 50.0);
    }

    #[test]
    fn k_outside_range_is_config_error() {
        let s = Array2::<f64>::eye(3);
        assert!(matches!(recall_at_k(s.view(), &[0, 1, 2], 4), Err(Error::Config(_))));
        assert!(matches!(recall_at_k(s.view(), &[0, 1, 2], 0), Err(Error::Config(_))));
        assert!(matches!(retrieval_report(s.view()), Err(Error::Config(_))));
    }

    #[test]
    fn dominant_diagonal_is_perfect() {
        let s = Array2::<f64>::eye(12);
        let r = retrieval_report(s.view()).unwrap();
        assert_eq!(r.recalls(), [100.0; 6]);
        assert_eq!(r.mr, 100.0);
    }

    #[test]
    fn detection_conventions() {
        use Bucket::*;
        let perfect = detection_metrics(&[Clean, Noisy, Ambiguous, Noisy], &[1, 0, 1, 0]).unwrap();
        assert_eq!((perfect.precision, perfect.recall, perfect.f1), (1.0, 1.0, 1.0));
        assert_eq!(perfect.ambiguous_purity, Some(1.0));

        let empty = detection_metrics(&[Clean, Clean], &[0, 1]).unwrap();
        assert_eq!((empty.precision, empty.recall), (1.0, 0.0));
        assert_eq!(empty.noisy_purity, None);

        let none = detection_metrics(&[Clean, Clean], &[1, 1]).unwrap();
        assert!(!none.has_ground_truth_noise);

        assert!(matches!(detection_metrics(&[Clean], &[1, 1]), Err(Error::Internal(_))));
    }

    proptest! {
        #[test]
        fn matches_full_sort_oracle(
            (s, gt) in (2usize..=20).prop_flat_map(|n| (
                proptest::collection::vec(0i32..6, n * n)
                    .prop_map(move |v| Array2::from_shape_vec((n, n), v.into_iter().map(f64::from).collect()).unwrap()),
                proptest::collection::vec(0..n, n),
            )),
            k_frac in 0.0f64..1.0,
        ) {
            let n = s.ncols();
            let k = 1 + ((n - 1) as f64 * k_frac) as usize;
            prop_assert_eq!(recall_at_k(s.view(), &gt, k).unwrap(), sort_oracle(&s, &gt, k));
        }

        #[test]
        fn recall_non_decreasing_in_k(v in proptest::collection::vec(-1.0f64..1.0, 144)) {
            let s = Array2::from_shape_vec((12, 12), v).unwrap();
            let r = retrieval_report(s.view()).unwrap();
            prop_assert!(r.i2t_r1 <= r.i2t_r5 && r.i2t_r5 <= r.i2t_r10);
            prop_assert!(r.t2i_r1 <= r.t2i_r5 && r.t2i_r5 <= r.t2i_r10);
            prop_assert!((r.mr - r.recalls().iter().sum::<f64>() / 6.0).abs() < 1e-12);
        }
    }
}
