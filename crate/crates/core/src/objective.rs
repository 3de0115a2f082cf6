//! The overall training objective `L_S1 + λ1·L_S2 + λ2·L_soft` and its
//! ablation variants.
//!
//! Each step is split in two. [`assess`] looks at the current similarities,
//! partitions the batch and fixes the per-pair weights, the triplet margins
//! and the mined hard negatives. [`evaluate`] then computes the objective and
//! its gradient with respect to the similarity matrices with all of that held
//! constant.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hyper::Hyper;
use crate::losses::{fixed_margin_triplet_loss, infonce_backward, robust_triplet_loss, PerPairLoss, RtlResult};
use crate::selfpaced::{partition, regularizer, Bucket, Partition, SplWeights};
use crate::similarity::LocalAggregation;

/// Objective variants: the full method and the component ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Full,
    /// #1: no local contrastive term anywhere.
    NoLocal,
    /// #2: every pair weighted 1, no regularizer.
    NoSpl,
    /// #3: no robust triplet term.
    NoRtl,
    /// #4: #1, #2 and #3 together: plain global InfoNCE.
    NoneOfThree,
    /// #5: weights `1 - cos(π/2·ℓ/γ)`, favouring hard pairs.
    SplHardToEasy,
    /// #6: weights drawn uniformly from `[0, 1)`.
    SplRandomWeights,
    /// #7: ambiguous pairs are treated as noisy (single threshold γ1).
    SplNoAmbiguous,
    /// #8: triplet margins fixed at σ.
    FixedMarginRtl,
}

impl Variant {
    pub const ALL: [Variant; 9] = [
        Variant::NoLocal,
        Variant::NoSpl,
        Variant::NoRtl,
        Variant::NoneOfThree,
        Variant::SplHardToEasy,
        Variant::SplRandomWeights,
        Variant::SplNoAmbiguous,
        Variant::FixedMarginRtl,
        Variant::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoLocal => "no_local",
            Variant::NoSpl => "no_spl",
            Variant::NoRtl => "no_rtl",
            Variant::NoneOfThree => "none_of_three",
            Variant::SplHardToEasy => "spl_hard_to_easy",
            Variant::SplRandomWeights => "spl_random_weights",
            Variant::SplNoAmbiguous => "spl_no_ambiguous",
            Variant::FixedMarginRtl => "fixed_margin_rtl",
        }
    }

    /// Table label: `#1` .. `#8`, or `full`.
    pub fn label(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoLocal => "#1",
            Variant::NoSpl => "#2",
            Variant::NoRtl => "#3",
            Variant::NoneOfThree => "#4",
            Variant::SplHardToEasy => "#5",
            Variant::SplRandomWeights => "#6",
            Variant::SplNoAmbiguous => "#7",
            Variant::FixedMarginRtl => "#8",
        }
    }

    pub fn uses_local(self) -> bool {
        !matches!(self, Variant::NoLocal | Variant::NoneOfThree)
    }

    /// Fusion weight at inference. Variants without the local branch rank by
    /// global similarity alone.
    pub fn inference_alpha(self, alpha: f64) -> f64 {
        if self.uses_local() {
            alpha
        } else {
            1.0
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s || v.label() == s || v.label().strip_prefix('#').is_some_and(|n| n == s))
            .ok_or_else(|| Error::config(format!("unknown variant `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    SelfPaced,
    Uniform,
    HardToEasy,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarginMode {
    Adaptive,
    Fixed,
}

/// Which anchors the triplet term sums over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RtlScope {
    #[default]
    FullBatch,
    NoisyOnly,
}

impl FromStr for RtlScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full_batch" | "full" => Ok(RtlScope::FullBatch),
            "noisy_only" | "noisy" => Ok(RtlScope::NoisyOnly),
            other => Err(Error::config(format!("unknown triplet scope `{other}`"))),
        }
    }
}

/// Which pairs `L_S1` and `L_S2` sum over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BucketMode {
    /// `L_S1` over the clean bucket with γ1, `L_S2` over the ambiguous bucket
    /// with γ2; every pair lands in at most one term.
    #[default]
    Restricted,
    /// Both terms sum over every pair, each with its own threshold.
    Unrestricted,
}

impl FromStr for BucketMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "restricted" => Ok(BucketMode::Restricted),
            "unrestricted" => Ok(BucketMode::Unrestricted),
            other => Err(Error::config(format!("unknown bucket mode `{other}`"))),
        }
    }
}

/// Interpretation switches that are not part of [`Hyper`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ObjectiveOptions {
    pub local_aggregation: LocalAggregation,
    pub rtl_scope: RtlScope,
    pub bucket_mode: BucketMode,
}

/// Fully resolved objective: hyperparameters plus variant substitutions.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveConfig {
    pub tau: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub sigma: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub use_local: bool,
    pub weighting: Weighting,
    pub ambiguous_bucket: bool,
    pub margin: MarginMode,
    pub rtl_scope: RtlScope,
    pub bucket_mode: BucketMode,
    pub aggregation: LocalAggregation,
}

impl ObjectiveConfig {
    pub fn new(hyper: &Hyper, variant: Variant, options: ObjectiveOptions) -> Self {
        let no_spl = matches!(variant, Variant::NoSpl | Variant::NoneOfThree);
        let no_rtl = matches!(variant, Variant::NoRtl | Variant::NoneOfThree);
        Self {
            tau: hyper.tau,
            gamma1: hyper.gamma1,
            gamma2: hyper.gamma2,
            sigma: hyper.sigma,
            lambda1: hyper.lambda1,
            lambda2: if no_rtl { 0.0 } else { hyper.lambda2 },
            use_local: variant.uses_local(),
            weighting: match variant {
                _ if no_spl => Weighting::Uniform,
                Variant::SplHardToEasy => Weighting::HardToEasy,
                Variant::SplRandomWeights => Weighting::Random,
                _ => Weighting::SelfPaced,
            },
            ambiguous_bucket: variant != Variant::SplNoAmbiguous,
            margin: if variant == Variant::FixedMarginRtl {
                MarginMode::Fixed
            } else {
                MarginMode::Adaptive
            },
            rtl_scope: options.rtl_scope,
            bucket_mode: options.bucket_mode,
            aggregation: options.local_aggregation,
        }
    }

    /// Weight of a pair with loss `loss` under threshold `gamma`. The
    /// hard-to-easy complement gives pairs past the threshold full weight.
    fn weight(&self, loss: f64, gamma: f64, rng: &mut impl Rng) -> f64 {
        if loss >= gamma {
            return if self.weighting == Weighting::HardToEasy {
                1.0
            } else {
                0.0
            };
        }
        match self.weighting {
            Weighting::SelfPaced => (FRAC_PI_2 * loss / gamma).cos(),
            Weighting::HardToEasy => 1.0 - (FRAC_PI_2 * loss / gamma).cos(),
            Weighting::Random => rng.random::<f64>(),
            Weighting::Uniform => 1.0,
        }
    }
}

/// Everything the weight step fixes for the parameter step.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenState {
    /// Per-pair losses the partition and weights were computed from.
    pub losses: PerPairLoss,
    pub partition: Partition,
    pub weights: SplWeights,
    pub triplet: RtlResult,
    s1_coeff: Vec<f64>,
    s2_coeff: Vec<f64>,
    s1_reg: f64,
    s2_reg: f64,
    rtl_mask: Option<Vec<bool>>,
}

impl FrozenState {
    /// `∂L_overall/∂ℓ_i` with weights frozen.
    pub fn loss_coefficients(&self, lambda1: f64) -> Vec<f64> {
        self.s1_coeff
            .iter()
            .zip(&self.s2_coeff)
            .map(|(a, b)| a + lambda1 * b)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ObjectiveParts {
    pub overall: f64,
    pub s1: f64,
    pub s2: f64,
    pub soft: f64,
}

/// Weight step: partition the batch by per-pair loss and fix weights,
/// margins and hard negatives.
pub fn assess(
    sg: ArrayView2<'_, f64>,
    sl: Option<ArrayView2<'_, f64>>,
    cfg: &ObjectiveConfig,
    rng: &mut impl Rng,
) -> Result<FrozenState> {
    let sl = if cfg.use_local { sl } else { None };
    if cfg.use_local && sl.is_none() {
        return Err(Error::Internal("objective needs local similarities".into()));
    }
    let losses = PerPairLoss::compute(sg, sl, cfg.tau)?;
    let b = losses.total.len();
    let inv_b = 1.0 / b as f64;
    let ell = losses.total.as_slice().expect("contiguous");

    let mut part = partition(ell, cfg.gamma1, cfg.gamma2)?;
    if !cfg.ambiguous_bucket {
        part = part.without_ambiguous();
    }

    let mut weights = SplWeights::zeros(b);
    let mut s1_coeff = vec![0.0; b];
    let mut s2_coeff = vec![0.0; b];
    let (mut s1_reg, mut s2_reg) = (0.0, 0.0);

    if cfg.weighting == Weighting::Uniform {
        weights.w.fill(1.0);
        s1_coeff.fill(inv_b);
    } else {
        for (i, &l) in ell.iter().enumerate() {
            let bucket = part.bucket(i);
            match cfg.bucket_mode {
                BucketMode::Restricted => match bucket {
                    Bucket::Clean => {
                        let w = cfg.weight(l, cfg.gamma1, rng);
                        weights.w[i] = w;
                        weights.gamma_used[i] = Some(cfg.gamma1);
                        s1_coeff[i] = w * inv_b;
                        s1_reg += regularizer(w, cfg.gamma1, l)? * inv_b;
                    }
                    Bucket::Ambiguous => {
                        let w = cfg.weight(l, cfg.gamma2, rng);
                        weights.w[i] = w;
                        weights.gamma_used[i] = Some(cfg.gamma2);
                        s2_coeff[i] = w * inv_b;
                        s2_reg += regularizer(w, cfg.gamma2, l)? * inv_b;
                    }
                    Bucket::Noisy if cfg.weighting == Weighting::HardToEasy => {
                        // The inverted curriculum admits the hardest pairs
                        // at full weight through the outermost threshold.
                        let (gamma, coeff) = if cfg.ambiguous_bucket {
                            (cfg.gamma2, &mut s2_coeff)
                        } else {
                            (cfg.gamma1, &mut s1_coeff)
                        };
                        weights.w[i] = 1.0;
                        weights.gamma_used[i] = Some(gamma);
                        coeff[i] = inv_b;
                    }
                    Bucket::Noisy => {}
                },
                BucketMode::Unrestricted => {
                    let w1 = cfg.weight(l, cfg.gamma1, rng);
                    s1_coeff[i] = w1 * inv_b;
                    s1_reg += regularizer(w1, cfg.gamma1, l)? * inv_b;
                    if cfg.ambiguous_bucket {
                        let w2 = cfg.weight(l, cfg.gamma2, rng);
                        s2_coeff[i] = w2 * inv_b;
                        s2_reg += regularizer(w2, cfg.gamma2, l)? * inv_b;
                        if bucket == Bucket::Ambiguous {
                            weights.w[i] = w2;
                            weights.gamma_used[i] = Some(cfg.gamma2);
                        }
                    }
                    if bucket == Bucket::Clean {
                        weights.w[i] = w1;
                        weights.gamma_used[i] = Some(cfg.gamma1);
                    }
                }
            }
        }
    }

    let triplet = match cfg.margin {
        MarginMode::Adaptive => robust_triplet_loss(sg, cfg.sigma)?,
        MarginMode::Fixed => fixed_margin_triplet_loss(sg, cfg.sigma)?,
    };
    let rtl_mask = match cfg.rtl_scope {
        RtlScope::FullBatch => None,
        RtlScope::NoisyOnly => Some(part.assignment().iter().map(|&b| b == Bucket::Noisy).collect()),
    };

    Ok(FrozenState {
        losses,
        partition: part,
        weights,
        triplet,
        s1_coeff,
        s2_coeff,
        s1_reg,
        s2_reg,
        rtl_mask,
    })
}

/// Gradients of the overall objective with respect to the similarity
/// matrices; `local` is `None` when the configuration has no local term.
#[derive(Debug, Clone)]
pub struct SimilarityGrads {
    pub global: Array2<f64>,
    pub local: Option<Array2<f64>>,
}

/// Parameter step: the objective at `sg`/`sl` under a frozen weight step.
pub fn evaluate(
    sg: ArrayView2<'_, f64>,
    sl: Option<ArrayView2<'_, f64>>,
    cfg: &ObjectiveConfig,
    frozen: &FrozenState,
    want_grad: bool,
) -> Result<(ObjectiveParts, Option<SimilarityGrads>)> {
    let sl = if cfg.use_local { sl } else { None };
    let per = PerPairLoss::compute(sg, sl, cfg.tau)?;
    if per.total.len() != frozen.s1_coeff.len() {
        return Err(Error::Internal("frozen state belongs to a different batch".into()));
    }
    let dot = |c: &[f64]| per.total.iter().zip(c).map(|(l, c)| l * c).sum::<f64>();
    let s1 = dot(&frozen.s1_coeff) + frozen.s1_reg;
    let s2 = dot(&frozen.s2_coeff) + frozen.s2_reg;
    let mask = frozen.rtl_mask.as_deref();
    let soft = frozen.triplet.loss_at(sg, mask);
    let overall = s1 + cfg.lambda1 * s2 + cfg.lambda2 * soft;

    for (name, v) in [("L_S1", s1), ("L_S2", s2), ("L_soft", soft)] {
        if !v.is_finite() {
            return Err(Error::Numeric(format!("{name} is {v}")));
        }
    }
    let parts = ObjectiveParts { overall, s1, s2, soft };
    if !want_grad {
        return Ok((parts, None));
    }

    let coeffs = frozen.loss_coefficients(cfg.lambda1);
    let mut global = infonce_backward(sg, cfg.tau, &coeffs)?;
    if cfg.lambda2 != 0.0 {
        global += &frozen.triplet.backward(sg, mask, cfg.lambda2);
    }
    let local = match sl {
        Some(sl) => Some(infonce_backward(sl, cfg.tau, &coeffs)?),
        None => None,
    };
    Ok((parts, Some(SimilarityGrads { global, local })))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(variant: Variant) -> ObjectiveConfig {
        ObjectiveConfig::new(&Hyper::default(), variant, ObjectiveOptions::default())
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0)
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
            assert_eq!(v.label().parse::<Variant>().unwrap(), v);
        }
        assert_eq!("5".parse::<Variant>().unwrap(), Variant::SplHardToEasy);
        assert!("#9".parse::<Variant>().is_err());
    }

    #[test]
    fn zero_balancing_factors_leave_only_s1() {
        let h = Hyper {
            lambda1: 0.0,
            lambda2: 0.0,
            tau: 1.0,
            ..Hyper::default()
        };
        let c = ObjectiveConfig::new(&h, Variant::Full, ObjectiveOptions::default());
        let sg = array![[0.9, 0.1, 0.0], [0.2, 0.8, 0.1], [0.0, 0.3, 0.7]];
        let sl = array![[0.5, 0.2, 0.1], [0.1, 0.6, 0.2], [0.3, 0.1, 0.4]];
        let f = assess(sg.view(), Some(sl.view()), &c, &mut rng()).unwrap();
        let (p, _) = evaluate(sg.view(), Some(sl.view()), &c, &f, false).unwrap();
        assert_eq!(p.overall, p.s1);
    }

    #[test]
    fn all_noisy_batch_is_pure_triplet() {
        // Low temperature and a reversed diagonal push every loss past γ2.
        let h = Hyper {
            tau: 0.01,
            ..Hyper::default()
        };
        let c = ObjectiveConfig::new(&h, Variant::Full, ObjectiveOptions::default());
        let sg = array![[-0.5, 0.9], [0.9, -0.5]];
        let f = assess(sg.view(), Some(sg.view()), &c, &mut rng()).unwrap();
        assert_eq!(f.partition.noisy_idx, vec![0, 1]);
        let (p, g) = evaluate(sg.view(), Some(sg.view()), &c, &f, true).unwrap();
        assert_eq!((p.s1, p.s2), (0.0, 0.0));
        assert!((p.overall - h.lambda2 * p.soft).abs() < 1e-12);
        assert!(g.unwrap().local.unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn no_spl_weights_everything_one() {
        let c = cfg(Variant::NoSpl);
        let sg = array![[-0.5, 0.9], [0.9, -0.5]];
        let f = assess(sg.view(), Some(sg.view()), &c, &mut rng()).unwrap();
        assert_eq!(f.weights.w, vec![1.0, 1.0]);
        let (p, _) = evaluate(sg.view(), Some(sg.view()), &c, &f, false).unwrap();
        assert!((p.s1 - f.losses.total.mean().unwrap()).abs() < 1e-12);
    }

    #[test]
    fn fixed_margin_differs_only_in_margins() {
        let sg = array![[0.2, 0.5, 0.1], [0.3, 0.6, 0.2], [0.4, 0.1, 0.3]];
        let sl = array![[0.5, 0.2, 0.1], [0.1, 0.6, 0.2], [0.3, 0.1, 0.4]];
        let full = assess(sg.view(), Some(sl.view()), &cfg(Variant::Full), &mut rng()).unwrap();
        let fixed = assess(sg.view(), Some(sl.view()), &cfg(Variant::FixedMarginRtl), &mut rng()).unwrap();
        assert_eq!(full.partition, fixed.partition);
        assert_eq!(full.weights, fixed.weights);
        assert_eq!(full.triplet.hard_txt_idx, fixed.triplet.hard_txt_idx);
        assert_eq!(full.triplet.hard_img_idx, fixed.triplet.hard_img_idx);
        assert!(fixed.triplet.mu_hat.iter().all(|&m| m == 0.6));
        assert_ne!(full.triplet.mu_hat, fixed.triplet.mu_hat);
    }

    #[test]
    fn no_ambiguous_variant_has_single_threshold() {
        let h = Hyper {
            tau: 0.2,
            ..Hyper::default()
        };
        let c = ObjectiveConfig::new(&h, Variant::SplNoAmbiguous, ObjectiveOptions::default());
        let sg = array![[0.9, 0.1, 0.0], [0.8, 0.1, 0.1], [0.0, 0.3, 0.7]];
        let f = assess(sg.view(), Some(sg.view()), &c, &mut rng()).unwrap();
        assert!(f.partition.ambiguous_idx.is_empty());
        for i in 0..3 {
            let l = f.losses.total[i];
            assert_eq!(f.partition.bucket(i) == Bucket::Clean, l < h.gamma1);
        }
    }

    #[test]
    fn hard_to_easy_inverts_weights() {
        let h = Hyper {
            tau: 0.5,
            ..Hyper::default()
        };
        let c = ObjectiveConfig::new(&h, Variant::SplHardToEasy, ObjectiveOptions::default());
        let sg = array![[0.9, 0.1], [0.2, 0.8]];
        let f = assess(sg.view(), Some(sg.view()), &c, &mut rng()).unwrap();
        for i in 0..2 {
            let l = f.losses.total[i];
            assert!(l < h.gamma1);
            let expected = 1.0 - (FRAC_PI_2 * l / h.gamma1).cos();
            assert!((f.weights.w[i] - expected).abs() < 1e-12);
        }
        // Past γ2 the complement of the closed form is 1.
        let h = Hyper {
            tau: 0.05,
            ..Hyper::default()
        };
        let c = ObjectiveConfig::new(&h, Variant::SplHardToEasy, ObjectiveOptions::default());
        let sg = array![[0.0, 0.9], [0.9, 0.0]];
        let f = assess(sg.view(), Some(sg.view()), &c, &mut rng()).unwrap();
        assert_eq!(f.partition.noisy_idx, vec![0, 1]);
        assert_eq!(f.weights.w, vec![1.0, 1.0]);
        let (p, _) = evaluate(sg.view(), Some(sg.view()), &c, &f, false).unwrap();
        let mean = f.losses.total.iter().sum::<f64>() / 2.0;
        assert!((p.s2 - mean).abs() < 1e-12);
        assert_eq!(p.s1, 0.0);
    }

    #[test]
    fn noisy_only_scope_masks_clean_anchors() {
        let h = Hyper {
            tau: 0.5,
            ..Hyper::default()
        };
        let opts = ObjectiveOptions {
            rtl_scope: RtlScope::NoisyOnly,
            ..ObjectiveOptions::default()
        };
        let c = ObjectiveConfig::new(&h, Variant::Full, opts);
        let sg = array![[0.2, 0.5], [0.5, 0.2]];
        let f = assess(sg.view(), Some(sg.view()), &c, &mut rng()).unwrap();
        assert!(f.partition.noisy_idx.is_empty());
        let (p, _) = evaluate(sg.view(), Some(sg.view()), &c, &f, false).unwrap();
        assert_eq!(p.soft, 0.0);
    }
}
