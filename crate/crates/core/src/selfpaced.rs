//! Loss-based clean/ambiguous/noisy partitioning and self-paced weights.
//!
//! The regularizer `R(w, γ) = -(2/π)·γ·[w·arccos(w) - sqrt(1 - w²)]` makes
//! `w·ℓ + R(w, γ)` minimized at `w* = cos(π/2 · ℓ/γ)` for `ℓ < γ`; pairs at or
//! above the threshold get weight zero.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bucket {
    Clean,
    Ambiguous,
    Noisy,
}

impl Bucket {
    pub fn as_str(self) -> &'static str {
        match self {
            Bucket::Clean => "clean",
            Bucket::Ambiguous => "ambiguous",
            Bucket::Noisy => "noisy",
        }
    }
}

impl std::fmt::Display for Bucket {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Disjoint split of a batch by per-pair loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub clean_idx: Vec<usize>,
    pub ambiguous_idx: Vec<usize>,
    pub noisy_idx: Vec<usize>,
    pub gamma1: f64,
    pub gamma2: f64,
    assignment: Vec<Bucket>,
}

impl Partition {
    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn bucket(&self, i: usize) -> Bucket {
        self.assignment[i]
    }

    pub fn assignment(&self) -> &[Bucket] {
        &self.assignment
    }

    /// Reassigns every ambiguous pair to the noisy bucket.
    pub fn without_ambiguous(mut self) -> Self {
        for &i in &self.ambiguous_idx {
            self.assignment[i] = Bucket::Noisy;
        }
        self.noisy_idx.append(&mut self.ambiguous_idx);
        self.noisy_idx.sort_unstable();
        self
    }

    fn from_assignment(assignment: Vec<Bucket>, gamma1: f64, gamma2: f64) -> Self {
        let pick = |b: Bucket| {
            assignment
                .iter()
                .enumerate()
                .filter(|(_, &a)| a == b)
                .map(|(i, _)| i)
                .collect()
        };
        Self {
            clean_idx: pick(Bucket::Clean),
            ambiguous_idx: pick(Bucket::Ambiguous),
            noisy_idx: pick(Bucket::Noisy),
            gamma1,
            gamma2,
            assignment,
        }
    }
}

pub fn check_thresholds(gamma1: f64, gamma2: f64) -> Result<()> {
    if gamma1 > 0.0 && gamma1 < gamma2 && gamma2.is_finite() {
        Ok(())
    } else {
        Err(Error::config(format!(
            "thresholds must satisfy 0 < gamma1 < gamma2, got {gamma1}, {gamma2}"
        )))
    }
}

/// `ℓ < γ1` clean, `γ1 ≤ ℓ < γ2` ambiguous, `ℓ ≥ γ2` noisy.
pub fn partition(losses: &[f64], gamma1: f64, gamma2: f64) -> Result<Partition> {
    check_thresholds(gamma1, gamma2)?;
    let assignment = losses
        .iter()
        .map(|&l| {
            if l < gamma1 {
                Bucket::Clean
            } else if l < gamma2 {
                Bucket::Ambiguous
            } else {
                Bucket::Noisy
            }
        })
        .collect();
    Ok(Partition::from_assignment(assignment, gamma1, gamma2))
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(Error::config(format!("pace parameter must be > 0, got {gamma}")))
    }
}

/// Self-paced regularizer; zero once the loss reaches the pace threshold.
pub fn regularizer(w: f64, gamma: f64, loss: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::Domain(format!("weight must lie in [0, 1], got {w}")));
    }
    check_gamma(gamma)?;
    if loss < gamma {
        Ok(regularizer_active(w, gamma))
    } else {
        Ok(0.0)
    }
}

/// The `ℓ < γ` branch of the regularizer.
pub(crate) fn regularizer_active(w: f64, gamma: f64) -> f64 {
    -(2.0 / PI) * gamma * (w * w.acos() - (1.0 - w * w).max(0.0).sqrt())
}

/// Closed-form minimizer of `w·ℓ + R(w, γ)` over `[0, 1]`.
pub fn optimal_weight(loss: f64, gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    if loss.is_nan() || loss < 0.0 {
        return Err(Error::Domain(format!("loss must be >= 0, got {loss}")));
    }
    Ok(if loss < gamma {
        (FRAC_PI_2 * loss / gamma).cos()
    } else {
        0.0
    })
}

/// Grid search for the minimizer of `w·ℓ + R(w, γ)` on `grid_steps + 1`
/// evenly spaced weights. Independent of [`optimal_weight`]; used to check it.
pub fn optimal_weight_oracle(loss: f64, gamma: f64, grid_steps: usize) -> f64 {
    assert!(grid_steps >= 1000, "grid needs at least 1000 steps");
    if loss >= gamma {
        return 0.0;
    }
    let mut best_w = 0.0;
    let mut best = f64::INFINITY;
    for k in 0..=grid_steps {
        let w = k as f64 / grid_steps as f64;
        let obj = w * loss + regularizer_active(w, gamma);
        if obj < best {
            best = obj;
            best_w = w;
        }
    }
    best_w
}

/// Per-pair weights and the threshold each was computed against (`None`
/// for pairs outside every self-paced bucket).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplWeights {
    pub w: Vec<f64>,
    pub gamma_used: Vec<Option<f64>>,
}

impl SplWeights {
    pub fn zeros(n: usize) -> Self {
        Self {
            w: vec![0.0; n],
            gamma_used: vec![None; n],
        }
    }
}

/// `(1/b) Σ_{i ∈ bucket} [w_i·ℓ_i + R(w_i, γ)]`.
pub fn weighted_spl_loss(
    losses: &[f64],
    weights: &[f64],
    bucket: &[usize],
    gamma: f64,
    batch_size: usize,
) -> Result<f64> {
    if losses.len() != weights.len() {
        return Err(Error::Internal(format!(
            "{} losses but {} weights",
            losses.len(),
            weights.len()
        )));
    }
    if batch_size == 0 {
        return Err(Error::Internal("batch size is zero".into()));
    }
    let mut sum = 0.0;
    for &i in bucket {
        let (l, w) = match (losses.get(i), weights.get(i)) {
            (Some(&l), Some(&w)) => (l, w),
            _ => return Err(Error::Internal(format!("bucket index {i} out of range"))),
        };
        sum += w * l + regularizer(w, gamma, l)?;
    }
    Ok(sum / batch_size as f64)
}
