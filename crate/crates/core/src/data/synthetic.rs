//! Synthetic paired embeddings with a latent class structure.
//!
//! Every pair draws a class. The pair's latent is a perturbation of the class
//! center; the image embedding is a noisy view of that latent and the text
//! embedding is a noisy view of a fixed linear distortion of it (a "modality
//! gap" the projection heads have to undo). Local features follow the same
//! recipe around per-class part sub-centers, so a caption's parts line up with
//! the image's parts of the same index.

use ndarray::{Array1, Array2, Array3, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

pub const DEFAULT_LOCAL_PARTS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_pairs: usize,
    pub n_classes: usize,
    pub dim: usize,
    pub d1: usize,
    pub d2: usize,
    /// Spread of a pair's latent around its class center.
    pub intra_class_spread: f64,
    /// Spread of part sub-centers around their class center.
    pub part_spread: f64,
    /// Independent per-modality observation noise.
    pub view_noise: f64,
    /// Strength of the random linear distortion applied to the text side.
    pub modality_gap: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_pairs: 1000,
            n_classes: 20,
            dim: 32,
            d1: DEFAULT_LOCAL_PARTS,
            d2: DEFAULT_LOCAL_PARTS,
            intra_class_spread: 0.8,
            part_spread: 0.8,
            view_noise: 1.0,
            modality_gap: 0.8,
            seed: 0,
        }
    }
}

/// Generates `n_pairs` clean pairs with the default noise/gap settings.
pub fn generate_synthetic(
    n_pairs: usize,
    n_classes: usize,
    dim: usize,
    d1: usize,
    d2: usize,
    intra_class_spread: f64,
    seed: u64,
) -> Result<Dataset> {
    SyntheticConfig {
        n_pairs,
        n_classes,
        dim,
        d1,
        d2,
        intra_class_spread,
        seed,
        ..SyntheticConfig::default()
    }
    .generate()
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_pairs < 1 {
            return Err(Error::config("n_pairs must be >= 1"));
        }
        if self.n_classes < 2 {
            return Err(Error::config(format!("n_classes must be >= 2, got {}", self.n_classes)));
        }
        if self.dim < 2 {
            return Err(Error::config(format!("dim must be >= 2, got {}", self.dim)));
        }
        if self.d1 < 1 || self.d2 < 1 {
            return Err(Error::config(format!(
                "d1 and d2 must be >= 1, got d1={}, d2={}",
                self.d1, self.d2
            )));
        }
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(format!("{name} must be > 0, got {v}")))
            }
        };
        positive("intra_class_spread", self.intra_class_spread)?;
        positive("part_spread", self.part_spread)?;
        let non_negative = |name: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(format!("{name} must be >= 0, got {v}")))
            }
        };
        non_negative("view_noise", self.view_noise)?;
        non_negative("modality_gap", self.modality_gap)
    }

    /// Train, validation and test sets drawn from one world: `n_pairs`
    /// training pairs followed by `n_val` and `n_test` held-out pairs.
    pub fn generate_splits(&self, n_val: usize, n_test: usize) -> Result<(Dataset, Dataset, Dataset)> {
        let n = self.n_pairs;
        let all = SyntheticConfig {
            n_pairs: n + n_val + n_test,
            ..self.clone()
        }
        .generate()?;
        Ok((
            all.slice(0, n)?,
            all.slice(n, n + n_val)?,
            all.slice(n + n_val, n + n_val + n_test)?,
        ))
    }

    pub fn generate(&self) -> Result<Dataset> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let dim = self.dim;
        let parts = self.d1.max(self.d2);
        let scale = 1.0 / (dim as f64).sqrt();

        let centers: Vec<Array1<f64>> = (0..self.n_classes).map(|_| unit(&gaussian(&mut rng, dim))).collect();
        let sub_centers: Vec<Vec<Array1<f64>>> = centers
            .iter()
            .map(|c| {
                (0..parts)
                    .map(|_| perturb(&mut rng, c.view(), self.part_spread * scale))
                    .collect()
            })
            .collect();
        let mut mix = Array2::<f64>::eye(dim);
        for v in mix.iter_mut() {
            let g: f64 = rng.sample(StandardNormal);
            *v += self.modality_gap * scale * g;
        }

        let n = self.n_pairs;
        let mut image_global = Array2::<f32>::zeros((n, dim));
        let mut text_global = Array2::<f32>::zeros((n, dim));
        let mut image_local = Array3::<f32>::zeros((n, self.d1, dim));
        let mut text_local = Array3::<f32>::zeros((n, self.d2, dim));
        let mut class_id = Vec::with_capacity(n);

        let spread = self.intra_class_spread * scale;
        let noise = self.view_noise * scale;
        for i in 0..n {
            let k = rng.random_range(0..self.n_classes);
            class_id.push(k as u32);

            let latent = perturb(&mut rng, centers[k].view(), spread);
            let (img, txt) = views(&mut rng, &latent, &mix, noise);
            store(image_global.row_mut(i), &img);
            store(text_global.row_mut(i), &txt);

            for (p, sub) in sub_centers[k].iter().enumerate() {
                let latent = perturb(&mut rng, sub.view(), spread);
                let (img, txt) = views(&mut rng, &latent, &mix, noise);
                if p < self.d1 {
                    store(image_local.slice_mut(ndarray::s![i, p, ..]), &img);
                }
                if p < self.d2 {
                    store(text_local.slice_mut(ndarray::s![i, p, ..]), &txt);
                }
            }
        }

        Dataset::new(
            image_global,
            image_local,
            text_global,
            text_local,
            vec![1; n],
            Some(class_id),
        )
    }
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Array1<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn unit(v: &Array1<f64>) -> Array1<f64> {
    let norm = v.dot(v).sqrt();
    if norm > 0.0 {
        v / norm
    } else {
        let mut e = Array1::zeros(v.len());
        e[0] = 1.0;
        e
    }
}

fn perturb(rng: &mut ChaCha8Rng, center: ArrayView1<'_, f64>, std: f64) -> Array1<f64> {
    let g = gaussian(rng, center.len());
    unit(&(&center + &(g * std)))
}

/// Independent image and text views of one latent.
fn views(rng: &mut ChaCha8Rng, latent: &Array1<f64>, mix: &Array2<f64>, noise: f64) -> (Array1<f64>, Array1<f64>) {
    let img = unit(&(latent + &(gaussian(rng, latent.len()) * noise)));
    let txt = unit(&(mix.dot(latent) + gaussian(rng, latent.len()) * noise));
    (img, txt)
}

fn store(mut dst: ndarray::ArrayViewMut1<'_, f32>, src: &Array1<f64>) {
    for (d, s) in dst.iter_mut().zip(src.iter()) {
        *d = *s as f32;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_call_is_clean_and_unit_norm() {
        let ds = generate_synthetic(4, 2, 4, 2, 2, 0.1, 7).unwrap();
        assert_eq!(ds.n_pairs(), 4);
        assert!(ds.y().iter().all(|&v| v == 1));
        for row in ds.image_global().rows().into_iter().chain(ds.text_global().rows()) {
            let n: f32 = row.dot(&row).sqrt();
            assert!((n - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        let a = generate_synthetic(4, 2, 4, 2, 2, 0.1, 7).unwrap();
        let b = generate_synthetic(4, 2, 4, 2, 2, 0.1, 7).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(4, 2, 4, 2, 2, 0.1, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn splits_share_the_world() {
        let cfg = SyntheticConfig {
            n_pairs: 6,
            dim: 4,
            ..SyntheticConfig::default()
        };
        let (train, val, test) = cfg.generate_splits(3, 2).unwrap();
        assert_eq!((train.n_pairs(), val.n_pairs(), test.n_pairs()), (6, 3, 2));
        let all = SyntheticConfig { n_pairs: 11, ..cfg }.generate().unwrap();
        assert_eq!(test, all.slice(9, 11).unwrap());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(generate_synthetic(4, 1, 4, 2, 2, 0.1, 0).is_err());
        assert!(generate_synthetic(4, 2, 4, 2, 2, 0.0, 0).is_err());
        assert!(generate_synthetic(4, 2, 1, 2, 2, 0.1, 0).is_err());
        assert!(generate_synthetic(4, 2, 4, 0, 2, 0.1, 0).is_err());
    }

    #[test]
    fn matched_pairs_beat_cross_class_similarity() {
        let ds = generate_synthetic(100, 10, 32, 4, 4, 0.6, 3).unwrap();
        let ids = ds.class_id().unwrap();
        let (img, txt) = (ds.image_global(), ds.text_global());
        let matched: f64 = (0..100).map(|i| img.row(i).dot(&txt.row(i)) as f64).sum::<f64>() / 100.0;
        let mut cross = 0.0;
        let mut count = 0usize;
        for i in 0..100 {
            for j in 0..100 {
                if ids[i] != ids[j] {
                    cross += img.row(i).dot(&txt.row(j)) as f64;
                    count += 1;
                }
            }
        }
        let cross = cross / count as f64;
        assert!(matched > cross + 0.2, "matched {matched} vs cross-class {cross}");
    }
}
