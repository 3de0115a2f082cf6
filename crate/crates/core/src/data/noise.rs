use ndarray::{s, Axis};
use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

/// Noise provenance: the fraction of pairs whose captions get shuffled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub rho: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if (0.0..=1.0).contains(&self.rho) {
            Ok(())
        } else {
            Err(Error::config(format!(
                "noise rate must lie in [0, 1], got {}",
                self.rho
            )))
        }
    }

    /// Number of pairs that will be corrupted in a dataset of `n` pairs.
    pub fn noisy_pairs(&self, n: usize) -> usize {
        (self.rho * n as f64).round() as usize
    }
}

/// Shuffles the captions of a random `round(rho * n)` subset of pairs among
/// themselves and flags those pairs `y = 0`.
///
/// Texts (global and local together) move; images never do. Within the subset
/// the permutation is a derangement, so every selected pair ends up with a
/// foreign caption unless the subset holds a single pair.
pub fn inject_noise(dataset: &Dataset, spec: &NoiseSpec) -> Result<Dataset> {
    spec.validate()?;
    if !dataset.is_clean() {
        return Err(Error::Data(format!(
            "dataset already carries {} mismatched pairs; noise is injected once",
            dataset.noisy_count()
        )));
    }
    let n = dataset.n_pairs();
    let k = spec.noisy_pairs(n);
    let mut out = dataset.clone();
    if k == 0 {
        return Ok(out);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut subset = index::sample(&mut rng, n, k).into_vec();
    subset.sort_unstable();
    let source = derangement(&mut rng, k);

    let (text_global, text_local, y) = out.parts_mut();
    let orig_global = dataset.text_global();
    let orig_local = dataset.text_local();
    for (slot, &dst) in subset.iter().enumerate() {
        let src = subset[source[slot]];
        text_global.row_mut(dst).assign(&orig_global.row(src));
        text_local
            .slice_mut(s![dst, .., ..])
            .assign(&orig_local.index_axis(Axis(0), src));
        y[dst] = 0;
    }
    Ok(out)
}

/// Uniformly random permutation of `0..k` with no fixed point (identity for
/// `k = 1`).
fn derangement(rng: &mut ChaCha8Rng, k: usize) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..k).collect();
    if k < 2 {
        return perm;
    }
    loop {
        perm.shuffle(rng);
        if perm.iter().enumerate().all(|(i, &p)| i != p) {
            return perm;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_synthetic;

    fn base(n: usize) -> Dataset {
        generate_synthetic(n, 5, 8, 2, 3, 0.5, 11).unwrap()
    }

    #[test]
    fn zero_rate_is_identity() {
        let ds = base(20);
        let out = inject_noise(&ds, &NoiseSpec { rho: 0.0, seed: 1 }).unwrap();
        assert_eq!(out, ds);
    }

    #[test]
    fn forty_percent_of_hundred_flags_forty() {
        let ds = base(100);
        let out = inject_noise(&ds, &NoiseSpec { rho: 0.4, seed: 3 }).unwrap();
        assert_eq!(out.noisy_count(), 40);
    }

    #[test]
    fn two_pairs_full_noise_swaps() {
        let ds = base(2);
        let out = inject_noise(&ds, &NoiseSpec { rho: 1.0, seed: 9 }).unwrap();
        assert_eq!(out.y(), &[0, 0]);
        assert_eq!(out.text_global().row(0), ds.text_global().row(1));
        assert_eq!(out.text_global().row(1), ds.text_global().row(0));
        assert_eq!(
            out.text_local().index_axis(Axis(0), 0),
            ds.text_local().index_axis(Axis(0), 1)
        );
        assert_eq!(out.image_global(), ds.image_global());
    }

    #[test]
    fn out_of_range_rate_rejected() {
        let ds = base(4);
        assert!(matches!(
            inject_noise(&ds, &NoiseSpec { rho: 1.5, seed: 0 }),
            Err(Error::Config(_))
        ));
        assert!(inject_noise(&ds, &NoiseSpec { rho: -0.1, seed: 0 }).is_err());
    }

    #[test]
    fn second_injection_rejected() {
        let ds = base(10);
        let once = inject_noise(&ds, &NoiseSpec { rho: 0.2, seed: 0 }).unwrap();
        assert!(matches!(
            inject_noise(&once, &NoiseSpec { rho: 0.2, seed: 0 }),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn derangement_has_no_fixed_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for k in 2..30 {
            let p = derangement(&mut rng, k);
            let mut sorted = p.clone();
            sorted.sort_unstable();
            assert_eq!(sorted, (0..k).collect::<Vec<_>>());
            assert!(p.iter().enumerate().all(|(i, &v)| i != v));
        }
    }
}
