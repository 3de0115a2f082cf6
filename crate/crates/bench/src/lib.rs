//! Shared fixtures for the criterion benches.

use ndarray::{Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rrsitr::data::SyntheticConfig;
use rrsitr::{Dataset, ProjectionHeads};

pub const DIM: usize = 32;

/// Clean synthetic pairs at the bench width with 4 parts per modality.
pub fn dataset(n: usize) -> Dataset {
    SyntheticConfig {
        n_pairs: n,
        dim: DIM,
        seed: 17,
        ..SyntheticConfig::default()
    }
    .generate()
    .expect("valid bench config")
}

pub fn heads() -> ProjectionHeads {
    ProjectionHeads::init(DIM, DIM, &mut ChaCha8Rng::seed_from_u64(5))
}

/// The four embedding blocks of a dataset widened to `f64`.
pub struct Blocks {
    pub image_global: Array2<f64>,
    pub image_local: Array3<f64>,
    pub text_global: Array2<f64>,
    pub text_local: Array3<f64>,
}

pub fn blocks(ds: &Dataset) -> Blocks {
    Blocks {
        image_global: ds.image_global().mapv(f64::from),
        image_local: ds.image_local().mapv(f64::from),
        text_global: ds.text_global().mapv(f64::from),
        text_local: ds.text_local().mapv(f64::from),
    }
}
