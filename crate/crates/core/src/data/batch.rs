use ndarray::{Array2, Array3, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Dataset;
use crate::error::{Error, Result};

pub const DEFAULT_BATCH_SIZE: usize = 100;

/// A mini-batch: row ids into a dataset plus widened copies of their blocks.
#[derive(Debug, Clone)]
pub struct PairBatch<'a> {
    dataset: &'a Dataset,
    indices: Vec<usize>,
}

impl<'a> PairBatch<'a> {
    pub fn new(dataset: &'a Dataset, indices: Vec<usize>) -> Result<Self> {
        if indices.len() < 2 {
            return Err(Error::config(format!(
                "a batch needs at least 2 pairs, got {}",
                indices.len()
            )));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= dataset.n_pairs()) {
            return Err(Error::config(format!("row {bad} out of range")));
        }
        Ok(Self { dataset, indices })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn dataset(&self) -> &'a Dataset {
        self.dataset
    }

    pub fn y(&self) -> Vec<u8> {
        self.indices.iter().map(|&i| self.dataset.y()[i]).collect()
    }

    pub fn image_global(&self) -> Array2<f64> {
        widen2(self.dataset.image_global().select(Axis(0), &self.indices))
    }

    pub fn text_global(&self) -> Array2<f64> {
        widen2(self.dataset.text_global().select(Axis(0), &self.indices))
    }

    pub fn image_local(&self) -> Array3<f64> {
        widen3(self.dataset.image_local().select(Axis(0), &self.indices))
    }

    pub fn text_local(&self) -> Array3<f64> {
        widen3(self.dataset.text_local().select(Axis(0), &self.indices))
    }
}

fn widen2(a: Array2<f32>) -> Array2<f64> {
    a.mapv(f64::from)
}

fn widen3(a: Array3<f32>) -> Array3<f64> {
    a.mapv(f64::from)
}

/// One shuffled epoch over a dataset.
#[derive(Debug)]
pub struct Batches<'a> {
    dataset: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    cursor: usize,
}

impl<'a> Iterator for Batches<'a> {
    type Item = PairBatch<'a>;

    fn next(&mut self) -> Option<Self::Item> {
        let end = (self.cursor + self.batch_size).min(self.order.len());
        if end - self.cursor < 2 {
            return None;
        }
        let indices = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        Some(PairBatch {
            dataset: self.dataset,
            indices,
        })
    }
}

impl Batches<'_> {
    /// Number of batches this epoch yields in total.
    pub fn count_total(&self) -> usize {
        let n = self.order.len();
        let full = n / self.batch_size;
        full + usize::from(n % self.batch_size >= 2)
    }
}

/// Shuffles `0..n` with `epoch_seed` and cuts it into batches of
/// `batch_size`; a trailing batch smaller than 2 is dropped.
pub fn batch_iter(dataset: &Dataset, batch_size: usize, epoch_seed: u64) -> Result<Batches<'_>> {
    if batch_size < 2 {
        return Err(Error::config(format!("batch_size must be >= 2, got {batch_size}")));
    }
    let mut order: Vec<usize> = (0..dataset.n_pairs()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
    Ok(Batches {
        dataset,
        order,
        batch_size,
        cursor: 0,
    })
}
