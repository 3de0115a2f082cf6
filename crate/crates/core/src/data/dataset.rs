use ndarray::{s, Array2, Array3, ArrayView2, ArrayView3, Axis};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    image_global: Array2<f32>,
    image_local: Array3<f32>,
    text_global: Array2<f32>,
    text_local: Array3<f32>,
    y: Vec<u8>,
    class_id: Option<Vec<u32>>,
}

impl Dataset {
    /// Assembles a dataset, checking shapes, finiteness and label values.
    pub fn new(
        image_global: Array2<f32>,
        image_local: Array3<f32>,
        text_global: Array2<f32>,
        text_local: Array3<f32>,
        y: Vec<u8>,
        class_id: Option<Vec<u32>>,
    ) -> Result<Self> {
        let (n, dim) = image_global.dim();
        let (n_il, d1, dim_il) = image_local.dim();
        let (n_tl, d2, dim_tl) = text_local.dim();
        if dim < 2 {
            return Err(Error::config(format!("embedding dim must be >= 2, got {dim}")));
        }
        if d1 < 1 || d2 < 1 {
            return Err(Error::config(format!(
                "local feature counts must be >= 1, got d1={d1}, d2={d2}"
            )));
        }
        if text_global.dim() != (n, dim) || (n_il, dim_il) != (n, dim) || (n_tl, dim_tl) != (n, dim) {
            return Err(Error::config("embedding blocks disagree on pair count or width"));
        }
        if y.len() != n {
            return Err(Error::config(format!("{} labels for {n} pairs", y.len())));
        }
        if let Some(bad) = y.iter().find(|&&v| v > 1) {
            return Err(Error::config(format!("correspondence label must be 0 or 1, got {bad}")));
        }
        if let Some(ids) = &class_id {
            if ids.len() != n {
                return Err(Error::config(format!("{} class ids for {n} pairs", ids.len())));
            }
        }
        let finite = image_global.iter().all(|v| v.is_finite())
            && image_local.iter().all(|v| v.is_finite())
            && text_global.iter().all(|v| v.is_finite())
            && text_local.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::Data("embedding contains a non-finite value".into()));
        }
        Ok(Self {
            image_global: image_global.as_standard_layout().into_owned(),
            image_local: image_local.as_standard_layout().into_owned(),
            text_global: text_global.as_standard_layout().into_owned(),
            text_local: text_local.as_standard_layout().into_owned(),
            y,
            class_id,
        })
    }

    pub fn n_pairs(&self) -> usize {
        self.y.len()
    }

    pub fn dim(&self) -> usize {
        self.image_global.ncols()
    }

    pub fn d1(&self) -> usize {
        self.image_local.dim().1
    }

    pub fn d2(&self) -> usize {
        self.text_local.dim().1
    }

    pub fn image_global(&self) -> ArrayView2<'_, f32> {
        self.image_global.view()
    }

    pub fn image_local(&self) -> ArrayView3<'_, f32> {
        self.image_local.view()
    }

    pub fn text_global(&self) -> ArrayView2<'_, f32> {
        self.text_global.view()
    }

    pub fn text_local(&self) -> ArrayView3<'_, f32> {
        self.text_local.view()
    }

    pub fn y(&self) -> &[u8] {
        &self.y
    }

    pub fn class_id(&self) -> Option<&[u32]> {
        self.class_id.as_deref()
    }

    /// Number of pairs flagged as mismatched (`y = 0`).
    pub fn noisy_count(&self) -> usize {
        self.y.iter().filter(|&&v| v == 0).count()
    }

    pub fn is_clean(&self) -> bool {
        self.noisy_count() == 0
    }

    /// Copies the given rows, in order, into a new dataset.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.n_pairs()) {
            return Err(Error::config(format!(
                "row {bad} out of range for {} pairs",
                self.n_pairs()
            )));
        }
        Ok(Self {
            image_global: self.image_global.select(Axis(0), indices),
            image_local: self.image_local.select(Axis(0), indices),
            text_global: self.text_global.select(Axis(0), indices),
            text_local: self.text_local.select(Axis(0), indices),
            y: indices.iter().map(|&i| self.y[i]).collect(),
            class_id: self
                .class_id
                .as_ref()
                .map(|ids| indices.iter().map(|&i| ids[i]).collect()),
        })
    }

    /// Contiguous row range `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start > end || end > self.n_pairs() {
            return Err(Error::config(format!(
                "range {start}..{end} out of bounds for {} pairs",
                self.n_pairs()
            )));
        }
        Ok(Self {
            image_global: self.image_global.slice(s![start..end, ..]).to_owned(),
            image_local: self.image_local.slice(s![start..end, .., ..]).to_owned(),
            text_global: self.text_global.slice(s![start..end, ..]).to_owned(),
            text_local: self.text_local.slice(s![start..end, .., ..]).to_owned(),
            y: self.y[start..end].to_vec(),
            class_id: self.class_id.as_ref().map(|ids| ids[start..end].to_vec()),
        })
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut Array2<f32>, &mut Array3<f32>, &mut Vec<u8>) {
        (&mut self.text_global, &mut self.text_local, &mut self.y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(n: usize, dim: usize) -> Result<Dataset> {
        Dataset::new(
            Array2::ones((n, dim)),
            Array3::ones((n, 1, dim)),
            Array2::ones((n, dim)),
            Array3::ones((n, 2, dim)),
            vec![1; n],
            None,
        )
    }

    #[test]
    fn rejects_narrow_embeddings() {
        assert!(matches!(tiny(3, 1), Err(Error::Config(_))));
        assert!(tiny(3, 2).is_ok());
    }

    #[test]
    fn rejects_non_finite_rows() {
        let mut g = Array2::<f32>::ones((2, 3));
        g[[1, 2]] = f32::NAN;
        let r = Dataset::new(
            g,
            Array3::ones((2, 1, 3)),
            Array2::ones((2, 3)),
            Array3::ones((2, 1, 3)),
            vec![1, 1],
            None,
        );
        assert!(matches!(r, Err(Error::Data(_))));
    }

    #[test]
    fn select_and_slice_agree() {
        let ds = tiny(5, 2).unwrap();
        assert_eq!(ds.select(&[1, 2, 3]).unwrap(), ds.slice(1, 4).unwrap());
        assert!(ds.select(&[5]).is_err());
    }
}
