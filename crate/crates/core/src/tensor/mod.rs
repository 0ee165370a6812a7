//! Dense tensors, segment indices and a define-by-run reverse-mode tape.
//!
//! A [`Tensor`] is a plain value: a shape and a row-major `f64` buffer. It
//! carries no gradient state. Differentiation happens on a [`Tape`], which
//! records every operation applied to its [`Var`] handles and replays them
//! in reverse when [`Tape::backward`] is called. A tape is built fresh for
//! each training step and can be back-propagated exactly once.
//!
//! Per-neighbor reductions (the sums and softmaxes over an entity's
//! neighbor list) are expressed with a [`SegmentIndex`], which maps every
//! edge row to the entity that aggregates it.

pub mod gradcheck;
mod tape;

pub use tape::{Gradients, Tape, Var};

use crate::error::{Error, Result};

/// Layer-norm variance stabilizer.
pub const LAYER_NORM_EPS: f64 = 1e-6;
/// Default negative slope of the leaky ReLU used in attention scores.
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(
                "Tensor::new",
                format!("{n} values for shape {shape:?}"),
                data.len(),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::shape(
                    "Tensor::from_rows",
                    cols,
                    format!("row {i} of width {}", r.len()),
                ));
            }
            data.extend_from_slice(r);
        }
        Ok(Tensor {
            shape: vec![rows.len(), cols],
            data,
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Number of rows when viewed as a matrix (leading dimension).
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Row width when viewed as a matrix (product of trailing dimensions).
    pub fn cols(&self) -> usize {
        self.data
            .len()
            .checked_div(self.rows())
            .unwrap_or_else(|| self.shape[1..].iter().product())
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn reshaped(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::shape(
                "reshape",
                self.data.len(),
                format!("{shape:?}"),
            ));
        }
        self.shape = shape;
        Ok(self)
    }

    /// Copies the selected rows into a new matrix.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let c = self.cols();
        let n = self.rows();
        let mut data = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            if r >= n {
                return Err(Error::Index {
                    what: "row",
                    index: r,
                    bound: n,
                });
            }
            data.extend_from_slice(&self.data[r * c..(r + 1) * c]);
        }
        let mut shape = self.shape.clone();
        if shape.is_empty() {
            shape.push(rows.len());
        } else {
            shape[0] = rows.len();
        }
        Ok(Tensor { shape, data })
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Assigns every edge row to the segment (aggregating entity) it belongs to.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentIndex {
    ids: Vec<usize>,
    count: usize,
}

impl SegmentIndex {
    pub fn new(ids: Vec<usize>, count: usize) -> Result<Self> {
        if let Some(&bad) = ids.iter().find(|&&s| s >= count) {
            return Err(Error::Index {
                what: "segment",
                index: bad,
                bound: count,
            });
        }
        Ok(SegmentIndex { ids, count })
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.count];
        for &s in &self.ids {
            sizes[s] += 1;
        }
        sizes
    }

    pub fn empty_segments(&self) -> Vec<usize> {
        self.sizes()
            .iter()
            .enumerate()
            .filter(|(_, &n)| n == 0)
            .map(|(s, _)| s)
            .collect()
    }

    /// Fails with the first empty segment, if any.
    pub fn require_nonempty(&self) -> Result<()> {
        match self.empty_segments().first() {
            Some(&s) => Err(Error::DegenerateNeighborhood(s)),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_buffer() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert_eq!(Tensor::scalar(3.0).len(), 1);
    }

    #[test]
    fn segment_ids_are_bounded() {
        assert!(SegmentIndex::new(vec![0, 1, 1], 2).is_ok());
        assert!(matches!(
            SegmentIndex::new(vec![0, 2], 2),
            Err(Error::Index { index: 2, .. })
        ));
        let idx = SegmentIndex::new(vec![0, 0, 2], 3).unwrap();
        assert_eq!(idx.sizes(), vec![2, 0, 1]);
        assert_eq!(idx.empty_segments(), vec![1]);
        assert!(matches!(
            idx.require_nonempty(),
            Err(Error::DegenerateNeighborhood(1))
        ));
    }
}
