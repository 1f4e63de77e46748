//! Dense row-major f64 tensor, the sole value carrier of the crate.

use crate::error::{Error, Result};

/// Dense n-dimensional array of finite f64 values in row-major order.
///
/// Invariants: `shape.iter().product() == data.len()` and every entry is
/// finite. Extents may be zero (an empty batch is a legal value), in which
/// case `data` is empty.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::config(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                expected,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::config(format!(
                "non-finite value {} at flat index {}",
                data[bad], bad
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    /// 2-D tensor from equally sized rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(Error::config("ragged rows in from_rows"));
            }
            data.extend_from_slice(row);
        }
        Tensor::new(vec![rows.len(), cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Number of rows when viewed as `[rows, row_len]`; a 1-D tensor is a
    /// single row.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 | 1 => 1,
            _ => self.shape[0],
        }
    }

    pub fn row_len(&self) -> usize {
        match self.shape.len() {
            0 | 1 => self.data.len(),
            _ => self.shape[1..].iter().product(),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.row_len();
        &self.data[i * w..(i + 1) * w]
    }

    pub(crate) fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let w = self.row_len();
        &mut self.data[i * w..(i + 1) * w]
    }

    /// Reinterpret with a new shape of the same total size.
    pub fn reshape(&self, shape: Vec<usize>) -> Result<Tensor> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(Error::config(format!(
                "cannot reshape {:?} ({} elems) to {:?}",
                self.shape,
                self.data.len(),
                shape
            )));
        }
        Ok(Tensor {
            shape,
            data: self.data.clone(),
        })
    }

    /// Stack 1-D example rows into a `[n, features]` batch.
    pub fn stack_rows(rows: &[&Tensor]) -> Result<Tensor> {
        let width = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * width);
        for r in rows {
            if r.len() != width {
                return Err(Error::config("stack_rows: inconsistent widths"));
            }
            data.extend_from_slice(r.data());
        }
        Tensor::new(vec![rows.len(), width], data)
    }

    /// Panics if any entry is non-finite. Called by operations that compute
    /// new tensors, so the finiteness invariant is enforced rather than
    /// assumed.
    pub(crate) fn assert_finite(&self, context: &str) {
        if let Some(i) = self.data.iter().position(|v| !v.is_finite()) {
            panic!(
                "non-finite value {} at flat index {} after {}",
                self.data[i], i, context
            );
        }
    }
}

/// Largest absolute difference between two equally shaped tensors.
pub fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape(), "max_abs_diff shape mismatch");
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_checks_shape_product() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn new_rejects_non_finite() {
        assert!(Tensor::new(vec![2], vec![1.0, f64::NAN]).is_err());
        assert!(Tensor::new(vec![2], vec![1.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn empty_batch_is_legal() {
        let t = Tensor::new(vec![0, 4], vec![]).unwrap();
        assert_eq!(t.rows(), 0);
        assert_eq!(t.row_len(), 4);
    }

    #[test]
    fn row_views() {
        let t = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(t.row(0), &[1.0, 2.0, 3.0]);
        assert_eq!(t.row(1), &[4.0, 5.0, 6.0]);
        let one_d = Tensor::new(vec![3], vec![7.0, 8.0, 9.0]).unwrap();
        assert_eq!(one_d.rows(), 1);
        assert_eq!(one_d.row(0), &[7.0, 8.0, 9.0]);
    }

    #[test]
    fn reshape_preserves_data() {
        let t = Tensor::new(vec![6], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let r = t.reshape(vec![2, 3]).unwrap();
        assert_eq!(r.data(), t.data());
        assert!(t.reshape(vec![4]).is_err());
    }
}
