use crate::{Error, Result};

/// Dense row-major f64 tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        assert!(shape.iter().all(|&d| d >= 1), "all dims must be >= 1");
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let want: usize = shape.iter().product();
        if shape.iter().any(|&d| d < 1) || data.len() != want {
            return Err(Error::ShapeMismatch {
                context: "tensor construction",
                left: shape.to_vec(),
                right: vec![data.len()],
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
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

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Flat offset of a 4-D index; used by the conv paths.
    #[inline]
    pub fn offset4(&self, a: usize, b: usize, c: usize, d: usize) -> usize {
        debug_assert_eq!(self.shape.len(), 4);
        ((a * self.shape[1] + b) * self.shape[2] + c) * self.shape[3] + d
    }

    pub fn at(&self, idx: &[usize]) -> f64 {
        self.data[self.flat(idx)]
    }

    pub fn set(&mut self, idx: &[usize], v: f64) {
        let off = self.flat(idx);
        self.data[off] = v;
    }

    fn flat(&self, idx: &[usize]) -> usize {
        assert_eq!(idx.len(), self.shape.len());
        let mut off = 0;
        for (i, (&x, &d)) in idx.iter().zip(&self.shape).enumerate() {
            assert!(x < d, "index {x} out of bound {d} at axis {i}");
            off = off * d + x;
        }
        off
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_checks_shape() {
        assert!(Tensor::from_vec(&[2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::from_vec(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::from_vec(&[2, 0], vec![]).is_err());
    }

    #[test]
    fn indexing_is_row_major() {
        let t = Tensor::from_vec(&[2, 2, 1, 2], (0..8).map(|v| v as f64).collect()).unwrap();
        assert_eq!(t.at(&[0, 0, 0, 1]), 1.0);
        assert_eq!(t.at(&[1, 0, 0, 0]), 4.0);
        assert_eq!(t.offset4(1, 1, 0, 1), 7);
    }
}
