//! Dense row-major tensors with the handful of kernels an MLP needs.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<F> {
    shape: Vec<usize>,
    data: Vec<F>,
}

impl<F: Scalar> Tensor<F> {
    pub fn new(shape: Vec<usize>, data: Vec<F>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::Dimension {
                context: "tensor shape",
                expected: 1,
                actual: 0,
            });
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Dimension {
                context: "tensor data length",
                expected,
                actual: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![F::zero(); len],
        }
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<F>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(Error::Dimension {
                    context: "matrix row",
                    expected: cols,
                    actual: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(vec![rows.len(), cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Rows of a 2-D tensor.
    pub fn rows(&self) -> usize {
        debug_assert_eq!(self.shape.len(), 2);
        self.shape[0]
    }

    /// Columns of a 2-D tensor.
    pub fn cols(&self) -> usize {
        debug_assert_eq!(self.shape.len(), 2);
        self.shape[1]
    }

    pub fn row(&self, i: usize) -> &[F] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [F] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Gathers the listed rows into a new matrix.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let c = self.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            shape: vec![idx.len(), c],
            data,
        }
    }

    /// `self · otherᵀ` for `self: [m × k]`, `other: [n × k]`.
    pub fn matmul_t(&self, other: &Self) -> Self {
        let (m, k) = (self.rows(), self.cols());
        let n = other.rows();
        assert_eq!(k, other.cols(), "inner dimensions differ");
        let mut out = vec![F::zero(); m * n];
        for i in 0..m {
            let a = self.row(i);
            let dst = &mut out[i * n..(i + 1) * n];
            for (j, d) in dst.iter_mut().enumerate() {
                *d = crate::scalar::dot(a, other.row(j));
            }
        }
        Self {
            shape: vec![m, n],
            data: out,
        }
    }

    /// `self · other` for `self: [m × k]`, `other: [k × n]`.
    pub fn matmul(&self, other: &Self) -> Self {
        let (m, k) = (self.rows(), self.cols());
        let n = other.cols();
        assert_eq!(k, other.rows(), "inner dimensions differ");
        let mut out = vec![F::zero(); m * n];
        for i in 0..m {
            let dst = &mut out[i * n..(i + 1) * n];
            for (p, &a) in self.row(i).iter().enumerate() {
                if a == F::zero() {
                    continue;
                }
                crate::scalar::axpy(a, other.row(p), dst);
            }
        }
        Self {
            shape: vec![m, n],
            data: out,
        }
    }

    /// `selfᵀ · other` for `self: [m × a]`, `other: [m × b]`, giving `[a × b]`.
    pub fn t_matmul(&self, other: &Self) -> Self {
        let (m, a) = (self.rows(), self.cols());
        let b = other.cols();
        assert_eq!(m, other.rows(), "row counts differ");
        let mut out = vec![F::zero(); a * b];
        for r in 0..m {
            let rhs = other.row(r);
            for (i, &x) in self.row(r).iter().enumerate() {
                if x == F::zero() {
                    continue;
                }
                crate::scalar::axpy(x, rhs, &mut out[i * b..(i + 1) * b]);
            }
        }
        Self {
            shape: vec![a, b],
            data: out,
        }
    }

    /// Adds `bias` to every row.
    pub fn add_row_broadcast(&mut self, bias: &[F]) {
        let c = self.cols();
        assert_eq!(c, bias.len());
        for chunk in self.data.chunks_mut(c) {
            for (x, &b) in chunk.iter_mut().zip(bias) {
                *x += b;
            }
        }
    }

    /// Column sums of a matrix.
    pub fn sum_rows(&self) -> Vec<F> {
        let c = self.cols();
        let mut out = vec![F::zero(); c];
        for chunk in self.data.chunks(c) {
            for (o, &x) in out.iter_mut().zip(chunk) {
                *o += x;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_lengths() {
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f64>::new(vec![0, 3], vec![]).is_err());
    }

    #[test]
    fn products_agree() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![5.0, 6.0], vec![7.0, 8.0]]).unwrap();
        // a · bᵀ
        assert_eq!(a.matmul_t(&b).data(), &[17.0, 23.0, 39.0, 53.0]);
        assert_eq!(a.matmul(&b).data(), &[19.0, 22.0, 43.0, 50.0]);
        assert_eq!(a.t_matmul(&b).data(), &[26.0, 30.0, 38.0, 44.0]);
    }
}
