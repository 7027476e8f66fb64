//! Dense row-major tensors over f64, with an interleaved (re, im) layout
//! for complex data.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape {shape:?} implies {expected} entries, data has {actual}")]
    ShapeDataMismatch {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch(Vec<usize>, Vec<usize>),
    #[error("empty tensor")]
    Empty,
    #[error("contracted axis lengths differ: axis {0} of lhs has {1}, axis {2} of rhs has {3}")]
    AxisMismatch(usize, usize, usize, usize),
    #[error("axis {0} out of range for rank {1}")]
    AxisOutOfRange(usize, usize),
    #[error("operation requires a real tensor")]
    ComplexUnsupported,
    #[error("non-finite entry at flat index {0}")]
    NonFinite(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    Real,
    Complex,
}

/// Dense multi-rank array. `data` is row-major; complex tensors store
/// interleaved (re, im) pairs, so `data.len() == 2 * element_count`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    dtype: Dtype,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
            dtype: Dtype::Real,
        }
    }

    pub fn zeros_complex(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; 2 * n],
            dtype: Dtype::Complex,
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self, TensorError> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(TensorError::ShapeDataMismatch {
                shape: shape.to_vec(),
                expected: n,
                actual: data.len(),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
            dtype: Dtype::Real,
        })
    }

    pub fn from_complex_vec(shape: &[usize], data: Vec<f64>) -> Result<Self, TensorError> {
        let n: usize = shape.iter().product();
        if 2 * n != data.len() {
            return Err(TensorError::ShapeDataMismatch {
                shape: shape.to_vec(),
                expected: 2 * n,
                actual: data.len(),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
            dtype: Dtype::Complex,
        })
    }

    pub fn scalar(x: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![x],
            dtype: Dtype::Real,
        }
    }

    pub fn full(shape: &[usize], x: f64) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![x; n],
            dtype: Dtype::Real,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Number of (real or complex) elements.
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> Dtype {
        self.dtype
    }

    pub fn is_complex(&self) -> bool {
        self.dtype == Dtype::Complex
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

    /// Modulus of the element at flat index `i` (absolute value for real).
    pub fn modulus(&self, i: usize) -> f64 {
        match self.dtype {
            Dtype::Real => self.data[i].abs(),
            Dtype::Complex => {
                let re = self.data[2 * i];
                let im = self.data[2 * i + 1];
                re.hypot(im)
            }
        }
    }

    pub fn check_finite(&self) -> Result<(), TensorError> {
        for (i, x) in self.data.iter().enumerate() {
            if !x.is_finite() {
                return Err(TensorError::NonFinite(i));
            }
        }
        Ok(())
    }

    /// Row-major strides (in elements, not floats).
    pub fn strides(&self) -> Vec<usize> {
        let mut s = vec![1usize; self.shape.len()];
        for i in (0..self.shape.len().saturating_sub(1)).rev() {
            s[i] = s[i + 1] * self.shape[i + 1];
        }
        s
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self, TensorError> {
        let n: usize = shape.iter().product();
        if n != self.len() {
            return Err(TensorError::ShapeMismatch(
                self.shape.clone(),
                shape.to_vec(),
            ));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        if self.is_complex() || other.is_complex() {
            return Err(TensorError::ComplexUnsupported);
        }
        self.zip_with(other, |a, b| a * b)
    }

    fn zip_with(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor, TensorError> {
        if self.shape != other.shape || self.dtype != other.dtype {
            return Err(TensorError::ShapeMismatch(
                self.shape.clone(),
                other.shape.clone(),
            ));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
            dtype: self.dtype,
        })
    }

    pub fn scale(&self, t: f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| t * x).collect(),
            dtype: self.dtype,
        }
    }

    pub fn sum(&self) -> f64 {
        assert!(!self.is_complex(), "sum of complex tensor");
        self.data.iter().sum()
    }

    pub fn dot(&self, other: &Tensor) -> Result<f64, TensorError> {
        if self.shape != other.shape || self.is_complex() || other.is_complex() {
            return Err(TensorError::ShapeMismatch(
                self.shape.clone(),
                other.shape.clone(),
            ));
        }
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    /// Plain lp norm over all entries (moduli for complex). `p` may be
    /// `f64::INFINITY` for the sup-norm.
    pub fn lp_norm(&self, p: f64) -> f64 {
        lp_norm_iter((0..self.len()).map(|i| self.modulus(i)), p)
    }

    /// Tensor contraction over paired axes: `pairs` lists (lhs axis, rhs axis).
    /// Remaining axes of `self` precede remaining axes of `other` in the
    /// result, row-major. Real tensors only.
    pub fn contract(&self, other: &Tensor, pairs: &[(usize, usize)]) -> Result<Tensor, TensorError> {
        if self.is_complex() || other.is_complex() {
            return Err(TensorError::ComplexUnsupported);
        }
        for &(la, ra) in pairs {
            if la >= self.rank() {
                return Err(TensorError::AxisOutOfRange(la, self.rank()));
            }
            if ra >= other.rank() {
                return Err(TensorError::AxisOutOfRange(ra, other.rank()));
            }
            if self.shape[la] != other.shape[ra] {
                return Err(TensorError::AxisMismatch(
                    la,
                    self.shape[la],
                    ra,
                    other.shape[ra],
                ));
            }
        }
        let lhs_contracted: Vec<usize> = pairs.iter().map(|&(a, _)| a).collect();
        let rhs_contracted: Vec<usize> = pairs.iter().map(|&(_, b)| b).collect();
        let lhs_free: Vec<usize> = (0..self.rank())
            .filter(|a| !lhs_contracted.contains(a))
            .collect();
        let rhs_free: Vec<usize> = (0..other.rank())
            .filter(|a| !rhs_contracted.contains(a))
            .collect();

        let mut out_shape: Vec<usize> = lhs_free.iter().map(|&a| self.shape[a]).collect();
        out_shape.extend(rhs_free.iter().map(|&a| other.shape[a]));
        let contracted_dims: Vec<usize> = lhs_contracted.iter().map(|&a| self.shape[a]).collect();

        let ls = self.strides();
        let rs = other.strides();
        let lhs_free_dims: Vec<usize> = lhs_free.iter().map(|&a| self.shape[a]).collect();
        let rhs_free_dims: Vec<usize> = rhs_free.iter().map(|&a| other.shape[a]).collect();

        let out_len: usize = out_shape.iter().product::<usize>().max(1);
        let mut out = vec![0.0; out_len];

        let mut lhs_idx = vec![0usize; lhs_free.len()];
        let mut rhs_idx = vec![0usize; rhs_free.len()];
        let mut c_idx = vec![0usize; pairs.len()];
        for slot in out.iter_mut() {
            let lhs_base: usize = lhs_idx
                .iter()
                .zip(&lhs_free)
                .map(|(&i, &a)| i * ls[a])
                .sum();
            let rhs_base: usize = rhs_idx
                .iter()
                .zip(&rhs_free)
                .map(|(&i, &a)| i * rs[a])
                .sum();
            let mut acc = 0.0;
            c_idx.iter_mut().for_each(|i| *i = 0);
            loop {
                let lo: usize = c_idx
                    .iter()
                    .zip(&lhs_contracted)
                    .map(|(&i, &a)| i * ls[a])
                    .sum();
                let ro: usize = c_idx
                    .iter()
                    .zip(&rhs_contracted)
                    .map(|(&i, &a)| i * rs[a])
                    .sum();
                acc += self.data[lhs_base + lo] * other.data[rhs_base + ro];
                if !increment(&mut c_idx, &contracted_dims) {
                    break;
                }
            }
            *slot = acc;
            if !increment(&mut rhs_idx, &rhs_free_dims) {
                increment(&mut lhs_idx, &lhs_free_dims);
            }
        }
        Tensor::from_vec(&out_shape, out)
    }
}

/// lp norm of a sequence of nonnegative values; `p = inf` gives the sup.
pub fn lp_norm_iter(values: impl Iterator<Item = f64>, p: f64) -> f64 {
    assert!(p >= 1.0, "norm exponent must be >= 1");
    if p.is_infinite() {
        values.fold(0.0, f64::max)
    } else {
        let s: f64 = values.map(|v| v.powf(p)).sum();
        s.powf(1.0 / p)
    }
}

/// Advance a row-major multi-index; returns false on wrap-around.
pub fn increment(idx: &mut [usize], dims: &[usize]) -> bool {
    for i in (0..idx.len()).rev() {
        idx[i] += 1;
        if idx[i] < dims[i] {
            return true;
        }
        idx[i] = 0;
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_times_vector_is_identity() {
        let n = 5;
        let mut eye = Tensor::zeros(&[n, n]);
        for i in 0..n {
            eye.data_mut()[i * n + i] = 1.0;
        }
        let v = Tensor::from_vec(&[n], (0..n).map(|i| i as f64 + 0.5).collect()).unwrap();
        let out = eye.contract(&v, &[(1, 0)]).unwrap();
        assert_eq!(out.shape(), &[n]);
        for i in 0..n {
            assert_eq!(out.data()[i], i as f64 + 0.5);
        }
    }

    #[test]
    fn matmul_matches_naive_triple_loop() {
        let a = Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Tensor::from_vec(&[3, 4], (0..12).map(|i| (i as f64) * 0.3 - 1.0).collect())
            .unwrap();
        let c = a.contract(&b, &[(1, 0)]).unwrap();
        assert_eq!(c.shape(), &[2, 4]);
        for i in 0..2 {
            for j in 0..4 {
                let mut acc = 0.0;
                for k in 0..3 {
                    acc += a.data()[i * 3 + k] * b.data()[k * 4 + j];
                }
                let got = c.data()[i * 4 + j];
                assert!((got - acc).abs() < 1e-12, "({i},{j}): {got} vs {acc}");
            }
        }
    }

    #[test]
    fn contraction_with_zero_tensor_is_zero() {
        let a = Tensor::full(&[3, 4], 2.0);
        let z = Tensor::zeros(&[4, 2]);
        let c = a.contract(&z, &[(1, 0)]).unwrap();
        assert!(c.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn axis_mismatch_is_an_error() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[4, 2]);
        assert!(a.contract(&b, &[(1, 0)]).is_err());
    }

    #[test]
    fn higher_rank_contraction_spot_check() {
        // (2x3x4) contract (4x3) over axes (2,0) and (1,1) -> shape [2]
        let a = Tensor::from_vec(&[2, 3, 4], (0..24).map(|i| i as f64 * 0.1).collect()).unwrap();
        let b = Tensor::from_vec(&[4, 3], (0..12).map(|i| 1.0 - i as f64 * 0.2).collect()).unwrap();
        let c = a.contract(&b, &[(2, 0), (1, 1)]).unwrap();
        assert_eq!(c.shape(), &[2]);
        for i in 0..2 {
            let mut acc = 0.0;
            for j in 0..3 {
                for k in 0..4 {
                    acc += a.data()[i * 12 + j * 4 + k] * b.data()[k * 3 + j];
                }
            }
            assert!((c.data()[i] - acc).abs() < 1e-12);
        }
    }
}
