//! Unitary DFT/IDFT over one or more tensor axes.
//!
//! Both the forward and inverse transforms carry the 1/sqrt(N1...Nd)
//! factor, so the forward map is unitary and the inverse is its exact
//! adjoint. Power-of-two lengths take a radix-2 path; any other length
//! silently falls back to the O(N^2) direct summation of the defining
//! formula.

use crate::tensor::{Tensor, TensorError};
use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::rc::Rc;

thread_local! {
    // Root tables e^{-2 pi i j / n}, j = 0..n, keyed by n.
    static ROOTS: RefCell<HashMap<usize, Rc<Vec<(f64, f64)>>>> = RefCell::new(HashMap::new());
}

fn roots(n: usize) -> Rc<Vec<(f64, f64)>> {
    ROOTS.with(|cell| {
        let mut map = cell.borrow_mut();
        map.entry(n)
            .or_insert_with(|| {
                Rc::new(
                    (0..n)
                        .map(|j| {
                            let ang = -2.0 * PI * (j as f64) / (n as f64);
                            (ang.cos(), ang.sin())
                        })
                        .collect(),
                )
            })
            .clone()
    })
}

/// In-place unnormalized transform of one interleaved complex line of
/// length `n`. `inverse` flips the kernel sign.
fn transform_line(line: &mut [f64], n: usize, inverse: bool) {
    debug_assert_eq!(line.len(), 2 * n);
    if n.is_power_of_two() {
        radix2(line, n, inverse);
    } else {
        direct_dft(line, n, inverse);
    }
}

fn radix2(a: &mut [f64], n: usize, inverse: bool) {
    // Bit-reversal permutation.
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = (i.reverse_bits() >> (usize::BITS - bits)) as usize;
        if j > i {
            a.swap(2 * i, 2 * j);
            a.swap(2 * i + 1, 2 * j + 1);
        }
    }
    let table = roots(n);
    let sign = if inverse { -1.0 } else { 1.0 };
    let mut len = 2;
    while len <= n {
        let step = n / len;
        let half = len / 2;
        let mut i = 0;
        while i < n {
            for j in 0..half {
                let (wr, wi0) = table[j * step];
                let wi = sign * wi0;
                let p = 2 * (i + j);
                let q = 2 * (i + j + half);
                let (vr, vi) = (a[q] * wr - a[q + 1] * wi, a[q] * wi + a[q + 1] * wr);
                let (ur, ui) = (a[p], a[p + 1]);
                a[p] = ur + vr;
                a[p + 1] = ui + vi;
                a[q] = ur - vr;
                a[q + 1] = ui - vi;
            }
            i += len;
        }
        len <<= 1;
    }
}

fn direct_dft(a: &mut [f64], n: usize, inverse: bool) {
    let table = roots(n);
    let sign = if inverse { -1.0 } else { 1.0 };
    let mut out = vec![0.0; 2 * n];
    for k in 0..n {
        let mut re = 0.0;
        let mut im = 0.0;
        for x in 0..n {
            let (wr, wi0) = table[(x * k) % n];
            let wi = sign * wi0;
            re += a[2 * x] * wr - a[2 * x + 1] * wi;
            im += a[2 * x] * wi + a[2 * x + 1] * wr;
        }
        out[2 * k] = re;
        out[2 * k + 1] = im;
    }
    a.copy_from_slice(&out);
}

/// Unitary transform of interleaved complex `data` (row-major, `shape`)
/// along the given axes. Normalizes by 1/sqrt(product of transformed
/// axis lengths) regardless of direction.
pub fn transform_axes_inplace(shape: &[usize], data: &mut [f64], axes: &[usize], inverse: bool) {
    let total: usize = shape.iter().product();
    debug_assert_eq!(data.len(), 2 * total);
    let mut strides = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    let mut norm = 1.0;
    for &axis in axes {
        let n = shape[axis];
        norm *= n as f64;
        let stride = strides[axis];
        let lines = total / n;
        let mut line = vec![0.0; 2 * n];
        for l in 0..lines {
            // Decompose line index into (outer, inner) around the axis.
            let inner = l % stride;
            let outer = l / stride;
            let base = outer * stride * n + inner;
            for x in 0..n {
                let src = base + x * stride;
                line[2 * x] = data[2 * src];
                line[2 * x + 1] = data[2 * src + 1];
            }
            transform_line(&mut line, n, inverse);
            for x in 0..n {
                let dst = base + x * stride;
                data[2 * dst] = line[2 * x];
                data[2 * dst + 1] = line[2 * x + 1];
            }
        }
    }
    let scale = 1.0 / norm.sqrt();
    for v in data.iter_mut() {
        *v *= scale;
    }
}

fn to_complex_data(t: &Tensor) -> Vec<f64> {
    if t.is_complex() {
        t.data().to_vec()
    } else {
        let mut out = vec![0.0; 2 * t.len()];
        for (i, &x) in t.data().iter().enumerate() {
            out[2 * i] = x;
        }
        out
    }
}

/// Unitary DFT over all axes of `v`. Real or complex input, complex output.
pub fn fft(v: &Tensor) -> Result<Tensor, TensorError> {
    if v.is_empty() {
        return Err(TensorError::Empty);
    }
    let mut data = to_complex_data(v);
    let axes: Vec<usize> = (0..v.rank()).collect();
    transform_axes_inplace(v.shape(), &mut data, &axes, false);
    Tensor::from_complex_vec(v.shape(), data)
}

/// Unitary inverse DFT over all axes of `v`; exact inverse of [`fft`].
pub fn ifft(v: &Tensor) -> Result<Tensor, TensorError> {
    if v.is_empty() {
        return Err(TensorError::Empty);
    }
    let mut data = to_complex_data(v);
    let axes: Vec<usize> = (0..v.rank()).collect();
    transform_axes_inplace(v.shape(), &mut data, &axes, true);
    Tensor::from_complex_vec(v.shape(), data)
}
