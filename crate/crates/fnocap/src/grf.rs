//! Gaussian random fields on a periodic 1D grid, sampled by circulant
//! embedding: the covariance of a stationary kernel on the circle is
//! circulant, so its eigenvalues are the DFT of the first row and a
//! sample is an inverse FFT of spectrally colored complex noise.

use crate::fft;
use crate::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GrfError {
    #[error("grid size {0} must be at least 2")]
    GridTooSmall(usize),
    #[error("covariance embedding is not PSD: min eigenvalue {min} vs max {max}")]
    NotPsd { min: f64, max: f64 },
}

/// Squared-exponential kernel on [0, 2pi) with wrapped distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrfSpec {
    pub n: usize,
    pub length_scale: f64,
    pub seed: u64,
}

impl GrfSpec {
    pub fn new(n: usize, seed: u64) -> Self {
        GrfSpec {
            n,
            length_scale: 0.05,
            seed,
        }
    }
}

/// First row of the covariance matrix: k(0, x_j) with wrapped distance
/// min(|x|, 2pi - |x|), x_j = 2pi j / N.
pub fn covariance_row(n: usize, length_scale: f64) -> Vec<f64> {
    (0..n)
        .map(|j| {
            let x = 2.0 * PI * j as f64 / n as f64;
            let d = x.min(2.0 * PI - x);
            (-(d * d) / (length_scale * length_scale)).exp()
        })
        .collect()
}

/// Circulant eigenvalues: the unnormalized DFT of the covariance row.
/// Small negative values (roundoff) are clipped at zero; anything below
/// -1e-8 times the max eigenvalue is an error.
pub fn eigenvalues(n: usize, length_scale: f64) -> Result<Vec<f64>, GrfError> {
    if n < 2 {
        return Err(GrfError::GridTooSmall(n));
    }
    let row = covariance_row(n, length_scale);
    let mut data = vec![0.0f64; 2 * n];
    for (j, &c) in row.iter().enumerate() {
        data[2 * j] = c;
    }
    fft::transform_axes_inplace(&[n], &mut data, &[0], false);
    // Unitary transform: scale by sqrt(N) to get the eigenvalues.
    let scale = (n as f64).sqrt();
    let lambda: Vec<f64> = (0..n).map(|k| data[2 * k] * scale).collect();
    let max = lambda.iter().fold(0.0f64, |a, &b| a.max(b));
    let min = lambda.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    if min < -1e-8 * max {
        return Err(GrfError::NotPsd { min, max });
    }
    Ok(lambda.into_iter().map(|l| l.max(0.0)).collect())
}

/// Draw `m` zero-mean samples with the spec's covariance, each a real
/// Tensor [N]. Draw i uses RNG stream (seed, i), so samples are
/// independent and schedule-invariant.
pub fn grf_sample(spec: &GrfSpec, m: usize) -> Result<Vec<Tensor>, GrfError> {
    let n = spec.n;
    let lambda = eigenvalues(n, spec.length_scale)?;
    let sqrt_lambda: Vec<f64> = lambda.iter().map(|l| l.sqrt()).collect();
    Ok((0..m)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(i as u64);
            // Complex standard normal z = (a + ib)/sqrt(2); the sample is
            // sqrt(2) Re(F^H (sqrt(lambda) z)), which has covariance C.
            let mut data = vec![0.0f64; 2 * n];
            for k in 0..n {
                let a: f64 = StandardNormal.sample(&mut rng);
                let b: f64 = StandardNormal.sample(&mut rng);
                let s = sqrt_lambda[k] / 2f64.sqrt();
                data[2 * k] = s * a;
                data[2 * k + 1] = s * b;
            }
            fft::transform_axes_inplace(&[n], &mut data, &[0], true);
            let field: Vec<f64> = (0..n).map(|j| 2f64.sqrt() * data[2 * j]).collect();
            Tensor::from_vec(&[n], field).expect("shape matches")
        })
        .collect())
}
