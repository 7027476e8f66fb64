//! Fourier neural operator with group-norm capacities, Rademacher-bound
//! evaluation, and the Burgers-equation experiment harness.

pub mod activation;
pub mod autodiff;
pub mod bounds;
pub mod burgers;
pub mod dataset;
pub mod experiments;
pub mod fft;
pub mod grf;
pub mod fno;
pub mod norms;
pub mod ops;
pub mod tensor;
pub mod train;
