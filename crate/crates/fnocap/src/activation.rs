//! Fixed activation functions. Both vanish at zero, which the
//! layer-peeling bounds require.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::OnceLock;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Gelu,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Gelu => gelu(x),
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Gelu => gelu_prime(x),
        }
    }

    /// Lipschitz constant. Exactly 1 for relu; for gelu the maximum of
    /// |derivative| on a dense grid over [-10, 10], computed once.
    pub fn lipschitz(self) -> f64 {
        match self {
            Activation::Relu => 1.0,
            Activation::Gelu => {
                static L: OnceLock<f64> = OnceLock::new();
                *L.get_or_init(|| {
                    let n = 200_000;
                    let mut best: f64 = 0.0;
                    for i in 0..=n {
                        let x = -10.0 + 20.0 * (i as f64) / (n as f64);
                        best = best.max(gelu_prime(x).abs());
                    }
                    best
                })
            }
        }
    }
}

// Tanh-form gelu; smooth, zero at zero.
fn gelu(x: f64) -> f64 {
    let c = (2.0 / PI).sqrt();
    let u = c * (x + 0.044715 * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

fn gelu_prime(x: f64) -> f64 {
    let c = (2.0 / PI).sqrt();
    let u = c * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = c * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}
