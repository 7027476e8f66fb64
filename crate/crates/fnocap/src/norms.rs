//! Group norms on weight tensors, per-layer composite norms, and the
//! model capacity gamma_{p,q}.
//!
//! A group norm splits a tensor's axes into an inner p-group and an
//! outer q-group: inner l_p over the moduli of the p-group entries,
//! then l_q across the q-group. Exponents live in [1, inf]; an infinite
//! exponent means the sup-norm.
//!
//! Canonical axis partitions per weight:
//!   P, Q      p: input channel            q: output channel
//!   R, K      p: frequencies/offsets + input channel, q: output channel
//!   dense A   p: input position + input channel,
//!             q: output position + output channel
//! The A partition follows the layer-peeling argument, where the
//! positional output index is converted together with the channel
//! output index.

use crate::fno::{FnoConfig, FnoModel, LayerKind, LayerParams};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NormError {
    #[error("exponent {0} must be in [1, inf]")]
    BadExponent(f64),
    #[error("p-axes {p_axes:?} and q-axes {q_axes:?} must partition the axes of rank {rank}")]
    BadPartition {
        p_axes: Vec<usize>,
        q_axes: Vec<usize>,
        rank: usize,
    },
}

/// Hoelder conjugate with the endpoint conventions 1 <-> inf.
pub fn conjugate(p: f64) -> f64 {
    if p == 1.0 {
        f64::INFINITY
    } else if p.is_infinite() {
        1.0
    } else {
        p / (p - 1.0)
    }
}

/// ReLU applied to an exponent: max(0, x).
pub fn relu_floor(x: f64) -> f64 {
    x.max(0.0)
}

/// 1/p with 1/inf = 0.
pub fn inv(p: f64) -> f64 {
    if p.is_infinite() {
        0.0
    } else {
        1.0 / p
    }
}

/// x^(1/e); e = inf gives x^0 = 1.
pub fn root(x: f64, e: f64) -> f64 {
    if e.is_infinite() {
        1.0
    } else {
        x.powf(1.0 / e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupNormSpec {
    pub p: f64,
    pub q: f64,
    pub p_axes: Vec<usize>,
    pub q_axes: Vec<usize>,
}

impl GroupNormSpec {
    pub fn new(p: f64, q: f64, p_axes: Vec<usize>, q_axes: Vec<usize>) -> Result<Self, NormError> {
        if !(p >= 1.0) {
            return Err(NormError::BadExponent(p));
        }
        if !(q >= 1.0) {
            return Err(NormError::BadExponent(q));
        }
        Ok(GroupNormSpec {
            p,
            q,
            p_axes,
            q_axes,
        })
    }

    pub fn p_star(&self) -> f64 {
        conjugate(self.p)
    }

    fn validate_for(&self, rank: usize) -> Result<(), NormError> {
        let mut seen = vec![false; rank];
        for &a in self.p_axes.iter().chain(&self.q_axes) {
            if a >= rank || seen[a] {
                return Err(NormError::BadPartition {
                    p_axes: self.p_axes.clone(),
                    q_axes: self.q_axes.clone(),
                    rank,
                });
            }
            seen[a] = true;
        }
        if seen.iter().any(|&s| !s) {
            return Err(NormError::BadPartition {
                p_axes: self.p_axes.clone(),
                q_axes: self.q_axes.clone(),
                rank,
            });
        }
        Ok(())
    }
}

/// Group norm of a tensor under `spec` (entry moduli for complex data).
pub fn group_norm(m: &Tensor, spec: &GroupNormSpec) -> Result<f64, NormError> {
    spec.validate_for(m.rank())?;
    Ok(grouped_norm(
        m.shape(),
        |i| m.modulus(i),
        &spec.q_axes,
        spec.p,
        spec.q,
    ))
}

/// Shared kernel: inner l_p per q-group key, outer l_q across keys.
/// Any axis not in `q_axes` belongs to the p-group.
fn grouped_norm(
    shape: &[usize],
    modulus: impl Fn(usize) -> f64,
    q_axes: &[usize],
    p: f64,
    q: f64,
) -> f64 {
    let rank = shape.len();
    let total: usize = shape.iter().product();
    let mut strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    // Row-major key over the q-axes.
    let mut q_strides = vec![0usize; rank];
    let mut key_size = 1usize;
    for &a in q_axes.iter().rev() {
        q_strides[a] = key_size;
        key_size *= shape[a];
    }
    let key_of = |flat: usize| {
        let mut key = 0usize;
        for &a in q_axes {
            key += ((flat / strides[a]) % shape[a]) * q_strides[a];
        }
        key
    };
    // Factor out the per-group max so large p stays finite.
    let mut peak = vec![0.0f64; key_size.max(1)];
    for flat in 0..total {
        let key = key_of(flat);
        peak[key] = peak[key].max(modulus(flat));
    }
    let mut inner = peak.clone();
    if !p.is_infinite() {
        let mut sums = vec![0.0f64; key_size.max(1)];
        for flat in 0..total {
            let key = key_of(flat);
            if peak[key] > 0.0 {
                sums[key] += (modulus(flat) / peak[key]).powf(p);
            }
        }
        for (x, (&s, &m)) in inner.iter_mut().zip(sums.iter().zip(&peak)) {
            *x = m * s.powf(1.0 / p);
        }
    }
    let top = inner.iter().fold(0.0f64, |a, &b| a.max(b));
    if q.is_infinite() || top == 0.0 {
        top
    } else {
        top * inner
            .iter()
            .map(|x| (x / top).powf(q))
            .sum::<f64>()
            .powf(1.0 / q)
    }
}

/// Matrix norm with p over the input axis (0) and q over the output axis (1).
pub fn matrix_norm(m: &Tensor, p: f64, q: f64) -> f64 {
    grouped_norm(m.shape(), |i| m.modulus(i), &[1], p, q)
}

/// Norm of complex weights stored as a (re, im) pair of real tensors;
/// p over all axes but the last, q over the last (output channel).
pub fn complex_pair_norm(re: &Tensor, im: &Tensor, p: f64, q: f64) -> f64 {
    debug_assert_eq!(re.shape(), im.shape());
    let last = re.rank() - 1;
    grouped_norm(
        re.shape(),
        |i| re.data()[i].hypot(im.data()[i]),
        &[last],
        p,
        q,
    )
}

/// Kernel norm: p over offsets + input channel, q over the output channel.
pub fn kernel_norm(k: &Tensor, p: f64, q: f64) -> f64 {
    let last = k.rank() - 1;
    grouped_norm(k.shape(), |i| k.modulus(i), &[last], p, q)
}

/// Dense A norm: p over {input position, input channel} (axes 1, 2),
/// q over {output position, output channel} (axes 0, 3).
pub fn dense_a_norm(a: &Tensor, p: f64, q: f64) -> f64 {
    grouped_norm(a.shape(), |i| a.modulus(i), &[0, 3], p, q)
}

/// ||A||_{p,q} + ||R||_{p,q} * (prod k_max)^(1/p*) / N^relu(1/p* - 1/q).
/// `a = None` is the spectral-only variant (||A|| = 0).
pub fn dense_layer_norm(
    a: Option<&Tensor>,
    r_re: &Tensor,
    r_im: &Tensor,
    p: f64,
    q: f64,
    k_max: &[usize],
    n: usize,
) -> f64 {
    let p_star = conjugate(p);
    let a_norm = a.map_or(0.0, |t| dense_a_norm(t, p, q));
    let r_norm = complex_pair_norm(r_re, r_im, p, q);
    let modes: usize = k_max.iter().product();
    let expo = relu_floor(inv(p_star) - inv(q));
    a_norm + r_norm * root(modes as f64, p_star) / (n as f64).powf(expo)
}

/// ||K||_{p,q} * (prod c)^(1/p*) + (prod k_max)^(1/p*) * ||R||_{p,q}.
pub fn cnn_layer_norm(
    kernel: &Tensor,
    r_re: &Tensor,
    r_im: &Tensor,
    p: f64,
    q: f64,
    k_max: &[usize],
) -> f64 {
    let p_star = conjugate(p);
    let d = r_re.rank() - 2;
    let c: usize = kernel.shape()[..d].iter().product();
    let modes: usize = k_max.iter().product();
    kernel_norm(kernel, p, q) * root(c as f64, p_star)
        + root(modes as f64, p_star) * complex_pair_norm(r_re, r_im, p, q)
}

/// Composite norm of one Fourier layer, dispatched on the layer kind.
pub fn layer_norm(config: &FnoConfig, layer: &LayerParams, p: f64, q: f64) -> f64 {
    match config.layer_kind {
        LayerKind::Dense => dense_layer_norm(
            layer.dense.as_ref(),
            &layer.r_re,
            &layer.r_im,
            p,
            q,
            &config.k_max,
            config.n(),
        ),
        LayerKind::SpectralOnly => {
            dense_layer_norm(None, &layer.r_re, &layer.r_im, p, q, &config.k_max, config.n())
        }
        LayerKind::Cnn => cnn_layer_norm(
            layer.kernel.as_ref().expect("cnn layer has kernel"),
            &layer.r_re,
            &layer.r_im,
            p,
            q,
            &config.k_max,
        ),
    }
}

/// Exponent in [1, inf], serialized as a number or the string "inf".
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Exponent(pub f64);

impl Serialize for Exponent {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.0.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Exponent {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(x) => Ok(Exponent(x)),
            Raw::Str(s) if s == "inf" => Ok(Exponent(f64::INFINITY)),
            Raw::Str(s) => s
                .parse()
                .map(Exponent)
                .map_err(|_| serde::de::Error::custom(format!("bad exponent {s:?}"))),
        }
    }
}

/// Per-layer norms and the capacity gamma (their product).
/// `layer_norms` lists ||P||, each Fourier layer, then ||Q||.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CapacityReport {
    pub p: Exponent,
    pub q: Exponent,
    pub layer_norms: Vec<f64>,
    pub gamma: f64,
}

/// gamma_{p,q}(h): product of lifting, Fourier-layer, and projection norms.
pub fn capacity(model: &FnoModel, p: f64, q: f64) -> CapacityReport {
    let mut layer_norms = vec![matrix_norm(&model.params.lift, p, q)];
    for layer in &model.params.layers {
        layer_norms.push(layer_norm(&model.config, layer, p, q));
    }
    layer_norms.push(matrix_norm(&model.params.proj, p, q));
    let gamma = layer_norms.iter().product();
    CapacityReport {
        p: Exponent(p),
        q: Exponent(q),
        layer_norms,
        gamma,
    }
}

/// ||Q||_{p,inf}, the projection norm used for class membership.
pub fn proj_norm_p_inf(model: &FnoModel, p: f64) -> f64 {
    matrix_norm(&model.params.proj, p, f64::INFINITY)
}

/// Cap structure of a hypothesis class: either one cap per layer
/// (lifting, each Fourier layer, projection) or a single capacity cap.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Caps {
    PerLayer {
        c_p: f64,
        c_layers: Vec<f64>,
        c_q: f64,
    },
    Gamma(f64),
}

#[derive(Debug, Clone)]
pub struct HypothesisClassSpec {
    pub config: FnoConfig,
    pub p: f64,
    pub q: f64,
    pub caps: Caps,
}

/// Class membership. Per-layer caps compare ||P||_{p,q}, each layer's
/// composite norm, and ||Q||_{p,inf}; a gamma cap compares gamma_{p,q}.
/// Boundaries are inclusive.
pub fn is_member(model: &FnoModel, class: &HypothesisClassSpec) -> bool {
    let (p, q) = (class.p, class.q);
    match &class.caps {
        Caps::PerLayer { c_p, c_layers, c_q } => {
            if matrix_norm(&model.params.lift, p, q) > *c_p {
                return false;
            }
            if model.params.layers.len() != c_layers.len() {
                return false;
            }
            for (layer, cap) in model.params.layers.iter().zip(c_layers) {
                if layer_norm(&model.config, layer, p, q) > *cap {
                    return false;
                }
            }
            proj_norm_p_inf(model, p) <= *c_q
        }
        Caps::Gamma(g) => capacity(model, p, q).gamma <= *g,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = StdRng::seed_from_u64(seed);
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap()
    }

    /// Nested-loop oracle, literally the defining double radical.
    fn oracle(m: &Tensor, p_axes: &[usize], q_axes: &[usize], p: f64, q: f64) -> f64 {
        let shape = m.shape();
        let strides = m.strides();
        let q_dims: Vec<usize> = q_axes.iter().map(|&a| shape[a]).collect();
        let p_dims: Vec<usize> = p_axes.iter().map(|&a| shape[a]).collect();
        let mut outer_vals = Vec::new();
        let mut qi = vec![0usize; q_axes.len()];
        loop {
            let mut pi = vec![0usize; p_axes.len()];
            let mut inner_vals = Vec::new();
            loop {
                let mut flat = 0;
                for (i, &a) in q_axes.iter().enumerate() {
                    flat += qi[i] * strides[a];
                }
                for (i, &a) in p_axes.iter().enumerate() {
                    flat += pi[i] * strides[a];
                }
                inner_vals.push(m.modulus(flat));
                if !crate::tensor::increment(&mut pi, &p_dims) {
                    break;
                }
            }
            let inner = if p.is_infinite() {
                inner_vals.iter().fold(0.0f64, |a, &b| a.max(b))
            } else {
                inner_vals.iter().map(|v| v.powf(p)).sum::<f64>().powf(1.0 / p)
            };
            outer_vals.push(inner);
            if !crate::tensor::increment(&mut qi, &q_dims) {
                break;
            }
        }
        if q.is_infinite() {
            outer_vals.iter().fold(0.0f64, |a, &b| a.max(b))
        } else {
            outer_vals.iter().map(|v| v.powf(q)).sum::<f64>().powf(1.0 / q)
        }
    }

    #[test]
    fn identity_matrix_norm_is_n_to_recip_q() {
        let n = 4;
        let mut eye = Tensor::zeros(&[n, n]);
        for i in 0..n {
            eye.data_mut()[i * n + i] = 1.0;
        }
        for &(p, q) in &[(1.0, 1.0), (2.0, 3.0), (4.0, 1.5)] {
            let spec = GroupNormSpec::new(p, q, vec![0], vec![1]).unwrap();
            let got = group_norm(&eye, &spec).unwrap();
            let want = (n as f64).powf(1.0 / q);
            assert!((got - want).abs() < 1e-12, "p={p}, q={q}: {got} vs {want}");
        }
    }

    #[test]
    fn all_ones_p1_qinf() {
        let m = Tensor::full(&[2, 3], 1.0);
        let spec = GroupNormSpec::new(1.0, f64::INFINITY, vec![0], vec![1]).unwrap();
        assert_eq!(group_norm(&m, &spec).unwrap(), 2.0);
    }

    #[test]
    fn random_tensor_matches_nested_loop_oracle() {
        let m = random(&[2, 3, 4], 3);
        let spec = GroupNormSpec::new(2.5, 4.0, vec![0, 1], vec![2]).unwrap();
        let got = group_norm(&m, &spec).unwrap();
        let want = oracle(&m, &[0, 1], &[2], 2.5, 4.0);
        assert!((got - want).abs() / want < 1e-12);
    }

    #[test]
    fn oracle_agreement_across_exponent_grid() {
        let m = random(&[3, 2, 5], 9);
        let inf = f64::INFINITY;
        for &p in &[1.0, 1.2, 2.0, 4.0, inf] {
            for &q in &[1.0, 1.6, 2.0, 8.0, inf] {
                let spec = GroupNormSpec::new(p, q, vec![1, 2], vec![0]).unwrap();
                let got = group_norm(&m, &spec).unwrap();
                let want = oracle(&m, &[1, 2], &[0], p, q);
                assert!(
                    (got - want).abs() / want.max(1e-300) < 1e-12,
                    "p={p}, q={q}"
                );
            }
        }
    }

    #[test]
    fn bad_exponent_is_an_error() {
        assert!(GroupNormSpec::new(0.5, 2.0, vec![0], vec![1]).is_err());
        assert!(GroupNormSpec::new(2.0, 0.9, vec![0], vec![1]).is_err());
    }

    #[test]
    fn homogeneity_and_monotonicity() {
        let m = random(&[4, 5], 17);
        let spec = GroupNormSpec::new(1.7, 3.3, vec![0], vec![1]).unwrap();
        let base = group_norm(&m, &spec).unwrap();
        let scaled = group_norm(&m.scale(-2.5), &spec).unwrap();
        assert!((scaled - 2.5 * base).abs() / base < 1e-12);
        let mut bigger = m.clone();
        bigger.data_mut()[7] = bigger.data()[7].abs() + 1.0;
        assert!(group_norm(&bigger, &spec).unwrap() >= base);
    }

    #[test]
    fn large_p_approximates_infinity() {
        let m = random(&[6, 7], 23);
        for &(pa, qa) in &[(true, false), (false, true)] {
            let big = 1e6;
            let spec_big = GroupNormSpec::new(
                if pa { big } else { 2.0 },
                if qa { big } else { 2.0 },
                vec![0],
                vec![1],
            )
            .unwrap();
            let spec_inf = GroupNormSpec::new(
                if pa { f64::INFINITY } else { 2.0 },
                if qa { f64::INFINITY } else { 2.0 },
                vec![0],
                vec![1],
            )
            .unwrap();
            let a = group_norm(&m, &spec_big).unwrap();
            let b = group_norm(&m, &spec_inf).unwrap();
            assert!((a - b).abs() / b < 1e-3, "{a} vs {b}");
        }
    }

    #[test]
    fn conjugate_endpoints() {
        assert!(conjugate(1.0).is_infinite());
        assert_eq!(conjugate(f64::INFINITY), 1.0);
        assert!((conjugate(1.2) - 6.0).abs() < 1e-12);
        assert_eq!(conjugate(2.0), 2.0);
    }

    #[test]
    fn dense_layer_norm_single_unit_r() {
        // A = 0, R one unit entry, p = q = 2, k_max = 4, d = 1 -> 4^(1/2) = 2.
        let mut r_re = Tensor::zeros(&[4, 1, 1]);
        r_re.data_mut()[0] = 1.0;
        let r_im = Tensor::zeros(&[4, 1, 1]);
        let got = dense_layer_norm(None, &r_re, &r_im, 2.0, 2.0, &[4], 8);
        assert!((got - 2.0).abs() < 1e-12);
        let zero = dense_layer_norm(None, &Tensor::zeros(&[4, 1, 1]), &r_im, 2.0, 2.0, &[4], 8);
        assert_eq!(zero, 0.0);
    }

    #[test]
    fn dense_layer_norm_matches_formula_oracle() {
        let n = 16;
        let a = random(&[n, n, 2, 2], 31);
        let r_re = random(&[4, 2, 2], 32);
        let r_im = random(&[4, 2, 2], 33);
        let (p, q) = (1.2, 1.6);
        let got = dense_layer_norm(Some(&a), &r_re, &r_im, p, q, &[4], n);
        // Independent evaluation from the nested-loop norm oracle.
        let a_norm = oracle(&a, &[1, 2], &[0, 3], p, q);
        let moduli: Vec<f64> = (0..r_re.len())
            .map(|i| r_re.data()[i].hypot(r_im.data()[i]))
            .collect();
        let rmod = Tensor::from_vec(r_re.shape(), moduli).unwrap();
        let r_norm = oracle(&rmod, &[0, 1], &[2], p, q);
        let p_star = conjugate(p);
        let want = a_norm
            + r_norm * 4f64.powf(1.0 / p_star)
                / (n as f64).powf(relu_floor(1.0 / p_star - 1.0 / q));
        assert!((got - want).abs() / want < 1e-12);
    }

    #[test]
    fn cnn_layer_norm_examples() {
        // K one unit entry, c = 3, R = 0, p = q = 2 -> 3^(1/2).
        let mut k = Tensor::zeros(&[3, 1, 1]);
        k.data_mut()[1] = 1.0;
        let rz = Tensor::zeros(&[4, 1, 1]);
        let got = cnn_layer_norm(&k, &rz, &rz, 2.0, 2.0, &[4]);
        assert!((got - 3f64.sqrt()).abs() < 1e-12);
        assert_eq!(
            cnn_layer_norm(&Tensor::zeros(&[3, 1, 1]), &rz, &rz, 2.0, 2.0, &[4]),
            0.0
        );
        // Random K, R at p=4, q=1 against the oracle.
        let k = random(&[5, 3, 2], 41);
        let r_re = random(&[6, 3, 2], 42);
        let r_im = random(&[6, 3, 2], 43);
        let got = cnn_layer_norm(&k, &r_re, &r_im, 4.0, 1.0, &[6]);
        let p_star = conjugate(4.0);
        let moduli: Vec<f64> = (0..r_re.len())
            .map(|i| r_re.data()[i].hypot(r_im.data()[i]))
            .collect();
        let rmod = Tensor::from_vec(r_re.shape(), moduli).unwrap();
        let want = oracle(&k, &[0, 1], &[2], 4.0, 1.0) * 5f64.powf(1.0 / p_star)
            + 6f64.powf(1.0 / p_star) * oracle(&rmod, &[0, 1], &[2], 4.0, 1.0);
        assert!((got - want).abs() / want < 1e-12);
    }

    #[test]
    fn lemma1_norm_inequalities_hold() {
        let mut rng = StdRng::seed_from_u64(99);
        for _ in 0..2000 {
            let n = *[2usize, 16, 64].iter().nth(rng.gen_range(0..3)).unwrap();
            let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let t = Tensor::from_vec(&[n], v).unwrap();
            let mut p: f64 = *[1.0, 1.2, 2.0, 4.0, f64::INFINITY]
                .iter()
                .nth(rng.gen_range(0..5))
                .unwrap();
            let mut q: f64 = *[1.0, 1.6, 2.0, 8.0, f64::INFINITY]
                .iter()
                .nth(rng.gen_range(0..5))
                .unwrap();
            if p > q {
                std::mem::swap(&mut p, &mut q);
            }
            let np = t.lp_norm(p);
            let nq = t.lp_norm(q);
            let nf = n as f64;
            assert!(nq <= np + 1e-12 * np.max(1.0));
            assert!(np <= nq * nf.powf(inv(p) - inv(q)) + 1e-12 * np.max(1.0));
            // Arbitrary-order form.
            assert!(np <= nq * nf.powf(relu_floor(inv(p) - inv(q))) + 1e-12 * np.max(1.0));
            assert!(nq <= np * nf.powf(relu_floor(inv(q) - inv(p))) + 1e-12 * nq.max(1.0));
        }
    }
}
