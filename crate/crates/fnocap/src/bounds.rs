//! Closed-form generalization bounds and Monte-Carlo estimators that
//! must sit below them.
//!
//! Exponent shorthand throughout: e = max(0, 1/p* - 1/q). The dense
//! peeling factor is L^D (NH)^{De} H^e; the CNN factor is L^D H^{(D+1)e}.

use crate::fno::{forward_taped, FnoConfig, FnoError, FnoModel, LayerKind, SharedParams};
use crate::norms::{
    self, capacity, conjugate, inv, proj_norm_p_inf, relu_floor, Caps, Exponent,
    HypothesisClassSpec,
};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BoundError {
    #[error("delta {0} must lie in (0, 1)")]
    BadDelta(f64),
    #[error("need at least one sample")]
    NoSamples,
    #[error(transparent)]
    Fno(#[from] FnoError),
}

/// Everything the closed-form bounds depend on, besides the caps.
#[derive(Debug, Clone)]
pub struct BoundInputs {
    /// Activation Lipschitz constant.
    pub l: f64,
    /// Fourier-layer depth D.
    pub depth: usize,
    /// Total grid size N.
    pub n: usize,
    /// Channel width H = d_v.
    pub h: usize,
    pub d_u: usize,
    pub p: f64,
    pub q: f64,
    /// ||a_i||_{p*} per sample; m is the length.
    pub sample_norms: Vec<f64>,
    /// Loss radius: ||h(a) - u||_2 <= epsilon^2.
    pub epsilon: f64,
    pub delta: f64,
    /// sup_i ||a_i||_{p*}.
    pub b: f64,
}

impl BoundInputs {
    pub fn m(&self) -> usize {
        self.sample_norms.len()
    }

    fn mean_norm(&self) -> f64 {
        self.sample_norms.iter().sum::<f64>() / self.m() as f64
    }

    fn exponent(&self) -> f64 {
        relu_floor(inv(conjugate(self.p)) - inv(self.q))
    }

    /// L^D (NH)^{De} H^e — the dense/spectral peeling factor.
    pub fn peel_dense(&self) -> f64 {
        let e = self.exponent();
        let nh = (self.n * self.h) as f64;
        self.l.powi(self.depth as i32)
            * nh.powf(self.depth as f64 * e)
            * (self.h as f64).powf(e)
    }

    /// L^D H^{(D+1)e} — the CNN peeling factor.
    pub fn peel_cnn(&self) -> f64 {
        let e = self.exponent();
        self.l.powi(self.depth as i32) * (self.h as f64).powf((self.depth + 1) as f64 * e)
    }

    fn peel(&self, kind: LayerKind) -> f64 {
        match kind {
            LayerKind::Cnn => self.peel_cnn(),
            _ => self.peel_dense(),
        }
    }

    /// N^{1/p} d_u — the sign-vector counting factor.
    fn count_factor(&self) -> f64 {
        (self.n as f64).powf(inv(self.p)) * self.d_u as f64
    }

    fn concentration(&self) -> Result<f64, BoundError> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(BoundError::BadDelta(self.delta));
        }
        Ok((2.0 * (4.0 / self.delta).ln() / self.m() as f64).sqrt())
    }
}

/// Sup-norm peeling bound for dense/spectral layers:
/// L^D (NH)^{De} H^e * C_Q C_D ... C_1 C_P * ||a||_{p*}.
pub fn lemma3_sup_bound(inputs: &BoundInputs, caps: &[f64], a_norm: f64) -> f64 {
    inputs.peel_dense() * caps.iter().product::<f64>() * a_norm
}

/// CNN variant: L^D H^{(D+1)e} * caps product * ||a||_{p*}.
pub fn lemma3prime_sup_bound(inputs: &BoundInputs, caps: &[f64], a_norm: f64) -> f64 {
    inputs.peel_cnn() * caps.iter().product::<f64>() * a_norm
}

/// Rademacher bound with per-layer caps, dense/spectral layers.
pub fn theorem1_bound(inputs: &BoundInputs, caps: &[f64]) -> f64 {
    inputs.peel_dense() * inputs.count_factor() * caps.iter().product::<f64>()
        * inputs.mean_norm()
}

/// Rademacher bound with per-layer caps, CNN layers.
pub fn theorem2_bound(inputs: &BoundInputs, caps: &[f64]) -> f64 {
    inputs.peel_cnn() * inputs.count_factor() * caps.iter().product::<f64>() * inputs.mean_norm()
}

/// Rademacher bound with a single capacity cap gamma.
pub fn corollary1_bound(inputs: &BoundInputs, gamma: f64, kind: LayerKind) -> f64 {
    inputs.peel(kind) * inputs.count_factor() * gamma * inputs.mean_norm()
}

/// Theorem 4: generalization-gap bound for the class with capacity <= gamma,
/// 4*sqrt(2)*eps*gamma*peel*N^{1/p}*d_u*(mean ||a_i||) + eps^2*sqrt(2 log(4/delta)/m).
pub fn theorem4_gap_bound(
    inputs: &BoundInputs,
    gamma: f64,
    kind: LayerKind,
) -> Result<f64, BoundError> {
    let conc = inputs.concentration()?;
    Ok(4.0 * 2f64.sqrt() * inputs.epsilon * gamma * inputs.peel(kind) * inputs.count_factor()
        * inputs.mean_norm()
        + inputs.epsilon.powi(2) * conc)
}

/// Corollary 2 gap term: mean sample norm replaced by B = sup ||a_i||_{p*}.
pub fn corollary2_gap_bound(
    inputs: &BoundInputs,
    gamma: f64,
    kind: LayerKind,
) -> Result<f64, BoundError> {
    let conc = inputs.concentration()?;
    Ok(4.0 * 2f64.sqrt() * inputs.epsilon * gamma * inputs.peel(kind) * inputs.count_factor()
        * inputs.b
        + inputs.epsilon.powi(2) * conc)
}

/// Corollary 2 expected-error term: gap RHS with eps^2*(1 + sqrt(...)).
pub fn corollary2_expected_bound(
    inputs: &BoundInputs,
    gamma: f64,
    kind: LayerKind,
) -> Result<f64, BoundError> {
    let conc = inputs.concentration()?;
    Ok(4.0 * 2f64.sqrt() * inputs.epsilon * gamma * inputs.peel(kind) * inputs.count_factor()
        * inputs.b
        + inputs.epsilon.powi(2) * (1.0 + conc))
}

/// Bound values alongside any empirical counterparts; `flags` record
/// empirical <= bound checks and must all be true.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundReport {
    pub p: Exponent,
    pub q: Exponent,
    pub delta: f64,
    pub m: usize,
    pub epsilon: f64,
    pub b: f64,
    pub gamma: f64,
    pub theorem4_gap: f64,
    pub corollary2_gap: f64,
    pub corollary2_expected: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub empirical_gap: Option<f64>,
    pub flags: BTreeMap<String, bool>,
}

impl BoundReport {
    pub fn all_pass(&self) -> bool {
        self.flags.values().all(|&f| f)
    }
}

/// Per-sample squared-error loss: sum of squared entry differences.
fn sq_err(pred: &Tensor, target: &Tensor) -> f64 {
    pred.data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

/// ||a||_{p*} of a sample, all entries flattened.
pub fn sample_p_star_norm(a: &Tensor, p: f64) -> f64 {
    a.lp_norm(conjugate(p))
}

/// Posterior estimate for a trained model on a dataset: computes epsilon
/// (max_i sqrt ||h(a_i)-u_i||_2), B, gamma_{p,q}(h), the Theorem 4 and
/// Corollary 2 bounds, and a flag that the observed loss on this data
/// is below the expected-error RHS.
pub fn corollary2_posterior(
    model: &FnoModel,
    inputs: &[Tensor],
    targets: &[Tensor],
    p: f64,
    q: f64,
    delta: f64,
) -> Result<BoundReport, BoundError> {
    if inputs.is_empty() || inputs.len() != targets.len() {
        return Err(BoundError::NoSamples);
    }
    let m = inputs.len();
    let mut sample_norms = Vec::with_capacity(m);
    let mut epsilon: f64 = 0.0;
    let mut loss = 0.0;
    for (a, u) in inputs.iter().zip(targets) {
        let pred = model.forward(a)?;
        let sq = sq_err(&pred, u);
        loss += sq;
        // ||h(a)-u||_2 <= eps^2, so eps = sup (l2 norm)^(1/2) = sup sq^(1/4).
        epsilon = epsilon.max(sq.sqrt().sqrt());
        sample_norms.push(sample_p_star_norm(a, p));
    }
    loss /= m as f64;
    let b = sample_norms.iter().fold(0.0f64, |a, &x| a.max(x));
    let cfg = &model.config;
    let bi = BoundInputs {
        l: cfg.activation.lipschitz(),
        depth: cfg.depth,
        n: cfg.n(),
        h: cfg.d_v,
        d_u: cfg.d_u,
        p,
        q,
        sample_norms,
        epsilon,
        delta,
        b,
    };
    let gamma = capacity(model, p, q).gamma;
    let kind = cfg.layer_kind;
    let theorem4_gap = theorem4_gap_bound(&bi, gamma, kind)?;
    let corollary2_gap = corollary2_gap_bound(&bi, gamma, kind)?;
    let corollary2_expected = corollary2_expected_bound(&bi, gamma, kind)?;
    let mut flags = BTreeMap::new();
    flags.insert(
        "data_loss_le_expected_error".to_string(),
        loss <= corollary2_expected,
    );
    Ok(BoundReport {
        p: Exponent(p),
        q: Exponent(q),
        delta,
        m,
        epsilon,
        b,
        gamma,
        theorem4_gap,
        corollary2_gap,
        corollary2_expected,
        data_loss: Some(loss),
        empirical_gap: None,
        flags,
    })
}

// ---------------------------------------------------------------------------
// Empirical Rademacher complexity: Monte-Carlo lower estimate.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchStrategy {
    /// 500 random candidates projected onto the norm-ball boundary.
    Random,
    /// Random candidates plus projected gradient ascent refinement.
    Pga,
}

const N_CANDIDATES: usize = 500;
const PGA_STEPS: usize = 20;
const PGA_STEP_SIZE: f64 = 0.1;

fn random_params(config: &FnoConfig, rng: &mut ChaCha8Rng) -> FnoModel {
    let mut model = FnoModel::zeros(config.clone()).expect("valid config");
    let mut fill = |t: &mut Tensor| {
        for x in t.data_mut() {
            *x = rng.gen_range(-1.0..1.0);
        }
    };
    fill(&mut model.params.lift);
    fill(&mut model.params.proj);
    for l in &mut model.params.layers {
        if let Some(a) = &mut l.dense {
            fill(a);
        }
        if let Some(k) = &mut l.kernel {
            fill(k);
        }
        fill(&mut l.r_re);
        fill(&mut l.r_im);
    }
    model
}

/// Rescale each weight group so its norm hits the cap. With `clip_only`,
/// groups already inside the ball are left alone (exact projection for
/// absolutely homogeneous norms); otherwise they are pushed to the boundary.
fn project_to_class(model: &mut FnoModel, class: &HypothesisClassSpec, clip_only: bool) {
    let (p, q) = (class.p, class.q);
    let rescale = |t: f64, clip: bool| -> Option<f64> {
        if !t.is_finite() || (clip && t >= 1.0) {
            None
        } else {
            Some(t)
        }
    };
    match &class.caps {
        Caps::PerLayer { c_p, c_layers, c_q } => {
            let norm = norms::matrix_norm(&model.params.lift, p, q);
            if let Some(t) = rescale(c_p / norm, clip_only) {
                model.params.lift = model.params.lift.scale(t);
            }
            let cfg = model.config.clone();
            for (layer, cap) in model.params.layers.iter_mut().zip(c_layers) {
                let norm = norms::layer_norm(&cfg, layer, p, q);
                if let Some(t) = rescale(cap / norm, clip_only) {
                    if let Some(a) = &layer.dense {
                        layer.dense = Some(a.scale(t));
                    }
                    if let Some(k) = &layer.kernel {
                        layer.kernel = Some(k.scale(t));
                    }
                    layer.r_re = layer.r_re.scale(t);
                    layer.r_im = layer.r_im.scale(t);
                }
            }
            let norm = proj_norm_p_inf(model, p);
            if let Some(t) = rescale(c_q / norm, clip_only) {
                model.params.proj = model.params.proj.scale(t);
            }
        }
        Caps::Gamma(g) => {
            let gamma = capacity(model, p, q).gamma;
            let groups = (model.config.depth + 2) as f64;
            if let Some(t) = rescale((g / gamma).powf(1.0 / groups), clip_only) {
                model.params.scale_all(t);
            }
        }
    }
}

fn zero_caps(class: &HypothesisClassSpec) -> bool {
    match &class.caps {
        Caps::PerLayer { c_p, c_layers, c_q } => {
            *c_p == 0.0 || *c_q == 0.0 || c_layers.iter().any(|&c| c == 0.0)
        }
        Caps::Gamma(g) => *g == 0.0,
    }
}

/// Objective sum_i <eps_i, h(a_i)> and its parameter gradients.
fn class_objective(
    config: &FnoConfig,
    model: &FnoModel,
    samples: &[Tensor],
    eps: &[Tensor],
) -> (f64, FnoModel) {
    let shared = SharedParams::new(&model.params);
    let mut value = 0.0;
    let mut grads = FnoModel::zeros(config.clone()).expect("valid config");
    for (a, e) in samples.iter().zip(eps) {
        let mut tape = crate::autodiff::Tape::new();
        let (out, nodes) =
            forward_taped(&mut tape, config, &shared, a.clone()).expect("forward");
        let el = tape.leaf(e.clone());
        let prod = tape.mul(out, el).expect("shapes match");
        let root = tape.sum(prod);
        value += tape.value(root).data()[0];
        tape.backward(root).expect("scalar root");
        let acc = |dst: &mut Tensor, src: Option<&[f64]>| {
            if let Some(g) = src {
                for (d, s) in dst.data_mut().iter_mut().zip(g) {
                    *d += s;
                }
            }
        };
        acc(&mut grads.params.lift, tape.grad_data(nodes.lift));
        acc(&mut grads.params.proj, tape.grad_data(nodes.proj));
        for (gl, (lin, rr, ri)) in grads.params.layers.iter_mut().zip(&nodes.layers) {
            if let Some(w) = lin {
                let dst = gl.dense.as_mut().or(gl.kernel.as_mut()).expect("lin grad slot");
                acc(dst, tape.grad_data(*w));
            }
            acc(&mut gl.r_re, tape.grad_data(*rr));
            acc(&mut gl.r_im, tape.grad_data(*ri));
        }
    }
    (value, grads)
}

fn ascend(model: &mut FnoModel, grads: &FnoModel, step: f64) {
    let upd = |t: &mut Tensor, g: &Tensor| {
        for (x, d) in t.data_mut().iter_mut().zip(g.data()) {
            *x += step * d;
        }
    };
    upd(&mut model.params.lift, &grads.params.lift);
    upd(&mut model.params.proj, &grads.params.proj);
    for (l, g) in model.params.layers.iter_mut().zip(&grads.params.layers) {
        if let (Some(a), Some(ga)) = (&mut l.dense, &g.dense) {
            upd(a, ga);
        }
        if let (Some(k), Some(gk)) = (&mut l.kernel, &g.kernel) {
            upd(k, gk);
        }
        upd(&mut l.r_re, &g.r_re);
        upd(&mut l.r_im, &g.r_im);
    }
}

/// Monte-Carlo estimate of the empirical Rademacher complexity
/// E_eps[(1/m) sup_h sum_{i,x,j} eps_{ixj} h(a_i)_{xj}]: average over
/// `n_eps` sign draws of a search over class members. Candidate models
/// are shared across draws; each draw owns RNG stream (seed, draw index),
/// so the result is reproducible regardless of scheduling. The returned
/// value is a lower estimate of the true expectation-sup.
pub fn empirical_rademacher(
    class: &HypothesisClassSpec,
    samples: &[Tensor],
    n_eps: usize,
    search: SearchStrategy,
    seed: u64,
) -> Result<f64, BoundError> {
    if samples.is_empty() || n_eps == 0 {
        return Err(BoundError::NoSamples);
    }
    if zero_caps(class) {
        return Ok(0.0);
    }
    let m = samples.len();
    // Candidates on the cap boundary, generated and evaluated once.
    let candidates: Vec<FnoModel> = (0..N_CANDIDATES)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let mut model = random_params(&class.config, &mut rng);
            project_to_class(&mut model, class, false);
            model
        })
        .collect();
    let outputs: Vec<Vec<Tensor>> = candidates
        .par_iter()
        .map(|model| {
            samples
                .iter()
                .map(|a| model.forward(a).expect("finite candidate"))
                .collect()
        })
        .collect();
    let per_draw: Vec<f64> = (0..n_eps)
        .into_par_iter()
        .map(|d| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream((N_CANDIDATES + d) as u64);
            let eps: Vec<Tensor> = samples
                .iter()
                .map(|_| {
                    let mut shape = class.config.grid.clone();
                    shape.push(class.config.d_u);
                    let n: usize = shape.iter().product();
                    Tensor::from_vec(
                        &shape,
                        (0..n)
                            .map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 })
                            .collect(),
                    )
                    .unwrap()
                })
                .collect();
            let score = |outs: &[Tensor]| -> f64 {
                outs.iter()
                    .zip(&eps)
                    .map(|(o, e)| o.data().iter().zip(e.data()).map(|(a, b)| a * b).sum::<f64>())
                    .sum()
            };
            let mut best = 0.0f64;
            let mut best_idx = 0;
            for (c, outs) in outputs.iter().enumerate() {
                // The class is sign-symmetric (negating Q keeps all norms),
                // so each candidate also stands in for its negation.
                let s = score(outs).abs();
                if s > best {
                    best = s;
                    best_idx = c;
                }
            }
            if search == SearchStrategy::Pga {
                let mut model = candidates[best_idx].clone();
                if score(&outputs[best_idx]) < 0.0 {
                    model.params.proj = model.params.proj.scale(-1.0);
                }
                for _ in 0..PGA_STEPS {
                    let (_, grads) = class_objective(&class.config, &model, samples, &eps);
                    ascend(&mut model, &grads, PGA_STEP_SIZE);
                    project_to_class(&mut model, class, true);
                }
                let refined: Vec<Tensor> = samples
                    .iter()
                    .map(|a| model.forward(a).expect("finite model"))
                    .collect();
                best = best.max(score(&refined));
            }
            best / m as f64
        })
        .collect();
    Ok(per_draw.iter().sum::<f64>() / n_eps as f64)
}
