//! Full-batch Adam training on the Definition-3 loss
//! L_S = (1/m) sum_i ||h(a_i) - u_i||^2 (squared entries summed per
//! sample, averaged over samples), with L2 weight decay added to the
//! gradient of every weight tensor, including both parts of R.

use crate::autodiff::Tape;
use crate::dataset::Dataset;
use crate::fno::{forward_taped, FnoConfig, FnoError, FnoModel, FnoParams, LayerKind, SharedParams};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("dataset is empty")]
    Empty,
    #[error("invalid train config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Fno(#[from] FnoError),
    #[error(transparent)]
    Ad(#[from] crate::autodiff::AdError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 500,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), TrainError> {
        if !(self.lr > 0.0) {
            return Err(TrainError::BadConfig(format!("lr {}", self.lr)));
        }
        if self.weight_decay < 0.0 {
            return Err(TrainError::BadConfig(format!(
                "weight decay {}",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

/// Squared-error loss of one sample: sum over all components.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> f64 {
    debug_assert_eq!(pred.shape(), target.shape());
    pred.data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

/// Mean over the dataset of the per-sample squared error.
pub fn dataset_loss(model: &FnoModel, data: &Dataset) -> Result<f64, TrainError> {
    if data.inputs.is_empty() {
        return Err(TrainError::Empty);
    }
    let mut acc = 0.0;
    for (a, u) in data.inputs.iter().zip(&data.targets) {
        acc += mse_loss(&model.forward(a)?, u);
    }
    Ok(acc / data.m() as f64)
}

/// Uniform init scaled by the fan-in of each weight: P by d_a, Q and the
/// spectral weights by d_v, the local kernels by their window size.
/// Tensor t uses RNG stream (seed, t's index in the named order).
pub fn init_params(config: &FnoConfig, seed: u64) -> FnoParams {
    let mut params = FnoParams::zeros(config);
    let mut stream = 0u64;
    let mut fill = |t: &mut Tensor, scale: f64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        stream += 1;
        for x in t.data_mut() {
            *x = rng.gen_range(-scale..scale);
        }
    };
    let dv = config.d_v as f64;
    fill(&mut params.lift, 1.0 / (config.d_a as f64).sqrt());
    for layer in &mut params.layers {
        if let Some(a) = &mut layer.dense {
            let n = config.n() as f64;
            fill(a, 1.0 / (n * dv).sqrt());
        }
        if let Some(k) = &mut layer.kernel {
            let c: f64 = config.kernel.iter().product::<usize>() as f64;
            fill(k, 1.0 / (c * dv).sqrt());
        }
        fill(&mut layer.r_re, 1.0 / dv);
        fill(&mut layer.r_im, 1.0 / dv);
    }
    fill(&mut params.proj, 1.0 / dv.sqrt());
    params
}

/// One flat Adam state slot per weight tensor.
struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: usize,
}

fn tensors_mut(params: &mut FnoParams) -> Vec<&mut Tensor> {
    let mut out = vec![&mut params.lift];
    for l in &mut params.layers {
        if let Some(a) = &mut l.dense {
            out.push(a);
        }
        if let Some(k) = &mut l.kernel {
            out.push(k);
        }
        out.push(&mut l.r_re);
        out.push(&mut l.r_im);
    }
    out.push(&mut params.proj);
    out
}

/// Full-batch gradient of the dataset loss, accumulated in sample order.
fn loss_gradients(model: &FnoModel, data: &Dataset) -> Result<(f64, Vec<Vec<f64>>), TrainError> {
    let shared = SharedParams::new(&model.params);
    let config = &model.config;
    let m = data.m() as f64;
    let mut loss = 0.0;
    let mut grads: Vec<Vec<f64>> = {
        let mut probe = FnoParams::zeros(config);
        tensors_mut(&mut probe)
            .iter()
            .map(|t| vec![0.0; t.data().len()])
            .collect()
    };
    for (a, u) in data.inputs.iter().zip(&data.targets) {
        let mut tape = Tape::new();
        let (out, nodes) = forward_taped(&mut tape, config, &shared, a.clone())?;
        let target = tape.leaf(u.clone());
        let diff = tape.sub(out, target)?;
        let sq = tape.mul(diff, diff)?;
        let summed = tape.sum(sq);
        let root = tape.scale(summed, 1.0 / m);
        loss += tape.value(root).data()[0];
        tape.backward(root)?;
        let mut ids = vec![nodes.lift];
        for (lin, rr, ri) in &nodes.layers {
            if let Some(w) = lin {
                ids.push(*w);
            }
            ids.push(*rr);
            ids.push(*ri);
        }
        ids.push(nodes.proj);
        for (slot, id) in grads.iter_mut().zip(ids) {
            if let Some(g) = tape.grad_data(id) {
                for (d, s) in slot.iter_mut().zip(g) {
                    *d += s;
                }
            }
        }
    }
    Ok((loss, grads))
}

/// Train in place; returns the loss history (one entry per epoch,
/// evaluated before that epoch's update). Deterministic given the
/// dataset and config.
pub fn train(
    model: &mut FnoModel,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<Vec<f64>, TrainError> {
    cfg.validate()?;
    if data.inputs.is_empty() {
        return Err(TrainError::Empty);
    }
    let mut state = AdamState {
        m: Vec::new(),
        v: Vec::new(),
        t: 0,
    };
    {
        let tensors = tensors_mut(&mut model.params);
        state.m = tensors.iter().map(|t| vec![0.0; t.data().len()]).collect();
        state.v = tensors.iter().map(|t| vec![0.0; t.data().len()]).collect();
    }
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let (loss, mut grads) = loss_gradients(model, data)?;
        // Adam's bounded steps can keep a runaway loss finite for a long
        // time; treat an astronomical loss as divergence as well.
        if !loss.is_finite() || loss > 1e30 {
            return Err(TrainError::Diverged { epoch, loss });
        }
        history.push(loss);
        state.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(state.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(state.t as i32);
        let tensors = tensors_mut(&mut model.params);
        for (i, tensor) in tensors.into_iter().enumerate() {
            let g = &mut grads[i];
            for (gx, &x) in g.iter_mut().zip(tensor.data().iter()) {
                *gx += cfg.weight_decay * x;
            }
            let (ms, vs) = (&mut state.m[i], &mut state.v[i]);
            for j in 0..g.len() {
                ms[j] = cfg.beta1 * ms[j] + (1.0 - cfg.beta1) * g[j];
                vs[j] = cfg.beta2 * vs[j] + (1.0 - cfg.beta2) * g[j] * g[j];
                let mhat = ms[j] / bc1;
                let vhat = vs[j] / bc2;
                tensor.data_mut()[j] -= cfg.lr * mhat / (vhat.sqrt() + cfg.adam_eps);
            }
        }
    }
    Ok(history)
}

/// Fresh model with `init_params` weights.
pub fn init_model(config: FnoConfig, seed: u64) -> Result<FnoModel, FnoError> {
    config.validate()?;
    let params = init_params(&config, seed);
    Ok(FnoModel { config, params })
}

#[allow(unused)]
fn _kinds_are_covered(k: LayerKind) {}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::Activation;
    use crate::burgers::BurgersSpec;
    use crate::grf::{grf_sample, GrfSpec};
    use rand::rngs::StdRng;

    fn identity_dataset(n: usize, m: usize, seed: u64) -> Dataset {
        let fields = grf_sample(&GrfSpec::new(n, seed), m).unwrap();
        let cols: Vec<Tensor> = fields
            .into_iter()
            .map(|f| f.reshape(&[n, 1]).unwrap())
            .collect();
        Dataset {
            inputs: cols.clone(),
            targets: cols,
            grf: GrfSpec::new(n, seed),
            burgers: BurgersSpec::default(),
            seed,
        }
    }

    fn config(n: usize, k_max: usize, d_v: usize, kind: LayerKind) -> FnoConfig {
        FnoConfig {
            d: 1,
            grid: vec![n],
            d_a: 1,
            d_v,
            d_u: 1,
            depth: 1,
            k_max: vec![k_max],
            layer_kind: kind,
            kernel: if kind == LayerKind::Cnn { vec![3] } else { vec![] },
            activation: Activation::Gelu,
        }
    }

    #[test]
    fn mse_loss_trivia() {
        let a = Tensor::full(&[4, 1], 2.0);
        assert_eq!(mse_loss(&a, &a), 0.0);
        let b = Tensor::full(&[4, 1], 1.0);
        assert_eq!(mse_loss(&a, &b), 4.0);
    }

    #[test]
    fn mse_loss_matches_nested_loop_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = StdRng::seed_from_u64(2);
        let p = Tensor::from_vec(&[6, 2], (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .unwrap();
        let t = Tensor::from_vec(&[6, 2], (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .unwrap();
        let mut want = 0.0;
        for x in 0..6 {
            for j in 0..2 {
                let d = p.data()[x * 2 + j] - t.data()[x * 2 + j];
                want += d * d;
            }
        }
        let got = mse_loss(&p, &t);
        assert!((got - want).abs() / want < 1e-12);
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let model = init_model(config(8, 4, 2, LayerKind::SpectralOnly), 0).unwrap();
        let empty = Dataset {
            inputs: vec![],
            targets: vec![],
            grf: GrfSpec::new(8, 0),
            burgers: BurgersSpec::default(),
            seed: 0,
        };
        assert!(matches!(
            dataset_loss(&model, &empty),
            Err(TrainError::Empty)
        ));
    }

    #[test]
    fn zero_epochs_leaves_model_unchanged() {
        let data = identity_dataset(8, 2, 3);
        let mut model = init_model(config(8, 4, 2, LayerKind::Cnn), 1).unwrap();
        let before = model.clone();
        let cfg = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        let history = train(&mut model, &data, &cfg).unwrap();
        assert!(history.is_empty());
        assert_eq!(model, before);
    }

    #[test]
    fn learns_the_identity_map() {
        let n = 16;
        let data = identity_dataset(n, 8, 7);
        // ReLU can represent the identity exactly (x = relu(x) - relu(-x)).
        let mut c = config(n, 16, 8, LayerKind::SpectralOnly);
        c.activation = Activation::Relu;
        let mut model = init_model(c, 5).unwrap();
        let cfg = TrainConfig {
            epochs: 500,
            lr: 5e-3,
            ..Default::default()
        };
        let history = train(&mut model, &data, &cfg).unwrap();
        let final_loss = dataset_loss(&model, &data).unwrap();
        assert!(
            final_loss < 1e-3,
            "final loss {final_loss}, first {}",
            history[0]
        );
        assert!(final_loss < history[0]);
    }

    #[test]
    fn fixed_seed_reproduces_history_bit_for_bit() {
        let data = identity_dataset(8, 3, 11);
        let run = || {
            let mut model = init_model(config(8, 4, 4, LayerKind::Cnn), 9).unwrap();
            let cfg = TrainConfig {
                epochs: 20,
                weight_decay: 0.02,
                ..Default::default()
            };
            (train(&mut model, &data, &cfg).unwrap(), model)
        };
        let (h1, m1) = run();
        let (h2, m2) = run();
        assert_eq!(h1.len(), h2.len());
        for (a, b) in h1.iter().zip(&h2) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(m1, m2);
    }

    #[test]
    fn weight_decay_shrinks_the_weights() {
        let data = identity_dataset(8, 3, 13);
        let run = |wd: f64| {
            let mut model = init_model(config(8, 4, 4, LayerKind::SpectralOnly), 9).unwrap();
            let cfg = TrainConfig {
                epochs: 100,
                weight_decay: wd,
                ..Default::default()
            };
            train(&mut model, &data, &cfg).unwrap();
            crate::norms::capacity(&model, 2.0, 2.0).gamma
        };
        assert!(run(0.5) < run(0.0));
    }

    #[test]
    fn divergence_reports_the_epoch() {
        let data = identity_dataset(8, 2, 17);
        let mut model = init_model(config(8, 4, 2, LayerKind::SpectralOnly), 1).unwrap();
        let cfg = TrainConfig {
            epochs: 2000,
            lr: 1e5,
            ..Default::default()
        };
        match train(&mut model, &data, &cfg) {
            Err(TrainError::Diverged { epoch, .. }) => assert!(epoch > 0),
            Ok(h) => panic!("expected divergence, final loss {:?}", h.last()),
            Err(e) => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn bad_config_is_rejected() {
        let cfg = TrainConfig {
            lr: 0.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
