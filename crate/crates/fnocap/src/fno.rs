//! FNO architecture: configuration, weights, forward pass (plain and
//! taped), and the binary model file format.

use crate::activation::Activation;
use crate::autodiff::{AdError, NodeId, Tape};
use crate::ops;
use crate::tensor::{Tensor, TensorError};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;
use std::rc::Rc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FnoError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("input shape {got:?} does not match expected {expected:?}")]
    InputShape { got: Vec<usize>, expected: Vec<usize> },
    #[error("non-finite weight in tensor {0}")]
    NonFiniteWeight(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Ad(#[from] AdError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad model file: {0}")]
    BadFile(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    /// Full positional linear map A per layer.
    Dense,
    /// Convolution kernel K per layer.
    Cnn,
    /// Spectral branch only; the non-spectral term is dropped.
    SpectralOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FnoConfig {
    /// Spatial rank d.
    pub d: usize,
    /// Grid resolution N_1..N_d.
    pub grid: Vec<usize>,
    pub d_a: usize,
    /// Channel width H.
    pub d_v: usize,
    pub d_u: usize,
    /// Fourier-layer depth D.
    pub depth: usize,
    /// Retained modes per axis; the mode box is 0 <= k_j < k_max_j.
    pub k_max: Vec<usize>,
    pub layer_kind: LayerKind,
    /// Kernel sizes c_1..c_d (cnn only; all odd).
    pub kernel: Vec<usize>,
    pub activation: Activation,
}

impl FnoConfig {
    /// Total grid size N = prod N_j.
    pub fn n(&self) -> usize {
        self.grid.iter().product()
    }

    pub fn validate(&self) -> Result<(), FnoError> {
        let bad = |m: String| Err(FnoError::InvalidConfig(m));
        if self.d == 0 || self.grid.len() != self.d || self.k_max.len() != self.d {
            return bad(format!(
                "d={} with grid {:?} and k_max {:?}",
                self.d, self.grid, self.k_max
            ));
        }
        if self.grid.iter().any(|&n| n == 0) {
            return bad("zero grid axis".into());
        }
        if self.depth == 0 || self.d_a == 0 || self.d_v == 0 || self.d_u == 0 {
            return bad("all dims and depth must be >= 1".into());
        }
        for (j, (&k, &n)) in self.k_max.iter().zip(&self.grid).enumerate() {
            if k == 0 || k > n {
                return bad(format!("k_max[{j}]={k} outside 1..={n}"));
            }
        }
        if self.layer_kind == LayerKind::Cnn {
            if self.kernel.len() != self.d {
                return bad(format!("kernel {:?} for d={}", self.kernel, self.d));
            }
            for (j, (&c, &n)) in self.kernel.iter().zip(&self.grid).enumerate() {
                if c % 2 == 0 || c > n {
                    return bad(format!("kernel[{j}]={c} must be odd and <= {n}"));
                }
            }
        }
        Ok(())
    }

    pub fn input_shape(&self) -> Vec<usize> {
        let mut s = self.grid.clone();
        s.push(self.d_a);
        s
    }

    pub fn r_shape(&self) -> Vec<usize> {
        let mut s = self.k_max.clone();
        s.push(self.d_v);
        s.push(self.d_v);
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    /// A: [N, N, d_v, d_v] (dense kind only).
    pub dense: Option<Tensor>,
    /// K: [c_1..c_d, d_v, d_v] (cnn kind only).
    pub kernel: Option<Tensor>,
    /// Complex spectral weights R = r_re + i r_im: [k_max.., d_v, d_v].
    pub r_re: Tensor,
    pub r_im: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FnoParams {
    /// Lifting P: [d_a, d_v].
    pub lift: Tensor,
    pub layers: Vec<LayerParams>,
    /// Projection Q: [d_v, d_u].
    pub proj: Tensor,
}

impl FnoParams {
    pub fn zeros(config: &FnoConfig) -> Self {
        let n = config.n();
        let layers = (0..config.depth)
            .map(|_| LayerParams {
                dense: match config.layer_kind {
                    LayerKind::Dense => Some(Tensor::zeros(&[n, n, config.d_v, config.d_v])),
                    _ => None,
                },
                kernel: match config.layer_kind {
                    LayerKind::Cnn => {
                        let mut s = config.kernel.clone();
                        s.push(config.d_v);
                        s.push(config.d_v);
                        Some(Tensor::zeros(&s))
                    }
                    _ => None,
                },
                r_re: Tensor::zeros(&config.r_shape()),
                r_im: Tensor::zeros(&config.r_shape()),
            })
            .collect();
        FnoParams {
            lift: Tensor::zeros(&[config.d_a, config.d_v]),
            layers,
            proj: Tensor::zeros(&[config.d_v, config.d_u]),
        }
    }

    pub fn check_finite(&self) -> Result<(), FnoError> {
        let named = self.named_tensors();
        for (name, t) in named {
            t.check_finite()
                .map_err(|_| FnoError::NonFiniteWeight(name))?;
        }
        Ok(())
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("P".to_string(), &self.lift)];
        for (i, l) in self.layers.iter().enumerate() {
            if let Some(a) = &l.dense {
                out.push((format!("layer{i}.A"), a));
            }
            if let Some(k) = &l.kernel {
                out.push((format!("layer{i}.K"), k));
            }
            out.push((format!("layer{i}.R_re"), &l.r_re));
            out.push((format!("layer{i}.R_im"), &l.r_im));
        }
        out.push(("Q".to_string(), &self.proj));
        out
    }

    /// Scale every weight tensor by `t` (all layers and lift/projection).
    pub fn scale_all(&mut self, t: f64) {
        self.lift = self.lift.scale(t);
        self.proj = self.proj.scale(t);
        for l in &mut self.layers {
            if let Some(a) = &l.dense {
                l.dense = Some(a.scale(t));
            }
            if let Some(k) = &l.kernel {
                l.kernel = Some(k.scale(t));
            }
            l.r_re = l.r_re.scale(t);
            l.r_im = l.r_im.scale(t);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FnoModel {
    pub config: FnoConfig,
    pub params: FnoParams,
}

impl FnoModel {
    pub fn zeros(config: FnoConfig) -> Result<Self, FnoError> {
        config.validate()?;
        let params = FnoParams::zeros(&config);
        Ok(FnoModel { config, params })
    }

    fn check_input(&self, a: &Tensor) -> Result<(), FnoError> {
        let expected = self.config.input_shape();
        if a.shape() != expected.as_slice() || a.is_complex() {
            return Err(FnoError::InputShape {
                got: a.shape().to_vec(),
                expected,
            });
        }
        Ok(())
    }

    /// Forward pass: a [grid.., d_a] -> u [grid.., d_u].
    pub fn forward(&self, a: &Tensor) -> Result<Tensor, FnoError> {
        self.check_input(a)?;
        self.params.check_finite()?;
        let cfg = &self.config;
        let n = cfg.n();
        let (dv, du) = (cfg.d_v, cfg.d_u);
        let mut v = ops::channel_matmul(a.data(), n, cfg.d_a, self.params.lift.data(), dv);
        for layer in &self.params.layers {
            let (spec, _) = ops::spectral_apply(
                layer.r_re.data(),
                layer.r_im.data(),
                &cfg.k_max,
                &v,
                &cfg.grid,
                dv,
                dv,
            );
            let mut pre = spec;
            match cfg.layer_kind {
                LayerKind::Dense => {
                    let lin =
                        ops::dense_apply(layer.dense.as_ref().unwrap().data(), &v, n, dv, dv);
                    for (p, l) in pre.iter_mut().zip(lin) {
                        *p += l;
                    }
                }
                LayerKind::Cnn => {
                    let lin = ops::cnn_apply(
                        layer.kernel.as_ref().unwrap().data(),
                        &cfg.kernel,
                        &v,
                        &cfg.grid,
                        dv,
                        dv,
                    );
                    for (p, l) in pre.iter_mut().zip(lin) {
                        *p += l;
                    }
                }
                LayerKind::SpectralOnly => {}
            }
            for x in pre.iter_mut() {
                *x = cfg.activation.apply(*x);
            }
            v = pre;
        }
        let u = ops::channel_matmul(&v, n, dv, self.params.proj.data(), du);
        let mut shape = cfg.grid.clone();
        shape.push(du);
        Ok(Tensor::from_vec(&shape, u)?)
    }
}

/// Tape node ids of the model parameters, for reading gradients back.
pub struct ParamNodes {
    pub lift: NodeId,
    /// Per layer: (dense-or-kernel weight if present, r_re, r_im).
    pub layers: Vec<(Option<NodeId>, NodeId, NodeId)>,
    pub proj: NodeId,
}

/// Shared parameter tensors, cheap to re-insert into per-sample tapes.
#[derive(Clone)]
pub struct SharedParams {
    pub lift: Rc<Tensor>,
    pub layers: Vec<(Option<Rc<Tensor>>, Rc<Tensor>, Rc<Tensor>)>,
    pub proj: Rc<Tensor>,
}

impl SharedParams {
    pub fn new(params: &FnoParams) -> Self {
        SharedParams {
            lift: Rc::new(params.lift.clone()),
            layers: params
                .layers
                .iter()
                .map(|l| {
                    let lin = l
                        .dense
                        .as_ref()
                        .or(l.kernel.as_ref())
                        .map(|t| Rc::new(t.clone()));
                    (lin, Rc::new(l.r_re.clone()), Rc::new(l.r_im.clone()))
                })
                .collect(),
            proj: Rc::new(params.proj.clone()),
        }
    }
}

/// Record the forward pass on `tape`; returns (output node, param nodes).
pub fn forward_taped(
    tape: &mut Tape,
    config: &FnoConfig,
    params: &SharedParams,
    input: Tensor,
) -> Result<(NodeId, ParamNodes), FnoError> {
    let a = tape.leaf(input);
    let lift = tape.leaf_shared(params.lift.clone());
    let proj = tape.leaf_shared(params.proj.clone());
    let mut layer_nodes = Vec::new();
    let mut v = tape.channel_matmul(a, lift)?;
    for (lin, r_re, r_im) in &params.layers {
        let rr = tape.leaf_shared(r_re.clone());
        let ri = tape.leaf_shared(r_im.clone());
        let spec = tape.spectral_apply(rr, ri, v)?;
        let (lin_node, pre) = match config.layer_kind {
            LayerKind::Dense => {
                let w = tape.leaf_shared(lin.as_ref().unwrap().clone());
                let l = tape.dense_apply(w, v)?;
                (Some(w), tape.add(spec, l)?)
            }
            LayerKind::Cnn => {
                let w = tape.leaf_shared(lin.as_ref().unwrap().clone());
                let l = tape.cnn_apply(w, v)?;
                (Some(w), tape.add(spec, l)?)
            }
            LayerKind::SpectralOnly => (None, spec),
        };
        v = tape.activation(pre, config.activation);
        layer_nodes.push((lin_node, rr, ri));
    }
    let out = tape.channel_matmul(v, proj)?;
    Ok((
        out,
        ParamNodes {
            lift,
            layers: layer_nodes,
            proj,
        },
    ))
}

// ---------------------------------------------------------------------------
// Model file format: one UTF-8 JSON header line (config + tensor manifest)
// followed by a raw little-endian f64 payload. Offsets are in bytes from
// the start of the payload.

pub const MODEL_MAGIC: &str = "FNOCAP-MODEL v1";

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    dtype: crate::tensor::Dtype,
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    magic: String,
    config: FnoConfig,
    tensors: Vec<TensorEntry>,
}

pub fn save_model<W: Write>(model: &FnoModel, w: &mut W) -> Result<(), FnoError> {
    let named = model.params.named_tensors();
    let mut entries = Vec::new();
    let mut offset = 0u64;
    for (name, t) in &named {
        entries.push(TensorEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            dtype: t.dtype(),
            offset,
        });
        offset += (t.data().len() * 8) as u64;
    }
    let header = ModelHeader {
        magic: MODEL_MAGIC.to_string(),
        config: model.config.clone(),
        tensors: entries,
    };
    let mut line = serde_json::to_string(&header)?;
    line.push('\n');
    w.write_all(line.as_bytes())?;
    for (_, t) in &named {
        for x in t.data() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load_model<R: Read>(r: &mut R) -> Result<FnoModel, FnoError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| FnoError::BadFile("missing header line".into()))?;
    let header: ModelHeader = serde_json::from_slice(&bytes[..nl])?;
    if header.magic != MODEL_MAGIC {
        return Err(FnoError::BadFile(format!("bad magic {:?}", header.magic)));
    }
    header.config.validate()?;
    let payload = &bytes[nl + 1..];
    let read_tensor = |e: &TensorEntry| -> Result<Tensor, FnoError> {
        let count: usize = e.shape.iter().product::<usize>()
            * if e.dtype == crate::tensor::Dtype::Complex {
                2
            } else {
                1
            };
        let start = e.offset as usize;
        let end = start + count * 8;
        if end > payload.len() {
            return Err(FnoError::BadFile(format!("tensor {} out of bounds", e.name)));
        }
        let data: Vec<f64> = payload[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(match e.dtype {
            crate::tensor::Dtype::Real => Tensor::from_vec(&e.shape, data)?,
            crate::tensor::Dtype::Complex => Tensor::from_complex_vec(&e.shape, data)?,
        })
    };
    let mut params = FnoParams::zeros(&header.config);
    for e in &header.tensors {
        let t = read_tensor(e)?;
        if e.name == "P" {
            params.lift = t;
        } else if e.name == "Q" {
            params.proj = t;
        } else if let Some(rest) = e.name.strip_prefix("layer") {
            let (idx, field) = rest
                .split_once('.')
                .ok_or_else(|| FnoError::BadFile(format!("bad tensor name {}", e.name)))?;
            let i: usize = idx
                .parse()
                .map_err(|_| FnoError::BadFile(format!("bad layer index in {}", e.name)))?;
            if i >= params.layers.len() {
                return Err(FnoError::BadFile(format!("layer index {i} out of range")));
            }
            match field {
                "A" => params.layers[i].dense = Some(t),
                "K" => params.layers[i].kernel = Some(t),
                "R_re" => params.layers[i].r_re = t,
                "R_im" => params.layers[i].r_im = t,
                _ => return Err(FnoError::BadFile(format!("unknown tensor {}", e.name))),
            }
        } else {
            return Err(FnoError::BadFile(format!("unknown tensor {}", e.name)));
        }
    }
    Ok(FnoModel {
        config: header.config,
        params,
    })
}

pub fn save_model_file(model: &FnoModel, path: &Path) -> Result<(), FnoError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    save_model(model, &mut f)
}

pub fn load_model_file(path: &Path) -> Result<FnoModel, FnoError> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    load_model(&mut f)
}
