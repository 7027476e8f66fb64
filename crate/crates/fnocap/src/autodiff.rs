//! Reverse-mode automatic differentiation on a tape of tensor ops.
//!
//! A `Tape` owns the computation graph; node ids are append-ordered, so
//! reverse id order is a reverse topological order and backward visits
//! each node exactly once. A tape is confined to one thread; independent
//! tapes may run in parallel.

use crate::activation::Activation;
use crate::ops;
use crate::tensor::{Tensor, TensorError};
use std::rc::Rc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AdError {
    #[error("backward root must be scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("backward has not been run")]
    NoGradients,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Sum(NodeId),
    Activation(NodeId, Activation),
    ChannelMatmul {
        x: NodeId,
        w: NodeId,
    },
    DenseApply {
        a: NodeId,
        v: NodeId,
    },
    CnnApply {
        kernel: NodeId,
        v: NodeId,
    },
    Spectral {
        r_re: NodeId,
        r_im: NodeId,
        v: NodeId,
        /// FFT of the input saved by the forward pass.
        vhat: Vec<f64>,
        kmax: Vec<usize>,
    },
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

fn shape_err(op: &'static str, detail: String) -> AdError {
    AdError::Shape { op, detail }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.push_rc(Rc::new(value), op)
    }

    fn push_rc(&mut self, value: Rc<Tensor>, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    /// Leaf sharing an existing tensor allocation (parameters reused
    /// across per-sample tapes).
    pub fn leaf_shared(&mut self, value: Rc<Tensor>) -> NodeId {
        self.push_rc(value, Op::Leaf)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AdError> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AdError> {
        let v = self.value(a).sub(self.value(b))?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AdError> {
        let v = self.value(a).mul(self.value(b))?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: NodeId, t: f64) -> NodeId {
        let v = self.value(a).scale(t);
        self.push(v, Op::Scale(a, t))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    pub fn activation(&mut self, a: NodeId, act: Activation) -> NodeId {
        let x = self.value(a);
        let data = x.data().iter().map(|&v| act.apply(v)).collect();
        let v = Tensor::from_vec(x.shape(), data).expect("same shape");
        self.push(v, Op::Activation(a, act))
    }

    /// x: [spatial..., cin], w: [cin, cout] -> [spatial..., cout].
    pub fn channel_matmul(&mut self, x: NodeId, w: NodeId) -> Result<NodeId, AdError> {
        let (xs, ws) = (self.value(x).shape(), self.value(w).shape());
        if ws.len() != 2 || xs.is_empty() || xs[xs.len() - 1] != ws[0] {
            return Err(shape_err("channel_matmul", format!("x {xs:?}, w {ws:?}")));
        }
        let cin = ws[0];
        let cout = ws[1];
        let n_spatial: usize = xs[..xs.len() - 1].iter().product();
        let out = ops::channel_matmul(self.value(x).data(), n_spatial, cin, self.value(w).data(), cout);
        let mut shape = xs[..xs.len() - 1].to_vec();
        shape.push(cout);
        Ok(self.push(Tensor::from_vec(&shape, out)?, Op::ChannelMatmul { x, w }))
    }

    /// a: [N, N, cin, cout], v: [spatial..., cin] with N = prod(spatial)
    /// -> [spatial..., cout]. Positions are addressed flat, row-major.
    pub fn dense_apply(&mut self, a: NodeId, v: NodeId) -> Result<NodeId, AdError> {
        let (ash, vs) = (self.value(a).shape(), self.value(v).shape());
        let n: usize = vs[..vs.len() - 1].iter().product();
        let cin = vs[vs.len() - 1];
        if ash.len() != 4 || ash[0] != n || ash[1] != n || ash[2] != cin {
            return Err(shape_err("dense_apply", format!("a {ash:?}, v {vs:?}")));
        }
        let cout = ash[3];
        let out = ops::dense_apply(self.value(a).data(), self.value(v).data(), n, cin, cout);
        let mut shape = vs[..vs.len() - 1].to_vec();
        shape.push(cout);
        Ok(self.push(Tensor::from_vec(&shape, out)?, Op::DenseApply { a, v }))
    }

    /// kernel: [c..., cin, cout], v: [spatial..., cin] -> [spatial..., cout].
    pub fn cnn_apply(&mut self, kernel: NodeId, v: NodeId) -> Result<NodeId, AdError> {
        let (ks, vs) = (self.value(kernel).shape(), self.value(v).shape());
        let d = vs.len() - 1;
        if ks.len() != d + 2 || ks[d] != vs[d] {
            return Err(shape_err("cnn_apply", format!("kernel {ks:?}, v {vs:?}")));
        }
        if ks[..d].iter().any(|&c| c % 2 == 0) {
            return Err(shape_err("cnn_apply", format!("even kernel size in {ks:?}")));
        }
        let (cin, cout) = (ks[d], ks[d + 1]);
        let spatial = &vs[..d];
        let out = ops::cnn_apply(
            self.value(kernel).data(),
            &ks[..d].to_vec(),
            self.value(v).data(),
            spatial,
            cin,
            cout,
        );
        let mut shape = spatial.to_vec();
        shape.push(cout);
        Ok(self.push(Tensor::from_vec(&shape, out)?, Op::CnnApply { kernel, v }))
    }

    /// Spectral branch with complex weights r_re + i r_im of shape
    /// [k_max..., cin, cout]; v: [spatial..., cin] -> real [spatial..., cout].
    pub fn spectral_apply(
        &mut self,
        r_re: NodeId,
        r_im: NodeId,
        v: NodeId,
    ) -> Result<NodeId, AdError> {
        let (rs, vs) = (self.value(r_re).shape().to_vec(), self.value(v).shape().to_vec());
        let d = vs.len() - 1;
        if rs.len() != d + 2
            || self.value(r_im).shape() != rs.as_slice()
            || rs[d] != vs[d]
            || rs[..d].iter().zip(&vs[..d]).any(|(&k, &n)| k > n)
        {
            return Err(shape_err("spectral_apply", format!("r {rs:?}, v {vs:?}")));
        }
        let (cin, cout) = (rs[d], rs[d + 1]);
        let kmax = rs[..d].to_vec();
        let spatial = vs[..d].to_vec();
        let (out, vhat) = ops::spectral_apply(
            self.value(r_re).data(),
            self.value(r_im).data(),
            &kmax,
            self.value(v).data(),
            &spatial,
            cin,
            cout,
        );
        let mut shape = spatial;
        shape.push(cout);
        Ok(self.push(
            Tensor::from_vec(&shape, out)?,
            Op::Spectral {
                r_re,
                r_im,
                v,
                vhat,
                kmax,
            },
        ))
    }

    fn accumulate(grads: &mut [Option<Vec<f64>>], id: NodeId, delta: Vec<f64>) {
        match &mut grads[id.0] {
            Some(g) => {
                for (a, b) in g.iter_mut().zip(delta) {
                    *a += b;
                }
            }
            slot => *slot = Some(delta),
        }
    }

    /// Populates gradients of every node reachable from the scalar `root`.
    pub fn backward(&mut self, root: NodeId) -> Result<(), AdError> {
        if self.value(root).len() != 1 {
            return Err(AdError::NonScalarRoot(self.value(root).shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![1.0]);
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            match &self.nodes[idx].op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    Self::accumulate(&mut grads, a, g.clone());
                    Self::accumulate(&mut grads, b, g.clone());
                }
                Op::Sub(a, b) => {
                    let (a, b) = (*a, *b);
                    Self::accumulate(&mut grads, a, g.clone());
                    Self::accumulate(&mut grads, b, g.iter().map(|x| -x).collect());
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(self.nodes[b.0].value.data())
                        .map(|(x, y)| x * y)
                        .collect();
                    let gb: Vec<f64> = g
                        .iter()
                        .zip(self.nodes[a.0].value.data())
                        .map(|(x, y)| x * y)
                        .collect();
                    Self::accumulate(&mut grads, a, ga);
                    Self::accumulate(&mut grads, b, gb);
                }
                Op::Scale(a, t) => {
                    let (a, t) = (*a, *t);
                    Self::accumulate(&mut grads, a, g.iter().map(|x| x * t).collect());
                }
                Op::Sum(a) => {
                    let a = *a;
                    let n = self.nodes[a.0].value.len();
                    Self::accumulate(&mut grads, a, vec![g[0]; n]);
                }
                Op::Activation(a, act) => {
                    let (a, act) = (*a, *act);
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(self.nodes[a.0].value.data())
                        .map(|(gv, &xv)| gv * act.derivative(xv))
                        .collect();
                    Self::accumulate(&mut grads, a, ga);
                }
                Op::ChannelMatmul { x, w } => {
                    let (x, w) = (*x, *w);
                    let xs = self.nodes[x.0].value.shape();
                    let ws = self.nodes[w.0].value.shape();
                    let n_spatial: usize = xs[..xs.len() - 1].iter().product();
                    let (gx, gw) = ops::channel_matmul_backward(
                        &g,
                        self.nodes[x.0].value.data(),
                        self.nodes[w.0].value.data(),
                        n_spatial,
                        ws[0],
                        ws[1],
                    );
                    Self::accumulate(&mut grads, x, gx);
                    Self::accumulate(&mut grads, w, gw);
                }
                Op::DenseApply { a, v } => {
                    let (a, v) = (*a, *v);
                    let vs = self.nodes[v.0].value.shape();
                    let n: usize = vs[..vs.len() - 1].iter().product();
                    let cin = vs[vs.len() - 1];
                    let cout = self.nodes[a.0].value.shape()[3];
                    let (ga, gv) = ops::dense_apply_backward(
                        &g,
                        self.nodes[a.0].value.data(),
                        self.nodes[v.0].value.data(),
                        n,
                        cin,
                        cout,
                    );
                    Self::accumulate(&mut grads, a, ga);
                    Self::accumulate(&mut grads, v, gv);
                }
                Op::CnnApply { kernel, v } => {
                    let (kernel, v) = (*kernel, *v);
                    let ks = self.nodes[kernel.0].value.shape().to_vec();
                    let vs = self.nodes[v.0].value.shape().to_vec();
                    let d = vs.len() - 1;
                    let (gk, gv) = ops::cnn_apply_backward(
                        &g,
                        self.nodes[kernel.0].value.data(),
                        &ks[..d],
                        self.nodes[v.0].value.data(),
                        &vs[..d],
                        ks[d],
                        ks[d + 1],
                    );
                    Self::accumulate(&mut grads, kernel, gk);
                    Self::accumulate(&mut grads, v, gv);
                }
                Op::Spectral {
                    r_re,
                    r_im,
                    v,
                    vhat,
                    kmax,
                } => {
                    let (r_re, r_im, v) = (*r_re, *r_im, *v);
                    let rs = self.nodes[r_re.0].value.shape().to_vec();
                    let vs = self.nodes[v.0].value.shape().to_vec();
                    let d = vs.len() - 1;
                    let (grr, gri, gv) = ops::spectral_apply_backward(
                        &g,
                        self.nodes[r_re.0].value.data(),
                        self.nodes[r_im.0].value.data(),
                        kmax.clone().as_slice(),
                        vhat,
                        &vs[..d],
                        rs[d],
                        rs[d + 1],
                    );
                    let _ = kmax;
                    Self::accumulate(&mut grads, r_re, grr);
                    Self::accumulate(&mut grads, r_im, gri);
                    Self::accumulate(&mut grads, v, gv);
                }
            }
        }
        self.grads = grads;
        Ok(())
    }

    /// Gradient of the last backward root w.r.t. node `id`, if reached.
    pub fn grad(&self, id: NodeId) -> Result<Tensor, AdError> {
        if self.grads.is_empty() {
            return Err(AdError::NoGradients);
        }
        let shape = self.value(id).shape().to_vec();
        match &self.grads[id.0] {
            Some(g) => Ok(Tensor::from_vec(&shape, g.clone())?),
            None => Ok(Tensor::zeros(&shape)),
        }
    }

    /// Raw gradient buffer for node `id`, if reached by backward.
    pub fn grad_data(&self, id: NodeId) -> Option<&[f64]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random(shape: &[usize], rng: &mut StdRng) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn sum_gradient_is_all_ones() {
        let mut tape = Tape::new();
        let mut rng = StdRng::seed_from_u64(1);
        let x = tape.leaf(random(&[3, 4], &mut rng));
        let s = tape.sum(x);
        tape.backward(s).unwrap();
        let g = tape.grad(x).unwrap();
        assert!(g.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn squared_norm_gradient_is_two_x() {
        let mut tape = Tape::new();
        let mut rng = StdRng::seed_from_u64(2);
        let xv = random(&[6], &mut rng);
        let x = tape.leaf(xv.clone());
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq);
        tape.backward(s).unwrap();
        let g = tape.grad(x).unwrap();
        for i in 0..6 {
            assert!((g.data()[i] - 2.0 * xv.data()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn non_scalar_root_is_an_error() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[2, 2]));
        assert!(matches!(tape.backward(x), Err(AdError::NonScalarRoot(_))));
    }

    /// Central finite differences on a scalar function of leaf tensors.
    fn check_against_fd(
        build: impl Fn(&mut Tape, &[Tensor]) -> NodeId,
        leaves: Vec<Tensor>,
        rel_tol: f64,
    ) {
        let mut tape = Tape::new();
        let root = build(&mut tape, &leaves);
        tape.backward(root).unwrap();
        // Leaves are inserted first by build in order, ids 0..len.
        let h = 1e-5;
        for (li, leaf) in leaves.iter().enumerate() {
            let g = tape.grad(NodeId(li)).unwrap();
            for i in 0..leaf.len() {
                let mut plus = leaves.clone();
                plus[li].data_mut()[i] += h;
                let mut minus = leaves.clone();
                minus[li].data_mut()[i] -= h;
                let mut tp = Tape::new();
                let rp = build(&mut tp, &plus);
                let mut tm = Tape::new();
                let rm = build(&mut tm, &minus);
                let fd = (tp.value(rp).data()[0] - tm.value(rm).data()[0]) / (2.0 * h);
                let got = g.data()[i];
                let denom = fd.abs().max(got.abs()).max(1e-6);
                assert!(
                    (fd - got).abs() / denom < rel_tol,
                    "leaf {li} entry {i}: fd {fd} vs ad {got}"
                );
            }
        }
    }

    #[test]
    fn channel_matmul_matches_finite_differences() {
        let mut rng = StdRng::seed_from_u64(3);
        let leaves = vec![random(&[5, 3], &mut rng), random(&[3, 2], &mut rng)];
        check_against_fd(
            |tape, ls| {
                let x = tape.leaf(ls[0].clone());
                let w = tape.leaf(ls[1].clone());
                let y = tape.channel_matmul(x, w).unwrap();
                let sq = tape.mul(y, y).unwrap();
                tape.sum(sq)
            },
            leaves,
            1e-5,
        );
    }

    #[test]
    fn cnn_apply_matches_finite_differences() {
        let mut rng = StdRng::seed_from_u64(4);
        let leaves = vec![random(&[3, 2, 2], &mut rng), random(&[8, 2], &mut rng)];
        check_against_fd(
            |tape, ls| {
                let k = tape.leaf(ls[0].clone());
                let v = tape.leaf(ls[1].clone());
                let y = tape.cnn_apply(k, v).unwrap();
                let sq = tape.mul(y, y).unwrap();
                tape.sum(sq)
            },
            leaves,
            1e-5,
        );
    }

    #[test]
    fn dense_apply_matches_finite_differences() {
        let mut rng = StdRng::seed_from_u64(5);
        let leaves = vec![random(&[4, 4, 2, 3], &mut rng), random(&[4, 2], &mut rng)];
        check_against_fd(
            |tape, ls| {
                let a = tape.leaf(ls[0].clone());
                let v = tape.leaf(ls[1].clone());
                let y = tape.dense_apply(a, v).unwrap();
                let sq = tape.mul(y, y).unwrap();
                tape.sum(sq)
            },
            leaves,
            1e-5,
        );
    }

    #[test]
    fn spectral_apply_matches_finite_differences() {
        let mut rng = StdRng::seed_from_u64(6);
        let leaves = vec![
            random(&[3, 2, 2], &mut rng),
            random(&[3, 2, 2], &mut rng),
            random(&[8, 2], &mut rng),
        ];
        check_against_fd(
            |tape, ls| {
                let rr = tape.leaf(ls[0].clone());
                let ri = tape.leaf(ls[1].clone());
                let v = tape.leaf(ls[2].clone());
                let y = tape.spectral_apply(rr, ri, v).unwrap();
                let sq = tape.mul(y, y).unwrap();
                tape.sum(sq)
            },
            leaves,
            1e-5,
        );
    }

    #[test]
    fn activations_match_finite_differences() {
        for act in [Activation::Relu, Activation::Gelu] {
            let mut rng = StdRng::seed_from_u64(7);
            // Keep relu inputs away from the kink.
            let mut x = random(&[10], &mut rng);
            for v in x.data_mut() {
                if v.abs() < 0.05 {
                    *v += 0.1;
                }
            }
            check_against_fd(
                |tape, ls| {
                    let x = tape.leaf(ls[0].clone());
                    let y = tape.activation(x, act);
                    let sq = tape.mul(y, y).unwrap();
                    tape.sum(sq)
                },
                vec![x],
                1e-5,
            );
        }
    }
}
