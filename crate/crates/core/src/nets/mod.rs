//! Score networks over padded fragment graphs: a GCN for the node features
//! and an attention network over adjacency powers for the topology.
//!
//! Both networks run on batches laid out as `[B, N, ·]` and are permutation
//! equivariant in the node axis. Time enters only through a per-sample output
//! scale (the reciprocal marginal std).

mod phi;
mod theta;

pub use phi::{eps_phi, gmh_block, GmhWeights, PhiConfig, PhiParams, INITIAL_CHANNELS};
pub use theta::{eps_theta, ThetaConfig, ThetaParams};

use rand::Rng;

use crate::tensor::{gemm, glorot_uniform, Layout, ParamSet, Tape, Tensor, TensorError, Var};
use crate::vocab::FragGraphTensor;

/// A batch of (possibly noisy) fragment graphs.
#[derive(Debug, Clone, PartialEq)]
pub struct NetInput {
    /// Node features, `[B, N, K]`.
    pub f: Tensor,
    /// Adjacency, `[B, N, N]`.
    pub c: Tensor,
    /// Live nodes, `B * N` flags.
    pub mask: Vec<bool>,
    /// Per-sample factor applied to the network output.
    pub out_scale: Vec<f64>,
}

impl NetInput {
    pub fn new(f: Tensor, c: Tensor, mask: Vec<bool>, out_scale: Vec<f64>) -> Result<NetInput, TensorError> {
        let fs = f.shape().to_vec();
        if fs.len() != 3 {
            return Err(mismatch("input F", &fs, &[0, 0, 0]));
        }
        let (b, n) = (fs[0], fs[1]);
        if c.shape() != [b, n, n] {
            return Err(mismatch("input C", c.shape(), &[b, n, n]));
        }
        if mask.len() != b * n {
            return Err(mismatch("input mask", &[mask.len()], &[b * n]));
        }
        if out_scale.len() != b {
            return Err(mismatch("output scale", &[out_scale.len()], &[b]));
        }
        Ok(NetInput { f, c, mask, out_scale })
    }

    /// Stacks equally padded graphs into one batch.
    pub fn from_graphs(graphs: &[&FragGraphTensor], out_scale: Vec<f64>) -> Result<NetInput, TensorError> {
        let (n, k) = graphs.first().map_or((0, 0), |g| (g.n_max(), g.k()));
        let mut f = Vec::with_capacity(graphs.len() * n * k);
        let mut c = Vec::with_capacity(graphs.len() * n * n);
        let mut mask = Vec::with_capacity(graphs.len() * n);
        for g in graphs {
            if g.n_max() != n || g.k() != k {
                return Err(mismatch("graph batch", &[g.n_max(), g.k()], &[n, k]));
            }
            f.extend_from_slice(g.f.data());
            c.extend_from_slice(g.c.data());
            mask.extend_from_slice(&g.mask);
        }
        let b = graphs.len();
        NetInput::new(Tensor::new(&[b, n, k], f)?, Tensor::new(&[b, n, n], c)?, mask, out_scale)
    }

    pub fn batch(&self) -> usize {
        self.f.shape()[0]
    }

    pub fn nodes(&self) -> usize {
        self.f.shape()[1]
    }

    pub fn features(&self) -> usize {
        self.f.shape()[2]
    }

    /// Mask broadcast to `[B, N, width]`, optionally times the output scale.
    pub(crate) fn row_mask(&self, width: usize, scaled: bool) -> Tensor {
        let (b, n) = (self.batch(), self.nodes());
        let mut data = Vec::with_capacity(b * n * width);
        for s in 0..b {
            let v = if scaled { self.out_scale[s] } else { 1.0 };
            for i in 0..n {
                let m = if self.mask[s * n + i] { v } else { 0.0 };
                data.extend(std::iter::repeat_n(m, width));
            }
        }
        Tensor::new(&[b, n, width], data).expect("row mask shape")
    }

    /// Live off-diagonal pairs as `[B, N, N]`, optionally times the output scale.
    pub(crate) fn pair_mask(&self, scaled: bool) -> Tensor {
        let (b, n) = (self.batch(), self.nodes());
        let mut data = Vec::with_capacity(b * n * n);
        for s in 0..b {
            let v = if scaled { self.out_scale[s] } else { 1.0 };
            for i in 0..n {
                for j in 0..n {
                    let live = i != j && self.mask[s * n + i] && self.mask[s * n + j];
                    data.push(if live { v } else { 0.0 });
                }
            }
        }
        Tensor::new(&[b, n, n], data).expect("pair mask shape")
    }

    /// Features with padding rows zeroed.
    pub(crate) fn masked_f(&self) -> Tensor {
        hadamard(&self.f, &self.row_mask(self.features(), false))
    }

    /// Adjacency restricted to live off-diagonal pairs.
    pub(crate) fn adjacency(&self) -> Tensor {
        hadamard(&self.c, &self.pair_mask(false))
    }
}

pub(crate) fn hadamard(a: &Tensor, b: &Tensor) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    Tensor::new(a.shape(), data).expect("same shape")
}

/// Batched product of `[B, N, N]` matrices outside the tape.
pub(crate) fn batched_matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (bs, n) = (a.shape()[0], a.shape()[1]);
    let mut out = Tensor::zeros(&[bs, n, n]);
    for s in 0..bs {
        let r = s * n * n..(s + 1) * n * n;
        gemm(
            n,
            n,
            n,
            &a.data()[r.clone()],
            Layout::Normal,
            &b.data()[r.clone()],
            Layout::Normal,
            &mut out.data_mut()[r],
            0.0,
        );
    }
    out
}

/// `A + I` for every matrix in a `[B, N, N]` batch.
pub(crate) fn with_self_loops(a: &Tensor) -> Tensor {
    let (bs, n) = (a.shape()[0], a.shape()[1]);
    let mut out = a.clone();
    for s in 0..bs {
        for i in 0..n {
            out.data_mut()[s * n * n + i * n + i] += 1.0;
        }
    }
    out
}

pub(crate) fn mismatch(op: &'static str, left: &[usize], right: &[usize]) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        left: left.to_vec(),
        right: right.to_vec(),
    }
}

/// Affine map over the last axis.
pub(crate) fn linear<'t>(x: Var<'t>, w: Var<'t>, b: Var<'t>) -> Var<'t> {
    let mut shape = x.shape();
    let fan_in = *shape.last().expect("rank >= 1");
    let rows = x.value().numel() / fan_in.max(1);
    let y = x.reshape(&[rows, fan_in]).matmul(w).add_bias(b);
    *shape.last_mut().expect("rank >= 1") = w.shape()[1];
    y.reshape(&shape)
}

/// One graph convolution: `ReLU((C + I) H W + b)` with padding rows zeroed.
///
/// `h` is `[B, N, h]`, `a_hat` is `C + I` as `[B, N, N]` and `row_mask` is
/// `[B, N, h']`.
pub fn gcn_layer<'t>(
    h: Var<'t>,
    a_hat: Var<'t>,
    w: Var<'t>,
    b: Var<'t>,
    row_mask: Var<'t>,
) -> Result<Var<'t>, TensorError> {
    let hs = h.shape();
    let (ws, bs) = (w.shape(), b.shape());
    if hs.len() != 3 || a_hat.shape() != [hs[0], hs[1], hs[1]] {
        return Err(mismatch("gcn adjacency", &a_hat.shape(), &hs));
    }
    if ws.len() != 2 || ws[0] != hs[2] || bs != [ws[1]] {
        return Err(mismatch("gcn weight", &ws, &hs));
    }
    if row_mask.shape() != [hs[0], hs[1], ws[1]] {
        return Err(mismatch("gcn mask", &row_mask.shape(), &[hs[0], hs[1], ws[1]]));
    }
    Ok(linear(a_hat.bmm(h), w, b).relu().mul(row_mask))
}

/// Hands out bound parameters in creation order.
pub(crate) struct Cursor<'a, 't> {
    vars: &'a [Var<'t>],
    at: usize,
}

impl<'a, 't> Cursor<'a, 't> {
    pub fn new(vars: &'a [Var<'t>]) -> Self {
        Cursor { vars, at: 0 }
    }

    pub fn next(&mut self) -> Var<'t> {
        let v = self.vars[self.at];
        self.at += 1;
        v
    }

    pub fn finish(self) {
        assert_eq!(self.at, self.vars.len(), "unused parameters");
    }
}

/// Pushes `name.w` (Glorot) and `name.b` (uniform in ±1/sqrt(fan_in)).
pub(crate) fn push_linear<R: Rng>(ps: &mut ParamSet, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) {
    ps.push(format!("{name}.w"), glorot_uniform(rng, &[fan_in, fan_out], fan_in, fan_out));
    ps.push(format!("{name}.b"), bias(rng, &[fan_out], fan_in));
}

pub(crate) fn bias<R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-bound..=bound)).collect()).expect("shape")
}

/// Evaluates a network on a throwaway tape with constant parameters.
pub(crate) fn eval_const(
    params: &ParamSet,
    f: impl for<'t> Fn(&[Var<'t>]) -> Result<Var<'t>, TensorError>,
) -> Result<(Tensor, usize), TensorError> {
    let tape = Tape::new();
    let vars = params.bind_const(&tape);
    let out = f(&vars)?;
    let value = (*out.value()).clone();
    Ok((value, tape.bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn gcn_without_edges_does_not_mix() {
        let tape = Tape::new();
        let h = tape.constant(t(&[1, 2, 2], &[1.0, -2.0, 3.0, 0.5]));
        let a = tape.constant(with_self_loops(&Tensor::zeros(&[1, 2, 2])));
        let w = tape.constant(t(&[2, 1], &[1.0, 1.0]));
        let b = tape.constant(t(&[1], &[0.0]));
        let m = tape.constant(Tensor::full(&[1, 2, 1], 1.0));
        let out = gcn_layer(h, a, w, b, m).unwrap();
        assert_eq!(out.value().data(), &[0.0, 3.5]);
    }

    #[test]
    fn gcn_rejects_bad_shapes() {
        let tape = Tape::new();
        let h = tape.constant(Tensor::zeros(&[1, 2, 3]));
        let a = tape.constant(Tensor::zeros(&[1, 3, 3]));
        let w = tape.constant(Tensor::zeros(&[3, 4]));
        let b = tape.constant(Tensor::zeros(&[4]));
        let m = tape.constant(Tensor::zeros(&[1, 2, 4]));
        assert!(matches!(gcn_layer(h, a, w, b, m), Err(TensorError::ShapeMismatch { .. })));
    }

    #[test]
    fn input_validation() {
        let f = Tensor::zeros(&[2, 3, 4]);
        let c = Tensor::zeros(&[2, 3, 3]);
        assert!(NetInput::new(f.clone(), c.clone(), vec![true; 6], vec![1.0; 2]).is_ok());
        assert!(NetInput::new(f.clone(), c.clone(), vec![true; 5], vec![1.0; 2]).is_err());
        assert!(NetInput::new(f, Tensor::zeros(&[2, 3, 4]), vec![true; 6], vec![1.0; 2]).is_err());
    }

    #[test]
    fn masks_drop_padding_and_diagonal() {
        let x = NetInput::new(
            Tensor::full(&[1, 3, 1], 2.0),
            Tensor::full(&[1, 3, 3], 1.0),
            vec![true, true, false],
            vec![3.0],
        )
        .unwrap();
        assert_eq!(x.masked_f().data(), &[2.0, 2.0, 0.0]);
        assert_eq!(x.adjacency().data(), &[0., 1., 0., 1., 0., 0., 0., 0., 0.]);
        assert_eq!(x.row_mask(2, true).data(), &[3., 3., 3., 3., 0., 0.]);
    }
}
