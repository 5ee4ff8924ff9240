use rand::Rng;

use super::{
    batched_matmul, bias, gcn_layer, linear, mismatch, push_linear, with_self_loops, Cursor, NetInput,
};
use crate::tensor::{glorot_uniform, ParamSet, Tensor, TensorError, Var};

/// Shape of the adjacency score network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhiConfig {
    pub k: usize,
    /// GCN trunk depth; one attention block per layer and adjacency power.
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    /// Per-pair channels after the first and second pair maps.
    pub hidden_channels: usize,
    pub final_channels: usize,
    /// Highest adjacency power.
    pub powers: usize,
}

/// Pair channels fed into each head: attention logits with and without the
/// adjacency mask.
pub const INITIAL_CHANNELS: usize = 2;

impl PhiConfig {
    pub fn new(k: usize, layers: usize) -> PhiConfig {
        PhiConfig {
            k,
            layers,
            hidden: 16,
            heads: 4,
            hidden_channels: 8,
            final_channels: 4,
            powers: 3,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    pub fn readout_in(&self) -> usize {
        self.final_channels * self.layers * self.powers
    }

    fn validate(&self) {
        assert!(self.heads > 0 && self.hidden % self.heads == 0, "heads must divide the hidden width");
        assert!(self.layers > 0 && self.powers > 0, "need at least one block");
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhiParams {
    pub config: PhiConfig,
    pub params: ParamSet,
}

impl PhiParams {
    pub fn init<R: Rng>(config: PhiConfig, rng: &mut R) -> PhiParams {
        config.validate();
        let mut params = ParamSet::new();
        let mut fan_in = config.k;
        for l in 0..config.layers {
            push_linear(&mut params, &format!("gcn{l}"), fan_in, config.hidden, rng);
            fan_in = config.hidden;
        }
        let (hd, hc, fc, nh) = (config.hidden, config.hidden_channels, config.final_channels, config.heads);
        for l in 0..config.layers {
            for d in 1..=config.powers {
                let name = format!("gmh{l}_{d}");
                params.push(format!("{name}.wq"), glorot_uniform(rng, &[hd, hd], hd, hd));
                params.push(format!("{name}.wk"), glorot_uniform(rng, &[hd, hd], hd, hd));
                params.push(
                    format!("{name}.w1"),
                    glorot_uniform(rng, &[nh, INITIAL_CHANNELS, hc], INITIAL_CHANNELS, hc),
                );
                params.push(format!("{name}.b1"), bias(rng, &[nh, hc], INITIAL_CHANNELS));
                params.push(format!("{name}.w2"), glorot_uniform(rng, &[nh, hc, fc], hc, fc));
                params.push(format!("{name}.b2"), bias(rng, &[nh, fc], hc));
            }
        }
        let (r, w) = (config.readout_in(), 2 * config.readout_in());
        push_linear(&mut params, "mlp0", r, w, rng);
        push_linear(&mut params, "mlp1", w, w, rng);
        push_linear(&mut params, "mlp2", w, 1, rng);
        PhiParams { config, params }
    }

    pub fn eval(&self, x: &NetInput) -> Result<Tensor, TensorError> {
        super::eval_const(&self.params, |v| eps_phi(&self.config, v, x)).map(|(t, _)| t)
    }
}

/// Weights of one attention block.
#[derive(Debug, Clone, Copy)]
pub struct GmhWeights<'t> {
    /// `[h, h]`, heads laid out contiguously along the output axis.
    pub wq: Var<'t>,
    pub wk: Var<'t>,
    /// `[heads, 2, hidden_channels]` and `[heads, hidden_channels]`.
    pub w1: Var<'t>,
    pub b1: Var<'t>,
    /// `[heads, hidden_channels, final_channels]` and `[heads, final_channels]`.
    pub w2: Var<'t>,
    pub b2: Var<'t>,
}

impl<'t> GmhWeights<'t> {
    fn take(p: &mut Cursor<'_, 't>) -> GmhWeights<'t> {
        GmhWeights {
            wq: p.next(),
            wk: p.next(),
            w1: p.next(),
            b1: p.next(),
            w2: p.next(),
            b2: p.next(),
        }
    }
}

/// Per-pair features `[B, N, N, final]` from node states `h` (`[B, N, h]`)
/// and a symmetric adjacency `a` (`[B, N, N]`).
///
/// Each head scores pairs by scaled dot products, stacks the score masked by
/// `a` with the raw score, and runs the two channels through a small pairwise
/// MLP. Heads are averaged and the result is symmetrized.
pub fn gmh_block<'t>(h: Var<'t>, a: Var<'t>, w: &GmhWeights<'t>) -> Result<Var<'t>, TensorError> {
    let hs = h.shape();
    if hs.len() != 3 || a.shape() != [hs[0], hs[1], hs[1]] {
        return Err(mismatch("gmh adjacency", &a.shape(), &hs));
    }
    let (b, n, hd) = (hs[0], hs[1], hs[2]);
    let ws = w.w1.shape();
    if w.wq.shape() != [hd, hd] || w.wk.shape() != [hd, hd] || ws.len() != 3 || ws[1] != INITIAL_CHANNELS {
        return Err(mismatch("gmh weights", &w.wq.shape(), &[hd, hd]));
    }
    let heads = ws[0];
    if heads == 0 || hd % heads != 0 {
        return Err(mismatch("gmh heads", &[heads], &[hd]));
    }
    let fc = w.w2.shape()[2];
    let dh = hd / heads;
    let split = |x: Var<'t>| {
        x.reshape(&[b, n, heads, dh])
            .permute(&[0, 2, 1, 3])
            .reshape(&[b * heads, n, dh])
    };
    let q = split(h.reshape(&[b * n, hd]).matmul(w.wq));
    let k = split(h.reshape(&[b * n, hd]).matmul(w.wk));
    let s = q.bmm_nt(k).scale(1.0 / (dh as f64).sqrt()).reshape(&[b, heads, n, n]);
    let masked = s.mul(a.repeat(1, heads));
    let pairs = b * n * n;
    let x = Var::concat(
        &[masked.reshape(&[b, heads, n, n, 1]), s.reshape(&[b, heads, n, n, 1])],
        4,
    )
    .permute(&[1, 0, 2, 3, 4])
    .reshape(&[heads, pairs, INITIAL_CHANNELS]);
    let y = x.bmm(w.w1).add(w.b1.repeat(1, pairs)).relu();
    let y = y.bmm(w.w2).add(w.b2.repeat(1, pairs));
    let y = y.sum_axis(0).scale(1.0 / heads as f64).reshape(&[b, n, n, fc]);
    Ok(y.add(y.permute(&[0, 2, 1, 3])).scale(0.5))
}

/// Adjacency score `[B, N, N]`: GCN trunk, one attention block per trunk
/// layer and adjacency power, a pairwise MLP over all block channels, then
/// symmetrized, diagonal and padding zeroed, scaled by `x.out_scale`.
pub fn eps_phi<'t>(config: &PhiConfig, vars: &[Var<'t>], x: &NetInput) -> Result<Var<'t>, TensorError> {
    if x.features() != config.k {
        return Err(mismatch("eps_phi features", x.f.shape(), &[x.batch(), x.nodes(), config.k]));
    }
    let tape = vars.first().expect("parameters").tape();
    let (b, n) = (x.batch(), x.nodes());
    let mut p = Cursor::new(vars);
    let adj = x.adjacency();
    let a_hat = tape.constant(with_self_loops(&adj));
    let mut powers = vec![adj.clone()];
    for _ in 1..config.powers {
        let next = batched_matmul(powers.last().expect("non-empty"), &adj);
        powers.push(next);
    }
    let powers: Vec<Var<'t>> = powers.into_iter().map(|t| tape.constant(t)).collect();
    let hidden_mask = tape.constant(x.row_mask(config.hidden, false));
    let mut h = tape.constant(x.masked_f());
    let mut trunk = Vec::with_capacity(config.layers);
    for _ in 0..config.layers {
        let (w, bb) = (p.next(), p.next());
        h = gcn_layer(h, a_hat, w, bb, hidden_mask)?;
        trunk.push(h);
    }
    let mut blocks = Vec::with_capacity(config.layers * config.powers);
    for h in &trunk {
        for a in &powers {
            let w = GmhWeights::take(&mut p);
            blocks.push(gmh_block(*h, *a, &w)?);
        }
    }
    let mut y = Var::concat(&blocks, 3);
    y = linear(y, p.next(), p.next()).relu();
    y = linear(y, p.next(), p.next()).relu();
    y = linear(y, p.next(), p.next());
    p.finish();
    let y = y.reshape(&[b, n, n]);
    let y = y.add(y.transpose_last()).scale(0.5);
    Ok(y.mul(tape.constant(x.pair_mask(true))))
}
