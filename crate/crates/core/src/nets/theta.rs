use rand::Rng;

use super::{gcn_layer, linear, mismatch, push_linear, with_self_loops, Cursor, NetInput};
use crate::tensor::{ParamSet, Tensor, TensorError, Var};

/// Shape of the node-feature score network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ThetaConfig {
    /// Vocabulary size (feature width of F).
    pub k: usize,
    pub layers: usize,
    pub hidden: usize,
}

impl ThetaConfig {
    pub fn new(k: usize) -> ThetaConfig {
        ThetaConfig { k, layers: 2, hidden: 16 }
    }

    /// Width of the readout MLP's input and hidden layers.
    pub fn readout_width(&self) -> usize {
        self.layers * self.hidden
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThetaParams {
    pub config: ThetaConfig,
    pub params: ParamSet,
}

impl ThetaParams {
    pub fn init<R: Rng>(config: ThetaConfig, rng: &mut R) -> ThetaParams {
        let mut params = ParamSet::new();
        let mut fan_in = config.k;
        for l in 0..config.layers {
            push_linear(&mut params, &format!("gcn{l}"), fan_in, config.hidden, rng);
            fan_in = config.hidden;
        }
        let r = config.readout_width();
        push_linear(&mut params, "mlp0", r, r, rng);
        push_linear(&mut params, "mlp1", r, r, rng);
        push_linear(&mut params, "mlp2", r, config.k, rng);
        ThetaParams { config, params }
    }

    /// Forward pass with constant parameters.
    pub fn eval(&self, x: &NetInput) -> Result<Tensor, TensorError> {
        super::eval_const(&self.params, |v| eps_theta(&self.config, v, x)).map(|(t, _)| t)
    }
}

/// Node score `[B, N, K]`: GCN layers on `F`, an MLP over the concatenated
/// layer outputs, rows masked and scaled by `x.out_scale`.
pub fn eps_theta<'t>(config: &ThetaConfig, vars: &[Var<'t>], x: &NetInput) -> Result<Var<'t>, TensorError> {
    if x.features() != config.k {
        return Err(mismatch("eps_theta features", x.f.shape(), &[x.batch(), x.nodes(), config.k]));
    }
    let tape = vars.first().expect("parameters").tape();
    let mut p = Cursor::new(vars);
    let a_hat = tape.constant(with_self_loops(&x.adjacency()));
    let hidden_mask = tape.constant(x.row_mask(config.hidden, false));
    let mut h = tape.constant(x.masked_f());
    let mut layers = Vec::with_capacity(config.layers);
    for _ in 0..config.layers {
        let (w, b) = (p.next(), p.next());
        h = gcn_layer(h, a_hat, w, b, hidden_mask)?;
        layers.push(h);
    }
    let mut y = Var::concat(&layers, 2);
    y = linear(y, p.next(), p.next()).relu();
    y = linear(y, p.next(), p.next()).relu();
    y = linear(y, p.next(), p.next());
    p.finish();
    Ok(y.mul(tape.constant(x.row_mask(config.k, true))))
}
