use super::{ParamSet, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay applied as p -= lr * weight_decay * p.
    pub weight_decay: f64,
    /// Multiplier applied to lr at each [`Adam::end_epoch`].
    pub lr_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 5e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
            lr_decay: 0.999,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    lr: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamSet) -> Adam {
        let zeros: Vec<Tensor> = params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        Adam {
            config,
            lr: config.lr,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn end_epoch(&mut self) {
        self.lr *= self.config.lr_decay;
    }

    /// One update; `grads[i]` must match the shape of slot `i`.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Tensor]) {
        assert_eq!(grads.len(), params.len(), "one gradient per parameter");
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (i, g) in grads.iter().enumerate() {
            let p = params.tensor_mut(i);
            assert_eq!(p.shape(), g.shape(), "gradient shape for slot {i}");
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mv = c.beta1 * *mv + (1.0 - c.beta1) * gv;
                *vv = c.beta2 * *vv + (1.0 - c.beta2) * gv * gv;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *pv -= self.lr * (mhat / (vhat.sqrt() + c.eps) + c.weight_decay * *pv);
            }
        }
    }
}

/// Exponential moving average of parameters.
#[derive(Debug, Clone)]
pub struct Ema {
    decay: f64,
    warmup: bool,
    updates: u64,
    shadow: ParamSet,
}

impl Ema {
    /// With `warmup`, the effective decay is min(decay, (1+n)/(10+n)) after
    /// n updates, so early shadows track the weights closely.
    pub fn new(decay: f64, warmup: bool, params: &ParamSet) -> Ema {
        Ema {
            decay,
            warmup,
            updates: 0,
            shadow: params.clone(),
        }
    }

    pub fn update(&mut self, params: &ParamSet) {
        let n = self.updates as f64;
        let d = if self.warmup {
            self.decay.min((1.0 + n) / (10.0 + n))
        } else {
            self.decay
        };
        self.updates += 1;
        for i in 0..params.len() {
            let src = params.tensor(i).data();
            for (s, &v) in self.shadow.tensor_mut(i).data_mut().iter_mut().zip(src) {
                *s = d * *s + (1.0 - d) * v;
            }
        }
    }

    pub fn shadow(&self) -> &ParamSet {
        &self.shadow
    }

    pub fn into_shadow(self) -> ParamSet {
        self.shadow
    }
}
