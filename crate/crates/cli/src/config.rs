//! Run configuration: `key = value` text with dataset presets.

use std::fmt;
use std::str::FromStr;

use orgmol_core::assemble::AssemblyConfig;
use orgmol_core::bonds::{BondConfig, BondTrainConfig};
use orgmol_core::nets::{PhiConfig, ThetaConfig, INITIAL_CHANNELS};
use orgmol_core::sde::{DiffusionConfig, SamplerConfig, SdeKind, SdeSpec};
use orgmol_core::tensor::AdamConfig;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown key {0:?}")]
    UnknownKey(String),
    #[error("bad value {value:?} for {key}: {reason}")]
    BadValue { key: String, value: String, reason: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Preset {
    #[default]
    Hce,
    Gdb13,
    Snb60k,
    Dtp,
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Hce => "hce",
            Preset::Gdb13 => "gdb13",
            Preset::Snb60k => "snb60k",
            Preset::Dtp => "dtp",
        })
    }
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hce" => Ok(Preset::Hce),
            "gdb13" => Ok(Preset::Gdb13),
            "snb60k" => Ok(Preset::Snb60k),
            "dtp" => Ok(Preset::Dtp),
            _ => Err("expected hce, gdb13, snb60k or dtp".into()),
        }
    }
}

/// Every tunable of the pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub preset: Preset,
    pub vocab_size: usize,
    /// Molecules with more fragments are left out of diffusion training.
    pub max_fragments: usize,
    pub theta: ThetaConfig,
    pub phi: PhiConfig,
    pub sde_f: SdeSpec,
    pub sde_c: SdeSpec,
    pub sampler: SamplerConfig,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub ema_decay: f64,
    pub ema_warmup: bool,
    pub bond: BondConfig,
    pub bond_train: BondTrainConfig,
    pub assembly: AssemblyConfig,
    pub seed: u64,
}

impl RunConfig {
    pub fn preset(preset: Preset) -> RunConfig {
        // (K, max fragments, phi layers, C sde min, scale, batch, epochs)
        let (k, n_max, phi_layers, c_min, scale, batch, epochs) = match preset {
            Preset::Hce => (100, 11, 2, 0.1, 0.5, 2048, 300),
            Preset::Gdb13 => (200, 8, 6, 0.2, 0.9, 8192, 500),
            Preset::Snb60k => (100, 10, 2, 0.1, 0.5, 1024, 300),
            Preset::Dtp => (200, 17, 6, 0.2, 0.9, 2048, 500),
        };
        RunConfig {
            preset,
            vocab_size: k,
            max_fragments: n_max,
            theta: ThetaConfig::new(k),
            phi: PhiConfig::new(k, phi_layers),
            sde_f: SdeSpec::vp(0.1, 1.0, 1000),
            sde_c: SdeSpec::ve(c_min, 1.0, 1000),
            sampler: SamplerConfig {
                scale_coeff: scale,
                ..SamplerConfig::default()
            },
            adam: AdamConfig::default(),
            batch_size: batch,
            epochs,
            ema_decay: 0.999,
            ema_warmup: true,
            bond: BondConfig::new(0, k),
            bond_train: BondTrainConfig::default(),
            assembly: AssemblyConfig::default(),
            seed: 0,
        }
    }

    /// Parses `key = value` lines over a preset. A `preset` key anywhere in
    /// the text picks the base; `#` starts a comment.
    pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        let pairs = parse_pairs(text)?;
        let mut cfg = match pairs.iter().rev().find(|(k, _)| k == "preset") {
            Some((_, v)) => RunConfig::preset(parse_value("preset", v)?),
            None => RunConfig::default(),
        };
        for (k, v) in pairs.iter().filter(|(k, _)| k != "preset") {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Keys whose value differs from the preset defaults.
    pub fn overrides(&self) -> Vec<(&'static str, String)> {
        let base = RunConfig::preset(self.preset).entries();
        self.entries().into_iter().filter(|e| !base.contains(e)).collect()
    }

    /// `key = value` lines for every effective setting, parseable by
    /// [`RunConfig::parse`].
    pub fn dump(&self) -> String {
        self.entries().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let s = |v: &dyn fmt::Display| v.to_string();
        vec![
            ("preset", s(&self.preset)),
            ("vocab_size", s(&self.vocab_size)),
            ("max_fragments", s(&self.max_fragments)),
            ("theta.layers", s(&self.theta.layers)),
            ("theta.hidden", s(&self.theta.hidden)),
            ("phi.layers", s(&self.phi.layers)),
            ("phi.hidden", s(&self.phi.hidden)),
            ("phi.heads", s(&self.phi.heads)),
            ("phi.initial_channels", s(&INITIAL_CHANNELS)),
            ("phi.hidden_channels", s(&self.phi.hidden_channels)),
            ("phi.final_channels", s(&self.phi.final_channels)),
            ("phi.powers", s(&self.phi.powers)),
            ("sde_f.kind", s(&self.sde_f.kind)),
            ("sde_f.min", s(&self.sde_f.p_min)),
            ("sde_f.max", s(&self.sde_f.p_max)),
            ("sde_f.steps", s(&self.sde_f.steps)),
            ("sde_c.kind", s(&self.sde_c.kind)),
            ("sde_c.min", s(&self.sde_c.p_min)),
            ("sde_c.max", s(&self.sde_c.p_max)),
            ("sde_c.steps", s(&self.sde_c.steps)),
            ("sampler.snr", s(&self.sampler.snr)),
            ("sampler.scale_coeff", s(&self.sampler.scale_coeff)),
            ("sampler.corrector_steps", s(&self.sampler.corrector_steps)),
            ("train.lr", s(&self.adam.lr)),
            ("train.beta1", s(&self.adam.beta1)),
            ("train.beta2", s(&self.adam.beta2)),
            ("train.adam_eps", s(&self.adam.eps)),
            ("train.weight_decay", s(&self.adam.weight_decay)),
            ("train.lr_decay", s(&self.adam.lr_decay)),
            ("train.batch_size", s(&self.batch_size)),
            ("train.epochs", s(&self.epochs)),
            ("train.ema", s(&self.ema_decay)),
            ("train.ema_warmup", s(&self.ema_warmup)),
            ("bond.atom_dim", s(&self.bond.atom_dim)),
            ("bond.frag_dim", s(&self.bond.frag_dim)),
            ("bond.node_dim", s(&self.bond.node_dim)),
            ("bond.edge_dim", s(&self.bond.edge_dim)),
            ("bond.iterations", s(&self.bond.iterations)),
            ("bond.lr", s(&self.bond_train.adam.lr)),
            ("bond.weight_decay", s(&self.bond_train.adam.weight_decay)),
            ("bond.lr_decay", s(&self.bond_train.adam.lr_decay)),
            ("bond.epochs", s(&self.bond_train.epochs)),
            ("bond.batch_size", s(&self.bond_train.batch_size)),
            ("bond.neg_ratio", s(&self.bond_train.neg_ratio)),
            ("assembly.threshold", s(&self.assembly.threshold)),
            ("assembly.ring_min", s(&self.assembly.ring_min)),
            ("assembly.ring_max", s(&self.assembly.ring_max)),
            ("assembly.mode", s(&self.assembly.mode)),
            ("seed", s(&self.seed)),
        ]
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value;
        match key {
            "preset" => self.preset = parse_value(key, v)?,
            "vocab_size" => {
                self.vocab_size = parse_value(key, v)?;
                self.theta.k = self.vocab_size;
                self.phi.k = self.vocab_size;
                self.bond.vocab_size = self.vocab_size;
            }
            "max_fragments" => self.max_fragments = parse_value(key, v)?,
            "theta.layers" => self.theta.layers = parse_value(key, v)?,
            "theta.hidden" => self.theta.hidden = parse_value(key, v)?,
            "phi.layers" => self.phi.layers = parse_value(key, v)?,
            "phi.hidden" => self.phi.hidden = parse_value(key, v)?,
            "phi.heads" => self.phi.heads = parse_value(key, v)?,
            "phi.initial_channels" => {
                if parse_value::<usize>(key, v)? != INITIAL_CHANNELS {
                    return Err(bad(key, v, &format!("fixed at {INITIAL_CHANNELS}")));
                }
            }
            "phi.hidden_channels" => self.phi.hidden_channels = parse_value(key, v)?,
            "phi.final_channels" => self.phi.final_channels = parse_value(key, v)?,
            "phi.powers" => self.phi.powers = parse_value(key, v)?,
            "sde_f.kind" => self.sde_f.kind = parse_sde_kind(key, v)?,
            "sde_f.min" => self.sde_f.p_min = parse_value(key, v)?,
            "sde_f.max" => self.sde_f.p_max = parse_value(key, v)?,
            "sde_f.steps" => self.sde_f.steps = parse_value(key, v)?,
            "sde_c.kind" => self.sde_c.kind = parse_sde_kind(key, v)?,
            "sde_c.min" => self.sde_c.p_min = parse_value(key, v)?,
            "sde_c.max" => self.sde_c.p_max = parse_value(key, v)?,
            "sde_c.steps" => self.sde_c.steps = parse_value(key, v)?,
            "sampler.snr" => self.sampler.snr = parse_value(key, v)?,
            "sampler.scale_coeff" => self.sampler.scale_coeff = parse_value(key, v)?,
            "sampler.corrector_steps" => self.sampler.corrector_steps = parse_value(key, v)?,
            "train.lr" => self.adam.lr = parse_value(key, v)?,
            "train.beta1" => self.adam.beta1 = parse_value(key, v)?,
            "train.beta2" => self.adam.beta2 = parse_value(key, v)?,
            "train.adam_eps" => self.adam.eps = parse_value(key, v)?,
            "train.weight_decay" => self.adam.weight_decay = parse_value(key, v)?,
            "train.lr_decay" => self.adam.lr_decay = parse_value(key, v)?,
            "train.batch_size" => self.batch_size = parse_value(key, v)?,
            "train.epochs" => self.epochs = parse_value(key, v)?,
            "train.ema" => self.ema_decay = parse_value(key, v)?,
            "train.ema_warmup" => self.ema_warmup = parse_value(key, v)?,
            "bond.atom_dim" => self.bond.atom_dim = parse_value(key, v)?,
            "bond.frag_dim" => self.bond.frag_dim = parse_value(key, v)?,
            "bond.node_dim" => self.bond.node_dim = parse_value(key, v)?,
            "bond.edge_dim" => self.bond.edge_dim = parse_value(key, v)?,
            "bond.iterations" => self.bond.iterations = parse_value(key, v)?,
            "bond.lr" => self.bond_train.adam.lr = parse_value(key, v)?,
            "bond.weight_decay" => self.bond_train.adam.weight_decay = parse_value(key, v)?,
            "bond.lr_decay" => self.bond_train.adam.lr_decay = parse_value(key, v)?,
            "bond.epochs" => self.bond_train.epochs = parse_value(key, v)?,
            "bond.batch_size" => self.bond_train.batch_size = parse_value(key, v)?,
            "bond.neg_ratio" => self.bond_train.neg_ratio = parse_value(key, v)?,
            "assembly.threshold" => self.assembly.threshold = parse_value(key, v)?,
            "assembly.ring_min" => self.assembly.ring_min = parse_value(key, v)?,
            "assembly.ring_max" => self.assembly.ring_max = parse_value(key, v)?,
            "assembly.mode" => self.assembly.mode = parse_value(key, v)?,
            "seed" => self.seed = parse_value(key, v)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        let positive = [
            ("vocab_size", self.vocab_size),
            ("max_fragments", self.max_fragments),
            ("theta.layers", self.theta.layers),
            ("theta.hidden", self.theta.hidden),
            ("phi.layers", self.phi.layers),
            ("phi.heads", self.phi.heads),
            ("phi.hidden_channels", self.phi.hidden_channels),
            ("phi.final_channels", self.phi.final_channels),
            ("phi.powers", self.phi.powers),
            ("train.batch_size", self.batch_size),
            ("bond.atom_dim", self.bond.atom_dim),
            ("bond.frag_dim", self.bond.frag_dim),
            ("bond.node_dim", self.bond.node_dim),
            ("bond.edge_dim", self.bond.edge_dim),
            ("bond.batch_size", self.bond_train.batch_size),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return fail(&format!("{k} must be positive"));
        }
        if self.phi.hidden % self.phi.heads != 0 {
            return fail("phi.heads must divide phi.hidden");
        }
        for (name, s) in [("sde_f", &self.sde_f), ("sde_c", &self.sde_c)] {
            s.validate().map_err(|e| ConfigError::Invalid(format!("{name}: {e}")))?;
        }
        if !(self.sampler.snr > 0.0 && self.sampler.scale_coeff > 0.0) {
            return fail("sampler.snr and sampler.scale_coeff must be positive");
        }
        for (k, lr) in [("train.lr", self.adam.lr), ("bond.lr", self.bond_train.adam.lr)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return fail(&format!("{k} must be positive"));
            }
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return fail("train.ema must lie in [0, 1)");
        }
        self.assembly
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("assembly.threshold: {e}")))?;
        if self.assembly.ring_min < 3 || self.assembly.ring_min > self.assembly.ring_max {
            return fail("need 3 <= assembly.ring_min <= assembly.ring_max");
        }
        Ok(())
    }

    pub fn diffusion(&self) -> DiffusionConfig {
        DiffusionConfig {
            theta: self.theta,
            phi: self.phi,
            sde_f: self.sde_f,
            sde_c: self.sde_c,
            epochs: self.epochs,
            batch_size: self.batch_size,
            adam: self.adam,
            ema_decay: self.ema_decay,
            ema_warmup: self.ema_warmup,
            seed: self.seed,
        }
    }

    pub fn bond_training(&self) -> BondTrainConfig {
        BondTrainConfig {
            seed: self.seed,
            ..self.bond_train
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::preset(Preset::default())
    }
}

fn bad(key: &str, value: &str, reason: &str) -> ConfigError {
    ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        reason: reason.to_string(),
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value.parse().map_err(|e: T::Err| bad(key, value, &e.to_string()))
}

fn parse_sde_kind(key: &str, value: &str) -> Result<SdeKind, ConfigError> {
    value.parse().map_err(|e: orgmol_core::sde::SdeError| bad(key, value, &e.to_string()))
}

/// `key = value` pairs in file order.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    text.lines()
        .enumerate()
        .filter_map(|(i, raw)| {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                return None;
            }
            Some(match line.split_once('=') {
                Some((k, v)) if !k.trim().is_empty() => Ok((k.trim().to_string(), v.trim().to_string())),
                _ => Err(ConfigError::Syntax { line: i + 1 }),
            })
        })
        .collect()
}
