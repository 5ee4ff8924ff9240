use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{perturb, Perturbed, SdeError, SdeSpec, T_EPS};
use crate::nets::{eps_phi, eps_theta, NetInput, PhiConfig, PhiParams, ThetaConfig, ThetaParams};
use crate::tensor::{Adam, AdamConfig, Ema, Tape, Tensor, TensorError, Var};
use crate::vocab::FragGraphTensor;

/// A score estimate for a batch: the input carries `1/std(t)` as its output
/// scale, the slice holds each sample's time.
pub type ScoreFn<'a, 't> = dyn Fn(&NetInput, &[f64]) -> Result<Var<'t>, TensorError> + 'a;

/// Denoising score-matching losses recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct DsmLoss<'t> {
    pub f: Var<'t>,
    pub c: Var<'t>,
}

/// Live-only copy of a padded graph.
pub(crate) fn trimmed(g: &FragGraphTensor) -> FragGraphTensor {
    let live: Vec<usize> = (0..g.n_max()).filter(|&i| g.mask[i]).collect();
    let (n, k, nm) = (live.len(), g.k(), g.n_max());
    let mut f = Vec::with_capacity(n * k);
    let mut c = Vec::with_capacity(n * n);
    for &i in &live {
        f.extend_from_slice(&g.f.data()[i * k..(i + 1) * k]);
        c.extend(live.iter().map(|&j| g.c.data()[i * nm + j]));
    }
    FragGraphTensor {
        f: Tensor::new(&[n, k], f).expect("shape"),
        c: Tensor::new(&[n, n], c).expect("shape"),
        mask: vec![true; n],
        n_live: n,
    }
}

fn stack(parts: &[&Tensor]) -> Tensor {
    let mut shape = vec![parts.len()];
    shape.extend_from_slice(parts[0].shape());
    Tensor::new(&shape, parts.iter().flat_map(|t| t.data().iter().copied()).collect()).expect("equal shapes")
}

/// Per-sample constant broadcast over `per` entries.
fn per_sample(values: &[f64], shape: &[usize]) -> Tensor {
    let per: usize = shape[1..].iter().product();
    Tensor::new(shape, values.iter().flat_map(|&v| std::iter::repeat_n(v, per)).collect()).expect("shape")
}

/// Mean of ‖std·s + z‖² over live entries, separately for features and
/// adjacency, with one `t ~ U(T_EPS, 1)` per graph shared by both parts.
///
/// Graphs are grouped by live size and run without padding.
pub fn dsm_loss<'t, R: Rng>(
    tape: &'t Tape,
    batch: &[&FragGraphTensor],
    sde_f: &SdeSpec,
    sde_c: &SdeSpec,
    rng: &mut R,
    score_f: &ScoreFn<'_, 't>,
    score_c: &ScoreFn<'_, 't>,
) -> Result<DsmLoss<'t>, SdeError> {
    if batch.is_empty() {
        return Err(SdeError::EmptyBatch);
    }
    let mut noised: Vec<(f64, Perturbed)> = Vec::with_capacity(batch.len());
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, g) in batch.iter().enumerate() {
        let t = rng.random_range(T_EPS..=1.0);
        let live = trimmed(g);
        noised.push((t, perturb(&live, t, t, sde_f, sde_c, rng)?));
        groups.entry(live.n_live).or_default().push(i);
    }
    let (mut sum_f, mut sum_c) = (Vec::new(), Vec::new());
    let (mut count_f, mut count_c) = (0usize, 0usize);
    for (&n, members) in &groups {
        if n == 0 {
            continue;
        }
        let b = members.len();
        let k = noised[members[0]].1.f.shape()[1];
        let ts: Vec<f64> = members.iter().map(|&i| noised[i].0).collect();
        let std_f: Vec<f64> = ts.iter().map(|&t| sde_f.marginal(t).map(|m| m.1)).collect::<Result<_, _>>()?;
        let std_c: Vec<f64> = ts.iter().map(|&t| sde_c.marginal(t).map(|m| m.1)).collect::<Result<_, _>>()?;
        let f = stack(&members.iter().map(|&i| &noised[i].1.f).collect::<Vec<_>>());
        let c = stack(&members.iter().map(|&i| &noised[i].1.c).collect::<Vec<_>>());
        let z_f = stack(&members.iter().map(|&i| &noised[i].1.z_f).collect::<Vec<_>>());
        let z_c = stack(&members.iter().map(|&i| &noised[i].1.z_c).collect::<Vec<_>>());
        let mask = vec![true; b * n];
        let inv = |s: &[f64]| s.iter().map(|x| 1.0 / x).collect::<Vec<_>>();
        let x_f = NetInput::new(f.clone(), c.clone(), mask.clone(), inv(&std_f))?;
        let x_c = NetInput::new(f, c, mask, inv(&std_c))?;

        let out = score_f(&x_f, &ts)?;
        let r = out.mul(tape.constant(per_sample(&std_f, &[b, n, k]))).add(tape.constant(z_f));
        sum_f.push(r.mul(r).sum());
        count_f += b * n * k;

        if n > 1 {
            let out = score_c(&x_c, &ts)?;
            let r = out.mul(tape.constant(per_sample(&std_c, &[b, n, n]))).add(tape.constant(z_c));
            sum_c.push(r.mul(r).sum());
            count_c += b * n * (n - 1);
        }
    }
    let mean = |parts: Vec<Var<'t>>, count: usize| match parts.split_first() {
        Some((first, rest)) => rest.iter().fold(*first, |acc, v| acc.add(*v)).scale(1.0 / count as f64),
        None => tape.constant(Tensor::scalar(0.0)),
    };
    Ok(DsmLoss {
        f: mean(sum_f, count_f),
        c: mean(sum_c, count_c),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionConfig {
    pub theta: ThetaConfig,
    pub phi: PhiConfig,
    pub sde_f: SdeSpec,
    pub sde_c: SdeSpec,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub ema_decay: f64,
    pub ema_warmup: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub loss_f: f64,
    pub loss_c: f64,
}

/// Trained score networks (EMA weights) plus what sampling needs.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionCheckpoint {
    pub theta: ThetaParams,
    pub phi: PhiParams,
    pub sde_f: SdeSpec,
    pub sde_c: SdeSpec,
    pub vocab_fingerprint: String,
    /// `size_histogram[n]` graphs in the training corpus had `n` live nodes.
    pub size_histogram: Vec<usize>,
    pub seed: u64,
}

impl DiffusionCheckpoint {
    pub fn n_max(&self) -> usize {
        self.size_histogram.len().saturating_sub(1)
    }
}

/// Minimizes the summed feature and adjacency losses with Adam, keeping EMA
/// shadows of both networks. `on_epoch` sees each epoch's mean losses.
pub fn train_diffusion(
    corpus: &[FragGraphTensor],
    vocab_fingerprint: &str,
    cfg: &DiffusionConfig,
    mut on_epoch: impl FnMut(&EpochLoss),
) -> Result<(DiffusionCheckpoint, Vec<EpochLoss>), SdeError> {
    if corpus.is_empty() {
        return Err(SdeError::EmptyBatch);
    }
    cfg.sde_f.validate()?;
    cfg.sde_c.validate()?;
    if cfg.batch_size == 0 {
        return Err(SdeError::InvalidSpec("batch size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut theta = ThetaParams::init(cfg.theta, &mut rng);
    let mut phi = PhiParams::init(cfg.phi, &mut rng);
    let mut adam_t = Adam::new(cfg.adam, &theta.params);
    let mut adam_p = Adam::new(cfg.adam, &phi.params);
    let mut ema_t = Ema::new(cfg.ema_decay, cfg.ema_warmup, &theta.params);
    let mut ema_p = Ema::new(cfg.ema_decay, cfg.ema_warmup, &phi.params);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut acc_f, mut acc_c) = (0.0, 0.0);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&FragGraphTensor> = chunk.iter().map(|&i| &corpus[i]).collect();
            let tape = Tape::new();
            let tv = theta.params.bind(&tape);
            let pv = phi.params.bind(&tape);
            let sf = |x: &NetInput, _: &[f64]| eps_theta(&theta.config, &tv, x);
            let sc = |x: &NetInput, _: &[f64]| eps_phi(&phi.config, &pv, x);
            let loss = dsm_loss(&tape, &batch, &cfg.sde_f, &cfg.sde_c, &mut rng, &sf, &sc)?;
            let (lf, lc) = (loss.f.value().item(), loss.c.value().item());
            if !(lf.is_finite() && lc.is_finite()) {
                return Err(SdeError::NonFiniteLoss { epoch });
            }
            let w = chunk.len() as f64 / corpus.len() as f64;
            acc_f += w * lf;
            acc_c += w * lc;
            let mut grads = tape.backward(loss.f.add(loss.c));
            let gt: Vec<Tensor> = tv.iter().map(|&v| grads.wrt(v)).collect();
            let gp: Vec<Tensor> = pv.iter().map(|&v| grads.wrt(v)).collect();
            adam_t.step(&mut theta.params, &gt);
            adam_p.step(&mut phi.params, &gp);
            ema_t.update(&theta.params);
            ema_p.update(&phi.params);
        }
        adam_t.end_epoch();
        adam_p.end_epoch();
        let log = EpochLoss {
            epoch,
            loss_f: acc_f,
            loss_c: acc_c,
        };
        on_epoch(&log);
        history.push(log);
    }
    let n_max = corpus.iter().map(|g| g.n_live).max().unwrap_or(0);
    let mut size_histogram = vec![0; n_max + 1];
    for g in corpus {
        size_histogram[g.n_live] += 1;
    }
    let ckpt = DiffusionCheckpoint {
        theta: ThetaParams {
            config: cfg.theta,
            params: ema_t.into_shadow(),
        },
        phi: PhiParams {
            config: cfg.phi,
            params: ema_p.into_shadow(),
        },
        sde_f: cfg.sde_f,
        sde_c: cfg.sde_c,
        vocab_fingerprint: vocab_fingerprint.to_string(),
        size_histogram,
        seed: cfg.seed,
    };
    Ok((ckpt, history))
}
