use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{quantize, DiffusionCheckpoint, DiscreteGraph, SdeError, SdeSpec, T_EPS};
use crate::nets::{eps_phi, eps_theta, NetInput, PhiParams, ThetaParams};
use crate::tensor::{Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig {
    pub snr: f64,
    pub scale_coeff: f64,
    /// Langevin steps before each predictor step.
    pub corrector_steps: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            snr: 0.2,
            scale_coeff: 0.5,
            corrector_steps: 1,
        }
    }
}

/// Score estimates for batches of graphs with every node live.
pub trait ScoreSource {
    /// Returns scores shaped like `f` (`[B, N, K]`) and `c` (`[B, N, N]`),
    /// plus the bytes held while computing them.
    fn scores(&self, f: &Tensor, c: &Tensor, t: f64, std_f: f64, std_c: f64) -> Result<(Tensor, Tensor, usize), SdeError>;
}

/// Scores from the trained networks.
#[derive(Debug, Clone, Copy)]
pub struct NetScores<'a> {
    pub theta: &'a ThetaParams,
    pub phi: &'a PhiParams,
}

impl ScoreSource for NetScores<'_> {
    fn scores(&self, f: &Tensor, c: &Tensor, _t: f64, std_f: f64, std_c: f64) -> Result<(Tensor, Tensor, usize), SdeError> {
        let (b, n) = (f.shape()[0], f.shape()[1]);
        let mask = vec![true; b * n];
        let x_f = NetInput::new(f.clone(), c.clone(), mask.clone(), vec![1.0 / std_f; b])?;
        let x_c = NetInput::new(f.clone(), c.clone(), mask, vec![1.0 / std_c; b])?;
        let tape = Tape::new();
        let tv = self.theta.params.bind_const(&tape);
        let pv = self.phi.params.bind_const(&tape);
        let sf = eps_theta(&self.theta.config, &tv, &x_f)?;
        let sc = eps_phi(&self.phi.config, &pv, &x_c)?;
        Ok(((*sf.value()).clone(), (*sc.value()).clone(), tape.bytes()))
    }
}

/// Continuous sampler output, one entry per requested sample.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSamples {
    /// Final `(F, C)` as `[n, K]` and `[n, n]`; `None` for aborted samples.
    pub states: Vec<Option<(Tensor, Tensor)>>,
    pub aborted: usize,
    pub peak_bytes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    pub graphs: Vec<Option<DiscreteGraph>>,
    pub aborted: usize,
    pub peak_bytes: usize,
}

/// Draws live sizes from a histogram indexed by size.
pub fn draw_sizes<R: Rng>(histogram: &[usize], count: usize, rng: &mut R) -> Result<Vec<usize>, SdeError> {
    let dist = WeightedIndex::new(histogram).map_err(|e| SdeError::InvalidSpec(format!("size histogram: {e}")))?;
    Ok((0..count).map(|_| dist.sample(rng)).collect())
}

/// The RNG owned by sample `index`.
fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

fn normals(rng: &mut ChaCha8Rng, out: &mut [f64]) {
    out.iter_mut().for_each(|x| *x = rng.sample(StandardNormal));
}

fn symmetric_normals(rng: &mut ChaCha8Rng, n: usize, out: &mut [f64]) {
    out.iter_mut().for_each(|x| *x = 0.0);
    for i in 0..n {
        for j in i + 1..n {
            let v: f64 = rng.sample(StandardNormal);
            out[i * n + j] = v;
            out[j * n + i] = v;
        }
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// State of one group of equally sized samples.
struct Group {
    members: Vec<usize>,
    rngs: Vec<ChaCha8Rng>,
    n: usize,
    k: usize,
    f: Vec<f64>,
    c: Vec<f64>,
    alive: Vec<bool>,
}

impl Group {
    fn scores(&self, source: &dyn ScoreSource, t: f64, sde_f: &SdeSpec, sde_c: &SdeSpec) -> Result<(Tensor, Tensor, usize), SdeError> {
        let b = self.members.len();
        let f = Tensor::new(&[b, self.n, self.k], self.f.clone())?;
        let c = Tensor::new(&[b, self.n, self.n], self.c.clone())?;
        source.scores(&f, &c, t, sde_f.marginal(t)?.1, sde_c.marginal(t)?.1)
    }

    fn check(&mut self, m: usize) {
        let (wf, wc) = (self.n * self.k, self.n * self.n);
        let finite = self.f[m * wf..(m + 1) * wf].iter().chain(&self.c[m * wc..(m + 1) * wc]).all(|x| x.is_finite());
        if !finite {
            self.alive[m] = false;
            self.f[m * wf..(m + 1) * wf].iter_mut().for_each(|x| *x = 0.0);
            self.c[m * wc..(m + 1) * wc].iter_mut().for_each(|x| *x = 0.0);
        }
    }
}

/// Predictor-corrector sampling of graphs with the given live sizes.
///
/// Each time step runs Langevin corrector steps and then an Euler-Maruyama
/// step of the reverse SDE, for features and adjacency separately; the final
/// step returns the noise-free mean. Samples are batched by size; sample `i`
/// draws all its noise from its own stream of `seed`.
pub fn pc_sample_raw(
    source: &dyn ScoreSource,
    sizes: &[usize],
    k: usize,
    sde_f: &SdeSpec,
    sde_c: &SdeSpec,
    cfg: &SamplerConfig,
    seed: u64,
) -> Result<RawSamples, SdeError> {
    sde_f.validate()?;
    sde_c.validate()?;
    if sde_f.steps != sde_c.steps {
        return Err(SdeError::InvalidSpec("feature and adjacency SDEs need equal step counts".into()));
    }
    if !(cfg.snr > 0.0 && cfg.scale_coeff > 0.0 && cfg.scale_coeff <= 1.0) {
        return Err(SdeError::InvalidSpec("need snr > 0 and scale coefficient in (0, 1]".into()));
    }
    let steps = sde_f.steps;
    let dt = 1.0 / steps as f64;
    let times: Vec<f64> = if steps == 1 {
        vec![1.0]
    } else {
        (0..steps).map(|i| 1.0 - i as f64 * (1.0 - T_EPS) / (steps - 1) as f64).collect()
    };
    let mut by_size: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &n) in sizes.iter().enumerate() {
        by_size.entry(n).or_default().push(i);
    }
    let mut states: Vec<Option<(Tensor, Tensor)>> = vec![None; sizes.len()];
    let mut aborted = 0;
    let mut peak_bytes = 0;
    for (n, members) in by_size {
        let b = members.len();
        let (wf, wc) = (n * k, n * n);
        let mut g = Group {
            rngs: members.iter().map(|&i| sample_rng(seed, i)).collect(),
            members,
            n,
            k,
            f: vec![0.0; b * wf],
            c: vec![0.0; b * wc],
            alive: vec![true; b],
        };
        for m in 0..b {
            normals(&mut g.rngs[m], &mut g.f[m * wf..(m + 1) * wf]);
            symmetric_normals(&mut g.rngs[m], n, &mut g.c[m * wc..(m + 1) * wc]);
        }
        let (pf, pc) = (sde_f.prior_std(), sde_c.prior_std());
        g.f.iter_mut().for_each(|x| *x *= pf);
        g.c.iter_mut().for_each(|x| *x *= pc);
        let mut zf = vec![0.0; wf];
        let mut zc = vec![0.0; wc];
        for (step, &t) in times.iter().enumerate() {
            for _ in 0..cfg.corrector_steps {
                let (sf, sc, bytes) = g.scores(source, t, sde_f, sde_c)?;
                peak_bytes = peak_bytes.max(bytes);
                let mut noise_f = vec![0.0; b * wf];
                let mut noise_c = vec![0.0; b * wc];
                for m in 0..b {
                    if g.alive[m] {
                        normals(&mut g.rngs[m], &mut noise_f[m * wf..(m + 1) * wf]);
                        symmetric_normals(&mut g.rngs[m], n, &mut noise_c[m * wc..(m + 1) * wc]);
                    }
                }
                let delta_f = step_size(sf.data(), &noise_f, wf, &g.alive, cfg);
                let delta_c = step_size(sc.data(), &noise_c, wc, &g.alive, cfg);
                for m in 0..b {
                    if !g.alive[m] {
                        continue;
                    }
                    let (rf, rc) = (m * wf..(m + 1) * wf, m * wc..(m + 1) * wc);
                    langevin(&mut g.f[rf.clone()], &sf.data()[rf.clone()], &noise_f[rf], delta_f);
                    langevin(&mut g.c[rc.clone()], &sc.data()[rc.clone()], &noise_c[rc], delta_c);
                    g.check(m);
                }
            }
            let last = step + 1 == times.len();
            let (sf, sc, bytes) = g.scores(source, t, sde_f, sde_c)?;
            peak_bytes = peak_bytes.max(bytes);
            let (af, gf) = sde_f.drift_diffusion(t);
            let (ac, gc) = sde_c.drift_diffusion(t);
            for m in 0..b {
                if !g.alive[m] {
                    continue;
                }
                normals(&mut g.rngs[m], &mut zf);
                symmetric_normals(&mut g.rngs[m], n, &mut zc);
                let noise = if last { 0.0 } else { 1.0 };
                reverse_step(&mut g.f[m * wf..(m + 1) * wf], &sf.data()[m * wf..(m + 1) * wf], &zf, af, gf * noise, gf, dt);
                reverse_step(&mut g.c[m * wc..(m + 1) * wc], &sc.data()[m * wc..(m + 1) * wc], &zc, ac, gc * noise, gc, dt);
                g.check(m);
            }
        }
        for (m, &i) in g.members.iter().enumerate() {
            if g.alive[m] {
                let f = Tensor::new(&[n, k], g.f[m * wf..(m + 1) * wf].to_vec())?;
                let c = Tensor::new(&[n, n], g.c[m * wc..(m + 1) * wc].to_vec())?;
                states[i] = Some((f, c));
            } else {
                aborted += 1;
            }
        }
    }
    Ok(RawSamples {
        states,
        aborted,
        peak_bytes,
    })
}

/// δ = 2·scale·(snr·‖z‖/‖s‖)² with both norms averaged over the live
/// samples of a group.
fn step_size(s: &[f64], z: &[f64], width: usize, alive: &[bool], cfg: &SamplerConfig) -> f64 {
    let live: Vec<usize> = (0..alive.len()).filter(|&m| alive[m]).collect();
    if live.is_empty() || width == 0 {
        return 0.0;
    }
    let mean_norm = |x: &[f64]| live.iter().map(|&m| norm(&x[m * width..(m + 1) * width])).sum::<f64>() / live.len() as f64;
    let (ns, nz) = (mean_norm(s), mean_norm(z));
    if ns == 0.0 {
        return 0.0;
    }
    2.0 * cfg.scale_coeff * (cfg.snr * nz / ns).powi(2)
}

/// x ← x + δ·s + sqrt(2δ)·z.
fn langevin(x: &mut [f64], s: &[f64], z: &[f64], delta: f64) {
    let w = (2.0 * delta).sqrt();
    for ((x, s), z) in x.iter_mut().zip(s).zip(z) {
        *x += delta * s + w * z;
    }
}

/// One reverse-time Euler-Maruyama step of dx = (a·x − g²·s) dt + g dw.
fn reverse_step(x: &mut [f64], s: &[f64], z: &[f64], a: f64, noise_g: f64, g: f64, dt: f64) {
    let w = noise_g * dt.sqrt();
    for ((x, s), z) in x.iter_mut().zip(s).zip(z) {
        *x = *x - (a * *x - g * g * s) * dt + w * z;
    }
}

/// Samples `count` fragment graphs from a trained checkpoint and quantizes
/// them. Sizes come from the checkpoint's histogram.
pub fn pc_sample(ckpt: &DiffusionCheckpoint, count: usize, cfg: &SamplerConfig, seed: u64) -> Result<Samples, SdeError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sizes = draw_sizes(&ckpt.size_histogram, count, &mut rng)?;
    let source = NetScores {
        theta: &ckpt.theta,
        phi: &ckpt.phi,
    };
    let raw = pc_sample_raw(&source, &sizes, ckpt.theta.config.k, &ckpt.sde_f, &ckpt.sde_c, cfg, seed)?;
    let graphs = raw
        .states
        .iter()
        .map(|s| {
            s.as_ref().map(|(f, c)| {
                let n = f.shape()[0];
                quantize(f, c, &vec![true; n])
            })
        })
        .collect();
    Ok(Samples {
        graphs,
        aborted: raw.aborted,
        peak_bytes: raw.peak_bytes,
    })
}
