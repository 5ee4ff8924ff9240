//! Forward noising processes, denoising score matching and the
//! predictor-corrector sampler over fragment graphs.

mod sample;
mod train;

pub use sample::{draw_sizes, pc_sample, pc_sample_raw, NetScores, RawSamples, SamplerConfig, Samples, ScoreSource};
pub use train::{
    dsm_loss, train_diffusion, DiffusionCheckpoint, DiffusionConfig, DsmLoss, EpochLoss, ScoreFn,
};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::tensor::{Tensor, TensorError};
use crate::vocab::FragGraphTensor;

/// Smallest diffusion time used in training and sampling.
pub const T_EPS: f64 = 1e-5;

#[derive(Debug, thiserror::Error)]
pub enum SdeError {
    #[error("time {0} outside (0, 1]")]
    OutOfRangeT(f64),
    #[error("invalid SDE: {0}")]
    InvalidSpec(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdeKind {
    /// Variance preserving; range is (β_min, β_max).
    Vp,
    /// Variance exploding; range is (σ_min, σ_max).
    Ve,
}

impl std::fmt::Display for SdeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SdeKind::Vp => "vp",
            SdeKind::Ve => "ve",
        })
    }
}

impl std::str::FromStr for SdeKind {
    type Err = SdeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "vp" => Ok(SdeKind::Vp),
            "ve" => Ok(SdeKind::Ve),
            other => Err(SdeError::InvalidSpec(format!("unknown SDE kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdeSpec {
    pub kind: SdeKind,
    pub p_min: f64,
    pub p_max: f64,
    pub steps: usize,
}

impl SdeSpec {
    pub fn vp(beta_min: f64, beta_max: f64, steps: usize) -> SdeSpec {
        SdeSpec {
            kind: SdeKind::Vp,
            p_min: beta_min,
            p_max: beta_max,
            steps,
        }
    }

    pub fn ve(sigma_min: f64, sigma_max: f64, steps: usize) -> SdeSpec {
        SdeSpec {
            kind: SdeKind::Ve,
            p_min: sigma_min,
            p_max: sigma_max,
            steps,
        }
    }

    pub fn validate(&self) -> Result<(), SdeError> {
        if !(self.p_min > 0.0 && self.p_min < self.p_max && self.p_max.is_finite()) {
            return Err(SdeError::InvalidSpec(format!(
                "need 0 < min < max, got {} and {}",
                self.p_min, self.p_max
            )));
        }
        if self.steps == 0 {
            return Err(SdeError::InvalidSpec("steps must be at least 1".into()));
        }
        Ok(())
    }

    /// Mean coefficient and std of the perturbation kernel at time `t`.
    pub fn marginal(&self, t: f64) -> Result<(f64, f64), SdeError> {
        if !(t > 0.0 && t <= 1.0) {
            return Err(SdeError::OutOfRangeT(t));
        }
        Ok(self.marginal_unchecked(t))
    }

    fn marginal_unchecked(&self, t: f64) -> (f64, f64) {
        match self.kind {
            SdeKind::Vp => {
                let log_mean = -0.25 * t * t * (self.p_max - self.p_min) - 0.5 * t * self.p_min;
                let mean = log_mean.exp();
                (mean, (-(2.0 * log_mean).exp_m1()).sqrt())
            }
            SdeKind::Ve => (1.0, self.p_min * (self.p_max / self.p_min).powf(t)),
        }
    }

    /// Linear drift coefficient `a` (drift is `a·x`) and diffusion `g`.
    pub fn drift_diffusion(&self, t: f64) -> (f64, f64) {
        match self.kind {
            SdeKind::Vp => {
                let beta = self.p_min + t * (self.p_max - self.p_min);
                (-0.5 * beta, beta.sqrt())
            }
            SdeKind::Ve => {
                let sigma = self.p_min * (self.p_max / self.p_min).powf(t);
                (0.0, sigma * (2.0 * (self.p_max / self.p_min).ln()).sqrt())
            }
        }
    }

    /// Std of the sampling prior.
    pub fn prior_std(&self) -> f64 {
        match self.kind {
            SdeKind::Vp => 1.0,
            SdeKind::Ve => self.p_max,
        }
    }
}

/// A noised fragment graph with the noise that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbed {
    pub f: Tensor,
    pub c: Tensor,
    pub z_f: Tensor,
    pub z_c: Tensor,
}

/// Draws `G_t` from the product kernel. Padding stays zero; adjacency noise
/// is drawn on the upper triangle and mirrored.
pub fn perturb<R: Rng>(
    g0: &FragGraphTensor,
    t_f: f64,
    t_c: f64,
    sde_f: &SdeSpec,
    sde_c: &SdeSpec,
    rng: &mut R,
) -> Result<Perturbed, SdeError> {
    let (mf, sf) = sde_f.marginal(t_f)?;
    let (mc, sc) = sde_c.marginal(t_c)?;
    let (n, k) = (g0.n_max(), g0.k());
    let z_f = row_noise(&g0.mask, k, rng);
    let z_c = symmetric_noise(&g0.mask, rng);
    let f = Tensor::new(
        &[n, k],
        g0.f.data().iter().zip(z_f.data()).map(|(x, z)| mf * x + sf * z).collect(),
    )?;
    let live = |i: usize, j: usize| i != j && g0.mask[i] && g0.mask[j];
    let mut c = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in 0..n {
            if live(i, j) {
                let at = i * n + j;
                c.data_mut()[at] = mc * g0.c.data()[at] + sc * z_c.data()[at];
            }
        }
    }
    Ok(Perturbed { f, c, z_f, z_c })
}

/// Standard normal rows for live nodes, zeros elsewhere.
pub(crate) fn row_noise<R: Rng>(mask: &[bool], k: usize, rng: &mut R) -> Tensor {
    let mut data = Vec::with_capacity(mask.len() * k);
    for &m in mask {
        for _ in 0..k {
            data.push(if m { rng.sample(StandardNormal) } else { 0.0 });
        }
    }
    Tensor::new(&[mask.len(), k], data).expect("shape")
}

/// Symmetric standard normal noise on live off-diagonal pairs.
pub(crate) fn symmetric_noise<R: Rng>(mask: &[bool], rng: &mut R) -> Tensor {
    let n = mask.len();
    let mut z = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in i + 1..n {
            if mask[i] && mask[j] {
                let v: f64 = rng.sample(StandardNormal);
                z.data_mut()[i * n + j] = v;
                z.data_mut()[j * n + i] = v;
            }
        }
    }
    z
}

/// A quantized fragment graph: vocabulary rank per node and undirected edges
/// `(i, j)` with `i < j`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DiscreteGraph {
    pub ranks: Vec<usize>,
    pub edges: Vec<(usize, usize)>,
}

/// Argmax over the vocabulary axis for live rows; adjacency clamped to
/// `[0, 1]` and thresholded at 0.5. Live nodes are renumbered in order.
pub fn quantize(f: &Tensor, c: &Tensor, mask: &[bool]) -> DiscreteGraph {
    let (n, k) = (f.shape()[0], f.shape()[1]);
    assert_eq!(mask.len(), n, "mask length");
    assert_eq!(c.shape(), [n, n], "adjacency shape");
    let live: Vec<usize> = (0..n).filter(|&i| mask[i]).collect();
    let ranks = live
        .iter()
        .map(|&i| {
            let row = &f.data()[i * k..(i + 1) * k];
            // first maximum wins
            (0..k).fold(0, |best, q| if row[q] > row[best] { q } else { best })
        })
        .collect();
    let mut edges = Vec::new();
    for (a, &i) in live.iter().enumerate() {
        for (b, &j) in live.iter().enumerate().skip(a + 1) {
            let v = 0.5 * (c.data()[i * n + j] + c.data()[j * n + i]);
            if v.clamp(0.0, 1.0) >= 0.5 {
                edges.push((a, b));
            }
        }
    }
    DiscreteGraph { ranks, edges }
}
