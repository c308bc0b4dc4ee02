//! Diffusion over 2-D accelerations: the noise schedule, the closed-form
//! forward marginal, the conditional denoiser (clean-sample
//! parameterization), and ancestral (stochastic) plus deterministic samplers.
//!
//! Schedules index steps `k = 1..=K`; the cumulative product array carries
//! the convention `alpha_bar[0] = 1`, which makes the last reverse step of
//! both samplers collapse onto the predicted clean sample.

use crate::autodiff::{concat, sinusoidal_embedding, Affine, LayerNorm, ParamSet, Value};
use crate::{Error, Result};
use rand::Rng;
use rand_distr::StandardNormal;

/// Shape of the beta sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScheduleShape {
    Linear,
    Cosine,
}

/// Noise schedule: per-step variances and derived cumulative products.
#[derive(Clone, Debug)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    /// `alpha_bar[k]` for `k = 0..=K`, with `alpha_bar[0] = 1`.
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// Build from explicit betas in `[0, 1)`. The validated constructors are
    /// [`make_schedule`]; this one admits zero betas for noiseless-chain
    /// analysis.
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::invalid("schedule needs at least one step"));
        }
        if betas.iter().any(|b| !(0.0..1.0).contains(b)) {
            return Err(Error::invalid("betas must lie in [0, 1)"));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(betas.len() + 1);
        alpha_bar.push(1.0);
        for a in &alphas {
            alpha_bar.push(alpha_bar.last().unwrap() * a);
        }
        Ok(NoiseSchedule {
            betas,
            alphas,
            alpha_bar,
        })
    }

    pub fn num_steps(&self) -> usize {
        self.betas.len()
    }

    /// `beta_k`, `k = 1..=K`.
    pub fn beta(&self, k: usize) -> f64 {
        self.betas[k - 1]
    }

    pub fn alpha(&self, k: usize) -> f64 {
        self.alphas[k - 1]
    }

    /// Cumulative product through step `k`; `alpha_bar(0) = 1`.
    pub fn alpha_bar(&self, k: usize) -> f64 {
        self.alpha_bar[k]
    }
}

/// Validated schedule construction with monotone betas.
pub fn make_schedule(
    steps: usize,
    beta_start: f64,
    beta_end: f64,
    shape: ScheduleShape,
) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::invalid("schedule needs at least one step"));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::invalid(format!(
            "beta range must satisfy 0 < start <= end < 1, got [{beta_start}, {beta_end}]"
        )));
    }
    let betas = match shape {
        ScheduleShape::Linear => (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect(),
        ScheduleShape::Cosine => {
            // Squared-cosine cumulative profile; betas derived from the
            // alpha-bar ratios and clamped into the requested range.
            let s = 0.008;
            let f = |t: f64| ((t / steps as f64 + s) / (1.0 + s) * std::f64::consts::FRAC_PI_2)
                .cos()
                .powi(2);
            (1..=steps)
                .map(|k| {
                    let b = 1.0 - f(k as f64) / f((k - 1) as f64);
                    b.clamp(beta_start, beta_end)
                })
                .collect()
        }
    };
    NoiseSchedule::from_betas(betas)
}

/// Closed-form forward marginal: `y_k = sqrt(ab_k) y0 + sqrt(1 - ab_k) eps`.
pub fn forward_sample(
    y0: [f64; 2],
    k: usize,
    schedule: &NoiseSchedule,
    rng: &mut impl Rng,
) -> Result<[f64; 2]> {
    if k == 0 || k > schedule.num_steps() {
        return Err(Error::invalid(format!(
            "diffusion step {k} outside 1..={}",
            schedule.num_steps()
        )));
    }
    let ab = schedule.alpha_bar(k);
    let signal = ab.sqrt();
    let noise = (1.0 - ab).sqrt();
    let e0: f64 = rng.sample(StandardNormal);
    let e1: f64 = rng.sample(StandardNormal);
    Ok([y0[0] * signal + e0 * noise, y0[1] * signal + e1 * noise])
}

/// One step of the underlying chain: `y_k = sqrt(1 - b_k) y_{k-1} + sqrt(b_k) eps`.
pub fn chain_step(
    y_prev: [f64; 2],
    k: usize,
    schedule: &NoiseSchedule,
    rng: &mut impl Rng,
) -> [f64; 2] {
    let b = schedule.beta(k);
    let keep = (1.0 - b).sqrt();
    let e0: f64 = rng.sample(StandardNormal);
    let e1: f64 = rng.sample(StandardNormal);
    [
        y_prev[0] * keep + e0 * b.sqrt(),
        y_prev[1] * keep + e1 * b.sqrt(),
    ]
}

/// Denoiser settings: residual MLP stack over the concatenated timestep
/// embedding, projected conditioning, and noisy sample.
#[derive(Clone, Copy, Debug)]
pub struct DenoiserSettings {
    pub t_embed_dim: usize,
    pub cond_in_dim: usize,
    pub cond_dim: usize,
    pub width: usize,
    pub depth: usize,
}

/// Conditional denoiser predicting the clean acceleration.
pub struct Denoiser {
    pub settings: DenoiserSettings,
    cond_proj: Affine,
    in_proj: Affine,
    norm: LayerNorm,
    blocks: Vec<(Affine, Affine)>,
    head: Affine,
}

impl Denoiser {
    pub fn new(params: &mut ParamSet, settings: DenoiserSettings, rng: &mut impl Rng) -> Self {
        let width = settings.width;
        let in_dim = settings.t_embed_dim + settings.cond_dim + 2;
        Denoiser {
            cond_proj: Affine::init(params, "denoiser.cond", settings.cond_dim, settings.cond_in_dim, rng),
            in_proj: Affine::init(params, "denoiser.in", width, in_dim, rng),
            norm: LayerNorm::init(params, "denoiser.norm", width),
            blocks: (0..settings.depth)
                .map(|i| {
                    (
                        Affine::init(params, &format!("denoiser.block{i}.a"), width, width, rng),
                        Affine::init(params, &format!("denoiser.block{i}.b"), width, width, rng),
                    )
                })
                .collect(),
            head: Affine::init(params, "denoiser.head", 2, width, rng),
            settings,
        }
    }

    /// Predict the clean acceleration from a noisy one. Deterministic in its
    /// inputs; `k` is the diffusion step the sample sits at.
    pub fn denoise(&self, y_k: &Value, k: usize, conditioning: &Value) -> Value {
        assert_eq!(y_k.shape(), &[2], "denoiser input must be a 2-vector, got {:?}", y_k.shape());
        let t = sinusoidal_embedding(k, self.settings.t_embed_dim);
        let c = self.cond_proj.apply(conditioning).tanh();
        let mut h = self.norm.apply(&self.in_proj.apply(&concat(&[&t, &c, y_k])));
        for (a, b) in &self.blocks {
            let inner = b.apply(&a.apply(&h).tanh());
            h = h.add(&inner);
        }
        self.head.apply(&h)
    }

    /// Plain-array convenience used by the samplers during inference.
    pub fn denoise_plain(&self, y_k: [f64; 2], k: usize, conditioning: &Value) -> [f64; 2] {
        let out = self.denoise(&Value::vector(vec![y_k[0], y_k[1]]), k, conditioning);
        let d = out.data();
        [d[0], d[1]]
    }
}

/// Ancestral sampling: start at pure noise and walk the learned posterior
/// down to the clean sample. The posterior at `k = 1` has zero variance, so
/// the final state equals the last clean-sample prediction.
pub fn sample_ddpm(
    denoise: &mut impl FnMut([f64; 2], usize) -> [f64; 2],
    schedule: &NoiseSchedule,
    rng: &mut impl Rng,
) -> [f64; 2] {
    let k_max = schedule.num_steps();
    let mut y = [
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
    ];
    for k in (1..=k_max).rev() {
        let y0 = denoise(y, k);
        let ab_k = schedule.alpha_bar(k);
        let ab_prev = schedule.alpha_bar(k - 1);
        let beta = schedule.beta(k);
        let alpha = schedule.alpha(k);
        let coeff_y0 = ab_prev.sqrt() * beta / (1.0 - ab_k);
        let coeff_yk = alpha.sqrt() * (1.0 - ab_prev) / (1.0 - ab_k);
        let var = beta * (1.0 - ab_prev) / (1.0 - ab_k);
        let std = var.max(0.0).sqrt();
        let mut next = [0.0; 2];
        for d in 0..2 {
            let noise: f64 = if k > 1 { rng.sample(StandardNormal) } else { 0.0 };
            next[d] = coeff_y0 * y0[d] + coeff_yk * y[d] + std * noise;
        }
        y = next;
    }
    y
}

/// Evenly spaced sub-schedule indices `1..=K` of length `n`; `n = K`
/// reproduces the full index set.
pub fn ddim_indices(k_max: usize, n_steps: usize) -> Result<Vec<usize>> {
    if n_steps == 0 {
        return Err(Error::invalid("deterministic sampler needs at least one step"));
    }
    if n_steps > k_max {
        return Err(Error::invalid(format!(
            "requested {n_steps} sampling steps but the schedule has {k_max}"
        )));
    }
    if n_steps == 1 {
        return Ok(vec![k_max]);
    }
    let mut out: Vec<usize> = (0..n_steps)
        .map(|i| {
            let x = 1.0 + (k_max - 1) as f64 * i as f64 / (n_steps - 1) as f64;
            x.round() as usize
        })
        .collect();
    out.dedup();
    Ok(out)
}

/// Deterministic (eta = 0) sampling over an evenly spaced sub-schedule,
/// starting from pure noise.
pub fn sample_ddim(
    denoise: &mut impl FnMut([f64; 2], usize) -> [f64; 2],
    schedule: &NoiseSchedule,
    n_steps: usize,
    rng: &mut impl Rng,
) -> Result<[f64; 2]> {
    let y = [
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
    ];
    let indices = ddim_indices(schedule.num_steps(), n_steps)?;
    Ok(ddim_from(denoise, schedule, &indices, y))
}

/// Deterministic reverse walk from a given state at the highest index in
/// `indices` down to the clean sample.
pub fn ddim_from(
    denoise: &mut impl FnMut([f64; 2], usize) -> [f64; 2],
    schedule: &NoiseSchedule,
    indices: &[usize],
    mut y: [f64; 2],
) -> [f64; 2] {
    for (pos, &k) in indices.iter().enumerate().rev() {
        let k_prev = if pos == 0 { 0 } else { indices[pos - 1] };
        let ab_k = schedule.alpha_bar(k);
        let ab_prev = schedule.alpha_bar(k_prev);
        let y0 = denoise(y, k);
        let noise_scale = (1.0 - ab_k).sqrt();
        let mut eps_hat = [0.0; 2];
        if noise_scale > 0.0 {
            for d in 0..2 {
                eps_hat[d] = (y[d] - ab_k.sqrt() * y0[d]) / noise_scale;
            }
        }
        for d in 0..2 {
            y[d] = ab_prev.sqrt() * y0[d] + (1.0 - ab_prev).sqrt() * eps_hat[d];
        }
    }
    y
}
