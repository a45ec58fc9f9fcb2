//! Diffusion schedule, classifier-free guidance with rescale, and score
//! distillation pixel gradients against a pluggable noise predictor.

mod remote;
pub mod stub;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::body_model::Pose;
use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::rasterizer::IuvImage;
use crate::volume_renderer::CameraSpec;

pub use remote::{decode_tensor, encode_tensor, NoiseRequest, NoiseResponse, RemoteGuidance, MAX_PIXELS};

pub const TRAIN_STEPS: usize = 1000;

/// Linear-β DDPM schedule over [`TRAIN_STEPS`] steps.
#[derive(Clone, Debug)]
pub struct DiffusionSchedule {
    pub betas: Vec<f64>,
    pub alphas_cumprod: Vec<f64>,
}

impl Default for DiffusionSchedule {
    fn default() -> Self {
        Self::linear(TRAIN_STEPS, 1e-4, 2e-2)
    }
}

impl DiffusionSchedule {
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Self {
        let betas: Vec<f64> = (0..steps)
            .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64)
            .collect();
        let mut acc = 1.0;
        let alphas_cumprod = betas
            .iter()
            .map(|b| {
                acc *= 1.0 - b;
                acc
            })
            .collect();
        Self { betas, alphas_cumprod }
    }

    /// Discrete step for a continuous `t ∈ (0, 1]`.
    pub fn index(&self, t: f64) -> usize {
        let n = self.alphas_cumprod.len();
        ((t * (n - 1) as f64).round().max(0.0) as usize).min(n - 1)
    }

    pub fn alpha_bar(&self, t: f64) -> f64 {
        self.alphas_cumprod[self.index(t)]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Coarse,
    Fine,
}

/// Bounds of the sampled diffusion time. The coarse stage anneals the upper
/// bound linearly; the fine stage keeps it at its final value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TimestepConfig {
    pub t_max_start: f64,
    pub t_max_end: f64,
    pub t_min: f64,
    pub anneal_steps: usize,
}

impl Default for TimestepConfig {
    fn default() -> Self {
        Self {
            t_max_start: 0.98,
            t_max_end: 0.5,
            t_min: 0.02,
            anneal_steps: 8000,
        }
    }
}

impl TimestepConfig {
    pub fn bounds(&self, step: usize, stage: Stage) -> (f64, f64) {
        let t_max = match stage {
            Stage::Fine => self.t_max_end,
            Stage::Coarse => {
                let f = (step as f64 / self.anneal_steps.max(1) as f64).min(1.0);
                self.t_max_start + (self.t_max_end - self.t_max_start) * f
            }
        };
        (self.t_min, t_max)
    }
}

pub fn sample_timestep<R: Rng>(cfg: &TimestepConfig, step: usize, stage: Stage, rng: &mut R) -> f64 {
    let (lo, hi) = cfg.bounds(step, stage);
    rng.random_range(lo..=hi)
}

fn channel_std(img: &[f64], channels: usize, c: usize) -> f64 {
    let n = img.len() / channels;
    let mean = img.iter().skip(c).step_by(channels).sum::<f64>() / n as f64;
    let var = img.iter().skip(c).step_by(channels).map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    var.sqrt()
}

/// Guided noise `ε_u + s·(ε_c − ε_u)`, with the implied clean image rescaled
/// per channel toward the conditional branch's standard deviation by `factor`.
pub fn cfg_rescale(eps_u: &Image, eps_c: &Image, x_t: &Image, alpha_bar: f64, scale: f64, factor: f64) -> Result<Image> {
    eps_u.ensure_same_shape(eps_c)?;
    eps_u.ensure_same_shape(x_t)?;
    let mut out = eps_u.clone();
    for (o, c) in out.data.iter_mut().zip(&eps_c.data) {
        *o += scale * (c - *o);
    }
    if factor == 0.0 {
        return Ok(out);
    }
    let (sa, sb) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    let x0 = |eps: &[f64]| -> Vec<f64> { x_t.data.iter().zip(eps).map(|(x, e)| (x - sb * e) / sa).collect() };
    let x0_pos = x0(&eps_c.data);
    let x0_cfg = x0(&out.data);
    let ch = out.channels;
    for c in 0..ch {
        let s_cfg = channel_std(&x0_cfg, ch, c);
        let peak = x0_cfg.iter().skip(c).step_by(ch).fold(0.0f64, |m, v| m.max(v.abs()));
        // a flat channel only has rounding noise for a spread
        if !(s_cfg > 1e-12 * peak) {
            continue;
        }
        let r = channel_std(&x0_pos, ch, c) / s_cfg;
        // x̂₀ = x₀_cfg·(φr + 1 − φ), so ε moves by −(√ᾱ/√(1−ᾱ))·φ(r − 1)·x₀_cfg
        let k = sa / sb * factor * (r - 1.0);
        for i in (c..out.data.len()).step_by(ch) {
            out.data[i] -= k * x0_cfg[i];
        }
    }
    Ok(out)
}

/// Pose and camera of the view being guided; only the mock oracle reads it.
#[derive(Clone, Debug)]
pub struct ViewTarget {
    pub pose: Pose,
    pub camera: CameraSpec,
}

pub struct NoiseQuery<'a> {
    pub noisy: &'a Image,
    pub condition: &'a IuvImage,
    pub prompt: &'a str,
    pub negative_prompt: &'a str,
    pub t: f64,
    pub seed: u64,
    pub view: Option<&'a ViewTarget>,
}

/// Conditional and unconditional noise predictions, same shape as the query image.
#[derive(Clone, Debug, PartialEq)]
pub struct NoisePrediction {
    pub eps_cond: Image,
    pub eps_uncond: Image,
}

pub trait ScoreModel: Send {
    fn predict(&self, query: &NoiseQuery) -> Result<NoisePrediction>;

    /// The image the model pulls renders toward, when it is known in closed form.
    fn reference(&self, _view: &ViewTarget) -> Option<Result<Image>> {
        None
    }
}

pub type TargetRenderer = Box<dyn Fn(&Pose, &CameraSpec) -> Result<Image> + Send + Sync>;

/// Oracle whose conditional prediction points exactly at a reference render,
/// and whose unconditional prediction points at flat gray.
pub struct MockTargetGuidance {
    pub schedule: DiffusionSchedule,
    pub gray: f64,
    target: TargetRenderer,
}

impl MockTargetGuidance {
    pub fn new(target: TargetRenderer) -> Self {
        Self {
            schedule: DiffusionSchedule::default(),
            gray: 0.5,
            target,
        }
    }

    pub fn target(&self, pose: &Pose, camera: &CameraSpec) -> Result<Image> {
        (self.target)(pose, camera)
    }
}

impl ScoreModel for MockTargetGuidance {
    fn predict(&self, q: &NoiseQuery) -> Result<NoisePrediction> {
        let view = q
            .view
            .ok_or_else(|| Error::InvalidInput("mock guidance needs the view pose and camera".into()))?;
        let target = self.target(&view.pose, &view.camera)?;
        q.noisy.ensure_same_shape(&target)?;
        let ab = self.schedule.alpha_bar(q.t);
        let (sa, sb) = (ab.sqrt(), (1.0 - ab).sqrt());
        let mut eps_cond = q.noisy.clone();
        let mut eps_uncond = q.noisy.clone();
        for ((c, u), t) in eps_cond.data.iter_mut().zip(&mut eps_uncond.data).zip(&target.data) {
            *c = (*c - sa * t) / sb;
            *u = (*u - sa * self.gray) / sb;
        }
        Ok(NoisePrediction { eps_cond, eps_uncond })
    }

    fn reference(&self, view: &ViewTarget) -> Option<Result<Image>> {
        Some(self.target(&view.pose, &view.camera))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GuidanceConfig {
    pub cfg_scale: f64,
    pub rescale: f64,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            cfg_scale: 7.5,
            rescale: 0.5,
        }
    }
}

pub struct SdsInput<'a> {
    pub image: &'a Image,
    pub condition: &'a IuvImage,
    pub prompt: &'a str,
    pub negative_prompt: &'a str,
    pub view: Option<&'a ViewTarget>,
}

#[derive(Clone, Debug)]
pub struct SdsOutput {
    /// `∂L/∂I` per pixel, to be pushed through the renderer.
    pub grad: Image,
    pub t: f64,
    pub alpha_bar: f64,
}

impl SdsOutput {
    /// Surrogate loss `½·‖grad‖²/N` for logging.
    pub fn loss(&self) -> f64 {
        0.5 * self.grad.data.iter().map(|g| g * g).sum::<f64>() / self.grad.data.len().max(1) as f64
    }
}

/// Noise drawn for a given seed; the same draw noises the image and is
/// subtracted from the prediction.
pub fn seeded_noise(shape: &Image, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut e = Image::new(shape.width, shape.height, shape.channels);
    for v in &mut e.data {
        *v = rng.sample(StandardNormal);
    }
    e
}

/// `(1 − ᾱ_t)·(ε̂ − ε)` with `ε̂` the rescaled guided prediction.
pub fn sds_pixel_gradient(
    model: &dyn ScoreModel,
    schedule: &DiffusionSchedule,
    input: &SdsInput,
    t: f64,
    seed: u64,
    cfg: &GuidanceConfig,
) -> Result<SdsOutput> {
    let img = input.image;
    if img.channels != 3 {
        return Err(Error::InvalidInput("guidance expects an RGB image".into()));
    }
    let ab = schedule.alpha_bar(t);
    let eps = seeded_noise(img, seed);
    let mut noisy = img.clone();
    let (sa, sb) = (ab.sqrt(), (1.0 - ab).sqrt());
    for (x, e) in noisy.data.iter_mut().zip(&eps.data) {
        *x = sa * *x + sb * e;
    }
    let pred = model.predict(&NoiseQuery {
        noisy: &noisy,
        condition: input.condition,
        prompt: input.prompt,
        negative_prompt: input.negative_prompt,
        t,
        seed,
        view: input.view,
    })?;
    noisy.ensure_same_shape(&pred.eps_cond)?;
    let eps_hat = cfg_rescale(&pred.eps_uncond, &pred.eps_cond, &noisy, ab, cfg.cfg_scale, cfg.rescale)?;
    let w = 1.0 - ab;
    let mut grad = eps_hat;
    for (g, e) in grad.data.iter_mut().zip(&eps.data) {
        *g = w * (*g - e);
    }
    Ok(SdsOutput { grad, t, alpha_bar: ab })
}
