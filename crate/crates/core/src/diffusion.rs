//! Noise schedules, inference timestep plans, latent frame tensors and the
//! single-step update rules (DDIM, DDPM, second-order DPM-Solver).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffusionError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    Shape { expected: [usize; 4], got: [usize; 4] },
    #[error("non-finite values in {0}")]
    NonFinite(String),
}

/// Random stream used for the initial latents.
pub const LATENT_STREAM: u64 = 0;
/// Random stream used for stochastic sampler noise.
pub const SAMPLER_STREAM: u64 = 1;

/// Counter-based sub-generator: one global seed, one stream per consumer.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    #[default]
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    #[serde(rename = "T")]
    pub train_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub kind: ScheduleKind,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { train_steps: 1000, beta_start: 1e-4, beta_end: 2e-2, kind: ScheduleKind::Linear }
    }
}

/// Signal level of a (possibly fractional) timestep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseLevel {
    /// Training timestep; `-1` marks the clean endpoint.
    pub timestep: f64,
    pub alpha_bar: f64,
}

impl NoiseLevel {
    pub const CLEAN: NoiseLevel = NoiseLevel { timestep: -1.0, alpha_bar: 1.0 };

    pub fn alpha(&self) -> f64 {
        self.alpha_bar.sqrt()
    }

    pub fn sigma(&self) -> f64 {
        (1.0 - self.alpha_bar).sqrt()
    }

    /// Half log-SNR, `log(alpha / sigma)`.
    pub fn lambda(&self) -> f64 {
        0.5 * (self.alpha_bar.ln() - (1.0 - self.alpha_bar).ln())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    config: ScheduleConfig,
}

/// Linearly spaced betas (inclusive) with derived alphas and running products.
pub fn linear_beta_schedule(train_steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule, DiffusionError> {
    NoiseSchedule::from_config(&ScheduleConfig {
        train_steps,
        beta_start,
        beta_end,
        kind: ScheduleKind::Linear,
    })
}

impl NoiseSchedule {
    pub fn from_config(cfg: &ScheduleConfig) -> Result<Self, DiffusionError> {
        let (t, b0, b1) = (cfg.train_steps, cfg.beta_start, cfg.beta_end);
        if t == 0 {
            return Err(DiffusionError::InvalidArgument("T must be at least 1".into()));
        }
        if !(b0 > 0.0 && b0 <= b1 && b1 < 1.0) {
            return Err(DiffusionError::InvalidArgument(format!(
                "need 0 < beta_start <= beta_end < 1, got {b0}, {b1}"
            )));
        }
        let betas: Vec<f64> = if t == 1 {
            vec![b0]
        } else {
            (0..t).map(|i| b0 + (b1 - b0) * i as f64 / (t - 1) as f64).collect()
        };
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let alpha_bars = alphas
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Ok(Self { betas, alphas, alpha_bars, config: *cfg })
    }

    pub fn config(&self) -> &ScheduleConfig {
        &self.config
    }

    pub fn train_steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    /// Level at an integer timestep; `None` is the clean endpoint.
    pub fn level(&self, t: Option<usize>) -> NoiseLevel {
        match t {
            Some(t) => NoiseLevel { timestep: t as f64, alpha_bar: self.alpha_bars[t] },
            None => NoiseLevel::CLEAN,
        }
    }

    /// Piecewise-linear interpolation of `log alpha_bar` over continuous time.
    pub fn log_alpha_bar_at(&self, t: f64) -> f64 {
        let last = self.train_steps() - 1;
        let t = t.clamp(0.0, last as f64);
        let i = (t.floor() as usize).min(last);
        if i == last {
            return self.alpha_bars[last].ln();
        }
        let frac = t - i as f64;
        let (a, b) = (self.alpha_bars[i].ln(), self.alpha_bars[i + 1].ln());
        a + (b - a) * frac
    }

    /// Level whose half log-SNR is `lambda`. The returned `alpha_bar` is exact
    /// in `lambda`; the timestep is found by bisection on the interpolated schedule.
    pub fn level_at_lambda(&self, lambda: f64) -> NoiseLevel {
        let alpha_bar = 1.0 / (1.0 + (-2.0 * lambda).exp());
        let target = alpha_bar.ln();
        let (mut lo, mut hi) = (0.0, (self.train_steps() - 1) as f64);
        for _ in 0..64 {
            let mid = 0.5 * (lo + hi);
            if self.log_alpha_bar_at(mid) > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        NoiseLevel { timestep: 0.5 * (lo + hi), alpha_bar }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(rename_all = "snake_case")]
pub enum Spacing {
    /// `0, s, 2s, ...` with `s = T / n`.
    #[default]
    Leading,
    /// `round(T - i * T / n) - 1`, always starting at `T - 1`.
    Trailing,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimestepPlan {
    steps: Vec<usize>,
}

pub fn make_timestep_plan(schedule: &NoiseSchedule, num_steps: usize, spacing: Spacing) -> Result<TimestepPlan, DiffusionError> {
    let t = schedule.train_steps();
    if num_steps == 0 || num_steps > t {
        return Err(DiffusionError::InvalidArgument(format!(
            "num_steps must be in [1, {t}], got {num_steps}"
        )));
    }
    let steps = match spacing {
        Spacing::Leading => {
            let stride = t / num_steps;
            (0..num_steps).rev().map(|i| i * stride).collect()
        }
        Spacing::Trailing => {
            let ratio = t as f64 / num_steps as f64;
            (0..num_steps).map(|i| (t as f64 - i as f64 * ratio).round() as usize - 1).collect()
        }
    };
    Ok(TimestepPlan { steps })
}

impl TimestepPlan {
    pub fn steps(&self) -> &[usize] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// `(t_cur, t_next)` pairs; the last pair targets the clean endpoint (`None`).
    pub fn transitions(&self) -> impl Iterator<Item = (usize, Option<usize>)> + '_ {
        self.steps
            .iter()
            .enumerate()
            .map(move |(i, &t)| (t, self.steps.get(i + 1).copied()))
    }
}

/// `F x C x H x W` tensor of frames, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentFrames {
    shape: [usize; 4],
    data: Vec<f64>,
}

impl LatentFrames {
    pub fn new(shape: [usize; 4], data: Vec<f64>) -> Result<Self, DiffusionError> {
        let n: usize = shape.iter().product();
        if shape.iter().any(|&s| s == 0) {
            return Err(DiffusionError::InvalidArgument(format!("zero dimension in {shape:?}")));
        }
        if data.len() != n {
            return Err(DiffusionError::InvalidArgument(format!(
                "data length {} does not match shape {shape:?}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(DiffusionError::NonFinite("latent frames".into()));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: [usize; 4]) -> Self {
        Self { shape, data: vec![0.0; shape.iter().product()] }
    }

    /// Stacks equally sized frames.
    pub fn from_frames(frames: &[Vec<f64>], chw: [usize; 3]) -> Result<Self, DiffusionError> {
        let shape = [frames.len(), chw[0], chw[1], chw[2]];
        Self::new(shape, frames.concat())
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn frame_count(&self) -> usize {
        self.shape[0]
    }

    /// Elements per frame, `C * H * W`.
    pub fn frame_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }

    pub fn frame_shape(&self) -> [usize; 3] {
        [self.shape[1], self.shape[2], self.shape[3]]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn frame(&self, f: usize) -> &[f64] {
        let n = self.frame_len();
        &self.data[f * n..(f + 1) * n]
    }

    pub fn frame_mut(&mut self, f: usize) -> &mut [f64] {
        let n = self.frame_len();
        &mut self.data[f * n..(f + 1) * n]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.frame_len())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn check_shape(&self, other: &LatentFrames) -> Result<(), DiffusionError> {
        if self.shape != other.shape {
            return Err(DiffusionError::Shape { expected: self.shape, got: other.shape });
        }
        Ok(())
    }

    /// Elementwise `a * self + b * other`.
    pub fn lin_comb(&self, a: f64, other: &LatentFrames, b: f64) -> LatentFrames {
        let data = self.data.iter().zip(&other.data).map(|(x, y)| a * x + b * y).collect();
        LatentFrames { shape: self.shape, data }
    }
}

/// Image <-> latent mapping. Latents here live in pixel space.
pub trait Codec {
    fn encode(&self, image: &[f64]) -> Vec<f64>;
    fn decode(&self, latent: &[f64]) -> Vec<f64>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityCodec;

impl Codec for IdentityCodec {
    fn encode(&self, image: &[f64]) -> Vec<f64> {
        image.to_vec()
    }

    fn decode(&self, latent: &[f64]) -> Vec<f64> {
        latent.to_vec()
    }
}

/// i.i.d. standard normal latents, deterministic in `seed`.
pub fn init_latents(frames: usize, channels: usize, height: usize, width: usize, seed: u64) -> Result<LatentFrames, DiffusionError> {
    let shape = [frames, channels, height, width];
    if shape.iter().any(|&s| s == 0) {
        return Err(DiffusionError::InvalidArgument(format!("latent dimensions must be positive, got {shape:?}")));
    }
    let mut rng = stream_rng(seed, LATENT_STREAM);
    Ok(gaussian_like(shape, &mut rng))
}

fn gaussian_like<R: Rng + ?Sized>(shape: [usize; 4], rng: &mut R) -> LatentFrames {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    LatentFrames { shape, data }
}

fn check_step_inputs(z: &LatentFrames, eps: &LatentFrames) -> Result<(), DiffusionError> {
    z.check_shape(eps)?;
    if !eps.is_finite() {
        return Err(DiffusionError::NonFinite("noise prediction".into()));
    }
    Ok(())
}

/// DDIM update between two noise levels.
pub fn ddim_update<R: Rng + ?Sized>(
    z: &LatentFrames,
    eps: &LatentFrames,
    cur: NoiseLevel,
    next: NoiseLevel,
    eta: f64,
    rng: &mut R,
) -> Result<LatentFrames, DiffusionError> {
    check_step_inputs(z, eps)?;
    if !(0.0..=1.0).contains(&eta) {
        return Err(DiffusionError::InvalidArgument(format!("eta must be in [0, 1], got {eta}")));
    }
    if cur.alpha_bar == next.alpha_bar {
        return Ok(z.clone());
    }
    let (a_cur, a_next) = (cur.alpha_bar, next.alpha_bar);
    let sigma = eta * ((1.0 - a_next) / (1.0 - a_cur)).sqrt() * (1.0 - a_cur / a_next).max(0.0).sqrt();
    let (sq_cur, sq_next) = (a_cur.sqrt(), a_next.sqrt());
    let s_cur = (1.0 - a_cur).sqrt();
    let dir = (1.0 - a_next - sigma * sigma).max(0.0).sqrt();
    let mut data: Vec<f64> = z
        .data
        .iter()
        .zip(&eps.data)
        .map(|(&zv, &ev)| {
            let x0 = (zv - s_cur * ev) / sq_cur;
            sq_next * x0 + dir * ev
        })
        .collect();
    if sigma > 0.0 {
        for v in data.iter_mut() {
            *v += sigma * rng.sample::<f64, _>(StandardNormal);
        }
    }
    finite_state(z.shape, data)
}

/// One DDIM step. `t_next = None` predicts the clean sample and stops.
pub fn ddim_step<R: Rng + ?Sized>(
    z: &LatentFrames,
    eps: &LatentFrames,
    t_cur: usize,
    t_next: Option<usize>,
    schedule: &NoiseSchedule,
    eta: f64,
    rng: &mut R,
) -> Result<LatentFrames, DiffusionError> {
    ddim_update(z, eps, schedule.level(Some(t_cur)), schedule.level(t_next), eta, rng)
}

/// Ancestral DDPM step from the posterior `q(z_next | z, x0_hat)`; no noise
/// is added when `t_next` is `None`.
pub fn ddpm_step<R: Rng + ?Sized>(
    z: &LatentFrames,
    eps: &LatentFrames,
    t_cur: usize,
    t_next: Option<usize>,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<LatentFrames, DiffusionError> {
    check_step_inputs(z, eps)?;
    let a_cur = schedule.level(Some(t_cur)).alpha_bar;
    let a_next = schedule.level(t_next).alpha_bar;
    let beta = 1.0 - a_cur / a_next;
    let x0_coef = a_next.sqrt() * beta / (1.0 - a_cur);
    let z_coef = (a_cur / a_next).sqrt() * (1.0 - a_next) / (1.0 - a_cur);
    let std = (beta * (1.0 - a_next) / (1.0 - a_cur)).max(0.0).sqrt();
    let (sq_cur, s_cur) = (a_cur.sqrt(), (1.0 - a_cur).sqrt());
    let mut data: Vec<f64> = z
        .data
        .iter()
        .zip(&eps.data)
        .map(|(&zv, &ev)| x0_coef * (zv - s_cur * ev) / sq_cur + z_coef * zv)
        .collect();
    if t_next.is_some() && std > 0.0 {
        for v in data.iter_mut() {
            *v += std * rng.sample::<f64, _>(StandardNormal);
        }
    }
    finite_state(z.shape, data)
}

/// Second-order singlestep DPM-Solver (midpoint in half log-SNR).
///
/// With `h = lambda_next - lambda_cur` and the midpoint `s` at `lambda_cur + h/2`:
///
/// ```text
/// u      = (a_s / a_cur) z - sigma_s (e^{h/2} - 1) eps(z, cur)
/// z_next = (a_next / a_cur) z - sigma_next (e^h - 1) eps(z, cur)
///          - sigma_next * 2 (e^h - 1 - h) / h * (eps(u, s) - eps(z, cur))
/// ```
///
/// The correction uses the exact second exponential integrator coefficient,
/// so noise predictions that are linear in lambda are integrated exactly.
/// Without `correction` this is the deterministic DDIM update. Steps ending
/// at the clean endpoint are first order.
pub fn dpm_solver2_step<E, F>(
    z: &LatentFrames,
    mut eps_fn: F,
    t_cur: usize,
    t_next: Option<usize>,
    schedule: &NoiseSchedule,
    correction: bool,
) -> Result<LatentFrames, E>
where
    E: From<DiffusionError>,
    F: FnMut(&LatentFrames, NoiseLevel) -> Result<LatentFrames, E>,
{
    let cur = schedule.level(Some(t_cur));
    let next = schedule.level(t_next);
    let eps = eps_fn(z, cur)?;
    dpm_solver2_from(z, &eps, cur, next, &mut eps_fn, correction)
}

/// [`dpm_solver2_step`] with the noise prediction at the current level given.
pub fn dpm_solver2_from<E, F>(
    z: &LatentFrames,
    eps: &LatentFrames,
    cur: NoiseLevel,
    next: NoiseLevel,
    eps_fn: &mut F,
    correction: bool,
) -> Result<LatentFrames, E>
where
    E: From<DiffusionError>,
    F: FnMut(&LatentFrames, NoiseLevel) -> Result<LatentFrames, E>,
{
    check_step_inputs(z, eps)?;
    if next.alpha_bar >= 1.0 || !correction || cur.alpha_bar == next.alpha_bar {
        return Ok(ddim_update(z, eps, cur, next, 0.0, &mut NoRng)?);
    }
    let (l_cur, l_next) = (cur.lambda(), next.lambda());
    let h = l_next - l_cur;
    let mid = NoiseLevel { timestep: 0.0, alpha_bar: 1.0 / (1.0 + (-2.0 * (l_cur + 0.5 * h)).exp()) };
    let mid = NoiseLevel { timestep: midpoint_timestep(cur, next, mid), ..mid };

    let phi_half = (0.5 * h).exp_m1();
    let u_z = mid.alpha() / cur.alpha();
    let u_e = mid.sigma() * phi_half;
    let u_data = z.data.iter().zip(&eps.data).map(|(zv, ev)| u_z * zv - u_e * ev).collect();
    let u = finite_state(z.shape, u_data)?;
    let eps_mid = eps_fn(&u, mid)?;
    check_step_inputs(z, &eps_mid)?;

    let phi1 = h.exp_m1();
    let phi2 = (phi1 - h) / h;
    let z_coef = next.alpha() / cur.alpha();
    let sig = next.sigma();
    let data = z
        .data
        .iter()
        .zip(eps.data.iter().zip(&eps_mid.data))
        .map(|(zv, (e0, e1))| z_coef * zv - sig * phi1 * e0 - sig * 2.0 * phi2 * (e1 - e0))
        .collect();
    Ok(finite_state(z.shape, data)?)
}

fn midpoint_timestep(cur: NoiseLevel, next: NoiseLevel, mid: NoiseLevel) -> f64 {
    // log alpha_bar is close to linear between neighbouring plan steps
    let (la, lb, lm) = (cur.alpha_bar.ln(), next.alpha_bar.ln(), mid.alpha_bar.ln());
    if la == lb {
        return cur.timestep;
    }
    cur.timestep + (next.timestep - cur.timestep) * (lm - la) / (lb - la)
}

fn finite_state(shape: [usize; 4], data: Vec<f64>) -> Result<LatentFrames, DiffusionError> {
    if data.iter().any(|v| !v.is_finite()) {
        return Err(DiffusionError::NonFinite("sampler state".into()));
    }
    Ok(LatentFrames { shape, data })
}

/// Generator for deterministic updates; never sampled because `sigma` is zero.
struct NoRng;

impl rand::RngCore for NoRng {
    fn next_u32(&mut self) -> u32 {
        unreachable!("deterministic update drew a random number")
    }

    fn next_u64(&mut self) -> u64 {
        unreachable!("deterministic update drew a random number")
    }

    fn fill_bytes(&mut self, _dest: &mut [u8]) {
        unreachable!("deterministic update drew a random number")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    Ddim,
    Ddpm,
    #[default]
    DpmSolver2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    pub steps: usize,
    /// DDIM stochasticity; ignored by the other samplers.
    pub eta: f64,
    pub spacing: Spacing,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { kind: SamplerKind::DpmSolver2, steps: 50, eta: 0.0, spacing: Spacing::Leading }
    }
}

/// Runs a full sampling loop from `z` with a noise predictor that also
/// receives the inference step index. `observer` sees the state after each
/// update, numbered from 1.
pub fn sample<E, F>(
    cfg: &SamplerConfig,
    schedule: &NoiseSchedule,
    z: LatentFrames,
    seed: u64,
    mut eps_fn: F,
    observer: &mut dyn FnMut(usize, &LatentFrames),
) -> Result<LatentFrames, E>
where
    E: From<DiffusionError>,
    F: FnMut(usize, &LatentFrames, NoiseLevel) -> Result<LatentFrames, E>,
{
    let plan = make_timestep_plan(schedule, cfg.steps, cfg.spacing)?;
    let mut rng = stream_rng(seed, SAMPLER_STREAM);
    let mut z = z;
    for (step, (t_cur, t_next)) in plan.transitions().enumerate() {
        z = match cfg.kind {
            SamplerKind::Ddim => {
                let eps = eps_fn(step, &z, schedule.level(Some(t_cur)))?;
                ddim_step(&z, &eps, t_cur, t_next, schedule, cfg.eta, &mut rng)?
            }
            SamplerKind::Ddpm => {
                let eps = eps_fn(step, &z, schedule.level(Some(t_cur)))?;
                ddpm_step(&z, &eps, t_cur, t_next, schedule, &mut rng)?
            }
            SamplerKind::DpmSolver2 => {
                dpm_solver2_step(&z, |x: &LatentFrames, lvl| eps_fn(step, x, lvl), t_cur, t_next, schedule, true)?
            }
        };
        observer(step + 1, &z);
    }
    Ok(z)
}
