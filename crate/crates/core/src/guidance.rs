//! Denoiser interfaces, classifier-free guidance and the scheduled
//! combination of a per-frame view denoiser with a joint video denoiser.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffusion::{self, DiffusionError, LatentFrames, NoiseLevel, NoiseSchedule, SamplerConfig};
use crate::geometry::{relative_pose, CameraPose, RelativePose, Trajectory};

/// Failure inside a denoiser backend.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum DenoiserError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("remote returned status {status}: {body}")]
    Remote { status: u16, body: String },
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("{0}")]
    Evaluation(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GuidanceError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite values: {0}")]
    NonFinite(String),
    #[error("{branch} denoiser failed at step {step}{}: {source}", frame.map(|f| format!(", frame {f}")).unwrap_or_default())]
    Denoiser {
        branch: &'static str,
        step: usize,
        frame: Option<usize>,
        #[source]
        source: DenoiserError,
    },
}

impl From<DiffusionError> for GuidanceError {
    fn from(e: DiffusionError) -> Self {
        match e {
            DiffusionError::InvalidArgument(m) => GuidanceError::InvalidArgument(m),
            DiffusionError::Shape { expected, got } => {
                GuidanceError::Shape(format!("expected {expected:?}, got {got:?}"))
            }
            DiffusionError::NonFinite(m) => GuidanceError::NonFinite(m),
        }
    }
}

/// Text conditioning for the video branch; `None` is the null prompt.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Prompt {
    pub text: Option<String>,
}

impl Prompt {
    pub fn null() -> Self {
        Self { text: None }
    }
}

/// Input image plus one relative pose per trajectory frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewConditioning {
    pub input_image: Vec<f64>,
    pub image_shape: [usize; 3],
    pub relative_poses: Vec<RelativePose>,
}

impl ViewConditioning {
    /// Conditioning for every pose of `trajectory` relative to `input_pose`.
    pub fn for_trajectory(input_image: Vec<f64>, image_shape: [usize; 3], input_pose: &CameraPose, trajectory: &Trajectory) -> Self {
        let relative_poses = trajectory.poses().iter().map(|p| relative_pose(input_pose, p)).collect();
        Self { input_image, image_shape, relative_poses }
    }

    pub fn frame(&self, f: usize) -> FrameCondition<'_> {
        FrameCondition {
            input_image: &self.input_image,
            image_shape: self.image_shape,
            relative_pose: self.relative_poses[f],
        }
    }
}

/// Conditioning payload for a single frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameCondition<'a> {
    pub input_image: &'a [f64],
    pub image_shape: [usize; 3],
    pub relative_pose: RelativePose,
}

/// Per-frame view-conditioned noise predictor. `cond = None` requests the
/// unconditional estimate used by classifier-free guidance.
pub trait ViewDenoiser: Send + Sync {
    fn id(&self) -> String;

    fn eps(
        &self,
        z: &[f64],
        frame_shape: [usize; 3],
        level: NoiseLevel,
        cond: Option<&FrameCondition<'_>>,
    ) -> Result<Vec<f64>, DenoiserError>;

    /// Whether per-frame calls benefit from running concurrently.
    fn concurrent(&self) -> bool {
        false
    }
}

/// Joint noise predictor over all frames.
pub trait VideoDenoiser: Send + Sync {
    fn id(&self) -> String;

    fn eps(&self, z: &LatentFrames, level: NoiseLevel, prompt: &Prompt) -> Result<LatentFrames, DenoiserError>;
}

/// `eps_uncond + scale * (eps_cond - eps_uncond)`.
pub fn cfg_combine(eps_cond: &[f64], eps_uncond: &[f64], scale: f64) -> Result<Vec<f64>, GuidanceError> {
    if eps_cond.len() != eps_uncond.len() {
        return Err(GuidanceError::Shape(format!(
            "conditional has {} entries, unconditional {}",
            eps_cond.len(),
            eps_uncond.len()
        )));
    }
    if scale == 1.0 {
        return Ok(eps_cond.to_vec());
    }
    if scale == 0.0 {
        return Ok(eps_uncond.to_vec());
    }
    Ok(eps_cond.iter().zip(eps_uncond).map(|(c, u)| u + scale * (c - u)).collect())
}

/// Linear schedule for the two noise-estimate weights over inference steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(deny_unknown_fields, default)]
pub struct WeightSchedule {
    pub lambda_view: f64,
    pub lambda_video_start: f64,
    pub lambda_video_end: f64,
    pub total_steps: usize,
    /// Divide the combined estimate by the weight sum. Off by default.
    pub normalize: bool,
}

impl Default for WeightSchedule {
    fn default() -> Self {
        Self { lambda_view: 1.0, lambda_video_start: 1.0, lambda_video_end: 0.5, total_steps: 50, normalize: false }
    }
}

impl WeightSchedule {
    pub fn validate(&self) -> Result<(), GuidanceError> {
        for (name, v) in [
            ("lambda_view", self.lambda_view),
            ("lambda_video_start", self.lambda_video_start),
            ("lambda_video_end", self.lambda_video_end),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(GuidanceError::InvalidArgument(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if self.total_steps == 0 {
            return Err(GuidanceError::InvalidArgument("total_steps must be positive".into()));
        }
        Ok(())
    }

    pub fn lambda_view(&self, _step: usize) -> f64 {
        self.lambda_view
    }

    /// Video weight at inference step `step`, clamped to `[0, total_steps]`.
    pub fn lambda_video(&self, step: usize) -> f64 {
        let tau = step.min(self.total_steps) as f64 / self.total_steps as f64;
        (1.0 - tau) * self.lambda_video_start + tau * self.lambda_video_end
    }

    /// Schedule with the video branch switched off.
    pub fn view_only(self) -> Self {
        Self { lambda_video_start: 0.0, lambda_video_end: 0.0, ..self }
    }
}

/// Per-frame `lambda_view * eps_view + lambda_video(step) * eps_video`.
pub fn combine_eps(eps_view: &LatentFrames, eps_video: &LatentFrames, schedule: &WeightSchedule, step: usize) -> Result<LatentFrames, GuidanceError> {
    eps_view.check_shape(eps_video)?;
    if step > schedule.total_steps {
        return Err(GuidanceError::InvalidArgument(format!(
            "step {step} beyond schedule length {}",
            schedule.total_steps
        )));
    }
    if !eps_view.is_finite() || !eps_video.is_finite() {
        return Err(GuidanceError::NonFinite("noise estimates".into()));
    }
    weighted_sum(Some(eps_view), schedule.lambda_view(step), Some(eps_video), schedule.lambda_video(step), schedule.normalize)
}

/// Weighted sum that skips zero-weight terms and unit multiplications, so a
/// degenerate schedule reproduces the single-branch estimate bit for bit.
fn weighted_sum(
    view: Option<&LatentFrames>,
    w_view: f64,
    video: Option<&LatentFrames>,
    w_video: f64,
    normalize: bool,
) -> Result<LatentFrames, GuidanceError> {
    let shape = view.or(video).map(|v| v.shape()).ok_or_else(|| GuidanceError::InvalidArgument("no active branch".into()))?;
    let n: usize = shape.iter().product();
    let mut acc: Option<Vec<f64>> = None;
    for (term, w) in [(view, w_view), (video, w_video)] {
        let Some(term) = term else { continue };
        if w == 0.0 {
            continue;
        }
        let src = term.as_slice();
        acc = Some(match acc {
            None if w == 1.0 => src.to_vec(),
            None => src.iter().map(|v| w * v).collect(),
            Some(mut a) => {
                if w == 1.0 {
                    a.iter_mut().zip(src).for_each(|(x, v)| *x += v);
                } else {
                    a.iter_mut().zip(src).for_each(|(x, v)| *x += w * v);
                }
                a
            }
        });
    }
    let mut data = acc.unwrap_or_else(|| vec![0.0; n]);
    let total = if view.is_some() { w_view } else { 0.0 } + if video.is_some() { w_video } else { 0.0 };
    if normalize && total > 0.0 && total != 1.0 {
        data.iter_mut().for_each(|v| *v /= total);
    }
    Ok(LatentFrames::new(shape, data)?)
}

/// Which noise estimates drive the sampler.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branches {
    /// Scheduled combination of both denoisers.
    Combined,
    /// Guided view denoiser alone, frame by frame.
    ViewOnly,
    /// Video denoiser alone.
    VideoOnly,
}

/// Joint trajectory denoiser: initial Gaussian latents, per-frame guided view
/// estimates, one joint video estimate under the prompt (null by default),
/// their scheduled combination, and a shared sampler update.
pub struct DualPriorSampler<'a> {
    pub view: &'a dyn ViewDenoiser,
    pub video: &'a dyn VideoDenoiser,
    pub schedule: &'a NoiseSchedule,
    pub sampler: SamplerConfig,
    pub weights: WeightSchedule,
    /// Classifier-free guidance scale for the view branch only.
    pub guidance_scale: f64,
    pub prompt: Prompt,
    /// Bound on concurrent per-frame view evaluations.
    pub max_in_flight: usize,
}

impl<'a> DualPriorSampler<'a> {
    pub fn new(view: &'a dyn ViewDenoiser, video: &'a dyn VideoDenoiser, schedule: &'a NoiseSchedule) -> Self {
        Self {
            view,
            video,
            schedule,
            sampler: SamplerConfig::default(),
            weights: WeightSchedule::default(),
            guidance_scale: 3.0,
            prompt: Prompt::null(),
            max_in_flight: 8,
        }
    }

    pub fn denoise_trajectory(&self, cond: &ViewConditioning, trajectory: &Trajectory, seed: u64) -> Result<LatentFrames, GuidanceError> {
        self.run(Branches::Combined, cond, trajectory, seed, &mut |_, _| {})
    }

    /// Runs the sampler with the chosen branches. `observer` sees the state
    /// after initialisation (step 0) and after every update (steps 1..=n).
    pub fn run(
        &self,
        branches: Branches,
        cond: &ViewConditioning,
        trajectory: &Trajectory,
        seed: u64,
        observer: &mut dyn FnMut(usize, &LatentFrames),
    ) -> Result<LatentFrames, GuidanceError> {
        let frames = trajectory.len();
        if cond.relative_poses.len() != frames {
            return Err(GuidanceError::InvalidArgument(format!(
                "{} relative poses for {frames} trajectory frames",
                cond.relative_poses.len()
            )));
        }
        self.weights.validate()?;
        if !(self.guidance_scale.is_finite()) {
            return Err(GuidanceError::InvalidArgument("guidance scale must be finite".into()));
        }
        let [c, h, w] = cond.image_shape;
        let z = diffusion::init_latents(frames, c, h, w, seed)?;
        observer(0, &z);
        diffusion::sample(&self.sampler, self.schedule, z, seed, |step, z, level| {
            self.estimate(branches, step, z, level, cond)
        }, observer)
    }

    fn estimate(&self, branches: Branches, step: usize, z: &LatentFrames, level: NoiseLevel, cond: &ViewConditioning) -> Result<LatentFrames, GuidanceError> {
        let (w_view, w_video) = match branches {
            Branches::Combined => (self.weights.lambda_view(step), self.weights.lambda_video(step)),
            Branches::ViewOnly => (1.0, 0.0),
            Branches::VideoOnly => (0.0, 1.0),
        };
        let view = if w_view != 0.0 { Some(self.view_estimate(step, z, level, cond)?) } else { None };
        let video = if w_video != 0.0 {
            let eps = self.video.eps(z, level, &self.prompt).map_err(|source| GuidanceError::Denoiser {
                branch: "video",
                step,
                frame: None,
                source,
            })?;
            z.check_shape(&eps)?;
            Some(eps)
        } else {
            None
        };
        if view.is_none() && video.is_none() {
            return Ok(LatentFrames::zeros(z.shape()));
        }
        let normalize = branches == Branches::Combined && self.weights.normalize;
        let eps = weighted_sum(view.as_ref(), w_view, video.as_ref(), w_video, normalize)?;
        if !eps.is_finite() {
            return Err(GuidanceError::NonFinite(format!("combined estimate at step {step}")));
        }
        Ok(eps)
    }

    fn view_estimate(&self, step: usize, z: &LatentFrames, level: NoiseLevel, cond: &ViewConditioning) -> Result<LatentFrames, GuidanceError> {
        let frames = z.frame_count();
        let shape = z.frame_shape();
        let eval = |f: usize| -> Result<Vec<f64>, GuidanceError> {
            let wrap = |source| GuidanceError::Denoiser { branch: "view", step, frame: Some(f), source };
            let frame_cond = cond.frame(f);
            let zf = z.frame(f);
            let c = self.view.eps(zf, shape, level, Some(&frame_cond)).map_err(wrap)?;
            if c.len() != zf.len() {
                return Err(GuidanceError::Shape(format!("view estimate for frame {f} has {} entries", c.len())));
            }
            if self.guidance_scale == 1.0 {
                return Ok(c);
            }
            let u = self.view.eps(zf, shape, level, None).map_err(wrap)?;
            cfg_combine(&c, &u, self.guidance_scale)
        };
        let per_frame: Vec<Vec<f64>> = if self.view.concurrent() && frames > 1 {
            let limit = self.max_in_flight.max(1);
            let mut out = Vec::with_capacity(frames);
            for chunk_start in (0..frames).step_by(limit) {
                let chunk_end = (chunk_start + limit).min(frames);
                let results: Vec<_> = std::thread::scope(|s| {
                    let handles: Vec<_> = (chunk_start..chunk_end).map(|f| s.spawn(move || eval(f))).collect();
                    handles.into_iter().map(|h| h.join().expect("view evaluation panicked")).collect()
                });
                for r in results {
                    out.push(r?);
                }
            }
            out
        } else {
            (0..frames).map(eval).collect::<Result<_, _>>()?
        };
        Ok(LatentFrames::from_frames(&per_frame, shape)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::ScheduleConfig;

    fn frames(vals: &[f64]) -> LatentFrames {
        LatentFrames::new([vals.len(), 1, 1, 1], vals.to_vec()).unwrap()
    }

    #[test]
    fn cfg_examples() {
        let c = [0.3, -1.0];
        let u = [0.1, 0.5];
        assert_eq!(cfg_combine(&c, &u, 1.0).unwrap(), c.to_vec());
        assert_eq!(cfg_combine(&c, &u, 0.0).unwrap(), u.to_vec());
        assert_eq!(cfg_combine(&[1.0], &[0.0], 3.0).unwrap(), vec![3.0]);
        assert!(cfg_combine(&[1.0], &[0.0, 1.0], 3.0).is_err());
        for s in [0.5, 3.0, 7.5] {
            assert_eq!(cfg_combine(&c, &c, s).unwrap(), c.to_vec());
        }
    }

    #[test]
    fn default_weight_schedule() {
        let w = WeightSchedule::default();
        assert_eq!(w.lambda_video(0), 1.0);
        assert_eq!(w.lambda_video(25), 0.75);
        assert_eq!(w.lambda_video(50), 0.5);
        assert_eq!(w.lambda_video(80), 0.5);
        assert_eq!(w.lambda_view(17), 1.0);
        for s in 1..50 {
            let mid = 0.5 * (w.lambda_video(s - 1) + w.lambda_video(s + 1));
            assert!((w.lambda_video(s) - mid).abs() < 1e-15);
        }
        let high = WeightSchedule { lambda_video_start: 1.5, ..w };
        assert_eq!(high.lambda_video(0), 1.5);
        assert!(high.validate().is_ok());
        assert!(WeightSchedule { lambda_view: -1.0, ..w }.validate().is_err());
    }

    #[test]
    fn combine_examples() {
        let w = WeightSchedule::default();
        let v = frames(&[0.2]);
        let d = frames(&[0.4]);
        assert!((combine_eps(&v, &d, &w, 0).unwrap().as_slice()[0] - 0.6).abs() < 1e-15);
        assert!((combine_eps(&v, &d, &w, 25).unwrap().as_slice()[0] - 0.5).abs() < 1e-15);
        assert!((combine_eps(&v, &d, &w, 50).unwrap().as_slice()[0] - 0.4).abs() < 1e-15);
        assert!(combine_eps(&v, &frames(&[0.1, 0.2]), &w, 0).is_err());
        assert!(combine_eps(&v, &d, &w, 51).is_err());
        let normalized = WeightSchedule { normalize: true, ..w };
        assert!((combine_eps(&v, &d, &normalized, 0).unwrap().as_slice()[0] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn combine_is_linear() {
        let w = WeightSchedule::default();
        let (a, b) = (frames(&[0.2, -0.5, 1.0]), frames(&[0.7, 0.1, -0.3]));
        let d = frames(&[0.4, 0.4, -2.0]);
        let sum = combine_eps(&a.lin_comb(1.0, &b, 1.0), &d, &w, 10).unwrap();
        let parts = combine_eps(&a, &d, &w, 10).unwrap().lin_comb(1.0, &combine_eps(&b, &LatentFrames::zeros(d.shape()), &w, 10).unwrap(), 1.0);
        for (x, y) in sum.as_slice().iter().zip(parts.as_slice()) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    struct Scaled(f64);

    impl VideoDenoiser for Scaled {
        fn id(&self) -> String {
            "scaled".into()
        }

        fn eps(&self, z: &LatentFrames, _level: NoiseLevel, _prompt: &Prompt) -> Result<LatentFrames, DenoiserError> {
            Ok(z.lin_comb(self.0, z, 0.0))
        }
    }

    #[test]
    fn combine_commutes_with_frame_permutation() {
        // frame-independent video denoiser stub
        let w = WeightSchedule::default();
        let video = Scaled(0.5);
        let level = NoiseLevel { timestep: 10.0, alpha_bar: 0.5 };
        let z = frames(&[0.1, 0.9, -0.4, 0.3]);
        let ev = frames(&[1.0, 2.0, 3.0, 4.0]);
        let perm = [2usize, 0, 3, 1];
        let permute = |x: &LatentFrames| frames(&perm.iter().map(|&i| x.as_slice()[i]).collect::<Vec<_>>());
        let a = permute(&combine_eps(&ev, &video.eps(&z, level, &Prompt::null()).unwrap(), &w, 7).unwrap());
        let pz = permute(&z);
        let b = combine_eps(&permute(&ev), &video.eps(&pz, level, &Prompt::null()).unwrap(), &w, 7).unwrap();
        assert_eq!(a, b);
    }

    struct Failing;

    impl ViewDenoiser for Failing {
        fn id(&self) -> String {
            "failing".into()
        }

        fn eps(&self, _z: &[f64], _s: [usize; 3], _l: NoiseLevel, _c: Option<&FrameCondition<'_>>) -> Result<Vec<f64>, DenoiserError> {
            Err(DenoiserError::Transport("boom".into()))
        }
    }

    #[test]
    fn denoiser_failure_carries_context() {
        let schedule = NoiseSchedule::from_config(&ScheduleConfig::default()).unwrap();
        let video = Scaled(1.0);
        let sampler = DualPriorSampler::new(&Failing, &video, &schedule);
        let pose = CameraPose::from_degrees(0.0, 15.0, 1.5).unwrap();
        let traj = Trajectory::single(pose);
        let cond = ViewConditioning::for_trajectory(vec![0.0, 0.0], [2, 1, 1], &pose, &traj);
        let err = sampler.denoise_trajectory(&cond, &traj, 0).unwrap_err();
        assert!(matches!(err, GuidanceError::Denoiser { branch: "view", step: 0, frame: Some(0), .. }), "{err}");
        assert!(err.to_string().contains("frame 0"));
    }

    #[test]
    fn conditioning_length_must_match() {
        let schedule = NoiseSchedule::from_config(&ScheduleConfig::default()).unwrap();
        let video = Scaled(1.0);
        let sampler = DualPriorSampler::new(&Failing, &video, &schedule);
        let pose = CameraPose::from_degrees(0.0, 15.0, 1.5).unwrap();
        let cond = ViewConditioning { input_image: vec![0.0], image_shape: [1, 1, 1], relative_poses: vec![] };
        assert!(matches!(
            sampler.denoise_trajectory(&cond, &Trajectory::single(pose), 0),
            Err(GuidanceError::InvalidArgument(_))
        ));
    }
}
