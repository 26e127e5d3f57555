//! Dual-prior diffusion sampling for novel-view synthesis.
//!
//! A view-conditioned denoiser is evaluated frame by frame along a Slerp
//! camera path while a video denoiser sees all frames jointly; their noise
//! estimates are blended with a linearly scheduled weight and drive one shared
//! sampler update.

pub mod diagnostics;
pub mod diffusion;
pub mod geometry;
pub mod guidance;
pub mod priors;
pub mod toy;

pub use diffusion::{LatentFrames, NoiseLevel, NoiseSchedule, SamplerConfig, SamplerKind, ScheduleConfig};
pub use geometry::{CameraPose, Quaternion, RelativePose, Trajectory};
pub use guidance::{DualPriorSampler, Prompt, VideoDenoiser, ViewConditioning, ViewDenoiser, WeightSchedule};
