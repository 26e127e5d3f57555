//! Low-dimensional toy pipeline: analytic view and video priors along a
//! camera path, with roughness and target-distance statistics.

use serde::{Deserialize, Serialize};

use crate::diagnostics;
use crate::diffusion::LatentFrames;
use crate::geometry::{CameraPose, Trajectory};
use crate::guidance::{Branches, DualPriorSampler, GuidanceError, ViewConditioning};
use crate::priors::{GmmPrior, PoseTargetMap, PriorError, ToyVideoPrior, ToyViewPrior};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(deny_unknown_fields, default)]
pub struct ToyViewConfig {
    /// Per-frame standard deviation around the pose target.
    pub sigma: f64,
    pub target_radius: f64,
    pub frame_dim: usize,
    /// Pose-agnostic mixture answering unconditional queries. Defaults to the
    /// conditional marginalised over azimuth: `ring_components` equally
    /// weighted Gaussians at targets spaced evenly around the circle.
    pub unconditional: Option<GmmPrior>,
    pub ring_components: usize,
}

impl Default for ToyViewConfig {
    fn default() -> Self {
        Self { sigma: 0.1, target_radius: 1.0, frame_dim: 2, unconditional: None, ring_components: 72 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(deny_unknown_fields, default)]
pub struct ToyVideoConfig {
    pub coupling: f64,
    pub anchor: f64,
}

impl Default for ToyVideoConfig {
    fn default() -> Self {
        Self { coupling: 10.0, anchor: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(deny_unknown_fields, default)]
pub struct ToyPriorsConfig {
    pub view: ToyViewConfig,
    pub video: ToyVideoConfig,
}

/// Analytic priors for one input view.
#[derive(Debug, Clone)]
pub struct ToyPriors {
    pub view: ToyViewPrior,
    pub video: ToyVideoPrior,
}

impl ToyPriorsConfig {
    pub fn build(&self, input_pose: CameraPose) -> Result<ToyPriors, PriorError> {
        let d = self.view.frame_dim;
        if d == 0 {
            return Err(PriorError::InvalidArgument("frame_dim must be positive".into()));
        }
        let target_map = PoseTargetMap { radius: self.view.target_radius };
        let unconditional = match &self.view.unconditional {
            Some(g) => g.clone(),
            None => ring_mixture(&target_map, &input_pose, self.view.sigma, d, self.view.ring_components)?,
        };
        if unconditional.dim() != d {
            return Err(PriorError::Dimension { expected: d, got: unconditional.dim() });
        }
        let view = ToyViewPrior::new(input_pose, target_map, self.view.sigma, unconditional)?;
        crate::priors::SmoothVideoPrior::new(self.video.coupling, self.video.anchor, d, 1)?;
        Ok(ToyPriors { view, video: ToyVideoPrior { coupling: self.video.coupling, anchor: self.video.anchor } })
    }
}

/// Equal-weight mixture of `N(mu(v_k), sigma^2 I)` over `k` azimuths spaced
/// evenly around the circle at the elevation of `reference`.
pub fn ring_mixture(map: &PoseTargetMap, reference: &CameraPose, sigma: f64, dim: usize, k: usize) -> Result<GmmPrior, PriorError> {
    if k == 0 {
        return Err(PriorError::InvalidArgument("ring needs at least one component".into()));
    }
    let mut means = Vec::with_capacity(k);
    for i in 0..k {
        let az = std::f64::consts::TAU * i as f64 / k as f64;
        let pose = CameraPose::new(az, reference.elevation(), reference.radius())
            .map_err(|e| PriorError::InvalidArgument(e.to_string()))?;
        means.push(map.target(&pose, dim));
    }
    // pin the weight sum to exactly one
    let mut weights = vec![1.0 / k as f64; k];
    let rest: f64 = weights[1..].iter().sum();
    weights[0] = 1.0 - rest;
    GmmPrior::new(weights, means, vec![vec![sigma * sigma; dim]; k])
}

impl ToyPriors {
    pub fn frame_dim(&self) -> usize {
        self.view.frame_dim()
    }

    /// Latent shape of one frame, `[d, 1, 1]`.
    pub fn frame_shape(&self) -> [usize; 3] {
        [self.frame_dim(), 1, 1]
    }

    /// Target mean for every pose of `trajectory`.
    pub fn targets(&self, trajectory: &Trajectory) -> Vec<Vec<f64>> {
        trajectory.poses().iter().map(|p| self.view.target_map.target(p, self.frame_dim())).collect()
    }

    /// The input view's target, standing in for the encoded input image.
    pub fn anchor(&self) -> Vec<f64> {
        self.view.target_map.target(&self.view.reference, self.frame_dim())
    }

    pub fn conditioning(&self, trajectory: &Trajectory) -> ViewConditioning {
        ViewConditioning::for_trajectory(self.anchor(), self.frame_shape(), &self.view.reference, trajectory)
    }
}

/// Statistics of one toy run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyStats {
    pub roughness: f64,
    pub anchored_step_roughness: f64,
    pub mean_target_distance: f64,
    pub final_target_distance: f64,
}

impl ToyStats {
    pub fn compute(priors: &ToyPriors, trajectory: &Trajectory, frames: &LatentFrames) -> Self {
        let targets = priors.targets(trajectory);
        Self {
            roughness: diagnostics::roughness(frames),
            anchored_step_roughness: diagnostics::anchored_step_roughness(&priors.anchor(), frames),
            mean_target_distance: diagnostics::mean_target_distance(frames, &targets),
            final_target_distance: diagnostics::final_target_distance(frames, &targets),
        }
    }
}

/// Runs `sampler` over `trajectory` with the given branches and returns the
/// final frames with their statistics. The sampler's denoisers should be
/// `priors`' (or remote stand-ins for them).
pub fn run_toy(
    sampler: &DualPriorSampler<'_>,
    priors: &ToyPriors,
    trajectory: &Trajectory,
    branches: Branches,
    seed: u64,
    observer: &mut dyn FnMut(usize, &LatentFrames),
) -> Result<(LatentFrames, ToyStats), GuidanceError> {
    let cond = priors.conditioning(trajectory);
    let frames = sampler.run(branches, &cond, trajectory, seed, observer)?;
    let stats = ToyStats::compute(priors, trajectory, &frames);
    Ok((frames, stats))
}
