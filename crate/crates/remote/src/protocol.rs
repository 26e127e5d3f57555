//! Wire types. Arrays are flat, row-major `F x C x H x W`.

use serde::{Deserialize, Serialize};
use vivid_core::diffusion::NoiseLevel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DenoiseKind {
    View,
    Video,
}

/// View conditioning: the encoded input image and one `[d_az, d_el, d_r]`
/// per frame (radians, scene units).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Conditioning {
    pub input_image: Vec<f64>,
    pub input_shape: [usize; 3],
    pub relative_poses: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiseRequest {
    pub kind: DenoiseKind,
    pub shape: [usize; 4],
    pub frames: Vec<f64>,
    /// Nearest training timestep of the noise level.
    pub timestep: i64,
    /// Exact cumulative signal fraction; authoritative when the sampler
    /// evaluates between training timesteps.
    pub alpha_bar: f64,
    /// `null` for view requests asks for the unconditional estimate.
    pub conditioning: Option<Conditioning>,
    /// Video prompt; `null` is the null prompt.
    pub prompt: Option<String>,
    /// Informational: the engine applies guidance itself from separate
    /// conditional and unconditional requests.
    pub guidance_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiseResponse {
    pub eps: Vec<f64>,
    pub shape: [usize; 4],
}

impl DenoiseRequest {
    pub fn level(&self) -> NoiseLevel {
        NoiseLevel { timestep: self.timestep as f64, alpha_bar: self.alpha_bar }
    }

    pub fn element_count(&self) -> usize {
        self.shape.iter().product()
    }

    /// Structural checks shared by client and server.
    pub fn validate(&self) -> Result<(), String> {
        let n = self.element_count();
        if n == 0 {
            return Err(format!("shape {:?} has a zero dimension", self.shape));
        }
        if self.frames.len() != n {
            return Err(format!("frames has {} values but shape {:?} needs {n}", self.frames.len(), self.shape));
        }
        if let Some(i) = self.frames.iter().position(|v| !v.is_finite()) {
            return Err(format!("frames[{i}] is not finite"));
        }
        if !(self.alpha_bar > 0.0 && self.alpha_bar <= 1.0) {
            return Err(format!("alpha_bar {} outside (0, 1]", self.alpha_bar));
        }
        if !self.guidance_scale.is_finite() {
            return Err("guidance_scale must be finite".into());
        }
        match (self.kind, &self.conditioning) {
            (DenoiseKind::Video, Some(_)) => return Err("video requests carry no view conditioning".into()),
            (DenoiseKind::View, Some(c)) => {
                let m: usize = c.input_shape.iter().product();
                if c.input_image.len() != m {
                    return Err(format!(
                        "input_image has {} values but input_shape {:?} needs {m}",
                        c.input_image.len(),
                        c.input_shape
                    ));
                }
                if c.relative_poses.len() != self.shape[0] {
                    return Err(format!("{} relative poses for {} frames", c.relative_poses.len(), self.shape[0]));
                }
                if c.input_image.iter().chain(c.relative_poses.iter().flatten()).any(|v| !v.is_finite()) {
                    return Err("conditioning contains non-finite values".into());
                }
            }
            _ => {}
        }
        Ok(())
    }
}

impl DenoiseResponse {
    /// Checks a response against the request it answers.
    pub fn validate_for(&self, req: &DenoiseRequest) -> Result<(), String> {
        if self.shape != req.shape {
            return Err(format!("response shape {:?} differs from request shape {:?}", self.shape, req.shape));
        }
        if self.eps.len() != req.element_count() {
            return Err(format!("eps has {} values, expected {}", self.eps.len(), req.element_count()));
        }
        if let Some(i) = self.eps.iter().position(|v| !v.is_finite()) {
            return Err(format!("eps[{i}] is not finite"));
        }
        Ok(())
    }
}
