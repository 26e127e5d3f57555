//! JSON-over-HTTP protocol that lets externally hosted models act as the
//! engine's view or video denoiser, plus a loopback server for tests and for
//! exposing in-process denoisers.

pub mod client;
pub mod protocol;
pub mod server;

use vivid_core::diffusion::{LatentFrames, NoiseLevel};
use vivid_core::guidance::{DenoiserError, FrameCondition, Prompt, VideoDenoiser, ViewDenoiser};

pub use crate::client::{remote_denoise, RemoteClient};
pub use crate::protocol::{Conditioning, DenoiseKind, DenoiseRequest, DenoiseResponse};
pub use crate::server::{serve, serve_echo, serve_local, DenoiseServer, ServeError};

/// Timestep field for a possibly fractional level.
fn wire_timestep(level: NoiseLevel) -> i64 {
    level.timestep.round() as i64
}

/// View denoiser behind an HTTP endpoint; one request per frame and
/// guidance branch.
#[derive(Debug, Clone)]
pub struct RemoteViewDenoiser {
    pub client: RemoteClient,
    /// Forwarded for backends that fuse guidance server-side.
    pub guidance_scale: f64,
}

impl RemoteViewDenoiser {
    pub fn new(client: RemoteClient, guidance_scale: f64) -> Self {
        Self { client, guidance_scale }
    }
}

impl ViewDenoiser for RemoteViewDenoiser {
    fn id(&self) -> String {
        format!("remote-view:{}", self.client.endpoint())
    }

    fn eps(&self, z: &[f64], frame_shape: [usize; 3], level: NoiseLevel, cond: Option<&FrameCondition<'_>>) -> Result<Vec<f64>, DenoiserError> {
        let [c, h, w] = frame_shape;
        let req = DenoiseRequest {
            kind: DenoiseKind::View,
            shape: [1, c, h, w],
            frames: z.to_vec(),
            timestep: wire_timestep(level),
            alpha_bar: level.alpha_bar,
            conditioning: cond.map(|fc| Conditioning {
                input_image: fc.input_image.to_vec(),
                input_shape: fc.image_shape,
                relative_poses: vec![fc.relative_pose.to_array()],
            }),
            prompt: None,
            guidance_scale: self.guidance_scale,
        };
        Ok(self.client.denoise(&req)?.eps)
    }

    fn concurrent(&self) -> bool {
        true
    }
}

/// Video denoiser behind an HTTP endpoint.
#[derive(Debug, Clone)]
pub struct RemoteVideoDenoiser {
    pub client: RemoteClient,
}

impl VideoDenoiser for RemoteVideoDenoiser {
    fn id(&self) -> String {
        format!("remote-video:{}", self.client.endpoint())
    }

    fn eps(&self, z: &LatentFrames, level: NoiseLevel, prompt: &Prompt) -> Result<LatentFrames, DenoiserError> {
        let req = DenoiseRequest {
            kind: DenoiseKind::Video,
            shape: z.shape(),
            frames: z.as_slice().to_vec(),
            timestep: wire_timestep(level),
            alpha_bar: level.alpha_bar,
            conditioning: None,
            prompt: prompt.text.clone(),
            guidance_scale: 1.0,
        };
        let resp = self.client.denoise(&req)?;
        LatentFrames::new(resp.shape, resp.eps).map_err(|e| DenoiserError::Protocol(e.to_string()))
    }
}
