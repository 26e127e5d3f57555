//! Synthetic ground truth and evaluation for novel-view synthesis: a tiny
//! ray-traced scene with exact optical flow, a pyramidal Lucas-Kanade
//! estimator, PSNR/SSIM and the flow outlier ratio `FOR_k`.

pub mod flow;
pub mod image;
pub mod metrics;
pub mod scene;

use std::path::PathBuf;

pub use crate::flow::{estimate_flow, read_flo, write_flo, FlowEstimator, FlowField, LucasKanade};
pub use crate::image::{Image, Mask};
pub use crate::metrics::{evaluate_pair_set, for_k, psnr, ssim, ForConfig, MetricReport};
pub use crate::scene::{generate_dataset, gt_flow, render, Checkerboard, RenderConfig, SceneObject, ShapeKind};

#[derive(Debug, thiserror::Error)]
pub enum VisionError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: {left:?} vs {right:?}")]
    Shape { left: [usize; 3], right: [usize; 3] },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Png {
        path: PathBuf,
        #[source]
        source: ::image::ImageError,
    },
    #[error("{}: malformed flow file at byte {offset}: {message}", path.display())]
    Format { path: PathBuf, offset: u64, message: String },
    #[error("{}: {message}", path.display())]
    Csv { path: PathBuf, message: String },
}

impl VisionError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        VisionError::Io { path: path.into(), source }
    }
}
