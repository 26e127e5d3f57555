//! Experiment configuration: one JSON document drives every command.

use std::path::{Path, PathBuf};

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use vivid_core::diffusion::{SamplerConfig, ScheduleConfig};
use vivid_core::geometry::{make_trajectory, PoseRecord};
use vivid_core::toy::ToyPriorsConfig;
use vivid_core::{CameraPose, Trajectory, WeightSchedule};
use vivid_vision::scene::DatasetProtocol;
use vivid_vision::{ForConfig, LucasKanade, RenderConfig, SceneObject};

use crate::error::CliError;
use crate::manifest::MANIFEST_KEY;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub sampler: SamplerConfig,
    pub schedule: ScheduleConfig,
    pub weights: WeightSchedule,
    pub trajectory: TrajectoryConfig,
    /// Classifier-free guidance scale of the view branch.
    pub guidance_scale: f64,
    /// Video prompt; absent means the null prompt.
    pub prompt: Option<String>,
    pub denoisers: DenoiserConfig,
    /// Used when `--out` is not given.
    pub output_dir: Option<PathBuf>,
    pub dataset: DatasetConfig,
    pub evaluation: EvaluationConfig,
    pub ablation: AblationConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            sampler: SamplerConfig::default(),
            schedule: ScheduleConfig::default(),
            weights: WeightSchedule::default(),
            trajectory: TrajectoryConfig::default(),
            guidance_scale: 3.0,
            prompt: None,
            denoisers: DenoiserConfig::default(),
            output_dir: None,
            dataset: DatasetConfig::default(),
            evaluation: EvaluationConfig::default(),
            ablation: AblationConfig::default(),
        }
    }
}

/// Poses are kept in degrees exactly as written so manifests round-trip
/// bitwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct TrajectoryConfig {
    /// Pose of the input view; the path starts here.
    pub start_pose: PoseRecord,
    pub target_pose: PoseRecord,
    pub frames: usize,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self {
            start_pose: PoseRecord { azimuth_deg: 0.0, elevation_deg: 15.0, radius: 1.5 },
            target_pose: PoseRecord { azimuth_deg: 45.0, elevation_deg: 15.0, radius: 1.5 },
            frames: 24,
        }
    }
}

impl TrajectoryConfig {
    pub fn start(&self) -> Result<CameraPose, CliError> {
        pose(&self.start_pose, "/trajectory/start_pose")
    }

    pub fn target(&self) -> Result<CameraPose, CliError> {
        pose(&self.target_pose, "/trajectory/target_pose")
    }

    /// Slerp path with `frames` poses; a single frame is the target alone.
    pub fn build(&self) -> Result<Trajectory, CliError> {
        self.build_with(self.frames)
    }

    pub fn build_with(&self, frames: usize) -> Result<Trajectory, CliError> {
        let (start, target) = (self.start()?, self.target()?);
        match frames {
            0 => Err(CliError::schema("/trajectory/frames", "must be at least 1")),
            1 => Ok(Trajectory::single(target)),
            n => make_trajectory(&start, &target, n).map_err(|e| CliError::schema("/trajectory", e.to_string())),
        }
    }
}

pub(crate) fn pose(r: &PoseRecord, pointer: &str) -> Result<CameraPose, CliError> {
    CameraPose::try_from(*r).map_err(|e| CliError::schema(pointer, e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DenoiserConfig {
    /// Analytic low-dimensional priors; outputs are CSV.
    Toy(ToyPriorsConfig),
    /// Denoisers served over HTTP; outputs are PNG.
    Remote(RemoteConfig),
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig::Toy(ToyPriorsConfig::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct RemoteConfig {
    pub view_endpoint: String,
    pub video_endpoint: String,
    /// PNG of the input view. Without one, a blank image of `latent_shape`
    /// conditions the view branch.
    pub input_image: Option<PathBuf>,
    /// `[channels, height, width]` when no input image is given.
    pub latent_shape: [usize; 3],
    pub max_in_flight: usize,
    /// Per-request timeout; falls back to the environment, then 30 s.
    pub timeout_ms: Option<u64>,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            view_endpoint: "http://127.0.0.1:8080".into(),
            video_endpoint: "http://127.0.0.1:8080".into(),
            input_image: None,
            latent_shape: [3, 32, 32],
            max_in_flight: 8,
            timeout_ms: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub scene: SceneObject,
    pub render: RenderConfig,
    pub protocol: DatasetProtocol,
    /// Centre of the azimuth sweep; its elevation is replaced by the
    /// protocol's.
    pub base_pose: PoseRecord,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            scene: SceneObject::default(),
            render: RenderConfig::default(),
            protocol: DatasetProtocol::default(),
            base_pose: PoseRecord { azimuth_deg: 0.0, elevation_deg: 15.0, radius: 3.0 },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationConfig {
    pub estimator: LucasKanade,
    /// Gray-gradient threshold selecting the evaluated region when no masks
    /// are given.
    pub gradient_threshold: f64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        let d = ForConfig::default();
        Self { estimator: d.estimator, gradient_threshold: d.gradient_threshold }
    }
}

impl EvaluationConfig {
    pub fn for_config(&self) -> ForConfig {
        ForConfig { estimator: self.estimator, gradient_threshold: self.gradient_threshold, ..ForConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    /// `(lambda_video_start, lambda_video_end)` pairs, run at
    /// `trajectory.frames`.
    pub schedules: Vec<[f64; 2]>,
    /// Frame counts, run with `weights`.
    pub frame_counts: Vec<usize>,
    /// Seeds `seed, seed + 1, ...` shared by every setting.
    pub seed_count: usize,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            schedules: vec![[1.0, 0.5], [1.0, 1.0], [1.0, 0.0], [1.5, 0.5]],
            frame_counts: vec![1, 6, 12, 24],
            seed_count: 20,
        }
    }
}

/// Parses a config, or the config embedded in a run manifest. Errors carry
/// the JSON pointer of the offending value.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, CliError> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| CliError::schema("", format!("invalid JSON: {e}")))?;
    match value {
        Value::Object(mut map) if map.contains_key(MANIFEST_KEY) => {
            let inner = map.remove("config").ok_or_else(|| CliError::schema("/config", "manifest has no config"))?;
            from_value(inner, "/config")
        }
        v => from_value(v, ""),
    }
}

fn from_value(value: Value, prefix: &str) -> Result<ExperimentConfig, CliError> {
    let denoisers = value.get("denoisers").cloned();
    serde_path_to_error::deserialize(value).map_err(|e| {
        let mut pointer = json_pointer(e.path());
        let mut message = e.into_inner().to_string();
        if pointer == "/denoisers" {
            if let Some((inner, m)) = denoisers.and_then(locate_denoiser_error) {
                pointer.push_str(&inner);
                message = m;
            }
        }
        CliError::schema(format!("{prefix}{pointer}"), message)
    })
}

/// The tagged `denoisers` section is buffered by serde, which loses the path
/// below it; re-parse the variant body on its own to find it.
fn locate_denoiser_error(v: Value) -> Option<(String, String)> {
    let Value::Object(mut map) = v else { return None };
    let kind = map.remove("kind")?;
    let body = Value::Object(map);
    let err = match kind.as_str()? {
        "toy" => serde_path_to_error::deserialize::<_, ToyPriorsConfig>(body).err()?,
        "remote" => serde_path_to_error::deserialize::<_, RemoteConfig>(body).err()?,
        _ => return None,
    };
    Some((json_pointer(err.path()), err.into_inner().to_string()))
}

fn json_pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        match seg {
            Segment::Seq { index } => out.push_str(&format!("/{index}")),
            Segment::Map { key } => out.push_str(&format!("/{}", key.replace('~', "~0").replace('/', "~1"))),
            Segment::Enum { variant } => out.push_str(&format!("/{variant}")),
            Segment::Unknown => {}
        }
    }
    out
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    parse_config(&text).map_err(|e| e.in_file(path))
}

/// The published JSON schema, pretty-printed with a trailing newline.
pub fn config_schema() -> String {
    let schema = schemars::schema_for!(ExperimentConfig);
    serde_json::to_string_pretty(&schema).expect("schema serializes") + "\n"
}
