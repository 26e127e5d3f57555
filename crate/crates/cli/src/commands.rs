//! The five commands. Each writes under `out` and returns what it wrote so
//! tests can inspect results without re-parsing files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use vivid_core::diagnostics::median;
use vivid_core::diffusion::{Codec, IdentityCodec, NoiseSchedule};
use vivid_core::geometry::PoseRecord;
use vivid_core::guidance::{Branches, DualPriorSampler, Prompt, VideoDenoiser, ViewConditioning, ViewDenoiser};
use vivid_core::toy::{run_toy, ToyPriors, ToyPriorsConfig, ToyStats};
use vivid_core::{LatentFrames, Trajectory, WeightSchedule};
use vivid_remote::{RemoteClient, RemoteVideoDenoiser, RemoteViewDenoiser};
use vivid_vision::metrics::write_metrics_csv;
use vivid_vision::{evaluate_pair_set, generate_dataset, Image, MetricReport};

use crate::config::{pose, DenoiserConfig, ExperimentConfig, RemoteConfig};
use crate::error::CliError;
use crate::manifest::{latents_sha256, sha256_file, sha256_hex, DenoiserIds, Manifest, MANIFEST_VERSION};

pub const TRAJECTORY_JSON: &str = "trajectory.json";
pub const TRAJECTORY_CSV: &str = "trajectory.csv";
pub const FRAMES_CSV: &str = "frames.csv";
pub const FRAMES_DIR: &str = "frames";
pub const MANIFEST_JSON: &str = "manifest.json";
pub const METRICS_CSV: &str = "metrics.csv";
pub const ABLATION_CSV: &str = "ablation.csv";

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

/// Writes `trajectory.json` (poses in degrees) and `trajectory.csv` (poses
/// plus camera positions, for plotting).
pub fn cmd_trajectory(cfg: &ExperimentConfig, out: &Path) -> Result<Trajectory, CliError> {
    let traj = cfg.trajectory.build()?;
    create_dir(out)?;
    let path = out.join(TRAJECTORY_JSON);
    let json = serde_json::to_string_pretty(&traj).map_err(|e| CliError::io(&path, e))?;
    write_file(&path, (json + "\n").as_bytes())?;
    let mut csv = String::from("frame,azimuth_deg,elevation_deg,radius,x,y,z\n");
    for (f, p) in traj.poses().iter().enumerate() {
        let r = PoseRecord::from(*p);
        let [x, y, z] = p.position();
        let _ = writeln!(csv, "{f},{},{},{},{x},{y},{z}", r.azimuth_deg, r.elevation_deg, r.radius);
    }
    write_file(&out.join(TRAJECTORY_CSV), csv.as_bytes())?;
    Ok(traj)
}

fn configure<'a>(mut s: DualPriorSampler<'a>, cfg: &ExperimentConfig) -> DualPriorSampler<'a> {
    s.sampler = cfg.sampler;
    s.weights = cfg.weights;
    s.guidance_scale = cfg.guidance_scale;
    s.prompt = Prompt { text: cfg.prompt.clone() };
    s
}

fn schedule(cfg: &ExperimentConfig) -> Result<NoiseSchedule, CliError> {
    NoiseSchedule::from_config(&cfg.schedule).map_err(|e| CliError::schema("/schedule", e.to_string()))
}

fn toy_priors(cfg: &ExperimentConfig, toy: &ToyPriorsConfig) -> Result<ToyPriors, CliError> {
    toy.build(cfg.trajectory.start()?).map_err(|e| CliError::schema("/denoisers", e.to_string()))
}

/// Runs the dual-prior sampler along the configured trajectory. Toy runs
/// write every sampler state to `frames.csv`; remote runs write the final
/// frames as `frames/frame_XX.png`. Both write `manifest.json`.
pub fn cmd_synthesize(cfg: &ExperimentConfig, out: &Path) -> Result<Manifest, CliError> {
    let traj = cfg.trajectory.build()?;
    let schedule = schedule(cfg)?;
    create_dir(out)?;
    let mut outputs = BTreeMap::new();
    let (ids, z, toy_stats, input_image_sha256) = match &cfg.denoisers {
        DenoiserConfig::Toy(toy) => {
            let priors = toy_priors(cfg, toy)?;
            let sampler = configure(DualPriorSampler::new(&priors.view, &priors.video, &schedule), cfg);
            let d = priors.frame_dim();
            let mut csv = String::from("step,frame");
            for j in 0..d {
                let _ = write!(csv, ",d{j}");
            }
            csv.push('\n');
            let mut record = |step: usize, z: &LatentFrames| {
                for (f, frame) in z.frames().enumerate() {
                    let _ = write!(csv, "{step},{f}");
                    for v in frame {
                        let _ = write!(csv, ",{v}");
                    }
                    csv.push('\n');
                }
            };
            let (z, stats) = run_toy(&sampler, &priors, &traj, Branches::Combined, cfg.seed, &mut record)?;
            write_file(&out.join(FRAMES_CSV), csv.as_bytes())?;
            outputs.insert(FRAMES_CSV.to_string(), sha256_hex(csv.as_bytes()));
            let ids = DenoiserIds { view: sampler.view.id(), video: sampler.video.id() };
            (ids, z, Some(stats), None)
        }
        DenoiserConfig::Remote(rc) => {
            let (image, shape, image_hash) = input_image(rc)?;
            let timeout = rc.timeout_ms.map(Duration::from_millis).unwrap_or_else(vivid_remote::client::timeout_from_env);
            let view = RemoteViewDenoiser::new(RemoteClient::with_timeout(&rc.view_endpoint, timeout), cfg.guidance_scale);
            let video = RemoteVideoDenoiser { client: RemoteClient::with_timeout(&rc.video_endpoint, timeout) };
            let mut sampler = configure(DualPriorSampler::new(&view, &video, &schedule), cfg);
            sampler.max_in_flight = rc.max_in_flight;
            let cond = ViewConditioning::for_trajectory(IdentityCodec.encode(&image), shape, &cfg.trajectory.start()?, &traj);
            let z = sampler.run(Branches::Combined, &cond, &traj, cfg.seed, &mut |_, _| {})?;
            let dir = out.join(FRAMES_DIR);
            create_dir(&dir)?;
            for (f, frame) in z.frames().enumerate() {
                let [c, h, w] = shape;
                let img = Image::new(c, h, w, IdentityCodec.decode(frame))?;
                let name = format!("frame_{f:02}.png");
                let path = dir.join(&name);
                img.write_png(&path)?;
                outputs.insert(format!("{FRAMES_DIR}/{name}"), sha256_file(&path)?);
            }
            let ids = DenoiserIds { view: view.id(), video: video.id() };
            (ids, z, None, image_hash)
        }
    };
    let manifest = Manifest {
        vivid_manifest: MANIFEST_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        command: "synthesize".into(),
        config: ExperimentConfig { output_dir: None, ..cfg.clone() },
        denoisers: ids,
        trajectory: traj.poses().iter().map(|p| PoseRecord::from(*p)).collect(),
        input_image_sha256,
        latents_sha256: latents_sha256(&z),
        outputs,
        toy_stats,
    };
    manifest.write(&out.join(MANIFEST_JSON))?;
    Ok(manifest)
}

/// Input view for an image-space run: pixel values, `[C, H, W]`, and the
/// file's hash.
fn input_image(rc: &RemoteConfig) -> Result<(Vec<f64>, [usize; 3], Option<String>), CliError> {
    match &rc.input_image {
        Some(path) => {
            let img = Image::read_png(path)?;
            let hash = sha256_file(path)?;
            Ok((img.as_slice().to_vec(), img.shape(), Some(hash)))
        }
        None => {
            let [c, h, w] = rc.latent_shape;
            if !(c == 1 || c == 3) || h == 0 || w == 0 {
                return Err(CliError::schema(
                    "/denoisers/latent_shape",
                    format!("image-space runs need 1 or 3 channels and a non-empty frame, got {:?}", rc.latent_shape),
                ));
            }
            Ok((vec![0.0; c * h * w], rc.latent_shape, None))
        }
    }
}

/// Renders the synthetic evaluation dataset.
pub fn cmd_render_dataset(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<vivid_vision::scene::ViewRecord>, CliError> {
    let ds = &cfg.dataset;
    let base = pose(&ds.base_pose, "/dataset/base_pose")?;
    create_dir(out)?;
    Ok(generate_dataset(&ds.scene, &base, &ds.render, &ds.protocol, out)?)
}

/// Scores same-named PNGs of `gen` against `gt` into `metrics.csv`. Any
/// failure, including unmatched file names, is an i/o error.
pub fn cmd_evaluate(cfg: &ExperimentConfig, gen: &Path, gt: &Path, masks: Option<&Path>, out: &Path) -> Result<Vec<MetricReport>, CliError> {
    let reports = evaluate_pair_set(gen, gt, masks, &cfg.evaluation.for_config()).map_err(|e| CliError::Io(e.to_string()))?;
    create_dir(out)?;
    write_metrics_csv(&out.join(METRICS_CSV), &reports).map_err(|e| CliError::Io(e.to_string()))?;
    Ok(reports)
}

/// One ablation setting with per-seed medians of the toy statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    /// `schedule` or `frames`.
    pub sweep: String,
    pub lambda_view: f64,
    pub lambda_video_start: f64,
    pub lambda_video_end: f64,
    pub frames: usize,
    pub seeds: usize,
    pub roughness: f64,
    pub anchored_step_roughness: f64,
    pub mean_target_distance: f64,
    pub final_target_distance: f64,
}

/// Toy runs over the schedule sweep (at the configured frame count) and the
/// frame-count sweep (with the configured weights), every setting on the
/// same seeds.
pub fn cmd_ablate(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<AblationRow>, CliError> {
    let DenoiserConfig::Toy(toy) = &cfg.denoisers else {
        return Err(CliError::Usage("ablate runs on the toy pipeline; set denoisers.kind to \"toy\"".into()));
    };
    let ab = &cfg.ablation;
    if ab.seed_count == 0 {
        return Err(CliError::schema("/ablation/seed_count", "must be at least 1"));
    }
    if ab.schedules.is_empty() && ab.frame_counts.is_empty() {
        return Err(CliError::schema("/ablation", "nothing to sweep"));
    }
    let priors = toy_priors(cfg, toy)?;
    let schedule = schedule(cfg)?;
    let mut settings: Vec<(&str, WeightSchedule, usize)> = Vec::new();
    for &[start, end] in &ab.schedules {
        let w = WeightSchedule { lambda_video_start: start, lambda_video_end: end, ..cfg.weights };
        settings.push(("schedule", w, cfg.trajectory.frames));
    }
    for &f in &ab.frame_counts {
        settings.push(("frames", cfg.weights, f));
    }
    let mut rows = Vec::with_capacity(settings.len());
    for (sweep, weights, frames) in settings {
        let traj = cfg.trajectory.build_with(frames)?;
        let run_cfg = ExperimentConfig { weights, ..cfg.clone() };
        let sampler = configure(DualPriorSampler::new(&priors.view, &priors.video, &schedule), &run_cfg);
        let stats: Vec<ToyStats> = (0..ab.seed_count as u64)
            .into_par_iter()
            .map(|i| run_toy(&sampler, &priors, &traj, Branches::Combined, cfg.seed.wrapping_add(i), &mut |_, _| {}).map(|r| r.1))
            .collect::<Result<_, _>>()?;
        let med = |f: fn(&ToyStats) -> f64| median(&stats.iter().map(f).collect::<Vec<_>>());
        rows.push(AblationRow {
            sweep: sweep.into(),
            lambda_view: weights.lambda_view,
            lambda_video_start: weights.lambda_video_start,
            lambda_video_end: weights.lambda_video_end,
            frames,
            seeds: ab.seed_count,
            roughness: med(|s| s.roughness),
            anchored_step_roughness: med(|s| s.anchored_step_roughness),
            mean_target_distance: med(|s| s.mean_target_distance),
            final_target_distance: med(|s| s.final_target_distance),
        });
    }
    create_dir(out)?;
    let path = out.join(ABLATION_CSV);
    let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::io(&path, e))?;
    for r in &rows {
        w.serialize(r).map_err(|e| CliError::io(&path, e))?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;
    Ok(rows)
}

/// Output directory: `--out` wins over the config's `output_dir`.
pub fn resolve_out(cli: Option<PathBuf>, cfg: &ExperimentConfig) -> Result<PathBuf, CliError> {
    cli.or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| CliError::Usage("no output directory: pass --out or set output_dir".into()))
}
