use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use vivid_cli::commands::{ABLATION_CSV, FRAMES_CSV, MANIFEST_JSON, METRICS_CSV, TRAJECTORY_JSON};
use vivid_cli::config::{DenoiserConfig, RemoteConfig};
use vivid_cli::{
    cmd_ablate, cmd_evaluate, cmd_render_dataset, cmd_synthesize, cmd_trajectory, config_schema, ExperimentConfig, Manifest,
};
use vivid_core::diffusion::NoiseSchedule;
use vivid_core::guidance::{Branches, DualPriorSampler};
use vivid_core::toy::run_toy;
use vivid_core::Trajectory;
use vivid_vision::image::checkerboard;

fn vivid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vivid")).args(args).output().expect("run vivid")
}

fn write_config(dir: &Path, json: &str) -> PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, json).unwrap();
    p
}

fn small() -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.trajectory.frames = 6;
    c
}

#[test]
fn published_schema_is_current() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/config.schema.json");
    if std::env::var_os("VIVID_UPDATE_SCHEMA").is_some() {
        std::fs::write(&path, config_schema()).unwrap();
    }
    let published = std::fs::read_to_string(&path).expect("docs/config.schema.json exists");
    assert!(published == config_schema(), "schema is stale; rerun with VIVID_UPDATE_SCHEMA=1");
}

#[test]
fn trajectory_command() {
    let dir = tempfile::tempdir().unwrap();
    let traj = cmd_trajectory(&ExperimentConfig::default(), dir.path()).unwrap();
    assert_eq!(traj.len(), 24);
    let text = std::fs::read_to_string(dir.path().join(TRAJECTORY_JSON)).unwrap();
    let back: Trajectory = serde_json::from_str(&text).unwrap();
    assert_eq!(back.len(), traj.len());
    for (a, b) in back.poses().iter().zip(traj.poses()) {
        assert!((a.azimuth() - b.azimuth()).abs() < 1e-12);
        assert!((a.elevation() - b.elevation()).abs() < 1e-12);
        assert!((a.radius() - b.radius()).abs() < 1e-12);
    }
    let csv = std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert_eq!(csv.lines().count(), 25);
    assert!(csv.starts_with("frame,azimuth_deg,elevation_deg,radius,x,y,z\n"));

    let mut c = ExperimentConfig::default();
    c.trajectory.frames = 2;
    let t = cmd_trajectory(&c, dir.path()).unwrap();
    assert_eq!(t.poses(), &[c.trajectory.start().unwrap(), c.trajectory.target().unwrap()]);
}

#[test]
fn synthesize_is_deterministic_and_rerunnable_from_its_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"seed": 11, "trajectory": {"frames": 8}}"#);
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    for out in [&a, &b] {
        let o = vivid(&["synthesize", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let manifest_a = a.join(MANIFEST_JSON);
    let o = vivid(&["synthesize", "--config", manifest_a.to_str().unwrap(), "--out", c.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for file in [MANIFEST_JSON, FRAMES_CSV] {
        let x = std::fs::read(a.join(file)).unwrap();
        assert_eq!(x, std::fs::read(b.join(file)).unwrap(), "{file}");
        assert_eq!(x, std::fs::read(c.join(file)).unwrap(), "{file} from manifest");
    }
    let m = Manifest::read(&manifest_a).unwrap();
    assert_eq!(m.config.seed, 11);
    assert_eq!(m.trajectory.len(), 8);
    assert!(m.denoisers.view.starts_with("toy-view"));
    // every sampler state of every frame: header + 51 steps x 8 frames
    let csv = std::fs::read_to_string(a.join(FRAMES_CSV)).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "step,frame,d0,d1");
    assert_eq!(csv.lines().count(), 1 + 51 * 8);

    // --seed overrides the config and is recorded
    let d = dir.path().join("d");
    let o = vivid(&["synthesize", "--config", cfg.to_str().unwrap(), "--out", d.to_str().unwrap(), "--seed", "12"]);
    assert!(o.status.success());
    let md = Manifest::read(&d.join(MANIFEST_JSON)).unwrap();
    assert_eq!(md.config.seed, 12);
    assert_ne!(md.latents_sha256, m.latents_sha256);
}

#[test]
fn zero_video_weight_matches_the_view_only_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small();
    cfg.weights.lambda_video_start = 0.0;
    cfg.weights.lambda_video_end = 0.0;
    let m = cmd_synthesize(&cfg, dir.path()).unwrap();

    let DenoiserConfig::Toy(toy) = &cfg.denoisers else { unreachable!() };
    let priors = toy.build(cfg.trajectory.start().unwrap()).unwrap();
    let schedule = NoiseSchedule::from_config(&cfg.schedule).unwrap();
    let sampler = DualPriorSampler::new(&priors.view, &priors.video, &schedule);
    let traj = cfg.trajectory.build().unwrap();
    let (z, stats) = run_toy(&sampler, &priors, &traj, Branches::ViewOnly, cfg.seed, &mut |_, _| {}).unwrap();
    assert_eq!(m.latents_sha256, vivid_cli::manifest::latents_sha256(&z));
    assert_eq!(m.toy_stats.unwrap(), stats);
}

#[test]
fn default_toy_run_is_smoother_than_its_view_only_counterpart() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::default();
    let combined = cmd_synthesize(&cfg, &dir.path().join("combined")).unwrap();
    let mut off = cfg.clone();
    off.weights.lambda_video_start = 0.0;
    off.weights.lambda_video_end = 0.0;
    let view_only = cmd_synthesize(&off, &dir.path().join("view_only")).unwrap();
    let (a, b) = (combined.toy_stats.unwrap(), view_only.toy_stats.unwrap());
    assert!(a.roughness < b.roughness, "{} vs {}", a.roughness, b.roughness);
}

#[test]
fn render_then_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::default();
    cfg.dataset.render.width = 64;
    cfg.dataset.render.height = 64;
    cfg.dataset.protocol.views = 3;
    let data = dir.path().join("data");
    let views = cmd_render_dataset(&cfg, &data).unwrap();
    assert_eq!(views.len(), 3);
    for f in ["views/view_02.png", "masks/mask_02.png", "flows/flow_00_to_02.flo", "poses.json"] {
        assert!(data.join(f).exists(), "{f}");
    }

    let v = data.join("views");
    let reports = cmd_evaluate(&cfg, &v, &v, Some(&data.join("masks")), &dir.path().join("self")).unwrap();
    assert_eq!(reports.len(), 3);
    for r in &reports {
        assert_eq!(r.for_8, 0.0);
        assert_eq!(r.ssim, 1.0);
    }
    let csv = std::fs::read_to_string(dir.path().join("self").join(METRICS_CSV)).unwrap();
    assert!(csv.starts_with("name,psnr,ssim,for_8,for_16\n"));
    assert!(csv.lines().last().unwrap().starts_with("mean,"));
}

#[test]
fn evaluate_shifted_copies() {
    let dir = tempfile::tempdir().unwrap();
    let (gen, gt) = (dir.path().join("gen"), dir.path().join("gt"));
    std::fs::create_dir_all(&gen).unwrap();
    std::fs::create_dir_all(&gt).unwrap();
    for (i, phase) in [0.0, 5.0].iter().enumerate() {
        checkerboard(256, 256, 32.0, 0.4, *phase, 3.0).write_png(&gt.join(format!("{i}.png"))).unwrap();
        checkerboard(256, 256, 32.0, 0.4, phase + 12.0, 3.0).write_png(&gen.join(format!("{i}.png"))).unwrap();
    }
    let reports = cmd_evaluate(&ExperimentConfig::default(), &gen, &gt, None, &dir.path().join("out")).unwrap();
    let mean = vivid_vision::metrics::mean_report(&reports);
    assert!(mean[2] >= 0.9, "FOR_8 {}", mean[2]);
}

#[test]
fn evaluate_mismatch_exits_2_listing_files() {
    let dir = tempfile::tempdir().unwrap();
    let (gen, gt) = (dir.path().join("gen"), dir.path().join("gt"));
    std::fs::create_dir_all(&gen).unwrap();
    std::fs::create_dir_all(&gt).unwrap();
    let img = checkerboard(32, 32, 8.0, 0.5, 0.0, 0.0);
    img.write_png(&gen.join("a.png")).unwrap();
    img.write_png(&gen.join("only_gen.png")).unwrap();
    img.write_png(&gt.join("a.png")).unwrap();
    img.write_png(&gt.join("only_gt.png")).unwrap();
    let out = dir.path().join("out");
    let o = vivid(&["evaluate", "--gen", gen.to_str().unwrap(), "--gt", gt.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("only_gen.png") && err.contains("only_gt.png"), "{err}");
}

#[test]
fn ablation_rows() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small();
    cfg.ablation.frame_counts.clear();
    cfg.ablation.seed_count = 2;
    let rows = cmd_ablate(&cfg, dir.path()).unwrap();
    let pairs: Vec<[f64; 2]> = rows.iter().map(|r| [r.lambda_video_start, r.lambda_video_end]).collect();
    assert_eq!(pairs, vec![[1.0, 0.5], [1.0, 1.0], [1.0, 0.0], [1.5, 0.5]]);
    let csv = std::fs::read_to_string(dir.path().join(ABLATION_CSV)).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.starts_with("sweep,lambda_view,lambda_video_start,lambda_video_end,frames,seeds,roughness,"));
}

#[test]
fn single_setting_ablation_equals_synthesize() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small();
    cfg.seed = 4;
    cfg.ablation.schedules = vec![[cfg.weights.lambda_video_start, cfg.weights.lambda_video_end]];
    cfg.ablation.frame_counts.clear();
    cfg.ablation.seed_count = 1;
    let rows = cmd_ablate(&cfg, &dir.path().join("ablate")).unwrap();
    let stats = cmd_synthesize(&cfg, &dir.path().join("synth")).unwrap().toy_stats.unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].roughness, stats.roughness);
    assert_eq!(rows[0].anchored_step_roughness, stats.anchored_step_roughness);
    assert_eq!(rows[0].mean_target_distance, stats.mean_target_distance);
    assert_eq!(rows[0].final_target_distance, stats.final_target_distance);
}

#[test]
fn schema_errors_exit_1_with_a_pointer() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(dir.path(), r#"{"sampler": {"steps": 50, "kind": "euler"}}"#);
    let o = vivid(&["trajectory", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/sampler/kind"));
    let cfg = write_config(dir.path(), r#"{"trajectory": {"frames": 24, "fps": 8}}"#);
    let o = vivid(&["trajectory", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("fps"));
    assert_eq!(vivid(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(vivid(&["trajectory"]).status.code(), Some(1), "no output directory");
}

#[test]
fn unreachable_remote_exits_2_with_context() {
    let dir = tempfile::tempdir().unwrap();
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let json = format!(
        r#"{{"trajectory": {{"frames": 3}}, "denoisers": {{"kind": "remote", "view_endpoint": "http://127.0.0.1:{port}",
            "video_endpoint": "http://127.0.0.1:{port}", "latent_shape": [3, 4, 4], "timeout_ms": 2000}}}}"#
    );
    let cfg = write_config(dir.path(), &json);
    let out = dir.path().join("out");
    let o = vivid(&["synthesize", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("step 0"), "{err}");
}

#[test]
fn numeric_blowup_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"trajectory": {"frames": 3}, "weights": {"lambda_video_start": 1e308, "lambda_video_end": 1e308}}"#);
    let out = dir.path().join("out");
    let o = vivid(&["synthesize", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn image_space_run_against_an_echo_server() {
    let server = vivid_remote::serve_echo(0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::default();
    cfg.trajectory.frames = 3;
    cfg.sampler.steps = 5;
    cfg.weights.total_steps = 5;
    cfg.denoisers = DenoiserConfig::Remote(RemoteConfig {
        view_endpoint: server.url(),
        video_endpoint: server.url(),
        latent_shape: [3, 8, 8],
        ..RemoteConfig::default()
    });
    let m = cmd_synthesize(&cfg, dir.path()).unwrap();
    assert_eq!(m.outputs.len(), 3);
    assert!(m.denoisers.view.starts_with("remote-view:"));
    let img = vivid_vision::Image::read_png(&dir.path().join("frames/frame_02.png")).unwrap();
    assert_eq!(img.shape(), [3, 8, 8]);
    let again = cmd_synthesize(&cfg, &dir.path().join("again")).unwrap();
    assert_eq!(again.outputs, m.outputs);
}
