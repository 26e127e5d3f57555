use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vivid_cli::commands::{self, resolve_out};
use vivid_cli::{config_schema, load_config, CliError, ExperimentConfig};

#[derive(Parser)]
#[command(name = "vivid", version, about = "Dual-prior novel-view synthesis toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config, or a run manifest to repeat. Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `seed` from the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the Slerp camera path as JSON and CSV.
    Trajectory(Common),
    /// Run dual-prior sampling and write frames plus a manifest.
    Synthesize(Common),
    /// Render the synthetic evaluation dataset.
    RenderDataset(Common),
    /// Score generated images against ground truth into metrics.csv.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Directory of generated PNGs
        #[arg(long)]
        gen: PathBuf,
        /// Directory of ground-truth PNGs with the same file names
        #[arg(long)]
        gt: PathBuf,
        /// Optional directory of mask PNGs with the same file names
        #[arg(long)]
        masks: Option<PathBuf>,
    },
    /// Sweep weight schedules and frame counts on the toy pipeline.
    Ablate(Common),
    /// Print the config JSON schema.
    Schema,
}

fn setup(c: &Common) -> Result<(ExperimentConfig, PathBuf), CliError> {
    let mut cfg = match &c.config {
        Some(p) => load_config(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    let out = resolve_out(c.out.clone(), &cfg)?;
    Ok((cfg, out))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Trajectory(c) => {
            let (cfg, out) = setup(&c)?;
            let t = commands::cmd_trajectory(&cfg, &out)?;
            println!("wrote {} poses to {}", t.len(), out.display());
        }
        Command::Synthesize(c) => {
            let (cfg, out) = setup(&c)?;
            let m = commands::cmd_synthesize(&cfg, &out)?;
            if let Some(s) = m.toy_stats {
                println!(
                    "roughness {:.6}  anchored step roughness {:.6}  mean target distance {:.6}",
                    s.roughness, s.anchored_step_roughness, s.mean_target_distance
                );
            }
            println!("wrote {} outputs and {} to {}", m.outputs.len(), commands::MANIFEST_JSON, out.display());
        }
        Command::RenderDataset(c) => {
            let (cfg, out) = setup(&c)?;
            let views = commands::cmd_render_dataset(&cfg, &out)?;
            println!("rendered {} views to {}", views.len(), out.display());
        }
        Command::Evaluate { common, gen, gt, masks } => {
            let (cfg, out) = setup(&common)?;
            let reports = commands::cmd_evaluate(&cfg, &gen, &gt, masks.as_deref(), &out)?;
            let m = vivid_vision::metrics::mean_report(&reports);
            println!(
                "{} pairs: psnr {:.3}  ssim {:.4}  for_8 {:.4}  for_16 {:.4}",
                reports.len(),
                m[0],
                m[1],
                m[2],
                m[3]
            );
        }
        Command::Ablate(c) => {
            let (cfg, out) = setup(&c)?;
            let rows = commands::cmd_ablate(&cfg, &out)?;
            println!("wrote {} settings to {}", rows.len(), out.join(commands::ABLATION_CSV).display());
        }
        Command::Schema => print!("{}", config_schema()),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("vivid: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
