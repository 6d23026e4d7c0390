use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use mtn_core::field::{load_checkpoint, LEVELS};
use mtn_core::math::rng_from_seed;
use mtn_core::render::{render_field_image, sample_camera, CameraPose, RenderOptions, StagedField};
use mtn_core::scenes::{make_targets, marching_cubes, write_targets, AnalyticScene};
use mtn_core::schedule::{write_trace_csv, Scheduler, TimestepSampler};
use mtn_core::train::{evaluate, run_ablation, train, write_ablation_csv, TrainConfig};

#[derive(Parser)]
#[command(name = "mtn", version, about = "Multi-scale triplane field trainer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a field; settings come from the config file then `--key=value` overrides.
    Train(ConfigArgs),
    /// Render a checkpoint to PNG.
    Render(RenderArgs),
    /// Extract an isosurface from a checkpoint as OBJ.
    ExportMesh(MeshArgs),
    /// Render reference images of an analytic scene.
    MakeTargets(TargetArgs),
    /// Train the four ablation rows and write a comparison CSV.
    Ablate(AblateArgs),
    /// Write the per-iteration time-step, stage and radius schedule as CSV.
    ScheduleTrace(TraceArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `--key=value` overrides applied after the file.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<TrainConfig> {
        let text = match &self.config {
            Some(path) => fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?,
            None => String::new(),
        };
        Ok(TrainConfig::from_text(&text, &self.overrides)?)
    }
}

#[derive(Args)]
struct PoseArgs {
    /// Degrees.
    #[arg(long, default_value_t = 0.0)]
    azimuth: f64,
    /// Degrees from +z.
    #[arg(long, default_value_t = 60.0)]
    polar: f64,
    #[arg(long, default_value_t = 2.5)]
    radius: f64,
    /// Vertical field of view in degrees.
    #[arg(long, default_value_t = 20.0)]
    fovy: f64,
}

impl PoseArgs {
    fn pose(&self) -> Result<CameraPose> {
        Ok(CameraPose::new(self.azimuth, self.polar, self.radius, self.fovy)?)
    }
}

#[derive(Args)]
struct ImageArgs {
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 64)]
    samples: usize,
}

impl ImageArgs {
    fn options(&self) -> RenderOptions {
        RenderOptions {
            width: self.width,
            height: self.height,
            samples_per_ray: self.samples,
            stratified: false,
            ..RenderOptions::default()
        }
    }
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    pose: PoseArgs,
    #[command(flatten)]
    image: ImageArgs,
    /// Number of active levels.
    #[arg(long, default_value_t = LEVELS)]
    stage: usize,
    /// Store opacity in the alpha channel.
    #[arg(long)]
    alpha: bool,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct MeshArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Lattice points per axis.
    #[arg(long, default_value_t = 128)]
    n: usize,
    /// Density level of the surface.
    #[arg(long, default_value_t = 15.0)]
    iso: f64,
    #[arg(long, default_value_t = LEVELS)]
    stage: usize,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct TargetArgs {
    #[arg(long, default_value = "checker_sphere")]
    scene: String,
    #[arg(long, default_value_t = 8)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1.8)]
    radius_min: f64,
    #[arg(long, default_value_t = 3.5)]
    radius_max: f64,
    #[command(flatten)]
    image: ImageArgs,
    #[arg(long, short)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    /// Occupancy lattice points per axis.
    #[arg(long, default_value_t = 64)]
    iou_n: usize,
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    #[arg(long, short)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct TraceArgs {
    #[arg(long, short)]
    out: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(
        fs::File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn check_stage(stage: usize) -> Result<()> {
    if !(1..=LEVELS).contains(&stage) {
        bail!("stage must be in 1..={LEVELS}, got {stage}");
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => {
            let cfg = args.load()?;
            let out = train(&cfg)?;
            if let Some(last) = out.metrics.last() {
                println!("final loss {} at stage {}", last.loss, out.final_stage);
            }
            for path in &out.artifacts {
                println!("wrote {}", path.display());
            }
            if cfg.eval_views > 0 {
                let eval = evaluate(&out.field, out.final_stage, &cfg, 64, 1.0)?;
                println!("held-out psnr {:.3} dB, occupancy iou {:.4}", eval.psnr, eval.iou);
            }
        }
        Command::Render(args) => {
            check_stage(args.stage)?;
            let field = load_checkpoint(&args.checkpoint)?;
            let mut rng = rng_from_seed(0);
            let image = render_field_image(&field, args.stage, &args.pose.pose()?, &args.image.options(), &mut rng)?;
            image.save_png(&args.out, args.alpha)?;
            println!("wrote {}", args.out.display());
        }
        Command::ExportMesh(args) => {
            check_stage(args.stage)?;
            let field = load_checkpoint(&args.checkpoint)?;
            let mesh = marching_cubes(&StagedField::new(&field, args.stage)?, args.n, args.iso)?;
            let mut out = create(&args.out)?;
            mesh.write_obj(&mut out)?;
            out.flush()?;
            println!(
                "wrote {} ({} vertices, {} triangles)",
                args.out.display(),
                mesh.vertices.len(),
                mesh.triangles.len()
            );
        }
        Command::MakeTargets(args) => {
            let scene = AnalyticScene::by_name(&args.scene)?;
            let mut rng = rng_from_seed(args.seed);
            let poses = (0..args.count)
                .map(|_| sample_camera(&mut rng, (args.radius_min, args.radius_max)))
                .collect::<mtn_core::Result<Vec<_>>>()?;
            let images = make_targets(&scene, &poses, &args.image.options(), args.seed)?;
            write_targets(&args.out_dir, &poses, &images)?;
            println!("wrote {} targets to {}", images.len(), args.out_dir.display());
        }
        Command::Ablate(args) => {
            let base = args.config.load()?;
            let rows = run_ablation(&base, args.iou_n, args.tau)?;
            let mut out = create(&args.out)?;
            write_ablation_csv(&mut out, &rows)?;
            out.flush()?;
            for r in &rows {
                println!("{:<6} psnr {:.2} dB  iou {:.3}", r.name, r.evaluation.psnr, r.evaluation.iou);
            }
        }
        Command::ScheduleTrace(args) => {
            let cfg = args.config.load()?;
            let sampler = TimestepSampler::calibrated(cfg.timestep, cfg.iterations, cfg.timestep_mode)?;
            let mut scheduler = Scheduler::new(sampler, cfg.stage_schedule()?, cfg.radius)?;
            let mut rng = rng_from_seed(cfg.seed);
            let states: Vec<_> = std::iter::from_fn(|| scheduler.next_state(&mut rng)).collect();
            match &args.out {
                Some(path) => {
                    let mut out = create(path)?;
                    write_trace_csv(&mut out, &states)?;
                    out.flush()?;
                }
                None => write_trace_csv(&mut std::io::stdout().lock(), &states)?,
            }
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    run(Cli::parse())
}
