//! Progressive optimisation of a multi-scale field.
//!
//! One iteration: pull the schedule state, freeze finished levels, pick a
//! camera, compute the loss gradient (photometric or score distillation),
//! add regularisers, clip, and take an Adan step on the active tensors.

pub mod adan;
mod config;
pub mod regularize;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng as _;

pub use adan::{Adan, AdanConfig, AdanMoments};
pub use config::{BlobMode, TrainConfig, TrainMode};
pub use regularize::{apply_regularizers, RegularizerTerms};

use crate::error::{Error, Result};
use crate::field::{save_checkpoint, MultiScaleField};
use crate::guidance::{photometric_step, sds_step, SdsRequest, ToyTargetDenoiser};
use crate::math::{rng_from_seed, Rng};
use crate::render::{render_bundle, render_image, sample_camera, CameraPose, RayBundle, RenderOptions, StagedField};
use crate::scenes::{occupancy_iou, psnr, AnalyticScene};
use crate::schedule::{ScheduleState, Scheduler, TimestepSampler};
use crate::Image;

/// Backgrounds drawn when `random_background` is on.
const BACKGROUNDS: [[f64; 3]; 3] = [[1.0; 3], [0.0; 3], [0.5; 3]];

/// Offset separating the held-out camera stream from the training stream.
const EVAL_SEED_OFFSET: u64 = 0x5eed_e7a1;

/// One training iteration, as logged.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub state: ScheduleState,
    /// Data term plus weighted regularisers.
    pub loss: f64,
    /// PSNR of the rendered pixels against the reference; `None` when the
    /// data term is not an image error.
    pub psnr: Option<f64>,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
    pub wall_ms: Option<f64>,
}

pub const METRICS_HEADER: &str = "iteration,stage,t,phase,R_lo,R_hi,loss,psnr,grad_norm,wall_ms";

fn optional(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

impl IterationRecord {
    pub fn csv_row(&self) -> String {
        let s = &self.state;
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            s.iteration,
            s.stage,
            s.t,
            s.phase,
            s.radius.0,
            s.radius.1,
            self.loss,
            optional(self.psnr),
            self.grad_norm,
            optional(self.wall_ms)
        )
    }
}

pub fn write_metrics_csv(out: &mut impl Write, rows: &[IterationRecord]) -> Result<()> {
    writeln!(out, "{METRICS_HEADER}")?;
    for r in rows {
        writeln!(out, "{}", r.csv_row())?;
    }
    Ok(())
}

/// Result of [`train`].
#[derive(Debug)]
pub struct TrainOutcome {
    pub field: MultiScaleField,
    /// Stage active at the last iteration.
    pub final_stage: usize,
    /// Rows at every `log_every` iterations and at the last one.
    pub metrics: Vec<IterationRecord>,
    /// Files written under `output_dir`.
    pub artifacts: Vec<PathBuf>,
}

fn wrap(iteration: usize, phase: &str) -> impl FnOnce(Error) -> Error + '_ {
    move |e| Error::Train {
        iteration,
        phase: phase.to_string(),
        source: Box::new(e),
    }
}

/// Builds the initial field for `config`.
pub fn initial_field(config: &TrainConfig) -> Result<MultiScaleField> {
    let mut field = MultiScaleField::new(&config.field)?;
    field.set_blob(config.blob_enabled().then_some(config.blob));
    Ok(field)
}

pub fn train(config: &TrainConfig) -> Result<TrainOutcome> {
    train_observed(config, |_, _| {})
}

/// Runs `config` to completion, calling `observer` after every iteration's
/// parameter update.
pub fn train_observed(
    config: &TrainConfig,
    mut observer: impl FnMut(&IterationRecord, &MultiScaleField),
) -> Result<TrainOutcome> {
    config.validate()?;
    let scene = config.scene()?;
    let stages = config.stage_schedule()?;
    let noise = config.noise_schedule()?;
    let sampler = TimestepSampler::calibrated(config.timestep, config.iterations, config.timestep_mode)?;
    let mut scheduler = Scheduler::new(sampler, stages.clone(), config.radius)?;
    let mut optimizer = Adan::new(config.adan)?;
    let mut field = initial_field(config)?;
    let mut rng = rng_from_seed(config.seed);
    let mut metrics = Vec::new();
    let mut artifacts = Vec::new();
    if let Some(dir) = &config.output_dir {
        std::fs::create_dir_all(dir)?;
    }

    let mut final_stage = 0;
    while let Some(state) = scheduler.next_state(&mut rng) {
        let started = Instant::now();
        let i = state.iteration;
        if i > 0 && stages.is_stage_entry(i) {
            if let Some(dir) = &config.output_dir {
                let path = dir.join(format!("stage{}.mtnf", state.stage - 1));
                save_checkpoint(&field, &path).map_err(wrap(i, "checkpoint"))?;
                artifacts.push(path);
            }
        }
        field.freeze_below(state.stage);
        final_stage = state.stage;

        let pose = match config.fixed_pose {
            Some(p) => p,
            None => sample_camera(&mut rng, state.radius).map_err(wrap(i, "camera"))?,
        };
        let background = if config.random_background && config.mode == TrainMode::SdsToy {
            BACKGROUNDS[rng.random_range(0..BACKGROUNDS.len())]
        } else {
            config.render.background
        };
        let options = RenderOptions {
            background,
            ..config.render
        };

        let (mut grads, data_loss, step_psnr) = match config.mode {
            TrainMode::Photometric => {
                let bundle = photometric_bundle(&pose, &options, config.ray_batch, &mut rng).map_err(wrap(i, "render"))?;
                let target = reference_pixels(&scene, &bundle, background);
                let step = photometric_step(&field, state.stage, &bundle, &target, background)
                    .map_err(wrap(i, "photometric"))?;
                let p = if step.loss > 0.0 { -10.0 * step.loss.log10() } else { f64::INFINITY };
                (step.grads, step.loss, Some(p))
            }
            TrainMode::SdsToy => {
                let target = render_image(&scene, &pose, &options, &mut rng).map_err(wrap(i, "render"))?;
                let denoiser = ToyTargetDenoiser::new(target.rgb, noise.clone()).map_err(wrap(i, "denoiser"))?;
                let request = SdsRequest {
                    stage: state.stage,
                    pose: &pose,
                    options: &options,
                    schedule: &noise,
                    t: state.t,
                    weight_mode: config.weight_mode,
                    guidance_scale: None,
                };
                let step = sds_step(&field, &request, &denoiser, &mut rng).map_err(wrap(i, "sds"))?;
                let mse = step.render.mse(denoiser.target()).map_err(wrap(i, "sds"))?;
                // Surrogate whose gradient is the injected residual.
                let n = step.residual.data().len().max(1) as f64;
                (step.grads, step.residual_norm * step.residual_norm / n, Some(-10.0 * mse.max(1e-300).log10()))
            }
        };

        let terms = apply_regularizers(&field, &mut grads, config.lambda_tv, config.lambda_l2);
        let loss = data_loss + terms.weighted(config.lambda_tv, config.lambda_l2);
        let grad_norm = grads.norm();
        if !loss.is_finite() || !grad_norm.is_finite() {
            return Err(wrap(i, "loss")(Error::NonFinite(format!(
                "loss {loss}, gradient norm {grad_norm}, stage {}, t {}",
                state.stage, state.t
            ))));
        }
        if config.grad_clip > 0.0 && grad_norm > config.grad_clip {
            grads.scale(config.grad_clip / grad_norm);
        }
        optimizer.step(&mut field, &grads).map_err(wrap(i, "optimizer"))?;

        let record = IterationRecord {
            state,
            loss,
            psnr: step_psnr,
            grad_norm,
            wall_ms: config
                .record_wall_time
                .then(|| started.elapsed().as_secs_f64() * 1e3),
        };
        let last = i + 1 == config.iterations;
        if i % config.log_every == 0 || last {
            if config.progress {
                eprintln!(
                    "iter {:>6} stage {} t {:>4} loss {:.6} grad {:.4}",
                    i, record.state.stage, record.state.t, record.loss, record.grad_norm
                );
            }
            metrics.push(record.clone());
        }
        observer(&record, &field);
    }

    if let Some(dir) = &config.output_dir {
        let stage_path = dir.join(format!("stage{final_stage}.mtnf"));
        save_checkpoint(&field, &stage_path)?;
        let final_path = dir.join("final.mtnf");
        save_checkpoint(&field, &final_path)?;
        let metrics_path = dir.join("metrics.csv");
        let mut out = std::io::BufWriter::new(std::fs::File::create(&metrics_path)?);
        write_metrics_csv(&mut out, &metrics)?;
        out.flush()?;
        let config_path = dir.join("config.txt");
        std::fs::write(&config_path, config.to_key_values().to_text())?;
        artifacts.extend([stage_path, final_path, metrics_path, config_path]);
    }

    Ok(TrainOutcome {
        field,
        final_stage,
        metrics,
        artifacts,
    })
}

/// Whole image when `batch` is 0 or covers it, else `batch` distinct pixels.
fn photometric_bundle(pose: &CameraPose, options: &RenderOptions, batch: usize, rng: &mut Rng) -> Result<RayBundle> {
    let total = options.width * options.height;
    if batch == 0 || batch >= total {
        return RayBundle::full(pose, options, rng);
    }
    let mut pixels = rand::seq::index::sample(rng, total, batch).into_vec();
    pixels.sort_unstable();
    RayBundle::for_pixels(pose, options, pixels, rng)
}

/// The scene rendered along the bundle's own samples, as a full-size image
/// with the bundle's pixels filled in.
fn reference_pixels(scene: &AnalyticScene, bundle: &RayBundle, background: [f64; 3]) -> Image {
    let composites = render_bundle(scene, bundle, background);
    let mut image = Image::filled(bundle.width, bundle.height, background);
    for (&p, c) in bundle.pixels.iter().zip(&composites) {
        image.set_pixel(p, c.rgb.map(|x| x.clamp(0.0, 1.0)));
    }
    image
}

/// Held-out camera poses drawn from their own seed stream.
pub fn evaluation_poses(seed: u64, views: usize, radius: (f64, f64)) -> Result<Vec<CameraPose>> {
    let mut rng = rng_from_seed(seed.wrapping_add(EVAL_SEED_OFFSET));
    (0..views).map(|_| sample_camera(&mut rng, radius)).collect()
}

/// Quality of a trained field against its reference scene.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    /// Mean PSNR over the held-out views.
    pub psnr: f64,
    pub iou: f64,
}

/// Mean PSNR of `field` at `stage` against `scene` over `poses`. Both are
/// rendered with midpoint samples.
pub fn heldout_psnr(
    field: &MultiScaleField,
    stage: usize,
    scene: &AnalyticScene,
    poses: &[CameraPose],
    options: &RenderOptions,
) -> Result<f64> {
    if poses.is_empty() {
        return Err(Error::config("held-out evaluation needs at least one view"));
    }
    let options = RenderOptions {
        stratified: false,
        ..*options
    };
    let staged = StagedField::new(field, stage)?;
    let mut rng = rng_from_seed(0);
    let mut total = 0.0;
    for pose in poses {
        let want = render_image(scene, pose, &options, &mut rng)?;
        let got = render_image(&staged, pose, &options, &mut rng)?;
        total += psnr(&got.rgb, &want.rgb)?;
    }
    Ok(total / poses.len() as f64)
}

/// Held-out PSNR over `config.eval_views` poses and occupancy IoU on an
/// `n³` lattice at threshold `tau`.
pub fn evaluate(
    field: &MultiScaleField,
    stage: usize,
    config: &TrainConfig,
    n: usize,
    tau: f64,
) -> Result<Evaluation> {
    let scene = config.scene()?;
    let poses = evaluation_poses(config.seed, config.eval_views, config.eval_radius)?;
    let options = RenderOptions {
        background: config.render.background,
        ..config.render
    };
    Ok(Evaluation {
        psnr: heldout_psnr(field, stage, &scene, &poses, &options)?,
        iou: occupancy_iou(&StagedField::new(field, stage)?, &scene, n, tau)?,
    })
}

/// Saves `field` to `path`; a thin re-export for callers holding a
/// [`TrainOutcome`].
pub fn save_field(field: &MultiScaleField, path: impl AsRef<Path>) -> Result<()> {
    save_checkpoint(field, path)
}

/// One row of the component ablation.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub name: &'static str,
    pub multi_scale: bool,
    pub t_schedule: bool,
    pub progressive_radius: bool,
    pub evaluation: Evaluation,
    pub final_loss: f64,
}

pub const ABLATION_HEADER: &str = "row,multi_scale,t_schedule,progressive_radius,heldout_psnr,iou,final_loss";

/// The four ablation configurations derived from `base`, with equal
/// iteration budgets: a single level-1 triplane, the multi-scale network,
/// plus the progressive time step, plus the progressive radius.
pub fn ablation_configs(base: &TrainConfig) -> Vec<(&'static str, [bool; 3], TrainConfig)> {
    let variant = |multi: bool, t: bool, radius: bool| {
        let mut cfg = base.clone();
        if !multi {
            cfg.stage_boundaries = Some(vec![0]);
        }
        cfg.timestep_mode = if t {
            crate::schedule::TimestepMode::Progressive
        } else {
            crate::schedule::TimestepMode::Uniform
        };
        if !radius {
            cfg.radius.mode = crate::schedule::RadiusMode::Fixed;
        }
        cfg.output_dir = None;
        cfg
    };
    vec![
        ("single", [false, false, false], variant(false, false, false)),
        ("MTN", [true, false, false], variant(true, false, false)),
        ("MTN+t", [true, true, false], variant(true, true, false)),
        ("full", [true, true, true], variant(true, true, true)),
    ]
}

/// Trains and evaluates every ablation configuration.
pub fn run_ablation(base: &TrainConfig, n: usize, tau: f64) -> Result<Vec<AblationRow>> {
    ablation_configs(base)
        .into_iter()
        .map(|(name, [multi_scale, t_schedule, progressive_radius], cfg)| {
            let out = train(&cfg)?;
            let evaluation = evaluate(&out.field, out.final_stage, &cfg, n, tau)?;
            Ok(AblationRow {
                name,
                multi_scale,
                t_schedule,
                progressive_radius,
                evaluation,
                final_loss: out.metrics.last().map_or(f64::NAN, |r| r.loss),
            })
        })
        .collect()
}

pub fn write_ablation_csv(out: &mut impl Write, rows: &[AblationRow]) -> Result<()> {
    writeln!(out, "{ABLATION_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.name,
            r.multi_scale,
            r.t_schedule,
            r.progressive_radius,
            r.evaluation.psnr,
            r.evaluation.iou,
            r.final_loss
        )?;
    }
    Ok(())
}
