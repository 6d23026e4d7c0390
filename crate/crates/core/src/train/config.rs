//! Run configuration and its flat key/value form.

use std::path::PathBuf;

use super::adan::AdanConfig;
use crate::config::{format_list, parse_array, parse_bool, parse_list, parse_value, KeyValues};
use crate::error::{Error, Result};
use crate::field::{DensityBlob, FieldConfig, FourierMode};
use crate::guidance::{NoiseSchedule, WeightMode};
use crate::render::{CameraPose, RenderOptions};
use crate::scenes::AnalyticScene;
use crate::schedule::{RadiusMode, RadiusSchedule, StageSchedule, TimestepMode, TimestepParams};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum TrainMode {
    /// Mean squared error against renders of the reference scene.
    #[default]
    Photometric,
    /// Score distillation with a toy denoiser whose target is the reference
    /// scene rendered from the current camera.
    SdsToy,
}

impl TrainMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TrainMode::Photometric => "photometric",
            TrainMode::SdsToy => "sds_toy",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "photometric" => Ok(TrainMode::Photometric),
            "sds_toy" => Ok(TrainMode::SdsToy),
            other => Err(Error::config(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum BlobMode {
    /// On in score-distillation mode, off otherwise.
    #[default]
    Auto,
    On,
    Off,
}

impl BlobMode {
    fn as_str(self) -> &'static str {
        match self {
            BlobMode::Auto => "auto",
            BlobMode::On => "on",
            BlobMode::Off => "off",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(BlobMode::Auto),
            "on" => Ok(BlobMode::On),
            "off" => Ok(BlobMode::Off),
            other => Err(Error::config(format!("density_blob must be auto, on or off, got `{other}`"))),
        }
    }
}

/// Everything a training run depends on.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub scene: String,
    pub scene_kappa: f64,
    pub iterations: usize,
    /// First iteration of each stage; `None` splits the run into four equal
    /// stages.
    pub stage_boundaries: Option<Vec<usize>>,
    pub render: RenderOptions,
    /// Pixels per photometric step; 0 uses the whole image.
    pub ray_batch: usize,
    /// Draw the background from white, black and gray each score-distillation
    /// iteration.
    pub random_background: bool,
    pub field: FieldConfig,
    pub density_blob: BlobMode,
    pub blob: DensityBlob,
    pub timestep: TimestepParams,
    pub timestep_mode: TimestepMode,
    pub noise_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub weight_mode: WeightMode,
    pub radius: RadiusSchedule,
    /// Camera used for every iteration instead of sampled poses.
    pub fixed_pose: Option<CameraPose>,
    pub lambda_tv: f64,
    pub lambda_l2: f64,
    pub adan: AdanConfig,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub grad_clip: f64,
    pub seed: u64,
    pub log_every: usize,
    /// Fill the `wall_ms` metrics column; off gives reproducible files.
    pub record_wall_time: bool,
    pub progress: bool,
    pub output_dir: Option<PathBuf>,
    pub eval_views: usize,
    pub eval_radius: (f64, f64),
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::Photometric,
            scene: "checker_sphere".into(),
            scene_kappa: crate::scenes::DEFAULT_KAPPA,
            iterations: 6000,
            stage_boundaries: None,
            render: RenderOptions::default(),
            ray_batch: 0,
            random_background: true,
            field: FieldConfig::default(),
            density_blob: BlobMode::Auto,
            blob: DensityBlob::default(),
            timestep: TimestepParams::default(),
            timestep_mode: TimestepMode::Progressive,
            noise_steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
            weight_mode: WeightMode::SqrtAlphaBar,
            radius: RadiusSchedule::default(),
            fixed_pose: None,
            lambda_tv: 1e-3,
            lambda_l2: 1e-4,
            adan: AdanConfig::default(),
            grad_clip: 10.0,
            seed: 0,
            log_every: 10,
            record_wall_time: true,
            progress: true,
            output_dir: None,
            eval_views: 8,
            eval_radius: (1.8, 3.5),
        }
    }
}

fn opt_string<T>(v: &Option<T>, f: impl Fn(&T) -> String) -> String {
    v.as_ref().map_or_else(|| "none".to_string(), f)
}

impl TrainConfig {
    pub fn stage_schedule(&self) -> Result<StageSchedule> {
        match &self.stage_boundaries {
            Some(b) => StageSchedule::new(self.iterations, b.clone()),
            None => StageSchedule::equal(self.iterations, crate::field::LEVELS),
        }
    }

    pub fn noise_schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.noise_steps, self.beta_start, self.beta_end)
    }

    pub fn scene(&self) -> Result<AnalyticScene> {
        Ok(AnalyticScene::by_name(&self.scene)?.with_kappa(self.scene_kappa))
    }

    pub fn blob_enabled(&self) -> bool {
        match self.density_blob {
            BlobMode::Auto => self.mode == TrainMode::SdsToy,
            BlobMode::On => true,
            BlobMode::Off => false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::config("iterations must be at least 1"));
        }
        self.stage_schedule()?;
        self.render.validate()?;
        self.field.validate()?;
        self.timestep.validate()?;
        self.radius.validate()?;
        self.adan.validate()?;
        self.scene()?;
        let schedule = self.noise_schedule()?;
        if self.timestep.t_max > schedule.steps() {
            return Err(Error::config(format!(
                "t_max {} exceeds the {} noise steps",
                self.timestep.t_max,
                schedule.steps()
            )));
        }
        if !(self.scene_kappa > 0.0) {
            return Err(Error::config("scene_kappa must be positive"));
        }
        if !(self.lambda_tv >= 0.0 && self.lambda_l2 >= 0.0 && self.grad_clip >= 0.0) {
            return Err(Error::config("regularizer weights and grad_clip must be non-negative"));
        }
        if self.log_every == 0 {
            return Err(Error::config("log_every must be at least 1"));
        }
        let (lo, hi) = self.eval_radius;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::config(format!("invalid eval_radius [{lo}, {hi}]")));
        }
        Ok(())
    }

    /// Applies one `key = value` setting. Unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "mode" => self.mode = TrainMode::parse(v)?,
            "scene" => self.scene = v.to_string(),
            "scene_kappa" => self.scene_kappa = parse_value(key, v)?,
            "iterations" => self.iterations = parse_value(key, v)?,
            "stage_boundaries" => {
                self.stage_boundaries = if v == "auto" { None } else { Some(parse_list(key, v, None)?) }
            }
            "width" => self.render.width = parse_value(key, v)?,
            "height" => self.render.height = parse_value(key, v)?,
            "samples_per_ray" => self.render.samples_per_ray = parse_value(key, v)?,
            "stratified" => self.render.stratified = parse_bool(key, v)?,
            "background" => self.render.background = parse_array(key, v)?,
            "ray_batch" => self.ray_batch = parse_value(key, v)?,
            "random_background" => self.random_background = parse_bool(key, v)?,
            "plane_resolutions" => self.field.plane_resolutions = parse_array(key, v)?,
            "vector_resolution" => self.field.vector_resolution = parse_value(key, v)?,
            "channels" => self.field.channels = parse_value(key, v)?,
            "fourier_bands" => self.field.fourier_bands = parse_value(key, v)?,
            "fourier_mode" => {
                self.field.fourier_mode = match v {
                    "log_spaced" => FourierMode::LogSpaced,
                    "random_projection" => FourierMode::RandomProjection {
                        scale: match self.field.fourier_mode {
                            FourierMode::RandomProjection { scale } => scale,
                            FourierMode::LogSpaced => 1.0,
                        },
                    },
                    other => return Err(Error::config(format!("unknown fourier_mode `{other}`"))),
                }
            }
            "fourier_scale" => {
                let scale: f64 = parse_value(key, v)?;
                if let FourierMode::RandomProjection { scale: s } = &mut self.field.fourier_mode {
                    *s = scale;
                } else if scale != 1.0 {
                    return Err(Error::config("fourier_scale applies only to fourier_mode = random_projection"));
                }
            }
            "hidden_width" => self.field.hidden_width = parse_value(key, v)?,
            "hidden_layers" => self.field.hidden_layers = parse_value(key, v)?,
            "feature_init" => self.field.feature_init = parse_value(key, v)?,
            "density_blob" => self.density_blob = BlobMode::parse(v)?,
            "blob_amplitude" => self.blob.amplitude = parse_value(key, v)?,
            "blob_width" => self.blob.width = parse_value(key, v)?,
            "t_schedule" => self.timestep_mode = TimestepMode::parse(v)?,
            "m1" => self.timestep.m1 = parse_value(key, v)?,
            "m2" => self.timestep.m2 = parse_value(key, v)?,
            "n1" => self.timestep.n1 = parse_value(key, v)?,
            "n2" => self.timestep.n2 = parse_value(key, v)?,
            "t_min" => self.timestep.t_min = parse_value(key, v)?,
            "t_max" => self.timestep.t_max = parse_value(key, v)?,
            "target_fraction" => self.timestep.target_fraction = parse_value(key, v)?,
            "noise_steps" => self.noise_steps = parse_value(key, v)?,
            "beta_start" => self.beta_start = parse_value(key, v)?,
            "beta_end" => self.beta_end = parse_value(key, v)?,
            "weight_mode" => self.weight_mode = WeightMode::parse(v)?,
            "radius_mode" => self.radius.mode = RadiusMode::parse(v)?,
            "radius_start" => {
                let [a, b] = parse_array(key, v)?;
                self.radius.start = (a, b);
            }
            "radius_end" => {
                let [a, b] = parse_array(key, v)?;
                self.radius.end = (a, b);
            }
            "fixed_pose" => {
                self.fixed_pose = if v == "none" {
                    None
                } else {
                    let [az, pol, r, fov] = parse_array(key, v)?;
                    Some(CameraPose::new(az, pol, r, fov)?)
                }
            }
            "lambda_tv" => self.lambda_tv = parse_value(key, v)?,
            "lambda_l2" => self.lambda_l2 = parse_value(key, v)?,
            "lr" => self.adan.lr = parse_value(key, v)?,
            "weight_decay" => self.adan.weight_decay = parse_value(key, v)?,
            "adan_betas" => self.adan.betas = parse_array(key, v)?,
            "adan_eps" => self.adan.eps = parse_value(key, v)?,
            "grad_clip" => self.grad_clip = parse_value(key, v)?,
            "seed" => self.seed = parse_value(key, v)?,
            "field_seed" => self.field.seed = parse_value(key, v)?,
            "log_every" => self.log_every = parse_value(key, v)?,
            "record_wall_time" => self.record_wall_time = parse_bool(key, v)?,
            "progress" => self.progress = parse_bool(key, v)?,
            "output_dir" => self.output_dir = (v != "none").then(|| PathBuf::from(v)),
            "eval_views" => self.eval_views = parse_value(key, v)?,
            "eval_radius" => {
                let [a, b] = parse_array(key, v)?;
                self.eval_radius = (a, b);
            }
            other => return Err(Error::config(format!("unknown configuration key `{other}`"))),
        }
        Ok(())
    }

    /// Every setting, in a form [`TrainConfig::set`] accepts.
    pub fn to_key_values(&self) -> KeyValues {
        let f = &self.field;
        let (fourier_mode, fourier_scale) = match f.fourier_mode {
            FourierMode::LogSpaced => ("log_spaced", 1.0),
            FourierMode::RandomProjection { scale } => ("random_projection", scale),
        };
        let pairs: Vec<(&str, String)> = vec![
            ("mode", self.mode.as_str().into()),
            ("scene", self.scene.clone()),
            ("scene_kappa", self.scene_kappa.to_string()),
            ("iterations", self.iterations.to_string()),
            (
                "stage_boundaries",
                self.stage_boundaries.as_ref().map_or("auto".into(), |b| format_list(b)),
            ),
            ("width", self.render.width.to_string()),
            ("height", self.render.height.to_string()),
            ("samples_per_ray", self.render.samples_per_ray.to_string()),
            ("stratified", self.render.stratified.to_string()),
            ("background", format_list(&self.render.background)),
            ("ray_batch", self.ray_batch.to_string()),
            ("random_background", self.random_background.to_string()),
            ("plane_resolutions", format_list(&f.plane_resolutions)),
            ("vector_resolution", f.vector_resolution.to_string()),
            ("channels", f.channels.to_string()),
            ("fourier_bands", f.fourier_bands.to_string()),
            ("fourier_mode", fourier_mode.into()),
            ("fourier_scale", fourier_scale.to_string()),
            ("hidden_width", f.hidden_width.to_string()),
            ("hidden_layers", f.hidden_layers.to_string()),
            ("feature_init", f.feature_init.to_string()),
            ("field_seed", f.seed.to_string()),
            ("density_blob", self.density_blob.as_str().into()),
            ("blob_amplitude", self.blob.amplitude.to_string()),
            ("blob_width", self.blob.width.to_string()),
            ("t_schedule", self.timestep_mode.as_str().into()),
            ("m1", self.timestep.m1.to_string()),
            ("m2", self.timestep.m2.to_string()),
            ("n1", self.timestep.n1.to_string()),
            ("n2", self.timestep.n2.to_string()),
            ("t_min", self.timestep.t_min.to_string()),
            ("t_max", self.timestep.t_max.to_string()),
            ("target_fraction", self.timestep.target_fraction.to_string()),
            ("noise_steps", self.noise_steps.to_string()),
            ("beta_start", self.beta_start.to_string()),
            ("beta_end", self.beta_end.to_string()),
            ("weight_mode", self.weight_mode.as_str().into()),
            ("radius_mode", self.radius.mode.as_str().into()),
            ("radius_start", format_list(&[self.radius.start.0, self.radius.start.1])),
            ("radius_end", format_list(&[self.radius.end.0, self.radius.end.1])),
            (
                "fixed_pose",
                opt_string(&self.fixed_pose, |p| format_list(&[p.azimuth(), p.polar(), p.radius(), p.fovy()])),
            ),
            ("lambda_tv", self.lambda_tv.to_string()),
            ("lambda_l2", self.lambda_l2.to_string()),
            ("lr", self.adan.lr.to_string()),
            ("weight_decay", self.adan.weight_decay.to_string()),
            ("adan_betas", format_list(&self.adan.betas)),
            ("adan_eps", self.adan.eps.to_string()),
            ("grad_clip", self.grad_clip.to_string()),
            ("seed", self.seed.to_string()),
            ("log_every", self.log_every.to_string()),
            ("record_wall_time", self.record_wall_time.to_string()),
            ("progress", self.progress.to_string()),
            ("output_dir", opt_string(&self.output_dir, |p| p.display().to_string())),
            ("eval_views", self.eval_views.to_string()),
            ("eval_radius", format_list(&[self.eval_radius.0, self.eval_radius.1])),
        ];
        let mut kv = KeyValues::new();
        for (k, v) in pairs {
            kv.set(k, &v).expect("static keys are valid");
        }
        kv
    }

    /// Defaults, then `kv` in order. `fourier_mode` is applied before
    /// `fourier_scale` regardless of order.
    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(v) = kv.get("fourier_mode") {
            cfg.set("fourier_mode", v)?;
        }
        for (k, v) in kv.iter() {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses configuration text and then applies `--key=value` overrides.
    pub fn from_text(text: &str, overrides: &[String]) -> Result<Self> {
        let mut kv = KeyValues::parse(text)?;
        for arg in overrides {
            let (k, v) = KeyValues::parse_override(arg)?;
            kv.set(&k, &v)?;
        }
        Self::from_key_values(&kv)
    }
}
