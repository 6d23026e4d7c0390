//! Diffusion-side guidance: the noise schedule, linear noising, denoisers and
//! the two training signals (score distillation and photometric loss).

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::field::{FieldGrads, MultiScaleField};
use crate::image::Image;
use crate::math::Rng;
use crate::render::{
    backward_bundle, render_bundle, CameraPose, Composite, PixelAdjoint, RayBundle, RenderOptions, StagedField,
};

/// Cumulative noise levels of a discrete diffusion process.
///
/// `alpha_bar[0] = 1` and `alpha_bar[t] = Π_{s ≤ t} (1 - beta[s])`, so the
/// sequence is strictly decreasing and stays positive.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    steps: usize,
    /// `betas[s - 1]` is the variance of step `s`.
    betas: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::linear(1000, 1e-4, 0.02).expect("default schedule is valid")
    }
}

impl NoiseSchedule {
    /// Variances ramp linearly from `beta_start` at step 1 to `beta_end` at
    /// step `steps`.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 || !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::config(format!(
                "noise schedule needs T ≥ 1 and 0 < β_start ≤ β_end < 1, got T={steps}, [{beta_start}, {beta_end}]"
            )));
        }
        let span = (steps - 1).max(1) as f64;
        let betas: Vec<f64> = (0..steps)
            .map(|k| beta_start + (beta_end - beta_start) * k as f64 / span)
            .collect();
        let mut alpha_bar = Vec::with_capacity(steps + 1);
        alpha_bar.push(1.0);
        let mut acc = 1.0;
        for b in &betas {
            acc *= 1.0 - b;
            alpha_bar.push(acc);
        }
        Ok(Self {
            steps,
            betas,
            alpha_bar,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    /// `ᾱ_0 ..= ᾱ_T`.
    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.alpha_bar
            .get(t)
            .copied()
            .ok_or_else(|| Error::contract(format!("time step {t} outside 0..={}", self.steps)))
    }

    fn check_noisy_step(&self, t: usize) -> Result<f64> {
        if t == 0 || t > self.steps {
            return Err(Error::contract(format!("time step {t} outside 1..={}", self.steps)));
        }
        Ok(self.alpha_bar[t])
    }
}

/// `I_t = √ᾱ_t · I + √(1 - ᾱ_t) · ε`, elementwise.
pub fn noise_image(image: &Image, t: usize, eps: &Image, schedule: &NoiseSchedule) -> Result<Image> {
    let ab = schedule.check_noisy_step(t)?;
    image.ensure_same_shape(eps)?;
    Ok(mix(image, eps, ab.sqrt(), (1.0 - ab).sqrt()))
}

fn mix(a: &Image, b: &Image, wa: f64, wb: f64) -> Image {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| wa * x + wb * y).collect();
    Image::from_data(a.width(), a.height(), data).expect("shapes checked by caller")
}

/// Standard-normal noise image drawn from `rng`, row-major.
pub fn gaussian_image(width: usize, height: usize, rng: &mut Rng) -> Image {
    let data = (0..width * height * 3).map(|_| StandardNormal.sample(rng)).collect();
    Image::from_data(width, height, data).expect("length matches")
}

/// Noise predictor `ε_φ(I_t; y, t)`. Conditioning belongs to the implementor.
pub trait Denoiser {
    /// Predicted noise, shaped like `noisy`. `guidance_scale` is accepted for
    /// conditioned models and may be ignored.
    fn predict_noise(&self, noisy: &Image, t: usize, guidance_scale: Option<f64>) -> Result<Image>;
}

/// Denoiser that is exact for one target image: it explains `I_t` as a noised
/// copy of the target.
#[derive(Clone, Debug)]
pub struct ToyTargetDenoiser {
    target: Image,
    schedule: NoiseSchedule,
}

impl ToyTargetDenoiser {
    pub fn new(target: Image, schedule: NoiseSchedule) -> Result<Self> {
        if target.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::config("toy denoiser target has channels outside [0, 1]"));
        }
        Ok(Self { target, schedule })
    }

    pub fn target(&self) -> &Image {
        &self.target
    }
}

impl Denoiser for ToyTargetDenoiser {
    fn predict_noise(&self, noisy: &Image, t: usize, _guidance_scale: Option<f64>) -> Result<Image> {
        let ab = self.schedule.check_noisy_step(t)?;
        noisy.ensure_same_shape(&self.target)?;
        let inv = 1.0 / (1.0 - ab).sqrt();
        Ok(mix(noisy, &self.target, inv, -ab.sqrt() * inv))
    }
}

/// Scale applied to the score-distillation residual before it seeds the
/// renderer's reverse pass.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum WeightMode {
    /// `√ᾱ_t`, the derivative of `I_t` with respect to `I`.
    #[default]
    SqrtAlphaBar,
    One,
    OneMinusAlphaBar,
}

impl WeightMode {
    pub fn weight(self, alpha_bar: f64) -> f64 {
        match self {
            WeightMode::SqrtAlphaBar => alpha_bar.sqrt(),
            WeightMode::One => 1.0,
            WeightMode::OneMinusAlphaBar => 1.0 - alpha_bar,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            WeightMode::SqrtAlphaBar => "sqrt_alpha_bar",
            WeightMode::One => "one",
            WeightMode::OneMinusAlphaBar => "one_minus_alpha_bar",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sqrt_alpha_bar" => Ok(WeightMode::SqrtAlphaBar),
            "one" => Ok(WeightMode::One),
            "one_minus_alpha_bar" => Ok(WeightMode::OneMinusAlphaBar),
            other => Err(Error::config(format!("unknown weight mode `{other}`"))),
        }
    }
}

fn composites_to_image(bundle: &RayBundle, composites: &[Composite], background: [f64; 3]) -> Image {
    let mut img = Image::filled(bundle.width, bundle.height, background);
    for (&p, c) in bundle.pixels.iter().zip(composites) {
        img.set_pixel(p, c.rgb);
    }
    img
}

fn mean_opacity(composites: &[Composite]) -> f64 {
    composites.iter().map(|c| c.opacity).sum::<f64>() / composites.len().max(1) as f64
}

/// Output of one score-distillation step.
#[derive(Clone, Debug)]
pub struct SdsStep {
    pub grads: FieldGrads,
    /// The render `I` the residual was computed against.
    pub render: Image,
    /// `ε̂ - ε`.
    pub residual: Image,
    pub residual_norm: f64,
    pub mean_opacity: f64,
}

/// Everything [`sds_step`] needs besides the field.
#[derive(Clone, Copy, Debug)]
pub struct SdsRequest<'a> {
    pub stage: usize,
    pub pose: &'a CameraPose,
    pub options: &'a RenderOptions,
    pub schedule: &'a NoiseSchedule,
    pub t: usize,
    pub weight_mode: WeightMode,
    pub guidance_scale: Option<f64>,
}

/// Score-distillation gradient for one camera: renders `I`, noises it to
/// `I_t`, asks `denoiser` for `ε̂` and seeds the reverse pass with
/// `w(t) · (ε̂ - ε)`. The denoiser is treated as a constant.
pub fn sds_step(
    field: &MultiScaleField,
    request: &SdsRequest<'_>,
    denoiser: &dyn Denoiser,
    rng: &mut Rng,
) -> Result<SdsStep> {
    let ab = request.schedule.check_noisy_step(request.t)?;
    let bg = request.options.background;
    let bundle = RayBundle::full(request.pose, request.options, rng)?;
    let composites = render_bundle(&StagedField::new(field, request.stage)?, &bundle, bg);
    let render = composites_to_image(&bundle, &composites, bg);
    let eps = gaussian_image(render.width(), render.height(), rng);
    let noisy = noise_image(&render, request.t, &eps, request.schedule)?;
    let predicted = denoiser.predict_noise(&noisy, request.t, request.guidance_scale)?;
    noisy.ensure_same_shape(&predicted)?;
    let residual = mix(&predicted, &eps, 1.0, -1.0);
    let w = request.weight_mode.weight(ab);
    let adjoints: Vec<PixelAdjoint> = bundle
        .pixels
        .iter()
        .map(|&p| PixelAdjoint {
            rgb: residual.pixel(p).map(|r| w * r),
            opacity: 0.0,
        })
        .collect();
    let mut grads = FieldGrads::for_stage(field, request.stage)?;
    backward_bundle(field, &bundle, bg, &adjoints, &mut grads)?;
    let residual_norm = residual.data().iter().map(|r| r * r).sum::<f64>().sqrt();
    Ok(SdsStep {
        grads,
        render,
        residual,
        residual_norm,
        mean_opacity: mean_opacity(&composites),
    })
}

/// Output of one photometric step.
#[derive(Clone, Debug)]
pub struct PhotometricStep {
    pub grads: FieldGrads,
    /// Mean squared error over the bundle's pixels and channels.
    pub loss: f64,
    pub composites: Vec<Composite>,
}

/// Mean squared error between the bundle's pixels and `target`, with its
/// exact gradient.
pub fn photometric_step(
    field: &MultiScaleField,
    stage: usize,
    bundle: &RayBundle,
    target: &Image,
    background: [f64; 3],
) -> Result<PhotometricStep> {
    if target.width() != bundle.width || target.height() != bundle.height {
        return Err(Error::shape(
            format!("{}x{}", bundle.width, bundle.height),
            format!("{}x{}", target.width(), target.height()),
        ));
    }
    let composites = render_bundle(&StagedField::new(field, stage)?, bundle, background);
    let count = (3 * bundle.len()).max(1) as f64;
    let mut loss = 0.0;
    let adjoints: Vec<PixelAdjoint> = bundle
        .pixels
        .iter()
        .zip(&composites)
        .map(|(&p, c)| {
            let want = target.pixel(p);
            let mut rgb = [0.0; 3];
            for k in 0..3 {
                let d = c.rgb[k] - want[k];
                loss += d * d;
                rgb[k] = 2.0 * d / count;
            }
            PixelAdjoint { rgb, opacity: 0.0 }
        })
        .collect();
    let mut grads = FieldGrads::for_stage(field, stage)?;
    backward_bundle(field, bundle, background, &adjoints, &mut grads)?;
    Ok(PhotometricStep {
        grads,
        loss: loss / count,
        composites,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::FieldConfig;
    use crate::math::rng_from_seed;
    use num_bigint::BigInt;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn random_image(w: usize, h: usize, rng: &mut crate::math::Rng) -> Image {
        Image::from_data(w, h, (0..w * h * 3).map(|_| rng.random()).collect()).unwrap()
    }

    fn small_field(seed: u64) -> MultiScaleField {
        MultiScaleField::new(&FieldConfig {
            plane_resolutions: [4, 8, 8],
            vector_resolution: 16,
            channels: 4,
            hidden_width: 16,
            feature_init: 0.5,
            seed,
            ..FieldConfig::default()
        })
        .unwrap()
    }

    fn small_options() -> RenderOptions {
        RenderOptions {
            width: 5,
            height: 4,
            samples_per_ray: 16,
            stratified: true,
            background: [1.0; 3],
        }
    }

    #[test]
    fn schedule_endpoints_and_monotonicity() {
        let s = NoiseSchedule::default();
        assert_eq!(s.alpha_bar(0).unwrap(), 1.0);
        assert_eq!(s.betas()[0], 1e-4);
        assert!((s.betas()[999] - 0.02).abs() < 1e-15);
        let ab = s.alpha_bars();
        assert!(ab.windows(2).all(|w| w[1] < w[0]));
        assert!(ab.iter().all(|&v| v > 0.0 && v <= 1.0));
    }

    #[test]
    fn final_alpha_bar_matches_exact_rational_product() {
        // 1 - β_s = (9990000 - 999 - 199 (s - 1)) / 9990000 exactly.
        let scale_digits = 60u32;
        let one = BigInt::from(10).pow(scale_digits);
        let den = BigInt::from(9_990_000u64);
        let mut acc = one.clone();
        for s in 1..=1000u64 {
            let num = BigInt::from(9_990_000u64 - 999 - 199 * (s - 1));
            acc = acc * num / &den;
        }
        let digits = acc.to_string();
        let exact: f64 = format!("0.{:0>60}", digits).parse().unwrap();
        let got = NoiseSchedule::default().alpha_bar(1000).unwrap();
        assert!((got - exact).abs() / exact < 1e-12, "{got} vs {exact}");
    }

    #[test]
    fn invalid_schedules_are_rejected() {
        assert!(NoiseSchedule::linear(0, 1e-4, 0.02).is_err());
        assert!(NoiseSchedule::linear(10, 0.0, 0.02).is_err());
        assert!(NoiseSchedule::linear(10, 0.03, 0.02).is_err());
        assert!(NoiseSchedule::linear(10, 1e-4, 1.0).is_err());
    }

    #[test]
    fn noising_without_noise_scales_the_image() {
        let mut rng = rng_from_seed(1);
        let s = NoiseSchedule::default();
        let img = random_image(3, 2, &mut rng);
        let zero = Image::new(3, 2);
        let noisy = noise_image(&img, 500, &zero, &s).unwrap();
        let k = s.alpha_bar(500).unwrap().sqrt();
        for (a, b) in noisy.data().iter().zip(img.data()) {
            assert_eq!(*a, k * b);
        }
        assert!(noise_image(&img, 0, &zero, &s).is_err());
        assert!(noise_image(&img, 1001, &zero, &s).is_err());
        assert!(noise_image(&img, 5, &Image::new(2, 2), &s).is_err());
    }

    #[test]
    fn identity_endpoint_when_alpha_bar_is_one() {
        // One step with a vanishing variance: ᾱ_1 rounds to exactly 1.
        let s = NoiseSchedule::linear(1, 1e-20, 1e-20).unwrap();
        assert_eq!(s.alpha_bar(1).unwrap(), 1.0);
        let mut rng = rng_from_seed(2);
        let img = random_image(2, 2, &mut rng);
        let eps = gaussian_image(2, 2, &mut rng);
        assert_eq!(noise_image(&img, 1, &eps, &s).unwrap(), img);
    }

    #[test]
    fn injected_noise_has_the_scheduled_variance() {
        let s = NoiseSchedule::default();
        let t = 300;
        let ab = s.alpha_bar(t).unwrap();
        let mut rng = rng_from_seed(3);
        let img = random_image(2, 2, &mut rng);
        let draws = 10_000;
        let mut sum = [0.0; 12];
        let mut sum_sq = [0.0; 12];
        for _ in 0..draws {
            let eps = gaussian_image(2, 2, &mut rng);
            let noisy = noise_image(&img, t, &eps, &s).unwrap();
            for k in 0..12 {
                let d = noisy.data()[k] - ab.sqrt() * img.data()[k];
                sum[k] += d;
                sum_sq[k] += d * d;
            }
        }
        for k in 0..12 {
            let mean = sum[k] / draws as f64;
            let var = sum_sq[k] / draws as f64 - mean * mean;
            assert!((var - (1.0 - ab)).abs() < 0.05 * (1.0 - ab), "pixel {k}: {var}");
        }
    }

    #[test]
    fn toy_denoiser_recovers_injected_noise() {
        let s = NoiseSchedule::default();
        let mut rng = rng_from_seed(4);
        let target = random_image(4, 3, &mut rng);
        let d = ToyTargetDenoiser::new(target.clone(), s.clone()).unwrap();
        for t in [20, 400, 980] {
            let eps = gaussian_image(4, 3, &mut rng);
            let noisy = noise_image(&target, t, &eps, &s).unwrap();
            let pred = d.predict_noise(&noisy, t, None).unwrap();
            for (a, b) in pred.data().iter().zip(eps.data()) {
                assert!((a - b).abs() < 1e-9, "t={t}: {a} vs {b}");
            }
            let clean = mix(&target, &target, s.alpha_bar(t).unwrap().sqrt(), 0.0);
            assert!(d.predict_noise(&clean, t, None).unwrap().data().iter().all(|v| v.abs() < 1e-12));
        }
        assert!(d.predict_noise(&target, 0, None).is_err());
        assert!(ToyTargetDenoiser::new(Image::filled(1, 1, [1.5, 0.0, 0.0]), s).is_err());
    }

    #[test]
    fn toy_residual_expands_symbolically() {
        let s = NoiseSchedule::default();
        let mut rng = rng_from_seed(5);
        let target = random_image(3, 3, &mut rng);
        let render = random_image(3, 3, &mut rng);
        let d = ToyTargetDenoiser::new(target.clone(), s.clone()).unwrap();
        let t = 250;
        let ab = s.alpha_bar(t).unwrap();
        let eps = gaussian_image(3, 3, &mut rng);
        let noisy = noise_image(&render, t, &eps, &s).unwrap();
        let pred = d.predict_noise(&noisy, t, None).unwrap();
        let k = ab.sqrt() / (1.0 - ab).sqrt();
        for i in 0..27 {
            let want = k * (render.data()[i] - target.data()[i]);
            let got = pred.data()[i] - eps.data()[i];
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn weight_modes_round_trip() {
        for m in [WeightMode::SqrtAlphaBar, WeightMode::One, WeightMode::OneMinusAlphaBar] {
            assert_eq!(WeightMode::parse(m.as_str()).unwrap(), m);
        }
        assert!(WeightMode::parse("two").is_err());
        assert_eq!(WeightMode::SqrtAlphaBar.weight(0.25), 0.5);
        assert_eq!(WeightMode::OneMinusAlphaBar.weight(0.25), 0.75);
    }

    #[test]
    fn sds_vanishes_when_render_is_the_target() {
        let field = small_field(6);
        let pose = CameraPose::new(20.0, 70.0, 2.2, 28.0).unwrap();
        let opts = small_options();
        let s = NoiseSchedule::default();
        let target = {
            let bundle = RayBundle::full(&pose, &opts, &mut rng_from_seed(7)).unwrap();
            let c = render_bundle(&StagedField::new(&field, 2).unwrap(), &bundle, opts.background);
            composites_to_image(&bundle, &c, opts.background)
        };
        let d = ToyTargetDenoiser::new(target, s.clone()).unwrap();
        let req = SdsRequest {
            stage: 2,
            pose: &pose,
            options: &opts,
            schedule: &s,
            t: 600,
            weight_mode: WeightMode::SqrtAlphaBar,
            guidance_scale: None,
        };
        let out = sds_step(&field, &req, &d, &mut rng_from_seed(7)).unwrap();
        assert!(out.grads.norm() < 1e-12, "{}", out.grads.norm());
        assert!(out.residual_norm < 1e-12);
    }

    #[test]
    fn sds_gradient_matches_the_detached_surrogate() {
        let mut field = small_field(8);
        field.freeze_below(3);
        let pose = CameraPose::new(-40.0, 80.0, 2.0, 30.0).unwrap();
        let opts = small_options();
        let s = NoiseSchedule::default();
        let mut trng = rng_from_seed(9);
        let d = ToyTargetDenoiser::new(random_image(5, 4, &mut trng), s.clone()).unwrap();
        let stage = 3;
        let req = SdsRequest {
            stage,
            pose: &pose,
            options: &opts,
            schedule: &s,
            t: 150,
            weight_mode: WeightMode::SqrtAlphaBar,
            guidance_scale: None,
        };
        let out = sds_step(&field, &req, &d, &mut rng_from_seed(10)).unwrap();
        let w = s.alpha_bar(150).unwrap().sqrt();
        let seed: Vec<f64> = out.residual.data().iter().map(|r| w * r).collect();
        // Same bundle as inside sds_step: the rng is consumed by ray sampling first.
        let bundle = RayBundle::full(&pose, &opts, &mut rng_from_seed(10)).unwrap();
        let surrogate = |f: &MultiScaleField| {
            let c = render_bundle(&StagedField::new(f, stage).unwrap(), &bundle, opts.background);
            let img = composites_to_image(&bundle, &c, opts.background);
            img.data().iter().zip(&seed).map(|(a, b)| a * b).sum::<f64>()
        };
        let ids = out.grads.ids();
        let mut rng = rng_from_seed(11);
        let mut checked = 0;
        for _ in 0..10_000 {
            if checked == 20 {
                break;
            }
            let id = ids[rng.random_range(0..ids.len())];
            let idx = rng.random_range(0..field.tensor(id).unwrap().len());
            let g = out.grads.get(id).unwrap()[idx];
            if g.abs() < 1e-7 {
                continue;
            }
            let x = field.tensor(id).unwrap()[idx];
            let h = 1e-6;
            let mut plus = field.clone();
            plus.tensor_mut(id).unwrap()[idx] = x + h;
            let mut minus = field.clone();
            minus.tensor_mut(id).unwrap()[idx] = x - h;
            let fd = (surrogate(&plus) - surrogate(&minus)) / (2.0 * h);
            let rel = (fd - g).abs() / fd.abs().max(g.abs()).max(1e-3);
            assert!(rel <= 1e-4, "{id}[{idx}]: {g} vs {fd}");
            checked += 1;
        }
        assert_eq!(checked, 20);
        // Frozen lower levels get no gradient buffers at all.
        assert!(ids.iter().all(|id| id.level().is_none_or(|l| l == 3)));
    }

    #[test]
    fn photometric_loss_and_gradient() {
        let field = small_field(12);
        let pose = CameraPose::new(60.0, 60.0, 2.4, 25.0).unwrap();
        let opts = small_options();
        let bundle = RayBundle::full(&pose, &opts, &mut rng_from_seed(13)).unwrap();
        let stage = 4;
        let c = render_bundle(&StagedField::new(&field, stage).unwrap(), &bundle, opts.background);
        let same = composites_to_image(&bundle, &c, opts.background);
        let zero = photometric_step(&field, stage, &bundle, &same, opts.background).unwrap();
        assert_eq!(zero.loss, 0.0);
        assert!(zero.grads.is_zero());

        let target = random_image(5, 4, &mut rng_from_seed(14));
        let out = photometric_step(&field, stage, &bundle, &target, opts.background).unwrap();
        assert!(out.loss > 0.0);
        let loss = |f: &MultiScaleField| photometric_step(f, stage, &bundle, &target, opts.background).unwrap().loss;
        let mut rng = rng_from_seed(15);
        let ids = out.grads.ids();
        let mut checked = 0;
        for _ in 0..10_000 {
            if checked == 20 {
                break;
            }
            let id = ids[rng.random_range(0..ids.len())];
            let idx = rng.random_range(0..field.tensor(id).unwrap().len());
            let g = out.grads.get(id).unwrap()[idx];
            if g.abs() < 1e-8 {
                continue;
            }
            let x = field.tensor(id).unwrap()[idx];
            let h = 1e-6;
            let mut plus = field.clone();
            plus.tensor_mut(id).unwrap()[idx] = x + h;
            let mut minus = field.clone();
            minus.tensor_mut(id).unwrap()[idx] = x - h;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let rel = (fd - g).abs() / fd.abs().max(g.abs()).max(1e-4);
            assert!(rel <= 1e-4, "{id}[{idx}]: {g} vs {fd}");
            checked += 1;
        }
        assert_eq!(checked, 20);
        assert!(photometric_step(&field, stage, &bundle, &Image::new(3, 3), opts.background).is_err());
    }

    proptest! {
        #[test]
        fn noising_is_linear(a in 0.0f64..1.0, b in 0.0f64..1.0, e1 in -3.0f64..3.0, e2 in -3.0f64..3.0, t in 1usize..=1000) {
            let s = NoiseSchedule::default();
            let i1 = Image::filled(1, 1, [a; 3]);
            let i2 = Image::filled(1, 1, [b; 3]);
            let n1 = Image::filled(1, 1, [e1; 3]);
            let n2 = Image::filled(1, 1, [e2; 3]);
            let sum = noise_image(&Image::filled(1, 1, [a + b; 3]), t, &Image::filled(1, 1, [e1 + e2; 3]), &s).unwrap();
            let parts = noise_image(&i1, t, &n1, &s).unwrap().data()[0] + noise_image(&i2, t, &n2, &s).unwrap().data()[0];
            prop_assert!((sum.data()[0] - parts).abs() < 1e-12);
        }

        #[test]
        fn photometric_loss_is_nonnegative(seed in 0u64..1000) {
            let field = small_field(seed);
            let pose = CameraPose::new(0.0, 90.0, 2.5, 20.0).unwrap();
            let opts = RenderOptions { width: 2, height: 2, samples_per_ray: 4, ..small_options() };
            let bundle = RayBundle::full(&pose, &opts, &mut rng_from_seed(seed)).unwrap();
            let target = random_image(2, 2, &mut rng_from_seed(seed + 1));
            let out = photometric_step(&field, 1, &bundle, &target, opts.background).unwrap();
            prop_assert!(out.loss >= 0.0);
        }
    }
}
