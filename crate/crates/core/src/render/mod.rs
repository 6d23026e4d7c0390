//! Cameras, rays and differentiable volume rendering.
//!
//! Rendering is split into a [`RayBundle`] (rays plus their sample distances)
//! and the passes that run over it. Keeping the samples in the bundle lets the
//! reverse pass revisit exactly the points the forward pass used without
//! storing per-sample activations for a whole image.

mod camera;
mod volume;

use std::cell::RefCell;
use std::path::Path;

pub use camera::*;
pub use volume::*;

use crate::error::{Error, Result};
use crate::field::{EvalScratch, FieldGrads, FieldSample, FieldTape, MultiScaleField, SampleAdjoint};
use crate::image::Image;
use crate::math::{Rng, Vec3};

/// Anything that can be queried for density and colour.
pub trait RadianceField {
    fn query(&self, p: Vec3) -> FieldSample;
}

impl<F: Fn(Vec3) -> FieldSample> RadianceField for F {
    fn query(&self, p: Vec3) -> FieldSample {
        self(p)
    }
}

/// A [`MultiScaleField`] evaluated at a fixed stage.
pub struct StagedField<'a> {
    field: &'a MultiScaleField,
    stage: usize,
    scratch: RefCell<EvalScratch>,
}

impl<'a> StagedField<'a> {
    pub fn new(field: &'a MultiScaleField, stage: usize) -> Result<Self> {
        if !(1..=crate::field::LEVELS).contains(&stage) {
            return Err(Error::config(format!("stage {stage} outside 1..=4")));
        }
        Ok(Self {
            field,
            stage,
            scratch: RefCell::new(EvalScratch::default()),
        })
    }
}

impl RadianceField for StagedField<'_> {
    fn query(&self, p: Vec3) -> FieldSample {
        self.field.evaluate_with(p, self.stage, &mut self.scratch.borrow_mut())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderOptions {
    pub width: usize,
    pub height: usize,
    pub samples_per_ray: usize,
    pub stratified: bool,
    pub background: [f64; 3],
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            samples_per_ray: 64,
            stratified: true,
            background: [1.0; 3],
        }
    }
}

impl RenderOptions {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.samples_per_ray == 0 {
            return Err(Error::config(format!(
                "render size {}x{} with {} samples per ray",
                self.width, self.height, self.samples_per_ray
            )));
        }
        if self.background.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::config("background colour outside [0, 1]"));
        }
        Ok(())
    }
}

/// Rays for a set of pixels together with their sample distances.
#[derive(Clone, Debug)]
pub struct RayBundle {
    pub width: usize,
    pub height: usize,
    /// Row-major pixel index of each ray.
    pub pixels: Vec<usize>,
    pub rays: Vec<Ray>,
    pub samples_per_ray: usize,
    /// `samples_per_ray` entries per ray.
    pub t: Vec<f64>,
    pub delta: Vec<f64>,
}

impl RayBundle {
    /// Every pixel of the image, row-major.
    pub fn full(pose: &CameraPose, options: &RenderOptions, rng: &mut Rng) -> Result<Self> {
        options.validate()?;
        let pixels: Vec<usize> = (0..options.width * options.height).collect();
        Self::for_pixels(pose, options, pixels, rng)
    }

    /// The listed pixels only, in the given order.
    pub fn for_pixels(pose: &CameraPose, options: &RenderOptions, pixels: Vec<usize>, rng: &mut Rng) -> Result<Self> {
        options.validate()?;
        let (w, h) = (options.width, options.height);
        if let Some(&bad) = pixels.iter().find(|&&p| p >= w * h) {
            return Err(Error::config(format!("pixel {bad} outside a {w}x{h} image")));
        }
        let n = options.samples_per_ray;
        let mut t = Vec::with_capacity(pixels.len() * n);
        let mut delta = Vec::with_capacity(pixels.len() * n);
        let rays: Vec<Ray> = pixels
            .iter()
            .map(|&p| {
                let ray = pose.ray_through(w, h, (p % w) as f64 + 0.5, (p / w) as f64 + 0.5);
                sample_along_ray_into(&ray, n, rng, options.stratified, &mut t, &mut delta);
                ray
            })
            .collect();
        Ok(Self {
            width: w,
            height: h,
            pixels,
            rays,
            samples_per_ray: n,
            t,
            delta,
        })
    }

    pub fn len(&self) -> usize {
        self.rays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rays.is_empty()
    }

    fn ray_slices(&self, r: usize) -> (&[f64], &[f64]) {
        let n = self.samples_per_ray;
        (&self.t[r * n..(r + 1) * n], &self.delta[r * n..(r + 1) * n])
    }
}

/// Composites every ray of `bundle`, in bundle order.
pub fn render_bundle(field: &impl RadianceField, bundle: &RayBundle, background: [f64; 3]) -> Vec<Composite> {
    let mut samples = Vec::with_capacity(bundle.samples_per_ray);
    (0..bundle.len())
        .map(|r| {
            let (t, delta) = bundle.ray_slices(r);
            let ray = &bundle.rays[r];
            samples.clear();
            samples.extend(t.iter().map(|&ti| field.query(ray.at(ti))));
            composite_unchecked(&samples, t, delta, background)
        })
        .collect()
}

/// Image with opacity and depth channels.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedImage {
    pub rgb: Image,
    pub opacity: Vec<f64>,
    pub depth: Vec<f64>,
}

impl RenderedImage {
    pub fn width(&self) -> usize {
        self.rgb.width()
    }

    pub fn height(&self) -> usize {
        self.rgb.height()
    }

    /// Assembles a full-image bundle's composites into an image.
    pub fn from_composites(bundle: &RayBundle, composites: &[Composite], background: [f64; 3]) -> Result<Self> {
        if composites.len() != bundle.len() {
            return Err(Error::shape(bundle.len(), composites.len()));
        }
        let (w, h) = (bundle.width, bundle.height);
        let mut rgb = Image::filled(w, h, background);
        let mut opacity = vec![0.0; w * h];
        let mut depth = vec![0.0; w * h];
        for (&p, c) in bundle.pixels.iter().zip(composites) {
            rgb.set_pixel(p, c.rgb.map(|v| v.clamp(0.0, 1.0)));
            opacity[p] = c.opacity.clamp(0.0, 1.0);
            depth[p] = c.depth.max(0.0);
        }
        Ok(Self { rgb, opacity, depth })
    }

    pub fn save_png(&self, path: impl AsRef<Path>, with_alpha: bool) -> Result<()> {
        self.rgb.save_png(path, with_alpha.then_some(self.opacity.as_slice()))
    }
}

/// Renders a full image of `field` from `pose`.
pub fn render_image(
    field: &impl RadianceField,
    pose: &CameraPose,
    options: &RenderOptions,
    rng: &mut Rng,
) -> Result<RenderedImage> {
    let bundle = RayBundle::full(pose, options, rng)?;
    let composites = render_bundle(field, &bundle, options.background);
    RenderedImage::from_composites(&bundle, &composites, options.background)
}

/// Renders a full image of a multi-scale field at `stage`.
pub fn render_field_image(
    field: &MultiScaleField,
    stage: usize,
    pose: &CameraPose,
    options: &RenderOptions,
    rng: &mut Rng,
) -> Result<RenderedImage> {
    render_image(&StagedField::new(field, stage)?, pose, options, rng)
}

/// Reverse pass over a bundle rendered from `field` at `grads.stage()`.
///
/// Each ray is re-evaluated with recording, so the result matches the
/// forward pass over the same bundle exactly. `adjoints` holds one entry per
/// ray, in bundle order.
pub fn backward_bundle(
    field: &MultiScaleField,
    bundle: &RayBundle,
    background: [f64; 3],
    adjoints: &[PixelAdjoint],
    grads: &mut FieldGrads,
) -> Result<()> {
    if adjoints.len() != bundle.len() {
        return Err(Error::shape(bundle.len(), adjoints.len()));
    }
    let mut tape = FieldTape::new(field, grads.stage());
    let mut samples: Vec<FieldSample> = Vec::with_capacity(bundle.samples_per_ray);
    let mut sample_adj: Vec<SampleAdjoint> = Vec::with_capacity(bundle.samples_per_ray);
    let mut scratch = Vec::new();
    let mut d_enc = vec![0.0; field.decoder().input_dim()];
    let mut d_h = vec![0.0; field.channels()];
    for (r, adj) in adjoints.iter().enumerate() {
        if adj.rgb == [0.0; 3] && adj.opacity == 0.0 {
            continue;
        }
        let (t, delta) = bundle.ray_slices(r);
        let ray = &bundle.rays[r];
        tape.clear();
        samples.clear();
        samples.extend(t.iter().map(|&ti| field.forward_recorded(ray.at(ti), &mut tape)));
        volume_render_backward(&samples, delta, background, adj, &mut sample_adj);
        for (i, a) in sample_adj.iter().enumerate() {
            field.backward_entry(&tape, i, a, grads, &mut scratch, &mut d_enc, &mut d_h);
        }
    }
    Ok(())
}
