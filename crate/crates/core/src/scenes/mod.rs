//! Analytic reference scenes and the metrics that compare a field to them.

mod mesh;
mod tables;

use std::f64::consts::PI;
use std::fs;
use std::io::Write as _;
use std::path::Path;

pub use mesh::{marching_cubes, Mesh};

use crate::error::{Error, Result};
use crate::field::FieldSample;
use crate::image::Image;
use crate::math::{self, rng_from_seed, Vec3};
use crate::render::{render_image, CameraPose, RadianceField, RenderOptions, RenderedImage};

/// Default interior sharpness `κ`.
pub const DEFAULT_KAPPA: f64 = 30.0;

/// Signed-distance shapes. Distances are exact for spheres and tori and a
/// lower bound for unions.
#[derive(Clone, Debug, PartialEq)]
pub enum Shape {
    Sphere { center: Vec3, radius: f64 },
    /// Torus around the `z` axis.
    Torus { major: f64, minor: f64 },
    Union(Vec<Shape>),
}

impl Shape {
    pub fn sdf(&self, p: Vec3) -> f64 {
        match self {
            Shape::Sphere { center, radius } => math::norm(math::sub(p, *center)) - radius,
            Shape::Torus { major, minor } => {
                let q = (p[0] * p[0] + p[1] * p[1]).sqrt() - major;
                (q * q + p[2] * p[2]).sqrt() - minor
            }
            Shape::Union(parts) => parts.iter().map(|s| s.sdf(p)).fold(f64::INFINITY, f64::min),
        }
    }
}

/// Surface colour as a function of position.
#[derive(Clone, Debug, PartialEq)]
pub enum Albedo {
    Constant([f64; 3]),
    /// `0.5 + 0.5 · p / |p|`.
    Direction,
    /// Alternating colours on an equal-angle grid of `cells × cells` patches
    /// in azimuth and polar angle.
    Checker { cells: usize, even: [f64; 3], odd: [f64; 3] },
    /// Colour of the nearest part of a union, part by part.
    PerPart(Vec<[f64; 3]>),
}

/// Azimuth and polar cell of `p` on a `cells × cells` angular grid.
pub fn checker_cell(p: Vec3, cells: usize) -> (usize, usize) {
    let r = math::norm(p);
    let azimuth = p[1].atan2(p[0]);
    let polar = if r > 0.0 { (p[2] / r).clamp(-1.0, 1.0).acos() } else { 0.0 };
    let cell = |x: f64| ((x * cells as f64).floor() as usize).min(cells - 1);
    (cell((azimuth + PI) / (2.0 * PI)), cell(polar / PI))
}

/// Closed-form density scene: `σ = κ · sigmoid(-κ · sdf)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AnalyticScene {
    pub name: String,
    /// `None` for the empty scene.
    pub shape: Option<Shape>,
    pub albedo: Albedo,
    pub kappa: f64,
}

pub const SCENE_NAMES: [&str; 5] = ["sphere", "torus", "checker_sphere", "two_spheres", "empty"];

impl AnalyticScene {
    pub fn sphere() -> Self {
        Self {
            name: "sphere".into(),
            shape: Some(Shape::Sphere {
                center: [0.0; 3],
                radius: 0.5,
            }),
            albedo: Albedo::Direction,
            kappa: DEFAULT_KAPPA,
        }
    }

    pub fn torus() -> Self {
        Self {
            name: "torus".into(),
            shape: Some(Shape::Torus { major: 0.5, minor: 0.2 }),
            albedo: Albedo::Direction,
            kappa: DEFAULT_KAPPA,
        }
    }

    pub fn checker_sphere() -> Self {
        Self {
            name: "checker_sphere".into(),
            shape: Some(Shape::Sphere {
                center: [0.0; 3],
                radius: 0.5,
            }),
            albedo: Albedo::Checker {
                cells: 8,
                even: [0.9, 0.85, 0.2],
                odd: [0.15, 0.25, 0.7],
            },
            kappa: DEFAULT_KAPPA,
        }
    }

    pub fn two_spheres() -> Self {
        Self {
            name: "two_spheres".into(),
            shape: Some(Shape::Union(vec![
                Shape::Sphere {
                    center: [-0.35, 0.0, 0.0],
                    radius: 0.35,
                },
                Shape::Sphere {
                    center: [0.4, 0.1, 0.1],
                    radius: 0.25,
                },
            ])),
            albedo: Albedo::PerPart(vec![[0.85, 0.3, 0.25], [0.25, 0.75, 0.35]]),
            kappa: DEFAULT_KAPPA,
        }
    }

    pub fn empty() -> Self {
        Self {
            name: "empty".into(),
            shape: None,
            albedo: Albedo::Constant([0.0; 3]),
            kappa: DEFAULT_KAPPA,
        }
    }

    /// Sphere of radius 0.5 at the origin with one colour.
    pub fn constant_sphere(rgb: [f64; 3]) -> Self {
        Self {
            name: "constant_sphere".into(),
            albedo: Albedo::Constant(rgb),
            ..Self::sphere()
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "sphere" => Ok(Self::sphere()),
            "torus" => Ok(Self::torus()),
            "checker_sphere" => Ok(Self::checker_sphere()),
            "two_spheres" => Ok(Self::two_spheres()),
            "empty" => Ok(Self::empty()),
            other => Err(Error::config(format!(
                "unknown scene `{other}` (expected one of {})",
                SCENE_NAMES.join(", ")
            ))),
        }
    }

    pub fn with_kappa(mut self, kappa: f64) -> Self {
        self.kappa = kappa;
        self
    }

    /// Signed distance; `+∞` for the empty scene.
    pub fn sdf(&self, p: Vec3) -> f64 {
        self.shape.as_ref().map_or(f64::INFINITY, |s| s.sdf(p))
    }

    pub fn albedo(&self, p: Vec3) -> [f64; 3] {
        match &self.albedo {
            Albedo::Constant(c) => *c,
            Albedo::Direction => {
                let n = math::normalize(p);
                n.map(|v| 0.5 + 0.5 * v)
            }
            Albedo::Checker { cells, even, odd } => {
                let (i, j) = checker_cell(p, *cells);
                if (i + j) % 2 == 0 {
                    *even
                } else {
                    *odd
                }
            }
            Albedo::PerPart(colors) => match &self.shape {
                Some(Shape::Union(parts)) => {
                    let nearest = parts
                        .iter()
                        .enumerate()
                        .min_by(|a, b| a.1.sdf(p).total_cmp(&b.1.sdf(p)))
                        .map_or(0, |(k, _)| k);
                    colors[nearest.min(colors.len() - 1)]
                }
                _ => colors[0],
            },
        }
    }

    /// Density and colour at `p`; empty outside `[-1, 1]³`.
    pub fn density(&self, p: Vec3) -> FieldSample {
        if p.iter().any(|v| v.abs() > 1.0) || self.shape.is_none() {
            return FieldSample::EMPTY;
        }
        FieldSample {
            sigma: self.kappa * math::sigmoid(-self.kappa * self.sdf(p)),
            rgb: self.albedo(p),
        }
    }
}

impl RadianceField for AnalyticScene {
    fn query(&self, p: Vec3) -> FieldSample {
        self.density(p)
    }
}

/// Renders `scene` from each pose with the shared volume renderer. Pose `k`
/// uses a generator seeded with `seed + k`.
pub fn make_targets(
    scene: &AnalyticScene,
    poses: &[CameraPose],
    options: &RenderOptions,
    seed: u64,
) -> Result<Vec<RenderedImage>> {
    poses
        .iter()
        .enumerate()
        .map(|(k, pose)| render_image(scene, pose, options, &mut rng_from_seed(seed.wrapping_add(k as u64))))
        .collect()
}

/// Writes `target_NNN.png` files and a `poses.csv` manifest into `dir`.
pub fn write_targets(dir: impl AsRef<Path>, poses: &[CameraPose], images: &[RenderedImage]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut manifest = fs::File::create(dir.join("poses.csv"))?;
    writeln!(manifest, "index,file,azimuth,polar,radius,fovy")?;
    for (k, (pose, img)) in poses.iter().zip(images).enumerate() {
        let file = format!("target_{k:03}.png");
        img.save_png(dir.join(&file), false)?;
        writeln!(
            manifest,
            "{k},{file},{},{},{},{}",
            pose.azimuth(),
            pose.polar(),
            pose.radius(),
            pose.fovy()
        )?;
    }
    Ok(())
}

/// `10 · log10(1 / MSE)`; identical images give `+∞`.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let mse = a.mse(b)?;
    Ok(if mse == 0.0 { f64::INFINITY } else { -10.0 * mse.log10() })
}

/// Centres of an `n`-cell-per-axis lattice over `[-1, 1]`.
fn cell_centres(n: usize) -> impl Iterator<Item = f64> + Clone {
    (0..n).map(move |i| -1.0 + (i as f64 + 0.5) * 2.0 / n as f64)
}

/// Intersection over union of `{σ > τ}` for `field` and the interior of
/// `scene` on the cell centres of an `n³` lattice. An empty union gives 1.
pub fn occupancy_iou(field: &impl RadianceField, scene: &AnalyticScene, n: usize, tau: f64) -> Result<f64> {
    if n < 8 {
        return Err(Error::config(format!("occupancy lattice needs n ≥ 8, got {n}")));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    let axis = cell_centres(n);
    for x in axis.clone() {
        for y in axis.clone() {
            for z in axis.clone() {
                let p = [x, y, z];
                let a = field.query(p).sigma > tau;
                let b = scene.sdf(p) < 0.0;
                inter += (a && b) as usize;
                union += (a || b) as usize;
            }
        }
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}
