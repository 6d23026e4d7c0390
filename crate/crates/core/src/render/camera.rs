//! Camera poses on a sphere around the origin and pinhole ray generation.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::math::{self, Rng, Vec3};

pub const AZIMUTH_RANGE: (f64, f64) = (-180.0, 180.0);
pub const POLAR_RANGE: (f64, f64) = (45.0, 105.0);
pub const FOVY_RANGE: (f64, f64) = (10.0, 30.0);

/// Radius of the sphere bounding the `[-1, 1]³` domain.
pub const DOMAIN_BOUNDING_RADIUS: f64 = 1.732_050_807_568_877_2;

/// Camera on a sphere of radius `radius` looking at the origin, with `+z` up.
/// The polar angle is measured from `+z`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraPose {
    azimuth: f64,
    polar: f64,
    radius: f64,
    fovy: f64,
}

fn in_range(v: f64, (lo, hi): (f64, f64)) -> bool {
    (lo..=hi).contains(&v)
}

impl CameraPose {
    /// Angles in degrees; each must lie in its closed sampling range.
    pub fn new(azimuth: f64, polar: f64, radius: f64, fovy: f64) -> Result<Self> {
        if !in_range(azimuth, AZIMUTH_RANGE) {
            return Err(Error::config(format!("azimuth {azimuth} outside [-180, 180]")));
        }
        if !in_range(polar, POLAR_RANGE) {
            return Err(Error::config(format!("polar angle {polar} outside [45, 105]")));
        }
        if !in_range(fovy, FOVY_RANGE) {
            return Err(Error::config(format!("fovy {fovy} outside [10, 30]")));
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::config(format!("radius {radius} must be positive")));
        }
        Ok(Self {
            azimuth,
            polar,
            radius,
            fovy,
        })
    }

    pub fn azimuth(&self) -> f64 {
        self.azimuth
    }

    pub fn polar(&self) -> f64 {
        self.polar
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn fovy(&self) -> f64 {
        self.fovy
    }

    pub fn position(&self) -> Vec3 {
        let (az, po) = (self.azimuth.to_radians(), self.polar.to_radians());
        [
            self.radius * po.sin() * az.cos(),
            self.radius * po.sin() * az.sin(),
            self.radius * po.cos(),
        ]
    }

    /// Orthonormal `(right, up, forward)` camera basis.
    pub fn basis(&self) -> (Vec3, Vec3, Vec3) {
        let forward = math::normalize(math::scale(self.position(), -1.0));
        let mut right = math::cross(forward, [0.0, 0.0, 1.0]);
        if math::norm(right) < 1e-12 {
            right = math::cross(forward, [0.0, 1.0, 0.0]);
        }
        let right = math::normalize(right);
        let up = math::cross(right, forward);
        (right, up, forward)
    }

    /// Ray through continuous image coordinates `(x, y)`, with `(0, 0)` the
    /// top-left image corner and pixel `(i, j)` centred at `(j + ½, i + ½)`.
    pub fn ray_through(&self, width: usize, height: usize, x: f64, y: f64) -> Ray {
        let (right, up, forward) = self.basis();
        let tan_half = (self.fovy.to_radians() * 0.5).tan();
        let aspect = width as f64 / height as f64;
        let sx = (2.0 * x / width as f64 - 1.0) * tan_half * aspect;
        let sy = (1.0 - 2.0 * y / height as f64) * tan_half;
        let dir = math::normalize(math::add(forward, math::add(math::scale(right, sx), math::scale(up, sy))));
        Ray::bracketed(self.position(), dir)
    }
}

/// Draws a pose with azimuth, polar angle and fovy uniform over their ranges
/// and radius uniform over `radius_interval`.
pub fn sample_camera(rng: &mut Rng, radius_interval: (f64, f64)) -> Result<CameraPose> {
    let (lo, hi) = radius_interval;
    if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
        return Err(Error::config(format!("invalid radius interval [{lo}, {hi}]")));
    }
    let azimuth = rng.random_range(AZIMUTH_RANGE.0..=AZIMUTH_RANGE.1);
    let polar = rng.random_range(POLAR_RANGE.0..=POLAR_RANGE.1);
    let fovy = rng.random_range(FOVY_RANGE.0..=FOVY_RANGE.1);
    let radius = if lo == hi { lo } else { rng.random_range(lo..=hi) };
    CameraPose::new(azimuth, polar, radius, fovy)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
    pub t_near: f64,
    pub t_far: f64,
}

impl Ray {
    /// Ray clipped to the domain's bounding sphere. Rays that miss get a
    /// short segment at their closest approach, which lies outside the
    /// domain and so renders as empty space.
    pub fn bracketed(origin: Vec3, direction: Vec3) -> Self {
        let b = math::dot(origin, direction);
        let c = math::dot(origin, origin) - DOMAIN_BOUNDING_RADIUS * DOMAIN_BOUNDING_RADIUS;
        let disc = b * b - c;
        let (t_near, t_far) = if disc > 0.0 {
            let root = disc.sqrt();
            let t0 = (-b - root).max(0.0);
            let t1 = -b + root;
            if t1 > t0 {
                (t0, t1)
            } else {
                (t0, t0 + 1e-6)
            }
        } else {
            let t = (-b).max(0.0);
            (t, t + 1e-6)
        };
        Self {
            origin,
            direction,
            t_near,
            t_far,
        }
    }

    #[inline]
    pub fn at(&self, t: f64) -> Vec3 {
        math::add(self.origin, math::scale(self.direction, t))
    }
}

/// One ray per pixel, row-major from the top-left pixel.
pub fn generate_rays(pose: &CameraPose, width: usize, height: usize) -> Vec<Ray> {
    let mut rays = Vec::with_capacity(width * height);
    for i in 0..height {
        for j in 0..width {
            rays.push(pose.ray_through(width, height, j as f64 + 0.5, i as f64 + 0.5));
        }
    }
    rays
}

/// Sample distances along a ray and the segment length owned by each.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RaySamples {
    pub t: Vec<f64>,
    pub delta: Vec<f64>,
}

/// Places `n` samples in `[t_near, t_far]`: one uniform draw per equal bin
/// when `stratified` (consuming `n` draws from `rng`), bin midpoints otherwise.
/// Each `delta` runs to the next sample; the last one runs to `t_far`.
pub fn sample_along_ray(ray: &Ray, n: usize, rng: &mut Rng, stratified: bool) -> RaySamples {
    let mut out = RaySamples::default();
    sample_along_ray_into(ray, n, rng, stratified, &mut out.t, &mut out.delta);
    out
}

pub(crate) fn sample_along_ray_into(
    ray: &Ray,
    n: usize,
    rng: &mut Rng,
    stratified: bool,
    t: &mut Vec<f64>,
    delta: &mut Vec<f64>,
) {
    let n = n.max(1);
    let bin = (ray.t_far - ray.t_near) / n as f64;
    let start = t.len();
    for k in 0..n {
        let offset = if stratified { rng.random::<f64>() } else { 0.5 };
        t.push(ray.t_near + (k as f64 + offset) * bin);
    }
    for k in 0..n {
        let next = if k + 1 < n { t[start + k + 1] } else { ray.t_far };
        delta.push(next - t[start + k]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::rng_from_seed;

    #[test]
    fn sampled_poses_stay_in_declared_ranges() {
        let mut rng = rng_from_seed(0);
        let mut mins = [f64::INFINITY; 4];
        let mut maxs = [f64::NEG_INFINITY; 4];
        for _ in 0..10_000 {
            let p = sample_camera(&mut rng, (3.0, 3.5)).unwrap();
            for (k, v) in [p.azimuth(), p.polar(), p.fovy(), p.radius()].into_iter().enumerate() {
                mins[k] = mins[k].min(v);
                maxs[k] = maxs[k].max(v);
            }
        }
        assert!(mins[0] >= -180.0 && maxs[0] <= 180.0);
        assert!(mins[1] >= 45.0 && maxs[1] <= 105.0);
        assert!(mins[2] >= 10.0 && maxs[2] <= 30.0);
        assert!(mins[3] >= 3.0 && maxs[3] <= 3.5);
        // The draws actually cover the ranges.
        assert!(mins[0] < -170.0 && maxs[0] > 170.0);
        assert!(mins[1] < 47.0 && maxs[1] > 103.0);
    }

    #[test]
    fn sampling_is_deterministic_for_a_seed() {
        let a = sample_camera(&mut rng_from_seed(42), (1.8, 2.1)).unwrap();
        let b = sample_camera(&mut rng_from_seed(42), (1.8, 2.1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_interval_is_rejected() {
        let mut rng = rng_from_seed(0);
        assert!(sample_camera(&mut rng, (0.0, 1.0)).is_err());
        assert!(sample_camera(&mut rng, (2.0, 1.0)).is_err());
        assert!(CameraPose::new(0.0, 30.0, 3.0, 20.0).is_err());
        assert!(CameraPose::new(0.0, 90.0, 3.0, 40.0).is_err());
    }

    #[test]
    fn central_ray_passes_through_origin() {
        let pose = CameraPose::new(37.0, 61.0, 3.0, 20.0).unwrap();
        let rays = generate_rays(&pose, 9, 7);
        let central = rays[3 * 9 + 4];
        // Distance from origin to the ray line.
        let o = central.origin;
        let along = math::dot(o, central.direction);
        let closest = math::sub(o, math::scale(central.direction, along));
        assert!(math::norm(closest) < 1e-9);
        let sqrt3 = 3f64.sqrt();
        assert!((central.t_near - (3.0 - sqrt3)).abs() < 1e-9);
        assert!((central.t_far - (3.0 + sqrt3)).abs() < 1e-9);
        for r in &rays {
            assert!((math::norm(r.direction) - 1.0).abs() < 1e-9);
            assert!(r.t_near < r.t_far);
        }
    }

    #[test]
    fn midpoint_samples_on_unit_segment() {
        let ray = Ray {
            origin: [0.0; 3],
            direction: [1.0, 0.0, 0.0],
            t_near: 0.0,
            t_far: 1.0,
        };
        let s = sample_along_ray(&ray, 4, &mut rng_from_seed(0), false);
        assert_eq!(s.t, vec![0.125, 0.375, 0.625, 0.875]);
        assert_eq!(s.delta, vec![0.25, 0.25, 0.25, 0.125]);
    }

    #[test]
    fn stratified_samples_telescope_and_repeat() {
        let ray = Ray {
            origin: [0.0; 3],
            direction: [0.0, 1.0, 0.0],
            t_near: 1.3,
            t_far: 4.1,
        };
        let a = sample_along_ray(&ray, 17, &mut rng_from_seed(9), true);
        let b = sample_along_ray(&ray, 17, &mut rng_from_seed(9), true);
        assert_eq!(a, b);
        let total: f64 = a.delta.iter().sum();
        assert!((total - (ray.t_far - a.t[0])).abs() < 1e-9);
        assert!(a.t.windows(2).all(|w| w[0] < w[1]));
        assert!(a.t.iter().all(|&t| t >= ray.t_near && t <= ray.t_far));
    }
}
