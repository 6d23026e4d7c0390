//! Axis-aligned feature planes and feature vectors with clamped linear
//! interpolation.
//!
//! Texel `i` of an `n`-texel axis has its centre at `(i + 0.5) / n` in unit
//! coordinates, i.e. at `-1 + (2i + 1) / n` in the `[-1, 1]` domain. Queries
//! outside the outermost centres clamp to the boundary texel.

use crate::error::{Error, Result};
use crate::math::Vec3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PlaneOrientation {
    Xy,
    Xz,
    Yz,
}

impl PlaneOrientation {
    pub const ALL: [PlaneOrientation; 3] = [Self::Xy, Self::Xz, Self::Yz];

    pub fn index(self) -> usize {
        match self {
            Self::Xy => 0,
            Self::Xz => 1,
            Self::Yz => 2,
        }
    }

    /// The `(u, v)` coordinates of `p` on this plane; `u` indexes columns.
    #[inline]
    pub fn project(self, p: Vec3) -> (f64, f64) {
        match self {
            Self::Xy => (p[0], p[1]),
            Self::Xz => (p[0], p[2]),
            Self::Yz => (p[1], p[2]),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Xy => "xy",
            Self::Xz => "xz",
            Self::Yz => "yz",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|o| o.as_str() == s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Self::X, Self::Y, Self::Z];

    pub fn index(self) -> usize {
        match self {
            Self::X => 0,
            Self::Y => 1,
            Self::Z => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::X => "x",
            Self::Y => "y",
            Self::Z => "z",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.as_str() == s)
    }
}

/// Two-texel linear stencil along one axis.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub(crate) struct Stencil {
    pub lo: usize,
    pub hi: usize,
    pub w_hi: f64,
}

#[inline]
pub(crate) fn stencil(coord: f64, n: usize) -> Stencil {
    let max = (n - 1) as f64;
    let x = ((coord.clamp(-1.0, 1.0) + 1.0) * 0.5 * n as f64 - 0.5).clamp(0.0, max);
    let lo = (x.floor() as usize).min(n - 1);
    let hi = (lo + 1).min(n - 1);
    Stencil {
        lo,
        hi,
        w_hi: x - lo as f64,
    }
}

/// Bilinear interpolation taps: flat offsets of the first channel of each of
/// the four neighbouring texels, with their weights.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PlaneTap {
    pub offsets: [usize; 4],
    pub weights: [f64; 4],
}

/// Linear interpolation taps along a feature vector.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AxisTap {
    pub offsets: [usize; 2],
    pub weights: [f64; 2],
}

#[inline]
fn gather<const K: usize>(data: &[f64], offsets: &[usize; K], weights: &[f64; K], out: &mut [f64]) {
    let c = out.len();
    for k in 0..K {
        let w = weights[k];
        if w == 0.0 {
            continue;
        }
        let texel = &data[offsets[k]..offsets[k] + c];
        for (o, t) in out.iter_mut().zip(texel) {
            *o += w * t;
        }
    }
}

#[inline]
fn scatter<const K: usize>(grad: &mut [f64], offsets: &[usize; K], weights: &[f64; K], d: &[f64]) {
    let c = d.len();
    for k in 0..K {
        let w = weights[k];
        if w == 0.0 {
            continue;
        }
        let texel = &mut grad[offsets[k]..offsets[k] + c];
        for (g, dv) in texel.iter_mut().zip(d) {
            *g += w * dv;
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePlane {
    level: usize,
    orientation: PlaneOrientation,
    resolution: usize,
    channels: usize,
    /// `[row][col][channel]`, rows follow `v`, columns follow `u`.
    texels: Vec<f64>,
    pub frozen: bool,
}

impl FeaturePlane {
    pub fn zeros(level: usize, orientation: PlaneOrientation, resolution: usize, channels: usize) -> Self {
        Self {
            level,
            orientation,
            resolution,
            channels,
            texels: vec![0.0; resolution * resolution * channels],
            frozen: false,
        }
    }

    pub fn from_texels(
        level: usize,
        orientation: PlaneOrientation,
        resolution: usize,
        channels: usize,
        texels: Vec<f64>,
    ) -> Result<Self> {
        if resolution == 0 || channels == 0 {
            return Err(Error::config("plane resolution and channels must be positive"));
        }
        if texels.len() != resolution * resolution * channels {
            return Err(Error::shape(resolution * resolution * channels, texels.len()));
        }
        Ok(Self {
            level,
            orientation,
            resolution,
            channels,
            texels,
            frozen: false,
        })
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn orientation(&self) -> PlaneOrientation {
        self.orientation
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn texels(&self) -> &[f64] {
        &self.texels
    }

    pub fn texels_mut(&mut self) -> &mut [f64] {
        &mut self.texels
    }

    pub fn texel(&self, row: usize, col: usize) -> &[f64] {
        let o = (row * self.resolution + col) * self.channels;
        &self.texels[o..o + self.channels]
    }

    pub fn tap(&self, u: f64, v: f64) -> PlaneTap {
        let su = stencil(u, self.resolution);
        let sv = stencil(v, self.resolution);
        let (n, c) = (self.resolution, self.channels);
        let off = |row: usize, col: usize| (row * n + col) * c;
        PlaneTap {
            offsets: [off(sv.lo, su.lo), off(sv.lo, su.hi), off(sv.hi, su.lo), off(sv.hi, su.hi)],
            weights: [
                (1.0 - sv.w_hi) * (1.0 - su.w_hi),
                (1.0 - sv.w_hi) * su.w_hi,
                sv.w_hi * (1.0 - su.w_hi),
                sv.w_hi * su.w_hi,
            ],
        }
    }

    /// Adds the interpolated feature at `tap` into `out`.
    #[inline]
    pub fn accumulate(&self, tap: &PlaneTap, out: &mut [f64]) {
        gather(&self.texels, &tap.offsets, &tap.weights, out);
    }

    #[inline]
    pub(crate) fn scatter_grad(tap: &PlaneTap, d_feature: &[f64], grad: &mut [f64]) {
        scatter(grad, &tap.offsets, &tap.weights, d_feature);
    }

    /// Bilinear sample at `(u, v)`; coordinates outside `[-1, 1]` clamp.
    pub fn sample(&self, u: f64, v: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.channels];
        self.accumulate(&self.tap(u, v), &mut out);
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVectorAxis {
    axis: Axis,
    resolution: usize,
    channels: usize,
    /// `[index][channel]`.
    values: Vec<f64>,
    pub frozen: bool,
}

impl FeatureVectorAxis {
    pub fn zeros(axis: Axis, resolution: usize, channels: usize) -> Self {
        Self {
            axis,
            resolution,
            channels,
            values: vec![0.0; resolution * channels],
            frozen: false,
        }
    }

    pub fn from_values(axis: Axis, resolution: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        if resolution == 0 || channels == 0 {
            return Err(Error::config("vector resolution and channels must be positive"));
        }
        if values.len() != resolution * channels {
            return Err(Error::shape(resolution * channels, values.len()));
        }
        Ok(Self {
            axis,
            resolution,
            channels,
            values,
            frozen: false,
        })
    }

    pub fn axis(&self) -> Axis {
        self.axis
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn tap(&self, coord: f64) -> AxisTap {
        let s = stencil(coord, self.resolution);
        AxisTap {
            offsets: [s.lo * self.channels, s.hi * self.channels],
            weights: [1.0 - s.w_hi, s.w_hi],
        }
    }

    #[inline]
    pub fn accumulate(&self, tap: &AxisTap, out: &mut [f64]) {
        gather(&self.values, &tap.offsets, &tap.weights, out);
    }

    #[inline]
    pub(crate) fn scatter_grad(tap: &AxisTap, d_feature: &[f64], grad: &mut [f64]) {
        scatter(grad, &tap.offsets, &tap.weights, d_feature);
    }

    pub fn sample(&self, coord: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.channels];
        self.accumulate(&self.tap(coord), &mut out);
        out
    }
}

/// Sum of the three axis vectors, each interpolated at its own coordinate
/// of `p`. `axes` must be ordered x, y, z.
pub fn sample_trivector(axes: &[FeatureVectorAxis], p: Vec3) -> Vec<f64> {
    let channels = axes.first().map_or(0, |a| a.channels());
    let mut out = vec![0.0; channels];
    for axis in axes {
        axis.accumulate(&axis.tap(p[axis.axis().index()]), &mut out);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Brute-force bilinear oracle written against texel-centre positions.
    fn bilinear_oracle(values: &[f64], n: usize, u: f64, v: f64) -> f64 {
        let centre = |i: usize| -1.0 + (2 * i + 1) as f64 / n as f64;
        let mut num = 0.0;
        let mut den = 0.0;
        for row in 0..n {
            for col in 0..n {
                let du = (u.clamp(centre(0), centre(n - 1)) - centre(col)).abs() * n as f64 / 2.0;
                let dv = (v.clamp(centre(0), centre(n - 1)) - centre(row)).abs() * n as f64 / 2.0;
                let w = (1.0 - du).max(0.0) * (1.0 - dv).max(0.0);
                num += w * values[row * n + col];
                den += w;
            }
        }
        num / den
    }

    #[test]
    fn constant_plane_returns_constant() {
        let plane = FeaturePlane::from_texels(1, PlaneOrientation::Xy, 2, 3, vec![7.0; 12]).unwrap();
        for (u, v) in [(-1.0, -1.0), (0.3, -0.7), (1.0, 1.0), (5.0, -9.0)] {
            assert_eq!(plane.sample(u, v), vec![7.0; 3]);
        }
    }

    #[test]
    fn texel_centre_reproduces_texel() {
        let n = 4;
        let texels: Vec<f64> = (0..n * n * 2).map(|i| i as f64 * 0.25).collect();
        let plane = FeaturePlane::from_texels(1, PlaneOrientation::Xz, n, 2, texels).unwrap();
        for row in 0..n {
            for col in 0..n {
                let u = -1.0 + (2 * col + 1) as f64 / n as f64;
                let v = -1.0 + (2 * row + 1) as f64 / n as f64;
                assert_eq!(plane.sample(u, v), plane.texel(row, col).to_vec());
            }
        }
    }

    #[test]
    fn patch_midpoint_of_two_by_two() {
        let plane =
            FeaturePlane::from_texels(1, PlaneOrientation::Xy, 2, 1, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let oracle = bilinear_oracle(&[0.0, 1.0, 2.0, 3.0], 2, 0.0, 0.0);
        assert_eq!(oracle, 1.5);
        assert_eq!(plane.sample(0.0, 0.0), vec![1.5]);
    }

    #[test]
    fn trivector_examples() {
        let zero: Vec<_> = Axis::ALL.iter().map(|&a| FeatureVectorAxis::zeros(a, 5, 2)).collect();
        assert_eq!(sample_trivector(&zero, [0.1, 0.2, 0.3]), vec![0.0, 0.0]);

        let mut constant = zero.clone();
        constant[0].values_mut().fill(0.75);
        for p in [[-1.0, 0.0, 1.0], [0.3, 0.3, -0.9], [2.0, -3.0, 0.0]] {
            assert_eq!(sample_trivector(&constant, p), vec![0.75, 0.75]);
        }

        let ramp: Vec<_> = Axis::ALL
            .iter()
            .map(|&a| FeatureVectorAxis::from_values(a, 2, 1, vec![0.0, 1.0]).unwrap())
            .collect();
        assert_eq!(sample_trivector(&ramp, [0.0, 0.0, 0.0]), vec![1.5]);
    }

    proptest! {
        #[test]
        fn bilinear_matches_oracle_and_stays_in_range(
            values in proptest::collection::vec(-5.0f64..5.0, 9),
            u in -1.5f64..1.5,
            v in -1.5f64..1.5,
        ) {
            let plane = FeaturePlane::from_texels(2, PlaneOrientation::Yz, 3, 1, values.clone()).unwrap();
            let got = plane.sample(u, v)[0];
            let oracle = bilinear_oracle(&values, 3, u, v);
            prop_assert!((got - oracle).abs() < 1e-12);
            let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(got >= lo - 1e-12 && got <= hi + 1e-12);
        }

        #[test]
        fn vector_interpolation_stays_in_range(
            values in proptest::collection::vec(-5.0f64..5.0, 6),
            x in -1.5f64..1.5,
        ) {
            let axis = FeatureVectorAxis::from_values(Axis::Y, 6, 1, values.clone()).unwrap();
            let got = axis.sample(x)[0];
            let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(got >= lo - 1e-12 && got <= hi + 1e-12);
        }
    }
}
