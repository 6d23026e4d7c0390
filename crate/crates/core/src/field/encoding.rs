//! Fourier feature encoding of fused features.
//!
//! The default log-spaced layout for `C` channels and `L` bands is
//!
//! ```text
//! [h_0..h_C | sin(π h) | cos(π h) | sin(2π h) | cos(2π h) | ... | sin(2^{L-1}π h) | cos(2^{L-1}π h)]
//! ```
//!
//! where each block holds `C` values. The random-projection variant replaces
//! the per-channel frequencies with `M = C·L` rows of a Gaussian matrix `B`
//! and encodes `[h | sin(2π B h) | cos(2π B h)]`, which keeps the same width.

use std::f64::consts::PI;

use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::math::Rng;

#[derive(Clone, Debug, PartialEq)]
pub enum FourierEncoding {
    LogSpaced {
        bands: usize,
    },
    RandomProjection {
        /// `[row][channel]`, `bands * channels` rows.
        projection: Vec<f64>,
        bands: usize,
        channels: usize,
    },
}

impl FourierEncoding {
    pub fn log_spaced(bands: usize) -> Self {
        Self::LogSpaced { bands }
    }

    pub fn random_projection(bands: usize, channels: usize, scale: f64, rng: &mut Rng) -> Result<Self> {
        let normal = Normal::new(0.0, scale).map_err(|e| Error::config(format!("fourier scale: {e}")))?;
        let projection = (0..bands * channels * channels).map(|_| normal.sample(rng)).collect();
        Ok(Self::RandomProjection {
            projection,
            bands,
            channels,
        })
    }

    pub fn bands(&self) -> usize {
        match self {
            Self::LogSpaced { bands } | Self::RandomProjection { bands, .. } => *bands,
        }
    }

    pub fn output_dim(&self, channels: usize) -> usize {
        channels * (2 * self.bands() + 1)
    }

    /// Writes the encoding of `h` into `out` (length `output_dim`).
    pub fn encode_into(&self, h: &[f64], out: &mut [f64]) {
        let c = h.len();
        out[..c].copy_from_slice(h);
        match self {
            Self::LogSpaced { bands } => {
                for (ch, &x) in h.iter().enumerate() {
                    let (mut s, mut co) = (PI * x).sin_cos();
                    for band in 0..*bands {
                        if band > 0 {
                            // Double-angle recurrence.
                            let s2 = 2.0 * s * co;
                            co = (co - s) * (co + s);
                            s = s2;
                        }
                        out[c * (1 + 2 * band) + ch] = s;
                        out[c * (2 + 2 * band) + ch] = co;
                    }
                }
            }
            Self::RandomProjection { projection, bands, .. } => {
                let rows = bands * c;
                for r in 0..rows {
                    let row = &projection[r * c..(r + 1) * c];
                    let z: f64 = row.iter().zip(h).map(|(b, x)| b * x).sum();
                    let (s, co) = (2.0 * PI * z).sin_cos();
                    out[c + r] = s;
                    out[c + rows + r] = co;
                }
            }
        }
    }

    /// Accumulates `∂L/∂h` into `d_h` given the forward output `encoded` and
    /// its adjoint `d_out`.
    pub fn backward(&self, encoded: &[f64], d_out: &[f64], d_h: &mut [f64]) {
        let c = d_h.len();
        for (d, g) in d_h.iter_mut().zip(&d_out[..c]) {
            *d += g;
        }
        match self {
            Self::LogSpaced { bands } => {
                let mut freq = PI;
                for band in 0..*bands {
                    let s_off = c * (1 + 2 * band);
                    let c_off = c * (2 + 2 * band);
                    for ch in 0..c {
                        let s = encoded[s_off + ch];
                        let co = encoded[c_off + ch];
                        d_h[ch] += freq * (co * d_out[s_off + ch] - s * d_out[c_off + ch]);
                    }
                    freq *= 2.0;
                }
            }
            Self::RandomProjection { projection, bands, .. } => {
                let rows = bands * c;
                for r in 0..rows {
                    let s = encoded[c + r];
                    let co = encoded[c + rows + r];
                    let dz = 2.0 * PI * (co * d_out[c + r] - s * d_out[c + rows + r]);
                    if dz == 0.0 {
                        continue;
                    }
                    for (d, b) in d_h.iter_mut().zip(&projection[r * c..(r + 1) * c]) {
                        *d += dz * b;
                    }
                }
            }
        }
    }
}

/// Log-spaced Fourier encoding of `h` with `bands` frequencies.
pub fn fourier_encode(h: &[f64], bands: usize) -> Vec<f64> {
    let enc = FourierEncoding::log_spaced(bands);
    let mut out = vec![0.0; enc.output_dim(h.len())];
    enc.encode_into(h, &mut out);
    out
}
