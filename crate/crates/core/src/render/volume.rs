//! Emission–absorption compositing along a ray and its reverse pass.

use crate::error::{Error, Result};
use crate::field::{FieldSample, SampleAdjoint};

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Composite {
    pub rgb: [f64; 3],
    pub opacity: f64,
    pub depth: f64,
}

/// Adjoint of a composited pixel.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PixelAdjoint {
    pub rgb: [f64; 3],
    pub opacity: f64,
}

fn check_inputs(samples: &[FieldSample], t: &[f64], delta: &[f64]) -> Result<()> {
    if samples.len() != delta.len() || samples.len() != t.len() {
        return Err(Error::shape(samples.len(), format!("{} t / {} deltas", t.len(), delta.len())));
    }
    for (i, (s, d)) in samples.iter().zip(delta).enumerate() {
        if !(s.sigma >= 0.0) || !(*d >= 0.0) {
            return Err(Error::contract(format!(
                "sample {i} has negative density or segment length (σ={}, δ={d})",
                s.sigma
            )));
        }
    }
    Ok(())
}

/// Composites samples front to back:
/// `α_i = 1 - exp(-σ_i δ_i)`, `T_i = Π_{j<i} (1 - α_j)`, `w_i = T_i α_i`,
/// `rgb = Σ w_i c_i + T_N · background`, `opacity = 1 - T_N`,
/// `depth = Σ w_i t_i / max(opacity, 1e-8)`.
pub fn volume_render(
    samples: &[FieldSample],
    t: &[f64],
    delta: &[f64],
    background: [f64; 3],
) -> Result<Composite> {
    check_inputs(samples, t, delta)?;
    Ok(composite_unchecked(samples, t, delta, background))
}

#[inline]
pub(crate) fn composite_unchecked(
    samples: &[FieldSample],
    t: &[f64],
    delta: &[f64],
    background: [f64; 3],
) -> Composite {
    let mut trans = 1.0;
    let mut rgb = [0.0; 3];
    let mut weight_sum = 0.0;
    let mut depth = 0.0;
    for ((s, &ti), &di) in samples.iter().zip(t).zip(delta) {
        if s.sigma == 0.0 {
            continue;
        }
        let keep = (-s.sigma * di).exp();
        let w = trans * (1.0 - keep);
        for c in 0..3 {
            rgb[c] += w * s.rgb[c];
        }
        weight_sum += w;
        depth += w * ti;
        trans *= keep;
    }
    for c in 0..3 {
        rgb[c] += trans * background[c];
    }
    Composite {
        rgb,
        opacity: weight_sum,
        depth: depth / weight_sum.max(1e-8),
    }
}

/// Per-sample compositing weights `w_i` and the final transmittance.
pub fn compositing_weights(samples: &[FieldSample], delta: &[f64]) -> (Vec<f64>, f64) {
    let mut trans = 1.0;
    let weights = samples
        .iter()
        .zip(delta)
        .map(|(s, &d)| {
            let keep = (-s.sigma * d).exp();
            let w = trans * (1.0 - keep);
            trans *= keep;
            w
        })
        .collect();
    (weights, trans)
}

/// Reverse pass of [`volume_render`] for the colour and opacity outputs.
/// Writes one adjoint per sample into `out`.
pub fn volume_render_backward(
    samples: &[FieldSample],
    delta: &[f64],
    background: [f64; 3],
    adjoint: &PixelAdjoint,
    out: &mut Vec<SampleAdjoint>,
) {
    let n = samples.len();
    out.clear();
    out.resize(n, SampleAdjoint::default());
    // Forward sweep: keep factors and transmittance before each sample.
    let mut trans_before = Vec::with_capacity(n);
    let mut keeps = Vec::with_capacity(n);
    let mut trans = 1.0;
    for (s, &d) in samples.iter().zip(delta) {
        let keep = (-s.sigma * d).exp();
        trans_before.push(trans);
        keeps.push(keep);
        trans *= keep;
    }
    let t_final = trans;
    // Backward sweep, with `behind` = Σ_{j>i} w_j c_j + T_N · background.
    let mut behind = [
        t_final * background[0],
        t_final * background[1],
        t_final * background[2],
    ];
    for i in (0..n).rev() {
        let s = &samples[i];
        let t_i = trans_before[i];
        let w = t_i * (1.0 - keeps[i]);
        let t_next = t_i * keeps[i];
        let mut d_sigma = 0.0;
        for c in 0..3 {
            out[i].rgb[c] = w * adjoint.rgb[c];
            d_sigma += adjoint.rgb[c] * (t_next * s.rgb[c] - behind[c]);
        }
        d_sigma += adjoint.opacity * t_final;
        out[i].sigma = delta[i] * d_sigma;
        for c in 0..3 {
            behind[c] += w * s.rgb[c];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::rng_from_seed;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn uniform_segments(n: usize, length: f64) -> (Vec<f64>, Vec<f64>) {
        let bin = length / n as f64;
        let t: Vec<f64> = (0..n).map(|k| (k as f64 + 0.5) * bin).collect();
        let mut d: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
        d.push(length - t[n - 1]);
        (t, d)
    }

    #[test]
    fn empty_space_shows_background() {
        let samples = vec![FieldSample::EMPTY; 8];
        let (t, d) = uniform_segments(8, 1.0);
        let c = volume_render(&samples, &t, &d, [0.2, 0.4, 0.6]).unwrap();
        assert_eq!(c.rgb, [0.2, 0.4, 0.6]);
        assert_eq!(c.opacity, 0.0);
    }

    #[test]
    fn opaque_first_sample_hides_the_rest() {
        let mut samples = vec![
            FieldSample {
                sigma: 1.0,
                rgb: [0.0, 1.0, 0.0]
            };
            4
        ];
        samples[0] = FieldSample {
            sigma: 1e6,
            rgb: [0.9, 0.1, 0.3],
        };
        let c = volume_render(&samples, &[0.5, 1.5, 2.5, 3.5], &[1.0; 4], [1.0; 3]).unwrap();
        for k in 0..3 {
            assert!((c.rgb[k] - samples[0].rgb[k]).abs() < 1e-12);
        }
        assert!((c.opacity - 1.0).abs() < 1e-12);
    }

    #[test]
    fn homogeneous_slab_matches_analytic_transmittance() {
        let n = 256;
        let samples = vec![
            FieldSample {
                sigma: 2.0,
                rgb: [1.0; 3]
            };
            n
        ];
        let (t, d) = uniform_segments(n, 1.0);
        let c = volume_render(&samples, &t, &d, [0.0; 3]).unwrap();
        assert!((c.opacity - (1.0 - (-2.0f64).exp())).abs() < 1e-3);
    }

    #[test]
    fn negative_inputs_are_contract_violations() {
        let bad = [FieldSample {
            sigma: -1.0,
            rgb: [0.0; 3],
        }];
        assert!(matches!(volume_render(&bad, &[0.0], &[1.0], [0.0; 3]), Err(Error::Contract(_))));
        let ok = [FieldSample::EMPTY];
        assert!(volume_render(&ok, &[0.0], &[-1.0], [0.0; 3]).is_err());
    }

    #[test]
    fn splitting_a_segment_is_invariant() {
        let s = FieldSample {
            sigma: 3.0,
            rgb: [0.3, 0.6, 0.9],
        };
        let one = volume_render(&[s], &[0.0], &[0.4], [1.0, 0.0, 0.5]).unwrap();
        let two = volume_render(&[s, s], &[0.0, 0.2], &[0.2, 0.2], [1.0, 0.0, 0.5]).unwrap();
        for k in 0..3 {
            assert!((one.rgb[k] - two.rgb[k]).abs() < 1e-12);
        }
        assert!((one.opacity - two.opacity).abs() < 1e-12);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = rng_from_seed(21);
        let n = 12;
        let samples: Vec<FieldSample> = (0..n)
            .map(|_| FieldSample {
                sigma: rng.random_range(0.0..3.0),
                rgb: [rng.random(), rng.random(), rng.random()],
            })
            .collect();
        let (t, d) = uniform_segments(n, 1.5);
        let bg = [0.3, 0.7, 0.1];
        let adj = PixelAdjoint {
            rgb: [0.4, -1.1, 0.8],
            opacity: 0.6,
        };
        let scalar = |s: &[FieldSample]| {
            let c = volume_render(s, &t, &d, bg).unwrap();
            c.rgb.iter().zip(&adj.rgb).map(|(a, b)| a * b).sum::<f64>() + c.opacity * adj.opacity
        };
        let mut out = Vec::new();
        volume_render_backward(&samples, &d, bg, &adj, &mut out);
        let h = 1e-6;
        for i in 0..n {
            let mut p = samples.clone();
            let mut m = samples.clone();
            p[i].sigma += h;
            m[i].sigma -= h;
            let fd = (scalar(&p) - scalar(&m)) / (2.0 * h);
            assert!((fd - out[i].sigma).abs() < 1e-8, "σ_{i}: {fd} vs {}", out[i].sigma);
            for c in 0..3 {
                let mut p = samples.clone();
                let mut m = samples.clone();
                p[i].rgb[c] += h;
                m[i].rgb[c] -= h;
                let fd = (scalar(&p) - scalar(&m)) / (2.0 * h);
                assert!((fd - out[i].rgb[c]).abs() < 1e-8);
            }
        }
    }

    proptest! {
        #[test]
        fn weights_are_bounded_and_sum_to_opacity(
            sigmas in proptest::collection::vec(0.0f64..50.0, 1..40),
            deltas in proptest::collection::vec(0.0f64..0.5, 40),
            colors in proptest::collection::vec(0.0f64..=1.0, 120),
        ) {
            let n = sigmas.len();
            let samples: Vec<FieldSample> = (0..n)
                .map(|i| FieldSample { sigma: sigmas[i], rgb: [colors[3 * i], colors[3 * i + 1], colors[3 * i + 2]] })
                .collect();
            let d = &deltas[..n];
            let t: Vec<f64> = d.iter().scan(0.0, |acc, x| { let v = *acc; *acc += x; Some(v) }).collect();
            let (w, t_final) = compositing_weights(&samples, d);
            prop_assert!(w.iter().all(|&x| (0.0..=1.0).contains(&x)));
            let sum: f64 = w.iter().sum();
            prop_assert!((sum - (1.0 - t_final)).abs() < 1e-12);
            let c = volume_render(&samples, &t, d, [1.0, 0.0, 0.5]).unwrap();
            prop_assert!((0.0..=1.0 + 1e-12).contains(&c.opacity));
            prop_assert!(c.rgb.iter().all(|v| (-1e-12..=1.0 + 1e-12).contains(v)));
        }
    }
}
