//! Adan: adaptive Nesterov momentum with decoupled, proximal weight decay.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::field::{FieldGrads, MultiScaleField, TensorId};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdanConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub betas: [f64; 3],
    pub eps: f64,
}

impl Default for AdanConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            weight_decay: 2e-5,
            betas: [0.98, 0.92, 0.99],
            eps: 1e-8,
        }
    }
}

impl AdanConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.weight_decay >= 0.0 && self.eps > 0.0) {
            return Err(Error::config("Adan needs lr ≥ 0, weight decay ≥ 0 and eps > 0"));
        }
        if self.betas.iter().any(|b| !(0.0..1.0).contains(b)) {
            return Err(Error::config(format!("Adan betas {:?} must lie in [0, 1)", self.betas)));
        }
        Ok(())
    }
}

/// Per-tensor optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct AdanMoments {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub n: Vec<f64>,
    pub prev_grad: Vec<f64>,
}

impl AdanMoments {
    fn zeros(len: usize) -> Self {
        Self {
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
            n: vec![0.0; len],
            prev_grad: vec![0.0; len],
        }
    }

    /// One update of `params` in place:
    /// `m ← β1 m + (1-β1) g`, `v ← β2 v + (1-β2)(g - g_prev)`,
    /// `n ← β3 n + (1-β3)(g + β2 (g - g_prev))²`,
    /// `p ← (p - lr · (m̂ + β2 v̂) / (√n̂ + ε)) / (1 + lr · wd)`, where hats
    /// are bias-corrected and `g - g_prev` is zero on the first step.
    pub fn update(&mut self, cfg: &AdanConfig, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::shape(self.m.len(), format!("{} params / {} grads", params.len(), grad.len())));
        }
        self.step += 1;
        let [b1, b2, b3] = cfg.betas;
        let k = self.step as i32;
        let bc1 = 1.0 - b1.powi(k);
        let bc2 = 1.0 - b2.powi(k);
        let bc3_sqrt = (1.0 - b3.powi(k)).sqrt();
        let first = self.step == 1;
        let decay = 1.0 / (1.0 + cfg.lr * cfg.weight_decay);
        for i in 0..params.len() {
            let g = grad[i];
            let diff = if first { 0.0 } else { g - self.prev_grad[i] };
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * diff;
            let u = g + b2 * diff;
            self.n[i] = b3 * self.n[i] + (1.0 - b3) * u * u;
            let denom = self.n[i].sqrt() / bc3_sqrt + cfg.eps;
            let step = (self.m[i] / bc1 + b2 * self.v[i] / bc2) / denom;
            params[i] = (params[i] - cfg.lr * step) * decay;
            self.prev_grad[i] = g;
        }
        Ok(())
    }
}

/// Optimizer over a field. A tensor's moments start at its first update, so
/// a level that begins training mid-run gets fresh bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct Adan {
    config: AdanConfig,
    state: BTreeMap<TensorId, AdanMoments>,
}

impl Adan {
    pub fn new(config: AdanConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            state: BTreeMap::new(),
        })
    }

    pub fn config(&self) -> &AdanConfig {
        &self.config
    }

    pub fn moments(&self, id: TensorId) -> Option<&AdanMoments> {
        self.state.get(&id)
    }

    /// Updates every tensor that has a gradient buffer. Frozen tensors never
    /// have one, so they are left byte-identical.
    pub fn step(&mut self, field: &mut MultiScaleField, grads: &FieldGrads) -> Result<()> {
        for id in grads.ids() {
            if field.is_frozen(id) {
                return Err(Error::contract(format!("gradient supplied for frozen tensor {id}")));
            }
            let g = grads.get(id).expect("listed id has a buffer");
            let p = field
                .tensor_mut(id)
                .ok_or_else(|| Error::contract(format!("field has no tensor {id}")))?;
            self.state
                .entry(id)
                .or_insert_with(|| AdanMoments::zeros(g.len()))
                .update(&self.config, p, g)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::FieldConfig;

    #[test]
    fn zero_rates_leave_parameters_unchanged() {
        let cfg = AdanConfig {
            lr: 0.0,
            weight_decay: 0.0,
            ..AdanConfig::default()
        };
        let mut m = AdanMoments::zeros(3);
        let mut p = [0.3, -1.2, 4.0];
        for g in [[1.0, 2.0, -3.0], [0.5, -0.1, 0.0]] {
            m.update(&cfg, &mut p, &g).unwrap();
        }
        assert_eq!(p, [0.3, -1.2, 4.0]);
    }

    #[test]
    fn zero_gradients_only_decay() {
        let cfg = AdanConfig {
            lr: 0.1,
            weight_decay: 0.5,
            ..AdanConfig::default()
        };
        let mut m = AdanMoments::zeros(2);
        let mut p = [2.0, -1.0];
        for k in 1..=3 {
            m.update(&cfg, &mut p, &[0.0, 0.0]).unwrap();
            let f = (1.0f64 + 0.05).powi(-k);
            assert!((p[0] - 2.0 * f).abs() < 1e-15 && (p[1] + f).abs() < 1e-15);
        }
    }

    #[test]
    fn two_steps_match_a_hand_transcription() {
        let (lr, wd, b1, b2, b3, eps) = (0.01, 0.02, 0.98, 0.92, 0.99, 1e-8);
        let cfg = AdanConfig {
            lr,
            weight_decay: wd,
            betas: [b1, b2, b3],
            eps,
        };
        let (g1, g2) = (0.5, -0.3);
        let p0 = 1.0;
        // Step 1: no gradient difference.
        let m1 = (1.0 - b1) * g1;
        let v1 = 0.0;
        let n1 = (1.0 - b3) * g1 * g1;
        let u1 = (m1 / (1.0 - b1) + b2 * v1 / (1.0 - b2)) / ((n1 / (1.0 - b3)).sqrt() + eps);
        let p1 = (p0 - lr * u1) / (1.0 + lr * wd);
        // Step 2.
        let d = g2 - g1;
        let m2 = b1 * m1 + (1.0 - b1) * g2;
        let v2 = b2 * v1 + (1.0 - b2) * d;
        let n2 = b3 * n1 + (1.0 - b3) * (g2 + b2 * d).powi(2);
        let u2 = (m2 / (1.0 - b1 * b1) + b2 * v2 / (1.0 - b2 * b2)) / ((n2 / (1.0 - b3 * b3)).sqrt() + eps);
        let p2 = (p1 - lr * u2) / (1.0 + lr * wd);

        let mut state = AdanMoments::zeros(1);
        let mut p = [p0];
        state.update(&cfg, &mut p, &[g1]).unwrap();
        assert!((p[0] - p1).abs() < 1e-15);
        state.update(&cfg, &mut p, &[g2]).unwrap();
        assert!((p[0] - p2).abs() < 1e-15, "{} vs {p2}", p[0]);
    }

    #[test]
    fn shape_mismatch_is_a_fault() {
        let mut m = AdanMoments::zeros(2);
        assert!(m.update(&AdanConfig::default(), &mut [0.0; 3], &[0.0; 3]).is_err());
        assert!(Adan::new(AdanConfig {
            betas: [1.0, 0.9, 0.9],
            ..AdanConfig::default()
        })
        .is_err());
    }

    #[test]
    fn frozen_tensors_stay_byte_identical() {
        let mut field = MultiScaleField::new(&FieldConfig {
            plane_resolutions: [4, 6, 8],
            vector_resolution: 10,
            channels: 3,
            hidden_width: 8,
            feature_init: 0.5,
            ..FieldConfig::default()
        })
        .unwrap();
        field.freeze_below(3);
        let before = field.level_checksum(1);
        let before2 = field.level_checksum(2);
        let mut grads = FieldGrads::for_stage(&field, 3).unwrap();
        for id in grads.ids() {
            grads.get_mut(id).unwrap().iter_mut().for_each(|g| *g = 1.0);
        }
        let mut opt = Adan::new(AdanConfig::default()).unwrap();
        let level3 = field.level_checksum(3);
        opt.step(&mut field, &grads).unwrap();
        assert_eq!(field.level_checksum(1), before);
        assert_eq!(field.level_checksum(2), before2);
        assert_ne!(field.level_checksum(3), level3);
        assert_eq!(opt.moments(TensorId::Weight(0)).unwrap().step, 1);
    }
}
