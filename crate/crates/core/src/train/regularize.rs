//! Total-variation and L2 penalties on feature grids.

use crate::field::{FieldGrads, MultiScaleField, TensorId};

/// Mean squared difference over all horizontally and vertically adjacent
/// texel pairs of an `n × n × c` plane, `2 n (n - 1) c` pairs in total.
/// Adds `scale · ∂loss/∂texel` into `grad` and returns the loss.
pub fn tv_plane(texels: &[f64], n: usize, c: usize, scale: f64, grad: &mut [f64]) -> f64 {
    debug_assert_eq!(texels.len(), n * n * c);
    if n < 2 {
        return 0.0;
    }
    let pairs = (2 * n * (n - 1) * c) as f64;
    let k = 2.0 * scale / pairs;
    let row_len = n * c;
    let mut sum = 0.0;
    for row in 0..n {
        let x = &texels[row * row_len..(row + 1) * row_len];
        let (g_head, g_tail) = grad.split_at_mut((row + 1) * row_len);
        let g = &mut g_head[row * row_len..];
        sum += neighbour_pairs(x, c, k, g);
        if row + 1 < n {
            let below = &texels[(row + 1) * row_len..(row + 2) * row_len];
            let g_below = &mut g_tail[..row_len];
            for i in 0..row_len {
                let d = x[i] - below[i];
                sum += d * d;
                g[i] += k * d;
                g_below[i] -= k * d;
            }
        }
    }
    sum / pairs
}

/// One-dimensional analogue of [`tv_plane`] over `n - 1` neighbour pairs
/// of an `n × c` feature vector.
pub fn tv_axis(values: &[f64], n: usize, c: usize, scale: f64, grad: &mut [f64]) -> f64 {
    debug_assert_eq!(values.len(), n * c);
    if n < 2 {
        return 0.0;
    }
    let pairs = ((n - 1) * c) as f64;
    neighbour_pairs(values, c, 2.0 * scale / pairs, grad) / pairs
}

/// Sum of `(x[i] - x[i + stride])²` with `k ·` its gradient added to `grad`.
fn neighbour_pairs(x: &[f64], stride: usize, k: f64, grad: &mut [f64]) -> f64 {
    let mut sum = 0.0;
    for i in 0..x.len() - stride {
        let d = x[i] - x[i + stride];
        sum += d * d;
        grad[i] += k * d;
        grad[i + stride] -= k * d;
    }
    sum
}

/// Mean of squares over several tensors taken together. Adds
/// `scale · 2 x / count` into each gradient.
pub fn l2_mean<'a>(tensors: impl IntoIterator<Item = (&'a [f64], &'a mut [f64])>, scale: f64) -> f64 {
    let pairs: Vec<_> = tensors.into_iter().collect();
    let count: usize = pairs.iter().map(|(x, _)| x.len()).sum();
    if count == 0 {
        return 0.0;
    }
    let k = 2.0 * scale / count as f64;
    let mut sum = 0.0;
    for (x, g) in pairs {
        for (xi, gi) in x.iter().zip(g.iter_mut()) {
            sum += xi * xi;
            *gi += k * xi;
        }
    }
    sum / count as f64
}

/// Penalty values before weighting.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RegularizerTerms {
    pub tv: f64,
    pub l2: f64,
}

impl RegularizerTerms {
    pub fn weighted(&self, lambda_tv: f64, lambda_l2: f64) -> f64 {
        lambda_tv * self.tv + lambda_l2 * self.l2
    }
}

/// Applies `λ_TV · TV + λ_L2 · L2` to every feature tensor that has a
/// gradient buffer in `grads`. TV is summed over tensors; L2 is one mean over
/// all of them. Decoder tensors are left alone.
pub fn apply_regularizers(
    field: &MultiScaleField,
    grads: &mut FieldGrads,
    lambda_tv: f64,
    lambda_l2: f64,
) -> RegularizerTerms {
    let ids: Vec<TensorId> = grads.ids().into_iter().filter(|id| id.is_feature()).collect();
    let mut terms = RegularizerTerms::default();
    let c = field.channels();
    for &id in &ids {
        let x = field.tensor(id).expect("feature tensor exists");
        let g = grads.get_mut(id).expect("id listed by grads");
        terms.tv += match id {
            TensorId::Plane { level, orientation } => {
                let n = field.plane(level, orientation).resolution();
                tv_plane(x, n, c, lambda_tv, g)
            }
            _ => tv_axis(x, x.len() / c, c, lambda_tv, g),
        };
    }
    let count: usize = ids.iter().map(|&id| field.tensor(id).unwrap().len()).sum();
    for &id in &ids {
        let x = field.tensor(id).unwrap();
        // Fraction of the joint mean contributed by this tensor.
        let share = x.len() as f64 / count as f64;
        terms.l2 += share * l2_mean([(x, grads.get_mut(id).unwrap())], share * lambda_l2);
    }
    terms
}
