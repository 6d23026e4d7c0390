//! Shallow ReLU MLP mapping encoded features to raw density and colour.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::math::Rng;

/// Raw decoder outputs: one density logit followed by three colour logits.
pub const DECODER_OUTPUTS: usize = 4;

/// Fully connected layer. Weights are stored input-major
/// (`weight[k * fan_out + j]` connects input `k` to output `j`).
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            fan_in,
            fan_out,
            weight: vec![0.0; fan_in * fan_out],
            bias: vec![0.0; fan_out],
        }
    }

    /// He-uniform weights, zero biases.
    fn init(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        let bound = (6.0 / fan_in as f64).sqrt();
        let weight = (0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)).collect();
        Self {
            fan_in,
            fan_out,
            weight,
            bias: vec![0.0; fan_out],
        }
    }

    #[inline]
    fn forward(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.bias);
        for (k, &a) in x.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            let row = &self.weight[k * self.fan_out..(k + 1) * self.fan_out];
            for (o, w) in out.iter_mut().zip(row) {
                *o += w * a;
            }
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        for l in 0..4 {
            acc[l] += a[4 * i + l] * b[4 * i + l];
        }
    }
    let mut sum = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        sum += a[i] * b[i];
    }
    sum
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderParams {
    layers: Vec<Linear>,
}

/// Gradient buffers shaped like [`DecoderParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderGrads {
    pub layers: Vec<Linear>,
}

impl DecoderGrads {
    pub fn norm_sq(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(&l.bias))
            .map(|g| g * g)
            .sum()
    }
}

impl DecoderParams {
    pub fn new(input_dim: usize, hidden_width: usize, hidden_layers: usize, rng: &mut Rng) -> Result<Self> {
        Self::validate_dims(input_dim, hidden_width, hidden_layers)?;
        let mut layers = Vec::with_capacity(hidden_layers + 1);
        let mut fan_in = input_dim;
        for _ in 0..hidden_layers {
            layers.push(Linear::init(fan_in, hidden_width, rng));
            fan_in = hidden_width;
        }
        layers.push(Linear::init(fan_in, DECODER_OUTPUTS, rng));
        Ok(Self { layers })
    }

    pub fn zeros(input_dim: usize, hidden_width: usize, hidden_layers: usize) -> Result<Self> {
        Self::validate_dims(input_dim, hidden_width, hidden_layers)?;
        let mut layers = Vec::with_capacity(hidden_layers + 1);
        let mut fan_in = input_dim;
        for _ in 0..hidden_layers {
            layers.push(Linear::zeros(fan_in, hidden_width));
            fan_in = hidden_width;
        }
        layers.push(Linear::zeros(fan_in, DECODER_OUTPUTS));
        Ok(Self { layers })
    }

    fn validate_dims(input_dim: usize, hidden_width: usize, hidden_layers: usize) -> Result<()> {
        if input_dim == 0 || (hidden_layers > 0 && hidden_width == 0) {
            return Err(Error::config("decoder dimensions must be positive"));
        }
        Ok(())
    }

    /// Builds a decoder from explicit layers, checking that shapes chain.
    pub fn from_layers(layers: Vec<Linear>) -> Result<Self> {
        let last = layers.last().ok_or_else(|| Error::config("decoder needs at least one layer"))?;
        if last.fan_out != DECODER_OUTPUTS {
            return Err(Error::shape(DECODER_OUTPUTS, last.fan_out));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weight.len() != l.fan_in * l.fan_out || l.bias.len() != l.fan_out {
                return Err(Error::config(format!("decoder layer {i} has inconsistent buffers")));
            }
            if i > 0 && layers[i - 1].fan_out != l.fan_in {
                return Err(Error::shape(layers[i - 1].fan_out, l.fan_in));
            }
            if l.weight.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("decoder layer {i}")));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Linear] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn zero_grads(&self) -> DecoderGrads {
        DecoderGrads {
            layers: self.layers.iter().map(|l| Linear::zeros(l.fan_in, l.fan_out)).collect(),
        }
    }

    /// Length of the activation record written by [`Self::forward`]: the
    /// input, every hidden activation and the raw output.
    pub fn record_len(&self) -> usize {
        self.input_dim() + self.layers.iter().map(|l| l.fan_out).sum::<usize>()
    }

    /// Runs the network on the input already stored at `record[..input_dim]`,
    /// filling the rest of the record. Returns the raw outputs.
    pub fn forward(&self, record: &mut [f64]) -> [f64; DECODER_OUTPUTS] {
        let mut offset = 0;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let (inputs, rest) = record[offset..].split_at_mut(layer.fan_in);
            let out = &mut rest[..layer.fan_out];
            layer.forward(inputs, out);
            if i != last {
                for v in out.iter_mut() {
                    *v = v.max(0.0);
                }
            }
            offset += layer.fan_in;
        }
        let tail = &record[offset..offset + DECODER_OUTPUTS];
        [tail[0], tail[1], tail[2], tail[3]]
    }

    /// Convenience forward pass that allocates its own record.
    pub fn evaluate(&self, input: &[f64]) -> Result<[f64; DECODER_OUTPUTS]> {
        if input.len() != self.input_dim() {
            return Err(Error::shape(self.input_dim(), input.len()));
        }
        let mut record = vec![0.0; self.record_len()];
        record[..input.len()].copy_from_slice(input);
        Ok(self.forward(&mut record))
    }

    /// Reverse pass through a record produced by [`Self::forward`].
    ///
    /// Accumulates parameter gradients into `grads` and writes the input
    /// adjoint into `d_input`. `scratch` must hold at least twice the widest
    /// layer.
    pub fn backward(
        &self,
        record: &[f64],
        d_out: [f64; DECODER_OUTPUTS],
        grads: &mut DecoderGrads,
        d_input: &mut [f64],
        scratch: &mut Vec<f64>,
    ) {
        let widest = self.layers.iter().map(|l| l.fan_in.max(l.fan_out)).max().unwrap_or(0);
        if scratch.len() < 2 * widest {
            scratch.resize(2 * widest, 0.0);
        }
        let (cur, next) = scratch.split_at_mut(widest);
        cur[..DECODER_OUTPUTS].copy_from_slice(&d_out);

        let mut out_offset = record.len();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            out_offset -= layer.fan_out;
            let in_offset = out_offset - layer.fan_in;
            let x = &record[in_offset..out_offset];
            let dz = &cur[..layer.fan_out];
            let g = &mut grads.layers[i];
            for (gb, d) in g.bias.iter_mut().zip(dz) {
                *gb += d;
            }
            let is_first = i == 0;
            let dx: &mut [f64] = if is_first { &mut *d_input } else { &mut next[..layer.fan_in] };
            for k in 0..layer.fan_in {
                let a = x[k];
                // Hidden inputs with a == 0 sit on the inactive side of the
                // ReLU, so neither their weight gradient nor their adjoint
                // survives.
                if a == 0.0 && !is_first {
                    dx[k] = 0.0;
                    continue;
                }
                let row = &layer.weight[k * layer.fan_out..(k + 1) * layer.fan_out];
                dx[k] = dot(row, dz);
                if a != 0.0 {
                    let grow = &mut g.weight[k * layer.fan_out..(k + 1) * layer.fan_out];
                    for (gw, d) in grow.iter_mut().zip(dz) {
                        *gw += a * d;
                    }
                }
            }
            if !is_first {
                cur[..layer.fan_in].copy_from_slice(&next[..layer.fan_in]);
            }
        }
    }
}
