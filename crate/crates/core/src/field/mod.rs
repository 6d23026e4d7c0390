//! Multi-scale triplane field.
//!
//! Levels 1–3 are triplanes of increasing resolution; level 4 is a trivector
//! (three 1-D feature vectors). At stage `m` the fused feature is
//! `h^m(p) = Σ_{k ≤ m} f^k(p)`, which is Fourier-encoded and decoded into a
//! density and an RGB colour.

mod checkpoint;
mod decoder;
mod encoding;
mod grid;

use std::fmt;

use rand::Rng as _;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use decoder::{DecoderGrads, DecoderParams, Linear, DECODER_OUTPUTS};
pub use encoding::{fourier_encode, FourierEncoding};
pub use grid::{sample_trivector, Axis, AxisTap, FeaturePlane, FeatureVectorAxis, PlaneOrientation, PlaneTap};

use crate::error::{Error, Result};
use crate::math::{self, rng_from_seed, Vec3};

/// Number of feature levels (three triplanes and the trivector).
pub const LEVELS: usize = 4;
/// Level that is stored as a trivector rather than planes.
pub const TRIVECTOR_LEVEL: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FourierMode {
    LogSpaced,
    /// Gaussian projection matrix with the given standard deviation.
    RandomProjection { scale: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct FieldConfig {
    pub plane_resolutions: [usize; 3],
    pub vector_resolution: usize,
    pub channels: usize,
    pub fourier_bands: usize,
    pub fourier_mode: FourierMode,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    /// Half-width of the uniform initialisation of feature grids.
    pub feature_init: f64,
    pub seed: u64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            plane_resolutions: [64, 128, 256],
            vector_resolution: 512,
            channels: 32,
            fourier_bands: 2,
            fourier_mode: FourierMode::LogSpaced,
            hidden_width: 64,
            hidden_layers: 3,
            feature_init: 1e-2,
            seed: 0,
        }
    }
}

impl FieldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.plane_resolutions.iter().any(|&n| n == 0) || self.vector_resolution == 0 {
            return Err(Error::config("grid resolutions must be positive"));
        }
        if self.channels == 0 {
            return Err(Error::config("channel count must be positive"));
        }
        if self.hidden_layers > 0 && self.hidden_width == 0 {
            return Err(Error::config("hidden width must be positive"));
        }
        if !(self.feature_init >= 0.0) {
            return Err(Error::config("feature_init must be non-negative"));
        }
        Ok(())
    }
}

/// Centred Gaussian density bias `amplitude · exp(-|p|² / (2 width²))`
/// added to the raw density before the softplus.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DensityBlob {
    pub amplitude: f64,
    pub width: f64,
}

impl Default for DensityBlob {
    fn default() -> Self {
        Self {
            amplitude: 5.0,
            width: 0.2,
        }
    }
}

impl DensityBlob {
    #[inline]
    pub fn at(&self, p: Vec3) -> f64 {
        self.amplitude * (-math::dot(p, p) / (2.0 * self.width * self.width)).exp()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FieldSample {
    /// Density, in inverse length units.
    pub sigma: f64,
    pub rgb: [f64; 3],
}

impl FieldSample {
    pub const EMPTY: FieldSample = FieldSample {
        sigma: 0.0,
        rgb: [0.0; 3],
    };
}

/// Adjoint of one field sample: `∂L/∂σ` and `∂L/∂rgb`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SampleAdjoint {
    pub sigma: f64,
    pub rgb: [f64; 3],
}

/// Identifies one trainable tensor of the field.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TensorId {
    Plane { level: usize, orientation: PlaneOrientation },
    Vector(Axis),
    Weight(usize),
    Bias(usize),
}

impl TensorId {
    /// Feature level owning this tensor; `None` for decoder tensors.
    pub fn level(self) -> Option<usize> {
        match self {
            Self::Plane { level, .. } => Some(level),
            Self::Vector(_) => Some(TRIVECTOR_LEVEL),
            Self::Weight(_) | Self::Bias(_) => None,
        }
    }

    pub fn is_feature(self) -> bool {
        self.level().is_some()
    }

    pub fn parse(name: &str) -> Option<Self> {
        let parts: Vec<&str> = name.split('.').collect();
        match parts.as_slice() {
            ["plane", level, orient] => {
                let level: usize = level.parse().ok()?;
                if !(1..=3).contains(&level) {
                    return None;
                }
                Some(Self::Plane {
                    level,
                    orientation: PlaneOrientation::parse(orient)?,
                })
            }
            ["vector", axis] => Some(Self::Vector(Axis::parse(axis)?)),
            ["decoder", layer, "weight"] => Some(Self::Weight(layer.parse().ok()?)),
            ["decoder", layer, "bias"] => Some(Self::Bias(layer.parse().ok()?)),
            _ => None,
        }
    }
}

impl fmt::Display for TensorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Plane { level, orientation } => write!(f, "plane.{level}.{}", orientation.as_str()),
            Self::Vector(axis) => write!(f, "vector.{}", axis.as_str()),
            Self::Weight(l) => write!(f, "decoder.{l}.weight"),
            Self::Bias(l) => write!(f, "decoder.{l}.bias"),
        }
    }
}

#[inline]
fn plane_index(level: usize, orientation: PlaneOrientation) -> usize {
    (level - 1) * 3 + orientation.index()
}

fn check_stage(stage: usize) -> Result<()> {
    if (1..=LEVELS).contains(&stage) {
        Ok(())
    } else {
        Err(Error::contract(format!("stage {stage} outside 1..={LEVELS}")))
    }
}

#[inline]
fn inside_domain(p: Vec3) -> bool {
    p.iter().all(|c| (-1.0..=1.0).contains(c))
}

/// All trainable state: nine planes, three axis vectors and the decoder.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiScaleField {
    channels: usize,
    /// Level-major, orientation-minor (`plane_index`).
    planes: Vec<FeaturePlane>,
    /// Ordered x, y, z.
    vectors: Vec<FeatureVectorAxis>,
    decoder: DecoderParams,
    encoding: FourierEncoding,
    blob: Option<DensityBlob>,
}

impl MultiScaleField {
    /// Randomly initialised field: features ~ U(-init, init), He-uniform
    /// decoder weights, zero biases.
    pub fn new(config: &FieldConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_from_seed(config.seed);
        let a = config.feature_init;
        let uniform = |len: usize, rng: &mut math::Rng| -> Vec<f64> {
            (0..len)
                .map(|_| if a > 0.0 { rng.random_range(-a..a) } else { 0.0 })
                .collect()
        };
        let c = config.channels;
        let mut planes = Vec::with_capacity(9);
        for level in 1..=3 {
            let n = config.plane_resolutions[level - 1];
            for orientation in PlaneOrientation::ALL {
                planes.push(FeaturePlane::from_texels(level, orientation, n, c, uniform(n * n * c, &mut rng))?);
            }
        }
        let n4 = config.vector_resolution;
        let vectors = Axis::ALL
            .iter()
            .map(|&axis| FeatureVectorAxis::from_values(axis, n4, c, uniform(n4 * c, &mut rng)))
            .collect::<Result<Vec<_>>>()?;
        let encoding = match config.fourier_mode {
            FourierMode::LogSpaced => FourierEncoding::log_spaced(config.fourier_bands),
            FourierMode::RandomProjection { scale } => {
                FourierEncoding::random_projection(config.fourier_bands, c, scale, &mut rng)?
            }
        };
        let decoder = DecoderParams::new(
            encoding.output_dim(c),
            config.hidden_width,
            config.hidden_layers,
            &mut rng,
        )?;
        Self::from_parts(planes, vectors, decoder, encoding)
    }

    /// Field with every trainable scalar set to zero.
    pub fn zeros(config: &FieldConfig) -> Result<Self> {
        let mut field = Self::new(config)?;
        field.for_each_tensor_mut(|_, data| data.fill(0.0));
        Ok(field)
    }

    pub fn from_parts(
        planes: Vec<FeaturePlane>,
        vectors: Vec<FeatureVectorAxis>,
        decoder: DecoderParams,
        encoding: FourierEncoding,
    ) -> Result<Self> {
        if planes.len() != 9 || vectors.len() != 3 {
            return Err(Error::config("expected nine planes and three axis vectors"));
        }
        let channels = planes[0].channels();
        for level in 1..=3 {
            for orientation in PlaneOrientation::ALL {
                let p = &planes[plane_index(level, orientation)];
                if p.level() != level || p.orientation() != orientation {
                    return Err(Error::config("planes must be ordered by level then orientation"));
                }
                if p.channels() != channels {
                    return Err(Error::shape(channels, p.channels()));
                }
            }
            let n = planes[plane_index(level, PlaneOrientation::Xy)].resolution();
            if planes[(level - 1) * 3..level * 3].iter().any(|p| p.resolution() != n) {
                return Err(Error::config(format!("level {level} planes differ in resolution")));
            }
        }
        for (axis, v) in Axis::ALL.iter().zip(&vectors) {
            if v.axis() != *axis || v.channels() != channels {
                return Err(Error::config("axis vectors must be ordered x, y, z with matching channels"));
            }
        }
        if vectors.iter().any(|v| v.resolution() != vectors[0].resolution()) {
            return Err(Error::config("axis vectors differ in resolution"));
        }
        if let FourierEncoding::RandomProjection { channels: pc, .. } = &encoding {
            if *pc != channels {
                return Err(Error::shape(channels, pc));
            }
        }
        let expected = encoding.output_dim(channels);
        if decoder.input_dim() != expected {
            return Err(Error::shape(
                format!("decoder input {expected}"),
                format!("decoder input {}", decoder.input_dim()),
            ));
        }
        Ok(Self {
            channels,
            planes,
            vectors,
            decoder,
            encoding,
            blob: None,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn planes(&self) -> &[FeaturePlane] {
        &self.planes
    }

    pub fn plane(&self, level: usize, orientation: PlaneOrientation) -> &FeaturePlane {
        &self.planes[plane_index(level, orientation)]
    }

    pub fn plane_mut(&mut self, level: usize, orientation: PlaneOrientation) -> &mut FeaturePlane {
        &mut self.planes[plane_index(level, orientation)]
    }

    pub fn vectors(&self) -> &[FeatureVectorAxis] {
        &self.vectors
    }

    pub fn vector_mut(&mut self, axis: Axis) -> &mut FeatureVectorAxis {
        &mut self.vectors[axis.index()]
    }

    pub fn decoder(&self) -> &DecoderParams {
        &self.decoder
    }

    pub fn decoder_mut(&mut self) -> &mut DecoderParams {
        &mut self.decoder
    }

    pub fn encoding(&self) -> &FourierEncoding {
        &self.encoding
    }

    pub fn blob(&self) -> Option<DensityBlob> {
        self.blob
    }

    pub fn set_blob(&mut self, blob: Option<DensityBlob>) {
        self.blob = blob;
    }

    /// Every trainable tensor id in a fixed order.
    pub fn tensor_ids(&self) -> Vec<TensorId> {
        let mut ids = Vec::with_capacity(12 + 2 * self.decoder.layers().len());
        for level in 1..=3 {
            for orientation in PlaneOrientation::ALL {
                ids.push(TensorId::Plane { level, orientation });
            }
        }
        ids.extend(Axis::ALL.iter().map(|&a| TensorId::Vector(a)));
        for l in 0..self.decoder.layers().len() {
            ids.push(TensorId::Weight(l));
            ids.push(TensorId::Bias(l));
        }
        ids
    }

    pub fn tensor(&self, id: TensorId) -> Option<&[f64]> {
        match id {
            TensorId::Plane { level, orientation } if (1..=3).contains(&level) => {
                Some(self.plane(level, orientation).texels())
            }
            TensorId::Plane { .. } => None,
            TensorId::Vector(axis) => Some(self.vectors[axis.index()].values()),
            TensorId::Weight(l) => self.decoder.layers().get(l).map(|x| x.weight.as_slice()),
            TensorId::Bias(l) => self.decoder.layers().get(l).map(|x| x.bias.as_slice()),
        }
    }

    pub fn tensor_mut(&mut self, id: TensorId) -> Option<&mut [f64]> {
        match id {
            TensorId::Plane { level, orientation } if (1..=3).contains(&level) => {
                Some(self.plane_mut(level, orientation).texels_mut())
            }
            TensorId::Plane { .. } => None,
            TensorId::Vector(axis) => Some(self.vectors[axis.index()].values_mut()),
            TensorId::Weight(l) => self.decoder.layers_mut().get_mut(l).map(|x| x.weight.as_mut_slice()),
            TensorId::Bias(l) => self.decoder.layers_mut().get_mut(l).map(|x| x.bias.as_mut_slice()),
        }
    }

    pub fn for_each_tensor_mut(&mut self, mut f: impl FnMut(TensorId, &mut [f64])) {
        for id in self.tensor_ids() {
            if let Some(data) = self.tensor_mut(id) {
                f(id, data);
            }
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.tensor_ids().into_iter().filter_map(|id| self.tensor(id)).map(<[f64]>::len).sum()
    }

    pub fn is_frozen(&self, id: TensorId) -> bool {
        match id {
            TensorId::Plane { level, orientation } => self.plane(level, orientation).frozen,
            TensorId::Vector(axis) => self.vectors[axis.index()].frozen,
            TensorId::Weight(_) | TensorId::Bias(_) => false,
        }
    }

    pub fn set_level_frozen(&mut self, level: usize, frozen: bool) {
        if level == TRIVECTOR_LEVEL {
            self.vectors.iter_mut().for_each(|v| v.frozen = frozen);
        } else if (1..=3).contains(&level) {
            self.planes[(level - 1) * 3..level * 3].iter_mut().for_each(|p| p.frozen = frozen);
        }
    }

    /// Freezes every level below `stage` and unfreezes the rest.
    pub fn freeze_below(&mut self, stage: usize) {
        for level in 1..=LEVELS {
            self.set_level_frozen(level, level < stage);
        }
    }

    /// Checksum over the bytes of every tensor owned by `level`.
    pub fn level_checksum(&self, level: usize) -> u64 {
        let mut all = Vec::new();
        if level == TRIVECTOR_LEVEL {
            for v in &self.vectors {
                all.extend_from_slice(v.values());
            }
        } else {
            for p in &self.planes[(level - 1) * 3..level * 3] {
                all.extend_from_slice(p.texels());
            }
        }
        math::checksum(&all)
    }

    /// Adds `f^level(p)` into `out`.
    pub fn accumulate_level(&self, level: usize, p: Vec3, out: &mut [f64]) {
        if level == TRIVECTOR_LEVEL {
            for v in &self.vectors {
                v.accumulate(&v.tap(p[v.axis().index()]), out);
            }
        } else {
            for plane in &self.planes[(level - 1) * 3..level * 3] {
                let (u, v) = plane.orientation().project(p);
                plane.accumulate(&plane.tap(u, v), out);
            }
        }
    }

    /// The level feature `f^level(p)`.
    pub fn level_feature(&self, level: usize, p: Vec3) -> Vec<f64> {
        let mut out = vec![0.0; self.channels];
        self.accumulate_level(level, p, &mut out);
        out
    }

    /// Fused feature `h^stage(p) = Σ_{k ≤ stage} f^k(p)`.
    pub fn fuse_features(&self, p: Vec3, stage: usize) -> Result<Vec<f64>> {
        check_stage(stage)?;
        let mut out = vec![0.0; self.channels];
        for level in 1..=stage {
            for (o, f) in out.iter_mut().zip(self.level_feature(level, p)) {
                *o += f;
            }
        }
        Ok(out)
    }

    /// Decodes an encoded feature vector at `p` (the position only matters
    /// for the density blob).
    pub fn decode(&self, encoded: &[f64], p: Vec3) -> Result<FieldSample> {
        let raw = self.decoder.evaluate(encoded)?;
        Ok(self.activate(raw, p).0)
    }

    #[inline]
    fn activate(&self, raw: [f64; DECODER_OUTPUTS], p: Vec3) -> (FieldSample, f64) {
        let pre = raw[0] + self.blob.map_or(0.0, |b| b.at(p));
        let sample = FieldSample {
            sigma: math::softplus(pre),
            rgb: [math::sigmoid(raw[1]), math::sigmoid(raw[2]), math::sigmoid(raw[3])],
        };
        (sample, pre)
    }

    /// Field value at `p` for stage `stage`; zero outside `[-1, 1]³`.
    pub fn forward(&self, p: Vec3, stage: usize) -> Result<FieldSample> {
        check_stage(stage)?;
        Ok(self.evaluate_with(p, stage, &mut EvalScratch::default()))
    }

    /// Forward pass for a batch of points, recording everything the reverse
    /// pass needs.
    pub fn forward_batch(&self, points: &[Vec3], stage: usize) -> Result<(Vec<FieldSample>, FieldTape)> {
        check_stage(stage)?;
        let mut tape = FieldTape::new(self, stage);
        let samples = points.iter().map(|&p| self.forward_recorded(p, &mut tape)).collect();
        Ok((samples, tape))
    }

    /// Shared forward core. `h` has `channels` entries and `record` is a
    /// decoder record; taps are captured when requested.
    #[inline]
    fn eval_core(
        &self,
        p: Vec3,
        stage: usize,
        h: &mut [f64],
        record: &mut [f64],
        mut taps: Option<&mut PointTaps>,
    ) -> (FieldSample, f64) {
        h.iter_mut().for_each(|v| *v = 0.0);
        let c = self.channels;
        let mut level_buf = [0.0f64; 64];
        let mut level_heap = Vec::new();
        let f: &mut [f64] = if c <= level_buf.len() {
            &mut level_buf[..c]
        } else {
            level_heap.resize(c, 0.0);
            &mut level_heap
        };
        for level in 1..=stage {
            f.iter_mut().for_each(|v| *v = 0.0);
            if level == TRIVECTOR_LEVEL {
                for v in &self.vectors {
                    let tap = v.tap(p[v.axis().index()]);
                    v.accumulate(&tap, f);
                    if let Some(t) = taps.as_deref_mut() {
                        t.vectors[v.axis().index()] = tap;
                    }
                }
            } else {
                for orientation in PlaneOrientation::ALL {
                    let idx = plane_index(level, orientation);
                    let plane = &self.planes[idx];
                    let (u, v) = orientation.project(p);
                    let tap = plane.tap(u, v);
                    plane.accumulate(&tap, f);
                    if let Some(t) = taps.as_deref_mut() {
                        t.planes[idx] = tap;
                    }
                }
            }
            for (hv, fv) in h.iter_mut().zip(f.iter()) {
                *hv += fv;
            }
        }
        let enc_len = self.decoder.input_dim();
        self.encoding.encode_into(h, &mut record[..enc_len]);
        let raw = self.decoder.forward(record);
        self.activate(raw, p)
    }

    /// Evaluates one point without recording, using caller-owned buffers.
    pub fn evaluate_with(&self, p: Vec3, stage: usize, scratch: &mut EvalScratch) -> FieldSample {
        if !inside_domain(p) {
            return FieldSample::EMPTY;
        }
        scratch.h.resize(self.channels, 0.0);
        scratch.record.resize(self.decoder.record_len(), 0.0);
        self.eval_core(p, stage, &mut scratch.h, &mut scratch.record, None).0
    }

    /// Evaluates one point and appends its record to `tape`.
    pub fn forward_recorded(&self, p: Vec3, tape: &mut FieldTape) -> FieldSample {
        if !inside_domain(p) {
            tape.entries.push(TapeEntry::Outside);
            return FieldSample::EMPTY;
        }
        let rec_len = tape.record_len;
        let start = tape.records.len();
        tape.records.resize(start + rec_len, 0.0);
        let mut taps = PointTaps::default();
        let (sample, pre) = self.eval_core(
            p,
            tape.stage,
            &mut tape.h_scratch,
            &mut tape.records[start..start + rec_len],
            Some(&mut taps),
        );
        tape.taps.push(taps);
        tape.entries.push(TapeEntry::Inside {
            record: start,
            taps: tape.taps.len() - 1,
            density_pre: pre,
        });
        sample
    }

    /// Reverse pass over `tape`, accumulating into `grads`.
    ///
    /// Fails if the adjoint count does not match the recorded forward pass or
    /// if the gradient buffers were allocated for a different stage.
    pub fn backward(&self, tape: &FieldTape, adjoints: &[SampleAdjoint], grads: &mut FieldGrads) -> Result<()> {
        if adjoints.len() != tape.len() {
            return Err(Error::contract(format!(
                "backward with {} adjoints over a tape of {} samples",
                adjoints.len(),
                tape.len()
            )));
        }
        if tape.stage != grads.stage || tape.record_len != self.decoder.record_len() {
            return Err(Error::contract("tape and gradient buffers come from different forward passes"));
        }
        let mut scratch = Vec::new();
        let mut d_enc = vec![0.0; self.decoder.input_dim()];
        let mut d_h = vec![0.0; self.channels];
        for (i, adj) in adjoints.iter().enumerate() {
            self.backward_entry(tape, i, adj, grads, &mut scratch, &mut d_enc, &mut d_h);
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn backward_entry(
        &self,
        tape: &FieldTape,
        index: usize,
        adj: &SampleAdjoint,
        grads: &mut FieldGrads,
        scratch: &mut Vec<f64>,
        d_enc: &mut [f64],
        d_h: &mut [f64],
    ) {
        let TapeEntry::Inside {
            record,
            taps,
            density_pre,
        } = &tape.entries[index]
        else {
            return;
        };
        if adj.sigma == 0.0 && adj.rgb == [0.0; 3] {
            return;
        }
        let taps = &tape.taps[*taps];
        let rec = &tape.records[*record..*record + tape.record_len];
        let raw = &rec[rec.len() - DECODER_OUTPUTS..];
        let mut d_out = [adj.sigma * math::sigmoid(*density_pre), 0.0, 0.0, 0.0];
        for ch in 0..3 {
            let s = math::sigmoid(raw[ch + 1]);
            d_out[ch + 1] = adj.rgb[ch] * s * (1.0 - s);
        }
        self.decoder.backward(rec, d_out, &mut grads.decoder, d_enc, scratch);

        if !grads.any_features() {
            return;
        }
        d_h.iter_mut().for_each(|v| *v = 0.0);
        let enc_len = d_enc.len();
        self.encoding.backward(&rec[..enc_len], d_enc, d_h);
        for level in 1..=tape.stage.min(3) {
            for orientation in PlaneOrientation::ALL {
                let idx = plane_index(level, orientation);
                if let Some(g) = grads.planes[idx].as_mut() {
                    FeaturePlane::scatter_grad(&taps.planes[idx], d_h, g);
                }
            }
        }
        if tape.stage == TRIVECTOR_LEVEL {
            for (axis, g) in grads.vectors.iter_mut().enumerate() {
                if let Some(g) = g.as_mut() {
                    FeatureVectorAxis::scatter_grad(&taps.vectors[axis], d_h, g);
                }
            }
        }
    }
}

/// Reusable buffers for [`MultiScaleField::evaluate_with`].
#[derive(Clone, Debug, Default)]
pub struct EvalScratch {
    h: Vec<f64>,
    record: Vec<f64>,
}

#[derive(Clone, Debug, Default)]
struct PointTaps {
    planes: [PlaneTap; 9],
    vectors: [AxisTap; 3],
}

#[derive(Clone, Debug)]
enum TapeEntry {
    Outside,
    Inside {
        record: usize,
        taps: usize,
        density_pre: f64,
    },
}

/// Recorded forward pass for a sequence of points at one stage.
#[derive(Clone, Debug)]
pub struct FieldTape {
    stage: usize,
    record_len: usize,
    entries: Vec<TapeEntry>,
    records: Vec<f64>,
    taps: Vec<PointTaps>,
    h_scratch: Vec<f64>,
}

impl FieldTape {
    pub fn new(field: &MultiScaleField, stage: usize) -> Self {
        Self {
            stage,
            record_len: field.decoder.record_len(),
            entries: Vec::new(),
            records: Vec::new(),
            taps: Vec::new(),
            h_scratch: vec![0.0; field.channels],
        }
    }

    pub fn stage(&self) -> usize {
        self.stage
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
        self.records.clear();
        self.taps.clear();
    }
}

/// Gradient buffers for one stage. Tensors that cannot receive gradient
/// (frozen, or at a level above the stage) have no buffer at all.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldGrads {
    stage: usize,
    planes: Vec<Option<Vec<f64>>>,
    vectors: Vec<Option<Vec<f64>>>,
    decoder: DecoderGrads,
}

impl FieldGrads {
    pub fn for_stage(field: &MultiScaleField, stage: usize) -> Result<Self> {
        check_stage(stage)?;
        let planes = field
            .planes
            .iter()
            .map(|p| (p.level() <= stage && !p.frozen).then(|| vec![0.0; p.texels().len()]))
            .collect();
        let vectors = field
            .vectors
            .iter()
            .map(|v| (stage == TRIVECTOR_LEVEL && !v.frozen).then(|| vec![0.0; v.values().len()]))
            .collect();
        Ok(Self {
            stage,
            planes,
            vectors,
            decoder: field.decoder.zero_grads(),
        })
    }

    pub fn stage(&self) -> usize {
        self.stage
    }

    fn any_features(&self) -> bool {
        self.planes.iter().chain(&self.vectors).any(Option::is_some)
    }

    /// Gradient for `id`, or `None` when no buffer exists for it.
    pub fn get(&self, id: TensorId) -> Option<&[f64]> {
        match id {
            TensorId::Plane { level, orientation } if (1..=3).contains(&level) => {
                self.planes[plane_index(level, orientation)].as_deref()
            }
            TensorId::Plane { .. } => None,
            TensorId::Vector(axis) => self.vectors[axis.index()].as_deref(),
            TensorId::Weight(l) => self.decoder.layers.get(l).map(|x| x.weight.as_slice()),
            TensorId::Bias(l) => self.decoder.layers.get(l).map(|x| x.bias.as_slice()),
        }
    }

    pub fn get_mut(&mut self, id: TensorId) -> Option<&mut [f64]> {
        match id {
            TensorId::Plane { level, orientation } if (1..=3).contains(&level) => {
                self.planes[plane_index(level, orientation)].as_deref_mut()
            }
            TensorId::Plane { .. } => None,
            TensorId::Vector(axis) => self.vectors[axis.index()].as_deref_mut(),
            TensorId::Weight(l) => self.decoder.layers.get_mut(l).map(|x| x.weight.as_mut_slice()),
            TensorId::Bias(l) => self.decoder.layers.get_mut(l).map(|x| x.bias.as_mut_slice()),
        }
    }

    /// Ids that carry a gradient buffer, in field order.
    pub fn ids(&self) -> Vec<TensorId> {
        let mut ids = Vec::new();
        for level in 1..=3 {
            for orientation in PlaneOrientation::ALL {
                if self.planes[plane_index(level, orientation)].is_some() {
                    ids.push(TensorId::Plane { level, orientation });
                }
            }
        }
        for axis in Axis::ALL {
            if self.vectors[axis.index()].is_some() {
                ids.push(TensorId::Vector(axis));
            }
        }
        for l in 0..self.decoder.layers.len() {
            ids.push(TensorId::Weight(l));
            ids.push(TensorId::Bias(l));
        }
        ids
    }

    pub fn norm(&self) -> f64 {
        let features: f64 = self
            .planes
            .iter()
            .chain(&self.vectors)
            .flatten()
            .flat_map(|g| g.iter())
            .map(|g| g * g)
            .sum();
        (features + self.decoder.norm_sq()).sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for id in self.ids() {
            if let Some(g) = self.get_mut(id) {
                g.iter_mut().for_each(|v| *v *= factor);
            }
        }
    }

    /// Adds `other` into `self`. Both must come from the same stage.
    pub fn add_assign(&mut self, other: &FieldGrads) -> Result<()> {
        if other.stage != self.stage {
            return Err(Error::contract("adding gradients from different stages"));
        }
        for id in other.ids() {
            if let (Some(dst), Some(src)) = (self.get_mut(id), other.get(id)) {
                dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
            }
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.norm() == 0.0
    }
}
