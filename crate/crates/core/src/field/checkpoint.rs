//! Binary checkpoint container.
//!
//! Layout (all integers little-endian `u32`):
//!
//! ```text
//! "MTNF" | version | tensor count |
//!   { name length | name bytes | rank | dims[rank] | f32 LE data }*
//! ```
//!
//! Tensors are written in [`MultiScaleField::tensor_ids`] order, followed by
//! `fourier.projection` when the random-projection encoding is in use.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{
    Axis, DecoderParams, FeaturePlane, FeatureVectorAxis, FourierEncoding, Linear, MultiScaleField,
    PlaneOrientation, TensorId,
};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MTNF";
pub const CHECKPOINT_VERSION: u32 = 1;
const PROJECTION_NAME: &str = "fourier.projection";

struct RawTensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

fn write_u32(w: &mut impl Write, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("value {v} exceeds u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b) as usize)
}

fn write_tensor(w: &mut impl Write, name: &str, dims: &[usize], data: &[f64]) -> Result<()> {
    write_u32(w, name.len())?;
    w.write_all(name.as_bytes())?;
    write_u32(w, dims.len())?;
    for &d in dims {
        write_u32(w, d)?;
    }
    for &v in data {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

fn tensor_dims(field: &MultiScaleField, id: TensorId) -> Vec<usize> {
    let c = field.channels();
    match id {
        TensorId::Plane { level, orientation } => {
            let n = field.plane(level, orientation).resolution();
            vec![n, n, c]
        }
        TensorId::Vector(_) => vec![field.vectors()[0].resolution(), c],
        TensorId::Weight(l) => {
            let layer = &field.decoder().layers()[l];
            vec![layer.fan_in, layer.fan_out]
        }
        TensorId::Bias(l) => vec![field.decoder().layers()[l].fan_out],
    }
}

/// Serialises the field's parameters. Values are stored as `f32`.
pub fn write_checkpoint(field: &MultiScaleField, w: &mut impl Write) -> Result<()> {
    let ids = field.tensor_ids();
    let projection = match field.encoding() {
        FourierEncoding::RandomProjection { projection, .. } => Some(projection),
        FourierEncoding::LogSpaced { .. } => None,
    };
    w.write_all(CHECKPOINT_MAGIC)?;
    write_u32(w, CHECKPOINT_VERSION as usize)?;
    write_u32(w, ids.len() + usize::from(projection.is_some()))?;
    for id in ids {
        let data = field.tensor(id).expect("listed tensor exists");
        write_tensor(w, &id.to_string(), &tensor_dims(field, id), data)?;
    }
    if let Some(p) = projection {
        let c = field.channels();
        write_tensor(w, PROJECTION_NAME, &[p.len() / c, c], p)?;
    }
    Ok(())
}

pub fn save_checkpoint(field: &MultiScaleField, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(field, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<MultiScaleField> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = read_u32(r)?;
    if version != CHECKPOINT_VERSION as usize {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let count = read_u32(r)?;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let name_len = read_u32(r)?;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let rank = read_u32(r)?;
        let dims = (0..rank).map(|_| read_u32(r)).collect::<Result<Vec<_>>>()?;
        let len = dims.iter().product::<usize>();
        let mut bytes = vec![0u8; len * 4];
        r.read_exact(&mut bytes)?;
        let data = bytes
            .chunks_exact(4)
            .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
            .collect();
        if tensors.insert(name.clone(), RawTensor { dims, data }).is_some() {
            return Err(Error::Format(format!("duplicate tensor {name}")));
        }
    }
    build_field(tensors)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<MultiScaleField> {
    read_checkpoint(&mut BufReader::new(File::open(path)?))
}

fn take(tensors: &mut BTreeMap<String, RawTensor>, name: &str, rank: usize) -> Result<RawTensor> {
    let t = tensors
        .remove(name)
        .ok_or_else(|| Error::Format(format!("missing tensor {name}")))?;
    if t.dims.len() != rank {
        return Err(Error::Format(format!("tensor {name} has rank {}, expected {rank}", t.dims.len())));
    }
    Ok(t)
}

fn build_field(mut tensors: BTreeMap<String, RawTensor>) -> Result<MultiScaleField> {
    let mut planes = Vec::with_capacity(9);
    for level in 1..=3 {
        for orientation in PlaneOrientation::ALL {
            let name = TensorId::Plane { level, orientation }.to_string();
            let t = take(&mut tensors, &name, 3)?;
            if t.dims[0] != t.dims[1] {
                return Err(Error::Format(format!("plane {name} is not square")));
            }
            planes.push(FeaturePlane::from_texels(level, orientation, t.dims[0], t.dims[2], t.data)?);
        }
    }
    let vectors = Axis::ALL
        .iter()
        .map(|&axis| {
            let t = take(&mut tensors, &TensorId::Vector(axis).to_string(), 2)?;
            FeatureVectorAxis::from_values(axis, t.dims[0], t.dims[1], t.data)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut layers = Vec::new();
    while tensors.contains_key(&TensorId::Weight(layers.len()).to_string()) {
        let l = layers.len();
        let w = take(&mut tensors, &TensorId::Weight(l).to_string(), 2)?;
        let b = take(&mut tensors, &TensorId::Bias(l).to_string(), 1)?;
        layers.push(Linear {
            fan_in: w.dims[0],
            fan_out: w.dims[1],
            weight: w.data,
            bias: b.data,
        });
    }
    let decoder = DecoderParams::from_layers(layers)?;

    let channels = planes[0].channels();
    let encoding = match tensors.remove(PROJECTION_NAME) {
        Some(p) => {
            if p.dims.len() != 2 || p.dims[1] != channels || p.dims[0] % channels != 0 {
                return Err(Error::Format("malformed fourier projection".into()));
            }
            FourierEncoding::RandomProjection {
                bands: p.dims[0] / channels,
                projection: p.data,
                channels,
            }
        }
        None => {
            let input = decoder.input_dim();
            if input % channels != 0 || (input / channels) % 2 == 0 {
                return Err(Error::Format(format!(
                    "decoder input {input} is not an encoding width for {channels} channels"
                )));
            }
            FourierEncoding::log_spaced((input / channels - 1) / 2)
        }
    };
    if let Some(name) = tensors.keys().next() {
        return Err(Error::Format(format!("unknown tensor {name}")));
    }
    MultiScaleField::from_parts(planes, vectors, decoder, encoding)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{FieldConfig, FourierMode};

    fn small_config() -> FieldConfig {
        FieldConfig {
            plane_resolutions: [4, 6, 8],
            vector_resolution: 10,
            channels: 3,
            hidden_width: 8,
            hidden_layers: 2,
            seed: 5,
            ..FieldConfig::default()
        }
    }

    fn bytes(field: &MultiScaleField) -> Vec<u8> {
        let mut out = Vec::new();
        write_checkpoint(field, &mut out).unwrap();
        out
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        for mode in [FourierMode::LogSpaced, FourierMode::RandomProjection { scale: 2.0 }] {
            let field = MultiScaleField::new(&FieldConfig {
                fourier_mode: mode,
                ..small_config()
            })
            .unwrap();
            let first = bytes(&field);
            assert_eq!(&first[..4], b"MTNF");
            let loaded = read_checkpoint(&mut first.as_slice()).unwrap();
            assert_eq!(loaded.encoding().bands(), field.encoding().bands());
            assert_eq!(bytes(&loaded), first);
        }
    }

    #[test]
    fn loaded_values_are_f32_rounded() {
        let field = MultiScaleField::new(&small_config()).unwrap();
        let loaded = read_checkpoint(&mut bytes(&field).as_slice()).unwrap();
        for id in field.tensor_ids() {
            for (a, b) in field.tensor(id).unwrap().iter().zip(loaded.tensor(id).unwrap()) {
                assert_eq!(*a as f32 as f64, *b);
            }
        }
    }

    #[test]
    fn rejects_corrupt_input() {
        let field = MultiScaleField::new(&small_config()).unwrap();
        let mut data = bytes(&field);
        data[0] = b'X';
        assert!(read_checkpoint(&mut data.as_slice()).is_err());
        let data = bytes(&field);
        assert!(read_checkpoint(&mut &data[..data.len() - 3]).is_err());
    }
}
