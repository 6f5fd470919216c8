//! Binary model checkpoints.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "PWC1" | u32 version = 1 | u32 layer count
//! per layer: u8 tag (0 pointconv, 1 relu, 2 pool, 3 dense), then
//!   pointconv: f32 radius, u8 resolution, u8 geometry (0 ball, 1 cube),
//!              u32 C_in, u32 C_out, f32 weights [C_out][C_in][K], f32 bias [C_out]
//!   dense:     u32 C_in, u32 C_out, f32 weights [C_out][C_in], f32 bias [C_out]
//!   relu/pool: nothing
//! u32 CRC32 of every preceding byte
//! ```
//!
//! Parameters are always stored in single precision; optimizer moments are
//! not stored.

use std::path::Path;

use crate::error::{CheckpointError, Error, Result};
use crate::net::{DenseParams, LayerParams, LayerSpec, ModelState, NetworkSpec, Params};
use crate::pointconv::{ConvParams, Geometry};
use crate::real::Real;

pub const MAGIC: [u8; 4] = *b"PWC1";
pub const VERSION: u32 = 1;

const TAG_POINTCONV: u8 = 0;
const TAG_RELU: u8 = 1;
const TAG_POOL: u8 = 2;
const TAG_DENSE: u8 = 3;

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_f32s<T: Real>(buf: &mut Vec<u8>, vs: &[T]) {
    for v in vs {
        buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
}

pub fn encode_checkpoint<T: Real>(state: &ModelState<T>, spec: &NetworkSpec) -> Result<Vec<u8>> {
    crate::net::check_params(spec, &state.params)?;
    let mut buf = Vec::new();
    buf.extend_from_slice(&MAGIC);
    put_u32(&mut buf, VERSION);
    put_u32(&mut buf, spec.layers.len() as u32);
    for (layer, params) in spec.layers.iter().zip(&state.params.layers) {
        match (layer, params) {
            (
                LayerSpec::PointConv {
                    radius,
                    resolution,
                    geometry,
                    ..
                },
                LayerParams::Conv(p),
            ) => {
                buf.push(TAG_POINTCONV);
                buf.extend_from_slice(&radius.to_le_bytes());
                buf.push(*resolution);
                buf.push(geometry.tag());
                put_u32(&mut buf, p.c_in as u32);
                put_u32(&mut buf, p.c_out as u32);
                put_f32s(&mut buf, &p.weights);
                put_f32s(&mut buf, &p.bias);
            }
            (LayerSpec::Dense { .. }, LayerParams::Dense(p)) => {
                buf.push(TAG_DENSE);
                put_u32(&mut buf, p.c_in as u32);
                put_u32(&mut buf, p.c_out as u32);
                put_f32s(&mut buf, &p.weights);
                put_f32s(&mut buf, &p.bias);
            }
            (LayerSpec::Relu, _) => buf.push(TAG_RELU),
            (LayerSpec::GlobalAvgPool, _) => buf.push(TAG_POOL),
            _ => unreachable!("checked above"),
        }
    }
    let crc = crc32fast::hash(&buf);
    put_u32(&mut buf, crc);
    Ok(buf)
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.at.checked_add(n).ok_or(CheckpointError::Truncated)?;
        let s = self.bytes.get(self.at..end).ok_or(CheckpointError::Truncated)?;
        self.at = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32, CheckpointError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32s<T: Real>(&mut self, n: usize) -> Result<Vec<T>, CheckpointError> {
        let raw = self.take(n.checked_mul(4).ok_or(CheckpointError::Truncated)?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|b| T::from_f64(f32::from_le_bytes(b.try_into().unwrap()) as f64))
            .collect())
    }
}

pub fn decode_checkpoint<T: Real>(bytes: &[u8]) -> Result<(ModelState<T>, NetworkSpec)> {
    if bytes.len() < 4 {
        return Err(CheckpointError::Truncated.into());
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic(magic).into());
    }
    if bytes.len() < 16 {
        return Err(CheckpointError::Truncated.into());
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(CheckpointError::Version(version).into());
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(CheckpointError::Checksum { stored, computed }.into());
    }

    let malformed = |m: String| Error::from(CheckpointError::Malformed(m));
    let mut r = Reader { bytes: body, at: 8 };
    let count = r.u32()? as usize;
    let mut layers = Vec::new();
    let mut params = Vec::new();
    for i in 0..count {
        match r.u8()? {
            TAG_POINTCONV => {
                let radius = r.f32()?;
                let resolution = r.u8()?;
                let geometry = Geometry::from_tag(r.u8()?)
                    .ok_or_else(|| malformed(format!("layer {i}: unknown geometry")))?;
                let c_in = r.u32()? as usize;
                let c_out = r.u32()? as usize;
                let cells = (resolution as usize).pow(3);
                let weights = r.f32s(c_out * c_in * cells)?;
                let bias = r.f32s(c_out)?;
                layers.push(LayerSpec::PointConv {
                    radius,
                    resolution,
                    geometry,
                    c_out,
                });
                params.push(LayerParams::Conv(ConvParams {
                    c_in,
                    c_out,
                    cells,
                    weights,
                    bias,
                }));
            }
            TAG_DENSE => {
                let c_in = r.u32()? as usize;
                let c_out = r.u32()? as usize;
                let weights = r.f32s(c_out * c_in)?;
                let bias = r.f32s(c_out)?;
                layers.push(LayerSpec::Dense { c_out });
                params.push(LayerParams::Dense(DenseParams {
                    c_in,
                    c_out,
                    weights,
                    bias,
                }));
            }
            TAG_RELU => {
                layers.push(LayerSpec::Relu);
                params.push(LayerParams::None);
            }
            TAG_POOL => {
                layers.push(LayerSpec::GlobalAvgPool);
                params.push(LayerParams::None);
            }
            t => return Err(malformed(format!("layer {i}: unknown tag {t}"))),
        }
    }
    if r.at != body.len() {
        return Err(malformed(format!("{} trailing bytes", body.len() - r.at)));
    }
    let input_channels = params
        .iter()
        .find_map(|p| match p {
            LayerParams::Conv(c) => Some(c.c_in),
            LayerParams::Dense(d) => Some(d.c_in),
            LayerParams::None => None,
        })
        .ok_or_else(|| malformed("no parameterized layer".into()))?;
    let mut spec = NetworkSpec {
        layers,
        input_channels,
        classes: 0,
        bias: true,
    };
    let chain = spec.channel_chain().map_err(|e| malformed(e.to_string()))?;
    spec.classes = chain.last().map_or(0, |c| c.1);
    spec.validate().map_err(|e| malformed(e.to_string()))?;
    let params = Params { layers: params };
    crate::net::check_params(&spec, &params).map_err(|e| malformed(e.to_string()))?;
    Ok((ModelState::from_params(params), spec))
}

pub fn save_checkpoint<T: Real>(state: &ModelState<T>, spec: &NetworkSpec, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(state, spec)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Real>(path: impl AsRef<Path>) -> Result<(ModelState<T>, NetworkSpec)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
