//! Binary checkpoint container for [`Network`].
//!
//! All integers are little-endian `u32`, all parameters little-endian IEEE
//! `f32`:
//!
//! ```text
//! magic        8 bytes  "SSIMADV\0"
//! version      u32      FORMAT_VERSION
//! input        u32 x 3  channels, height, width
//! layer count  u32
//! per layer:
//!   tag        u8       0 = conv2d, 1 = dense, 2 = relu
//!   conv2d:    u32 x 4  in_channels, out_channels, kernel, stride
//!              f32 x (out * in * kernel * kernel) weights, [out][in][ky][kx]
//!              f32 x out                          bias
//!   dense:     u32 x 2  inputs, outputs
//!              f32 x (outputs * inputs)           weights, [out][in]
//!              f32 x outputs                      bias
//! ```
//!
//! Parameters are held as `f64` in memory and narrowed to `f32` on save.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{Conv2d, Dense, Layer, Network};
use crate::error::{Error, Result};
use crate::image::Shape;

pub const MAGIC: &[u8; 8] = b"SSIMADV\0";
pub const FORMAT_VERSION: u32 = 1;

const TAG_CONV: u8 = 0;
const TAG_DENSE: u8 = 1;
const TAG_RELU: u8 = 2;

// Guards allocations driven by header fields.
const MAX_ELEMENTS: usize = 1 << 28;

pub fn write_checkpoint<W: Write>(net: &Network, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
    let input = net.input;
    for dim in [input.channels, input.height, input.width] {
        w.write_u32::<LittleEndian>(to_u32(dim)?)?;
    }
    w.write_u32::<LittleEndian>(to_u32(net.layers.len())?)?;
    for layer in &net.layers {
        match layer {
            Layer::Conv2d(c) => {
                w.write_u8(TAG_CONV)?;
                for v in [c.in_channels, c.out_channels, c.kernel, c.stride] {
                    w.write_u32::<LittleEndian>(to_u32(v)?)?;
                }
                write_f32s(&mut w, &c.weight)?;
                write_f32s(&mut w, &c.bias)?;
            }
            Layer::Dense(d) => {
                w.write_u8(TAG_DENSE)?;
                w.write_u32::<LittleEndian>(to_u32(d.inputs)?)?;
                w.write_u32::<LittleEndian>(to_u32(d.outputs)?)?;
                write_f32s(&mut w, &d.weight)?;
                write_f32s(&mut w, &d.bias)?;
            }
            Layer::Relu => w.write_u8(TAG_RELU)?,
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Network> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("not an ssimadv checkpoint".into()));
    }
    let version = read_u32(&mut r)?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let input = Shape::new(read_usize(&mut r)?, read_usize(&mut r)?, read_usize(&mut r)?);
    let count = read_usize(&mut r)?;
    let mut layers = Vec::new();
    for _ in 0..count {
        let tag = r.read_u8().map_err(truncated)?;
        layers.push(match tag {
            TAG_CONV => {
                let (in_channels, out_channels) = (read_usize(&mut r)?, read_usize(&mut r)?);
                let (kernel, stride) = (read_usize(&mut r)?, read_usize(&mut r)?);
                let weight = read_f32s(&mut r, checked_product(&[out_channels, in_channels, kernel, kernel])?)?;
                let bias = read_f32s(&mut r, out_channels)?;
                Layer::Conv2d(Conv2d { in_channels, out_channels, kernel, stride, weight, bias })
            }
            TAG_DENSE => {
                let (inputs, outputs) = (read_usize(&mut r)?, read_usize(&mut r)?);
                let weight = read_f32s(&mut r, checked_product(&[inputs, outputs])?)?;
                let bias = read_f32s(&mut r, outputs)?;
                Layer::Dense(Dense { inputs, outputs, weight, bias })
            }
            TAG_RELU => Layer::Relu,
            other => return Err(Error::Checkpoint(format!("unknown layer tag {other}"))),
        });
    }
    Network::from_layers(input, layers).map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn save_checkpoint(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    write_checkpoint(net, BufWriter::new(File::create(path)?))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Network> {
    read_checkpoint(BufReader::new(File::open(path)?))
}

fn to_u32(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Checkpoint(format!("dimension {v} does not fit in u32")))
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Truncated("checkpoint ended early".into())
    } else {
        Error::Io(e)
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    r.read_u32::<LittleEndian>().map_err(truncated)
}

fn read_usize<R: Read>(r: &mut R) -> Result<usize> {
    Ok(read_u32(r)? as usize)
}

fn checked_product(dims: &[usize]) -> Result<usize> {
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .filter(|&n| n <= MAX_ELEMENTS)
        .ok_or_else(|| Error::Checkpoint(format!("implausible layer dimensions {dims:?}")))
}

fn write_f32s<W: Write>(w: &mut W, values: &[f64]) -> Result<()> {
    for &v in values {
        w.write_f32::<LittleEndian>(v as f32)?;
    }
    Ok(())
}

fn read_f32s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0f32; n];
    r.read_f32_into::<LittleEndian>(&mut buf).map_err(truncated)?;
    Ok(buf.into_iter().map(f64::from).collect())
}
