//! Binary model files.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic      b"DSNM"
//! version    u32   (MODEL_FORMAT_VERSION)
//! convention u8    (0 classical, 1 inverted)
//! keep_prob  f64
//! position   u32
//! epoch      u64
//! val_error  f64
//! layers     u32
//! per layer: activation u8 (0 relu, 1 linear, 2 softmax), input u32, output u32,
//!            weights f64 × output·input (row-major), bias f64 × output
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{Activation, Convention, DropoutGate, Layer, NetworkParams};
use crate::error::{Error, Result};
use crate::tensor::{Matrix, Vector};

pub const MODEL_FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"DSNM";

/// A trained network together with its gate and checkpoint metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub params: NetworkParams,
    pub gate: DropoutGate,
    pub epoch: u64,
    pub val_error: f64,
}

pub fn write_model<W: Write>(model: &Model, out: &mut W) -> std::io::Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&MODEL_FORMAT_VERSION.to_le_bytes())?;
    out.write_all(&[match model.gate.convention() {
        Convention::Classical => 0,
        Convention::Inverted => 1,
    }])?;
    out.write_all(&model.gate.keep_prob().to_le_bytes())?;
    out.write_all(&(model.gate.position() as u32).to_le_bytes())?;
    out.write_all(&model.epoch.to_le_bytes())?;
    out.write_all(&model.val_error.to_le_bytes())?;
    let layers = model.params.layers();
    out.write_all(&(layers.len() as u32).to_le_bytes())?;
    for layer in layers {
        out.write_all(&[match layer.activation {
            Activation::Relu => 0,
            Activation::Linear => 1,
            Activation::Softmax => 2,
        }])?;
        out.write_all(&(layer.weights.cols() as u32).to_le_bytes())?;
        out.write_all(&(layer.weights.rows() as u32).to_le_bytes())?;
        for v in layer.weights.as_slice().iter().chain(layer.bias.iter()) {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() < n {
            return Err(Error::Format("model file ends early".into()));
        }
        let (head, tail) = self.bytes.split_at(n);
        self.bytes = tail;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn read_model<R: Read>(input: &mut R) -> Result<Model> {
    let mut bytes = Vec::new();
    input
        .read_to_end(&mut bytes)
        .map_err(|e| Error::Format(format!("read failed: {e}")))?;
    let mut cur = Cursor { bytes: &bytes };
    if cur.take(4)? != MAGIC {
        return Err(Error::Format("not a model file (bad magic)".into()));
    }
    let version = cur.u32()?;
    if version != MODEL_FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported model format version {version}")));
    }
    let convention = match cur.u8()? {
        0 => Convention::Classical,
        1 => Convention::Inverted,
        c => return Err(Error::Format(format!("unknown convention tag {c}"))),
    };
    let p = cur.f64()?;
    let position = cur.u32()? as usize;
    let epoch = cur.u64()?;
    let val_error = cur.f64()?;
    let count = cur.u32()? as usize;
    let mut layers = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let activation = match cur.u8()? {
            0 => Activation::Relu,
            1 => Activation::Linear,
            2 => Activation::Softmax,
            a => return Err(Error::Format(format!("unknown activation tag {a}"))),
        };
        let input = cur.u32()? as usize;
        let output = cur.u32()? as usize;
        let mut values = |n: usize| -> Result<Vec<f64>> { (0..n).map(|_| cur.f64()).collect() };
        let weights = Matrix::new(output, input, values(output * input)?)?;
        let bias = Vector::new(values(output)?);
        layers.push(Layer::new(activation, weights, bias)?);
    }
    if !cur.bytes.is_empty() {
        return Err(Error::Format("trailing bytes after model".into()));
    }
    let params = NetworkParams::new(layers)?;
    let gate = DropoutGate::new(position, p, convention)?;
    gate.check(&params)?;
    Ok(Model {
        params,
        gate,
        epoch,
        val_error,
    })
}

pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_model(model, &mut buf).expect("writing to a Vec cannot fail");
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_model(&mut bytes.as_slice())
}
