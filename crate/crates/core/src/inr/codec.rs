//! Binary model format.
//!
//! Little-endian throughout:
//!
//! ```text
//! magic   8 bytes  "SSPNPINR"
//! version u32      1
//! kind    u8       0 = phi, 1 = sine, 2 = relu
//! coeffs  4 × f64  phi: a1 b1 a2 b2; sine: first_omega hidden_omega 0 0; relu: 0 0 0 0
//! layers  u32
//! per layer:
//!   rows  u32, cols u32
//!   weight rows·cols × f64 (row-major, in × out)
//!   bias   cols × f64
//! ```
//!
//! Values are stored as raw IEEE-754 bits, so a round trip is bit-exact.

use std::path::Path;

use super::activation::{Activation, PhiParams};
use super::model::{DenoiserModel, Layer};
use crate::error::{Error, Result};
use crate::ndgrad::Tensor;

const MAGIC: &[u8; 8] = b"SSPNPINR";
const VERSION: u32 = 1;

pub fn encode(model: &DenoiserModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let (kind, coeffs) = match model.activation() {
        Activation::Phi(p) => (0u8, [p.a1, p.b1, p.a2, p.b2]),
        Activation::Sine {
            first_omega,
            hidden_omega,
        } => (1u8, [first_omega, hidden_omega, 0.0, 0.0]),
        Activation::Relu => (2u8, [0.0; 4]),
    };
    out.push(kind);
    for c in coeffs {
        out.extend_from_slice(&c.to_le_bytes());
    }
    out.extend_from_slice(&(model.layers().len() as u32).to_le_bytes());
    for layer in model.layers() {
        out.extend_from_slice(&(layer.in_dim() as u32).to_le_bytes());
        out.extend_from_slice(&(layer.out_dim() as u32).to_le_bytes());
        for v in layer.weight.data().iter().chain(layer.bias.data()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Contract(format!(
                "model data truncated at byte {} (wanted {n} more)",
                self.pos
            ))),
        }
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
}

pub fn decode(bytes: &[u8]) -> Result<DenoiserModel> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Contract("not a denoiser model (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Contract(format!("unsupported model version {version}")));
    }
    let kind = r.u8()?;
    let c = [r.f64()?, r.f64()?, r.f64()?, r.f64()?];
    let activation = match kind {
        0 => Activation::Phi(PhiParams {
            a1: c[0],
            b1: c[1],
            a2: c[2],
            b2: c[3],
        }),
        1 => Activation::Sine {
            first_omega: c[0],
            hidden_omega: c[1],
        },
        2 => Activation::Relu,
        k => return Err(Error::Contract(format!("unknown activation kind {k}"))),
    };
    let n_layers = r.u32()? as usize;
    let mut layers = Vec::with_capacity(n_layers.min(64));
    for _ in 0..n_layers {
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let weight = Tensor::new([rows, cols], r.f64s(rows * cols)?)?;
        let bias = Tensor::new([1, cols], r.f64s(cols)?)?;
        layers.push(Layer { weight, bias });
    }
    if r.pos != bytes.len() {
        return Err(Error::Contract(format!(
            "{} trailing bytes after model",
            bytes.len() - r.pos
        )));
    }
    DenoiserModel::from_layers(layers, activation)
}

pub fn save_model(model: &DenoiserModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<DenoiserModel> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}
