//! Binary checkpoint container for a set of named networks.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic        8 bytes  "SCRFCKPT"
//! version      u32      1
//! networks     u32      count
//! per network:
//!   name_len   u32, then name_len bytes of UTF-8
//!   layers     u32
//!   per layer:
//!     in       u32
//!     out      u32
//!     act      u8       0 = relu, 1 = identity
//!     weights  out*in f64, row-major (out × in)
//!     bias     out f64
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::matrix::Matrix;
use super::mlp::{Activation, DenseLayer, Mlp};
use crate::error::{Result, ScarfError};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SCRFCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

fn activation_tag(a: Activation) -> u8 {
    match a {
        Activation::Relu => 0,
        Activation::Identity => 1,
    }
}

fn tag_activation(tag: u8) -> Result<Activation> {
    match tag {
        0 => Ok(Activation::Relu),
        1 => Ok(Activation::Identity),
        t => Err(ScarfError::Parse(format!("unknown activation tag {t}"))),
    }
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| ScarfError::Validation(format!("{what} {v} does not fit in u32")))
}

pub fn encode_checkpoint(networks: &[(&str, &Mlp)]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&to_u32(networks.len(), "network count")?.to_le_bytes());
    for (name, net) in networks {
        out.extend_from_slice(&to_u32(name.len(), "name length")?.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&to_u32(net.layers().len(), "layer count")?.to_le_bytes());
        for layer in net.layers() {
            out.extend_from_slice(&to_u32(layer.input_width(), "layer width")?.to_le_bytes());
            out.extend_from_slice(&to_u32(layer.output_width(), "layer width")?.to_le_bytes());
            out.push(activation_tag(layer.activation));
            for v in layer.weights.data().iter().chain(&layer.bias) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| ScarfError::Parse(format!("checkpoint truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let len = n
            .checked_mul(8)
            .ok_or_else(|| ScarfError::Parse("checkpoint array length overflows".into()))?;
        let b = self.take(len)?;
        Ok(b.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Vec<(String, Mlp)>> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(8)? != CHECKPOINT_MAGIC {
        return Err(ScarfError::Parse("not a checkpoint (bad magic)".into()));
    }
    let version = c.u32()? as u32;
    if version != CHECKPOINT_VERSION {
        return Err(ScarfError::Parse(format!("unsupported checkpoint version {version}")));
    }
    let count = c.u32()?;
    let mut nets = Vec::new();
    for _ in 0..count {
        let name_len = c.u32()?;
        let name = std::str::from_utf8(c.take(name_len)?)
            .map_err(|e| ScarfError::Parse(format!("network name: {e}")))?
            .to_string();
        let n_layers = c.u32()?;
        let mut layers = Vec::new();
        for _ in 0..n_layers {
            let input = c.u32()?;
            let output = c.u32()?;
            let act = tag_activation(c.take(1)?[0])?;
            let weights = Matrix::from_vec(output, input, c.f64s(output * input)?)?;
            let bias = c.f64s(output)?;
            layers.push(DenseLayer::new(weights, bias, act)?);
        }
        nets.push((name, Mlp::new(layers)?));
    }
    if c.pos != bytes.len() {
        return Err(ScarfError::Parse(format!(
            "{} trailing bytes after checkpoint",
            bytes.len() - c.pos
        )));
    }
    Ok(nets)
}

pub fn save_checkpoint(path: impl AsRef<Path>, networks: &[(&str, &Mlp)]) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(networks)?;
    let mut f = std::fs::File::create(path).map_err(|e| ScarfError::io(path, e))?;
    f.write_all(&bytes).map_err(|e| ScarfError::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Vec<(String, Mlp)>> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| ScarfError::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = Mlp::init(&[5, 7, 7, 7], Activation::Relu, &mut rng).unwrap();
        let h = Mlp::init(&[7, 2], Activation::Identity, &mut rng).unwrap();
        let bytes = encode_checkpoint(&[("f", &f), ("h", &h)]).unwrap();
        assert_eq!(&bytes[..8], b"SCRFCKPT");
        let back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].0, "f");
        assert_eq!(back[0].1, f);
        assert_eq!(back[1].1, h);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = Mlp::init(&[2, 3, 3], Activation::Relu, &mut rng).unwrap();
        let bytes = encode_checkpoint(&[("f", &f)]).unwrap();
        assert!(decode_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_checkpoint(&extra).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_checkpoint(&bad).is_err());
        let mut ver = bytes;
        ver[8] = 2;
        assert!(decode_checkpoint(&ver).is_err());
    }
}
