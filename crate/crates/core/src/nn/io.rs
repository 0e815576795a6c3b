//! "ASNM" model files.
//!
//! Layout (little-endian):
//!
//! ```text
//! b"ASNM" | version: u32 | descriptor_len: u32 | descriptor: UTF-8
//! tensor_count: u32
//! per tensor: name_len: u32 | name: UTF-8 | dims: 4 x u32 | data: f32 x product(dims)
//! ```
//!
//! The descriptor is the architecture text plus a `step <n>` line.

use std::fs;
use std::path::Path;

use super::graph::{Architecture, ModelWeights};
use super::tensor::{Shape, Tensor};
use crate::error::{bail, Error, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"ASNM";
pub const MODEL_VERSION: u32 = 1;

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            bail!(Parse, "unexpected end of data at byte {}", self.pos);
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Parse("invalid UTF-8".into()))
    }

    pub(crate) fn finished(&self) -> bool {
        self.pos == self.buf.len()
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

pub fn encode_model(weights: &ModelWeights) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    let descriptor = format!("{}step {}\n", weights.architecture().to_text(), weights.step());
    put_str(&mut out, &descriptor);
    let tensors: Vec<_> = weights.named_tensors().collect();
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        put_str(&mut out, name);
        for d in t.shape().dims() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_model(bytes: &[u8]) -> Result<ModelWeights> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != MODEL_MAGIC {
        bail!(Parse, "not an ASNM model file");
    }
    let version = r.u32()?;
    if version != MODEL_VERSION {
        bail!(Parse, "unsupported model version {version}");
    }
    let descriptor = r.string()?;
    let mut step = None;
    let mut arch_text = String::new();
    for line in descriptor.lines() {
        match line.strip_prefix("step ") {
            Some(v) => step = Some(v.trim().parse().map_err(|_| Error::Parse("bad step".into()))?),
            None => {
                arch_text.push_str(line);
                arch_text.push('\n');
            }
        }
    }
    let step = step.ok_or_else(|| Error::Parse("descriptor lacks a step line".into()))?;
    let arch = Architecture::from_text(&arch_text)?;
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name = r.string()?;
        let d: Vec<usize> = (0..4).map(|_| r.u32().map(|v| v as usize)).collect::<Result<_>>()?;
        let shape = Shape::new(d[0], d[1], d[2], d[3]);
        let raw = r.take(shape.len().checked_mul(4).ok_or_else(|| Error::Parse("tensor too large".into()))?)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        tensors.push((name, Tensor::from_vec(shape, data)?));
    }
    if !r.finished() {
        bail!(Parse, "trailing bytes after model tensors");
    }
    ModelWeights::from_parts(arch, tensors, step)
}

pub fn save_model(path: impl AsRef<Path>, weights: &ModelWeights) -> Result<()> {
    fs::write(path, encode_model(weights))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelWeights> {
    decode_model(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LayerSpec;

    fn small() -> ModelWeights {
        let arch = Architecture::chain(
            1,
            vec![
                LayerSpec::conv("a", 1, 64, 3),
                LayerSpec::Relu,
                LayerSpec::residual("r"),
                LayerSpec::conv("b", 64, 1, 5),
            ],
        );
        ModelWeights::init(arch, 7).unwrap()
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let m = small();
        let bytes = encode_model(&m);
        let back = decode_model(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(encode_model(&back), bytes);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = encode_model(&small());
        assert!(decode_model(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_model(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(decode_model(&extra).is_err());
    }
}
