//! Binary tensor container used for model and quantized-model files.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic   4 bytes  "QALN"
//! version u16
//! count   u32      number of tensor records
//! record:
//!   name_len u16, name bytes (UTF-8)
//!   dtype    u8   0 = f32, 1 = i8
//!   ndim     u8, dims u32 x ndim
//!   n_scales u32, scales f32 x n_scales
//!   payload  f32 x numel (dtype 0) | i8 x numel (dtype 1)
//! ```
//!
//! Reading then re-writing a container reproduces the input byte for byte.

use std::io::{Read, Write};

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"QALN";
pub const FORMAT_VERSION: u16 = 1;

fn container_err(msg: impl Into<String>) -> Error {
    Error::Container { msg: msg.into() }
}

/// Tensor payload, either full-precision or 8-bit.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    F32(Vec<f32>),
    I8(Vec<i8>),
}

impl Payload {
    pub fn len(&self) -> usize {
        match self {
            Payload::F32(v) => v.len(),
            Payload::I8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn dtype_tag(&self) -> u8 {
        match self {
            Payload::F32(_) => 0,
            Payload::I8(_) => 1,
        }
    }
}

/// One named tensor with optional quantization scales.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<u32>,
    pub scales: Vec<f32>,
    pub payload: Payload,
}

impl TensorRecord {
    pub fn f32(name: impl Into<String>, shape: Vec<u32>, data: Vec<f32>) -> Self {
        Self {
            name: name.into(),
            shape,
            scales: Vec::new(),
            payload: Payload::F32(data),
        }
    }

    pub fn i8(name: impl Into<String>, shape: Vec<u32>, scales: Vec<f32>, data: Vec<i8>) -> Self {
        Self {
            name: name.into(),
            shape,
            scales,
            payload: Payload::I8(data),
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().map(|d| *d as usize).product()
    }

    pub fn as_f32(&self) -> Result<&[f32]> {
        match &self.payload {
            Payload::F32(v) => Ok(v),
            Payload::I8(_) => Err(container_err(format!("tensor `{}` is i8, expected f32", self.name))),
        }
    }

    pub fn as_i8(&self) -> Result<&[i8]> {
        match &self.payload {
            Payload::I8(v) => Ok(v),
            Payload::F32(_) => Err(container_err(format!("tensor `{}` is f32, expected i8", self.name))),
        }
    }
}

/// Ordered set of tensor records.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Container {
    pub tensors: Vec<TensorRecord>,
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, t: TensorRecord) {
        self.tensors.push(t);
    }

    pub fn find(&self, name: &str) -> Option<&TensorRecord> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Like [`find`](Self::find) but failing with a container error.
    pub fn get(&self, name: &str) -> Result<&TensorRecord> {
        self.find(name)
            .ok_or_else(|| container_err(format!("missing tensor `{name}`")))
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(&MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for t in &self.tensors {
            if t.numel() != t.payload.len() {
                return Err(container_err(format!(
                    "tensor `{}`: shape {:?} has {} elements but payload holds {}",
                    t.name,
                    t.shape,
                    t.numel(),
                    t.payload.len()
                )));
            }
            let name = t.name.as_bytes();
            if name.len() > u16::MAX as usize {
                return Err(container_err(format!("tensor name too long: {}", t.name)));
            }
            w.write_all(&(name.len() as u16).to_le_bytes())?;
            w.write_all(name)?;
            w.write_all(&[t.payload.dtype_tag()])?;
            w.write_all(&[t.shape.len() as u8])?;
            for d in &t.shape {
                w.write_all(&d.to_le_bytes())?;
            }
            w.write_all(&(t.scales.len() as u32).to_le_bytes())?;
            for s in &t.scales {
                w.write_all(&s.to_le_bytes())?;
            }
            match &t.payload {
                Payload::F32(v) => {
                    for x in v {
                        w.write_all(&x.to_le_bytes())?;
                    }
                }
                Payload::I8(v) => {
                    // i8 slice reinterpreted as bytes, one element each
                    let bytes: Vec<u8> = v.iter().map(|x| *x as u8).collect();
                    w.write_all(&bytes)?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if magic != MAGIC {
            return Err(container_err(format!("bad magic {magic:?}")));
        }
        let version = read_u16(r)?;
        if version != FORMAT_VERSION {
            return Err(container_err(format!("unsupported format version {version}")));
        }
        let count = read_u32(r)? as usize;
        let mut tensors = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let name_len = read_u16(r)? as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| container_err("tensor name is not UTF-8"))?;
            let dtype = read_u8(r)?;
            let ndim = read_u8(r)? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(read_u32(r)?);
            }
            let n_scales = read_u32(r)? as usize;
            let mut scales = Vec::with_capacity(n_scales);
            for _ in 0..n_scales {
                scales.push(f32::from_le_bytes(read_array(r)?));
            }
            let numel: usize = shape.iter().map(|d| *d as usize).product();
            let payload = match dtype {
                0 => {
                    let mut v = Vec::with_capacity(numel);
                    for _ in 0..numel {
                        v.push(f32::from_le_bytes(read_array(r)?));
                    }
                    Payload::F32(v)
                }
                1 => {
                    let mut bytes = vec![0u8; numel];
                    r.read_exact(&mut bytes)?;
                    Payload::I8(bytes.into_iter().map(|b| b as i8).collect())
                }
                other => return Err(container_err(format!("unknown dtype tag {other}"))),
            };
            tensors.push(TensorRecord {
                name,
                shape,
                scales,
                payload,
            });
        }
        Ok(Self { tensors })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cursor = std::io::Cursor::new(bytes);
        let out = Self::read_from(&mut cursor)?;
        if (cursor.position() as usize) < bytes.len() {
            return Err(container_err("trailing bytes after last record"));
        }
        Ok(out)
    }
}

fn read_u8<R: Read>(r: &mut R) -> Result<u8> {
    Ok(read_array::<R, 1>(r)?[0])
}

fn read_u16<R: Read>(r: &mut R) -> Result<u16> {
    Ok(u16::from_le_bytes(read_array(r)?))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

fn read_array<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Container {
        let mut c = Container::new();
        c.push(TensorRecord::f32("embedding", vec![2, 3], vec![0.5, -1.0, 2.0, 0.0, 3.25, -0.125]));
        c.push(TensorRecord::i8(
            "layer0.weight",
            vec![3, 2],
            vec![0.01, 0.02],
            vec![127, -127, 0, 5, -64, 33],
        ));
        c
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = sample();
        let bytes = c.to_bytes().unwrap();
        let back = Container::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        let bytes2 = back.to_bytes().unwrap();
        assert_eq!(bytes, bytes2);
    }

    #[test]
    fn rejects_bad_magic_and_version() {
        let mut bytes = sample().to_bytes().unwrap();
        bytes[0] = b'X';
        assert!(Container::from_bytes(&bytes).is_err());

        let mut bytes = sample().to_bytes().unwrap();
        bytes[4] = 99;
        assert!(Container::from_bytes(&bytes).is_err());
    }

    #[test]
    fn rejects_truncation_and_trailing_bytes() {
        let bytes = sample().to_bytes().unwrap();
        assert!(Container::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(Container::from_bytes(&longer).is_err());
    }

    #[test]
    fn rejects_shape_payload_mismatch_on_write() {
        let mut c = Container::new();
        c.push(TensorRecord::f32("bad", vec![2, 2], vec![1.0]));
        assert!(c.to_bytes().is_err());
    }
}
