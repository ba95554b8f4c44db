//! The SPCK model container.
//!
//! ```text
//! "SPCK"  u32 version  u32 n_classes  u8 kind
//! u32 config_len  config bytes (kind specific)
//! u32 tensor_count
//! per tensor: u16 name_len, UTF-8 name, u32 rank, rank x u32 dims,
//!             prod(dims) x f32
//! ```
//!
//! All integers and floats are little-endian.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::codec::{put_f32, put_u16, put_u32, Reader};
use crate::error::FormatError;

pub const SPCK_MAGIC: [u8; 4] = *b"SPCK";
pub const SPCK_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum ModelKind {
    Cnn,
    Logreg,
    Lda,
    Forest,
}

impl ModelKind {
    pub fn code(self) -> u8 {
        match self {
            ModelKind::Cnn => 0,
            ModelKind::Logreg => 1,
            ModelKind::Lda => 2,
            ModelKind::Forest => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(ModelKind::Cnn),
            1 => Some(ModelKind::Logreg),
            2 => Some(ModelKind::Lda),
            3 => Some(ModelKind::Forest),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Cnn => "cnn",
            ModelKind::Logreg => "logreg",
            ModelKind::Lda => "lda",
            ModelKind::Forest => "forest",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<u32>,
    pub data: Vec<f32>,
}

impl NamedTensor {
    /// Rounds `data` to f32.
    pub fn from_f64(name: &str, dims: &[usize], data: &[f64]) -> Self {
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        NamedTensor {
            name: name.to_string(),
            dims: dims.iter().map(|&d| d as u32).collect(),
            data: data.iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub n_classes: u32,
    pub config: Vec<u8>,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Result<&NamedTensor, FormatError> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| FormatError::InvalidField {
                field: "tensor",
                reason: alloc::format!("missing tensor {name:?}"),
            })
    }

    /// Tensor data as f64, checked against the expected element count.
    pub fn tensor_values(&self, name: &str, expected: usize) -> Result<Vec<f64>, FormatError> {
        let t = self.tensor(name)?;
        if t.data.len() != expected {
            return Err(FormatError::InvalidField {
                field: "tensor",
                reason: alloc::format!("{name:?} has {} values, expected {expected}", t.data.len()),
            });
        }
        Ok(t.to_f64())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&SPCK_MAGIC);
        put_u32(&mut out, SPCK_VERSION);
        put_u32(&mut out, self.n_classes);
        out.push(self.kind.code());
        put_u32(&mut out, self.config.len() as u32);
        out.extend_from_slice(&self.config);
        put_u32(&mut out, self.tensors.len() as u32);
        for t in &self.tensors {
            put_u16(&mut out, t.name.len() as u16);
            out.extend_from_slice(t.name.as_bytes());
            put_u32(&mut out, t.dims.len() as u32);
            for &d in &t.dims {
                put_u32(&mut out, d);
            }
            for &v in &t.data {
                put_f32(&mut out, v);
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = Reader::new(bytes);
        r.magic(SPCK_MAGIC, "SPCK magic")?;
        let version = r.u32("SPCK version")?;
        if version != SPCK_VERSION {
            return Err(FormatError::UnsupportedVersion(version));
        }
        let n_classes = r.u32("n_classes")?;
        let code = r.u8("model kind")?;
        let kind = ModelKind::from_code(code).ok_or_else(|| FormatError::InvalidField {
            field: "model kind",
            reason: alloc::format!("unknown code {code}"),
        })?;
        let config_len = r.u32("config length")? as usize;
        let config = r.take(config_len, "config block")?.to_vec();
        let count = r.u32("tensor count")?;
        let mut tensors: Vec<NamedTensor> = Vec::new();
        for _ in 0..count {
            let name_len = r.u16("tensor name length")? as usize;
            let name = r.utf8(name_len, "tensor name")?;
            if tensors.iter().any(|t| t.name == name) {
                return Err(FormatError::DuplicateId(name));
            }
            let rank = r.u32("tensor rank")? as usize;
            if rank > r.remaining() / 4 {
                return Err(FormatError::Truncated("tensor dims"));
            }
            let mut dims = Vec::with_capacity(rank);
            let mut len = 1usize;
            for _ in 0..rank {
                let d = r.u32("tensor dims")?;
                len = len.checked_mul(d as usize).ok_or(FormatError::Truncated("tensor data"))?;
                dims.push(d);
            }
            let data = r.f32s(len, "tensor data")?;
            tensors.push(NamedTensor { name, dims, data });
        }
        r.finish()?;
        Ok(Checkpoint {
            kind,
            n_classes,
            config,
            tensors,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn sample() -> Checkpoint {
        Checkpoint {
            kind: ModelKind::Logreg,
            n_classes: 2,
            config: vec![1, 2, 3],
            tensors: vec![
                NamedTensor::from_f64("weight", &[2, 3], &[0.5, -1.0, 2.0, 0.0, 1e-3, 7.0]),
                NamedTensor::from_f64("bias", &[2], &[0.25, -0.25]),
            ],
        }
    }

    #[test]
    fn round_trip_is_byte_idempotent() {
        let bytes = sample().encode();
        let back = Checkpoint::decode(&bytes).unwrap();
        assert_eq!(back, sample());
        assert_eq!(back.encode(), bytes);
    }

    #[test]
    fn unknown_version_is_rejected() {
        let mut bytes = sample().encode();
        bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert_eq!(Checkpoint::decode(&bytes), Err(FormatError::UnsupportedVersion(2)));
    }

    #[test]
    fn every_truncation_is_an_error() {
        let bytes = sample().encode();
        for n in 0..bytes.len() {
            assert!(Checkpoint::decode(&bytes[..n]).is_err(), "prefix {n}");
        }
        let mut long = bytes.clone();
        long.push(0);
        assert_eq!(Checkpoint::decode(&long), Err(FormatError::TrailingBytes));
    }
}
