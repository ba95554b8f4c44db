//! SPCE: the container for precomputed utterance embeddings.
//!
//! ```text
//! "SPCE"  u32 version = 1  u32 dim  u32 count
//! count x { u16 id_len, UTF-8 id, dim x f32 }
//! ```
//!
//! Little-endian throughout; records are written in ascending id order, so
//! equal record sets always produce equal bytes.

use alloc::string::String;
use alloc::vec::Vec;

use crate::codec::{put_f32, put_u16, put_u32, Reader};
use crate::error::FormatError;

pub const SPCE_MAGIC: [u8; 4] = *b"SPCE";
pub const SPCE_VERSION: u32 = 1;
pub const SPCE_HEADER_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub utterance_id: String,
    pub vector: Vec<f32>,
}

impl EmbeddingRecord {
    pub fn new(utterance_id: impl Into<String>, vector: Vec<f32>) -> Self {
        EmbeddingRecord {
            utterance_id: utterance_id.into(),
            vector,
        }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.vector.iter().map(|&v| v as f64).collect()
    }
}

/// Checks the record invariants and returns the records sorted by id.
pub fn canonicalize(records: &[EmbeddingRecord], dim: usize) -> Result<Vec<&EmbeddingRecord>, FormatError> {
    if dim == 0 {
        return Err(FormatError::InvalidField {
            field: "dim",
            reason: String::from("must be at least 1"),
        });
    }
    let mut sorted: Vec<&EmbeddingRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.utterance_id.cmp(&b.utterance_id));
    for w in sorted.windows(2) {
        if w[0].utterance_id == w[1].utterance_id {
            return Err(FormatError::DuplicateId(w[0].utterance_id.clone()));
        }
    }
    for r in &sorted {
        if r.vector.len() != dim {
            return Err(FormatError::DimensionMismatch {
                id: r.utterance_id.clone(),
                expected: dim,
                actual: r.vector.len(),
            });
        }
        if r.utterance_id.len() > u16::MAX as usize {
            return Err(FormatError::InvalidField {
                field: "utterance_id",
                reason: alloc::format!("{} bytes exceeds the u16 length prefix", r.utterance_id.len()),
            });
        }
        if r.vector.iter().any(|v| !v.is_finite()) {
            return Err(FormatError::InvalidField {
                field: "vector",
                reason: alloc::format!("record {:?} has a non-finite value", r.utterance_id),
            });
        }
    }
    Ok(sorted)
}

pub fn encode_embeddings(records: &[EmbeddingRecord], dim: usize) -> Result<Vec<u8>, FormatError> {
    let sorted = canonicalize(records, dim)?;
    let mut out = Vec::with_capacity(SPCE_HEADER_LEN + sorted.len() * (2 + 4 * dim));
    out.extend_from_slice(&SPCE_MAGIC);
    put_u32(&mut out, SPCE_VERSION);
    put_u32(&mut out, dim as u32);
    put_u32(&mut out, sorted.len() as u32);
    for r in sorted {
        put_u16(&mut out, r.utterance_id.len() as u16);
        out.extend_from_slice(r.utterance_id.as_bytes());
        for &v in &r.vector {
            put_f32(&mut out, v);
        }
    }
    Ok(out)
}

/// Decodes and validates an SPCE buffer; returns `(dim, records)`.
///
/// Allocation is bounded by the input length, whatever the header claims.
pub fn decode_embeddings(bytes: &[u8]) -> Result<(usize, Vec<EmbeddingRecord>), FormatError> {
    let mut r = Reader::new(bytes);
    r.magic(SPCE_MAGIC, "SPCE magic")?;
    let version = r.u32("SPCE version")?;
    if version != SPCE_VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let dim = r.u32("dim")? as usize;
    if dim == 0 {
        return Err(FormatError::InvalidField {
            field: "dim",
            reason: String::from("must be at least 1"),
        });
    }
    let count = r.u32("count")? as usize;
    // Each record needs at least 2 + 4 * dim bytes.
    let min_record = dim.saturating_mul(4).saturating_add(2);
    if count > r.remaining() / min_record {
        return Err(FormatError::Truncated("embedding records"));
    }
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let id_len = r.u16("utterance id length")? as usize;
        let utterance_id = r.utf8(id_len, "utterance_id")?;
        let vector = r.f32s(dim, "embedding vector")?;
        records.push(EmbeddingRecord { utterance_id, vector });
    }
    r.finish()?;
    for w in records.windows(2) {
        if w[0].utterance_id >= w[1].utterance_id {
            return Err(if w[0].utterance_id == w[1].utterance_id {
                FormatError::DuplicateId(w[1].utterance_id.clone())
            } else {
                FormatError::InvalidField {
                    field: "utterance_id",
                    reason: String::from("records are not in ascending id order"),
                }
            });
        }
    }
    if let Some(bad) = records.iter().find(|rec| rec.vector.iter().any(|v| !v.is_finite())) {
        return Err(FormatError::InvalidField {
            field: "vector",
            reason: alloc::format!("record {:?} has a non-finite value", bad.utterance_id),
        });
    }
    Ok((dim, records))
}
