//! Time–frequency frontends: the learnable Gabor/PCEN filterbank and a fixed
//! log-mel baseline, plus the SPFM debugging dump of a feature map.

mod gabor;
mod logmel;

pub use gabor::{
    gabor_backward, gabor_forward, gabor_forward_traced, init_gabor_mel, FrontendGrads,
    GaborFrontendParams, GaborTrace, ParamGroup, DEFAULT_CHANNELS, DEFAULT_FILTER_LEN, DEFAULT_FMAX,
    DEFAULT_FMIN, DEFAULT_HOP,
};
pub use logmel::{logmel_forward, mel_filterbank, LOGMEL_FLOOR, LOGMEL_FMAX, LOGMEL_FMIN};

use alloc::vec;
use alloc::vec::Vec;

use crate::error::FormatError;
use crate::{Error, Result};

/// Channel-major feature matrix `[n_channels x n_frames]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub n_channels: usize,
    pub n_frames: usize,
    pub frame_rate: f64,
    pub values: Vec<f64>,
}

impl FeatureMap {
    pub fn new(n_channels: usize, n_frames: usize, frame_rate: f64, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_channels * n_frames {
            return Err(Error::ShapeMismatch {
                context: "feature map values",
                expected: n_channels * n_frames,
                actual: values.len(),
            });
        }
        Ok(FeatureMap {
            n_channels,
            n_frames,
            frame_rate,
            values,
        })
    }

    pub fn zeros(n_channels: usize, n_frames: usize, frame_rate: f64) -> Self {
        FeatureMap {
            n_channels,
            n_frames,
            frame_rate,
            values: vec![0.0; n_channels * n_frames],
        }
    }

    pub fn row(&self, channel: usize) -> &[f64] {
        &self.values[channel * self.n_frames..(channel + 1) * self.n_frames]
    }

    pub fn row_mut(&mut self, channel: usize) -> &mut [f64] {
        &mut self.values[channel * self.n_frames..(channel + 1) * self.n_frames]
    }

    pub fn get(&self, channel: usize, frame: usize) -> f64 {
        self.values[channel * self.n_frames + frame]
    }

    /// The first `n_frames` frames of every channel.
    pub fn prefix(&self, n_frames: usize) -> FeatureMap {
        let n = n_frames.min(self.n_frames);
        let mut values = Vec::with_capacity(self.n_channels * n);
        for c in 0..self.n_channels {
            values.extend_from_slice(&self.row(c)[..n]);
        }
        FeatureMap {
            n_channels: self.n_channels,
            n_frames: n,
            frame_rate: self.frame_rate,
            values,
        }
    }

    /// Appends `extra` all-zero frames to every channel.
    pub fn zero_padded(&self, extra: usize) -> FeatureMap {
        let n = self.n_frames + extra;
        let mut values = vec![0.0; self.n_channels * n];
        for c in 0..self.n_channels {
            values[c * n..c * n + self.n_frames].copy_from_slice(self.row(c));
        }
        FeatureMap {
            n_channels: self.n_channels,
            n_frames: n,
            frame_rate: self.frame_rate,
            values,
        }
    }

    pub fn channel_means(&self) -> Vec<f64> {
        (0..self.n_channels)
            .map(|c| self.row(c).iter().sum::<f64>() / self.n_frames.max(1) as f64)
            .collect()
    }
}

const SPFM_MAGIC: [u8; 4] = *b"SPFM";
const SPFM_VERSION: u32 = 1;

/// `"SPFM"`, u32 version, u32 channels, u32 frames, then row-major f32 LE.
pub fn encode_spfm(map: &FeatureMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * map.values.len());
    out.extend_from_slice(&SPFM_MAGIC);
    out.extend_from_slice(&SPFM_VERSION.to_le_bytes());
    out.extend_from_slice(&(map.n_channels as u32).to_le_bytes());
    out.extend_from_slice(&(map.n_frames as u32).to_le_bytes());
    for v in &map.values {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

/// Inverse of [`encode_spfm`]; the frame rate is not stored and comes back as 0.
pub fn decode_spfm(bytes: &[u8]) -> Result<FeatureMap, FormatError> {
    if bytes.len() < 16 {
        return Err(FormatError::Truncated("SPFM header"));
    }
    let magic = [bytes[0], bytes[1], bytes[2], bytes[3]];
    if magic != SPFM_MAGIC {
        return Err(FormatError::BadMagic {
            expected: SPFM_MAGIC,
            found: magic,
        });
    }
    let word = |at: usize| u32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]]);
    let version = word(4);
    if version != SPFM_VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let n_channels = word(8) as usize;
    let n_frames = word(12) as usize;
    let expected = n_channels
        .checked_mul(n_frames)
        .and_then(|n| n.checked_mul(4))
        .ok_or(FormatError::Truncated("SPFM values"))?;
    let body = &bytes[16..];
    if body.len() < expected {
        return Err(FormatError::Truncated("SPFM values"));
    }
    if body.len() > expected {
        return Err(FormatError::TrailingBytes);
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok(FeatureMap {
        n_channels,
        n_frames,
        frame_rate: 0.0,
        values,
    })
}
