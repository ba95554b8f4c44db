//! Waveform container, RIFF/WAVE codec and rational-ratio resampling.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use libm::{ceil, round, sin};

use crate::dsp::kaiser;
use crate::{Error, Result};

/// Mono waveform with unit-scale samples.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub source_id: String,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32, source_id: impl Into<String>) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::invalid("sample_rate", "must be positive"));
        }
        if samples.is_empty() {
            return Err(Error::Empty("audio samples"));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("audio samples"));
        }
        Ok(AudioClip {
            samples,
            sample_rate,
            source_id: source_id.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WavError {
    #[error("malformed WAV header: field `{field}` {reason}")]
    MalformedHeader { field: &'static str, reason: String },
    #[error("unsupported WAV encoding: field `{field}` has value {value}")]
    UnsupportedEncoding { field: &'static str, value: u32 },
    #[error("WAV file contains no samples")]
    NoSamples,
    #[error("non-finite sample at frame {0}")]
    NonFiniteSample(usize),
}

fn malformed(field: &'static str, reason: &str) -> WavError {
    WavError::MalformedHeader {
        field,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleEncoding {
    Pcm16,
    Float32,
}

/// Diagnostics gathered while decoding; out-of-range float samples are kept
/// as-is and only counted here.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadReport {
    pub channels: u16,
    pub encoding: SampleEncoding,
    pub out_of_range: usize,
}

struct WavFormat {
    encoding: SampleEncoding,
    channels: u16,
    sample_rate: u32,
    block_align: u16,
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

fn parse_fmt(body: &[u8]) -> Result<WavFormat, WavError> {
    if body.len() < 16 {
        return Err(malformed("fmt ", "chunk shorter than 16 bytes"));
    }
    let code = u16_at(body, 0);
    let channels = u16_at(body, 2);
    let sample_rate = u32_at(body, 4);
    let block_align = u16_at(body, 12);
    let bits = u16_at(body, 14);
    let encoding = match (code, bits) {
        (1, 16) => SampleEncoding::Pcm16,
        (3, 32) => SampleEncoding::Float32,
        (1, b) | (3, b) => {
            return Err(WavError::UnsupportedEncoding {
                field: "bits_per_sample",
                value: b as u32,
            })
        }
        (c, _) => {
            return Err(WavError::UnsupportedEncoding {
                field: "audio_format",
                value: c as u32,
            })
        }
    };
    if !(1..=2).contains(&channels) {
        return Err(WavError::UnsupportedEncoding {
            field: "num_channels",
            value: channels as u32,
        });
    }
    if sample_rate == 0 {
        return Err(malformed("sample_rate", "is zero"));
    }
    if block_align as u32 != channels as u32 * bits as u32 / 8 {
        return Err(malformed("block_align", "disagrees with channels and bits_per_sample"));
    }
    Ok(WavFormat {
        encoding,
        channels,
        sample_rate,
        block_align,
    })
}

/// Decodes every channel of a RIFF/WAVE byte buffer.
pub fn decode_wav_channels(bytes: &[u8]) -> Result<(Vec<Vec<f64>>, u32, SampleEncoding), WavError> {
    if bytes.len() < 12 {
        return Err(malformed("riff", "file shorter than the RIFF header"));
    }
    if &bytes[0..4] != b"RIFF" {
        return Err(malformed("riff", "missing RIFF tag"));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(malformed("wave", "missing WAVE form type"));
    }
    let mut pos = 12;
    let mut format = None;
    let mut data = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        let body_end = body_start
            .checked_add(size)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| {
                if id == b"data" {
                    malformed("data", "chunk extends past end of file")
                } else {
                    malformed("chunk_size", "chunk extends past end of file")
                }
            })?;
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => format = Some(parse_fmt(body)?),
            b"data" => data = Some(body),
            _ => {}
        }
        pos = body_end + (size & 1);
    }
    let format = format.ok_or_else(|| malformed("fmt ", "chunk not found"))?;
    let data = data.ok_or_else(|| malformed("data", "chunk not found"))?;
    let align = format.block_align as usize;
    if data.len() % align != 0 {
        return Err(malformed("data", "length is not a multiple of block_align"));
    }
    let frames = data.len() / align;
    if frames == 0 {
        return Err(WavError::NoSamples);
    }
    let n_ch = format.channels as usize;
    let mut channels = vec![Vec::with_capacity(frames); n_ch];
    for (f, frame) in data.chunks_exact(align).enumerate() {
        for (c, ch) in channels.iter_mut().enumerate() {
            let v = match format.encoding {
                SampleEncoding::Pcm16 => i16::from_le_bytes([frame[2 * c], frame[2 * c + 1]]) as f64 / 32768.0,
                SampleEncoding::Float32 => {
                    let at = 4 * c;
                    f32::from_le_bytes([frame[at], frame[at + 1], frame[at + 2], frame[at + 3]]) as f64
                }
            };
            if !v.is_finite() {
                return Err(WavError::NonFiniteSample(f));
            }
            ch.push(v);
        }
    }
    Ok((channels, format.sample_rate, format.encoding))
}

/// Averages channels sample by sample.
pub fn downmix(channels: &[Vec<f64>]) -> Vec<f64> {
    match channels {
        [mono] => mono.clone(),
        [left, right] => left.iter().zip(right).map(|(l, r)| (l + r) / 2.0).collect(),
        _ => {
            let n = channels.len() as f64;
            (0..channels[0].len())
                .map(|i| channels.iter().map(|c| c[i]).sum::<f64>() / n)
                .collect()
        }
    }
}

/// Decodes a WAV buffer into a mono clip (stereo is averaged).
pub fn decode_wav(bytes: &[u8], source_id: impl Into<String>) -> Result<(AudioClip, LoadReport)> {
    let (channels, rate, encoding) = decode_wav_channels(bytes)?;
    let samples = downmix(&channels);
    let out_of_range = samples.iter().filter(|s| s.abs() > 1.0).count();
    let report = LoadReport {
        channels: channels.len() as u16,
        encoding,
        out_of_range,
    };
    Ok((AudioClip::new(samples, rate, source_id)?, report))
}

/// Encodes channels (all of equal length) as a canonical 44-byte-header WAV.
/// PCM16 samples are scaled by 32768, rounded and saturated.
pub fn encode_wav(channels: &[&[f64]], sample_rate: u32, encoding: SampleEncoding) -> Vec<u8> {
    let n_ch = channels.len();
    let frames = channels.first().map_or(0, |c| c.len());
    let width = match encoding {
        SampleEncoding::Pcm16 => 2,
        SampleEncoding::Float32 => 4,
    };
    let data_len = frames * n_ch * width;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    let code: u16 = match encoding {
        SampleEncoding::Pcm16 => 1,
        SampleEncoding::Float32 => 3,
    };
    out.extend_from_slice(&code.to_le_bytes());
    out.extend_from_slice(&(n_ch as u16).to_le_bytes());
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&((sample_rate as usize * n_ch * width) as u32).to_le_bytes());
    out.extend_from_slice(&((n_ch * width) as u16).to_le_bytes());
    out.extend_from_slice(&((width * 8) as u16).to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for f in 0..frames {
        for ch in channels {
            match encoding {
                SampleEncoding::Pcm16 => {
                    let q = round(ch[f] * 32768.0).clamp(-32768.0, 32767.0) as i16;
                    out.extend_from_slice(&q.to_le_bytes());
                }
                SampleEncoding::Float32 => out.extend_from_slice(&(ch[f] as f32).to_le_bytes()),
            }
        }
    }
    out
}

pub const RESAMPLE_TAPS: usize = 64;
pub const RESAMPLE_KAISER_BETA: f64 = 8.6;

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        sin(PI * x) / (PI * x)
    }
}

/// Kaiser-windowed sinc lowpass, evaluated for the input samples around one
/// output instant. `frac` is the output position's offset past input sample
/// `base`; tap `i` weights input `base + 1 - half + i`.
struct SincKernel {
    cutoff: f64,
    half: usize,
}

impl SincKernel {
    fn row(&self, frac: f64, out: &mut [f64]) {
        let span = self.half as f64;
        let mut sum = 0.0;
        for (i, w) in out.iter_mut().enumerate() {
            let dist = frac + self.half as f64 - 1.0 - i as f64;
            *w = self.cutoff * sinc(self.cutoff * dist) * kaiser(dist / span, RESAMPLE_KAISER_BETA);
            sum += *w;
        }
        for w in out.iter_mut() {
            *w /= sum;
        }
    }
}

/// Polyphase windowed-sinc resampling by the exact rational ratio
/// `target_rate / sample_rate`. The kernel spans 64 taps at the lower of the
/// two rates (Kaiser, beta 8.6) with its cutoff at the lower Nyquist, and each
/// phase is normalized to unit DC gain. Equal rates return a bit-exact copy.
pub fn resample(clip: &AudioClip, target_rate: u32) -> Result<AudioClip> {
    if target_rate == 0 {
        return Err(Error::invalid("target_rate", "must be positive"));
    }
    if target_rate == clip.sample_rate {
        return Ok(clip.clone());
    }
    let g = gcd(clip.sample_rate as u64, target_rate as u64);
    let up = target_rate as u64 / g;
    let down = clip.sample_rate as u64 / g;
    let n_in = clip.samples.len() as u64;
    let n_out = (n_in * up).div_ceil(down) as usize;
    let cutoff = if up < down { up as f64 / down as f64 } else { 1.0 };
    let half = ceil(RESAMPLE_TAPS as f64 / 2.0 / cutoff) as usize;
    let kernel = SincKernel { cutoff, half };
    let width = 2 * half;

    // One row per phase when the phase count is modest, otherwise on the fly.
    let table: Option<Vec<f64>> = (up <= 4096).then(|| {
        let mut t = vec![0.0; up as usize * width];
        for (p, row) in t.chunks_exact_mut(width).enumerate() {
            kernel.row(p as f64 / up as f64, row);
        }
        t
    });
    let mut scratch = vec![0.0; width];
    let x = &clip.samples;
    let mut out = Vec::with_capacity(n_out);
    for j in 0..n_out as u64 {
        let pos = j * down;
        let base = (pos / up) as i64;
        let phase = (pos % up) as usize;
        let row: &[f64] = match &table {
            Some(t) => &t[phase * width..(phase + 1) * width],
            None => {
                kernel.row(phase as f64 / up as f64, &mut scratch);
                &scratch
            }
        };
        let first = base + 1 - half as i64;
        let mut acc = 0.0;
        for (i, w) in row.iter().enumerate() {
            let k = first + i as i64;
            if k >= 0 && (k as u64) < n_in {
                acc += w * x[k as usize];
            }
        }
        out.push(acc);
    }
    AudioClip::new(out, target_rate, clip.source_id.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::Fft;
    use libm::{cos, sqrt};
    use num_complex::Complex64;

    fn sine(freq: f64, rate: u32, secs: f64) -> AudioClip {
        let n = (rate as f64 * secs) as usize;
        let s = (0..n).map(|i| sin(2.0 * PI * freq * i as f64 / rate as f64)).collect();
        AudioClip::new(s, rate, "sine").unwrap()
    }

    #[test]
    fn pcm16_full_scale_normalization() {
        let bytes = encode_wav(&[&[32767.0 / 32768.0; 100]], 16_000, SampleEncoding::Pcm16);
        let (clip, report) = decode_wav(&bytes, "x").unwrap();
        assert!(clip.samples.iter().all(|&s| s == 32767.0 / 32768.0));
        assert!((clip.samples[0] - 0.99997).abs() < 1e-5);
        assert_eq!(report.encoding, SampleEncoding::Pcm16);
    }

    #[test]
    fn one_second_header_arithmetic() {
        let bytes = encode_wav(&[&vec![0.0; 16_000]], 16_000, SampleEncoding::Pcm16);
        let (clip, _) = decode_wav(&bytes, "x").unwrap();
        assert_eq!(clip.len(), 16_000);
        assert_eq!(clip.sample_rate, 16_000);
    }

    #[test]
    fn stereo_opposite_channels_cancel() {
        let l = vec![0.5; 64];
        let r = vec![-0.5; 64];
        let bytes = encode_wav(&[&l, &r], 16_000, SampleEncoding::Float32);
        let (clip, report) = decode_wav(&bytes, "x").unwrap();
        assert_eq!(report.channels, 2);
        assert!(clip.samples.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn downmix_commutes_with_load() {
        let l: Vec<f64> = (0..50).map(|i| sin(i as f64 * 0.37) * 0.8).collect();
        let r: Vec<f64> = (0..50).map(|i| cos(i as f64 * 0.11) * 0.3).collect();
        for enc in [SampleEncoding::Pcm16, SampleEncoding::Float32] {
            let bytes = encode_wav(&[&l, &r], 8000, enc);
            let (chans, _, _) = decode_wav_channels(&bytes).unwrap();
            let (clip, _) = decode_wav(&bytes, "x").unwrap();
            assert_eq!(clip.samples, downmix(&chans));
        }
    }

    #[test]
    fn float_out_of_range_is_reported_not_clipped() {
        let bytes = encode_wav(&[&[1.5, -0.2, -2.0]], 16_000, SampleEncoding::Float32);
        let (clip, report) = decode_wav(&bytes, "x").unwrap();
        assert_eq!(report.out_of_range, 2);
        assert_eq!(clip.samples[0], 1.5);
    }

    #[test]
    fn header_errors_name_the_field() {
        let good = encode_wav(&[&[0.1; 10]], 16_000, SampleEncoding::Pcm16);
        let mut bad = good.clone();
        bad[0..4].copy_from_slice(b"RIFX");
        assert!(matches!(
            decode_wav(&bad, "x"),
            Err(Error::Wav(WavError::MalformedHeader { field: "riff", .. }))
        ));
        let mut alaw = good.clone();
        alaw[20] = 6;
        assert!(matches!(
            decode_wav(&alaw, "x"),
            Err(Error::Wav(WavError::UnsupportedEncoding { field: "audio_format", value: 6 }))
        ));
        let mut bits24 = good.clone();
        bits24[34] = 24;
        assert!(matches!(
            decode_wav(&bits24, "x"),
            Err(Error::Wav(WavError::UnsupportedEncoding { field: "bits_per_sample", value: 24 }))
        ));
        let mut chans = good.clone();
        chans[22] = 3;
        assert!(matches!(
            decode_wav(&chans, "x"),
            Err(Error::Wav(WavError::UnsupportedEncoding { field: "num_channels", value: 3 }))
        ));
        let truncated = &good[..good.len() - 4];
        assert!(matches!(
            decode_wav(truncated, "x"),
            Err(Error::Wav(WavError::MalformedHeader { field: "data", .. }))
        ));
        let empty = encode_wav(&[&[]], 16_000, SampleEncoding::Pcm16);
        assert_eq!(decode_wav(&empty, "x").unwrap_err(), Error::Wav(WavError::NoSamples));
    }

    #[test]
    fn resample_identity_is_bit_exact() {
        let clip = sine(300.0, 16_000, 0.1);
        assert_eq!(resample(&clip, 16_000).unwrap(), clip);
    }

    #[test]
    fn resample_preserves_duration() {
        let clip = AudioClip::new(vec![0.25; 4000], 8000, "x").unwrap();
        let up = resample(&clip, 16_000).unwrap();
        assert!((up.len() as i64 - 8000).abs() <= 1);
        let clip = sine(440.0, 44_100, 1.0);
        let down = resample(&clip, 16_000).unwrap();
        assert!((down.len() as i64 - 16_000).abs() <= 1);
    }

    #[test]
    fn resampled_sine_keeps_its_frequency() {
        let clip = sine(440.0, 44_100, 1.0);
        let out = resample(&clip, 16_000).unwrap();
        // One second at 16 kHz: bin k of a 16384-point zero-padded DFT sits at k * 16000/16384 Hz.
        let n = 16_384;
        let mut buf: Vec<Complex64> = (0..n)
            .map(|i| Complex64::new(out.samples.get(i).copied().unwrap_or(0.0), 0.0))
            .collect();
        Fft::new(n).forward(&mut buf);
        let peak = (0..n / 2)
            .max_by(|&a, &b| buf[a].norm().partial_cmp(&buf[b].norm()).unwrap())
            .unwrap();
        let hz = peak as f64 * 16_000.0 / n as f64;
        assert!((hz - 440.0).abs() <= 1.0, "peak at {hz} Hz");
    }

    fn band_limited(rate: u32, max_hz: f64, n: usize) -> Vec<f64> {
        let freqs = [0.11, 0.23, 0.37, 0.52, 0.68, 0.81, 0.9];
        let fade = n / 8;
        (0..n)
            .map(|i| {
                let t = i as f64 / rate as f64;
                let v: f64 = freqs
                    .iter()
                    .enumerate()
                    .map(|(k, f)| sin(2.0 * PI * f * max_hz * t + k as f64) / freqs.len() as f64)
                    .sum();
                let env = if i < fade {
                    0.5 - 0.5 * cos(PI * i as f64 / fade as f64)
                } else if i >= n - fade {
                    0.5 - 0.5 * cos(PI * (n - 1 - i) as f64 / fade as f64)
                } else {
                    1.0
                };
                v * env
            })
            .collect()
    }

    #[test]
    fn round_trip_error_is_small() {
        for &(r1, r2) in &[(16_000u32, 8_000u32), (8_000, 16_000), (44_100, 16_000), (16_000, 22_050)] {
            let max_hz = 0.9 * r1.min(r2) as f64 / 2.0;
            let x = band_limited(r1, max_hz, r1 as usize / 2);
            let clip = AudioClip::new(x.clone(), r1, "x").unwrap();
            let back = resample(&resample(&clip, r2).unwrap(), r1).unwrap();
            let n = x.len().min(back.len());
            let err: f64 = (0..n).map(|i| (x[i] - back.samples[i]) * (x[i] - back.samples[i])).sum();
            let energy: f64 = x.iter().map(|v| v * v).sum();
            let rel = sqrt(err / energy);
            assert!(rel < 1e-3, "{r1}->{r2}->{r1}: relative RMS error {rel}");
        }
    }
}
