//! Synthetic stand-in corpus. Every speaker has a pulse-train voice with its
//! own pitch and three formants; a class-`k` speaker's audio is degraded at
//! level `k` by additive white noise, a downward spectral tilt and pitch
//! period jitter. Utterances are 1-3 s of syllable-like voiced bursts
//! separated by short pauses.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use libm::{cos, exp, log2, pow, sqrt};
use num_complex::Complex64;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::dsp::{next_pow2, Fft};
use crate::labels::IntelligibilityClass;
use crate::rng::{substream, Rng};
use crate::{Error, Result, CANONICAL_RATE};

/// Additive-noise SNR per class, dB.
pub const SNR_DB: [f64; 5] = [30.0, 20.0, 12.0, 6.0, 0.0];
/// Spectral tilt per class, dB per octave above 100 Hz (applied negatively).
pub const TILT_DB_PER_OCTAVE: [f64; 5] = [0.0, 3.0, 6.0, 9.0, 12.0];
/// Pitch-period standard deviation per class, as a fraction of the period.
pub const JITTER: [f64; 5] = [0.0, 0.02, 0.04, 0.08, 0.12];

const TILT_REF_HZ: f64 = 100.0;
const FORMANT_BANDWIDTHS: [f64; 3] = [70.0, 100.0, 140.0];
const TARGET_RMS: f64 = 0.1;
const UTTERANCE_STREAM: u64 = 1 << 40;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_speakers_per_class: usize,
    pub utterances_per_speaker: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpeaker {
    pub speaker_id: String,
    pub label: IntelligibilityClass,
    pub etiology: &'static str,
    pub f0: f64,
    pub formants: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthUtterance {
    pub utterance_id: String,
    pub speaker_id: String,
    pub label: IntelligibilityClass,
    pub etiology: &'static str,
    /// Nominal pitch of this utterance, Hz.
    pub f0: f64,
    pub samples: Vec<f64>,
}

/// Deterministic corpus description; utterances are synthesized on demand
/// and independently, each from its own seeded stream.
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    config: SynthConfig,
    speakers: Vec<SynthSpeaker>,
}

impl SynthCorpus {
    pub fn new(config: SynthConfig) -> Result<Self> {
        if config.n_speakers_per_class == 0 {
            return Err(Error::invalid("n_speakers_per_class", "must be at least 1"));
        }
        if config.utterances_per_speaker == 0 {
            return Err(Error::invalid("utterances_per_speaker", "must be at least 1"));
        }
        let mut speakers = Vec::new();
        for label in IntelligibilityClass::ALL {
            for i in 0..config.n_speakers_per_class {
                let mut rng = substream(config.seed, speakers.len() as u64);
                speakers.push(SynthSpeaker {
                    speaker_id: alloc::format!("spk_c{}_{i:02}", label.code()),
                    label,
                    etiology: if label == IntelligibilityClass::Typical { "control" } else { "synthetic" },
                    f0: rng.random_range(90.0..220.0),
                    formants: [
                        rng.random_range(450.0..650.0),
                        rng.random_range(1200.0..1800.0),
                        rng.random_range(2400.0..2900.0),
                    ],
                });
            }
        }
        Ok(SynthCorpus { config, speakers })
    }

    pub fn speakers(&self) -> &[SynthSpeaker] {
        &self.speakers
    }

    pub fn utterances_per_speaker(&self) -> usize {
        self.config.utterances_per_speaker
    }

    pub fn len(&self) -> usize {
        self.speakers.len() * self.config.utterances_per_speaker
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn utterance_id(&self, speaker: usize, index: usize) -> String {
        alloc::format!("{}_u{index:03}", self.speakers[speaker].speaker_id)
    }

    /// Utterance `index` of speaker number `speaker` (in [`Self::speakers`] order).
    pub fn utterance(&self, speaker: usize, index: usize) -> SynthUtterance {
        let spk = &self.speakers[speaker];
        let stream = UTTERANCE_STREAM + ((speaker as u64) << 20) + index as u64;
        let mut rng = substream(self.config.seed, stream);
        let level = spk.label.code();
        let sr = CANONICAL_RATE as f64;
        let n = (rng.random_range(1.0..3.0) * sr) as usize;
        let f0 = spk.f0 * rng.random_range(0.97..1.03);

        let envelope = syllable_envelope(n, &mut rng);
        let pulses = pulse_train(n, sr / f0, JITTER[level], &mut rng);
        let mut voiced = pulses;
        for (f, bw) in spk.formants.iter().zip(FORMANT_BANDWIDTHS) {
            resonate(&mut voiced, *f, bw, sr);
        }
        for (v, e) in voiced.iter_mut().zip(&envelope) {
            *v *= e;
        }
        apply_tilt(&mut voiced, TILT_DB_PER_OCTAVE[level], sr);

        let rms = sqrt(voiced.iter().map(|v| v * v).sum::<f64>() / n as f64);
        let speech_rms = TARGET_RMS * rng.random_range(0.7..1.0);
        let gain = if rms > 0.0 { speech_rms / rms } else { 0.0 };
        let noise_rms = speech_rms * pow(10.0, -SNR_DB[level] / 20.0);
        let samples = voiced
            .iter()
            .map(|v| {
                let z: f64 = StandardNormal.sample(&mut rng);
                (v * gain + noise_rms * z).clamp(-1.0, 1.0)
            })
            .collect();
        SynthUtterance {
            utterance_id: self.utterance_id(speaker, index),
            speaker_id: spk.speaker_id.clone(),
            label: spk.label,
            etiology: spk.etiology,
            f0,
            samples,
        }
    }
}

/// Raised-cosine bursts of 150-350 ms separated by 60-150 ms pauses.
fn syllable_envelope(n: usize, rng: &mut Rng) -> Vec<f64> {
    let sr = CANONICAL_RATE as f64;
    let mut env = vec![0.0; n];
    let mut t = (rng.random_range(0.03..0.1) * sr) as usize;
    loop {
        let len = (rng.random_range(0.15..0.35) * sr) as usize;
        if t + len > n {
            break;
        }
        for i in 0..len {
            env[t + i] = 0.5 - 0.5 * cos(2.0 * PI * i as f64 / len as f64);
        }
        t += len + (rng.random_range(0.06..0.15) * sr) as usize;
    }
    env
}

/// Unit impulses every `period` samples, each period perturbed by a Gaussian
/// fraction `jitter`; fractional positions are split linearly between the two
/// neighbouring samples.
fn pulse_train(n: usize, period: f64, jitter: f64, rng: &mut Rng) -> Vec<f64> {
    let mut x = vec![0.0; n];
    let mut pos: f64 = rng.random_range(0.0..period);
    while (pos as usize) + 1 < n {
        let i = pos as usize;
        let frac = pos - i as f64;
        x[i] += 1.0 - frac;
        x[i + 1] += frac;
        let z: f64 = StandardNormal.sample(rng);
        pos += period * (1.0 + jitter * z).clamp(0.5, 1.5);
    }
    x
}

/// Two-pole resonator at `freq` Hz with the given bandwidth, in place.
fn resonate(x: &mut [f64], freq: f64, bandwidth: f64, sr: f64) {
    let r = exp(-PI * bandwidth / sr);
    let a1 = 2.0 * r * cos(2.0 * PI * freq / sr);
    let a2 = -r * r;
    let g = 1.0 - r;
    let (mut y1, mut y2) = (0.0, 0.0);
    for v in x.iter_mut() {
        let y = g * *v + a1 * y1 + a2 * y2;
        y2 = y1;
        y1 = y;
        *v = y;
    }
}

/// Zero-phase gain of `-db_per_octave * log2(f / 100 Hz)` dB above 100 Hz.
fn apply_tilt(x: &mut [f64], db_per_octave: f64, sr: f64) {
    if db_per_octave == 0.0 || x.is_empty() {
        return;
    }
    let size = next_pow2(2 * x.len());
    let fft = Fft::new(size);
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    buf.resize(size, Complex64::new(0.0, 0.0));
    fft.forward(&mut buf);
    for (k, b) in buf.iter_mut().enumerate() {
        let f = k.min(size - k) as f64 * sr / size as f64;
        if f > TILT_REF_HZ {
            *b *= pow(10.0, -db_per_octave * log2(f / TILT_REF_HZ) / 20.0);
        }
    }
    fft.inverse(&mut buf);
    for (v, b) in x.iter_mut().zip(&buf) {
        *v = b.re;
    }
}
