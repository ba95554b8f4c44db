//! Fixed log-mel baseline: Hann-windowed magnitude STFT, triangular mel
//! filterbank on [60, 7800] Hz, natural log with a 1e-6 floor.

use alloc::vec;
use alloc::vec::Vec;

use libm::log;
use num_complex::Complex64;

use super::FeatureMap;
use crate::audio::AudioClip;
use crate::dsp::{hann, mel_band_edges, next_pow2, Fft};
use crate::{Error, Result};

pub const LOGMEL_FMIN: f64 = 60.0;
pub const LOGMEL_FMAX: f64 = 7800.0;
pub const LOGMEL_FLOOR: f64 = 1e-6;

/// Triangular mel filters over the `n_fft / 2 + 1` non-negative FFT bins,
/// each normalized to unit sum so that a flat spectrum maps to equal band
/// outputs. A band too narrow to cover any bin takes its nearest bin.
pub fn mel_filterbank(n_mels: usize, n_fft: usize, sample_rate: u32, fmin: f64, fmax: f64) -> Vec<Vec<f64>> {
    let n_bins = n_fft / 2 + 1;
    let bin_hz = sample_rate as f64 / n_fft as f64;
    let edges = mel_band_edges(n_mels, fmin, fmax);
    (0..n_mels)
        .map(|m| {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            let mut w: Vec<f64> = (0..n_bins)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    if f <= lo || f >= hi {
                        0.0
                    } else if f <= mid {
                        (f - lo) / (mid - lo)
                    } else {
                        (hi - f) / (hi - mid)
                    }
                })
                .collect();
            let sum: f64 = w.iter().sum();
            if sum > 0.0 {
                w.iter_mut().for_each(|v| *v /= sum);
            } else {
                let nearest = ((mid / bin_hz + 0.5) as usize).min(n_bins - 1);
                w[nearest] = 1.0;
            }
            w
        })
        .collect()
}

pub fn logmel_forward(clip: &AudioClip, n_mels: usize, win: usize, hop: usize) -> Result<FeatureMap> {
    if n_mels < 2 {
        return Err(Error::invalid("n_mels", "need at least 2 bands"));
    }
    if hop == 0 || win < hop {
        return Err(Error::invalid("win", "window must be at least one hop long"));
    }
    if clip.len() < win {
        return Err(Error::invalid(
            "clip",
            alloc::format!("{} samples is shorter than one {win}-sample window", clip.len()),
        ));
    }
    let n_fft = next_pow2(win);
    let fft = Fft::new(n_fft);
    let window = hann(win);
    let fmax = LOGMEL_FMAX.min(clip.sample_rate as f64 / 2.0);
    let bank = mel_filterbank(n_mels, n_fft, clip.sample_rate, LOGMEL_FMIN, fmax);
    let n_frames = 1 + (clip.len() - win) / hop;
    let mut map = FeatureMap::zeros(n_mels, n_frames, clip.sample_rate as f64 / hop as f64);
    let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
    let mut mag = vec![0.0; n_fft / 2 + 1];
    for f in 0..n_frames {
        let frame = &clip.samples[f * hop..f * hop + win];
        buf.fill(Complex64::new(0.0, 0.0));
        for ((b, x), w) in buf.iter_mut().zip(frame).zip(&window) {
            b.re = x * w;
        }
        fft.forward(&mut buf);
        for (m, b) in mag.iter_mut().zip(&buf) {
            *m = b.norm();
        }
        for (band, weights) in bank.iter().enumerate() {
            let e: f64 = weights.iter().zip(&mag).map(|(w, m)| w * m).sum();
            map.values[band * n_frames + f] = log(e + LOGMEL_FLOOR);
        }
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::init_gabor_mel;
    use crate::rng::seeded;
    use core::f64::consts::{LN_10, PI};
    use libm::sin;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn zero_clip_hits_the_floor() {
        let clip = AudioClip::new(vec![0.0; 4000], 16_000, "z").unwrap();
        let map = logmel_forward(&clip, 40, 400, 160).unwrap();
        assert!(map.values.iter().all(|&v| v == log(1e-6)));
    }

    #[test]
    fn white_noise_is_spectrally_flat() {
        let mut rng = seeded(11);
        let x: Vec<f64> = (0..32_000)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                0.1 * z
            })
            .collect();
        let clip = AudioClip::new(x, 16_000, "n").unwrap();
        let map = logmel_forward(&clip, 40, 400, 160).unwrap();
        let means = map.channel_means();
        let spread = means.iter().cloned().fold(f64::MIN, f64::max) - means.iter().cloned().fold(f64::MAX, f64::min);
        // Magnitude domain: 20 log10 of the ratio.
        let db = 20.0 * spread / LN_10;
        assert!(db < 3.0, "spread {db} dB");
    }

    #[test]
    fn sine_peaks_in_band_containing_it() {
        let x: Vec<f64> = (0..16_000).map(|t| 0.5 * sin(2.0 * PI * 1000.0 * t as f64 / 16_000.0)).collect();
        let clip = AudioClip::new(x, 16_000, "s").unwrap();
        let map = logmel_forward(&clip, 40, 400, 160).unwrap();
        let best = crate::labels::argmax(&map.channel_means());
        // The Gabor initialization shares the band layout; its centres are the band peaks.
        let centres = init_gabor_mel(40, 16_000, LOGMEL_FMIN, LOGMEL_FMAX).unwrap().center_freqs;
        let closest = crate::labels::argmax(&centres.iter().map(|c| -(c - 1000.0).abs()).collect::<Vec<_>>());
        assert_eq!(best, closest);
        let edges = mel_band_edges(40, LOGMEL_FMIN, LOGMEL_FMAX);
        assert!(edges[best] < 1000.0 && 1000.0 < edges[best + 2]);
    }

    #[test]
    fn short_clip_is_rejected() {
        let clip = AudioClip::new(vec![0.0; 399], 16_000, "s").unwrap();
        assert!(logmel_forward(&clip, 40, 400, 160).is_err());
        let ok = AudioClip::new(vec![0.0; 400], 16_000, "s").unwrap();
        assert_eq!(logmel_forward(&ok, 40, 400, 160).unwrap().n_frames, 1);
    }
}
