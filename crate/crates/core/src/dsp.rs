//! Signal-processing building blocks: a radix-2 FFT, analysis windows and the
//! mel scale.

use alloc::vec::Vec;
use core::f64::consts::PI;

use libm::{cos, log10, pow, sin, sqrt};
use num_complex::Complex64;

/// Precomputed plan for an in-place radix-2 complex FFT of a fixed size.
#[derive(Debug, Clone)]
pub struct Fft {
    len: usize,
    // Per-stage twiddles stored contiguously: the stage combining blocks of
    // `size` uses entries `size/2 - 1 .. size - 1`.
    forward_twiddles: Vec<Complex64>,
    inverse_twiddles: Vec<Complex64>,
    bit_rev: Vec<u32>,
}

impl Fft {
    /// `len` must be a power of two.
    pub fn new(len: usize) -> Self {
        assert!(len.is_power_of_two(), "FFT length must be a power of two");
        let bits = len.trailing_zeros();
        let mut forward_twiddles = Vec::with_capacity(len.saturating_sub(1));
        let mut size = 2;
        while size <= len {
            for k in 0..size / 2 {
                let phase = -2.0 * PI * k as f64 / size as f64;
                forward_twiddles.push(Complex64::new(cos(phase), sin(phase)));
            }
            size *= 2;
        }
        let inverse_twiddles = forward_twiddles.iter().map(|w| w.conj()).collect();
        let bit_rev = (0..len as u32)
            .map(|i| if bits == 0 { 0 } else { i.reverse_bits() >> (32 - bits) })
            .collect();
        Fft {
            len,
            forward_twiddles,
            inverse_twiddles,
            bit_rev,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Unnormalized forward transform, `X[k] = sum_n x[n] e^{-2 pi i k n / N}`.
    pub fn forward(&self, buf: &mut [Complex64]) {
        self.transform(buf, &self.forward_twiddles);
    }

    /// Inverse transform including the `1/N` factor.
    pub fn inverse(&self, buf: &mut [Complex64]) {
        self.transform(buf, &self.inverse_twiddles);
        let scale = 1.0 / self.len as f64;
        for v in buf.iter_mut() {
            *v *= scale;
        }
    }

    fn transform(&self, buf: &mut [Complex64], twiddles: &[Complex64]) {
        assert_eq!(buf.len(), self.len);
        for (i, &j) in self.bit_rev.iter().enumerate() {
            let j = j as usize;
            if i < j {
                buf.swap(i, j);
            }
        }
        if self.len >= 2 {
            for pair in buf.chunks_exact_mut(2) {
                let (a, b) = (pair[0], pair[1]);
                pair[0] = a + b;
                pair[1] = a - b;
            }
        }
        let mut size = 4;
        while size <= self.len {
            let half = size / 2;
            let stage = &twiddles[half - 1..size - 1];
            for chunk in buf.chunks_exact_mut(size) {
                let (lo, hi) = chunk.split_at_mut(half);
                for ((a, b), w) in lo.iter_mut().zip(hi.iter_mut()).zip(stage) {
                    let t = w * *b;
                    *b = *a - t;
                    *a += t;
                }
            }
            size *= 2;
        }
    }
}

/// Periodic Hann window of length `len`.
pub fn hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * cos(2.0 * PI * n as f64 / len as f64))
        .collect()
}

/// Zeroth-order modified Bessel function of the first kind (power series).
pub fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1.0;
    loop {
        term *= (half / k) * (half / k);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
        k += 1.0;
    }
    sum
}

/// Kaiser window evaluated at a normalized position `u` in `[-1, 1]`
/// (zero outside).
pub fn kaiser(u: f64, beta: f64) -> f64 {
    if !(-1.0..=1.0).contains(&u) {
        return 0.0;
    }
    bessel_i0(beta * sqrt(1.0 - u * u)) / bessel_i0(beta)
}

/// HTK mel scale, `2595 log10(1 + f / 700)`.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * log10(1.0 + hz / 700.0)
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (pow(10.0, mel / 2595.0) - 1.0)
}

/// `n + 2` frequencies equally spaced on the mel scale from `fmin` to `fmax`;
/// band `k` of a triangular filterbank spans `edges[k]..edges[k + 2]` and
/// peaks at `edges[k + 1]`.
pub fn mel_band_edges(n_bands: usize, fmin: f64, fmax: f64) -> Vec<f64> {
    let lo = hz_to_mel(fmin);
    let hi = hz_to_mel(fmax);
    let step = (hi - lo) / (n_bands + 1) as f64;
    (0..n_bands + 2)
        .map(|i| mel_to_hz(lo + step * i as f64))
        .collect()
}

pub fn next_pow2(n: usize) -> usize {
    n.max(1).next_power_of_two()
}
