//! Learnable Gabor filterbank frontend.
//!
//! Per channel `n` the forward pass is
//!
//! 1. complex Gabor FIR `g[t] = env[t] * exp(i 2 pi eta t / sr)` for
//!    `t in [-(W-1)/2, (W-1)/2]`, where `env` is a Gaussian of std `sigma`
//!    samples normalized to unit L1 norm;
//! 2. energy `|x * g|^2` at the full sample rate ("same" zero padding);
//! 3. a unit-sum Gaussian lowpass of std `pool_sigma` evaluated every `hop`
//!    samples;
//! 4. PCEN: `M[k] = (1-s) M[k-1] + s E[k]` with `M[0] = E[0]`, and
//!    `Y[k] = (E[k] / (eps + M[k])^alpha + delta)^r - delta^r`.
//!
//! Convolutions run blockwise in the frequency domain (overlap-save). The
//! backward pass differentiates all four stages analytically, including
//! backpropagation through the whole PCEN recursion.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{LN_2, PI};

use libm::{cos, exp, log, pow, sin, sqrt};
use num_complex::Complex64;

use super::FeatureMap;
use crate::audio::AudioClip;
use crate::dsp::{mel_band_edges, next_pow2, Fft};
use crate::{Error, Result};

pub const DEFAULT_CHANNELS: usize = 40;
pub const DEFAULT_FILTER_LEN: usize = 401;
pub const DEFAULT_HOP: usize = 160;
pub const DEFAULT_FMIN: f64 = 60.0;
pub const DEFAULT_FMAX: f64 = 7800.0;

const MAX_BLOCK: usize = 4096;
const MIN_SIGMA: f64 = 1.0;
const MIN_PCEN: f64 = 1e-3;
const MAX_ALPHA: f64 = 1.5;

/// Learnable filtering, pooling and compression parameters, one entry per
/// channel, plus the fixed smoother coefficient, floor, filter length and hop.
#[derive(Debug, Clone, PartialEq)]
pub struct GaborFrontendParams {
    pub sample_rate: u32,
    /// Gabor centre frequencies in Hz.
    pub center_freqs: Vec<f64>,
    /// Gaussian envelope std of each impulse response, in samples.
    pub bandwidths: Vec<f64>,
    /// Std of the Gaussian lowpass used for pooling, in samples.
    pub pool_sigmas: Vec<f64>,
    pub pcen_alpha: Vec<f64>,
    pub pcen_delta: Vec<f64>,
    pub pcen_root: Vec<f64>,
    pub pcen_smooth: f64,
    pub pcen_eps: f64,
    pub filter_len: usize,
    pub hop: usize,
}

/// The six per-channel learnable parameter vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    CenterFreqs,
    Bandwidths,
    PoolSigmas,
    PcenAlpha,
    PcenDelta,
    PcenRoot,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 6] = [
        ParamGroup::CenterFreqs,
        ParamGroup::Bandwidths,
        ParamGroup::PoolSigmas,
        ParamGroup::PcenAlpha,
        ParamGroup::PcenDelta,
        ParamGroup::PcenRoot,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::CenterFreqs => "center_freqs",
            ParamGroup::Bandwidths => "bandwidths",
            ParamGroup::PoolSigmas => "pool_sigmas",
            ParamGroup::PcenAlpha => "pcen_alpha",
            ParamGroup::PcenDelta => "pcen_delta",
            ParamGroup::PcenRoot => "pcen_root",
        }
    }
}

/// Mel-spaced initialization: centres at the peaks of `n_channels` triangular
/// mel bands on `[fmin, fmax]`, envelope widths matching each band's
/// half-maximum width, pooling std `0.4 * hop`, PCEN `alpha = 0.96`,
/// `delta = 2`, `r = 0.5`, `s = 0.04`, `eps = 1e-6`, `W = 401`, `hop = 160`.
pub fn init_gabor_mel(n_channels: usize, sample_rate: u32, fmin: f64, fmax: f64) -> Result<GaborFrontendParams> {
    GaborFrontendParams::mel_init(n_channels, sample_rate, fmin, fmax)
}

impl GaborFrontendParams {
    pub fn mel_init(n_channels: usize, sample_rate: u32, fmin: f64, fmax: f64) -> Result<Self> {
        if n_channels < 2 {
            return Err(Error::invalid("n_channels", "need at least 2 channels"));
        }
        if sample_rate == 0 {
            return Err(Error::invalid("sample_rate", "must be positive"));
        }
        let nyquist = sample_rate as f64 / 2.0;
        if !(fmin > 0.0 && fmin < fmax && fmax <= nyquist) {
            return Err(Error::invalid("fmin/fmax", "need 0 < fmin < fmax <= sample_rate / 2"));
        }
        let edges = mel_band_edges(n_channels, fmin, fmax);
        let hop = DEFAULT_HOP;
        let mut center_freqs = Vec::with_capacity(n_channels);
        let mut bandwidths = Vec::with_capacity(n_channels);
        for k in 0..n_channels {
            center_freqs.push(edges[k + 1]);
            let fwhm = (edges[k + 2] - edges[k]) / 2.0;
            bandwidths.push(sqrt(2.0 * LN_2) * sample_rate as f64 / (PI * fwhm));
        }
        Ok(GaborFrontendParams {
            sample_rate,
            center_freqs,
            bandwidths,
            pool_sigmas: vec![0.4 * hop as f64; n_channels],
            pcen_alpha: vec![0.96; n_channels],
            pcen_delta: vec![2.0; n_channels],
            pcen_root: vec![0.5; n_channels],
            pcen_smooth: 0.04,
            pcen_eps: 1e-6,
            filter_len: DEFAULT_FILTER_LEN,
            hop,
        })
    }

    /// Default 40-channel frontend at the canonical rate.
    pub fn default_for_rate(sample_rate: u32) -> Result<Self> {
        let fmax = DEFAULT_FMAX.min(sample_rate as f64 / 2.0);
        Self::mel_init(DEFAULT_CHANNELS, sample_rate, DEFAULT_FMIN, fmax)
    }

    pub fn n_channels(&self) -> usize {
        self.center_freqs.len()
    }

    /// Number of output frames for an input of `n_samples` samples.
    pub fn n_frames(&self, n_samples: usize) -> usize {
        (n_samples.max(1) - 1) / self.hop + 1
    }

    pub fn frame_rate(&self) -> f64 {
        self.sample_rate as f64 / self.hop as f64
    }

    fn half_width(&self) -> usize {
        (self.filter_len - 1) / 2
    }

    pub fn group(&self, group: ParamGroup) -> &[f64] {
        match group {
            ParamGroup::CenterFreqs => &self.center_freqs,
            ParamGroup::Bandwidths => &self.bandwidths,
            ParamGroup::PoolSigmas => &self.pool_sigmas,
            ParamGroup::PcenAlpha => &self.pcen_alpha,
            ParamGroup::PcenDelta => &self.pcen_delta,
            ParamGroup::PcenRoot => &self.pcen_root,
        }
    }

    pub fn group_mut(&mut self, group: ParamGroup) -> &mut Vec<f64> {
        match group {
            ParamGroup::CenterFreqs => &mut self.center_freqs,
            ParamGroup::Bandwidths => &mut self.bandwidths,
            ParamGroup::PoolSigmas => &mut self.pool_sigmas,
            ParamGroup::PcenAlpha => &mut self.pcen_alpha,
            ParamGroup::PcenDelta => &mut self.pcen_delta,
            ParamGroup::PcenRoot => &mut self.pcen_root,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_channels();
        if n == 0 {
            return Err(Error::Empty("frontend channels"));
        }
        for g in ParamGroup::ALL {
            if self.group(g).len() != n {
                return Err(Error::ShapeMismatch {
                    context: g.name(),
                    expected: n,
                    actual: self.group(g).len(),
                });
            }
            if self.group(g).iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(g.name()));
            }
        }
        let nyquist = self.sample_rate as f64 / 2.0;
        let check = |ok: bool, name: &'static str, why: &str| if ok { Ok(()) } else { Err(Error::invalid(name, why)) };
        check(self.filter_len % 2 == 1 && self.filter_len >= 3, "filter_len", "must be odd and at least 3")?;
        check(self.hop >= 1, "hop", "must be positive")?;
        check(self.center_freqs.iter().all(|&f| f > 0.0 && f < nyquist), "center_freqs", "must lie in (0, sr/2)")?;
        check(self.bandwidths.iter().all(|&s| s > 0.0), "bandwidths", "must be positive")?;
        check(self.pool_sigmas.iter().all(|&s| s > 0.0), "pool_sigmas", "must be positive")?;
        check(self.pcen_alpha.iter().all(|&a| a > 0.0 && a <= MAX_ALPHA), "pcen_alpha", "must lie in (0, 1.5]")?;
        check(self.pcen_delta.iter().all(|&d| d > 0.0), "pcen_delta", "must be positive")?;
        check(self.pcen_root.iter().all(|&r| r > 0.0 && r <= 1.0), "pcen_root", "must lie in (0, 1]")?;
        check(self.pcen_smooth > 0.0 && self.pcen_smooth < 1.0, "pcen_smooth", "must lie in (0, 1)")?;
        check(self.pcen_eps > 0.0, "pcen_eps", "must be positive")
    }

    /// Clamps every learnable parameter back into its valid range; applied
    /// after each optimizer step.
    pub fn project(&mut self) {
        let nyquist = self.sample_rate as f64 / 2.0;
        let max_sigma = self.filter_len as f64;
        for f in &mut self.center_freqs {
            *f = f.clamp(1.0, nyquist - 1.0);
        }
        for s in self.bandwidths.iter_mut().chain(self.pool_sigmas.iter_mut()) {
            *s = s.clamp(MIN_SIGMA, max_sigma);
        }
        for a in &mut self.pcen_alpha {
            *a = a.clamp(MIN_PCEN, MAX_ALPHA);
        }
        for d in &mut self.pcen_delta {
            *d = d.max(MIN_PCEN);
        }
        for r in &mut self.pcen_root {
            *r = r.clamp(MIN_PCEN, 1.0);
        }
    }
}

/// Gradients for every learnable field of [`GaborFrontendParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct FrontendGrads {
    pub center_freqs: Vec<f64>,
    pub bandwidths: Vec<f64>,
    pub pool_sigmas: Vec<f64>,
    pub pcen_alpha: Vec<f64>,
    pub pcen_delta: Vec<f64>,
    pub pcen_root: Vec<f64>,
}

impl FrontendGrads {
    pub fn zeros(n_channels: usize) -> Self {
        FrontendGrads {
            center_freqs: vec![0.0; n_channels],
            bandwidths: vec![0.0; n_channels],
            pool_sigmas: vec![0.0; n_channels],
            pcen_alpha: vec![0.0; n_channels],
            pcen_delta: vec![0.0; n_channels],
            pcen_root: vec![0.0; n_channels],
        }
    }

    pub fn group(&self, group: ParamGroup) -> &[f64] {
        match group {
            ParamGroup::CenterFreqs => &self.center_freqs,
            ParamGroup::Bandwidths => &self.bandwidths,
            ParamGroup::PoolSigmas => &self.pool_sigmas,
            ParamGroup::PcenAlpha => &self.pcen_alpha,
            ParamGroup::PcenDelta => &self.pcen_delta,
            ParamGroup::PcenRoot => &self.pcen_root,
        }
    }

    pub fn group_mut(&mut self, group: ParamGroup) -> &mut Vec<f64> {
        match group {
            ParamGroup::CenterFreqs => &mut self.center_freqs,
            ParamGroup::Bandwidths => &mut self.bandwidths,
            ParamGroup::PoolSigmas => &mut self.pool_sigmas,
            ParamGroup::PcenAlpha => &mut self.pcen_alpha,
            ParamGroup::PcenDelta => &mut self.pcen_delta,
            ParamGroup::PcenRoot => &mut self.pcen_root,
        }
    }
}

/// Spectra of the overlapping input segments used by overlap-save.
#[derive(Debug, Clone)]
struct BlockPlan {
    fft: Fft,
    size: usize,
    step: usize,
    half: usize,
    n_samples: usize,
    spectra: Vec<Vec<Complex64>>,
}

impl BlockPlan {
    fn new(x: &[f64], half: usize) -> Self {
        let size = next_pow2(x.len() + 2 * half)
            .min(MAX_BLOCK)
            .max(next_pow2(4 * half + 2));
        let step = size - 2 * half;
        let fft = Fft::new(size);
        let n_blocks = x.len().div_ceil(step);
        let spectra = (0..n_blocks)
            .map(|b| {
                let origin = (b * step) as i64 - half as i64;
                let mut buf: Vec<Complex64> = (0..size as i64)
                    .map(|j| {
                        let t = origin + j;
                        let v = if t >= 0 && (t as usize) < x.len() { x[t as usize] } else { 0.0 };
                        Complex64::new(v, 0.0)
                    })
                    .collect();
                fft.forward(&mut buf);
                buf
            })
            .collect();
        BlockPlan {
            fft,
            size,
            step,
            half,
            n_samples: x.len(),
            spectra,
        }
    }

    /// `y[t] = sum_tau taps[tau + half] * x[t - tau]` for every input sample.
    fn convolve(&self, taps: &[Complex64]) -> Vec<Complex64> {
        let mut kernel = vec![Complex64::new(0.0, 0.0); self.size];
        for (i, &g) in taps.iter().enumerate() {
            let tau = i as i64 - self.half as i64;
            kernel[tau.rem_euclid(self.size as i64) as usize] = g;
        }
        self.fft.forward(&mut kernel);
        let mut y = vec![Complex64::new(0.0, 0.0); self.n_samples];
        let mut buf = vec![Complex64::new(0.0, 0.0); self.size];
        for (b, spec) in self.spectra.iter().enumerate() {
            for ((o, s), k) in buf.iter_mut().zip(spec).zip(&kernel) {
                *o = s * k;
            }
            self.fft.inverse(&mut buf);
            let start = b * self.step;
            let end = (start + self.step).min(self.n_samples);
            y[start..end].copy_from_slice(&buf[self.half..self.half + end - start]);
        }
        y
    }

    /// `C[tau] = sum_t d[t] * x[t - tau]` for `tau in [-half, half]`, i.e. the
    /// gradient of a loss with respect to the taps given `d = dL/dy` packed
    /// as `dL/dRe(y) + i dL/dIm(y)`.
    fn correlate(&self, d: &[Complex64]) -> Vec<Complex64> {
        let mut acc = vec![Complex64::new(0.0, 0.0); self.size];
        let mut buf = vec![Complex64::new(0.0, 0.0); self.size];
        for (b, spec) in self.spectra.iter().enumerate() {
            let start = b * self.step;
            let end = (start + self.step).min(self.n_samples);
            buf.fill(Complex64::new(0.0, 0.0));
            buf[self.half..self.half + end - start].copy_from_slice(&d[start..end]);
            self.fft.forward(&mut buf);
            for ((a, v), s) in acc.iter_mut().zip(&buf).zip(spec) {
                *a += v * s.conj();
            }
        }
        self.fft.inverse(&mut acc);
        (0..2 * self.half + 1)
            .map(|i| {
                let tau = i as i64 - self.half as i64;
                acc[tau.rem_euclid(self.size as i64) as usize]
            })
            .collect()
    }
}

/// Unit-sum Gaussian window over `[-half, half]`.
fn gaussian_window(sigma: f64, half: usize) -> Vec<f64> {
    let mut w: Vec<f64> = (0..2 * half + 1)
        .map(|i| {
            let t = i as f64 - half as f64;
            exp(-t * t / (2.0 * sigma * sigma))
        })
        .collect();
    let sum: f64 = w.iter().sum();
    for v in &mut w {
        *v /= sum;
    }
    w
}

/// Derivative of each window tap with respect to `sigma`, chained through the
/// unit-sum normalization: `w[t] (t^2 - sum_u w[u] u^2) / sigma^3`.
fn gaussian_window_sigma_grad(window: &[f64], sigma: f64, upstream: &[f64]) -> f64 {
    let half = (window.len() / 2) as f64;
    let moment: f64 = window
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let t = i as f64 - half;
            w * t * t
        })
        .sum();
    let s3 = sigma * sigma * sigma;
    window
        .iter()
        .zip(upstream)
        .enumerate()
        .map(|(i, (w, g))| {
            let t = i as f64 - half;
            g * w * (t * t - moment) / s3
        })
        .sum()
}

fn gabor_taps(center: f64, envelope: &[f64], sample_rate: u32) -> Vec<Complex64> {
    let half = (envelope.len() / 2) as f64;
    let omega = 2.0 * PI * center / sample_rate as f64;
    envelope
        .iter()
        .enumerate()
        .map(|(i, &e)| {
            let phase = omega * (i as f64 - half);
            Complex64::new(e * cos(phase), e * sin(phase))
        })
        .collect()
}

#[derive(Debug, Clone)]
struct ChannelTrace {
    envelope: Vec<f64>,
    analytic: Vec<Complex64>,
    pool_window: Vec<f64>,
    pooled: Vec<f64>,
    smoothed: Vec<f64>,
}

/// Saved activations of a forward pass, enough to run the backward pass
/// without recomputing the convolutions.
#[derive(Debug, Clone)]
pub struct GaborTrace {
    plan: BlockPlan,
    channels: Vec<ChannelTrace>,
    n_frames: usize,
}

impl GaborTrace {
    /// Pooled, decimated energies entering PCEN for one channel.
    pub fn pooled_energy(&self, channel: usize) -> &[f64] {
        &self.channels[channel].pooled
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    /// Gradients of `sum(upstream * Y)` with respect to every learnable
    /// parameter. `upstream` is channel-major like the feature map.
    pub fn backward(&self, params: &GaborFrontendParams, upstream: &[f64]) -> Result<FrontendGrads> {
        let n_ch = params.n_channels();
        if n_ch != self.channels.len() {
            return Err(Error::ShapeMismatch {
                context: "frontend channels",
                expected: self.channels.len(),
                actual: n_ch,
            });
        }
        if upstream.len() != n_ch * self.n_frames {
            return Err(Error::ShapeMismatch {
                context: "upstream gradient",
                expected: n_ch * self.n_frames,
                actual: upstream.len(),
            });
        }
        let mut grads = FrontendGrads::zeros(n_ch);
        for (c, trace) in self.channels.iter().enumerate() {
            let g_out = &upstream[c * self.n_frames..(c + 1) * self.n_frames];
            if g_out.iter().all(|&g| g == 0.0) {
                continue;
            }
            let g = channel_backward(&self.plan, params, c, trace, g_out);
            for (group, value) in ParamGroup::ALL.iter().zip(g) {
                grads.group_mut(*group)[c] = value;
            }
        }
        Ok(grads)
    }
}

fn check_input(clip: &AudioClip, params: &GaborFrontendParams) -> Result<()> {
    params.validate()?;
    if clip.sample_rate != params.sample_rate {
        return Err(Error::invalid(
            "clip.sample_rate",
            alloc::format!("frontend expects {} Hz, got {} Hz", params.sample_rate, clip.sample_rate),
        ));
    }
    if clip.is_empty() {
        return Err(Error::Empty("audio samples"));
    }
    Ok(())
}

pub fn gabor_forward(clip: &AudioClip, params: &GaborFrontendParams) -> Result<FeatureMap> {
    gabor_forward_traced(clip, params).map(|(map, _)| map)
}

pub fn gabor_forward_traced(clip: &AudioClip, params: &GaborFrontendParams) -> Result<(FeatureMap, GaborTrace)> {
    check_input(clip, params)?;
    let plan = BlockPlan::new(&clip.samples, params.half_width());
    let n_frames = params.n_frames(clip.len());
    let mut map = FeatureMap::zeros(params.n_channels(), n_frames, params.frame_rate());
    let mut channels = Vec::with_capacity(params.n_channels());
    for c in 0..params.n_channels() {
        let trace = channel_forward(&plan, params, c, map.row_mut(c));
        channels.push(trace);
    }
    if map.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("gabor frontend output"));
    }
    Ok((
        map,
        GaborTrace {
            plan,
            channels,
            n_frames,
        },
    ))
}

/// Gradients of `sum(upstream * gabor_forward(clip, params))`.
pub fn gabor_backward(clip: &AudioClip, params: &GaborFrontendParams, upstream: &FeatureMap) -> Result<FrontendGrads> {
    let (map, trace) = gabor_forward_traced(clip, params)?;
    if upstream.n_channels != map.n_channels || upstream.n_frames != map.n_frames {
        return Err(Error::ShapeMismatch {
            context: "upstream gradient",
            expected: map.values.len(),
            actual: upstream.values.len(),
        });
    }
    trace.backward(params, &upstream.values)
}

fn channel_forward(plan: &BlockPlan, params: &GaborFrontendParams, c: usize, out: &mut [f64]) -> ChannelTrace {
    let half = plan.half;
    let envelope = gaussian_window(params.bandwidths[c], half);
    let taps = gabor_taps(params.center_freqs[c], &envelope, params.sample_rate);
    let analytic = plan.convolve(&taps);
    let energy: Vec<f64> = analytic.iter().map(|y| y.norm_sqr()).collect();

    let pool_window = gaussian_window(params.pool_sigmas[c], half);
    let pooled: Vec<f64> = (0..out.len())
        .map(|k| {
            let centre = k * params.hop;
            let lo = centre.saturating_sub(half);
            let hi = (centre + half + 1).min(energy.len());
            let w0 = lo + half - centre;
            energy[lo..hi]
                .iter()
                .zip(&pool_window[w0..])
                .map(|(e, w)| e * w)
                .sum()
        })
        .collect();

    let (alpha, delta, root) = (params.pcen_alpha[c], params.pcen_delta[c], params.pcen_root[c]);
    let s = params.pcen_smooth;
    let mut smoothed = Vec::with_capacity(pooled.len());
    let offset = pow(delta, root);
    for (k, &e) in pooled.iter().enumerate() {
        let m = if k == 0 { e } else { (1.0 - s) * smoothed[k - 1] + s * e };
        smoothed.push(m);
        let z = e * pow(params.pcen_eps + m, -alpha) + delta;
        out[k] = pow(z, root) - offset;
    }
    ChannelTrace {
        envelope,
        analytic,
        pool_window,
        pooled,
        smoothed,
    }
}

/// Returns `[d_eta, d_sigma, d_pool_sigma, d_alpha, d_delta, d_root]`.
fn channel_backward(
    plan: &BlockPlan,
    params: &GaborFrontendParams,
    c: usize,
    trace: &ChannelTrace,
    g_out: &[f64],
) -> [f64; 6] {
    let (alpha, delta, root) = (params.pcen_alpha[c], params.pcen_delta[c], params.pcen_root[c]);
    let s = params.pcen_smooth;
    let eps = params.pcen_eps;
    let n_frames = g_out.len();

    // PCEN.
    let mut g_alpha = 0.0;
    let mut g_delta = 0.0;
    let mut g_root = 0.0;
    let mut g_pooled = vec![0.0; n_frames];
    let mut g_smooth_direct = vec![0.0; n_frames];
    let delta_pow = pow(delta, root);
    let delta_pow_m1 = pow(delta, root - 1.0);
    let ln_delta = log(delta);
    for k in 0..n_frames {
        let g = g_out[k];
        if g == 0.0 {
            continue;
        }
        let e = trace.pooled[k];
        let base = eps + trace.smoothed[k];
        let gain = pow(base, -alpha);
        let z = e * gain + delta;
        let z_pow = pow(z, root);
        let z_pow_m1 = z_pow / z;
        g_root += g * (z_pow * log(z) - delta_pow * ln_delta);
        g_delta += g * root * (z_pow_m1 - delta_pow_m1);
        let g_z = g * root * z_pow_m1;
        g_pooled[k] += g_z * gain;
        g_alpha -= g_z * e * gain * log(base);
        g_smooth_direct[k] = -g_z * alpha * e * gain / base;
    }
    let mut carry = 0.0;
    for k in (0..n_frames).rev() {
        let g_m = g_smooth_direct[k] + (1.0 - s) * carry;
        g_pooled[k] += if k == 0 { g_m } else { s * g_m };
        carry = g_m;
    }

    // Gaussian pooling.
    let half = plan.half;
    let n = plan.n_samples;
    let mut g_energy = vec![0.0; n];
    let mut g_window = vec![0.0; 2 * half + 1];
    for (k, &gp) in g_pooled.iter().enumerate() {
        if gp == 0.0 {
            continue;
        }
        let centre = k * params.hop;
        let lo = centre.saturating_sub(half);
        let hi = (centre + half + 1).min(n);
        let w0 = lo + half - centre;
        for (i, t) in (lo..hi).enumerate() {
            g_energy[t] += gp * trace.pool_window[w0 + i];
            g_window[w0 + i] += gp * trace.analytic[t].norm_sqr();
        }
    }
    let g_pool_sigma = gaussian_window_sigma_grad(&trace.pool_window, params.pool_sigmas[c], &g_window);

    // Energy and Gabor filtering.
    let d: Vec<Complex64> = trace
        .analytic
        .iter()
        .zip(&g_energy)
        .map(|(y, &ge)| y * (2.0 * ge))
        .collect();
    let g_taps = plan.correlate(&d);
    let omega = 2.0 * PI * params.center_freqs[c] / params.sample_rate as f64;
    let mut g_omega = 0.0;
    let mut g_env = vec![0.0; g_taps.len()];
    for (i, (gt, &env)) in g_taps.iter().zip(&trace.envelope).enumerate() {
        let t = i as f64 - half as f64;
        let (sn, cs) = (sin(omega * t), cos(omega * t));
        g_env[i] = gt.re * cs + gt.im * sn;
        g_omega += env * t * (gt.im * cs - gt.re * sn);
    }
    let g_center = g_omega * 2.0 * PI / params.sample_rate as f64;
    let g_sigma = gaussian_window_sigma_grad(&trace.envelope, params.bandwidths[c], &g_env);

    [g_center, g_sigma, g_pool_sigma, g_alpha, g_delta, g_root]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;

    fn clip(samples: Vec<f64>) -> AudioClip {
        AudioClip::new(samples, 16_000, "t").unwrap()
    }

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = seeded(seed);
        (0..n).map(|_| rng.random_range(-0.5..0.5)).collect()
    }

    #[test]
    fn direct_convolution_matches_overlap_save() {
        let x = noise(5000, 3);
        let half = 7;
        let plan = BlockPlan::new(&x, half);
        let taps: Vec<Complex64> = (0..2 * half + 1)
            .map(|i| Complex64::new(sin(i as f64), cos(0.3 * i as f64)))
            .collect();
        let fast = plan.convolve(&taps);
        for t in (0..x.len()).step_by(97).chain([0, 1, x.len() - 1]) {
            let mut direct = Complex64::new(0.0, 0.0);
            for (i, g) in taps.iter().enumerate() {
                let src = t as i64 - (i as i64 - half as i64);
                if src >= 0 && (src as usize) < x.len() {
                    direct += g * x[src as usize];
                }
            }
            assert!((direct - fast[t]).norm() < 1e-10, "sample {t}");
        }
    }

    #[test]
    fn zero_input_gives_zero_features() {
        let params = GaborFrontendParams::default_for_rate(16_000).unwrap();
        let map = gabor_forward(&clip(vec![0.0; 1600]), &params).unwrap();
        assert_eq!(map.n_frames, 10);
        assert!(map.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn frame_count_depends_only_on_length_and_hop() {
        let params = GaborFrontendParams::default_for_rate(16_000).unwrap();
        for &(n, frames) in &[(1usize, 1usize), (160, 1), (161, 2), (3200, 20), (3201, 21)] {
            assert_eq!(params.n_frames(n), frames);
            let map = gabor_forward(&clip(noise(n, n as u64)), &params).unwrap();
            assert_eq!(map.n_frames, frames);
        }
    }

    #[test]
    fn sine_at_centre_excites_its_channel_most() {
        let params = GaborFrontendParams::default_for_rate(16_000).unwrap();
        for &j in &[3usize, 17, 30] {
            let f = params.center_freqs[j];
            let x: Vec<f64> = (0..8000).map(|t| 0.5 * sin(2.0 * PI * f * t as f64 / 16_000.0)).collect();
            let (_, trace) = gabor_forward_traced(&clip(x), &params).unwrap();
            let means: Vec<f64> = (0..params.n_channels())
                .map(|c| trace.pooled_energy(c).iter().sum::<f64>())
                .collect();
            assert_eq!(crate::labels::argmax(&means), j);
        }
    }

    #[test]
    fn pcen_steady_state() {
        // Constant energy with alpha = 1, eps -> 0 gives E/M -> 1.
        let mut params = GaborFrontendParams::default_for_rate(16_000).unwrap();
        params.pcen_alpha.iter_mut().for_each(|a| *a = 1.0);
        params.pcen_eps = 1e-12;
        let f = params.center_freqs[20];
        let x: Vec<f64> = (0..160 * 260)
            .map(|t| 0.3 * sin(2.0 * PI * f * t as f64 / 16_000.0))
            .collect();
        let map = gabor_forward(&clip(x), &params).unwrap();
        let (d, r) = (params.pcen_delta[20], params.pcen_root[20]);
        let expected = pow(1.0 + d, r) - pow(d, r);
        let row = map.row(20);
        for &v in &row[200..row.len() - 5] {
            assert!((v - expected).abs() < 1e-3, "{v} vs {expected}");
        }
    }

    #[test]
    fn energy_scales_quadratically() {
        let params = GaborFrontendParams::default_for_rate(16_000).unwrap();
        let x = noise(3200, 9);
        let scaled: Vec<f64> = x.iter().map(|v| v * 4.0).collect();
        let (_, a) = gabor_forward_traced(&clip(x), &params).unwrap();
        let (_, b) = gabor_forward_traced(&clip(scaled), &params).unwrap();
        for c in 0..params.n_channels() {
            for (ea, eb) in a.pooled_energy(c).iter().zip(b.pooled_energy(c)) {
                assert_eq!(ea * 16.0, *eb);
            }
        }
    }

    #[test]
    fn backward_is_linear_in_upstream() {
        let params = GaborFrontendParams::default_for_rate(16_000).unwrap();
        let c = clip(noise(1600, 1));
        let (map, trace) = gabor_forward_traced(&c, &params).unwrap();
        let zero = trace.backward(&params, &vec![0.0; map.values.len()]).unwrap();
        assert_eq!(zero, FrontendGrads::zeros(params.n_channels()));
        let up: Vec<f64> = noise(map.values.len(), 2);
        let doubled: Vec<f64> = up.iter().map(|v| 2.0 * v).collect();
        let g1 = trace.backward(&params, &up).unwrap();
        let g2 = trace.backward(&params, &doubled).unwrap();
        for group in ParamGroup::ALL {
            for (a, b) in g1.group(group).iter().zip(g2.group(group)) {
                assert_eq!(2.0 * a, *b);
            }
        }
    }

    #[test]
    fn rejects_wrong_rate_and_bad_upstream() {
        let params = GaborFrontendParams::default_for_rate(16_000).unwrap();
        let wrong = AudioClip::new(vec![0.1; 100], 8000, "x").unwrap();
        assert!(gabor_forward(&wrong, &params).is_err());
        let c = clip(noise(800, 4));
        let bad = FeatureMap::zeros(params.n_channels(), 2, 100.0);
        assert!(matches!(gabor_backward(&c, &params, &bad), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn mel_init_invariants() {
        let p = init_gabor_mel(2, 16_000, 4000.0, 8000.0).unwrap();
        assert!(p.center_freqs[0] < p.center_freqs[1]);
        assert!(p.center_freqs.iter().all(|&f| f > 4000.0 && f < 8000.0));
        let p = GaborFrontendParams::default_for_rate(16_000).unwrap();
        p.validate().unwrap();
        assert!(p.center_freqs.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(p.pool_sigmas[0], 64.0);
        assert!(init_gabor_mel(1, 16_000, 60.0, 7800.0).is_err());
        assert!(init_gabor_mel(4, 16_000, 60.0, 9000.0).is_err());
    }
}
