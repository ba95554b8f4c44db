//! Time/frequency CNN classifier.
//!
//! Activations are laid out `[channel][freq][time]`. Each block is a
//! three-tap convolution along one axis ("same" zero padding), a rectifier
//! and an optional 2x2 max pool; the head averages every channel over the
//! whole plane and applies an affine map to the class logits.
//!
//! Variable-length inputs are handled by running on the valid frames only.
//! That is the exact equivalent of a zero-padded batch whose padding mask is
//! re-applied after every layer: padded positions never reach a valid one,
//! and they are excluded from the average pool.

mod train;

pub use train::{
    cross_entropy, train, EpochRecord, LabeledClip, LeafCnn, TrainConfig, TrainOutcome, Trainer,
};

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use libm::sqrt;
use rand_distr::{Distribution, StandardNormal};

use crate::frontend::FeatureMap;
use crate::rng::seeded;
use crate::{Error, Result};

pub const KERNEL: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Axis {
    Time,
    Freq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Pool {
    None,
    Max2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct Block {
    pub axis: Axis,
    pub out_channels: usize,
    pub pool: Pool,
}

impl Block {
    pub const fn new(axis: Axis, out_channels: usize, pool: Pool) -> Self {
        Block {
            axis,
            out_channels,
            pool,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct CnnConfig {
    pub n_classes: usize,
    /// Number of frequency rows of the input feature map.
    pub in_height: usize,
    pub blocks: Vec<Block>,
}

impl CnnConfig {
    /// Four blocks, 32 then 64 channels, pooling after each time convolution.
    pub fn desk(n_classes: usize, in_height: usize) -> Self {
        use Axis::*;
        CnnConfig {
            n_classes,
            in_height,
            blocks: vec![
                Block::new(Time, 32, Pool::Max2),
                Block::new(Freq, 32, Pool::None),
                Block::new(Time, 64, Pool::Max2),
                Block::new(Freq, 64, Pool::None),
            ],
        }
    }

    /// Ten blocks widening to 1024 channels, about 8M weights.
    pub fn paper_scale(n_classes: usize, in_height: usize) -> Self {
        use Axis::*;
        let widths = [64, 128, 128, 256, 256, 512, 512, 768, 1024, 1024];
        let blocks = widths
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                let axis = if i % 2 == 0 { Time } else { Freq };
                let pool = if i % 2 == 0 && i < 6 { Pool::Max2 } else { Pool::None };
                Block::new(axis, w, pool)
            })
            .collect();
        CnnConfig {
            n_classes,
            in_height,
            blocks,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes != 2 && self.n_classes != 5 {
            return Err(Error::invalid("n_classes", alloc::format!("{} is not 2 or 5", self.n_classes)));
        }
        if self.in_height == 0 {
            return Err(Error::invalid("in_height", "must be positive"));
        }
        if self.blocks.len() < 2 {
            return Err(Error::invalid("blocks", "need at least 2 blocks"));
        }
        for (i, b) in self.blocks.iter().enumerate() {
            let expected = if i % 2 == 0 { Axis::Time } else { Axis::Freq };
            if b.axis != expected {
                return Err(Error::invalid(
                    "blocks",
                    alloc::format!("block {i} must convolve along {expected:?} (axes alternate, time first)"),
                ));
            }
            if b.out_channels == 0 {
                return Err(Error::invalid("blocks", alloc::format!("block {i} has no output channels")));
            }
        }
        Ok(())
    }

    fn in_channels(&self, block: usize) -> usize {
        if block == 0 {
            1
        } else {
            self.blocks[block - 1].out_channels
        }
    }

    fn last_channels(&self) -> usize {
        self.blocks.last().map_or(1, |b| b.out_channels)
    }

    /// Shapes of every tensor in canonical order: per block weight
    /// `[out, in, 3]` and bias `[out]`, then head weight `[K, C]` and bias `[K]`.
    pub fn tensor_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut shapes = Vec::with_capacity(2 * self.blocks.len() + 2);
        for (i, b) in self.blocks.iter().enumerate() {
            shapes.push((alloc::format!("conv{i}.weight"), vec![b.out_channels, self.in_channels(i), KERNEL]));
            shapes.push((alloc::format!("conv{i}.bias"), vec![b.out_channels]));
        }
        shapes.push((String::from("head.weight"), vec![self.n_classes, self.last_channels()]));
        shapes.push((String::from("head.bias"), vec![self.n_classes]));
        shapes
    }

    pub fn n_params(&self) -> usize {
        self.tensor_shapes().iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }
}

/// CNN weights, stored as one flat tensor per entry of
/// [`CnnConfig::tensor_shapes`].
#[derive(Debug, Clone, PartialEq)]
pub struct Cnn {
    config: CnnConfig,
    tensors: Vec<Vec<f64>>,
}

/// Gradients with the same layout as [`Cnn`].
#[derive(Debug, Clone, PartialEq)]
pub struct CnnGrads {
    pub tensors: Vec<Vec<f64>>,
}

impl CnnGrads {
    pub fn zeros(config: &CnnConfig) -> Self {
        CnnGrads {
            tensors: config
                .tensor_shapes()
                .iter()
                .map(|(_, s)| vec![0.0; s.iter().product()])
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &CnnGrads) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in &mut self.tensors {
            t.iter_mut().for_each(|v| *v *= factor);
        }
    }
}

impl Cnn {
    /// He-normal convolution weights, zero biases, seeded.
    pub fn init(config: CnnConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded(seed);
        let tensors = config
            .tensor_shapes()
            .iter()
            .map(|(name, shape)| {
                let n: usize = shape.iter().product();
                if name.ends_with(".bias") {
                    return vec![0.0; n];
                }
                let fan_in: usize = shape[1..].iter().product();
                let gain = if name.starts_with("head") { 1.0 } else { 2.0 };
                let std = sqrt(gain / fan_in as f64);
                (0..n)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        std * z
                    })
                    .collect()
            })
            .collect();
        Ok(Cnn { config, tensors })
    }

    pub fn zeros(config: CnnConfig) -> Result<Self> {
        config.validate()?;
        let tensors = CnnGrads::zeros(&config).tensors;
        Ok(Cnn { config, tensors })
    }

    /// Builds a network from tensors in canonical order.
    pub fn from_tensors(config: CnnConfig, tensors: Vec<Vec<f64>>) -> Result<Self> {
        config.validate()?;
        let shapes = config.tensor_shapes();
        if shapes.len() != tensors.len() {
            return Err(Error::ShapeMismatch {
                context: "cnn tensor count",
                expected: shapes.len(),
                actual: tensors.len(),
            });
        }
        for ((_, s), t) in shapes.iter().zip(&tensors) {
            let n: usize = s.iter().product();
            if t.len() != n {
                return Err(Error::ShapeMismatch {
                    context: "cnn tensor",
                    expected: n,
                    actual: t.len(),
                });
            }
        }
        Ok(Cnn { config, tensors })
    }

    pub fn config(&self) -> &CnnConfig {
        &self.config
    }

    pub fn tensors(&self) -> &[Vec<f64>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.tensors
    }

    fn conv_weight(&self, block: usize) -> &[f64] {
        &self.tensors[2 * block]
    }

    fn conv_bias(&self, block: usize) -> &[f64] {
        &self.tensors[2 * block + 1]
    }

    fn head(&self) -> (&[f64], &[f64]) {
        let n = self.config.blocks.len();
        (&self.tensors[2 * n], &self.tensors[2 * n + 1])
    }

    /// Logits for the whole feature map.
    pub fn forward(&self, map: &FeatureMap) -> Result<Vec<f64>> {
        self.forward_traced(map, map.n_frames).map(|(logits, _)| logits)
    }

    /// Logits using only the first `valid_frames` frames; any later frames
    /// are padding.
    pub fn forward_masked(&self, map: &FeatureMap, valid_frames: usize) -> Result<Vec<f64>> {
        self.forward_traced(map, valid_frames).map(|(logits, _)| logits)
    }

    pub fn forward_traced(&self, map: &FeatureMap, valid_frames: usize) -> Result<(Vec<f64>, CnnTrace)> {
        if map.n_channels != self.config.in_height {
            return Err(Error::ShapeMismatch {
                context: "feature map height",
                expected: self.config.in_height,
                actual: map.n_channels,
            });
        }
        if valid_frames == 0 || valid_frames > map.n_frames {
            return Err(Error::invalid(
                "valid_frames",
                alloc::format!("{valid_frames} is outside 1..={}", map.n_frames),
            ));
        }
        let input = if valid_frames == map.n_frames {
            map.values.clone()
        } else {
            map.prefix(valid_frames).values
        };
        let mut shape = Shape {
            c: 1,
            h: map.n_channels,
            t: valid_frames,
        };
        let mut act = input;
        let mut blocks = Vec::with_capacity(self.config.blocks.len());
        for (i, block) in self.config.blocks.iter().enumerate() {
            let mut post = conv_forward(&act, shape, self.conv_weight(i), self.conv_bias(i), block.out_channels, block.axis);
            post.iter_mut().for_each(|v| *v = v.max(0.0));
            let conv_shape = Shape {
                c: block.out_channels,
                ..shape
            };
            let (next, next_shape, argmax) = match block.pool {
                Pool::None => (post.clone(), conv_shape, None),
                Pool::Max2 => {
                    let (pooled, s, idx) = max_pool2(&post, conv_shape);
                    (pooled, s, Some(idx))
                }
            };
            blocks.push(BlockTrace {
                input: act,
                in_shape: shape,
                post,
                argmax,
            });
            act = next;
            shape = next_shape;
        }
        let plane = shape.h * shape.t;
        let pooled: Vec<f64> = act
            .chunks_exact(plane)
            .map(|p| p.iter().sum::<f64>() / plane as f64)
            .collect();
        let (w, b) = self.head();
        let logits: Vec<f64> = b
            .iter()
            .enumerate()
            .map(|(k, bk)| bk + dot(&w[k * shape.c..(k + 1) * shape.c], &pooled))
            .collect();
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("cnn logits"));
        }
        Ok((
            logits,
            CnnTrace {
                blocks,
                final_shape: shape,
                pooled,
            },
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Shape {
    c: usize,
    h: usize,
    t: usize,
}

impl Shape {
    fn plane(&self) -> usize {
        self.h * self.t
    }
}

#[derive(Debug, Clone)]
struct BlockTrace {
    input: Vec<f64>,
    in_shape: Shape,
    post: Vec<f64>,
    argmax: Option<Vec<u32>>,
}

/// Activations saved by [`Cnn::forward_traced`].
#[derive(Debug, Clone)]
pub struct CnnTrace {
    blocks: Vec<BlockTrace>,
    final_shape: Shape,
    pooled: Vec<f64>,
}

impl CnnTrace {
    /// Frames of the input that were used.
    pub fn valid_frames(&self) -> usize {
        self.blocks[0].in_shape.t
    }

    /// Weight gradients of `sum(dlogits * logits)` and the gradient with
    /// respect to the (valid part of the) input, channel-major `[H x T]`.
    pub fn backward(&self, cnn: &Cnn, dlogits: &[f64]) -> Result<(CnnGrads, Vec<f64>)> {
        let config = &cnn.config;
        if dlogits.len() != config.n_classes {
            return Err(Error::ShapeMismatch {
                context: "logit gradient",
                expected: config.n_classes,
                actual: dlogits.len(),
            });
        }
        let mut grads = CnnGrads::zeros(config);
        let n_blocks = config.blocks.len();
        let c_last = self.final_shape.c;
        let (w, _) = cnn.head();
        {
            let (gw, rest) = grads.tensors[2 * n_blocks..].split_at_mut(1);
            for (k, &g) in dlogits.iter().enumerate() {
                for (dst, p) in gw[0][k * c_last..(k + 1) * c_last].iter_mut().zip(&self.pooled) {
                    *dst = g * p;
                }
                rest[0][k] = g;
            }
        }
        let plane = self.final_shape.plane();
        let mut d: Vec<f64> = Vec::with_capacity(c_last * plane);
        for c in 0..c_last {
            let g: f64 = dlogits.iter().enumerate().map(|(k, dk)| dk * w[k * c_last + c]).sum();
            let v = g / plane as f64;
            d.extend(core::iter::repeat_n(v, plane));
        }
        for (i, bt) in self.blocks.iter().enumerate().rev() {
            let block = config.blocks[i];
            let mut dpost = match &bt.argmax {
                None => d,
                Some(idx) => {
                    let mut full = vec![0.0; bt.post.len()];
                    for (j, &src) in idx.iter().enumerate() {
                        full[src as usize] += d[j];
                    }
                    full
                }
            };
            for (g, &p) in dpost.iter_mut().zip(&bt.post) {
                if p <= 0.0 {
                    *g = 0.0;
                }
            }
            let (gw, gb) = {
                let (a, b) = grads.tensors[2 * i..2 * i + 2].split_at_mut(1);
                (&mut a[0], &mut b[0])
            };
            d = conv_backward(
                &bt.input,
                bt.in_shape,
                cnn.conv_weight(i),
                &dpost,
                block.out_channels,
                block.axis,
                gw,
                gb,
            );
        }
        Ok((grads, d))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `dst[x] += w * src[x + d]` along `axis`, skipping positions whose source
/// falls outside the plane (zero padding).
fn shifted_axpy(dst: &mut [f64], src: &[f64], w: f64, d: isize, axis: Axis, s: Shape) {
    match axis {
        Axis::Freq => {
            let off = s.t;
            let n = s.plane();
            let (dst, src) = match d {
                -1 => (&mut dst[off..n], &src[..n - off]),
                0 => (&mut dst[..n], &src[..n]),
                _ => (&mut dst[..n - off], &src[off..n]),
            };
            for (a, b) in dst.iter_mut().zip(src) {
                *a += w * b;
            }
        }
        Axis::Time => {
            let t = s.t;
            for (drow, srow) in dst.chunks_exact_mut(t).zip(src.chunks_exact(t)) {
                let (drow, srow) = match d {
                    -1 => (&mut drow[1..], &srow[..t - 1]),
                    0 => (&mut drow[..], &srow[..]),
                    _ => (&mut drow[..t - 1], &srow[1..]),
                };
                for (a, b) in drow.iter_mut().zip(srow) {
                    *a += w * b;
                }
            }
        }
    }
}

/// `sum_x a[x] * b[x + d]` with the same boundary rule as [`shifted_axpy`].
fn shifted_dot(a: &[f64], b: &[f64], d: isize, axis: Axis, s: Shape) -> f64 {
    match axis {
        Axis::Freq => {
            let off = s.t;
            let n = s.plane();
            match d {
                -1 => dot(&a[off..n], &b[..n - off]),
                0 => dot(&a[..n], &b[..n]),
                _ => dot(&a[..n - off], &b[off..n]),
            }
        }
        Axis::Time => {
            let t = s.t;
            a.chunks_exact(t)
                .zip(b.chunks_exact(t))
                .map(|(ar, br)| match d {
                    -1 => dot(&ar[1..], &br[..t - 1]),
                    0 => dot(ar, br),
                    _ => dot(&ar[..t - 1], &br[1..]),
                })
                .sum()
        }
    }
}

fn tap_offset(k: usize) -> isize {
    k as isize - (KERNEL as isize - 1) / 2
}

fn conv_forward(input: &[f64], s: Shape, w: &[f64], b: &[f64], out_c: usize, axis: Axis) -> Vec<f64> {
    let plane = s.plane();
    let mut out = vec![0.0; out_c * plane];
    for (o, dst) in out.chunks_exact_mut(plane).enumerate() {
        dst.fill(b[o]);
        for (i, src) in input.chunks_exact(plane).enumerate() {
            for k in 0..KERNEL {
                shifted_axpy(dst, src, w[(o * s.c + i) * KERNEL + k], tap_offset(k), axis, s);
            }
        }
    }
    out
}

/// Accumulates weight and bias gradients and returns the input gradient.
#[allow(clippy::too_many_arguments)]
fn conv_backward(
    input: &[f64],
    s: Shape,
    w: &[f64],
    dout: &[f64],
    out_c: usize,
    axis: Axis,
    gw: &mut [f64],
    gb: &mut [f64],
) -> Vec<f64> {
    let plane = s.plane();
    let mut din = vec![0.0; s.c * plane];
    for o in 0..out_c {
        let g = &dout[o * plane..(o + 1) * plane];
        gb[o] += g.iter().sum::<f64>();
        for i in 0..s.c {
            let src = &input[i * plane..(i + 1) * plane];
            let dst = &mut din[i * plane..(i + 1) * plane];
            for k in 0..KERNEL {
                let d = tap_offset(k);
                let idx = (o * s.c + i) * KERNEL + k;
                gw[idx] += shifted_dot(g, src, d, axis, s);
                shifted_axpy(dst, g, w[idx], -d, axis, s);
            }
        }
    }
    din
}

/// 2x2 max pool with ceil output sizes; ties go to the first position in
/// row-major order. Returns the flat source index of every output.
fn max_pool2(input: &[f64], s: Shape) -> (Vec<f64>, Shape, Vec<u32>) {
    let out = Shape {
        c: s.c,
        h: s.h.div_ceil(2),
        t: s.t.div_ceil(2),
    };
    let mut values = Vec::with_capacity(out.c * out.plane());
    let mut argmax = Vec::with_capacity(out.c * out.plane());
    for c in 0..s.c {
        let base = c * s.plane();
        for a in 0..out.h {
            for b in 0..out.t {
                let mut best = base + 2 * a * s.t + 2 * b;
                for h in 2 * a..(2 * a + 2).min(s.h) {
                    for t in 2 * b..(2 * b + 2).min(s.t) {
                        let j = base + h * s.t + t;
                        if input[j] > input[best] {
                            best = j;
                        }
                    }
                }
                values.push(input[best]);
                argmax.push(best as u32);
            }
        }
    }
    (values, out, argmax)
}
