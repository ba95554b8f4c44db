//! Joint training of the Gabor frontend and the CNN.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use libm::{exp, log};
use rand::seq::SliceRandom;
use rand::Rng as _;

use super::{Axis, Block, Cnn, CnnConfig, CnnGrads, Pool};
use crate::audio::AudioClip;
use crate::checkpoint::{Checkpoint, ModelKind, NamedTensor};
use crate::codec::{put_f64, put_u32, Reader};
use crate::error::FormatError;
use crate::frontend::{gabor_forward, gabor_forward_traced, FeatureMap, FrontendGrads, GaborFrontendParams, ParamGroup};
use crate::labels::{argmax, ClassScores};
use crate::optim::Adam;
use crate::rng::substream;
use crate::{Error, Result};

/// Spacing of the gradient grid used by [`cross_entropy`].
const GRAD_GRID: f64 = 1.0 / (1u64 << 52) as f64;

/// `-log softmax(logits)[label]` and its gradient `softmax - onehot`.
///
/// The gradient entries are rounded to multiples of 2^-52, so every partial
/// sum is exact and the entries add up to exactly zero in any order.
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(Error::LabelOutOfRange {
            label,
            n_classes: logits.len(),
        });
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|&z| exp(z - max)).sum();
    let lse = max + log(sum);
    let loss = (lse - logits[label]).max(0.0);
    let mut grad: Vec<f64> = logits
        .iter()
        .map(|&z| libm::round(exp(z - lse) / GRAD_GRID) * GRAD_GRID)
        .collect();
    grad[label] = 0.0;
    let rest: f64 = grad.iter().sum();
    grad[label] = -rest;
    Ok((loss, grad))
}

/// An utterance and its target class index under the training task.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledClip {
    pub clip: AudioClip,
    pub label: usize,
}

/// The learnable frontend followed by the CNN.
#[derive(Debug, Clone, PartialEq)]
pub struct LeafCnn {
    pub frontend: GaborFrontendParams,
    pub cnn: Cnn,
}

impl LeafCnn {
    pub fn new(frontend: GaborFrontendParams, cnn: Cnn) -> Result<Self> {
        frontend.validate()?;
        if frontend.n_channels() != cnn.config().in_height {
            return Err(Error::ShapeMismatch {
                context: "frontend channels vs cnn input height",
                expected: cnn.config().in_height,
                actual: frontend.n_channels(),
            });
        }
        Ok(LeafCnn { frontend, cnn })
    }

    pub fn n_classes(&self) -> usize {
        self.cnn.config().n_classes
    }

    fn check_clip(&self, clip: &AudioClip) -> Result<()> {
        if clip.len() < self.frontend.filter_len {
            return Err(Error::invalid(
                "clip",
                alloc::format!(
                    "{} has {} samples, shorter than one {}-sample frontend window",
                    clip.source_id,
                    clip.len(),
                    self.frontend.filter_len
                ),
            ));
        }
        Ok(())
    }

    pub fn features(&self, clip: &AudioClip) -> Result<FeatureMap> {
        self.check_clip(clip)?;
        gabor_forward(clip, &self.frontend)
    }

    pub fn logits(&self, clip: &AudioClip) -> Result<Vec<f64>> {
        self.cnn.forward(&self.features(clip)?)
    }

    pub fn predict_utterance(&self, clip: &AudioClip) -> Result<ClassScores> {
        Ok(ClassScores::from_logits(&self.logits(clip)?))
    }

    /// Cross-entropy of one utterance and the gradients of every parameter.
    pub fn loss_and_grads(&self, clip: &AudioClip, label: usize) -> Result<(f64, FrontendGrads, CnnGrads)> {
        self.check_clip(clip)?;
        let (map, trace) = gabor_forward_traced(clip, &self.frontend)?;
        let (logits, cnn_trace) = self.cnn.forward_traced(&map, map.n_frames)?;
        let (loss, dlogits) = cross_entropy(&logits, label)?;
        let (cnn_grads, dmap) = cnn_trace.backward(&self.cnn, &dlogits)?;
        let frontend_grads = trace.backward(&self.frontend, &dmap)?;
        Ok((loss, frontend_grads, cnn_grads))
    }

    /// Mean cross-entropy and accuracy over labelled utterances.
    pub fn evaluate(&self, examples: &[LabeledClip]) -> Result<(f64, f64)> {
        if examples.is_empty() {
            return Err(Error::Empty("evaluation set"));
        }
        let each = |ex: &LabeledClip| -> Result<(f64, bool)> {
            let logits = self.logits(&ex.clip)?;
            let (loss, _) = cross_entropy(&logits, ex.label)?;
            Ok((loss, argmax(&logits) == ex.label))
        };
        #[cfg(feature = "parallel")]
        let results: Vec<Result<(f64, bool)>> = {
            use rayon::prelude::*;
            examples.par_iter().map(each).collect()
        };
        #[cfg(not(feature = "parallel"))]
        let results: Vec<Result<(f64, bool)>> = examples.iter().map(each).collect();
        let mut loss = 0.0;
        let mut correct = 0usize;
        for r in results {
            let (l, ok) = r?;
            loss += l;
            correct += ok as usize;
        }
        let n = examples.len() as f64;
        Ok((loss / n, correct as f64 / n))
    }

    fn param_sizes(&self) -> Vec<usize> {
        let n = self.frontend.n_channels();
        let mut sizes = vec![n; ParamGroup::ALL.len()];
        sizes.extend(self.cnn.tensors().iter().map(Vec::len));
        sizes
    }

    /// Weight decay applies to convolution and head weights only.
    fn decay_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; ParamGroup::ALL.len()];
        mask.extend((0..self.cnn.tensors().len()).map(|i| i % 2 == 0));
        mask
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let config = self.cnn.config();
        let mut bytes = Vec::new();
        put_u32(&mut bytes, config.in_height as u32);
        put_u32(&mut bytes, config.blocks.len() as u32);
        for b in &config.blocks {
            bytes.push(match b.axis {
                Axis::Time => 0,
                Axis::Freq => 1,
            });
            put_u32(&mut bytes, b.out_channels as u32);
            bytes.push(match b.pool {
                Pool::None => 0,
                Pool::Max2 => 1,
            });
        }
        let fe = &self.frontend;
        put_u32(&mut bytes, fe.sample_rate);
        put_u32(&mut bytes, fe.filter_len as u32);
        put_u32(&mut bytes, fe.hop as u32);
        put_f64(&mut bytes, fe.pcen_smooth);
        put_f64(&mut bytes, fe.pcen_eps);

        let n = fe.n_channels();
        let mut tensors: Vec<NamedTensor> = ParamGroup::ALL
            .iter()
            .map(|&g| NamedTensor::from_f64(&frontend_tensor_name(g), &[n], fe.group(g)))
            .collect();
        for ((name, shape), data) in config.tensor_shapes().iter().zip(self.cnn.tensors()) {
            tensors.push(NamedTensor::from_f64(name, shape, data));
        }
        Checkpoint {
            kind: ModelKind::Cnn,
            n_classes: config.n_classes as u32,
            config: bytes,
            tensors,
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.kind != ModelKind::Cnn {
            return Err(Error::invalid(
                "checkpoint",
                alloc::format!("expected a cnn model, found {}", ck.kind.name()),
            ));
        }
        let mut r = Reader::new(&ck.config);
        let in_height = r.u32("cnn in_height")? as usize;
        let n_blocks = r.u32("cnn block count")? as usize;
        let mut blocks = Vec::new();
        for _ in 0..n_blocks {
            let axis = match r.u8("block axis")? {
                0 => Axis::Time,
                1 => Axis::Freq,
                v => return Err(invalid_field("block axis", v).into()),
            };
            let out_channels = r.u32("block channels")? as usize;
            let pool = match r.u8("block pool")? {
                0 => Pool::None,
                1 => Pool::Max2,
                v => return Err(invalid_field("block pool", v).into()),
            };
            blocks.push(Block::new(axis, out_channels, pool));
        }
        let sample_rate = r.u32("frontend sample_rate")?;
        let filter_len = r.u32("frontend filter_len")? as usize;
        let hop = r.u32("frontend hop")? as usize;
        let pcen_smooth = r.f64("frontend pcen_smooth")?;
        let pcen_eps = r.f64("frontend pcen_eps")?;
        r.finish()?;

        let config = CnnConfig {
            n_classes: ck.n_classes as usize,
            in_height,
            blocks,
        };
        config.validate()?;
        let mut groups = Vec::new();
        for g in ParamGroup::ALL {
            groups.push(ck.tensor_values(&frontend_tensor_name(g), in_height)?);
        }
        let mut it = groups.into_iter();
        let mut next = || it.next().unwrap_or_default();
        let frontend = GaborFrontendParams {
            sample_rate,
            center_freqs: next(),
            bandwidths: next(),
            pool_sigmas: next(),
            pcen_alpha: next(),
            pcen_delta: next(),
            pcen_root: next(),
            pcen_smooth,
            pcen_eps,
            filter_len,
            hop,
        };
        let tensors = config
            .tensor_shapes()
            .iter()
            .map(|(name, shape)| ck.tensor_values(name, shape.iter().product()))
            .collect::<core::result::Result<Vec<_>, FormatError>>()?;
        LeafCnn::new(frontend, Cnn::from_tensors(config, tensors)?)
    }
}

fn frontend_tensor_name(g: ParamGroup) -> String {
    alloc::format!("frontend.{}", g.name())
}

fn invalid_field(field: &'static str, value: u8) -> FormatError {
    FormatError::InvalidField {
        field,
        reason: alloc::format!("unknown code {value}"),
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a new best validation loss before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Decoupled decay on convolution and head weights.
    pub weight_decay: f64,
    /// Train on a random window of at most this many seconds per utterance
    /// and epoch; validation always sees whole utterances.
    pub crop_seconds: Option<f64>,
    /// Anneal the learning rate along a half cosine over `max_epochs`.
    pub cosine_decay: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 8,
            max_epochs: 30,
            patience: 5,
            seed: 0,
            weight_decay: 1e-4,
            crop_seconds: None,
            cosine_decay: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate", "must be finite and non-negative"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be positive"));
        }
        if self.max_epochs == 0 {
            return Err(Error::invalid("max_epochs", "must be positive"));
        }
        if self.patience == 0 || self.patience > self.max_epochs {
            return Err(Error::invalid("patience", "must lie in 1..=max_epochs"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::invalid("weight_decay", "must be finite and non-negative"));
        }
        if let Some(c) = self.crop_seconds {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::invalid("crop_seconds", "must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights of the epoch with the lowest validation loss.
    pub model: LeafCnn,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

/// Optimizer state around a model; one [`Trainer::step`] is one Adam update
/// on the mean loss of a batch.
#[derive(Debug, Clone)]
pub struct Trainer {
    model: LeafCnn,
    adam: Adam,
    learning_rate: f64,
    weight_decay: f64,
}

impl Trainer {
    pub fn new(model: LeafCnn, learning_rate: f64, weight_decay: f64) -> Self {
        let adam = Adam::new(&model.param_sizes());
        Trainer {
            model,
            adam,
            learning_rate,
            weight_decay,
        }
    }

    pub fn set_learning_rate(&mut self, learning_rate: f64) {
        self.learning_rate = learning_rate;
    }

    pub fn model(&self) -> &LeafCnn {
        &self.model
    }

    pub fn into_model(self) -> LeafCnn {
        self.model
    }

    /// Mean batch loss before the update.
    pub fn step(&mut self, batch: &[&LabeledClip]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Empty("batch"));
        }
        let model = &self.model;
        let each = |ex: &&LabeledClip| model.loss_and_grads(&ex.clip, ex.label);
        #[cfg(feature = "parallel")]
        let parts: Vec<Result<(f64, FrontendGrads, CnnGrads)>> = {
            use rayon::prelude::*;
            batch.par_iter().map(each).collect()
        };
        #[cfg(not(feature = "parallel"))]
        let parts: Vec<Result<(f64, FrontendGrads, CnnGrads)>> = batch.iter().map(each).collect();

        let mut loss = 0.0;
        let mut fe_grads = FrontendGrads::zeros(model.frontend.n_channels());
        let mut cnn_grads = CnnGrads::zeros(model.cnn.config());
        for part in parts {
            let (l, fe, cnn) = part?;
            loss += l;
            for g in ParamGroup::ALL {
                for (a, b) in fe_grads.group_mut(g).iter_mut().zip(fe.group(g)) {
                    *a += b;
                }
            }
            cnn_grads.add_assign(&cnn);
        }
        let scale = 1.0 / batch.len() as f64;
        cnn_grads.scale(scale);
        for g in ParamGroup::ALL {
            fe_grads.group_mut(g).iter_mut().for_each(|v| *v *= scale);
        }

        let decay = self.model.decay_mask();
        let LeafCnn { frontend, cnn } = &mut self.model;
        let mut params: Vec<&mut [f64]> = Vec::new();
        {
            let GaborFrontendParams {
                center_freqs,
                bandwidths,
                pool_sigmas,
                pcen_alpha,
                pcen_delta,
                pcen_root,
                ..
            } = frontend;
            params.push(center_freqs);
            params.push(bandwidths);
            params.push(pool_sigmas);
            params.push(pcen_alpha);
            params.push(pcen_delta);
            params.push(pcen_root);
        }
        params.extend(cnn.tensors_mut().iter_mut().map(|t| t.as_mut_slice()));
        let mut grads: Vec<&[f64]> = ParamGroup::ALL.iter().map(|&g| fe_grads.group(g)).collect();
        grads.extend(cnn_grads.tensors.iter().map(Vec::as_slice));
        self.adam
            .step(&mut params, &grads, self.learning_rate, self.weight_decay, &decay);
        self.model.frontend.project();
        Ok(loss * scale)
    }
}

fn check_labels(examples: &[LabeledClip], n_classes: usize, what: &'static str) -> Result<()> {
    if examples.is_empty() {
        return Err(Error::Empty(what));
    }
    if let Some(ex) = examples.iter().find(|ex| ex.label >= n_classes) {
        return Err(Error::LabelOutOfRange {
            label: ex.label,
            n_classes,
        });
    }
    Ok(())
}

fn crop(clip: &AudioClip, max_len: usize, rng: &mut crate::rng::Rng) -> AudioClip {
    if clip.len() <= max_len {
        return clip.clone();
    }
    let start = rng.random_range(0..=clip.len() - max_len);
    AudioClip {
        samples: clip.samples[start..start + max_len].to_vec(),
        sample_rate: clip.sample_rate,
        source_id: clip.source_id.clone(),
    }
}

/// Trains the frontend and CNN jointly with Adam and early stopping on the
/// validation loss. Batches hold utterances of similar length; the batch
/// order is reshuffled every epoch from the seed.
pub fn train(
    train: &[LabeledClip],
    val: &[LabeledClip],
    cnn_config: CnnConfig,
    frontend: GaborFrontendParams,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    cnn_config.validate()?;
    check_labels(train, cnn_config.n_classes, "training set")?;
    check_labels(val, cnn_config.n_classes, "validation set")?;
    let cnn = Cnn::init(cnn_config, config.seed)?;
    let model = LeafCnn::new(frontend, cnn)?;
    let crop_len = config
        .crop_seconds
        .map(|c| ((c * model.frontend.sample_rate as f64) as usize).max(model.frontend.filter_len));

    let mut trainer = Trainer::new(model, config.learning_rate, config.weight_decay);
    let mut best: Option<(f64, usize, LeafCnn)> = None;
    let mut history = Vec::new();
    let mut since_best = 0;
    for epoch in 1..=config.max_epochs {
        if config.cosine_decay {
            let progress = (epoch - 1) as f64 / config.max_epochs as f64;
            trainer.set_learning_rate(config.learning_rate * 0.5 * (1.0 + libm::cos(core::f64::consts::PI * progress)));
        }
        let mut rng = substream(config.seed, epoch as u64);
        let epoch_set: Vec<LabeledClip> = match crop_len {
            Some(n) => train
                .iter()
                .map(|ex| LabeledClip {
                    clip: crop(&ex.clip, n, &mut rng),
                    label: ex.label,
                })
                .collect(),
            None => train.to_vec(),
        };
        let mut order: Vec<usize> = (0..epoch_set.len()).collect();
        order.sort_by_key(|&i| (epoch_set[i].clip.len(), i));
        let mut batches: Vec<&[usize]> = order.chunks(config.batch_size).collect();
        batches.shuffle(&mut rng);

        let mut total = 0.0;
        for idx in batches {
            let batch: Vec<&LabeledClip> = idx.iter().map(|&i| &epoch_set[i]).collect();
            total += trainer.step(&batch)? * batch.len() as f64;
        }
        let train_loss = total / epoch_set.len() as f64;
        let (val_loss, val_accuracy) = trainer.model().evaluate(val)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFinite("validation loss"));
        }
        log::info!(
            "epoch {epoch}: train loss {train_loss:.4}, val loss {val_loss:.4}, val acc {:.3}",
            val_accuracy
        );
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_accuracy,
        });
        if best.as_ref().is_none_or(|(b, _, _)| val_loss < *b) {
            best = Some((val_loss, epoch, trainer.model().clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }
    let (_, best_epoch, model) = best.ok_or(Error::Empty("training history"))?;
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::LN_2;

    #[test]
    fn uniform_logits_give_log_k() {
        let (loss, _) = cross_entropy(&[0.0; 5], 3).unwrap();
        assert!((loss - libm::log(5.0)).abs() < 1e-15);
        let (loss, _) = cross_entropy(&[0.0, 0.0], 0).unwrap();
        assert!((loss - LN_2).abs() < 1e-15);
    }

    #[test]
    fn saturated_correct_logit_has_tiny_loss() {
        let (loss, grad) = cross_entropy(&[0.0, 100.0, 0.0, 0.0, 0.0], 1).unwrap();
        assert!(loss < 1e-6);
        assert!(grad.iter().all(|g| g.abs() < 1e-6));
    }

    #[test]
    fn gradient_sums_to_exactly_zero() {
        let mut rng = crate::rng::seeded(5);
        for _ in 0..1000 {
            let k = if rng.random_bool(0.5) { 2 } else { 5 };
            let logits: Vec<f64> = (0..k).map(|_| rng.random_range(-30.0..30.0)).collect();
            let label = rng.random_range(0..k);
            let (_, grad) = cross_entropy(&logits, label).unwrap();
            assert_eq!(grad.iter().sum::<f64>(), 0.0);
            assert_eq!(grad.iter().rev().sum::<f64>(), 0.0);
            let p = crate::labels::softmax(&logits);
            for (j, g) in grad.iter().enumerate() {
                let want = p[j] - (j == label) as u8 as f64;
                assert!((g - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn label_out_of_range() {
        assert!(matches!(cross_entropy(&[0.0, 1.0], 2), Err(Error::LabelOutOfRange { .. })));
    }
}
