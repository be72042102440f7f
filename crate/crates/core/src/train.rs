//! Weighted squared-error regression and SGD with classical momentum.

use alloc::format;
use alloc::vec::Vec;
use core::ops::ControlFlow;

use crate::annotation::Side;
use crate::error::{Error, Result};
use crate::labels::{TargetPair, WeightPair};
use crate::rng::SplitMix64;
use crate::scalar::Real;
use crate::unet::{self, NetArch, NetParams};
use crate::volume::VolumeGrid;

/// Multiplies the learning rate by `factor` every `every_epochs` epochs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDecay {
    pub every_epochs: usize,
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub shuffle: bool,
    /// Optional schedule; `None` keeps the rate constant.
    pub lr_decay: Option<StepDecay>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-4, momentum: 0.9, batch_size: 1, epochs: 1, seed: 0, shuffle: true, lr_decay: None }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::invalid(format!("learning_rate must be >= 0, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::invalid("batch_size and epochs must be positive"));
        }
        if let Some(d) = self.lr_decay {
            if d.every_epochs == 0 || !(d.factor.is_finite() && d.factor > 0.0) {
                return Err(Error::invalid("lr_decay needs every_epochs >= 1 and a positive factor"));
            }
        }
        Ok(())
    }

    /// Learning rate in effect during `epoch` (zero-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.lr_decay {
            Some(d) => self.learning_rate * libm::pow(d.factor, (epoch / d.every_epochs) as f64),
            None => self.learning_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: NetParams<f32>,
    pub velocity: NetParams<f32>,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimizer steps.
    pub step: u64,
    /// Mean training loss of each completed epoch.
    pub loss_history: Vec<f64>,
}

impl TrainState {
    pub fn new(params: NetParams<f32>) -> Self {
        let velocity = params.map(|_| 0.0f32);
        Self { params, velocity, epoch: 0, step: 0, loss_history: Vec::new() }
    }
}

/// One training example: an image and its per-side targets.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub image: VolumeGrid,
    pub targets: TargetPair,
}

/// Weighted mean of squared errors over a flat map.
///
/// Voxel weight is `w_none` where the target is non-zero and `w_zero`
/// elsewhere; the loss is `sum w (p - t)^2 / sum w` and the returned gradient
/// is `2 w (p - t) / sum w`.
pub fn weighted_mse_slice<T: Real>(pred: &[T], target: &[f32], w: &WeightPair) -> Result<(f64, Vec<T>)> {
    if pred.len() != target.len() {
        return Err(Error::invalid(format!("prediction has {} voxels, target has {}", pred.len(), target.len())));
    }
    let wsum: f64 = target.iter().map(|&t| w.weight_for(t)).sum();
    if !(wsum > 0.0) {
        return Err(Error::invalid("total loss weight is zero"));
    }
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (&p, &t) in pred.iter().zip(target) {
        let wv = w.weight_for(t);
        let r = p.to_f64() - t as f64;
        loss += wv * r * r;
        grad.push(T::from_f64(2.0 * wv * r / wsum));
    }
    Ok((loss / wsum, grad))
}

/// [`weighted_mse_slice`] on volumes with matching dims.
pub fn weighted_mse(pred: &VolumeGrid, target: &VolumeGrid, w: &WeightPair) -> Result<(f64, VolumeGrid)> {
    if pred.dims() != target.dims() {
        return Err(Error::invalid(format!(
            "prediction dims {:?} differ from target dims {:?}",
            pred.dims(),
            target.dims()
        )));
    }
    let (loss, grad) = weighted_mse_slice(pred.data(), target.data(), w)?;
    Ok((loss, pred.with_data(grad)?))
}

/// Classical momentum: `v <- momentum * v - lr * g`, then `p <- p + v`.
pub fn sgd_step(state: &mut TrainState, grads: &NetParams<f32>, lr: f64, momentum: f64) -> Result<()> {
    if grads.len() != state.params.len() || !grads.matches_shape(&state.params) {
        return Err(Error::invalid("gradient shapes do not match parameters"));
    }
    if !grads.all_finite() {
        return Err(Error::Divergence { step: state.step + 1, detail: "non-finite gradient".into() });
    }
    for ((p, v), g) in state.params.tensors_mut().zip(state.velocity.tensors_mut()).zip(grads.tensors()) {
        for ((pi, vi), &gi) in p.iter_mut().zip(v.iter_mut()).zip(g) {
            let nv = momentum * *vi as f64 - lr * gi as f64;
            *vi = nv as f32;
            *pi = (*pi as f64 + nv) as f32;
        }
    }
    if !state.params.all_finite() {
        return Err(Error::Divergence { step: state.step + 1, detail: "non-finite parameters".into() });
    }
    state.step += 1;
    Ok(())
}

/// Loss and parameter gradients of one sample; the two side losses are averaged.
pub fn sample_gradient(params: &NetParams<f32>, arch: &NetArch, sample: &TrainSample) -> Result<(f64, NetParams<f32>)> {
    let input = unet::input_from_volume::<f32>(&sample.image);
    let cache = unet::forward(params, arch, &input)?;
    let out = cache.output();
    let mut loss = 0.0;
    let mut side_grads: Vec<Vec<f32>> = Vec::with_capacity(2);
    for (c, side) in Side::BOTH.into_iter().enumerate() {
        let (l, mut g) =
            weighted_mse_slice(out.channel(c), sample.targets.map(side).data(), sample.targets.weights(side))?;
        loss += 0.5 * l;
        for v in &mut g {
            *v *= 0.5;
        }
        side_grads.push(g);
    }
    let grads = unet::backward(params, &cache, &side_grads[0], &side_grads[1])?;
    Ok((loss, grads))
}

/// Summary handed to the per-epoch callback.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    /// One-based epoch number.
    pub epoch: usize,
    pub mean_loss: f64,
    pub learning_rate: f64,
}

/// Trains from scratch with parameters initialized from `cfg.seed`.
pub fn train(dataset: &[TrainSample], arch: &NetArch, cfg: &TrainConfig) -> Result<TrainState> {
    let state = TrainState::new(NetParams::init(arch, cfg.seed)?);
    train_from(state, dataset, arch, cfg, |_, _| ControlFlow::Continue(()))
}

/// Continues training until `state.epoch == cfg.epochs`, calling `on_epoch`
/// after every epoch; returning `Break` stops early.
///
/// Epoch `e` visits samples in an order shuffled by the stream
/// `(cfg.seed, e)`, so resuming reproduces an uninterrupted run.
pub fn train_from<F>(
    mut state: TrainState,
    dataset: &[TrainSample],
    arch: &NetArch,
    cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<TrainState>
where
    F: FnMut(&TrainState, EpochStats) -> ControlFlow<()>,
{
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    if !state.params.matches(arch) || !state.velocity.matches(arch) {
        return Err(Error::invalid("training state does not match the architecture"));
    }
    for s in dataset {
        arch.check_dims(s.image.dims())?;
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    while state.epoch < cfg.epochs {
        let epoch = state.epoch;
        let lr = cfg.lr_at(epoch);
        if cfg.shuffle {
            order = (0..dataset.len()).collect();
            SplitMix64::stream(cfg.seed, epoch as u64).shuffle(&mut order);
        }
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut acc: Option<NetParams<f32>> = None;
            for &i in batch {
                let (loss, g) = sample_gradient(&state.params, arch, &dataset[i])?;
                if !loss.is_finite() {
                    return Err(Error::Divergence { step: state.step + 1, detail: "non-finite loss".into() });
                }
                total += loss;
                match acc.as_mut() {
                    None => acc = Some(g),
                    Some(a) => a.add_assign(&g),
                }
            }
            let mut g = acc.expect("non-empty batch");
            if batch.len() > 1 {
                g.scale(1.0 / batch.len() as f32);
            }
            sgd_step(&mut state, &g, lr, cfg.momentum)?;
        }
        state.epoch += 1;
        let stats = EpochStats { epoch: state.epoch, mean_loss: total / dataset.len() as f64, learning_rate: lr };
        state.loss_history.push(stats.mean_loss);
        if on_epoch(&state, stats).is_break() {
            break;
        }
    }
    Ok(state)
}

/// Mean per-sample loss without updating anything.
pub fn evaluate_loss(params: &NetParams<f32>, arch: &NetArch, dataset: &[TrainSample]) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::invalid("empty dataset"));
    }
    let mut total = 0.0;
    for s in dataset {
        let input = unet::input_from_volume::<f32>(&s.image);
        let cache = unet::forward(params, arch, &input)?;
        for (c, side) in Side::BOTH.into_iter().enumerate() {
            let (l, _) =
                weighted_mse_slice(cache.output().channel(c), s.targets.map(side).data(), s.targets.weights(side))?;
            total += 0.5 * l;
        }
    }
    Ok(total / dataset.len() as f64)
}
