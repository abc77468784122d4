//! SGD training with step-decayed learning rate.
//!
//! One epoch is one mini-batch: sample a `P x K` batch, embed each sample
//! once into a feature cache, draw `T` triplets over the cache, accumulate
//! per-feature loss gradients, backpropagate once per sample and take a
//! single SGD step.

use std::io::Write;

use rand::Rng;

use crate::embedding::{EmbeddingNetwork, NetworkGradients};
use crate::error::{Error, Result};
use crate::gallery::MixedGallery;
use crate::loss::{batch_triplet_loss, BatchLoss, LossConfig};
use crate::rng;
use crate::sampling::{default_triplet_count, sample_minibatch, sample_triplets, MiniBatch, TripletIndices};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig<T> {
    pub lr_init: T,
    /// Multiplier applied every `lr_step_epochs` epochs.
    pub lr_decay_factor: T,
    pub lr_step_epochs: usize,
    pub lr_floor: T,
    pub epochs: usize,
    /// Identities per batch.
    pub p: usize,
    /// Samples per identity.
    pub k: usize,
    /// Triplets drawn per epoch.
    pub triplets: usize,
    pub loss: LossConfig<T>,
    pub seed: u64,
}

impl<T: Scalar> Default for TrainConfig<T> {
    fn default() -> Self {
        TrainConfig {
            lr_init: T::of(0.01),
            lr_decay_factor: T::of(0.95),
            lr_step_epochs: 50,
            lr_floor: T::of(0.0005),
            epochs: 10_000,
            p: 10,
            k: 5,
            triplets: default_triplet_count(10, 5),
            loss: LossConfig::default(),
            seed: 0,
        }
    }
}

impl<T: Scalar> TrainConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_floor > T::zero() && self.lr_floor <= self.lr_init && self.lr_init.is_finite()) {
            return Err(Error::config("lr_floor", "need 0 < lr_floor <= lr_init"));
        }
        if !(self.lr_decay_factor > T::zero() && self.lr_decay_factor < T::one()) {
            return Err(Error::config("lr_decay_factor", "need 0 < lr_decay_factor < 1"));
        }
        if self.lr_step_epochs == 0 {
            return Err(Error::config("lr_step_epochs", "must be positive"));
        }
        if self.p < 2 {
            return Err(Error::config("P", "need at least 2 identities per batch"));
        }
        if self.k < 2 {
            return Err(Error::config("K", "need at least 2 samples per identity"));
        }
        if self.triplets == 0 {
            return Err(Error::config("T", "must be positive"));
        }
        self.loss.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats<T> {
    pub epoch: usize,
    pub lr: T,
    pub mean_loss: T,
    pub active_triplets: usize,
    pub forward_passes: usize,
    pub backward_passes: usize,
}

/// `max(lr_floor, lr_init · decay^⌊epoch / step⌋)`.
pub fn learning_rate_at<T: Scalar>(epoch: usize, cfg: &TrainConfig<T>) -> T {
    let steps = i32::try_from(epoch / cfg.lr_step_epochs.max(1)).unwrap_or(i32::MAX);
    (cfg.lr_init * cfg.lr_decay_factor.powi(steps)).max(cfg.lr_floor)
}

/// The random draws of one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochPlan {
    pub batch: MiniBatch,
    pub triplets: Vec<TripletIndices>,
}

pub fn plan_epoch<T: Scalar, R: Rng + ?Sized>(
    gallery: &MixedGallery<T>,
    cfg: &TrainConfig<T>,
    rng: &mut R,
) -> Result<EpochPlan> {
    let batch = sample_minibatch(gallery, cfg.p, cfg.k, rng)?;
    let triplets = sample_triplets(&batch, cfg.triplets, rng)?;
    Ok(EpochPlan { batch, triplets })
}

#[derive(Debug, Clone)]
pub struct BatchPass<T> {
    pub loss: BatchLoss<T>,
    pub grads: NetworkGradients<T>,
    pub forward_passes: usize,
    pub backward_passes: usize,
}

/// Mean triplet loss of `plan` under `net` and its gradient with respect to
/// every network parameter.
pub fn batch_pass<T: Scalar>(
    net: &EmbeddingNetwork<T>,
    gallery: &MixedGallery<T>,
    plan: &EpochPlan,
    loss: &LossConfig<T>,
) -> Result<BatchPass<T>> {
    let mut features = Vec::with_capacity(plan.batch.len());
    let mut caches = Vec::with_capacity(plan.batch.len());
    for &s in plan.batch.samples() {
        let (f, c) = net.forward(&gallery.sample(s).input)?;
        features.push(f);
        caches.push(c);
    }
    let forward_passes = caches.len();
    let loss = batch_triplet_loss(&features, &plan.triplets, loss)?;
    let mut grads = NetworkGradients::zeros_like(net);
    let mut backward_passes = 0;
    for (cache, g) in caches.iter().zip(&loss.feature_grads) {
        net.backward_into(cache, g, &mut grads)?;
        backward_passes += 1;
    }
    Ok(BatchPass { loss, grads, forward_passes, backward_passes })
}

pub fn run_epoch<T: Scalar, R: Rng + ?Sized>(
    net: &mut EmbeddingNetwork<T>,
    gallery: &MixedGallery<T>,
    cfg: &TrainConfig<T>,
    epoch: usize,
    rng: &mut R,
) -> Result<EpochStats<T>> {
    let plan = plan_epoch(gallery, cfg, rng)?;
    let pass = batch_pass(net, gallery, &plan, &cfg.loss)?;
    let lr = learning_rate_at(epoch, cfg);
    net.apply_sgd_step(&pass.grads, lr)?;
    Ok(EpochStats {
        epoch,
        lr,
        mean_loss: pass.loss.mean_loss,
        active_triplets: pass.loss.active,
        forward_passes: pass.forward_passes,
        backward_passes: pass.backward_passes,
    })
}

/// Runs `cfg.epochs` epochs on one rng stream derived from `cfg.seed`.
pub fn train<T: Scalar>(
    mut net: EmbeddingNetwork<T>,
    gallery: &MixedGallery<T>,
    cfg: &TrainConfig<T>,
) -> Result<(EmbeddingNetwork<T>, Vec<EpochStats<T>>)> {
    cfg.validate()?;
    if gallery.input_dim() != net.input_dim() {
        return Err(Error::DimensionMismatch { expected: net.input_dim(), got: gallery.input_dim() });
    }
    let mut rng = rng::stream(cfg.seed, rng::STREAM_TRAIN);
    let mut stats = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        stats.push(run_epoch(&mut net, gallery, cfg, epoch, &mut rng)?);
    }
    Ok((net, stats))
}

/// `epoch,lr,mean_loss,active_triplets`, preceded by `#` comment lines.
pub fn write_loss_curve<T: Scalar, W: Write>(
    stats: &[EpochStats<T>],
    comments: &[String],
    mut w: W,
) -> std::io::Result<()> {
    for c in comments {
        writeln!(w, "# {c}")?;
    }
    writeln!(w, "epoch,lr,mean_loss,active_triplets")?;
    for s in stats {
        writeln!(w, "{},{},{},{}", s.epoch, s.lr, s.mean_loss, s.active_triplets)?;
    }
    Ok(())
}
