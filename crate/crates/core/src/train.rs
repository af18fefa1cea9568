//! One optimization step and one epoch over in-memory pairs.

use alloc::vec::Vec;

use crate::data::{make_batches, mix_epoch, Caption, EpochItem, MixingConfig, Pair, VideoSample};
use crate::error::{Error, Result};
use crate::init;
use crate::loss::{ranking_loss, ranking_loss_grad, LossConfig};
use crate::model::MeeParams;
use crate::param::{adam_step, AdamConfig, ParameterRegistry};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub loss: LossConfig,
    pub mixing: MixingConfig,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            batch_size: 64,
            adam: AdamConfig::with_learning_rate(4e-4),
            loss: LossConfig::default(),
            mixing: MixingConfig { alpha: 0.0 },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    /// Mean pre-update batch loss.
    pub mean_loss: f64,
    pub batches: usize,
    pub images: usize,
}

/// Seed of epoch `epoch` for a run seeded with `seed`.
pub fn epoch_seed(seed: u64, epoch: u64) -> u64 {
    init::derive_seed(seed, epoch.wrapping_add(1))
}

/// Forward, loss, backward and one Adam update on a batch. Returns the loss
/// before the update.
pub fn train_step<T: Real>(
    params: &mut MeeParams<T>,
    captions: &[Caption<T>],
    videos: &[VideoSample<T>],
    adam: &AdamConfig,
    loss: &LossConfig,
) -> Result<T> {
    params.zero_grads();
    let fwd = params.forward_batch(captions, videos)?;
    let l = ranking_loss(&fwd.scores, loss)?;
    if !l.is_finite() {
        return Err(Error::NonFiniteLoss);
    }
    let g = ranking_loss_grad(&fwd.scores, loss)?;
    params.backward_batch(&fwd, captions, videos, &g)?;
    adam_step(params, adam);
    Ok(l)
}

/// Mixes `videos` with `images`, batches, and trains one epoch.
pub fn train_epoch<T: Real>(
    params: &mut MeeParams<T>,
    videos: &[Pair<T>],
    images: &[Pair<T>],
    opts: &TrainOptions,
    seed: u64,
) -> Result<EpochStats> {
    let items = mix_epoch(videos.len(), images.len(), &opts.mixing, seed)?;
    let n_images = items.iter().filter(|i| matches!(i, EpochItem::Image(_))).count();
    let batches = make_batches(&items, opts.batch_size);
    let mut total = 0.0;
    for batch in &batches {
        let pairs: Vec<&Pair<T>> = batch
            .iter()
            .map(|it| match *it {
                EpochItem::Video(i) => &videos[i],
                EpochItem::Image(i) => &images[i],
            })
            .collect();
        let captions: Vec<Caption<T>> = pairs.iter().map(|p| p.caption.clone()).collect();
        let vids: Vec<VideoSample<T>> = pairs.iter().map(|p| p.video.clone()).collect();
        total += train_step(params, &captions, &vids, &opts.adam, &opts.loss)?.as_f64();
    }
    Ok(EpochStats {
        mean_loss: if batches.is_empty() { 0.0 } else { total / batches.len() as f64 },
        batches: batches.len(),
        images: n_images,
    })
}
