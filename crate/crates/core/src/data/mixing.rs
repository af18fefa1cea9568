use alloc::vec::Vec;

use rand::seq::{index, SliceRandom};
use rand::Rng;

use crate::error::{Error, Result};
use crate::init;

/// Ratio of image-caption to video-caption samples per epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MixingConfig {
    pub alpha: f64,
}

impl MixingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha.is_finite() && self.alpha >= 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidConfig("alpha must be finite and >= 0"))
        }
    }

    /// `floor(alpha · videos)`.
    pub fn image_count(&self, videos: usize) -> usize {
        // The 1e-9 slack keeps products such as 0.29·100 from flooring to 28.
        let x = self.alpha * videos as f64;
        num_traits::Float::floor(x + 1e-9 * x.max(1.0)) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EpochItem {
    Video(usize),
    Image(usize),
}

/// All `n_videos` videos plus `floor(alpha · n_videos)` images, shuffled by `seed`.
///
/// Images are drawn without replacement when the pool is large enough, with
/// replacement otherwise.
pub fn mix_epoch(n_videos: usize, n_images: usize, cfg: &MixingConfig, seed: u64) -> Result<Vec<EpochItem>> {
    cfg.validate()?;
    if cfg.alpha > 0.0 && n_images == 0 {
        return Err(Error::EmptyImageSource);
    }
    let mut rng = init::rng(seed);
    let n_img = cfg.image_count(n_videos);
    let mut items: Vec<EpochItem> = (0..n_videos).map(EpochItem::Video).collect();
    if n_img > 0 {
        if n_images >= n_img {
            items.extend(index::sample(&mut rng, n_images, n_img).into_iter().map(EpochItem::Image));
        } else {
            items.extend((0..n_img).map(|_| EpochItem::Image(rng.random_range(0..n_images))));
        }
    }
    items.shuffle(&mut rng);
    Ok(items)
}

/// Contiguous chunks of `batch_size`; a trailing chunk of one element is dropped
/// when `batch_size > 1` since the ranking loss is degenerate on it.
pub fn make_batches<I: Clone>(items: &[I], batch_size: usize) -> Vec<Vec<I>> {
    let b = batch_size.max(1);
    items
        .chunks(b)
        .filter(|c| b == 1 || c.len() > 1)
        .map(|c| c.to_vec())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::collections::BTreeSet;
    use alloc::vec;
    use proptest::prelude::*;

    fn counts(items: &[EpochItem]) -> (usize, usize) {
        let v = items.iter().filter(|i| matches!(i, EpochItem::Video(_))).count();
        (v, items.len() - v)
    }

    #[test]
    fn alpha_zero_is_videos_only() {
        let e = mix_epoch(10, 0, &MixingConfig { alpha: 0.0 }, 1).unwrap();
        assert_eq!(counts(&e), (10, 0));
    }

    #[test]
    fn alpha_one_doubles_the_epoch() {
        let e = mix_epoch(100, 500, &MixingConfig { alpha: 1.0 }, 2).unwrap();
        assert_eq!(counts(&e), (100, 100));
        let distinct: BTreeSet<_> = e.iter().filter(|i| matches!(i, EpochItem::Image(_))).collect();
        assert_eq!(distinct.len(), 100);
    }

    #[test]
    fn alpha_half_floors() {
        let e = mix_epoch(101, 500, &MixingConfig { alpha: 0.5 }, 3).unwrap();
        assert_eq!(counts(&e), (101, 50));
        assert_eq!(MixingConfig { alpha: 0.29 }.image_count(100), 29);
    }

    #[test]
    fn small_pool_samples_with_replacement() {
        let e = mix_epoch(10, 2, &MixingConfig { alpha: 1.0 }, 4).unwrap();
        assert_eq!(counts(&e), (10, 10));
    }

    #[test]
    fn empty_image_source_is_an_error() {
        assert_eq!(
            mix_epoch(10, 0, &MixingConfig { alpha: 0.5 }, 0),
            Err(Error::EmptyImageSource)
        );
        assert!(mix_epoch(10, 5, &MixingConfig { alpha: -1.0 }, 0).is_err());
    }

    #[test]
    fn deterministic_for_seed() {
        let cfg = MixingConfig { alpha: 0.5 };
        assert_eq!(mix_epoch(20, 30, &cfg, 9).unwrap(), mix_epoch(20, 30, &cfg, 9).unwrap());
        assert_ne!(mix_epoch(20, 30, &cfg, 9).unwrap(), mix_epoch(20, 30, &cfg, 10).unwrap());
    }

    #[test]
    fn batches_of_ten_by_four() {
        let items: Vec<usize> = (0..10).collect();
        let b = make_batches(&items, 4);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 2]);
        let flat: Vec<usize> = b.concat();
        assert_eq!(flat, items);
    }

    #[test]
    fn trailing_singleton_dropped() {
        let items: Vec<usize> = (0..9).collect();
        let b = make_batches(&items, 4);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4]);
        assert_eq!(make_batches(&items, 1).len(), 9);
    }

    proptest! {
        #[test]
        fn image_count_is_floor(num in 0usize..60, v in 0usize..300, seed in 0u64..50) {
            let cfg = MixingConfig { alpha: num as f64 / 20.0 };
            let e = mix_epoch(v, 1000, &cfg, seed).unwrap();
            let (nv, ni) = counts(&e);
            prop_assert_eq!(nv, v);
            prop_assert_eq!(ni, num * v / 20);
            let videos: BTreeSet<_> = e.iter().filter_map(|i| match i { EpochItem::Video(k) => Some(*k), _ => None }).collect();
            prop_assert_eq!(videos.len(), v);
        }
    }
}
