//! Caption/video samples, epoch mixing of video and image sources, batching,
//! and a latent-factor synthetic dataset generator.

mod mixing;
mod synthetic;

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

pub use mixing::{make_batches, mix_epoch, EpochItem, MixingConfig};
pub use synthetic::{gen_synthetic, SynthConfig, SynthModality, SyntheticDataset};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// A caption as a sequence of word vectors `[T × d_w]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Caption<T>(pub Tensor<T>);

impl<T: Real> Caption<T> {
    pub fn words(&self) -> &Tensor<T> {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Which modalities a video actually carries, in model expert order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AvailabilityMask(pub Vec<bool>);

impl AvailabilityMask {
    pub fn all(n: usize) -> Self {
        Self(vec![true; n])
    }

    pub fn is_available(&self, i: usize) -> bool {
        self.0.get(i).copied().unwrap_or(false)
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|b| **b).count()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn available(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().enumerate().filter(|(_, b)| **b).map(|(i, _)| i)
    }
}

/// Per-modality descriptor streams of one video, `None` where a modality is missing.
///
/// A stream can also be present but switched off with [`hide`](Self::hide);
/// the model then treats it exactly like a missing one.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoSample<T> {
    pub id: String,
    /// One entry per configured modality; present streams are `[T_i × d_i]`.
    pub streams: Vec<Option<Tensor<T>>>,
    hidden: Vec<bool>,
}

impl<T: Real> VideoSample<T> {
    pub fn new(id: impl Into<String>, streams: Vec<Option<Tensor<T>>>) -> Self {
        Self {
            id: id.into(),
            hidden: vec![false; streams.len()],
            streams,
        }
    }

    /// Masks out modality `k` while keeping its descriptors.
    pub fn hide(&mut self, k: usize) {
        if k < self.hidden.len() {
            self.hidden[k] = true;
        }
    }

    /// The stream of modality `k` if it is present and not masked out.
    pub fn stream(&self, k: usize) -> Option<&Tensor<T>> {
        if self.hidden.get(k).copied().unwrap_or(false) {
            None
        } else {
            self.streams.get(k).and_then(Option::as_ref)
        }
    }

    /// An image seen as a one-frame video with only the `appearance` slot filled.
    pub fn image(
        id: impl Into<String>,
        appearance: &[T],
        modalities: usize,
        appearance_slot: usize,
    ) -> Result<Self> {
        let mut streams = vec![None; modalities];
        streams[appearance_slot] = Some(Tensor::from_vec(&[1, appearance.len()], appearance.to_vec())?);
        Ok(Self::new(id, streams))
    }

    pub fn mask(&self) -> AvailabilityMask {
        AvailabilityMask((0..self.streams.len()).map(|k| self.stream(k).is_some()).collect())
    }

    /// Checks stream count, per-stream dimensions, non-empty available
    /// streams, and that at least one modality is available. Masked-out
    /// streams are not inspected.
    pub fn validate(&self, dims: &[(&str, usize)]) -> Result<()> {
        if self.streams.len() != dims.len() {
            return Err(Error::StreamCount {
                id: self.id.clone(),
                expected: dims.len(),
                got: self.streams.len(),
            });
        }
        for (k, (name, dim)) in dims.iter().enumerate() {
            if let Some(s) = self.stream(k) {
                if s.rank() != 2 || s.cols() != *dim {
                    return Err(Error::StreamDim {
                        id: self.id.clone(),
                        modality: (*name).into(),
                        expected: *dim,
                        got: s.cols(),
                    });
                }
                if s.rows() == 0 {
                    return Err(Error::EmptySequence("stream marked available has no frames"));
                }
            }
        }
        if self.mask().count() == 0 {
            return Err(Error::NoAvailableModality(self.id.clone()));
        }
        Ok(())
    }
}

/// One caption–video training or evaluation pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Pair<T> {
    pub caption: Caption<T>,
    pub video: VideoSample<T>,
}
