//! Core of the mixture-of-embedding-experts (MEE) text/video retrieval model.
//!
//! Everything here is pure computation over in-memory data and builds without
//! `std` (only `alloc` is required). File formats, dataset loading and the
//! command line live in the companion `mee` crate.
//!
//! The model maps a caption (a sequence of word vectors) and a video (a set of
//! per-modality descriptor streams, any of which may be missing) to a
//! similarity score in `[-1, 1]`. Each modality has its own pair of gated
//! embedding units; the caption predicts how much each modality's score counts,
//! and the weights are renormalized over whichever modalities a video has.
//!
//! All layers expose explicit forward and backward passes. There is no
//! autodiff; [`gradcheck`] verifies every backward pass against central finite
//! differences in 64-bit precision.

#![no_std]

extern crate alloc;
#[cfg(any(feature = "std", test))]
extern crate std;

pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod init;
pub mod layers;
pub mod loss;
pub mod model;
pub mod param;
pub mod real;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use param::{adam_step, AdamConfig, ParamSet, Parameter, ParameterRegistry};
pub use real::Real;
pub use tensor::{Tensor, TensorError};
