//! Boundary-centric, clip-budgeted active learning for temporal action
//! segmentation.
//!
//! The crate is organised around the two-stage acquisition loop:
//!
//! 1. **Video selection** ([`uncertainty`]): every unlabeled video is scored
//!    by mean-pooled frame uncertainty estimated from Monte Carlo dropout
//!    samples of a [`predictor`], and the most uncertain videos are queried.
//! 2. **Clip selection** ([`acquisition`]): inside each queried video the
//!    predicted action boundaries are scored by a fused boundary score and
//!    the top-K become clip queries whose *center frame only* is labeled.
//!
//! [`active_loop`] drives rounds under a labeled-frame budget, [`annotation`]
//! supplies labels (ground-truth oracle or a human session hub), [`metrics`]
//! implements the standard segmentation metrics and [`dataset`] holds video
//! records, the synthetic benchmark generator and the on-disk layout.

pub mod acquisition;
pub mod active_loop;
pub mod annotation;
pub mod dataset;
mod error;
pub mod metrics;
pub mod predictor;
pub mod rng;
pub mod uncertainty;

pub use error::{Error, Result};

/// Zero-based class index.
pub type ClassId = usize;
