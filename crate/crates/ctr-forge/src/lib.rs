//! CTR prediction with an FM head, a compressed interaction network, and a
//! pre-posed multi-head attention block feeding a DNN, fused through a single
//! sigmoid output unit. Dense linear algebra, reverse-mode gradients, Adam,
//! metrics, Criteo ingestion, training, and sweeps are all built in this
//! crate.

#![allow(clippy::needless_range_loop)] // numeric kernels index several slices per loop

pub mod cli;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod trainer;

pub use error::{CtrError, Result};
