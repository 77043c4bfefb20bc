//! Learning-speed-aware sampling for contrastive self-supervised pretraining
//! on synthetic data with planted spurious correlations.

pub mod augment;
pub mod config;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod numeric;
pub mod sampler;
pub mod seeds;
pub mod ssl;
pub mod synthdata;
pub mod trainer;

pub use error::{Error, Result};
