//! Ensembles of networks fine-tuned from a shared pre-trained checkpoint.
//!
//! The crate covers the full pipeline at desk scale: a small MLP with manual
//! backpropagation ([`nn`]), synthetic source/target tasks and corruptions
//! ([`datasets`]), SGD with the cosine and cyclic schedules and the fine-tuning
//! protocol ([`training`]), Local/Global deep ensembles and snapshot-style cyclic
//! ensembles ([`ensembling`]), and linear-interpolation probes of the loss landscape
//! ([`landscape`]).

pub mod datasets;
pub mod ensembling;
mod error;
pub mod landscape;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod training;

pub use error::{Divergence, Error, Result};
