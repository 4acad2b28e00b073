//! Person-of-interest forgery detection with an audio-conditioned
//! expression diffusion model.
//!
//! A transformer denoiser is pre-trained on unlabeled expression/audio
//! clips, personalized per subject through a small set of adapter tokens,
//! and used to score clips by the ratio of adapted to unadapted noise
//! reconstruction error.

pub mod adapter;
pub mod bench;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod model;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod schedule;
pub mod scorer;
pub mod synthdata;
pub mod trainer;

pub use error::{Error, Result};
