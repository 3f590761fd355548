//! Streaming diagonal-denoising diffusion sampler over a queue of frame
//! latents, checked against an exact Gaussian-mixture score.

pub mod cli;
pub mod config;
pub mod data;
pub mod denoiser;
pub mod error;
pub mod metrics;
pub mod parallel;
pub mod rng;
pub mod sampler;
pub mod schedule;

pub use error::{Error, Result};
