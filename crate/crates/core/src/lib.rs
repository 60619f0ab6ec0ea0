//! Semantic-map injected GAN training at desk scale.
//!
//! The crate trains image-to-image translation GANs (CycleGAN- and CUT-style)
//! on an interleaved schedule: ordinary source→target epochs alternate with
//! short chunks of source→semantic-map epochs run at a reduced learning rate.
//! Everything needed to run and score such experiments lives here: a small
//! autodiff engine, the networks and losses, the phase schedule, SSIM/FID/KID
//! metrics, a procedural scene dataset and the experiment runner.

pub mod autodiff;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod optimizer;
pub mod rng;
pub mod runner;
pub mod schedule;
pub mod synthdata;

pub use error::{Error, Result};
