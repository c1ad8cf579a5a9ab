//! Label forensics for hard-label text classifiers.
//!
//! Given only a classification endpoint that returns discrete labels, the
//! engine builds per-label anchor pools, estimates how much latent noise each
//! anchor tolerates before its label flips, selects representative prototypes,
//! and reports the geometry, diversity and natural-language descriptions of
//! the recovered label distributions.

pub mod anchors;
pub mod error;
pub mod geometry;
pub mod interpret;
pub mod pipeline;
pub mod radius;
pub mod rng;
pub mod sampler;
pub mod scoring;
pub mod simworld;
pub mod wire;

pub use error::{Error, Result};
