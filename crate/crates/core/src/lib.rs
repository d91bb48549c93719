//! Silhouette-conditioned generation of stable block structures.

pub mod baselines;
pub mod blocklist;
pub mod config;
pub mod datagen;
pub mod diffusion;
pub mod eval;
pub mod geometry;
pub mod nn;
pub mod pipeline;
pub mod service;
pub mod stability;
pub mod util;

pub use geometry::{BlockInstance, BlockShape, Pose6, Silhouette64, Stack, View};
