//! Conditional DDPM over sets of block poses.
//!
//! Poses are z-scored per dimension with corpus statistics, noised with a
//! linear-beta schedule, and denoised by a transformer that sees one token
//! per block plus sixteen silhouette patch tokens.

mod checkpoint;
mod denoiser;
mod sample;
mod schedule;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::DatasetRecord;
use crate::geometry::{BlockShape, Pose6, Silhouette64};

pub use checkpoint::{DiffusionMeta, DiffusionModel, DIFFUSION_BLOB, DIFFUSION_META};
pub use denoiser::{
    noise_loss, tokenize, Denoiser, DenoiserBatch, DenoiserCache, DenoiserConfig, N_PATCHES,
    PATCH_PIXELS, POSE_DIM,
};
pub use sample::{sample_normalized, NoisePredictor, SampleRequest};
pub use schedule::{noise_with, DiffusionSchedule, ScheduleConfig};
pub use train::{batch_loss, noised_batch, train_model, TrainConfig, Trainer};

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("{k} blocks exceed the token budget of {max}")]
    Cardinality { k: usize, max: usize },
    #[error("stack has no blocks")]
    EmptyStack,
    #[error("invalid config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Per-dimension z-scoring of [x, y, z, w1, w2, w3].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseNormalizer {
    pub mean: [f64; 6],
    pub std: [f64; 6],
}

impl PoseNormalizer {
    pub fn identity() -> Self {
        Self {
            mean: [0.0; 6],
            std: [1.0; 6],
        }
    }

    pub fn normalize(&self, p: &[f64; 6]) -> [f64; 6] {
        std::array::from_fn(|k| (p[k] - self.mean[k]) / self.std[k])
    }

    pub fn unnormalize(&self, z: &[f64; 6]) -> [f64; 6] {
        std::array::from_fn(|k| z[k] * self.std[k] + self.mean[k])
    }
}

/// A record in model space: normalized poses, shapes and patch pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub poses: Vec<[f64; 6]>,
    pub shapes: Vec<BlockShape>,
    pub patches: Vec<[f32; PATCH_PIXELS]>,
}

impl TrainExample {
    pub fn new(
        poses: &[Pose6],
        shapes: Vec<BlockShape>,
        silhouette: &Silhouette64,
        norm: &PoseNormalizer,
        max_blocks: usize,
    ) -> Result<Self, DiffusionError> {
        if poses.is_empty() {
            return Err(DiffusionError::EmptyStack);
        }
        if poses.len() > max_blocks {
            return Err(DiffusionError::Cardinality {
                k: poses.len(),
                max: max_blocks,
            });
        }
        Ok(Self {
            poses: poses
                .iter()
                .map(|p| norm.normalize(&p.to_array()))
                .collect(),
            shapes,
            patches: silhouette.patches(),
        })
    }

    pub fn from_record(
        r: &DatasetRecord,
        norm: &PoseNormalizer,
        max_blocks: usize,
    ) -> Result<Self, DiffusionError> {
        let poses: Vec<Pose6> = r.blocks.iter().map(|b| b.pose).collect();
        let shapes = r.blocks.iter().map(|b| b.shape).collect();
        Self::new(&poses, shapes, &r.silhouette_front, norm, max_blocks)
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }
}

#[cfg(test)]
mod tests;
