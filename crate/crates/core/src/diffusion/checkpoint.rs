use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    sample_normalized, Denoiser, DenoiserConfig, DiffusionError, DiffusionSchedule, PoseNormalizer,
    SampleRequest, ScheduleConfig,
};
use crate::geometry::{BlockInstance, Pose6, Stack};
use crate::nn::blob;
use crate::util::write_atomic;

pub const DIFFUSION_BLOB: &str = "diffusion.bin";
pub const DIFFUSION_META: &str = "diffusion.json";

/// Sidecar describing a weight blob.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionMeta {
    pub config: DenoiserConfig,
    pub schedule: ScheduleConfig,
    pub normalizer: PoseNormalizer,
    /// SHA-256 of the corpus manifest the model was trained on.
    pub manifest_hash: String,
    pub train_steps: usize,
    pub final_loss: Option<f64>,
}

/// Immutable inference bundle: weights, schedule and pose statistics.
#[derive(Debug, Clone)]
pub struct DiffusionModel {
    pub denoiser: Denoiser<f32>,
    pub schedule: DiffusionSchedule,
    pub meta: DiffusionMeta,
}

impl DiffusionModel {
    pub fn new(denoiser: Denoiser<f32>, meta: DiffusionMeta) -> Self {
        Self {
            schedule: DiffusionSchedule::new(meta.schedule),
            denoiser,
            meta,
        }
    }

    pub fn normalizer(&self) -> &PoseNormalizer {
        &self.meta.normalizer
    }

    pub fn save(&self, dir: &Path) -> Result<(), DiffusionError> {
        fs::create_dir_all(dir)?;
        write_atomic(&dir.join(DIFFUSION_BLOB), &blob::encode(&self.denoiser))?;
        let meta = serde_json::to_string_pretty(&self.meta).expect("meta serializes");
        write_atomic(&dir.join(DIFFUSION_META), meta.as_bytes())?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, DiffusionError> {
        let text = fs::read_to_string(dir.join(DIFFUSION_META))?;
        let meta: DiffusionMeta =
            serde_json::from_str(&text).map_err(|e| DiffusionError::Checkpoint(e.to_string()))?;
        let mut denoiser = Denoiser::new(meta.config, &mut ChaCha8Rng::seed_from_u64(0))?;
        let bytes = fs::read(dir.join(DIFFUSION_BLOB))?;
        blob::decode(&bytes, &mut denoiser).map_err(DiffusionError::Checkpoint)?;
        Ok(Self::new(denoiser, meta))
    }

    /// Sample one stack per request (poses unnormalized, rotation vectors
    /// canonicalized). Requests are processed in chunks to bound memory.
    pub fn sample(&self, requests: &[SampleRequest<'_>]) -> Result<Vec<Stack>, DiffusionError> {
        const CHUNK: usize = 64;
        let mut out = Vec::with_capacity(requests.len());
        for chunk in requests.chunks(CHUNK) {
            let poses = sample_normalized(&self.denoiser, &self.schedule, chunk)?;
            for (r, ps) in chunk.iter().zip(poses) {
                let blocks = r
                    .shapes
                    .iter()
                    .zip(ps)
                    .map(|(&shape, z)| {
                        BlockInstance::new(
                            shape,
                            Pose6::from_array(self.normalizer().unnormalize(&z)),
                        )
                    })
                    .collect();
                out.push(Stack::new(blocks));
            }
        }
        Ok(out)
    }
}
