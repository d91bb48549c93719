//! Silhouette -> block list -> candidate stacks, behind one interface shared
//! by the learned model and the baselines.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::baselines::{brute_force_place, greedy_place, BruteForceConfig, GreedyConfig};
use crate::blocklist::{BlockListError, BlockListModel, BlockListPrediction};
use crate::diffusion::{DiffusionError, DiffusionModel, SampleRequest};
use crate::geometry::{shapes_from_counts, BlockShape, Silhouette64, Stack};
use crate::util::{derive_seed, par_map};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    BlockList(#[from] BlockListError),
    #[error("no block-list classifier loaded")]
    NoClassifier,
}

/// One structure to produce: target silhouette, shapes to use, and the
/// seed of its private random stream.
#[derive(Debug, Clone)]
pub struct GenerateJob<'a> {
    pub silhouette: &'a Silhouette64,
    pub shapes: Vec<BlockShape>,
    pub seed: u64,
}

pub trait Generator: Sync {
    fn name(&self) -> String;
    /// One stack per job. Output for a job depends only on that job.
    fn generate(&self, jobs: &[GenerateJob<'_>]) -> Result<Vec<Stack>, PipelineError>;
}

pub struct DiffusionGenerator<'a> {
    pub model: &'a DiffusionModel,
    pub workers: usize,
}

impl Generator for DiffusionGenerator<'_> {
    fn name(&self) -> String {
        "diffusion".into()
    }

    fn generate(&self, jobs: &[GenerateJob<'_>]) -> Result<Vec<Stack>, PipelineError> {
        let chunks: Vec<&[GenerateJob<'_>]> = jobs.chunks(64).collect();
        let out = par_map(&chunks, self.workers, |chunk| {
            let reqs: Vec<SampleRequest<'_>> = chunk
                .iter()
                .map(|j| SampleRequest {
                    shapes: &j.shapes,
                    silhouette: j.silhouette,
                    seed: j.seed,
                })
                .collect();
            self.model.sample(&reqs)
        });
        let mut stacks = Vec::with_capacity(jobs.len());
        for r in out {
            stacks.extend(r?);
        }
        Ok(stacks)
    }
}

pub struct GreedyGenerator {
    pub config: GreedyConfig,
    pub workers: usize,
}

impl Generator for GreedyGenerator {
    fn name(&self) -> String {
        format!("greedy(sigma={})", self.config.sigma)
    }

    fn generate(&self, jobs: &[GenerateJob<'_>]) -> Result<Vec<Stack>, PipelineError> {
        Ok(par_map(jobs, self.workers, |j| {
            greedy_place(
                j.silhouette,
                &j.shapes,
                &self.config,
                &mut ChaCha8Rng::seed_from_u64(j.seed),
            )
        }))
    }
}

pub struct BruteForceGenerator {
    pub config: BruteForceConfig,
    pub workers: usize,
}

impl Generator for BruteForceGenerator {
    fn name(&self) -> String {
        format!("brute(sigma={})", self.config.sigma)
    }

    fn generate(&self, jobs: &[GenerateJob<'_>]) -> Result<Vec<Stack>, PipelineError> {
        Ok(par_map(jobs, self.workers, |j| {
            brute_force_place(
                j.silhouette,
                &j.shapes,
                &self.config,
                &mut ChaCha8Rng::seed_from_u64(j.seed),
            )
        }))
    }
}

/// `n` jobs for one silhouette; sample `i` uses stream `i` of `seed`.
pub fn jobs_for<'a>(
    sil: &'a Silhouette64,
    counts: [usize; 4],
    n: usize,
    seed: u64,
) -> Vec<GenerateJob<'a>> {
    let shapes = shapes_from_counts(counts);
    (0..n)
        .map(|i| GenerateJob {
            silhouette: sil,
            shapes: shapes.clone(),
            seed: derive_seed(seed, i as u64),
        })
        .collect()
}

/// Classifier picks the block list, then `n` independent samples.
pub fn predict_blocklist_and_sample(
    cnn: &BlockListModel,
    generator: &dyn Generator,
    sil: &Silhouette64,
    n: usize,
    seed: u64,
) -> Result<(BlockListPrediction, Vec<Stack>), PipelineError> {
    let prediction = cnn.predict(sil);
    let stacks = generator.generate(&jobs_for(sil, prediction.counts, n, seed))?;
    Ok((prediction, stacks))
}

/// Ground-truth variant: the block list is given, the classifier skipped.
pub fn sample_with_counts(
    generator: &dyn Generator,
    sil: &Silhouette64,
    counts: [usize; 4],
    n: usize,
    seed: u64,
) -> Result<Vec<Stack>, PipelineError> {
    generator.generate(&jobs_for(sil, counts, n, seed))
}
