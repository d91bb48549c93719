use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{Denoiser, DenoiserBatch, DiffusionError, DiffusionSchedule, POSE_DIM};
use crate::geometry::{BlockShape, Silhouette64};
use crate::nn::Real;

/// Anything that maps a noised batch to predicted noise.
pub trait NoisePredictor<T: Real> {
    fn predict_noise(&self, batch: &DenoiserBatch<T>) -> Array2<T>;
    fn max_blocks(&self) -> usize;
}

impl<T: Real> NoisePredictor<T> for Denoiser<T> {
    fn predict_noise(&self, batch: &DenoiserBatch<T>) -> Array2<T> {
        self.predict(batch)
    }
    fn max_blocks(&self) -> usize {
        self.config.max_blocks
    }
}

/// One structure to sample. Each request owns its noise stream, so the
/// result does not depend on how requests are batched.
#[derive(Debug, Clone)]
pub struct SampleRequest<'a> {
    pub shapes: &'a [BlockShape],
    pub silhouette: &'a Silhouette64,
    pub seed: u64,
}

/// Ancestral sampling from t = T down to 1, in normalized pose space.
pub fn sample_normalized<T: Real, P: NoisePredictor<T>>(
    model: &P,
    schedule: &DiffusionSchedule,
    requests: &[SampleRequest<'_>],
) -> Result<Vec<Vec<[f64; POSE_DIM]>>, DiffusionError> {
    let n = model.max_blocks();
    let mut rngs: Vec<ChaCha8Rng> = requests
        .iter()
        .map(|r| ChaCha8Rng::seed_from_u64(r.seed))
        .collect();
    let mut state: Vec<Vec<[f64; POSE_DIM]>> = Vec::with_capacity(requests.len());
    for (r, rng) in requests.iter().zip(rngs.iter_mut()) {
        if r.shapes.is_empty() {
            return Err(DiffusionError::EmptyStack);
        }
        if r.shapes.len() > n {
            return Err(DiffusionError::Cardinality {
                k: r.shapes.len(),
                max: n,
            });
        }
        state.push(
            (0..r.shapes.len())
                .map(|_| std::array::from_fn(|_| rng.sample(StandardNormal)))
                .collect(),
        );
    }
    let shapes: Vec<Vec<BlockShape>> = requests.iter().map(|r| r.shapes.to_vec()).collect();
    let patches: Vec<Vec<[f32; 256]>> = requests.iter().map(|r| r.silhouette.patches()).collect();
    let patch_refs: Vec<&[[f32; 256]]> = patches.iter().map(|p| p.as_slice()).collect();

    for t in (1..=schedule.steps()).rev() {
        let steps = vec![t; requests.len()];
        let batch = DenoiserBatch::<T>::assemble(n, &state, &shapes, &steps, &patch_refs)?;
        let eps_hat = model.predict_noise(&batch);
        for (b, (poses, rng)) in state.iter_mut().zip(rngs.iter_mut()).enumerate() {
            for (i, p) in poses.iter_mut().enumerate() {
                for (c, v) in p.iter_mut().enumerate() {
                    let z = if t > 1 {
                        rng.sample(StandardNormal)
                    } else {
                        0.0
                    };
                    let e = eps_hat[[b * n + i, c]].to_f64().unwrap_or(f64::NAN);
                    *v = schedule.reverse_step(*v, e, t, z);
                }
            }
        }
    }
    Ok(state)
}
