use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{
    noise_loss, Denoiser, DenoiserBatch, DenoiserConfig, DiffusionError, DiffusionSchedule,
    PoseNormalizer, ScheduleConfig, TrainExample, POSE_DIM,
};
use crate::nn::{Adam, AdamConfig, Params, Real};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: DenoiserConfig,
    pub schedule: ScheduleConfig,
    pub adam: AdamConfig,
    pub steps: usize,
    pub batch_size: usize,
    /// Linear warm-up length; afterwards the rate follows a cosine down to
    /// `min_lr_ratio * lr` at the final step.
    pub warmup_steps: usize,
    pub min_lr_ratio: f64,
    /// Exponential moving average of weights used for sampling.
    pub ema_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: DenoiserConfig::default(),
            schedule: ScheduleConfig::default(),
            adam: AdamConfig {
                lr: 3e-3,
                ..AdamConfig::default()
            },
            steps: 30_000,
            batch_size: 32,
            warmup_steps: 200,
            min_lr_ratio: 0.1,
            ema_decay: 0.999,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn lr_at(&self, step: usize) -> f64 {
        let base = self.adam.lr;
        if step < self.warmup_steps {
            return base * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let span = self.steps.saturating_sub(self.warmup_steps).max(1) as f64;
        let progress = ((step - self.warmup_steps) as f64 / span).min(1.0);
        let floor = base * self.min_lr_ratio;
        floor + (base - floor) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

/// Noises each example at a uniformly drawn step and returns the model
/// batch together with the injected noise.
pub fn noised_batch<T: Real, R: Rng + ?Sized>(
    examples: &[&TrainExample],
    schedule: &DiffusionSchedule,
    max_blocks: usize,
    rng: &mut R,
) -> Result<(DenoiserBatch<T>, Array2<T>), DiffusionError> {
    let mut poses = Vec::with_capacity(examples.len());
    let mut eps = Array2::zeros((examples.len() * max_blocks, POSE_DIM));
    let mut t = Vec::with_capacity(examples.len());
    for (b, ex) in examples.iter().enumerate() {
        if ex.is_empty() {
            return Err(DiffusionError::EmptyStack);
        }
        let step = rng.random_range(1..=schedule.steps());
        let mut noised = Vec::with_capacity(ex.len());
        for (i, p) in ex.poses.iter().enumerate() {
            let e: [f64; POSE_DIM] = std::array::from_fn(|_| rng.sample(StandardNormal));
            for (c, &v) in e.iter().enumerate() {
                eps[[b * max_blocks + i, c]] = T::c(v);
            }
            noised.push(schedule.forward_noise(p, step, &e));
        }
        poses.push(noised);
        t.push(step);
    }
    let shapes: Vec<_> = examples.iter().map(|e| e.shapes.clone()).collect();
    let patches: Vec<_> = examples.iter().map(|e| e.patches.as_slice()).collect();
    let batch = DenoiserBatch::assemble(max_blocks, &poses, &shapes, &t, &patches)?;
    Ok((batch, eps))
}

/// Loss and parameter gradients of one batch.
pub fn batch_loss<T: Real>(
    model: &Denoiser<T>,
    batch: &DenoiserBatch<T>,
    eps: &Array2<T>,
) -> (T, Denoiser<T>) {
    let (pred, cache) = model.forward(batch);
    let (loss, dpred) = noise_loss(
        &pred.view(),
        &eps.view(),
        &batch.counts,
        model.config.max_blocks,
    );
    let mut grads = model.zeros_like();
    model.backward(batch, &cache, &dpred.view(), &mut grads);
    (loss, grads)
}

/// Single-stream training loop state.
pub struct Trainer {
    pub config: TrainConfig,
    pub model: Denoiser<f32>,
    pub schedule: DiffusionSchedule,
    pub normalizer: PoseNormalizer,
    ema: Vec<f32>,
    opt: Adam<f32>,
    rng: ChaCha8Rng,
    pub step: usize,
    pub last_loss: f64,
}

impl Trainer {
    pub fn new(config: TrainConfig, normalizer: PoseNormalizer) -> Result<Self, DiffusionError> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let model = Denoiser::new(config.model, &mut rng)?;
        let ema = model.flatten();
        let opt = Adam::new(config.adam, model.n_params());
        Ok(Self {
            schedule: DiffusionSchedule::new(config.schedule),
            config,
            model,
            normalizer,
            ema,
            opt,
            rng,
            step: 0,
            last_loss: f64::NAN,
        })
    }

    /// One update on a batch drawn uniformly (with replacement) from
    /// `examples`; returns the batch loss before the update.
    pub fn step(&mut self, examples: &[TrainExample]) -> Result<f64, DiffusionError> {
        assert!(!examples.is_empty(), "no training examples");
        let picks: Vec<&TrainExample> = (0..self.config.batch_size)
            .map(|_| &examples[self.rng.random_range(0..examples.len())])
            .collect();
        self.step_on(&picks)
    }

    pub fn step_on(&mut self, picks: &[&TrainExample]) -> Result<f64, DiffusionError> {
        let (batch, eps) = noised_batch::<f32, _>(
            picks,
            &self.schedule,
            self.config.model.max_blocks,
            &mut self.rng,
        )?;
        let (loss, grads) = batch_loss(&self.model, &batch, &eps);
        let lr = self.config.lr_at(self.step);
        self.opt.step(&mut self.model, &grads, lr);
        self.step += 1;

        let decay = self
            .config
            .ema_decay
            .min((1.0 + self.step as f64) / (10.0 + self.step as f64)) as f32;
        let mut at = 0;
        let ema = &mut self.ema;
        self.model.visit(&mut |p| {
            for (e, &w) in ema[at..at + p.len()].iter_mut().zip(p) {
                *e = decay * *e + (1.0 - decay) * w;
            }
            at += p.len();
        });
        self.last_loss = loss as f64;
        if !self.model.all_finite() {
            return Err(DiffusionError::Config(format!(
                "non-finite parameters after step {}",
                self.step
            )));
        }
        Ok(self.last_loss)
    }

    /// The averaged weights, as a model.
    pub fn ema_model(&self) -> Denoiser<f32> {
        let mut m = self.model.clone();
        m.load_flat(&self.ema).expect("same architecture");
        m
    }
}

/// Runs `config.steps` updates and packages the averaged weights for
/// inference. `on_step` sees (step, loss) after every update.
pub fn train_model(
    examples: &[TrainExample],
    normalizer: PoseNormalizer,
    config: TrainConfig,
    manifest_hash: String,
    mut on_step: impl FnMut(usize, f64),
) -> Result<super::DiffusionModel, DiffusionError> {
    if examples.is_empty() {
        return Err(DiffusionError::EmptyStack);
    }
    let mut trainer = Trainer::new(config, normalizer)?;
    for s in 0..config.steps {
        let loss = trainer.step(examples)?;
        on_step(s, loss);
    }
    let meta = super::DiffusionMeta {
        config: config.model,
        schedule: config.schedule,
        normalizer,
        manifest_hash,
        train_steps: config.steps,
        final_loss: Some(trainer.last_loss).filter(|l| l.is_finite()),
    };
    Ok(super::DiffusionModel::new(trainer.ema_model(), meta))
}
