use ndarray::{s, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::train::noised_batch;
use super::*;
use crate::geometry::{rasterize, BlockInstance, Stack, View};
use crate::nn::tests::max_grad_error;
use crate::nn::Params;

fn mini_config() -> DenoiserConfig {
    DenoiserConfig {
        d: 8,
        n_layers: 1,
        n_heads: 1,
        mlp_ratio: 4,
        max_blocks: 4,
    }
}

fn random_example(k: usize, rng: &mut ChaCha8Rng) -> TrainExample {
    let blocks: Vec<BlockInstance> = (0..k)
        .map(|i| {
            let shape = BlockShape::ALL[rng.random_range(0..4)];
            BlockInstance::new(
                shape,
                Pose6::with_yaw(
                    -3.0 + 2.0 * i as f64,
                    0.0,
                    1.0,
                    rng.random_range(-0.03..0.03),
                ),
            )
        })
        .collect();
    let stack = Stack::new(blocks);
    let poses: Vec<Pose6> = stack.blocks.iter().map(|b| b.pose).collect();
    TrainExample::new(
        &poses,
        stack.shapes(),
        &rasterize(&stack, View::Front),
        &PoseNormalizer::identity(),
        16,
    )
    .unwrap()
}

#[test]
fn normalizer_round_trip() {
    let n = PoseNormalizer {
        mean: [0.1, -0.2, 3.9, 0.0, 0.0, 0.01],
        std: [2.1, 0.05, 2.2, 0.01, 0.01, 0.02],
    };
    let p = [1.3, -0.7, 5.0, 0.001, -0.002, 0.02];
    let back = n.unnormalize(&n.normalize(&p));
    for k in 0..6 {
        assert!((back[k] - p[k]).abs() < 1e-9);
    }
}

#[test]
fn forward_noise_marginal() {
    let schedule = DiffusionSchedule::new(ScheduleConfig::default());
    let t = schedule.steps();
    let p = [1.5, -0.5, 0.8, 0.0, 2.0, -1.0];
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let draws = 10_000;
    let mut sum = [0.0; 6];
    let mut sq = [0.0; 6];
    for _ in 0..draws {
        let eps: [f64; 6] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let x = schedule.forward_noise(&p, t, &eps);
        for k in 0..6 {
            sum[k] += x[k];
            sq[k] += x[k] * x[k];
        }
    }
    let ab = schedule.alpha_bar(t);
    for k in 0..6 {
        let mean = sum[k] / draws as f64;
        let std = (sq[k] / draws as f64 - mean * mean).sqrt();
        assert!(
            (mean - ab.sqrt() * p[k]).abs() < 0.05,
            "dim {k} mean {mean}"
        );
        assert!((std - (1.0 - ab).sqrt()).abs() < 0.05, "dim {k} std {std}");
    }
}

#[test]
fn zero_predictor_loss_is_pose_dimension() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let draws = 10_000;
    let eps = Array2::from_shape_simple_fn((draws, 6), || rng.sample::<f64, _>(StandardNormal));
    let counts = vec![1; draws];
    let (loss, _) = noise_loss(&Array2::zeros((draws, 6)).view(), &eps.view(), &counts, 1);
    assert!((loss - 6.0).abs() < 0.15, "{loss}");
    let (perfect, _) = noise_loss(&eps.view(), &eps.view(), &counts, 1);
    assert_eq!(perfect, 0.0);
}

#[test]
fn gradient_matches_finite_differences_on_miniature_config() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let model = Denoiser::<f64>::new(mini_config(), &mut rng).unwrap();
    let schedule = DiffusionSchedule::new(ScheduleConfig {
        steps: 5,
        ..Default::default()
    });
    let examples = [random_example(2, &mut rng), random_example(2, &mut rng)];
    let refs: Vec<&TrainExample> = examples.iter().collect();
    let (batch, eps) = noised_batch::<f64, _>(&refs, &schedule, 4, &mut rng).unwrap();
    let (_, grads) = batch_loss(&model, &batch, &eps);
    let loss = |m: &Denoiser<f64>| {
        let pred = m.predict(&batch);
        noise_loss(&pred.view(), &eps.view(), &batch.counts, 4).0
    };
    let err = max_grad_error(&model, &grads, loss);
    assert!(err < 1e-3, "relative gradient error {err}");
}

#[test]
fn denoiser_is_permutation_equivariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let model = Denoiser::<f32>::new(DenoiserConfig::default(), &mut rng).unwrap();
    let ex = random_example(4, &mut rng);
    let k = ex.len();
    let t = [37];
    let base = DenoiserBatch::<f32>::assemble(
        16,
        std::slice::from_ref(&ex.poses),
        std::slice::from_ref(&ex.shapes),
        &t,
        &[&ex.patches],
    )
    .unwrap();
    let out = model.predict(&base);
    let mut worst: f32 = 0.0;
    for _ in 0..100 {
        let mut perm: Vec<usize> = (0..k).collect();
        perm.shuffle(&mut rng);
        let poses: Vec<_> = perm.iter().map(|&i| ex.poses[i]).collect();
        let shapes: Vec<_> = perm.iter().map(|&i| ex.shapes[i]).collect();
        let b =
            DenoiserBatch::<f32>::assemble(16, &[poses], &[shapes], &t, &[&ex.patches]).unwrap();
        let permuted = model.predict(&b);
        for (j, &i) in perm.iter().enumerate() {
            for c in 0..6 {
                worst = worst.max((permuted[[j, c]] - out[[i, c]]).abs());
            }
        }
    }
    assert!(worst < 1e-5, "{worst}");
}

#[test]
fn output_shape_and_padding_neutrality() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let model = Denoiser::<f64>::new(
        DenoiserConfig {
            d: 16,
            n_layers: 2,
            n_heads: 2,
            ..Default::default()
        },
        &mut rng,
    )
    .unwrap();
    let schedule = DiffusionSchedule::new(ScheduleConfig::default());
    for k in [1, 5, 16] {
        let ex = random_example(k, &mut rng);
        let (mut batch, eps) = noised_batch::<f64, _>(&[&ex], &schedule, 16, &mut rng).unwrap();
        let out = model.predict(&batch);
        assert_eq!(out.dim(), (16, 6));
        let (loss, _) = noise_loss(&out.view(), &eps.view(), &batch.counts, 16);
        // Garbage in padded slots changes neither the loss nor the first k outputs.
        batch.poses.slice_mut(s![k.., ..]).fill(123.0);
        for s in &mut batch.shapes[k..] {
            *s = BlockShape::Triangle;
        }
        let out2 = model.predict(&batch);
        let (loss2, _) = noise_loss(&out2.view(), &eps.view(), &batch.counts, 16);
        assert_eq!(loss, loss2);
        assert_eq!(out.slice(s![..k, ..]), out2.slice(s![..k, ..]));
    }
}

#[test]
fn tokenization_contract() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let model = Denoiser::<f64>::new(
        DenoiserConfig {
            d: 16,
            n_layers: 1,
            n_heads: 2,
            ..Default::default()
        },
        &mut rng,
    )
    .unwrap();
    let empty = crate::geometry::Silhouette64::empty(View::Front).patches();
    let ex = random_example(3, &mut rng);
    let batch = DenoiserBatch::<f64>::assemble(
        16,
        std::slice::from_ref(&ex.poses),
        std::slice::from_ref(&ex.shapes),
        &[10],
        &[&empty],
    )
    .unwrap();
    let tokens = tokenize(&model, &batch);
    assert_eq!(tokens.nrows(), 32);
    assert!(tokens.slice(s![3..16, ..]).iter().all(|&v| v == 0.0));
    assert!(tokens.slice(s![..3, ..]).iter().any(|&v| v != 0.0));
    // Empty silhouette: patch tokens differ exactly by their positional embedding.
    let pos = crate::nn::sinusoidal::<f64>(&(0..16).map(|p| p as f64).collect::<Vec<_>>(), 16);
    let content = &tokens.slice(s![16.., ..]) - &pos;
    for r in 1..16 {
        for c in 0..16 {
            assert!((content[[r, c]] - content[[0, c]]).abs() < 1e-12);
        }
    }
    // Full budget: no padding rows.
    let full = random_example(16, &mut rng);
    let batch = DenoiserBatch::<f64>::assemble(16, &[full.poses], &[full.shapes], &[10], &[&empty])
        .unwrap();
    let tokens = tokenize(&model, &batch);
    assert!((0..16).all(|r| tokens.row(r).iter().any(|&v| v != 0.0)));
}

#[test]
fn cardinality_and_empty_stack_errors() {
    let p = vec![[0.0; 6]; 17];
    let sh = vec![BlockShape::Cube; 17];
    let patches = crate::geometry::Silhouette64::empty(View::Front).patches();
    assert!(matches!(
        DenoiserBatch::<f32>::assemble(16, &[p], &[sh], &[1], &[&patches]),
        Err(DiffusionError::Cardinality { k: 17, max: 16 })
    ));
    let empty = TrainExample {
        poses: vec![],
        shapes: vec![],
        patches: patches.clone(),
    };
    let schedule = DiffusionSchedule::new(ScheduleConfig::default());
    assert!(matches!(
        noised_batch::<f32, _>(&[&empty], &schedule, 16, &mut ChaCha8Rng::seed_from_u64(0)),
        Err(DiffusionError::EmptyStack)
    ));
}

struct ZeroPredictor;

impl NoisePredictor<f64> for ZeroPredictor {
    fn predict_noise(&self, batch: &DenoiserBatch<f64>) -> Array2<f64> {
        Array2::zeros(batch.poses.raw_dim())
    }
    fn max_blocks(&self) -> usize {
        16
    }
}

#[test]
fn single_step_sampler_closed_form() {
    let schedule = DiffusionSchedule::new(ScheduleConfig {
        steps: 1,
        beta_start: 0.02,
        beta_end: 0.02,
    });
    let sil = crate::geometry::Silhouette64::empty(View::Front);
    let shapes = [BlockShape::Cube, BlockShape::Rectangle];
    let req = SampleRequest {
        shapes: &shapes,
        silhouette: &sil,
        seed: 9,
    };
    let out = sample_normalized(&ZeroPredictor, &schedule, &[req]).unwrap();
    // The initial draw is the first 12 normals of the request stream.
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for p in &out[0] {
        for &v in p {
            let x: f64 = rng.sample(StandardNormal);
            assert!((v - x / (1.0f64 - 0.02).sqrt()).abs() < 1e-15);
        }
    }
}

#[test]
fn sampling_is_deterministic_per_request() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let model = Denoiser::<f32>::new(
        DenoiserConfig {
            d: 16,
            n_layers: 1,
            n_heads: 2,
            ..Default::default()
        },
        &mut rng,
    )
    .unwrap();
    let schedule = DiffusionSchedule::new(ScheduleConfig {
        steps: 10,
        ..Default::default()
    });
    let sil = crate::geometry::Silhouette64::full(View::Front);
    let shapes = [BlockShape::Cube, BlockShape::Triangle];
    let a = SampleRequest {
        shapes: &shapes,
        silhouette: &sil,
        seed: 1,
    };
    let b = SampleRequest {
        shapes: &shapes,
        silhouette: &sil,
        seed: 2,
    };
    let together = sample_normalized(&model, &schedule, &[a.clone(), b.clone()]).unwrap();
    let alone = sample_normalized(&model, &schedule, &[b]).unwrap();
    assert_eq!(together[1], alone[0]);
    assert_eq!(
        together,
        sample_normalized(
            &model,
            &schedule,
            &[a.clone(), SampleRequest { seed: 2, ..a }]
        )
        .unwrap()
    );
}

#[test]
fn overfitting_a_fixed_batch_reduces_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let cfg = TrainConfig {
        model: DenoiserConfig {
            d: 32,
            n_layers: 2,
            n_heads: 2,
            ..Default::default()
        },
        adam: crate::nn::AdamConfig {
            lr: 1e-3,
            ..Default::default()
        },
        warmup_steps: 10,
        steps: 200,
        ..Default::default()
    };
    let mut trainer = Trainer::new(cfg, PoseNormalizer::identity()).unwrap();
    let examples: Vec<TrainExample> = (0..4).map(|i| random_example(2 + i, &mut rng)).collect();
    let refs: Vec<&TrainExample> = examples.iter().collect();
    let schedule = trainer.schedule.clone();
    let (batch, eps) = noised_batch::<f32, _>(&refs, &schedule, 16, &mut rng).unwrap();
    let before = batch_loss(&trainer.model, &batch, &eps).0;
    for _ in 0..200 {
        trainer.step_on(&refs).unwrap();
    }
    let after = batch_loss(&trainer.model, &batch, &eps).0;
    assert!(after < 0.5 * before, "{before} -> {after}");
    assert!(trainer.model.all_finite());
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let config = DenoiserConfig {
        d: 16,
        n_layers: 1,
        n_heads: 2,
        ..Default::default()
    };
    let denoiser = Denoiser::<f32>::new(config, &mut rng).unwrap();
    let meta = DiffusionMeta {
        config,
        schedule: ScheduleConfig::default(),
        normalizer: PoseNormalizer::identity(),
        manifest_hash: "abc".into(),
        train_steps: 3,
        final_loss: Some(0.5),
    };
    let model = DiffusionModel::new(denoiser, meta);
    model.save(dir.path()).unwrap();
    let back = DiffusionModel::load(dir.path()).unwrap();
    assert_eq!(back.denoiser, model.denoiser);
    assert_eq!(back.meta, model.meta);
}
