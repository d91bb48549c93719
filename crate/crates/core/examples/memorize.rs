//! Overfit the diffusion model on a handful of corpus records, then sample
//! those records' silhouettes with their true block lists and report how
//! many samples are stable and how well they match.
//!
//! cargo run --release --example memorize -- [n_records] [steps] [width] [layers]

use std::time::Instant;

use stackforge::datagen::{generate_lineage, Corpus, DatagenConfig};
use stackforge::diffusion::{
    DiffusionMeta, DiffusionModel, PoseNormalizer, SampleRequest, TrainConfig, TrainExample,
    Trainer,
};
use stackforge::geometry::{iou, rasterize, View};
use stackforge::stability::{classify, is_stable, StabilityError, StabilityParams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let n_records: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(50);
    let steps: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(3000);
    let d: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(64);
    let layers: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(3);

    // Either the first training records of an existing corpus (CORPUS=dir)
    // or a few records from each of the first templates.
    let (records, norm) = match std::env::var("CORPUS") {
        Ok(dir) => {
            let corpus = Corpus::load(std::path::Path::new(&dir))?;
            let m = &corpus.manifest;
            let norm = PoseNormalizer {
                mean: m.pose_mean,
                std: m.pose_std,
            };
            (corpus.train[..n_records].to_vec(), norm)
        }
        Err(_) => {
            let cfg = DatagenConfig::default();
            let mut records = Vec::new();
            let mut template = 0;
            while records.len() < n_records {
                records.extend(generate_lineage(template, 0, &cfg).into_iter().take(3));
                template += 1;
            }
            records.truncate(n_records);
            let norm = PoseNormalizer {
                mean: [0.0, 0.0, 4.0, 0.0, 0.0, 0.0],
                std: [2.0, 0.06, 2.2, 0.01, 0.01, 0.02],
            };
            (records, norm)
        }
    };
    let examples: Vec<TrainExample> = records
        .iter()
        .map(|r| TrainExample::from_record(r, &norm, 16))
        .collect::<Result<_, _>>()?;
    let mut train_cfg = TrainConfig {
        steps,
        ..Default::default()
    };
    train_cfg.model.d = d;
    train_cfg.model.n_layers = layers;
    if let Ok(lr) = std::env::var("LR") {
        train_cfg.adam.lr = lr.parse()?;
    }
    if let Ok(m) = std::env::var("MLP") {
        train_cfg.model.mlp_ratio = m.parse()?;
    }
    if let Ok(b) = std::env::var("BATCH") {
        train_cfg.batch_size = b.parse()?;
    }
    let model = match std::env::var("LOAD") {
        Ok(dir) => DiffusionModel::load(std::path::Path::new(&dir))?,
        Err(_) => {
            let mut trainer = Trainer::new(train_cfg, norm)?;
            let started = Instant::now();
            for s in 0..steps {
                let loss = trainer.step(&examples)?;
                if s % 250 == 0 || s + 1 == steps {
                    println!(
                        "step {s:5} loss {loss:.4} ({:.1}s)",
                        started.elapsed().as_secs_f64()
                    );
                }
            }
            let meta = DiffusionMeta {
                config: train_cfg.model,
                schedule: train_cfg.schedule,
                normalizer: norm,
                manifest_hash: String::new(),
                train_steps: steps,
                final_loss: Some(trainer.last_loss),
            };
            DiffusionModel::new(trainer.ema_model(), meta)
        }
    };
    if let Ok(dir) = std::env::var("SAVE") {
        model.save(std::path::Path::new(&dir))?;
    }
    let seed_base: u64 = std::env::var("SEED").map(|s| s.parse()).unwrap_or(Ok(0))?;

    let shapes: Vec<_> = records.iter().map(|r| r.stack().shapes()).collect();
    let requests: Vec<SampleRequest> = records
        .iter()
        .zip(&shapes)
        .enumerate()
        .map(|(i, (r, s))| SampleRequest {
            shapes: s,
            silhouette: &r.silhouette_front,
            seed: seed_base + i as u64,
        })
        .collect();
    let started = Instant::now();
    let samples = model.sample(&requests)?;
    if std::env::var("DEBUG").is_ok() {
        // Print the true and generated poses of every unstable sample.
        for (r, s) in records
            .iter()
            .zip(&samples)
            .filter(|(_, s)| !is_stable(s, &StabilityParams::default()).0)
        {
            println!(
                "{} ({:?})",
                r.id,
                classify(s).map(|v| (v.fell_indices, v.lifted, v.equilibrium))
            );
            for (a, b) in r.blocks.iter().zip(&s.blocks) {
                let (x, y) = (a.pose.to_array(), b.pose.to_array());
                println!(
                    "{:?} true {:?}\n            got  {:?}",
                    a.shape,
                    x.map(|v| (v * 100.0).round() / 100.0),
                    y.map(|v| (v * 100.0).round() / 100.0)
                );
            }
        }
    }
    // Why the unstable samples failed.
    let mut reasons = std::collections::BTreeMap::new();
    for s in &samples {
        let why = match classify(s) {
            Err(StabilityError::Penetration { .. }) => "penetration",
            Err(_) => "solver",
            Ok(v) if v.stable => continue,
            Ok(v) if !v.fell_indices.is_empty() => "fell",
            Ok(v) if !v.lifted.is_empty() => "lifted",
            Ok(v) if !v.tilted.is_empty() => "tilted",
            Ok(_) => "no equilibrium",
        };
        *reasons.entry(why).or_insert(0) += 1;
    }
    println!("unstable: {reasons:?}");
    let (mut stable, mut iou_sum) = (0, 0.0);
    for (r, s) in records.iter().zip(&samples) {
        let (ok, settled) = is_stable(s, &StabilityParams::default());
        if ok {
            stable += 1;
            iou_sum += iou(&rasterize(&settled, View::Front), &r.silhouette_front)?;
        }
    }
    println!(
        "sampled {} in {:.1}s: stable {:.1}%, mean front IoU {:.3}",
        samples.len(),
        started.elapsed().as_secs_f64(),
        100.0 * stable as f64 / samples.len() as f64,
        iou_sum / samples.len() as f64
    );
    Ok(())
}
