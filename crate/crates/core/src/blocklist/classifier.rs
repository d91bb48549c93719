use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{BlockListNet, Codebook};
use crate::datagen::DatasetRecord;
use crate::geometry::Silhouette64;
use crate::nn::{blob, softmax_cross_entropy, softmax_rows, Adam, AdamConfig, Params};
use crate::util::write_atomic;

pub const BLOCKLIST_BLOB: &str = "blocklist.bin";
pub const BLOCKLIST_META: &str = "blocklist.json";

/// Below this max class probability a prediction is flagged.
pub const LOW_CONFIDENCE: f64 = 0.3;

#[derive(Debug, Error)]
pub enum BlockListError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("record {id} has counts {counts:?} outside the codebook")]
    UnknownClass { id: String, counts: [usize; 4] },
    #[error("empty codebook or training set")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            epochs: 6,
            batch_size: 64,
            adam: AdamConfig {
                lr: 1e-3,
                ..AdamConfig::default()
            },
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierMeta {
    pub codebook: Codebook,
    pub config: ClassifierConfig,
    pub train_steps: usize,
    pub final_loss: Option<f64>,
    pub train_accuracy: Option<f64>,
}

/// One prediction: the class, its counts and the softmax probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockListPrediction {
    pub index: usize,
    pub counts: [usize; 4],
    pub confidence: f64,
    pub low_confidence: bool,
}

#[derive(Debug, Clone)]
pub struct BlockListModel {
    pub net: BlockListNet<f32>,
    pub meta: ClassifierMeta,
}

/// Argmax with ties going to the lowest index.
fn argmax(row: impl Iterator<Item = f64>) -> (usize, f64) {
    row.enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, p)| {
            if p > best.1 {
                (i, p)
            } else {
                best
            }
        })
}

pub fn class_targets(
    records: &[&DatasetRecord],
    codebook: &Codebook,
) -> Result<Vec<usize>, BlockListError> {
    records
        .iter()
        .map(|r| {
            codebook
                .index_of(&r.counts)
                .ok_or_else(|| BlockListError::UnknownClass {
                    id: r.id.clone(),
                    counts: r.counts,
                })
        })
        .collect()
}

/// Minimizes the softmax cross-entropy of silhouette -> class over shuffled
/// minibatches. `on_epoch` sees (epoch, mean loss).
pub fn train_classifier(
    records: &[&DatasetRecord],
    codebook: &Codebook,
    cfg: ClassifierConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<BlockListModel, BlockListError> {
    if codebook.is_empty() || records.is_empty() {
        return Err(BlockListError::Empty);
    }
    let targets = class_targets(records, codebook)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = BlockListNet::<f32>::new(codebook.len(), &mut rng);
    let mut opt = Adam::new(cfg.adam, net.n_params());
    let mut order: Vec<usize> = (0..records.len()).collect();
    let mut last = None;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut sum, mut n) = (0.0, 0);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let sils: Vec<&Silhouette64> = chunk
                .iter()
                .map(|&i| &records[i].silhouette_front)
                .collect();
            let ys: Vec<usize> = chunk.iter().map(|&i| targets[i]).collect();
            let (logits, cache) = net.forward(&BlockListNet::images(&sils));
            let (loss, dlogits) = softmax_cross_entropy(&logits.view(), &ys);
            let mut g = net.zeros_like();
            net.backward(&cache, &dlogits.view(), &mut g);
            opt.step(&mut net, &g, cfg.adam.lr);
            sum += loss as f64 * chunk.len() as f64;
            n += chunk.len();
        }
        let mean = sum / n as f64;
        last = Some(mean);
        on_epoch(epoch, mean);
    }
    let mut model = BlockListModel {
        net,
        meta: ClassifierMeta {
            codebook: codebook.clone(),
            config: cfg,
            train_steps: opt.steps as usize,
            final_loss: last,
            train_accuracy: None,
        },
    };
    model.meta.train_accuracy = Some(model.accuracy(records)?);
    Ok(model)
}

impl BlockListModel {
    pub fn codebook(&self) -> &Codebook {
        &self.meta.codebook
    }

    pub fn predict(&self, sil: &Silhouette64) -> BlockListPrediction {
        self.predict_batch(&[sil]).pop().expect("one prediction")
    }

    pub fn predict_batch(&self, sils: &[&Silhouette64]) -> Vec<BlockListPrediction> {
        let mut out = Vec::with_capacity(sils.len());
        for chunk in sils.chunks(128) {
            let probs = softmax_rows(&self.net.logits(&BlockListNet::images(chunk)).view());
            for row in probs.rows() {
                let (index, confidence) = argmax(row.iter().map(|&p| p as f64));
                out.push(BlockListPrediction {
                    index,
                    counts: self
                        .codebook()
                        .counts(index)
                        .expect("index within codebook"),
                    confidence,
                    low_confidence: confidence < LOW_CONFIDENCE,
                });
            }
        }
        out
    }

    /// Top-1 accuracy against the records' true counts.
    pub fn accuracy(&self, records: &[&DatasetRecord]) -> Result<f64, BlockListError> {
        if records.is_empty() {
            return Ok(0.0);
        }
        let targets = class_targets(records, self.codebook())?;
        let sils: Vec<&Silhouette64> = records.iter().map(|r| &r.silhouette_front).collect();
        let hits = self
            .predict_batch(&sils)
            .iter()
            .zip(&targets)
            .filter(|(p, &y)| p.index == y)
            .count();
        Ok(hits as f64 / records.len() as f64)
    }

    pub fn save(&self, dir: &Path) -> Result<(), BlockListError> {
        fs::create_dir_all(dir)?;
        write_atomic(&dir.join(BLOCKLIST_BLOB), &blob::encode(&self.net))?;
        let meta = serde_json::to_string_pretty(&self.meta).expect("meta serializes");
        write_atomic(&dir.join(BLOCKLIST_META), meta.as_bytes())?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, BlockListError> {
        let text = fs::read_to_string(dir.join(BLOCKLIST_META))?;
        let meta: ClassifierMeta =
            serde_json::from_str(&text).map_err(|e| BlockListError::Checkpoint(e.to_string()))?;
        if meta.codebook.is_empty() {
            return Err(BlockListError::Empty);
        }
        let mut net = BlockListNet::new(meta.codebook.len(), &mut ChaCha8Rng::seed_from_u64(0));
        blob::decode(&fs::read(dir.join(BLOCKLIST_BLOB))?, &mut net)
            .map_err(BlockListError::Checkpoint)?;
        Ok(Self { net, meta })
    }
}
