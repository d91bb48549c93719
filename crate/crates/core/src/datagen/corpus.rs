use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{generate_lineage, DatagenConfig, DatasetRecord};
use crate::blocklist::Codebook;
use crate::geometry::{rasterize, View};
use crate::stability::classify_with;
use crate::util::{par_map, write_atomic};

/// Lower bound on per-dimension pose std. Roll and pitch are identically
/// zero in the corpus; the floor keeps their z-scores finite.
pub const POSE_STD_FLOOR: f64 = 1e-2;

pub const TRAIN_FILE: &str = "train.jsonl";
pub const TEST_FILE: &str = "test.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("{file}:{line}: {source}")]
    Json {
        file: String,
        line: usize,
        source: serde_json::Error,
    },
    #[error("invalid corpus: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub n_records: usize,
    pub split: SplitCounts,
    pub pose_mean: [f64; 6],
    pub pose_std: [f64; 6],
    pub class_codebook: Codebook,
    pub n_templates: usize,
    pub seed: u64,
    pub config: DatagenConfig,
}

impl CorpusManifest {
    pub fn load(path: &Path) -> Result<Self, DatagenError> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|source| DatagenError::Json {
            file: path.display().to_string(),
            line: 0,
            source,
        })
    }
}

#[derive(Debug, Clone)]
pub struct CorpusSummary {
    pub manifest: CorpusManifest,
    /// Template slots where every attempt fell over.
    pub empty_slots: usize,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub manifest: CorpusManifest,
    pub train: Vec<DatasetRecord>,
    pub test: Vec<DatasetRecord>,
}

impl Corpus {
    pub fn load(dir: &Path) -> Result<Self, DatagenError> {
        Ok(Self {
            manifest: CorpusManifest::load(&dir.join(MANIFEST_FILE))?,
            train: read_jsonl(&dir.join(TRAIN_FILE))?,
            test: read_jsonl(&dir.join(TEST_FILE))?,
        })
    }
}

/// Seed of attempt `attempt` at template slot `template`. Each slot draws
/// from its own ChaCha stream, so slots are independent of one another and
/// of the worker count.
pub fn template_seed(corpus_seed: u64, template: u64, attempt: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(corpus_seed);
    rng.set_stream(template);
    rng.set_word_pos(2 * attempt as u128);
    rng.next_u64()
}

pub fn build_corpus(
    cfg: &DatagenConfig,
    seed: u64,
    out_dir: &Path,
) -> Result<CorpusSummary, DatagenError> {
    assert!(cfg.n_templates >= 1, "need at least one template");
    fs::create_dir_all(out_dir)?;
    let slots: Vec<u64> = (0..cfg.n_templates as u64).collect();
    let lineages = par_map(&slots, cfg.workers, |&t| generate_lineage(t, seed, cfg));
    let empty_slots = lineages.iter().filter(|l| l.is_empty()).count();

    let test_ids = assign_test_lineages(&lineages, cfg.test_fraction, seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (t, lineage) in lineages.into_iter().enumerate() {
        if test_ids.contains(&(t as u64)) {
            test.extend(lineage);
        } else {
            train.extend(lineage);
        }
    }

    let (pose_mean, pose_std) = pose_statistics(&train);
    let manifest = CorpusManifest {
        n_records: train.len() + test.len(),
        split: SplitCounts {
            train: train.len(),
            test: test.len(),
        },
        pose_mean,
        pose_std,
        class_codebook: Codebook::build(train.iter().map(|r| r.counts)),
        n_templates: cfg.n_templates,
        seed,
        config: *cfg,
    };
    write_jsonl(&out_dir.join(TRAIN_FILE), &train)?;
    write_jsonl(&out_dir.join(TEST_FILE), &test)?;
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_atomic(&out_dir.join(MANIFEST_FILE), text.as_bytes())?;
    Ok(CorpusSummary {
        manifest,
        empty_slots,
    })
}

/// Whole lineages go to the test split, visited in a seeded random order,
/// whenever adding one brings the test record count closer to its target.
fn assign_test_lineages(lineages: &[Vec<DatasetRecord>], fraction: f64, seed: u64) -> HashSet<u64> {
    let total: usize = lineages.iter().map(Vec::len).sum();
    let target = fraction * total as f64;
    let mut order: Vec<usize> = (0..lineages.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    order.shuffle(&mut rng);
    let mut test = 0usize;
    let mut ids = HashSet::new();
    for t in order {
        let n = lineages[t].len();
        if n > 0 && (test as f64 + n as f64 / 2.0) < target {
            test += n;
            ids.insert(t as u64);
        }
    }
    ids
}

fn pose_statistics(records: &[DatasetRecord]) -> ([f64; 6], [f64; 6]) {
    let mut n = 0usize;
    let mut sum = [0.0; 6];
    for b in records.iter().flat_map(|r| &r.blocks) {
        for (s, v) in sum.iter_mut().zip(b.pose.to_array()) {
            *s += v;
        }
        n += 1;
    }
    if n == 0 {
        return ([0.0; 6], [1.0; 6]);
    }
    let mean = sum.map(|s| s / n as f64);
    let mut var = [0.0; 6];
    for b in records.iter().flat_map(|r| &r.blocks) {
        for (k, v) in b.pose.to_array().into_iter().enumerate() {
            var[k] += (v - mean[k]).powi(2);
        }
    }
    let std = var.map(|v| (v / n as f64).sqrt().max(POSE_STD_FLOOR));
    (mean, std)
}

fn write_jsonl(path: &Path, records: &[DatasetRecord]) -> Result<(), DatagenError> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r).expect("record serializes");
        buf.write_all(b"\n")?;
    }
    write_atomic(path, &buf)?;
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<DatasetRecord>, DatagenError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|source| DatagenError::Json {
            file: path.display().to_string(),
            line: i + 1,
            source,
        })?;
        out.push(record);
    }
    Ok(out)
}

/// Result of re-verifying a corpus from disk. Every list holds the ids of
/// offending records (or template ids for leakage).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LintReport {
    pub n_records: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub n_templates: usize,
    pub test_fraction: f64,
    pub max_depth: usize,
    pub unstable: Vec<String>,
    pub silhouette_mismatch: Vec<String>,
    pub depth_violations: Vec<String>,
    pub height_violations: Vec<String>,
    pub count_mismatch: Vec<String>,
    pub leaked_templates: Vec<u64>,
    pub manifest_mismatch: Vec<String>,
}

impl LintReport {
    pub fn is_clean(&self) -> bool {
        self.unstable.is_empty()
            && self.silhouette_mismatch.is_empty()
            && self.depth_violations.is_empty()
            && self.height_violations.is_empty()
            && self.count_mismatch.is_empty()
            && self.leaked_templates.is_empty()
            && self.manifest_mismatch.is_empty()
    }

    /// |test share - 0.1| within one percentage point.
    pub fn split_ok(&self, target: f64) -> bool {
        (self.test_fraction - target).abs() <= 0.01
    }
}

/// Minimum height of the top surface for a record to span four layers.
pub const MIN_TOP: f64 = 7.9;

pub fn lint_corpus(dir: &Path, workers: usize) -> Result<LintReport, DatagenError> {
    let corpus = Corpus::load(dir)?;
    let params = corpus.manifest.config.stability;
    let mut report = LintReport {
        n_train: corpus.train.len(),
        n_test: corpus.test.len(),
        n_records: corpus.train.len() + corpus.test.len(),
        ..Default::default()
    };
    report.test_fraction = report.n_test as f64 / report.n_records.max(1) as f64;

    let all: Vec<&DatasetRecord> = corpus.train.iter().chain(&corpus.test).collect();
    let checks = par_map(&all, workers, |r| {
        let stack = r.stack();
        let stable = classify_with(&stack, &params)
            .map(|v| v.stable)
            .unwrap_or(false);
        let sil_ok = rasterize(&stack, View::Front) == r.silhouette_front;
        (
            stable,
            sil_ok,
            stack.top() >= MIN_TOP,
            stack.counts() == r.counts,
        )
    });
    for (r, (stable, sil_ok, tall, counts_ok)) in all.iter().zip(checks) {
        let flag = |cond: bool, list: &mut Vec<String>| {
            if !cond {
                list.push(r.id.clone());
            }
        };
        flag(stable, &mut report.unstable);
        flag(sil_ok, &mut report.silhouette_mismatch);
        flag(tall, &mut report.height_violations);
        flag(counts_ok, &mut report.count_mismatch);
        flag(
            r.depth <= corpus.manifest.config.max_removals.min(4),
            &mut report.depth_violations,
        );
        report.max_depth = report.max_depth.max(r.depth);
    }

    let train_t: HashSet<u64> = corpus.train.iter().map(|r| r.template).collect();
    let test_t: HashSet<u64> = corpus.test.iter().map(|r| r.template).collect();
    report.n_templates = train_t.union(&test_t).count();
    report.leaked_templates = train_t.intersection(&test_t).copied().collect();
    report.leaked_templates.sort_unstable();

    let m = &corpus.manifest;
    if m.n_records != report.n_records
        || m.split
            != (SplitCounts {
                train: report.n_train,
                test: report.n_test,
            })
    {
        report.manifest_mismatch.push("record counts".into());
    }
    if m.class_codebook != Codebook::build(corpus.train.iter().map(|r| r.counts)) {
        report.manifest_mismatch.push("class_codebook".into());
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg(n: usize) -> DatagenConfig {
        DatagenConfig {
            n_templates: n,
            max_removals: 2,
            ..Default::default()
        }
    }

    #[test]
    fn template_seeds_are_distinct_per_slot_and_attempt() {
        let a = template_seed(1, 0, 0);
        assert_ne!(a, template_seed(1, 1, 0));
        assert_ne!(a, template_seed(1, 0, 1));
        assert_ne!(a, template_seed(2, 0, 0));
        assert_eq!(a, template_seed(1, 0, 0));
    }

    #[test]
    fn small_corpus_round_trips_and_lints_clean() {
        let dir = tempfile::tempdir().unwrap();
        let summary = build_corpus(&small_cfg(12), 5, dir.path()).unwrap();
        let corpus = Corpus::load(dir.path()).unwrap();
        assert_eq!(corpus.manifest, summary.manifest);
        assert_eq!(
            corpus.train.len() + corpus.test.len(),
            summary.manifest.n_records
        );
        let report = lint_corpus(dir.path(), 1).unwrap();
        assert!(report.is_clean(), "{report:?}");
        assert!(report.max_depth <= 2);
        for s in summary.manifest.pose_std {
            assert!(s >= POSE_STD_FLOOR);
        }
        assert!(!dir.path().join("train.jsonl.tmp").exists());
    }

    #[test]
    fn corpus_is_deterministic_and_worker_independent() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let mut cfg = small_cfg(6);
        cfg.workers = 1;
        build_corpus(&cfg, 9, a.path()).unwrap();
        cfg.workers = 3;
        build_corpus(&cfg, 9, b.path()).unwrap();
        for f in [TRAIN_FILE, TEST_FILE] {
            assert_eq!(
                fs::read(a.path().join(f)).unwrap(),
                fs::read(b.path().join(f)).unwrap()
            );
        }
    }

    #[test]
    fn lint_catches_tampering() {
        let dir = tempfile::tempdir().unwrap();
        build_corpus(&small_cfg(4), 2, dir.path()).unwrap();
        let path = dir.path().join(TRAIN_FILE);
        let mut records = read_jsonl(&path).unwrap();
        records[0].blocks[0].pose.translation.z += 3.0;
        records[0].depth = 7;
        write_jsonl(&path, &records).unwrap();
        let report = lint_corpus(dir.path(), 1).unwrap();
        assert!(!report.is_clean());
        assert_eq!(report.depth_violations, vec![records[0].id.clone()]);
        assert!(report.silhouette_mismatch.contains(&records[0].id));
    }

    #[test]
    fn greedy_split_hits_target_with_many_lineages() {
        let fake = |t: u64, n: usize| -> Vec<DatasetRecord> {
            let r = DatasetRecord {
                id: String::new(),
                parent_id: None,
                depth: 0,
                template: t,
                blocks: vec![],
                silhouette_front: crate::geometry::Silhouette64::empty(View::Front),
                counts: [0; 4],
            };
            vec![r; n]
        };
        let lineages: Vec<_> = (0..500)
            .map(|t| fake(t, 1 + (t as usize * 7919) % 40))
            .collect();
        let total: usize = lineages.iter().map(Vec::len).sum();
        let ids = assign_test_lineages(&lineages, 0.1, 0);
        let test: usize = ids.iter().map(|&t| lineages[t as usize].len()).sum();
        assert!((test as f64 / total as f64 - 0.1).abs() < 0.01);
    }
}
