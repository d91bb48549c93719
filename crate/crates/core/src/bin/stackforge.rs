use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use stackforge::baselines::{BruteForceConfig, GreedyConfig};
use stackforge::blocklist::{train_classifier, BlockListModel, Codebook};
use stackforge::config::Config;
use stackforge::datagen::{build_corpus, lint_corpus, Corpus, DatasetRecord, MANIFEST_FILE};
use stackforge::diffusion::{train_model, DiffusionModel, PoseNormalizer, TrainExample};
use stackforge::eval::{evaluate, match_diversity, scene_counts, CountSource, EvalError};
use stackforge::geometry::Silhouette64;
use stackforge::pipeline::{
    sample_with_counts, BruteForceGenerator, DiffusionGenerator, Generator, GreedyGenerator,
};
use stackforge::service::{serve, AppState};
use stackforge::stability::classify_with;
use stackforge::util::{sha256_hex, write_atomic};

type Result<T> = std::result::Result<T, Box<dyn std::error::Error>>;

#[derive(Parser)]
#[command(
    name = "stackforge",
    version,
    about = "Silhouette-conditioned generation of stable block structures"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// TOML configuration; missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

impl Common {
    fn config(&self) -> Result<Config> {
        Ok(match &self.config {
            Some(p) => Config::load(p)?,
            None => Config::default(),
        })
    }
}

#[derive(Args, Clone)]
struct ModelDir {
    /// Checkpoint directory; defaults to $STACKFORGE_MODEL_DIR, then ./model.
    #[arg(long)]
    model: Option<PathBuf>,
}

impl ModelDir {
    fn path(&self) -> PathBuf {
        self.model
            .clone()
            .or_else(|| std::env::var_os("STACKFORGE_MODEL_DIR").map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("model"))
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Diffusion,
    Greedy,
    Brute,
}

#[derive(Clone, Copy, ValueEnum)]
enum Counts {
    Cnn,
    Gt,
}

#[derive(Subcommand)]
enum Command {
    /// Build a corpus (train/test JSONL plus manifest).
    Datagen {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        templates: Option<usize>,
    },
    /// Check a corpus: stability, silhouettes, depths, heights, split.
    LintCorpus {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Train the pose diffusion model on a corpus's train split.
    TrainDiffusion {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        /// Train on the first N records only.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Train the block-list classifier.
    TrainBlocklist {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Predict the block list of a silhouette file.
    PredictBlocklist {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelDir,
        #[arg(long)]
        silhouette: PathBuf,
    },
    /// Sample structures for a silhouette file.
    Sample {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelDir,
        #[arg(long)]
        silhouette: PathBuf,
        #[arg(long, default_value_t = 3)]
        n: usize,
        /// Block counts "cubes,rects,longs,triangles"; skips the classifier.
        #[arg(long, value_parser = parse_counts)]
        counts: Option<[usize; 4]>,
    },
    /// Run a baseline on a silhouette file.
    Baseline {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelDir,
        #[arg(long, value_enum)]
        method: Method,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        silhouette: PathBuf,
        #[arg(long, default_value_t = 3)]
        n: usize,
        #[arg(long, value_parser = parse_counts)]
        counts: Option<[usize; 4]>,
    },
    /// Evaluate a method on held-out scenes; writes report.json and report.csv.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelDir,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum, default_value = "diffusion")]
        method: Method,
        #[arg(long)]
        sigma: Option<f64>,
        /// Pick sigma by matching this diversity (baselines only).
        #[arg(long, conflicts_with = "sigma")]
        match_diversity: Option<f64>,
        #[arg(long, value_enum, default_value = "cnn")]
        counts: Counts,
        #[arg(long, default_value_t = 500)]
        scenes: usize,
    },
    /// Serve the HTTP API.
    Serve {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelDir,
        #[arg(long)]
        addr: Option<String>,
    },
}

fn parse_counts(s: &str) -> std::result::Result<[usize; 4], String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| e.to_string()))
        .collect::<std::result::Result<_, _>>()?;
    v.try_into()
        .map_err(|_| "expected four comma-separated counts".to_string())
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

fn read_silhouette(path: &Path) -> Result<Silhouette64> {
    Ok(Silhouette64::parse(&std::fs::read_to_string(path)?)?)
}

/// Block counts for a silhouette: given, or from the classifier.
fn counts_for(
    sil: &Silhouette64,
    given: Option<[usize; 4]>,
    model: &Path,
) -> Result<([usize; 4], serde_json::Value)> {
    if let Some(c) = given {
        return Ok((c, json!({ "counts": c, "source": "gt" })));
    }
    let cnn = BlockListModel::load(model)?;
    let p = cnn.predict(sil);
    Ok((
        p.counts,
        json!({ "counts": p.counts, "confidence": p.confidence, "low_confidence": p.low_confidence, "source": "cnn" }),
    ))
}

/// Writes sample_<i>.json plus verdicts.json.
fn write_samples(
    out: &Path,
    stacks: &[stackforge::Stack],
    cfg: &Config,
    block_list: serde_json::Value,
) -> Result<()> {
    let mut verdicts = Vec::new();
    for (i, s) in stacks.iter().enumerate() {
        write_json(&out.join(format!("sample_{i}.json")), s)?;
        let v = classify_with(s, &cfg.datagen.stability);
        let stable = v.as_ref().map(|v| v.stable).unwrap_or(false);
        verdicts.push(
            json!({ "sample": i, "stable": stable, "error": v.err().map(|e| e.to_string()) }),
        );
        println!("sample {i}: {}", if stable { "stable" } else { "unstable" });
    }
    write_json(
        &out.join("verdicts.json"),
        &json!({ "block_list": block_list, "samples": verdicts }),
    )
}

fn records_limit(records: &[DatasetRecord], limit: Option<usize>) -> &[DatasetRecord] {
    &records[..limit.unwrap_or(records.len()).min(records.len())]
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Datagen { common, templates } => {
            let mut cfg = common.config()?;
            if let Some(t) = templates {
                cfg.datagen.n_templates = t;
            }
            let started = Instant::now();
            let summary = build_corpus(&cfg.datagen, common.seed, &common.out)?;
            let m = &summary.manifest;
            println!(
                "{} records ({} train, {} test) from {} templates, {} classes, {:.1}s",
                m.n_records,
                m.split.train,
                m.split.test,
                m.n_templates,
                m.class_codebook.len(),
                started.elapsed().as_secs_f64()
            );
        }
        Command::LintCorpus { common, corpus } => {
            let cfg = common.config()?;
            let report = lint_corpus(&corpus, cfg.datagen.workers)?;
            write_json(&common.out.join("lint.json"), &report)?;
            let ok = report.is_clean() && report.split_ok(cfg.datagen.test_fraction);
            println!(
                "{} records, test fraction {:.4}: {}",
                report.n_records,
                report.test_fraction,
                if ok { "clean" } else { "PROBLEMS" }
            );
            if !ok {
                return Err("corpus lint failed; see lint.json".into());
            }
        }
        Command::TrainDiffusion {
            common,
            corpus,
            steps,
            limit,
        } => {
            let mut cfg = common.config()?;
            cfg.diffusion.seed = common.seed;
            if let Some(s) = steps {
                cfg.diffusion.steps = s;
            }
            let data = Corpus::load(&corpus)?;
            let norm = PoseNormalizer {
                mean: data.manifest.pose_mean,
                std: data.manifest.pose_std,
            };
            let examples: Vec<TrainExample> = records_limit(&data.train, limit)
                .iter()
                .map(|r| TrainExample::from_record(r, &norm, cfg.diffusion.model.max_blocks))
                .collect::<std::result::Result<_, _>>()?;
            let hash = sha256_hex(&std::fs::read(corpus.join(MANIFEST_FILE))?);
            let started = Instant::now();
            let total = cfg.diffusion.steps;
            let model = train_model(&examples, norm, cfg.diffusion, hash, |s, loss| {
                if s % 500 == 0 || s + 1 == total {
                    eprintln!(
                        "step {s:6} loss {loss:.4} ({:.0}s)",
                        started.elapsed().as_secs_f64()
                    );
                }
            })?;
            model.save(&common.out)?;
            println!("saved diffusion model to {}", common.out.display());
        }
        Command::TrainBlocklist {
            common,
            corpus,
            epochs,
        } => {
            let mut cfg = common.config()?;
            cfg.blocklist.seed = common.seed;
            if let Some(e) = epochs {
                cfg.blocklist.epochs = e;
            }
            let data = Corpus::load(&corpus)?;
            let train: Vec<&DatasetRecord> = data.train.iter().collect();
            let codebook: &Codebook = &data.manifest.class_codebook;
            let model = train_classifier(&train, codebook, cfg.blocklist, |e, loss| {
                eprintln!("epoch {e} loss {loss:.4}")
            })?;
            let test: Vec<&DatasetRecord> = data
                .test
                .iter()
                .filter(|r| codebook.index_of(&r.counts).is_some())
                .collect();
            let held_out = model.accuracy(&test)?;
            model.save(&common.out)?;
            println!(
                "train accuracy {:.2}%, held-out accuracy {:.2}%",
                100.0 * model.meta.train_accuracy.unwrap_or(0.0),
                100.0 * held_out
            );
        }
        Command::PredictBlocklist {
            common,
            model,
            silhouette,
        } => {
            let sil = read_silhouette(&silhouette)?;
            let p = BlockListModel::load(&model.path())?.predict(&sil);
            write_json(&common.out.join("prediction.json"), &p)?;
            println!("{}", serde_json::to_string(&p)?);
        }
        Command::Sample {
            common,
            model,
            silhouette,
            n,
            counts,
        } => {
            let cfg = common.config()?;
            let sil = read_silhouette(&silhouette)?;
            let dir = model.path();
            let (c, info) = counts_for(&sil, counts, &dir)?;
            let diffusion = DiffusionModel::load(&dir)?;
            let g = DiffusionGenerator {
                model: &diffusion,
                workers: cfg.service.workers,
            };
            let stacks = sample_with_counts(&g, &sil, c, n, common.seed)?;
            write_samples(&common.out, &stacks, &cfg, info)?;
        }
        Command::Baseline {
            common,
            model,
            method,
            sigma,
            silhouette,
            n,
            counts,
        } => {
            let cfg = common.config()?;
            let sil = read_silhouette(&silhouette)?;
            let (c, info) = counts_for(&sil, counts, &model.path())?;
            let g: Box<dyn Generator> = match method {
                Method::Greedy => Box::new(GreedyGenerator {
                    config: GreedyConfig {
                        sigma: sigma.unwrap_or(cfg.greedy.sigma),
                    },
                    workers: 0,
                }),
                Method::Brute => Box::new(BruteForceGenerator {
                    config: BruteForceConfig {
                        sigma: sigma.unwrap_or(cfg.brute_force.sigma),
                        ..cfg.brute_force.clone()
                    },
                    workers: 0,
                }),
                Method::Diffusion => return Err("use `sample` for the diffusion model".into()),
            };
            let stacks = sample_with_counts(g.as_ref(), &sil, c, n, common.seed)?;
            write_samples(&common.out, &stacks, &cfg, info)?;
        }
        Command::Eval {
            common,
            model,
            corpus,
            method,
            sigma,
            match_diversity: target,
            counts,
            scenes,
        } => {
            let cfg = common.config()?;
            let opts = stackforge::eval::EvalOptions {
                seed: common.seed,
                ..cfg.eval
            };
            let data = Corpus::load(&corpus)?;
            let scenes: Vec<DatasetRecord> = data.test.into_iter().take(scenes).collect();
            let dir = model.path();
            let cnn = match counts {
                Counts::Cnn => Some(BlockListModel::load(&dir)?),
                Counts::Gt => None,
            };
            let source = if cnn.is_some() {
                CountSource::Cnn
            } else {
                CountSource::GroundTruth
            };
            let chosen = scene_counts(&scenes, source, cnn.as_ref())?;
            let workers = cfg.eval.workers;
            let brute = cfg.brute_force.clone();
            let greedy_at = |s: f64| GreedyGenerator {
                config: GreedyConfig { sigma: s },
                workers,
            };
            let brute_at = |s: f64| BruteForceGenerator {
                config: BruteForceConfig {
                    sigma: s,
                    ..brute.clone()
                },
                workers,
            };
            let mut matched = None;
            let matching = match (method, target) {
                (Method::Diffusion, Some(_)) => {
                    return Err("--match-diversity applies to baselines".into())
                }
                (Method::Greedy, Some(t)) => {
                    Some(match_diversity(greedy_at, t, &scenes, &chosen, &opts))
                }
                (Method::Brute, Some(t)) => {
                    Some(match_diversity(brute_at, t, &scenes, &chosen, &opts))
                }
                _ => None,
            };
            let sigma = match matching {
                Some(Ok(m)) => {
                    matched = Some(m);
                    Some(m.sigma)
                }
                Some(Err(EvalError::NoConvergence {
                    target,
                    sigma,
                    diversity,
                })) => {
                    eprintln!("diversity {target:.4} not reached; closest sigma {sigma} gives {diversity:.4}");
                    return Err(Box::new(EvalError::NoConvergence {
                        target,
                        sigma,
                        diversity,
                    }));
                }
                Some(Err(e)) => return Err(e.into()),
                None => sigma,
            };
            let diffusion;
            let g: Box<dyn Generator + '_> = match method {
                Method::Diffusion => {
                    diffusion = DiffusionModel::load(&dir)?;
                    Box::new(DiffusionGenerator {
                        model: &diffusion,
                        workers,
                    })
                }
                Method::Greedy => Box::new(greedy_at(sigma.unwrap_or(cfg.greedy.sigma))),
                Method::Brute => Box::new(brute_at(sigma.unwrap_or(cfg.brute_force.sigma))),
            };
            let report = evaluate(g.as_ref(), &scenes, &chosen, &opts)?;
            report.write(&common.out)?;
            if let Some(m) = matched {
                write_json(&common.out.join("diversity_match.json"), &m)?;
            }
            println!("{}", report.summary());
        }
        Command::Serve {
            common,
            model,
            addr,
        } => {
            let cfg = common.config()?;
            let dir = model.path();
            let state = AppState {
                diffusion: DiffusionModel::load(&dir)
                    .map(Arc::new)
                    .map_err(|e| eprintln!("diffusion model: {e}"))
                    .ok(),
                blocklist: BlockListModel::load(&dir)
                    .map(Arc::new)
                    .map_err(|e| eprintln!("block-list model: {e}"))
                    .ok(),
                workers: cfg.service.workers,
                stability: cfg.datagen.stability,
            };
            let addr = addr.unwrap_or(cfg.service.addr);
            tokio::runtime::Runtime::new()?.block_on(serve(state, &addr))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
