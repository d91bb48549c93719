//! Evaluate the two baselines on held-out scenes with ground-truth block
//! lists, matching the greedy swap probability to a target diversity.
//!
//! cargo run --release --example eval_baselines -- [n_templates] [target_diversity]

use stackforge::baselines::{BruteForceConfig, GreedyConfig};
use stackforge::datagen::{build_corpus, Corpus, DatagenConfig};
use stackforge::eval::{evaluate, match_diversity, scene_counts, CountSource, EvalOptions};
use stackforge::pipeline::{BruteForceGenerator, GreedyGenerator};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let n_templates = args.next().map(|s| s.parse()).transpose()?.unwrap_or(100);
    let target: f64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0.38);

    let dir = tempfile::tempdir()?;
    build_corpus(
        &DatagenConfig {
            n_templates,
            ..Default::default()
        },
        0,
        dir.path(),
    )?;
    let scenes = Corpus::load(dir.path())?.test;
    let counts = scene_counts(&scenes, CountSource::GroundTruth, None)?;
    let opts = EvalOptions::default();

    let greedy = |sigma| GreedyGenerator {
        config: GreedyConfig { sigma },
        workers: 0,
    };
    let matched = match_diversity(greedy, target, &scenes, &counts, &opts)?;
    println!(
        "greedy sigma {:.3} reaches diversity {:.2}% (target {:.2}%)",
        matched.sigma,
        100.0 * matched.diversity,
        100.0 * target
    );
    println!(
        "{}",
        evaluate(&greedy(matched.sigma), &scenes, &counts, &opts)?.summary()
    );

    let brute = BruteForceGenerator {
        config: BruteForceConfig::default(),
        workers: 0,
    };
    println!("{}", evaluate(&brute, &scenes, &counts, &opts)?.summary());
    Ok(())
}
