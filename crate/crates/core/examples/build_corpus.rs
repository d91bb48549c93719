//! Generate a small training corpus and lint it.
//!
//! cargo run --example build_corpus -- [n_templates] [out_dir]

use std::path::PathBuf;
use std::time::Instant;

use stackforge::datagen::{build_corpus, lint_corpus, DatagenConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let n_templates = args.next().map(|s| s.parse()).transpose()?.unwrap_or(20);
    let out: PathBuf = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("stackforge-corpus"));

    let cfg = DatagenConfig {
        n_templates,
        ..Default::default()
    };
    let started = Instant::now();
    let summary = build_corpus(&cfg, 0, &out)?;
    let m = &summary.manifest;
    println!(
        "{} templates -> {} records ({} train / {} test, {} classes) in {:.1}s",
        n_templates,
        m.n_records,
        m.split.train,
        m.split.test,
        m.class_codebook.len(),
        started.elapsed().as_secs_f64()
    );

    let report = lint_corpus(&out, 0)?;
    println!(
        "lint: clean={} test_share={:.3} max_depth={} leaked={}",
        report.is_clean(),
        report.test_fraction,
        report.max_depth,
        report.leaked_templates.len()
    );
    println!("written to {}", out.display());
    Ok(())
}
