//! Train the block-list classifier on a small corpus and report held-out
//! top-1 accuracy plus a few predictions.
//!
//! cargo run --release --example blocklist -- [n_templates] [epochs]

use stackforge::blocklist::{train_classifier, ClassifierConfig};
use stackforge::datagen::{build_corpus, Corpus, DatagenConfig, DatasetRecord};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let n_templates = args.next().map(|s| s.parse()).transpose()?.unwrap_or(200);
    let epochs = args.next().map(|s| s.parse()).transpose()?.unwrap_or(4);

    let dir = tempfile::tempdir()?;
    build_corpus(
        &DatagenConfig {
            n_templates,
            ..Default::default()
        },
        0,
        dir.path(),
    )?;
    let corpus = Corpus::load(dir.path())?;
    let codebook = &corpus.manifest.class_codebook;
    println!(
        "{} train / {} test records, {} classes",
        corpus.train.len(),
        corpus.test.len(),
        codebook.len()
    );

    let train: Vec<&DatasetRecord> = corpus.train.iter().collect();
    let cfg = ClassifierConfig {
        epochs,
        ..Default::default()
    };
    let model = train_classifier(&train, codebook, cfg, |e, loss| {
        println!("epoch {e} loss {loss:.4}")
    })?;

    // Classes never seen in training cannot be predicted; skip them.
    let test: Vec<&DatasetRecord> = corpus
        .test
        .iter()
        .filter(|r| codebook.index_of(&r.counts).is_some())
        .collect();
    println!(
        "held-out top-1 accuracy {:.1}%",
        100.0 * model.accuracy(&test)?
    );
    for r in test.iter().take(5) {
        let p = model.predict(&r.silhouette_front);
        println!(
            "{}: true {:?} predicted {:?} (p = {:.2})",
            r.id, r.counts, p.counts, p.confidence
        );
    }
    Ok(())
}
