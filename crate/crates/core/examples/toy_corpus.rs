//! Writes the synthetic corpus as WAV files plus `manifest.tsv`, for trying
//! the CLI end to end.
//!
//! cargo run --release -p spoofdet --example toy_corpus <dir> [seed]

use std::path::PathBuf;

use spoofdet::toy::{plan_corpus, write_corpus, ToyCorpusSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "toy".into()));
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let items = plan_corpus(&ToyCorpusSpec::default(), seed);
    let manifest = write_corpus(&dir, &items)?;
    let path = dir.join("manifest.tsv");
    std::fs::write(&path, manifest.serialize())?;
    println!("wrote {} utterances and {}", manifest.len(), path.display());
    Ok(())
}
