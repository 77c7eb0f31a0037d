//! Trains and scores a detector on the synthetic corpus.
//!
//! cargo run --release -p spoofdet --example toy_experiment [seed]

use std::time::Instant;

use spoofdet::toy::{run_experiment, ToyExperiment};

fn main() -> spoofdet::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let exp = ToyExperiment { seed, ..Default::default() };
    let start = Instant::now();
    let report = run_experiment(&exp)?;
    println!("{}", report.training);
    println!("full    avg {:.4} interleaved {:.4}", report.full_average.eer, report.full_interleaved.eer);
    println!("partial avg {:.4} interleaved {:.4}", report.partial_average.eer, report.partial_interleaved.eer);
    println!("elapsed {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
