//! Simulates the two-regime toy system, trains DS³M with the default
//! schedule and prints test-split forecast and segmentation metrics.
//!
//! ```text
//! cargo run --release --example toy_experiment -- 3
//! ```

use std::time::Instant;

use ds3m::experiment::{run, ExperimentConfig};

fn main() -> ds3m::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let clock = Instant::now();
    let out = run(&ExperimentConfig::toy(seed))?;
    println!("seed {seed}: {} epochs, best {:?}, {:.1}s", out.report.epochs.len(), out.report.best_epoch, clock.elapsed().as_secs_f64());
    print!("{}", out.forecast_metrics.to_kv("forecast."));
    if let Some(s) = &out.segmentation_metrics {
        print!("{}", s.to_kv("segmentation."));
    }
    if let Some(d) = &out.gamma_diagonal {
        println!("gamma diagonal by true regime: {:.3} {:.3}", d[0], d[1]);
    }
    Ok(())
}
