//! Lorenz lobes observed through a random 10 × 3 projection: DS³M against a
//! plain GRU forecaster on the same seeded data.
//!
//! ```text
//! cargo run --release --example lorenz_experiment -- 2
//! ```

use ds3m::checkpoint::Family;
use ds3m::experiment::{run, ExperimentConfig};

fn main() -> ds3m::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let cfg = ExperimentConfig::lorenz(seed);
    let model = run(&cfg)?;
    let mut base = cfg.clone();
    base.model.family = Family::BaselineGru;
    let gru = run(&base)?;

    let seg = model.segmentation_metrics.as_ref().and_then(|m| m.accuracy).unwrap_or(f64::NAN);
    println!("{:<12}{:>10}{:>10}{:>12}{:>14}", "model", "rmse", "mape", "regime acc", "segment acc");
    println!("{:<12}{:>10.3}{:>10.2}{:>12.3}{:>14.3}", "ds3m", model.forecast_metrics.rmse.unwrap(), model.forecast_metrics.mape.unwrap(), model.forecast_metrics.accuracy.unwrap(), seg);
    println!("{:<12}{:>10.3}{:>10.2}{:>12}{:>14}", "gru", gru.forecast_metrics.rmse.unwrap(), gru.forecast_metrics.mape.unwrap(), "-", "-");
    Ok(())
}
