//! Trains a small DS³M on toy data, then prints one-step forecasts with 90%
//! intervals and the next-regime distribution for the last test windows.

use ds3m::forecasting::predict_rolling;
use ds3m::simulators::{simulate_toy, ToyConfig};
use ds3m::training::{train, DatasetSplit, SplitSizes, TrainConfig};
use ds3m::ModelConfig;

fn main() -> ds3m::Result<()> {
    let data = simulate_toy(&ToyConfig { length: 700, seed: 4, ..Default::default() })?;
    let split = DatasetSplit::from_series(&data.y, 20, SplitSizes { train: 400, validation: 120, test: 150 })?;
    let cfg = TrainConfig { max_epochs: 30, seed: 4, ..Default::default() };
    let (model, report) = train(&split, ModelConfig::toy(), &cfg)?;
    println!("{} epochs, best validation loss {:.3}", report.epochs.len(), report.best_val_loss);

    let forecasts = predict_rolling(&model, &split.test, &split.normalizer, 200, 0.9, 4)?;
    let mut inside = 0;
    for (w, f) in split.test.iter().zip(&forecasts) {
        let y = data.y.row(w.end())[0];
        inside += usize::from(f.lower.data()[0] <= y && y <= f.upper.data()[0]);
    }
    println!("{:>5} {:>9} {:>9} {:>19} {:>11}", "t", "y", "mean", "90% interval", "p(regime 0)");
    for (w, f) in split.test.iter().zip(&forecasts).rev().take(12).rev() {
        let t = w.end();
        println!("{t:>5} {:>9.2} {:>9.2} [{:>8.2}, {:>8.2}] {:>11.3}", data.y.row(t)[0], f.mean.data()[0], f.lower.data()[0], f.upper.data()[0], f.regime_probs[0]);
    }
    println!("empirical coverage {:.3}", inside as f64 / forecasts.len() as f64);
    Ok(())
}
