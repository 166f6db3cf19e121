//! Trains on selected columns of an arbitrary CSV, saves a checkpoint,
//! reloads it and scores forecasts of the final windows.
//!
//! ```text
//! cargo run --release --example csv_ingestion -- data.csv load,temperature
//! ```
//!
//! Without arguments it uses the synthetic fixture from the test suite.

use std::path::PathBuf;

use ds3m::checkpoint::Checkpoint;
use ds3m::experiment::{evaluate_tables, forecast, forecasts_to_csv, load_data, split_data, target_windows, train_model, DataConfig, ExperimentConfig, Source};
use ds3m::simulators::Table;
use ds3m::training::{SplitSizes, Window};
use ds3m::EmissionFamily;

fn main() -> ds3m::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = args.next().map(PathBuf::from).unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/synthetic.csv"));
    let columns: Vec<String> = args.next().unwrap_or_else(|| "load,temperature".into()).split(',').map(str::to_string).collect();

    let rows = Table::read(&path)?.values.rows();
    let window = 12;
    let usable = rows - window;
    let (train, validation) = (usable * 6 / 10, usable * 2 / 10);
    let mut cfg = ExperimentConfig::toy(11);
    cfg.data = DataConfig {
        source: Source::Csv,
        path: Some(path.clone()),
        columns: Some(columns),
        window,
        split: SplitSizes { train, validation, test: usable - train - validation },
        ..cfg.data
    };
    cfg.model.hidden_dim = 8;
    cfg.model.emission = EmissionFamily::Lognormal;
    cfg.train.max_epochs = 30;

    let data = load_data(&cfg.data)?;
    let split = split_data(&cfg, &data)?;
    let (ck, report) = train_model(&cfg, &data, &split, None)?;
    let file = std::env::temp_dir().join("ds3m-csv-example.ckpt");
    ck.save(&file)?;
    let ck = Checkpoint::load(&file)?;
    println!("{} epochs; checkpoint {} ({} columns)", report.epochs.len(), file.display(), ck.columns.len());

    let windows = target_windows(&ck, &data.y, Some(split.test.len()))?;
    let f = forecast(&ck, &windows, &cfg.predict, 1)?;
    let targets: Vec<usize> = windows.iter().map(Window::end).collect();
    let pred = Table::parse(&forecasts_to_csv(&ck.columns, &targets, &f))?;
    print!("{}", evaluate_tables(&pred, &Table::read(&path)?)?.to_kv(""));
    Ok(())
}
