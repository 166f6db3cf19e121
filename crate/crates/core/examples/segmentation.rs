//! Trains on the toy study and segments its whole test stretch in one pass:
//! averaged posterior regime probabilities per step, the label path and its
//! run lengths.
//!
//! ```text
//! cargo run --release --example segmentation -- 3
//! ```

use ds3m::checkpoint::Model;
use ds3m::diffcore::Tensor;
use ds3m::evaluation::MetricsRecord;
use ds3m::experiment::{load_data, split_data, train_model, ExperimentConfig};
use ds3m::forecasting::segment;
use ds3m::model::Sequence;

fn main() -> ds3m::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let cfg = ExperimentConfig::toy(seed);
    let data = load_data(&cfg.data)?;
    let split = split_data(&cfg, &data)?;
    let (ck, _) = train_model(&cfg, &data, &split, None)?;
    let Model::Ds3m(model) = &ck.model else { unreachable!("toy preset trains ds3m") };

    let start = split.test[0].start;
    let y = ck.normalizer.normalize(&data.y)?;
    let n = data.y.rows() - start;
    let ys: Vec<f64> = (start..data.y.rows()).map(|t| y.row(t)[0]).collect();
    let xs: Vec<f64> = (start..data.y.rows()).map(|t| if t == 0 { 0.0 } else { y.row(t - 1)[0] }).collect();
    let seq = Sequence::new(Tensor::matrix(n, 1, xs)?, Tensor::matrix(n, 1, ys)?)?;
    let seg = segment(model, &seq, 50, seed)?;

    let truth = &data.labels.as_ref().expect("toy data is labeled")[start..];
    let m = MetricsRecord::regimes(&seg.regime_path, truth, 2)?;
    let perm = m.label_permutation.clone().unwrap_or_default();
    let code = |d: usize| if d == 0 { '#' } else { '.' };
    for (a, b) in truth.chunks(100).zip(seg.regime_path.chunks(100)).take(3) {
        println!("truth  {}", a.iter().map(|&d| code(d)).collect::<String>());
        println!("model  {}\n", b.iter().map(|&d| code(perm[d])).collect::<String>());
    }
    print!("{}", m.to_kv(""));
    for (k, runs) in seg.run_lengths.iter().enumerate() {
        println!("model regime {k}: {} runs, longest {}", runs.len(), runs.iter().max().unwrap_or(&0));
    }
    Ok(())
}
