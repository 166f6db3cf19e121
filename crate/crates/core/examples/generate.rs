//! Draws synthetic series from a freshly initialized DS³M with a hand-set,
//! sticky regime chain, and prints the regime path and run lengths.

use ds3m::evaluation::mean_durations;
use ds3m::generative::{generate, InputMode, RegimeChain};
use ds3m::{Ds3m, ModelConfig};

fn main() -> ds3m::Result<()> {
    let mut model = Ds3m::init(ModelConfig::toy(), 2)?;
    model.gen.regime_chain = RegimeChain::from_matrix(&[vec![0.95, 0.05], vec![0.1, 0.9]])?;
    let g = generate(&model.gen, &model.config, &InputMode::Autoregressive { steps: 400 }, 5)?;
    let path: String = g.d.iter().map(|&d| if d == 0 { '#' } else { '.' }).collect();
    for chunk in path.as_bytes().chunks(100) {
        println!("{}", std::str::from_utf8(chunk).unwrap());
    }
    let d = mean_durations(&g.d, 2);
    println!("mean durations {:.1} / {:.1} (chain implies 20 / 10)", d[0], d[1]);
    let y = g.y.data();
    println!("y range [{:.2}, {:.2}]", y.iter().cloned().fold(f64::INFINITY, f64::min), y.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    Ok(())
}
