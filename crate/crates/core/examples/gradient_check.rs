//! Compares reverse-mode ELBO gradients with central differences on a tiny
//! model, with the sampled path frozen.

use ds3m::diffcore::Tape;
use ds3m::generative::{generate, InputMode};
use ds3m::inference::{sweep, Noise};
use ds3m::model::BoundDs3m;
use ds3m::rng::seeded;
use ds3m::{Ds3m, EmissionFamily, ModelConfig, Sequence};

fn main() -> ds3m::Result<()> {
    let cfg = ModelConfig { regimes: 2, obs_dim: 1, input_dim: 1, hidden_dim: 2, latent_dim: 1, emission: EmissionFamily::Gaussian };
    let model = Ds3m::init(cfg.clone(), 7)?;
    let g = generate(&model.gen, &cfg, &InputMode::Autoregressive { steps: 3 }, 8)?;
    let seq = Sequence::new(g.x, g.y)?;

    let tape = Tape::new();
    let bm = BoundDs3m::bind(&tape, &model)?;
    let mut rng = seeded(9);
    let sw = sweep(&tape, &bm, &cfg, &[&seq], Noise::Sample(&mut rng))?;
    let paths = sw.paths.clone();
    let grads = bm.grads(&tape.backward(sw.loss(1.0)?)?);

    let loss_at = |m: &Ds3m| -> ds3m::Result<f64> {
        let tape = Tape::new();
        let bm = BoundDs3m::bind(&tape, m)?;
        let v = sweep(&tape, &bm, &cfg, &[&seq], Noise::Fixed(&paths))?.loss(1.0)?.value().item();
        Ok(v)
    };
    let h = 1e-5;
    let mut worst = 0.0f64;
    for (set, gs) in &grads {
        for (name, gt) in gs {
            for i in 0..gt.len() {
                let shifted = |delta: f64| -> ds3m::Result<f64> {
                    let mut m = model.clone();
                    for (n, ps) in m.named_sets_mut() {
                        if &n == set {
                            ps.get_mut(name)?.data_mut()[i] += delta;
                        }
                    }
                    loss_at(&m)
                };
                let fd = (shifted(h)? - shifted(-h)?) / (2.0 * h);
                let rel = (gt.data()[i] - fd).abs() / gt.data()[i].abs().max(fd.abs()).max(1e-8);
                worst = worst.max(rel);
            }
        }
        println!("{set:<28} ok");
    }
    println!("max relative error {worst:.2e}");
    Ok(())
}
