//! Independent oracles shared by the integration tests and the acceptance
//! harness.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ds3m::diffcore::density::gaussian_log_pdf;
use ds3m::diffcore::{Tape, Tensor};
use ds3m::generative::{emission_dist, encode_forward, generate, prior_z_params, InputMode};
use ds3m::inference::{encode_backward, posterior_d_probs, posterior_z_params, sweep, LatentPath, Noise};
use ds3m::model::BoundDs3m;
use ds3m::rng::seeded;
use ds3m::{Ds3m, EmissionFamily, ModelConfig, Sequence};
use rand::Rng;
use rand_distr::StandardNormal;

/// K = 2, Z = 1, H = 2, D = U = 1.
pub fn tiny() -> ModelConfig {
    ModelConfig { regimes: 2, obs_dim: 1, input_dim: 1, hidden_dim: 2, latent_dim: 1, emission: EmissionFamily::Gaussian }
}

/// A tiny model and two length-3 sequences drawn from it.
pub fn draw(seed: u64) -> (Ds3m, Vec<Sequence>) {
    let m = Ds3m::init(tiny(), seed).unwrap();
    let seqs = (0..2)
        .map(|i| {
            let g = generate(&m.gen, &m.config, &InputMode::Autoregressive { steps: 3 }, seed * 31 + i).unwrap();
            Sequence::new(g.x, g.y).unwrap()
        })
        .collect();
    (m, seqs)
}

fn fixed_loss(model: &Ds3m, seqs: &[&Sequence], paths: &[LatentPath], beta: f64) -> f64 {
    let tape = Tape::new();
    let bm = BoundDs3m::bind(&tape, model).unwrap();
    let sw = sweep(&tape, &bm, &model.config, seqs, Noise::Fixed(paths)).unwrap();
    let v = sw.loss(beta).unwrap().value().item();
    v
}

/// Largest relative error over all parameters between reverse-mode
/// gradients and a five-point stencil, `|a − b| / max(|a|, |b|, floor)`,
/// with the noise and discrete path frozen.
pub fn max_relative_error(model: &Ds3m, seqs: &[&Sequence], beta: f64, seed: u64, floor: f64) -> f64 {
    let tape = Tape::new();
    let bm = BoundDs3m::bind(&tape, model).unwrap();
    let mut rng = seeded(seed);
    let sw = sweep(&tape, &bm, &model.config, seqs, Noise::Sample(&mut rng)).unwrap();
    let paths = sw.paths.clone();
    let g = tape.backward(sw.loss(beta).unwrap()).unwrap();
    let grads = bm.grads(&g);

    // truncation error O(h^4), round-off O(eps / h)
    let h = 1e-3;
    let mut worst = 0.0f64;
    for (set, gs) in &grads {
        for (name, gt) in gs {
            for i in 0..gt.len() {
                let at = |delta: f64| {
                    let mut p = model.clone();
                    {
                        let mut sets = p.named_sets_mut();
                        let ps = &mut sets.iter_mut().find(|(n, _)| n == set).unwrap().1;
                        ps.get_mut(name).unwrap().data_mut()[i] += delta;
                    }
                    fixed_loss(&p, seqs, &paths, beta)
                };
                let fd = (-at(2.0 * h) + 8.0 * at(h) - 8.0 * at(-h) + at(-2.0 * h)) / (12.0 * h);
                let a = gt.data()[i];
                worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(floor));
            }
        }
    }
    worst
}

/// Mean and standard error.
pub fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Single-sample ELBO values (β = 1) of `paths` independent posterior draws.
pub fn elbo_draws(model: &Ds3m, seq: &Sequence, paths: usize, seed: u64) -> Vec<f64> {
    let tape = Tape::new();
    let bm = BoundDs3m::bind(&tape, model).unwrap();
    let mut rng = seeded(seed);
    let batch = vec![seq; paths];
    let sw = sweep(&tape, &bm, &model.config, &batch, Noise::Sample(&mut rng)).unwrap();
    sw.breakdowns().iter().map(|b| b.total(1.0)).collect()
}

fn vrow(t: &Tensor, i: usize) -> Tensor {
    Tensor::vector(t.row(i).to_vec())
}

fn draw_categorical(p: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

/// Importance-sampling estimate of `log p(y | x)` with the variational
/// posterior as proposal, built from the per-step densities. Returns the
/// estimate and its delta-method standard error.
pub fn importance_log_likelihood(model: &Ds3m, seq: &Sequence, particles: usize, seed: u64) -> (f64, f64) {
    let cfg = &model.config;
    let (gen, inf) = (&model.gen, &model.inf);
    let h = encode_forward(&seq.x, &Tensor::zeros(&[cfg.hidden_dim]), gen, cfg).unwrap();
    let a = encode_backward(&seq.y, &h, inf, cfg).unwrap();
    let gamma = gen.regime_chain.transition_matrix();
    let initial = gen.regime_chain.initial.clone();
    let mut rng = seeded(seed);
    let mut log_w = Vec::with_capacity(particles);
    for _ in 0..particles {
        // the auxiliary d_0 has the same law under p and q and cancels
        let mut d_prev = draw_categorical(&initial, rng.gen::<f64>());
        let mut z_prev = Tensor::zeros(&[cfg.latent_dim]);
        let mut lw = 0.0;
        for t in 0..seq.len() {
            let (h_t, a_t, y_t) = (vrow(&h, t), vrow(&a, t), vrow(&seq.y, t));
            let qd = posterior_d_probs(&a_t, d_prev, inf).unwrap();
            let d = draw_categorical(qd.data(), rng.gen::<f64>());
            let (mu_q, lv_q) = posterior_z_params(&z_prev, &a_t, d, inf, cfg).unwrap();
            let z: Vec<f64> = (0..cfg.latent_dim).map(|i| mu_q.data()[i] + rng.sample::<f64, _>(StandardNormal) * (0.5 * lv_q.data()[i]).exp()).collect();
            let z = Tensor::vector(z);
            let (mu_p, lv_p) = prior_z_params(&z_prev, &h_t, d, gen, cfg).unwrap();
            let log_pd = if t == 0 { initial[d].ln() } else { gamma.get2(d_prev, d).ln() };
            lw += log_pd + gaussian_log_pdf(&z, &mu_p, &lv_p).unwrap() + emission_dist(&z, &h_t, d, gen, cfg).unwrap().log_prob(&y_t).unwrap();
            lw -= qd.data()[d].ln() + gaussian_log_pdf(&z, &mu_q, &lv_q).unwrap();
            d_prev = d;
            z_prev = z;
        }
        log_w.push(lw);
    }
    let m = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_w.iter().map(|l| (l - m).exp()).collect();
    let (wm, wse) = mean_se(&w);
    (m + wm.ln(), wse / wm)
}

pub mod brute {
    //! Deliberately naive reference metrics.

    pub fn rmse(a: &[f64], b: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..a.len() {
            s += (a[i] - b[i]).powi(2);
        }
        (s / a.len() as f64).sqrt()
    }

    pub fn mape(a: &[f64], b: &[f64], eps: f64) -> f64 {
        let mut s = 0.0;
        for i in 0..a.len() {
            let denom = if a[i].abs() > eps { a[i].abs() } else { eps };
            s += ((a[i] - b[i]) / denom).abs();
        }
        s / a.len() as f64 * 100.0
    }

    fn f1_of(pred: &[usize], truth: &[usize], c: usize) -> f64 {
        let tp = pred.iter().zip(truth).filter(|(p, t)| **p == c && **t == c).count() as f64;
        let npred = pred.iter().filter(|p| **p == c).count() as f64;
        let ntrue = truth.iter().filter(|t| **t == c).count() as f64;
        if tp == 0.0 {
            return 0.0;
        }
        let (p, r) = (tp / npred, tp / ntrue);
        2.0 * p * r / (p + r)
    }

    pub fn f1(pred: &[usize], truth: &[usize], k: usize) -> f64 {
        if k == 2 {
            f1_of(pred, truth, 1)
        } else {
            (0..k).map(|c| f1_of(pred, truth, c)).sum::<f64>() / k as f64
        }
    }

    fn perms(k: usize) -> Vec<Vec<usize>> {
        if k == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for first in 0..k {
            for rest in perms(k - 1) {
                let mut p = vec![first];
                p.extend(rest.into_iter().map(|r| if r >= first { r + 1 } else { r }));
                out.push(p);
            }
        }
        out
    }

    /// Lexicographically first permutation with the most agreements.
    pub fn align(pred: &[usize], truth: &[usize], k: usize) -> Vec<usize> {
        let mut best = (0, vec![]);
        for p in perms(k) {
            let hits = pred.iter().zip(truth).filter(|(a, b)| p[**a] == **b).count();
            if best.1.is_empty() || hits > best.0 {
                best = (hits, p);
            }
        }
        best.1
    }

    pub fn durations(path: &[usize], k: usize) -> Vec<f64> {
        (0..k)
            .map(|c| {
                let steps = path.iter().filter(|d| **d == c).count();
                let starts = (0..path.len()).filter(|&i| path[i] == c && (i == 0 || path[i - 1] != c)).count();
                if starts == 0 {
                    0.0
                } else {
                    steps as f64 / starts as f64
                }
            })
            .collect()
    }
}

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn ds3m(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ds3m")).args(args).output().expect("binary runs")
}

/// Runs the binary and panics with its stderr on failure.
pub fn ds3m_ok(args: &[&str]) -> Output {
    let out = ds3m(args);
    assert!(out.status.success(), "ds3m {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}
