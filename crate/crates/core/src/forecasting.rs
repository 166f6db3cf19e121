//! Monte-Carlo one-step predictive distributions and regime segmentation.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::diffcore::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::generative::{expected_value, sample_categorical, transform_sample};
use crate::inference::{sweep, Noise};
use crate::model::{BoundDs3m, Ds3m, Sequence};
use crate::rng::{derive_seed, seeded};
use crate::training::{Normalizer, Window};

pub const DEFAULT_SAMPLES: usize = 100;

/// Predictive distribution of `y_{T+1}` and `d_{T+1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct ForecastResult {
    pub mean: Tensor,
    pub lower: Tensor,
    pub upper: Tensor,
    /// Distribution of `d_{T+1}`, length `K`.
    pub regime_probs: Vec<f64>,
    /// `S × D` draws of `y_{T+1}`.
    pub samples: Tensor,
}

impl ForecastResult {
    /// Most probable next regime, lowest index on ties.
    pub fn regime(&self) -> usize {
        argmax(&self.regime_probs)
    }

    /// Maps every quantity through `denormalize`.
    pub fn denormalized(&self, n: &Normalizer) -> Result<Self> {
        Ok(ForecastResult {
            mean: n.denormalize(&self.mean)?,
            lower: n.denormalize(&self.lower)?,
            upper: n.denormalize(&self.upper)?,
            regime_probs: self.regime_probs.clone(),
            samples: n.denormalize(&self.samples)?,
        })
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in v.iter().enumerate() {
        if p > v[best] {
            best = i;
        }
    }
    best
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn check_request(samples: usize, coverage: f64) -> Result<()> {
    if samples == 0 {
        return Err(Error::Config("forecast needs at least one sample".into()));
    }
    if !(coverage > 0.0 && coverage < 1.0) {
        return Err(Error::Config(format!("coverage must lie in (0, 1), got {coverage}")));
    }
    Ok(())
}

/// Forecasts `y_{T+1}` from the history `(x_{1:T}, y_{1:T})` and the next
/// input `x_{T+1}`, with `samples` ancestral paths.
pub fn predict_one_step(model: &Ds3m, history: &Sequence, x_next: &[f64], samples: usize, coverage: f64, seed: u64) -> Result<ForecastResult> {
    check_request(samples, coverage)?;
    model.check_data(history)?;
    let cfg = &model.config;
    if x_next.len() != cfg.input_dim {
        return Err(Error::dim("predict_one_step", format!("x_next has {} values, model input width is {}", x_next.len(), cfg.input_dim)));
    }
    let (k, d) = (cfg.regimes, cfg.obs_dim);
    let mut rng = seeded(seed);
    let tape = Tape::new();
    let bm = BoundDs3m::bind(&tape, model)?;
    let batch = vec![history; samples];
    let sw = sweep(&tape, &bm, cfg, &batch, Noise::Sample(&mut rng))?;
    let gamma = model.gen.regime_chain.transition_matrix();

    let d_last: Vec<usize> = sw.paths.iter().map(|p| *p.d_samples.last().expect("T >= 1")).collect();
    let mut regime_probs = vec![0.0; k];
    for &dl in &d_last {
        for (acc, p) in regime_probs.iter_mut().zip(gamma.row(dl)) {
            *acc += p / samples as f64;
        }
    }
    let d_next: Vec<usize> = d_last.iter().map(|&dl| sample_categorical(gamma.row(dl), &mut rng)).collect();

    let x = tape.leaf(Tensor::matrix(samples, x_next.len(), x_next.repeat(samples))?);
    let h = bm.gen.forward_rnn.step(sw.h_last, x)?;
    let prior_in = Var::concat_cols(&[sw.z_last, h])?;
    let mut mus = Vec::with_capacity(k);
    let mut lvs = Vec::with_capacity(k);
    for j in 0..k {
        let (m, l) = bm.gen.prior_z_from_input(prior_in, j)?;
        mus.push(m);
        lvs.push(l);
    }
    let mu = Var::select_rows(&mus, &d_next)?;
    let lv = Var::select_rows(&lvs, &d_next)?;
    let z_data: Vec<f64> = {
        let (mu, lv) = (mu.value(), lv.value());
        mu.data().iter().zip(lv.data()).map(|(&m, &l)| m + rng.sample::<f64, _>(StandardNormal) * (0.5 * l).exp()).collect()
    };
    let z = tape.leaf(Tensor::matrix(samples, cfg.latent_dim, z_data)?);
    let em_in = Var::concat_cols(&[z, h])?;
    let mut means = Vec::with_capacity(k);
    let mut logvars = Vec::with_capacity(k);
    for j in 0..k {
        let (m, l) = bm.gen.emission_from_input(em_in, j)?;
        means.push(m);
        logvars.push(l);
    }
    let em_mean = Var::select_rows(&means, &d_next)?;
    let em_lv = Var::select_rows(&logvars, &d_next)?;
    let (em_mean, em_lv) = (em_mean.value(), em_lv.value());

    let mut mean = vec![0.0; d];
    let mut draws = Vec::with_capacity(samples * d);
    for s in 0..samples {
        let (m, l) = (em_mean.row(s), em_lv.row(s));
        for (acc, v) in mean.iter_mut().zip(expected_value(cfg.emission, m, l)) {
            *acc += v / samples as f64;
        }
        for j in 0..d {
            let g = m[j] + rng.sample::<f64, _>(StandardNormal) * (0.5 * l[j]).exp();
            draws.push(transform_sample(cfg.emission, g));
        }
    }
    let samples_t = Tensor::matrix(samples, d, draws)?;
    let alpha = (1.0 - coverage) / 2.0;
    let mut lower = Vec::with_capacity(d);
    let mut upper = Vec::with_capacity(d);
    for j in 0..d {
        let mut col: Vec<f64> = (0..samples).map(|s| samples_t.row(s)[j]).collect();
        col.sort_by(f64::total_cmp);
        lower.push(quantile(&col, alpha));
        upper.push(quantile(&col, 1.0 - alpha));
    }
    Ok(ForecastResult { mean: Tensor::vector(mean), lower: Tensor::vector(lower), upper: Tensor::vector(upper), regime_probs, samples: samples_t })
}

/// Forecast of a window's last observation from the steps before it.
pub fn forecast_window(model: &Ds3m, window: &Sequence, samples: usize, coverage: f64, seed: u64) -> Result<ForecastResult> {
    let t = window.len();
    if t < 2 {
        return Err(Error::dim("forecast_window", "window needs at least two steps"));
    }
    predict_one_step(model, &window.prefix(t - 1), window.x.row(t - 1), samples, coverage, seed)
}

/// One-step forecasts of every window's last step, in original units.
///
/// Each window draws from a stream derived from `seed` and its start index,
/// so results do not depend on the order or grouping of windows.
pub fn predict_rolling(model: &Ds3m, windows: &[Window], normalizer: &Normalizer, samples: usize, coverage: f64, seed: u64) -> Result<Vec<ForecastResult>> {
    if windows.is_empty() {
        return Err(Error::Data("no windows to forecast".into()));
    }
    check_request(samples, coverage)?;
    windows
        .par_iter()
        .map(|w| forecast_window(model, &w.seq, samples, coverage, derive_seed(seed, w.start as u64))?.denormalized(normalizer))
        .collect()
}

/// In-sample regime estimate for one sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentationResult {
    pub regime_path: Vec<usize>,
    /// `T × K` posterior regime probabilities averaged over samples.
    pub probs: Tensor,
    /// Lengths of the maximal runs of each regime along `regime_path`.
    pub run_lengths: Vec<Vec<usize>>,
}

/// Averages the realized `q(d_t | d_{t-1}^(s), A_t)` over `samples`
/// ancestral paths and takes the per-step argmax.
pub fn segment(model: &Ds3m, seq: &Sequence, samples: usize, seed: u64) -> Result<SegmentationResult> {
    if samples == 0 {
        return Err(Error::Config("segmentation needs at least one sample".into()));
    }
    model.check_data(seq)?;
    let k = model.config.regimes;
    let t_len = seq.len();
    let mut rng = seeded(seed);
    let tape = Tape::new();
    let bm = BoundDs3m::bind(&tape, model)?;
    let batch = vec![seq; samples];
    let sw = sweep(&tape, &bm, &model.config, &batch, Noise::Sample(&mut rng))?;
    let mut probs = vec![0.0; t_len * k];
    for p in &sw.paths {
        for (acc, q) in probs.iter_mut().zip(p.q_d_probs.data()) {
            *acc += q / samples as f64;
        }
    }
    let probs = Tensor::matrix(t_len, k, probs)?;
    let regime_path: Vec<usize> = (0..t_len).map(|t| argmax(probs.row(t))).collect();
    let mut run_lengths = vec![Vec::new(); k];
    let mut i = 0;
    while i < t_len {
        let mut j = i;
        while j < t_len && regime_path[j] == regime_path[i] {
            j += 1;
        }
        run_lengths[regime_path[i]].push(j - i);
        i = j;
    }
    Ok(SegmentationResult { regime_path, probs, run_lengths })
}

/// Regime estimate of each window's last step, one label per window.
pub fn segment_windows(model: &Ds3m, windows: &[Window], samples: usize, seed: u64) -> Result<Vec<(usize, Vec<f64>)>> {
    if windows.is_empty() {
        return Err(Error::Data("no windows to segment".into()));
    }
    windows
        .par_iter()
        .map(|w| {
            let s = segment(model, &w.seq, samples, derive_seed(seed, w.start as u64))?;
            let t = w.seq.len() - 1;
            Ok((s.regime_path[t], s.probs.row(t).to_vec()))
        })
        .collect()
}
