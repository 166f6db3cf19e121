//! Deterministic GRU forecaster with a Gaussian output head, the reference
//! point for DS³M forecasts.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::config::{ModelConfig, LOGVAR_MAX, LOGVAR_MIN};
use crate::diffcore::params::uniform_init;
use crate::diffcore::{BoundGru, BoundSet, GruShape, ParamSet, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::forecasting::{quantile, ForecastResult};
use crate::model::Sequence;
use crate::rng::{derive_seed, seeded, Rng64};
use crate::training::{train_restarts, GradSets, Normalizer, Objective, TrainConfig, TrainReport, Window};
use crate::training::{sequences, DatasetSplit};

/// Widths of a [`GruBaseline`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub obs_dim: usize,
}

impl From<&ModelConfig> for BaselineConfig {
    fn from(m: &ModelConfig) -> Self {
        BaselineConfig { input_dim: m.input_dim, hidden_dim: m.hidden_dim, obs_dim: m.obs_dim }
    }
}

/// `h_t = GRU(h_{t-1}, x_t)`, `y_t ~ N(head(h_t))` with `head` affine onto
/// mean and log-variance.
#[derive(Clone, Debug, PartialEq)]
pub struct GruBaseline {
    pub config: BaselineConfig,
    pub rnn: ParamSet,
    /// `weight` is `2D × H`, `bias` is `2D`; the first `D` outputs are the mean.
    pub head: ParamSet,
}

impl GruBaseline {
    pub fn init(config: BaselineConfig, seed: u64) -> Result<Self> {
        if config.input_dim == 0 || config.hidden_dim == 0 || config.obs_dim == 0 {
            return Err(Error::Config(format!("baseline widths must be positive, got {config:?}")));
        }
        let mut rng = seeded(seed);
        let rnn = GruShape { input: config.input_dim, hidden: config.hidden_dim }.init(&mut rng);
        let mut head = ParamSet::new();
        head.insert("weight", uniform_init(&mut rng, &[2 * config.obs_dim, config.hidden_dim], config.hidden_dim))?;
        head.insert("bias", uniform_init(&mut rng, &[2 * config.obs_dim], config.hidden_dim))?;
        Ok(GruBaseline { config, rnn, head })
    }

    pub fn named_sets(&self) -> Vec<(String, &ParamSet)> {
        vec![("baseline.rnn".into(), &self.rnn), ("baseline.head".into(), &self.head)]
    }

    pub fn named_sets_mut(&mut self) -> Vec<(String, &mut ParamSet)> {
        vec![("baseline.rnn".into(), &mut self.rnn), ("baseline.head".into(), &mut self.head)]
    }

    fn check_data(&self, seq: &Sequence) -> Result<()> {
        if seq.x.cols() != self.config.input_dim || seq.y.cols() != self.config.obs_dim {
            return Err(Error::dim(
                "baseline",
                format!("x width {} and y width {} vs model ({}, {})", seq.x.cols(), seq.y.cols(), self.config.input_dim, self.config.obs_dim),
            ));
        }
        Ok(())
    }

    /// Mean and log-variance of `y_{T+1}` after reading `x_{1:T}` and
    /// `x_{T+1} = y_T`.
    pub fn predict(&self, history: &Sequence) -> Result<(Tensor, Tensor)> {
        self.check_data(history)?;
        if history.is_empty() {
            return Err(Error::Data("baseline forecast needs a nonempty history".into()));
        }
        let t = history.len();
        let mut x = history.x.data().to_vec();
        x.extend_from_slice(history.y.row(t - 1));
        let ext = Sequence::new(Tensor::matrix(t + 1, self.config.input_dim, x)?, Tensor::zeros(&[t + 1, self.config.obs_dim]))?;
        let tape = Tape::new();
        let bound = Bound::new(&tape, self)?;
        let (mean, logvar) = bound.step_outputs(&[&ext])?.pop().expect("nonempty history");
        let row = |v: Var| Tensor::vector(v.value().row(0).to_vec());
        Ok((row(mean), row(logvar)))
    }

    /// Mean negative log-likelihood per sequence (every sequence summed over time).
    pub fn loss(&self, batch: &[&Sequence]) -> Result<f64> {
        let tape = Tape::new();
        let loss = Bound::new(&tape, self)?.loss(batch)?;
        let v = loss.value().item();
        Ok(v)
    }
}

struct Bound<'t> {
    tape: &'t Tape,
    rnn_set: BoundSet<'t>,
    head_set: BoundSet<'t>,
    rnn: BoundGru<'t>,
    hidden: usize,
    obs: usize,
}

impl<'t> Bound<'t> {
    fn new(tape: &'t Tape, m: &GruBaseline) -> Result<Self> {
        let rnn_set = BoundSet::new(tape, &m.rnn);
        let head_set = BoundSet::new(tape, &m.head);
        let rnn = BoundGru::from_set(&rnn_set)?;
        Ok(Bound { tape, rnn_set, head_set, rnn, hidden: m.config.hidden_dim, obs: m.config.obs_dim })
    }

    /// Per-step `(mean, logvar)` for equal-length sequences, each `B × D`,
    /// stacked into one entry per step.
    fn step_outputs(&self, batch: &[&Sequence]) -> Result<Vec<(Var<'t>, Var<'t>)>> {
        let (w, b) = (self.head_set.get("weight")?, self.head_set.get("bias")?);
        let t_len = batch[0].len();
        let mut h = self.tape.leaf(Tensor::zeros(&[batch.len(), self.hidden]));
        let mut out = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let rows: Vec<f64> = batch.iter().flat_map(|s| s.x.row(t).to_vec()).collect();
            let x = self.tape.leaf(Tensor::matrix(batch.len(), batch[0].x.cols(), rows)?);
            h = self.rnn.step(h, x)?;
            let o = h.affine(w, Some(b))?;
            out.push((o.slice_cols(0, self.obs)?, o.slice_cols(self.obs, self.obs)?.clamp(LOGVAR_MIN, LOGVAR_MAX)));
        }
        Ok(out)
    }

    fn loss(&self, batch: &[&Sequence]) -> Result<Var<'t>> {
        if batch.is_empty() {
            return Err(Error::Data("empty baseline batch".into()));
        }
        let mut groups: BTreeMap<usize, Vec<&Sequence>> = BTreeMap::new();
        for s in batch {
            groups.entry(s.len()).or_default().push(s);
        }
        let mut total: Option<Var<'t>> = None;
        for group in groups.values() {
            for (t, (mean, logvar)) in self.step_outputs(group)?.into_iter().enumerate() {
                let rows: Vec<f64> = group.iter().flat_map(|s| s.y.row(t).to_vec()).collect();
                let y = self.tape.leaf(Tensor::matrix(group.len(), self.obs, rows)?);
                let lp = Var::gaussian_log_pdf(y, mean, logvar)?.sum();
                total = Some(match total {
                    Some(acc) => acc.add(lp)?,
                    None => lp,
                });
            }
        }
        Ok(total.expect("nonempty batch").scale(-1.0 / batch.len() as f64))
    }

    fn grads(&self, g: &crate::diffcore::Gradients) -> GradSets {
        vec![("baseline.rnn".into(), self.rnn_set.grads(g)), ("baseline.head".into(), self.head_set.grads(g))]
    }
}

impl Objective for GruBaseline {
    fn param_sets_mut(&mut self) -> Vec<(String, &mut ParamSet)> {
        self.named_sets_mut()
    }

    fn loss_and_grads(&self, batch: &[&Sequence], _beta: f64, _samples: usize, _rng: &mut Rng64) -> Result<(f64, GradSets)> {
        for s in batch {
            self.check_data(s)?;
        }
        let tape = Tape::new();
        let bound = Bound::new(&tape, self)?;
        let loss = bound.loss(batch)?;
        let value = loss.value().item();
        let g = tape.backward(loss)?;
        Ok((value, bound.grads(&g)))
    }

    fn validation_loss(&self, windows: &[&Sequence], _seed: u64) -> Result<f64> {
        if windows.is_empty() {
            return Err(Error::Data("cannot evaluate the loss on an empty split".into()));
        }
        let mut total = 0.0;
        for chunk in windows.chunks(256) {
            total += self.loss(chunk)? * chunk.len() as f64;
        }
        Ok(total / windows.len() as f64)
    }
}

/// Trains the baseline with the same loop, schedule and restarts as DS³M.
pub fn baseline_train(split: &DatasetSplit, config: BaselineConfig, cfg: &TrainConfig) -> Result<(GruBaseline, TrainReport)> {
    train_restarts(&sequences(&split.train), &sequences(&split.validation), cfg, |seed| GruBaseline::init(config, derive_seed(seed, 0)))
}

/// Forecast of the last step of each window from its first `L − 1` steps,
/// in the original units. Interval bounds are quantiles of `samples`
/// Gaussian draws; the baseline has no regimes, so `regime_probs` is empty.
pub fn baseline_predict(
    model: &GruBaseline,
    windows: &[Window],
    normalizer: &Normalizer,
    samples: usize,
    coverage: f64,
    seed: u64,
) -> Result<Vec<ForecastResult>> {
    if samples == 0 {
        return Err(Error::Config("forecast needs at least one sample".into()));
    }
    if !(coverage > 0.0 && coverage < 1.0) {
        return Err(Error::Config(format!("coverage must lie in (0, 1), got {coverage}")));
    }
    let d = model.config.obs_dim;
    windows
        .iter()
        .map(|w| {
            if w.seq.len() < 2 {
                return Err(Error::Data("forecast windows need at least two steps".into()));
            }
            let (mean, logvar) = model.predict(&w.seq.prefix(w.seq.len() - 1))?;
            let mut rng = seeded(derive_seed(seed, w.start as u64));
            let mut draws = Vec::with_capacity(samples * d);
            for _ in 0..samples {
                for j in 0..d {
                    let e: f64 = rng.sample(StandardNormal);
                    draws.push(mean.data()[j] + (0.5 * logvar.data()[j]).exp() * e);
                }
            }
            let draws = Tensor::matrix(samples, d, draws)?;
            let (mut lower, mut upper) = (Vec::with_capacity(d), Vec::with_capacity(d));
            for j in 0..d {
                let mut col: Vec<f64> = (0..samples).map(|s| draws.get2(s, j)).collect();
                col.sort_by(f64::total_cmp);
                lower.push(quantile(&col, (1.0 - coverage) / 2.0));
                upper.push(quantile(&col, (1.0 + coverage) / 2.0));
            }
            ForecastResult { mean, lower: Tensor::vector(lower), upper: Tensor::vector(upper), regime_probs: Vec::new(), samples: draws }
                .denormalized(normalizer)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::{make_windows, SplitSizes};
    use approx::assert_abs_diff_eq;

    fn sig(v: f64) -> f64 {
        1.0 / (1.0 + (-v).exp())
    }

    #[test]
    fn zero_weights_give_the_head_bias() {
        let cfg = BaselineConfig { input_dim: 2, hidden_dim: 3, obs_dim: 2 };
        let mut m = GruBaseline::init(cfg, 1).unwrap();
        for (_, set) in m.named_sets_mut() {
            set.zero_all();
        }
        m.head.get_mut("bias").unwrap().data_mut().copy_from_slice(&[0.5, -1.0, 0.2, 0.3]);
        let y = Tensor::matrix(4, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]).unwrap();
        let x = Tensor::matrix(4, 2, vec![0.0, 0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let (mean, logvar) = m.predict(&Sequence::new(x, y).unwrap()).unwrap();
        assert_eq!(mean.data(), &[0.5, -1.0]);
        assert_eq!(logvar.data(), &[0.2, 0.3]);
    }

    #[test]
    fn scalar_gru_by_hand() {
        let cfg = BaselineConfig { input_dim: 1, hidden_dim: 1, obs_dim: 1 };
        let m = GruBaseline::init(cfg, 7).unwrap();
        let p = |s: &ParamSet, k: &str| s.get(k).unwrap().data()[0];
        let ys = [0.3, -1.2, 0.8];
        let mut xs = vec![0.0];
        xs.extend_from_slice(&ys);
        let mut h = 0.0;
        for &x in &xs {
            let u = sig(p(&m.rnn, "w_u") * x + p(&m.rnn, "u_u") * h + p(&m.rnn, "b_u"));
            let r = sig(p(&m.rnn, "w_r") * x + p(&m.rnn, "u_r") * h + p(&m.rnn, "b_r"));
            let n = (p(&m.rnn, "w_n") * x + p(&m.rnn, "u_n") * (r * h) + p(&m.rnn, "b_n")).tanh();
            h = u * n + (1.0 - u) * h;
        }
        let w = m.head.get("weight").unwrap().data().to_vec();
        let b = m.head.get("bias").unwrap().data().to_vec();
        let seq = Sequence::new(Tensor::matrix(3, 1, xs[..3].to_vec()).unwrap(), Tensor::matrix(3, 1, ys.to_vec()).unwrap()).unwrap();
        let (mean, logvar) = m.predict(&seq).unwrap();
        assert_abs_diff_eq!(mean.data()[0], w[0] * h + b[0], epsilon = 1e-14);
        assert_abs_diff_eq!(logvar.data()[0], (w[1] * h + b[1]).clamp(LOGVAR_MIN, LOGVAR_MAX), epsilon = 1e-14);
    }

    #[test]
    fn loss_matches_gaussian_likelihood() {
        let cfg = BaselineConfig { input_dim: 1, hidden_dim: 2, obs_dim: 1 };
        let mut m = GruBaseline::init(cfg, 3).unwrap();
        for (_, set) in m.named_sets_mut() {
            set.zero_all();
        }
        m.head.get_mut("bias").unwrap().data_mut().copy_from_slice(&[1.0, 0.0]);
        let ys = [1.0, 2.0, 0.0];
        let seq = Sequence::new(Tensor::zeros(&[3, 1]), Tensor::matrix(3, 1, ys.to_vec()).unwrap()).unwrap();
        let nll: f64 = ys.iter().map(|y| 0.5 * (2.0 * std::f64::consts::PI).ln() + 0.5 * (y - 1.0) * (y - 1.0)).sum();
        assert_abs_diff_eq!(m.loss(&[&seq, &seq]).unwrap(), nll, epsilon = 1e-12);
    }

    #[test]
    fn analytic_gradients_agree_with_differences() {
        let cfg = BaselineConfig { input_dim: 1, hidden_dim: 2, obs_dim: 1 };
        let m = GruBaseline::init(cfg, 11).unwrap();
        let y = Tensor::matrix(4, 1, vec![0.4, -0.3, 1.1, 0.2]).unwrap();
        let x = Tensor::matrix(4, 1, vec![0.0, 0.4, -0.3, 1.1]).unwrap();
        let seq = Sequence::new(x, y).unwrap();
        let (_, grads) = m.loss_and_grads(&[&seq], 1.0, 1, &mut seeded(0)).unwrap();
        let h = 1e-5;
        for (set_name, g) in grads {
            for (key, gt) in g {
                for i in 0..gt.len() {
                    let shifted = |delta: f64| {
                        let mut mm = m.clone();
                        let set = if set_name.ends_with("rnn") { &mut mm.rnn } else { &mut mm.head };
                        set.get_mut(&key).unwrap().data_mut()[i] += delta;
                        mm.loss(&[&seq]).unwrap()
                    };
                    let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
                    assert_abs_diff_eq!(gt.data()[i], fd, epsilon = 1e-6);
                }
            }
        }
    }

    #[test]
    fn window_order_does_not_change_forecasts() {
        let y: Vec<f64> = (0..40).map(|t| (t as f64 * 0.7).sin()).collect();
        let windows = make_windows(&Tensor::matrix(40, 1, y).unwrap(), 6).unwrap();
        let m = GruBaseline::init(BaselineConfig { input_dim: 1, hidden_dim: 4, obs_dim: 1 }, 2).unwrap();
        let n = Normalizer::identity(1);
        let fwd = baseline_predict(&m, &windows, &n, 10, 0.9, 5).unwrap();
        let mut rev = windows.clone();
        rev.reverse();
        let mut back = baseline_predict(&m, &rev, &n, 10, 0.9, 5).unwrap();
        back.reverse();
        assert_eq!(fwd, back);
    }

    #[test]
    fn constant_series_is_learned() {
        let series = Tensor::matrix(150, 1, vec![3.5; 150]).unwrap();
        let split = DatasetSplit::from_series(&series, 6, SplitSizes { train: 100, validation: 20, test: 20 }).unwrap();
        let cfg = TrainConfig { max_epochs: 40, batch_size: 16, initial_lr: 1e-2, seed: 4, ..Default::default() };
        let (m, _) = baseline_train(&split, BaselineConfig { input_dim: 1, hidden_dim: 4, obs_dim: 1 }, &cfg).unwrap();
        for f in baseline_predict(&m, &split.test, &split.normalizer, 5, 0.9, 1).unwrap() {
            assert!((f.mean.data()[0] - 3.5).abs() < 0.1, "{}", f.mean.data()[0]);
        }
    }

    #[test]
    fn seeded_training_is_reproducible() {
        let y: Vec<f64> = (0..120).map(|t| (t as f64 * 0.4).cos() * 2.0).collect();
        let split = DatasetSplit::from_series(&Tensor::matrix(120, 1, y).unwrap(), 5, SplitSizes { train: 60, validation: 30, test: 20 }).unwrap();
        let cfg = TrainConfig { max_epochs: 3, seed: 9, ..Default::default() };
        let c = BaselineConfig { input_dim: 1, hidden_dim: 3, obs_dim: 1 };
        let a = baseline_train(&split, c, &cfg).unwrap().0;
        let b = baseline_train(&split, c, &cfg).unwrap().0;
        assert_eq!(a, b);
    }
}
