//! Generative network: forward GRU over the inputs, a Markov chain of
//! regimes, regime-conditioned Gaussian latent transitions and an emission
//! that sees both the latent state and the GRU hidden state.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::config::{EmissionFamily, ModelConfig, LOGVAR_MAX, LOGVAR_MIN};
use crate::diffcore::density::gaussian_log_pdf;
use crate::diffcore::{BoundGru, BoundMlp2, BoundSet, GruShape, Mlp2Shape, ParamSet, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::seeded;

/// Markov chain over regimes, stored as unconstrained logits.
///
/// Row `i` of the transition matrix is `softmax(logits[i])`, so any logit
/// values give a row-stochastic matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct RegimeChain {
    /// Holds one entry, `logits`, of shape `K × K`.
    pub params: ParamSet,
    /// Distribution of the first regime.
    pub initial: Vec<f64>,
}

impl RegimeChain {
    pub fn uniform(k: usize) -> Self {
        Self::from_logits(Tensor::zeros(&[k, k])).expect("square logits")
    }

    pub fn from_logits(logits: Tensor) -> Result<Self> {
        if logits.rank() != 2 || logits.rows() != logits.cols() {
            return Err(Error::dim("RegimeChain", format!("logits must be square, got {:?}", logits.shape())));
        }
        let k = logits.rows();
        let mut params = ParamSet::new();
        params.insert("logits", logits)?;
        Ok(RegimeChain { params, initial: vec![1.0 / k as f64; k] })
    }

    /// Chain whose transition matrix equals `gamma` (rows must be strictly positive).
    pub fn from_matrix(gamma: &[Vec<f64>]) -> Result<Self> {
        let rows: Vec<Vec<f64>> = gamma.iter().map(|r| r.iter().map(|p| p.ln()).collect()).collect();
        Self::from_logits(Tensor::from_rows(&rows)?)
    }

    pub fn k(&self) -> usize {
        self.initial.len()
    }

    pub fn logits(&self) -> &Tensor {
        self.params.get("logits").expect("regime chain has logits")
    }

    pub fn logits_mut(&mut self) -> &mut Tensor {
        self.params.get_mut("logits").expect("regime chain has logits")
    }

    /// Row-stochastic transition matrix `Γ`.
    pub fn transition_matrix(&self) -> Tensor {
        crate::diffcore::softmax(self.logits()).expect("K >= 1")
    }
}

/// Parameters of the generative network.
#[derive(Clone, Debug, PartialEq)]
pub struct GenerativeParams {
    pub forward_rnn: ParamSet,
    pub regime_chain: RegimeChain,
    pub transition_mean: Vec<ParamSet>,
    pub transition_logvar: Vec<ParamSet>,
    pub emission: Vec<ParamSet>,
}

impl GenerativeParams {
    pub fn init(cfg: &ModelConfig, rng: &mut impl Rng) -> Self {
        let (k, z, h, d) = (cfg.regimes, cfg.latent_dim, cfg.hidden_dim, cfg.obs_dim);
        let forward_rnn = GruShape { input: cfg.input_dim, hidden: h }.init(rng);
        let trans = Mlp2Shape::square_hidden(z + h, z);
        let emit = Mlp2Shape::square_hidden(z + h, 2 * d);
        let transition_mean = (0..k).map(|_| trans.init(rng)).collect();
        let transition_logvar = (0..k).map(|_| trans.init(rng)).collect();
        let emission = (0..k).map(|_| emit.init(rng)).collect();
        GenerativeParams { forward_rnn, regime_chain: RegimeChain::uniform(k), transition_mean, transition_logvar, emission }
    }

    pub fn k(&self) -> usize {
        self.regime_chain.k()
    }

    pub(crate) fn named_sets(&self) -> Vec<(String, &ParamSet)> {
        let mut out = vec![("gen.forward_rnn".to_string(), &self.forward_rnn), ("gen.regime_chain".to_string(), &self.regime_chain.params)];
        for (name, list) in [("transition_mean", &self.transition_mean), ("transition_logvar", &self.transition_logvar), ("emission", &self.emission)] {
            out.extend(list.iter().enumerate().map(|(k, ps)| (format!("gen.{name}.{k}"), ps)));
        }
        out
    }

    pub(crate) fn named_sets_mut(&mut self) -> Vec<(String, &mut ParamSet)> {
        let mut out = vec![("gen.forward_rnn".to_string(), &mut self.forward_rnn), ("gen.regime_chain".to_string(), &mut self.regime_chain.params)];
        for (name, list) in [("transition_mean", &mut self.transition_mean), ("transition_logvar", &mut self.transition_logvar), ("emission", &mut self.emission)] {
            out.extend(list.iter_mut().enumerate().map(|(k, ps)| (format!("gen.{name}.{k}"), ps)));
        }
        out
    }
}

/// Output distribution `p(y_t | z_t, h_t, d_t = k)`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmissionDist {
    pub family: EmissionFamily,
    /// Mean of `y` (Gaussian) or of `ln y` (lognormal).
    pub mean: Tensor,
    pub logvar: Tensor,
}

impl EmissionDist {
    pub fn log_prob(&self, y: &Tensor) -> Result<f64> {
        match self.family {
            EmissionFamily::Gaussian => gaussian_log_pdf(y, &self.mean, &self.logvar),
            EmissionFamily::Lognormal => {
                if y.data().iter().any(|&v| v <= 0.0) {
                    return Err(Error::Config("lognormal emission needs strictly positive observations".into()));
                }
                let ln_y = y.map(f64::ln);
                Ok(gaussian_log_pdf(&ln_y, &self.mean, &self.logvar)? - ln_y.sum())
            }
        }
    }

    /// Expected value of `y`.
    pub fn expected_value(&self) -> Tensor {
        expected_value(self.family, self.mean.data(), self.logvar.data()).into()
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Tensor {
        let draws = self
            .mean
            .data()
            .iter()
            .zip(self.logvar.data())
            .map(|(&m, &lv)| {
                let e: f64 = rng.sample(StandardNormal);
                transform_sample(self.family, m + e * (0.5 * lv).exp())
            })
            .collect::<Vec<_>>();
        Tensor::vector(draws)
    }
}

pub(crate) fn expected_value(family: EmissionFamily, mean: &[f64], logvar: &[f64]) -> Vec<f64> {
    match family {
        EmissionFamily::Gaussian => mean.to_vec(),
        EmissionFamily::Lognormal => mean.iter().zip(logvar).map(|(m, lv)| (m + 0.5 * lv.exp()).exp()).collect(),
    }
}

pub(crate) fn transform_sample(family: EmissionFamily, v: f64) -> f64 {
    match family {
        EmissionFamily::Gaussian => v,
        EmissionFamily::Lognormal => v.exp(),
    }
}

/// Generative parameters recorded on a tape, operating on row batches.
pub struct BoundGenerative<'t> {
    pub(crate) forward_rnn: BoundGru<'t>,
    pub(crate) logits: Var<'t>,
    pub(crate) transition_mean: Vec<BoundMlp2<'t>>,
    pub(crate) transition_logvar: Vec<BoundMlp2<'t>>,
    pub(crate) emission: Vec<BoundMlp2<'t>>,
    pub(crate) log_initial: Tensor,
    pub(crate) obs_dim: usize,
}

impl<'t> BoundGenerative<'t> {
    /// Binds from already-recorded sets, in the order of `GenerativeParams::named_sets`.
    pub(crate) fn from_sets(params: &GenerativeParams, sets: &[BoundSet<'t>], cfg: &ModelConfig) -> Result<Self> {
        let k = params.k();
        if sets.len() != 2 + 3 * k {
            return Err(Error::Config("generative parameter sets incomplete".into()));
        }
        let mlps = |off: usize| -> Result<Vec<BoundMlp2<'t>>> { (0..k).map(|i| BoundMlp2::from_set(&sets[off + i])).collect() };
        Ok(BoundGenerative {
            forward_rnn: BoundGru::from_set(&sets[0])?,
            logits: sets[1].get("logits")?,
            transition_mean: mlps(2)?,
            transition_logvar: mlps(2 + k)?,
            emission: mlps(2 + 2 * k)?,
            log_initial: Tensor::vector(params.regime_chain.initial.iter().map(|p| p.ln()).collect()),
            obs_dim: cfg.obs_dim,
        })
    }

    pub fn bind(tape: &'t Tape, params: &GenerativeParams, cfg: &ModelConfig) -> Result<Self> {
        let sets: Vec<_> = params.named_sets().into_iter().map(|(_, ps)| BoundSet::new(tape, ps)).collect();
        Self::from_sets(params, &sets, cfg)
    }

    pub fn k(&self) -> usize {
        self.transition_mean.len()
    }

    /// Runs the forward GRU over per-step input batches, starting from `h0`.
    pub fn encode_forward(&self, h0: Var<'t>, xs: &[Var<'t>]) -> Result<Vec<Var<'t>>> {
        let mut h = h0;
        let mut out = Vec::with_capacity(xs.len());
        for &x in xs {
            h = self.forward_rnn.step(h, x)?;
            out.push(h);
        }
        Ok(out)
    }

    /// Row-wise `log Γ`, shape `K × K`.
    pub fn log_transition(&self) -> Result<Var<'t>> {
        self.logits.log_softmax()
    }

    /// Prior mean and clamped log-variance of `z_t` under regime `k`.
    pub fn prior_z(&self, z_prev: Var<'t>, h: Var<'t>, k: usize) -> Result<(Var<'t>, Var<'t>)> {
        check_regime(k, self.k())?;
        let input = Var::concat_cols(&[z_prev, h])?;
        self.prior_z_from_input(input, k)
    }

    pub(crate) fn prior_z_from_input(&self, input: Var<'t>, k: usize) -> Result<(Var<'t>, Var<'t>)> {
        let mu = self.transition_mean[k].forward(input)?;
        let logvar = self.transition_logvar[k].forward(input)?.clamp(LOGVAR_MIN, LOGVAR_MAX);
        Ok((mu, logvar))
    }

    /// Emission mean and clamped log-variance under regime `k`.
    pub fn emission(&self, z: Var<'t>, h: Var<'t>, k: usize) -> Result<(Var<'t>, Var<'t>)> {
        check_regime(k, self.k())?;
        let input = Var::concat_cols(&[z, h])?;
        self.emission_from_input(input, k)
    }

    pub(crate) fn emission_from_input(&self, input: Var<'t>, k: usize) -> Result<(Var<'t>, Var<'t>)> {
        let out = self.emission[k].forward(input)?;
        let d = self.obs_dim;
        Ok((out.slice_cols(0, d)?, out.slice_cols(d, d)?.clamp(LOGVAR_MIN, LOGVAR_MAX)))
    }
}

pub(crate) fn check_regime(k: usize, size: usize) -> Result<()> {
    if k >= size {
        return Err(Error::Index { what: "regime", index: k, size });
    }
    Ok(())
}

fn check_width(op: &'static str, t: &Tensor, want: usize) -> Result<()> {
    if t.cols() != want {
        return Err(Error::dim(op, format!("expected width {want}, got shape {:?}", t.shape())));
    }
    Ok(())
}

/// Forward GRU states `h_1..h_T` for an input sequence `T × U`.
pub fn encode_forward(x_seq: &Tensor, h0: &Tensor, params: &GenerativeParams, cfg: &ModelConfig) -> Result<Tensor> {
    check_width("encode_forward", x_seq, cfg.input_dim)?;
    check_width("encode_forward", h0, cfg.hidden_dim)?;
    if x_seq.rows() == 0 || x_seq.is_empty() {
        return Err(Error::dim("encode_forward", "empty sequence"));
    }
    let tape = Tape::new();
    let g = BoundGenerative::bind(&tape, params, cfg)?;
    let xs: Vec<_> = (0..x_seq.rows()).map(|t| tape.leaf(Tensor::vector(x_seq.row(t).to_vec()))).collect();
    let hs = g.encode_forward(tape.leaf(h0.clone()), &xs)?;
    let mut data = Vec::with_capacity(hs.len() * cfg.hidden_dim);
    for h in hs {
        data.extend_from_slice(h.value().data());
    }
    Tensor::matrix(x_seq.rows(), cfg.hidden_dim, data)
}

/// Row `d_prev` of the transition matrix.
pub fn regime_step_probs(chain: &RegimeChain, d_prev: usize) -> Result<Tensor> {
    check_regime(d_prev, chain.k())?;
    Ok(Tensor::vector(chain.transition_matrix().row(d_prev).to_vec()))
}

/// Prior `(mu, logvar)` of `z_t` given `z_{t-1}`, `h_t` and regime `k`.
pub fn prior_z_params(z_prev: &Tensor, h_t: &Tensor, k: usize, params: &GenerativeParams, cfg: &ModelConfig) -> Result<(Tensor, Tensor)> {
    check_width("prior_z_params", z_prev, cfg.latent_dim)?;
    check_width("prior_z_params", h_t, cfg.hidden_dim)?;
    let tape = Tape::new();
    let g = BoundGenerative::bind(&tape, params, cfg)?;
    let (mu, lv) = g.prior_z(tape.leaf(z_prev.clone()), tape.leaf(h_t.clone()), k)?;
    let out = (mu.value().clone(), lv.value().clone());
    Ok(out)
}

/// Emission distribution of `y_t` given `z_t`, `h_t` and regime `k`.
pub fn emission_dist(z_t: &Tensor, h_t: &Tensor, k: usize, params: &GenerativeParams, cfg: &ModelConfig) -> Result<EmissionDist> {
    check_width("emission_dist", z_t, cfg.latent_dim)?;
    check_width("emission_dist", h_t, cfg.hidden_dim)?;
    let tape = Tape::new();
    let g = BoundGenerative::bind(&tape, params, cfg)?;
    let (mean, logvar) = g.emission(tape.leaf(z_t.clone()), tape.leaf(h_t.clone()), k)?;
    let out = EmissionDist { family: cfg.emission, mean: mean.value().clone(), logvar: logvar.value().clone() };
    Ok(out)
}

/// `log p(y, z, d | x)` for a complete latent path.
///
/// Uses `h_0 = 0`, `z_0 = 0` and scores `d_1` under the initial regime
/// distribution.
pub fn joint_log_prob(
    y_seq: &Tensor,
    x_seq: &Tensor,
    z_path: &Tensor,
    d_path: &[usize],
    params: &GenerativeParams,
    cfg: &ModelConfig,
) -> Result<f64> {
    let t_len = x_seq.rows();
    if y_seq.rows() != t_len || z_path.rows() != t_len || d_path.len() != t_len {
        return Err(Error::dim("joint_log_prob", "sequence lengths differ"));
    }
    check_width("joint_log_prob", y_seq, cfg.obs_dim)?;
    check_width("joint_log_prob", z_path, cfg.latent_dim)?;
    let k = params.k();
    for &d in d_path {
        check_regime(d, k)?;
    }
    let hs = encode_forward(x_seq, &Tensor::zeros(&[cfg.hidden_dim]), params, cfg)?;
    let gamma = params.regime_chain.transition_matrix();
    let mut z_prev = Tensor::zeros(&[cfg.latent_dim]);
    let mut total = 0.0;
    for t in 0..t_len {
        let h = Tensor::vector(hs.row(t).to_vec());
        let z = Tensor::vector(z_path.row(t).to_vec());
        let y = Tensor::vector(y_seq.row(t).to_vec());
        let d = d_path[t];
        let (mu, lv) = prior_z_params(&z_prev, &h, d, params, cfg)?;
        total += emission_dist(&z, &h, d, params, cfg)?.log_prob(&y)?;
        total += gaussian_log_pdf(&z, &mu, &lv)?;
        total += if t == 0 { params.regime_chain.initial[d].ln() } else { gamma.get2(d_path[t - 1], d).ln() };
        z_prev = z;
    }
    Ok(total)
}

/// How inputs are produced while generating.
#[derive(Clone, Debug)]
pub enum InputMode {
    /// Inputs supplied up front, `T × U`.
    OpenLoop(Tensor),
    /// `x_t = y_{t-1}` with `y_0 = 0`; requires `U = D`.
    Autoregressive { steps: usize },
}

/// Ancestral draw `(y, z, d)` from the generative model.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedSeries {
    pub y: Tensor,
    pub x: Tensor,
    pub z: Tensor,
    pub d: Vec<usize>,
}

/// Ancestral sampling from the model, reproducible for a fixed seed.
pub fn generate(params: &GenerativeParams, cfg: &ModelConfig, mode: &InputMode, seed: u64) -> Result<GeneratedSeries> {
    let mut rng = seeded(seed);
    let steps = match mode {
        InputMode::OpenLoop(x) => {
            check_width("generate", x, cfg.input_dim)?;
            x.rows()
        }
        InputMode::Autoregressive { steps } => {
            if cfg.input_dim != cfg.obs_dim {
                return Err(Error::Config("autoregressive generation needs input_dim == obs_dim".into()));
            }
            *steps
        }
    };
    let tape = Tape::new();
    let g = BoundGenerative::bind(&tape, params, cfg)?;
    let gamma = params.regime_chain.transition_matrix();
    let mut h = tape.leaf(Tensor::zeros(&[cfg.hidden_dim]));
    let mut z = Tensor::zeros(&[cfg.latent_dim]);
    let mut y_prev = vec![0.0; cfg.obs_dim];
    let (mut ys, mut xs, mut zs, mut ds) = (Vec::new(), Vec::new(), Vec::new(), Vec::with_capacity(steps));
    for t in 0..steps {
        let x = match mode {
            InputMode::OpenLoop(x) => x.row(t).to_vec(),
            InputMode::Autoregressive { .. } => y_prev.clone(),
        };
        h = g.forward_rnn.step(h, tape.leaf(Tensor::vector(x.clone())))?;
        let probs: Vec<f64> = if t == 0 { params.regime_chain.initial.clone() } else { gamma.row(ds[t - 1]).to_vec() };
        let d = sample_categorical(&probs, &mut rng);
        let (mu, lv) = g.prior_z(tape.leaf(z.clone()), h, d)?;
        let z_new: Vec<f64> = mu
            .value()
            .data()
            .iter()
            .zip(lv.value().data())
            .map(|(&m, &l)| m + rng.sample::<f64, _>(StandardNormal) * (0.5 * l).exp())
            .collect();
        z = Tensor::vector(z_new);
        let (mean, logvar) = g.emission(tape.leaf(z.clone()), h, d)?;
        let dist = EmissionDist { family: cfg.emission, mean: mean.value().clone(), logvar: logvar.value().clone() };
        let y = dist.sample(&mut rng).into_data();
        xs.extend_from_slice(&x);
        ys.extend_from_slice(&y);
        zs.extend_from_slice(z.data());
        ds.push(d);
        y_prev = y;
    }
    Ok(GeneratedSeries {
        y: Tensor::matrix(steps, cfg.obs_dim, ys)?,
        x: Tensor::matrix(steps, cfg.input_dim, xs)?,
        z: Tensor::matrix(steps, cfg.latent_dim, zs)?,
        d: ds,
    })
}

/// Inverse-CDF draw from a probability vector.
pub(crate) fn sample_categorical(probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}
