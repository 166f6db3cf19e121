//! Structured inference network and the per-step marginalized Monte-Carlo
//! ELBO.
//!
//! The posterior factorizes as `∏_t q(z_t | z_{t-1}, d_t, A_t) q(d_t | d_{t-1}, A_t)`
//! where `A_t` comes from a backward GRU over `[y_t, h_t]`. One ancestral
//! sample fixes `z^(s)` and `d^(s)`; at every step the ELBO terms are summed
//! over the current regime under its posterior probabilities. Each candidate
//! regime `k` scores its own reparameterized draw `z_t^k` (shared `eps_t`),
//! and the path continues from the draw of the sampled regime.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::config::{EmissionFamily, ModelConfig, LOGVAR_MAX, LOGVAR_MIN};
use crate::diffcore::{BoundGru, BoundMlp2, BoundSet, GruShape, Mlp2Shape, ParamSet, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::generative::{check_regime, sample_categorical, BoundGenerative, GenerativeParams};
use crate::model::{BoundDs3m, Ds3m, Sequence};
use crate::rng::{derive_seed, seeded, Rng64};

/// Parameters of the inference network.
#[derive(Clone, Debug, PartialEq)]
pub struct InferenceParams {
    /// Backward GRU over `[y_t, h_t]`; its width is the forward width `H`.
    pub backward_rnn: ParamSet,
    pub posterior_mean: Vec<ParamSet>,
    pub posterior_logvar: Vec<ParamSet>,
    /// `W^(k)`, one `K × H` matrix (entry `w`) per previous regime.
    pub categorical_weights: Vec<ParamSet>,
}

impl InferenceParams {
    pub fn init(cfg: &ModelConfig, rng: &mut impl Rng) -> Self {
        let (k, z, h) = (cfg.regimes, cfg.latent_dim, cfg.hidden_dim);
        let backward_rnn = GruShape { input: cfg.obs_dim + h, hidden: h }.init(rng);
        let post = Mlp2Shape::square_hidden(z + h, z);
        let posterior_mean = (0..k).map(|_| post.init(rng)).collect();
        let posterior_logvar = (0..k).map(|_| post.init(rng)).collect();
        let categorical_weights = (0..k)
            .map(|_| {
                let mut ps = ParamSet::new();
                ps.insert("w", crate::diffcore::params::uniform_init(rng, &[k, h], h)).unwrap();
                ps
            })
            .collect();
        InferenceParams { backward_rnn, posterior_mean, posterior_logvar, categorical_weights }
    }

    pub fn k(&self) -> usize {
        self.posterior_mean.len()
    }

    pub(crate) fn named_sets(&self) -> Vec<(String, &ParamSet)> {
        let mut out = vec![("inf.backward_rnn".to_string(), &self.backward_rnn)];
        for (name, list) in [("posterior_mean", &self.posterior_mean), ("posterior_logvar", &self.posterior_logvar), ("categorical", &self.categorical_weights)] {
            out.extend(list.iter().enumerate().map(|(k, ps)| (format!("inf.{name}.{k}"), ps)));
        }
        out
    }

    pub(crate) fn named_sets_mut(&mut self) -> Vec<(String, &mut ParamSet)> {
        let mut out = vec![("inf.backward_rnn".to_string(), &mut self.backward_rnn)];
        for (name, list) in [("posterior_mean", &mut self.posterior_mean), ("posterior_logvar", &mut self.posterior_logvar), ("categorical", &mut self.categorical_weights)] {
            out.extend(list.iter_mut().enumerate().map(|(k, ps)| (format!("inf.{name}.{k}"), ps)));
        }
        out
    }
}

pub struct BoundInference<'t> {
    pub(crate) backward_rnn: BoundGru<'t>,
    pub(crate) posterior_mean: Vec<BoundMlp2<'t>>,
    pub(crate) posterior_logvar: Vec<BoundMlp2<'t>>,
    pub(crate) categorical: Vec<Var<'t>>,
}

impl<'t> BoundInference<'t> {
    pub(crate) fn from_sets(sets: &[BoundSet<'t>], k: usize) -> Result<Self> {
        if sets.len() != 1 + 3 * k {
            return Err(Error::Config("inference parameter sets incomplete".into()));
        }
        let mlps = |off: usize| -> Result<Vec<BoundMlp2<'t>>> { (0..k).map(|i| BoundMlp2::from_set(&sets[off + i])).collect() };
        Ok(BoundInference {
            backward_rnn: BoundGru::from_set(&sets[0])?,
            posterior_mean: mlps(1)?,
            posterior_logvar: mlps(1 + k)?,
            categorical: (0..k).map(|i| sets[1 + 2 * k + i].get("w")).collect::<Result<_>>()?,
        })
    }

    pub fn bind(tape: &'t Tape, params: &InferenceParams) -> Result<Self> {
        let sets: Vec<_> = params.named_sets().into_iter().map(|(_, ps)| BoundSet::new(tape, ps)).collect();
        Self::from_sets(&sets, params.k())
    }

    pub fn k(&self) -> usize {
        self.posterior_mean.len()
    }

    /// `A_1..A_T` from the backward recursion with `A_{T+1} = 0`.
    pub fn encode_backward(&self, a_end: Var<'t>, ys: &[Var<'t>], hs: &[Var<'t>]) -> Result<Vec<Var<'t>>> {
        if ys.len() != hs.len() {
            return Err(Error::dim("encode_backward", format!("{} observations vs {} hidden states", ys.len(), hs.len())));
        }
        let mut a = a_end;
        let mut out = vec![a_end; ys.len()];
        for t in (0..ys.len()).rev() {
            a = self.backward_rnn.step(a, Var::concat_cols(&[ys[t], hs[t]])?)?;
            out[t] = a;
        }
        Ok(out)
    }

    /// Unnormalized `W^(k) A_t` for every previous regime `k`.
    pub fn categorical_logits(&self, a: Var<'t>) -> Result<Vec<Var<'t>>> {
        self.categorical.iter().map(|&w| a.affine(w, None)).collect()
    }

    pub fn posterior_z(&self, z_prev: Var<'t>, a: Var<'t>, k: usize) -> Result<(Var<'t>, Var<'t>)> {
        check_regime(k, self.k())?;
        self.posterior_z_from_input(Var::concat_cols(&[z_prev, a])?, k)
    }

    pub(crate) fn posterior_z_from_input(&self, input: Var<'t>, k: usize) -> Result<(Var<'t>, Var<'t>)> {
        let mu = self.posterior_mean[k].forward(input)?;
        let logvar = self.posterior_logvar[k].forward(input)?.clamp(LOGVAR_MIN, LOGVAR_MAX);
        Ok((mu, logvar))
    }
}

/// One ancestral posterior sample and the noise that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentPath {
    /// Draw of the auxiliary initial regime `d_0` from the initial distribution.
    pub d_initial: usize,
    /// `T × Z`, `z_t = mu_t + eps_t ⊙ exp(logvar_t / 2)` under the sampled regime.
    pub z_samples: Tensor,
    pub d_samples: Vec<usize>,
    /// `T × Z` standard-normal draws.
    pub eps_noise: Tensor,
    /// `T × K`, row `t` is `q(d_t | d_{t-1}^(s), A_t)`.
    pub q_d_probs: Tensor,
}

impl LatentPath {
    pub fn len(&self) -> usize {
        self.d_samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d_samples.is_empty()
    }
}

/// The three per-sequence summands of the ELBO.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElboBreakdown {
    pub reconstruction: f64,
    pub kl_z: f64,
    pub kl_d: f64,
}

impl ElboBreakdown {
    /// `reconstruction − beta·(kl_z + kl_d)`.
    pub fn total(&self, beta: f64) -> f64 {
        self.reconstruction - beta * (self.kl_z + self.kl_d)
    }
}

/// Where the reparameterization noise and regime draws come from.
pub enum Noise<'a> {
    Sample(&'a mut Rng64),
    /// Replay recorded paths, one per batch row.
    Fixed(&'a [LatentPath]),
}

/// Tape values produced by one pass of the inference network over a batch.
pub struct Sweep<'t> {
    /// Each `R × 1`.
    pub reconstruction: Var<'t>,
    pub kl_z: Var<'t>,
    pub kl_d: Var<'t>,
    pub paths: Vec<LatentPath>,
    /// Forward GRU state after the last step, `R × H`.
    pub h_last: Var<'t>,
    /// `z_T` per row, `R × Z`.
    pub z_last: Var<'t>,
}

impl<'t> Sweep<'t> {
    /// Per-row ELBO terms.
    pub fn breakdowns(&self) -> Vec<ElboBreakdown> {
        let (r, z, d) = (self.reconstruction.value(), self.kl_z.value(), self.kl_d.value());
        (0..r.len()).map(|i| ElboBreakdown { reconstruction: r.data()[i], kl_z: z.data()[i], kl_d: d.data()[i] }).collect()
    }

    /// Mean over rows of `−(reconstruction − beta·(kl_z + kl_d))`.
    pub fn loss(&self, beta: f64) -> Result<Var<'t>> {
        let rows = self.reconstruction.value().len() as f64;
        let kl = self.kl_z.add(self.kl_d)?.scale(beta);
        Ok(kl.sub(self.reconstruction)?.sum().scale(1.0 / rows))
    }
}

fn stack_rows<'t>(tape: &'t Tape, rows: &[&[f64]]) -> Var<'t> {
    let cols = rows[0].len();
    let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
    tape.leaf(Tensor::matrix(rows.len(), cols, data).expect("equal widths"))
}

/// Emission-space view of an observation row: `y` or `ln y`, plus the
/// log-Jacobian that turns the Gaussian density into the observed density.
fn emission_space(family: EmissionFamily, y: &[f64]) -> Result<(Vec<f64>, f64)> {
    match family {
        EmissionFamily::Gaussian => Ok((y.to_vec(), 0.0)),
        EmissionFamily::Lognormal => {
            if y.iter().any(|&v| v <= 0.0) {
                return Err(Error::Config("lognormal emission needs strictly positive observations".into()));
            }
            let ln: Vec<f64> = y.iter().map(|v| v.ln()).collect();
            let jac = -ln.iter().sum::<f64>();
            Ok((ln, jac))
        }
    }
}

/// Runs the inference network and the ELBO over a batch of equal-length
/// sequences, one row per sequence.
pub fn sweep<'t>(tape: &'t Tape, bm: &BoundDs3m<'t>, cfg: &ModelConfig, batch: &[&Sequence], noise: Noise<'_>) -> Result<Sweep<'t>> {
    let rows = batch.len();
    if rows == 0 {
        return Err(Error::Data("empty batch".into()));
    }
    let t_len = batch[0].len();
    if t_len == 0 {
        return Err(Error::dim("sweep", "empty sequence"));
    }
    for s in batch {
        if s.len() != t_len {
            return Err(Error::dim("sweep", "sequences in a batch must share a length"));
        }
        if s.x.cols() != cfg.input_dim || s.y.cols() != cfg.obs_dim {
            return Err(Error::dim("sweep", format!("sequence widths {:?}/{:?} vs model", s.x.shape(), s.y.shape())));
        }
    }
    if let Noise::Fixed(paths) = &noise {
        if paths.len() != rows || paths.iter().any(|p| p.len() != t_len) {
            return Err(Error::dim("elbo", "latent path length does not match the sequence"));
        }
    }
    let (k, zd, hd) = (cfg.regimes, cfg.latent_dim, cfg.hidden_dim);
    let gen: &BoundGenerative<'t> = &bm.gen;
    let inf = &bm.inf;

    // Per-step inputs and observations in emission space.
    let mut xs = Vec::with_capacity(t_len);
    let mut ys = Vec::with_capacity(t_len);
    let mut jac = Vec::with_capacity(t_len);
    for t in 0..t_len {
        xs.push(stack_rows(tape, &batch.iter().map(|s| s.x.row(t)).collect::<Vec<_>>()));
        let mut y_rows = Vec::with_capacity(rows);
        let mut j_rows = Vec::with_capacity(rows);
        for s in batch {
            let (y, j) = emission_space(cfg.emission, s.y.row(t))?;
            y_rows.push(y);
            j_rows.push(j);
        }
        ys.push(stack_rows(tape, &y_rows.iter().map(Vec::as_slice).collect::<Vec<_>>()));
        jac.push(j_rows);
    }

    let hs = gen.encode_forward(tape.leaf(Tensor::zeros(&[rows, hd])), &xs)?;
    let a_seq = inf.encode_backward(tape.leaf(Tensor::zeros(&[rows, hd])), &ys, &hs)?;
    let log_gamma = gen.log_transition()?;
    let log_gamma_rows: Vec<Var<'t>> = (0..k).map(|j| log_gamma.gather_rows(&[j]).map(Var::neg)).collect::<Result<_>>()?;
    let neg_log_initial = tape.leaf(gen.log_initial.map(|v| -v));

    let (mut rng, fixed) = match noise {
        Noise::Sample(r) => (Some(r), None),
        Noise::Fixed(p) => (None, Some(p)),
    };

    let mut d_prev: Vec<usize> = match (fixed, rng.as_deref_mut()) {
        (Some(p), _) => p.iter().map(|p| p.d_initial).collect(),
        (None, Some(r)) => {
            let init: Vec<f64> = gen.log_initial.data().iter().map(|v| v.exp()).collect();
            (0..rows).map(|_| sample_categorical(&init, r)).collect()
        }
        (None, None) => unreachable!(),
    };
    for &d in &d_prev {
        check_regime(d, k)?;
    }
    let d_initial = d_prev.clone();

    let mut z_prev = tape.leaf(Tensor::zeros(&[rows, zd]));
    let mut q_prev: Option<Var<'t>> = None;
    let mut recon_terms = Vec::with_capacity(t_len);
    let mut kl_z_terms = Vec::with_capacity(t_len);
    let mut kl_d_terms = Vec::with_capacity(t_len);
    let mut rec_z = vec![Vec::with_capacity(t_len * zd); rows];
    let mut rec_eps = vec![Vec::with_capacity(t_len * zd); rows];
    let mut rec_q = vec![Vec::with_capacity(t_len * k); rows];
    let mut rec_d = vec![Vec::with_capacity(t_len); rows];

    for t in 0..t_len {
        let (h, a) = (hs[t], a_seq[t]);

        // q(d_t | d_{t-1}, A_t) for every candidate d_{t-1}, then the realized row.
        let cat_logits = inf.categorical_logits(a)?;
        let realized = Var::select_rows(&cat_logits, &d_prev)?;
        let q_t = realized.softmax()?;

        let d_t: Vec<usize> = match (fixed, rng.as_deref_mut()) {
            (Some(p), _) => p.iter().map(|p| p.d_samples[t]).collect(),
            (None, Some(r)) => {
                let q = q_t.value();
                (0..rows).map(|i| sample_categorical(q.row(i), r)).collect()
            }
            (None, None) => unreachable!(),
        };
        for &d in &d_t {
            check_regime(d, k)?;
        }

        let post_in = Var::concat_cols(&[z_prev, a])?;
        let prior_in = Var::concat_cols(&[z_prev, h])?;
        let mut post = Vec::with_capacity(k);
        let mut prior = Vec::with_capacity(k);
        for j in 0..k {
            post.push(inf.posterior_z_from_input(post_in, j)?);
            prior.push(gen.prior_z_from_input(prior_in, j)?);
        }

        // Reparameterized z_t under the sampled regime.
        let eps = match (fixed, rng.as_deref_mut()) {
            (Some(p), _) => stack_rows(tape, &p.iter().map(|p| p.eps_noise.row(t)).collect::<Vec<_>>()),
            (None, Some(r)) => {
                let data: Vec<f64> = (0..rows * zd).map(|_| r.sample(StandardNormal)).collect();
                tape.leaf(Tensor::matrix(rows, zd, data)?)
            }
            (None, None) => unreachable!(),
        };
        let z_k: Vec<Var<'t>> = post.iter().map(|(mu, lv)| mu.add(eps.mul(lv.scale(0.5).exp())?)).collect::<Result<_>>()?;
        let z_t = Var::select_rows(&z_k, &d_t)?;

        // Σ_k q(k) log p(y_t | z_t^k, h_t, k) and Σ_k q(k) KL(q_z^k || p_z^k).
        let mut recon_t: Option<Var<'t>> = None;
        let mut kl_z_t: Option<Var<'t>> = None;
        for j in 0..k {
            let w = q_t.slice_cols(j, 1)?;
            let em_in = Var::concat_cols(&[z_k[j], h])?;
            let (mean, logvar) = gen.emission_from_input(em_in, j)?;
            let ll = Var::gaussian_log_pdf(ys[t], mean, logvar)?.mul_col(w)?;
            recon_t = Some(match recon_t {
                Some(acc) => acc.add(ll)?,
                None => ll,
            });
            let kl = Var::gaussian_kl(post[j].0, post[j].1, prior[j].0, prior[j].1)?.mul_col(w)?;
            kl_z_t = Some(match kl_z_t {
                Some(acc) => acc.add(kl)?,
                None => kl,
            });
        }
        let mut recon_t = recon_t.expect("K >= 1");
        if cfg.emission == EmissionFamily::Lognormal {
            recon_t = recon_t.add(tape.leaf(Tensor::matrix(rows, 1, jac[t].clone())?))?;
        }

        // Regime divergence: against the initial distribution at t = 1, else
        // Σ_j q(d_{t-1} = j) KL(q(· | j, A_t) || Γ_j).
        let kl_d_t = match q_prev {
            None => {
                let log_q = realized.log_softmax()?;
                q_t.mul(log_q.add_row(neg_log_initial)?)?.row_sum()
            }
            Some(q_prev) => {
                let mut acc: Option<Var<'t>> = None;
                for j in 0..k {
                    let log_q = cat_logits[j].log_softmax()?;
                    let q = cat_logits[j].softmax()?;
                    let kl = q.mul(log_q.add_row(log_gamma_rows[j])?)?.row_sum().mul_col(q_prev.slice_cols(j, 1)?)?;
                    acc = Some(match acc {
                        Some(a) => a.add(kl)?,
                        None => kl,
                    });
                }
                acc.expect("K >= 1")
            }
        };

        {
            let (zv, ev, qv) = (z_t.value(), eps.value(), q_t.value());
            for i in 0..rows {
                rec_z[i].extend_from_slice(zv.row(i));
                rec_eps[i].extend_from_slice(ev.row(i));
                rec_q[i].extend_from_slice(qv.row(i));
                rec_d[i].push(d_t[i]);
            }
        }

        recon_terms.push(recon_t);
        kl_z_terms.push(kl_z_t.expect("K >= 1"));
        kl_d_terms.push(kl_d_t);
        q_prev = Some(q_t);
        d_prev = d_t;
        z_prev = z_t;
    }

    let total = |terms: Vec<Var<'t>>| -> Result<Var<'t>> { terms.into_iter().try_fold(None::<Var<'t>>, |acc, v| Ok(Some(match acc { Some(a) => a.add(v)?, None => v }))).map(|v| v.expect("T >= 1")) };

    let mut paths = Vec::with_capacity(rows);
    for i in 0..rows {
        paths.push(LatentPath {
            d_initial: d_initial[i],
            z_samples: Tensor::matrix(t_len, zd, std::mem::take(&mut rec_z[i]))?,
            d_samples: std::mem::take(&mut rec_d[i]),
            eps_noise: Tensor::matrix(t_len, zd, std::mem::take(&mut rec_eps[i]))?,
            q_d_probs: Tensor::matrix(t_len, k, std::mem::take(&mut rec_q[i]))?,
        });
    }

    Ok(Sweep {
        reconstruction: total(recon_terms)?,
        kl_z: total(kl_z_terms)?,
        kl_d: total(kl_d_terms)?,
        paths,
        h_last: *hs.last().expect("T >= 1"),
        z_last: z_prev,
    })
}

fn single(y_seq: &Tensor, x_seq: &Tensor) -> Result<Sequence> {
    if y_seq.rows() != x_seq.rows() {
        return Err(Error::dim("inference", format!("y has {} steps, x has {}", y_seq.rows(), x_seq.rows())));
    }
    Sequence::new(x_seq.clone(), y_seq.clone())
}

fn model_view(gen: &GenerativeParams, inf: &InferenceParams, cfg: &ModelConfig) -> Ds3m {
    Ds3m { config: cfg.clone(), gen: gen.clone(), inf: inf.clone() }
}

/// Backward states `A_1..A_T` (`T × H`) for one sequence.
pub fn encode_backward(y_seq: &Tensor, h_seq: &Tensor, params: &InferenceParams, cfg: &ModelConfig) -> Result<Tensor> {
    if y_seq.rows() != h_seq.rows() {
        return Err(Error::dim("encode_backward", format!("{} observations vs {} hidden states", y_seq.rows(), h_seq.rows())));
    }
    if y_seq.cols() != cfg.obs_dim || h_seq.cols() != cfg.hidden_dim {
        return Err(Error::dim("encode_backward", format!("y {:?}, h {:?}", y_seq.shape(), h_seq.shape())));
    }
    let tape = Tape::new();
    let inf = BoundInference::bind(&tape, params)?;
    let row = |m: &Tensor, t: usize| tape.leaf(Tensor::vector(m.row(t).to_vec()));
    let ys: Vec<_> = (0..y_seq.rows()).map(|t| row(y_seq, t)).collect();
    let hs: Vec<_> = (0..h_seq.rows()).map(|t| row(h_seq, t)).collect();
    let a = inf.encode_backward(tape.leaf(Tensor::zeros(&[cfg.hidden_dim])), &ys, &hs)?;
    let mut data = Vec::with_capacity(a.len() * cfg.hidden_dim);
    for v in a {
        data.extend_from_slice(v.value().data());
    }
    Tensor::matrix(y_seq.rows(), cfg.hidden_dim, data)
}

/// `softmax(W^(d_prev) A_t)`.
pub fn posterior_d_probs(a_t: &Tensor, d_prev: usize, params: &InferenceParams) -> Result<Tensor> {
    check_regime(d_prev, params.k())?;
    let tape = Tape::new();
    let w = tape.leaf(params.categorical_weights[d_prev].get("w")?.clone());
    let p = tape.leaf(a_t.clone()).affine(w, None)?.softmax()?;
    let out = p.value().clone();
    Ok(out)
}

/// Posterior `(mu, logvar)` of `z_t` given `z_{t-1}`, `A_t` and regime `k`.
pub fn posterior_z_params(z_prev: &Tensor, a_t: &Tensor, k: usize, params: &InferenceParams, cfg: &ModelConfig) -> Result<(Tensor, Tensor)> {
    if z_prev.cols() != cfg.latent_dim || a_t.cols() != cfg.hidden_dim {
        return Err(Error::dim("posterior_z_params", format!("z {:?}, A {:?}", z_prev.shape(), a_t.shape())));
    }
    let tape = Tape::new();
    let inf = BoundInference::bind(&tape, params)?;
    let (mu, lv) = inf.posterior_z(tape.leaf(z_prev.clone()), tape.leaf(a_t.clone()), k)?;
    let out = (mu.value().clone(), lv.value().clone());
    Ok(out)
}

/// One ancestral posterior sample, reproducible for a fixed seed.
pub fn ancestral_sample(y_seq: &Tensor, x_seq: &Tensor, gen: &GenerativeParams, inf: &InferenceParams, cfg: &ModelConfig, seed: u64) -> Result<LatentPath> {
    let seq = single(y_seq, x_seq)?;
    let model = model_view(gen, inf, cfg);
    let tape = Tape::new();
    let bm = BoundDs3m::bind(&tape, &model)?;
    let mut rng = seeded(seed);
    let mut sw = sweep(&tape, &bm, cfg, &[&seq], Noise::Sample(&mut rng))?;
    Ok(sw.paths.remove(0))
}

/// ELBO terms for one sequence along a recorded path.
pub fn elbo(y_seq: &Tensor, x_seq: &Tensor, path: &LatentPath, gen: &GenerativeParams, inf: &InferenceParams, cfg: &ModelConfig) -> Result<ElboBreakdown> {
    let seq = single(y_seq, x_seq)?;
    if path.len() != seq.len() {
        return Err(Error::dim("elbo", format!("path has {} steps, sequence has {}", path.len(), seq.len())));
    }
    let model = model_view(gen, inf, cfg);
    let tape = Tape::new();
    let bm = BoundDs3m::bind(&tape, &model)?;
    let sw = sweep(&tape, &bm, cfg, &[&seq], Noise::Fixed(std::slice::from_ref(path)))?;
    Ok(sw.breakdowns()[0])
}

/// Records the minibatch loss `mean(−ELBO_β)` over `samples` draws per
/// sequence on `tape`, returning the loss and the bound model for gradients.
pub fn minibatch_loss<'t>(
    tape: &'t Tape,
    model: &Ds3m,
    batch: &[&Sequence],
    beta: f64,
    samples: usize,
    rng: &mut Rng64,
) -> Result<(Var<'t>, BoundDs3m<'t>, Vec<ElboBreakdown>)> {
    if batch.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    if samples == 0 {
        return Err(Error::Config("samples per sequence must be at least 1".into()));
    }
    let bm = BoundDs3m::bind(tape, model)?;
    let rows: Vec<&Sequence> = batch.iter().flat_map(|s| std::iter::repeat(*s).take(samples)).collect();
    // Group by length so every sweep is rectangular.
    let mut lengths: Vec<usize> = rows.iter().map(|s| s.len()).collect();
    lengths.sort_unstable();
    lengths.dedup();
    let mut loss: Option<Var<'t>> = None;
    let mut parts = Vec::new();
    for len in lengths {
        let group: Vec<&Sequence> = rows.iter().copied().filter(|s| s.len() == len).collect();
        let sw = sweep(tape, &bm, &model.config, &group, Noise::Sample(rng))?;
        let l = sw.loss(beta)?.scale(group.len() as f64 / rows.len() as f64);
        parts.extend(sw.breakdowns());
        loss = Some(match loss {
            Some(acc) => acc.add(l)?,
            None => l,
        });
    }
    Ok((loss.expect("nonempty"), bm, parts))
}

/// Mean negative ELBO over a batch, `samples` ancestral draws per sequence.
pub fn elbo_minibatch(model: &Ds3m, batch: &[&Sequence], beta: f64, samples: usize, seed: u64) -> Result<f64> {
    let tape = Tape::new();
    let mut rng = seeded(derive_seed(seed, 0x454c_424f));
    let (loss, _, _) = minibatch_loss(&tape, model, batch, beta, samples, &mut rng)?;
    let v = loss.value().item();
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generative::{emission_dist, encode_forward, generate, InputMode};
    use approx::assert_abs_diff_eq;

    fn tiny_cfg(k: usize) -> ModelConfig {
        ModelConfig { regimes: k, obs_dim: 1, input_dim: 1, hidden_dim: 2, latent_dim: 1, emission: EmissionFamily::Gaussian }
    }

    fn data(model: &Ds3m, t: usize, seed: u64) -> Sequence {
        let g = generate(&model.gen, &model.config, &InputMode::Autoregressive { steps: t }, seed).unwrap();
        Sequence::new(g.x, g.y).unwrap()
    }

    #[test]
    fn zero_backward_weights_give_zero_states() {
        let cfg = tiny_cfg(2);
        let mut m = Ds3m::init(cfg.clone(), 1).unwrap();
        m.inf.backward_rnn.zero_all();
        let s = data(&m, 4, 2);
        let h = encode_forward(&s.x, &Tensor::zeros(&[2]), &m.gen, &cfg).unwrap();
        let a = encode_backward(&s.y, &h, &m.inf, &cfg).unwrap();
        assert!(a.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_states_ignore_the_past() {
        let cfg = tiny_cfg(2);
        let m = Ds3m::init(cfg.clone(), 3).unwrap();
        let s = data(&m, 5, 4);
        let h = encode_forward(&s.x, &Tensor::zeros(&[2]), &m.gen, &cfg).unwrap();
        let a = encode_backward(&s.y, &h, &m.inf, &cfg).unwrap();
        let mut y2 = s.y.clone();
        y2.data_mut()[0] += 3.0;
        let a2 = encode_backward(&y2, &h, &m.inf, &cfg).unwrap();
        assert_ne!(a.row(0), a2.row(0));
        for t in 1..5 {
            assert_eq!(a.row(t), a2.row(t));
        }
    }

    #[test]
    fn posterior_d_probs_cases() {
        let cfg = tiny_cfg(3);
        let mut m = Ds3m::init(cfg, 5).unwrap();
        let a = Tensor::vector(vec![0.4, -1.1]);
        let p = posterior_d_probs(&Tensor::vector(vec![0.0, 0.0]), 1, &m.inf).unwrap();
        for v in p.data() {
            assert_abs_diff_eq!(*v, 1.0 / 3.0, epsilon = 1e-15);
        }
        let w = m.inf.categorical_weights[2].get("w").unwrap().clone();
        let logits: Vec<f64> = (0..3).map(|r| w.row(r)[0] * 0.4 + w.row(r)[1] * -1.1).collect();
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        let p = posterior_d_probs(&a, 2, &m.inf).unwrap();
        for r in 0..3 {
            assert_abs_diff_eq!(p.data()[r], logits[r].exp() / z, epsilon = 1e-14);
        }
        m.inf.categorical_weights[0].zero_all();
        let p = posterior_d_probs(&a, 0, &m.inf).unwrap();
        assert_abs_diff_eq!(p.data()[0], 1.0 / 3.0, epsilon = 1e-15);
        assert!(posterior_d_probs(&a, 3, &m.inf).is_err());
    }

    #[test]
    fn ancestral_sample_is_deterministic_and_reparameterized() {
        let cfg = tiny_cfg(2);
        let m = Ds3m::init(cfg.clone(), 6).unwrap();
        let s = data(&m, 6, 7);
        let p1 = ancestral_sample(&s.y, &s.x, &m.gen, &m.inf, &cfg, 99).unwrap();
        let p2 = ancestral_sample(&s.y, &s.x, &m.gen, &m.inf, &cfg, 99).unwrap();
        assert_eq!(p1, p2);
        // z_t = mu + eps ⊙ std for the posterior under the sampled regime
        let h = encode_forward(&s.x, &Tensor::zeros(&[2]), &m.gen, &cfg).unwrap();
        let a = encode_backward(&s.y, &h, &m.inf, &cfg).unwrap();
        let mut z_prev = Tensor::zeros(&[1]);
        for t in 0..6 {
            let (mu, lv) = posterior_z_params(&z_prev, &Tensor::vector(a.row(t).to_vec()), p1.d_samples[t], &m.inf, &cfg).unwrap();
            let want = mu.data()[0] + p1.eps_noise.row(t)[0] * (0.5 * lv.data()[0]).exp();
            assert_eq!(p1.z_samples.row(t)[0], want);
            assert_abs_diff_eq!(p1.q_d_probs.row(t).iter().sum::<f64>(), 1.0, epsilon = 1e-12);
            z_prev = Tensor::vector(p1.z_samples.row(t).to_vec());
        }
    }

    #[test]
    fn k_one_has_no_regime_divergence() {
        let cfg = tiny_cfg(1);
        let m = Ds3m::init(cfg.clone(), 8).unwrap();
        let s = data(&m, 5, 9);
        let path = ancestral_sample(&s.y, &s.x, &m.gen, &m.inf, &cfg, 1).unwrap();
        let e = elbo(&s.y, &s.x, &path, &m.gen, &m.inf, &cfg).unwrap();
        assert_eq!(e.kl_d, 0.0);
        assert!(path.q_d_probs.data().iter().all(|&q| q == 1.0));
        assert!(e.kl_z >= 0.0);
    }

    #[test]
    fn matched_posterior_has_zero_divergences() {
        // Posterior nets copy the prior nets, prior ignores h (zero h-weights),
        // categorical weights zero and Γ uniform: both KL terms vanish.
        let cfg = tiny_cfg(2);
        let mut m = Ds3m::init(cfg.clone(), 10).unwrap();
        for k in 0..2 {
            for (src, dst) in [(&m.gen.transition_mean[k].clone(), &mut m.inf.posterior_mean[k]), (&m.gen.transition_logvar[k].clone(), &mut m.inf.posterior_logvar[k])] {
                *dst = src.clone();
                // first-layer columns 1.. read h (generative) or A (posterior); zero them in both
                let w = dst.get_mut("l1.w").unwrap();
                for r in 0..w.rows() {
                    for c in 1..w.cols() {
                        w.row_mut(r)[c] = 0.0;
                    }
                }
            }
            m.gen.transition_mean[k] = m.inf.posterior_mean[k].clone();
            m.gen.transition_logvar[k] = m.inf.posterior_logvar[k].clone();
            m.inf.categorical_weights[k].zero_all();
        }
        m.gen.regime_chain.logits_mut().data_mut().fill(0.0);
        let s = data(&m, 5, 11);
        let path = ancestral_sample(&s.y, &s.x, &m.gen, &m.inf, &cfg, 2).unwrap();
        let e = elbo(&s.y, &s.x, &path, &m.gen, &m.inf, &cfg).unwrap();
        assert_abs_diff_eq!(e.kl_z, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e.kl_d, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn reconstruction_uses_each_regimes_own_draw() {
        let cfg = tiny_cfg(2);
        let m = Ds3m::init(cfg.clone(), 14).unwrap();
        let s = data(&m, 4, 15);
        let path = ancestral_sample(&s.y, &s.x, &m.gen, &m.inf, &cfg, 3).unwrap();
        let e = elbo(&s.y, &s.x, &path, &m.gen, &m.inf, &cfg).unwrap();

        let h = encode_forward(&s.x, &Tensor::zeros(&[2]), &m.gen, &cfg).unwrap();
        let a = encode_backward(&s.y, &h, &m.inf, &cfg).unwrap();
        let mut z_prev = Tensor::zeros(&[1]);
        let mut expected = 0.0;
        for t in 0..4 {
            let (h_t, a_t) = (Tensor::vector(h.row(t).to_vec()), Tensor::vector(a.row(t).to_vec()));
            let y_t = Tensor::vector(s.y.row(t).to_vec());
            for k in 0..2 {
                let (mu, lv) = posterior_z_params(&z_prev, &a_t, k, &m.inf, &cfg).unwrap();
                let z_k = Tensor::vector(vec![mu.data()[0] + path.eps_noise.row(t)[0] * (0.5 * lv.data()[0]).exp()]);
                let ll = emission_dist(&z_k, &h_t, k, &m.gen, &cfg).unwrap().log_prob(&y_t).unwrap();
                expected += path.q_d_probs.row(t)[k] * ll;
            }
            z_prev = Tensor::vector(path.z_samples.row(t).to_vec());
        }
        assert_abs_diff_eq!(e.reconstruction, expected, epsilon = 1e-10);
    }

    #[test]
    fn beta_zero_is_reconstruction_only() {
        let cfg = tiny_cfg(2);
        let m = Ds3m::init(cfg.clone(), 12).unwrap();
        let s = data(&m, 5, 13);
        let loss0 = elbo_minibatch(&m, &[&s], 0.0, 1, 5).unwrap();
        let path = {
            let tape = Tape::new();
            let bm = BoundDs3m::bind(&tape, &m).unwrap();
            let mut rng = seeded(derive_seed(5, 0x454c_424f));
            let sw = sweep(&tape, &bm, &cfg, &[&s], Noise::Sample(&mut rng)).unwrap();
            sw.paths[0].clone()
        };
        let e = elbo(&s.y, &s.x, &path, &m.gen, &m.inf, &cfg).unwrap();
        assert_abs_diff_eq!(loss0, -e.reconstruction, epsilon = 1e-12);
    }

    #[test]
    fn identical_batch_matches_single_sequence() {
        let cfg = tiny_cfg(2);
        let m = Ds3m::init(cfg, 14).unwrap();
        let s = data(&m, 4, 15);
        // frozen paths: a batch of copies replaying the same path equals the single loss
        let path = ancestral_sample(&s.y, &s.x, &m.gen, &m.inf, &m.config, 3).unwrap();
        let tape = Tape::new();
        let bm = BoundDs3m::bind(&tape, &m).unwrap();
        let paths = vec![path.clone(); 3];
        let batch = vec![&s; 3];
        let sw = sweep(&tape, &bm, &m.config, &batch, Noise::Fixed(&paths)).unwrap();
        let single = elbo(&s.y, &s.x, &path, &m.gen, &m.inf, &m.config).unwrap();
        assert_abs_diff_eq!(sw.loss(1.0).unwrap().value().item(), -single.total(1.0), epsilon = 1e-12);
    }

    #[test]
    fn mismatched_path_length_is_rejected() {
        let cfg = tiny_cfg(2);
        let m = Ds3m::init(cfg.clone(), 16).unwrap();
        let s = data(&m, 4, 17);
        let path = ancestral_sample(&s.y, &s.x, &m.gen, &m.inf, &cfg, 3).unwrap();
        let short = s.prefix(3);
        assert!(elbo(&short.y, &short.x, &path, &m.gen, &m.inf, &cfg).is_err());
        assert!(elbo_minibatch(&m, &[], 1.0, 1, 0).is_err());
    }
}
