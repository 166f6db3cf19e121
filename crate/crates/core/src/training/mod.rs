//! Minibatch training with KL annealing, plateau learning-rate decay and
//! early stopping on a fixed-seed validation loss.

pub mod data;
pub mod optim;

use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffcore::{ParamSet, Tape};
use crate::error::{Error, Result};
use crate::inference::minibatch_loss;
use crate::model::{Ds3m, Sequence};
use crate::rng::{derive_seed, seeded, Rng64};

pub use data::{make_windows, normalized_windows, sequences, DatasetSplit, Normalizer, SplitSizes, Window};
pub use optim::{clip_global_norm, global_norm, Adam, GradSets};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub initial_lr: f64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub early_stop_patience: usize,
    pub max_epochs: usize,
    pub kl_anneal_start: f64,
    pub kl_anneal_end: f64,
    pub anneal_epochs: usize,
    /// Monte-Carlo draws per sequence in each training step.
    pub samples: usize,
    pub grad_clip: f64,
    /// Independently initialized runs; the one with the lowest validation
    /// loss is kept.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            initial_lr: 1e-3,
            plateau_factor: 0.1,
            plateau_patience: 10,
            early_stop_patience: 20,
            max_epochs: 100,
            kl_anneal_start: 0.01,
            kl_anneal_end: 1.0,
            anneal_epochs: 50,
            samples: 1,
            grad_clip: 10.0,
            restarts: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("train.batch_size must be positive");
        }
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return bad("train.initial_lr must be positive");
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return bad("train.plateau_factor must lie in (0, 1)");
        }
        if self.plateau_patience == 0 || self.early_stop_patience == 0 {
            return bad("train patiences must be at least 1");
        }
        if !(0.0 <= self.kl_anneal_start && self.kl_anneal_start <= self.kl_anneal_end) {
            return bad("train requires 0 <= kl_anneal_start <= kl_anneal_end");
        }
        if self.samples == 0 {
            return bad("train.samples must be at least 1");
        }
        if !(self.grad_clip > 0.0) {
            return bad("train.grad_clip must be positive");
        }
        if self.restarts == 0 {
            return bad("train.restarts must be at least 1");
        }
        Ok(())
    }
}

/// KL weight for `epoch`: linear from `kl_anneal_start` to `kl_anneal_end`
/// over `anneal_epochs`, constant afterwards.
pub fn kl_beta(epoch: usize, cfg: &TrainConfig) -> f64 {
    if cfg.anneal_epochs == 0 || epoch >= cfg.anneal_epochs {
        return cfg.kl_anneal_end;
    }
    let f = epoch as f64 / cfg.anneal_epochs as f64;
    cfg.kl_anneal_start + f * (cfg.kl_anneal_end - cfg.kl_anneal_start)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    pub beta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// Index into `epochs` of the best validation loss, `None` when a resumed
    /// run never beat the recorded best.
    pub best_epoch: Option<usize>,
    pub best_val_loss: f64,
    pub wall_seconds: f64,
    /// Which restart produced the model.
    #[serde(default)]
    pub restart: usize,
}

impl TrainReport {
    /// Tab-separated `epoch train_loss val_loss lr beta` lines with a header.
    pub fn to_records(&self) -> String {
        let mut s = String::from("epoch\ttrain_loss\tval_loss\tlr\tbeta\n");
        for e in &self.epochs {
            s.push_str(&format!("{}\t{}\t{}\t{}\t{}\n", e.epoch, e.train_loss, e.val_loss, e.lr, e.beta));
        }
        s
    }
}

/// Anything trainable by [`fit`]: a parameter collection with a stochastic
/// minibatch loss and a deterministic validation loss.
pub trait Objective: Clone {
    fn param_sets_mut(&mut self) -> Vec<(String, &mut ParamSet)>;

    /// Loss value and gradients for one minibatch.
    fn loss_and_grads(&self, batch: &[&Sequence], beta: f64, samples: usize, rng: &mut Rng64) -> Result<(f64, GradSets)>;

    fn validation_loss(&self, windows: &[&Sequence], seed: u64) -> Result<f64>;
}

impl Objective for Ds3m {
    fn param_sets_mut(&mut self) -> Vec<(String, &mut ParamSet)> {
        self.named_sets_mut()
    }

    fn loss_and_grads(&self, batch: &[&Sequence], beta: f64, samples: usize, rng: &mut Rng64) -> Result<(f64, GradSets)> {
        let tape = Tape::new();
        let (loss, bound, _) = minibatch_loss(&tape, self, batch, beta, samples, rng)?;
        let value = loss.value().item();
        let g = tape.backward(loss)?;
        Ok((value, bound.grads(&g)))
    }

    fn validation_loss(&self, windows: &[&Sequence], seed: u64) -> Result<f64> {
        evaluate_loss(self, windows, 1.0, seed)
    }
}

const EVAL_CHUNK: usize = 256;

/// Mean negative ELBO over `windows`, one draw per sequence from a stream
/// fixed by `seed`.
pub fn evaluate_loss(model: &Ds3m, windows: &[&Sequence], beta: f64, seed: u64) -> Result<f64> {
    if windows.is_empty() {
        return Err(Error::Data("cannot evaluate the loss on an empty split".into()));
    }
    let mut rng = seeded(seed);
    let mut total = 0.0;
    for chunk in windows.chunks(EVAL_CHUNK) {
        let tape = Tape::new();
        let (loss, _, _) = minibatch_loss(&tape, model, chunk, beta, 1, &mut rng)?;
        total += loss.value().item() * chunk.len() as f64;
    }
    Ok(total / windows.len() as f64)
}

/// Where a training run starts.
#[derive(Clone, Debug)]
pub struct Start<M> {
    pub model: M,
    /// Best validation loss recorded by an earlier run; the returned
    /// parameters only change if this is beaten.
    pub best_val_loss: Option<f64>,
}

/// Runs the training loop and returns the parameters of the best
/// validation epoch.
pub fn fit<M: Objective>(start: Start<M>, train: &[&Sequence], validation: &[&Sequence], cfg: &TrainConfig) -> Result<(M, TrainReport)> {
    fit_with(start, train, validation, cfg, |_| {})
}

/// [`fit`] with a callback after every epoch.
pub fn fit_with<M: Objective>(
    start: Start<M>,
    train: &[&Sequence],
    validation: &[&Sequence],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(M, TrainReport)> {
    cfg.validate()?;
    if train.is_empty() || validation.is_empty() {
        return Err(Error::Data("training needs nonempty train and validation splits".into()));
    }
    let clock = Instant::now();
    let mut model = start.model;
    let mut best = model.clone();
    let mut best_val = start.best_val_loss.unwrap_or(f64::INFINITY);
    let mut best_epoch = None;
    let mut opt = Adam::new();
    let mut lr = cfg.initial_lr;
    let mut shuffle_rng = seeded(derive_seed(cfg.seed, 1));
    let mut sample_rng = seeded(derive_seed(cfg.seed, 2));
    let val_seed = derive_seed(cfg.seed, 3);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut plateau = 0usize;
    let mut since_best = 0usize;
    let mut epochs = Vec::new();

    for epoch in 0..cfg.max_epochs {
        let beta = kl_beta(epoch, cfg);
        order.shuffle(&mut shuffle_rng);
        let mut sum = 0.0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&Sequence> = idx.iter().map(|&i| train[i]).collect();
            let (loss, mut grads) = model.loss_and_grads(&batch, beta, cfg.samples, &mut sample_rng)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, batch: b, detail: format!("loss is {loss}") });
            }
            let norm = clip_global_norm(&mut grads, cfg.grad_clip);
            if !norm.is_finite() {
                return Err(Error::Divergence { epoch, batch: b, detail: format!("gradient norm is {norm}") });
            }
            opt.update(model.param_sets_mut(), &grads, lr)?;
            sum += loss * batch.len() as f64;
        }
        let val_loss = model.validation_loss(validation, val_seed)?;
        if !val_loss.is_finite() {
            return Err(Error::Divergence { epoch, batch: order.len().div_ceil(cfg.batch_size), detail: format!("validation loss is {val_loss}") });
        }
        let record = EpochRecord { epoch, train_loss: sum / train.len() as f64, val_loss, lr, beta };
        on_epoch(&record);
        epochs.push(record);

        if val_loss < best_val {
            best_val = val_loss;
            best = model.clone();
            best_epoch = Some(epoch);
            plateau = 0;
            since_best = 0;
        } else {
            plateau += 1;
            since_best += 1;
            if since_best >= cfg.early_stop_patience {
                break;
            }
            if plateau >= cfg.plateau_patience {
                lr *= cfg.plateau_factor;
                plateau = 0;
            }
        }
    }

    let report = TrainReport { epochs, best_epoch, best_val_loss: best_val, wall_seconds: clock.elapsed().as_secs_f64(), restart: 0 };
    Ok((best, report))
}

/// Trains a freshly initialized DS³M on `split`.
/// Seed of restart `r`; restart 0 uses the configured seed unchanged.
pub fn restart_seed(seed: u64, r: usize) -> u64 {
    if r == 0 {
        seed
    } else {
        derive_seed(seed, 16 + r as u64)
    }
}

/// Trains `cfg.restarts` models and keeps the one whose validation loss,
/// re-evaluated under a common seed, is lowest. `init` maps a restart seed
/// to starting parameters.
pub fn train_restarts<M, F>(train: &[&Sequence], validation: &[&Sequence], cfg: &TrainConfig, init: F) -> Result<(M, TrainReport)>
where
    M: Objective + Send,
    F: Fn(u64) -> Result<M> + Sync,
{
    cfg.validate()?;
    let runs: Vec<Result<(f64, M, TrainReport)>> = (0..cfg.restarts)
        .into_par_iter()
        .map(|r| {
            let run_cfg = TrainConfig { seed: restart_seed(cfg.seed, r), restarts: 1, ..cfg.clone() };
            let (m, mut report) = fit(Start { model: init(run_cfg.seed)?, best_val_loss: None }, train, validation, &run_cfg)?;
            report.restart = r;
            let score = if cfg.restarts == 1 { report.best_val_loss } else { m.validation_loss(validation, derive_seed(cfg.seed, 3))? };
            Ok((score, m, report))
        })
        .collect();
    let mut best: Option<(f64, M, TrainReport)> = None;
    for run in runs {
        let run = run?;
        if best.as_ref().map_or(true, |b| run.0 < b.0) {
            best = Some(run);
        }
    }
    let (_, m, report) = best.expect("at least one restart");
    Ok((m, report))
}

/// Trains DS³M on `split` with [`train_restarts`].
pub fn train(split: &DatasetSplit, model: crate::config::ModelConfig, cfg: &TrainConfig) -> Result<(Ds3m, TrainReport)> {
    train_restarts(&sequences(&split.train), &sequences(&split.validation), cfg, |seed| Ds3m::init(model.clone(), derive_seed(seed, 0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{EmissionFamily, ModelConfig};
    use crate::diffcore::Tensor;
    use approx::assert_abs_diff_eq;

    fn tiny() -> ModelConfig {
        ModelConfig { regimes: 2, obs_dim: 1, input_dim: 1, hidden_dim: 3, latent_dim: 1, emission: EmissionFamily::Gaussian }
    }

    fn sine_split() -> DatasetSplit {
        let y: Vec<f64> = (0..160).map(|t| (t as f64 * 0.3).sin() * 2.0 + 1.0).collect();
        DatasetSplit::from_series(&Tensor::matrix(160, 1, y).unwrap(), 8, SplitSizes { train: 100, validation: 30, test: 20 }).unwrap()
    }

    #[test]
    fn beta_schedule() {
        let c = TrainConfig::default();
        assert_eq!(kl_beta(0, &c), 0.01);
        assert_eq!(kl_beta(50, &c), 1.0);
        assert_eq!(kl_beta(80, &c), 1.0);
        assert_abs_diff_eq!(kl_beta(25, &c), 0.505, epsilon = 1e-15);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for c in [
            TrainConfig { plateau_factor: 1.0, ..Default::default() },
            TrainConfig { plateau_patience: 0, ..Default::default() },
            TrainConfig { kl_anneal_start: 2.0, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
        ] {
            assert!(matches!(c.validate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn evaluate_loss_is_deterministic_and_monotone_in_beta() {
        let split = sine_split();
        let m = Ds3m::init(tiny(), 3).unwrap();
        let val = sequences(&split.validation);
        let a = evaluate_loss(&m, &val, 1.0, 9).unwrap();
        assert_eq!(a, evaluate_loss(&m, &val, 1.0, 9).unwrap());
        assert!(evaluate_loss(&m, &val, 0.0, 9).unwrap() <= a);
        assert!(evaluate_loss(&m, &[], 1.0, 9).is_err());
    }

    #[test]
    fn training_lowers_validation_loss_and_is_reproducible() {
        let split = sine_split();
        let cfg = TrainConfig { max_epochs: 12, batch_size: 16, initial_lr: 0.01, anneal_epochs: 4, seed: 5, ..Default::default() };
        let (m1, r1) = train(&split, tiny(), &cfg).unwrap();
        let (m2, r2) = train(&split, tiny(), &cfg).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(r1.epochs, r2.epochs);
        let init = Ds3m::init(tiny(), derive_seed(5, 0)).unwrap();
        let val = sequences(&split.validation);
        let seed = derive_seed(5, 3);
        assert!(evaluate_loss(&m1, &val, 1.0, seed).unwrap() < evaluate_loss(&init, &val, 1.0, seed).unwrap());
        let best = r1.best_epoch.unwrap();
        assert_eq!(r1.best_val_loss, r1.epochs.iter().map(|e| e.val_loss).fold(f64::INFINITY, f64::min));
        assert_eq!(r1.epochs[best].val_loss, r1.best_val_loss);
    }

    #[test]
    fn plateau_and_early_stopping_rules() {
        let split = sine_split();
        // A huge KL weight late in training makes the validation loss stall quickly.
        let cfg = TrainConfig { max_epochs: 40, batch_size: 50, initial_lr: 0.05, plateau_patience: 2, early_stop_patience: 5, anneal_epochs: 0, seed: 1, ..Default::default() };
        let (_, r) = train(&split, tiny(), &cfg).unwrap();
        let lrs: Vec<f64> = r.epochs.iter().map(|e| e.lr).collect();
        for w in lrs.windows(2) {
            assert!(w[1] == w[0] || (w[1] - w[0] * cfg.plateau_factor).abs() < 1e-18);
        }
        let best = r.best_epoch.unwrap();
        assert!(r.epochs.len() - 1 - best <= cfg.early_stop_patience);
    }

    #[test]
    fn resumed_run_keeps_the_recorded_best() {
        let split = sine_split();
        let cfg = TrainConfig { max_epochs: 2, batch_size: 50, seed: 2, ..Default::default() };
        let m = Ds3m::init(tiny(), 1).unwrap();
        let (out, r) = fit(Start { model: m.clone(), best_val_loss: Some(f64::NEG_INFINITY) }, &sequences(&split.train), &sequences(&split.validation), &cfg).unwrap();
        assert_eq!(out, m);
        assert_eq!(r.best_epoch, None);
        assert_eq!(r.best_val_loss, f64::NEG_INFINITY);
    }

    #[test]
    fn non_finite_data_reports_divergence() {
        let mut split = sine_split();
        split.train[3].seq.y.data_mut()[2] = f64::NAN;
        let cfg = TrainConfig { max_epochs: 1, batch_size: 200, ..Default::default() };
        assert!(matches!(train(&split, tiny(), &cfg), Err(Error::Divergence { epoch: 0, batch: 0, .. })));
    }
}
