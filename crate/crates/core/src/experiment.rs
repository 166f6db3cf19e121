//! Batch experiments: configuration, data loading, training, forecasting,
//! segmentation, evaluation and the files the CLI writes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::{baseline_predict, baseline_train, BaselineConfig};
use crate::checkpoint::{Checkpoint, Family, Model};
use crate::config::{EmissionFamily, ModelConfig};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::evaluation::{align_labels, mape, rmse, MetricsRecord, MAPE_EPSILON};
use crate::forecasting::{predict_rolling, segment_windows, ForecastResult, DEFAULT_SAMPLES};
use crate::simulators::{simulate_lorenz, simulate_toy, LorenzConfig, Table, ToyConfig};
use crate::training::{fit, normalized_windows, sequences, train, DatasetSplit, SplitSizes, Start, TrainConfig, TrainReport, Window};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Toy,
    Lorenz,
    Csv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub source: Source,
    /// Table read by the `csv` source.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Observed columns of a `csv` source, `y0, y1, ...` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub columns: Option<Vec<String>>,
    pub window: usize,
    pub split: SplitSizes,
    #[serde(default)]
    pub toy: ToyConfig,
    #[serde(default)]
    pub lorenz: LorenzConfig,
}

/// Model choices that do not depend on the data; widths `D` and `U` come
/// from the observed columns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "default_family")]
    pub family: Family,
    pub regimes: usize,
    pub hidden_dim: usize,
    pub latent_dim: usize,
    #[serde(default)]
    pub emission: EmissionFamily,
}

fn default_family() -> Family {
    Family::Ds3m
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictConfig {
    /// Monte-Carlo paths per forecast.
    pub samples: usize,
    pub coverage: f64,
    /// Paths averaged per segmented window.
    pub segment_samples: usize,
}

impl Default for PredictConfig {
    fn default() -> Self {
        PredictConfig { samples: DEFAULT_SAMPLES, coverage: 0.9, segment_samples: 20 }
    }
}

/// A whole run. The top-level `seed` replaces the seeds of the simulator and
/// training sections and drives forecasting and segmentation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub predict: PredictConfig,
}

impl ExperimentConfig {
    /// Toy study: length 2000, window 20, splits 1000/480/500, `Z = 2`, `H = 10`.
    pub fn toy(seed: u64) -> Self {
        let m = ModelConfig::toy();
        ExperimentConfig {
            seed,
            data: DataConfig {
                source: Source::Toy,
                path: None,
                columns: None,
                window: 20,
                split: SplitSizes { train: 1000, validation: 480, test: 500 },
                toy: ToyConfig::default(),
                lorenz: LorenzConfig::default(),
            },
            model: ModelSection { family: Family::Ds3m, regimes: m.regimes, hidden_dim: m.hidden_dim, latent_dim: m.latent_dim, emission: m.emission },
            train: TrainConfig::default(),
            predict: PredictConfig::default(),
        }
        .seeded()
    }

    /// Lorenz study: length 3000, window 5, splits 1000/990/1000, `Z = 3`, `H = 20`.
    pub fn lorenz(seed: u64) -> Self {
        let m = ModelConfig::lorenz();
        let mut c = Self::toy(seed);
        c.data.source = Source::Lorenz;
        c.data.window = 5;
        c.data.split = SplitSizes { train: 1000, validation: 990, test: 1000 };
        c.model = ModelSection { family: Family::Ds3m, regimes: m.regimes, hidden_dim: m.hidden_dim, latent_dim: m.latent_dim, emission: m.emission };
        c.seeded()
    }

    /// Copies the top-level seed into every section.
    pub fn seeded(mut self) -> Self {
        self.data.toy.seed = self.seed;
        self.data.lorenz.seed = self.seed;
        self.train.seed = self.seed;
        self
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim_end().to_string()))?;
        let c = c.seeded();
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("config serialization: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.window < 2 {
            return Err(Error::Config(format!("data.window must be at least 2, got {}", self.data.window)));
        }
        if self.data.source == Source::Csv && self.data.path.is_none() {
            return Err(Error::Config("data.path is required for the csv source".into()));
        }
        let m = &self.model;
        if m.regimes == 0 || m.hidden_dim == 0 || m.latent_dim == 0 {
            return Err(Error::Config("model.regimes, model.hidden_dim and model.latent_dim must be positive".into()));
        }
        if self.predict.samples == 0 || self.predict.segment_samples == 0 {
            return Err(Error::Config("predict sample counts must be positive".into()));
        }
        if !(self.predict.coverage > 0.0 && self.predict.coverage < 1.0) {
            return Err(Error::Config(format!("predict.coverage must lie in (0, 1), got {}", self.predict.coverage)));
        }
        self.train.validate()
    }

    /// Model widths for `data`.
    pub fn model_config(&self, data: &Dataset) -> ModelConfig {
        let d = data.y.cols();
        ModelConfig {
            regimes: self.model.regimes,
            obs_dim: d,
            input_dim: d,
            hidden_dim: self.model.hidden_dim,
            latent_dim: self.model.latent_dim,
            emission: self.model.emission,
        }
    }
}

/// Observations with optional regime labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub columns: Vec<String>,
    /// `T × D`.
    pub y: Tensor,
    pub labels: Option<Vec<usize>>,
}

impl Dataset {
    pub fn from_table(table: &Table, columns: Option<&[String]>) -> Result<Self> {
        let columns = match columns {
            Some(c) => c.to_vec(),
            None => table.y_columns(),
        };
        if columns.is_empty() {
            return Err(Error::Data("no observed columns: name them y0, y1, ... or list them in data.columns".into()));
        }
        Ok(Dataset { y: table.select(&columns)?, labels: table.labels()?, columns })
    }
}

/// Simulates or reads the configured series.
pub fn load_data(cfg: &DataConfig) -> Result<Dataset> {
    let series = match cfg.source {
        Source::Toy => simulate_toy(&cfg.toy)?,
        Source::Lorenz => simulate_lorenz(&cfg.lorenz)?,
        Source::Csv => {
            let path = cfg.path.as_ref().ok_or_else(|| Error::Config("data.path is required for the csv source".into()))?;
            return Dataset::from_table(&Table::read(path)?, cfg.columns.as_deref());
        }
    };
    let columns = (0..series.y.cols()).map(|i| format!("y{i}")).collect();
    Ok(Dataset { columns, y: series.y, labels: Some(series.d_true) })
}

pub fn split_data(cfg: &ExperimentConfig, data: &Dataset) -> Result<DatasetSplit> {
    match cfg.model.emission {
        EmissionFamily::Gaussian => DatasetSplit::from_series(&data.y, cfg.data.window, cfg.data.split),
        EmissionFamily::Lognormal => {
            if data.y.data().iter().any(|&v| !(v > 0.0)) {
                return Err(Error::Data("the lognormal emission needs strictly positive observations".into()));
            }
            DatasetSplit::from_series_uncentered(&data.y, cfg.data.window, cfg.data.split)
        }
    }
}

/// Trains the configured family, or continues `resume` from its recorded
/// best validation loss.
pub fn train_model(cfg: &ExperimentConfig, data: &Dataset, split: &DatasetSplit, resume: Option<Checkpoint>) -> Result<(Checkpoint, TrainReport)> {
    let model_cfg = cfg.model_config(data);
    let (model, report) = match resume {
        Some(ck) => {
            if ck.window != cfg.data.window || ck.columns != data.columns {
                return Err(Error::Config("the resumed checkpoint was trained on differently shaped data".into()));
            }
            let (train_set, val_set) = (sequences(&split.train), sequences(&split.validation));
            match ck.model {
                Model::Ds3m(m) => {
                    let (m, r) = fit(Start { model: m, best_val_loss: ck.best_val_loss }, &train_set, &val_set, &cfg.train)?;
                    (Model::Ds3m(m), r)
                }
                Model::Baseline(m) => {
                    let (m, r) = fit(Start { model: m, best_val_loss: ck.best_val_loss }, &train_set, &val_set, &cfg.train)?;
                    (Model::Baseline(m), r)
                }
            }
        }
        None => match cfg.model.family {
            Family::Ds3m => {
                let (m, r) = train(split, model_cfg, &cfg.train)?;
                (Model::Ds3m(m), r)
            }
            Family::BaselineGru => {
                let (m, r) = baseline_train(split, BaselineConfig::from(&model_cfg), &cfg.train)?;
                (Model::Baseline(m), r)
            }
        },
    };
    let ck = Checkpoint {
        model,
        normalizer: split.normalizer.clone(),
        window: cfg.data.window,
        columns: data.columns.clone(),
        best_val_loss: report.best_val_loss.is_finite().then_some(report.best_val_loss),
    };
    Ok((ck, report))
}

/// Forecasting windows over `y`, optionally only the final `last`.
pub fn target_windows(ck: &Checkpoint, y: &Tensor, last: Option<usize>) -> Result<Vec<Window>> {
    if y.cols() != ck.columns.len() {
        return Err(Error::dim("target_windows", format!("data has {} columns, checkpoint expects {}", y.cols(), ck.columns.len())));
    }
    let mut ws = normalized_windows(y, ck.window, &ck.normalizer)?;
    if let Some(n) = last {
        if n == 0 || n > ws.len() {
            return Err(Error::Data(format!("cannot take the last {n} of {} windows", ws.len())));
        }
        ws.drain(..ws.len() - n);
    }
    if ws.is_empty() {
        return Err(Error::Data("series too short for a single forecast window".into()));
    }
    Ok(ws)
}

/// One-step forecasts of every window's last step, in original units.
pub fn forecast(ck: &Checkpoint, windows: &[Window], p: &PredictConfig, seed: u64) -> Result<Vec<ForecastResult>> {
    match &ck.model {
        Model::Ds3m(m) => predict_rolling(m, windows, &ck.normalizer, p.samples, p.coverage, seed),
        Model::Baseline(b) => baseline_predict(b, windows, &ck.normalizer, p.samples, p.coverage, seed),
    }
}

/// Regime label and probabilities of every window's last step.
pub fn segmentation(ck: &Checkpoint, windows: &[Window], samples: usize, seed: u64) -> Result<Vec<(usize, Vec<f64>)>> {
    match &ck.model {
        Model::Ds3m(m) => segment_windows(m, windows, samples, seed),
        Model::Baseline(_) => Err(Error::Config("the baseline-gru family has no regimes to segment".into())),
    }
}

/// Header `t`, then `mean_`, `lower_` and `upper_` per observed column, then
/// `regime` and `p0..` when the model has regimes.
pub fn forecasts_to_csv(columns: &[String], targets: &[usize], forecasts: &[ForecastResult]) -> String {
    let k = forecasts.first().map_or(0, |f| f.regime_probs.len());
    let mut head = vec!["t".to_string()];
    for prefix in ["mean", "lower", "upper"] {
        head.extend(columns.iter().map(|c| format!("{prefix}_{c}")));
    }
    if k > 0 {
        head.push("regime".into());
        head.extend((0..k).map(|j| format!("p{j}")));
    }
    let mut s = head.join(",");
    s.push('\n');
    for (t, f) in targets.iter().zip(forecasts) {
        write!(s, "{t}").unwrap();
        for v in f.mean.data().iter().chain(f.lower.data()).chain(f.upper.data()) {
            write!(s, ",{v}").unwrap();
        }
        if k > 0 {
            write!(s, ",{}", f.regime()).unwrap();
            for p in &f.regime_probs {
                write!(s, ",{p}").unwrap();
            }
        }
        s.push('\n');
    }
    s
}

/// Header `t,regime,p0..`.
pub fn segmentation_to_csv(targets: &[usize], seg: &[(usize, Vec<f64>)]) -> String {
    let k = seg.first().map_or(0, |(_, p)| p.len());
    let mut s = String::from("t,regime");
    for j in 0..k {
        write!(s, ",p{j}").unwrap();
    }
    s.push('\n');
    for (t, (d, p)) in targets.iter().zip(seg) {
        write!(s, "{t},{d}").unwrap();
        for v in p {
            write!(s, ",{v}").unwrap();
        }
        s.push('\n');
    }
    s
}

fn integer_column(table: &Table, name: &str) -> Result<Vec<usize>> {
    let i = table.column_index(name)?;
    (0..table.values.rows())
        .map(|r| {
            let v = table.values.row(r)[i];
            if v < 0.0 || v.fract() != 0.0 {
                return Err(Error::Data(format!("row {}: `{name}` value {v} is not a nonnegative integer", r + 1)));
            }
            Ok(v as usize)
        })
        .collect()
}

/// Metrics of a forecast or segmentation file against a truth table.
///
/// Rows are matched through the `t` column. Observation metrics need
/// `mean_<c>` columns whose `<c>` exist in the truth; regime metrics need a
/// `regime` column in the prediction and `d_true` in the truth.
pub fn evaluate_tables(pred: &Table, truth: &Table) -> Result<MetricsRecord> {
    let ts = integer_column(pred, "t")?;
    if let Some(&bad) = ts.iter().find(|&&t| t >= truth.values.rows()) {
        return Err(Error::Data(format!("prediction row for t = {bad}, truth has {} rows", truth.values.rows())));
    }
    let mut out = MetricsRecord::default();
    let observed: Vec<String> = pred.columns.iter().filter_map(|c| c.strip_prefix("mean_")).map(str::to_string).collect();
    if !observed.is_empty() {
        let n = ts.len();
        let truth_y = truth.select(&observed)?;
        let rows = |m: &Tensor| -> Tensor {
            let data = ts.iter().flat_map(|&t| m.row(t).to_vec()).collect();
            Tensor::matrix(n, m.cols(), data).expect("rows fit")
        };
        let y = rows(&truth_y);
        let names = |prefix: &str| observed.iter().map(|c| format!("{prefix}_{c}")).collect::<Vec<_>>();
        let mean = pred.select(&names("mean"))?;
        out.rmse = Some(rmse(&y, &mean)?);
        out.mape = Some(mape(&y, &mean, MAPE_EPSILON)?);
        if let (Ok(lo), Ok(hi)) = (pred.select(&names("lower")), pred.select(&names("upper"))) {
            let inside = y.data().iter().zip(lo.data().iter().zip(hi.data())).filter(|(v, (l, h))| *l <= *v && *v <= *h).count();
            out.coverage = Some(inside as f64 / y.len() as f64);
        }
    }
    if pred.column_index("regime").is_ok() {
        if let Some(labels) = truth.labels()? {
            let predicted = integer_column(pred, "regime")?;
            let truth_d: Vec<usize> = ts.iter().map(|&t| labels[t]).collect();
            let k = (0..).take_while(|j| pred.column_index(&format!("p{j}")).is_ok()).count();
            let k = k.max(predicted.iter().chain(&truth_d).max().map_or(1, |m| m + 1));
            let r = MetricsRecord::regimes(&predicted, &truth_d, k)?;
            out.accuracy = r.accuracy;
            out.f1 = r.f1;
            out.duration_per_regime = r.duration_per_regime;
            out.label_permutation = r.label_permutation;
        }
    }
    if out == MetricsRecord::default() {
        return Err(Error::Data("nothing to evaluate: the prediction has neither mean_ nor regime columns".into()));
    }
    Ok(out)
}

/// Diagonal of the transition matrix indexed by true regime, using the
/// relabeling found by [`align_labels`].
pub fn aligned_diagonal(gamma: &Tensor, permutation: &[usize]) -> Vec<f64> {
    let mut diag = vec![0.0; permutation.len()];
    for (model, &truth) in permutation.iter().enumerate() {
        diag[truth] = gamma.get2(model, model);
    }
    diag
}

/// Everything a finished run produces.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub config: ExperimentConfig,
    pub data: Dataset,
    pub checkpoint: Checkpoint,
    pub report: TrainReport,
    pub targets: Vec<usize>,
    pub forecasts: Vec<ForecastResult>,
    pub segmentation: Option<Vec<(usize, Vec<f64>)>>,
    pub forecast_metrics: MetricsRecord,
    pub segmentation_metrics: Option<MetricsRecord>,
    /// Learned `Γ` diagonal by true regime, when labels are known.
    pub gamma_diagonal: Option<Vec<f64>>,
}

fn labeled_table(data: &Dataset) -> Table {
    let mut columns = data.columns.clone();
    let mut values = Vec::with_capacity(data.y.len() + data.y.rows());
    for t in 0..data.y.rows() {
        values.extend_from_slice(data.y.row(t));
        if let Some(l) = &data.labels {
            values.push(l[t] as f64);
        }
    }
    if data.labels.is_some() {
        columns.push("d_true".into());
    }
    let values = Tensor::matrix(data.y.rows(), columns.len(), values).expect("table fits");
    Table { columns, values }
}

/// Trains on the configured data and scores forecasts and segmentation of
/// the test split.
pub fn run(cfg: &ExperimentConfig) -> Result<Outcome> {
    cfg.validate()?;
    let data = load_data(&cfg.data)?;
    let split = split_data(cfg, &data)?;
    let (checkpoint, report) = train_model(cfg, &data, &split, None)?;
    let targets: Vec<usize> = split.test.iter().map(Window::end).collect();
    let forecasts = forecast(&checkpoint, &split.test, &cfg.predict, cfg.seed)?;
    let truth = labeled_table(&data);
    let forecast_metrics = evaluate_tables(&Table::parse(&forecasts_to_csv(&data.columns, &targets, &forecasts))?, &truth)?;
    let (segmentation, segmentation_metrics, gamma_diagonal) = match &checkpoint.model {
        Model::Ds3m(m) => {
            let seg = segmentation(&checkpoint, &split.test, cfg.predict.segment_samples, cfg.seed)?;
            let metrics = match &data.labels {
                Some(_) => Some(evaluate_tables(&Table::parse(&segmentation_to_csv(&targets, &seg))?, &truth)?),
                None => None,
            };
            let diag = match &data.labels {
                Some(l) => {
                    let predicted: Vec<usize> = seg.iter().map(|(d, _)| *d).collect();
                    let truth_d: Vec<usize> = targets.iter().map(|&t| l[t]).collect();
                    let k = m.config.regimes.max(truth_d.iter().max().map_or(1, |x| x + 1));
                    if k == m.config.regimes {
                        let (perm, _) = align_labels(&predicted, &truth_d, k)?;
                        Some(aligned_diagonal(&m.gen.regime_chain.transition_matrix(), &perm))
                    } else {
                        None
                    }
                }
                None => None,
            };
            (Some(seg), metrics, diag)
        }
        Model::Baseline(_) => (None, None, None),
    };
    Ok(Outcome {
        config: cfg.clone(),
        data,
        checkpoint,
        report,
        targets,
        forecasts,
        segmentation,
        forecast_metrics,
        segmentation_metrics,
        gamma_diagonal,
    })
}

/// Record of a run written next to its artifacts. Replaying `config`
/// reproduces every artifact and metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub version: String,
    /// Artifact name to path.
    pub artifacts: BTreeMap<String, String>,
    pub epochs: usize,
    pub best_epoch: Option<usize>,
    pub best_val_loss: Option<f64>,
    pub restart: usize,
    /// Only recorded on request, so reruns stay byte-identical.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_seconds: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_diagonal: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forecast: Option<MetricsRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segmentation: Option<MetricsRecord>,
    pub config: ExperimentConfig,
}

impl RunManifest {
    pub fn new(config: &ExperimentConfig, report: &TrainReport) -> Self {
        RunManifest {
            version: env!("CARGO_PKG_VERSION").to_string(),
            artifacts: BTreeMap::new(),
            epochs: report.epochs.len(),
            best_epoch: report.best_epoch,
            best_val_loss: report.best_val_loss.is_finite().then_some(report.best_val_loss),
            restart: report.restart,
            wall_seconds: None,
            gamma_diagonal: None,
            forecast: None,
            segmentation: None,
            config: config.clone(),
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("manifest serialization: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim_end().to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_round_trip_through_toml() {
        for c in [ExperimentConfig::toy(3), ExperimentConfig::lorenz(4)] {
            let text = c.to_toml().unwrap();
            assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), c);
        }
    }

    #[test]
    fn unknown_keys_are_named() {
        let text = ExperimentConfig::toy(1).to_toml().unwrap().replace("[train]", "[train]\nlearning_rate = 0.1");
        let err = ExperimentConfig::from_toml(&text).unwrap_err().to_string();
        assert!(err.contains("learning_rate"), "{err}");
    }

    #[test]
    fn top_level_seed_wins() {
        let text = ExperimentConfig::toy(1).to_toml().unwrap().replacen("seed = 1", "seed = 9", 1);
        let c = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!((c.seed, c.train.seed, c.data.toy.seed, c.data.lorenz.seed), (9, 9, 9, 9));
    }

    #[test]
    fn perfect_forecast_scores_perfectly() {
        let truth = Table::parse("y0,d_true\n1,0\n2,0\n4,1\n8,1\n").unwrap();
        let pred = Table::parse("t,mean_y0,lower_y0,upper_y0,regime,p0,p1\n2,4,3,5,0,0.9,0.1\n3,8,8,8,0,0.8,0.2\n").unwrap();
        let m = evaluate_tables(&pred, &truth).unwrap();
        assert_eq!((m.rmse, m.mape, m.coverage, m.accuracy), (Some(0.0), Some(0.0), Some(1.0), Some(1.0)));
        assert_eq!(m.label_permutation, Some(vec![1, 0]));
    }

    #[test]
    fn mismatched_tables_are_data_errors() {
        let truth = Table::parse("y0\n1\n2\n").unwrap();
        let pred = Table::parse("t,mean_y0\n5,1\n").unwrap();
        assert!(matches!(evaluate_tables(&pred, &truth), Err(Error::Data(_))));
        let pred = Table::parse("t,mean_y1\n0,1\n").unwrap();
        assert!(matches!(evaluate_tables(&pred, &truth), Err(Error::Data(_))));
    }

    #[test]
    fn diagonal_follows_the_relabeling() {
        let g = Tensor::matrix(2, 2, vec![0.9, 0.1, 0.3, 0.7]).unwrap();
        assert_eq!(aligned_diagonal(&g, &[0, 1]), vec![0.9, 0.7]);
        assert_eq!(aligned_diagonal(&g, &[1, 0]), vec![0.7, 0.9]);
    }
}
