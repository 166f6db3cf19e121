//! Ground-truth generators for the two simulation studies, plus the
//! delimited-text series format shared with the CLI.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::generative::sample_categorical;
use crate::rng::{derive_seed, seeded};

/// Observations with their true regimes and latent states.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSeries {
    /// `T × D`.
    pub y: Tensor,
    pub d_true: Vec<usize>,
    /// `T × Z`.
    pub z_true: Tensor,
}

impl LabeledSeries {
    pub fn new(y: Tensor, d_true: Vec<usize>, z_true: Tensor) -> Result<Self> {
        if y.rows() != d_true.len() || z_true.rows() != d_true.len() {
            return Err(Error::dim("LabeledSeries", format!("y {} rows, d {} labels, z {} rows", y.rows(), d_true.len(), z_true.rows())));
        }
        Ok(LabeledSeries { y, d_true, z_true })
    }

    pub fn len(&self) -> usize {
        self.d_true.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d_true.is_empty()
    }

    /// Header `y0..y{D-1},d_true,z0..z{Z-1}`, then one row per step.
    pub fn to_csv(&self) -> String {
        let (d, z) = (self.y.cols(), self.z_true.cols());
        let mut head: Vec<String> = (0..d).map(|i| format!("y{i}")).collect();
        head.push("d_true".into());
        head.extend((0..z).map(|i| format!("z{i}")));
        let mut s = head.join(",");
        s.push('\n');
        for t in 0..self.len() {
            for v in self.y.row(t) {
                write!(s, "{v},").unwrap();
            }
            write!(s, "{}", self.d_true[t]).unwrap();
            for v in self.z_true.row(t) {
                write!(s, ",{v}").unwrap();
            }
            s.push('\n');
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// A numeric table read from delimited text.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    /// `rows × columns`.
    pub values: Tensor,
}

impl Table {
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Data("empty table".into()))?;
        let columns: Vec<String> = header.split(',').map(|c| c.trim().to_string()).collect();
        let mut data = Vec::new();
        let mut rows = 0;
        for (i, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != columns.len() {
                return Err(Error::Data(format!("row {} has {} fields, header has {}", i + 1, fields.len(), columns.len())));
            }
            for (f, c) in fields.iter().zip(&columns) {
                let v: f64 = f.trim().parse().map_err(|_| Error::Data(format!("row {}, column `{c}`: `{}` is not a number", i + 1, f.trim())))?;
                data.push(v);
            }
            rows += 1;
        }
        if rows == 0 {
            return Err(Error::Data("table has no rows".into()));
        }
        Ok(Table { values: Tensor::matrix(rows, columns.len(), data)?, columns })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.columns.iter().position(|c| c == name).ok_or_else(|| Error::Data(format!("no column named `{name}`")))
    }

    /// The named columns as a `rows × names.len()` matrix.
    pub fn select(&self, names: &[String]) -> Result<Tensor> {
        let idx: Vec<usize> = names.iter().map(|n| self.column_index(n)).collect::<Result<_>>()?;
        let rows = self.values.rows();
        let mut data = Vec::with_capacity(rows * idx.len());
        for r in 0..rows {
            let row = self.values.row(r);
            data.extend(idx.iter().map(|&i| row[i]));
        }
        Tensor::matrix(rows, idx.len(), data)
    }

    /// Columns `y0, y1, ...` in order.
    pub fn y_columns(&self) -> Vec<String> {
        (0..).map(|i| format!("y{i}")).take_while(|c| self.columns.contains(c)).collect()
    }

    /// Regime labels from `d_true`, if the column exists.
    pub fn labels(&self) -> Result<Option<Vec<usize>>> {
        let Ok(i) = self.column_index("d_true") else { return Ok(None) };
        (0..self.values.rows())
            .map(|r| {
                let v = self.values.row(r)[i];
                if v < 0.0 || v.fract() != 0.0 {
                    return Err(Error::Data(format!("row {}: d_true `{v}` is not a regime index", r + 1)));
                }
                Ok(v as usize)
            })
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }
}

/// The two-regime nonlinear toy system.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    pub length: usize,
    pub transition: [[f64; 2]; 2],
    /// Latent noise variance per regime.
    pub transition_var: [f64; 2],
    /// Observation noise variance per regime.
    pub emission_var: [f64; 2],
    /// Forces every `d_t` to this regime.
    pub pinned_regime: Option<usize>,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            length: 2000,
            transition: [[0.95, 0.05], [0.05, 0.95]],
            transition_var: [100.0, 1.0],
            emission_var: [25.0, 0.25],
            pinned_regime: None,
            seed: 0,
        }
    }
}

/// Simulates the toy system with `x_t = y_{t-1}`, `y_0 = 0`, `z_0 = 0` and
/// `d_0 ~ Bernoulli(0.5)`.
pub fn simulate_toy(cfg: &ToyConfig) -> Result<LabeledSeries> {
    for row in &cfg.transition {
        if (row.iter().sum::<f64>() - 1.0).abs() > 1e-9 || row.iter().any(|&p| p < 0.0) {
            return Err(Error::Config("toy transition rows must be probability vectors".into()));
        }
    }
    if cfg.transition_var.iter().chain(&cfg.emission_var).any(|&v| v < 0.0) {
        return Err(Error::Config("toy noise variances must be nonnegative".into()));
    }
    if let Some(k) = cfg.pinned_regime {
        if k > 1 {
            return Err(Error::Index { what: "pinned regime", index: k, size: 2 });
        }
    }
    let mut rng = seeded(cfg.seed);
    let mut d: usize = if rng.gen::<f64>() < 0.5 { 0 } else { 1 };
    let (mut z, mut y) = (0.0f64, 0.0f64);
    let mut ys = Vec::with_capacity(cfg.length);
    let mut zs = Vec::with_capacity(cfg.length);
    let mut ds = Vec::with_capacity(cfg.length);
    for _ in 0..cfg.length {
        d = sample_categorical(&cfg.transition[d], &mut rng);
        if let Some(k) = cfg.pinned_regime {
            d = k;
        }
        let x = y;
        let w: f64 = rng.sample::<f64, _>(StandardNormal) * cfg.transition_var[d].sqrt();
        let v: f64 = rng.sample::<f64, _>(StandardNormal) * cfg.emission_var[d].sqrt();
        if d == 0 {
            z = 0.6 * z + 0.4 * (x + z).tanh() + w;
            y = 1.5 * z + z.tanh() + v;
        } else {
            z = 0.1 * z + 0.2 * (x + z).sin() + w;
            y = 0.5 * z + z.sin() + v;
        }
        ys.push(y);
        zs.push(z);
        ds.push(d);
    }
    LabeledSeries::new(Tensor::matrix(cfg.length, 1, ys)?, ds, Tensor::matrix(cfg.length, 1, zs)?)
}

/// The Lorenz system observed through a random linear map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LorenzConfig {
    pub length: usize,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub dt: f64,
    pub initial: [f64; 3],
    /// Integration steps discarded before recording.
    pub burn_in: usize,
    pub obs_dim: usize,
    pub obs_noise_var: f64,
    pub seed: u64,
}

impl Default for LorenzConfig {
    fn default() -> Self {
        LorenzConfig {
            length: 3000,
            alpha: 10.0,
            beta: 28.0,
            gamma: 8.0 / 3.0,
            dt: 0.01,
            initial: [1.0, 1.0, 1.0],
            burn_in: 500,
            obs_dim: 10,
            obs_noise_var: 0.5,
            seed: 0,
        }
    }
}

impl LorenzConfig {
    /// The `obs_dim × 3` observation matrix with standard-normal entries.
    pub fn observation_matrix(&self) -> Tensor {
        let mut rng = seeded(derive_seed(self.seed, 0x4c4f_525a));
        let data = (0..self.obs_dim * 3).map(|_| rng.sample(StandardNormal)).collect();
        Tensor::matrix(self.obs_dim, 3, data).expect("obs_dim × 3")
    }
}

fn lorenz_field(c: &LorenzConfig, z: [f64; 3]) -> [f64; 3] {
    [c.alpha * (z[1] - z[0]), z[0] * (c.beta - z[2]) - z[1], z[0] * z[1] - c.gamma * z[2]]
}

fn rk4_step(c: &LorenzConfig, z: [f64; 3]) -> [f64; 3] {
    let h = c.dt;
    let add = |a: [f64; 3], b: [f64; 3], s: f64| [a[0] + s * b[0], a[1] + s * b[1], a[2] + s * b[2]];
    let k1 = lorenz_field(c, z);
    let k2 = lorenz_field(c, add(z, k1, h / 2.0));
    let k3 = lorenz_field(c, add(z, k2, h / 2.0));
    let k4 = lorenz_field(c, add(z, k3, h));
    [0, 1, 2].map(|i| z[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
}

/// Lobe labels from the sign of the first coordinate (0 for negative),
/// smoothed by a centered 3-step majority vote.
pub fn lobe_labels(z1: &[f64]) -> Vec<usize> {
    let raw: Vec<usize> = z1.iter().map(|&v| usize::from(v >= 0.0)).collect();
    (0..raw.len())
        .map(|t| {
            if t == 0 || t + 1 == raw.len() {
                raw[t]
            } else {
                usize::from(raw[t - 1] + raw[t] + raw[t + 1] >= 2)
            }
        })
        .collect()
}

/// RK4 integration of the Lorenz field, observed as `y_t = W z_t + v_t`.
pub fn simulate_lorenz(cfg: &LorenzConfig) -> Result<LabeledSeries> {
    if !(cfg.dt > 0.0) {
        return Err(Error::Config("lorenz dt must be positive".into()));
    }
    if cfg.obs_noise_var < 0.0 || cfg.obs_dim == 0 {
        return Err(Error::Config("lorenz needs obs_dim >= 1 and a nonnegative noise variance".into()));
    }
    let w = cfg.observation_matrix();
    let mut rng = seeded(cfg.seed);
    let mut z = cfg.initial;
    let mut zs = Vec::with_capacity(cfg.length * 3);
    let mut ys = Vec::with_capacity(cfg.length * cfg.obs_dim);
    let noise_sd = cfg.obs_noise_var.sqrt();
    for step in 0..cfg.burn_in + cfg.length {
        z = rk4_step(cfg, z);
        let mag = z.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !(mag <= 1e3) {
            return Err(Error::Unstable { step, magnitude: mag });
        }
        if step < cfg.burn_in {
            continue;
        }
        zs.extend_from_slice(&z);
        for r in 0..cfg.obs_dim {
            let wr = w.row(r);
            let mean = wr[0] * z[0] + wr[1] * z[1] + wr[2] * z[2];
            ys.push(mean + noise_sd * rng.sample::<f64, _>(StandardNormal));
        }
    }
    let z1: Vec<f64> = zs.chunks(3).map(|c| c[0]).collect();
    LabeledSeries::new(Tensor::matrix(cfg.length, cfg.obs_dim, ys)?, lobe_labels(&z1), Tensor::matrix(cfg.length, 3, zs)?)
}
