//! Forecast and regime-recovery metrics.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};

/// Largest regime count for exhaustive label alignment.
pub const MAX_ALIGN_K: usize = 8;

fn check_shapes(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// Root mean squared error pooled over every entry.
pub fn rmse(y_true: &Tensor, y_pred: &Tensor) -> Result<f64> {
    check_shapes("rmse", y_true, y_pred)?;
    if y_true.is_empty() {
        return Err(Error::Data("rmse of no values".into()));
    }
    let ss: f64 = y_true.data().iter().zip(y_pred.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((ss / y_true.len() as f64).sqrt())
}

pub const MAPE_EPSILON: f64 = 1e-8;

/// Mean absolute percentage error, with `|y_true|` floored at `epsilon`.
pub fn mape(y_true: &Tensor, y_pred: &Tensor, epsilon: f64) -> Result<f64> {
    check_shapes("mape", y_true, y_pred)?;
    if y_true.is_empty() {
        return Err(Error::Data("mape of no values".into()));
    }
    let s: f64 = y_true.data().iter().zip(y_pred.data()).map(|(a, b)| (a - b).abs() / a.abs().max(epsilon)).sum();
    Ok(100.0 * s / y_true.len() as f64)
}

fn check_labels(op: &'static str, labels: &[usize], k: usize) -> Result<()> {
    if let Some(&bad) = labels.iter().find(|&&d| d >= k) {
        return Err(Error::Index { what: op, index: bad, size: k });
    }
    Ok(())
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::dim("accuracy", format!("{} predictions vs {} labels", pred.len(), truth.len())));
    }
    if pred.is_empty() {
        return Err(Error::Data("accuracy of no labels".into()));
    }
    Ok(pred.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / pred.len() as f64)
}

/// Relabeling `perm` that maximizes accuracy, and the relabeled
/// predictions `perm[pred[t]]`. Ties go to the lexicographically smallest
/// permutation.
pub fn align_labels(pred: &[usize], truth: &[usize], k: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    if k > MAX_ALIGN_K {
        return Err(Error::Config(format!("exhaustive label alignment supports K <= {MAX_ALIGN_K}, got {k}")));
    }
    if pred.len() != truth.len() {
        return Err(Error::dim("align_labels", format!("{} predictions vs {} labels", pred.len(), truth.len())));
    }
    check_labels("predicted label", pred, k)?;
    check_labels("true label", truth, k)?;
    let mut confusion = vec![vec![0usize; k]; k];
    for (&p, &t) in pred.iter().zip(truth) {
        confusion[p][t] += 1;
    }
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = perm.clone();
    let mut best_hits = None;
    loop {
        let hits: usize = (0..k).map(|p| confusion[p][perm[p]]).sum();
        if best_hits.map_or(true, |b| hits > b) {
            best_hits = Some(hits);
            best.clone_from(&perm);
        }
        if !next_permutation(&mut perm) {
            break;
        }
    }
    let aligned = pred.iter().map(|&p| best[p]).collect();
    Ok((best, aligned))
}

/// Advances to the next permutation in lexicographic order.
fn next_permutation(p: &mut [usize]) -> bool {
    let n = p.len();
    if n < 2 {
        return false;
    }
    let Some(i) = (0..n - 1).rev().find(|&i| p[i] < p[i + 1]) else { return false };
    let j = (i + 1..n).rev().find(|&j| p[j] > p[i]).expect("successor exists");
    p.swap(i, j);
    p[i + 1..].reverse();
    true
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn class_f1(pred: &[usize], truth: &[usize], c: usize) -> f64 {
    let (mut tp, mut fp, mut fneg) = (0, 0, 0);
    for (&p, &t) in pred.iter().zip(truth) {
        match (p == c, t == c) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            _ => {}
        }
    }
    let (prec, rec) = (ratio(tp, tp + fp), ratio(tp, tp + fneg));
    if prec + rec == 0.0 {
        0.0
    } else {
        2.0 * prec * rec / (prec + rec)
    }
}

/// Binary F1 with regime 1 positive when `K = 2`, macro-averaged F1
/// otherwise. Undefined ratios count as 0.
pub fn f1_score(pred: &[usize], truth: &[usize], k: usize) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::dim("f1_score", format!("{} predictions vs {} labels", pred.len(), truth.len())));
    }
    check_labels("predicted label", pred, k)?;
    check_labels("true label", truth, k)?;
    if k == 2 {
        return Ok(class_f1(pred, truth, 1));
    }
    Ok((0..k).map(|c| class_f1(pred, truth, c)).sum::<f64>() / k as f64)
}

/// Mean length of the maximal constant runs of each regime (0 if absent).
pub fn mean_durations(path: &[usize], k: usize) -> Vec<f64> {
    let mut total = vec![0usize; k];
    let mut runs = vec![0usize; k];
    let mut i = 0;
    while i < path.len() {
        let d = path[i];
        let mut j = i;
        while j < path.len() && path[j] == d {
            j += 1;
        }
        if d < k {
            total[d] += j - i;
            runs[d] += 1;
        }
        i = j;
    }
    total.iter().zip(&runs).map(|(&t, &r)| ratio(t, r)).collect()
}

/// Everything reported for one evaluated forecast or segmentation.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub rmse: Option<f64>,
    pub mape: Option<f64>,
    /// Fraction of targets inside the predictive interval.
    pub coverage: Option<f64>,
    pub accuracy: Option<f64>,
    pub f1: Option<f64>,
    pub duration_per_regime: Option<Vec<f64>>,
    pub label_permutation: Option<Vec<usize>>,
}

impl MetricsRecord {
    /// Regime metrics of `pred` against `truth` after alignment.
    pub fn regimes(pred: &[usize], truth: &[usize], k: usize) -> Result<Self> {
        let (perm, aligned) = align_labels(pred, truth, k)?;
        Ok(MetricsRecord {
            accuracy: Some(accuracy(&aligned, truth)?),
            f1: Some(f1_score(&aligned, truth, k)?),
            duration_per_regime: Some(mean_durations(&aligned, k)),
            label_permutation: Some(perm),
            ..Default::default()
        })
    }

    /// `key=value` lines, with `prefix.` before every key; absent metrics are
    /// omitted and lists are comma separated.
    pub fn to_kv(&self, prefix: &str) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| writeln!(s, "{prefix}{k}={v}").unwrap();
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        if let Some(v) = self.rmse {
            put("rmse", v.to_string());
        }
        if let Some(v) = self.mape {
            put("mape", v.to_string());
        }
        if let Some(v) = self.coverage {
            put("coverage", v.to_string());
        }
        if let Some(v) = self.accuracy {
            put("accuracy", v.to_string());
        }
        if let Some(v) = self.f1 {
            put("f1", v.to_string());
        }
        if let Some(v) = &self.duration_per_regime {
            put("duration_per_regime", join(v));
        }
        if let Some(v) = &self.label_permutation {
            put("label_permutation", v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","));
        }
        s
    }

    /// `true` when every present number is finite.
    pub fn is_finite(&self) -> bool {
        [self.rmse, self.mape, self.coverage, self.accuracy, self.f1].iter().flatten().all(|v| v.is_finite())
            && self.duration_per_regime.iter().flatten().all(|v| v.is_finite())
    }
}
