//! Windowing, chronological splits and per-dimension normalization.

use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::model::Sequence;

/// A length-`L` slice of a series starting at `start`, with `x_t = y_{t-1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub start: usize,
    pub seq: Sequence,
}

impl Window {
    /// Index in the source series of the window's last step.
    pub fn end(&self) -> usize {
        self.start + self.seq.len() - 1
    }
}

/// All stride-1 windows of `series` (`T_total × D`), `T_total − L + 1` of them.
///
/// Inputs are the lagged observations. The first window has no observation
/// before it and uses a zero row for `x_1`.
pub fn make_windows(series: &Tensor, window_len: usize) -> Result<Vec<Window>> {
    if window_len < 2 {
        return Err(Error::Config(format!("window length must be at least 2, got {window_len}")));
    }
    let total = series.rows();
    if total < window_len {
        return Err(Error::Data(format!("series of length {total} is shorter than the window length {window_len}")));
    }
    let d = series.cols();
    let mut out = Vec::with_capacity(total - window_len + 1);
    for start in 0..=total - window_len {
        let y = series.data()[start * d..(start + window_len) * d].to_vec();
        let mut x = Vec::with_capacity(window_len * d);
        if start == 0 {
            x.extend(std::iter::repeat(0.0).take(d));
            x.extend_from_slice(&series.data()[..(window_len - 1) * d]);
        } else {
            x.extend_from_slice(&series.data()[(start - 1) * d..(start - 1 + window_len) * d]);
        }
        let seq = Sequence::new(Tensor::matrix(window_len, d, x)?, Tensor::matrix(window_len, d, y)?)?;
        out.push(Window { start, seq });
    }
    Ok(out)
}

/// Chronological split sizes, in windows.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSizes {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

impl SplitSizes {
    pub fn total(&self) -> usize {
        self.train + self.validation + self.test
    }
}

/// Per-dimension affine standardization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn identity(d: usize) -> Self {
        Normalizer { mean: vec![0.0; d], std: vec![1.0; d] }
    }

    /// Mean and population standard deviation over every row of every matrix.
    /// A constant dimension gets unit scale.
    pub fn fit(parts: &[&Tensor]) -> Result<Self> {
        let d = parts.first().ok_or_else(|| Error::Data("cannot fit normalization on no data".into()))?.cols();
        let mut n = 0usize;
        let mut sum = vec![0.0; d];
        for p in parts {
            if p.cols() != d {
                return Err(Error::dim("Normalizer::fit", "parts differ in width"));
            }
            for r in 0..p.rows() {
                for (s, v) in sum.iter_mut().zip(p.row(r)) {
                    *s += v;
                }
            }
            n += p.rows();
        }
        if n == 0 {
            return Err(Error::Data("cannot fit normalization on no data".into()));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let mut ss = vec![0.0; d];
        for p in parts {
            for r in 0..p.rows() {
                for ((s, v), m) in ss.iter_mut().zip(p.row(r)).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
        }
        let std = ss.iter().map(|s| (s / n as f64).sqrt()).map(|s| if s > 0.0 && s.is_finite() { s } else { 1.0 }).collect();
        Ok(Normalizer { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn apply(&self, m: &Tensor, f: impl Fn(f64, f64, f64) -> f64) -> Result<Tensor> {
        if m.cols() != self.dim() {
            return Err(Error::dim("Normalizer", format!("width {} vs {}", m.cols(), self.dim())));
        }
        let d = self.dim();
        let data = m.data().iter().enumerate().map(|(i, &v)| f(v, self.mean[i % d], self.std[i % d])).collect();
        Tensor::new(m.shape().to_vec(), data)
    }

    pub fn normalize(&self, m: &Tensor) -> Result<Tensor> {
        self.apply(m, |v, mu, s| (v - mu) / s)
    }

    pub fn denormalize(&self, m: &Tensor) -> Result<Tensor> {
        self.apply(m, |v, mu, s| v * s + mu)
    }
}

/// Train, validation and test windows in normalized units.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<Window>,
    pub validation: Vec<Window>,
    pub test: Vec<Window>,
    pub normalizer: Normalizer,
}

impl DatasetSplit {
    /// Windows the series, keeps the last `sizes.total()` windows that have a
    /// real lagged input, splits them chronologically and standardizes with
    /// statistics of the training windows' observations.
    pub fn from_series(series: &Tensor, window_len: usize, sizes: SplitSizes) -> Result<Self> {
        Self::build(series, window_len, sizes, true)
    }

    /// [`from_series`](Self::from_series) with scaling only, which keeps
    /// positive data positive.
    pub fn from_series_uncentered(series: &Tensor, window_len: usize, sizes: SplitSizes) -> Result<Self> {
        Self::build(series, window_len, sizes, false)
    }

    fn build(series: &Tensor, window_len: usize, sizes: SplitSizes, center: bool) -> Result<Self> {
        if sizes.train == 0 || sizes.validation == 0 || sizes.test == 0 {
            return Err(Error::Config("train, validation and test splits must be nonempty".into()));
        }
        let windows = make_windows(series, window_len)?;
        let usable = windows.len() - 1;
        if sizes.total() > usable {
            return Err(Error::Data(format!(
                "split sizes {}/{}/{} need {} windows, series of length {} gives {usable}",
                sizes.train,
                sizes.validation,
                sizes.test,
                sizes.total(),
                series.rows()
            )));
        }
        let mut kept: Vec<Window> = windows.into_iter().skip(1 + usable - sizes.total()).collect();
        let test = kept.split_off(sizes.train + sizes.validation);
        let validation = kept.split_off(sizes.train);
        let train = kept;
        let mut normalizer = Normalizer::fit(&train.iter().map(|w| &w.seq.y).collect::<Vec<_>>())?;
        if !center {
            normalizer.mean.fill(0.0);
        }
        let norm = |ws: Vec<Window>| -> Result<Vec<Window>> {
            ws.into_iter()
                .map(|w| Ok(Window { start: w.start, seq: Sequence::new(normalizer.normalize(&w.seq.x)?, normalizer.normalize(&w.seq.y)?)? }))
                .collect()
        };
        Ok(DatasetSplit { train: norm(train)?, validation: norm(validation)?, test: norm(test)?, normalizer })
    }

    pub fn window_len(&self) -> usize {
        self.train[0].seq.len()
    }
}

/// Windows of `series` in `normalizer` units, without the zero-padded
/// first window.
pub fn normalized_windows(series: &Tensor, window_len: usize, normalizer: &Normalizer) -> Result<Vec<Window>> {
    let scaled = normalizer.normalize(series)?;
    Ok(make_windows(&scaled, window_len)?.into_iter().skip(1).collect())
}

/// Borrowed sequences of a list of windows.
pub fn sequences(windows: &[Window]) -> Vec<&Sequence> {
    windows.iter().map(|w| &w.seq).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize, d: usize) -> Tensor {
        Tensor::matrix(n, d, (0..n * d).map(|i| i as f64).collect()).unwrap()
    }

    #[test]
    fn window_counts() {
        assert_eq!(make_windows(&ramp(2000, 1), 20).unwrap().len(), 1981);
        assert_eq!(make_windows(&ramp(3000, 10), 5).unwrap().len(), 2996);
        assert_eq!(make_windows(&ramp(7, 1), 7).unwrap().len(), 1);
        assert!(matches!(make_windows(&ramp(4, 1), 5), Err(Error::Data(_))));
        assert!(matches!(make_windows(&ramp(4, 1), 1), Err(Error::Config(_))));
    }

    #[test]
    fn inputs_are_lagged_observations() {
        let s = ramp(6, 2);
        let w = make_windows(&s, 3).unwrap();
        assert_eq!(w[0].seq.x.data(), &[0.0, 0.0, 0.0, 1.0, 2.0, 3.0]);
        assert_eq!(w[2].seq.x.data(), &[2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
        assert_eq!(w[2].seq.y.data(), &[4.0, 5.0, 6.0, 7.0, 8.0, 9.0]);
        assert_eq!(w[2].end(), 4);
    }

    #[test]
    fn split_sizes_follow_the_studies() {
        let toy = DatasetSplit::from_series(&ramp(2000, 1), 20, SplitSizes { train: 1000, validation: 480, test: 500 }).unwrap();
        assert_eq!((toy.train.len(), toy.validation.len(), toy.test.len()), (1000, 480, 500));
        assert_eq!(toy.train[0].start, 1);
        assert_eq!(toy.test.last().unwrap().end(), 1999);
        let lor = DatasetSplit::from_series(&ramp(3000, 2), 5, SplitSizes { train: 1000, validation: 990, test: 1000 }).unwrap();
        assert_eq!(lor.train.len() + lor.validation.len() + lor.test.len(), 2990);
        assert_eq!(lor.test.last().unwrap().end(), 2999);
        assert!(DatasetSplit::from_series(&ramp(100, 1), 20, SplitSizes { train: 50, validation: 20, test: 20 }).is_err());
    }

    #[test]
    fn statistics_come_from_training_windows_only() {
        let mut s = ramp(40, 1);
        let a = DatasetSplit::from_series(&s, 4, SplitSizes { train: 20, validation: 5, test: 5 }).unwrap();
        for v in &mut s.data_mut()[30..] {
            *v = 1e6;
        }
        let b = DatasetSplit::from_series(&s, 4, SplitSizes { train: 20, validation: 5, test: 5 }).unwrap();
        assert_eq!(a.normalizer, b.normalizer);
        let m: f64 = a.train.iter().map(|w| w.seq.y.sum()).sum::<f64>() / (20.0 * 4.0);
        assert!(m.abs() < 1e-12);
    }

    #[test]
    fn constant_dimension_gets_unit_scale() {
        let t = Tensor::matrix(3, 2, vec![1.0, 5.0, 2.0, 5.0, 3.0, 5.0]).unwrap();
        let n = Normalizer::fit(&[&t]).unwrap();
        assert_eq!(n.std[1], 1.0);
        assert_eq!(n.mean, vec![2.0, 5.0]);
    }
}
