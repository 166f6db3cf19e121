//! Closed-form densities and divergences on plain tensors.
//!
//! These evaluate outside any tape. The tape versions live on [`super::Var`]
//! and agree with these to floating-point rounding.

use super::tape::{kl_term, softmax_in_place, LN_2PI};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Numerically stable softmax of a vector (or of each row of a matrix).
pub fn softmax(v: &Tensor) -> Result<Tensor> {
    if v.is_empty() || v.cols() == 0 {
        return Err(Error::dim("softmax", "empty vector"));
    }
    let mut out = v.clone();
    for r in 0..out.rows() {
        softmax_in_place(out.row_mut(r));
    }
    Ok(out)
}

/// Sum over dimensions of the diagonal-Gaussian log density.
pub fn gaussian_log_pdf(y: &Tensor, mu: &Tensor, logvar: &Tensor) -> Result<f64> {
    check_same("gaussian_log_pdf", &[y, mu, logvar])?;
    if !(y.is_finite() && mu.is_finite() && logvar.is_finite()) {
        return Err(Error::Numeric("gaussian_log_pdf: non-finite input".into()));
    }
    Ok(y.data()
        .iter()
        .zip(mu.data())
        .zip(logvar.data())
        .map(|((&y, &m), &lv)| -0.5 * (LN_2PI + lv + (y - m) * (y - m) * (-lv).exp()))
        .sum())
}

/// `KL(N(mu_q, e^logvar_q) || N(mu_p, e^logvar_p))` for diagonal Gaussians.
pub fn gaussian_kl(mu_q: &Tensor, logvar_q: &Tensor, mu_p: &Tensor, logvar_p: &Tensor) -> Result<f64> {
    check_same("gaussian_kl", &[mu_q, logvar_q, mu_p, logvar_p])?;
    Ok((0..mu_q.len())
        .map(|i| kl_term(mu_q.data()[i], logvar_q.data()[i], mu_p.data()[i], logvar_p.data()[i]))
        .sum())
}

/// `Σ q ln(q/p)` with `0·ln(0/p) = 0`.
///
/// Mass in `q` where `p` is zero is a [`Error::Support`] error (the divergence is `+∞`).
pub fn categorical_kl(q: &Tensor, p: &Tensor) -> Result<f64> {
    check_same("categorical_kl", &[q, p])?;
    let mut kl = 0.0;
    for (i, (&qi, &pi)) in q.data().iter().zip(p.data()).enumerate() {
        if qi == 0.0 {
            continue;
        }
        if pi == 0.0 {
            return Err(Error::Support { index: i });
        }
        kl += qi * (qi / pi).ln();
    }
    Ok(kl)
}

fn check_same(op: &'static str, ts: &[&Tensor]) -> Result<()> {
    let s = ts[0].shape();
    if ts.iter().any(|t| t.shape() != s) {
        let shapes: Vec<_> = ts.iter().map(|t| t.shape().to_vec()).collect();
        return Err(Error::dim(op, format!("shapes differ: {shapes:?}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn v(x: &[f64]) -> Tensor {
        Tensor::vector(x.to_vec())
    }

    #[test]
    fn softmax_cases() {
        assert_eq!(softmax(&v(&[0.0, 0.0])).unwrap().data(), &[0.5, 0.5]);
        let s = softmax(&v(&[1000.0, 0.0])).unwrap();
        assert!(s.is_finite());
        assert_abs_diff_eq!(s.data()[0], 1.0, epsilon = 1e-12);
        let s = softmax(&v(&[1f64.ln(), 2f64.ln(), 3f64.ln()])).unwrap();
        for (got, want) in s.data().iter().zip([1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-12);
        }
        assert!(softmax(&v(&[])).is_err());
    }

    #[test]
    fn gaussian_log_pdf_cases() {
        let z = v(&[0.0]);
        assert_abs_diff_eq!(gaussian_log_pdf(&z, &z, &z).unwrap(), -0.918_938_533_204_672_7, epsilon = 1e-12);
        assert_abs_diff_eq!(gaussian_log_pdf(&v(&[1.0]), &z, &z).unwrap(), -1.418_938_533_204_672_7, epsilon = 1e-12);
        assert!(matches!(gaussian_log_pdf(&v(&[f64::NAN]), &z, &z), Err(Error::Numeric(_))));
        assert!(gaussian_log_pdf(&v(&[0.0, 1.0]), &z, &z).is_err());
    }

    #[test]
    fn gaussian_kl_cases() {
        let z = v(&[0.0]);
        assert_eq!(gaussian_kl(&z, &z, &z, &z).unwrap(), 0.0);
        assert_abs_diff_eq!(gaussian_kl(&v(&[1.0]), &z, &z, &z).unwrap(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn categorical_kl_cases() {
        let p = v(&[0.3, 0.7]);
        assert_eq!(categorical_kl(&p, &p).unwrap(), 0.0);
        assert_abs_diff_eq!(categorical_kl(&v(&[1.0, 0.0]), &v(&[0.5, 0.5])).unwrap(), std::f64::consts::LN_2, epsilon = 1e-15);
        assert!(matches!(categorical_kl(&v(&[0.5, 0.5]), &v(&[1.0, 0.0])), Err(Error::Support { index: 1 })));
    }
}
