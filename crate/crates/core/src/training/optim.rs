//! Adam with bias correction, and global-norm gradient clipping.

use std::collections::BTreeMap;

use crate::diffcore::{ParamSet, Tensor};
use crate::error::{Error, Result};

/// Gradients grouped like `named_sets`: `(set name, parameter name → gradient)`.
pub type GradSets = Vec<(String, BTreeMap<String, Tensor>)>;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

#[derive(Clone, Debug, Default)]
pub struct Adam {
    step: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update of every trainable parameter with step size `lr`.
    pub fn update(&mut self, params: Vec<(String, &mut ParamSet)>, grads: &GradSets, lr: f64) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Contract(format!("{} parameter sets vs {} gradient sets", params.len(), grads.len())));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        for ((set, ps), (gset, g)) in params.into_iter().zip(grads) {
            if &set != gset {
                return Err(Error::Contract(format!("gradient set `{gset}` does not match parameter set `{set}`")));
            }
            for (name, p) in ps.iter_mut() {
                if !p.trainable {
                    continue;
                }
                let grad = g.get(name).ok_or_else(|| Error::Contract(format!("no gradient for `{set}/{name}`")))?;
                if !grad.same_shape(&p.value) {
                    return Err(Error::dim("Adam::update", format!("`{set}/{name}` gradient shape {:?}", grad.shape())));
                }
                let key = format!("{set}/{name}");
                let m = self.m.entry(key.clone()).or_insert_with(|| Tensor::zeros(p.value.shape()));
                let v = self.v.entry(key).or_insert_with(|| Tensor::zeros(p.value.shape()));
                for i in 0..grad.len() {
                    let gi = grad.data()[i];
                    let mi = BETA1 * m.data()[i] + (1.0 - BETA1) * gi;
                    let vi = BETA2 * v.data()[i] + (1.0 - BETA2) * gi * gi;
                    m.data_mut()[i] = mi;
                    v.data_mut()[i] = vi;
                    p.value.data_mut()[i] -= lr * (mi / c1) / ((vi / c2).sqrt() + EPSILON);
                }
            }
        }
        Ok(())
    }
}

/// Euclidean norm over all gradients.
pub fn global_norm(grads: &GradSets) -> f64 {
    grads.iter().flat_map(|(_, g)| g.values()).map(Tensor::sq_norm).sum::<f64>().sqrt()
}

/// Rescales gradients in place so their global norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_global_norm(grads: &mut GradSets, max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        for (_, g) in grads.iter_mut() {
            for t in g.values_mut() {
                t.data_mut().iter_mut().for_each(|v| *v *= s);
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn one(v: f64) -> ParamSet {
        let mut ps = ParamSet::new();
        ps.insert("w", Tensor::vector(vec![v])).unwrap();
        ps
    }

    fn grad(v: f64) -> GradSets {
        vec![("s".into(), BTreeMap::from([("w".to_string(), Tensor::vector(vec![v]))]))]
    }

    #[test]
    fn first_step_moves_by_lr_against_the_gradient_sign() {
        let mut ps = one(1.0);
        let mut opt = Adam::new();
        opt.update(vec![("s".into(), &mut ps)], &grad(3.7), 0.01).unwrap();
        // bias-corrected m/√v = g/|g| on the first step
        assert_abs_diff_eq!(ps.get("w").unwrap().item(), 1.0 - 0.01 * 3.7 / (3.7 + EPSILON), epsilon = 1e-15);
    }

    #[test]
    fn matches_scalar_recursion() {
        let mut ps = one(0.5);
        let mut opt = Adam::new();
        let (mut m, mut v, mut w) = (0.0f64, 0.0f64, 0.5f64);
        for t in 1..=25 {
            let g = 2.0 * w - 0.3;
            opt.update(vec![("s".into(), &mut ps)], &grad(g), 0.05).unwrap();
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            w -= 0.05 * mh / (vh.sqrt() + 1e-8);
            assert_abs_diff_eq!(ps.get("w").unwrap().item(), w, epsilon = 1e-14);
        }
    }

    #[test]
    fn frozen_parameters_stay_put() {
        let mut ps = one(1.0);
        ps.set_trainable("w", false).unwrap();
        Adam::new().update(vec![("s".into(), &mut ps)], &grad(1.0), 0.1).unwrap();
        assert_eq!(ps.get("w").unwrap().item(), 1.0);
    }

    #[test]
    fn clipping_rescales_to_max_norm() {
        let mut g = vec![("s".into(), BTreeMap::from([("a".to_string(), Tensor::vector(vec![30.0, 40.0]))]))];
        let before = clip_global_norm(&mut g, 10.0);
        assert_eq!(before, 50.0);
        assert_abs_diff_eq!(global_norm(&g), 10.0, epsilon = 1e-12);
        let mut small = grad(0.5);
        clip_global_norm(&mut small, 10.0);
        assert_eq!(small[0].1["w"].item(), 0.5);
    }
}
