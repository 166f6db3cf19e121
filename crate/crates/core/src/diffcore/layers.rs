//! Network building blocks: affine maps, GRU cells and two-layer tanh MLPs.
//!
//! Each block stores its weights in a [`ParamSet`] under fixed names. Binding
//! a set to a tape resolves the names once so the per-step work is only
//! arithmetic.

use std::collections::BTreeMap;

use rand::Rng;

use super::params::{uniform_init, ParamSet};
use super::tape::{Gradients, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// `weight·x + bias` on plain tensors (rows of `x` are independent inputs).
pub fn affine(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let tape = Tape::new();
    let (x, w, b) = (tape.leaf(x.clone()), tape.leaf(weight.clone()), tape.leaf(bias.clone()));
    let out = x.affine(w, Some(b))?;
    let v = out.value().clone();
    Ok(v)
}

/// A [`ParamSet`] whose entries have been recorded as tape leaves.
pub struct BoundSet<'t> {
    vars: BTreeMap<String, Var<'t>>,
}

impl<'t> BoundSet<'t> {
    pub fn new(tape: &'t Tape, params: &ParamSet) -> Self {
        let vars = params.iter().map(|(name, p)| (name.to_string(), tape.leaf(p.value.clone()))).collect();
        BoundSet { vars }
    }

    pub fn get(&self, name: &str) -> Result<Var<'t>> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))
    }

    /// Gradient mapping with the same keys as the bound set.
    pub fn grads(&self, g: &Gradients) -> BTreeMap<String, Tensor> {
        self.vars.iter().map(|(k, v)| (k.clone(), g.wrt(*v))).collect()
    }
}

/// Single-layer gated recurrent unit.
///
/// ```text
/// u  = σ(W_u x + U_u h + b_u)          update gate
/// r  = σ(W_r x + U_r h + b_r)          reset gate
/// n  = tanh(W_n x + U_n (r ⊙ h) + b_n) candidate
/// h' = u ⊙ n + (1 − u) ⊙ h
/// ```
#[derive(Clone, Copy, Debug)]
pub struct GruShape {
    pub input: usize,
    pub hidden: usize,
}

const GRU_KEYS: [&str; 9] = ["w_u", "u_u", "b_u", "w_r", "u_r", "b_r", "w_n", "u_n", "b_n"];

impl GruShape {
    pub fn init(&self, rng: &mut impl Rng) -> ParamSet {
        let mut ps = ParamSet::new();
        let fan = self.hidden;
        for gate in ["u", "r", "n"] {
            ps.insert(format!("w_{gate}"), uniform_init(rng, &[self.hidden, self.input], fan)).unwrap();
            ps.insert(format!("u_{gate}"), uniform_init(rng, &[self.hidden, self.hidden], fan)).unwrap();
            ps.insert(format!("b_{gate}"), uniform_init(rng, &[self.hidden], fan)).unwrap();
        }
        ps
    }

    pub fn zeros(&self) -> ParamSet {
        let mut ps = self.init(&mut rand::rngs::mock::StepRng::new(0, 0));
        ps.zero_all();
        ps
    }
}

pub struct BoundGru<'t> {
    w: [Var<'t>; 9],
    hidden: usize,
}

impl<'t> BoundGru<'t> {
    pub fn bind(tape: &'t Tape, params: &ParamSet) -> Result<Self> {
        let set = BoundSet::new(tape, params);
        Self::from_set(&set)
    }

    pub fn from_set(set: &BoundSet<'t>) -> Result<Self> {
        let mut w = Vec::with_capacity(9);
        for k in GRU_KEYS {
            w.push(set.get(k)?);
        }
        let hidden = w[0].value().rows();
        let w: [Var<'t>; 9] = w.try_into().expect("nine gru weights");
        Ok(BoundGru { w, hidden })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn step(&self, h_prev: Var<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let [w_u, u_u, b_u, w_r, u_r, b_r, w_n, u_n, b_n] = self.w;
        if h_prev.value().cols() != self.hidden {
            return Err(Error::dim("gru_cell", format!("h_prev width {} vs hidden {}", h_prev.value().cols(), self.hidden)));
        }
        let u = x.affine(w_u, Some(b_u))?.add(h_prev.affine(u_u, None)?)?.sigmoid();
        let r = x.affine(w_r, Some(b_r))?.add(h_prev.affine(u_r, None)?)?.sigmoid();
        let n = x.affine(w_n, Some(b_n))?.add(r.mul(h_prev)?.affine(u_n, None)?)?.tanh();
        // h' = h + u ⊙ (n − h)
        h_prev.add(u.mul(n.sub(h_prev)?)?)
    }
}

/// One GRU update recorded on `h_prev`'s tape.
pub fn gru_cell<'t>(h_prev: Var<'t>, x: Var<'t>, params: &ParamSet) -> Result<Var<'t>> {
    BoundGru::bind(h_prev.tape(), params)?.step(h_prev, x)
}

/// Two-layer perceptron `l2(tanh(l1 x))`.
#[derive(Clone, Copy, Debug)]
pub struct Mlp2Shape {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
}

impl Mlp2Shape {
    /// Hidden width equal to the output width.
    pub fn square_hidden(input: usize, output: usize) -> Self {
        Mlp2Shape { input, hidden: output, output }
    }

    pub fn init(&self, rng: &mut impl Rng) -> ParamSet {
        let mut ps = ParamSet::new();
        ps.insert("l1.w", uniform_init(rng, &[self.hidden, self.input], self.input)).unwrap();
        ps.insert("l1.b", uniform_init(rng, &[self.hidden], self.input)).unwrap();
        ps.insert("l2.w", uniform_init(rng, &[self.output, self.hidden], self.hidden)).unwrap();
        ps.insert("l2.b", uniform_init(rng, &[self.output], self.hidden)).unwrap();
        ps
    }
}

pub struct BoundMlp2<'t> {
    l1_w: Var<'t>,
    l1_b: Var<'t>,
    l2_w: Var<'t>,
    l2_b: Var<'t>,
}

impl<'t> BoundMlp2<'t> {
    pub fn bind(tape: &'t Tape, params: &ParamSet) -> Result<Self> {
        Self::from_set(&BoundSet::new(tape, params))
    }

    pub fn from_set(set: &BoundSet<'t>) -> Result<Self> {
        Ok(BoundMlp2 { l1_w: set.get("l1.w")?, l1_b: set.get("l1.b")?, l2_w: set.get("l2.w")?, l2_b: set.get("l2.b")? })
    }

    pub fn forward(&self, x: Var<'t>) -> Result<Var<'t>> {
        x.affine(self.l1_w, Some(self.l1_b))?.tanh().affine(self.l2_w, Some(self.l2_b))
    }
}

pub fn mlp2<'t>(x: Var<'t>, params: &ParamSet) -> Result<Var<'t>> {
    BoundMlp2::bind(x.tape(), params)?.forward(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn affine_examples() {
        let x = Tensor::vector(vec![1.0, 2.0]);
        let out = affine(&x, &Tensor::identity(2), &Tensor::vector(vec![0.0, 0.0])).unwrap();
        assert_eq!(out.data(), &[1.0, 2.0]);

        let w = Tensor::matrix(2, 2, vec![1.0, 1.0, 1.0, -1.0]).unwrap();
        let out = affine(&Tensor::vector(vec![1.0, 1.0]), &w, &Tensor::vector(vec![0.5, 0.5])).unwrap();
        assert_eq!(out.data(), &[2.5, 0.5]);

        let b = Tensor::vector(vec![0.3, -0.7]);
        let out = affine(&Tensor::vector(vec![0.0, 0.0]), &w, &b).unwrap();
        assert_eq!(out.data(), b.data());

        let err = affine(&Tensor::vector(vec![1.0, 2.0, 3.0]), &w, &b).unwrap_err();
        assert!(matches!(err, Error::Dimension { op: "affine", .. }));
    }

    #[test]
    fn gru_zero_weights_is_fixed_point() {
        let shape = GruShape { input: 3, hidden: 4 };
        let params = shape.zeros();
        let tape = Tape::new();
        let h = tape.leaf(Tensor::zeros(&[4]));
        let x = tape.leaf(Tensor::vector(vec![0.3, -2.0, 5.0]));
        let out = gru_cell(h, x, &params).unwrap();
        assert_eq!(out.value().data(), &[0.0; 4]);
    }

    #[test]
    fn gru_missing_key_is_config_error() {
        let mut params = GruShape { input: 1, hidden: 1 }.zeros();
        let mut trimmed = ParamSet::new();
        for (k, p) in params.iter_mut() {
            if k != "b_r" {
                trimmed.insert(k, p.value.clone()).unwrap();
            }
        }
        let tape = Tape::new();
        let h = tape.leaf(Tensor::zeros(&[1]));
        let x = tape.leaf(Tensor::zeros(&[1]));
        assert!(matches!(gru_cell(h, x, &trimmed), Err(Error::Config(_))));
    }

    #[test]
    fn mlp2_examples() {
        let shape = Mlp2Shape { input: 1, hidden: 1, output: 1 };
        let mut ps = shape.init(&mut rand::rngs::mock::StepRng::new(0, 0));
        for (name, p) in ps.iter_mut() {
            p.value.data_mut()[0] = if name.ends_with(".w") { 1.0 } else { 0.0 };
        }
        let tape = Tape::new();
        let out = mlp2(tape.leaf(Tensor::vector(vec![1.0])), &ps).unwrap();
        assert_abs_diff_eq!(out.value().item(), 0.761_594_155_955_764_9, epsilon = 1e-12);

        let mut zero = Mlp2Shape { input: 3, hidden: 2, output: 2 }.init(&mut rand::rngs::mock::StepRng::new(0, 0));
        zero.zero_all();
        *zero.get_mut("l2.b").unwrap() = Tensor::vector(vec![0.25, -4.0]);
        let out = mlp2(tape.leaf(Tensor::vector(vec![1.0, 2.0, 3.0])), &zero).unwrap();
        assert_eq!(out.value().data(), &[0.25, -4.0]);
    }
}
