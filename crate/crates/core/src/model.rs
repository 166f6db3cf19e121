//! The full model: generative and inference parameters plus their dimensions.

use std::collections::BTreeMap;

use crate::config::ModelConfig;
use crate::diffcore::{BoundSet, Gradients, ParamSet, Tape, Tensor};
use crate::error::{Error, Result};
use crate::generative::{BoundGenerative, GenerativeParams};
use crate::inference::{BoundInference, InferenceParams};
use crate::rng::seeded;

/// One aligned pair of input and observation sequences, `T × U` and `T × D`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    pub x: Tensor,
    pub y: Tensor,
}

impl Sequence {
    pub fn new(x: Tensor, y: Tensor) -> Result<Self> {
        if x.rows() != y.rows() || x.rank() != 2 || y.rank() != 2 {
            return Err(Error::dim("Sequence", format!("x {:?} and y {:?} must be T×U and T×D", x.shape(), y.shape())));
        }
        Ok(Sequence { x, y })
    }

    pub fn len(&self) -> usize {
        self.y.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The first `t` steps.
    pub fn prefix(&self, t: usize) -> Sequence {
        let cut = |m: &Tensor| Tensor::matrix(t, m.cols(), m.data()[..t * m.cols()].to_vec()).expect("prefix fits");
        Sequence { x: cut(&self.x), y: cut(&self.y) }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ds3m {
    pub config: ModelConfig,
    pub gen: GenerativeParams,
    pub inf: InferenceParams,
}

impl Ds3m {
    /// Random initialization, reproducible for a fixed seed.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded(seed);
        let gen = GenerativeParams::init(&config, &mut rng);
        let inf = InferenceParams::init(&config, &mut rng);
        Ok(Ds3m { config, gen, inf })
    }

    pub fn named_sets(&self) -> Vec<(String, &ParamSet)> {
        let mut v = self.gen.named_sets();
        v.extend(self.inf.named_sets());
        v
    }

    pub fn named_sets_mut(&mut self) -> Vec<(String, &mut ParamSet)> {
        let mut v = self.gen.named_sets_mut();
        v.extend(self.inf.named_sets_mut());
        v
    }

    pub fn num_scalars(&self) -> usize {
        self.named_sets().iter().map(|(_, ps)| ps.num_scalars()).sum()
    }

    /// All tensors keyed `set/name`, in a fixed order.
    pub fn flat_params(&self) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        for (set, ps) in self.named_sets() {
            for (name, p) in ps.iter() {
                out.insert(format!("{set}/{name}"), p.value.clone());
            }
        }
        out
    }

    pub fn check_data(&self, seq: &Sequence) -> Result<()> {
        let c = &self.config;
        if seq.x.cols() != c.input_dim || seq.y.cols() != c.obs_dim {
            return Err(Error::dim(
                "Ds3m",
                format!("sequence widths (U={}, D={}) vs model (U={}, D={})", seq.x.cols(), seq.y.cols(), c.input_dim, c.obs_dim),
            ));
        }
        Ok(())
    }
}

/// A [`Ds3m`] recorded on a tape.
pub struct BoundDs3m<'t> {
    pub gen: BoundGenerative<'t>,
    pub inf: BoundInference<'t>,
    sets: Vec<(String, BoundSet<'t>)>,
}

impl<'t> BoundDs3m<'t> {
    pub fn bind(tape: &'t Tape, model: &Ds3m) -> Result<Self> {
        let gen_sets: Vec<BoundSet<'t>> = model.gen.named_sets().into_iter().map(|(_, ps)| BoundSet::new(tape, ps)).collect();
        let inf_sets: Vec<BoundSet<'t>> = model.inf.named_sets().into_iter().map(|(_, ps)| BoundSet::new(tape, ps)).collect();
        let gen = BoundGenerative::from_sets(&model.gen, &gen_sets, &model.config)?;
        let inf = BoundInference::from_sets(&inf_sets, model.config.regimes)?;
        let names = model.named_sets().into_iter().map(|(n, _)| n);
        let sets = names.zip(gen_sets.into_iter().chain(inf_sets)).collect();
        Ok(BoundDs3m { gen, inf, sets })
    }

    /// Gradient mapping per parameter set, with the same keys as the model.
    pub fn grads(&self, g: &Gradients) -> Vec<(String, BTreeMap<String, Tensor>)> {
        self.sets.iter().map(|(n, s)| (n.clone(), s.grads(g))).collect()
    }
}
