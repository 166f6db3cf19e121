//! Differentiable numerics: tensors, parameter sets, a reverse-mode tape,
//! layer primitives and closed-form densities.

pub mod density;
pub mod layers;
pub mod params;
pub mod tape;
pub mod tensor;

pub use density::{categorical_kl, gaussian_kl, gaussian_log_pdf, softmax};
pub use layers::{affine, gru_cell, mlp2, BoundGru, BoundMlp2, BoundSet, GruShape, Mlp2Shape};
pub use params::{Param, ParamSet};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
