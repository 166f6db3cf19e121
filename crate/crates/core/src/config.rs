use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Log-variance outputs are clamped into this range before exponentiation.
pub const LOGVAR_MIN: f64 = -10.0;
pub const LOGVAR_MAX: f64 = 10.0;

/// Output distribution of `y_t` given the latent state.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmissionFamily {
    #[default]
    Gaussian,
    /// Gaussian on `ln y`, with the change-of-variables term in the density.
    Lognormal,
}

/// Model dimensions and output family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Number of regimes `K`.
    pub regimes: usize,
    /// Observation width `D`.
    pub obs_dim: usize,
    /// Input width `U`.
    pub input_dim: usize,
    /// RNN hidden width `H` (forward and backward).
    pub hidden_dim: usize,
    /// Continuous latent width `Z`.
    pub latent_dim: usize,
    #[serde(default)]
    pub emission: EmissionFamily,
}

impl ModelConfig {
    /// Toy-study dimensions: one observed series, `Z = 2`, `H = 10`.
    pub fn toy() -> Self {
        ModelConfig { regimes: 2, obs_dim: 1, input_dim: 1, hidden_dim: 10, latent_dim: 2, emission: EmissionFamily::Gaussian }
    }

    /// Lorenz-study dimensions: ten observed series, `Z = 3`, `H = 20`.
    pub fn lorenz() -> Self {
        ModelConfig { regimes: 2, obs_dim: 10, input_dim: 10, hidden_dim: 20, latent_dim: 3, emission: EmissionFamily::Gaussian }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("regimes", self.regimes),
            ("obs_dim", self.obs_dim),
            ("input_dim", self.input_dim),
            ("hidden_dim", self.hidden_dim),
            ("latent_dim", self.latent_dim),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("model.{name} must be positive")));
            }
        }
        Ok(())
    }
}
