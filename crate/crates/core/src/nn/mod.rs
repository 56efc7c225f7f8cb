//! Critic and actor networks built on the autodiff tape.

mod actor;
mod checkpoint;
mod critic;
mod params;

use std::fmt;
use std::str::FromStr;

pub use actor::{ActorConfig, ActorNet, PolicySample, LOG_STD_MAX, LOG_STD_MIN};
pub use checkpoint::{Checkpoint, TensorRecord};
pub use critic::{CriticConfig, CriticNet, CriticTrace};
pub use params::{InitScheme, ParamId, ParamStore};

pub(crate) use params::init_weight;

use crate::error::Error;

/// Squashing applied after `AvgRNorm` in the critic's first layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Tanh,
    Sigmoid,
    Softmax,
    /// Parameter-free layer normalization.
    LayerNorm,
    None,
}

impl Activation {
    pub const ALL: [Activation; 5] = [
        Activation::Tanh,
        Activation::Sigmoid,
        Activation::Softmax,
        Activation::LayerNorm,
        Activation::None,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Softmax => "softmax",
            Activation::LayerNorm => "layernorm",
            Activation::None => "none",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Activation::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown activation `{s}` (expected tanh, sigmoid, softmax, layernorm or none)"
                ))
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn activation_names_round_trip() {
        for a in Activation::ALL {
            assert_eq!(a.to_string().parse::<Activation>().unwrap(), a);
        }
        assert!("relu".parse::<Activation>().is_err());
    }
}
