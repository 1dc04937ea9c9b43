//! Pointwise nonlinearities with their first two derivatives.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::DmftError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Linear,
    Relu,
    #[default]
    Tanh,
}

impl Activation {
    #[inline]
    pub fn eval(self, h: f64) -> f64 {
        match self {
            Activation::Linear => h,
            Activation::Relu => h.max(0.0),
            Activation::Tanh => h.tanh(),
        }
    }

    #[inline]
    pub fn deriv(self, h: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Relu => {
                if h > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = h.tanh();
                1.0 - t * t
            }
        }
    }

    /// Second derivative. The ReLU kink is ignored, so this is zero everywhere for ReLU.
    #[inline]
    pub fn second_deriv(self, h: f64) -> f64 {
        match self {
            Activation::Linear | Activation::Relu => 0.0,
            Activation::Tanh => {
                let t = h.tanh();
                -2.0 * t * (1.0 - t * t)
            }
        }
    }

    /// Degree of positive homogeneity `phi(c h) = c^q phi(h)` for `c > 0`, if any.
    pub fn homogeneity(self) -> Option<u32> {
        match self {
            Activation::Linear | Activation::Relu => Some(1),
            Activation::Tanh => None,
        }
    }

    /// Homogeneity degree of the whole network output in its parameters (no biases).
    pub fn network_degree(self, depth: usize) -> Option<f64> {
        self.homogeneity().map(|q| {
            if q == 1 {
                (depth + 1) as f64
            } else {
                let q = q as f64;
                (q.powi(depth as i32 + 1) - 1.0) / (q - 1.0)
            }
        })
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Activation::Linear => "linear",
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        };
        f.write_str(s)
    }
}

impl FromStr for Activation {
    type Err = DmftError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "linear" | "identity" => Ok(Activation::Linear),
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(DmftError::InvalidConfig(format!("unknown activation '{other}'"))),
        }
    }
}
