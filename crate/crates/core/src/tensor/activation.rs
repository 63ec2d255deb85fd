use serde::{Deserialize, Serialize};

use super::Matrix;

/// Elementwise `max(0, x)`.
pub fn relu(x: &Matrix) -> Matrix {
    x.map(|v| v.max(0.0))
}

/// Pointwise nonlinearity applied after a layer's linear map.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Identity,
}

impl Activation {
    pub fn apply(self, x: &Matrix) -> Matrix {
        match self {
            Activation::Relu => relu(x),
            Activation::Identity => x.clone(),
        }
    }

    pub fn apply_inplace(self, x: &mut Matrix) {
        if self == Activation::Relu {
            x.map_inplace(|v| v.max(0.0));
        }
    }

    /// Derivative at a pre-activation value. The ReLU kink at exactly zero
    /// takes the subgradient 0.
    #[inline]
    pub fn slope(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}
