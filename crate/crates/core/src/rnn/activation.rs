use serde::{Deserialize, Serialize};

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Piecewise-linear `clamp(0.2 x + 0.5, 0, 1)`.
pub fn hard_sigmoid(x: f64) -> f64 {
    (0.2 * x + 0.5).clamp(0.0, 1.0)
}

/// Slope of [`hard_sigmoid`]; zero on the saturated parts and at the kinks.
pub fn hard_sigmoid_grad(x: f64) -> f64 {
    let y = 0.2 * x + 0.5;
    if y > 0.0 && y < 1.0 {
        0.2
    } else {
        0.0
    }
}

pub fn tanh(x: f64) -> f64 {
    x.tanh()
}

/// Squashing functions selectable for gates and the LSTM cell input/output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sigmoid,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => tanh(x),
        }
    }

    /// Derivative expressed through the activation's output `y`.
    #[inline]
    pub fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

/// Activation choices of a network. The GRU candidate is always tanh.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Activations {
    pub gate: Activation,
    pub cell_input: Activation,
    pub cell_output: Activation,
}

impl Default for Activations {
    fn default() -> Self {
        Self {
            gate: Activation::Sigmoid,
            cell_input: Activation::Sigmoid,
            cell_output: Activation::Sigmoid,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn values() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert_eq!(hard_sigmoid(0.0), 0.5);
        assert_eq!(hard_sigmoid(3.0), 1.0);
        assert_eq!(hard_sigmoid(-3.0), 0.0);
        assert_eq!(tanh(0.0), 0.0);
        assert!(sigmoid(-1000.0).is_finite() && sigmoid(1000.0) == 1.0);
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(hard_sigmoid_grad(0.0), 0.2);
        assert_eq!(hard_sigmoid_grad(2.5), 0.0);
    }
}
