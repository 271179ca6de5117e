//! Recurrent networks written from scratch: LSTM and GRU layers, a stacked
//! network with a hard-sigmoid dense head, exact backpropagation through
//! time and the ADAM optimizer.

pub mod activation;
pub mod adam;
pub mod gru;
pub mod linalg;
pub mod lstm;
pub mod network;
pub mod persist;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use activation::{hard_sigmoid, sigmoid, tanh, Activation, Activations};
pub use adam::{adam_update, Adam, AdamHyper};
pub use gru::GruLayerParams;
pub use lstm::{LstmLayerParams, LstmState};
pub use network::{mse_loss, DenseHead, NetworkOptions, RecurrentLayer, RecurrentNetwork, Tape};
pub use persist::TrainedModel;

#[derive(Debug, Error, PartialEq)]
pub enum NetworkError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("tape does not match network: {0}")]
    TapeMismatch(String),
    #[error("length mismatch: {0} predictions vs {1} targets")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    Empty,
    #[error("invalid model document: {0}")]
    InvalidDocument(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CellKind {
    #[serde(rename = "LSTM")]
    Lstm,
    #[serde(rename = "GRU")]
    Gru,
}

impl CellKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CellKind::Lstm => "LSTM",
            CellKind::Gru => "GRU",
        }
    }
}

impl std::fmt::Display for CellKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for CellKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "LSTM" => Ok(CellKind::Lstm),
            "GRU" => Ok(CellKind::Gru),
            other => Err(format!("unknown cell kind {other:?}")),
        }
    }
}

/// Uniform on `±sqrt(6 / (fan_in + fan_out))`.
pub(crate) fn glorot<R: Rng>(m: &mut [f64], fan_in: usize, fan_out: usize, rng: &mut R) {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for w in m.iter_mut() {
        *w = rng.random_range(-a..a);
    }
}
