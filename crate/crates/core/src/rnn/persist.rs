//! JSON persistence of a trained network with its scaler.

use serde::{Deserialize, Serialize};

use super::activation::Activations;
use super::network::{DenseHead, RecurrentLayer, RecurrentNetwork};
use super::{CellKind, NetworkError};
use crate::prep::MinMaxScaler;

/// A network plus everything needed to apply it to a raw series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainedModel {
    pub cell_kind: CellKind,
    pub window: usize,
    pub activations: Activations,
    pub layers: Vec<RecurrentLayer>,
    pub head: DenseHead,
    pub scaler: MinMaxScaler,
    /// 1-based cluster number the model was trained on.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_ratio: Option<f64>,
    /// Test RMSE on the scaled series at training time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_rmse: Option<f64>,
    /// Cells whose mean series the model was trained on.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub members: Option<Vec<u64>>,
}

impl TrainedModel {
    pub fn new(net: RecurrentNetwork, scaler: MinMaxScaler) -> Self {
        Self {
            cell_kind: net.cell_kind,
            window: net.window,
            activations: net.activations,
            layers: net.layers,
            head: net.head,
            scaler,
            cluster: None,
            label: None,
            seed: None,
            train_ratio: None,
            test_rmse: None,
            members: None,
        }
    }

    pub fn network(&self) -> RecurrentNetwork {
        RecurrentNetwork {
            cell_kind: self.cell_kind,
            window: self.window,
            activations: self.activations,
            layers: self.layers.clone(),
            head: self.head.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, NetworkError> {
        let m: TrainedModel = serde_json::from_str(text).map_err(|e| NetworkError::InvalidDocument(e.to_string()))?;
        m.network().validate()?;
        MinMaxScaler::new(m.scaler.lo, m.scaler.hi).map_err(|e| NetworkError::InvalidDocument(e.to_string()))?;
        if let Some(r) = m.train_ratio {
            if !(r > 0.0 && r < 1.0) {
                return Err(NetworkError::InvalidDocument(format!("train_ratio {r} outside (0, 1)")));
            }
        }
        Ok(m)
    }
}
