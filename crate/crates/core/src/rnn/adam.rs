//! ADAM with bias-corrected moment estimates.

use serde::{Deserialize, Serialize};

use super::network::RecurrentNetwork;
use super::NetworkError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One ADAM update over flat parameter, gradient and moment buffers.
/// `t` is the 1-based step count.
pub fn adam_update(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    hyper: &AdamHyper,
) -> Result<(), NetworkError> {
    let n = params.len();
    if grads.len() != n || m.len() != n || v.len() != n {
        return Err(NetworkError::ShapeMismatch(format!(
            "adam buffers {} / {} / {} / {}",
            n,
            grads.len(),
            m.len(),
            v.len()
        )));
    }
    if t == 0 {
        return Err(NetworkError::ShapeMismatch("adam step count starts at 1".into()));
    }
    let bc1 = 1.0 - hyper.beta1.powf(t as f64);
    let bc2 = 1.0 - hyper.beta2.powf(t as f64);
    for i in 0..n {
        let g = grads[i];
        m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * g;
        v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        params[i] -= hyper.lr * m_hat / (v_hat.sqrt() + hyper.eps);
    }
    Ok(())
}

/// Optimizer state for one network.
#[derive(Debug, Clone)]
pub struct Adam {
    pub hyper: AdamHyper,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(net: &RecurrentNetwork, hyper: AdamHyper) -> Self {
        let zeros: Vec<Vec<f64>> = net.slices().iter().map(|s| vec![0.0; s.len()]).collect();
        Self {
            hyper,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, net: &mut RecurrentNetwork, grads: &RecurrentNetwork) -> Result<(), NetworkError> {
        self.t += 1;
        let gs = grads.slices();
        let ps = net.slices_mut();
        if gs.len() != ps.len() || ps.len() != self.m.len() {
            return Err(NetworkError::ShapeMismatch("gradient tree differs from parameters".into()));
        }
        for (((p, g), m), v) in ps.into_iter().zip(gs).zip(&mut self.m).zip(&mut self.v) {
            adam_update(p, g, m, v, self.t, &self.hyper)?;
        }
        Ok(())
    }
}
