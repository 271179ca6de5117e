use rand::Rng;
use serde::{Deserialize, Serialize};

use super::activation::{hard_sigmoid, hard_sigmoid_grad, Activations};
use super::gru::{GruLayerParams, GruStepCache};
use super::lstm::{LstmLayerParams, LstmState, LstmStepCache};
use super::{glorot, CellKind, NetworkError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RecurrentLayer {
    Lstm(LstmLayerParams),
    Gru(GruLayerParams),
}

impl RecurrentLayer {
    pub fn input_dim(&self) -> usize {
        match self {
            RecurrentLayer::Lstm(p) => p.input_dim,
            RecurrentLayer::Gru(p) => p.input_dim,
        }
    }

    pub fn units(&self) -> usize {
        match self {
            RecurrentLayer::Lstm(p) => p.units,
            RecurrentLayer::Gru(p) => p.units,
        }
    }

    pub fn kind(&self) -> CellKind {
        match self {
            RecurrentLayer::Lstm(_) => CellKind::Lstm,
            RecurrentLayer::Gru(_) => CellKind::Gru,
        }
    }

    fn slices(&self) -> Vec<&[f64]> {
        match self {
            RecurrentLayer::Lstm(p) => p.slices(),
            RecurrentLayer::Gru(p) => p.slices(),
        }
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            RecurrentLayer::Lstm(p) => p.slices_mut(),
            RecurrentLayer::Gru(p) => p.slices_mut(),
        }
    }

    fn zeros_like(&self) -> Self {
        match self {
            RecurrentLayer::Lstm(p) => RecurrentLayer::Lstm(LstmLayerParams::zeros(p.input_dim, p.units, p.has_peepholes())),
            RecurrentLayer::Gru(p) => RecurrentLayer::Gru(GruLayerParams::zeros(p.input_dim, p.units, p.has_biases())),
        }
    }
}

/// Single-neuron dense output: `hard_sigmoid(w · h_T + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenseHead {
    pub w: Vec<f64>,
    pub b: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkOptions {
    pub activations: Activations,
    pub peepholes: bool,
    pub gru_biases: bool,
}

impl Default for NetworkOptions {
    fn default() -> Self {
        Self {
            activations: Activations::default(),
            peepholes: true,
            gru_biases: true,
        }
    }
}

/// Stacked recurrent layers over a univariate input window, followed by a
/// dense head. Every layer passes its full hidden sequence upward; the head
/// reads only the last timestep of the top layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecurrentNetwork {
    pub cell_kind: CellKind,
    pub window: usize,
    pub activations: Activations,
    pub layers: Vec<RecurrentLayer>,
    pub head: DenseHead,
}

#[derive(Debug, Clone)]
pub enum LayerTape {
    Lstm(Vec<LstmStepCache>),
    Gru(Vec<GruStepCache>),
}

/// Intermediates of one forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    pub layers: Vec<LayerTape>,
    pub h_last: Vec<f64>,
    pub head_pre: f64,
    pub prediction: f64,
}

impl RecurrentNetwork {
    /// First layer of `window` units, then `hidden_layers` layers of `units`.
    pub fn new<R: Rng>(
        cell_kind: CellKind,
        window: usize,
        hidden_layers: usize,
        units: usize,
        opts: &NetworkOptions,
        rng: &mut R,
    ) -> Self {
        let mut sizes = vec![window];
        sizes.extend(std::iter::repeat_n(units, hidden_layers));
        Self::with_layer_sizes(cell_kind, window, &sizes, opts, rng)
    }

    /// Explicit per-layer unit counts; `sizes[0]` is the first layer.
    pub fn with_layer_sizes<R: Rng>(
        cell_kind: CellKind,
        window: usize,
        sizes: &[usize],
        opts: &NetworkOptions,
        rng: &mut R,
    ) -> Self {
        let mut layers = Vec::with_capacity(sizes.len());
        let mut input_dim = 1;
        for &u in sizes {
            layers.push(match cell_kind {
                CellKind::Lstm => RecurrentLayer::Lstm(LstmLayerParams::init(input_dim, u, opts.peepholes, rng)),
                CellKind::Gru => RecurrentLayer::Gru(GruLayerParams::init(input_dim, u, opts.gru_biases, rng)),
            });
            input_dim = u;
        }
        let mut w = vec![0.0; input_dim];
        glorot(&mut w, input_dim, 1, rng);
        Self {
            cell_kind,
            window,
            activations: opts.activations,
            layers,
            head: DenseHead { w, b: 0.0 },
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            cell_kind: self.cell_kind,
            window: self.window,
            activations: self.activations,
            layers: self.layers.iter().map(RecurrentLayer::zeros_like).collect(),
            head: DenseHead {
                w: vec![0.0; self.head.w.len()],
                b: 0.0,
            },
        }
    }

    /// Every parameter tensor as a flat slice, in a fixed order.
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = self.layers.iter().flat_map(RecurrentLayer::slices).collect();
        out.push(&self.head.w);
        out.push(std::slice::from_ref(&self.head.b));
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = self.layers.iter_mut().flat_map(RecurrentLayer::slices_mut).collect();
        out.push(&mut self.head.w);
        out.push(std::slice::from_mut(&mut self.head.b));
        out
    }

    pub fn param_count(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.slices().concat()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<(), NetworkError> {
        if flat.len() != self.param_count() {
            return Err(NetworkError::ShapeMismatch(format!(
                "{} values for {} parameters",
                flat.len(),
                self.param_count()
            )));
        }
        let mut off = 0;
        for s in self.slices_mut() {
            s.copy_from_slice(&flat[off..off + s.len()]);
            off += s.len();
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        if self.window == 0 {
            return Err(NetworkError::ShapeMismatch("window must be >= 1".into()));
        }
        let Some(first) = self.layers.first() else {
            return Err(NetworkError::ShapeMismatch("network has no recurrent layers".into()));
        };
        if first.input_dim() != 1 {
            return Err(NetworkError::ShapeMismatch(format!(
                "first layer input dim must be 1, got {}",
                first.input_dim()
            )));
        }
        if first.units() != self.window {
            return Err(NetworkError::ShapeMismatch(format!(
                "first layer must have {} units (window length), got {}",
                self.window,
                first.units()
            )));
        }
        let mut prev = 1;
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.kind() != self.cell_kind {
                return Err(NetworkError::ShapeMismatch(format!("layer {i} is not {}", self.cell_kind)));
            }
            if layer.input_dim() != prev {
                return Err(NetworkError::ShapeMismatch(format!(
                    "layer {i} input dim {} does not chain from {prev}",
                    layer.input_dim()
                )));
            }
            match layer {
                RecurrentLayer::Lstm(p) => p.validate()?,
                RecurrentLayer::Gru(p) => p.validate()?,
            }
            prev = layer.units();
        }
        if self.head.w.len() != prev {
            return Err(NetworkError::ShapeMismatch(format!(
                "head expects {} inputs, top layer has {prev} units",
                self.head.w.len()
            )));
        }
        if !self.head.b.is_finite() || self.head.w.iter().any(|w| !w.is_finite()) {
            return Err(NetworkError::ShapeMismatch("non-finite head parameter".into()));
        }
        Ok(())
    }

    pub fn forward(&self, window: &[f64]) -> Result<(f64, Tape), NetworkError> {
        if window.len() != self.window {
            return Err(NetworkError::ShapeMismatch(format!(
                "window of {} values, network expects {}",
                window.len(),
                self.window
            )));
        }
        let mut seq: Vec<Vec<f64>> = window.iter().map(|&v| vec![v]).collect();
        let mut tapes = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let mut out = Vec::with_capacity(seq.len());
            match layer {
                RecurrentLayer::Lstm(p) => {
                    let mut st = LstmState::zeros(p.units);
                    let mut caches = Vec::with_capacity(seq.len());
                    for x in &seq {
                        let (next, cache) = p.step(&self.activations, x, &st)?;
                        out.push(next.h.clone());
                        caches.push(cache);
                        st = next;
                    }
                    tapes.push(LayerTape::Lstm(caches));
                }
                RecurrentLayer::Gru(p) => {
                    let mut h = vec![0.0; p.units];
                    let mut caches = Vec::with_capacity(seq.len());
                    for x in &seq {
                        let (next, cache) = p.step(&self.activations, x, &h)?;
                        out.push(next.clone());
                        caches.push(cache);
                        h = next;
                    }
                    tapes.push(LayerTape::Gru(caches));
                }
            }
            seq = out;
        }
        let h_last = seq.pop().expect("window is non-empty");
        if h_last.len() != self.head.w.len() {
            return Err(NetworkError::ShapeMismatch("head width does not match top layer".into()));
        }
        let head_pre = self.head.b + self.head.w.iter().zip(&h_last).map(|(w, h)| w * h).sum::<f64>();
        let prediction = hard_sigmoid(head_pre);
        Ok((
            prediction,
            Tape {
                layers: tapes,
                h_last,
                head_pre,
                prediction,
            },
        ))
    }

    pub fn predict(&self, window: &[f64]) -> Result<f64, NetworkError> {
        self.forward(window).map(|(p, _)| p)
    }

    /// Gradient of the batch-mean squared error with respect to every
    /// parameter, returned in a network of the same shape.
    pub fn backward(&self, tapes: &[Tape], targets: &[f64]) -> Result<RecurrentNetwork, NetworkError> {
        if tapes.len() != targets.len() {
            return Err(NetworkError::TapeMismatch(format!(
                "{} tapes for {} targets",
                tapes.len(),
                targets.len()
            )));
        }
        if tapes.is_empty() {
            return Err(NetworkError::Empty);
        }
        let mut grads = self.zeros_like();
        let scale = 2.0 / tapes.len() as f64;
        for (tape, &target) in tapes.iter().zip(targets) {
            if tape.layers.len() != self.layers.len() || tape.h_last.len() != self.head.w.len() {
                return Err(NetworkError::TapeMismatch("layer count or width differs".into()));
            }
            let dz = scale * (tape.prediction - target) * hard_sigmoid_grad(tape.head_pre);
            if dz == 0.0 {
                continue;
            }
            for (g, h) in grads.head.w.iter_mut().zip(&tape.h_last) {
                *g += dz * h;
            }
            grads.head.b += dz;

            let steps = self.window;
            let top_units = self.head.w.len();
            let mut dh: Vec<Vec<f64>> = vec![vec![0.0; top_units]; steps];
            dh[steps - 1] = self.head.w.iter().map(|w| dz * w).collect();
            for l in (0..self.layers.len()).rev() {
                dh = match (&self.layers[l], &tape.layers[l], &mut grads.layers[l]) {
                    (RecurrentLayer::Lstm(p), LayerTape::Lstm(c), RecurrentLayer::Lstm(g)) => {
                        check_steps(c.len(), steps)?;
                        p.backward(&self.activations, c, &dh, g)
                    }
                    (RecurrentLayer::Gru(p), LayerTape::Gru(c), RecurrentLayer::Gru(g)) => {
                        check_steps(c.len(), steps)?;
                        p.backward(&self.activations, c, &dh, g)
                    }
                    _ => return Err(NetworkError::TapeMismatch(format!("layer {l} kind differs"))),
                };
            }
        }
        Ok(grads)
    }

    /// Forward every sample, then return `(batch MSE, gradients)`.
    pub fn loss_and_gradients(
        &self,
        inputs: &[Vec<f64>],
        targets: &[f64],
    ) -> Result<(f64, RecurrentNetwork), NetworkError> {
        let mut tapes = Vec::with_capacity(inputs.len());
        let mut preds = Vec::with_capacity(inputs.len());
        for x in inputs {
            let (p, t) = self.forward(x)?;
            preds.push(p);
            tapes.push(t);
        }
        let loss = mse_loss(&preds, targets)?;
        let grads = self.backward(&tapes, targets)?;
        Ok((loss, grads))
    }

    /// Batch-mean squared error without building gradients.
    pub fn loss(&self, inputs: &[Vec<f64>], targets: &[f64]) -> Result<f64, NetworkError> {
        let preds = inputs.iter().map(|x| self.predict(x)).collect::<Result<Vec<_>, _>>()?;
        mse_loss(&preds, targets)
    }
}

fn check_steps(got: usize, want: usize) -> Result<(), NetworkError> {
    if got != want {
        return Err(NetworkError::TapeMismatch(format!("{got} steps recorded, window is {want}")));
    }
    Ok(())
}

pub fn mse_loss(preds: &[f64], targets: &[f64]) -> Result<f64, NetworkError> {
    if preds.len() != targets.len() {
        return Err(NetworkError::LengthMismatch(preds.len(), targets.len()));
    }
    if preds.is_empty() {
        return Err(NetworkError::Empty);
    }
    Ok(preds.iter().zip(targets).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / preds.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::rng_for;
    use proptest::prelude::*;

    fn zero_net(kind: CellKind) -> RecurrentNetwork {
        let mut n = RecurrentNetwork::new(kind, 4, 1, 3, &NetworkOptions::default(), &mut rng_for(0, 0));
        let zeros = vec![0.0; n.param_count()];
        n.set_flat(&zeros).unwrap();
        n
    }

    #[test]
    fn zero_nets_predict_half() {
        for kind in [CellKind::Lstm, CellKind::Gru] {
            let n = zero_net(kind);
            assert_eq!(n.predict(&[0.1, 0.5, 0.9, 0.2]).unwrap(), 0.5);
        }
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse_loss(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert_eq!(mse_loss(&[0.0, 1.0], &[1.0, 1.0]).unwrap(), 0.5);
        assert!((mse_loss(&[0.2, 0.4, 0.9], &[0.0, 0.5, 1.0]).unwrap() - 0.02).abs() < 1e-15);
        assert_eq!(mse_loss(&[1.0], &[]), Err(NetworkError::LengthMismatch(1, 0)));
        assert_eq!(mse_loss(&[], &[]), Err(NetworkError::Empty));
    }

    #[test]
    fn layer_wiring() {
        let n = RecurrentNetwork::new(CellKind::Lstm, 4, 2, 8, &NetworkOptions::default(), &mut rng_for(1, 0));
        assert_eq!(n.layers.len(), 3);
        assert_eq!((n.layers[0].input_dim(), n.layers[0].units()), (1, 4));
        assert_eq!((n.layers[1].input_dim(), n.layers[1].units()), (4, 8));
        assert_eq!((n.layers[2].input_dim(), n.layers[2].units()), (8, 8));
        assert_eq!(n.head.w.len(), 8);
        n.validate().unwrap();
        assert!(matches!(n.forward(&[0.0; 3]), Err(NetworkError::ShapeMismatch(_))));
    }

    #[test]
    fn zero_gradient_when_exact() {
        let n = RecurrentNetwork::new(CellKind::Gru, 4, 1, 5, &NetworkOptions::default(), &mut rng_for(2, 0));
        let xs = vec![vec![0.1, 0.2, 0.3, 0.4], vec![0.9, 0.1, 0.5, 0.5]];
        let ys: Vec<f64> = xs.iter().map(|x| n.predict(x).unwrap()).collect();
        let (loss, g) = n.loss_and_gradients(&xs, &ys).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.flatten().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tape_mismatch() {
        let n = RecurrentNetwork::new(CellKind::Lstm, 4, 1, 3, &NetworkOptions::default(), &mut rng_for(2, 0));
        let (_, t) = n.forward(&[0.1; 4]).unwrap();
        assert!(matches!(n.backward(std::slice::from_ref(&t), &[]), Err(NetworkError::TapeMismatch(_))));
        let g = RecurrentNetwork::new(CellKind::Gru, 4, 1, 3, &NetworkOptions::default(), &mut rng_for(2, 0));
        assert!(matches!(g.backward(&[t], &[0.3]), Err(NetworkError::TapeMismatch(_))));
    }

    proptest! {
        #[test]
        fn output_in_unit_interval(seed in 0u64..200, xs in proptest::collection::vec(-50.0f64..50.0, 4), gru in any::<bool>()) {
            let kind = if gru { CellKind::Gru } else { CellKind::Lstm };
            let mut n = RecurrentNetwork::new(kind, 4, 1, 6, &NetworkOptions::default(), &mut rng_for(seed, 9));
            n.head.w.iter_mut().for_each(|w| *w *= 40.0);
            let p = n.predict(&xs).unwrap();
            prop_assert!((0.0..=1.0).contains(&p));
        }
    }
}
