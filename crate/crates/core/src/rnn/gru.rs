//! GRU layer.
//!
//! ```text
//! z_t = σ(W_z x_t + U_z h_{t-1} + b_z)
//! r_t = σ(W_r x_t + U_r h_{t-1} + b_r)
//! n_t = tanh(W x_t + r_t ⊙ (U h_{t-1}) + b_h)
//! h_t = (1 - z_t) ⊙ h_{t-1} + z_t ⊙ n_t
//! ```

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::activation::Activations;
use super::linalg::{add_assign, matvec_acc, matvec_t_acc, outer_acc};
use super::{glorot, NetworkError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GruLayerParams {
    pub input_dim: usize,
    pub units: usize,
    pub w_z: Vec<f64>,
    pub w_r: Vec<f64>,
    pub w: Vec<f64>,
    pub u_z: Vec<f64>,
    pub u_r: Vec<f64>,
    pub u: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_z: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_r: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_h: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct GruStepCache {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    /// `U h_{t-1}`, before the reset gate is applied
    pub uh: Vec<f64>,
    pub n: Vec<f64>,
}

impl GruLayerParams {
    pub fn zeros(input_dim: usize, units: usize, biases: bool) -> Self {
        let x = || vec![0.0; units * input_dim];
        let h = || vec![0.0; units * units];
        let v = || vec![0.0; units];
        Self {
            input_dim,
            units,
            w_z: x(),
            w_r: x(),
            w: x(),
            u_z: h(),
            u_r: h(),
            u: h(),
            b_z: biases.then(v),
            b_r: biases.then(v),
            b_h: biases.then(v),
        }
    }

    pub fn init<R: Rng>(input_dim: usize, units: usize, biases: bool, rng: &mut R) -> Self {
        let mut p = Self::zeros(input_dim, units, biases);
        for m in [&mut p.w_z, &mut p.w_r, &mut p.w] {
            glorot(m, input_dim, units, rng);
        }
        for m in [&mut p.u_z, &mut p.u_r, &mut p.u] {
            glorot(m, units, units, rng);
        }
        p
    }

    pub fn has_biases(&self) -> bool {
        self.b_z.is_some()
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![&self.w_z, &self.w_r, &self.w, &self.u_z, &self.u_r, &self.u];
        for b in [&self.b_z, &self.b_r, &self.b_h].into_iter().flatten() {
            out.push(b);
        }
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![
            &mut self.w_z,
            &mut self.w_r,
            &mut self.w,
            &mut self.u_z,
            &mut self.u_r,
            &mut self.u,
        ];
        for b in [&mut self.b_z, &mut self.b_r, &mut self.b_h].into_iter().flatten() {
            out.push(b);
        }
        out
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        let (d, u) = (self.input_dim, self.units);
        if d == 0 || u == 0 {
            return Err(NetworkError::ShapeMismatch("GRU layer with zero dimension".into()));
        }
        let check = |name: &str, v: &[f64], n: usize| {
            if v.len() != n {
                Err(NetworkError::ShapeMismatch(format!("{name}: expected {n} entries, got {}", v.len())))
            } else if v.iter().any(|x| !x.is_finite()) {
                Err(NetworkError::ShapeMismatch(format!("{name}: non-finite entry")))
            } else {
                Ok(())
            }
        };
        for (n, m) in [("w_z", &self.w_z), ("w_r", &self.w_r), ("w", &self.w)] {
            check(n, m, u * d)?;
        }
        for (n, m) in [("u_z", &self.u_z), ("u_r", &self.u_r), ("u", &self.u)] {
            check(n, m, u * u)?;
        }
        let bs = [&self.b_z, &self.b_r, &self.b_h];
        let present = bs.iter().filter(|b| b.is_some()).count();
        if present != 0 && present != 3 {
            return Err(NetworkError::ShapeMismatch("GRU biases must be all present or all absent".into()));
        }
        for (n, b) in ["b_z", "b_r", "b_h"].into_iter().zip(bs) {
            if let Some(b) = b {
                check(n, b, u)?;
            }
        }
        Ok(())
    }

    pub fn step(&self, acts: &Activations, x: &[f64], h_prev: &[f64]) -> Result<(Vec<f64>, GruStepCache), NetworkError> {
        let u = self.units;
        if x.len() != self.input_dim || h_prev.len() != u {
            return Err(NetworkError::ShapeMismatch(format!(
                "GRU step expects input {} and state {u}, got {} and {}",
                self.input_dim,
                x.len(),
                h_prev.len()
            )));
        }
        let pre = |wx: &[f64], uh: &[f64], b: &Option<Vec<f64>>| {
            let mut a = b.clone().unwrap_or_else(|| vec![0.0; u]);
            matvec_acc(&mut a, wx, x);
            matvec_acc(&mut a, uh, h_prev);
            a
        };
        let z: Vec<f64> = pre(&self.w_z, &self.u_z, &self.b_z).into_iter().map(|v| acts.gate.apply(v)).collect();
        let r: Vec<f64> = pre(&self.w_r, &self.u_r, &self.b_r).into_iter().map(|v| acts.gate.apply(v)).collect();
        let mut uh = vec![0.0; u];
        matvec_acc(&mut uh, &self.u, h_prev);
        let mut a_n = self.b_h.clone().unwrap_or_else(|| vec![0.0; u]);
        matvec_acc(&mut a_n, &self.w, x);
        let n: Vec<f64> = (0..u).map(|k| (a_n[k] + r[k] * uh[k]).tanh()).collect();
        let h: Vec<f64> = (0..u).map(|k| (1.0 - z[k]) * h_prev[k] + z[k] * n[k]).collect();
        let cache = GruStepCache {
            x: x.to_vec(),
            h_prev: h_prev.to_vec(),
            z,
            r,
            uh,
            n,
        };
        Ok((h, cache))
    }

    /// Reverse pass; same contract as the LSTM layer's backward.
    pub fn backward(
        &self,
        acts: &Activations,
        caches: &[GruStepCache],
        dh_out: &[Vec<f64>],
        grads: &mut GruLayerParams,
    ) -> Vec<Vec<f64>> {
        let u = self.units;
        let mut dx_all = vec![vec![0.0; self.input_dim]; caches.len()];
        let mut dh_next = vec![0.0; u];
        for t in (0..caches.len()).rev() {
            let cc = &caches[t];
            let mut dhp = vec![0.0; u];
            let mut da_z = vec![0.0; u];
            let mut da_n = vec![0.0; u];
            let mut da_r = vec![0.0; u];
            let mut duh = vec![0.0; u];
            for k in 0..u {
                let dh = dh_out[t][k] + dh_next[k];
                dhp[k] = dh * (1.0 - cc.z[k]);
                da_z[k] = dh * (cc.n[k] - cc.h_prev[k]) * acts.gate.grad_from_output(cc.z[k]);
                da_n[k] = dh * cc.z[k] * (1.0 - cc.n[k] * cc.n[k]);
                da_r[k] = da_n[k] * cc.uh[k] * acts.gate.grad_from_output(cc.r[k]);
                duh[k] = da_n[k] * cc.r[k];
            }
            outer_acc(&mut grads.w_z, &da_z, &cc.x);
            outer_acc(&mut grads.u_z, &da_z, &cc.h_prev);
            outer_acc(&mut grads.w_r, &da_r, &cc.x);
            outer_acc(&mut grads.u_r, &da_r, &cc.h_prev);
            outer_acc(&mut grads.w, &da_n, &cc.x);
            outer_acc(&mut grads.u, &duh, &cc.h_prev);
            if let (Some(bz), Some(br), Some(bh)) = (&mut grads.b_z, &mut grads.b_r, &mut grads.b_h) {
                add_assign(bz, &da_z);
                add_assign(br, &da_r);
                add_assign(bh, &da_n);
            }
            let dx = &mut dx_all[t];
            matvec_t_acc(dx, &self.w_z, &da_z);
            matvec_t_acc(dx, &self.w_r, &da_r);
            matvec_t_acc(dx, &self.w, &da_n);
            matvec_t_acc(&mut dhp, &self.u_z, &da_z);
            matvec_t_acc(&mut dhp, &self.u_r, &da_r);
            matvec_t_acc(&mut dhp, &self.u, &duh);
            dh_next = dhp;
        }
        dx_all
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_params() {
        let p = GruLayerParams::zeros(1, 3, true);
        let acts = Activations::default();
        let (h, c) = p.step(&acts, &[0.4], &[0.0; 3]).unwrap();
        assert_eq!(c.z, vec![0.5; 3]);
        assert_eq!(c.r, vec![0.5; 3]);
        assert_eq!(c.n, vec![0.0; 3]);
        assert_eq!(h, vec![0.0; 3]);
        let v = [0.2, -0.6, 1.0];
        let (h, _) = p.step(&acts, &[0.4], &v).unwrap();
        for k in 0..3 {
            assert!((h[k] - 0.5 * v[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn closed_update_gate_keeps_state() {
        let mut p = GruLayerParams::init(1, 3, true, &mut crate::seeding::rng_for(1, 1));
        p.b_z = Some(vec![-50.0; 3]);
        let v = [0.2, -0.6, 0.9];
        let (h, _) = p.step(&Activations::default(), &[0.4], &v).unwrap();
        for k in 0..3 {
            assert!((h[k] - v[k]).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn convex_combination(seed in 0u64..500, x in -3.0f64..3.0, hp in proptest::collection::vec(-1.0f64..1.0, 5)) {
            let p = GruLayerParams::init(1, 5, true, &mut crate::seeding::rng_for(seed, 2));
            let (h, c) = p.step(&Activations::default(), &[x], &hp).unwrap();
            for k in 0..5 {
                let (lo, hi) = if hp[k] < c.n[k] { (hp[k], c.n[k]) } else { (c.n[k], hp[k]) };
                prop_assert!(h[k] >= lo - 1e-15 && h[k] <= hi + 1e-15);
            }
        }
    }
}
