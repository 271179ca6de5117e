//! LSTM layer with optional peephole connections.
//!
//! ```text
//! i_t = σ(W_xi x_t + W_hi h_{t-1} + w_ci ⊙ c_{t-1} + b_i)
//! f_t = σ(W_xf x_t + W_hf h_{t-1} + w_cf ⊙ c_{t-1} + b_f)
//! c_t = f_t ⊙ c_{t-1} + i_t ⊙ σ_c(W_xc x_t + W_hc h_{t-1} + b_c)
//! o_t = σ(W_xo x_t + W_ho h_{t-1} + w_co ⊙ c_t + b_o)
//! h_t = o_t ⊙ σ_h(c_t)
//! ```

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::activation::Activations;
use super::linalg::{add_assign, matvec_acc, matvec_t_acc, outer_acc};
use super::{glorot, NetworkError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LstmLayerParams {
    pub input_dim: usize,
    pub units: usize,
    pub w_xi: Vec<f64>,
    pub w_xf: Vec<f64>,
    pub w_xc: Vec<f64>,
    pub w_xo: Vec<f64>,
    pub w_hi: Vec<f64>,
    pub w_hf: Vec<f64>,
    pub w_hc: Vec<f64>,
    pub w_ho: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w_ci: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w_cf: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w_co: Option<Vec<f64>>,
    pub b_i: Vec<f64>,
    pub b_f: Vec<f64>,
    pub b_c: Vec<f64>,
    pub b_o: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub c: Vec<f64>,
    pub h: Vec<f64>,
}

impl LstmState {
    pub fn zeros(units: usize) -> Self {
        Self {
            c: vec![0.0; units],
            h: vec![0.0; units],
        }
    }
}

/// Activations of one step, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct LstmStepCache {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub o: Vec<f64>,
    pub c: Vec<f64>,
    pub s: Vec<f64>,
}

impl LstmLayerParams {
    pub fn zeros(input_dim: usize, units: usize, peepholes: bool) -> Self {
        let x = || vec![0.0; units * input_dim];
        let h = || vec![0.0; units * units];
        let v = || vec![0.0; units];
        Self {
            input_dim,
            units,
            w_xi: x(),
            w_xf: x(),
            w_xc: x(),
            w_xo: x(),
            w_hi: h(),
            w_hf: h(),
            w_hc: h(),
            w_ho: h(),
            w_ci: peepholes.then(v),
            w_cf: peepholes.then(v),
            w_co: peepholes.then(v),
            b_i: v(),
            b_f: v(),
            b_c: v(),
            b_o: v(),
        }
    }

    /// Glorot-uniform matrices, zero peepholes, zero biases except `b_f = 1`.
    pub fn init<R: Rng>(input_dim: usize, units: usize, peepholes: bool, rng: &mut R) -> Self {
        let mut p = Self::zeros(input_dim, units, peepholes);
        for m in [&mut p.w_xi, &mut p.w_xf, &mut p.w_xc, &mut p.w_xo] {
            glorot(m, input_dim, units, rng);
        }
        for m in [&mut p.w_hi, &mut p.w_hf, &mut p.w_hc, &mut p.w_ho] {
            glorot(m, units, units, rng);
        }
        p.b_f.iter_mut().for_each(|b| *b = 1.0);
        p
    }

    pub fn has_peepholes(&self) -> bool {
        self.w_ci.is_some()
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![
            &self.w_xi, &self.w_xf, &self.w_xc, &self.w_xo, &self.w_hi, &self.w_hf, &self.w_hc, &self.w_ho,
        ];
        for p in [&self.w_ci, &self.w_cf, &self.w_co].into_iter().flatten() {
            out.push(p);
        }
        out.extend([&self.b_i[..], &self.b_f, &self.b_c, &self.b_o]);
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![
            &mut self.w_xi,
            &mut self.w_xf,
            &mut self.w_xc,
            &mut self.w_xo,
            &mut self.w_hi,
            &mut self.w_hf,
            &mut self.w_hc,
            &mut self.w_ho,
        ];
        for p in [&mut self.w_ci, &mut self.w_cf, &mut self.w_co].into_iter().flatten() {
            out.push(p);
        }
        out.extend([&mut self.b_i[..], &mut self.b_f, &mut self.b_c, &mut self.b_o]);
        out
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        let (d, u) = (self.input_dim, self.units);
        if d == 0 || u == 0 {
            return Err(NetworkError::ShapeMismatch("LSTM layer with zero dimension".into()));
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
        for (n, m) in [("w_xi", &self.w_xi), ("w_xf", &self.w_xf), ("w_xc", &self.w_xc), ("w_xo", &self.w_xo)] {
            check(n, m, u * d)?;
        }
        for (n, m) in [("w_hi", &self.w_hi), ("w_hf", &self.w_hf), ("w_hc", &self.w_hc), ("w_ho", &self.w_ho)] {
            check(n, m, u * u)?;
        }
        let peeps = [&self.w_ci, &self.w_cf, &self.w_co];
        let present = peeps.iter().filter(|p| p.is_some()).count();
        if present != 0 && present != 3 {
            return Err(NetworkError::ShapeMismatch("peephole vectors must be all present or all absent".into()));
        }
        for (n, p) in ["w_ci", "w_cf", "w_co"].into_iter().zip(peeps) {
            if let Some(p) = p {
                check(n, p, u)?;
            }
        }
        for (n, b) in [("b_i", &self.b_i), ("b_f", &self.b_f), ("b_c", &self.b_c), ("b_o", &self.b_o)] {
            check(n, b, u)?;
        }
        Ok(())
    }

    /// One timestep; returns the new state and the step cache.
    pub fn step(&self, acts: &Activations, x: &[f64], state: &LstmState) -> Result<(LstmState, LstmStepCache), NetworkError> {
        let u = self.units;
        if x.len() != self.input_dim || state.c.len() != u || state.h.len() != u {
            return Err(NetworkError::ShapeMismatch(format!(
                "LSTM step expects input {} and state {u}, got input {} and state {}/{}",
                self.input_dim,
                x.len(),
                state.c.len(),
                state.h.len()
            )));
        }
        let pre = |wx: &[f64], wh: &[f64], b: &[f64]| {
            let mut a = b.to_vec();
            matvec_acc(&mut a, wx, x);
            matvec_acc(&mut a, wh, &state.h);
            a
        };
        let mut a_i = pre(&self.w_xi, &self.w_hi, &self.b_i);
        let mut a_f = pre(&self.w_xf, &self.w_hf, &self.b_f);
        let a_c = pre(&self.w_xc, &self.w_hc, &self.b_c);
        let mut a_o = pre(&self.w_xo, &self.w_ho, &self.b_o);
        if let (Some(ci), Some(cf)) = (&self.w_ci, &self.w_cf) {
            for k in 0..u {
                a_i[k] += ci[k] * state.c[k];
                a_f[k] += cf[k] * state.c[k];
            }
        }
        let i: Vec<f64> = a_i.iter().map(|&v| acts.gate.apply(v)).collect();
        let f: Vec<f64> = a_f.iter().map(|&v| acts.gate.apply(v)).collect();
        let g: Vec<f64> = a_c.iter().map(|&v| acts.cell_input.apply(v)).collect();
        let c: Vec<f64> = (0..u).map(|k| f[k] * state.c[k] + i[k] * g[k]).collect();
        if let Some(co) = &self.w_co {
            for k in 0..u {
                a_o[k] += co[k] * c[k];
            }
        }
        let o: Vec<f64> = a_o.iter().map(|&v| acts.gate.apply(v)).collect();
        let s: Vec<f64> = c.iter().map(|&v| acts.cell_output.apply(v)).collect();
        let h: Vec<f64> = (0..u).map(|k| o[k] * s[k]).collect();
        let cache = LstmStepCache {
            x: x.to_vec(),
            h_prev: state.h.clone(),
            c_prev: state.c.clone(),
            i,
            f,
            g,
            o,
            c: c.clone(),
            s,
        };
        Ok((LstmState { c, h }, cache))
    }

    /// Reverse pass over a whole sequence.
    ///
    /// `dh_out[t]` is the loss gradient flowing into `h_t` from outside the
    /// layer. Parameter gradients accumulate into `grads`; the gradient with
    /// respect to each step's input is returned.
    pub fn backward(
        &self,
        acts: &Activations,
        caches: &[LstmStepCache],
        dh_out: &[Vec<f64>],
        grads: &mut LstmLayerParams,
    ) -> Vec<Vec<f64>> {
        let u = self.units;
        let mut dx_all = vec![vec![0.0; self.input_dim]; caches.len()];
        let mut dh_next = vec![0.0; u];
        let mut dc_next = vec![0.0; u];
        for t in (0..caches.len()).rev() {
            let cc = &caches[t];
            let dh: Vec<f64> = (0..u).map(|k| dh_out[t][k] + dh_next[k]).collect();
            let mut da_o = vec![0.0; u];
            let mut dc = vec![0.0; u];
            for k in 0..u {
                da_o[k] = dh[k] * cc.s[k] * acts.gate.grad_from_output(cc.o[k]);
                dc[k] = dh[k] * cc.o[k] * acts.cell_output.grad_from_output(cc.s[k]) + dc_next[k];
            }
            if let Some(co) = &self.w_co {
                for k in 0..u {
                    dc[k] += da_o[k] * co[k];
                }
            }
            let mut da_i = vec![0.0; u];
            let mut da_f = vec![0.0; u];
            let mut da_c = vec![0.0; u];
            for k in 0..u {
                da_i[k] = dc[k] * cc.g[k] * acts.gate.grad_from_output(cc.i[k]);
                da_f[k] = dc[k] * cc.c_prev[k] * acts.gate.grad_from_output(cc.f[k]);
                da_c[k] = dc[k] * cc.i[k] * acts.cell_input.grad_from_output(cc.g[k]);
                dc_next[k] = dc[k] * cc.f[k];
            }
            if let (Some(ci), Some(cf)) = (&self.w_ci, &self.w_cf) {
                for k in 0..u {
                    dc_next[k] += da_i[k] * ci[k] + da_f[k] * cf[k];
                }
            }

            for (gx, gh, gb, da) in [
                (&mut grads.w_xi, &mut grads.w_hi, &mut grads.b_i, &da_i),
                (&mut grads.w_xf, &mut grads.w_hf, &mut grads.b_f, &da_f),
                (&mut grads.w_xc, &mut grads.w_hc, &mut grads.b_c, &da_c),
                (&mut grads.w_xo, &mut grads.w_ho, &mut grads.b_o, &da_o),
            ] {
                outer_acc(gx, da, &cc.x);
                outer_acc(gh, da, &cc.h_prev);
                add_assign(gb, da);
            }
            if let (Some(gci), Some(gcf), Some(gco)) = (&mut grads.w_ci, &mut grads.w_cf, &mut grads.w_co) {
                for k in 0..u {
                    gci[k] += da_i[k] * cc.c_prev[k];
                    gcf[k] += da_f[k] * cc.c_prev[k];
                    gco[k] += da_o[k] * cc.c[k];
                }
            }

            let dx = &mut dx_all[t];
            let mut dhp = vec![0.0; u];
            for (wx, wh, da) in [
                (&self.w_xi, &self.w_hi, &da_i),
                (&self.w_xf, &self.w_hf, &da_f),
                (&self.w_xc, &self.w_hc, &da_c),
                (&self.w_xo, &self.w_ho, &da_o),
            ] {
                matvec_t_acc(dx, wx, da);
                matvec_t_acc(&mut dhp, wh, da);
            }
            dh_next = dhp;
        }
        dx_all
    }
}
