use rand::Rng;

use super::{add_row_bias, glorot_uniform, zeros_param, Layer};
use crate::error::{invalid, Result};
use crate::real::Real;
use crate::tensor::{Graph, Tensor, Var};

/// Single-direction LSTM. Gates are packed `[input, forget, candidate, output]`
/// along the last axis of every matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayer<T> {
    /// `[features, 4 * units]`
    pub w_input: Tensor<T>,
    /// `[units, 4 * units]`
    pub w_recurrent: Tensor<T>,
    /// `[4 * units]`
    pub bias: Tensor<T>,
}

impl<T: Real> LstmLayer<T> {
    /// Glorot-uniform matrices, zero biases except the forget gate at 1.
    pub fn new<R: Rng + ?Sized>(features: usize, units: usize, rng: &mut R) -> Result<Self> {
        if features == 0 || units == 0 {
            return Err(invalid("lstm dimensions must be positive"));
        }
        let mut bias = zeros_param(vec![4 * units]);
        bias.data_mut()[units..2 * units].fill(T::one());
        Ok(Self {
            w_input: glorot_uniform(vec![features, 4 * units], features, 4 * units, rng),
            w_recurrent: glorot_uniform(vec![units, 4 * units], units, 4 * units, rng),
            bias,
        })
    }

    pub fn units(&self) -> usize {
        self.w_recurrent.shape()[0]
    }

    pub fn features(&self) -> usize {
        self.w_input.shape()[0]
    }
}

impl<T: Real> Layer<T> for LstmLayer<T> {
    fn params(&self) -> Vec<(&'static str, &Tensor<T>)> {
        vec![
            ("w_input", &self.w_input),
            ("w_recurrent", &self.w_recurrent),
            ("bias", &self.bias),
        ]
    }

    fn params_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        vec![
            ("w_input", &mut self.w_input),
            ("w_recurrent", &mut self.w_recurrent),
            ("bias", &mut self.bias),
        ]
    }
}

/// Runs one direction over `x: [batch, time, features]` from zero state.
/// Returns the hidden state `[batch, units]` for every time index, in time
/// order regardless of direction.
pub fn lstm<T: Real>(g: &mut Graph<T>, p: &[Var], x: Var, reverse: bool) -> Result<Vec<Var>> {
    let (b, t, f) = match *g.shape(x) {
        [b, t, f] if t > 0 => (b, t, f),
        ref s => return Err(invalid(format!("lstm input must be [batch, time>0, features], got {s:?}"))),
    };
    if g.shape(p[0])[0] != f {
        return Err(invalid(format!(
            "lstm expects {} features, got {f}",
            g.shape(p[0])[0]
        )));
    }
    let u = g.shape(p[1])[0];
    let flat = g.reshape(x, vec![b * t, f])?;
    let proj = g.matmul(flat, p[0])?;
    let proj = add_row_bias(g, proj, p[2])?;
    let proj = g.reshape(proj, vec![b, t, 4 * u])?;

    let mut h: Option<Var> = None;
    let mut c: Option<Var> = None;
    let mut outs = vec![None; t];
    for step in 0..t {
        let ti = if reverse { t - 1 - step } else { step };
        let z = g.slice(proj, 1, ti, 1)?;
        let mut z = g.reshape(z, vec![b, 4 * u])?;
        if let Some(h) = h {
            let r = g.matmul(h, p[1])?;
            z = g.add(z, r)?;
        }
        let i = g.slice(z, 1, 0, u)?;
        let i = g.sigmoid(i)?;
        let fg = g.slice(z, 1, u, u)?;
        let fg = g.sigmoid(fg)?;
        let cand = g.slice(z, 1, 2 * u, u)?;
        let cand = g.tanh(cand)?;
        let o = g.slice(z, 1, 3 * u, u)?;
        let o = g.sigmoid(o)?;
        let ic = g.mul(i, cand)?;
        let next_c = match c {
            Some(c) => {
                let kept = g.mul(fg, c)?;
                g.add(kept, ic)?
            }
            None => ic,
        };
        let tc = g.tanh(next_c)?;
        let next_h = g.mul(o, tc)?;
        c = Some(next_c);
        h = Some(next_h);
        outs[ti] = Some(next_h);
    }
    Ok(outs.into_iter().map(|v| v.expect("every step visited")).collect())
}

/// Bidirectional LSTM: row `t` of the `[batch, time, 2 * units]` output is the
/// forward state at `t` followed by the backward state at `t`.
pub fn bilstm<T: Real>(g: &mut Graph<T>, fwd: &[Var], bwd: &[Var], x: Var) -> Result<Var> {
    let mut halves = Vec::with_capacity(2);
    for (p, reverse) in [(fwd, false), (bwd, true)] {
        let states = lstm(g, p, x, reverse)?;
        let mut rows = Vec::with_capacity(states.len());
        for h in states {
            let s = g.shape(h).to_vec();
            rows.push(g.reshape(h, vec![s[0], 1, s[1]])?);
        }
        halves.push(g.concat(&rows, 1)?);
    }
    g.concat(&halves, 2)
}
