use rand::Rng;

use super::{add_row_bias, glorot_uniform, zeros_param, Layer};
use crate::error::{invalid, Result};
use crate::real::Real;
use crate::tensor::{Graph, Tensor, Var};

pub const ATTENTION_EPSILON: f64 = 1e-7;

/// Additive attention pooling over time.
///
/// Scores are `s_t = tanh(a_t w + b) . u`. With `m = max_t s_t` the weights
/// are `W_t = exp(s_t - m) / (sum_u exp(s_u - m) + epsilon)`, and the summary
/// is `sum_t W_t a_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionHead<T> {
    /// `[features, attn_dim]`
    pub w: Tensor<T>,
    /// `[attn_dim]`
    pub b: Tensor<T>,
    /// `[attn_dim]` context vector
    pub u: Tensor<T>,
    pub epsilon: f64,
}

impl<T: Real> AttentionHead<T> {
    pub fn new<R: Rng + ?Sized>(features: usize, attn_dim: usize, rng: &mut R) -> Result<Self> {
        if features == 0 || attn_dim == 0 {
            return Err(invalid("attention dimensions must be positive"));
        }
        Ok(Self {
            w: glorot_uniform(vec![features, attn_dim], features, attn_dim, rng),
            b: zeros_param(vec![attn_dim]),
            u: glorot_uniform(vec![attn_dim], attn_dim, 1, rng),
            epsilon: ATTENTION_EPSILON,
        })
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(invalid(format!("attention epsilon must be positive, got {epsilon}")));
        }
        self.epsilon = epsilon;
        Ok(self)
    }

    pub fn features(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn attn_dim(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn forward(&self, g: &mut Graph<T>, p: &[Var], a: Var) -> Result<(Var, Var)> {
        attention(g, p, a, self.epsilon)
    }
}

impl<T: Real> Layer<T> for AttentionHead<T> {
    fn params(&self) -> Vec<(&'static str, &Tensor<T>)> {
        vec![("w", &self.w), ("b", &self.b), ("u", &self.u)]
    }

    fn params_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        vec![("w", &mut self.w), ("b", &mut self.b), ("u", &mut self.u)]
    }
}

/// Attention pooling of `a: [batch, time, features]` with parameters
/// `p = [w, b, u]`. Returns the `[batch, features]` summary and the
/// `[batch, time]` weights.
pub fn attention<T: Real>(g: &mut Graph<T>, p: &[Var], a: Var, epsilon: f64) -> Result<(Var, Var)> {
    let (bsz, t, f) = match *g.shape(a) {
        [b, t, f] if t > 0 => (b, t, f),
        ref s => return Err(invalid(format!("attention input must be [batch, time>0, features], got {s:?}"))),
    };
    if g.shape(p[0])[0] != f {
        return Err(invalid(format!(
            "attention expects {} features, got {f}",
            g.shape(p[0])[0]
        )));
    }
    let dim = g.shape(p[0])[1];
    let flat = g.reshape(a, vec![bsz * t, f])?;
    let proj = g.matmul(flat, p[0])?;
    let proj = add_row_bias(g, proj, p[1])?;
    let hidden = g.tanh(proj)?;
    let u = g.reshape(p[2], vec![dim, 1])?;
    let scores = g.matmul(hidden, u)?;
    let scores = g.reshape(scores, vec![bsz, t])?;

    let weights = score_weights(g, scores, epsilon)?;

    let w3 = g.reshape(weights, vec![bsz, t, 1])?;
    let w3 = g.repeat(w3, 2, f)?;
    let weighted = g.mul(w3, a)?;
    let summary = g.reduce_sum(weighted, 1)?;
    let summary = g.reshape(summary, vec![bsz, f])?;
    Ok((summary, weights))
}

/// Normalizes `[batch, time]` scores into attention weights,
/// `exp(s_t - m) / (sum_u exp(s_u - m) + epsilon)` with `m` the row maximum.
pub fn score_weights<T: Real>(g: &mut Graph<T>, scores: Var, epsilon: f64) -> Result<Var> {
    let t = match *g.shape(scores) {
        [_, t] if t > 0 => t,
        ref s => return Err(invalid(format!("scores must be [batch, time>0], got {s:?}"))),
    };
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(invalid(format!("attention epsilon must be positive, got {epsilon}")));
    }
    let m = g.reduce_max(scores, 1)?;
    let m = g.repeat(m, 1, t)?;
    let shifted = g.sub(scores, m)?;
    let e = g.exp(shifted)?;
    let total = g.reduce_sum(e, 1)?;
    let denom = g.add_scalar(total, T::from_f64_lossy(epsilon))?;
    let denom = g.repeat(denom, 1, t)?;
    g.div(e, denom)
}
