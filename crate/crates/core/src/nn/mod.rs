//! Layers built on the tensor tape: convolution, pooling, (bi)LSTM, the
//! attention head, dense projection, dropout and softmax cross-entropy.
//!
//! Each layer owns its parameter tensors. [`Layer::bind`] copies them onto a
//! [`Graph`] as trainable leaves, in the order of [`Layer::params`]; forward
//! functions take that slice of handles. After `backward`, gradients are read
//! back in the same order.

mod attention;
mod lstm;

use rand::Rng;

use crate::error::{invalid, Result};
use crate::real::Real;
use crate::tensor::{Graph, Padding, Tensor, Var};

pub use attention::{attention, score_weights, AttentionHead, ATTENTION_EPSILON};
pub use lstm::{bilstm, lstm, LstmLayer};

/// Parameter ownership shared by all layers.
pub trait Layer<T: Real> {
    /// Named parameters in binding order.
    fn params(&self) -> Vec<(&'static str, &Tensor<T>)>;

    fn params_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)>;

    /// Places every parameter on `g` as a trainable leaf.
    fn bind(&self, g: &mut Graph<T>) -> Result<Vec<Var>> {
        self.params().into_iter().map(|(_, t)| g.leaf(t)).collect()
    }

    fn param_count(&self) -> usize {
        self.params().iter().map(|(_, t)| t.numel()).sum()
    }
}

/// Glorot-uniform sample of `shape`: `U(-l, l)` with `l = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<T: Real, R: Rng + ?Sized>(
    shape: Vec<usize>,
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) -> Tensor<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| T::from_f64_lossy(rng.random_range(-limit..limit)))
        .collect();
    Tensor::new(shape, data)
        .expect("shape product matches")
        .with_grad()
}

pub(crate) fn zeros_param<T: Real>(shape: Vec<usize>) -> Tensor<T> {
    Tensor::zeros(shape).with_grad()
}

/// Adds a `[n]` bias to every row of a `[rows, n]` matrix.
pub(crate) fn add_row_bias<T: Real>(g: &mut Graph<T>, x: Var, bias: Var) -> Result<Var> {
    let rows = g.shape(x)[0];
    let n = g.shape(bias)[0];
    let b = g.reshape(bias, vec![1, n])?;
    let b = g.repeat(b, 0, rows)?;
    g.add(x, b)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv1dLayer<T> {
    /// `[out, in, kernel]`
    pub weights: Tensor<T>,
    /// `[out]`
    pub bias: Tensor<T>,
}

impl<T: Real> Conv1dLayer<T> {
    pub fn new<R: Rng + ?Sized>(in_channels: usize, out_channels: usize, kernel_size: usize, rng: &mut R) -> Result<Self> {
        if kernel_size == 0 || in_channels == 0 || out_channels == 0 {
            return Err(invalid("conv layer dimensions must be positive"));
        }
        Ok(Self {
            weights: glorot_uniform(
                vec![out_channels, in_channels, kernel_size],
                in_channels * kernel_size,
                out_channels * kernel_size,
                rng,
            ),
            bias: zeros_param(vec![out_channels]),
        })
    }

    pub fn from_tensors(weights: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        match (weights.shape(), bias.shape()) {
            ([o, c, k], [ob]) if o == ob && *c > 0 && *k > 0 => Ok(Self { weights, bias }),
            (w, b) => Err(invalid(format!("inconsistent conv shapes {w:?} / {b:?}"))),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn kernel_size(&self) -> usize {
        self.weights.shape()[2]
    }

    /// `x`: `[batch, time, in]` or `[time, in]`.
    pub fn forward(&self, g: &mut Graph<T>, p: &[Var], x: Var, padding: Padding) -> Result<Var> {
        g.conv1d(x, p[0], p[1], padding)
    }

    /// Convolution, ReLU and max-pooling in one graph op.
    pub fn forward_pooled(
        &self,
        g: &mut Graph<T>,
        p: &[Var],
        x: Var,
        padding: Padding,
        pool: usize,
        stride: usize,
    ) -> Result<Var> {
        g.conv_relu_pool(x, p[0], p[1], padding, pool, stride)
    }
}

impl<T: Real> Layer<T> for Conv1dLayer<T> {
    fn params(&self) -> Vec<(&'static str, &Tensor<T>)> {
        vec![("weight", &self.weights), ("bias", &self.bias)]
    }

    fn params_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        vec![("weight", &mut self.weights), ("bias", &mut self.bias)]
    }
}

/// Fully connected `[in] -> [out]` projection.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    /// `[in, out]`
    pub weights: Tensor<T>,
    /// `[out]`
    pub bias: Tensor<T>,
}

impl<T: Real> Dense<T> {
    pub fn new<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Result<Self> {
        if inputs == 0 || outputs == 0 {
            return Err(invalid("dense layer dimensions must be positive"));
        }
        Ok(Self {
            weights: glorot_uniform(vec![inputs, outputs], inputs, outputs, rng),
            bias: zeros_param(vec![outputs]),
        })
    }

    pub fn inputs(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weights.shape()[1]
    }

    /// `x`: `[batch, in]`.
    pub fn forward(&self, g: &mut Graph<T>, p: &[Var], x: Var) -> Result<Var> {
        let y = g.matmul(x, p[0])?;
        add_row_bias(g, y, p[1])
    }
}

impl<T: Real> Layer<T> for Dense<T> {
    fn params(&self) -> Vec<(&'static str, &Tensor<T>)> {
        vec![("weight", &self.weights), ("bias", &self.bias)]
    }

    fn params_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        vec![("weight", &mut self.weights), ("bias", &mut self.bias)]
    }
}

/// Inverted dropout. Outside training, or at rate 0, returns `x` unchanged.
pub fn dropout<T: Real, R: Rng + ?Sized>(
    g: &mut Graph<T>,
    x: Var,
    rate: f64,
    training: bool,
    rng: &mut R,
) -> Result<Var> {
    if !(0.0..1.0).contains(&rate) {
        return Err(invalid(format!("dropout rate {rate} outside [0, 1)")));
    }
    if !training || rate == 0.0 {
        return Ok(x);
    }
    let keep = T::from_f64_lossy(1.0 / (1.0 - rate));
    let n = g.value(x).len();
    let mask = (0..n)
        .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
        .collect();
    let mask = g.constant(g.shape(x).to_vec(), mask)?;
    g.mul(x, mask)
}

/// Mean over the batch of `weight_i * -log softmax(logits_i)[label_i]`.
/// `weights` defaults to 1 per sample.
pub fn softmax_cross_entropy<T: Real>(
    g: &mut Graph<T>,
    logits: Var,
    labels: &[usize],
    weights: Option<&[T]>,
) -> Result<Var> {
    let (batch, classes) = match *g.shape(logits) {
        [b, c] => (b, c),
        ref s => return Err(invalid(format!("logits must be [batch, classes], got {s:?}"))),
    };
    if labels.len() != batch {
        return Err(invalid(format!("{} labels for a batch of {batch}", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(invalid(format!("label {bad} out of range for {classes} classes")));
    }
    if let Some(w) = weights {
        if w.len() != batch {
            return Err(invalid(format!("{} sample weights for a batch of {batch}", w.len())));
        }
    }
    let m = g.reduce_max(logits, 1)?;
    let m = g.repeat(m, 1, classes)?;
    let z = g.sub(logits, m)?;
    let e = g.exp(z)?;
    let s = g.reduce_sum(e, 1)?;
    let lse = g.log(s)?;
    let lse = g.repeat(lse, 1, classes)?;
    let logp = g.sub(z, lse)?;
    let inv_b = T::one() / T::from_usize(batch).expect("batch fits");
    let mut pick = vec![T::zero(); batch * classes];
    for (i, &l) in labels.iter().enumerate() {
        let w = weights.map_or(T::one(), |w| w[i]);
        pick[i * classes + l] = -w * inv_b;
    }
    let pick = g.constant(vec![batch, classes], pick)?;
    let picked = g.mul(logp, pick)?;
    g.sum_all(picked)
}

/// Row-wise softmax of a `[batch, classes]` matrix, outside any graph.
pub fn softmax_rows<T: Real>(logits: &[T], classes: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks_exact(classes) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let e: Vec<T> = row.iter().map(|&v| (v - m).exp()).collect();
        let s: T = e.iter().copied().sum();
        out.extend(e.into_iter().map(|v| v / s));
    }
    out
}
