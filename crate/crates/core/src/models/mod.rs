//! The three classifiers (convolutional, convolutional-recurrent, and
//! convolutional-recurrent with attention pooling) and their checkpoint format.

mod checkpoint;

use std::fmt;
use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::FeatureMatrix;
use crate::error::{invalid, Error, Result};
use crate::nn::{
    attention, bilstm, dropout, AttentionHead, Conv1dLayer, Dense, Layer, LstmLayer, ATTENTION_EPSILON,
};
use crate::real::Real;
use crate::tensor::{Graph, Padding, Tensor, Var};

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ArchTag {
    #[serde(rename = "CNN")]
    Cnn,
    #[serde(rename = "CRNN")]
    Crnn,
    #[serde(rename = "CRNN_ATTN")]
    CrnnAttn,
}

impl ArchTag {
    pub const ALL: [ArchTag; 3] = [ArchTag::Cnn, ArchTag::Crnn, ArchTag::CrnnAttn];

    pub fn as_str(self) -> &'static str {
        match self {
            ArchTag::Cnn => "CNN",
            ArchTag::Crnn => "CRNN",
            ArchTag::CrnnAttn => "CRNN_ATTN",
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            ArchTag::Cnn => 0,
            ArchTag::Crnn => 1,
            ArchTag::CrnnAttn => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.code() == code)
    }

    pub fn has_lstm(self) -> bool {
        self != ArchTag::Cnn
    }
}

impl fmt::Display for ArchTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ArchTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace('-', "_").as_str() {
            "CNN" => Ok(ArchTag::Cnn),
            "CRNN" => Ok(ArchTag::Crnn),
            "CRNN_ATTN" => Ok(ArchTag::CrnnAttn),
            _ => Err(invalid(format!(
                "unknown architecture '{s}' (expected CNN, CRNN or CRNN_ATTN)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub kernel: usize,
    pub filters: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolSpec {
    pub size: usize,
    pub stride: usize,
}

/// Network hyperparameters. Parameter shapes are a pure function of this.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub tag: ArchTag,
    pub conv_spec: Vec<ConvSpec>,
    pub pool: PoolSpec,
    pub lstm_units: usize,
    pub n_classes: usize,
    #[serde(default)]
    pub padding: Padding,
    /// Frames per input matrix.
    pub input_frames: usize,
    /// Coefficients per frame (input channels).
    pub input_coefs: usize,
}

pub const DEFAULT_CONV_SPEC: [(usize, usize); 4] = [(3, 512), (3, 512), (3, 256), (3, 128)];

impl Architecture {
    /// Default layer sizes for 1000 x 13 inputs.
    pub fn new(tag: ArchTag, n_classes: usize) -> Self {
        Self {
            tag,
            conv_spec: DEFAULT_CONV_SPEC
                .iter()
                .map(|&(kernel, filters)| ConvSpec { kernel, filters })
                .collect(),
            pool: PoolSpec { size: 3, stride: 3 },
            lstm_units: 256,
            n_classes,
            padding: Padding::Valid,
            input_frames: 1000,
            input_coefs: 13,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.conv_spec.is_empty() {
            return Err(invalid("conv_spec must not be empty"));
        }
        if self.n_classes < 2 {
            return Err(invalid(format!("n_classes must be at least 2, got {}", self.n_classes)));
        }
        if self.conv_spec.iter().any(|c| c.kernel == 0 || c.filters == 0) {
            return Err(invalid("conv kernels and filters must be positive"));
        }
        if self.pool.size == 0 || self.pool.stride == 0 {
            return Err(invalid("pool size and stride must be positive"));
        }
        if self.tag.has_lstm() && self.lstm_units == 0 {
            return Err(invalid("lstm_units must be positive"));
        }
        if self.input_frames == 0 || self.input_coefs == 0 {
            return Err(invalid("input shape must be positive"));
        }
        self.time_steps().map(|_| ())
    }

    /// Time-axis length after the conv/pool stack.
    pub fn time_steps(&self) -> Result<usize> {
        let mut t = self.input_frames;
        for (i, c) in self.conv_spec.iter().enumerate() {
            t = self
                .padding
                .output_len(t, c.kernel)
                .filter(|&n| n >= self.pool.size)
                .ok_or_else(|| {
                    invalid(format!(
                        "time axis too short at conv layer {i}: {t} frames, kernel {}, pool {}",
                        c.kernel, self.pool.size
                    ))
                })?;
            t = (t - self.pool.size) / self.pool.stride + 1;
        }
        Ok(t)
    }

    fn final_channels(&self) -> usize {
        self.conv_spec.last().map_or(0, |c| c.filters)
    }

    fn head_inputs(&self) -> Result<usize> {
        Ok(match self.tag {
            ArchTag::Cnn => self.time_steps()? * self.final_channels(),
            _ => 2 * self.lstm_units,
        })
    }

    /// Same network with every convolution kernel set to `kernel`.
    pub fn with_kernel(&self, kernel: usize) -> Self {
        let mut a = self.clone();
        a.conv_spec.iter_mut().for_each(|c| c.kernel = kernel);
        a
    }

    /// Number of trainable scalars, from the layer shapes alone.
    pub fn param_count(&self) -> Result<usize> {
        self.validate()?;
        let mut n = 0;
        let mut ch = self.input_coefs;
        for c in &self.conv_spec {
            n += c.filters * ch * c.kernel + c.filters;
            ch = c.filters;
        }
        if self.tag.has_lstm() {
            let u = self.lstm_units;
            n += 2 * (ch * 4 * u + u * 4 * u + 4 * u);
        }
        if self.tag == ArchTag::CrnnAttn {
            let f = 2 * self.lstm_units;
            n += f * f + 2 * f;
        }
        n += self.head_inputs()? * self.n_classes + self.n_classes;
        Ok(n)
    }
}

/// Training-time dropout source.
pub struct DropoutCtx<'a> {
    pub rate: f64,
    pub rng: &'a mut dyn RngCore,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    arch: Architecture,
    pub convs: Vec<Conv1dLayer<T>>,
    pub lstm: Option<(LstmLayer<T>, LstmLayer<T>)>,
    pub attention: Option<AttentionHead<T>>,
    pub dense: Dense<T>,
    /// Optimizer steps taken so far.
    pub step: u64,
    /// Seed the parameters were initialized from.
    pub seed: u64,
}

impl<T: Real> Model<T> {
    /// Freshly initialized model; the seed fully determines the parameters.
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut convs = Vec::with_capacity(arch.conv_spec.len());
        let mut ch = arch.input_coefs;
        for c in &arch.conv_spec {
            convs.push(Conv1dLayer::new(ch, c.filters, c.kernel, &mut rng)?);
            ch = c.filters;
        }
        let lstm = if arch.tag.has_lstm() {
            Some((
                LstmLayer::new(ch, arch.lstm_units, &mut rng)?,
                LstmLayer::new(ch, arch.lstm_units, &mut rng)?,
            ))
        } else {
            None
        };
        let attention = if arch.tag == ArchTag::CrnnAttn {
            let f = 2 * arch.lstm_units;
            Some(AttentionHead::new(f, f, &mut rng)?)
        } else {
            None
        };
        let dense = Dense::new(arch.head_inputs()?, arch.n_classes, &mut rng)?;
        Ok(Self {
            arch,
            convs,
            lstm,
            attention,
            dense,
            step: 0,
            seed,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn tag(&self) -> ArchTag {
        self.arch.tag
    }

    pub fn n_classes(&self) -> usize {
        self.arch.n_classes
    }

    fn layers(&self) -> Vec<(String, &dyn Layer<T>)> {
        let mut out: Vec<(String, &dyn Layer<T>)> = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            out.push((format!("conv{i}"), c));
        }
        if let Some((f, b)) = &self.lstm {
            out.push(("lstm_fwd".into(), f));
            out.push(("lstm_bwd".into(), b));
        }
        if let Some(a) = &self.attention {
            out.push(("attention".into(), a));
        }
        out.push(("dense".into(), &self.dense));
        out
    }

    /// `(name, tensor)` for every parameter, in binding order.
    pub fn named_params(&self) -> Vec<(String, &Tensor<T>)> {
        self.layers()
            .into_iter()
            .flat_map(|(prefix, layer)| {
                layer
                    .params()
                    .into_iter()
                    .map(move |(n, t)| (format!("{prefix}.{n}"), t))
            })
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for c in &mut self.convs {
            out.extend(c.params_mut().into_iter().map(|(_, t)| t));
        }
        if let Some((f, b)) = &mut self.lstm {
            out.extend(f.params_mut().into_iter().map(|(_, t)| t));
            out.extend(b.params_mut().into_iter().map(|(_, t)| t));
        }
        if let Some(a) = &mut self.attention {
            out.extend(a.params_mut().into_iter().map(|(_, t)| t));
        }
        out.extend(self.dense.params_mut().into_iter().map(|(_, t)| t));
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Places every parameter on `g`, in [`Model::named_params`] order.
    pub fn bind(&self, g: &mut Graph<T>) -> Result<Vec<Var>> {
        self.named_params().into_iter().map(|(_, t)| g.leaf(t)).collect()
    }

    /// Logits `[batch, n_classes]` for `x: [batch, frames, coefs]`. Dropout
    /// is applied after the last pooling layer and after the BiLSTM when
    /// `dropout` is given.
    pub fn forward(&self, g: &mut Graph<T>, p: &[Var], x: Var, mut drop: Option<DropoutCtx<'_>>) -> Result<Var> {
        let (b, frames, coefs) = match *g.shape(x) {
            [b, f, c] => (b, f, c),
            ref s => return Err(invalid(format!("model input must be [batch, frames, coefs], got {s:?}"))),
        };
        if frames != self.arch.input_frames || coefs != self.arch.input_coefs {
            return Err(invalid(format!(
                "model expects {}x{} inputs, got {frames}x{coefs}",
                self.arch.input_frames, self.arch.input_coefs
            )));
        }
        let mut apply_dropout = |g: &mut Graph<T>, v: Var| -> Result<Var> {
            match drop.as_mut() {
                Some(d) => dropout(g, v, d.rate, true, &mut *d.rng),
                None => Ok(v),
            }
        };

        let mut h = x;
        let mut k = 0;
        for conv in &self.convs {
            let (size, stride) = (self.arch.pool.size, self.arch.pool.stride);
            h = conv.forward_pooled(g, &p[k..k + 2], h, self.arch.padding, size, stride)?;
            k += 2;
        }
        h = apply_dropout(g, h)?;

        let summary = match self.arch.tag {
            ArchTag::Cnn => {
                let n: usize = g.shape(h)[1..].iter().product();
                g.reshape(h, vec![b, n])?
            }
            ArchTag::Crnn | ArchTag::CrnnAttn => {
                let y = bilstm(g, &p[k..k + 3], &p[k + 3..k + 6], h)?;
                k += 6;
                let y = apply_dropout(g, y)?;
                if self.arch.tag == ArchTag::Crnn {
                    last_state_pair(g, y, self.arch.lstm_units)?
                } else {
                    let (s, _) = attention(g, &p[k..k + 3], y, self.attention.as_ref().map_or(ATTENTION_EPSILON, |a| a.epsilon))?;
                    k += 3;
                    s
                }
            }
        };
        self.dense.forward(g, &p[k..k + 2], summary)
    }

    /// Stacks feature matrices into a `[batch, frames, coefs]` constant.
    pub fn input(&self, g: &mut Graph<T>, batch: &[&FeatureMatrix<T>]) -> Result<Var> {
        let (f, c) = (self.arch.input_frames, self.arch.input_coefs);
        let mut data = Vec::with_capacity(batch.len() * f * c);
        for m in batch {
            if m.rows != f || m.cols != c {
                return Err(invalid(format!(
                    "feature matrix is {}x{}, model expects {f}x{c}",
                    m.rows, m.cols
                )));
            }
            data.extend_from_slice(&m.values);
        }
        g.constant(vec![batch.len(), f, c], data)
    }

    /// Eval-mode logits, one row per input, computed in chunks of `chunk`.
    pub fn predict_logits(&self, batch: &[&FeatureMatrix<T>], chunk: usize) -> Result<Vec<Vec<T>>> {
        let mut out = Vec::with_capacity(batch.len());
        for part in batch.chunks(chunk.max(1)) {
            let mut g = Graph::inference();
            let p = self.bind(&mut g)?;
            let x = self.input(&mut g, part)?;
            let logits = self.forward(&mut g, &p, x, None)?;
            out.extend(g.value(logits).chunks_exact(self.arch.n_classes).map(<[T]>::to_vec));
        }
        Ok(out)
    }

    /// Argmax class per input.
    pub fn predict(&self, batch: &[&FeatureMatrix<T>], chunk: usize) -> Result<Vec<usize>> {
        Ok(self
            .predict_logits(batch, chunk)?
            .iter()
            .map(|row| argmax(row))
            .collect())
    }
}

/// Final forward state (last row, first half) joined with the final backward
/// state (first row, second half): `[batch, 2 * units]`.
fn last_state_pair<T: Real>(g: &mut Graph<T>, y: Var, units: usize) -> Result<Var> {
    let s = g.shape(y).to_vec();
    let (b, t) = (s[0], s[1]);
    let last = g.slice(y, 1, t - 1, 1)?;
    let fwd = g.slice(last, 2, 0, units)?;
    let first = g.slice(y, 1, 0, 1)?;
    let bwd = g.slice(first, 2, units, units)?;
    let pair = g.concat(&[fwd, bwd], 2)?;
    g.reshape(pair, vec![b, 2 * units])
}

pub fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}
