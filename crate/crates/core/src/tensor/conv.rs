//! Fused 1-D convolution and max-pooling kernels.
//!
//! Convolution lowers to a GEMM over an im2col buffer. Trailing input rows
//! that are bitwise identical (zero-padded frames after a short clip) produce
//! identical output rows, so only the first of them is computed and the rest
//! are copies. The weight gradient folds the copies' upstream gradients into
//! that one representative row, which gives the same result as the dense sum.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::real::Real;

/// Time-axis padding for convolutions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// No padding; the output is `kernel - 1` rows shorter than the input.
    #[default]
    Valid,
    /// Zero padding so the output has as many rows as the input. The extra
    /// row for even kernels goes on the right.
    Same,
}

impl Padding {
    /// `(left, right)` zero rows for a kernel of width `k`.
    pub fn amounts(self, k: usize) -> (usize, usize) {
        match self {
            Padding::Valid => (0, 0),
            Padding::Same => {
                let total = k.saturating_sub(1);
                (total / 2, total - total / 2)
            }
        }
    }

    /// Output length for an input of `t` rows, if it is at least one.
    pub fn output_len(self, t: usize, k: usize) -> Option<usize> {
        let (l, r) = self.amounts(k);
        (t + l + r).checked_sub(k).map(|v| v + 1)
    }
}

/// im2col rows for the non-repeating part of every sample.
#[derive(Debug)]
pub(crate) struct Lowered<T> {
    batched: bool,
    batch: usize,
    t_in: usize,
    c_in: usize,
    out_ch: usize,
    k: usize,
    pad_left: usize,
    t_out: usize,
    col: Vec<T>,
    // Rows of `col` per sample; fewer than `t_out` when the tail was folded.
    computed: Vec<usize>,
}

impl<T> Lowered<T> {
    fn total_rows(&self) -> usize {
        self.computed.iter().sum()
    }

    /// Row of the folded buffer holding output row `t` of `sample`, given the
    /// first folded row of that sample.
    fn folded_row(&self, offset: usize, sample: usize, t: usize) -> usize {
        offset + t.min(self.computed[sample] - 1)
    }
}

#[derive(Debug)]
pub(crate) struct ConvSaved<T> {
    low: Lowered<T>,
}

impl<T> ConvSaved<T> {
    pub(crate) fn release(&mut self) {
        self.low.col = Vec::new();
    }
}

pub(crate) struct ConvGrads<T> {
    pub dx: Option<Vec<T>>,
    pub dw: Option<Vec<T>>,
    pub db: Option<Vec<T>>,
}

fn batch_dims(shape: &[usize], what: &str) -> Result<(bool, usize, usize, usize)> {
    match *shape {
        [t, c] => Ok((false, 1, t, c)),
        [b, t, c] => Ok((true, b, t, c)),
        _ => Err(invalid(format!("{what} expects [batch, time, channels] or [time, channels], got {shape:?}"))),
    }
}

/// First padded row index from which every row equals the last one. `row`
/// maps a padded index to a row of `x`, or `None` for a zero pad row.
fn tail_start<T: Real>(row: impl Fn(usize) -> Option<usize>, x: &[T], c: usize, tp: usize) -> usize {
    let last = row(tp - 1);
    let same = |r: Option<usize>| match (r, last) {
        (None, None) => true,
        (Some(a), Some(b)) => x[a * c..(a + 1) * c] == x[b * c..(b + 1) * c],
        (Some(a), None) | (None, Some(a)) => x[a * c..(a + 1) * c].iter().all(|v| *v == T::zero()),
    };
    let mut s = tp - 1;
    while s > 0 && same(row(s - 1)) {
        s -= 1;
    }
    s
}

fn lower<T: Real>(
    what: &str,
    x_shape: &[usize],
    x: &[T],
    w_shape: &[usize],
    b_shape: &[usize],
    padding: Padding,
) -> Result<Lowered<T>> {
    let (batched, batch, t_in, c_in) = batch_dims(x_shape, what)?;
    let (out_ch, k) = match *w_shape {
        [o, c, k] if c == c_in && k > 0 => (o, k),
        _ => {
            return Err(invalid(format!(
                "{what} weight must be [out, {c_in}, kernel], got {w_shape:?}"
            )))
        }
    };
    if b_shape != [out_ch] {
        return Err(invalid(format!("{what} bias must be [{out_ch}], got {b_shape:?}")));
    }
    let t_out = padding.output_len(t_in, k).filter(|&n| n > 0).ok_or_else(|| {
        invalid(format!(
            "{what}: input of {t_in} rows is shorter than kernel {k} with {padding:?} padding"
        ))
    })?;
    let (pad_left, pad_right) = padding.amounts(k);
    let tp = t_in + pad_left + pad_right;
    let ck = c_in * k;

    let mut computed = Vec::with_capacity(batch);
    for s in 0..batch {
        let xs = &x[s * t_in * c_in..(s + 1) * t_in * c_in];
        let row = |p: usize| (p >= pad_left && p - pad_left < t_in).then(|| p - pad_left);
        let start = tail_start(row, xs, c_in, tp);
        computed.push(start.min(t_out - 1) + 1);
    }
    let total: usize = computed.iter().sum();

    let mut col = vec![T::zero(); total * ck];
    let mut r = 0;
    for (s, &n) in computed.iter().enumerate() {
        let xs = &x[s * t_in * c_in..(s + 1) * t_in * c_in];
        for t in 0..n {
            let dst = &mut col[r * ck..(r + 1) * ck];
            for kk in 0..k {
                let p = t + kk;
                if p < pad_left || p - pad_left >= t_in {
                    continue;
                }
                let src = &xs[(p - pad_left) * c_in..(p - pad_left + 1) * c_in];
                for (c, &v) in src.iter().enumerate() {
                    dst[c * k + kk] = v;
                }
            }
            r += 1;
        }
    }
    Ok(Lowered {
        batched,
        batch,
        t_in,
        c_in,
        out_ch,
        k,
        pad_left,
        t_out,
        col,
        computed,
    })
}

/// Folded pre-activation rows `[total_rows, out]`, bias included.
fn folded_output<T: Real>(low: &Lowered<T>, w: &[T], b: &[T]) -> Vec<T> {
    let (total, ck, o) = (low.total_rows(), low.c_in * low.k, low.out_ch);
    let mut yc = vec![T::zero(); total * o];
    T::gemm(total, ck, o, T::one(), &low.col, false, w, true, T::zero(), &mut yc);
    for row in yc.chunks_exact_mut(o) {
        for (v, &bias) in row.iter_mut().zip(b) {
            *v = *v + bias;
        }
    }
    yc
}

fn out_shape(batched: bool, batch: usize, t: usize, c: usize) -> Vec<usize> {
    if batched {
        vec![batch, t, c]
    } else {
        vec![t, c]
    }
}

pub(crate) fn conv1d_forward<T: Real>(
    x_shape: &[usize],
    x: &[T],
    w_shape: &[usize],
    w: &[T],
    b_shape: &[usize],
    b: &[T],
    padding: Padding,
) -> Result<(Vec<usize>, Vec<T>, ConvSaved<T>)> {
    let low = lower("conv1d", x_shape, x, w_shape, b_shape, padding)?;
    let yc = folded_output(&low, w, b);
    let (o, t_out) = (low.out_ch, low.t_out);
    let mut out = vec![T::zero(); low.batch * t_out * o];
    let mut offset = 0;
    for s in 0..low.batch {
        for t in 0..t_out {
            let src = low.folded_row(offset, s, t);
            out[(s * t_out + t) * o..(s * t_out + t + 1) * o].copy_from_slice(&yc[src * o..(src + 1) * o]);
        }
        offset += low.computed[s];
    }
    Ok((out_shape(low.batched, low.batch, t_out, o), out, ConvSaved { low }))
}

/// Weight and bias gradients from folded upstream rows `gc: [total_rows, out]`.
fn param_grads<T: Real>(low: &Lowered<T>, gc: &[T], want_w: bool, want_b: bool) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let (o, ck) = (low.out_ch, low.c_in * low.k);
    let db = want_b.then(|| {
        let mut db = vec![T::zero(); o];
        for row in gc.chunks_exact(o) {
            for (d, &v) in db.iter_mut().zip(row) {
                *d = *d + v;
            }
        }
        db
    });
    let dw = want_w.then(|| {
        let mut dw = vec![T::zero(); o * ck];
        T::gemm(o, low.total_rows(), ck, T::one(), gc, true, &low.col, false, T::zero(), &mut dw);
        dw
    });
    (dw, db)
}

/// Input gradient from full upstream rows `g: [batch * t_out, out]`.
fn input_grad<T: Real>(low: &Lowered<T>, g: &[T], w: &[T]) -> Vec<T> {
    let (o, k, c_in) = (low.out_ch, low.k, low.c_in);
    let ck = c_in * k;
    let rows = low.batch * low.t_out;
    // Rows of g that are entirely zero (common below a max-pool) add
    // nothing, so only the others go through the GEMM.
    let live: Vec<usize> = (0..rows)
        .filter(|&r| g[r * o..(r + 1) * o].iter().any(|v| *v != T::zero()))
        .collect();
    let mut packed = Vec::with_capacity(live.len() * o);
    for &r in &live {
        packed.extend_from_slice(&g[r * o..(r + 1) * o]);
    }
    let mut dcol = vec![T::zero(); live.len() * ck];
    T::gemm(live.len(), o, ck, T::one(), &packed, false, w, false, T::zero(), &mut dcol);
    let mut dx = vec![T::zero(); low.batch * low.t_in * c_in];
    for (i, &row) in live.iter().enumerate() {
        let (b, t) = (row / low.t_out, row % low.t_out);
        let src = &dcol[i * ck..(i + 1) * ck];
        for kk in 0..k {
            let p = t + kk;
            if p < low.pad_left || p - low.pad_left >= low.t_in {
                continue;
            }
            let base = (b * low.t_in + p - low.pad_left) * c_in;
            for c in 0..c_in {
                dx[base + c] = dx[base + c] + src[c * k + kk];
            }
        }
    }
    dx
}

pub(crate) fn conv1d_backward<T: Real>(
    s: &ConvSaved<T>,
    g: &[T],
    w: &[T],
    want_x: bool,
    want_w: bool,
    want_b: bool,
) -> ConvGrads<T> {
    let low = &s.low;
    let o = low.out_ch;
    let (dw, db) = if want_w || want_b {
        let mut gc = vec![T::zero(); low.total_rows() * o];
        let mut offset = 0;
        for b in 0..low.batch {
            for t in 0..low.t_out {
                let dst = low.folded_row(offset, b, t);
                let src = &g[(b * low.t_out + t) * o..(b * low.t_out + t + 1) * o];
                for (d, &v) in gc[dst * o..(dst + 1) * o].iter_mut().zip(src) {
                    *d = *d + v;
                }
            }
            offset += low.computed[b];
        }
        param_grads(low, &gc, want_w, want_b)
    } else {
        (None, None)
    };
    let dx = want_x.then(|| input_grad(low, g, w));
    ConvGrads { dx, dw, db }
}

/// Saved state of the fused convolution, ReLU and max-pool block.
#[derive(Debug)]
pub(crate) struct BlockSaved<T> {
    low: Lowered<T>,
    /// Folded post-activation rows.
    act: Vec<T>,
    pool_out: usize,
    /// Winning output row (within its sample) per pooled element.
    argmax: Vec<u32>,
}

impl<T> BlockSaved<T> {
    pub(crate) fn release(&mut self) {
        self.low.col = Vec::new();
        self.act = Vec::new();
        self.argmax = Vec::new();
    }
}

/// `maxpool(relu(conv1d(x)))` evaluated on folded rows, so the full-length
/// convolution output is never materialized. Ties in a window go to the
/// earliest row, as in the separate ops.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_block_forward<T: Real>(
    x_shape: &[usize],
    x: &[T],
    w_shape: &[usize],
    w: &[T],
    b_shape: &[usize],
    b: &[T],
    padding: Padding,
    pool: usize,
    stride: usize,
) -> Result<(Vec<usize>, Vec<T>, BlockSaved<T>)> {
    if pool == 0 || stride == 0 {
        return Err(invalid("conv block pool and stride must be positive"));
    }
    let low = lower("conv block", x_shape, x, w_shape, b_shape, padding)?;
    if low.t_out < pool {
        return Err(invalid(format!(
            "conv block: {} convolution rows are fewer than pool {pool}",
            low.t_out
        )));
    }
    let mut act = folded_output(&low, w, b);
    for v in act.iter_mut() {
        *v = v.max(T::zero());
    }
    let (o, t_out) = (low.out_ch, low.t_out);
    let p_out = (t_out - pool) / stride + 1;
    let mut out = Vec::with_capacity(low.batch * p_out * o);
    let mut argmax = Vec::with_capacity(low.batch * p_out * o);
    let mut offset = 0;
    for s in 0..low.batch {
        for j in 0..p_out {
            let first = j * stride;
            let base = low.folded_row(offset, s, first);
            let start = out.len();
            out.extend_from_slice(&act[base * o..(base + 1) * o]);
            argmax.extend(std::iter::repeat(first as u32).take(o));
            for t in first + 1..first + pool {
                let row = low.folded_row(offset, s, t);
                if row == base {
                    continue;
                }
                let src = &act[row * o..(row + 1) * o];
                for ch in 0..o {
                    if src[ch] > out[start + ch] {
                        out[start + ch] = src[ch];
                        argmax[start + ch] = t as u32;
                    }
                }
            }
        }
        offset += low.computed[s];
    }
    let shape = out_shape(low.batched, low.batch, p_out, o);
    Ok((
        shape,
        out,
        BlockSaved {
            low,
            act,
            pool_out: p_out,
            argmax,
        },
    ))
}

pub(crate) fn conv_block_backward<T: Real>(
    s: &BlockSaved<T>,
    g: &[T],
    w: &[T],
    want_x: bool,
    want_w: bool,
    want_b: bool,
) -> ConvGrads<T> {
    let low = &s.low;
    let (o, t_out) = (low.out_ch, low.t_out);
    let mut gc = vec![T::zero(); low.total_rows() * o];
    let mut full = if want_x {
        vec![T::zero(); low.batch * t_out * o]
    } else {
        Vec::new()
    };
    let mut offset = 0;
    for b in 0..low.batch {
        for j in 0..s.pool_out {
            let idx = (b * s.pool_out + j) * o;
            for ch in 0..o {
                let gv = g[idx + ch];
                let t = s.argmax[idx + ch] as usize;
                let row = low.folded_row(offset, b, t);
                if s.act[row * o + ch] > T::zero() {
                    gc[row * o + ch] = gc[row * o + ch] + gv;
                    if want_x {
                        let f = (b * t_out + t) * o + ch;
                        full[f] = full[f] + gv;
                    }
                }
            }
        }
        offset += low.computed[b];
    }
    let (dw, db) = param_grads(low, &gc, want_w, want_b);
    let dx = want_x.then(|| input_grad(low, &full, w));
    ConvGrads { dx, dw, db }
}

#[derive(Debug)]
pub(crate) struct PoolSaved {
    in_len: usize,
    argmax: Vec<usize>,
}

pub(crate) fn maxpool1d_forward<T: Real>(
    shape: &[usize],
    x: &[T],
    pool: usize,
    stride: usize,
) -> Result<(Vec<usize>, Vec<T>, PoolSaved)> {
    let (batched, batch, t_in, c) = batch_dims(shape, "maxpool1d")?;
    if pool == 0 || stride == 0 {
        return Err(invalid("maxpool1d pool and stride must be positive"));
    }
    if t_in < pool {
        return Err(invalid(format!(
            "maxpool1d: input of {t_in} rows is shorter than pool {pool}"
        )));
    }
    let t_out = (t_in - pool) / stride + 1;
    let mut out = Vec::with_capacity(batch * t_out * c);
    let mut argmax = Vec::with_capacity(batch * t_out * c);
    for b in 0..batch {
        for t in 0..t_out {
            let first = (b * t_in + t * stride) * c;
            for ch in 0..c {
                let mut best = first + ch;
                for p in 1..pool {
                    let idx = first + p * c + ch;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
    }
    let shape = if batched {
        vec![batch, t_out, c]
    } else {
        vec![t_out, c]
    };
    Ok((
        shape,
        out,
        PoolSaved {
            in_len: x.len(),
            argmax,
        },
    ))
}

pub(crate) fn maxpool1d_backward<T: Real>(s: &PoolSaved, g: &[T]) -> Vec<T> {
    let mut dx = vec![T::zero(); s.in_len];
    for (&idx, &v) in s.argmax.iter().zip(g) {
        dx[idx] = dx[idx] + v;
    }
    dx
}
