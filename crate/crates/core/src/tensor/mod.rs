//! Dense row-major tensors with tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every primitive executed during one forward pass.
//! Leaves are copied in from [`Tensor`]s; [`Graph::backward`] walks the tape in
//! reverse and leaves `d loss / d leaf` on every leaf that requires a gradient.
//! A graph can be differentiated once; build a new one per step.
//!
//! Shapes are explicit. Elementwise ops require identical shapes, and
//! broadcasting is spelled out with [`Graph::repeat`].

mod conv;
pub mod gradcheck;

use crate::error::{invalid, Error, Result};
use crate::real::Real;

pub use conv::Padding;
use conv::{BlockSaved, ConvGrads, ConvSaved, PoolSaved};

/// An n-dimensional array with an optional gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
    grad: Option<Vec<T>>,
    requires_grad: bool,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(invalid(format!(
                "shape {shape:?} needs {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape,
            data,
            grad: None,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![T::zero(); n],
            grad: None,
            requires_grad: false,
        }
    }

    pub fn scalar(v: T) -> Self {
        Self {
            shape: vec![],
            data: vec![v],
            grad: None,
            requires_grad: false,
        }
    }

    /// Marks the tensor as a trainable leaf.
    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, on: bool) {
        self.requires_grad = on;
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    pub fn accumulate_grad(&mut self, g: &[T]) -> Result<()> {
        if g.len() != self.data.len() {
            return Err(invalid(format!(
                "gradient length {} does not match tensor length {}",
                g.len(),
                self.data.len()
            )));
        }
        match &mut self.grad {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &b)| *a = *a + b),
            None => self.grad = Some(g.to_vec()),
        }
        Ok(())
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }
}

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, T),
    AddScalar(usize),
    Tanh(usize),
    Sigmoid(usize),
    Relu(usize),
    Exp(usize),
    Log(usize),
    Concat { inputs: Vec<usize>, axis: usize },
    Slice { x: usize, axis: usize, start: usize },
    ReduceSum { x: usize, axis: usize },
    SumAll(usize),
    ReduceMax { x: usize, argmax: Vec<usize> },
    Transpose(usize),
    Reshape(usize),
    Repeat { x: usize, axis: usize, n: usize },
    Conv1d { x: usize, w: usize, b: usize, saved: ConvSaved<T> },
    MaxPool1d { x: usize, saved: PoolSaved },
    ConvBlock { x: usize, w: usize, b: usize, saved: BlockSaved<T> },
}

#[derive(Debug)]
struct Node<T> {
    shape: Vec<usize>,
    value: Vec<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Execution tape for one forward/backward pass.
#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    differentiated: bool,
    no_grad: bool,
}

/// `(outer, mid, inner)` extents around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn accumulate<T: Real>(slot: &mut Option<Vec<T>>, g: Vec<T>) {
    match slot {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a = *a + b),
        None => *slot = Some(g),
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            differentiated: false,
            no_grad: false,
        }
    }

    /// A graph for inference: leaves never require gradients, so no
    /// intermediates are kept for a reverse pass.
    pub fn inference() -> Self {
        Self {
            no_grad: true,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn node(&self, v: Var) -> &Node<T> {
        &self.nodes[v.0]
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.node(v).requires_grad
    }

    pub fn to_tensor(&self, v: Var) -> Tensor<T> {
        let n = self.node(v);
        Tensor {
            shape: n.shape.clone(),
            data: n.value.clone(),
            grad: None,
            requires_grad: false,
        }
    }

    /// Gradient accumulated on `v` by [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn push(&mut self, name: &str, shape: Vec<usize>, value: Vec<T>, op: Op<T>, requires_grad: bool) -> Result<Var> {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        if let Some(i) = value.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "{name} produced a non-finite value at element {i}"
            )));
        }
        if self.differentiated {
            return Err(invalid("graph was already differentiated; build a new one"));
        }
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Ok(Var(self.nodes.len() - 1))
    }

    /// Copies a tensor onto the tape as a leaf.
    pub fn leaf(&mut self, t: &Tensor<T>) -> Result<Var> {
        let rg = t.requires_grad && !self.no_grad;
        self.push("leaf", t.shape.clone(), t.data.clone(), Op::Leaf, rg)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<T>) -> Result<Var> {
        let t = Tensor::new(shape, data)?;
        self.push("constant", t.shape, t.data, Op::Leaf, false)
    }

    fn same_shape(&self, name: &str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(invalid(format!(
                "{name}: shape mismatch {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn binary(&mut self, name: &str, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let value = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let rg = self.requires_grad(a) || self.requires_grad(b);
        self.push(name, self.shape(a).to_vec(), value, op, rg)
    }

    fn unary(&mut self, name: &str, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Result<Var> {
        let value = self.value(x).iter().map(|&v| f(v)).collect();
        let rg = self.requires_grad(x);
        self.push(name, self.shape(x).to_vec(), value, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a.0, b.0))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div(a.0, b.0))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Result<Var> {
        self.unary("scale", x, |v| v * c, Op::Scale(x.0, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Result<Var> {
        self.unary("add_scalar", x, |v| v + c, Op::AddScalar(x.0))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary("tanh", x, |v| v.tanh(), Op::Tanh(x.0))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary("sigmoid", x, sigmoid, Op::Sigmoid(x.0))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary("relu", x, |v| v.max(T::zero()), Op::Relu(x.0))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary("exp", x, |v| v.exp(), Op::Exp(x.0))
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary("log", x, |v| v.ln(), Op::Log(x.0))
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(invalid(format!("matmul: incompatible shapes {sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, T::one(), self.value(a), false, self.value(b), false, T::zero(), &mut out);
        let rg = self.requires_grad(a) || self.requires_grad(b);
        self.push("matmul", vec![m, n], out, Op::MatMul(a.0, b.0), rg)
    }

    /// 2-D transpose.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(invalid(format!("transpose expects a matrix, got {s:?}")));
        }
        let (r, c) = (s[0], s[1]);
        let v = self.value(x);
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = v[i * c + j];
            }
        }
        let rg = self.requires_grad(x);
        self.push("transpose", vec![c, r], out, Op::Transpose(x.0), rg)
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(x).len() {
            return Err(invalid(format!(
                "reshape: {:?} cannot become {shape:?}",
                self.shape(x)
            )));
        }
        let value = self.value(x).to_vec();
        let rg = self.requires_grad(x);
        self.push("reshape", shape, value, Op::Reshape(x.0), rg)
    }

    /// Joins tensors along `axis`; all other extents must agree.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs.first().ok_or_else(|| invalid("concat of zero tensors"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(invalid(format!("concat axis {axis} out of range for {base:?}")));
        }
        let mut total = 0;
        for &x in xs {
            let s = self.shape(x);
            let compatible = s.len() == base.len()
                && s.iter().enumerate().all(|(d, &e)| d == axis || e == base[d]);
            if !compatible {
                return Err(invalid(format!("concat: {s:?} does not match {base:?} off axis {axis}")));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &x in xs {
                let mid = self.shape(x)[axis];
                let chunk = mid * inner;
                out.extend_from_slice(&self.value(x)[o * chunk..(o + 1) * chunk]);
            }
        }
        let rg = xs.iter().any(|&x| self.requires_grad(x));
        let inputs = xs.iter().map(|v| v.0).collect();
        self.push("concat", shape, out, Op::Concat { inputs, axis }, rg)
    }

    /// `x[.., start..start+len, ..]` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || start + len > s[axis] || len == 0 {
            return Err(invalid(format!(
                "slice {start}..{} on axis {axis} out of range for {s:?}",
                start + len
            )));
        }
        let (outer, mid, inner) = split_axis(&s, axis);
        let v = self.value(x);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * mid * inner + start * inner;
            out.extend_from_slice(&v[base..base + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        let rg = self.requires_grad(x);
        self.push("slice", shape, out, Op::Slice { x: x.0, axis, start }, rg)
    }

    /// Sum over `axis`, keeping it with extent 1.
    pub fn reduce_sum(&mut self, x: Var, axis: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() {
            return Err(invalid(format!("reduce_sum axis {axis} out of range for {s:?}")));
        }
        let (outer, mid, inner) = split_axis(&s, axis);
        let v = self.value(x);
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for m in 0..mid {
                let src = &v[(o * mid + m) * inner..(o * mid + m + 1) * inner];
                for (d, &e) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d = *d + e;
                }
            }
        }
        let mut shape = s;
        shape[axis] = 1;
        let rg = self.requires_grad(x);
        self.push("reduce_sum", shape, out, Op::ReduceSum { x: x.0, axis }, rg)
    }

    /// Sum of every element, as a scalar (shape `[]`).
    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let total = self.value(x).iter().fold(T::zero(), |a, &b| a + b);
        let rg = self.requires_grad(x);
        self.push("sum_all", vec![], vec![total], Op::SumAll(x.0), rg)
    }

    /// Max over `axis`, keeping it with extent 1. Ties send the gradient to the
    /// first maximal element.
    pub fn reduce_max(&mut self, x: Var, axis: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || s[axis] == 0 {
            return Err(invalid(format!("reduce_max axis {axis} out of range for {s:?}")));
        }
        let (outer, mid, inner) = split_axis(&s, axis);
        let v = self.value(x);
        let mut out = Vec::with_capacity(outer * inner);
        let mut argmax = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let mut best = o * mid * inner + i;
                for m in 1..mid {
                    let idx = (o * mid + m) * inner + i;
                    if v[idx] > v[best] {
                        best = idx;
                    }
                }
                out.push(v[best]);
                argmax.push(best);
            }
        }
        let mut shape = s;
        shape[axis] = 1;
        let rg = self.requires_grad(x);
        self.push("reduce_max", shape, out, Op::ReduceMax { x: x.0, argmax }, rg)
    }

    /// Tiles an extent-1 `axis` to extent `n`.
    pub fn repeat(&mut self, x: Var, axis: usize, n: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || s[axis] != 1 || n == 0 {
            return Err(invalid(format!("repeat needs extent 1 on axis {axis}, got {s:?}")));
        }
        let (outer, _, inner) = split_axis(&s, axis);
        let v = self.value(x);
        let mut out = Vec::with_capacity(outer * n * inner);
        for o in 0..outer {
            for _ in 0..n {
                out.extend_from_slice(&v[o * inner..(o + 1) * inner]);
            }
        }
        let mut shape = s;
        shape[axis] = n;
        let rg = self.requires_grad(x);
        self.push("repeat", shape, out, Op::Repeat { x: x.0, axis, n }, rg)
    }

    /// Cross-correlation along time. `x` is `[batch, time, in]` (or
    /// `[time, in]`), `w` is `[out, in, kernel]`, `b` is `[out]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, padding: Padding) -> Result<Var> {
        let (shape, value, mut saved) = conv::conv1d_forward(
            self.shape(x),
            self.value(x),
            self.shape(w),
            self.value(w),
            self.shape(b),
            self.value(b),
            padding,
        )?;
        let rg = self.requires_grad(x) || self.requires_grad(w) || self.requires_grad(b);
        if !rg {
            saved.release();
        }
        self.push(
            "conv1d",
            shape,
            value,
            Op::Conv1d {
                x: x.0,
                w: w.0,
                b: b.0,
                saved,
            },
            rg,
        )
    }

    /// Windowed max along time of a `[batch, time, channels]` (or
    /// `[time, channels]`) tensor.
    pub fn maxpool1d(&mut self, x: Var, pool: usize, stride: usize) -> Result<Var> {
        let (shape, value, saved) = conv::maxpool1d_forward(self.shape(x), self.value(x), pool, stride)?;
        let rg = self.requires_grad(x);
        self.push("maxpool1d", shape, value, Op::MaxPool1d { x: x.0, saved }, rg)
    }

    /// `maxpool1d(relu(conv1d(x, w, b)))` as one op. Same values and
    /// gradients as the three separate ops, without storing the full-length
    /// convolution output.
    #[allow(clippy::too_many_arguments)]
    pub fn conv_relu_pool(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        padding: Padding,
        pool: usize,
        stride: usize,
    ) -> Result<Var> {
        let (shape, value, mut saved) = conv::conv_block_forward(
            self.shape(x),
            self.value(x),
            self.shape(w),
            self.value(w),
            self.shape(b),
            self.value(b),
            padding,
            pool,
            stride,
        )?;
        let rg = self.requires_grad(x) || self.requires_grad(w) || self.requires_grad(b);
        if !rg {
            saved.release();
        }
        self.push(
            "conv_relu_pool",
            shape,
            value,
            Op::ConvBlock {
                x: x.0,
                w: w.0,
                b: b.0,
                saved,
            },
            rg,
        )
    }

    /// Reverse pass from a scalar `loss`. Every leaf that requires a gradient
    /// ends up with one, zero if it does not influence `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.differentiated {
            return Err(invalid("backward already ran on this graph"));
        }
        let ln = self.node(loss);
        if ln.value.len() != 1 {
            return Err(invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                ln.shape
            )));
        }
        if !ln.requires_grad {
            return Err(invalid("loss does not depend on any trainable leaf"));
        }
        self.differentiated = true;
        self.grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let g = match &self.nodes[i].op {
                Op::Leaf => continue,
                _ => match self.grads[i].take() {
                    Some(g) => g,
                    None => continue,
                },
            };
            self.propagate(i, &g);
        }

        for (node, grad) in self.nodes.iter().zip(self.grads.iter_mut()) {
            if matches!(node.op, Op::Leaf) && node.requires_grad && grad.is_none() {
                *grad = Some(vec![T::zero(); node.value.len()]);
            }
        }
        // Saved intermediates are no longer needed.
        for node in &mut self.nodes {
            match &mut node.op {
                Op::Conv1d { saved, .. } => saved.release(),
                Op::ConvBlock { saved, .. } => saved.release(),
                Op::ReduceMax { argmax, .. } => *argmax = Vec::new(),
                _ => {}
            }
        }
        Ok(())
    }

    fn send(&mut self, target: usize, g: Vec<T>) {
        if self.nodes[target].requires_grad {
            accumulate(&mut self.grads[target], g);
        }
    }

    fn wants(&self, target: usize) -> bool {
        self.nodes[target].requires_grad
    }

    fn propagate(&mut self, i: usize, g: &[T]) {
        let nodes = &self.nodes;
        let out = &nodes[i].value;
        let mut sends: Vec<(usize, Vec<T>)> = Vec::new();
        match &nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                sends.push((*a, g.to_vec()));
                sends.push((*b, g.to_vec()));
            }
            Op::Sub(a, b) => {
                sends.push((*a, g.to_vec()));
                sends.push((*b, g.iter().map(|&v| -v).collect()));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (&nodes[*a].value, &nodes[*b].value);
                if self.wants(*a) {
                    sends.push((*a, g.iter().zip(vb).map(|(&g, &y)| g * y).collect()));
                }
                if self.wants(*b) {
                    sends.push((*b, g.iter().zip(va).map(|(&g, &x)| g * x).collect()));
                }
            }
            Op::Div(a, b) => {
                let (va, vb) = (&nodes[*a].value, &nodes[*b].value);
                if self.wants(*a) {
                    sends.push((*a, g.iter().zip(vb).map(|(&g, &y)| g / y).collect()));
                }
                if self.wants(*b) {
                    sends.push((
                        *b,
                        g.iter()
                            .zip(va.iter().zip(vb))
                            .map(|(&g, (&x, &y))| -g * x / (y * y))
                            .collect(),
                    ));
                }
            }
            Op::Scale(x, c) => sends.push((*x, g.iter().map(|&v| v * *c).collect())),
            Op::AddScalar(x) | Op::Reshape(x) => sends.push((*x, g.to_vec())),
            Op::Tanh(x) => sends.push((*x, g.iter().zip(out).map(|(&g, &y)| g * (T::one() - y * y)).collect())),
            Op::Sigmoid(x) => sends.push((*x, g.iter().zip(out).map(|(&g, &y)| g * y * (T::one() - y)).collect())),
            Op::Relu(x) => {
                let vx = &nodes[*x].value;
                sends.push((
                    *x,
                    g.iter()
                        .zip(vx)
                        .map(|(&g, &v)| if v > T::zero() { g } else { T::zero() })
                        .collect(),
                ));
            }
            Op::Exp(x) => sends.push((*x, g.iter().zip(out).map(|(&g, &y)| g * y).collect())),
            Op::Log(x) => {
                let vx = &nodes[*x].value;
                sends.push((*x, g.iter().zip(vx).map(|(&g, &v)| g / v).collect()));
            }
            Op::MatMul(a, b) => {
                let (sa, sb) = (&nodes[*a].shape, &nodes[*b].shape);
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.wants(*a) {
                    let mut da = vec![T::zero(); m * k];
                    T::gemm(m, n, k, T::one(), g, false, &nodes[*b].value, true, T::zero(), &mut da);
                    sends.push((*a, da));
                }
                if self.wants(*b) {
                    let mut db = vec![T::zero(); k * n];
                    T::gemm(k, m, n, T::one(), &nodes[*a].value, true, g, false, T::zero(), &mut db);
                    sends.push((*b, db));
                }
            }
            Op::Transpose(x) => {
                let s = &nodes[*x].shape;
                let (r, c) = (s[0], s[1]);
                let mut dx = vec![T::zero(); r * c];
                for i in 0..r {
                    for j in 0..c {
                        dx[i * c + j] = g[j * r + i];
                    }
                }
                sends.push((*x, dx));
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = split_axis(&nodes[i].shape, *axis);
                let mut offset = 0;
                for &x in inputs {
                    let mid = nodes[x].shape[*axis];
                    if self.wants(x) {
                        let mut dx = Vec::with_capacity(outer * mid * inner);
                        for o in 0..outer {
                            let base = (o * total + offset) * inner;
                            dx.extend_from_slice(&g[base..base + mid * inner]);
                        }
                        sends.push((x, dx));
                    }
                    offset += mid;
                }
            }
            Op::Slice { x, axis, start } => {
                let (outer, mid, inner) = split_axis(&nodes[*x].shape, *axis);
                let len = nodes[i].shape[*axis];
                let mut dx = vec![T::zero(); outer * mid * inner];
                for o in 0..outer {
                    let base = o * mid * inner + start * inner;
                    dx[base..base + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                sends.push((*x, dx));
            }
            Op::ReduceSum { x, axis } => {
                let (outer, mid, inner) = split_axis(&nodes[*x].shape, *axis);
                let mut dx = Vec::with_capacity(outer * mid * inner);
                for o in 0..outer {
                    for _ in 0..mid {
                        dx.extend_from_slice(&g[o * inner..(o + 1) * inner]);
                    }
                }
                sends.push((*x, dx));
            }
            Op::SumAll(x) => sends.push((*x, vec![g[0]; nodes[*x].value.len()])),
            Op::ReduceMax { x, argmax } => {
                let mut dx = vec![T::zero(); nodes[*x].value.len()];
                for (&idx, &gv) in argmax.iter().zip(g) {
                    dx[idx] = dx[idx] + gv;
                }
                sends.push((*x, dx));
            }
            Op::Repeat { x, axis, n } => {
                let (outer, _, inner) = split_axis(&nodes[*x].shape, *axis);
                let mut dx = vec![T::zero(); outer * inner];
                for o in 0..outer {
                    for r in 0..*n {
                        let src = &g[(o * n + r) * inner..(o * n + r + 1) * inner];
                        for (d, &s) in dx[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                            *d = *d + s;
                        }
                    }
                }
                sends.push((*x, dx));
            }
            Op::Conv1d { x, w, b, saved } => {
                let grads = conv::conv1d_backward(
                    saved,
                    g,
                    &nodes[*w].value,
                    self.wants(*x),
                    self.wants(*w),
                    self.wants(*b),
                );
                push_conv_grads(&mut sends, (*x, *w, *b), grads);
            }
            Op::ConvBlock { x, w, b, saved } => {
                let grads = conv::conv_block_backward(
                    saved,
                    g,
                    &nodes[*w].value,
                    self.wants(*x),
                    self.wants(*w),
                    self.wants(*b),
                );
                push_conv_grads(&mut sends, (*x, *w, *b), grads);
            }
            Op::MaxPool1d { x, saved } => {
                sends.push((*x, conv::maxpool1d_backward(saved, g)));
            }
        }
        for (target, grad) in sends {
            self.send(target, grad);
        }
    }
}

pub(crate) fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}


fn push_conv_grads<T>(sends: &mut Vec<(usize, Vec<T>)>, (x, w, b): (usize, usize, usize), grads: ConvGrads<T>) {
    if let Some(dx) = grads.dx {
        sends.push((x, dx));
    }
    if let Some(dw) = grads.dw {
        sends.push((w, dw));
    }
    if let Some(db) = grads.db {
        sends.push((b, db));
    }
}
