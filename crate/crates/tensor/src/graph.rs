//! Define-by-run computation tape. Every op appends a node holding its
//! value; [`Graph::backward`] walks the tape in reverse.

use crate::params::{ParamId, ParamStore};
use crate::tensor::{gemm, Tensor};
use crate::TensorError;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Leaf,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    AddRowBias(Var, Var),
    AddChannelBias(Var, Var),
    MatMul(Var, Var),
    Conv1d {
        x: Var,
        w: Var,
        stride: usize,
        pad: usize,
        cols: Vec<f64>,
    },
    Upsample2(Var),
    MaxPool2(Var, Vec<usize>),
    GlobalMax(Var, Vec<usize>),
    Relu(Var),
    Softplus(Var),
    Sigmoid(Var),
    Exp(Var),
    Ln(Var),
    Square(Var),
    Concat(Vec<Var>, usize),
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    Interp(Var, Vec<(usize, usize, f64)>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of one backward pass, indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(usize, ParamId)>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// `(parameter, gradient)` for every parameter reached by the pass.
    pub fn param_grads(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.params
            .iter()
            .filter_map(|&(node, id)| self.grads[node].as_deref().map(|g| (id, g)))
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(), TensorError> {
    if a.shape() != b.shape() {
        return Err(TensorError::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn rank2(op: &'static str, t: &Tensor) -> Result<(usize, usize), TensorError> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(TensorError::shape(op, format!("expected a matrix, got {s:?}"))),
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Output length of a 1-d convolution.
pub fn conv1d_out_len(len: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    (len + 2 * pad).checked_sub(kernel).map(|d| d / stride + 1)
}

fn im2col(x: &[f64], c_in: usize, len: usize, k: usize, stride: usize, pad: usize, l_out: usize) -> Vec<f64> {
    let mut cols = vec![0.0; c_in * k * l_out];
    for ci in 0..c_in {
        let xrow = &x[ci * len..(ci + 1) * len];
        for j in 0..k {
            let crow = &mut cols[(ci * k + j) * l_out..(ci * k + j + 1) * l_out];
            for (o, c) in crow.iter_mut().enumerate() {
                let pos = (o * stride + j) as isize - pad as isize;
                if pos >= 0 && (pos as usize) < len {
                    *c = xrow[pos as usize];
                }
            }
        }
    }
    cols
}

fn col2im_add(dcols: &[f64], dx: &mut [f64], c_in: usize, len: usize, k: usize, stride: usize, pad: usize, l_out: usize) {
    for ci in 0..c_in {
        for j in 0..k {
            let crow = &dcols[(ci * k + j) * l_out..(ci * k + j + 1) * l_out];
            for (o, &g) in crow.iter().enumerate() {
                let pos = (o * stride + j) as isize - pad as isize;
                if pos >= 0 && (pos as usize) < len {
                    dx[ci * len + pos as usize] += g;
                }
            }
        }
    }
}

/// Splits a shape around `axis` into (outer, extent, inner) sizes.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Constant, false)
    }

    /// A differentiable input.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.get(id).clone(), Op::Param(id), true)
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let v = &self.nodes[x.0].value;
        let data = v.data().iter().map(|&a| f(a)).collect();
        let t = Tensor::new(v.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(x);
        self.push(t, op, rg)
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, TensorError> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        same_shape(name, ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.unary(x, |a| a * s, Op::Scale(x, s))
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Var {
        self.unary(x, |a| a + s, Op::AddScalar(x))
    }

    /// `x[i, j] + b[j]` for `x` of shape `[m, n]`.
    pub fn add_row_bias(&mut self, x: Var, b: Var) -> Result<Var, TensorError> {
        let (m, n) = rank2("add_row_bias", self.value(x))?;
        if self.shape(b) != [n] {
            return Err(TensorError::shape("add_row_bias", format!("{:?} + {:?}", [m, n], self.shape(b))));
        }
        let bias = self.value(b).data();
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(n) {
            for (o, bb) in row.iter_mut().zip(bias) {
                *o += bb;
            }
        }
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push(out, Op::AddRowBias(x, b), rg))
    }

    /// `x[c, l] + b[c]` for `x` of shape `[c, l]`.
    pub fn add_channel_bias(&mut self, x: Var, b: Var) -> Result<Var, TensorError> {
        let (c, l) = rank2("add_channel_bias", self.value(x))?;
        if self.shape(b) != [c] {
            return Err(TensorError::shape("add_channel_bias", format!("{:?} + {:?}", [c, l], self.shape(b))));
        }
        let bias = self.value(b).data().to_vec();
        let mut out = self.value(x).clone();
        if l > 0 {
            for (row, bb) in out.data_mut().chunks_mut(l).zip(&bias) {
                row.iter_mut().for_each(|o| *o += bb);
            }
        }
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push(out, Op::AddChannelBias(x, b), rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (m, k) = rank2("matmul", self.value(a))?;
        let (k2, n) = rank2("matmul", self.value(b))?;
        if k != k2 {
            return Err(TensorError::shape("matmul", format!("{:?} x {:?}", [m, k], [k2, n])));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, 0.0, &mut out);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    /// Cross-correlation of `x: [c_in, len]` with `w: [c_out, c_in, k]`,
    /// zero padding `pad` on both sides.
    pub fn conv1d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var, TensorError> {
        let (c_in, len) = rank2("conv1d", self.value(x))?;
        let (c_out, c_in_w, k) = match self.shape(w) {
            [a, b, c] => (*a, *b, *c),
            s => return Err(TensorError::shape("conv1d", format!("kernel must be rank 3, got {s:?}"))),
        };
        if c_in != c_in_w || stride == 0 {
            return Err(TensorError::shape(
                "conv1d",
                format!("input {:?}, kernel {:?}, stride {stride}", [c_in, len], [c_out, c_in_w, k]),
            ));
        }
        let l_out = conv1d_out_len(len, k, stride, pad).ok_or_else(|| {
            TensorError::shape("conv1d", format!("kernel {k} longer than padded input {}", len + 2 * pad))
        })?;
        let cols = im2col(self.value(x).data(), c_in, len, k, stride, pad, l_out);
        let mut out = vec![0.0; c_out * l_out];
        gemm(c_out, c_in * k, l_out, self.value(w).data(), false, &cols, false, 0.0, &mut out);
        let rg = self.rg(x) || self.rg(w);
        let cols = if rg { cols } else { Vec::new() };
        Ok(self.push(
            Tensor::new(vec![c_out, l_out], out)?,
            Op::Conv1d {
                x,
                w,
                stride,
                pad,
                cols,
            },
            rg,
        ))
    }

    /// Nearest-neighbour upsampling by 2 along the last axis of `[c, l]`.
    pub fn upsample2(&mut self, x: Var) -> Result<Var, TensorError> {
        let (c, l) = rank2("upsample2", self.value(x))?;
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(c * l * 2);
        for &v in src {
            out.push(v);
            out.push(v);
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![c, 2 * l], out)?, Op::Upsample2(x), rg))
    }

    /// Max over non-overlapping pairs along the last axis; the first index
    /// wins ties.
    pub fn max_pool2(&mut self, x: Var) -> Result<Var, TensorError> {
        let (c, l) = rank2("max_pool2", self.value(x))?;
        let lo = l / 2;
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(c * lo);
        let mut arg = Vec::with_capacity(c * lo);
        for ci in 0..c {
            for o in 0..lo {
                let i = ci * l + 2 * o;
                let j = if src[i + 1] > src[i] { i + 1 } else { i };
                out.push(src[j]);
                arg.push(j);
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![c, lo], out)?, Op::MaxPool2(x, arg), rg))
    }

    /// Max over the last axis: `[c, l] -> [c]`.
    pub fn global_max(&mut self, x: Var) -> Result<Var, TensorError> {
        let (c, l) = rank2("global_max", self.value(x))?;
        if l == 0 {
            return Err(TensorError::shape("global_max", "empty axis".into()));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(c);
        let mut arg = Vec::with_capacity(c);
        for ci in 0..c {
            let row = &src[ci * l..(ci + 1) * l];
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            out.push(row[best]);
            arg.push(ci * l + best);
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::vector(out), Op::GlobalMax(x, arg), rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |a| a.max(0.0), Op::Relu(x))
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, softplus, Op::Softplus(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    pub fn ln(&mut self, x: Var) -> Var {
        self.unary(x, f64::ln, Op::Ln(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |a| a * a, Op::Square(x))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var, TensorError> {
        let first = self.value(*xs.first().ok_or_else(|| TensorError::shape("concat", "no inputs".into()))?);
        if axis >= first.rank() {
            return Err(TensorError::shape("concat", format!("axis {axis} for rank {}", first.rank())));
        }
        let mut shape = first.shape().to_vec();
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            let compatible = s.len() == shape.len()
                && s.iter().zip(&shape).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(TensorError::shape("concat", format!("{:?} vs {:?} on axis {axis}", shape, s)));
            }
            total += s[axis];
        }
        shape[axis] = total;
        let (outer, _, inner) = axis_split(&shape, axis);
        let mut out = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &v in xs {
                let block = self.shape(v)[axis] * inner;
                out.extend_from_slice(&self.value(v).data()[o * block..(o + 1) * block]);
            }
        }
        let rg = xs.iter().any(|&v| self.rg(v));
        Ok(self.push(Tensor::new(shape, out)?, Op::Concat(xs.to_vec(), axis), rg))
    }

    /// Elements `start..end` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var, TensorError> {
        let src = self.value(x);
        if axis >= src.rank() || start > end || end > src.shape()[axis] {
            return Err(TensorError::shape(
                "slice",
                format!("{start}..{end} on axis {axis} of {:?}", src.shape()),
            ));
        }
        let (outer, extent, inner) = axis_split(src.shape(), axis);
        let mut shape = src.shape().to_vec();
        shape[axis] = end - start;
        let mut out = Vec::with_capacity(outer * (end - start) * inner);
        for o in 0..outer {
            let base = o * extent * inner;
            out.extend_from_slice(&src.data()[base + start * inner..base + end * inner]);
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape, out)?, Op::Slice { x, axis, start }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var, TensorError> {
        let t = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Reshape(x), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Mean(x), rg)
    }

    /// Linear interpolation of a `[c, g]` grid at `(channel, position)`
    /// queries, positions in node units within `[0, g - 1]`. Exact at nodes.
    pub fn linear_interp(&mut self, grid: Var, queries: &[(usize, f64)]) -> Result<Var, TensorError> {
        let (c, g) = rank2("linear_interp", self.value(grid))?;
        let src = self.value(grid).data();
        let mut out = Vec::with_capacity(queries.len());
        let mut taps = Vec::with_capacity(queries.len());
        for &(ch, pos) in queries {
            if ch >= c || !(pos >= 0.0 && pos <= (g - 1) as f64) {
                return Err(TensorError::shape(
                    "linear_interp",
                    format!("query ({ch}, {pos}) outside grid {:?}", [c, g]),
                ));
            }
            let i = (pos.floor() as usize).min(g.saturating_sub(2));
            let w = pos - i as f64;
            let base = ch * g + i;
            let v = if w == 0.0 { src[base] } else { (1.0 - w) * src[base] + w * src[base + 1] };
            out.push(v);
            taps.push((base, (base + 1).min(c * g - 1), w));
        }
        let rg = self.rg(grid);
        Ok(self.push(Tensor::vector(out), Op::Interp(grid, taps), rg))
    }

    /// Reverse-mode pass from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, TensorError> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(TensorError::NonScalarLoss(lv.shape().to_vec()));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0]);
        let mut params = Vec::new();
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let g = match &node.op {
                Op::Leaf => continue,
                Op::Param(id) => {
                    params.push((i, *id));
                    continue;
                }
                _ => match grads[i].take() {
                    Some(g) => g,
                    None => continue,
                },
            };
            self.propagate(i, &g, &mut grads);
        }
        params.reverse();
        Ok(Gradients { grads, params })
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        let val = |v: Var| self.nodes[v.0].value.data();
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if self.nodes[v.0].requires_grad {
                let len = self.nodes[v.0].value.len();
                f(grads[v.0].get_or_insert_with(|| vec![0.0; len]));
            }
        };
        match &node.op {
            Op::Constant | Op::Leaf | Op::Param(_) => {}
            Op::Add(a, b) => {
                acc(*a, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
                acc(*b, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
                acc(*b, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d -= g));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                acc(*a, &mut |d| {
                    for ((d, g), y) in d.iter_mut().zip(g).zip(vb) {
                        *d += g * y;
                    }
                });
                acc(*b, &mut |d| {
                    for ((d, g), x) in d.iter_mut().zip(g).zip(va) {
                        *d += g * x;
                    }
                });
            }
            Op::Div(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                acc(*a, &mut |d| {
                    for ((d, g), y) in d.iter_mut().zip(g).zip(vb) {
                        *d += g / y;
                    }
                });
                acc(*b, &mut |d| {
                    for (((d, g), x), y) in d.iter_mut().zip(g).zip(va).zip(vb) {
                        *d -= g * x / (y * y);
                    }
                });
            }
            Op::Scale(x, s) => acc(*x, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g * s)),
            Op::AddScalar(x) | Op::Reshape(x) => acc(*x, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g)),
            Op::AddRowBias(x, b) => {
                acc(*x, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
                let n = self.nodes[b.0].value.len();
                acc(*b, &mut |d| {
                    for row in g.chunks(n) {
                        d.iter_mut().zip(row).for_each(|(d, g)| *d += g);
                    }
                });
            }
            Op::AddChannelBias(x, b) => {
                acc(*x, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
                let c = self.nodes[b.0].value.len();
                let l = g.len() / c.max(1);
                acc(*b, &mut |d| {
                    if l > 0 {
                        for (d, row) in d.iter_mut().zip(g.chunks(l)) {
                            *d += row.iter().sum::<f64>();
                        }
                    }
                });
            }
            Op::MatMul(a, b) => {
                let sa = self.nodes[a.0].value.shape();
                let sb = self.nodes[b.0].value.shape();
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                // dA = G B^T, dB = A^T G
                acc(*a, &mut |d| gemm(m, n, k, g, false, val(*b), true, 1.0, d));
                acc(*b, &mut |d| gemm(k, m, n, val(*a), true, g, false, 1.0, d));
            }
            Op::Conv1d {
                x,
                w,
                stride,
                pad,
                cols,
            } => {
                let sx = self.nodes[x.0].value.shape();
                let sw = self.nodes[w.0].value.shape();
                let (c_in, len) = (sx[0], sx[1]);
                let (c_out, k) = (sw[0], sw[2]);
                let l_out = node.value.shape()[1];
                acc(*w, &mut |d| gemm(c_out, l_out, c_in * k, g, false, cols, true, 1.0, d));
                if self.nodes[x.0].requires_grad {
                    let mut dcols = vec![0.0; c_in * k * l_out];
                    gemm(c_in * k, c_out, l_out, val(*w), true, g, false, 0.0, &mut dcols);
                    acc(*x, &mut |d| col2im_add(&dcols, d, c_in, len, k, *stride, *pad, l_out));
                }
            }
            Op::Upsample2(x) => acc(*x, &mut |d| {
                for (d, pair) in d.iter_mut().zip(g.chunks(2)) {
                    *d += pair[0] + pair[1];
                }
            }),
            Op::MaxPool2(x, arg) | Op::GlobalMax(x, arg) => acc(*x, &mut |d| {
                for (&j, gg) in arg.iter().zip(g) {
                    d[j] += gg;
                }
            }),
            Op::Relu(x) => {
                let vx = val(*x);
                acc(*x, &mut |d| {
                    for ((d, g), a) in d.iter_mut().zip(g).zip(vx) {
                        if *a > 0.0 {
                            *d += g;
                        }
                    }
                });
            }
            Op::Softplus(x) => {
                let vx = val(*x);
                acc(*x, &mut |d| {
                    for ((d, g), a) in d.iter_mut().zip(g).zip(vx) {
                        *d += g * sigmoid(*a);
                    }
                });
            }
            Op::Sigmoid(x) => acc(*x, &mut |d| {
                for ((d, g), s) in d.iter_mut().zip(g).zip(out) {
                    *d += g * s * (1.0 - s);
                }
            }),
            Op::Exp(x) => acc(*x, &mut |d| {
                for ((d, g), e) in d.iter_mut().zip(g).zip(out) {
                    *d += g * e;
                }
            }),
            Op::Ln(x) => {
                let vx = val(*x);
                acc(*x, &mut |d| {
                    for ((d, g), a) in d.iter_mut().zip(g).zip(vx) {
                        *d += g / a;
                    }
                });
            }
            Op::Square(x) => {
                let vx = val(*x);
                acc(*x, &mut |d| {
                    for ((d, g), a) in d.iter_mut().zip(g).zip(vx) {
                        *d += 2.0 * g * a;
                    }
                });
            }
            Op::Concat(xs, axis) => {
                let (outer, _, inner) = axis_split(node.value.shape(), *axis);
                let row = node.value.shape()[*axis] * inner;
                let mut offset = 0;
                for &v in xs {
                    let block = self.nodes[v.0].value.shape()[*axis] * inner;
                    acc(v, &mut |d| {
                        for o in 0..outer {
                            let src = &g[o * row + offset..o * row + offset + block];
                            d[o * block..(o + 1) * block].iter_mut().zip(src).for_each(|(d, g)| *d += g);
                        }
                    });
                    offset += block;
                }
            }
            Op::Slice { x, axis, start } => {
                let (outer, extent, inner) = axis_split(self.nodes[x.0].value.shape(), *axis);
                let width = node.value.shape()[*axis] * inner;
                acc(*x, &mut |d| {
                    for o in 0..outer {
                        let base = o * extent * inner + start * inner;
                        d[base..base + width]
                            .iter_mut()
                            .zip(&g[o * width..(o + 1) * width])
                            .for_each(|(d, g)| *d += g);
                    }
                });
            }
            Op::Sum(x) => acc(*x, &mut |d| d.iter_mut().for_each(|d| *d += g[0])),
            Op::Mean(x) => {
                let n = self.nodes[x.0].value.len() as f64;
                acc(*x, &mut |d| d.iter_mut().for_each(|d| *d += g[0] / n));
            }
            Op::Interp(grid, taps) => acc(*grid, &mut |d| {
                for (&(i0, i1, w), gg) in taps.iter().zip(g) {
                    if w == 0.0 {
                        d[i0] += gg;
                    } else {
                        d[i0] += (1.0 - w) * gg;
                        d[i1] += w * gg;
                    }
                }
            }),
        }
    }
}
