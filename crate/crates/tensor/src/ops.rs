use std::rc::Rc;

use smallvec::smallvec;

use crate::error::{Result, TensorError};
use crate::graph::{Graph, InputGrads, Var};
use crate::tensor::{broadcast_shape, index_map, reduce_to, strides, IndexMap, Tensor};

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

impl Binary {
    fn name(self) -> &'static str {
        match self {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
            Binary::Div => "div",
        }
    }
}

#[derive(Clone, Copy)]
enum Unary {
    Neg,
    Exp,
    Log,
    Tanh,
    Sigmoid,
    Sin,
    Cos,
    Sqrt,
    Square,
    Relu,
    Sign,
    Gelu,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

impl Unary {
    fn forward(self, x: f64) -> f64 {
        match self {
            Unary::Neg => -x,
            Unary::Exp => x.exp(),
            Unary::Log => x.ln(),
            Unary::Tanh => x.tanh(),
            Unary::Sigmoid => sigmoid(x),
            Unary::Sin => x.sin(),
            Unary::Cos => x.cos(),
            Unary::Sqrt => x.sqrt(),
            Unary::Square => x * x,
            Unary::Relu => x.max(0.0),
            Unary::Sign => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            Unary::Gelu => 0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh()),
        }
    }

    /// d out / d in, given input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Neg => -1.0,
            Unary::Exp => y,
            Unary::Log => 1.0 / x,
            Unary::Tanh => 1.0 - y * y,
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Sin => x.cos(),
            Unary::Cos => -x.sin(),
            Unary::Sqrt => 0.5 / y,
            Unary::Square => 2.0 * x,
            Unary::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::Sign => 0.0,
            Unary::Gelu => {
                let u = GELU_C * (x + 0.044715 * x * x * x);
                let t = u.tanh();
                let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(TensorError::invalid(
            op,
            format!("axis {axis} out of range for shape {shape:?}"),
        ));
    }
    Ok(())
}

impl Graph {
    fn binary(&self, op: Binary, a: Var, b: Var) -> Result<Var> {
        let av = self.value(a);
        let bv = self.value(b);
        let out_shape = broadcast_shape(av.shape(), bv.shape())
            .ok_or_else(|| TensorError::shape(op.name(), av.shape(), bv.shape()))?;
        let ma = index_map(av.shape(), &out_shape);
        let mb = index_map(bv.shape(), &out_shape);
        let n: usize = out_shape.iter().product();
        let (ad, bd) = (av.data(), bv.data());
        let data: Vec<f64> = match (op, &ma, &mb) {
            (Binary::Add, IndexMap::Identity, IndexMap::Identity) => {
                ad.iter().zip(bd).map(|(x, y)| x + y).collect()
            }
            (Binary::Mul, IndexMap::Identity, IndexMap::Identity) => {
                ad.iter().zip(bd).map(|(x, y)| x * y).collect()
            }
            _ => (0..n)
                .map(|i| {
                    let (x, y) = (ad[ma.get(i)], bd[mb.get(i)]);
                    match op {
                        Binary::Add => x + y,
                        Binary::Sub => x - y,
                        Binary::Mul => x * y,
                        Binary::Div => x / y,
                    }
                })
                .collect(),
        };
        let value = Tensor::new(&out_shape, data)?;
        Ok(self.push(value, &[a, b], move |ctx| {
            let (ad, bd) = (ctx.inputs[0].data(), ctx.inputs[1].data());
            let g = ctx.grad;
            let ga = ctx.needs[0].then(|| {
                let local: Vec<f64> = match op {
                    Binary::Add | Binary::Sub => return reduce_to(g, &ma, ad.len()),
                    Binary::Mul => (0..g.len()).map(|i| g[i] * bd[mb.get(i)]).collect(),
                    Binary::Div => (0..g.len()).map(|i| g[i] / bd[mb.get(i)]).collect(),
                };
                reduce_to(&local, &ma, ad.len())
            });
            let gb = ctx.needs[1].then(|| {
                let local: Vec<f64> = match op {
                    Binary::Add => return reduce_to(g, &mb, bd.len()),
                    Binary::Sub => g.iter().map(|x| -x).collect(),
                    Binary::Mul => (0..g.len()).map(|i| g[i] * ad[ma.get(i)]).collect(),
                    Binary::Div => (0..g.len())
                        .map(|i| {
                            let y = bd[mb.get(i)];
                            -g[i] * ad[ma.get(i)] / (y * y)
                        })
                        .collect(),
                };
                reduce_to(&local, &mb, bd.len())
            });
            smallvec![ga, gb]
        }))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn div(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Div, a, b)
    }

    fn unary(&self, op: Unary, a: Var) -> Var {
        let av = self.value(a);
        let value = av.map(|x| op.forward(x));
        self.push(value, &[a], move |ctx| {
            let x = ctx.inputs[0].data();
            let y = ctx.output.data();
            let g = ctx
                .grad
                .iter()
                .enumerate()
                .map(|(i, g)| g * op.derivative(x[i], y[i]))
                .collect();
            smallvec![Some(g)]
        })
    }

    pub fn neg(&self, a: Var) -> Var {
        self.unary(Unary::Neg, a)
    }
    pub fn exp(&self, a: Var) -> Var {
        self.unary(Unary::Exp, a)
    }
    pub fn log(&self, a: Var) -> Var {
        self.unary(Unary::Log, a)
    }
    pub fn tanh(&self, a: Var) -> Var {
        self.unary(Unary::Tanh, a)
    }
    pub fn sigmoid(&self, a: Var) -> Var {
        self.unary(Unary::Sigmoid, a)
    }
    pub fn sin(&self, a: Var) -> Var {
        self.unary(Unary::Sin, a)
    }
    pub fn cos(&self, a: Var) -> Var {
        self.unary(Unary::Cos, a)
    }
    pub fn sqrt(&self, a: Var) -> Var {
        self.unary(Unary::Sqrt, a)
    }
    pub fn square(&self, a: Var) -> Var {
        self.unary(Unary::Square, a)
    }
    /// `max(x, 0)`.
    pub fn relu(&self, a: Var) -> Var {
        self.unary(Unary::Relu, a)
    }
    /// Hinge, an alias of [`relu`](Self::relu).
    pub fn hinge(&self, a: Var) -> Var {
        self.unary(Unary::Relu, a)
    }
    /// Elementwise sign; its gradient is zero everywhere.
    pub fn sign(&self, a: Var) -> Var {
        self.unary(Unary::Sign, a)
    }
    pub fn gelu(&self, a: Var) -> Var {
        self.unary(Unary::Gelu, a)
    }

    pub fn scale(&self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| c * x);
        self.push(value, &[a], move |ctx| {
            smallvec![Some(ctx.grad.iter().map(|g| c * g).collect())]
        })
    }

    pub fn add_scalar(&self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x + c);
        self.push(value, &[a], |ctx| smallvec![Some(ctx.grad.to_vec())])
    }

    /// Matrix product over the last two axes.
    ///
    /// Supports `[.., m, k] x [k, n]` and batched `[B.., m, k] x [B.., k, n]`
    /// with identical batch dimensions.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let av = self.value(a);
        let bv = self.value(b);
        let (sa, sb) = (av.shape(), bv.shape());
        if sa.len() < 2 || sb.len() < 2 {
            return Err(TensorError::shape("matmul", sa, sb));
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        let shared_rhs = sb.len() == 2;
        if k != k2 || (!shared_rhs && sa[..sa.len() - 2] != sb[..sb.len() - 2]) {
            return Err(TensorError::shape("matmul", sa, sb));
        }
        let batch: usize = sa[..sa.len() - 2].iter().product();
        let mut out_shape = sa[..sa.len() - 2].to_vec();
        out_shape.extend([m, n]);
        let mut out = vec![0.0; batch * m * n];
        for bi in 0..batch {
            let a_blk = &av.data()[bi * m * k..(bi + 1) * m * k];
            let b_blk = if shared_rhs {
                bv.data()
            } else {
                &bv.data()[bi * k * n..(bi + 1) * k * n]
            };
            gemm(a_blk, b_blk, &mut out[bi * m * n..(bi + 1) * m * n], m, k, n);
        }
        let value = Tensor::new(&out_shape, out)?;
        Ok(self.push(value, &[a, b], move |ctx| {
            let (ad, bd, g) = (ctx.inputs[0].data(), ctx.inputs[1].data(), ctx.grad);
            let ga = ctx.needs[0].then(|| {
                let mut ga = vec![0.0; ad.len()];
                for bi in 0..batch {
                    let b_blk = if shared_rhs {
                        bd
                    } else {
                        &bd[bi * k * n..(bi + 1) * k * n]
                    };
                    let g_blk = &g[bi * m * n..(bi + 1) * m * n];
                    let ga_blk = &mut ga[bi * m * k..(bi + 1) * m * k];
                    // dA = dC B^T
                    for i in 0..m {
                        let g_row = &g_blk[i * n..(i + 1) * n];
                        for p in 0..k {
                            let b_row = &b_blk[p * n..(p + 1) * n];
                            ga_blk[i * k + p] = dot(g_row, b_row);
                        }
                    }
                }
                ga
            });
            let gb = ctx.needs[1].then(|| {
                let mut gb = vec![0.0; bd.len()];
                for bi in 0..batch {
                    let a_blk = &ad[bi * m * k..(bi + 1) * m * k];
                    let g_blk = &g[bi * m * n..(bi + 1) * m * n];
                    let gb_blk = if shared_rhs {
                        &mut gb[..]
                    } else {
                        &mut gb[bi * k * n..(bi + 1) * k * n]
                    };
                    // dB = A^T dC
                    for i in 0..m {
                        let g_row = &g_blk[i * n..(i + 1) * n];
                        for p in 0..k {
                            let aip = a_blk[i * k + p];
                            if aip == 0.0 {
                                continue;
                            }
                            let row = &mut gb_blk[p * n..(p + 1) * n];
                            row.iter_mut().zip(g_row).for_each(|(r, g)| *r += aip * g);
                        }
                    }
                }
                gb
            });
            smallvec![ga, gb]
        }))
    }

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Result<Var> {
        let av = self.value(a);
        let value = (*av).clone().reshaped(shape)?;
        Ok(self.push(value, &[a], |ctx| smallvec![Some(ctx.grad.to_vec())]))
    }

    /// General axis permutation: output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, a: Var, axes: &[usize]) -> Result<Var> {
        let av = self.value(a);
        let shape = av.shape();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len()
            || axes
                .iter()
                .any(|&x| x >= shape.len() || std::mem::replace(&mut seen[x], true))
        {
            return Err(TensorError::shape("permute", shape, axes));
        }
        let out_shape: Vec<usize> = axes.iter().map(|&x| shape[x]).collect();
        let in_strides = strides(shape);
        // source offset for each output position
        let map = Rc::new(permute_map(&out_shape, axes, &in_strides));
        let data = map.iter().map(|&s| av.data()[s]).collect();
        let value = Tensor::new(&out_shape, data)?;
        Ok(self.push(value, &[a], move |ctx| {
            let mut g = vec![0.0; ctx.grad.len()];
            for (o, &s) in map.iter().enumerate() {
                g[s] = ctx.grad[o];
            }
            smallvec![Some(g)]
        }))
    }

    /// Swaps the last two axes.
    pub fn transpose(&self, a: Var) -> Result<Var> {
        let nd = self.shape(a).len();
        if nd < 2 {
            return Err(TensorError::invalid("transpose", "needs at least 2 axes"));
        }
        let mut axes: Vec<usize> = (0..nd).collect();
        axes.swap(nd - 2, nd - 1);
        self.permute(a, &axes)
    }

    pub fn concat(&self, parts: &[Var], axis: usize) -> Result<Var> {
        let values: Vec<Rc<Tensor>> = parts.iter().map(|&p| self.value(p)).collect();
        let first = values
            .first()
            .ok_or_else(|| TensorError::invalid("concat", "no inputs"))?
            .shape()
            .to_vec();
        check_axis("concat", &first, axis)?;
        for v in &values[1..] {
            let s = v.shape();
            let ok = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(i, (x, y))| i == axis || x == y);
            if !ok {
                return Err(TensorError::shape("concat", &first, s));
            }
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let widths: Vec<usize> = values.iter().map(|v| v.shape()[axis] * inner).collect();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(outer * total);
        for o in 0..outer {
            for (v, &w) in values.iter().zip(&widths) {
                data.extend_from_slice(&v.data()[o * w..(o + 1) * w]);
            }
        }
        let mut out_shape = first.clone();
        out_shape[axis] = total / inner;
        let value = Tensor::new(&out_shape, data)?;
        Ok(self.push(value, parts, move |ctx| {
            let mut grads: InputGrads = widths
                .iter()
                .map(|&w| Some(Vec::with_capacity(outer * w)))
                .collect();
            let mut offset = 0;
            for _ in 0..outer {
                for (g, &w) in grads.iter_mut().zip(&widths) {
                    if let Some(g) = g {
                        g.extend_from_slice(&ctx.grad[offset..offset + w]);
                    }
                    offset += w;
                }
            }
            grads
        }))
    }

    /// Half-open range `start..end` along `axis`.
    pub fn slice(&self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let av = self.value(a);
        let shape = av.shape().to_vec();
        check_axis("slice", &shape, axis)?;
        if start > end || end > shape[axis] {
            return Err(TensorError::invalid(
                "slice",
                format!("range {start}..{end} out of bounds for axis {axis} of {shape:?}"),
            ));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let row = shape[axis] * inner;
        let (lo, hi) = (start * inner, end * inner);
        let mut data = Vec::with_capacity(outer * (hi - lo));
        for o in 0..outer {
            data.extend_from_slice(&av.data()[o * row + lo..o * row + hi]);
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = end - start;
        let value = Tensor::new(&out_shape, data)?;
        let total = av.len();
        Ok(self.push(value, &[a], move |ctx| {
            let mut g = vec![0.0; total];
            let w = hi - lo;
            for o in 0..outer {
                g[o * row + lo..o * row + hi].copy_from_slice(&ctx.grad[o * w..(o + 1) * w]);
            }
            smallvec![Some(g)]
        }))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&self, a: Var) -> Var {
        let av = self.value(a);
        let n = av.len();
        self.push(Tensor::scalar(av.sum()), &[a], move |ctx| {
            smallvec![Some(vec![ctx.grad[0]; n])]
        })
    }

    pub fn mean(&self, a: Var) -> Var {
        let n = self.value(a).len().max(1);
        let s = self.sum(a);
        self.scale(s, 1.0 / n as f64)
    }

    /// Sum along `axis`, removing it.
    pub fn sum_axis(&self, a: Var, axis: usize) -> Result<Var> {
        let av = self.value(a);
        let shape = av.shape().to_vec();
        check_axis("sum_axis", &shape, axis)?;
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let src = &av.data()[(o * len + l) * inner..(o * len + l + 1) * inner];
                data[o * inner..(o + 1) * inner]
                    .iter_mut()
                    .zip(src)
                    .for_each(|(d, s)| *d += s);
            }
        }
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        let value = Tensor::new(&out_shape, data)?;
        Ok(self.push(value, &[a], move |ctx| {
            let mut g = vec![0.0; outer * len * inner];
            for o in 0..outer {
                let src = &ctx.grad[o * inner..(o + 1) * inner];
                for l in 0..len {
                    g[(o * len + l) * inner..(o * len + l + 1) * inner].copy_from_slice(src);
                }
            }
            smallvec![Some(g)]
        }))
    }

    pub fn mean_axis(&self, a: Var, axis: usize) -> Result<Var> {
        let len = *self
            .shape(a)
            .get(axis)
            .ok_or_else(|| TensorError::invalid("mean_axis", "axis out of range"))?;
        let s = self.sum_axis(a, axis)?;
        Ok(self.scale(s, 1.0 / len.max(1) as f64))
    }

    /// Softmax over the last axis of `x / temperature`.
    ///
    /// `mask`, when given, has the shape of the last two axes; `false` entries
    /// get probability exactly zero.
    pub fn softmax(&self, a: Var, temperature: f64, mask: Option<Rc<Vec<bool>>>) -> Result<Var> {
        if temperature <= 0.0 {
            return Err(TensorError::invalid("softmax", "temperature must be > 0"));
        }
        let av = self.value(a);
        let shape = av.shape().to_vec();
        let cols = *shape
            .last()
            .ok_or_else(|| TensorError::invalid("softmax", "scalar input"))?;
        let rows_per_mask = if let Some(m) = &mask {
            if shape.len() < 2 || m.len() != cols * shape[shape.len() - 2] {
                return Err(TensorError::invalid(
                    "softmax",
                    format!("mask of {} entries does not fit shape {shape:?}", m.len()),
                ));
            }
            shape[shape.len() - 2]
        } else {
            1
        };
        let n_rows = av.len() / cols.max(1);
        let mut out = vec![0.0; av.len()];
        for r in 0..n_rows {
            let x = &av.data()[r * cols..(r + 1) * cols];
            let y = &mut out[r * cols..(r + 1) * cols];
            let keep = |j: usize| {
                mask.as_ref()
                    .map_or(true, |m| m[(r % rows_per_mask) * cols + j])
            };
            let mut max = f64::NEG_INFINITY;
            for (j, &v) in x.iter().enumerate() {
                if keep(j) {
                    max = max.max(v / temperature);
                }
            }
            if max == f64::NEG_INFINITY {
                continue;
            }
            let mut total = 0.0;
            for (j, &v) in x.iter().enumerate() {
                if keep(j) {
                    y[j] = (v / temperature - max).exp();
                    total += y[j];
                }
            }
            y.iter_mut().for_each(|v| *v /= total);
        }
        let value = Tensor::new(&shape, out)?;
        Ok(self.push(value, &[a], move |ctx| {
            let y = ctx.output.data();
            let mut g = vec![0.0; y.len()];
            for r in 0..n_rows {
                let yr = &y[r * cols..(r + 1) * cols];
                let gr = &ctx.grad[r * cols..(r + 1) * cols];
                let s = dot(yr, gr);
                for j in 0..cols {
                    g[r * cols + j] = yr[j] * (gr[j] - s) / temperature;
                }
            }
            smallvec![Some(g)]
        }))
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let shape = av.shape().to_vec();
        let cols = *shape
            .last()
            .ok_or_else(|| TensorError::invalid("log_softmax", "scalar input"))?;
        let n_rows = av.len() / cols.max(1);
        let mut out = vec![0.0; av.len()];
        for r in 0..n_rows {
            let x = &av.data()[r * cols..(r + 1) * cols];
            let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for j in 0..cols {
                out[r * cols + j] = x[j] - lse;
            }
        }
        let value = Tensor::new(&shape, out)?;
        Ok(self.push(value, &[a], move |ctx| {
            let y = ctx.output.data();
            let mut g = vec![0.0; y.len()];
            for r in 0..n_rows {
                let gr = &ctx.grad[r * cols..(r + 1) * cols];
                let s: f64 = gr.iter().sum();
                for j in 0..cols {
                    g[r * cols + j] = gr[j] - y[r * cols + j].exp() * s;
                }
            }
            smallvec![Some(g)]
        }))
    }

    /// Normalizes the last axis to zero mean and unit variance (no affine).
    pub fn layer_norm(&self, a: Var, eps: f64) -> Result<Var> {
        let av = self.value(a);
        let shape = av.shape().to_vec();
        let cols = *shape
            .last()
            .ok_or_else(|| TensorError::invalid("layer_norm", "scalar input"))?;
        let n_rows = av.len() / cols.max(1);
        let mut out = vec![0.0; av.len()];
        let mut inv_std = vec![0.0; n_rows];
        for r in 0..n_rows {
            let x = &av.data()[r * cols..(r + 1) * cols];
            let mu = x.iter().sum::<f64>() / cols as f64;
            let var = x.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / cols as f64;
            let s = 1.0 / (var + eps).sqrt();
            inv_std[r] = s;
            for j in 0..cols {
                out[r * cols + j] = (x[j] - mu) * s;
            }
        }
        let value = Tensor::new(&shape, out)?;
        Ok(self.push(value, &[a], move |ctx| {
            let y = ctx.output.data();
            let mut g = vec![0.0; y.len()];
            for r in 0..n_rows {
                let yr = &y[r * cols..(r + 1) * cols];
                let gr = &ctx.grad[r * cols..(r + 1) * cols];
                let mean_g = gr.iter().sum::<f64>() / cols as f64;
                let mean_gy = dot(gr, yr) / cols as f64;
                for j in 0..cols {
                    g[r * cols + j] = inv_std[r] * (gr[j] - mean_g - yr[j] * mean_gy);
                }
            }
            smallvec![Some(g)]
        }))
    }

    /// Forward value `hard`, gradient passed straight through to `soft`.
    pub fn straight_through(&self, soft: Var, hard: Tensor) -> Result<Var> {
        let shape = self.shape(soft);
        if hard.shape() != shape.as_slice() {
            return Err(TensorError::shape("straight_through", &shape, hard.shape()));
        }
        Ok(self.push(hard, &[soft], |ctx| smallvec![Some(ctx.grad.to_vec())]))
    }
}

fn permute_map(out_shape: &[usize], axes: &[usize], in_strides: &[usize]) -> Vec<usize> {
    let n: usize = out_shape.iter().product();
    let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; out_shape.len()];
    let mut offset = 0usize;
    for _ in 0..n {
        map.push(offset);
        for d in (0..out_shape.len()).rev() {
            idx[d] += 1;
            offset += src_strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            offset -= src_strides[d] * idx[d];
            idx[d] = 0;
        }
    }
    map
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `c += a * b` for row-major `a: m x k`, `b: k x n`.
pub(crate) fn gemm(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            c_row.iter_mut().zip(b_row).for_each(|(c, b)| *c += aip * b);
        }
    }
}
