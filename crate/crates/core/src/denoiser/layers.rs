use std::collections::BTreeMap;
use std::rc::Rc;
use std::sync::Arc;

use handrift_tensor::{BoundParams, Graph, InputGrads, Tensor, TensorError, Var};

type TResult<T> = handrift_tensor::Result<T>;

/// Parameter names resolved to tape variables.
pub trait ParamLookup {
    fn lookup(&self, name: &str) -> TResult<Var>;
}

impl ParamLookup for BoundParams {
    fn lookup(&self, name: &str) -> TResult<Var> {
        self.var(name)
    }
}

impl ParamLookup for BTreeMap<String, Var> {
    fn lookup(&self, name: &str) -> TResult<Var> {
        self.get(name)
            .copied()
            .ok_or_else(|| TensorError::UnknownParameter(name.to_string()))
    }
}

/// Mean of each vertex's features with those of its neighbors, `[B, V, C]`.
pub fn neighbor_mean(g: &Graph, h: Var, adjacency: &Arc<Vec<Vec<usize>>>) -> TResult<Var> {
    let hv = g.value(h);
    let shape = hv.shape().to_vec();
    if shape.len() != 3 || shape[1] != adjacency.len() {
        return Err(TensorError::Invalid {
            op: "neighbor_mean",
            msg: format!("features {shape:?} do not match {} vertices", adjacency.len()),
        });
    }
    let (b, v, c) = (shape[0], shape[1], shape[2]);
    let src = hv.data();
    let mut out = vec![0.0; src.len()];
    for bi in 0..b {
        let base = bi * v * c;
        for (vi, nbrs) in adjacency.iter().enumerate() {
            let w = 1.0 / (1 + nbrs.len()) as f64;
            let dst = &mut out[base + vi * c..base + (vi + 1) * c];
            dst.copy_from_slice(&src[base + vi * c..base + (vi + 1) * c]);
            for &u in nbrs {
                dst.iter_mut()
                    .zip(&src[base + u * c..base + (u + 1) * c])
                    .for_each(|(d, s)| *d += s);
            }
            dst.iter_mut().for_each(|d| *d *= w);
        }
    }
    let adj = Arc::clone(adjacency);
    Ok(g.push(Tensor::new(&shape, out)?, &[h], move |ctx| {
        let mut gi = vec![0.0; ctx.grad.len()];
        for bi in 0..b {
            let base = bi * v * c;
            for (vi, nbrs) in adj.iter().enumerate() {
                let w = 1.0 / (1 + nbrs.len()) as f64;
                let go = &ctx.grad[base + vi * c..base + (vi + 1) * c];
                for &u in std::iter::once(&vi).chain(nbrs) {
                    gi[base + u * c..base + (u + 1) * c]
                        .iter_mut()
                        .zip(go)
                        .for_each(|(d, s)| *d += w * s);
                }
            }
        }
        [Some(gi)].into_iter().collect::<InputGrads>()
    }))
}

/// Gated recurrence over rows of `[T, D]` inputs:
/// `x_0 = u_0`, `x_t = x_{t-1} + g_t (u_t - x_{t-1})`.
pub fn gated_scan(g: &Graph, u: Var, gate: Var) -> TResult<Var> {
    let (uv, gv) = (g.value(u), g.value(gate));
    let shape = uv.shape().to_vec();
    if shape.len() != 2 || gv.shape() != shape.as_slice() {
        return Err(TensorError::Shape {
            op: "gated_scan",
            lhs: shape,
            rhs: gv.shape().to_vec(),
        });
    }
    let (t_len, d) = (shape[0], shape[1]);
    let mut out = uv.data().to_vec();
    for t in 1..t_len {
        for j in 0..d {
            let prev = out[(t - 1) * d + j];
            out[t * d + j] = prev + gv.data()[t * d + j] * (uv.data()[t * d + j] - prev);
        }
    }
    Ok(g.push(Tensor::new(&shape, out)?, &[u, gate], move |ctx| {
        let (ud, gd, xd) = (ctx.inputs[0].data(), ctx.inputs[1].data(), ctx.output.data());
        let mut gu = vec![0.0; ud.len()];
        let mut gg = vec![0.0; gd.len()];
        // carry holds dL/dx_t including contributions from later frames
        let mut carry = vec![0.0; d];
        for t in (0..t_len).rev() {
            for j in 0..d {
                let i = t * d + j;
                let a = ctx.grad[i] + carry[j];
                if t == 0 {
                    gu[i] = a;
                } else {
                    gu[i] = gd[i] * a;
                    gg[i] = a * (ud[i] - xd[i - d]);
                    carry[j] = (1.0 - gd[i]) * a;
                }
            }
        }
        [Some(gu), Some(gg)].into_iter().collect::<InputGrads>()
    }))
}

/// `x W + b` over the last axis.
pub(crate) fn linear(g: &Graph, p: &dyn ParamLookup, name: &str, x: Var) -> TResult<Var> {
    let w = p.lookup(&format!("{name}.w"))?;
    let b = p.lookup(&format!("{name}.b"))?;
    g.add(g.matmul(x, w)?, b)
}

/// Lower-triangular `[rows, cols]` mask: row `t` sees columns `0..=t`.
pub(crate) fn causal_mask(rows: usize, cols: usize) -> Rc<Vec<bool>> {
    Rc::new((0..rows).flat_map(|t| (0..cols).map(move |j| j <= t)).collect())
}

fn split_heads(g: &Graph, x: Var, heads: usize) -> TResult<Var> {
    let s = g.shape(x);
    let r = g.reshape(x, &[s[0], heads, s[1] / heads])?;
    g.permute(r, &[1, 0, 2])
}

fn merge_heads(g: &Graph, x: Var) -> TResult<Var> {
    let s = g.shape(x);
    let r = g.permute(x, &[1, 0, 2])?;
    g.reshape(r, &[s[1], s[0] * s[2]])
}

/// Scaled dot-product attention of `q [Tq, W]` over `k, v [Tk, W]`.
pub(crate) fn attend(g: &Graph, q: Var, k: Var, v: Var, heads: usize, mask: Rc<Vec<bool>>) -> TResult<Var> {
    let dh = g.shape(q)[1] / heads;
    let (qh, kh, vh) = (split_heads(g, q, heads)?, split_heads(g, k, heads)?, split_heads(g, v, heads)?);
    let kt = g.permute(kh, &[0, 2, 1])?;
    let scores = g.scale(g.matmul(qh, kt)?, 1.0 / (dh as f64).sqrt());
    let probs = g.softmax(scores, 1.0, Some(mask))?;
    merge_heads(g, g.matmul(probs, vh)?)
}

pub(crate) fn self_attention(
    g: &Graph,
    p: &dyn ParamLookup,
    name: &str,
    x: Var,
    heads: usize,
    mask: Rc<Vec<bool>>,
) -> TResult<Var> {
    let w = g.shape(x)[1];
    let qkv = linear(g, p, &format!("{name}.qkv"), x)?;
    let q = g.slice(qkv, 1, 0, w)?;
    let k = g.slice(qkv, 1, w, 2 * w)?;
    let v = g.slice(qkv, 1, 2 * w, 3 * w)?;
    linear(g, p, &format!("{name}.out"), attend(g, q, k, v, heads, mask)?)
}

pub(crate) fn cross_attention(
    g: &Graph,
    p: &dyn ParamLookup,
    name: &str,
    x: Var,
    memory: Var,
    heads: usize,
    mask: Rc<Vec<bool>>,
) -> TResult<Var> {
    let w = g.shape(x)[1];
    let q = linear(g, p, &format!("{name}.q"), x)?;
    let kv = linear(g, p, &format!("{name}.kv"), memory)?;
    let k = g.slice(kv, 1, 0, w)?;
    let v = g.slice(kv, 1, w, 2 * w)?;
    linear(g, p, &format!("{name}.out"), attend(g, q, k, v, heads, mask)?)
}

pub(crate) fn feed_forward(g: &Graph, p: &dyn ParamLookup, name: &str, x: Var) -> TResult<Var> {
    let h = g.gelu(linear(g, p, &format!("{name}.0"), x)?);
    linear(g, p, &format!("{name}.1"), h)
}
