//! Axis-angle to rotation matrix (Rodrigues), plain and on the tape.

use handrift_tensor::{Graph, InputGrads, Result, Tensor, TensorError, Var};
use nalgebra::Matrix3;

/// Below this angle the closed forms are replaced by their series.
pub const SERIES_THRESHOLD: f64 = 1e-7;
/// Derivative coefficients lose precision earlier than the value coefficients.
const DERIV_SERIES_THRESHOLD: f64 = 1e-2;

/// `(A, B)` with `R = I + A K + B K^2` and `K = [w]x`.
fn coeffs(theta: f64) -> (f64, f64) {
    if theta < SERIES_THRESHOLD {
        let t2 = theta * theta;
        (1.0 - t2 / 6.0, 0.5 - t2 / 24.0)
    } else {
        let half = (0.5 * theta).sin();
        (theta.sin() / theta, 2.0 * half * half / (theta * theta))
    }
}

/// `(A'/theta, B'/theta)`.
fn deriv_coeffs(theta: f64) -> (f64, f64) {
    let t2 = theta * theta;
    if theta < DERIV_SERIES_THRESHOLD {
        (
            -1.0 / 3.0 + t2 / 30.0 - t2 * t2 / 840.0,
            -1.0 / 12.0 + t2 / 180.0 - t2 * t2 / 6720.0,
        )
    } else {
        let (s, c) = theta.sin_cos();
        (
            (theta * c - s) / (t2 * theta),
            (theta * s - 2.0 * (1.0 - c)) / (t2 * t2),
        )
    }
}

fn skew(w: [f64; 3]) -> [[f64; 3]; 3] {
    [[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]]
}

fn mat_mul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    c
}

fn rotation_rows(w: [f64; 3]) -> [[f64; 3]; 3] {
    let theta = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt();
    let (a, b) = coeffs(theta);
    let k = skew(w);
    let k2 = mat_mul(&k, &k);
    let mut r = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            r[i][j] = if i == j { 1.0 } else { 0.0 } + a * k[i][j] + b * k2[i][j];
        }
    }
    r
}

pub fn rodrigues(w: [f64; 3]) -> Matrix3<f64> {
    let r = rotation_rows(w);
    Matrix3::new(
        r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
    )
}

/// Batched Rodrigues on the tape: `[B, 3]` axis-angles to `[B, 3, 3]` matrices.
pub fn rodrigues_graph(g: &Graph, w: Var) -> Result<Var> {
    let wv = g.value(w);
    let shape = wv.shape();
    if shape.len() != 2 || shape[1] != 3 {
        return Err(TensorError::Invalid {
            op: "rodrigues",
            msg: format!("expected [B, 3], got {shape:?}"),
        });
    }
    let batch = shape[0];
    let mut out = Vec::with_capacity(batch * 9);
    for b in 0..batch {
        let d = &wv.data()[3 * b..3 * b + 3];
        let r = rotation_rows([d[0], d[1], d[2]]);
        r.iter().for_each(|row| out.extend_from_slice(row));
    }
    let value = Tensor::new(&[batch, 3, 3], out)?;
    Ok(g.push(value, &[w], move |ctx| {
        let wd = ctx.inputs[0].data();
        let mut grad = vec![0.0; batch * 3];
        for b in 0..batch {
            let w = [wd[3 * b], wd[3 * b + 1], wd[3 * b + 2]];
            let gm = &ctx.grad[9 * b..9 * b + 9];
            let theta = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt();
            let (a, bb) = coeffs(theta);
            let (ca, cb) = deriv_coeffs(theta);
            let k = skew(w);
            let k2 = mat_mul(&k, &k);
            for i in 0..3 {
                let mut e = [0.0; 3];
                e[i] = 1.0;
                let ei = skew(e);
                let eik = mat_mul(&ei, &k);
                let kei = mat_mul(&k, &ei);
                let mut acc = 0.0;
                for r in 0..3 {
                    for c in 0..3 {
                        let d = ca * w[i] * k[r][c]
                            + a * ei[r][c]
                            + cb * w[i] * k2[r][c]
                            + bb * (eik[r][c] + kei[r][c]);
                        acc += gm[3 * r + c] * d;
                    }
                }
                grad[3 * b + i] = acc;
            }
        }
        [Some(grad)].into_iter().collect::<InputGrads>()
    }))
}
