//! Central finite-difference gradient checking.
//!
//! Only forward evaluations are used for the numerical side, so the check is
//! independent of every backward closure it validates.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::rng::RngStream;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Number of coordinates sampled across all inputs; `None` checks all.
    pub max_coords: Option<usize>,
    /// Denominator floor for the relative error.
    pub floor: f64,
    pub seed: u64,
    pub stencil: Stencil,
}

/// Central difference formula for the numerical derivative.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stencil {
    /// `(f(x+h) - f(x-h)) / 2h`, error `O(h^2)`.
    ThreePoint,
    /// `(-f(x+2h) + 8f(x+h) - 8f(x-h) + f(x-2h)) / 12h`, error `O(h^4)`;
    /// tolerates a larger step and so loses less to rounding.
    FivePoint,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            max_coords: Some(100),
            floor: 1e-6,
            seed: 0,
            stencil: Stencil::ThreePoint,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CoordCheck {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub checked: Vec<CoordCheck>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.checked.iter().map(|c| c.rel_err).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&CoordCheck> {
        self.checked
            .iter()
            .max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
    }
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares reverse-mode gradients of the scalar `f(inputs)` against central
/// differences.
pub fn check_gradients<F>(f: F, inputs: &[Tensor], opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&Graph, &[Var]) -> Result<Var>,
{
    let g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = f(&g, &vars)?;
    let grads = g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| grads.get_or_zero(v, t.len()))
        .collect();

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let g = Graph::no_grad();
        let vars: Vec<Var> = perturbed.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&g, &vars)?;
        Ok(g.value(out).item())
    };

    let mut coords: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.len()).map(move |j| (i, j)))
        .collect();
    if let Some(max) = opts.max_coords {
        if coords.len() > max {
            let mut rng = RngStream::derive(opts.seed, "gradcheck", &[]);
            rng.shuffle(&mut coords);
            coords.truncate(max);
        }
    }

    let mut checked = Vec::with_capacity(coords.len());
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (i, j) in coords {
        let orig = work[i].data()[j];
        let mut at = |offset: f64| -> Result<f64> {
            work[i].data_mut()[j] = orig + offset;
            eval(&work)
        };
        let h = opts.step;
        let numeric = match opts.stencil {
            Stencil::ThreePoint => (at(h)? - at(-h)?) / (2.0 * h),
            Stencil::FivePoint => (-at(2.0 * h)? + 8.0 * at(h)? - 8.0 * at(-h)? + at(-2.0 * h)?) / (12.0 * h),
        };
        work[i].data_mut()[j] = orig;
        let a = analytic[i][j];
        checked.push(CoordCheck {
            input: i,
            index: j,
            analytic: a,
            numeric,
            rel_err: relative_error(a, numeric, opts.floor),
        });
    }
    Ok(GradCheckReport { checked })
}
