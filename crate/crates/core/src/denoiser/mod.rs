//! Clean-motion estimators `x_hat = f(x_n, y, n)` and their registry.
//!
//! The learned estimator is [`TransformerDenoiser`]; [`IdentityDenoiser`]
//! and [`OracleDenoiser`] are fixtures with closed-form behavior.

mod config;
mod layers;
mod net;

use std::collections::BTreeMap;
use std::sync::Arc;

use handrift_tensor::{Graph, ParamStore, RngStream, Tensor, Var};

use crate::error::{CoreError, Result};
use crate::hand::HandModel;
use crate::motion::{Normalizer, FRAME_DIM};

pub use config::DenoiserConfig;
pub use layers::{gated_scan, neighbor_mean, ParamLookup};
pub use net::{encode_meshes, init_params, param_shapes, positional_encoding, step_features, DenoiserNet, ForwardOutput, StateFeed};

/// One denoiser call on a flattened `[frames, FRAME_DIM]` normalized sequence.
#[derive(Clone, Copy, Debug)]
pub struct DenoiseInput<'a> {
    pub x_n: &'a [f64],
    pub y: &'a [f64],
    pub frames: usize,
    /// Diffusion step in `1..=steps`.
    pub step: usize,
    pub steps: usize,
}

impl DenoiseInput<'_> {
    pub fn validate(&self) -> Result<()> {
        let want = self.frames * FRAME_DIM;
        if self.x_n.len() != want || self.y.len() != want {
            return Err(CoreError::input(format!(
                "denoiser expects {want} values for {} frames, got {} and {}",
                self.frames,
                self.x_n.len(),
                self.y.len()
            )));
        }
        if self.step == 0 || self.step > self.steps {
            return Err(CoreError::input(format!(
                "diffusion step {} outside 1..={}",
                self.step, self.steps
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    /// Clean estimate, `[frames, FRAME_DIM]`.
    pub x_hat: Vec<f64>,
    /// `[frames, S]`; empty for estimators without a state head.
    pub state_logits: Vec<f64>,
}

pub trait Denoiser: Send + Sync {
    fn name(&self) -> &str;

    /// `rng` switches fed-back states from argmax to Gumbel samples.
    fn predict(&self, input: &DenoiseInput, rng: Option<&mut RngStream>) -> Result<Prediction>;
}

/// Returns `x_n` unchanged.
#[derive(Clone, Debug, Default)]
pub struct IdentityDenoiser;

impl Denoiser for IdentityDenoiser {
    fn name(&self) -> &str {
        "identity"
    }

    fn predict(&self, input: &DenoiseInput, _rng: Option<&mut RngStream>) -> Result<Prediction> {
        input.validate()?;
        Ok(Prediction {
            x_hat: input.x_n.to_vec(),
            state_logits: Vec::new(),
        })
    }
}

/// Returns a known clean sequence, or the observation itself when none is
/// stored (the right answer for clean inputs).
#[derive(Clone, Debug, Default)]
pub struct OracleDenoiser {
    target: Option<Vec<f64>>,
}

impl OracleDenoiser {
    pub fn new(target: Vec<f64>) -> Self {
        OracleDenoiser { target: Some(target) }
    }

    pub fn observation() -> Self {
        OracleDenoiser { target: None }
    }
}

impl Denoiser for OracleDenoiser {
    fn name(&self) -> &str {
        "oracle"
    }

    fn predict(&self, input: &DenoiseInput, _rng: Option<&mut RngStream>) -> Result<Prediction> {
        input.validate()?;
        let x_hat = match &self.target {
            Some(t) if t.len() != input.y.len() => {
                return Err(CoreError::input("oracle target does not match the input length"))
            }
            Some(t) => t.clone(),
            None => input.y.to_vec(),
        };
        Ok(Prediction {
            x_hat,
            state_logits: Vec::new(),
        })
    }
}

/// The learned network with a frozen parameter set.
pub struct TransformerDenoiser {
    net: DenoiserNet,
    params: ParamStore,
}

impl TransformerDenoiser {
    pub fn new(net: DenoiserNet, params: ParamStore) -> Result<Self> {
        net.check_params(&params)?;
        Ok(TransformerDenoiser { net, params })
    }

    pub fn net(&self) -> &DenoiserNet {
        &self.net
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }
}

impl Denoiser for TransformerDenoiser {
    fn name(&self) -> &str {
        "transformer"
    }

    fn predict(&self, input: &DenoiseInput, rng: Option<&mut RngStream>) -> Result<Prediction> {
        let g = Graph::no_grad();
        let bound = self.params.bind(&g, false);
        let feed = match rng {
            Some(r) => StateFeed::Gumbel(r),
            None => StateFeed::Argmax,
        };
        let out = self.net.forward(&g, &bound, input, feed)?;
        Ok(Prediction {
            x_hat: g.value(out.x_hat).data().to_vec(),
            state_logits: g.value(out.logits).data().to_vec(),
        })
    }
}

/// Everything a registered constructor may draw on.
pub struct DenoiserBuild<'a> {
    pub config: &'a DenoiserConfig,
    pub params: Option<&'a ParamStore>,
    pub normalizer: &'a Normalizer,
    pub model: &'a Arc<HandModel>,
}

pub type DenoiserFactory = fn(&DenoiserBuild) -> Result<Box<dyn Denoiser>>;

/// Name-keyed denoiser constructors.
#[derive(Clone)]
pub struct DenoiserRegistry {
    entries: BTreeMap<String, DenoiserFactory>,
}

impl Default for DenoiserRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl DenoiserRegistry {
    pub fn empty() -> Self {
        DenoiserRegistry {
            entries: BTreeMap::new(),
        }
    }

    /// `transformer`, `identity` and `oracle`.
    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register("transformer", build_transformer);
        r.register("identity", |_| Ok(Box::new(IdentityDenoiser)));
        r.register("oracle", |_| Ok(Box::new(OracleDenoiser::observation())));
        r
    }

    pub fn register(&mut self, name: impl Into<String>, factory: DenoiserFactory) {
        self.entries.insert(name.into(), factory);
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.keys().map(String::as_str).collect()
    }

    pub fn build(&self, name: &str, ctx: &DenoiserBuild) -> Result<Box<dyn Denoiser>> {
        let factory = self.entries.get(name).ok_or_else(|| CoreError::UnknownStrategy {
            kind: "denoiser",
            name: name.to_string(),
            available: self.names().join(", "),
        })?;
        factory(ctx)
    }
}

fn build_transformer(ctx: &DenoiserBuild) -> Result<Box<dyn Denoiser>> {
    let params = ctx
        .params
        .ok_or_else(|| CoreError::config("transformer denoiser needs trained parameters"))?;
    let net = DenoiserNet::new(ctx.config.clone(), Arc::clone(ctx.model), ctx.normalizer.clone())?;
    Ok(Box::new(TransformerDenoiser::new(net, params.clone())?))
}

/// `softmax((logits + gumbel) / tau)`, or the one-hot of its argmax when `hard`.
pub fn sample_state(logits: &[f64], tau: f64, rng: &mut RngStream, hard: bool) -> Result<Vec<f64>> {
    if !(tau > 0.0) {
        return Err(CoreError::input("Gumbel temperature must be positive"));
    }
    let z: Vec<f64> = logits.iter().map(|l| (l + rng.gumbel()) / tau).collect();
    Ok(if hard { one_hot(argmax(&z), z.len()) } else { softmax(&z) })
}

/// Tape version over the last axis of `logits`. Hard samples pass gradients
/// straight through to the soft relaxation.
pub fn sample_state_graph(g: &Graph, logits: Var, tau: f64, rng: &mut RngStream, hard: bool) -> Result<Var> {
    if !(tau > 0.0) {
        return Err(CoreError::input("Gumbel temperature must be positive"));
    }
    let shape = g.shape(logits);
    let noise = Tensor::new(&shape, (0..shape.iter().product::<usize>()).map(|_| rng.gumbel()).collect())?;
    let perturbed = g.add(logits, g.constant(noise))?;
    let soft = g.softmax(perturbed, tau, None)?;
    if !hard {
        return Ok(soft);
    }
    let s = *shape.last().unwrap_or(&1);
    let hard_val: Vec<f64> = g
        .value(soft)
        .data()
        .chunks(s)
        .flat_map(|row| one_hot(argmax(row), s))
        .collect();
    Ok(g.straight_through(soft, Tensor::new(&shape, hard_val)?)?)
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn one_hot(i: usize, n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|v| v / total).collect()
}

/// Per-frame argmax of `[frames, S]` logits.
pub fn decode_states(logits: &[f64], num_states: usize) -> Vec<usize> {
    logits.chunks(num_states).map(argmax).collect()
}
