//! Residual-shifting diffusion between a clean sequence and its degraded
//! observation.
//!
//! The forward marginal is `x_n = x + eta_n (y - x) + kappa sqrt(eta_n) eps`.
//! All routines work on flattened sequences in normalized coordinates.

use serde::{Deserialize, Serialize};

use handrift_tensor::RngStream;

use crate::denoiser::{DenoiseInput, Denoiser};
use crate::error::{CoreError, Result};

/// Final shift; strictly below one so that `eta_{n-1} / eta_n` stays defined.
pub const ETA_LAST: f64 = 0.999;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub eta1: f64,
    pub kappa: f64,
    /// Exponent on the normalized step index; 1 is purely geometric.
    pub power: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            steps: 8,
            eta1: 1e-3,
            kappa: 0.3,
            power: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionSchedule {
    eta: Vec<f64>,
    kappa: f64,
}

impl DiffusionSchedule {
    pub fn new(cfg: &ScheduleConfig) -> Result<Self> {
        make_schedule(cfg.steps, cfg.eta1, cfg.kappa, cfg.power)
    }

    /// Schedule from explicit shifts, for tests and custom chains.
    pub fn from_etas(eta: Vec<f64>, kappa: f64) -> Result<Self> {
        if eta.is_empty() {
            return Err(CoreError::config("schedule needs at least one step"));
        }
        if !(kappa >= 0.0 && kappa.is_finite()) {
            return Err(CoreError::config("kappa must be finite and non-negative"));
        }
        if !(eta[0] > 0.0) || eta.windows(2).any(|w| !(w[1] >= w[0])) || !(*eta.last().unwrap() < 1.0) {
            return Err(CoreError::config("shifts must increase within (0, 1)"));
        }
        Ok(DiffusionSchedule { eta, kappa })
    }

    pub fn steps(&self) -> usize {
        self.eta.len()
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn etas(&self) -> &[f64] {
        &self.eta
    }

    /// `eta_n` for `n` in `0..=N`, with `eta_0 = 0`.
    pub fn eta(&self, n: usize) -> f64 {
        if n == 0 {
            0.0
        } else {
            self.eta[n - 1]
        }
    }

    fn check_step(&self, n: usize, lo: usize) -> Result<()> {
        if n < lo || n > self.steps() {
            return Err(CoreError::input(format!(
                "diffusion step {n} outside {lo}..={}",
                self.steps()
            )));
        }
        Ok(())
    }
}

/// `eta_n = eta_1 (eta_N / eta_1)^(((n - 1) / (N - 1))^power)`.
pub fn make_schedule(steps: usize, eta1: f64, kappa: f64, power: f64) -> Result<DiffusionSchedule> {
    if steps == 0 {
        return Err(CoreError::config("schedule needs at least one step"));
    }
    if !(eta1 > 0.0 && eta1 < ETA_LAST) {
        return Err(CoreError::config(format!("eta1 must lie in (0, {ETA_LAST}), got {eta1}")));
    }
    if !(power > 0.0 && power.is_finite()) {
        return Err(CoreError::config("schedule power must be positive"));
    }
    let eta = if steps == 1 {
        vec![ETA_LAST]
    } else {
        (0..steps)
            .map(|i| {
                if i + 1 == steps {
                    ETA_LAST
                } else {
                    let u = (i as f64 / (steps - 1) as f64).powf(power);
                    eta1 * (ETA_LAST / eta1).powf(u)
                }
            })
            .collect()
    };
    DiffusionSchedule::from_etas(eta, kappa)
}

fn same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(CoreError::input(format!("sequence sizes differ: {} vs {}", a.len(), b.len())));
    }
    Ok(())
}

/// Draw from the forward marginal at step `n`.
pub fn forward_sample(
    x: &[f64],
    y: &[f64],
    n: usize,
    sched: &DiffusionSchedule,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    same_len(x, y)?;
    sched.check_step(n, 1)?;
    let eta = sched.eta(n);
    let sd = sched.kappa * eta.sqrt();
    Ok(x.iter()
        .zip(y)
        .map(|(a, b)| a + eta * (b - a) + sd * rng.normal())
        .collect())
}

/// Mean and per-coordinate variance of `x_{n-1}` given `x_n` and a clean estimate.
pub fn posterior(x_n: &[f64], x_hat: &[f64], n: usize, sched: &DiffusionSchedule) -> Result<(Vec<f64>, f64)> {
    same_len(x_n, x_hat)?;
    sched.check_step(n, 1)?;
    if n == 1 {
        return Ok((x_hat.to_vec(), 0.0));
    }
    let (now, prev) = (sched.eta(n), sched.eta(n - 1));
    let alpha = now - prev;
    let mean = x_n
        .iter()
        .zip(x_hat)
        .map(|(a, b)| (prev / now) * a + (alpha / now) * b)
        .collect();
    Ok((mean, sched.kappa * sched.kappa * prev * alpha / now))
}

/// One reverse step. Step 1 returns the clean estimate exactly.
pub fn reverse_transition(
    x_n: &[f64],
    x_hat: &[f64],
    n: usize,
    sched: &DiffusionSchedule,
    rng: &mut RngStream,
    deterministic: bool,
) -> Result<Vec<f64>> {
    let (mut mean, var) = posterior(x_n, x_hat, n, sched)?;
    if !deterministic && var > 0.0 {
        let sd = var.sqrt();
        mean.iter_mut().for_each(|m| *m += sd * rng.normal());
    }
    Ok(mean)
}

/// Clean sequence and state logits from the final denoiser call.
#[derive(Clone, Debug, PartialEq)]
pub struct Refined {
    pub x: Vec<f64>,
    pub state_logits: Vec<f64>,
}

/// Full reverse chain from the observation `y` (normalized, `[T, D]`).
pub fn refine(
    y: &[f64],
    frames: usize,
    denoiser: &dyn Denoiser,
    sched: &DiffusionSchedule,
    rng: &mut RngStream,
    deterministic: bool,
) -> Result<Refined> {
    if y.iter().any(|v| !v.is_finite()) {
        return Err(CoreError::input("observation contains non-finite values"));
    }
    let big_n = sched.steps();
    let mut x: Vec<f64> = if deterministic {
        y.to_vec()
    } else {
        let sd = sched.kappa * sched.eta(big_n).sqrt();
        y.iter().map(|v| v + sd * rng.normal()).collect()
    };
    let mut logits = Vec::new();
    for n in (1..=big_n).rev() {
        let input = DenoiseInput {
            x_n: &x,
            y,
            frames,
            step: n,
            steps: big_n,
        };
        let stochastic_states = if deterministic { None } else { Some(&mut *rng) };
        let pred = denoiser.predict(&input, stochastic_states)?;
        if pred.x_hat.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::Diverged { step: n });
        }
        x = reverse_transition(&x, &pred.x_hat, n, sched, rng, deterministic)?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::Diverged { step: n });
        }
        logits = pred.state_logits;
    }
    Ok(Refined { x, state_logits: logits })
}
