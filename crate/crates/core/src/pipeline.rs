//! Refinement of raw-unit sequences of any length.
//!
//! Sequences longer than the trained window are cut into windows that
//! overlap by half; each overlap is cross-faded linearly from the earlier
//! window into the later one, for poses and state logits alike.

use handrift_tensor::RngStream;

use crate::denoiser::{argmax, DenoiseInput, Denoiser, Prediction};
use crate::diffusion::{refine, DiffusionSchedule, Refined};
use crate::error::{CoreError, Result};
use crate::motion::{MotionSequence, Normalizer, FRAME_DIM, MIN_FRAMES};
use crate::physics::{MotionState, NUM_STATES};

#[derive(Clone, Debug, PartialEq)]
pub struct RefineOutput {
    pub motion: MotionSequence,
    /// `[T, S]`, empty when the denoiser has no state head.
    pub state_logits: Vec<f64>,
    pub states: Vec<MotionState>,
}

pub struct Refiner<'a> {
    pub denoiser: &'a dyn Denoiser,
    pub schedule: DiffusionSchedule,
    pub normalizer: Normalizer,
    /// Trained sequence length.
    pub window: usize,
    /// A single denoiser call at step `N` on `x^N = y` instead of the chain.
    pub one_shot: bool,
}

/// Window start offsets covering `len` frames with half-window hops; the
/// last window ends at `len`.
pub fn window_starts(len: usize, window: usize) -> Vec<usize> {
    if len <= window {
        return vec![0];
    }
    let hop = (window / 2).max(1);
    let mut starts: Vec<usize> = (0..).map(|k| k * hop).take_while(|&s| s + window < len).collect();
    starts.push(len - window);
    starts
}

/// A trained denoiser driven on a shorter chain: step `k` of the respaced
/// schedule is step `map[k - 1]` of the trained one, and the shifts are the
/// trained shifts at those steps, so every transition keeps its meaning.
pub struct Respaced<'a> {
    inner: &'a dyn Denoiser,
    map: Vec<usize>,
    trained_steps: usize,
    schedule: DiffusionSchedule,
}

impl<'a> Respaced<'a> {
    /// `steps` trained indices spread evenly over `1..=N`, always ending at `N`.
    pub fn new(inner: &'a dyn Denoiser, trained: &DiffusionSchedule, steps: usize) -> Result<Self> {
        let big_n = trained.steps();
        if steps == 0 || steps > big_n {
            return Err(CoreError::config(format!("steps must lie in 1..={big_n}, got {steps}")));
        }
        let map: Vec<usize> = (1..=steps)
            .map(|k| ((k * big_n) as f64 / steps as f64).round() as usize)
            .map(|n| n.clamp(1, big_n))
            .collect();
        let schedule = DiffusionSchedule::from_etas(map.iter().map(|&n| trained.eta(n)).collect(), trained.kappa())?;
        Ok(Respaced {
            inner,
            map,
            trained_steps: big_n,
            schedule,
        })
    }

    pub fn schedule(&self) -> &DiffusionSchedule {
        &self.schedule
    }

    pub fn trained_steps(&self) -> &[usize] {
        &self.map
    }
}

impl Denoiser for Respaced<'_> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn predict(&self, input: &DenoiseInput, rng: Option<&mut RngStream>) -> Result<Prediction> {
        input.validate()?;
        let mapped = DenoiseInput {
            step: self.map[input.step - 1],
            steps: self.trained_steps,
            ..*input
        };
        self.inner.predict(&mapped, rng)
    }
}

impl Refiner<'_> {
    fn run_window(&self, y: &[f64], frames: usize, rng: &mut RngStream, deterministic: bool) -> Result<Refined> {
        if self.one_shot {
            let input = DenoiseInput {
                x_n: y,
                y,
                frames,
                step: self.schedule.steps(),
                steps: self.schedule.steps(),
            };
            let pred = self.denoiser.predict(&input, if deterministic { None } else { Some(rng) })?;
            if pred.x_hat.iter().any(|v| !v.is_finite()) {
                return Err(CoreError::Diverged { step: self.schedule.steps() });
            }
            return Ok(Refined {
                x: pred.x_hat,
                state_logits: pred.state_logits,
            });
        }
        refine(y, frames, self.denoiser, &self.schedule, rng, deterministic)
    }

    pub fn refine(&self, y: &MotionSequence, rng: &mut RngStream, deterministic: bool) -> Result<RefineOutput> {
        y.require_min_len(MIN_FRAMES)?;
        let len = y.len();
        let z = self.normalizer.normalize(y);
        let window = self.window.max(MIN_FRAMES);
        let mut x = vec![0.0; len * FRAME_DIM];
        let mut logits: Vec<f64> = Vec::new();
        let mut filled = 0usize;
        for start in window_starts(len, window) {
            let frames = window.min(len);
            let out = self.run_window(&z[start * FRAME_DIM..(start + frames) * FRAME_DIM], frames, rng, deterministic)?;
            let has_logits = !out.state_logits.is_empty();
            if has_logits && logits.is_empty() {
                logits = vec![0.0; len * NUM_STATES];
            }
            let overlap = filled.saturating_sub(start);
            for k in 0..frames {
                let t = start + k;
                // weight of the new window rises linearly across the overlap
                let w = if k < overlap { (k + 1) as f64 / (overlap + 1) as f64 } else { 1.0 };
                for d in 0..FRAME_DIM {
                    let v = out.x[k * FRAME_DIM + d];
                    let dst = &mut x[t * FRAME_DIM + d];
                    *dst = if k < overlap { (1.0 - w) * *dst + w * v } else { v };
                }
                if has_logits {
                    for s in 0..NUM_STATES {
                        let v = out.state_logits[k * NUM_STATES + s];
                        let dst = &mut logits[t * NUM_STATES + s];
                        *dst = if k < overlap { (1.0 - w) * *dst + w * v } else { v };
                    }
                }
            }
            filled = start + frames;
        }
        let states = logits
            .chunks(NUM_STATES)
            .map(|row| MotionState::from_index(argmax(row)))
            .collect::<Result<Vec<_>>>()?;
        Ok(RefineOutput {
            motion: self.normalizer.denormalize(&x)?,
            state_logits: logits,
            states,
        })
    }
}
