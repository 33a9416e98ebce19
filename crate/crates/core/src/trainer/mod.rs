//! Loss assembly and the training loop.
//!
//! Each step draws an observation `y` from the noise model, a step `n` and
//! `x^n` from the forward marginal, and regresses the clean motion. Batch
//! elements run in parallel, each on its own tape with its own random
//! stream; gradients are summed in batch order, so results do not depend on
//! the thread count.

mod config;
mod priors;

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use handrift_tensor::{AdamW, Graph, ParamStore, RngStream, Tensor, Var};

use crate::bundle::ModelBundle;
use crate::datagen::{gaussian_smooth, perturb};
use crate::denoiser::{init_params, DenoiseInput, DenoiserNet, ParamLookup, StateFeed, TransformerDenoiser};
use crate::diffusion::{forward_sample, DiffusionSchedule};
use crate::error::{CoreError, Result};
use crate::hand::{fk_graph, HandModel, NUM_JOINTS};
use crate::metrics::{evaluate_sequence, EvalOptions};
use crate::motion::{MotionSequence, Normalizer, FRAME_DIM};
use crate::physics::MotionState;

pub use config::{Ablation, TrainConfig};
pub use priors::{ConstantAccelPrior, KineticsPrior, MotionPrior, PriorRegistry, StabilityPrior};

/// One clean training sequence with its annotated states.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainItem {
    pub name: String,
    pub motion: MotionSequence,
    pub labels: Vec<MotionState>,
    /// Paired observation from an external estimator, used when the
    /// configuration asks for paired training.
    pub observation: Option<MotionSequence>,
}

/// Weighted loss terms; `total` is their sum in key order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub terms: BTreeMap<String, f64>,
    pub total: f64,
}

impl LossBreakdown {
    fn accumulate(&mut self, other: &LossBreakdown) {
        for (k, v) in &other.terms {
            *self.terms.entry(k.clone()).or_insert(0.0) += v;
        }
        self.total += other.total;
    }

    fn scaled(mut self, c: f64) -> Self {
        self.terms.values_mut().for_each(|v| *v *= c);
        self.total *= c;
        self
    }
}

/// Clean reference of one training sample.
pub struct LossTarget<'a> {
    /// Normalized `[T, 61]`.
    pub x: &'a [f64],
    /// Forward-kinematics joints of the clean motion, `[T, 21, 3]` mm.
    pub joints: &'a [f64],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub sequences: usize,
    pub input_mje: f64,
    pub mje: f64,
    pub input_accl: f64,
    pub accl: f64,
    pub kin: f64,
    pub sta: f64,
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub loss: LossBreakdown,
    /// Exponential moving average of the total loss, 10-epoch span.
    pub loss_ema: f64,
    pub eval: Option<EvalSummary>,
}

pub struct TrainRun {
    /// Parameters after the last completed epoch.
    pub bundle: ModelBundle,
    pub log: Vec<EpochRecord>,
    /// Epoch and component breakdown of an aborted run.
    pub diverged: Option<(usize, String)>,
}

/// Loss assembly and per-sample gradients for one configuration.
pub struct Trainer {
    cfg: TrainConfig,
    net: DenoiserNet,
    sched: DiffusionSchedule,
    priors: Vec<(Box<dyn MotionPrior>, f64)>,
    model: Arc<HandModel>,
}

fn scalar(g: &Graph, v: Var) -> f64 {
    g.value(v).item()
}

impl Trainer {
    pub fn new(cfg: TrainConfig, model: Arc<HandModel>, normalizer: Normalizer) -> Result<Self> {
        cfg.validate()?;
        let registry = PriorRegistry::builtin();
        let priors = cfg
            .active_priors()
            .into_iter()
            .map(|(name, w)| Ok((registry.build(name)?, w)))
            .collect::<Result<Vec<_>>>()?;
        let net = DenoiserNet::new(cfg.network(), Arc::clone(&model), normalizer)?;
        let sched = DiffusionSchedule::new(&cfg.schedule)?;
        Ok(Trainer {
            cfg,
            net,
            sched,
            priors,
            model,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn net(&self) -> &DenoiserNet {
        &self.net
    }

    pub fn schedule(&self) -> &DiffusionSchedule {
        &self.sched
    }

    /// Joint positions of a raw-unit motion, flattened.
    pub fn joints(&self, motion: &MotionSequence) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(motion.len() * NUM_JOINTS * 3);
        for pose in motion.poses() {
            out.extend(self.model.forward_kinematics(&pose)?.into_iter().flatten());
        }
        Ok(out)
    }

    /// Weighted sum of the enabled terms on a prediction. Physics terms see
    /// the denormalized estimate; disabled terms are absent, not zero-weighted.
    pub fn total_loss(
        &self,
        g: &Graph,
        x_hat: Var,
        logits: Var,
        target: &LossTarget,
        labels: &[MotionState],
    ) -> Result<(Var, LossBreakdown)> {
        self.loss_terms(g, x_hat, logits, target, labels, labels, 1.0)
    }

    /// Ramp on the motion-prior weights: linear over the warm-up epochs.
    pub fn prior_scale(&self, epoch: usize) -> f64 {
        match self.cfg.physics_warmup_epochs {
            0 => 1.0,
            w => ((epoch + 1) as f64 / w as f64).min(1.0),
        }
    }

    /// State supervision always uses `state_labels`; the priors use
    /// `prior_labels` with their weights multiplied by `prior_scale`.
    #[allow(clippy::too_many_arguments)]
    fn loss_terms(
        &self,
        g: &Graph,
        x_hat: Var,
        logits: Var,
        target: &LossTarget,
        state_labels: &[MotionState],
        prior_labels: &[MotionState],
        prior_scale: f64,
    ) -> Result<(Var, LossBreakdown)> {
        let labels = state_labels;
        let shape = g.shape(x_hat);
        let t = shape[0];
        if shape != [t, FRAME_DIM] || target.x.len() != t * FRAME_DIM || labels.len() != t || prior_labels.len() != t {
            return Err(CoreError::input("loss inputs disagree on the frame count"));
        }
        let mut terms: Vec<(&str, Var)> = Vec::new();

        let x = g.constant(Tensor::new(&[t, FRAME_DIM], target.x.to_vec())?);
        // squared norm over the whole window, not a per-coordinate mean
        terms.push(("data", g.sum(g.square(g.sub(x_hat, x)?))));

        if self.cfg.ablation.use_state && self.cfg.lambda_state > 0.0 {
            let idx: Vec<usize> = labels.iter().map(|s| s.index()).collect();
            let ce = crate::physics::state_loss(g, logits, &idx)?;
            terms.push(("state", g.scale(ce, self.cfg.lambda_state)));
        }

        let norm = self.net.normalizer();
        let need_raw = self.cfg.lambda_geo > 0.0 || !self.priors.is_empty();
        if need_raw {
            let std = g.constant(Tensor::new(&[FRAME_DIM], norm.std.clone())?);
            let mean = g.constant(Tensor::new(&[FRAME_DIM], norm.mean.clone())?);
            let raw = g.add(g.mul(x_hat, std)?, mean)?;
            for (prior, w) in &self.priors {
                if *w > 0.0 {
                    let l = prior.loss(g, raw, prior_labels)?;
                    terms.push((prior.name(), g.scale(l, w * prior_scale)));
                }
            }
            if self.cfg.lambda_geo > 0.0 {
                if target.joints.len() != t * NUM_JOINTS * 3 {
                    return Err(CoreError::input("joint target has the wrong size"));
                }
                let joints = fk_graph(g, &self.model, raw)?;
                let gt = g.constant(Tensor::new(&[t, NUM_JOINTS, 3], target.joints.to_vec())?);
                // mm -> cm before squaring
                let mse = g.scale(g.mean(g.square(g.sub(joints, gt)?)), 0.01);
                terms.push(("geometric", g.scale(mse, self.cfg.lambda_geo)));
            }
        }

        let mut breakdown = LossBreakdown::default();
        let mut total: Option<Var> = None;
        for (name, v) in terms {
            breakdown.terms.insert(name.to_string(), scalar(g, v));
            total = Some(match total {
                None => v,
                Some(acc) => g.add(acc, v)?,
            });
        }
        let total = total.expect("data term is always present");
        breakdown.total = scalar(g, total);
        if !breakdown.total.is_finite() {
            return Err(CoreError::Numerical(format!("loss {:?}", breakdown.terms)));
        }
        Ok((total, breakdown))
    }

    /// Draws `(y, n, x^n)` for one sample and returns its gradients and loss.
    fn sample_step(
        &self,
        params: &ParamStore,
        item: &TrainItem,
        epoch: usize,
        index: usize,
    ) -> Result<(BTreeMap<String, Vec<f64>>, LossBreakdown)> {
        let mut rng = RngStream::derive(self.cfg.seed, "train-sample", &[epoch as u64, index as u64]);
        let (clean, observed, start) = self.crop(item, &mut rng)?;
        let y = match observed {
            Some(o) if self.cfg.paired_observations => o,
            _ => perturb(&clean, &self.cfg.perturb, &mut rng)?,
        };
        let norm = self.net.normalizer();
        let (x, y) = (norm.normalize(&clean), norm.normalize(&y));
        let big_n = self.sched.steps();
        let (n, x_n) = if self.cfg.ablation.probabilistic {
            let n = rng.range_inclusive(1, big_n);
            (n, forward_sample(&x, &y, n, &self.sched, &mut rng)?)
        } else {
            (big_n, y.clone())
        };
        let labels = &item.labels[start..start + clean.len()];
        let joints = self.joints(&clean)?;

        let g = Graph::new();
        let bound = params.bind(&g, true);
        let input = DenoiseInput {
            x_n: &x_n,
            y: &y,
            frames: clean.len(),
            step: n,
            steps: big_n,
        };
        let own_states = self.cfg.ablation.use_state
            && self.cfg.own_state_epochs > 0
            && epoch + self.cfg.own_state_epochs >= self.cfg.epochs;
        let idx: Vec<usize> = labels.iter().map(|s| s.index()).collect();
        let feed = if own_states {
            StateFeed::Gumbel(&mut rng)
        } else {
            StateFeed::Teacher(&idx)
        };
        let out = self.net.forward(&g, &bound as &dyn ParamLookup, &input, feed)?;
        let physics_labels: Vec<MotionState> = if own_states {
            out.states
                .iter()
                .map(|&s| MotionState::from_index(s))
                .collect::<Result<_>>()?
        } else {
            labels.to_vec()
        };
        let target = LossTarget { x: &x, joints: &joints };
        let (loss, breakdown) =
            self.loss_terms(&g, out.x_hat, out.logits, &target, labels, &physics_labels, self.prior_scale(epoch))?;
        let grads = g.backward(loss)?;
        Ok((bound.collect_grads(&g, &grads), breakdown))
    }

    /// Random training window of the (optionally smoothed) clean motion, its
    /// paired observation and its start frame.
    fn crop(&self, item: &TrainItem, rng: &mut RngStream) -> Result<(MotionSequence, Option<MotionSequence>, usize)> {
        let len = item.motion.len();
        if item.labels.len() != len {
            return Err(CoreError::input(format!("{}: {len} frames but {} labels", item.name, item.labels.len())));
        }
        let mut clean = item.motion.clone();
        if self.cfg.preprocess_sigma > 0.0 {
            clean = gaussian_smooth(&clean, self.cfg.preprocess_sigma)?;
        }
        let w = self.cfg.frames;
        if len <= w {
            return Ok((clean, item.observation.clone(), 0));
        }
        let s = rng.range_inclusive(0, len - w);
        Ok((clean.window(s, s + w), item.observation.as_ref().map(|o| o.window(s, s + w)), s))
    }
}

/// Observations used for held-out evaluation, fixed per seed.
pub fn holdout_observations(items: &[TrainItem], cfg: &TrainConfig) -> Result<Vec<MotionSequence>> {
    items
        .iter()
        .enumerate()
        .map(|(i, it)| match &it.observation {
            Some(o) if cfg.paired_observations => Ok(o.clone()),
            _ => {
                let mut rng = RngStream::derive(cfg.seed, "holdout", &[i as u64]);
                perturb(&it.motion, &cfg.perturb, &mut rng)
            }
        })
        .collect()
}

fn evaluate(bundle: &ModelBundle, items: &[TrainItem], observations: &[MotionSequence], model: &Arc<HandModel>) -> Result<EvalSummary> {
    let denoiser = TransformerDenoiser::new(
        DenoiserNet::new(bundle.meta.train.network(), Arc::clone(model), bundle.meta.normalizer.clone())?,
        bundle.params.clone(),
    )?;
    let refiner = bundle.refiner(&denoiser)?;
    let opts = EvalOptions::default();
    let rows = items
        .par_iter()
        .zip(observations)
        .map(|(it, y)| {
            let out = refiner.refine(y, &mut RngStream::new(0, 0), true)?;
            let refined = evaluate_sequence(&it.name, &out.motion, &it.motion, &it.labels, model, &opts)?;
            let input = evaluate_sequence(&it.name, y, &it.motion, &it.labels, model, &opts)?;
            Ok((input, refined))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = rows.len().max(1) as f64;
    let mean = |f: &dyn Fn(&(crate::metrics::SequenceMetrics, crate::metrics::SequenceMetrics)) -> f64| {
        rows.iter().map(f).sum::<f64>() / n
    };
    Ok(EvalSummary {
        sequences: rows.len(),
        input_mje: mean(&|r| r.0.mje),
        mje: mean(&|r| r.1.mje),
        input_accl: mean(&|r| r.0.accl),
        accl: mean(&|r| r.1.accl),
        kin: mean(&|r| r.1.kin),
        sta: mean(&|r| r.1.sta),
    })
}

/// Trains from scratch. `on_epoch` sees every log record as it is produced.
pub fn train(
    items: &[TrainItem],
    holdout: &[TrainItem],
    cfg: &TrainConfig,
    model: Arc<HandModel>,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainRun> {
    if items.is_empty() {
        return Err(CoreError::input("training corpus is empty"));
    }
    if cfg.paired_observations {
        if let Some(it) = items.iter().chain(holdout).find(|it| it.observation.as_ref().map(MotionSequence::len) != Some(it.motion.len())) {
            return Err(CoreError::input(format!("{}: paired training needs an observation of equal length", it.name)));
        }
    }
    let clean: Vec<MotionSequence> = items.iter().map(|i| i.motion.clone()).collect();
    let normalizer = Normalizer::fit(&clean)?;
    let trainer = Trainer::new(cfg.clone(), Arc::clone(&model), normalizer.clone())?;
    let mut params = init_params(&trainer.net.config().clone(), &mut RngStream::derive(cfg.seed, "init", &[]));
    let mut opt = AdamW::new(cfg.optimizer.clone());
    let mut bundle = ModelBundle::new("transformer", cfg.clone(), normalizer, model.spec().clone(), params.clone());

    let eval_items: Vec<TrainItem> = holdout.iter().take(cfg.eval_sequences).cloned().collect();
    let eval_obs = holdout_observations(&eval_items, cfg)?;
    let alpha = 2.0 / 11.0;
    let mut ema: Option<f64> = None;
    let mut log = Vec::new();

    for epoch in 0..cfg.epochs {
        opt.set_epoch(epoch);
        let mut order: Vec<usize> = (0..items.len()).collect();
        RngStream::derive(cfg.seed, "order", &[epoch as u64]).shuffle(&mut order);
        let mut epoch_loss = LossBreakdown::default();
        for batch in order.chunks(cfg.batch_size) {
            let results = batch
                .par_iter()
                .map(|&i| trainer.sample_step(&params, &items[i], epoch, i))
                .collect::<Vec<_>>();
            let mut sum: BTreeMap<String, Vec<f64>> = BTreeMap::new();
            let mut batch_loss = LossBreakdown::default();
            for r in results {
                let (grads, loss) = match r {
                    Ok(v) => v,
                    Err(CoreError::Numerical(detail)) => {
                        return Ok(abort(bundle, log, epoch, detail));
                    }
                    Err(e) => return Err(e),
                };
                batch_loss.accumulate(&loss);
                for (k, g) in grads {
                    match sum.get_mut(&k) {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                        None => {
                            sum.insert(k, g);
                        }
                    }
                }
            }
            let inv = 1.0 / batch.len() as f64;
            let batch_loss = batch_loss.scaled(inv);
            if !(batch_loss.total <= cfg.divergence_threshold) {
                let detail = format!("batch loss {:.4e} exceeds threshold, terms {:?}", batch_loss.total, batch_loss.terms);
                return Ok(abort(bundle, log, epoch, detail));
            }
            sum.values_mut().for_each(|g| g.iter_mut().for_each(|v| *v *= inv));
            opt.step(&mut params, &sum)?;
            epoch_loss.accumulate(&batch_loss.scaled(batch.len() as f64));
        }
        let epoch_loss = epoch_loss.scaled(1.0 / items.len() as f64);
        let e = match ema {
            None => epoch_loss.total,
            Some(prev) => prev + alpha * (epoch_loss.total - prev),
        };
        ema = Some(e);
        bundle.params = params.clone();
        bundle.meta.epochs_completed = epoch + 1;
        let due = cfg.eval_every > 0 && ((epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.epochs);
        let eval = if due && !eval_items.is_empty() {
            Some(evaluate(&bundle, &eval_items, &eval_obs, &model)?)
        } else {
            None
        };
        let record = EpochRecord {
            epoch: epoch + 1,
            lr: opt.lr(),
            loss: epoch_loss,
            loss_ema: e,
            eval,
        };
        on_epoch(&record);
        log.push(record);
    }
    Ok(TrainRun {
        bundle,
        log,
        diverged: None,
    })
}

fn abort(mut bundle: ModelBundle, log: Vec<EpochRecord>, epoch: usize, detail: String) -> TrainRun {
    bundle.meta.diverged = true;
    TrainRun {
        bundle,
        log,
        diverged: Some((epoch + 1, detail)),
    }
}

impl TrainRun {
    pub fn into_result(self) -> Result<(ModelBundle, Vec<EpochRecord>)> {
        match self.diverged {
            Some((epoch, detail)) => Err(CoreError::TrainingDiverged { epoch, detail }),
            None => Ok((self.bundle, self.log)),
        }
    }
}
