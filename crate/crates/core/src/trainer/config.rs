use serde::{Deserialize, Serialize};

use handrift_tensor::AdamWConfig;

use crate::datagen::PerturbSpec;
use crate::denoiser::DenoiserConfig;
use crate::diffusion::ScheduleConfig;
use crate::error::{CoreError, Result};

/// Switches mirroring the ablation table.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    /// Off: the network becomes a one-shot `y -> x` regressor at step `N`.
    pub probabilistic: bool,
    pub use_state: bool,
    pub use_kin: bool,
    pub use_sta: bool,
    /// Third-difference penalty in place of the kinetics and stability terms.
    pub constant_accel_baseline: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Ablation {
            probabilistic: true,
            use_state: true,
            use_kin: true,
            use_sta: true,
            constant_accel_baseline: false,
        }
    }
}

impl Ablation {
    pub fn deterministic() -> Self {
        Ablation {
            probabilistic: false,
            use_state: false,
            use_kin: false,
            use_sta: false,
            constant_accel_baseline: false,
        }
    }

    pub fn diffusion() -> Self {
        Ablation {
            probabilistic: true,
            ..Self::deterministic()
        }
    }

    pub fn diffusion_state() -> Self {
        Ablation {
            use_state: true,
            ..Self::diffusion()
        }
    }

    pub fn all() -> Self {
        Self::default()
    }

    pub fn constant_accel() -> Self {
        Ablation {
            constant_accel_baseline: true,
            ..Self::diffusion_state()
        }
    }

    /// Named variant, as accepted on the command line.
    pub fn named(name: &str) -> Result<Self> {
        match name {
            "deterministic" => Ok(Self::deterministic()),
            "diffusion" | "no-physics" => Ok(Self::diffusion_state()),
            "diffusion-only" => Ok(Self::diffusion()),
            "all" => Ok(Self::all()),
            "constant-accel" => Ok(Self::constant_accel()),
            other => Err(CoreError::UnknownStrategy {
                kind: "ablation",
                name: other.to_string(),
                available: "all, constant-accel, deterministic, diffusion, diffusion-only, no-physics".into(),
            }),
        }
    }

    pub fn label(&self) -> String {
        let mut parts = vec![if self.probabilistic { "diffusion" } else { "deterministic" }];
        if self.use_state {
            parts.push("state");
        }
        if self.use_kin {
            parts.push("kin");
        }
        if self.use_sta {
            parts.push("sta");
        }
        if self.constant_accel_baseline {
            parts.push("constant-accel");
        }
        parts.join("+")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub denoiser: DenoiserConfig,
    pub schedule: ScheduleConfig,
    pub optimizer: AdamWConfig,
    /// Noise model producing observations from clean motion.
    pub perturb: PerturbSpec,
    /// Train on the items' paired observations from an external estimator
    /// instead of drawing observations from `perturb`.
    pub paired_observations: bool,
    pub ablation: Ablation,
    pub lambda_state: f64,
    pub lambda_kin: f64,
    pub lambda_sta: f64,
    /// Forward-kinematics joint error, cm^2.
    pub lambda_geo: f64,
    pub lambda_accel: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Training window; longer sequences are cropped at random.
    pub frames: usize,
    /// Gaussian smoothing of the clean motion before training, frames; 0 = off.
    pub preprocess_sigma: f64,
    /// Final epochs that feed back sampled states and apply the physics
    /// terms to predicted labels instead of annotated ones.
    pub own_state_epochs: usize,
    /// Epochs over which the motion-prior weights ramp linearly up to their
    /// full value; 0 applies them from the first step.
    pub physics_warmup_epochs: usize,
    /// Held-out evaluation every this many epochs (and after the last); 0 = never.
    pub eval_every: usize,
    pub eval_sequences: usize,
    /// Mean loss above this aborts the run.
    pub divergence_threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    pub fn desk() -> Self {
        TrainConfig {
            denoiser: DenoiserConfig::desk(),
            schedule: ScheduleConfig::default(),
            optimizer: AdamWConfig {
                lr: 1e-3,
                ..AdamWConfig::default()
            },
            perturb: PerturbSpec::default(),
            paired_observations: false,
            ablation: Ablation::default(),
            lambda_state: 50.0,
            lambda_kin: 500.0,
            lambda_sta: 1000.0,
            lambda_geo: 1.0,
            lambda_accel: 500.0,
            epochs: 30,
            batch_size: 8,
            seed: 0,
            frames: 16,
            preprocess_sigma: 0.0,
            own_state_epochs: 0,
            physics_warmup_epochs: 10,
            eval_every: 5,
            eval_sequences: 8,
            divergence_threshold: 1e6,
        }
    }

    pub fn paper() -> Self {
        TrainConfig {
            denoiser: DenoiserConfig::paper(),
            optimizer: AdamWConfig::default(),
            ..Self::desk()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "paper" => Ok(Self::paper()),
            other => Err(CoreError::UnknownStrategy {
                kind: "preset",
                name: other.to_string(),
                available: "desk, paper".into(),
            }),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.denoiser.validate()?;
        self.perturb.validate()?;
        let lambdas = [self.lambda_state, self.lambda_kin, self.lambda_sta, self.lambda_geo, self.lambda_accel];
        if lambdas.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return Err(CoreError::config("loss weights must be finite and non-negative"));
        }
        let a = &self.ablation;
        if a.constant_accel_baseline && (a.use_kin || a.use_sta) {
            return Err(CoreError::config(
                "constant_accel_baseline replaces the kinetics and stability terms; disable use_kin and use_sta",
            ));
        }
        if self.batch_size == 0 || self.frames < crate::motion::MIN_FRAMES {
            return Err(CoreError::config("batch_size must be positive and frames at least 4"));
        }
        if !(self.optimizer.lr > 0.0) || !(self.divergence_threshold > 0.0) || !(self.preprocess_sigma >= 0.0) {
            return Err(CoreError::config("lr, divergence threshold and smoothing must be positive"));
        }
        crate::diffusion::DiffusionSchedule::new(&self.schedule)?;
        Ok(())
    }

    /// Network configuration with the state pathway following the ablation.
    pub fn network(&self) -> DenoiserConfig {
        DenoiserConfig {
            state_conditioning: self.ablation.use_state,
            ..self.denoiser.clone()
        }
    }

    /// Weighted motion priors switched on by the ablation flags, by registry name.
    pub fn active_priors(&self) -> Vec<(&'static str, f64)> {
        let a = &self.ablation;
        let mut out = Vec::new();
        if a.constant_accel_baseline {
            out.push(("constant_accel", self.lambda_accel));
        } else {
            if a.use_kin {
                out.push(("kinetics", self.lambda_kin));
            }
            if a.use_sta {
                out.push(("stability", self.lambda_sta));
            }
        }
        out
    }
}
