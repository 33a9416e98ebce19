//! Motion priors: penalties on a raw-unit `[T, 61]` motion given per-frame
//! states, looked up by name.

use std::collections::BTreeMap;

use handrift_tensor::{Graph, Var};

use crate::datagen::constant_accel_loss;
use crate::error::{CoreError, Result};
use crate::motion::{FINGERS, THETA_DIM};
use crate::physics::{kinetics_loss, stability_loss, MotionState};

pub trait MotionPrior: Send + Sync {
    fn name(&self) -> &str;

    fn loss(&self, g: &Graph, motion: Var, labels: &[MotionState]) -> handrift_tensor::Result<Var>;
}

/// Direction reversals of all 48 pose angles while reaching or releasing.
pub struct KineticsPrior;

impl MotionPrior for KineticsPrior {
    fn name(&self) -> &str {
        "kinetics"
    }

    fn loss(&self, g: &Graph, motion: Var, labels: &[MotionState]) -> handrift_tensor::Result<Var> {
        kinetics_loss(g, g.slice(motion, 1, 0, THETA_DIM)?, labels)
    }
}

/// Finger-angle change across stable-grasp frame pairs.
pub struct StabilityPrior;

impl MotionPrior for StabilityPrior {
    fn name(&self) -> &str {
        "stability"
    }

    fn loss(&self, g: &Graph, motion: Var, labels: &[MotionState]) -> handrift_tensor::Result<Var> {
        stability_loss(g, g.slice(motion, 1, FINGERS.start, FINGERS.end)?, labels)
    }
}

/// Mean squared third difference of the pose angles; ignores states.
pub struct ConstantAccelPrior;

impl MotionPrior for ConstantAccelPrior {
    fn name(&self) -> &str {
        "constant_accel"
    }

    fn loss(&self, g: &Graph, motion: Var, _labels: &[MotionState]) -> handrift_tensor::Result<Var> {
        constant_accel_loss(g, g.slice(motion, 1, 0, THETA_DIM)?)
    }
}

pub type PriorFactory = fn() -> Box<dyn MotionPrior>;

#[derive(Clone)]
pub struct PriorRegistry {
    entries: BTreeMap<String, PriorFactory>,
}

impl Default for PriorRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl PriorRegistry {
    pub fn builtin() -> Self {
        let mut r = PriorRegistry {
            entries: BTreeMap::new(),
        };
        r.register("kinetics", || Box::new(KineticsPrior));
        r.register("stability", || Box::new(StabilityPrior));
        r.register("constant_accel", || Box::new(ConstantAccelPrior));
        r
    }

    pub fn register(&mut self, name: impl Into<String>, factory: PriorFactory) {
        self.entries.insert(name.into(), factory);
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.keys().map(String::as_str).collect()
    }

    pub fn build(&self, name: &str) -> Result<Box<dyn MotionPrior>> {
        self.entries
            .get(name)
            .map(|f| f())
            .ok_or_else(|| CoreError::UnknownStrategy {
                kind: "motion prior",
                name: name.to_string(),
                available: self.names().join(", "),
            })
    }
}
