use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::physics::NUM_STATES;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenoiserConfig {
    pub width: usize,
    pub heads: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub ffn_width: usize,
    /// Output widths of the mesh graph-convolution layers.
    pub mesh_widths: Vec<usize>,
    pub num_states: usize,
    pub gumbel_tau: f64,
    /// Sinusoidal features of `n / N` fed to the step perceptron.
    pub step_features: usize,
    /// Feed states back into the decoder and the output gate.
    pub state_conditioning: bool,
    /// Mesh coordinates (mm, wrist-relative) are multiplied by this.
    pub mesh_scale: f64,
    /// Initial scale of the pose correction head.
    pub head_init: f64,
    /// Multiplier on the per-state gate bias; a larger value lets a state
    /// close or open the output gate within few optimizer steps.
    pub gate_state_scale: f64,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl DenoiserConfig {
    /// Small network that trains on one CPU core in minutes.
    pub fn desk() -> Self {
        DenoiserConfig {
            width: 64,
            heads: 4,
            encoder_layers: 2,
            decoder_layers: 2,
            ffn_width: 128,
            mesh_widths: vec![8, 16, 16, 16],
            num_states: NUM_STATES,
            gumbel_tau: 1.0,
            step_features: 16,
            state_conditioning: true,
            mesh_scale: 0.01,
            head_init: 0.1,
            gate_state_scale: 10.0,
        }
    }

    /// Full-size network: 4 layers, 8 heads, width 512.
    pub fn paper() -> Self {
        DenoiserConfig {
            width: 512,
            heads: 8,
            encoder_layers: 4,
            decoder_layers: 4,
            ffn_width: 2048,
            mesh_widths: vec![32, 64, 64, 64],
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
                available: "desk, paper".to_string(),
            }),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.heads == 0 || self.width % self.heads != 0 {
            return Err(CoreError::config(format!(
                "width {} must be a positive multiple of heads {}",
                self.width, self.heads
            )));
        }
        if self.ffn_width == 0 || self.mesh_widths.is_empty() || self.mesh_widths.contains(&0) {
            return Err(CoreError::config("layer widths must be positive"));
        }
        if self.num_states != NUM_STATES {
            return Err(CoreError::config(format!(
                "state head must have {NUM_STATES} classes, got {}",
                self.num_states
            )));
        }
        if !(self.gumbel_tau > 0.0) {
            return Err(CoreError::config("gumbel_tau must be positive"));
        }
        if self.step_features == 0 || self.step_features % 2 != 0 {
            return Err(CoreError::config("step_features must be even and positive"));
        }
        if !(self.mesh_scale > 0.0 && self.head_init >= 0.0 && self.gate_state_scale >= 0.0) {
            return Err(CoreError::config(
                "mesh_scale must be positive, head_init and gate_state_scale non-negative",
            ));
        }
        Ok(())
    }
}
