//! Trained-model bundle stored in the tensor checkpoint container.
//!
//! The manifest metadata carries everything needed to rebuild the denoiser
//! and to refuse inputs it was not trained for: the training configuration,
//! the normalization statistics, the hand model and the ablation flags.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use handrift_tensor::{Checkpoint, Manifest, ParamStore};

use crate::denoiser::{Denoiser, DenoiserBuild, DenoiserRegistry};
use crate::diffusion::DiffusionSchedule;
use crate::error::{CoreError, Result};
use crate::hand::{HandModel, HandModelSpec};
use crate::motion::Normalizer;
use crate::pipeline::Refiner;
use crate::trainer::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleMeta {
    /// Registered denoiser name.
    pub denoiser: String,
    pub train: TrainConfig,
    pub normalizer: Normalizer,
    pub normalization_id: String,
    pub hand: HandModelSpec,
    pub ablation: String,
    pub epochs_completed: usize,
    pub diverged: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    pub meta: BundleMeta,
    pub params: ParamStore,
}

impl ModelBundle {
    pub fn new(denoiser: &str, train: TrainConfig, normalizer: Normalizer, hand: HandModelSpec, params: ParamStore) -> Self {
        ModelBundle {
            meta: BundleMeta {
                denoiser: denoiser.to_string(),
                ablation: train.ablation.label(),
                normalization_id: normalizer.id(),
                train,
                normalizer,
                hand,
                epochs_completed: 0,
                diverged: false,
            },
            params,
        }
    }

    /// SHA-256 over the configuration that determines the network's meaning.
    pub fn config_hash(&self) -> Result<String> {
        let key = serde_json::json!({
            "denoiser": self.meta.denoiser,
            "train": self.meta.train,
            "hand": self.meta.hand,
            "normalization_id": self.meta.normalization_id,
        });
        Ok(hex::encode(Sha256::digest(serde_json::to_vec(&key)?)))
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        Ok(Checkpoint {
            manifest: Manifest {
                format_version: handrift_tensor::checkpoint::FORMAT_VERSION,
                seed: self.meta.train.seed,
                config_hash: self.config_hash()?,
                metadata: serde_json::to_value(&self.meta)?,
            },
            tensors: self.params.clone().into_map(),
        })
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        let meta: BundleMeta = serde_json::from_value(ckpt.manifest.metadata.clone())
            .map_err(|e| CoreError::config(format!("checkpoint metadata: {e}")))?;
        let bundle = ModelBundle {
            meta,
            params: ParamStore::from_map(ckpt.tensors),
        };
        if bundle.meta.normalizer.id() != bundle.meta.normalization_id {
            return Err(CoreError::NormalizationMismatch {
                expected: bundle.meta.normalization_id.clone(),
                found: bundle.meta.normalizer.id(),
            });
        }
        if bundle.config_hash()? != ckpt.manifest.config_hash {
            return Err(CoreError::config("checkpoint configuration hash does not match its metadata"));
        }
        Ok(bundle)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(self.to_checkpoint()?.save(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(Checkpoint::load(path)?)
    }

    pub fn hand_model(&self) -> Result<Arc<HandModel>> {
        Ok(Arc::new(HandModel::new(self.meta.hand.clone())?))
    }

    pub fn schedule(&self) -> Result<DiffusionSchedule> {
        DiffusionSchedule::new(&self.meta.train.schedule)
    }

    pub fn build_denoiser(&self, registry: &DenoiserRegistry, model: &Arc<HandModel>) -> Result<Box<dyn Denoiser>> {
        let config = self.meta.train.network();
        registry.build(
            &self.meta.denoiser,
            &DenoiserBuild {
                config: &config,
                params: Some(&self.params),
                normalizer: &self.meta.normalizer,
                model,
            },
        )
    }

    /// Refuses inputs stamped with a different normalization.
    pub fn check_normalization(&self, found: Option<&str>) -> Result<()> {
        match found {
            Some(id) if id != self.meta.normalization_id => Err(CoreError::NormalizationMismatch {
                expected: self.meta.normalization_id.clone(),
                found: id.to_string(),
            }),
            _ => Ok(()),
        }
    }

    pub fn refiner<'a>(&self, denoiser: &'a dyn Denoiser) -> Result<Refiner<'a>> {
        Ok(Refiner {
            denoiser,
            schedule: self.schedule()?,
            normalizer: self.meta.normalizer.clone(),
            window: self.meta.train.frames,
            one_shot: !self.meta.train.ablation.probabilistic,
        })
    }
}
