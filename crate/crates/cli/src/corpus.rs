//! Corpus directories: clean motion files, optional noisy observations and a
//! manifest that lists the seed and script behind every sequence.
//!
//! ```text
//! <dir>/manifest.json
//! <dir>/clean/seq_00000.hrm      ground truth with object track, contact, states
//! <dir>/noisy/seq_00000.hrm      perturbed observation (when the spec asks for it)
//! ```

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use handrift_core::datagen::{generate_sequence, perturb, PerturbSpec, ScriptSpec};
use handrift_core::hand::{HandModel, HandModelSpec};
use handrift_core::motion::MIN_FRAMES;
use handrift_core::{CoreError, Result};
use handrift_tensor::RngStream;

use crate::motion_file::{MotionFile, EXTENSION};

pub const MANIFEST: &str = "manifest.json";
pub const CLEAN_DIR: &str = "clean";
pub const NOISY_DIR: &str = "noisy";

/// What `generate` produces, read from TOML or JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSpec {
    pub frames: usize,
    pub frame_rate: f64,
    /// Noise model for the paired observations; none writes clean files only.
    pub perturb: Option<PerturbSpec>,
    pub hand: HandModelSpec,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            frames: 16,
            frame_rate: 30.0,
            perturb: Some(PerturbSpec::default()),
            hand: HandModelSpec::default(),
        }
    }
}

impl CorpusSpec {
    pub fn parse(text: &str, json: bool) -> Result<Self> {
        let spec: CorpusSpec = if json {
            serde_json::from_str(text).map_err(|e| CoreError::Config(format!("corpus spec: {e}")))?
        } else {
            toml::from_str(text).map_err(|e| CoreError::Config(format!("corpus spec: {e}")))?
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CoreError::Config(format!("corpus spec {}: {e}", path.display())))?;
        Self::parse(&text, path.extension().is_some_and(|e| e == "json"))
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames < MIN_FRAMES {
            return Err(CoreError::Config(format!("frames must be at least {MIN_FRAMES}")));
        }
        if !(self.frame_rate > 0.0) {
            return Err(CoreError::Config("frame_rate must be positive".into()));
        }
        if let Some(p) = &self.perturb {
            p.validate()?;
        }
        HandModel::new(self.hand.clone())?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    /// Relative to the corpus directory.
    pub file: String,
    pub observation: Option<String>,
    pub script: ScriptSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub seed: u64,
    pub count: usize,
    pub spec: CorpusSpec,
    pub entries: Vec<ManifestEntry>,
}

/// Ground truth plus optional observation of one corpus sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusItem {
    pub name: String,
    pub clean: MotionFile,
    pub observation: Option<MotionFile>,
}

fn seq_name(i: usize) -> String {
    format!("seq_{i:05}")
}

/// Writes `count` sequences seeded `seed, seed + 1, ...` and the manifest.
pub fn generate(spec: &CorpusSpec, out: &Path, count: usize, seed: u64) -> Result<Manifest> {
    spec.validate()?;
    let model = HandModel::new(spec.hand.clone())?;
    std::fs::create_dir_all(out.join(CLEAN_DIR))?;
    if spec.perturb.is_some() {
        std::fs::create_dir_all(out.join(NOISY_DIR))?;
    }
    let entries = (0..count)
        .into_par_iter()
        .map(|i| {
            let script = ScriptSpec::random(seed.wrapping_add(i as u64), spec.frames)?;
            let sample = generate_sequence(&script, &model)?;
            let name = seq_name(i);
            let clean = MotionFile {
                frame_rate: spec.frame_rate,
                normalization_id: None,
                object_center: Some(sample.object.center.clone()),
                contact: Some(sample.states.contact.clone()),
                states: Some(sample.states.labels.clone()),
                motion: sample.motion,
            };
            let file = format!("{CLEAN_DIR}/{name}.{EXTENSION}");
            clean.save(&out.join(&file))?;
            let observation = match &spec.perturb {
                Some(p) => {
                    let mut rng = RngStream::derive(seed, "observation", &[i as u64]);
                    let noisy = MotionFile {
                        motion: perturb(&clean.motion, p, &mut rng)?,
                        contact: None,
                        states: None,
                        ..clean.clone()
                    };
                    let obs = format!("{NOISY_DIR}/{name}.{EXTENSION}");
                    noisy.save(&out.join(&obs))?;
                    Some(obs)
                }
                None => None,
            };
            Ok(ManifestEntry {
                name,
                file,
                observation,
                script,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        format_version: 1,
        seed,
        count,
        spec: spec.clone(),
        entries,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    std::fs::write(out.join(MANIFEST), text)?;
    Ok(manifest)
}

/// Motion files directly inside `dir`, sorted by name.
pub fn motion_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == EXTENSION))
        .collect();
    out.sort();
    Ok(out)
}

pub fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// The manifest of a generated corpus, if `dir` has one.
pub fn load_manifest(dir: &Path) -> Result<Option<Manifest>> {
    let path = dir.join(MANIFEST);
    if !path.is_file() {
        return Ok(None);
    }
    serde_json::from_str(&std::fs::read_to_string(&path)?)
        .map(Some)
        .map_err(|e| CoreError::Format(format!("{}: {e}", path.display())))
}

/// Reads a corpus through its manifest, or every motion file in `dir` when
/// there is none (those have no observations).
pub fn load(dir: &Path) -> Result<Vec<CorpusItem>> {
    if !dir.is_dir() {
        return Err(CoreError::Input(format!("corpus not found: {}", dir.display())));
    }
    if let Some(m) = load_manifest(dir)? {
        return m
            .entries
            .par_iter()
            .map(|e| {
                Ok(CorpusItem {
                    name: e.name.clone(),
                    clean: MotionFile::load(&dir.join(&e.file))?,
                    observation: e.observation.as_ref().map(|o| MotionFile::load(&dir.join(o))).transpose()?,
                })
            })
            .collect();
    }
    motion_files(dir)?
        .par_iter()
        .map(|p| {
            Ok(CorpusItem {
                name: stem(p),
                clean: MotionFile::load(p)?,
                observation: None,
            })
        })
        .collect()
}
