//! TOML training configuration layered over a named preset.
//!
//! ```toml
//! preset = "desk"          # or "paper"; default desk
//! epochs = 10
//! [ablation]
//! use_kin = false
//! [denoiser]
//! width = 32
//! ```
//!
//! Tables merge key by key into the preset; any other value replaces the
//! preset's. Keys the preset does not have are rejected.

use toml::{Table, Value};

use crate::error::{CoreError, Result};
use crate::trainer::TrainConfig;

fn merge(base: &mut Table, over: Table, path: &str) -> Result<()> {
    for (key, value) in over {
        let here = if path.is_empty() { key.clone() } else { format!("{path}.{key}") };
        match (base.get_mut(&key), value) {
            (None, _) => return Err(CoreError::config(format!("unknown config key `{here}`"))),
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o, &here)?,
            (Some(slot), v) => *slot = v,
        }
    }
    Ok(())
}

pub fn parse_train_config(text: &str) -> Result<TrainConfig> {
    let mut user: Table = toml::from_str(text).map_err(|e| CoreError::config(e.to_string()))?;
    let preset = match user.remove("preset") {
        None => "desk".to_string(),
        Some(Value::String(s)) => s,
        Some(other) => return Err(CoreError::config(format!("preset must be a string, got {other}"))),
    };
    let base = TrainConfig::preset(&preset)?;
    let mut merged = Table::try_from(&base).map_err(|e| CoreError::config(e.to_string()))?;
    merge(&mut merged, user, "")?;
    let cfg: TrainConfig = Value::Table(merged).try_into().map_err(|e: toml::de::Error| CoreError::config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// The full configuration as TOML, for `--print-config` style inspection.
pub fn to_toml(cfg: &TrainConfig) -> Result<String> {
    toml::to_string(cfg).map_err(|e| CoreError::config(e.to_string()))
}
