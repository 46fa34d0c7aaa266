//! Layered configuration: profile defaults, then the JSON config file, then
//! `--set` overrides, then `MDBC_SEED`.

use std::path::Path;

use mdbc::pipeline::{Profile, RunConfig};
use serde_json::Value;

/// Alternative spellings accepted for config keys.
const ALIASES: &[(&str, &str)] = &[("resample.T", "resample.chains"), ("resample.N", "resample.horizon")];

fn canonical(path: &str) -> &str {
    ALIASES
        .iter()
        .find(|(alias, _)| *alias == path)
        .map_or(path, |(_, key)| key)
}

fn join(prefix: &str, key: &str) -> String {
    if prefix.is_empty() {
        key.to_string()
    } else {
        format!("{prefix}.{key}")
    }
}

/// Merges `user` into `base`, refusing keys `base` does not have.
fn merge(base: &mut Value, user: Value, prefix: &str) -> Result<(), String> {
    match (base, user) {
        (Value::Object(b), Value::Object(u)) => {
            for (k, v) in u {
                let full = join(prefix, &k);
                let full = canonical(&full);
                let key = full.rsplit('.').next().unwrap_or(full);
                let slot = b.get_mut(key).ok_or_else(|| format!("unknown config key `{full}`"))?;
                merge(slot, v, full)?;
            }
            Ok(())
        }
        (b, u) => {
            *b = u;
            Ok(())
        }
    }
}

/// Applies one `section.key=value` override. The value is read as JSON when
/// it parses, otherwise as a string.
pub fn apply_set(tree: &mut Value, assignment: &str) -> Result<(), String> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| format!("override `{assignment}` is not of the form section.key=value"))?;
    let key = canonical(key.trim());
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut slot = &mut *tree;
    for part in key.split('.') {
        slot = slot
            .as_object_mut()
            .and_then(|o| o.get_mut(part))
            .ok_or_else(|| format!("unknown config key `{key}`"))?;
    }
    *slot = value;
    Ok(())
}

pub fn resolve(profile: Profile, file: Option<&Path>, sets: &[String], env_seed: Option<&str>) -> Result<RunConfig, String> {
    let mut tree = serde_json::to_value(profile.config()).map_err(|e| e.to_string())?;
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        let user: Value = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        merge(&mut tree, user, "")?;
    }
    for s in sets {
        apply_set(&mut tree, s)?;
    }
    let mut cfg: RunConfig = serde_json::from_value(tree).map_err(|e| format!("invalid configuration: {e}"))?;
    if let Some(raw) = env_seed {
        let seed = raw
            .trim()
            .parse()
            .map_err(|_| format!("MDBC_SEED must be an unsigned integer, got `{raw}`"))?;
        cfg.seed = seed;
        cfg.diagnostics.seed = seed;
    }
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}
