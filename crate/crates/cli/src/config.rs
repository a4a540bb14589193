//! Run configuration: built-in defaults, overlaid by an optional TOML file,
//! overlaid by `--set dotted.key=value` overrides.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use orthoct_core::pipeline::{ModelConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

/// Phantom generation and splitting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub count: usize,
    pub seed: u64,
    pub train_fraction: f64,
    /// 0 gives every phantom the nominal anatomy
    pub jitter: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            count: 10,
            seed: 0,
            train_fraction: 0.8,
            jitter: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub stage1: TrainConfig,
    pub stage2: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: DataConfig::default(),
            model: ModelConfig::desk(),
            stage1: TrainConfig::desk_stage1(),
            stage2: TrainConfig::desk_stage2(),
        }
    }
}

/// Problems with the configuration text itself; reported like argument
/// errors.
#[derive(Debug)]
pub struct ConfigParseError(pub anyhow::Error);

impl std::fmt::Display for ConfigParseError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.0)
    }
}

impl std::error::Error for ConfigParseError {}

fn overlay(base: &mut Table, top: Table, path: &str) -> Result<()> {
    for (k, v) in top {
        let key = if path.is_empty() {
            k.clone()
        } else {
            format!("{path}.{k}")
        };
        match (base.get_mut(&k), v) {
            (None, _) => bail!("unknown configuration key `{key}`"),
            (Some(Value::Table(b)), Value::Table(t)) => overlay(b, t, &key)?,
            (Some(Value::Table(_)), _) => bail!("`{key}` is a section, not a value"),
            (Some(slot), v) => *slot = coerce(slot, v),
        }
    }
    Ok(())
}

/// Lets an integer stand in for a float default, as in `lr_min = 0`.
fn coerce(slot: &Value, v: Value) -> Value {
    match (slot, v) {
        (Value::Float(_), Value::Integer(i)) => Value::Float(i as f64),
        (Value::Array(a), Value::Array(b)) if a.first().is_some_and(Value::is_float) => {
            Value::Array(b.into_iter().map(|x| coerce(&a[0], x)).collect())
        }
        (_, v) => v,
    }
}

/// Parses the right-hand side of `--set`: any TOML value, or a bare string.
fn parse_value(raw: &str) -> Value {
    let doc = format!("v = {raw}");
    match doc.parse::<Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => Value::String(raw.to_owned()),
    }
}

fn set_dotted(base: &mut Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| anyhow!("override {assignment:?} is not key=value"))?;
    let key = key.trim();
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty());
    let last = last.ok_or_else(|| anyhow!("empty key in override {assignment:?}"))?;
    let mut table = &mut *base;
    for p in parts {
        table = match table.get_mut(p) {
            Some(Value::Table(t)) => t,
            _ => bail!("unknown configuration key `{key}`"),
        };
    }
    match table.get_mut(last) {
        None => bail!("unknown configuration key `{key}`"),
        Some(Value::Table(_)) => bail!("`{key}` is a section, not a value"),
        Some(slot) => *slot = coerce(slot, parse_value(raw.trim())),
    }
    Ok(())
}

impl RunConfig {
    /// Defaults, then `file`, then each override in order.
    pub fn resolve(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let parse = |e: anyhow::Error| anyhow::Error::new(ConfigParseError(e));
        let mut table = Table::try_from(RunConfig::default()).context("serializing defaults")?;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            let top: Table = text
                .parse()
                .map_err(|e| parse(anyhow!("{}: {e}", path.display())))?;
            overlay(&mut table, top, "").map_err(parse)?;
        }
        for o in overrides {
            set_dotted(&mut table, o).map_err(parse)?;
        }
        let cfg: RunConfig = Value::Table(table)
            .try_into()
            .map_err(|e| parse(anyhow!("invalid configuration: {e}")))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.stage1.validate()?;
        self.stage2.validate()?;
        if self.stage1.stage != 1 || self.stage2.stage != 2 {
            bail!("stage1.stage must be 1 and stage2.stage must be 2");
        }
        if !(self.data.train_fraction > 0.0 && self.data.train_fraction < 1.0) {
            bail!("data.train_fraction must lie in (0, 1)");
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn train(&self, stage: u8) -> &TrainConfig {
        if stage == 1 {
            &self.stage1
        } else {
            &self.stage2
        }
    }

    pub fn train_mut(&mut self, stage: u8) -> &mut TrainConfig {
        if stage == 1 {
            &mut self.stage1
        } else {
            &mut self.stage2
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::resolve(None, &[]).unwrap();
        assert_eq!(cfg, RunConfig::default());
        let text = cfg.to_toml().unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn dotted_overrides() {
        let sets = [
            "stage1.epochs=3".to_string(),
            "stage2.loss_weights.w_contrast = 0".to_string(),
            "model.coarse.upsample_mode=linear_interp".to_string(),
            "model.dims=[16, 16, 16]".to_string(),
        ];
        let cfg = RunConfig::resolve(None, &sets).unwrap();
        assert_eq!(cfg.stage1.epochs, 3);
        assert_eq!(cfg.stage2.loss_weights.w_contrast, 0.0);
        assert_eq!(cfg.model.dims, [16, 16, 16]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for bad in ["stage1.epoch=3", "nope=1", "stage1=2", "stage1.epochs"] {
            let e = RunConfig::resolve(None, &[bad.to_string()]).unwrap_err();
            assert!(e.downcast_ref::<ConfigParseError>().is_some(), "{bad}");
        }
        let e = RunConfig::resolve(None, &["stage1.epochs=\"many\"".to_string()]).unwrap_err();
        assert!(e.downcast_ref::<ConfigParseError>().is_some());
    }
}
