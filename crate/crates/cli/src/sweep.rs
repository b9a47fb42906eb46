//! Parameter sweeps over a JSON configuration.

use crate::error::{CliError, CliResult};
use hetcache::Config;
use serde::Deserialize;
use serde_json::{Map, Value};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub parameter: String,
    pub values: Vec<Value>,
    #[serde(default)]
    pub outputs: Vec<String>,
}

/// Fields that may be swept, with the keys that must be dropped when they are
/// set because they describe the same quantity.
const PATHS: &[(&str, &[&str])] = &[
    ("phy.lambda1", &[]),
    ("phy.lambda2", &[]),
    ("phy.lambda_u", &[]),
    ("phy.P1", &["P1_over_P2"]),
    ("phy.P2", &[]),
    ("phy.P1_over_P2", &["P1"]),
    ("phy.N0", &["P_over_N0"]),
    ("phy.P_over_N0", &["N0"]),
    ("phy.alpha1", &[]),
    ("phy.alpha2", &[]),
    ("phy.W_hz", &[]),
    ("phy.tau", &[]),
    ("content.N", &[]),
    ("content.gamma", &["a"]),
    ("content.K1c", &[]),
    ("content.K2c", &[]),
    ("content.K1b", &[]),
];

/// Shorthands taking a bare number in dB.
const DB_PATHS: &[(&str, &str)] = &[
    ("phy.P_over_N0_dB", "phy.P_over_N0"),
    ("phy.P1_over_P2_dB", "phy.P1_over_P2"),
];

impl SweepSpec {
    pub fn from_json(text: &str) -> CliResult<Self> {
        let spec: Self = serde_json::from_str(text).map_err(|e| CliError::invalid(format!("sweep file: {e}")))?;
        spec.check()?;
        Ok(spec)
    }

    fn check(&self) -> CliResult<()> {
        resolve(&self.parameter)?;
        if self.values.is_empty() {
            return Err(CliError::invalid(format!("sweep over '{}' has no values", self.parameter)));
        }
        for v in &self.values {
            if !v.is_number() && !v.is_string() {
                return Err(CliError::invalid(format!(
                    "sweep over '{}': value {v} is neither a number nor a quantity string",
                    self.parameter
                )));
            }
        }
        Ok(())
    }
}

struct Target {
    section: &'static str,
    field: &'static str,
    drops: &'static [&'static str],
    db: bool,
}

fn resolve(path: &str) -> CliResult<Target> {
    let (full, db) = match DB_PATHS.iter().find(|(alias, _)| *alias == path) {
        Some((_, real)) => (*real, true),
        None => (path, false),
    };
    let (name, drops) = PATHS
        .iter()
        .find(|(p, _)| *p == full)
        .ok_or_else(|| CliError::invalid(format!("unknown sweep parameter path '{path}'")))?;
    let (section, field) = name.split_once('.').expect("paths are qualified");
    Ok(Target {
        section,
        field,
        drops,
        db,
    })
}

/// One point of a sweep: the label written to the output and the config it
/// produces.
#[derive(Debug, Clone)]
pub struct Point {
    pub parameter: String,
    pub value: String,
    pub config: Config,
}

/// Expands the base configuration into one config per sweep value, in input
/// order. Without a sweep there is a single point.
pub fn expand(base: &Value, sweep: Option<&SweepSpec>) -> CliResult<Vec<Point>> {
    let Some(sweep) = sweep else {
        return Ok(vec![Point {
            parameter: String::new(),
            value: String::new(),
            config: parse_config(base.clone())?,
        }]);
    };
    let target = resolve(&sweep.parameter)?;
    sweep
        .values
        .iter()
        .map(|v| {
            let mut doc = base.clone();
            set(&mut doc, &target, v, &sweep.parameter)?;
            let config = parse_config(doc).map_err(|e| {
                CliError::invalid(format!("{} = {}: {e}", sweep.parameter, label(v)))
            })?;
            Ok(Point {
                parameter: sweep.parameter.clone(),
                value: label(v),
                config,
            })
        })
        .collect()
}

fn label(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn set(doc: &mut Value, t: &Target, v: &Value, path: &str) -> CliResult<()> {
    let section = doc
        .get_mut(t.section)
        .and_then(Value::as_object_mut)
        .ok_or_else(|| CliError::invalid(format!("config has no '{}' object for sweep path '{path}'", t.section)))?;
    let value = if t.db {
        let x = v
            .as_f64()
            .ok_or_else(|| CliError::invalid(format!("sweep path '{path}' takes numbers in dB, got {v}")))?;
        Value::String(format!("{x} dB"))
    } else {
        v.clone()
    };
    drop_keys(section, t.drops);
    section.insert(t.field.to_string(), value);
    Ok(())
}

fn drop_keys(section: &mut Map<String, Value>, keys: &[&str]) {
    for k in keys {
        section.remove(*k);
    }
}

pub fn parse_config(doc: Value) -> CliResult<Config> {
    let cfg: Config = serde_json::from_value(doc).map_err(|e| CliError::invalid(format!("config: {e}")))?;
    Ok(cfg)
}
