//! Experiment configs. Each command reads one JSON document; `--set key=value`
//! replaces a top-level scalar before the document is parsed.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::abm::SimulationSpec;
use crate::density::{IterateOptions, LogGrid, Normalization, Scheme, DEFAULT_TAIL_WINDOW};
use crate::error::{Error, Result};
use crate::model::ModelParams;

/// A parameter axis: one value, an explicit list, or `num` evenly spaced
/// values from `start` to `stop` inclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Axis {
    Value(f64),
    List(Vec<f64>),
    Range(Range),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Range {
    pub start: f64,
    pub stop: f64,
    pub num: usize,
}

impl Axis {
    pub fn values(&self) -> Result<Vec<f64>> {
        let v = match self {
            Axis::Value(x) => vec![*x],
            Axis::List(xs) => xs.clone(),
            Axis::Range(Range { start, stop, num }) => match num {
                0 => Vec::new(),
                1 => vec![*start],
                n => {
                    let step = (stop - start) / (n - 1) as f64;
                    (0..*n)
                        .map(|i| {
                            if i == n - 1 {
                                *stop
                            } else {
                                start + i as f64 * step
                            }
                        })
                        .collect()
                }
            },
        };
        if v.is_empty() {
            return Err(Error::Config("empty parameter axis".into()));
        }
        if let Some(x) = v.iter().find(|x| !x.is_finite()) {
            return Err(Error::Config(format!("non-finite axis value {x}")));
        }
        Ok(v)
    }
}

/// `kappa` either directly or as an offset above `kappa_min(p, gamma)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KappaAxis {
    Offset { offset_from_min: Axis },
    Absolute(Axis),
}

impl Default for KappaAxis {
    fn default() -> Self {
        KappaAxis::Absolute(Axis::Value(1.0))
    }
}

fn default_tol() -> f64 {
    1e-12
}

fn default_kappa() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KellyConfig {
    pub p: f64,
    #[serde(default = "default_gammas")]
    pub gammas: Axis,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

fn default_gammas() -> Axis {
    Axis::Range(Range {
        start: 0.0,
        stop: 0.99,
        num: 100,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExponentConfig {
    pub p: Axis,
    pub gamma: Axis,
    #[serde(default)]
    pub kappa: KappaAxis,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialDensity {
    /// `exp(-x / scale)` for `x <= cutoff`, zero above.
    TruncatedExponential {
        #[serde(default = "default_cutoff")]
        cutoff: f64,
        #[serde(default = "default_scale")]
        scale: f64,
    },
    /// A `log_x,value` CSV; its grid replaces `grid`.
    File { path: PathBuf },
}

fn default_cutoff() -> f64 {
    10.0
}

fn default_scale() -> f64 {
    1.0
}

impl Default for InitialDensity {
    fn default() -> Self {
        InitialDensity::TruncatedExponential {
            cutoff: default_cutoff(),
            scale: default_scale(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolveConfig {
    pub p: f64,
    pub gamma: f64,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    pub steps: usize,
    #[serde(default)]
    pub grid: LogGrid,
    #[serde(default)]
    pub initial: InitialDensity,
    /// Steps at which the density is written out.
    #[serde(default)]
    pub checkpoints: Vec<usize>,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default = "default_normalization")]
    pub normalization: Normalization,
    #[serde(default = "default_window")]
    pub tail_window: [f64; 2],
    #[serde(default = "default_tol")]
    pub tol: f64,
}

fn default_normalization() -> Normalization {
    Normalization::Reinject
}

fn default_window() -> [f64; 2] {
    [DEFAULT_TAIL_WINDOW.0, DEFAULT_TAIL_WINDOW.1]
}

impl EvolveConfig {
    pub fn params(&self) -> Result<ModelParams> {
        ModelParams::new(self.p, self.gamma, self.kappa)
    }

    pub fn options(&self) -> IterateOptions {
        IterateOptions {
            scheme: self.scheme,
            normalization: self.normalization,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub p: f64,
    pub gamma: f64,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    pub n_agents: usize,
    pub n_rounds: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_ruin_floor")]
    pub ruin_floor: f64,
    #[serde(default = "default_initial_wealth")]
    pub initial_wealth: f64,
    #[serde(default)]
    pub snapshot_rounds: Vec<u64>,
    #[serde(default)]
    pub rebirth: bool,
    #[serde(default = "default_memory_budget")]
    pub memory_budget_bytes: u64,
    #[serde(default = "default_quantiles")]
    pub elite_quantiles: Vec<f64>,
    /// When set, a power-law fit of the final cross-section is reported.
    #[serde(default)]
    pub tail_window: Option<[f64; 2]>,
}

fn default_ruin_floor() -> f64 {
    1e-3
}

fn default_initial_wealth() -> f64 {
    1.0
}

fn default_memory_budget() -> u64 {
    1 << 30
}

fn default_quantiles() -> Vec<f64> {
    vec![0.01]
}

impl SimulateConfig {
    pub fn spec(&self) -> Result<SimulationSpec> {
        let spec = SimulationSpec {
            params: ModelParams::new(self.p, self.gamma, self.kappa)?,
            n_agents: self.n_agents,
            n_rounds: self.n_rounds,
            seed: self.seed,
            ruin_floor: self.ruin_floor,
            initial_wealth: self.initial_wealth,
            snapshot_rounds: self.snapshot_rounds.clone(),
            rebirth: self.rebirth,
            memory_budget_bytes: self.memory_budget_bytes,
        };
        spec.check()?;
        Ok(spec)
    }
}

/// Parses `key=value`; the value is read as JSON when possible, else as a
/// string.
pub fn parse_override(s: &str) -> Result<(String, Value)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{s}` is not of the form key=value")))?;
    let key = k.trim();
    if key.is_empty() {
        return Err(Error::Config(format!("override `{s}` has an empty key")));
    }
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((key.to_string(), value))
}

/// Applies overrides to a parsed document and deserializes it.
pub fn from_value<T: DeserializeOwned>(mut doc: Value, overrides: &[(String, Value)]) -> Result<T> {
    let obj = doc
        .as_object_mut()
        .ok_or_else(|| Error::Config("config must be a JSON object".into()))?;
    for (k, v) in overrides {
        if let Some(old) = obj.get(k) {
            if old.is_object() || old.is_array() {
                return Err(Error::Config(format!(
                    "`{k}` is not a scalar and cannot be overridden"
                )));
            }
        }
        obj.insert(k.clone(), v.clone());
    }
    serde_json::from_value(doc).map_err(|e| Error::Config(e.to_string()))
}

pub fn load<T: DeserializeOwned>(path: &Path, overrides: &[(String, Value)]) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: Value = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    from_value(doc, overrides).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn axes() {
        let r: Axis = serde_json::from_value(json!({"start": 0.0, "stop": 1.0, "num": 5})).unwrap();
        assert_eq!(r.values().unwrap(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        let v: Axis = serde_json::from_value(json!(0.3)).unwrap();
        assert_eq!(v.values().unwrap(), vec![0.3]);
        let l: Axis = serde_json::from_value(json!([0.1, 0.2])).unwrap();
        assert_eq!(l.values().unwrap(), vec![0.1, 0.2]);
        let empty: Axis = serde_json::from_value(json!([])).unwrap();
        assert!(empty.values().is_err());
    }

    #[test]
    fn kappa_axis_forms() {
        let k: KappaAxis = serde_json::from_value(json!({"offset_from_min": [0.0, 0.1]})).unwrap();
        assert!(matches!(k, KappaAxis::Offset { .. }));
        let k: KappaAxis =
            serde_json::from_value(json!({"start": 1.0, "stop": 2.0, "num": 3})).unwrap();
        assert!(matches!(k, KappaAxis::Absolute(Axis::Range(_))));
    }

    #[test]
    fn overrides_replace_scalars_only() {
        let doc =
            json!({"p": 0.6, "gamma": 0.2, "n_agents": 10, "n_rounds": 5, "snapshot_rounds": [1]});
        let cfg: SimulateConfig = from_value(
            doc.clone(),
            &[
                parse_override("seed=7").unwrap(),
                parse_override("gamma=0.3").unwrap(),
            ],
        )
        .unwrap();
        assert_eq!((cfg.seed, cfg.gamma), (7, 0.3));
        assert_eq!(cfg.elite_quantiles, vec![0.01]);
        let err =
            from_value::<SimulateConfig>(doc, &[parse_override("snapshot_rounds=3").unwrap()]);
        assert!(matches!(err, Err(Error::Config(_))));
        assert!(parse_override("novalue").is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = from_value::<KellyConfig>(json!({"p": 0.6, "gama": 0.1}), &[]);
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn evolve_defaults() {
        let cfg: EvolveConfig = from_value(
            json!({"p": 0.6, "gamma": 0.3, "kappa": 1.1, "steps": 3}),
            &[],
        )
        .unwrap();
        assert_eq!(cfg.grid, LogGrid::default());
        assert_eq!(cfg.normalization, Normalization::Reinject);
        assert_eq!(cfg.initial, InitialDensity::default());
        let back: EvolveConfig =
            serde_json::from_value(serde_json::to_value(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }
}
