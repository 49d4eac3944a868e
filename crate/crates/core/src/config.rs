//! Experiment files: versioned JSON holding a training setup, an optional
//! reference-solver setup and an optional sweep matrix.
//!
//! Training keys live at the top level next to `schema_version`, e.g.
//! `{"schema_version": 1, "case": "vacuum", "epochs": 10, "model": {...}}`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::ansatz::{AnsatzKind, ScaleKind};
use crate::error::{Error, Result};
use crate::network::Variant;
use crate::physics::Case;
use crate::reference::FdtdConfig;
use crate::trainer::{RunSummary, TrainConfig};

pub const SCHEMA_VERSION: u64 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub ansatze: Vec<AnsatzKind>,
    pub scales: Vec<ScaleKind>,
    pub energy: Vec<bool>,
    pub seeds: Vec<u64>,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self { ansatze: Vec::new(), scales: Vec::new(), energy: vec![true], seeds: vec![0] }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepCell {
    /// Directory-safe label, e.g. `strongly-acos-energy_on-seed3`.
    pub name: String,
    /// Label of the cell without the seed.
    pub group: String,
    pub config: TrainConfig,
}

impl SweepSpec {
    /// Cartesian product over ansatz x scale x energy flag x seed.
    pub fn cells(&self, base: &TrainConfig) -> Result<Vec<SweepCell>> {
        if self.ansatze.is_empty() || self.scales.is_empty() || self.energy.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("sweep lists must all be non-empty".into()));
        }
        let mut out = Vec::new();
        for &a in &self.ansatze {
            for &s in &self.scales {
                for &e in &self.energy {
                    let group = format!("{a}-{s}-energy_{}", if e { "on" } else { "off" });
                    for &seed in &self.seeds {
                        let mut config = base.clone();
                        config.model.variant = Variant::Hybrid;
                        config.model.ansatz = Some(a);
                        config.model.scale = Some(s);
                        config.energy_loss_enabled = e;
                        config.seed = seed;
                        out.push(SweepCell { name: format!("{group}-seed{seed}"), group: group.clone(), config });
                    }
                }
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentFile {
    pub schema_version: u64,
    pub train: TrainConfig,
    pub reference: Option<FdtdConfig>,
    pub sweep: Option<SweepSpec>,
}

impl ExperimentFile {
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut value: Value = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        Self::from_value(value)
    }

    pub fn from_value(value: Value) -> Result<Self> {
        let Value::Object(mut map) = value else {
            return Err(Error::Config("experiment file must be a JSON object".into()));
        };
        let version = map
            .remove("schema_version")
            .ok_or_else(|| Error::Config("missing schema_version".into()))?
            .as_u64()
            .ok_or_else(|| Error::Config("schema_version must be an integer".into()))?;
        if version != SCHEMA_VERSION {
            return Err(Error::Config(format!("unsupported schema_version {version} (expected {SCHEMA_VERSION})")));
        }
        let field = |map: &mut Map<String, Value>, key: &str| map.remove(key).filter(|v| !v.is_null());
        let reference = field(&mut map, "reference");
        let sweep = field(&mut map, "sweep").map(|v| parse(v, "sweep")).transpose()?;
        let train: TrainConfig = parse(Value::Object(map), "training settings")?;
        train.validate()?;
        let reference = match reference {
            // keys not given fall back to the training-derived setup
            Some(Value::Object(given)) => {
                let case = given.get("case").map(|c| parse::<Case>(c.clone(), "reference.case")).transpose()?;
                let base = match case {
                    Some(c) if c != train.case => FdtdConfig::new(c),
                    _ => derived_reference(&train),
                };
                let Value::Object(mut merged) = serde_json::to_value(&base)? else { unreachable!("struct") };
                merged.extend(given);
                Some(parse(Value::Object(merged), "reference")?)
            }
            Some(other) => Some(parse(other, "reference")?),
            None => None,
        };
        Ok(Self { schema_version: version, train, reference, sweep })
    }

    pub fn to_value(&self) -> Result<Value> {
        let Value::Object(mut map) = serde_json::to_value(&self.train)? else { unreachable!("struct") };
        map.insert("schema_version".into(), self.schema_version.into());
        if let Some(r) = &self.reference {
            map.insert("reference".into(), serde_json::to_value(r)?);
        }
        if let Some(s) = &self.sweep {
            map.insert("sweep".into(), serde_json::to_value(s)?);
        }
        Ok(Value::Object(map))
    }

    /// Reference-solver setup, defaulting to the training case and horizon.
    pub fn reference_config(&self) -> FdtdConfig {
        self.reference.clone().unwrap_or_else(|| derived_reference(&self.train))
    }
}

fn derived_reference(train: &TrainConfig) -> FdtdConfig {
    FdtdConfig { t_end: train.t_end(), eps_r: train.eps_r, slab_x0: train.slab_x0, ..FdtdConfig::new(train.case) }
}

fn parse<T: serde::de::DeserializeOwned>(v: Value, what: &str) -> Result<T> {
    serde_json::from_value(v).map_err(|e| Error::Config(format!("{what}: {e}")))
}

/// Apply `a.b.c=value`; the value is parsed as JSON, else taken as a string.
/// Keys under `reference.` and `sweep.` address those sections.
pub fn apply_override(root: &mut Value, spec: &str) -> Result<()> {
    let (path, raw) = spec.split_once('=').ok_or_else(|| Error::Config(format!("override '{spec}' is not key=value")))?;
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!("override key '{path}' is malformed")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    for (i, k) in keys.iter().enumerate() {
        let Value::Object(map) = node else {
            return Err(Error::Config(format!("override '{path}': '{}' is not an object", keys[..i].join("."))));
        };
        if i + 1 == keys.len() {
            map.insert(k.to_string(), value);
            return Ok(());
        }
        let entry = map.entry(k.to_string()).or_insert_with(|| Value::Object(Map::new()));
        if entry.is_null() {
            *entry = Value::Object(Map::new());
        }
        node = entry;
    }
    unreachable!("non-empty key path")
}

/// Mean/std over seeds of one sweep group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub group: String,
    pub ansatz: Option<String>,
    pub scale: Option<String>,
    pub energy_loss_enabled: bool,
    pub runs: usize,
    pub failed: usize,
    pub l2_mean: Option<f64>,
    pub l2_std: Option<f64>,
    pub i_bh_mean: Option<f64>,
    pub collapse_fraction: f64,
    /// Every run collapsed or failed; the tables mark such cells with an X.
    pub none_converged: bool,
}

/// Sample mean and population standard deviation.
pub fn mean_std(v: &[f64]) -> Option<(f64, f64)> {
    if v.is_empty() {
        return None;
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    Some((m, (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt()))
}

/// Group results by cell label; `None` entries are failed runs.
pub fn aggregate(results: &[(String, Option<RunSummary>)]) -> Vec<AggregateRow> {
    let mut groups: Vec<String> = Vec::new();
    for (g, _) in results {
        if !groups.contains(g) {
            groups.push(g.clone());
        }
    }
    groups
        .into_iter()
        .map(|g| {
            let members: Vec<&Option<RunSummary>> = results.iter().filter(|(k, _)| *k == g).map(|(_, s)| s).collect();
            let ok: Vec<&RunSummary> = members.iter().filter_map(|s| s.as_ref()).collect();
            let l2: Vec<f64> = ok.iter().filter_map(|s| s.final_l2).collect();
            let ibh: Vec<f64> = ok.iter().filter_map(|s| s.final_i_bh).collect();
            let collapsed = ok.iter().filter(|s| s.collapsed).count();
            let failed = members.len() - ok.len();
            let first = ok.first();
            AggregateRow {
                group: g,
                ansatz: first.and_then(|s| s.ansatz.clone()),
                scale: first.and_then(|s| s.scale.clone()),
                energy_loss_enabled: first.is_some_and(|s| s.energy_loss_enabled),
                runs: members.len(),
                failed,
                l2_mean: mean_std(&l2).map(|m| m.0),
                l2_std: mean_std(&l2).map(|m| m.1),
                i_bh_mean: mean_std(&ibh).map(|m| m.0),
                collapse_fraction: collapsed as f64 / members.len().max(1) as f64,
                none_converged: collapsed + failed == members.len(),
            }
        })
        .collect()
}
