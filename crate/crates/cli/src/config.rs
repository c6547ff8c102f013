//! Run configurations: flags first, then a JSON file on top.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use snlmm::data::ColumnMap;
use snlmm::scores::Allocation;
use snlmm::StatKind;

use crate::args::{DataArgs, PowerArgs, TestArgs};
use crate::CliError;

/// Everything `fit`, `test` and `trace` need.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: PathBuf,
    pub cluster: String,
    pub response: String,
    pub fixed: Vec<String>,
    #[serde(default)]
    pub random: Vec<String>,
    #[serde(default)]
    pub aux: Option<String>,
    /// Empty means every parameter.
    #[serde(default)]
    pub params: Vec<String>,
    #[serde(default = "default_stats")]
    pub stats: Vec<StatKind>,
    #[serde(default)]
    pub joint: bool,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_null_replications")]
    pub null_replications: usize,
    #[serde(default = "default_null_grid")]
    pub null_grid: usize,
    #[serde(default)]
    pub null_cache: Option<PathBuf>,
    #[serde(default)]
    pub allocation: Allocation,
}

fn default_stats() -> Vec<StatKind> {
    vec![StatKind::Sn]
}

fn default_alpha() -> f64 {
    0.05
}

fn default_seed() -> u64 {
    snlmm::critvals::DEFAULT_SEED
}

fn default_null_replications() -> usize {
    snlmm::critvals::DEFAULT_REPLICATIONS
}

fn default_null_grid() -> usize {
    snlmm::critvals::DEFAULT_GRID
}

impl RunConfig {
    pub fn columns(&self) -> ColumnMap {
        ColumnMap {
            cluster: self.cluster.clone(),
            response: self.response.clone(),
            fixed: self.fixed.clone(),
            random: self.random.clone(),
            aux: self.aux.clone(),
        }
    }

    pub fn from_fit_args(args: &DataArgs) -> Result<Self, CliError> {
        resolve(data_flags(args), args.config.as_deref())
    }

    pub fn from_test_args(args: &TestArgs) -> Result<Self, CliError> {
        let mut flags = data_flags(&args.data);
        set(&mut flags, "aux", &args.aux);
        set(&mut flags, "params", &args.params);
        set(&mut flags, "stats", &args.stats);
        set(&mut flags, "alpha", &args.alpha);
        set(&mut flags, "seed", &args.seed);
        set(&mut flags, "null_replications", &args.null_replications);
        set(&mut flags, "null_grid", &args.null_grid);
        set(&mut flags, "null_cache", &args.null_cache);
        set(&mut flags, "allocation", &args.allocation.map(Allocation::from));
        if args.joint {
            flags.insert("joint".into(), Value::Bool(true));
        }
        let cfg: Self = resolve(flags, args.data.config.as_deref())?;
        if cfg.aux.is_none() {
            return Err(CliError::Usage("tests need an auxiliary column (--aux)".into()));
        }
        Ok(cfg)
    }
}

/// Study configuration for `power`: defaults, then flags, then the file.
pub fn study_config(args: &PowerArgs) -> Result<snlmm::sim::StudyConfig, CliError> {
    let mut base = serde_json::to_value(snlmm::sim::StudyConfig::default()).expect("config serializes");
    let obj = base.as_object_mut().expect("object");
    set(obj, "replications", &args.replications);
    set(obj, "seed", &args.seed);
    set(obj, "statistics", &args.stats);
    let opts = obj.get_mut("options").and_then(Value::as_object_mut).expect("options object");
    set(opts, "alpha", &args.alpha);
    set(opts, "allocation", &args.allocation.map(Allocation::from));
    if let Some(path) = &args.config {
        merge(&mut base, read_json(path)?);
    }
    let cfg: snlmm::sim::StudyConfig = serde_json::from_value(base).map_err(|e| CliError::Usage(e.to_string()))?;
    cfg.check()?;
    Ok(cfg)
}

fn data_flags(args: &DataArgs) -> Map<String, Value> {
    let mut m = Map::new();
    set(&mut m, "data", &args.data);
    set(&mut m, "cluster", &args.cluster);
    set(&mut m, "response", &args.response);
    set(&mut m, "fixed", &args.fixed);
    set(&mut m, "random", &args.random);
    m
}

fn set<T: Serialize>(m: &mut Map<String, Value>, key: &str, value: &Option<T>) {
    if let Some(v) = value {
        m.insert(key.into(), serde_json::to_value(v).expect("flag serializes"));
    }
}

fn resolve<T: DeserializeOwned>(flags: Map<String, Value>, file: Option<&Path>) -> Result<T, CliError> {
    let mut value = Value::Object(flags);
    if let Some(path) = file {
        merge(&mut value, read_json(path)?);
    }
    serde_json::from_value(value).map_err(|e| CliError::Usage(format!("configuration: {e}")))
}

fn read_json(path: &Path) -> Result<Value, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let value: Value =
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    if !value.is_object() {
        return Err(CliError::Usage(format!("{}: expected a JSON object", path.display())));
    }
    Ok(value)
}

/// Recursive object merge; `top` wins.
pub fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, top) => *slot = top,
    }
}
