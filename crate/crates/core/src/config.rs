//! Run configuration: a JSON object whose absent keys take the default
//! training setup (α = 1, γ = 1, β = 0.3, P = 10, K = 5, T = 2250,
//! lr 0.01 decayed ×0.95 every 50 epochs down to 0.0005).

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::evaluation::EvalProtocol;
use crate::loss::LossConfig;
use crate::sampling::default_triplet_count;
use crate::training::TrainConfig;

pub const KEYS: &[&str] = &[
    "alpha",
    "gamma",
    "beta",
    "P",
    "K",
    "T",
    "lr_init",
    "lr_decay_factor",
    "lr_step_epochs",
    "lr_floor",
    "epochs",
    "layer_dims",
    "seed",
    "data",
    "output_dir",
    "ks",
    "trials",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Holds the loss weights and the top-level seed.
    pub train: TrainConfig<f64>,
    pub protocol: EvalProtocol,
    /// `None` means `[input_dim, 64, 16]` with `input_dim` taken from the data.
    pub layer_dims: Option<Vec<usize>>,
    pub data: Vec<PathBuf>,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig::default(),
            protocol: EvalProtocol::default(),
            layer_dims: None,
            data: Vec::new(),
            output_dir: PathBuf::from("out"),
        }
    }
}

pub const DEFAULT_HIDDEN: usize = 64;
pub const DEFAULT_OUTPUT: usize = 16;

impl RunConfig {
    pub fn seed(&self) -> u64 {
        self.train.seed
    }

    pub fn resolved_layer_dims(&self, input_dim: usize) -> Result<Vec<usize>> {
        match &self.layer_dims {
            None => Ok(vec![input_dim, DEFAULT_HIDDEN, DEFAULT_OUTPUT]),
            Some(d) if d[0] != input_dim => Err(Error::config(
                "layer_dims",
                format!("input size {} does not match data dimension {input_dim}", d[0]),
            )),
            Some(d) => Ok(d.clone()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.protocol.validate()?;
        if let Some(d) = &self.layer_dims {
            if d.len() < 2 || d.contains(&0) {
                return Err(Error::config("layer_dims", format!("need >= 2 positive sizes, got {d:?}")));
            }
        }
        Ok(())
    }

    pub fn from_value(value: &Value) -> Result<Self> {
        let obj = value.as_object().ok_or_else(|| Error::config("<root>", "config must be a JSON object"))?;
        Self::from_map(obj)
    }

    fn from_map(obj: &Map<String, Value>) -> Result<Self> {
        if let Some(k) = obj.keys().find(|k| !KEYS.contains(&k.as_str())) {
            return Err(Error::config(k.clone(), "unknown key"));
        }
        let mut c = RunConfig::default();
        let t = &mut c.train;
        let loss = LossConfig {
            alpha: get(obj, "alpha")?.unwrap_or(t.loss.alpha),
            gamma: get(obj, "gamma")?.unwrap_or(t.loss.gamma),
            beta: get(obj, "beta")?.unwrap_or(t.loss.beta),
        };
        t.loss = loss;
        t.p = get(obj, "P")?.unwrap_or(t.p);
        t.k = get(obj, "K")?.unwrap_or(t.k);
        t.triplets = get(obj, "T")?.unwrap_or_else(|| default_triplet_count(t.p, t.k));
        t.lr_init = get(obj, "lr_init")?.unwrap_or(t.lr_init);
        t.lr_decay_factor = get(obj, "lr_decay_factor")?.unwrap_or(t.lr_decay_factor);
        t.lr_step_epochs = get(obj, "lr_step_epochs")?.unwrap_or(t.lr_step_epochs);
        t.lr_floor = get(obj, "lr_floor")?.unwrap_or(t.lr_floor);
        t.epochs = get(obj, "epochs")?.unwrap_or(t.epochs);
        t.seed = get(obj, "seed")?.unwrap_or(t.seed);
        c.layer_dims = get(obj, "layer_dims")?;
        c.protocol.ks = get(obj, "ks")?.unwrap_or(c.protocol.ks);
        c.protocol.trials = get(obj, "trials")?.unwrap_or(c.protocol.trials);
        c.output_dir = get(obj, "output_dir")?.unwrap_or(c.output_dir);
        c.data = match obj.get("data") {
            None | Some(Value::Null) => Vec::new(),
            Some(Value::String(s)) => vec![PathBuf::from(s)],
            Some(v @ Value::Array(_)) => typed(v, "data")?,
            Some(_) => return Err(Error::config("data", "expected a path or a list of paths")),
        };
        c.validate()?;
        Ok(c)
    }

    /// Canonical JSON with every key spelled out.
    pub fn to_value(&self) -> Value {
        let t = &self.train;
        let mut m = Map::new();
        m.insert("alpha".into(), t.loss.alpha.into());
        m.insert("gamma".into(), t.loss.gamma.into());
        m.insert("beta".into(), t.loss.beta.into());
        m.insert("P".into(), t.p.into());
        m.insert("K".into(), t.k.into());
        m.insert("T".into(), t.triplets.into());
        m.insert("lr_init".into(), t.lr_init.into());
        m.insert("lr_decay_factor".into(), t.lr_decay_factor.into());
        m.insert("lr_step_epochs".into(), t.lr_step_epochs.into());
        m.insert("lr_floor".into(), t.lr_floor.into());
        m.insert("epochs".into(), t.epochs.into());
        m.insert("seed".into(), t.seed.into());
        if let Some(d) = &self.layer_dims {
            m.insert("layer_dims".into(), d.clone().into());
        }
        m.insert("data".into(), self.data.iter().map(|p| Value::from(p.to_string_lossy().into_owned())).collect());
        m.insert("output_dir".into(), self.output_dir.to_string_lossy().into_owned().into());
        m.insert("ks".into(), self.protocol.ks.clone().into());
        m.insert("trials".into(), self.protocol.trials.into());
        Value::Object(m)
    }

    pub fn to_json(&self) -> String {
        self.to_value().to_string()
    }
}

fn typed<V: DeserializeOwned>(v: &Value, key: &str) -> Result<V> {
    V::deserialize(v).map_err(|e| Error::config(key, e.to_string()))
}

fn get<V: DeserializeOwned>(obj: &Map<String, Value>, key: &str) -> Result<Option<V>> {
    match obj.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => typed(v, key).map(Some),
    }
}

/// Reads a config file and applies `key=value` overrides; later overrides
/// win. Values are read as JSON when they parse as JSON, otherwise as
/// strings.
pub fn parse_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let mut obj = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            match serde_json::from_str::<Value>(&text)? {
                Value::Object(m) => m,
                _ => return Err(Error::config("<root>", "config must be a JSON object")),
            }
        }
        None => Map::new(),
    };
    for o in overrides {
        let (k, v) = o.split_once('=').ok_or_else(|| Error::config(o.clone(), "override must be key=value"))?;
        let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
        obj.insert(k.trim().to_string(), value);
    }
    RunConfig::from_map(&obj)
}

pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    RunConfig::from_value(&serde_json::from_str(text)?)
}
