//! Flat `key = value` run configuration files.
//!
//! One setting per line; `#` starts a comment; blank lines are ignored. Keys
//! not listed in [`KEYS`] are rejected, as are repeated keys. Geometry keys
//! (`frames`, `grid_h`, `grid_w`, `raw_channels`) set both the generator and
//! the model.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Architecture, Pooling};
use crate::simdata::PerturbationKind;

use super::experiment::RunConfig;

/// Every accepted key, in the order [`to_kv`] writes them.
pub const KEYS: &[&str] = &[
    "frames",
    "grid_h",
    "grid_w",
    "raw_channels",
    "frame_jitter",
    "identity_scale",
    "gain_spread",
    "artifact_strength",
    "artifact_block_h",
    "artifact_block_w",
    "clutter_rate",
    "train_size",
    "val_size",
    "test_size",
    "data_seed",
    "channels",
    "gcn_layers",
    "gcn_dim",
    "fc_width",
    "classes",
    "beta",
    "lambda",
    "use_glsp",
    "use_sc",
    "keep_gram_diagonal",
    "pooling",
    "arch",
    "epochs",
    "batch_size",
    "lr",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "decay_factor",
    "decay_every",
    "train_mask_kind",
    "train_mask_max",
    "seed",
    "eval_seed",
    "eval_strength",
    "eval_kind",
];

/// Splits a config text into `key -> (line number, raw value)`.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, (usize, String)>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", n + 1)));
        }
        if out.insert(key.to_string(), (n + 1, value.to_string())).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key `{key}`", n + 1)));
        }
    }
    Ok(out)
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn flag(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!("`{key}`: expected true or false, got `{value}`"))),
    }
}

fn kind(key: &str, value: &str) -> Result<PerturbationKind> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: unknown perturbation kind `{value}`")))
}

/// Applies one setting. Unknown keys yield [`Error::UnknownKey`].
pub fn set(cfg: &mut RunConfig, key: &str, value: &str) -> Result<()> {
    let (g, m, s) = (&mut cfg.generator, &mut cfg.model, &mut cfg.schedule);
    match key {
        "frames" => {
            g.frames = num(key, value)?;
            m.frames = g.frames;
        }
        "grid_h" => {
            g.grid_h = num(key, value)?;
            m.grid_h = g.grid_h;
        }
        "grid_w" => {
            g.grid_w = num(key, value)?;
            m.grid_w = g.grid_w;
        }
        "raw_channels" => {
            g.raw_channels = num(key, value)?;
            m.raw_channels = g.raw_channels;
        }
        "frame_jitter" => g.frame_jitter = num(key, value)?,
        "identity_scale" => g.identity_scale = num(key, value)?,
        "gain_spread" => g.gain_spread = num(key, value)?,
        "artifact_strength" => g.artifact_strength = num(key, value)?,
        "artifact_block_h" => g.artifact_block_h = num(key, value)?,
        "artifact_block_w" => g.artifact_block_w = num(key, value)?,
        "clutter_rate" => g.clutter_rate = num(key, value)?,
        "train_size" => g.train_size = num(key, value)?,
        "val_size" => g.val_size = num(key, value)?,
        "test_size" => g.test_size = num(key, value)?,
        "data_seed" => g.seed = num(key, value)?,
        "channels" => m.channels = num(key, value)?,
        "gcn_layers" => m.gcn_layers = num(key, value)?,
        "gcn_dim" => m.gcn_dim = num(key, value)?,
        "fc_width" => m.fc_width = num(key, value)?,
        "classes" => m.classes = num(key, value)?,
        "beta" => m.beta = num(key, value)?,
        "lambda" => m.lambda = num(key, value)?,
        "use_glsp" => m.use_glsp = flag(key, value)?,
        "use_sc" => m.use_sc = flag(key, value)?,
        "keep_gram_diagonal" => m.keep_gram_diagonal = flag(key, value)?,
        "pooling" => {
            m.pooling = match value {
                "mean" => Pooling::Mean,
                "sum" => Pooling::Sum,
                _ => return Err(Error::Config(format!("`pooling`: expected mean or sum, got `{value}`"))),
            }
        }
        "arch" => {
            m.arch = match value {
                "gcn" => Architecture::Gcn,
                "no_graph" => Architecture::NoGraph,
                _ => return Err(Error::Config(format!("`arch`: expected gcn or no_graph, got `{value}`"))),
            }
        }
        "epochs" => s.epochs = num(key, value)?,
        "batch_size" => s.batch_size = num(key, value)?,
        "lr" => s.adam.lr = num(key, value)?,
        "adam_beta1" => s.adam.beta1 = num(key, value)?,
        "adam_beta2" => s.adam.beta2 = num(key, value)?,
        "adam_eps" => s.adam.eps = num(key, value)?,
        "decay_factor" => s.decay_factor = num(key, value)?,
        "decay_every" => s.decay_every = num(key, value)?,
        "train_mask_kind" => {
            s.train_mask_kind = match value {
                "none" => None,
                other => Some(kind(key, other)?),
            }
        }
        "train_mask_max" => s.train_mask_max = num(key, value)?,
        "seed" => cfg.seed = num(key, value)?,
        "eval_seed" => cfg.eval_seed = num(key, value)?,
        "eval_strength" => cfg.eval_strength = num(key, value)?,
        "eval_kind" => cfg.eval_kind = kind(key, value)?,
        _ => return Err(Error::UnknownKey { key: key.to_string() }),
    }
    Ok(())
}

/// Applies every pair from `text` on top of the defaults and validates.
pub fn parse(text: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    for (key, (_, value)) in parse_pairs(text)? {
        set(&mut cfg, &key, &value)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn load(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    parse(&text)
}

/// Every key with its current value; floats print in shortest round-trip form.
pub fn to_kv(cfg: &RunConfig) -> Vec<(&'static str, String)> {
    let (g, m, s) = (&cfg.generator, &cfg.model, &cfg.schedule);
    let pooling = match m.pooling {
        Pooling::Mean => "mean",
        Pooling::Sum => "sum",
    };
    let arch = match m.arch {
        Architecture::Gcn => "gcn",
        Architecture::NoGraph => "no_graph",
    };
    let values = [
        g.frames.to_string(),
        g.grid_h.to_string(),
        g.grid_w.to_string(),
        g.raw_channels.to_string(),
        g.frame_jitter.to_string(),
        g.identity_scale.to_string(),
        g.gain_spread.to_string(),
        g.artifact_strength.to_string(),
        g.artifact_block_h.to_string(),
        g.artifact_block_w.to_string(),
        g.clutter_rate.to_string(),
        g.train_size.to_string(),
        g.val_size.to_string(),
        g.test_size.to_string(),
        g.seed.to_string(),
        m.channels.to_string(),
        m.gcn_layers.to_string(),
        m.gcn_dim.to_string(),
        m.fc_width.to_string(),
        m.classes.to_string(),
        m.beta.to_string(),
        m.lambda.to_string(),
        m.use_glsp.to_string(),
        m.use_sc.to_string(),
        m.keep_gram_diagonal.to_string(),
        pooling.to_string(),
        arch.to_string(),
        s.epochs.to_string(),
        s.batch_size.to_string(),
        s.adam.lr.to_string(),
        s.adam.beta1.to_string(),
        s.adam.beta2.to_string(),
        s.adam.eps.to_string(),
        s.decay_factor.to_string(),
        s.decay_every.to_string(),
        s.train_mask_kind.map_or_else(|| "none".to_string(), |k| k.to_string()),
        s.train_mask_max.to_string(),
        cfg.seed.to_string(),
        cfg.eval_seed.to_string(),
        cfg.eval_strength.to_string(),
        cfg.eval_kind.to_string(),
    ];
    KEYS.iter().copied().zip(values).collect()
}

/// Config file text for `cfg`; [`parse`] of the result gives back `cfg`.
pub fn render(cfg: &RunConfig) -> String {
    to_kv(cfg).into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}
