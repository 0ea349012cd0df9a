//! Flat `key = value` configuration files and their merge with flags.
//!
//! Keys are the long flag names (`clients-per-round`; underscores also
//! accepted). Blank lines and `#` comments are ignored. Resolution order is
//! built-in defaults, then the file, then flags.

use std::path::Path;

use fedmcsa_core::data::DatasetKind;
use fedmcsa_core::engine::{Algorithm, RunConfig};
use fedmcsa_core::nn::Architecture;
use fedmcsa_core::Error;

use crate::error::{CliError, Result};

/// Every key a configuration file (or the echoed `config.txt`) may carry.
pub const KEYS: &[&str] = &[
    "algorithm",
    "dataset",
    "model",
    "clients",
    "rounds",
    "clients-per-round",
    "local-epochs",
    "batch-size",
    "eta",
    "lambda",
    "sigma",
    "mu",
    "pfedme-steps",
    "personal-lr",
    "self-weight",
    "heur-sigma",
    "l2",
    "hidden",
    "alpha",
    "beta",
    "seed",
    "all-clients-train",
    "per-client-init",
    "weighted-average",
    "record-attention",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

fn normalize(key: &str) -> String {
    key.trim().to_ascii_lowercase().replace('_', "-")
}

pub fn parse_config_text(text: &str, path: &Path) -> Result<Vec<Entry>> {
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| CliError::ConfigFile {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
        let key = normalize(key);
        if !KEYS.contains(&key.as_str()) {
            return Err(err(format!("unknown key `{key}`")));
        }
        entries.push(Entry {
            line: i + 1,
            key,
            value: value.trim().to_string(),
        });
    }
    Ok(entries)
}

pub fn read_config_file(path: &Path) -> Result<Vec<Entry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_text(&text, path)
}

fn parse<T: std::str::FromStr>(value: &str, what: &str) -> std::result::Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("`{value}` is not a valid {what}"))
}

fn parse_bool(value: &str) -> std::result::Result<bool, String> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(format!("`{value}` is not a boolean")),
    }
}

/// Applies one `key = value` setting.
pub fn set(cfg: &mut RunConfig, key: &str, value: &str) -> std::result::Result<(), String> {
    let count = |v: &str| parse::<usize>(v, "count");
    let real = |v: &str| parse::<f64>(v, "number");
    match normalize(key).as_str() {
        "algorithm" => cfg.algorithm = value.parse::<Algorithm>().map_err(|e| e.to_string())?,
        "dataset" => cfg.dataset = value.parse::<DatasetKind>().map_err(|e| e.to_string())?,
        "model" => cfg.model = value.parse::<Architecture>().map_err(|e| e.to_string())?,
        "clients" => cfg.clients = count(value)?,
        "rounds" => cfg.rounds = count(value)?,
        "clients-per-round" => cfg.clients_per_round = count(value)?,
        "local-epochs" => cfg.local_epochs = count(value)?,
        "batch-size" => cfg.batch_size = count(value)?,
        "eta" => cfg.eta = real(value)?,
        "lambda" => cfg.lambda = real(value)?,
        "sigma" => {
            if value.contains(',') {
                return Err("several sigma values need the `sweep` command".into());
            }
            cfg.sigma = real(value)?
        }
        "mu" => cfg.mu = real(value)?,
        "pfedme-steps" => cfg.pfedme_steps = count(value)?,
        "personal-lr" => cfg.personal_lr = real(value)?,
        "self-weight" => cfg.self_weight = real(value)?,
        "heur-sigma" => cfg.heur_sigma = real(value)?,
        "l2" => cfg.l2 = real(value)?,
        "hidden" => cfg.hidden = count(value)?,
        "alpha" => cfg.alpha = real(value)?,
        "beta" => cfg.beta = real(value)?,
        "seed" => cfg.seed = parse::<u64>(value, "seed")?,
        "all-clients-train" => cfg.all_clients_train = parse_bool(value)?,
        "per-client-init" => cfg.per_client_init = parse_bool(value)?,
        "weighted-average" => cfg.weighted_average = parse_bool(value)?,
        "record-attention" => cfg.record_attention = parse_bool(value)?,
        other => return Err(format!("unknown key `{other}`")),
    }
    Ok(())
}

fn lookup<'a>(key: &str, file: &'a [Entry], flags: &'a [(String, String)]) -> Option<&'a str> {
    flags
        .iter()
        .rev()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
        .or_else(|| file.iter().rev().find(|e| e.key == key).map(|e| e.value.as_str()))
}

/// Builds a validated configuration from defaults, file entries and flag
/// values (flag keys use the same names as file keys).
pub fn resolve(file: &[Entry], file_path: Option<&Path>, flags: &[(String, String)]) -> Result<RunConfig> {
    let pick = |key: &str, default: &str| lookup(key, file, flags).unwrap_or(default).to_string();
    let algorithm: Algorithm = pick("algorithm", "fedmcsa").parse()?;
    let dataset: DatasetKind = pick("dataset", "synthetic").parse()?;
    let model: Architecture = pick("model", "mlr").parse()?;
    let mut cfg = RunConfig::defaults(algorithm, dataset, model);
    for e in file {
        set(&mut cfg, &e.key, &e.value).map_err(|message| CliError::ConfigFile {
            path: file_path.unwrap_or(Path::new("<config>")).to_path_buf(),
            line: e.line,
            message,
        })?;
    }
    for (k, v) in flags {
        set(&mut cfg, k, v).map_err(|m| Error::config(format!("--{k}: {m}")))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// The configuration as a file `resolve` reads back to the same value.
pub fn to_config_text(cfg: &RunConfig) -> String {
    let values: [String; 25] = [
        cfg.algorithm.id().into(),
        cfg.dataset.id().into(),
        cfg.model.id().into(),
        cfg.clients.to_string(),
        cfg.rounds.to_string(),
        cfg.clients_per_round.to_string(),
        cfg.local_epochs.to_string(),
        cfg.batch_size.to_string(),
        cfg.eta.to_string(),
        cfg.lambda.to_string(),
        cfg.sigma.to_string(),
        cfg.mu.to_string(),
        cfg.pfedme_steps.to_string(),
        cfg.personal_lr.to_string(),
        cfg.self_weight.to_string(),
        cfg.heur_sigma.to_string(),
        cfg.l2.to_string(),
        cfg.hidden.to_string(),
        cfg.alpha.to_string(),
        cfg.beta.to_string(),
        cfg.seed.to_string(),
        cfg.all_clients_train.to_string(),
        cfg.per_client_init.to_string(),
        cfg.weighted_average.to_string(),
        cfg.record_attention.to_string(),
    ];
    KEYS.iter()
        .zip(values)
        .map(|(k, v)| format!("{k} = {v}\n"))
        .collect()
}
