//! Run configuration: flat JSON file merged under command-line flags.

use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde::Serialize;
use serde_json::{Map, Value};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeArg {
    Jump,
    Diffusive,
}

#[derive(Args, Clone, Debug, Default)]
pub struct Flags {
    /// Flat JSON file with the same keys as the long flags (underscores for dashes).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<String>,
    /// Comma-separated criterion names.
    #[arg(long, value_delimiter = ',')]
    pub criteria: Option<Vec<String>>,
    #[arg(long, allow_negative_numbers = true)]
    pub t0: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub t1: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub t2: Option<f64>,
    /// Comma-separated, increasing times.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub grid: Option<Vec<f64>>,
    #[arg(long)]
    pub tol: Option<f64>,
    /// Falls back to OQS_SEED.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub assert_pass: bool,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Model parameter `key=value`; repeatable.
    #[arg(long = "param", value_parser = parse_param)]
    pub params: Vec<(String, f64)>,
    /// Ensemble size for mcwf and mcsm.
    #[arg(long)]
    pub trajectories: Option<usize>,
    #[arg(long)]
    pub step: Option<f64>,
    #[arg(long, value_enum)]
    pub scheme: Option<SchemeArg>,
    /// Per-trajectory CSV for mcwf and mcsm.
    #[arg(long)]
    pub paths: Option<PathBuf>,
    /// Record wall-clock timing (makes output run-dependent).
    #[arg(long)]
    pub timing: bool,
}

fn parse_param(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected key=value, got '{s}'"))?;
    let v: f64 = v.trim().parse().map_err(|_| format!("parameter '{k}' needs a number, got '{v}'"))?;
    Ok((k.trim().to_string(), v))
}

/// Fully resolved configuration, echoed into every output.
#[derive(Clone, Debug, Serialize)]
pub struct RunConfig {
    pub command: String,
    pub model: String,
    pub params: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub criteria: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<f64>>,
    pub tol: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
    #[serde(skip)]
    pub out: Option<PathBuf>,
    #[serde(skip)]
    pub paths: Option<PathBuf>,
    pub assert_pass: bool,
    pub format: Format,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trajectories: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scheme: Option<SchemeArg>,
    pub timing: bool,
}

const KEYS: &[&str] = &[
    "model", "criteria", "t0", "t1", "t2", "grid", "tol", "seed", "jobs", "out", "assert_pass", "format", "params",
    "trajectories", "step", "scheme", "paths", "timing",
];

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn num(map: &Map<String, Value>, k: &str) -> Result<Option<f64>, CliError> {
    match map.get(k) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => v.as_f64().map(Some).ok_or_else(|| usage(format!("config key '{k}' must be a number"))),
    }
}

fn uint(map: &Map<String, Value>, k: &str) -> Result<Option<u64>, CliError> {
    match map.get(k) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => v.as_u64().map(Some).ok_or_else(|| usage(format!("config key '{k}' must be a non-negative integer"))),
    }
}

fn text(map: &Map<String, Value>, k: &str) -> Result<Option<String>, CliError> {
    match map.get(k) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s.clone())),
        Some(_) => Err(usage(format!("config key '{k}' must be a string"))),
    }
}

fn list_or_csv<T>(map: &Map<String, Value>, k: &str, item: impl Fn(&Value) -> Option<T>, parse: impl Fn(&str) -> Option<T>) -> Result<Option<Vec<T>>, CliError> {
    let bad = || usage(format!("config key '{k}' has an invalid entry"));
    match map.get(k) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::Array(a)) => a.iter().map(|v| item(v).ok_or_else(bad)).collect::<Result<_, _>>().map(Some),
        Some(Value::String(s)) => s.split(',').map(|p| parse(p.trim()).ok_or_else(bad)).collect::<Result<_, _>>().map(Some),
        Some(_) => Err(bad()),
    }
}

impl RunConfig {
    pub fn resolve(command: &str, flags: &Flags) -> Result<Self, CliError> {
        let file: Map<String, Value> = match &flags.config {
            None => Map::new(),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| usage(format!("cannot read config {}: {e}", p.display())))?;
                match serde_json::from_str(&text) {
                    Ok(Value::Object(m)) => m,
                    Ok(_) => return Err(usage("config file must hold a JSON object")),
                    Err(e) => return Err(usage(format!("config file is not valid JSON: {e}"))),
                }
            }
        };
        if let Some(k) = file.keys().find(|k| !KEYS.contains(&k.as_str())) {
            return Err(usage(format!("unknown config key '{k}'")));
        }
        let mut params = BTreeMap::new();
        match file.get("params") {
            None | Some(Value::Null) => {}
            Some(Value::Object(m)) => {
                for (k, v) in m {
                    params.insert(k.clone(), v.as_f64().ok_or_else(|| usage(format!("parameter '{k}' must be a number")))?);
                }
            }
            Some(_) => return Err(usage("config key 'params' must be an object")),
        }
        for (k, v) in &flags.params {
            params.insert(k.clone(), *v);
        }
        let model = flags
            .model
            .clone()
            .or(text(&file, "model")?)
            .ok_or_else(|| usage("no model given (use --model)"))?;
        let format = match (flags.format, text(&file, "format")?) {
            (Some(f), _) => f,
            (None, Some(s)) => Format::from_str(&s, true).map_err(|_| usage(format!("unknown format '{s}'")))?,
            (None, None) => Format::Json,
        };
        let scheme = match (flags.scheme, text(&file, "scheme")?) {
            (Some(s), _) => Some(s),
            (None, Some(s)) => Some(SchemeArg::from_str(&s, true).map_err(|_| usage(format!("unknown scheme '{s}'")))?),
            (None, None) => None,
        };
        let seed = match flags.seed.or(uint(&file, "seed")?) {
            Some(s) => Some(s),
            None => match std::env::var("OQS_SEED") {
                Ok(s) => Some(s.trim().parse().map_err(|_| usage(format!("OQS_SEED must be a non-negative integer, got '{s}'")))?),
                Err(_) => None,
            },
        };
        let flag_bool = |f: bool, k: &str| -> Result<bool, CliError> {
            if f {
                return Ok(true);
            }
            match file.get(k) {
                None | Some(Value::Null) => Ok(false),
                Some(Value::Bool(b)) => Ok(*b),
                Some(_) => Err(usage(format!("config key '{k}' must be a boolean"))),
            }
        };
        let tol = flags.tol.or(num(&file, "tol")?).unwrap_or(oqs_core::criteria::DEFAULT_TOL);
        if !(tol > 0.0 && tol.is_finite()) {
            return Err(usage(format!("tolerance must be positive, got {tol}")));
        }
        let grid = match &flags.grid {
            Some(g) => Some(g.clone()),
            None => list_or_csv(&file, "grid", |v| v.as_f64(), |s| s.parse().ok())?,
        };
        if let Some(g) = &grid {
            if g.is_empty() || g.windows(2).any(|w| !(w[1] > w[0])) || g.iter().any(|t| !t.is_finite()) {
                return Err(usage("grid must be a non-empty increasing list of finite times"));
            }
        }
        let jobs = flags.jobs.or(uint(&file, "jobs")?.map(|j| j as usize));
        if jobs == Some(0) {
            return Err(usage("--jobs must be at least 1"));
        }
        Ok(RunConfig {
            command: command.to_string(),
            model,
            params,
            criteria: match &flags.criteria {
                Some(c) => Some(c.clone()),
                None => list_or_csv(&file, "criteria", |v| v.as_str().map(str::to_string), |s| Some(s.to_string()))?,
            },
            t0: flags.t0.or(num(&file, "t0")?),
            t1: flags.t1.or(num(&file, "t1")?),
            t2: flags.t2.or(num(&file, "t2")?),
            grid,
            tol,
            seed,
            jobs,
            out: flags.out.clone().or(text(&file, "out")?.map(PathBuf::from)),
            paths: flags.paths.clone().or(text(&file, "paths")?.map(PathBuf::from)),
            assert_pass: flag_bool(flags.assert_pass, "assert_pass")?,
            format,
            trajectories: flags.trajectories.or(uint(&file, "trajectories")?.map(|m| m as usize)),
            step: flags.step.or(num(&file, "step")?),
            scheme,
            timing: flag_bool(flags.timing, "timing")?,
        })
    }

    /// Takes a model parameter, defaulting when absent.
    pub fn param(&self, used: &mut Vec<String>, key: &str, default: f64) -> f64 {
        used.push(key.to_string());
        self.params.get(key).copied().unwrap_or(default)
    }

    pub fn reject_unused(&self, used: &[String]) -> Result<(), CliError> {
        match self.params.keys().find(|k| !used.contains(k)) {
            Some(k) => Err(usage(format!("model '{}' takes no parameter '{k}'", self.model))),
            None => Ok(()),
        }
    }
}
