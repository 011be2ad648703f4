use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde_json::{json, Map, Value};

use crate::config::RunConfig;
use crate::CliError;

pub const ARTIFACT_VERSION: &str = concat!("oqs-report/", env!("CARGO_PKG_VERSION"));

/// Adds version, config echo and timing to a command's payload. Timing is
/// null unless requested so that identical configs give identical bytes.
pub fn envelope(cfg: &RunConfig, started: Instant, payload: Map<String, Value>) -> Value {
    let mut m = payload;
    m.insert("artifact_version".into(), json!(ARTIFACT_VERSION));
    m.insert("command".into(), json!(cfg.command));
    m.insert("config".into(), serde_json::to_value(cfg).expect("config serializes"));
    let timing = if cfg.timing { json!({ "wall_seconds": started.elapsed().as_secs_f64() }) } else { Value::Null };
    m.insert("timing".into(), timing);
    Value::Object(m)
}

pub fn write_text(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::Usage(format!("cannot write {}: {e}", p.display()))),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes()).and_then(|_| out.flush()).map_err(|e| CliError::Failed(format!("stdout: {e}")))
        }
    }
}

pub fn csv_bytes(header: &[String], rows: &[Vec<String>]) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| CliError::Failed(format!("csv: {e}"));
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(r).map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Failed(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

pub fn fmt(v: f64) -> String {
    crate::json::fmt_float(v).unwrap_or_else(|| "NaN".into())
}
