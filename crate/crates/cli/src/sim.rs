//! `mcwf` and `mcsm`: ensembles, CSV time series and JSON summaries.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::{json, Map, Value};

use oqs_core::classical::{mcsm as run_mcsm, sample_moments, SdeSpec};
use oqs_core::models::EternalModel;
use oqs_core::quantum_core::{pauli, PureState};
use oqs_core::superop::{me_integrate, LindbladSpec};
use oqs_core::unravel::{mcwf as run_mcwf, Scheme};

use crate::config::{Format, RunConfig, SchemeArg};
use crate::output::{csv_bytes, envelope, fmt, write_text};
use crate::CliError;

pub const MCWF_MODELS: &[&str] = &["decay", "dephasing", "eternal"];
pub const MCSM_MODELS: &[&str] = &["ou", "poisson", "decay-ode"];

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn grid_and_step(cfg: &RunConfig, default: &[f64]) -> Result<(Vec<f64>, f64, usize), CliError> {
    let grid = cfg.grid.clone().unwrap_or_else(|| default.to_vec());
    let step = cfg.step.unwrap_or(1e-3);
    let m = cfg.trajectories.unwrap_or(1000);
    if m == 0 {
        return Err(usage("--trajectories must be positive"));
    }
    if !(step > 0.0) {
        return Err(usage("--step must be positive"));
    }
    Ok((grid, step, m))
}

/// `<out>.summary.json` next to a CSV written to a file.
fn summary_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".summary.json");
    PathBuf::from(s)
}

fn emit(cfg: &RunConfig, summary: Value, csv: String) -> Result<(), CliError> {
    let text = crate::json::to_string(&summary);
    match cfg.format {
        Format::Json => write_text(cfg.out.as_deref(), &text),
        Format::Csv => match &cfg.out {
            Some(p) => {
                write_text(Some(p), &csv)?;
                write_text(Some(&summary_path(p)), &text)
            }
            None => {
                write_text(None, &csv)?;
                eprint!("{text}");
                Ok(())
            }
        },
    }
}

fn mcwf_spec(cfg: &RunConfig) -> Result<(LindbladSpec, PureState), CliError> {
    let mut used = Vec::new();
    let out = match cfg.model.as_str() {
        "decay" => {
            let g = cfg.param(&mut used, "gamma", 2.0);
            (LindbladSpec::new(2).with_channel(pauli::sigma_minus(), g), PureState::basis(&[2], 1))
        }
        "dephasing" => {
            let g = cfg.param(&mut used, "gamma", 1.0);
            (LindbladSpec::new(2).with_channel(pauli::z(), g), PureState::plus())
        }
        "eternal" => (EternalModel::new().spec().clone(), PureState::plus()),
        other => return Err(usage(format!("unknown mcwf model '{other}' (known: {})", MCWF_MODELS.join(", ")))),
    };
    cfg.reject_unused(&used)?;
    Ok(out)
}

pub fn mcwf(cfg: &RunConfig) -> Result<(), CliError> {
    let started = Instant::now();
    let (spec, psi0) = mcwf_spec(cfg)?;
    let (grid, step, m) = grid_and_step(cfg, &[0.0, 0.25, 0.5, 1.0])?;
    let seed = cfg.seed.unwrap_or(0);
    let scheme = match cfg.scheme.unwrap_or(SchemeArg::Jump) {
        SchemeArg::Jump => Scheme::Jump,
        SchemeArg::Diffusive => Scheme::Diffusive,
    };
    let ens = run_mcwf(&spec, &psi0, &grid, step, m, seed, scheme)?;
    let me = me_integrate(&spec, &psi0.to_density(), &grid, step)?;
    let d = psi0.dim();

    let mut rows_json = Vec::new();
    let mut rows_csv = Vec::new();
    let (mut max_dev, mut max_se, mut max_z) = (0.0f64, 0.0f64, 0.0f64);
    let mut sigma_defined = m >= 2;
    for (k, &t) in grid.iter().enumerate() {
        let mut csv_row = vec![fmt(t)];
        let (mut dev_t, mut se_t) = (0.0f64, 0.0f64);
        for j in 0..d {
            for i in 0..d {
                for part in 0..2 {
                    let xs: Vec<f64> = ens
                        .trajectories
                        .iter()
                        .map(|tr| if part == 0 { tr.states[k][(i, j)].re } else { tr.states[k][(i, j)].im })
                        .collect();
                    let (mean, se, _, _) = sample_moments(&xs);
                    let exact = if part == 0 { me.states[k][(i, j)].re } else { me.states[k][(i, j)].im };
                    let dev = (mean - exact).abs();
                    dev_t = dev_t.max(dev);
                    if se.is_nan() {
                        sigma_defined = false;
                    } else {
                        se_t = se_t.max(se);
                        // elements that are deterministic across the ensemble have zero error
                        let z = if se > 0.0 { dev / se } else if dev <= 1e-12 { 0.0 } else { f64::INFINITY };
                        max_z = max_z.max(z);
                    }
                    csv_row.extend([fmt(mean), fmt(exact), if se.is_nan() { String::new() } else { fmt(se) }]);
                }
            }
        }
        max_dev = max_dev.max(dev_t);
        max_se = max_se.max(se_t);
        rows_json.push(json!({
            "time": t,
            "max_deviation": dev_t,
            "standard_error": if sigma_defined { json!(se_t) } else { Value::Null },
        }));
        rows_csv.push(csv_row);
    }
    let mut header = vec!["time".to_string()];
    for j in 0..d {
        for i in 0..d {
            for part in ["re", "im"] {
                for what in ["mean", "me", "se"] {
                    header.push(format!("rho_{i}{j}_{part}_{what}"));
                }
            }
        }
    }
    let summary = json!({
        "trajectories": m,
        "scheme": format!("{scheme:?}").to_lowercase(),
        "seed": seed,
        "max_deviation": max_dev,
        "standard_error": if sigma_defined { json!(max_se) } else { Value::Null },
        "sigma_defined": sigma_defined,
        "max_z": if sigma_defined { json!(max_z) } else { Value::Null },
        "within_3_sigma": if sigma_defined { json!(max_z <= 3.0) } else { Value::Null },
        "rows": rows_json,
    });
    write_paths(cfg, |w| ens.write_csv(w))?;
    let mut payload = Map::new();
    payload.insert("summary".into(), summary);
    emit(cfg, envelope(cfg, started, payload), csv_bytes(&header, &rows_csv)?)
}

fn write_paths(cfg: &RunConfig, f: impl FnOnce(&mut Vec<u8>) -> oqs_core::Result<()>) -> Result<(), CliError> {
    if let Some(p) = &cfg.paths {
        let mut buf = Vec::new();
        f(&mut buf)?;
        std::fs::write(p, buf).map_err(|e| usage(format!("cannot write {}: {e}", p.display())))?;
    }
    Ok(())
}

type Analytic = Box<dyn Fn(f64) -> (f64, f64)>;

pub fn mcsm(cfg: &RunConfig) -> Result<(), CliError> {
    let started = Instant::now();
    let mut used = Vec::new();
    let (spec, x0, analytic): (SdeSpec, f64, Option<Analytic>) = match cfg.model.as_str() {
        "ou" => {
            let k = cfg.param(&mut used, "k", 1.0);
            let s = cfg.param(&mut used, "sigma", 1.0);
            let x0 = cfg.param(&mut used, "x0", 1.0);
            if !(k > 0.0) {
                return Err(usage("ou needs k > 0"));
            }
            let f = move |t: f64| (x0 * (-k * t).exp(), s * s * (1.0 - (-2.0 * k * t).exp()) / (2.0 * k));
            (SdeSpec::ornstein_uhlenbeck(k, s), x0, Some(Box::new(f)))
        }
        "poisson" => {
            let r = cfg.param(&mut used, "rate", 1.0);
            (SdeSpec::poisson(r), 0.0, Some(Box::new(move |t: f64| (r * t, r * t))))
        }
        "decay-ode" => {
            let k = cfg.param(&mut used, "k", 1.0);
            let x0 = cfg.param(&mut used, "x0", 1.0);
            let spec = SdeSpec::deterministic(1, std::sync::Arc::new(move |x: &[f64], _| vec![-k * x[0]]));
            (spec, x0, Some(Box::new(move |t: f64| (x0 * (-k * t).exp(), 0.0))))
        }
        other => return Err(usage(format!("unknown mcsm model '{other}' (known: {})", MCSM_MODELS.join(", ")))),
    };
    cfg.reject_unused(&used)?;
    let (grid, step, m) = grid_and_step(cfg, &[0.0, 0.5, 1.0])?;
    let seed = cfg.seed.unwrap_or(0);
    let res = run_mcsm(&spec, &[x0], &grid, step, m, seed)?;
    let sigma_defined = m >= 2;
    let mut rows = Vec::new();
    let mut rows_csv = Vec::new();
    let mut max_z = 0.0f64;
    for mo in &res.moments {
        let (am, av) = analytic.as_ref().map(|f| f(mo.time)).unwrap_or((f64::NAN, f64::NAN));
        let z = |dev: f64, se: f64| if se > 0.0 { dev / se } else if dev <= 1e-9 { 0.0 } else { f64::INFINITY };
        let zm = z((mo.mean[0] - am).abs(), mo.mean_se[0]);
        let zv = z((mo.variance[0] - av).abs(), mo.variance_se[0]);
        if sigma_defined && mo.time > grid[0] {
            max_z = max_z.max(zm).max(zv);
        }
        rows.push(json!({
            "time": mo.time,
            "mean": mo.mean[0],
            "mean_se": mo.mean_se[0],
            "variance": mo.variance[0],
            "variance_se": mo.variance_se[0],
            "analytic_mean": am,
            "analytic_variance": av,
        }));
        rows_csv.push(vec![
            fmt(mo.time),
            fmt(mo.mean[0]),
            fmt(mo.mean_se[0]),
            fmt(mo.variance[0]),
            fmt(mo.variance_se[0]),
            fmt(am),
            fmt(av),
        ]);
    }
    let header: Vec<String> = ["time", "mean", "mean_se", "variance", "variance_se", "analytic_mean", "analytic_variance"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let summary = json!({
        "trajectories": m,
        "seed": seed,
        "step": step,
        "sigma_defined": sigma_defined,
        "max_z": if sigma_defined { json!(max_z) } else { Value::Null },
        "within_3_sigma": if sigma_defined { json!(max_z <= 3.0) } else { Value::Null },
        "moments": rows,
    });
    write_paths(cfg, |w| res.write_csv(w))?;
    let mut payload = Map::new();
    payload.insert("summary".into(), summary);
    emit(cfg, envelope(cfg, started, payload), csv_bytes(&header, &rows_csv)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_sits_next_to_the_csv() {
        assert_eq!(summary_path(Path::new("/tmp/run.csv")), PathBuf::from("/tmp/run.csv.summary.json"));
    }
}
