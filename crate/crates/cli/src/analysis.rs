//! `analyze`, `hierarchy` and `export`.

use std::f64::consts::PI;
use std::time::Instant;

use serde_json::{json, Map, Value};

use oqs_core::classical::{self as cl, FiniteProcess, TransitionFamily};
use oqs_core::criteria::*;
use oqs_core::models::*;
use oqs_core::quantum_core::{pauli, PureState};
use oqs_core::unravel::unravelling_reports;

use crate::config::{Format, RunConfig};
use crate::output::{csv_bytes, envelope, fmt, write_text};
use crate::CliError;

pub enum Model {
    Joint(Box<dyn JointModel>),
    Family(Box<dyn MapFamily>),
    Classical(FiniteProcess),
}

pub const JOINT_CRITERIA: &[&str] = &[
    "fa", "qrf", "gqrf", "composability", "nib", "nqib", "divisibility", "semigroup", "distinguishability", "fdd",
    "dd_effectiveness", "pu", "mpu",
];
pub const FAMILY_CRITERIA: &[&str] = &["divisibility", "semigroup", "distinguishability"];
pub const CLASSICAL_CRITERIA: &[&str] = &["cm", "crf", "cke", "cd", "semigroup", "distinguishability"];

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

pub fn build_model(cfg: &RunConfig) -> Result<Model, CliError> {
    let mut used = Vec::new();
    let mut p = |k: &str, d: f64| cfg.param(&mut used, k, d);
    let model = match cfg.model.as_str() {
        "afl" => Model::Joint(Box::new(AflModel::new(p("gamma", 1.0), p("g", 2.0))?)),
        "afl-grid" => {
            let (gamma, g) = (p("gamma", 1.0), p("g", 2.0));
            let points = p("points", AFL_GRID_POINTS as f64);
            let cutoff = p("cutoff", AFL_GRID_CUTOFF);
            if points.fract() != 0.0 || points < 3.0 {
                return Err(usage("afl-grid 'points' must be an odd integer >= 3"));
            }
            Model::Joint(Box::new(RegisterModel::afl_grid(gamma, g, points as usize, cutoff, AFL_MAX_QUADRATURE_ERROR)?))
        }
        "tam" => Model::Joint(Box::new(TamModel::new())),
        "nqib" => Model::Joint(Box::new(RegisterModel::nqib_qubit()?)),
        "collision" => {
            let angle = p("angle", PI / 4.0);
            let slots = p("slots", 6.0);
            if slots.fract() != 0.0 || slots < 1.0 {
                return Err(usage("collision 'slots' must be a positive integer"));
            }
            Model::Joint(Box::new(CollisionModel::partial_swap(angle, slots as usize)?))
        }
        "static-dephasing" => {
            let k = p("kappa", 1.0);
            let w = p("p", 0.5);
            Model::Joint(Box::new(RegisterModel::static_dephasing(&[k, -k], &[w, 1.0 - w])?))
        }
        "eternal" => Model::Family(Box::new(EternalModel::new())),
        "block" => {
            let (m, n, blocks) = (p("m", 3.0), p("n", 3.0), p("blocks", 2.0));
            let (alpha, q0) = (p("alpha", 1.0), p("q0", 0.5));
            if [m, n, blocks].iter().any(|v| v.fract() != 0.0 || *v < 1.0) {
                return Err(usage("block 'm', 'n' and 'blocks' must be positive integers"));
            }
            Model::Classical(cl::blockwise_counterexample(m as usize, n as usize, &[alpha], blocks as usize, &[q0, 1.0 - q0])?)
        }
        name if cl::CLASSICAL_PRESETS.contains(&name) => Model::Classical(cl::classical_preset(name)?),
        other => {
            return Err(usage(format!(
                "unknown model '{other}' (known: {}, block, {})",
                PRESET_NAMES.join(", "),
                cl::CLASSICAL_PRESETS.join(", ")
            )))
        }
    };
    cfg.reject_unused(&used)?;
    Ok(model)
}

fn all_pairs(ts: &[f64]) -> Vec<(f64, f64)> {
    let mut v = Vec::new();
    for (i, &a) in ts.iter().enumerate() {
        for &b in &ts[i + 1..] {
            v.push((a, b));
        }
    }
    v
}

fn semigroup_pairs_from(grid: &[f64], t0: f64) -> Vec<(f64, f64)> {
    let rel: Vec<f64> = grid.iter().map(|t| t - t0).filter(|&r| r > 0.0).collect();
    let mut v = Vec::new();
    for (i, &a) in rel.iter().enumerate() {
        for &b in &rel[i..] {
            v.push((a, b));
        }
    }
    v
}

fn triple(cfg: &RunConfig, default: (f64, f64, f64), t0: f64) -> Result<Option<(f64, f64, f64)>, CliError> {
    match (cfg.t0, cfg.t1, cfg.t2) {
        (_, None, None) if cfg.t0.is_none() => Ok(None),
        (a, Some(b), Some(c)) => Ok(Some((a.unwrap_or(t0), b, c))),
        _ => Err(usage(format!("give --t1 and --t2 together (default triple {default:?})"))),
    }
}

fn pair_seed(cfg: &RunConfig) -> u64 {
    cfg.seed.unwrap_or(11)
}

fn joint_report(model: &dyn JointModel, name: &str, cfg: &RunConfig) -> Result<CriterionReport, CliError> {
    let g = preset_grid(model.name());
    let tol = cfg.tol;
    let d = model.dim_s();
    let given = triple(cfg, g.nib_triple, model.initial_time())?;
    let tri = given.unwrap_or(g.nib_triple);
    let map_grid = cfg.grid.clone().unwrap_or(g.map_grid.clone());
    let nib_cfg = NibSearch { seed: cfg.seed.unwrap_or(NibSearch::default().seed), ..NibSearch::default() };
    Ok(match name {
        "fa" => check_fa(model, &tomographic_states(d), cfg.grid.as_deref().unwrap_or(&g.fa_times), tol)?,
        "qrf" => {
            let pairs = match (given, &cfg.grid) {
                (Some((_, a, b)), _) => vec![(a, b)],
                (None, Some(gr)) => all_pairs(gr),
                (None, None) => g.qrf_pairs.clone(),
            };
            check_qrf(model, &pauli::all(), &pairs, tol)?
        }
        "gqrf" => {
            let sets = match (given, &cfg.grid) {
                (Some(t), _) => vec![vec![t.0, t.1, t.2]],
                (None, Some(gr)) => vec![gr.clone()],
                (None, None) => g.gqrf_sets.clone(),
            };
            check_gqrf(model, &pauli_pair_maps(), &sets, &[PureState::basis(&[d], 0)], tol)?
        }
        "composability" => check_composability(model, &given.map(|t| vec![t]).unwrap_or(g.triples.clone()), tol)?,
        "nib" => nib_search(model, tri, &nib_cfg, tol)?.report,
        "nqib" => match model.breaking_channel() {
            Some(ch) => check_nqib(model, tri, Some(&ch), tol)?,
            None => {
                let nib = nib_search(model, tri, &nib_cfg, tol)?;
                match (nib.report.verdict, nib.best) {
                    (Verdict::Pass, Some(s)) => check_nqib(model, tri, Some(&BreakingChannel::Replacement(s)), tol)?
                        .note("channel: replacement by the NIB minimizer, which is entanglement breaking"),
                    _ => CriterionReport::new("nqib", tol, format!("triple {tri:?}"))
                        .inconclusive("no entanglement-breaking channel supplied and NIB found no replacement"),
                }
            }
        },
        "divisibility" => check_divisibility(&JointFamily(model), &map_grid, tol)?,
        "semigroup" => {
            let pairs = match &cfg.grid {
                Some(gr) => semigroup_pairs_from(gr, model.initial_time()),
                None => g.semigroup_pairs.clone(),
            };
            check_semigroup(&JointFamily(model), &pairs, tol)?
        }
        "distinguishability" => {
            let pairs = default_state_pairs(d, 25, pair_seed(cfg));
            check_distinguishability(&JointFamily(model), &pairs, &DEFAULT_W_GRID, &map_grid, tol)?
        }
        "fdd" => check_fdd(model, &g.dd_sequences, tol)?,
        "dd_effectiveness" => {
            let (pulses, tf) = match (&cfg.grid, &g.echo) {
                (Some(gr), _) => {
                    let t = *gr.last().expect("non-empty grid");
                    (vec![(t / 2.0, pauli::x()), (t, pauli::x())], t)
                }
                (None, Some(e)) => e.clone(),
                (None, None) => return Err(usage(format!("model '{}' has no echo sequence; give --grid", model.name()))),
            };
            dd_effectiveness(model, &pulses, tf, &PureState::plus(), tol)?
        }
        "pu" | "mpu" => unravelling_reports(model, tol)?
            .into_iter()
            .find(|r| r.criterion == name)
            .ok_or_else(|| usage(format!("criterion '{name}' is not available for model '{}'", model.name())))?,
        other => return Err(unknown_criterion(other, JOINT_CRITERIA)),
    })
}

fn unknown_criterion(name: &str, known: &[&str]) -> CliError {
    usage(format!("unknown criterion '{name}' for this model (known: {})", known.join(", ")))
}

fn family_report(fam: &dyn MapFamily, name: &str, cfg: &RunConfig) -> Result<CriterionReport, CliError> {
    let grid = cfg.grid.clone().unwrap_or_else(eternal_grid);
    Ok(match name {
        "divisibility" => check_divisibility(fam, &grid, cfg.tol)?,
        "semigroup" => {
            let pairs = match &cfg.grid {
                Some(gr) => semigroup_pairs_from(gr, fam.initial_time()),
                None => vec![(0.5, 0.5), (0.5, 1.0), (1.0, 1.0)],
            };
            check_semigroup(fam, &pairs, cfg.tol)?
        }
        "distinguishability" => {
            let pairs = default_state_pairs(fam.dim(), 25, pair_seed(cfg));
            check_distinguishability(fam, &pairs, &DEFAULT_W_GRID, &grid, cfg.tol)?
        }
        other => return Err(unknown_criterion(other, FAMILY_CRITERIA)),
    })
}

fn classical_reports(p: &FiniteProcess, name: &str, cfg: &RunConfig) -> Result<Vec<CriterionReport>, CliError> {
    let tol = cfg.tol;
    if let Some(n) = name.strip_prefix("crf_") {
        let n: usize = n.parse().map_err(|_| unknown_criterion(name, CLASSICAL_CRITERIA))?;
        return Ok(vec![cl::check_crf(p, n, tol)?]);
    }
    let fam = || TransitionFamily::from_process(p);
    Ok(match name {
        "cm" => vec![cl::check_cm(p, tol)],
        "crf" => (1..=p.horizon()).map(|n| cl::check_crf(p, n, tol)).collect::<Result<_, _>>()?,
        "cke" => vec![cl::check_cke(p, tol)],
        "cd" => vec![cl::check_cdiv(&fam()?, tol)],
        "semigroup" => vec![cl::check_stochastic_semigroup(&fam()?, tol)],
        "distinguishability" => {
            let pairs = cl::default_distribution_pairs(p.cards[0], 25, pair_seed(cfg));
            vec![cl::check_classical_disting(&fam()?, &pairs, &DEFAULT_W_GRID, tol)]
        }
        other => return Err(unknown_criterion(other, CLASSICAL_CRITERIA)),
    })
}

fn reports_value(reports: &[CriterionReport]) -> Value {
    Value::Array(reports.iter().map(|r| serde_json::to_value(r).expect("report serializes")).collect())
}

fn reports_csv(reports: &[CriterionReport]) -> Result<String, CliError> {
    let header: Vec<String> = ["criterion", "verdict", "violation", "tolerance", "grid"].iter().map(|s| s.to_string()).collect();
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            vec![
                r.criterion.clone(),
                r.verdict.to_string(),
                r.violation().map(fmt).unwrap_or_default(),
                fmt(r.tolerance),
                r.grid.clone(),
            ]
        })
        .collect();
    csv_bytes(&header, &rows)
}

fn emit_reports(cfg: &RunConfig, started: Instant, reports: &[CriterionReport], extra: Map<String, Value>) -> Result<(), CliError> {
    let text = match cfg.format {
        Format::Json => {
            let mut m = extra;
            m.insert("reports".into(), reports_value(reports));
            crate::json::to_string(&envelope(cfg, started, m))
        }
        Format::Csv => reports_csv(reports)?,
    };
    write_text(cfg.out.as_deref(), &text)
}

fn assert_pass(cfg: &RunConfig, reports: &[CriterionReport]) -> Result<(), CliError> {
    let failed: Vec<&str> = reports.iter().filter(|r| r.verdict == Verdict::Fail).map(|r| r.criterion.as_str()).collect();
    if cfg.assert_pass && !failed.is_empty() {
        return Err(CliError::Failed(format!("criteria failed: {}", failed.join(", "))));
    }
    Ok(())
}

pub fn analyze(cfg: &RunConfig) -> Result<(), CliError> {
    let started = Instant::now();
    let model = build_model(cfg)?;
    let defaults: &[&str] = match &model {
        Model::Joint(_) => JOINT_CRITERIA,
        Model::Family(_) => FAMILY_CRITERIA,
        Model::Classical(_) => CLASSICAL_CRITERIA,
    };
    let names: Vec<String> = cfg.criteria.clone().unwrap_or_else(|| defaults.iter().map(|s| s.to_string()).collect());
    if names.is_empty() {
        return Err(usage("empty criterion list"));
    }
    // validate every name before running anything
    for n in &names {
        let known = defaults.contains(&n.as_str()) || (matches!(model, Model::Classical(_)) && n.starts_with("crf_"));
        if !known {
            return Err(unknown_criterion(n, defaults));
        }
    }
    let mut reports = Vec::new();
    for n in &names {
        match &model {
            Model::Joint(m) => reports.push(joint_report(m.as_ref(), n, cfg)?),
            Model::Family(f) => reports.push(family_report(f.as_ref(), n, cfg)?),
            Model::Classical(p) => reports.extend(classical_reports(p, n, cfg)?),
        }
    }
    emit_reports(cfg, started, &reports, Map::new())?;
    assert_pass(cfg, &reports)
}

pub fn hierarchy(cfg: &RunConfig) -> Result<(), CliError> {
    let started = Instant::now();
    if cfg.criteria.is_some() {
        return Err(usage("hierarchy runs every applicable criterion; drop --criteria"));
    }
    let h = match build_model(cfg)? {
        Model::Joint(m) => joint_hierarchy(m.as_ref(), cfg.tol)?,
        Model::Family(f) => family_hierarchy(f.as_ref(), cfg.tol)?,
        Model::Classical(p) => cl::classical_hierarchy(&cfg.model, &p, cfg.tol)?,
    };
    let mut extra = Map::new();
    extra.insert("implication_violations".into(), json!(h.implication_violations));
    let table: Map<String, Value> = h.reports.iter().map(|r| (r.criterion.clone(), json!(r.verdict.to_string()))).collect();
    extra.insert("verdicts".into(), Value::Object(table));
    emit_reports(cfg, started, &h.reports, extra)?;
    if !h.implication_violations.is_empty() {
        return Err(CliError::Failed(format!("implication violated: {}", h.implication_violations.join("; "))));
    }
    assert_pass(cfg, &h.reports)
}

pub fn export(cfg: &RunConfig) -> Result<(), CliError> {
    let started = Instant::now();
    let p = match build_model(cfg)? {
        Model::Classical(p) => p,
        _ => return Err(usage(format!("export needs a classical model, got '{}'", cfg.model))),
    };
    let text = match cfg.format {
        Format::Json => {
            let mut m = Map::new();
            m.insert("process".into(), serde_json::to_value(&p).expect("process serializes"));
            crate::json::to_string(&envelope(cfg, started, m))
        }
        Format::Csv => {
            let mut header: Vec<String> = p.times.iter().map(|t| format!("x(t={t})")).collect();
            header.push("probability".into());
            let n = p.cards.len();
            let mut x = vec![0usize; n];
            let mut rows = Vec::with_capacity(p.table.len());
            for &prob in &p.table {
                let mut row: Vec<String> = (0..n).map(|i| fmt(p.labels[i][x[i]])).collect();
                row.push(fmt(prob));
                rows.push(row);
                for i in (0..n).rev() {
                    x[i] += 1;
                    if x[i] < p.cards[i] {
                        break;
                    }
                    x[i] = 0;
                }
            }
            csv_bytes(&header, &rows)?
        }
    };
    write_text(cfg.out.as_deref(), &text)
}
