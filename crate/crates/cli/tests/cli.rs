use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn oqs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oqs"))
        .args(args)
        .env_remove("OQS_SEED")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn json(o: &Output) -> Value {
    assert_eq!(code(o), 0, "stderr: {}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).expect("stdout is JSON")
}

fn schema() -> jsonschema::Validator {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("schema/report.schema.json");
    let s: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    jsonschema::draft7::new(&s).expect("schema compiles")
}

fn assert_valid(v: &Value) {
    let errs: Vec<String> = schema().iter_errors(v).map(|e| format!("{} at {}", e, e.instance_path)).collect();
    assert!(errs.is_empty(), "schema errors: {errs:#?}");
}

fn report<'a>(v: &'a Value, criterion: &str) -> &'a Value {
    v["reports"]
        .as_array()
        .unwrap()
        .iter()
        .find(|r| r["criterion"] == criterion)
        .unwrap_or_else(|| panic!("no {criterion} report"))
}

fn verdict(v: &Value, criterion: &str) -> String {
    report(v, criterion)["verdict"].as_str().unwrap().to_string()
}

#[test]
fn eternal_fails_divisibility_but_keeps_distinguishability() {
    let v = json(&oqs(&["analyze", "--model", "eternal", "--criteria", "divisibility,distinguishability"]));
    assert_valid(&v);
    assert_eq!(verdict(&v, "divisibility"), "fail");
    assert_eq!(verdict(&v, "distinguishability"), "pass");
}

#[test]
fn afl_splits_qrf_and_gqrf() {
    let v = json(&oqs(&["analyze", "--model", "afl", "--criteria", "qrf,gqrf"]));
    assert_valid(&v);
    assert_eq!(verdict(&v, "qrf"), "pass");
    assert_eq!(verdict(&v, "gqrf"), "fail");
}

#[test]
fn tam_nib_fails_with_search_witnesses() {
    let v = json(&oqs(&["analyze", "--model", "tam", "--criteria", "nib", "--t0", "0", "--t1", "1", "--t2", "2"]));
    assert_valid(&v);
    let r = report(&v, "nib");
    assert_eq!(r["verdict"], "fail");
    assert!(r["witnesses"]["min_residual"].as_f64().unwrap() > 1e-3);
    assert!(r["witnesses"]["best_env"].is_string());
    assert_eq!(r["witnesses"]["best_bloch_vector"].as_array().unwrap().len(), 3);
}

#[test]
fn collision_hierarchy_passes_everything_but_fa() {
    let v = json(&oqs(&["hierarchy", "--model", "collision"]));
    assert_valid(&v);
    assert_eq!(v["implication_violations"].as_array().unwrap().len(), 0);
    for (name, verdict) in v["verdicts"].as_object().unwrap() {
        let want = if name == "fa" { "fail" } else { "pass" };
        assert_eq!(verdict, want, "{name}");
    }
}

#[test]
fn nqib_preset_separates_nqib_from_nib() {
    let v = json(&oqs(&["hierarchy", "--model", "nqib"]));
    assert_valid(&v);
    assert_eq!(v["verdicts"]["nqib"], "pass");
    assert_eq!(v["verdicts"]["nib"], "fail");
}

#[test]
fn static_dephasing_fails_gqrf_but_is_pu() {
    let v = json(&oqs(&["hierarchy", "--model", "static-dephasing"]));
    assert_valid(&v);
    assert_eq!(v["verdicts"]["gqrf"], "fail");
    assert_eq!(v["verdicts"]["pu"], "pass");
}

#[test]
fn classical_hierarchy_and_export_validate() {
    let v = json(&oqs(&["hierarchy", "--model", "block-3-3"]));
    assert_valid(&v);
    assert_eq!(v["verdicts"]["crf_3"], "fail");
    let e = json(&oqs(&["export", "--model", "markov"]));
    assert_valid(&e);
    let total: f64 = e["process"]["table"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-12);
}

#[test]
fn repeated_runs_are_byte_identical() {
    for args in [
        &["analyze", "--model", "eternal", "--criteria", "distinguishability", "--seed", "5"][..],
        &["mcwf", "--model", "decay", "--trajectories", "50", "--seed", "3"][..],
        &["mcwf", "--model", "decay", "--trajectories", "50", "--seed", "3", "--format", "csv"][..],
        &["mcsm", "--model", "ou", "--trajectories", "50", "--seed", "3", "--format", "csv"][..],
        &["hierarchy", "--model", "block-4-3"][..],
    ] {
        let (a, b) = (oqs(args), oqs(args));
        assert_eq!(code(&a), 0, "{args:?}");
        assert_eq!(a.stdout, b.stdout, "{args:?}");
    }
}

#[test]
fn timing_is_opt_in() {
    let v = json(&oqs(&["analyze", "--model", "eternal", "--criteria", "semigroup"]));
    assert!(v["timing"].is_null());
    let t = json(&oqs(&["analyze", "--model", "eternal", "--criteria", "semigroup", "--timing"]));
    assert_valid(&t);
    assert!(t["timing"]["wall_seconds"].as_f64().unwrap() >= 0.0);
}

#[test]
fn usage_errors_exit_2() {
    for args in [
        &["analyze", "--model", "no-such-model"][..],
        &["analyze", "--model", "eternal", "--criteria", "no-such-criterion"][..],
        &["analyze", "--model", "eternal", "--criteria", "qrf"][..],
        &["analyze"][..],
        &["analyze", "--model", "eternal", "--tol", "-1"][..],
        &["analyze", "--model", "eternal", "--grid", "1,0.5"][..],
        &["analyze", "--model", "afl", "--param", "bogus=1"][..],
        &["analyze", "--model", "eternal", "--jobs", "0"][..],
        &["hierarchy", "--model", "collision", "--criteria", "qrf"][..],
        &["export", "--model", "eternal"][..],
        &["mcwf", "--model", "decay", "--trajectories", "0"][..],
        &["mcsm", "--model", "nope"][..],
        &["analyze", "--model", "eternal", "--format", "xml"][..],
        &["frobnicate"][..],
        &["analyze", "--model", "eternal", "--config", "/nonexistent/config.json"][..],
    ] {
        let o = oqs(args);
        assert_eq!(code(&o), 2, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(!o.stderr.is_empty(), "{args:?}");
    }
}

#[test]
fn assert_pass_exits_1_on_failure_and_0_otherwise() {
    let fail = oqs(&["analyze", "--model", "eternal", "--criteria", "divisibility", "--assert-pass"]);
    assert_eq!(code(&fail), 1);
    // the report is still written before the failing exit
    let v: Value = serde_json::from_slice(&fail.stdout).unwrap();
    assert_eq!(verdict(&v, "divisibility"), "fail");
    let pass = oqs(&["analyze", "--model", "eternal", "--criteria", "distinguishability", "--assert-pass"]);
    assert_eq!(code(&pass), 0);
    let without = oqs(&["analyze", "--model", "eternal", "--criteria", "divisibility"]);
    assert_eq!(code(&without), 0);
}

#[test]
fn negative_rate_unravelling_exits_1() {
    let o = oqs(&["mcwf", "--model", "eternal", "--trajectories", "5"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("negative rate"));
    let p = oqs(&["mcsm", "--model", "poisson", "--param", "rate=-1", "--trajectories", "5"]);
    assert_eq!(code(&p), 1);
}

#[test]
fn mcwf_decay_is_within_three_sigma() {
    let v = json(&oqs(&["mcwf", "--model", "decay", "--trajectories", "5000", "--seed", "7"]));
    assert_valid(&v);
    let s = &v["summary"];
    assert_eq!(s["sigma_defined"], true);
    assert_eq!(s["within_3_sigma"], true);
    assert!(s["max_deviation"].as_f64().unwrap() < 0.05);
}

#[test]
fn single_trajectory_has_undefined_sigma_and_no_verdict() {
    let v = json(&oqs(&["mcwf", "--model", "decay", "--trajectories", "1"]));
    assert_valid(&v);
    assert_eq!(v["summary"]["sigma_defined"], false);
    assert!(v["summary"]["standard_error"].is_null());
    assert!(v["summary"]["within_3_sigma"].is_null());
}

#[test]
fn ou_moments_track_the_analytic_values() {
    let v = json(&oqs(&["mcsm", "--model", "ou", "--trajectories", "2000", "--seed", "4"]));
    assert_valid(&v);
    assert_eq!(v["summary"]["within_3_sigma"], true);
    let last = v["summary"]["moments"].as_array().unwrap().last().unwrap().clone();
    let exact_var = (1.0 - (-2.0f64).exp()) / 2.0;
    assert!((last["analytic_variance"].as_f64().unwrap() - exact_var).abs() < 1e-15);
}

#[test]
fn csv_outputs_put_time_first_and_split_complex_parts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("decay.csv");
    let paths = dir.path().join("paths.csv");
    let o = oqs(&[
        "mcwf", "--model", "decay", "--trajectories", "20", "--format", "csv",
        "--out", out.to_str().unwrap(), "--paths", paths.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    let text = std::fs::read_to_string(&out).unwrap();
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    assert_eq!(header[0], "time");
    assert!(header.contains(&"rho_10_re_mean") && header.contains(&"rho_10_im_mean"));
    assert_eq!(text.lines().count(), 1 + 4);
    let summary: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("decay.csv.summary.json")).unwrap()).unwrap();
    assert_valid(&summary);
    assert!(std::fs::read_to_string(&paths).unwrap().starts_with("time,trajectory"));

    let a = oqs(&["analyze", "--model", "eternal", "--criteria", "divisibility", "--format", "csv"]);
    assert_eq!(code(&a), 0);
    let first = String::from_utf8(a.stdout).unwrap().lines().next().unwrap().to_string();
    assert!(first.starts_with("criterion,verdict"));

    let e = oqs(&["export", "--model", "iid", "--format", "csv"]);
    assert_eq!(code(&e), 0);
    let text = String::from_utf8(e.stdout).unwrap();
    let header = text.lines().next().unwrap();
    assert!(header.starts_with("x(t=0),") && header.ends_with(",probability"), "{header}");
}

#[test]
fn config_file_is_overridden_by_flags_and_seed_falls_back_to_env() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, r#"{"model": "decay", "trajectories": 30, "grid": [0, 0.5], "params": {"gamma": 1.0}}"#).unwrap();
    let c = cfg.to_str().unwrap();

    let base = json(&oqs(&["mcwf", "--config", c]));
    assert_valid(&base);
    assert_eq!(base["config"]["trajectories"], 30);
    assert_eq!(base["config"]["params"]["gamma"], 1.0);
    assert!(base["config"].get("seed").is_none());

    let over = json(&oqs(&["mcwf", "--config", c, "--trajectories", "12", "--param", "gamma=3"]));
    assert_eq!(over["config"]["trajectories"], 12);
    assert_eq!(over["config"]["params"]["gamma"], 3.0);

    let run_env = |seed: &str| {
        Command::new(env!("CARGO_BIN_EXE_oqs"))
            .args(["mcwf", "--config", c])
            .env("OQS_SEED", seed)
            .output()
            .unwrap()
    };
    let e = run_env("42");
    let v = json(&e);
    assert_eq!(v["config"]["seed"], 42);
    assert_eq!(v["summary"]["seed"], 42);
    assert_eq!(e.stdout, run_env("42").stdout);
    assert_ne!(e.stdout, run_env("43").stdout);
    let flag = json(&Command::new(env!("CARGO_BIN_EXE_oqs")).args(["mcwf", "--config", c, "--seed", "1"]).env("OQS_SEED", "42").output().unwrap());
    assert_eq!(flag["config"]["seed"], 1);
    assert_eq!(code(&run_env("not-a-number")), 2);

    std::fs::write(&cfg, r#"{"model": "decay", "colour": "blue"}"#).unwrap();
    assert_eq!(code(&oqs(&["mcwf", "--config", c])), 2);
}

#[test]
fn out_flag_writes_the_same_bytes_as_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.json");
    let args = ["analyze", "--model", "collision", "--criteria", "composability,qrf"];
    let stdout = oqs(&args).stdout;
    let mut with_out = args.to_vec();
    with_out.extend(["--out", out.to_str().unwrap()]);
    let o = oqs(&with_out);
    assert_eq!(code(&o), 0);
    assert!(o.stdout.is_empty());
    assert_eq!(std::fs::read(&out).unwrap(), stdout);
}

#[test]
fn jobs_does_not_change_results() {
    let a = oqs(&["hierarchy", "--model", "collision", "--jobs", "1"]);
    let b = oqs(&["hierarchy", "--model", "collision", "--jobs", "3"]);
    let (va, vb) = (json(&a), json(&b));
    assert_eq!(va["reports"], vb["reports"]);
}
