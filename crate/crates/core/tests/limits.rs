//! Strict forms of checks that a faithful implementation cannot meet.
//! Each is ignored by default; run with `cargo test --test limits -- --ignored`
//! to see the measured values fail.

use oqs_core::classical::{blockwise_counterexample, check_crf};
use oqs_core::criteria::{check_qrf, Verdict};
use oqs_core::models::*;
use oqs_core::quantum_core::{pauli, PureState};
use oqs_core::superop::{canonical_decompose, generator_from_maps};

fn afl_grid() -> RegisterModel {
    RegisterModel::afl_grid(1.0, 2.0, AFL_GRID_POINTS, AFL_GRID_CUTOFF, AFL_MAX_QUADRATURE_ERROR).unwrap()
}

#[test]
#[ignore = "4001-point grid error is about 1e-3"]
fn discretized_afl_qrf_within_1e5() {
    let ts = [0.0, 0.2, 0.5, 1.0];
    let mut tp = vec![];
    for (i, &a) in ts.iter().enumerate() {
        for &b in &ts[i + 1..] {
            tp.push((a, b));
        }
    }
    let r = check_qrf(&afl_grid(), &pauli::all(), &tp, 1e-5).unwrap();
    assert_eq!(r.verdict, Verdict::Pass, "residual {:?}", r.violation());
}

#[test]
#[ignore = "4001-point grid error is about 1e-3"]
fn discretized_afl_map_within_1e5() {
    let g = afl_grid();
    let rho = PureState::plus().to_density();
    for t in [0.1, 0.25, 0.5, 1.0, 2.0] {
        let out = dynamical_map(&g, 0.0, t).unwrap().apply(rho.mat());
        let err = (2.0 * out[(0, 1)].re - (-2.0 * t).exp()).abs();
        assert!(err <= 1e-5, "t = {t}: error {err:.3e}");
    }
}

#[test]
#[ignore = "the printed post-replacement coefficient has the wrong sign; the exact rate stays positive"]
fn tam_post_replacement_rate_matches_printed_formula() {
    let m = TamModel::new();
    let post = |t: f64| replacement_map(&m, 1.0, t, &m.env_state());
    for k in 1..=8 {
        let t = 1.0 + 0.25 * k as f64;
        let est = generator_from_maps(&post, t, 1e-4, 1e8).unwrap();
        let g = canonical_decompose(&est.generator, 1e-6).unwrap().rates[0] / 2.0;
        let printed = tam_post_replacement_rate(1.0, t);
        assert!((g - printed).abs() <= 1e-3, "t = {t}: rate {g:.5} vs printed {printed:.5}");
    }
}

#[test]
#[ignore = "with x0 independent of the blocks, CRF_2 holds for every block law"]
fn block_4_2_violates_crf2() {
    let p = blockwise_counterexample(4, 2, &[1.0], 2, &[0.5, 0.5]).unwrap();
    let r = check_crf(&p, 2, 1e-12).unwrap();
    assert_eq!(r.verdict, Verdict::Fail, "violation {:?}", r.violation());
}
