use dcl_core::lmi::Method;
use dcl_core::model::{DelayBound, DirectedGraph, MasModel};
use dcl_core::sdp::{parse_sdpa, write_sdpa, Backend, Status};
use dcl_core::search::{
    build_problem, check, max_scaled_delay, max_uniform_delay, search_scaled, search_uniform,
    verify_bracket, AnalysisOptions, LmiOracle, PredicateOracle, SearchMode, SearchOptions,
};
use nalgebra::DMatrix;
use proptest::prelude::*;

/// Certified `tau_u` of the scalar pair, theorem N = 1, `tau_l = 0`, tol 1e-3.
const PAIR_TAU_U: f64 = 0.6946416015625;

fn pair(upper: f64) -> MasModel {
    let one = |v: f64| DMatrix::from_element(1, 1, v);
    MasModel::new(
        one(0.0),
        one(1.0),
        one(1.0),
        DirectedGraph::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap(),
        vec![DelayBound::new(0.0, upper); 2],
    )
    .unwrap()
}

fn builtin(method: Method, order: usize) -> AnalysisOptions {
    let mut o = AnalysisOptions::new(method, order);
    o.solve.backend = Backend::Builtin;
    o
}

#[test]
fn scalar_pair_bisection() {
    let model = pair(0.1);
    let opts = builtin(Method::Theorem, 1);
    let cert = max_uniform_delay(&model, &opts, 0.0, &SearchOptions::default()).unwrap();
    let v = cert.value.unwrap();
    assert!((v - PAIR_TAU_U).abs() < 1e-9, "{v}");
    // constant delays are admissible, and z' = -2 z(t - tau) loses stability at pi / 4
    assert!(v < std::f64::consts::FRAC_PI_4);
    assert!(!cert.degraded);
    assert_eq!(cert.mode, SearchMode::UniformUpper);
    assert_eq!(cert.bounds, vec![DelayBound::new(0.0, v); 2]);
    assert!(cert.margin > 1e-7);

    let mut oracle = LmiOracle {
        model: &model,
        options: opts,
    };
    let br = verify_bracket(&mut oracle, &cert, None).unwrap();
    assert!(br.sound(), "{br:?}");

    let mut csv = Vec::new();
    cert.write_history_csv(&mut csv).unwrap();
    let csv = String::from_utf8(csv).unwrap();
    assert!(csv.starts_with("probe,value,status,margin,flagged\n"));
    assert_eq!(csv.lines().count(), cert.queries() + 1);
}

#[test]
fn scaled_search_agrees_with_uniform() {
    let model = pair(0.5);
    let opts = builtin(Method::Theorem, 1);
    let tol = SearchOptions {
        tol: 2e-3,
        hi0: 1.0,
    };
    let cert = max_scaled_delay(&model, &opts, &model.bounds, &tol).unwrap();
    let s = cert.value.unwrap();
    assert!(
        (0.5 * s - PAIR_TAU_U).abs() < 2.0 * 0.5 * tol.tol + 1e-3,
        "{s}"
    );
    assert_eq!(cert.mode, SearchMode::Scale);
}

#[test]
fn certificates_are_deterministic() {
    let model = pair(0.4);
    let opts = builtin(Method::Theorem, 1);
    let a = check(&model, &opts).unwrap();
    let b = check(&model, &opts).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.report.status, Status::Feasible);
}

#[test]
fn sdpa_export_round_trips() {
    let model = pair(0.4);
    for (method, order) in [(Method::Theorem, 1), (Method::Corollary, 2)] {
        let built = build_problem(&model, &builtin(method, order)).unwrap();
        let text = write_sdpa(&built.standard).unwrap();
        assert_eq!(text, write_sdpa(&built.standard).unwrap());
        let back = parse_sdpa(&text).unwrap();
        assert_eq!(back, built.standard);
        assert_eq!(write_sdpa(&back).unwrap(), text);
    }
}

#[test]
fn coarse_search_query_budget() {
    let model = pair(0.1);
    let opts = builtin(Method::Corollary, 1);
    let coarse = SearchOptions { tol: 0.1, hi0: 1.0 };
    let cert = max_uniform_delay(&model, &opts, 0.0, &coarse).unwrap();
    assert!(cert.queries() <= 12, "{}", cert.queries());
    assert!(cert.value.unwrap() <= PAIR_TAU_U + 0.1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn predicate_bisection_brackets_the_limit(limit in 0.01f64..40.0, tol in 1e-4f64..0.05, hi0 in 0.05f64..2.0) {
        prop_assume!(limit < 64.0 * hi0 - tol);
        let mut oracle = PredicateOracle(|b: &[DelayBound]| b.iter().all(|d| d.upper <= limit));
        let opts = SearchOptions { tol, hi0 };
        let cert = search_uniform(&mut oracle, 3, Method::Theorem, 1, 0.0, &opts).unwrap();
        match cert.value {
            Some(v) => {
                prop_assert!(v <= limit);
                prop_assert!(limit - v <= tol + 1e-12);
            }
            None => prop_assert!(limit < tol),
        }
    }

    #[test]
    fn scaled_predicate_is_monotone(limit in 0.1f64..10.0, w1 in 0.1f64..1.0, w2 in 0.1f64..1.0) {
        let template = [DelayBound::new(0.0, w1), DelayBound::new(0.0, w2)];
        let mut oracle = PredicateOracle(|b: &[DelayBound]| b.iter().all(|d| d.upper <= limit));
        let cert = search_scaled(&mut oracle, Method::Corollary, 1, &template, &SearchOptions { tol: 1e-3, hi0: 1.0 }).unwrap();
        let s = cert.value.unwrap();
        let exact = limit / w1.max(w2);
        prop_assert!(s <= exact && exact - s <= 1e-3 + 1e-12);
        for p in &cert.history {
            prop_assert_eq!(p.accepted(), p.value * w1.max(w2) <= limit);
        }
    }
}
