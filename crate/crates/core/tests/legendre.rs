use dcl_core::legendre::{
    gamma_table, legendre_poly_eval, lemma1_minimizer, lemma1_numeric_oracle, lemma_suite, m_row,
    Interval, IntervalRole, TestCurve, MAX_ORDER,
};
use dcl_core::lmi::{build_layout, sample_zeta, AugmentedLayout};
use dcl_core::model::DelayBound;
use dcl_core::quad::{integrate, integrate_vec, DEFAULT_TOL};
use nalgebra::{DMatrix, DVector};
use num_bigint::BigInt;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn big_binomial(n: u64, k: u64) -> BigInt {
    let mut r = BigInt::from(1);
    for i in 0..k {
        r = r * BigInt::from(n - i) / BigInt::from(i + 1);
    }
    r
}

#[test]
fn gamma_matches_big_integers() {
    for order in 0..=5 {
        let g = gamma_table(order);
        for j in 1..=order + 1 {
            for i in 0..j {
                let (i, j) = (i as u64, j as u64);
                let sign = if (j - 1 + i) % 2 == 0 { 1 } else { -1 };
                let want = BigInt::from(sign) * big_binomial(j - 1, i) * big_binomial(j + i - 1, i);
                assert_eq!(
                    BigInt::from(g.get(i as usize, j as usize)),
                    want,
                    "gamma_{i}{j}"
                );
            }
        }
    }
}

#[test]
fn gamma_small_values() {
    let g = gamma_table(2);
    assert_eq!(g.get(0, 1), 1);
    assert_eq!((g.get(0, 2), g.get(1, 2)), (-1, 2));
    assert_eq!((g.get(0, 3), g.get(1, 3), g.get(2, 3)), (1, -6, 6));
}

#[test]
fn shifted_polynomials() {
    for u in [0.0, 0.3, 1.0] {
        assert_eq!(legendre_poly_eval(0, u).unwrap(), 1.0);
    }
    assert_eq!(legendre_poly_eval(1, 0.0).unwrap(), -1.0);
    assert_eq!(legendre_poly_eval(1, 1.0).unwrap(), 1.0);
    assert!(legendre_poly_eval(1, 1.5).is_err());
    for i in 0..=4 {
        for j in 0..=4 {
            let v = integrate(
                |u| legendre_poly_eval(i, u).unwrap() * legendre_poly_eval(j, u).unwrap(),
                0.0,
                1.0,
                DEFAULT_TOL,
            )
            .unwrap();
            if i == j {
                assert!((v - 1.0 / (2 * i + 1) as f64).abs() < 1e-10);
            } else {
                assert!(v.abs() < 1e-10, "<p{i}, p{j}> = {v}");
            }
        }
    }
}

fn terms(row: &[(usize, f64)]) -> Vec<(usize, f64)> {
    let mut t = row.to_vec();
    t.sort_by_key(|&(b, _)| b);
    t
}

#[test]
fn printed_row_examples() {
    let (m, k) = (3, 2);
    let layout = build_layout(m, 1, 2).unwrap();
    let g = gamma_table(2);

    let lower = IntervalRole::new(Interval::Lower, k);
    let (m1, m2) = m_row(lower, 1, &g, &layout).unwrap();
    assert_eq!(terms(&m1.terms), vec![(1, 1.0), (1 + k, -1.0)]);
    assert_eq!(m1.length, None);
    assert_eq!(terms(&m2.terms), vec![(1 + 3 * m + k, 1.0)]);
    assert_eq!(m2.length, Some(lower));

    let (m3, m4) = m_row(lower, 2, &g, &layout).unwrap();
    assert_eq!(
        terms(&m3.terms),
        vec![(1, 1.0), (1 + k, 1.0), (1 + 3 * m + k, -2.0)]
    );
    assert_eq!(
        terms(&m4.terms),
        vec![(1 + 3 * m + k, -1.0), (1 + 4 * m + k, 2.0)]
    );

    let upper = IntervalRole::new(Interval::Upper, k);
    let (m1, _) = m_row(upper, 1, &g, &layout).unwrap();
    assert_eq!(
        terms(&m1.terms),
        vec![(1 + m + k, -1.0), (1 + 2 * m + k, 1.0)]
    );

    // the top even row needs a moment the layout does not carry
    let (_, top) = m_row(lower, 3, &g, &layout).unwrap();
    assert!(top.is_zero());
    assert!(m_row(lower, 0, &g, &layout).is_err());
    assert!(m_row(lower, 4, &g, &layout).is_err());
}

fn random_instance(rng: &mut ChaCha8Rng, m: usize) -> (Vec<DelayBound>, Vec<f64>, f64) {
    let bounds: Vec<DelayBound> = (0..m)
        .map(|_| {
            let l = rng.gen_range(0.0..0.8);
            DelayBound::new(l, l + rng.gen_range(0.05..1.0))
        })
        .collect();
    let taus = bounds
        .iter()
        .map(|b| rng.gen_range(b.lower..=b.upper))
        .collect();
    (bounds, taus, rng.gen_range(-1.0..1.0))
}

/// Checks every row of every role against `int p_{j-1} z'` and `int p_{j-1} z`.
fn check_rows(layout: &AugmentedLayout, curve: &TestCurve, rng: &mut ChaCha8Rng) -> f64 {
    let g = gamma_table(layout.order);
    let (bounds, taus, t) = random_instance(rng, layout.agents);
    let z = |s: f64| curve.value(s);
    let zeta = sample_zeta(layout, &bounds, &taus, t, &z, DEFAULT_TOL).unwrap();
    let mut worst: f64 = 0.0;
    for k in 1..=layout.agents {
        for iv in Interval::ALL {
            let role = IntervalRole::new(iv, k);
            let (a, b) = role.endpoints(t, &bounds[k - 1], taus[k - 1]);
            if b - a < 1e-9 {
                continue;
            }
            for j in 1..=layout.order + 1 {
                let (odd, even) = m_row(role, j, &g, layout).unwrap();
                let p = |s: f64| {
                    legendre_poly_eval(j - 1, ((s - a) / (b - a)).clamp(0.0, 1.0)).unwrap()
                };
                let want_odd =
                    integrate_vec(|s| curve.deriv(s) * p(s), a, b, layout.dim, DEFAULT_TOL)
                        .unwrap();
                worst = worst.max((odd.apply(layout, &zeta, b - a) - want_odd).amax());
                if j <= layout.order {
                    let want_even =
                        integrate_vec(|s| curve.value(s) * p(s), a, b, layout.dim, DEFAULT_TOL)
                            .unwrap();
                    worst = worst.max((even.apply(layout, &zeta, b - a) - want_even).amax());
                }
            }
        }
    }
    worst
}

#[test]
fn rows_reproduce_their_integrals() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for order in 1..=3 {
        let layout = build_layout(2, 2, order).unwrap();
        for _ in 0..8 {
            let deg = rng.gen_range(0..=6);
            let curve = TestCurve::random(&mut rng, layout.dim, deg, true);
            let err = check_rows(&layout, &curve, &mut rng);
            assert!(err < 1e-9, "N = {order}: error {err:e}");
        }
    }
}

#[test]
fn constant_curve_with_zero_y() {
    let g = gamma_table(1);
    let curve = TestCurve::polynomial(vec![vec![0.7], vec![-1.2]]);
    let r = DMatrix::from_fn(4, 4, |i, j| if i == j { 2.0 } else { 0.1 });
    let y = vec![DMatrix::zeros(8, 2); 3];
    let s = lemma1_numeric_oracle(&g, 1, 0.0, 1.0, &curve, &r, &y).unwrap();
    let zv = DVector::from_vec(vec![0.7, -1.2]);
    let r22 = r.view((2, 2), (2, 2));
    assert!((s.lhs + (zv.transpose() * r22 * &zv)[(0, 0)]).abs() < 1e-12);
    assert_eq!(s.rhs, 0.0);
    assert!(s.holds(0.0));
}

#[test]
fn linear_curve_value() {
    let g = gamma_table(1);
    let curve = TestCurve::polynomial(vec![vec![0.0, 1.0]]);
    let r = DMatrix::identity(2, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let y: Vec<_> = (0..3)
        .map(|_| DMatrix::from_fn(4, 1, |_, _| rng.gen_range(-1.0..1.0)))
        .collect();
    let s = lemma1_numeric_oracle(&g, 1, 0.0, 1.0, &curve, &r, &y).unwrap();
    assert!((s.lhs + 4.0 / 3.0).abs() < 1e-12);
    assert!(s.rhs >= -4.0 / 3.0 - 1e-12);
}

#[test]
fn minimiser_is_tight_up_to_degree_n() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for order in 1..=3 {
        let g = gamma_table(order);
        let (a, b) = (-0.4, 0.9);
        let r = DMatrix::from_fn(2, 2, |i, j| if i == j { 1.5 } else { 0.4 });
        let full = lemma1_minimizer(&g, order, 1, b - a, &r, true).unwrap();
        let curve = TestCurve::random(&mut rng, 1, order, false);
        let s = lemma1_numeric_oracle(&g, order, a, b, &curve, &r, &full).unwrap();
        assert!(
            (s.rhs - s.lhs).abs() < 1e-8,
            "N = {order}: gap {:e}",
            s.rhs - s.lhs
        );

        let printed = lemma1_minimizer(&g, order, 1, b - a, &r, false).unwrap();
        let curve = TestCurve::random(&mut rng, 1, order - 1, false);
        let s = lemma1_numeric_oracle(&g, order, a, b, &curve, &r, &printed).unwrap();
        assert!((s.rhs - s.lhs).abs() < 1e-8);
    }
}

#[test]
fn suite_at_every_order() {
    for order in 1..=MAX_ORDER {
        let mut rng = ChaCha8Rng::seed_from_u64(order as u64);
        let rep = lemma_suite(&gamma_table(order), order, 10, 1e-8, &mut rng).unwrap();
        assert!(rep.passed(), "N = {order}: {:?}", rep.failures);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn inequality_holds_for_any_y(
        order in 1usize..=2,
        seed in any::<u64>(),
        a in -1.0f64..1.0,
        len in 0.05f64..2.0,
        deg in 0usize..=5,
        wave in any::<bool>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 2;
        let g = gamma_table(order);
        let curve = TestCurve::random(&mut rng, n, deg, wave);
        let l = DMatrix::from_fn(2 * n, 2 * n, |_, _| rng.gen_range(-1.0..1.0));
        let r = &l * l.transpose() + DMatrix::identity(2 * n, 2 * n) * 0.1;
        let blocks = 2 * order + 1 + rng.gen_range(0..=1);
        let y: Vec<_> = (0..blocks)
            .map(|_| DMatrix::from_fn((order + 3) * n, n, |_, _| rng.gen_range(-2.0..2.0)))
            .collect();
        let s = lemma1_numeric_oracle(&g, order, a, a + len, &curve, &r, &y).unwrap();
        prop_assert!(s.holds(1e-8), "lhs {} rhs {}", s.lhs, s.rhs);
    }
}
