use dcl_core::model::{DelayBound, DirectedGraph, MasModel};
use dcl_core::sim::{
    consensus_metric, falsification_sweep, max_step, simulate, DelayProfile, SweepOptions,
    Trajectory,
};
use dcl_core::Error;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn pair(a: f64, bk: f64, bound: DelayBound) -> MasModel {
    let one = |v: f64| DMatrix::from_element(1, 1, v);
    MasModel::new(
        one(a),
        one(1.0),
        one(bk),
        DirectedGraph::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap(),
        vec![bound; 2],
    )
    .unwrap()
}

fn scalars(v: &[f64]) -> Vec<DVector<f64>> {
    v.iter().map(|&x| DVector::from_element(1, x)).collect()
}

/// `z' = -2 z(t - tau)` with `z = z0` on `t <= 0`, by the method of steps:
/// `z(t) = z0 sum_{k=0}^{K} (-2)^k (t - (k-1) tau)^k / k!` with `K = floor(t / tau) + 1`.
fn steps_solution(z0: f64, tau: f64, t: f64) -> f64 {
    let terms = (t / tau).floor() as i32 + 1;
    let mut sum = 0.0;
    let mut fact = 1.0;
    for k in 0..=terms {
        if k > 0 {
            fact *= k as f64;
        }
        let s = t - (k - 1) as f64 * tau;
        if s > 0.0 || k == 0 {
            sum += (-2.0f64).powi(k) * s.powi(k) / fact;
        }
    }
    z0 * sum
}

fn error_at_end(traj: &Trajectory) -> f64 {
    let last = traj.len() - 1;
    traj.error_state(last)[0]
}

#[test]
fn constant_delay_matches_method_of_steps() {
    let tau = 0.3;
    let model = pair(0.0, 1.0, DelayBound::new(tau, tau));
    let prof = vec![DelayProfile::constant(model.bounds[0], tau).unwrap(); 2];
    let traj = simulate(&model, &prof, &scalars(&[1.0, -0.5]), 2.4, 0.01).unwrap();
    for i in (0..traj.len()).step_by(20) {
        let want = steps_solution(1.5, tau, traj.time(i));
        assert!(
            (traj.error_state(i)[0] - want).abs() < 1e-7,
            "t = {}",
            traj.time(i)
        );
    }
    // the average is invariant for a symmetric pair
    let last = traj.len() - 1;
    assert!((traj.agent(last, 0)[0] + traj.agent(last, 1)[0] - 0.5).abs() < 1e-12);
}

#[test]
fn fourth_order_convergence() {
    let tau = 0.3;
    let model = pair(0.0, 1.0, DelayBound::new(tau, tau));
    let prof = vec![DelayProfile::constant(model.bounds[0], tau).unwrap(); 2];
    let exact = steps_solution(1.5, tau, 2.4);
    let err = |h: f64| {
        let traj = simulate(&model, &prof, &scalars(&[1.0, -0.5]), 2.4, h).unwrap();
        (error_at_end(&traj) - exact).abs()
    };
    let ratio = err(0.03) / err(0.015);
    assert!((12.0..=20.0).contains(&ratio), "ratio {ratio}");
}

#[test]
fn undelayed_pair_decays_exponentially() {
    let model = pair(0.0, 1.0, DelayBound::new(0.0, 0.0));
    let prof = vec![DelayProfile::constant(model.bounds[0], 0.0).unwrap(); 2];
    let traj = simulate(&model, &prof, &scalars(&[2.0, 1.0]), 3.0, 1e-3).unwrap();
    for i in (0..traj.len()).step_by(250) {
        let want = (-2.0 * traj.time(i)).exp();
        assert!((traj.error_state(i)[0] - want).abs() < 1e-6);
    }
}

/// `exp(A t)` by scaling, a Taylor series and squaring.
fn expm(a: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    let n = a.nrows();
    let m = a * t;
    let norm = m.abs().row_sum().max();
    let s = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let m = m / 2f64.powi(s);
    let mut term = DMatrix::identity(n, n);
    let mut sum = term.clone();
    for k in 1..30 {
        term = &term * &m / k as f64;
        sum += &term;
    }
    for _ in 0..s {
        sum = &sum * &sum;
    }
    sum
}

#[test]
fn uncoupled_agents_follow_the_matrix_exponential() {
    let a = DMatrix::from_row_slice(2, 2, &[-0.3, 1.1, -0.8, -0.1]);
    let z = DMatrix::zeros(2, 2);
    let adj = vec![
        vec![0.0, 1.0, 0.0],
        vec![0.0, 0.0, 1.0],
        vec![1.0, 0.0, 0.0],
    ];
    let bound = DelayBound::new(0.1, 0.4);
    let model = MasModel::new(
        a.clone(),
        z.clone(),
        z,
        DirectedGraph::from_rows(&adj).unwrap(),
        vec![bound; 3],
    )
    .unwrap();
    let prof: Vec<_> = (1..=3)
        .map(|k| DelayProfile::default_sinusoid(bound, k).unwrap())
        .collect();
    let x0 = vec![
        DVector::from_vec(vec![1.0, 0.0]),
        DVector::from_vec(vec![-0.4, 2.0]),
        DVector::from_vec(vec![0.3, -1.0]),
    ];
    let traj = simulate(&model, &prof, &x0, 5.0, 0.005).unwrap();
    let e = expm(&a, 5.0);
    for (k, x) in traj.final_states().iter().enumerate() {
        assert!((x - &e * &x0[k]).amax() < 1e-9, "agent {}", k + 1);
    }
}

#[test]
fn profiles_stay_in_bounds() {
    let b = DelayBound::new(0.05, 0.35);
    let profiles = [
        DelayProfile::sinusoid(b, 3.7, 0.2).unwrap(),
        DelayProfile::default_sinusoid(b, 4).unwrap(),
        DelayProfile::piecewise_linear(b, vec![(0.0, 0.05), (1.0, 0.35), (2.5, 0.1)]).unwrap(),
        DelayProfile::constant(b, 0.35).unwrap(),
    ];
    for p in &profiles {
        for i in 0..100_000 {
            let tau = p.eval(i as f64 * 1e-3);
            assert!(
                tau >= b.lower && tau <= b.upper,
                "{p:?} at sample {i}: {tau}"
            );
        }
    }
    assert!(DelayProfile::constant(b, 0.4).is_err());
    assert!(DelayProfile::piecewise_linear(b, vec![(0.0, 0.1), (0.0, 0.2)]).is_err());
}

#[test]
fn step_precondition() {
    assert_eq!(max_step(&[DelayBound::new(0.0, 1.0)]), None);
    assert_eq!(
        max_step(&[DelayBound::new(0.3, 1.0), DelayBound::new(0.1, 0.2)]),
        Some(0.01)
    );
    assert_eq!(max_step(&[DelayBound::new(1e-4, 1.0)]), Some(1e-3));
    let model = pair(0.0, 1.0, DelayBound::new(0.2, 0.3));
    let prof = vec![DelayProfile::constant(model.bounds[0], 0.25).unwrap(); 2];
    assert!(simulate(&model, &prof, &scalars(&[1.0, 0.0]), 1.0, 0.05).is_err());
    assert!(simulate(&model, &prof, &scalars(&[1.0, 0.0]), 1.0, 0.003).is_err());
    assert!(simulate(&model, &prof, &scalars(&[1.0, 0.0]), 1.0, 0.02).is_ok());
}

#[test]
fn unstable_delays_are_flagged() {
    // z' = z - 2 z(t - tau) is unstable for every tau in [1, 1.5]
    let bound = DelayBound::new(1.0, 1.5);
    let model = pair(1.0, 1.0, bound);
    let opts = SweepOptions {
        trials: 4,
        h: 0.01,
        ..SweepOptions::default()
    };
    let rep = falsification_sweep(&model, &[bound; 2], &opts).unwrap();
    assert_eq!(rep.falsifications().len(), 4);
    assert!(rep.outcomes.iter().all(|o| o.final_metric > 1.0));

    let prof = vec![DelayProfile::constant(bound, 1.5).unwrap(); 2];
    match simulate(&model, &prof, &scalars(&[1.0, 0.0]), 2000.0, 0.1) {
        Err(Error::Diverged { time }) => assert!(time > 0.0),
        other => panic!("expected divergence, got {:?}", other.map(|t| t.len())),
    }
}

#[test]
fn sweep_is_independent_of_thread_count() {
    let bound = DelayBound::new(0.0, 0.3);
    let model = pair(0.0, 1.0, bound);
    let run = |jobs| {
        let opts = SweepOptions {
            trials: 6,
            seed: 17,
            horizon: 5.0,
            h: 0.01,
            jobs,
            ..SweepOptions::default()
        };
        falsification_sweep(&model, &[bound; 2], &opts).unwrap()
    };
    let (a, b) = (run(1), run(3));
    assert_eq!(a, b);
    assert!(a.outcomes.windows(2).all(|w| w[0].omegas != w[1].omegas));
}

#[test]
fn csv_output_is_reproducible() {
    let bound = DelayBound::new(0.0, 0.2);
    let model = pair(0.0, 1.0, bound);
    let prof: Vec<_> = (1..=2)
        .map(|k| DelayProfile::default_sinusoid(bound, k).unwrap())
        .collect();
    let write = || {
        let traj = simulate(&model, &prof, &scalars(&[1.0, -1.0]), 1.0, 0.01).unwrap();
        let mut a = Vec::new();
        traj.write_csv(&mut a).unwrap();
        let mut b = Vec::new();
        traj.write_metric_csv(&mut b).unwrap();
        (a, b)
    };
    let (t1, m1) = write();
    let (t2, m2) = write();
    assert_eq!(t1, t2);
    assert_eq!(m1, m2);
    let text = String::from_utf8(t1).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,agent,dim,value"));
    assert_eq!(text.lines().count(), 1 + 101 * 2);
    assert!(String::from_utf8(m1).unwrap().starts_with("t,metric\n"));
}

#[test]
fn example_two_network_reaches_consensus() {
    let a = DMatrix::from_row_slice(2, 2, &[-0.5, -0.6, 0.2, -0.5]);
    let b = DMatrix::from_row_slice(2, 2, &[0.8, -0.1, -1.2, 0.3]);
    let k = DMatrix::from_row_slice(2, 2, &[3.0, -0.5, -0.5, 2.0]);
    let mut adj = vec![vec![0.0; 4]; 4];
    for i in 0..3 {
        adj[i][i + 1] = 1.0;
    }
    let bounds: Vec<_> = [0.3, 0.2, 0.2, 0.1]
        .iter()
        .map(|&u| DelayBound::new(0.0, u))
        .collect();
    let model = MasModel::new(
        a,
        b,
        k,
        DirectedGraph::from_rows(&adj).unwrap(),
        bounds.clone(),
    )
    .unwrap();
    let prof: Vec<_> = bounds
        .iter()
        .enumerate()
        .map(|(i, &b)| DelayProfile::default_sinusoid(b, i + 1).unwrap())
        .collect();
    let x0: Vec<_> = [[-2.0, 4.0], [10.0, 5.0], [-5.0, -5.0], [7.0, -8.0]]
        .iter()
        .map(|x| DVector::from_column_slice(x))
        .collect();
    let traj = simulate(&model, &prof, &x0, 30.0, 1e-3).unwrap();
    let d = consensus_metric(&traj);
    assert!(*d.last().unwrap() < 1e-2);
    for x in traj.final_states() {
        assert!(x.amax() < 0.1, "{x}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn sinusoids_respect_any_bound(lower in 0.0f64..2.0, width in 0.0f64..2.0, omega in 0.01f64..20.0, phase in -10.0f64..10.0, t in 0.0f64..1e4) {
        let b = DelayBound::new(lower, lower + width);
        let p = DelayProfile::sinusoid(b, omega, phase).unwrap();
        let tau = p.eval(t);
        prop_assert!(tau >= b.lower && tau <= b.upper);
    }

    #[test]
    fn metric_is_shift_invariant(shift in -5.0f64..5.0, x1 in -2.0f64..2.0, x2 in -2.0f64..2.0) {
        let bound = DelayBound::new(0.0, 0.1);
        let model = pair(0.0, 1.0, bound);
        let prof = vec![DelayProfile::constant(bound, 0.1).unwrap(); 2];
        let d = |s: f64| {
            let traj = simulate(&model, &prof, &scalars(&[x1 + s, x2 + s]), 0.5, 0.01).unwrap();
            consensus_metric(&traj)
        };
        for (u, v) in d(0.0).iter().zip(d(shift)) {
            prop_assert!((u - v).abs() < 1e-9);
        }
    }
}
