//! Fixed-step simulation of the delayed agent network.
//!
//! Agent `k` evolves as `x_k' = A x_k - BK sum_l a_kl (x_k - x_l)(t - tau_k(t))`.
//! The state history is kept on the integration grid together with the
//! right-hand side at every grid point, so delayed reads can use cubic
//! Hermite interpolation.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DelayBound, MasModel};

pub const DEFAULT_STEP: f64 = 1e-3;
pub const DEFAULT_HORIZON: f64 = 30.0;
/// Smallest delay scale used when bounding the step by the lower delay bounds.
pub const STEP_FLOOR: f64 = 1e-2;
/// `d(horizon)` below this counts as consensus.
pub const CONSENSUS_THRESHOLD: f64 = 1e-2;

/// A realised delay signal `tau_k(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DelayProfile {
    Constant {
        tau: f64,
    },
    /// `lower + (upper - lower)/2 (1 + sin(omega t + phase))`.
    Sinusoid {
        lower: f64,
        upper: f64,
        omega: f64,
        phase: f64,
    },
    /// Linear interpolation through `(t, tau)` knots, held constant outside.
    PiecewiseLinear {
        points: Vec<(f64, f64)>,
    },
}

impl DelayProfile {
    pub fn constant(bound: DelayBound, tau: f64) -> Result<Self> {
        let p = DelayProfile::Constant { tau };
        p.check(&bound)?;
        Ok(p)
    }

    pub fn sinusoid(bound: DelayBound, omega: f64, phase: f64) -> Result<Self> {
        let p = DelayProfile::Sinusoid {
            lower: bound.lower,
            upper: bound.upper,
            omega,
            phase,
        };
        p.check(&bound)?;
        Ok(p)
    }

    pub fn piecewise_linear(bound: DelayBound, points: Vec<(f64, f64)>) -> Result<Self> {
        let p = DelayProfile::PiecewiseLinear { points };
        p.check(&bound)?;
        Ok(p)
    }

    /// The default realisation for agent `k` (1-based): `omega = 1 + 0.3k`, `phase = k`.
    pub fn default_sinusoid(bound: DelayBound, k: usize) -> Result<Self> {
        Self::sinusoid(bound, 1.0 + 0.3 * k as f64, k as f64)
    }

    /// Checks that every value the profile can take lies in `bound`.
    pub fn check(&self, bound: &DelayBound) -> Result<()> {
        bound.validate(0)?;
        let inside = |tau: f64| tau.is_finite() && tau >= bound.lower && tau <= bound.upper;
        let ok = match self {
            DelayProfile::Constant { tau } => inside(*tau),
            DelayProfile::Sinusoid {
                lower,
                upper,
                omega,
                phase,
            } => {
                omega.is_finite()
                    && phase.is_finite()
                    && inside(*lower)
                    && inside(*upper)
                    && lower <= upper
            }
            DelayProfile::PiecewiseLinear { points } => {
                !points.is_empty()
                    && points.iter().all(|&(t, tau)| t.is_finite() && inside(tau))
                    && points.windows(2).all(|w| w[0].0 < w[1].0)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Bounds(format!(
                "delay profile {self:?} leaves [{}, {}] or is malformed",
                bound.lower, bound.upper
            )))
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self {
            DelayProfile::Constant { tau } => *tau,
            DelayProfile::Sinusoid {
                lower,
                upper,
                omega,
                phase,
            } => {
                let v = lower + 0.5 * (upper - lower) * (1.0 + (omega * t + phase).sin());
                v.clamp(*lower, *upper)
            }
            DelayProfile::PiecewiseLinear { points } => {
                let first = points[0];
                let last = points[points.len() - 1];
                if t <= first.0 {
                    return first.1;
                }
                if t >= last.0 {
                    return last.1;
                }
                let i = points.partition_point(|p| p.0 <= t) - 1;
                let (t0, v0) = points[i];
                let (t1, v1) = points[i + 1];
                let v = v0 + (v1 - v0) * (t - t0) / (t1 - t0);
                v.clamp(v0.min(v1), v0.max(v1))
            }
        }
    }
}

/// Sampled solution on a uniform grid `t_i = i h`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub h: f64,
    pub horizon: f64,
    pub agents: usize,
    pub state_dim: usize,
    /// Stacked agent states, one vector of length `m n` per sample.
    pub states: Vec<DVector<f64>>,
    pub profiles: Vec<DelayProfile>,
    pub model_hash: u64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.h
    }

    pub fn agent(&self, i: usize, k: usize) -> DVector<f64> {
        self.states[i]
            .rows(k * self.state_dim, self.state_dim)
            .into_owned()
    }

    pub fn final_states(&self) -> Vec<DVector<f64>> {
        let last = self.len() - 1;
        (0..self.agents).map(|k| self.agent(last, k)).collect()
    }

    /// Error state `z_k = x_1 - x_{k+1}` at sample `i`.
    pub fn error_state(&self, i: usize) -> DVector<f64> {
        let n = self.state_dim;
        let mut z = DVector::zeros(n * (self.agents - 1));
        let x1 = self.agent(i, 0);
        for k in 1..self.agents {
            z.rows_mut((k - 1) * n, n)
                .copy_from(&(&x1 - self.agent(i, k)));
        }
        z
    }

    /// CSV with header `t,agent,dim,value`; agents and dims are 1-based.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,agent,dim,value")?;
        for (i, x) in self.states.iter().enumerate() {
            let t = self.time(i);
            for k in 0..self.agents {
                for d in 0..self.state_dim {
                    writeln!(
                        w,
                        "{t:.16e},{},{},{:.16e}",
                        k + 1,
                        d + 1,
                        x[k * self.state_dim + d]
                    )?;
                }
            }
        }
        Ok(())
    }

    /// CSV with header `t,metric`.
    pub fn write_metric_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,metric")?;
        for (i, d) in consensus_metric(self).iter().enumerate() {
            writeln!(w, "{:.16e},{d:.16e}", self.time(i))?;
        }
        Ok(())
    }
}

pub fn model_hash(model: &MasModel) -> u64 {
    let mut h = DefaultHasher::new();
    for m in [&model.a, &model.b, &model.k, model.graph.adjacency()] {
        m.nrows().hash(&mut h);
        m.ncols().hash(&mut h);
        m.iter().for_each(|v| v.to_bits().hash(&mut h));
    }
    for b in &model.bounds {
        b.lower.to_bits().hash(&mut h);
        b.upper.to_bits().hash(&mut h);
    }
    h.finish()
}

/// Largest step accepted for the given bounds; `None` means only `h <= horizon` applies.
pub fn max_step(bounds: &[DelayBound]) -> Option<f64> {
    if bounds.iter().any(|b| b.lower > 0.0) {
        let m = bounds
            .iter()
            .map(|b| b.lower.max(STEP_FLOOR))
            .fold(f64::INFINITY, f64::min);
        Some(m / 10.0)
    } else {
        None
    }
}

struct History {
    h: f64,
    x: Vec<DVector<f64>>,
    f: Vec<DVector<f64>>,
}

impl History {
    fn hermite(&self, i: usize, theta: f64) -> DVector<f64> {
        let (t2, t3) = (theta * theta, theta * theta * theta);
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + theta;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        &self.x[i] * h00
            + &self.f[i] * (h10 * self.h)
            + &self.x[i + 1] * h01
            + &self.f[i + 1] * (h11 * self.h)
    }

    /// State at time `s`. Derivatives may lag the states by one sample; reads
    /// past the last sample with a known derivative extrapolate the final
    /// complete interval.
    fn read(&self, s: f64) -> DVector<f64> {
        if s <= 0.0 {
            return self.x[0].clone();
        }
        let u = s / self.h;
        let i = u.floor();
        let mut theta = u - i;
        let mut i = i as usize;
        if theta > 1.0 - 1e-9 {
            i += 1;
            theta = 0.0;
        }
        if i < self.x.len() && theta < 1e-9 {
            return self.x[i].clone();
        }
        let known = self.f.len();
        if i + 1 < known {
            return self.hermite(i, theta);
        }
        if known < 2 {
            return &self.x[0] + &self.f[0] * s;
        }
        self.hermite(known - 2, u - (known - 2) as f64)
    }
}

struct Network {
    a: DMatrix<f64>,
    bk: DMatrix<f64>,
    adj: DMatrix<f64>,
    m: usize,
    n: usize,
}

impl Network {
    fn new(model: &MasModel) -> Self {
        Self {
            a: model.a.clone(),
            bk: &model.b * &model.k,
            adj: model.graph.adjacency().clone(),
            m: model.agents(),
            n: model.state_dim(),
        }
    }

    fn rhs<F: Fn(usize) -> DVector<f64>>(&self, x: &DVector<f64>, delayed: F) -> DVector<f64> {
        let n = self.n;
        let mut out = DVector::zeros(self.m * n);
        for k in 0..self.m {
            let xk = x.rows(k * n, n);
            let mut dx = &self.a * xk;
            let neighbours: Vec<usize> = (0..self.m).filter(|&l| self.adj[(k, l)] != 0.0).collect();
            if !neighbours.is_empty() {
                let xd = delayed(k);
                let mut diff = DVector::zeros(n);
                for l in neighbours {
                    diff += (xd.rows(k * n, n) - xd.rows(l * n, n)) * self.adj[(k, l)];
                }
                dx -= &self.bk * diff;
            }
            out.rows_mut(k * n, n).copy_from(&dx);
        }
        out
    }
}

/// Integrates the network with classical RK4 from the constant history `x(t) = x0` for `t <= 0`.
pub fn simulate(
    model: &MasModel,
    profiles: &[DelayProfile],
    x0: &[DVector<f64>],
    horizon: f64,
    h: f64,
) -> Result<Trajectory> {
    model.validate()?;
    let m = model.agents();
    let n = model.state_dim();
    if profiles.len() != m {
        return Err(Error::Dimension(format!(
            "expected {m} delay profiles, got {}",
            profiles.len()
        )));
    }
    for (k, (p, b)) in profiles.iter().zip(&model.bounds).enumerate() {
        p.check(b)
            .map_err(|e| Error::Bounds(format!("agent {}: {e}", k + 1)))?;
    }
    if x0.len() != m {
        return Err(Error::Dimension(format!(
            "expected {m} initial states, got {}",
            x0.len()
        )));
    }
    if let Some((k, x)) = x0.iter().enumerate().find(|(_, x)| x.len() != n) {
        return Err(Error::Dimension(format!(
            "initial state of agent {} has length {}, expected {n}",
            k + 1,
            x.len()
        )));
    }
    if x0.iter().any(|x| x.iter().any(|v| !v.is_finite())) {
        return Err(Error::OutOfRange("initial state must be finite".into()));
    }
    if !(h > 0.0 && h.is_finite() && horizon.is_finite() && horizon >= h) {
        return Err(Error::OutOfRange(format!(
            "need 0 < h <= horizon, got h = {h}, horizon = {horizon}"
        )));
    }
    if let Some(hmax) = max_step(&model.bounds) {
        if h > hmax {
            return Err(Error::OutOfRange(format!(
                "step {h} exceeds {hmax} for these delay bounds"
            )));
        }
    }
    let steps = (horizon / h).round();
    if (steps * h - horizon).abs() > 1e-9 * horizon.max(1.0) {
        return Err(Error::OutOfRange(format!(
            "horizon {horizon} is not a multiple of h = {h}"
        )));
    }
    let steps = steps as usize;

    let net = Network::new(model);
    let mut start = DVector::zeros(m * n);
    for k in 0..m {
        start.rows_mut(k * n, n).copy_from(&x0[k]);
    }
    let mut hist = History {
        h,
        x: Vec::with_capacity(steps + 1),
        f: Vec::with_capacity(steps + 1),
    };
    hist.x.push(start);

    let eval = |hist: &History, t: f64, x: &DVector<f64>| {
        net.rhs(x, |k| {
            let tau = profiles[k].eval(t);
            if tau == 0.0 {
                x.clone()
            } else {
                hist.read(t - tau)
            }
        })
    };

    for i in 0..steps {
        let t = i as f64 * h;
        let x = hist.x[i].clone();
        let k1 = eval(&hist, t, &x);
        hist.f.push(k1.clone());
        let k2 = eval(&hist, t + 0.5 * h, &(&x + &k1 * (0.5 * h)));
        let k3 = eval(&hist, t + 0.5 * h, &(&x + &k2 * (0.5 * h)));
        let k4 = eval(&hist, t + h, &(&x + &k3 * h));
        let next = x + (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { time: t + h });
        }
        hist.x.push(next);
    }

    Ok(Trajectory {
        h,
        horizon,
        agents: m,
        state_dim: n,
        states: hist.x,
        profiles: profiles.to_vec(),
        model_hash: model_hash(model),
    })
}

/// `d(t)`: largest Euclidean distance between any two agents.
pub fn consensus_metric(traj: &Trajectory) -> Vec<f64> {
    let n = traj.state_dim;
    traj.states
        .iter()
        .map(|x| {
            let mut d: f64 = 0.0;
            for a in 0..traj.agents {
                for b in a + 1..traj.agents {
                    d = d.max((x.rows(a * n, n) - x.rows(b * n, n)).norm());
                }
            }
            d
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOptions {
    /// Bounds are divided by this factor before sampling; at least 1.
    pub margin_factor: f64,
    pub trials: usize,
    pub seed: u64,
    pub horizon: f64,
    pub h: f64,
    /// Range of the random sinusoid frequencies, rad/s.
    pub omega_range: (f64, f64),
    /// Initial states are drawn uniformly from `[-r, r]` per component.
    pub initial_radius: f64,
    pub threshold: f64,
    pub jobs: usize,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            margin_factor: 1.0,
            trials: 50,
            seed: 0,
            horizon: DEFAULT_HORIZON,
            h: DEFAULT_STEP,
            omega_range: (0.5, 5.0),
            initial_radius: 1.0,
            threshold: CONSENSUS_THRESHOLD,
            jobs: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub trial: usize,
    pub omegas: Vec<f64>,
    pub phases: Vec<f64>,
    /// `d(horizon)`, infinite when the run blew up.
    pub final_metric: f64,
    pub diverged_at: Option<f64>,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SweepReport {
    pub bounds: Vec<DelayBound>,
    pub outcomes: Vec<TrialOutcome>,
}

impl SweepReport {
    pub fn falsifications(&self) -> Vec<&TrialOutcome> {
        self.outcomes.iter().filter(|o| !o.converged).collect()
    }
}

fn run_trial(model: &MasModel, opts: &SweepOptions, trial: usize) -> Result<TrialOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(trial as u64);
    let (lo, hi) = opts.omega_range;
    let mut omegas = Vec::new();
    let mut phases = Vec::new();
    let mut profiles = Vec::new();
    for b in &model.bounds {
        let omega = if hi > lo { rng.gen_range(lo..hi) } else { lo };
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        profiles.push(DelayProfile::sinusoid(*b, omega, phase)?);
        omegas.push(omega);
        phases.push(phase);
    }
    let r = opts.initial_radius;
    let x0: Vec<DVector<f64>> = (0..model.agents())
        .map(|_| DVector::from_fn(model.state_dim(), |_, _| rng.gen_range(-r..=r)))
        .collect();
    let (final_metric, diverged_at) = match simulate(model, &profiles, &x0, opts.horizon, opts.h) {
        Ok(traj) => (*consensus_metric(&traj).last().unwrap(), None),
        Err(Error::Diverged { time }) => (f64::INFINITY, Some(time)),
        Err(e) => return Err(e),
    };
    Ok(TrialOutcome {
        trial,
        omegas,
        phases,
        final_metric,
        diverged_at,
        converged: final_metric < opts.threshold,
    })
}

/// Simulates random sinusoidal delay realisations inside `bounds / margin_factor`
/// and reports every run that fails to reach consensus by the horizon.
pub fn falsification_sweep(
    model: &MasModel,
    bounds: &[DelayBound],
    opts: &SweepOptions,
) -> Result<SweepReport> {
    if !(opts.margin_factor >= 1.0 && opts.margin_factor.is_finite()) {
        return Err(Error::OutOfRange(format!(
            "margin factor must be >= 1, got {}",
            opts.margin_factor
        )));
    }
    if !(opts.omega_range.0 > 0.0 && opts.omega_range.1 >= opts.omega_range.0) {
        return Err(Error::OutOfRange(format!(
            "bad frequency range {:?}",
            opts.omega_range
        )));
    }
    let scaled: Vec<DelayBound> = bounds
        .iter()
        .map(|b| DelayBound::new(b.lower / opts.margin_factor, b.upper / opts.margin_factor))
        .collect();
    let model = model.with_bounds(scaled.clone())?;
    let jobs = opts.jobs.max(1).min(opts.trials.max(1));
    let mut outcomes: Vec<Option<Result<TrialOutcome>>> = (0..opts.trials).map(|_| None).collect();
    std::thread::scope(|s| {
        for (w, chunk) in outcomes
            .chunks_mut(opts.trials.div_ceil(jobs).max(1))
            .enumerate()
        {
            let model = &model;
            let base = w * opts.trials.div_ceil(jobs).max(1);
            s.spawn(move || {
                for (j, slot) in chunk.iter_mut().enumerate() {
                    *slot = Some(run_trial(model, opts, base + j));
                }
            });
        }
    });
    let outcomes = outcomes
        .into_iter()
        .map(|o| o.unwrap())
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepReport {
        bounds: scaled,
        outcomes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DirectedGraph;

    fn pair(a: f64, bounds: DelayBound) -> MasModel {
        MasModel::new(
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DirectedGraph::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap(),
            vec![bounds; 2],
        )
        .unwrap()
    }

    fn scalars(v: &[f64]) -> Vec<DVector<f64>> {
        v.iter().map(|&x| DVector::from_element(1, x)).collect()
    }

    #[test]
    fn piecewise_profile_interpolates_and_holds() {
        let b = DelayBound::new(0.0, 1.0);
        let p =
            DelayProfile::piecewise_linear(b, vec![(0.0, 0.2), (1.0, 0.6), (2.0, 0.0)]).unwrap();
        assert_eq!(p.eval(-1.0), 0.2);
        assert!((p.eval(0.5) - 0.4).abs() < 1e-15);
        assert!((p.eval(1.5) - 0.3).abs() < 1e-15);
        assert_eq!(p.eval(7.0), 0.0);
        assert!(DelayProfile::piecewise_linear(b, vec![(0.0, 1.5)]).is_err());
        assert!(DelayProfile::piecewise_linear(b, vec![(1.0, 0.1), (0.5, 0.1)]).is_err());
        assert!(DelayProfile::constant(b, -0.1).is_err());
    }

    #[test]
    fn history_interpolates_cubics_exactly() {
        let h = 0.1;
        let x: Vec<DVector<f64>> = (0..5)
            .map(|i| DVector::from_element(1, (i as f64 * h).powi(3)))
            .collect();
        let f: Vec<DVector<f64>> = (0..5)
            .map(|i| DVector::from_element(1, 3.0 * (i as f64 * h).powi(2)))
            .collect();
        let hist = History { h, x, f };
        for s in [0.05, 0.13, 0.271, 0.39999] {
            assert!((hist.read(s)[0] - s * s * s).abs() < 1e-14);
        }
        assert!((hist.read(0.43)[0] - 0.43f64.powi(3)).abs() < 1e-13);
        assert_eq!(hist.read(-2.0)[0], 0.0);
    }

    #[test]
    fn rejects_bad_settings() {
        let m = pair(0.0, DelayBound::new(0.1, 0.2));
        let p = vec![DelayProfile::Constant { tau: 0.1 }; 2];
        let x0 = scalars(&[1.0, 0.0]);
        assert!(simulate(&m, &p, &x0, 1.0, 0.1).is_err());
        assert!(simulate(&m, &p, &x0, 1.0, 0.01).is_ok());
        assert!(simulate(&m, &p, &x0, 1.0, 0.003).is_err());
        assert!(simulate(&m, &p[..1], &x0, 1.0, 0.01).is_err());
        let wide = vec![DelayProfile::Constant { tau: 0.3 }; 2];
        assert!(simulate(&m, &wide, &x0, 1.0, 0.01).is_err());
    }

    #[test]
    fn empty_sweep() {
        let m = pair(0.0, DelayBound::new(0.0, 0.1));
        let opts = SweepOptions {
            trials: 0,
            ..Default::default()
        };
        let r = falsification_sweep(&m, &m.bounds, &opts).unwrap();
        assert!(r.outcomes.is_empty());
        assert!(r.falsifications().is_empty());
        let bad = SweepOptions {
            margin_factor: 0.5,
            ..opts
        };
        assert!(falsification_sweep(&m, &m.bounds, &bad).is_err());
    }
}
