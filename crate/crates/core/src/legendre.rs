//! Shifted Legendre polynomials and the integral relations behind the
//! generalized Bessel–Legendre inequality.
//!
//! On an interval `[a, b]` of length `L` with `u = (s - a) / L`, the
//! augmented vector stores the normalised moments
//! `nu_i = (1/L) int u^(i-1) z(s) ds`, which equal `(i-1)!/L^i` times the
//! `i`-fold iterated integral with inner limits running up to `b`.
//! Integrating by parts against `p_{j-1}` gives
//!
//! * `int p_{j-1} z' ds = z(b) - gamma_{0j} z(a) - sum_{i>=1} i gamma_{ij} nu_i`
//! * `int p_{j-1} z ds  = L sum_{i>=0} gamma_{ij} nu_{i+1}`

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lmi::{AugmentedLayout, DelayCoef};
use crate::model::DelayBound;
use crate::quad;

/// Largest approximation order accepted by the tooling.
pub const MAX_ORDER: usize = 4;

pub fn binomial(n: u64, k: u64) -> i64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc as i64
}

/// Exact coefficients `gamma_ij = (-1)^(j-1) (-1)^i C(j-1, i) C(j+i-1, i)`
/// for `1 <= j <= N + 1`, `0 <= i <= j - 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GammaTable {
    order: usize,
    rows: Vec<Vec<i64>>,
}

impl GammaTable {
    pub fn order(&self) -> usize {
        self.order
    }

    /// `gamma_ij`; zero outside `0 <= i <= j - 1`.
    pub fn get(&self, i: usize, j: usize) -> i64 {
        assert!(
            j >= 1 && j <= self.order + 1,
            "j = {j} outside 1..={}",
            self.order + 1
        );
        self.rows[j - 1].get(i).copied().unwrap_or(0)
    }

    /// Coefficients of `p_{j-1}(u)` in the monomial basis.
    pub fn poly(&self, j: usize) -> &[i64] {
        &self.rows[j - 1]
    }

    /// Overwrites one entry; used to inject faults in self-checks.
    pub fn set(&mut self, i: usize, j: usize, value: i64) {
        self.rows[j - 1][i] = value;
    }
}

pub fn gamma_table(order: usize) -> GammaTable {
    let rows = (1..=order + 1)
        .map(|j| {
            let jm = (j - 1) as u64;
            (0..j)
                .map(|i| {
                    let sign = if (jm + i as u64) % 2 == 0 { 1 } else { -1 };
                    sign * binomial(jm, i as u64) * binomial(jm + i as u64, i as u64)
                })
                .collect()
        })
        .collect();
    GammaTable { order, rows }
}

/// `p_j(u)` on the normalised coordinate `u in [0, 1]`.
pub fn legendre_poly_eval(j: usize, u: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&u) {
        return Err(Error::OutOfRange(format!("u = {u} outside [0, 1]")));
    }
    Ok(poly_eval(gamma_table(j).poly(j + 1), u))
}

fn poly_eval(coeffs: &[i64], u: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * u + c as f64)
}

/// The three pieces `[t - tau^l, t]`, `[t - tau(t), t - tau^l]` and
/// `[t - tau^u, t - tau(t)]` of an agent's delay window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Interval {
    Lower,
    Mid,
    Upper,
}

impl Interval {
    pub const ALL: [Interval; 3] = [Interval::Lower, Interval::Mid, Interval::Upper];

    /// 1-based position used in variable names (`Y_1k`, `Y_2k`, `Y_3k`).
    pub fn index(self) -> usize {
        match self {
            Interval::Lower => 1,
            Interval::Mid => 2,
            Interval::Upper => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct IntervalRole {
    pub interval: Interval,
    /// 1-based agent index.
    pub agent: usize,
}

impl IntervalRole {
    pub fn new(interval: Interval, agent: usize) -> Self {
        Self { interval, agent }
    }

    /// Interval length as an affine function of `tau_k(t)`.
    pub fn length(&self, bound: &DelayBound) -> DelayCoef {
        let k = self.agent;
        match self.interval {
            Interval::Lower => DelayCoef::constant(bound.lower),
            Interval::Mid => DelayCoef::affine(k, -bound.lower, 1.0),
            Interval::Upper => DelayCoef::affine(k, bound.upper, -1.0),
        }
    }

    /// Interval `[a, b]` in absolute time for a realised delay.
    pub fn endpoints(&self, t: f64, bound: &DelayBound, tau: f64) -> (f64, f64) {
        match self.interval {
            Interval::Lower => (t - bound.lower, t),
            Interval::Mid => (t - tau, t - bound.lower),
            Interval::Upper => (t - bound.upper, t - tau),
        }
    }

    /// Block indices of `(z(b), z(a))`.
    pub fn endpoint_blocks(&self, layout: &AugmentedLayout) -> (usize, usize) {
        let k = self.agent;
        match self.interval {
            Interval::Lower => (layout.current(), layout.lower_delay(k)),
            Interval::Mid => (layout.lower_delay(k), layout.varying_delay(k)),
            Interval::Upper => (layout.varying_delay(k), layout.upper_delay(k)),
        }
    }

    /// Block index of the order-`i` normalised moment.
    pub fn moment_block(&self, layout: &AugmentedLayout, i: usize) -> usize {
        match self.interval {
            Interval::Lower => layout.int_lower(self.agent, i),
            Interval::Mid => layout.int_mid(self.agent, i),
            Interval::Upper => layout.int_upper(self.agent, i),
        }
    }
}

/// An `M` row written against a generic interval: coefficients on `z(b)`,
/// `z(a)` and the moments `nu_1, nu_2, ...`, optionally multiplied by the
/// interval length.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalRow {
    pub end: f64,
    pub start: f64,
    pub moments: Vec<f64>,
    pub times_length: bool,
}

/// Rows `(M_{2j-1}, M_{2j})` on a generic interval, `1 <= j <= N + 1`.
pub fn local_rows(gamma: &GammaTable, j: usize) -> (LocalRow, LocalRow) {
    let coeffs = gamma.poly(j);
    let mut odd = LocalRow {
        end: coeffs.iter().map(|&c| c as f64).sum(),
        start: -(coeffs[0] as f64),
        moments: vec![0.0; j - 1],
        times_length: false,
    };
    for (i, &c) in coeffs.iter().enumerate().skip(1) {
        odd.moments[i - 1] = -(i as f64) * c as f64;
    }
    let even = LocalRow {
        end: 0.0,
        start: 0.0,
        moments: coeffs.iter().map(|&c| c as f64).collect(),
        times_length: true,
    };
    (odd, even)
}

/// An `M` row over layout blocks. When `length` is set, every coefficient is
/// additionally multiplied by that interval's (delay-dependent) length.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectorRow {
    pub terms: Vec<(usize, f64)>,
    pub length: Option<IntervalRole>,
}

impl SelectorRow {
    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Terms with the length factor folded into delay coefficients.
    pub fn coefficients(&self, bound: &DelayBound) -> Vec<(usize, DelayCoef)> {
        let scale = self.length.map_or(DelayCoef::ONE, |r| r.length(bound));
        self.terms
            .iter()
            .map(|&(blk, c)| (blk, scale.scale(c)))
            .collect()
    }

    /// Numeric value of `M zeta` for a concrete augmented vector.
    pub fn apply(
        &self,
        layout: &AugmentedLayout,
        zeta: &DVector<f64>,
        length: f64,
    ) -> DVector<f64> {
        let f = layout.dim;
        let mut out = DVector::zeros(f);
        for &(blk, c) in &self.terms {
            out.axpy(c, &zeta.rows(layout.offset(blk), f), 1.0);
        }
        if self.length.is_some() {
            out *= length;
        }
        out
    }
}

fn place(row: &LocalRow, role: IntervalRole, layout: &AugmentedLayout) -> SelectorRow {
    let (b, a) = role.endpoint_blocks(layout);
    let mut terms = Vec::new();
    let mut push = |blk: usize, c: f64| {
        if c != 0.0 {
            terms.push((blk, c));
        }
    };
    push(b, row.end);
    push(a, row.start);
    for (i, &c) in row.moments.iter().enumerate() {
        push(role.moment_block(layout, i + 1), c);
    }
    SelectorRow {
        terms,
        length: row.times_length.then_some(role),
    }
}

/// `(M_{2j-1}, M_{2j})` for one interval of one agent, mapped onto the layout.
/// For `j = N + 1` the even row needs a moment of order `N + 1`, which the
/// layout does not carry; it is the zero block of `Mbar` and comes back empty.
pub fn m_row(
    role: IntervalRole,
    j: usize,
    gamma: &GammaTable,
    layout: &AugmentedLayout,
) -> Result<(SelectorRow, SelectorRow)> {
    let order = layout.order;
    if j == 0 || j > order + 1 {
        return Err(Error::OutOfRange(format!(
            "j = {j} outside 1..={}",
            order + 1
        )));
    }
    if gamma.order() < order {
        return Err(Error::OutOfRange(format!(
            "gamma table of order {} cannot serve N = {order}",
            gamma.order()
        )));
    }
    let (odd, even) = local_rows(gamma, j);
    let odd = place(&odd, role, layout);
    let even = if j == order + 1 {
        SelectorRow {
            terms: Vec::new(),
            length: Some(role),
        }
    } else {
        place(&even, role, layout)
    };
    Ok((odd, even))
}

/// `M_1 .. M_{2N+1}` of one interval in `Mbar` column order.
pub fn mbar_rows(
    role: IntervalRole,
    gamma: &GammaTable,
    layout: &AugmentedLayout,
) -> Result<Vec<SelectorRow>> {
    let mut rows = Vec::with_capacity(2 * layout.order + 1);
    for j in 1..=layout.order + 1 {
        let (odd, even) = m_row(role, j, gamma, layout)?;
        rows.push(odd);
        if j <= layout.order {
            rows.push(even);
        }
    }
    Ok(rows)
}

/// A smooth vector-valued test curve: polynomial plus optional sinusoid per
/// component, with its exact derivative.
#[derive(Debug, Clone, PartialEq)]
pub struct TestCurve {
    pub poly: Vec<Vec<f64>>,
    pub waves: Vec<(f64, f64, f64)>,
}

impl TestCurve {
    pub fn polynomial(poly: Vec<Vec<f64>>) -> Self {
        let waves = vec![(0.0, 0.0, 0.0); poly.len()];
        Self { poly, waves }
    }

    /// Random curve with coefficients in `[-1, 1]`; with `wave` each
    /// component gets `amp * sin(freq * s + phase)`, `freq` up to 4.
    pub fn random<R: Rng>(rng: &mut R, dim: usize, degree: usize, wave: bool) -> Self {
        let poly = (0..dim)
            .map(|_| (0..=degree).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let waves = (0..dim)
            .map(|_| {
                if wave {
                    (
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(0.5..4.0),
                        rng.gen_range(0.0..std::f64::consts::TAU),
                    )
                } else {
                    (0.0, 0.0, 0.0)
                }
            })
            .collect();
        Self { poly, waves }
    }

    pub fn dim(&self) -> usize {
        self.poly.len()
    }

    pub fn value(&self, s: f64) -> DVector<f64> {
        DVector::from_iterator(
            self.dim(),
            self.poly.iter().zip(&self.waves).map(|(c, &(amp, w, ph))| {
                c.iter().rev().fold(0.0, |acc, &x| acc * s + x) + amp * (w * s + ph).sin()
            }),
        )
    }

    pub fn deriv(&self, s: f64) -> DVector<f64> {
        DVector::from_iterator(
            self.dim(),
            self.poly.iter().zip(&self.waves).map(|(c, &(amp, w, ph))| {
                let d = c
                    .iter()
                    .enumerate()
                    .skip(1)
                    .rev()
                    .fold(0.0, |acc, (i, &x)| acc * s + i as f64 * x);
                d + amp * w * (w * s + ph).cos()
            }),
        )
    }
}

/// Normalised moment `nu_i` on `[a, b]`, evaluated as `(i-1)!/L^i` times the
/// nested iterated integral (independent of the closed-form moment identity).
pub fn normalized_moment(
    curve: &TestCurve,
    a: f64,
    b: f64,
    i: usize,
    tol: f64,
) -> Result<DVector<f64>> {
    let len = b - a;
    let fact: f64 = (1..i).map(|x| x as f64).product();
    let z = |s: f64| curve.value(s);
    let raw = quad::iterated_integral(&z, a, b, i, curve.dim(), tol)?;
    Ok(raw * (fact / len.powi(i as i32)))
}

/// Local augmented vector `[z(b); z(a); nu_1; ..; nu_{N+1}]` used by the
/// lemma oracle.
pub fn local_zeta(
    curve: &TestCurve,
    order: usize,
    a: f64,
    b: f64,
    tol: f64,
) -> Result<DVector<f64>> {
    let n = curve.dim();
    let mut zeta = DVector::zeros((order + 3) * n);
    zeta.rows_mut(0, n).copy_from(&curve.value(b));
    zeta.rows_mut(n, n).copy_from(&curve.value(a));
    for i in 1..=order + 1 {
        zeta.rows_mut((i + 1) * n, n)
            .copy_from(&normalized_moment(curve, a, b, i, tol)?);
    }
    Ok(zeta)
}

/// `Mbar` on the local vector: a `(N+3)n x (2N+2)n` matrix whose `j`-th
/// column block is `M_j^T`. With `full = false` the last block is zero.
pub fn local_mbar(
    gamma: &GammaTable,
    order: usize,
    n: usize,
    len: f64,
    full: bool,
) -> DMatrix<f64> {
    let mut mbar = DMatrix::zeros((order + 3) * n, (2 * order + 2) * n);
    for j in 1..=order + 1 {
        let (odd, even) = local_rows(gamma, j);
        for (col, row) in [(2 * j - 2, &odd), (2 * j - 1, &even)] {
            if col == 2 * order + 1 && !full {
                continue;
            }
            let scale = if row.times_length { len } else { 1.0 };
            let mut put = |blk: usize, c: f64| {
                for d in 0..n {
                    mbar[(blk * n + d, col * n + d)] += scale * c;
                }
            };
            put(0, row.end);
            put(1, row.start);
            for (i, &c) in row.moments.iter().enumerate() {
                put(i + 2, c);
            }
        }
    }
    mbar
}

/// `Rbar = diag{R, 3R, .., (2N+1)R}`.
pub fn rbar(r: &DMatrix<f64>, order: usize) -> DMatrix<f64> {
    let q = r.nrows();
    let mut out = DMatrix::zeros((order + 1) * q, (order + 1) * q);
    for i in 0..=order {
        out.view_mut((i * q, i * q), (q, q))
            .copy_from(&(r * (2 * i + 1) as f64));
    }
    out
}

/// Both sides of the integral inequality for one draw.
#[derive(Debug, Clone, PartialEq)]
pub struct LemmaSides {
    pub lhs: f64,
    pub rhs: f64,
}

impl LemmaSides {
    pub fn holds(&self, tol: f64) -> bool {
        self.lhs <= self.rhs + tol
    }
}

/// Evaluates `lhs = -int xi^T R xi` and
/// `rhs = zeta^T [(b-a) Ybar Rbar^{-1} Ybar^T + Sym(Ybar Mbar^T)] zeta`,
/// `xi = [z'; z]`, on the local augmented vector.
///
/// `y` holds either `2N+1` blocks (last `Ybar` block zero, as stated) or
/// `2N+2` blocks (untruncated form, pairing with `int p_N z`). Each block is
/// `(N+3)n x n`.
pub fn lemma1_numeric_oracle(
    gamma: &GammaTable,
    order: usize,
    a: f64,
    b: f64,
    curve: &TestCurve,
    r: &DMatrix<f64>,
    y: &[DMatrix<f64>],
) -> Result<LemmaSides> {
    let n = curve.dim();
    if b <= a {
        return Err(Error::OutOfRange(format!("need a < b, got [{a}, {b}]")));
    }
    if r.nrows() != 2 * n || r.ncols() != 2 * n {
        return Err(Error::Dimension(format!("R must be {0}x{0}", 2 * n)));
    }
    let full = match y.len() {
        l if l == 2 * order + 1 => false,
        l if l == 2 * order + 2 => true,
        l => {
            return Err(Error::Dimension(format!(
                "expected {} or {} Y blocks, got {l}",
                2 * order + 1,
                2 * order + 2
            )))
        }
    };
    let zdim = (order + 3) * n;
    if let Some(bad) = y.iter().find(|m| m.nrows() != zdim || m.ncols() != n) {
        return Err(Error::Dimension(format!(
            "Y blocks must be {zdim}x{n}, got {}x{}",
            bad.nrows(),
            bad.ncols()
        )));
    }
    let len = b - a;
    let lhs = -quad::integrate(
        |s| {
            let mut xi = DVector::zeros(2 * n);
            xi.rows_mut(0, n).copy_from(&curve.deriv(s));
            xi.rows_mut(n, n).copy_from(&curve.value(s));
            (xi.transpose() * r * &xi)[(0, 0)]
        },
        a,
        b,
        quad::DEFAULT_TOL,
    )?;
    let zeta = local_zeta(curve, order, a, b, quad::DEFAULT_TOL)?;
    let mbar = local_mbar(gamma, order, n, len, full);
    let mut ybar = DMatrix::zeros(zdim, (2 * order + 2) * n);
    for (j, blk) in y.iter().enumerate() {
        ybar.view_mut((0, j * n), (zdim, n)).copy_from(blk);
    }
    let rb = rbar(r, order);
    let rinv = rb
        .clone()
        .cholesky()
        .ok_or_else(|| Error::OutOfRange("R is not positive definite".into()))?
        .inverse();
    let yz = ybar.transpose() * &zeta;
    let mz = mbar.transpose() * &zeta;
    let rhs = len * (yz.transpose() * rinv * &yz)[(0, 0)] + 2.0 * yz.dot(&mz);
    Ok(LemmaSides { lhs, rhs })
}

/// Minimiser of the right-hand side over `Ybar`:
/// `Ybar = -Mbar_f ((Rbar^{-1})_ff)^{-1} / (b - a)` on the free columns `f`
/// (all columns when `full`, otherwise the last `n` are held at zero).
pub fn lemma1_minimizer(
    gamma: &GammaTable,
    order: usize,
    n: usize,
    len: f64,
    r: &DMatrix<f64>,
    full: bool,
) -> Result<Vec<DMatrix<f64>>> {
    let mbar = local_mbar(gamma, order, n, len, full);
    let rinv = rbar(r, order)
        .cholesky()
        .ok_or_else(|| Error::OutOfRange("R is not positive definite".into()))?
        .inverse();
    let blocks = if full { 2 * order + 2 } else { 2 * order + 1 };
    let nf = blocks * n;
    let sff = rinv
        .view((0, 0), (nf, nf))
        .into_owned()
        .cholesky()
        .ok_or_else(|| Error::OutOfRange("singular Rbar".into()))?
        .inverse();
    let ybar = -(mbar.columns(0, nf) * sff) / len;
    Ok((0..blocks)
        .map(|j| ybar.columns(j * n, n).into_owned())
        .collect())
}

/// Outcome of [`lemma_suite`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LemmaSuiteReport {
    pub draws: usize,
    pub tight_cases: usize,
    /// Largest `lhs - rhs` over the random draws.
    pub worst_violation: f64,
    /// Largest `|rhs - lhs|` over the minimiser cases.
    pub worst_tightness: f64,
    pub failures: Vec<String>,
}

impl LemmaSuiteReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

fn random_spd<R: Rng>(rng: &mut R, q: usize) -> DMatrix<f64> {
    let m = DMatrix::from_fn(q, q, |_, _| rng.gen_range(-1.0..1.0));
    &m * m.transpose() + DMatrix::identity(q, q) * rng.gen_range(0.05..1.0)
}

/// Random checks of the integral inequality at `order`: `trials` draws of a
/// curve, `R` and free `Ybar` must satisfy `lhs <= rhs + tol`, and for each
/// draw the closed-form minimiser must make the bound tight (within `tol`)
/// on a polynomial of degree `order` (untruncated form) and `order - 1`
/// (truncated form).
pub fn lemma_suite<R: Rng>(
    gamma: &GammaTable,
    order: usize,
    trials: usize,
    tol: f64,
    rng: &mut R,
) -> Result<LemmaSuiteReport> {
    if order == 0 || order > MAX_ORDER || gamma.order() < order {
        return Err(Error::OutOfRange(format!(
            "order must be in 1..={MAX_ORDER}, got {order}"
        )));
    }
    let mut rep = LemmaSuiteReport {
        worst_violation: f64::NEG_INFINITY,
        ..Default::default()
    };
    for t in 0..trials {
        let n = rng.gen_range(1..=2);
        let a = rng.gen_range(-1.0..0.5);
        let len = rng.gen_range(0.1..1.5);
        let b = a + len;
        let r = random_spd(rng, 2 * n);
        let degree = rng.gen_range(0..=order + 2);
        let wave = rng.gen_bool(0.5);
        let curve = TestCurve::random(rng, n, degree, wave);
        let scale = rng.gen_range(0.1..3.0);
        let y: Vec<DMatrix<f64>> = (0..2 * order + 1)
            .map(|_| DMatrix::from_fn((order + 3) * n, n, |_, _| scale * rng.gen_range(-1.0..1.0)))
            .collect();
        let s = lemma1_numeric_oracle(gamma, order, a, b, &curve, &r, &y)?;
        rep.draws += 1;
        rep.worst_violation = rep.worst_violation.max(s.lhs - s.rhs);
        if !s.holds(tol) {
            rep.failures
                .push(format!("draw {t}: lhs {:.12e} > rhs {:.12e}", s.lhs, s.rhs));
        }

        for (full, deg) in [(true, order), (false, order - 1)] {
            let poly = TestCurve::random(rng, n, deg, false);
            let y = lemma1_minimizer(gamma, order, n, len, &r, full)?;
            let s = lemma1_numeric_oracle(gamma, order, a, b, &poly, &r, &y)?;
            rep.tight_cases += 1;
            let gap = (s.rhs - s.lhs).abs();
            rep.worst_tightness = rep.worst_tightness.max(gap);
            if gap > tol {
                rep.failures.push(format!(
                    "draw {t}: minimiser ({} form, degree {deg}) leaves gap {gap:.3e}",
                    if full { "untruncated" } else { "truncated" }
                ));
            }
        }
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gamma_small_orders() {
        let g = gamma_table(2);
        assert_eq!(g.get(0, 1), 1);
        assert_eq!((g.get(0, 2), g.get(1, 2)), (-1, 2));
        assert_eq!((g.get(0, 3), g.get(1, 3), g.get(2, 3)), (1, -6, 6));
        assert_eq!(g.get(3, 3), 0);
    }

    #[test]
    fn polynomial_values() {
        for u in [0.0, 0.3, 1.0] {
            assert_eq!(legendre_poly_eval(0, u).unwrap(), 1.0);
        }
        assert_eq!(legendre_poly_eval(1, 0.0).unwrap(), -1.0);
        assert_eq!(legendre_poly_eval(1, 1.0).unwrap(), 1.0);
        for j in 0..=5 {
            assert!((legendre_poly_eval(j, 1.0).unwrap() - 1.0).abs() < 1e-12);
        }
        assert!(legendre_poly_eval(2, 1.5).is_err());
        assert!(legendre_poly_eval(2, -0.1).is_err());
    }

    #[test]
    fn orthogonality() {
        for i in 0..=4 {
            for j in 0..=4 {
                let v = quad::integrate(
                    |u| legendre_poly_eval(i, u).unwrap() * legendre_poly_eval(j, u).unwrap(),
                    0.0,
                    1.0,
                    1e-13,
                )
                .unwrap();
                let expect = if i == j {
                    1.0 / (2 * i + 1) as f64
                } else {
                    0.0
                };
                assert!((v - expect).abs() < 1e-10, "({i},{j}) -> {v}");
            }
        }
    }

    #[test]
    fn lower_rows_match_closed_forms() {
        let layout = crate::lmi::build_layout(3, 1, 2).unwrap();
        let g = gamma_table(2);
        let role = IntervalRole::new(Interval::Lower, 2);
        let (m1, m2) = m_row(role, 1, &g, &layout).unwrap();
        assert_eq!(m1.terms, vec![(1, 1.0), (3, -1.0)]);
        assert_eq!(m1.length, None);
        assert_eq!(m2.terms, vec![(layout.int_lower(2, 1), 1.0)]);
        assert_eq!(m2.length, Some(role));
        let (m3, m4) = m_row(role, 2, &g, &layout).unwrap();
        assert_eq!(
            m3.terms,
            vec![(1, 1.0), (3, 1.0), (layout.int_lower(2, 1), -2.0)]
        );
        assert_eq!(
            m4.terms,
            vec![
                (layout.int_lower(2, 1), -1.0),
                (layout.int_lower(2, 2), 2.0)
            ]
        );
        let (m5, m6) = m_row(role, 3, &g, &layout).unwrap();
        assert_eq!(m5.terms.len(), 4);
        assert!(m6.is_zero());
        assert!(m_row(role, 4, &g, &layout).is_err());
        assert!(m_row(role, 0, &g, &layout).is_err());
    }

    #[test]
    fn upper_first_row() {
        let layout = crate::lmi::build_layout(4, 2, 1).unwrap();
        let g = gamma_table(1);
        let (m1, _) = m_row(IntervalRole::new(Interval::Upper, 3), 1, &g, &layout).unwrap();
        assert_eq!(m1.terms, vec![(1 + 2 * 4 + 3, 1.0), (1 + 4 + 3, -1.0)]);
    }

    #[test]
    fn constant_curve_lemma() {
        let g = gamma_table(1);
        let curve = TestCurve::polynomial(vec![vec![0.7]]);
        let r = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.5]);
        let y = vec![DMatrix::zeros(4, 1); 3];
        let sides = lemma1_numeric_oracle(&g, 1, 0.0, 1.0, &curve, &r, &y).unwrap();
        assert!((sides.lhs + 1.5 * 0.49).abs() < 1e-12);
        assert_eq!(sides.rhs, 0.0);
        assert!(sides.holds(0.0));
    }

    #[test]
    fn linear_curve_lemma() {
        let g = gamma_table(1);
        let curve = TestCurve::polynomial(vec![vec![0.0, 1.0]]);
        let r = DMatrix::identity(2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let y: Vec<_> = (0..3)
            .map(|_| DMatrix::from_fn(4, 1, |_, _| rng.gen_range(-2.0..2.0)))
            .collect();
        let sides = lemma1_numeric_oracle(&g, 1, 0.0, 1.0, &curve, &r, &y).unwrap();
        assert!((sides.lhs + 4.0 / 3.0).abs() < 1e-12);
        assert!(sides.rhs >= -4.0 / 3.0 - 1e-12);
    }

    #[test]
    fn minimizer_is_tight_on_low_degree() {
        let g = gamma_table(2);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for order in 1..=2 {
            let r = {
                let m = DMatrix::from_fn(4, 4, |_, _| rng.gen_range(-1.0..1.0));
                &m * m.transpose() + DMatrix::identity(4, 4)
            };
            let (a, b) = (-0.4, 0.9);
            let full = TestCurve::random(&mut rng, 2, order, false);
            let y = lemma1_minimizer(&g, order, 2, b - a, &r, true).unwrap();
            let s = lemma1_numeric_oracle(&g, order, a, b, &full, &r, &y).unwrap();
            assert!((s.rhs - s.lhs).abs() < 1e-9, "full N={order}: {s:?}");

            let low = TestCurve::random(&mut rng, 2, order - 1, false);
            let y = lemma1_minimizer(&g, order, 2, b - a, &r, false).unwrap();
            let s = lemma1_numeric_oracle(&g, order, a, b, &low, &r, &y).unwrap();
            assert!((s.rhs - s.lhs).abs() < 1e-9, "truncated N={order}: {s:?}");
        }
    }

    #[test]
    fn suite_passes_and_detects_tampering() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = gamma_table(2);
        let rep = lemma_suite(&g, 2, 20, 1e-8, &mut rng).unwrap();
        assert!(rep.passed(), "{:?}", rep.failures);
        let mut bad = g.clone();
        bad.set(0, 2, -bad.get(0, 2));
        let rep = lemma_suite(&bad, 2, 5, 1e-8, &mut rng).unwrap();
        assert!(!rep.passed());
    }

    #[test]
    fn oracle_rejects_bad_shapes() {
        let g = gamma_table(1);
        let c = TestCurve::polynomial(vec![vec![1.0]]);
        let r = DMatrix::identity(2, 2);
        let y = vec![DMatrix::zeros(4, 1); 2];
        assert!(lemma1_numeric_oracle(&g, 1, 0.0, 1.0, &c, &r, &y).is_err());
        let y = vec![DMatrix::zeros(4, 1); 3];
        assert!(lemma1_numeric_oracle(&g, 1, 1.0, 0.0, &c, &r, &y).is_err());
    }
}
