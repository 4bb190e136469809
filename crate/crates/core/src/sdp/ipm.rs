//! Primal-dual interior point (HKM direction, Mehrotra corrector) for the
//! margin problem
//!
//! ```text
//! max t  s.t.  S_c = C_c - sum_i y_i F_ci >= 0,   a^T x = d,
//! ```
//!
//! with `y = (x, t)`, `C_c = s_c K_c`, `F_ci = -s_c A_ci` and `F_ct = I`.
//! The iterates stay dual feasible from an explicit start, so every dual
//! iterate with `t > eps` is a candidate witness.
//!
//! Each coefficient matrix is stored as a sum of symmetric outer products
//! `u v^T + v u^T` over a per-block dictionary of sparse vectors. Most
//! variables of the delay criteria touch a single row of the constraint
//! (a "star"), so one dictionary vector serves thousands of variables and
//! the Schur matrix costs O(1) per entry.

use std::collections::HashMap;

use faer::linalg::solvers::Solve;
use faer::Mat;
use nalgebra::{DMatrix, DVector};

use super::{FeasibilityReport, SolveOptions, StandardForm, Status};

const NAME: &str = "builtin";
const TOL_GAP: f64 = 1e-8;
const TOL_INF: f64 = 1e-7;
/// Complementarity below which the iterate counts as converged.
const TOL_MU: f64 = 1e-10;
/// Half-width of the box used when there is no normalisation to bound the
/// margin.
const BOX: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Vid {
    Unit(usize),
    Dict(usize),
}

#[derive(Debug, Clone, Copy)]
struct Term {
    u: Vid,
    v: Vid,
    coef: f64,
}

#[derive(Debug, Clone)]
struct VarInBlock {
    y: usize,
    terms: Vec<Term>,
    /// Upper-triangle entries of `F`.
    entries: Vec<(usize, usize, f64)>,
}

#[derive(Debug, Clone)]
struct BlockData {
    n: usize,
    c: DMatrix<f64>,
    dict: Vec<Vec<(usize, f64)>>,
    vars: Vec<VarInBlock>,
}

/// Covers the entries of a symmetric matrix by stars `e_r w^T + w e_r^T`,
/// greedily taking the index that touches the most remaining entries.
fn decompose(
    entries: &[(usize, usize, f64)],
    dict: &mut Vec<Vec<(usize, f64)>>,
    index: &mut HashMap<Vec<(usize, u64)>, usize>,
) -> Vec<Term> {
    let mut left: Vec<(usize, usize, f64)> = entries.to_vec();
    let mut terms = Vec::new();
    while !left.is_empty() {
        let mut count: HashMap<usize, usize> = HashMap::new();
        for &(r, c, _) in &left {
            *count.entry(r).or_default() += 1;
            if c != r {
                *count.entry(c).or_default() += 1;
            }
        }
        let (&hub, &k) = count
            .iter()
            .max_by_key(|(&i, &n)| (n, std::cmp::Reverse(i)))
            .unwrap();
        let (star, rest): (Vec<_>, Vec<_>) = left
            .into_iter()
            .partition(|&(r, c, _)| r == hub || c == hub);
        left = rest;
        if k == 1 {
            let (r, c, v) = star[0];
            let coef = if r == c { v / 2.0 } else { v };
            terms.push(Term {
                u: Vid::Unit(r),
                v: Vid::Unit(c),
                coef,
            });
            continue;
        }
        let mut w: Vec<(usize, f64)> = star
            .iter()
            .map(|&(r, c, v)| {
                let other = if r == hub { c } else { r };
                (other, if other == hub { v / 2.0 } else { v })
            })
            .collect();
        w.sort_by_key(|e| e.0);
        let key: Vec<(usize, u64)> = w.iter().map(|&(i, v)| (i, v.to_bits())).collect();
        let id = *index.entry(key).or_insert_with(|| {
            dict.push(w);
            dict.len() - 1
        });
        terms.push(Term {
            u: Vid::Unit(hub),
            v: Vid::Dict(id),
            coef: 1.0,
        });
    }
    terms
}

/// Bilinear forms `u^T M v` over one block's dictionary.
struct Kernel<'a> {
    m: &'a DMatrix<f64>,
    mw: DMatrix<f64>,
    wmw: DMatrix<f64>,
}

impl<'a> Kernel<'a> {
    fn new(m: &'a DMatrix<f64>, dict: &[Vec<(usize, f64)>]) -> Self {
        let n = m.nrows();
        let nd = dict.len();
        let mut mw = DMatrix::zeros(n, nd);
        for (j, w) in dict.iter().enumerate() {
            let mut col = mw.column_mut(j);
            for &(r, v) in w {
                col.axpy(v, &m.column(r), 1.0);
            }
        }
        let mut wmw = DMatrix::zeros(nd, nd);
        for (i, w) in dict.iter().enumerate() {
            for j in 0..nd {
                wmw[(i, j)] = w.iter().map(|&(r, v)| v * mw[(r, j)]).sum();
            }
        }
        Self { m, mw, wmw }
    }

    #[inline]
    fn k(&self, a: Vid, b: Vid) -> f64 {
        match (a, b) {
            (Vid::Unit(r), Vid::Unit(s)) => self.m[(r, s)],
            (Vid::Unit(r), Vid::Dict(w)) | (Vid::Dict(w), Vid::Unit(r)) => self.mw[(r, w)],
            (Vid::Dict(w), Vid::Dict(v)) => self.wmw[(w, v)],
        }
    }

    /// `tr(F M)` for `F` given by its terms.
    fn trace(&self, terms: &[Term]) -> f64 {
        terms.iter().map(|t| 2.0 * t.coef * self.k(t.u, t.v)).sum()
    }
}

struct Problem {
    blocks: Vec<BlockData>,
    /// Active original variables; `y[i]` is `x[active[i]]`, the last entry is `t`.
    active: Vec<usize>,
    ny: usize,
    a: DVector<f64>,
    d: f64,
    has_norm: bool,
}

fn build(sf: &StandardForm) -> Problem {
    let used = sf.used_vars();
    let active: Vec<usize> = (0..sf.num_vars).filter(|&i| used[i]).collect();
    let mut pos = vec![usize::MAX; sf.num_vars];
    for (k, &i) in active.iter().enumerate() {
        pos[i] = k;
    }
    let p = active.len();
    let ny = p + 1;
    let mut blocks = Vec::new();
    for (b, blk) in sf.blocks.iter().enumerate() {
        let s = blk.sense.sign();
        let n = blk.size;
        let mut c = DMatrix::zeros(n, n);
        for &(r, col, v) in &sf.constants[b] {
            c[(r, col)] = s * v;
            c[(col, r)] = s * v;
        }
        let mut per_var: Vec<(usize, Vec<(usize, usize, f64)>)> = Vec::new();
        for &(i, r, col, v) in &sf.coefficients[b] {
            let y = pos[i];
            match per_var.last_mut() {
                Some((last, e)) if *last == y => e.push((r, col, -s * v)),
                _ => per_var.push((y, vec![(r, col, -s * v)])),
            }
        }
        per_var.push((p, (0..n).map(|r| (r, r, 1.0)).collect()));
        let mut dict = Vec::new();
        let mut index = HashMap::new();
        let vars = per_var
            .into_iter()
            .map(|(y, entries)| VarInBlock {
                y,
                terms: decompose(&entries, &mut dict, &mut index),
                entries,
            })
            .collect();
        blocks.push(BlockData { n, c, dict, vars });
    }
    let mut a = DVector::zeros(ny);
    let mut has_norm = false;
    for &(i, v) in &sf.normalization {
        if pos[i] != usize::MAX {
            a[pos[i]] += v;
            has_norm = true;
        }
    }
    if !has_norm && p > 0 {
        // box |x_i| <= BOX keeps the margin bounded when nothing fixes the scale
        let n = 2 * p;
        let c = DMatrix::identity(n, n) * BOX;
        let vars = (0..p)
            .map(|i| {
                let entries = vec![(i, i, 1.0), (p + i, p + i, -1.0)];
                VarInBlock {
                    y: i,
                    terms: vec![
                        Term {
                            u: Vid::Unit(i),
                            v: Vid::Unit(i),
                            coef: 0.5,
                        },
                        Term {
                            u: Vid::Unit(p + i),
                            v: Vid::Unit(p + i),
                            coef: -0.5,
                        },
                    ],
                    entries,
                }
            })
            .collect();
        blocks.push(BlockData {
            n,
            c,
            dict: Vec::new(),
            vars,
        });
    }
    Problem {
        blocks,
        active,
        ny,
        a,
        d: if has_norm { sf.normalization_rhs } else { 0.0 },
        has_norm,
    }
}

fn dense_f(blk: &BlockData, dy: &DVector<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(blk.n, blk.n);
    for v in &blk.vars {
        let s = dy[v.y];
        if s == 0.0 {
            continue;
        }
        for &(r, c, x) in &v.entries {
            out[(r, c)] += s * x;
            if r != c {
                out[(c, r)] += s * x;
            }
        }
    }
    out
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for c in 0..n {
        for r in c + 1..n {
            let v = 0.5 * (m[(r, c)] + m[(c, r)]);
            m[(r, c)] = v;
            m[(c, r)] = v;
        }
    }
}

/// Largest `alpha` (capped at `cap`) keeping `M + alpha dM` positive
/// semidefinite, given the Cholesky factor of `M`.
fn max_step(chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>, dm: &DMatrix<f64>, cap: f64) -> f64 {
    let l = chol.l();
    let mut w = dm.clone();
    l.solve_lower_triangular_mut(&mut w);
    let mut w = w.transpose();
    l.solve_lower_triangular_mut(&mut w);
    symmetrize(&mut w);
    let lmin = w.symmetric_eigenvalues().min();
    if lmin < 0.0 {
        (-1.0 / lmin).min(cap)
    } else {
        cap
    }
}

struct Factored {
    llt: faer::linalg::solvers::Llt<f64>,
    ma: Option<DVector<f64>>,
    ama: f64,
}

impl Factored {
    fn new(m: &DMatrix<f64>, a: &DVector<f64>, has_norm: bool) -> Option<Self> {
        let ny = m.nrows();
        let diag_max = (0..ny)
            .map(|i| m[(i, i)].abs())
            .fold(0.0, f64::max)
            .max(1e-300);
        let mut reg = 0.0;
        for _ in 0..8 {
            let fm = Mat::<f64>::from_fn(ny, ny, |i, j| m[(i, j)] + if i == j { reg } else { 0.0 });
            if let Ok(llt) = fm.llt(faer::Side::Lower) {
                let mut f = Factored {
                    llt,
                    ma: None,
                    ama: 0.0,
                };
                if has_norm {
                    let ma = f.raw_solve(a);
                    f.ama = a.dot(&ma);
                    if !(f.ama.is_finite() && f.ama > 0.0) {
                        return None;
                    }
                    f.ma = Some(ma);
                }
                return Some(f);
            }
            reg = if reg == 0.0 {
                1e-14 * diag_max
            } else {
                reg * 100.0
            };
        }
        None
    }

    fn raw_solve(&self, r: &DVector<f64>) -> DVector<f64> {
        let rhs = Mat::<f64>::from_fn(r.len(), 1, |i, _| r[i]);
        let sol = self.llt.solve(&rhs);
        DVector::from_fn(r.len(), |i, _| sol[(i, 0)])
    }

    /// Solves `M dy + a dl = r`, `a^T dy = re`.
    fn solve(&self, r: &DVector<f64>, re: f64, a: &DVector<f64>) -> (DVector<f64>, f64) {
        let mr = self.raw_solve(r);
        match &self.ma {
            None => (mr, 0.0),
            Some(ma) => {
                let dl = (a.dot(&mr) - re) / self.ama;
                (mr - ma * dl, dl)
            }
        }
    }
}

struct State {
    x: Vec<DMatrix<f64>>,
    s: Vec<DMatrix<f64>>,
    y: DVector<f64>,
    lam: f64,
}

fn witness(prob: &Problem, num_vars: usize, y: &DVector<f64>) -> Vec<f64> {
    let mut w = vec![0.0; num_vars];
    for (k, &i) in prob.active.iter().enumerate() {
        w[i] = y[k];
    }
    w
}

pub(super) fn solve(sf: &StandardForm, opts: &SolveOptions) -> FeasibilityReport {
    let prob = build(sf);
    let ny = prob.ny;
    let t_idx = ny - 1;
    let eps = opts.eps_strict;

    let mut y = DVector::zeros(ny);
    if prob.has_norm {
        let aa = prob.a.norm_squared();
        y = &prob.a * (prob.d / aa);
    }
    let mut s: Vec<DMatrix<f64>> = Vec::with_capacity(prob.blocks.len());
    let mut lmin = f64::INFINITY;
    for blk in &prob.blocks {
        let si = &blk.c - dense_f(blk, &y);
        let shifted = blk.vars.iter().any(|v| v.y == t_idx);
        let ev = si.symmetric_eigenvalues().min();
        if shifted {
            lmin = lmin.min(ev);
        } else if ev <= 0.0 {
            return FeasibilityReport::failure(NAME, 0, "starting point violates the box");
        }
        s.push(si);
    }
    let t0 = lmin - 1.0;
    y[t_idx] = t0;
    for (blk, si) in prob.blocks.iter().zip(s.iter_mut()) {
        if blk.vars.iter().any(|v| v.y == t_idx) {
            for i in 0..blk.n {
                si[(i, i)] -= t0;
            }
        }
    }
    let mut st = State {
        x: prob
            .blocks
            .iter()
            .map(|b| DMatrix::identity(b.n, b.n))
            .collect(),
        s,
        y,
        lam: 0.0,
    };
    let ntot: usize = prob.blocks.iter().map(|b| b.n).sum();
    let mut bvec = DVector::zeros(ny);
    bvec[t_idx] = 1.0;
    let mut stalls = 0;
    let mut best: Option<(f64, DVector<f64>, usize)> = None;
    // every dual iterate with t > eps is a candidate witness, so a run that
    // breaks down late can still certify
    let give_up = |best: &Option<(f64, DVector<f64>, usize)>, iter: usize, why: String| {
        if let Some((t, y, at)) = best {
            let w = witness(&prob, sf.num_vars, y);
            if super::verify_witness(sf, &w, eps) {
                return FeasibilityReport {
                    status: Status::Feasible,
                    margin: *t,
                    iterations: iter,
                    backend: NAME.into(),
                    witness: Some(w),
                    message: format!("{why}; margin is a lower bound from iteration {at}"),
                };
            }
        }
        FeasibilityReport::failure(NAME, iter, why)
    };
    let trace = std::env::var_os("DCL_IPM_TRACE").is_some();

    for iter in 0..opts.max_iter {
        let mut zs = Vec::with_capacity(prob.blocks.len());
        let mut xchol = Vec::with_capacity(prob.blocks.len());
        let mut schol = Vec::with_capacity(prob.blocks.len());
        for (k, _) in prob.blocks.iter().enumerate() {
            let (Some(cs), Some(cx)) = (st.s[k].clone().cholesky(), st.x[k].clone().cholesky())
            else {
                return give_up(&best, iter, "lost positive definiteness".into());
            };
            let mut z = cs.inverse();
            symmetrize(&mut z);
            zs.push(z);
            schol.push(cs);
            xchol.push(cx);
        }
        let mu = prob
            .blocks
            .iter()
            .enumerate()
            .map(|(k, _)| st.x[k].dot(&st.s[k]))
            .sum::<f64>()
            / ntot as f64;

        let mut m = DMatrix::zeros(ny, ny);
        let mut g = DVector::zeros(ny);
        let mut ax = DVector::zeros(ny);
        let mut pobj = st.lam * prob.d;
        for (k, blk) in prob.blocks.iter().enumerate() {
            let kx = Kernel::new(&st.x[k], &blk.dict);
            let kz = Kernel::new(&zs[k], &blk.dict);
            pobj += blk.c.dot(&st.x[k]);
            for (ii, vi) in blk.vars.iter().enumerate() {
                g[vi.y] += kz.trace(&vi.terms);
                ax[vi.y] += kx.trace(&vi.terms);
                for vj in &blk.vars[ii..] {
                    let mut acc = 0.0;
                    for a in &vi.terms {
                        for b in &vj.terms {
                            acc += a.coef
                                * b.coef
                                * (kx.k(a.v, b.u) * kz.k(b.v, a.u)
                                    + kx.k(a.v, b.v) * kz.k(b.u, a.u)
                                    + kx.k(a.u, b.u) * kz.k(b.v, a.v)
                                    + kx.k(a.u, b.v) * kz.k(b.u, a.v));
                        }
                    }
                    let (r, c) = if vi.y <= vj.y {
                        (vi.y, vj.y)
                    } else {
                        (vj.y, vi.y)
                    };
                    m[(r, c)] += acc;
                    if r != c {
                        m[(c, r)] += acc;
                    } else if !std::ptr::eq(vi, vj) {
                        m[(r, c)] += acc;
                    }
                }
            }
        }
        let dobj = st.y[t_idx];
        let rp = &bvec - &ax - &prob.a * st.lam;
        let pinf = rp.norm();
        let gap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());
        let re = prob.d - prob.a.dot(&st.y);

        if trace {
            eprintln!("ipm {iter:3} t {dobj:+.6e} p {pobj:+.6e} gap {gap:.1e} pinf {pinf:.1e} mu {mu:.1e}");
        }
        // the primal residual can stagnate once mu is negligible
        let converged = (pinf < TOL_INF && gap < TOL_GAP) || mu < TOL_MU * (1.0 + dobj.abs());
        if dobj > eps && best.as_ref().map_or(true, |b| dobj > b.0) {
            best = Some((dobj, st.y.clone(), iter));
        }
        if dobj > eps && (opts.early_stop || converged) {
            let w = witness(&prob, sf.num_vars, &st.y);
            if super::verify_witness(sf, &w, eps) {
                return FeasibilityReport {
                    status: Status::Feasible,
                    margin: dobj,
                    iterations: iter,
                    backend: NAME.into(),
                    witness: Some(w),
                    message: format!("gap {gap:.2e}, primal residual {pinf:.2e}"),
                };
            }
        }
        // a primal point bounds the margin from above
        let bounded = pinf < TOL_INF && pobj <= eps;
        if bounded && (opts.early_stop || converged) {
            return FeasibilityReport {
                status: Status::Infeasible,
                margin: if gap < TOL_GAP { dobj } else { pobj },
                iterations: iter,
                backend: NAME.into(),
                witness: None,
                message: format!(
                    "margin bounded by {pobj:.3e} (gap {gap:.2e}, primal residual {pinf:.2e})"
                ),
            };
        }
        if converged {
            return FeasibilityReport {
                status: Status::Marginal,
                margin: dobj,
                iterations: iter,
                backend: NAME.into(),
                witness: None,
                message: format!("margin {dobj:.3e} undecided at tolerance (gap {gap:.2e})"),
            };
        }

        let Some(fac) = Factored::new(&m, &prob.a, prob.has_norm) else {
            return give_up(&best, iter, "Schur complement is singular".into());
        };

        // predictor
        let rhs = &bvec - &prob.a * st.lam;
        let (dy, dl) = fac.solve(&rhs, re, &prob.a);
        let mut dxs = Vec::new();
        let mut dss = Vec::new();
        let (mut ap, mut ad) = (1.0f64, 1.0f64);
        for (k, blk) in prob.blocks.iter().enumerate() {
            let ds = -dense_f(blk, &dy);
            let mut dx = -&st.x[k] - &st.x[k] * &ds * &zs[k];
            symmetrize(&mut dx);
            ap = ap.min(max_step(&xchol[k], &dx, 1.0));
            ad = ad.min(max_step(&schol[k], &ds, 1.0));
            dxs.push(dx);
            dss.push(ds);
        }
        let mu_aff = prob
            .blocks
            .iter()
            .enumerate()
            .map(|(k, _)| (&st.x[k] + &dxs[k] * ap).dot(&(&st.s[k] + &dss[k] * ad)))
            .sum::<f64>()
            / ntot as f64;
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);
        let _ = dl;

        // corrector
        let mut corr = DVector::zeros(ny);
        let mut hs = Vec::new();
        for (k, blk) in prob.blocks.iter().enumerate() {
            let mut h = &dxs[k] * &dss[k] * &zs[k];
            let hraw = h.clone();
            symmetrize(&mut h);
            let kh = Kernel::new(&h, &blk.dict);
            for v in &blk.vars {
                corr[v.y] += kh.trace(&v.terms);
            }
            hs.push(hraw);
        }
        let rhs = &bvec - &prob.a * st.lam - &g * (sigma * mu) + corr;
        let (dy, dl) = fac.solve(&rhs, re, &prob.a);
        let (mut ap, mut ad) = (1.0f64, 1.0f64);
        let mut dxs2 = Vec::new();
        let mut dss2 = Vec::new();
        for (k, blk) in prob.blocks.iter().enumerate() {
            let ds = -dense_f(blk, &dy);
            let mut dx = &zs[k] * (sigma * mu) - &st.x[k] - &st.x[k] * &ds * &zs[k] - &hs[k];
            symmetrize(&mut dx);
            ap = ap.min(max_step(&xchol[k], &dx, f64::INFINITY));
            ad = ad.min(max_step(&schol[k], &ds, f64::INFINITY));
            dxs2.push(dx);
            dss2.push(ds);
        }
        let mut ap = (0.95 * ap).min(1.0);
        let mut ad = (0.95 * ad).min(1.0);
        let mut accepted = false;
        for _ in 0..30 {
            let xs: Vec<DMatrix<f64>> = (0..prob.blocks.len())
                .map(|k| &st.x[k] + &dxs2[k] * ap)
                .collect();
            let ss: Vec<DMatrix<f64>> = (0..prob.blocks.len())
                .map(|k| &st.s[k] + &dss2[k] * ad)
                .collect();
            let xok = xs.iter().all(|m| m.clone().cholesky().is_some());
            let sok = ss.iter().all(|m| m.clone().cholesky().is_some());
            if xok && sok {
                st.x = xs;
                st.s = ss;
                accepted = true;
                break;
            }
            if !xok {
                ap *= 0.5;
            }
            if !sok {
                ad *= 0.5;
            }
        }
        if !accepted {
            return give_up(
                &best,
                iter,
                "no step keeps the iterates positive definite".into(),
            );
        }
        st.lam += ap * dl;
        st.y += &dy * ad;
        if ap < 1e-8 && ad < 1e-8 {
            stalls += 1;
            if stalls >= 3 {
                return give_up(
                    &best,
                    iter,
                    format!("stalled (gap {gap:.2e}, residual {pinf:.2e})"),
                );
            }
        } else {
            stalls = 0;
        }
    }
    give_up(&best, opts.max_iter, "iteration limit reached".into())
}
