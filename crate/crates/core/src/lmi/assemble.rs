use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::expr::{AffineMatrixExpression, DelayCoef, SparseCol};
use super::layout::AugmentedLayout;
use super::vars::{MatrixVar, VarKind, VariableSpace};
use crate::error::{Error, Result};
use crate::legendre::{gamma_table, mbar_rows, Interval, IntervalRole};
use crate::model::{DelayBound, ErrorSystem};

/// Which criterion to assemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Full criterion with the zero-equality weights `W`.
    Theorem,
    /// Criterion without `W`.
    Corollary,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Theorem => "theorem",
            Method::Corollary => "corollary",
        })
    }
}

/// Layout of the Schur-complement columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchurForm {
    /// One column block per interval and agent, each scaled by its own
    /// interval length (the form derived in the stability proof).
    Proof,
    /// Mid and upper intervals share one column block, with the diagonal
    /// weights as printed in the criterion statement.
    Merged,
}

/// The three column blocks `Pi_1k(tau)`, `Pi_2k`, `Pi_3`.
#[derive(Debug, Clone)]
pub struct PiBlocks {
    pub pi1: Vec<SparseCol>,
    pub pi2: Vec<SparseCol>,
    pub pi3: Vec<SparseCol>,
}

/// Dense evaluation of a list of sparse columns.
pub fn dense_columns(cols: &[SparseCol], rows: usize, taus: &[f64]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(rows, cols.len());
    for (c, col) in cols.iter().enumerate() {
        for &(r, coef) in col {
            out[(r, c)] += coef.eval(taus);
        }
    }
    out
}

fn selector_cols(layout: &AugmentedLayout, terms: &[(usize, DelayCoef)]) -> Vec<SparseCol> {
    (0..layout.dim)
        .map(|c| {
            terms
                .iter()
                .filter(|(_, coef)| !coef.is_zero())
                .map(|&(blk, coef)| (layout.offset(blk) + c, coef))
                .collect()
        })
        .collect()
}

/// Columns of `e_1 Abar^T - sum_j e_{1+2m+j} Bbar_j^T`: maps the augmented
/// vector to `z'(t)`.
pub fn dynamics_columns(err: &ErrorSystem, layout: &AugmentedLayout) -> Vec<SparseCol> {
    let f = layout.dim;
    (0..f)
        .map(|c| {
            let mut col = Vec::new();
            for r in 0..f {
                let a = err.abar[(c, r)];
                if a != 0.0 {
                    col.push((layout.offset(layout.current()) + r, DelayCoef::constant(a)));
                }
            }
            for j in 1..=layout.agents {
                let base = layout.offset(layout.varying_delay(j));
                for r in 0..f {
                    let b = err.bbar[j - 1][(c, r)];
                    if b != 0.0 {
                        col.push((base + r, DelayCoef::constant(-b)));
                    }
                }
            }
            col
        })
        .collect()
}

fn check_shapes(err: &ErrorSystem, layout: &AugmentedLayout) -> Result<()> {
    if err.agents != layout.agents || err.dim != layout.dim || err.bounds.len() != layout.agents {
        return Err(Error::Dimension(format!(
            "error system (m = {}, F = {}) does not match layout (m = {}, F = {})",
            err.agents, err.dim, layout.agents, layout.dim
        )));
    }
    Ok(())
}

pub fn build_pi_blocks(err: &ErrorSystem, layout: &AugmentedLayout, k: usize) -> Result<PiBlocks> {
    check_shapes(err, layout)?;
    if k == 0 || k > layout.agents {
        return Err(Error::OutOfRange(format!(
            "agent {k} outside 1..={}",
            layout.agents
        )));
    }
    let b = err.bounds[k - 1];
    let one = DelayCoef::ONE;
    let neg = DelayCoef::constant(-1.0);
    let dyn_cols = dynamics_columns(err, layout);
    let mut pi1 = selector_cols(layout, &[(layout.current(), one)]);
    pi1.extend(selector_cols(
        layout,
        &[(layout.int_lower(k, 1), DelayCoef::constant(b.lower))],
    ));
    pi1.extend(selector_cols(
        layout,
        &[
            (
                layout.int_mid(k, 1),
                IntervalRole::new(Interval::Mid, k).length(&b),
            ),
            (
                layout.int_upper(k, 1),
                IntervalRole::new(Interval::Upper, k).length(&b),
            ),
        ],
    ));
    let mut pi2 = dyn_cols.clone();
    pi2.extend(selector_cols(
        layout,
        &[(layout.current(), one), (layout.lower_delay(k), neg)],
    ));
    pi2.extend(selector_cols(
        layout,
        &[(layout.lower_delay(k), one), (layout.upper_delay(k), neg)],
    ));
    let mut pi3 = dyn_cols;
    pi3.extend(selector_cols(layout, &[(layout.current(), one)]));
    Ok(PiBlocks { pi1, pi2, pi3 })
}

/// Adds `coef * L V L^T` for a symmetric matrix variable `V`.
fn add_congruence(
    expr: &mut AffineMatrixExpression,
    l: &[SparseCol],
    v: &MatrixVar,
    coef: DelayCoef,
) -> Result<()> {
    for a in 0..v.rows {
        for b in 0..v.cols {
            expr.add_outer_upper(&l[a], &l[b], Some(v.scalar(a, b)), coef)?;
        }
    }
    Ok(())
}

/// Adds `coef * Sym(L V R^T)`.
fn add_sym_product(
    expr: &mut AffineMatrixExpression,
    l: &[SparseCol],
    v: &MatrixVar,
    r: &[SparseCol],
    coef: DelayCoef,
) -> Result<()> {
    for a in 0..v.rows {
        for b in 0..v.cols {
            expr.add_sym_outer(&l[a], &r[b], Some(v.scalar(a, b)), coef)?;
        }
    }
    Ok(())
}

/// Adds `coef * (R + Wbar)` with `Wbar = [[0, W], [W, 0]]` at `(base, base)`.
fn add_r_plus_wbar(
    expr: &mut AffineMatrixExpression,
    base: usize,
    r: &MatrixVar,
    w: Option<&MatrixVar>,
    coef: DelayCoef,
) -> Result<()> {
    for a in 0..r.rows {
        for b in a..r.rows {
            expr.add(base + a, base + b, Some(r.scalar(a, b)), coef)?;
        }
    }
    if let Some(w) = w {
        let f = w.rows;
        for a in 0..f {
            for b in 0..f {
                expr.add(base + a, base + f + b, Some(w.scalar(a, b)), coef)?;
            }
        }
    }
    Ok(())
}

/// Audit record of one Schur column block of `Xi`.
#[derive(Debug, Clone, PartialEq)]
pub struct SchurBlock {
    pub label: String,
    pub agent: usize,
    pub start: usize,
    pub size: usize,
}

/// An assembled criterion: `Xi(tau) < 0` plus side constraints `> 0`.
#[derive(Debug, Clone)]
pub struct Assembled {
    pub method: Method,
    pub form: SchurForm,
    pub layout: AugmentedLayout,
    pub bounds: Vec<DelayBound>,
    pub xi: AffineMatrixExpression,
    pub side: Vec<(String, AffineMatrixExpression)>,
    pub schur: Vec<SchurBlock>,
}

struct SchurSpec {
    label: String,
    agent: usize,
    couplings: Vec<(Interval, DelayCoef)>,
    diag: Vec<(VarKind, Option<VarKind>, DelayCoef)>,
}

fn schur_specs(method: Method, form: SchurForm, bounds: &[DelayBound]) -> Vec<SchurSpec> {
    let w = |kind| (method == Method::Theorem).then_some(kind);
    let m = bounds.len();
    let mut specs = Vec::new();
    let len = |iv, k: usize| IntervalRole::new(iv, k).length(&bounds[k - 1]);
    match form {
        SchurForm::Proof => {
            for (iv, r, wk) in [
                (Interval::Lower, VarKind::R1, VarKind::W1),
                (Interval::Mid, VarKind::R2, VarKind::W2),
                (Interval::Upper, VarKind::R2, VarKind::W3),
            ] {
                for k in 1..=m {
                    let c = len(iv, k);
                    specs.push(SchurSpec {
                        label: format!("X{}_{k}", iv.index()),
                        agent: k,
                        couplings: vec![(iv, c)],
                        diag: vec![(r, w(wk), c)],
                    });
                }
            }
        }
        SchurForm::Merged => {
            for k in 1..=m {
                let b = bounds[k - 1];
                let rw1 = match method {
                    Method::Theorem => DelayCoef::constant(b.width()),
                    Method::Corollary => DelayCoef::constant(b.lower),
                };
                specs.push(SchurSpec {
                    label: format!("X1_{k}"),
                    agent: k,
                    couplings: vec![(Interval::Lower, len(Interval::Lower, k))],
                    diag: vec![(VarKind::R1, w(VarKind::W1), rw1)],
                });
            }
            for k in 1..=m {
                let b = bounds[k - 1];
                let (mid, upper) = (len(Interval::Mid, k), len(Interval::Upper, k));
                let diag = match method {
                    Method::Theorem => vec![
                        (VarKind::R2, w(VarKind::W2), mid.scale(b.width())),
                        (VarKind::R2, w(VarKind::W3), upper.scale(b.width())),
                    ],
                    Method::Corollary => {
                        vec![(VarKind::R2, None, DelayCoef::constant(b.width()))]
                    }
                };
                specs.push(SchurSpec {
                    label: format!("X23_{k}"),
                    agent: k,
                    couplings: vec![(Interval::Mid, mid), (Interval::Upper, upper)],
                    diag,
                });
            }
        }
    }
    specs
}

fn assemble(
    err: &ErrorSystem,
    layout: &AugmentedLayout,
    vars: &VariableSpace,
    method: Method,
    form: SchurForm,
) -> Result<Assembled> {
    check_shapes(err, layout)?;
    if vars.layout != *layout {
        return Err(Error::Dimension(
            "variable space built for a different layout".into(),
        ));
    }
    if method == Method::Theorem && !vars.with_w {
        return Err(Error::Assembly("theorem needs the W variables".into()));
    }
    let f = layout.dim;
    let m = layout.agents;
    let nn = layout.order;
    let zdim = layout.zeta_dim();
    let gamma = gamma_table(nn);
    let block = 2 * (nn + 1) * f;
    let specs = schur_specs(method, form, &err.bounds);
    let dim = zdim + specs.len() * block;
    let mut xi = AffineMatrixExpression::new(dim);
    let with_w = method == Method::Theorem;
    let w_of = |kind, k| with_w.then(|| vars.expect(kind, k));

    for k in 1..=m {
        let b = err.bounds[k - 1];
        let pi = build_pi_blocks(err, layout, k)?;
        add_sym_product(
            &mut xi,
            &pi.pi2,
            vars.expect(VarKind::P, k),
            &pi.pi1,
            DelayCoef::ONE,
        )?;

        let sel = |blk: usize| selector_cols(layout, &[(blk, DelayCoef::ONE)]);
        let (e1, el, eu, ev) = (
            sel(layout.current()),
            sel(layout.lower_delay(k)),
            sel(layout.upper_delay(k)),
            sel(layout.varying_delay(k)),
        );
        let pos = DelayCoef::ONE;
        let neg = DelayCoef::constant(-1.0);
        let q1 = vars.expect(VarKind::Q1, k);
        let q2 = vars.expect(VarKind::Q2, k);
        add_congruence(&mut xi, &e1, q1, pos)?;
        add_congruence(&mut xi, &el, q2, pos)?;
        add_congruence(&mut xi, &el, q1, neg)?;
        add_congruence(&mut xi, &eu, q2, neg)?;
        if with_w {
            let (w1, w2, w3) = (
                w_of(VarKind::W1, k).unwrap(),
                w_of(VarKind::W2, k).unwrap(),
                w_of(VarKind::W3, k).unwrap(),
            );
            add_congruence(&mut xi, &e1, w1, pos)?;
            add_congruence(&mut xi, &el, w2, pos)?;
            add_congruence(&mut xi, &el, w1, neg)?;
            add_congruence(&mut xi, &ev, w3, pos)?;
            add_congruence(&mut xi, &ev, w2, neg)?;
            add_congruence(&mut xi, &eu, w3, neg)?;
        }
        add_congruence(
            &mut xi,
            &pi.pi3,
            vars.expect(VarKind::R1, k),
            DelayCoef::constant(b.lower),
        )?;
        add_congruence(
            &mut xi,
            &pi.pi3,
            vars.expect(VarKind::R2, k),
            DelayCoef::constant(b.width()),
        )?;

        for iv in Interval::ALL {
            let role = IntervalRole::new(iv, k);
            let rows = mbar_rows(role, &gamma, layout)?;
            for (jm, row) in rows.iter().enumerate() {
                let y = vars.expect(
                    VarKind::Y {
                        interval: iv.index(),
                        j: jm + 1,
                    },
                    k,
                );
                let coefs = row.coefficients(&b);
                for c in 0..f {
                    let mcol: SparseCol = coefs
                        .iter()
                        .map(|&(blk, coef)| (layout.offset(blk) + c, coef))
                        .collect();
                    for r in 0..zdim {
                        expr_y_term(&mut xi, r, &mcol, y.scalar(r, c))?;
                    }
                }
            }
        }
    }

    let mut schur = Vec::with_capacity(specs.len());
    for (s, spec) in specs.iter().enumerate() {
        let base = zdim + s * block;
        let k = spec.agent;
        for &(iv, coef) in &spec.couplings {
            for j in 1..=2 * nn + 1 {
                let y = vars.expect(
                    VarKind::Y {
                        interval: iv.index(),
                        j,
                    },
                    k,
                );
                for r in 0..zdim {
                    for c in 0..f {
                        xi.add(r, base + (j - 1) * f + c, Some(y.scalar(r, c)), coef)?;
                    }
                }
            }
        }
        for &(rk, wk, coef) in &spec.diag {
            let rv = vars.expect(rk, k);
            let wv = wk.map(|kind| vars.expect(kind, k));
            for i in 0..=nn {
                let scale = -((2 * i + 1) as f64);
                add_r_plus_wbar(&mut xi, base + 2 * i * f, rv, wv, coef.scale(scale))?;
            }
        }
        schur.push(SchurBlock {
            label: spec.label.clone(),
            agent: k,
            start: base,
            size: block,
        });
    }

    let mut side = Vec::new();
    if with_w {
        for k in 1..=m {
            for (rk, wk, name) in [
                (VarKind::R1, VarKind::W1, "R1+W1"),
                (VarKind::R2, VarKind::W2, "R2+W2"),
                (VarKind::R2, VarKind::W3, "R2+W3"),
            ] {
                let mut e = AffineMatrixExpression::new(2 * f);
                add_r_plus_wbar(
                    &mut e,
                    0,
                    vars.expect(rk, k),
                    Some(vars.expect(wk, k)),
                    DelayCoef::ONE,
                )?;
                side.push((format!("{name}_{k}"), e));
            }
        }
    }

    Ok(Assembled {
        method,
        form,
        layout: *layout,
        bounds: err.bounds.clone(),
        xi,
        side,
        schur,
    })
}

fn expr_y_term(
    xi: &mut AffineMatrixExpression,
    r: usize,
    mcol: &SparseCol,
    var: usize,
) -> Result<()> {
    xi.add_sym_outer(&[(r, DelayCoef::ONE)], mcol, Some(var), DelayCoef::ONE)
}

/// Criterion with zero-equality weights.
pub fn assemble_theorem(
    err: &ErrorSystem,
    layout: &AugmentedLayout,
    vars: &VariableSpace,
    form: SchurForm,
) -> Result<Assembled> {
    assemble(err, layout, vars, Method::Theorem, form)
}

/// Criterion without `W`; any `W` variables present in `vars` stay unused.
pub fn assemble_corollary(
    err: &ErrorSystem,
    layout: &AugmentedLayout,
    vars: &VariableSpace,
    form: SchurForm,
) -> Result<Assembled> {
    assemble(err, layout, vars, Method::Corollary, form)
}

pub fn assemble_method(
    err: &ErrorSystem,
    layout: &AugmentedLayout,
    vars: &VariableSpace,
    method: Method,
    form: SchurForm,
) -> Result<Assembled> {
    assemble(err, layout, vars, method, form)
}

/// Variables kept when every `Y_ikj` is restricted to rows in the layout
/// blocks read by interval `i`'s own `M` rows (plus the blocks of
/// `extra` intervals of the same agent). Restricting can only shrink the
/// feasible set, so any point found this way is a point of the full criterion.
pub fn restricted_y_mask(
    vars: &VariableSpace,
    extra: &[(Interval, Interval)],
) -> Result<Vec<bool>> {
    let layout = &vars.layout;
    let gamma = gamma_table(layout.order);
    let f = layout.dim;
    let mut keep = vec![true; vars.num_scalars()];
    for k in 1..=layout.agents {
        let mut touched = Vec::new();
        for iv in Interval::ALL {
            let mut blocks = vec![false; layout.block_count() + 1];
            for row in mbar_rows(IntervalRole::new(iv, k), &gamma, layout)? {
                for &(blk, _) in &row.terms {
                    blocks[blk] = true;
                }
            }
            touched.push(blocks);
        }
        for iv in Interval::ALL {
            let mut allowed = touched[iv.index() - 1].clone();
            for &(a, b) in extra {
                if a == iv {
                    for (x, &y) in allowed.iter_mut().zip(&touched[b.index() - 1]) {
                        *x |= y;
                    }
                }
            }
            for j in 1..=2 * layout.order + 1 {
                let y = vars.expect(
                    VarKind::Y {
                        interval: iv.index(),
                        j,
                    },
                    k,
                );
                for r in 0..y.rows {
                    let blk = 1 + r / f;
                    if !allowed[blk] {
                        for c in 0..y.cols {
                            keep[y.scalar(r, c)] = false;
                        }
                    }
                }
            }
        }
    }
    Ok(keep)
}

/// `V > 0` for every positive-definite matrix variable.
pub fn positivity_constraints(
    vars: &VariableSpace,
) -> Result<Vec<(String, AffineMatrixExpression)>> {
    let mut out = Vec::new();
    for v in vars.vars().iter().filter(|v| v.positive) {
        let mut e = AffineMatrixExpression::new(v.rows);
        for a in 0..v.rows {
            for b in a..v.rows {
                e.add(a, b, Some(v.scalar(a, b)), DelayCoef::ONE)?;
            }
        }
        out.push((v.name(), e));
    }
    Ok(out)
}
