use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::assemble::{positivity_constraints, Assembled};
use super::expr::AffineMatrixExpression;
use super::vars::VariableSpace;
use crate::error::{Error, Result};

/// Required sign of a constraint matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sense {
    /// `G(x) < 0`
    NegDef,
    /// `G(x) > 0`
    PosDef,
}

impl Sense {
    /// `+1` for `> 0`, `-1` for `< 0`.
    pub fn sign(self) -> f64 {
        match self {
            Sense::NegDef => -1.0,
            Sense::PosDef => 1.0,
        }
    }
}

/// A constraint with the delays substituted: upper-triangle terms
/// `(row, col, var, value)`, sorted by `(var, row, col)`; `var = None` is the
/// constant part.
#[derive(Debug, Clone, PartialEq)]
pub struct NumericConstraint {
    pub label: String,
    pub dim: usize,
    pub sense: Sense,
    pub entries: Vec<(usize, usize, Option<usize>, f64)>,
}

impl NumericConstraint {
    pub fn from_expression(
        label: &str,
        expr: &AffineMatrixExpression,
        sense: Sense,
        taus: &[f64],
    ) -> Self {
        Self {
            label: label.to_string(),
            dim: expr.dim(),
            sense,
            entries: expr.substitute(taus),
        }
    }

    /// Content hash ignoring the label.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.dim.hash(&mut h);
        self.sense.hash(&mut h);
        for &(r, c, v, x) in &self.entries {
            (r, c, v, x.to_bits()).hash(&mut h);
        }
        h.finish()
    }

    pub fn same_content(&self, other: &Self) -> bool {
        self.dim == other.dim && self.sense == other.sense && self.entries == other.entries
    }

    pub fn evaluate(&self, x: &[f64]) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.dim, self.dim);
        for &(r, c, var, val) in &self.entries {
            let v = val * var.map_or(1.0, |i| x[i]);
            out[(r, c)] += v;
            if r != c {
                out[(c, r)] += v;
            }
        }
        out
    }
}

/// Schur column block removed at a vertex because its weight vanished.
#[derive(Debug, Clone, PartialEq)]
pub struct PrunedBlock {
    pub label: String,
    pub start: usize,
    pub size: usize,
}

/// Constraints at one corner of the delay box.
#[derive(Debug, Clone)]
pub struct VertexProblem {
    pub vertex: Vec<f64>,
    pub constraints: Vec<NumericConstraint>,
    pub pruned: Vec<PrunedBlock>,
}

impl VertexProblem {
    /// The main (vertex-dependent) constraint.
    pub fn xi(&self) -> &NumericConstraint {
        &self.constraints[0]
    }
}

/// Substitutes `tau` into `Xi`, dropping Schur blocks whose diagonal block
/// vanished identically. A dropped block must have a vanishing coupling too.
pub fn substitute_xi(
    assembled: &Assembled,
    taus: &[f64],
) -> Result<(NumericConstraint, Vec<PrunedBlock>)> {
    let dim = assembled.xi.dim();
    let entries = assembled.xi.substitute(taus);
    let block_of = |i: usize| {
        assembled
            .schur
            .iter()
            .position(|b| i >= b.start && i < b.start + b.size)
    };
    let mut has_diag = vec![false; assembled.schur.len()];
    for &(r, c, _, _) in &entries {
        if let (Some(a), Some(b)) = (block_of(r), block_of(c)) {
            if a == b {
                has_diag[a] = true;
            }
        }
    }
    let mut pruned = Vec::new();
    let mut drop = vec![false; dim];
    for (s, blk) in assembled.schur.iter().enumerate() {
        if !has_diag[s] {
            drop[blk.start..blk.start + blk.size]
                .iter_mut()
                .for_each(|d| *d = true);
            pruned.push(PrunedBlock {
                label: blk.label.clone(),
                start: blk.start,
                size: blk.size,
            });
        }
    }
    let mut new_index = vec![usize::MAX; dim];
    let mut next = 0;
    for i in 0..dim {
        if !drop[i] {
            new_index[i] = next;
            next += 1;
        }
    }
    let mut kept = Vec::with_capacity(entries.len());
    for (r, c, v, x) in entries {
        match (drop[r], drop[c]) {
            (false, false) => kept.push((new_index[r], new_index[c], v, x)),
            (true, true) => {
                return Err(Error::Assembly(format!(
                    "pruned block has a nonzero entry at ({r}, {c})"
                )))
            }
            _ => {
                return Err(Error::Assembly(format!(
                    "Schur block pruned at tau = {taus:?} but its coupling entry ({r}, {c}) = {x} is nonzero"
                )))
            }
        }
    }
    Ok((
        NumericConstraint {
            label: "Xi".into(),
            dim: next,
            sense: Sense::NegDef,
            entries: kept,
        },
        pruned,
    ))
}

/// All `2^m` corners of the delay box, in binary order with agent 1 as the
/// least significant digit (0 = lower bound).
pub fn corners(assembled: &Assembled) -> Vec<Vec<f64>> {
    let m = assembled.bounds.len();
    (0..1usize << m)
        .map(|mask| {
            (0..m)
                .map(|k| {
                    let b = &assembled.bounds[k];
                    if mask >> k & 1 == 0 {
                        b.lower
                    } else {
                        b.upper
                    }
                })
                .collect()
        })
        .collect()
}

/// `Xi@` followed by one `l`/`u` per agent, agent 1 first.
pub fn corner_label(mask: usize, agents: usize) -> String {
    let tag: String = (0..agents)
        .map(|k| if mask >> k & 1 == 0 { 'l' } else { 'u' })
        .collect();
    format!("Xi@{tag}")
}

/// One problem per corner: `Xi(corner) < 0`, the side constraints and the
/// positivity of the definite variables.
pub fn vertex_problems(assembled: &Assembled, vars: &VariableSpace) -> Result<Vec<VertexProblem>> {
    let degrees = assembled.xi.degree_audit(assembled.bounds.len());
    if let Some(k) = degrees.iter().position(|&d| d > 1) {
        return Err(Error::Assembly(format!(
            "Xi is not affine in tau_{}",
            k + 1
        )));
    }
    let mut common = Vec::new();
    for (label, e) in &assembled.side {
        common.push(NumericConstraint::from_expression(
            label,
            e,
            Sense::PosDef,
            &[],
        ));
    }
    for (label, e) in positivity_constraints(vars)? {
        common.push(NumericConstraint::from_expression(
            &label,
            &e,
            Sense::PosDef,
            &[],
        ));
    }
    corners(assembled)
        .into_iter()
        .enumerate()
        .map(|(mask, vertex)| {
            let (mut xi, pruned) = substitute_xi(assembled, &vertex)?;
            xi.label = corner_label(mask, vertex.len());
            let mut constraints = vec![xi];
            constraints.extend(common.iter().cloned());
            Ok(VertexProblem {
                vertex,
                constraints,
                pruned,
            })
        })
        .collect()
}

/// Drops vertices whose `Xi` duplicates an earlier one exactly.
pub fn distinct_vertices(problems: &[VertexProblem]) -> Vec<&VertexProblem> {
    let mut out: Vec<&VertexProblem> = Vec::new();
    let mut seen: Vec<(u64, usize)> = Vec::new();
    for p in problems {
        let fp = p.xi().fingerprint();
        let dup = seen
            .iter()
            .any(|&(h, i)| h == fp && out[i].xi().same_content(p.xi()));
        if !dup {
            seen.push((fp, out.len()));
            out.push(p);
        }
    }
    out
}
