//! Symmetric matrices affine in the delays and in the decision scalars.

use std::collections::HashMap;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Scalar coefficient `constant + slope * tau_agent` (agent 1-based).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayCoef {
    pub constant: f64,
    pub agent: Option<usize>,
    pub slope: f64,
}

impl DelayCoef {
    pub const ZERO: DelayCoef = DelayCoef {
        constant: 0.0,
        agent: None,
        slope: 0.0,
    };
    pub const ONE: DelayCoef = DelayCoef {
        constant: 1.0,
        agent: None,
        slope: 0.0,
    };

    pub fn constant(c: f64) -> Self {
        Self {
            constant: c,
            agent: None,
            slope: 0.0,
        }
    }

    /// `constant + slope * tau_k`.
    pub fn affine(k: usize, constant: f64, slope: f64) -> Self {
        Self {
            constant,
            agent: Some(k),
            slope,
        }
        .normalized()
    }

    fn normalized(self) -> Self {
        if self.slope == 0.0 {
            Self {
                agent: None,
                ..self
            }
        } else {
            self
        }
    }

    pub fn is_constant(&self) -> bool {
        self.agent.is_none()
    }

    pub fn is_zero(&self) -> bool {
        self.constant == 0.0 && self.is_constant()
    }

    /// Polynomial degree in the delay parameters (0 or 1).
    pub fn degree(&self) -> usize {
        usize::from(!self.is_constant())
    }

    pub fn eval(&self, taus: &[f64]) -> f64 {
        match self.agent {
            None => self.constant,
            Some(k) => self.constant + self.slope * taus[k - 1],
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            constant: self.constant * s,
            agent: self.agent,
            slope: self.slope * s,
        }
        .normalized()
    }

    /// Product; fails when both factors depend on a delay, since the
    /// result would no longer be affine.
    pub fn try_mul(&self, other: &DelayCoef) -> Result<DelayCoef> {
        match (self.agent, other.agent) {
            (Some(a), Some(b)) => Err(Error::Assembly(format!(
                "product of delay-dependent coefficients (tau_{a} * tau_{b}) is not affine"
            ))),
            (None, _) => Ok(other.scale(self.constant)),
            (Some(_), None) => Ok(self.scale(other.constant)),
        }
    }

    /// Sum; fails when the summands depend on different agents' delays.
    pub fn try_add(&self, other: &DelayCoef) -> Result<DelayCoef> {
        let agent = match (self.agent, other.agent) {
            (Some(a), Some(b)) if a != b => {
                return Err(Error::Assembly(format!(
                    "coefficient mixes tau_{a} and tau_{b} in one term"
                )))
            }
            (a, b) => a.or(b),
        };
        Ok(DelayCoef {
            constant: self.constant + other.constant,
            agent,
            slope: self.slope + other.slope,
        }
        .normalized())
    }
}

/// Sparse column over the augmented coordinates with delay coefficients.
pub type SparseCol = Vec<(usize, DelayCoef)>;

const CONST_VAR: u32 = u32::MAX;

/// Symmetric matrix `sum_v x_v C_v(tau) + C_0(tau)` with every `C` affine in
/// the delays. Only the upper triangle is stored; a stored value at `(r, c)`
/// is the full-matrix entry at both `(r, c)` and `(c, r)`.
#[derive(Debug, Clone, Default)]
pub struct AffineMatrixExpression {
    dim: usize,
    terms: HashMap<(u32, u32, u32), DelayCoef>,
}

impl AffineMatrixExpression {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            terms: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn term_count(&self) -> usize {
        self.terms.len()
    }

    /// Adds `coef` (times variable `var`, or as a constant) to the full-matrix
    /// entry `(r, c)` and its mirror.
    pub fn add(&mut self, r: usize, c: usize, var: Option<usize>, coef: DelayCoef) -> Result<()> {
        if r >= self.dim || c >= self.dim {
            return Err(Error::Assembly(format!(
                "entry ({r}, {c}) outside a {0}x{0} expression",
                self.dim
            )));
        }
        if coef.is_zero() {
            return Ok(());
        }
        let (lo, hi) = if r <= c { (r, c) } else { (c, r) };
        let v = var.map_or(CONST_VAR, |v| v as u32);
        let slot = self
            .terms
            .entry((lo as u32, hi as u32, v))
            .or_insert(DelayCoef::ZERO);
        *slot = slot.try_add(&coef)?;
        Ok(())
    }

    /// Adds `coef * x_var * (u v^T + v u^T)`.
    pub fn add_sym_outer(
        &mut self,
        u: &[(usize, DelayCoef)],
        v: &[(usize, DelayCoef)],
        var: Option<usize>,
        coef: DelayCoef,
    ) -> Result<()> {
        for &(r, a) in u {
            let ca = coef.try_mul(&a)?;
            for &(c, b) in v {
                let w = ca.try_mul(&b)?;
                if r == c {
                    self.add(r, c, var, w.scale(2.0))?;
                } else {
                    self.add(r, c, var, w)?;
                }
            }
        }
        Ok(())
    }

    /// Adds the upper triangle of `coef * x_var * u v^T`; summing this over a
    /// symmetric family of `(u, v)` pairs yields a symmetric contribution.
    pub fn add_outer_upper(
        &mut self,
        u: &[(usize, DelayCoef)],
        v: &[(usize, DelayCoef)],
        var: Option<usize>,
        coef: DelayCoef,
    ) -> Result<()> {
        for &(r, a) in u {
            let ca = coef.try_mul(&a)?;
            for &(c, b) in v {
                if r <= c {
                    self.add(r, c, var, ca.try_mul(&b)?)?;
                }
            }
        }
        Ok(())
    }

    /// Iterates `(row, col, var, coef)` over the stored upper triangle.
    pub fn terms(&self) -> impl Iterator<Item = (usize, usize, Option<usize>, DelayCoef)> + '_ {
        self.terms.iter().map(|(&(r, c, v), &coef)| {
            let var = (v != CONST_VAR).then_some(v as usize);
            (r as usize, c as usize, var, coef)
        })
    }

    /// Maximum degree in each agent's delay (index `k - 1`).
    pub fn degree_audit(&self, agents: usize) -> Vec<usize> {
        let mut deg = vec![0; agents];
        for coef in self.terms.values() {
            if let Some(k) = coef.agent {
                deg[k - 1] = deg[k - 1].max(coef.degree());
            }
        }
        deg
    }

    /// Dense evaluation at a variable assignment and delay vector.
    pub fn evaluate(&self, x: &[f64], taus: &[f64]) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.dim, self.dim);
        for (r, c, var, coef) in self.terms() {
            let scale = var.map_or(1.0, |v| x[v]);
            let val = coef.eval(taus) * scale;
            out[(r, c)] += val;
            if r != c {
                out[(c, r)] += val;
            }
        }
        out
    }

    /// Substitutes the delays and returns the numeric upper-triangle terms
    /// `(row, col, var, value)` sorted by `(var, row, col)`, zeros dropped.
    pub fn substitute(&self, taus: &[f64]) -> Vec<(usize, usize, Option<usize>, f64)> {
        let mut out: Vec<_> = self
            .terms()
            .map(|(r, c, var, coef)| (r, c, var, coef.eval(taus)))
            .filter(|t| t.3 != 0.0)
            .collect();
        out.sort_by(|a, b| {
            let ka = (a.2.map_or(usize::MAX, |v| v), a.0, a.1);
            let kb = (b.2.map_or(usize::MAX, |v| v), b.0, b.1);
            ka.cmp(&kb)
        });
        out
    }
}
