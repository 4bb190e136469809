//! Strict feasibility of linear matrix inequalities.
//!
//! A [`StandardForm`] collects symmetric blocks `G_c(x) = K_c + sum_i x_i A_ci`
//! that must be negative or positive definite. Solving maximises the uniform
//! margin `t` with `s_c G_c(x) >= t I` (`s_c` the sign of the sense) on the
//! slice fixed by a linear normalisation, and every feasible answer carries a
//! witness that is re-checked with an independent eigensolver.

mod eig;
mod external;
mod ipm;
mod sdpa;

use std::collections::HashMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lmi::{NumericConstraint, Sense, VariableSpace, VertexProblem};

pub use eig::symmetric_eigenvalues;
pub use sdpa::{export_sdpa, parse_sdpa, read_sdpa, write_sdpa};

/// Default strictness threshold on the margin.
pub const EPS_STRICT: f64 = 1e-7;

/// Instances above these sizes go to the first-order backend by default.
/// The built-in solver stores a dense Schur matrix; beyond this many
/// variables it refuses rather than exhaust memory.
pub const BUILTIN_MAX_VARS: usize = 16_000;

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub size: usize,
    pub sense: Sense,
    pub label: String,
}

/// Vectorised constraint set. Entries are upper-triangle `(row, col)` with
/// `row <= col`, sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardForm {
    pub num_vars: usize,
    pub blocks: Vec<Block>,
    /// Per block: `(row, col, value)`.
    pub constants: Vec<Vec<(usize, usize, f64)>>,
    /// Per block: `(var, row, col, value)`, sorted by `(var, row, col)`.
    pub coefficients: Vec<Vec<(usize, usize, usize, f64)>>,
    /// Linear slice `sum a_i x_i = rhs`; empty when the problem has no
    /// definite variables.
    pub normalization: Vec<(usize, f64)>,
    pub normalization_rhs: f64,
}

impl StandardForm {
    /// Packs numeric constraints, dropping exact duplicates.
    pub fn from_constraints(
        constraints: &[NumericConstraint],
        num_vars: usize,
        normalization: (Vec<(usize, f64)>, f64),
    ) -> Result<Self> {
        let mut norm: Vec<(usize, f64)> = Vec::new();
        let mut raw = normalization.0;
        raw.sort_by_key(|e| e.0);
        for (i, a) in raw {
            match norm.last_mut() {
                Some(last) if last.0 == i => last.1 += a,
                _ => norm.push((i, a)),
            }
        }
        norm.retain(|e| e.1 != 0.0);
        let mut sf = StandardForm {
            num_vars,
            blocks: Vec::new(),
            constants: Vec::new(),
            coefficients: Vec::new(),
            normalization: norm,
            normalization_rhs: normalization.1,
        };
        let mut seen: HashMap<u64, Vec<usize>> = HashMap::new();
        let mut kept: Vec<&NumericConstraint> = Vec::new();
        for c in constraints {
            let fp = c.fingerprint();
            let bucket = seen.entry(fp).or_default();
            if bucket.iter().any(|&i| kept[i].same_content(c)) {
                continue;
            }
            bucket.push(kept.len());
            kept.push(c);
            let mut consts = Vec::new();
            let mut coefs = Vec::new();
            for &(r, col, var, val) in &c.entries {
                if r > col || col >= c.dim {
                    return Err(Error::Assembly(format!(
                        "entry ({r}, {col}) of {} is not upper-triangular",
                        c.label
                    )));
                }
                if !val.is_finite() {
                    return Err(Error::Assembly(format!(
                        "non-finite coefficient in {}",
                        c.label
                    )));
                }
                if val == 0.0 {
                    continue;
                }
                match var {
                    None => consts.push((r, col, val)),
                    Some(v) if v < num_vars => coefs.push((v, r, col, val)),
                    Some(v) => {
                        return Err(Error::Dimension(format!(
                            "variable {v} out of range in {}",
                            c.label
                        )))
                    }
                }
            }
            consts.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
            coefs.sort_by(|a, b| (a.0, a.1, a.2).cmp(&(b.0, b.1, b.2)));
            sf.blocks.push(Block {
                size: c.dim,
                sense: c.sense,
                label: c.label.clone(),
            });
            sf.constants.push(consts);
            sf.coefficients.push(coefs);
        }
        sf.validate()?;
        Ok(sf)
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() {
            return Err(Error::Assembly("problem has no constraint blocks".into()));
        }
        if self.constants.len() != self.blocks.len() || self.coefficients.len() != self.blocks.len()
        {
            return Err(Error::Dimension("block tables disagree in length".into()));
        }
        for (b, blk) in self.blocks.iter().enumerate() {
            if blk.size == 0 {
                return Err(Error::Dimension(format!("block {} is empty", b + 1)));
            }
            let ok_c = self.constants[b]
                .iter()
                .all(|&(r, c, _)| r <= c && c < blk.size);
            let ok_a = self.coefficients[b]
                .iter()
                .all(|&(v, r, c, _)| r <= c && c < blk.size && v < self.num_vars);
            if !ok_c || !ok_a {
                return Err(Error::Dimension(format!(
                    "block {} has an entry out of range",
                    b + 1
                )));
            }
        }
        if self.normalization.iter().any(|&(v, _)| v >= self.num_vars) {
            return Err(Error::Dimension(
                "normalization refers to an unknown variable".into(),
            ));
        }
        Ok(())
    }

    pub fn total_block_dim(&self) -> usize {
        self.blocks.iter().map(|b| b.size).sum()
    }

    /// `G_c(x)` as a dense symmetric matrix.
    pub fn block_value(&self, b: usize, x: &[f64]) -> DMatrix<f64> {
        let n = self.blocks[b].size;
        let mut g = DMatrix::zeros(n, n);
        for &(r, c, v) in &self.constants[b] {
            g[(r, c)] += v;
        }
        for &(i, r, c, v) in &self.coefficients[b] {
            g[(r, c)] += v * x[i];
        }
        for c in 0..n {
            for r in c + 1..n {
                g[(r, c)] = g[(c, r)];
            }
        }
        g
    }

    /// The same problem over the variables flagged in `keep`, the others
    /// fixed at zero. Returns the problem and, per new variable, its old index.
    pub fn restrict(&self, keep: &[bool]) -> Result<(StandardForm, Vec<usize>)> {
        if keep.len() != self.num_vars {
            return Err(Error::Dimension(format!(
                "mask has {} entries for {} variables",
                keep.len(),
                self.num_vars
            )));
        }
        let old: Vec<usize> = (0..self.num_vars).filter(|&i| keep[i]).collect();
        let mut new_index = vec![usize::MAX; self.num_vars];
        for (j, &i) in old.iter().enumerate() {
            new_index[i] = j;
        }
        if let Some(&(i, _)) = self.normalization.iter().find(|&&(i, _)| !keep[i]) {
            return Err(Error::Assembly(format!(
                "normalised variable {i} cannot be removed"
            )));
        }
        let restricted = StandardForm {
            num_vars: old.len(),
            blocks: self.blocks.clone(),
            constants: self.constants.clone(),
            coefficients: self
                .coefficients
                .iter()
                .map(|c| {
                    c.iter()
                        .filter(|e| keep[e.0])
                        .map(|&(i, r, col, v)| (new_index[i], r, col, v))
                        .collect()
                })
                .collect(),
            normalization: self
                .normalization
                .iter()
                .map(|&(i, a)| (new_index[i], a))
                .collect(),
            normalization_rhs: self.normalization_rhs,
        };
        restricted.validate()?;
        Ok((restricted, old))
    }

    /// Lifts a point of a restricted problem back to this one.
    pub fn expand(&self, old_index: &[usize], x: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.num_vars];
        for (&i, &v) in old_index.iter().zip(x) {
            full[i] = v;
        }
        full
    }

    /// Variables that appear in at least one block.
    pub fn used_vars(&self) -> Vec<bool> {
        let mut used = vec![false; self.num_vars];
        for coefs in &self.coefficients {
            for &(v, _, _, _) in coefs {
                used[v] = true;
            }
        }
        used
    }

    /// Smallest eigenvalue of `s_c G_c(x)` over all blocks, by the
    /// independent eigensolver.
    pub fn signed_min_eigenvalue(&self, x: &[f64]) -> Option<f64> {
        let mut worst = f64::INFINITY;
        for b in 0..self.blocks.len() {
            worst = worst.min(self.block_margin(b, x)?);
        }
        Some(worst)
    }

    /// Smallest eigenvalue of `s_b G_b(x)` for one block.
    pub fn block_margin(&self, b: usize, x: &[f64]) -> Option<f64> {
        let g = self.block_value(b, x) * self.blocks[b].sense.sign();
        symmetric_eigenvalues(&g).map(|ev| ev.first().copied().unwrap_or(f64::INFINITY))
    }
}

/// Packs every constraint of every vertex problem.
pub fn vectorize(problems: &[VertexProblem], vars: &VariableSpace) -> Result<StandardForm> {
    let all: Vec<NumericConstraint> = problems
        .iter()
        .flat_map(|p| p.constraints.iter().cloned())
        .collect();
    StandardForm::from_constraints(&all, vars.num_scalars(), vars.trace_normalization())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Status {
    Feasible,
    Infeasible,
    Marginal,
    SolverFailure,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Feasible => "FEASIBLE",
            Status::Infeasible => "INFEASIBLE",
            Status::Marginal => "MARGINAL",
            Status::SolverFailure => "SOLVER_FAILURE",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub status: Status,
    pub margin: f64,
    pub iterations: usize,
    pub backend: String,
    pub witness: Option<Vec<f64>>,
    pub message: String,
}

impl FeasibilityReport {
    pub fn failure(backend: &str, iterations: usize, message: impl Into<String>) -> Self {
        Self {
            status: Status::SolverFailure,
            margin: f64::NAN,
            iterations,
            backend: backend.to_string(),
            witness: None,
            message: message.into(),
        }
    }

    pub fn is_feasible(&self) -> bool {
        self.status == Status::Feasible
    }
}

/// Which solver decides feasibility.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum Backend {
    /// `DCL_SOLVER` when set, otherwise the built-in solver.
    #[default]
    Auto,
    Builtin,
    /// An executable called as `<path> <problem.dat-s> <solution.txt>`.
    External(PathBuf),
}

impl Backend {
    /// Reads `DCL_SOLVER`, defaulting to [`Backend::Auto`].
    pub fn from_env() -> Result<Self> {
        match std::env::var("DCL_SOLVER") {
            Ok(s) if !s.trim().is_empty() => s.parse(),
            _ => Ok(Backend::Auto),
        }
    }
}

impl FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "auto" => Ok(Backend::Auto),
            "builtin" => Ok(Backend::Builtin),
            _ => match s.strip_prefix("external:") {
                Some(p) if !p.is_empty() => Ok(Backend::External(PathBuf::from(p))),
                _ => Err(Error::OutOfRange(format!(
                    "unknown solver '{s}' (expected auto, builtin or external:<path>)"
                ))),
            },
        }
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Backend::Auto => f.write_str("auto"),
            Backend::Builtin => f.write_str("builtin"),
            Backend::External(p) => write!(f, "external:{}", p.display()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOptions {
    pub eps_strict: f64,
    pub backend: Backend,
    pub max_iter: usize,
    /// Stop as soon as a verified witness beats `eps_strict` instead of
    /// driving the margin to its optimum.
    pub early_stop: bool,
    /// Seed for backends with randomised internals.
    pub seed: u64,
}

impl SolveOptions {
    pub fn new(eps_strict: f64) -> Self {
        Self {
            eps_strict,
            backend: Backend::Auto,
            max_iter: 200,
            early_stop: false,
            seed: 0,
        }
    }

    pub fn with_backend(mut self, backend: Backend) -> Self {
        self.backend = backend;
        self
    }

    pub fn with_early_stop(mut self, on: bool) -> Self {
        self.early_stop = on;
        self
    }
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self::new(EPS_STRICT)
    }
}

/// Maximises the margin with the default backend.
pub fn solve_feasibility(sf: &StandardForm, eps_strict: f64) -> FeasibilityReport {
    solve_with(sf, &SolveOptions::new(eps_strict))
}

pub fn solve_with(sf: &StandardForm, opts: &SolveOptions) -> FeasibilityReport {
    if let Err(e) = sf.validate() {
        return FeasibilityReport::failure("none", 0, e.to_string());
    }
    let backend = match &opts.backend {
        Backend::Auto => match Backend::from_env() {
            Ok(Backend::Auto) => Backend::Builtin,
            Ok(b) => b,
            Err(e) => return FeasibilityReport::failure("none", 0, e.to_string()),
        },
        b => b.clone(),
    };
    let raw = match &backend {
        Backend::External(path) => external::solve(sf, path, opts),
        _ if sf.num_vars > BUILTIN_MAX_VARS => FeasibilityReport::failure(
            "builtin",
            0,
            format!(
                "{} variables exceed the built-in limit of {BUILTIN_MAX_VARS}; restrict Y or use an external solver",
                sf.num_vars
            ),
        ),
        _ => ipm::solve(sf, opts),
    };
    certify(sf, raw, opts.eps_strict)
}

/// Enforces the report invariants: a feasible status needs a witness that
/// passes [`verify_witness`] and a margin above `eps`; anything else loses
/// its witness.
pub fn certify(sf: &StandardForm, mut report: FeasibilityReport, eps: f64) -> FeasibilityReport {
    if report.status == Status::Feasible {
        let ok = report.margin > eps
            && report
                .witness
                .as_deref()
                .is_some_and(|w| verify_witness(sf, w, eps));
        if !ok {
            report.status = Status::SolverFailure;
            report.witness = None;
            report.message = format!("witness failed verification ({})", report.message);
        }
    } else {
        report.witness = None;
        if report.status != Status::SolverFailure && report.margin > eps {
            report.status = Status::SolverFailure;
            report.message = format!("positive margin without witness ({})", report.message);
        }
    }
    report
}

/// True when every block satisfies `s_c G_c(w) >= eps I` up to a relative
/// tolerance of `1e-9 |G_c|` and the normalisation holds. Never panics.
pub fn verify_witness(sf: &StandardForm, witness: &[f64], eps: f64) -> bool {
    if witness.len() != sf.num_vars || witness.iter().any(|v| !v.is_finite()) {
        return false;
    }
    if !sf.normalization.is_empty() {
        let lhs: f64 = sf.normalization.iter().map(|&(i, a)| a * witness[i]).sum();
        if (lhs - sf.normalization_rhs).abs() > 1e-6 * sf.normalization_rhs.abs().max(1.0) {
            return false;
        }
    }
    for (b, blk) in sf.blocks.iter().enumerate() {
        let g = sf.block_value(b, witness) * blk.sense.sign();
        let norm = g.norm();
        match symmetric_eigenvalues(&g) {
            Some(ev) if ev[0] > eps + 1e-9 * norm => {}
            _ => return false,
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constraint(
        dim: usize,
        sense: Sense,
        entries: Vec<(usize, usize, Option<usize>, f64)>,
    ) -> NumericConstraint {
        NumericConstraint {
            label: "c".into(),
            dim,
            sense,
            entries,
        }
    }

    #[test]
    fn packs_and_dedups() {
        let c = constraint(
            2,
            Sense::NegDef,
            vec![(0, 0, Some(0), 1.0), (1, 1, Some(0), 1.0)],
        );
        let sf = StandardForm::from_constraints(&[c.clone(), c], 1, (vec![], 0.0)).unwrap();
        assert_eq!(sf.num_vars, 1);
        assert_eq!(sf.blocks.len(), 1);
        assert_eq!(sf.blocks[0].size, 2);
    }

    #[test]
    fn empty_problem_rejected() {
        assert!(StandardForm::from_constraints(&[], 0, (vec![], 0.0)).is_err());
    }

    #[test]
    fn backend_parsing() {
        assert_eq!("builtin".parse::<Backend>().unwrap(), Backend::Builtin);
        assert_eq!(
            "external:/bin/x".parse::<Backend>().unwrap(),
            Backend::External(PathBuf::from("/bin/x"))
        );
        assert!("external:".parse::<Backend>().is_err());
        assert!("mosek".parse::<Backend>().is_err());
    }

    #[test]
    fn zero_witness_fails_positivity() {
        let c = constraint(
            2,
            Sense::PosDef,
            vec![
                (0, 0, Some(0), 1.0),
                (0, 1, Some(1), 1.0),
                (1, 1, Some(2), 1.0),
            ],
        );
        let sf = StandardForm::from_constraints(&[c], 3, (vec![], 0.0)).unwrap();
        assert!(!verify_witness(&sf, &[0.0; 3], EPS_STRICT));
        assert!(verify_witness(&sf, &[1.0, 0.0, 1.0], EPS_STRICT));
        assert!(!verify_witness(&sf, &[1.0, 0.0], EPS_STRICT));
    }

    #[test]
    fn certify_downgrades_bad_witness() {
        let c = constraint(1, Sense::NegDef, vec![(0, 0, Some(0), 1.0)]);
        let sf = StandardForm::from_constraints(&[c], 1, (vec![], 0.0)).unwrap();
        let fake = FeasibilityReport {
            status: Status::Feasible,
            margin: 1.0,
            iterations: 1,
            backend: "fake".into(),
            witness: Some(vec![1.0]),
            message: String::new(),
        };
        let r = certify(&sf, fake.clone(), EPS_STRICT);
        assert_eq!(r.status, Status::SolverFailure);
        assert!(r.witness.is_none());
        let good = FeasibilityReport {
            witness: Some(vec![-1.0]),
            ..fake
        };
        assert_eq!(certify(&sf, good, EPS_STRICT).status, Status::Feasible);
    }
}
