//! Maximum certified delay bounds by bracketed bisection over feasibility
//! queries.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::legendre::Interval;
use crate::lmi::{
    assemble_method, build_layout, restricted_y_mask, vertex_problems, Method, SchurForm,
    VariableSpace, VertexProblem,
};
use crate::model::{build_error_system, DelayBound, MasModel};
use crate::sdp::{
    certify, solve_with, vectorize, FeasibilityReport, SolveOptions, StandardForm, Status,
};

pub const DEFAULT_TOL: f64 = 1e-3;
pub const DEFAULT_HI0: f64 = 1.0;
/// The bracket may grow to `EXPANSION_CAP * hi0`.
pub const EXPANSION_CAP: f64 = 64.0;

/// Optional restriction of the free `Y` matrices to a row support, which
/// shrinks large problems at the price of a smaller certified set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum YRestriction {
    /// Rows in the blocks read by the interval's own `M` rows.
    Own,
    /// As `Own`, with the mid and upper intervals sharing their supports.
    Coupled,
}

impl YRestriction {
    fn extra(self) -> &'static [(Interval, Interval)] {
        match self {
            YRestriction::Own => &[],
            YRestriction::Coupled => &[
                (Interval::Mid, Interval::Upper),
                (Interval::Upper, Interval::Mid),
            ],
        }
    }
}

/// Which criterion to build and how to solve it.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisOptions {
    pub method: Method,
    pub order: usize,
    pub form: SchurForm,
    pub solve: SolveOptions,
    pub restrict_y: Option<YRestriction>,
}

impl AnalysisOptions {
    pub fn new(method: Method, order: usize) -> Self {
        Self {
            method,
            order,
            form: SchurForm::Proof,
            solve: SolveOptions::default(),
            restrict_y: None,
        }
    }
}

/// The packed semidefinite problem of `model` together with its per-corner pieces.
pub struct BuiltProblem {
    pub vertices: Vec<VertexProblem>,
    pub standard: StandardForm,
    pub vars: VariableSpace,
}

pub fn build_problem(model: &MasModel, opts: &AnalysisOptions) -> Result<BuiltProblem> {
    let err = build_error_system(model)?;
    let layout = build_layout(model.agents(), model.state_dim(), opts.order)?;
    let vars = VariableSpace::new(layout.clone(), opts.method == Method::Theorem);
    let asm = assemble_method(&err, &layout, &vars, opts.method, opts.form)?;
    let vertices = vertex_problems(&asm, &vars)?;
    let standard = vectorize(&vertices, &vars)?;
    Ok(BuiltProblem {
        vertices,
        standard,
        vars,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockStatus {
    pub label: String,
    /// Smallest eigenvalue of the block with its sign convention applied;
    /// `None` without a witness.
    pub margin: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub method: Method,
    pub order: usize,
    pub bounds: Vec<DelayBound>,
    pub num_vars: usize,
    pub report: FeasibilityReport,
    pub blocks: Vec<BlockStatus>,
}

/// Assembles the criterion at the model's own bounds and solves it.
pub fn check(model: &MasModel, opts: &AnalysisOptions) -> Result<CheckReport> {
    let built = build_problem(model, opts)?;
    let sf = &built.standard;
    let report = match opts.restrict_y {
        None => solve_with(sf, &opts.solve),
        Some(r) => solve_restricted(sf, &built.vars, r, &opts.solve)?,
    };
    let blocks = sf
        .blocks
        .iter()
        .enumerate()
        .map(|(b, blk)| BlockStatus {
            label: blk.label.clone(),
            margin: report.witness.as_ref().and_then(|x| sf.block_margin(b, x)),
        })
        .collect();
    Ok(CheckReport {
        method: opts.method,
        order: opts.order,
        bounds: model.bounds.clone(),
        num_vars: sf.num_vars,
        report,
        blocks,
    })
}

/// Solves over the restricted `Y` and re-certifies the lifted point on the
/// full problem. Infeasibility of the restriction decides nothing.
fn solve_restricted(
    sf: &StandardForm,
    vars: &VariableSpace,
    r: YRestriction,
    opts: &SolveOptions,
) -> Result<FeasibilityReport> {
    let mask = restricted_y_mask(vars, r.extra())?;
    let (small, old) = sf.restrict(&mask)?;
    let mut report = solve_with(&small, opts);
    report.backend = format!("{}+restricted-y", report.backend);
    match report.status {
        Status::Feasible => {
            report.witness = report.witness.map(|w| sf.expand(&old, &w));
            Ok(certify(sf, report, opts.eps_strict))
        }
        Status::Infeasible => {
            report.status = Status::Marginal;
            report.message = format!(
                "restricted problem over {} of {} variables is infeasible",
                small.num_vars, sf.num_vars
            );
            Ok(report)
        }
        _ => Ok(report),
    }
}

/// Anything that can decide whether a delay box is certified.
pub trait FeasibilityOracle {
    fn query(&mut self, bounds: &[DelayBound]) -> Result<FeasibilityReport>;
}

/// Decides boxes by solving the LMI criterion for a fixed model.
pub struct LmiOracle<'a> {
    pub model: &'a MasModel,
    pub options: AnalysisOptions,
}

impl FeasibilityOracle for LmiOracle<'_> {
    fn query(&mut self, bounds: &[DelayBound]) -> Result<FeasibilityReport> {
        let model = self.model.with_bounds(bounds.to_vec())?;
        Ok(check(&model, &self.options)?.report)
    }
}

/// Test hook: feasibility replaced by a predicate on the bounds.
pub struct PredicateOracle<F>(pub F);

impl<F: FnMut(&[DelayBound]) -> bool> FeasibilityOracle for PredicateOracle<F> {
    fn query(&mut self, bounds: &[DelayBound]) -> Result<FeasibilityReport> {
        let ok = (self.0)(bounds);
        Ok(FeasibilityReport {
            status: if ok {
                Status::Feasible
            } else {
                Status::Infeasible
            },
            margin: if ok { 1.0 } else { -1.0 },
            iterations: 0,
            backend: "predicate".into(),
            witness: None,
            message: String::new(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SearchMode {
    /// Every agent gets `(tau_lower, value)`.
    UniformUpper,
    /// Every agent gets `(value * l_k, value * u_k)` for a template `(l_k, u_k)`.
    Scale,
}

impl fmt::Display for SearchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SearchMode::UniformUpper => "UNIFORM_UPPER",
            SearchMode::Scale => "SCALE",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchOptions {
    pub tol: f64,
    pub hi0: f64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            hi0: DEFAULT_HI0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub value: f64,
    pub status: Status,
    pub margin: f64,
    /// Solver failure, counted as infeasible.
    pub flagged: bool,
}

impl Probe {
    pub fn accepted(&self) -> bool {
        self.status == Status::Feasible
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayCertificate {
    pub method: Method,
    pub order: usize,
    pub mode: SearchMode,
    /// Certified `tau_u` or scale factor; `None` when nothing was certified.
    pub value: Option<f64>,
    /// Certified per-agent bounds; empty when nothing was certified.
    pub bounds: Vec<DelayBound>,
    pub margin: f64,
    pub backend: String,
    pub tol: f64,
    pub history: Vec<Probe>,
    /// Some probe hit a solver failure.
    pub degraded: bool,
    pub reason: Option<String>,
}

impl DelayCertificate {
    pub fn queries(&self) -> usize {
        self.history.len()
    }

    pub fn write_history_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "probe,value,status,margin,flagged")?;
        for (i, p) in self.history.iter().enumerate() {
            writeln!(
                w,
                "{},{},{},{},{}",
                i + 1,
                p.value,
                p.status,
                p.margin,
                p.flagged
            )?;
        }
        Ok(())
    }
}

impl fmt::Display for DelayCertificate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "method: {}", self.method)?;
        writeln!(f, "N: {}", self.order)?;
        writeln!(f, "mode: {}", self.mode)?;
        match self.value {
            Some(v) => writeln!(f, "value: {v:.3}")?,
            None => writeln!(f, "value: none")?,
        }
        let bounds: Vec<String> = self
            .bounds
            .iter()
            .map(|b| format!("[{}, {}]", b.lower, b.upper))
            .collect();
        writeln!(f, "bounds: {}", bounds.join(" "))?;
        writeln!(f, "margin: {:e}", self.margin)?;
        writeln!(f, "tol: {}", self.tol)?;
        writeln!(f, "backend: {}", self.backend)?;
        writeln!(f, "queries: {}", self.queries())?;
        writeln!(f, "degraded: {}", if self.degraded { "yes" } else { "no" })?;
        if let Some(r) = &self.reason {
            writeln!(f, "reason: {r}")?;
        }
        Ok(())
    }
}

struct Bisection<'o, O, B> {
    oracle: &'o mut O,
    bounds_at: B,
    cache: HashMap<Vec<(u64, u64)>, Probe>,
    history: Vec<Probe>,
    backend: String,
}

impl<O: FeasibilityOracle, B: Fn(f64) -> Vec<DelayBound>> Bisection<'_, O, B> {
    fn probe(&mut self, value: f64) -> Result<Probe> {
        let bounds = (self.bounds_at)(value);
        let key: Vec<(u64, u64)> = bounds
            .iter()
            .map(|b| (b.lower.to_bits(), b.upper.to_bits()))
            .collect();
        if let Some(p) = self.cache.get(&key) {
            return Ok(p.clone());
        }
        let r = self.oracle.query(&bounds)?;
        if self.backend.is_empty() {
            self.backend = r.backend.clone();
        }
        let p = Probe {
            value,
            status: r.status,
            margin: r.margin,
            flagged: r.status == Status::SolverFailure,
        };
        self.cache.insert(key, p.clone());
        self.history.push(p.clone());
        Ok(p)
    }

    /// Largest accepted value within `tol`, searching upward from `start`.
    fn run(&mut self, start: f64, hi0: f64, tol: f64) -> Result<Option<(f64, f64)>> {
        let first = self.probe(start)?;
        if !first.accepted() {
            return Ok(None);
        }
        let (mut lo, mut lo_margin) = (start, first.margin);
        let cap = EXPANSION_CAP * hi0;
        let mut hi = hi0.max(start + tol);
        loop {
            let p = self.probe(hi)?;
            if !p.accepted() {
                break;
            }
            lo = hi;
            lo_margin = p.margin;
            if hi >= cap {
                return Err(Error::Search(format!(
                    "still feasible at the expansion cap {cap}"
                )));
            }
            hi = (2.0 * hi).min(cap);
        }
        while hi - lo > tol {
            let mid = 0.5 * (lo + hi);
            let p = self.probe(mid)?;
            if p.accepted() {
                lo = mid;
                lo_margin = p.margin;
            } else {
                hi = mid;
            }
        }
        Ok(Some((lo, lo_margin)))
    }
}

fn check_tol(opts: &SearchOptions) -> Result<()> {
    if !(opts.tol > 0.0 && opts.tol.is_finite() && opts.hi0.is_finite()) {
        return Err(Error::OutOfRange(format!(
            "need tol > 0 and finite hi0, got {opts:?}"
        )));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn search<O: FeasibilityOracle>(
    oracle: &mut O,
    method: Method,
    order: usize,
    mode: SearchMode,
    bounds_at: impl Fn(f64) -> Vec<DelayBound>,
    start: f64,
    opts: &SearchOptions,
) -> Result<DelayCertificate> {
    let mut b = Bisection {
        oracle,
        bounds_at,
        cache: HashMap::new(),
        history: Vec::new(),
        backend: String::new(),
    };
    let found = b.run(start, opts.hi0, opts.tol)?;
    let degraded = b.history.iter().any(|p| p.flagged);
    let (value, bounds, margin, reason) = match found {
        Some((v, margin)) => (Some(v), (b.bounds_at)(v), margin, None),
        None => (
            None,
            Vec::new(),
            f64::NAN,
            Some(format!("not certified at the smallest probe {start}")),
        ),
    };
    Ok(DelayCertificate {
        method,
        order,
        mode,
        value,
        bounds,
        margin,
        backend: b.backend,
        tol: opts.tol,
        history: b.history,
        degraded,
        reason,
    })
}

/// Largest common upper bound `tau_u` with every agent on `[tau_lower, tau_u]`.
pub fn search_uniform<O: FeasibilityOracle>(
    oracle: &mut O,
    agents: usize,
    method: Method,
    order: usize,
    tau_lower: f64,
    opts: &SearchOptions,
) -> Result<DelayCertificate> {
    check_tol(opts)?;
    if !(tau_lower >= 0.0 && tau_lower.is_finite()) {
        return Err(Error::Bounds(format!(
            "tau_lower must be >= 0, got {tau_lower}"
        )));
    }
    if opts.hi0 <= tau_lower {
        return Err(Error::OutOfRange(format!(
            "hi0 = {} must exceed tau_lower = {tau_lower}",
            opts.hi0
        )));
    }
    search(
        oracle,
        method,
        order,
        SearchMode::UniformUpper,
        |v| vec![DelayBound::new(tau_lower, v); agents],
        tau_lower + opts.tol,
        opts,
    )
}

/// Largest `s` such that the bounds `(s l_k, s u_k)` are certified.
pub fn search_scaled<O: FeasibilityOracle>(
    oracle: &mut O,
    method: Method,
    order: usize,
    template: &[DelayBound],
    opts: &SearchOptions,
) -> Result<DelayCertificate> {
    check_tol(opts)?;
    for (k, b) in template.iter().enumerate() {
        b.validate(k + 1)?;
    }
    if template.iter().all(|b| b.upper == 0.0) {
        return Err(Error::Bounds("template has no positive upper bound".into()));
    }
    if opts.hi0 <= 0.0 {
        return Err(Error::OutOfRange(format!(
            "hi0 must be positive, got {}",
            opts.hi0
        )));
    }
    let template = template.to_vec();
    search(
        oracle,
        method,
        order,
        SearchMode::Scale,
        move |s| {
            template
                .iter()
                .map(|b| DelayBound::new(s * b.lower, s * b.upper))
                .collect()
        },
        opts.tol,
        opts,
    )
}

pub fn max_uniform_delay(
    model: &MasModel,
    analysis: &AnalysisOptions,
    tau_lower: f64,
    opts: &SearchOptions,
) -> Result<DelayCertificate> {
    let mut oracle = LmiOracle {
        model,
        options: analysis.clone(),
    };
    search_uniform(
        &mut oracle,
        model.agents(),
        analysis.method,
        analysis.order,
        tau_lower,
        opts,
    )
}

pub fn max_scaled_delay(
    model: &MasModel,
    analysis: &AnalysisOptions,
    template: &[DelayBound],
    opts: &SearchOptions,
) -> Result<DelayCertificate> {
    if template.len() != model.agents() {
        return Err(Error::Dimension(format!(
            "template has {} bounds for {} agents",
            template.len(),
            model.agents()
        )));
    }
    let mut oracle = LmiOracle {
        model,
        options: analysis.clone(),
    };
    search_scaled(&mut oracle, analysis.method, analysis.order, template, opts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BracketCheck {
    pub at_certified: Status,
    pub above: Status,
}

impl BracketCheck {
    pub fn sound(&self) -> bool {
        self.at_certified == Status::Feasible && self.above == Status::Infeasible
    }
}

/// Re-queries the certified point and the point `2 tol` above it.
pub fn verify_bracket<O: FeasibilityOracle>(
    oracle: &mut O,
    cert: &DelayCertificate,
    template: Option<&[DelayBound]>,
) -> Result<BracketCheck> {
    let v = cert
        .value
        .ok_or_else(|| Error::Search("certificate holds no certified value".into()))?;
    let at = |x: f64| -> Result<Vec<DelayBound>> {
        Ok(match cert.mode {
            SearchMode::UniformUpper => {
                let lower = cert.bounds.first().map(|b| b.lower).unwrap_or(0.0);
                vec![DelayBound::new(lower, x); cert.bounds.len()]
            }
            SearchMode::Scale => template
                .ok_or_else(|| Error::Search("scale certificates need their template".into()))?
                .iter()
                .map(|b| DelayBound::new(x * b.lower, x * b.upper))
                .collect(),
        })
    };
    let at_certified = oracle.query(&at(v)?)?.status;
    let above = oracle.query(&at(v + 2.0 * cert.tol)?)?.status;
    Ok(BracketCheck {
        at_certified,
        above,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn predicate_bisection() {
        let mut o = PredicateOracle(|b: &[DelayBound]| b[0].upper <= 0.5);
        let c = search_uniform(
            &mut o,
            2,
            Method::Theorem,
            1,
            0.0,
            &SearchOptions::default(),
        )
        .unwrap();
        let v = c.value.unwrap();
        assert!(v <= 0.5 && v > 0.5 - 1e-3, "{v}");
        assert_eq!(c.bounds, vec![DelayBound::new(0.0, v); 2]);
        assert!(!c.degraded);
        let check = verify_bracket(&mut o, &c, None).unwrap();
        assert!(check.sound());
    }

    #[test]
    fn expansion_and_cap() {
        let mut o = PredicateOracle(|b: &[DelayBound]| b[0].upper <= 5.3);
        let c = search_uniform(
            &mut o,
            3,
            Method::Corollary,
            2,
            0.1,
            &SearchOptions::default(),
        )
        .unwrap();
        assert!((c.value.unwrap() - 5.3).abs() <= 1e-3);
        let mut always = PredicateOracle(|_: &[DelayBound]| true);
        assert!(matches!(
            search_uniform(
                &mut always,
                2,
                Method::Theorem,
                1,
                0.0,
                &SearchOptions::default()
            ),
            Err(Error::Search(_))
        ));
    }

    #[test]
    fn infeasible_start_gives_empty_certificate() {
        let mut never = PredicateOracle(|_: &[DelayBound]| false);
        let c = search_uniform(
            &mut never,
            2,
            Method::Theorem,
            1,
            0.0,
            &SearchOptions::default(),
        )
        .unwrap();
        assert!(c.value.is_none() && c.bounds.is_empty() && c.reason.is_some());
        assert_eq!(c.queries(), 1);
    }

    #[test]
    fn scaled_predicate() {
        let template = [DelayBound::new(0.0, 0.3), DelayBound::new(0.1, 0.2)];
        let mut o = PredicateOracle(|b: &[DelayBound]| b[1].upper <= 0.4 + 1e-12);
        let c = search_scaled(
            &mut o,
            Method::Theorem,
            1,
            &template,
            &SearchOptions::default(),
        )
        .unwrap();
        assert!((c.value.unwrap() - 2.0).abs() <= 1e-3);
        assert!(verify_bracket(&mut o, &c, Some(&template)).unwrap().sound());
    }

    #[test]
    fn solver_failures_are_flagged() {
        struct Flaky;
        impl FeasibilityOracle for Flaky {
            fn query(&mut self, b: &[DelayBound]) -> Result<FeasibilityReport> {
                Ok(if b[0].upper <= 0.3 {
                    FeasibilityReport {
                        status: Status::Feasible,
                        margin: 0.1,
                        iterations: 1,
                        backend: "flaky".into(),
                        witness: None,
                        message: String::new(),
                    }
                } else if b[0].upper <= 0.6 {
                    FeasibilityReport::failure("flaky", 1, "stall")
                } else {
                    FeasibilityReport {
                        status: Status::Infeasible,
                        margin: -0.1,
                        iterations: 1,
                        backend: "flaky".into(),
                        witness: None,
                        message: String::new(),
                    }
                })
            }
        }
        let c = search_uniform(
            &mut Flaky,
            2,
            Method::Theorem,
            1,
            0.0,
            &SearchOptions::default(),
        )
        .unwrap();
        assert!(c.value.unwrap() <= 0.3);
        assert!(c.degraded);
        assert!(c.history.iter().any(|p| p.flagged && !p.accepted()));
    }

    #[test]
    fn coarse_query_count_and_cache() {
        let mut calls = 0;
        let mut o = PredicateOracle(|b: &[DelayBound]| {
            calls += 1;
            b[0].upper <= 0.77
        });
        let opts = SearchOptions { tol: 0.1, hi0: 1.0 };
        let c = search_uniform(&mut o, 2, Method::Theorem, 1, 0.0, &opts).unwrap();
        assert!(c.queries() <= 12);
        assert_eq!(c.queries(), calls);
        let mut csv = Vec::new();
        c.write_history_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("probe,value,status,margin,flagged\n1,0.1,FEASIBLE,1,false\n"));
    }
}
