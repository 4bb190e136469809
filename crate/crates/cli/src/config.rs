//! JSON run configuration.
//!
//! Every cross-field check happens in [`Config::validate`], before any
//! numerical work. Errors carry the line of the offending key when it can
//! be located in the source text.

use std::fmt;
use std::path::Path;

use dcl_core::lmi::{Method, SchurForm};
use dcl_core::model::{DelayBound, DirectedGraph, MasModel};
use dcl_core::sdp::{Backend, EPS_STRICT};
use dcl_core::search::{SearchMode, YRestriction, DEFAULT_HI0, DEFAULT_TOL};
use dcl_core::sim::{DelayProfile, DEFAULT_HORIZON, DEFAULT_STEP};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub const MAX_ORDER: usize = dcl_core::legendre::MAX_ORDER;

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub source: String,
    pub line: Option<usize>,
    pub msg: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "{}:{l}: {}", self.source, self.msg),
            None => write!(f, "{}: {}", self.source, self.msg),
        }
    }
}

impl std::error::Error for ConfigError {}

/// Row-major matrix with declared dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixSpec {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl MatrixSpec {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let data = (0..m.nrows())
            .flat_map(|r| (0..m.ncols()).map(move |c| (r, c)))
            .map(|(r, c)| m[(r, c)])
            .collect();
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    #[serde(rename = "A")]
    pub a: MatrixSpec,
    #[serde(rename = "B")]
    pub b: MatrixSpec,
    #[serde(rename = "K")]
    pub k: MatrixSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSpec {
    /// `None` marks a topology that still has to be filled in.
    pub adjacency: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

fn default_order() -> usize {
    1
}
fn default_solver() -> String {
    "auto".into()
}
fn default_eps() -> f64 {
    EPS_STRICT
}
fn default_method() -> Method {
    Method::Theorem
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSpec {
    #[serde(default = "default_method")]
    pub method: Method,
    #[serde(rename = "N", default = "default_order")]
    pub order: usize,
    /// `auto`, `builtin`, `external:<path>` or the test hook `predicate:<limit>`.
    #[serde(default = "default_solver")]
    pub solver: String,
    #[serde(default = "default_eps")]
    pub eps_strict: f64,
    #[serde(default)]
    pub merged_schur: bool,
    #[serde(default)]
    pub restrict_y: Option<YRestriction>,
    #[serde(default)]
    pub early_stop: bool,
}

impl Default for AnalysisSpec {
    fn default() -> Self {
        Self {
            method: default_method(),
            order: default_order(),
            solver: default_solver(),
            eps_strict: default_eps(),
            merged_schur: false,
            restrict_y: None,
            early_stop: false,
        }
    }
}

fn default_mode() -> SearchMode {
    SearchMode::UniformUpper
}
fn default_tol() -> f64 {
    DEFAULT_TOL
}
fn default_hi0() -> f64 {
    DEFAULT_HI0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpec {
    #[serde(default = "default_mode")]
    pub mode: SearchMode,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_hi0")]
    pub hi0: f64,
    /// Common lower bound in `UNIFORM_UPPER` mode.
    #[serde(default)]
    pub tau_lower: f64,
}

impl Default for SearchSpec {
    fn default() -> Self {
        Self {
            mode: default_mode(),
            tol: default_tol(),
            hi0: default_hi0(),
            tau_lower: 0.0,
        }
    }
}

fn default_horizon() -> f64 {
    DEFAULT_HORIZON
}
fn default_step() -> f64 {
    DEFAULT_STEP
}
fn default_factor() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSpec {
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_step")]
    pub h: f64,
    #[serde(default)]
    pub x0: Option<Vec<Vec<f64>>>,
    /// Defaults to one sinusoid per agent.
    #[serde(default)]
    pub profiles: Option<Vec<DelayProfile>>,
    #[serde(default)]
    pub seed: u64,
    /// Falsification runs after the main simulation.
    #[serde(default)]
    pub trials: usize,
    #[serde(default = "default_factor")]
    pub margin_factor: f64,
}

impl Default for SimSpec {
    fn default() -> Self {
        Self {
            horizon: default_horizon(),
            h: default_step(),
            x0: None,
            profiles: None,
            seed: 0,
            trials: 0,
            margin_factor: default_factor(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comment: Option<String>,
    pub system: SystemSpec,
    pub graph: GraphSpec,
    pub delays: Vec<DelayBound>,
    #[serde(default)]
    pub analysis: AnalysisSpec,
    #[serde(default)]
    pub search: SearchSpec,
    #[serde(default)]
    pub sim: SimSpec,
}

/// How feasibility is decided.
#[derive(Debug, Clone, PartialEq)]
pub enum Solver {
    Backend(Backend),
    /// Feasible iff every upper bound is at most the limit.
    Predicate(f64),
}

pub fn parse_solver(s: &str) -> Result<Solver, String> {
    if let Some(rest) = s.trim().strip_prefix("predicate:") {
        return match rest.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(Solver::Predicate(v)),
            _ => Err(format!("bad predicate limit '{rest}'")),
        };
    }
    s.parse::<Backend>()
        .map(Solver::Backend)
        .map_err(|e| e.to_string())
}

/// First line (1-based) mentioning `"key"`.
fn line_of(text: &str, key: &str) -> Option<usize> {
    let needle = format!("\"{key}\"");
    text.lines()
        .position(|l| l.contains(&needle))
        .map(|i| i + 1)
}

impl Config {
    pub fn parse(text: &str, source: &str) -> Result<Config, ConfigError> {
        let cfg: Config = serde_json::from_str(text).map_err(|e| ConfigError {
            source: source.into(),
            line: (e.line() > 0).then_some(e.line()),
            msg: e.to_string(),
        })?;
        cfg.validate().map_err(|(key, msg)| ConfigError {
            source: source.into(),
            line: line_of(text, key),
            msg,
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        let source = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            source: source.clone(),
            line: None,
            msg: e.to_string(),
        })?;
        Self::parse(&text, &source)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn agents(&self) -> usize {
        self.delays.len()
    }

    /// Checks everything that can be checked without numerical work. The
    /// error names the key to anchor the message at.
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        for (key, m) in [
            ("A", &self.system.a),
            ("B", &self.system.b),
            ("K", &self.system.k),
        ] {
            if m.rows == 0 || m.cols == 0 {
                return Err((key, format!("{key} must be non-empty")));
            }
            if m.data.len() != m.rows * m.cols {
                return Err((
                    key,
                    format!(
                        "{key} declares {}x{} but holds {} values",
                        m.rows,
                        m.cols,
                        m.data.len()
                    ),
                ));
            }
            if m.data.iter().any(|v| !v.is_finite()) {
                return Err((key, format!("{key} has a non-finite entry")));
            }
        }
        let (a, b, k) = (&self.system.a, &self.system.b, &self.system.k);
        let n = a.rows;
        if a.cols != n {
            return Err(("A", format!("A must be square, got {}x{}", a.rows, a.cols)));
        }
        if b.rows != n {
            return Err(("B", format!("B must have {n} rows, got {}", b.rows)));
        }
        if k.rows != b.cols || k.cols != n {
            return Err((
                "K",
                format!("K must be {}x{n}, got {}x{}", b.cols, k.rows, k.cols),
            ));
        }

        let Some(rows) = &self.graph.adjacency else {
            return Err((
                "adjacency",
                "graph.adjacency is a placeholder; fill in the topology before running".into(),
            ));
        };
        let m = rows.len();
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != m) {
            return Err((
                "adjacency",
                format!(
                    "adjacency must be square: row {} has {} entries, expected {m}",
                    i + 1,
                    r.len()
                ),
            ));
        }
        DirectedGraph::from_rows(rows).map_err(|e| ("adjacency", e.to_string()))?;
        if self.delays.len() != m {
            return Err((
                "delays",
                format!("expected {m} delay bounds, got {}", self.delays.len()),
            ));
        }
        for (i, d) in self.delays.iter().enumerate() {
            d.validate(i + 1).map_err(|e| ("delays", e.to_string()))?;
        }

        let an = &self.analysis;
        if an.order == 0 || an.order > MAX_ORDER {
            return Err((
                "N",
                format!("N must be in 1..={MAX_ORDER}, got {}", an.order),
            ));
        }
        if !(an.eps_strict > 0.0 && an.eps_strict.is_finite()) {
            return Err((
                "eps_strict",
                format!("eps_strict must be positive, got {}", an.eps_strict),
            ));
        }
        parse_solver(&an.solver).map_err(|e| ("solver", e))?;

        let s = &self.search;
        if !(s.tol > 0.0 && s.tol.is_finite()) {
            return Err(("tol", format!("tol must be positive, got {}", s.tol)));
        }
        if !(s.tau_lower >= 0.0 && s.tau_lower.is_finite()) {
            return Err((
                "tau_lower",
                format!("tau_lower must be >= 0, got {}", s.tau_lower),
            ));
        }
        let floor = if s.mode == SearchMode::UniformUpper {
            s.tau_lower
        } else {
            0.0
        };
        if !(s.hi0 > floor && s.hi0.is_finite()) {
            return Err(("hi0", format!("hi0 must exceed {floor}, got {}", s.hi0)));
        }

        let sim = &self.sim;
        if !(sim.horizon > 0.0 && sim.horizon.is_finite() && sim.h > 0.0 && sim.h <= sim.horizon) {
            return Err((
                "sim",
                format!(
                    "need 0 < h <= horizon, got h = {}, horizon = {}",
                    sim.h, sim.horizon
                ),
            ));
        }
        if !(sim.margin_factor >= 1.0 && sim.margin_factor.is_finite()) {
            return Err((
                "margin_factor",
                format!("margin_factor must be >= 1, got {}", sim.margin_factor),
            ));
        }
        if let Some(x0) = &sim.x0 {
            if x0.len() != m {
                return Err(("x0", format!("x0 has {} states for {m} agents", x0.len())));
            }
            if let Some((i, x)) = x0.iter().enumerate().find(|(_, x)| x.len() != n) {
                return Err((
                    "x0",
                    format!("x0 of agent {} has length {}, expected {n}", i + 1, x.len()),
                ));
            }
            if x0.iter().flatten().any(|v| !v.is_finite()) {
                return Err(("x0", "x0 has a non-finite entry".into()));
            }
        }
        if let Some(p) = &sim.profiles {
            if p.len() != m {
                return Err((
                    "profiles",
                    format!("{} delay profiles for {m} agents", p.len()),
                ));
            }
            for (i, (prof, b)) in p.iter().zip(&self.delays).enumerate() {
                prof.check(b)
                    .map_err(|e| ("profiles", format!("agent {}: {e}", i + 1)))?;
            }
        }
        Ok(())
    }

    /// The model at the configured bounds. Only valid after [`Config::validate`].
    pub fn model(&self) -> MasModel {
        let graph = DirectedGraph::from_rows(self.graph.adjacency.as_ref().expect("validated"))
            .expect("validated");
        MasModel::new(
            self.system.a.to_matrix(),
            self.system.b.to_matrix(),
            self.system.k.to_matrix(),
            graph,
            self.delays.clone(),
        )
        .expect("validated")
    }

    pub fn solver(&self) -> Solver {
        parse_solver(&self.analysis.solver).expect("validated")
    }

    pub fn schur_form(&self) -> SchurForm {
        if self.analysis.merged_schur {
            SchurForm::Merged
        } else {
            SchurForm::Proof
        }
    }

    /// Initial states, defaulting to agent `k` at `k` in every component.
    pub fn initial_states(&self) -> Vec<DVector<f64>> {
        match &self.sim.x0 {
            Some(x0) => x0.iter().map(|x| DVector::from_column_slice(x)).collect(),
            None => (0..self.agents())
                .map(|k| DVector::from_element(self.system.a.rows, (k + 1) as f64))
                .collect(),
        }
    }

    pub fn profiles(&self) -> Vec<DelayProfile> {
        match &self.sim.profiles {
            Some(p) => p.clone(),
            None => self
                .delays
                .iter()
                .enumerate()
                .map(|(k, b)| DelayProfile::default_sinusoid(*b, k + 1).expect("validated"))
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const PAIR: &str = r#"{
  "system": {
    "A": {"rows": 1, "cols": 1, "data": [0.0]},
    "B": {"rows": 1, "cols": 1, "data": [1.0]},
    "K": {"rows": 1, "cols": 1, "data": [1.0]}
  },
  "graph": {"adjacency": [[0, 1], [1, 0]]},
  "delays": [{"lower": 0.0, "upper": 0.3}, {"lower": 0.0, "upper": 0.3}]
}"#;

    #[test]
    fn defaults_fill_in() {
        let c = Config::parse(PAIR, "pair").unwrap();
        assert_eq!(c.analysis.order, 1);
        assert_eq!(c.analysis.method, Method::Theorem);
        assert_eq!(c.search.tol, DEFAULT_TOL);
        assert_eq!(c.solver(), Solver::Backend(Backend::Auto));
        assert_eq!(c.model().agents(), 2);
    }

    #[test]
    fn round_trip() {
        let c = Config::parse(PAIR, "pair").unwrap();
        let again = Config::parse(&c.to_json(), "again").unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn errors_point_at_lines() {
        let bad = PAIR.replace("[[0, 1], [1, 0]]", "[[0, 1, 0], [1, 0]]");
        let e = Config::parse(&bad, "bad.json").unwrap_err();
        assert_eq!(e.line, Some(7));
        assert!(
            e.to_string()
                .starts_with("bad.json:7: adjacency must be square"),
            "{e}"
        );

        let bad = PAIR.replace("\"data\": [1.0]}\n  }", "\"data\": [1.0, 2.0]}\n  }");
        let e = Config::parse(&bad, "bad.json").unwrap_err();
        assert_eq!(e.line, Some(5), "{e}");

        let e = Config::parse("{\"system\": 3}", "x").unwrap_err();
        assert_eq!(e.line, Some(1));
    }

    #[test]
    fn placeholder_topology_is_rejected() {
        let p = PAIR.replace("[[0, 1], [1, 0]]", "null");
        let e = Config::parse(&p, "p").unwrap_err();
        assert!(e.msg.contains("placeholder"));
    }

    #[test]
    fn solver_ids() {
        assert_eq!(
            parse_solver("predicate:0.5").unwrap(),
            Solver::Predicate(0.5)
        );
        assert!(parse_solver("predicate:x").is_err());
        assert!(parse_solver("nope").is_err());
        let p = PAIR.replace("\"delays\"", "\"analysis\": {\"N\": 5},\n  \"delays\"");
        assert!(Config::parse(&p, "p")
            .unwrap_err()
            .msg
            .contains("N must be"));
    }
}
