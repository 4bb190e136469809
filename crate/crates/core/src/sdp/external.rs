//! Out-of-process solvers.
//!
//! The executable is called as `<path> <problem.dat-s> <solution.txt>` and
//! writes either the word `infeasible` or the decision vector (whitespace
//! separated, one value per variable) to the solution file. The vector is
//! rescaled onto the normalisation slice and checked here, so the external
//! program only has to find a strictly feasible point.

use std::path::Path;
use std::process::Command;

use super::{sdpa, FeasibilityReport, SolveOptions, StandardForm, Status};

pub(super) fn solve(sf: &StandardForm, exe: &Path, _opts: &SolveOptions) -> FeasibilityReport {
    let name = format!("external:{}", exe.display());
    let dir = std::env::temp_dir().join(format!("dcl-sdpa-{}-{}", std::process::id(), unique()));
    if let Err(e) = std::fs::create_dir_all(&dir) {
        return FeasibilityReport::failure(&name, 0, e.to_string());
    }
    let problem = dir.join("problem.dat-s");
    let solution = dir.join("solution.txt");
    let result = (|| {
        sdpa::export_sdpa(sf, &problem).map_err(|e| e.to_string())?;
        let out = Command::new(exe)
            .arg(&problem)
            .arg(&solution)
            .output()
            .map_err(|e| format!("cannot run solver: {e}"))?;
        if !out.status.success() {
            return Err(format!(
                "solver exited with {}: {}",
                out.status,
                String::from_utf8_lossy(&out.stderr).trim()
            ));
        }
        std::fs::read_to_string(&solution).map_err(|e| format!("no solution file: {e}"))
    })();
    let _ = std::fs::remove_dir_all(&dir);
    match result {
        Err(msg) => FeasibilityReport::failure(&name, 0, msg),
        Ok(text) => interpret(sf, &text, &name),
    }
}

fn unique() -> u64 {
    use std::sync::atomic::{AtomicU64, Ordering};
    static NEXT: AtomicU64 = AtomicU64::new(0);
    NEXT.fetch_add(1, Ordering::Relaxed)
}

/// Turns a solution file into a report; the margin is measured on the
/// rescaled point.
pub(super) fn interpret(sf: &StandardForm, text: &str, name: &str) -> FeasibilityReport {
    let t = text.trim();
    if t.eq_ignore_ascii_case("infeasible") {
        return FeasibilityReport {
            status: Status::Infeasible,
            margin: f64::NAN,
            iterations: 0,
            backend: name.into(),
            witness: None,
            message: "reported infeasible by the external solver".into(),
        };
    }
    let x: Result<Vec<f64>, _> = t.split_whitespace().map(str::parse::<f64>).collect();
    let Ok(x) = x else {
        return FeasibilityReport::failure(name, 0, "unreadable solution vector");
    };
    match rescaled_margin(sf, &x) {
        None => FeasibilityReport::failure(name, 0, "solution vector is not usable"),
        Some((w, margin)) => FeasibilityReport {
            status: if margin > 0.0 {
                Status::Feasible
            } else {
                Status::Infeasible
            },
            margin,
            iterations: 0,
            backend: name.into(),
            witness: Some(w),
            message: String::new(),
        },
    }
}

/// Moves `x` onto the normalisation slice and returns it with its margin.
pub(super) fn rescaled_margin(sf: &StandardForm, x: &[f64]) -> Option<(Vec<f64>, f64)> {
    if x.len() != sf.num_vars || x.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let mut w = x.to_vec();
    if !sf.normalization.is_empty() {
        let lhs: f64 = sf.normalization.iter().map(|&(i, a)| a * x[i]).sum();
        if !(lhs > 0.0) {
            return None;
        }
        let k = sf.normalization_rhs / lhs;
        w.iter_mut().for_each(|v| *v *= k);
    }
    let m = sf.signed_min_eigenvalue(&w)?;
    Some((w, m))
}
