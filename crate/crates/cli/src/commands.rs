use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use dcl_core::legendre::{gamma_table, lemma_suite, LemmaSuiteReport};
use dcl_core::model::{DelayBound, MasModel};
use dcl_core::sdp::{export_sdpa, FeasibilityReport, SolveOptions, Status};
use dcl_core::search::{
    build_problem, check, search_scaled, search_uniform, AnalysisOptions, BlockStatus, CheckReport,
    DelayCertificate, FeasibilityOracle, LmiOracle, PredicateOracle, SearchMode, SearchOptions,
};
use dcl_core::sim::{
    consensus_metric, falsification_sweep, simulate, SweepOptions, SweepReport, CONSENSUS_THRESHOLD,
};
use dcl_core::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{parse_solver, Config, Solver};
use crate::{Cli, Command, GlobalArgs};

/// Process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitCode {
    /// Feasible, converged or passed.
    Ok = 0,
    /// Infeasible, not converged or failed.
    Negative = 1,
    /// Usage or configuration error.
    Config = 2,
    Solver = 3,
}

/// Tolerance of the lemma suite.
pub const LEMMA_TOL: f64 = 1e-8;

struct Failure(ExitCode, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Solver(_) | Error::Io(_) => ExitCode::Solver,
            Error::Diverged { .. } | Error::Search(_) => ExitCode::Negative,
            _ => ExitCode::Config,
        };
        Failure(code, e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure(ExitCode::Config, e.to_string())
    }
}

type Outcome = Result<ExitCode, Failure>;

pub fn run(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> ExitCode {
    let res = match &cli.command {
        Command::VerifyLemma {
            order,
            trials,
            seed,
            tamper,
        } => verify_lemma(&cli.global, *order, *trials, *seed, *tamper, out),
        cmd => load(&cli.global).and_then(|cfg| match cmd {
            Command::Check => cmd_check(&cli.global, &cfg, out),
            Command::Maxdelay { history } => {
                cmd_maxdelay(&cli.global, &cfg, history.as_deref(), out)
            }
            Command::Simulate { out: traj, metric } => {
                cmd_simulate(&cli.global, &cfg, traj.as_deref(), metric.as_deref(), out)
            }
            Command::VerifyLemma { .. } => unreachable!(),
        }),
    };
    match res {
        Ok(code) => code,
        Err(Failure(code, msg)) => {
            let _ = writeln!(err, "error: {msg}");
            code
        }
    }
}

/// Reads the config and applies command-line overrides.
fn load(g: &GlobalArgs) -> Result<Config, Failure> {
    let path = g
        .config
        .as_deref()
        .ok_or_else(|| Failure(ExitCode::Config, "--config <path> is required".into()))?;
    let mut cfg = Config::load(path).map_err(|e| Failure(ExitCode::Config, e.to_string()))?;
    if g.merged_schur {
        cfg.analysis.merged_schur = true;
    }
    if let Some(s) = &g.solver {
        parse_solver(s).map_err(|e| Failure(ExitCode::Config, format!("--solver: {e}")))?;
        cfg.analysis.solver = s.clone();
    }
    if g.jobs == 0 {
        return Err(Failure(
            ExitCode::Config,
            "--jobs must be at least 1".into(),
        ));
    }
    Ok(cfg)
}

fn analysis_options(cfg: &Config) -> AnalysisOptions {
    let mut opts = AnalysisOptions::new(cfg.analysis.method, cfg.analysis.order);
    opts.form = cfg.schur_form();
    opts.restrict_y = cfg.analysis.restrict_y;
    let mut solve =
        SolveOptions::new(cfg.analysis.eps_strict).with_early_stop(cfg.analysis.early_stop);
    if let Solver::Backend(b) = cfg.solver() {
        solve = solve.with_backend(b);
    }
    opts.solve = solve;
    opts
}

fn within(limit: f64) -> impl FnMut(&[DelayBound]) -> bool {
    move |b: &[DelayBound]| b.iter().all(|d| d.upper <= limit)
}

fn export(
    g: &GlobalArgs,
    model: &MasModel,
    opts: &AnalysisOptions,
    err_on_predicate: bool,
) -> Result<(), Failure> {
    let Some(path) = &g.export_sdpa else {
        return Ok(());
    };
    if err_on_predicate {
        return Err(Failure(
            ExitCode::Config,
            "--export-sdpa needs an LMI solver".into(),
        ));
    }
    let built = build_problem(model, opts)?;
    export_sdpa(&built.standard, path)?;
    Ok(())
}

fn emit_json<T: Serialize>(out: &mut dyn Write, v: &T) -> Result<(), Failure> {
    let s =
        serde_json::to_string_pretty(v).map_err(|e| Failure(ExitCode::Config, e.to_string()))?;
    writeln!(out, "{s}")?;
    Ok(())
}

fn status_code(s: Status) -> ExitCode {
    match s {
        Status::Feasible => ExitCode::Ok,
        Status::Infeasible | Status::Marginal => ExitCode::Negative,
        Status::SolverFailure => ExitCode::Solver,
    }
}

fn cmd_check(g: &GlobalArgs, cfg: &Config, out: &mut dyn Write) -> Outcome {
    let model = cfg.model();
    let opts = analysis_options(cfg);
    let mut rep = match cfg.solver() {
        Solver::Predicate(limit) => {
            export(g, &model, &opts, true)?;
            let report = PredicateOracle(within(limit)).query(&model.bounds)?;
            CheckReport {
                method: opts.method,
                order: opts.order,
                bounds: model.bounds.clone(),
                num_vars: 0,
                report,
                blocks: Vec::new(),
            }
        }
        Solver::Backend(_) => {
            export(g, &model, &opts, false)?;
            check(&model, &opts)?
        }
    };
    // The witness can hold tens of thousands of entries.
    rep.report.witness = None;
    if g.json {
        emit_json(out, &rep)?;
    } else {
        print_check(out, &rep)?;
    }
    Ok(status_code(rep.report.status))
}

fn print_check(out: &mut dyn Write, rep: &CheckReport) -> std::io::Result<()> {
    let r: &FeasibilityReport = &rep.report;
    writeln!(out, "{}", r.status)?;
    writeln!(out, "method: {}", rep.method)?;
    writeln!(out, "N: {}", rep.order)?;
    let bounds: Vec<String> = rep
        .bounds
        .iter()
        .map(|b| format!("[{}, {}]", b.lower, b.upper))
        .collect();
    writeln!(out, "bounds: {}", bounds.join(" "))?;
    writeln!(out, "margin: {:e}", r.margin)?;
    writeln!(out, "variables: {}", rep.num_vars)?;
    writeln!(out, "backend: {}", r.backend)?;
    writeln!(out, "iterations: {}", r.iterations)?;
    if !r.message.is_empty() {
        writeln!(out, "message: {}", r.message)?;
    }
    if !rep.blocks.is_empty() {
        writeln!(out, "blocks:")?;
        for BlockStatus { label, margin } in &rep.blocks {
            match margin {
                Some(m) => writeln!(out, "  {label}: {m:e}")?,
                None => writeln!(out, "  {label}: -")?,
            }
        }
    }
    Ok(())
}

fn cmd_maxdelay(
    g: &GlobalArgs,
    cfg: &Config,
    history: Option<&Path>,
    out: &mut dyn Write,
) -> Outcome {
    let model = cfg.model();
    let opts = analysis_options(cfg);
    let sopts = SearchOptions {
        tol: cfg.search.tol,
        hi0: cfg.search.hi0,
    };
    let cert = match cfg.solver() {
        Solver::Predicate(limit) => {
            export(g, &model, &opts, true)?;
            run_search(&mut PredicateOracle(within(limit)), cfg, &opts, &sopts)?
        }
        Solver::Backend(_) => {
            export(g, &model, &opts, false)?;
            let mut oracle = LmiOracle {
                model: &model,
                options: opts.clone(),
            };
            run_search(&mut oracle, cfg, &opts, &sopts)?
        }
    };
    if let Some(path) = history {
        let mut w = BufWriter::new(File::create(path)?);
        cert.write_history_csv(&mut w)?;
        w.flush()?;
    }
    if g.json {
        emit_json(out, &cert)?;
    } else {
        match (cert.value, cert.mode) {
            (Some(v), SearchMode::UniformUpper) => {
                writeln!(out, "tau_u = {v:.3} ({}, N={})", cert.method, cert.order)?
            }
            (Some(v), SearchMode::Scale) => {
                writeln!(out, "scale = {v:.3} ({}, N={})", cert.method, cert.order)?
            }
            (None, _) => writeln!(
                out,
                "no certified delay ({}, N={})",
                cert.method, cert.order
            )?,
        }
        write!(out, "{cert}")?;
    }
    Ok(match cert.value {
        Some(_) => ExitCode::Ok,
        None if cert.degraded => ExitCode::Solver,
        None => ExitCode::Negative,
    })
}

fn run_search<O: FeasibilityOracle>(
    oracle: &mut O,
    cfg: &Config,
    opts: &AnalysisOptions,
    sopts: &SearchOptions,
) -> Result<DelayCertificate, Failure> {
    Ok(match cfg.search.mode {
        SearchMode::UniformUpper => search_uniform(
            oracle,
            cfg.agents(),
            opts.method,
            opts.order,
            cfg.search.tau_lower,
            sopts,
        )?,
        SearchMode::Scale => search_scaled(oracle, opts.method, opts.order, &cfg.delays, sopts)?,
    })
}

#[derive(Debug, Serialize)]
struct SimulateSummary {
    horizon: f64,
    h: f64,
    steps: usize,
    final_metric: f64,
    converged: bool,
    final_states: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sweep: Option<SweepReport>,
}

fn cmd_simulate(
    g: &GlobalArgs,
    cfg: &Config,
    traj_path: Option<&Path>,
    metric_path: Option<&Path>,
    out: &mut dyn Write,
) -> Outcome {
    let model = cfg.model();
    let traj = match simulate(
        &model,
        &cfg.profiles(),
        &cfg.initial_states(),
        cfg.sim.horizon,
        cfg.sim.h,
    ) {
        Ok(t) => t,
        Err(Error::Diverged { time }) => {
            return Err(Failure(
                ExitCode::Negative,
                format!("simulation diverged at t = {time}"),
            ))
        }
        Err(e) => return Err(e.into()),
    };
    if let Some(p) = traj_path {
        let mut w = BufWriter::new(File::create(p)?);
        traj.write_csv(&mut w)?;
        w.flush()?;
    }
    if let Some(p) = metric_path {
        let mut w = BufWriter::new(File::create(p)?);
        traj.write_metric_csv(&mut w)?;
        w.flush()?;
    }
    let final_metric = *consensus_metric(&traj)
        .last()
        .expect("non-empty trajectory");
    let sweep = if cfg.sim.trials > 0 {
        let opts = SweepOptions {
            margin_factor: cfg.sim.margin_factor,
            trials: cfg.sim.trials,
            seed: cfg.sim.seed,
            horizon: cfg.sim.horizon,
            h: cfg.sim.h,
            jobs: g.jobs,
            ..SweepOptions::default()
        };
        Some(falsification_sweep(&model, &cfg.delays, &opts)?)
    } else {
        None
    };
    let summary = SimulateSummary {
        horizon: cfg.sim.horizon,
        h: cfg.sim.h,
        steps: traj.len() - 1,
        final_metric,
        converged: final_metric < CONSENSUS_THRESHOLD,
        final_states: traj
            .final_states()
            .iter()
            .map(|x| x.iter().copied().collect())
            .collect(),
        sweep,
    };
    let falsified = summary
        .sweep
        .as_ref()
        .map_or(0, |s| s.falsifications().len());
    if g.json {
        emit_json(out, &summary)?;
    } else {
        writeln!(out, "horizon: {}", summary.horizon)?;
        writeln!(out, "step: {}", summary.h)?;
        writeln!(out, "final metric: {:.6e}", summary.final_metric)?;
        writeln!(
            out,
            "consensus: {}",
            if summary.converged { "yes" } else { "no" }
        )?;
        for (k, x) in summary.final_states.iter().enumerate() {
            let xs: Vec<String> = x.iter().map(|v| format!("{v:.6}")).collect();
            writeln!(out, "x{}({}) = [{}]", k + 1, summary.horizon, xs.join(", "))?;
        }
        if let Some(s) = &summary.sweep {
            writeln!(
                out,
                "sweep: {} trials, {falsified} without consensus",
                s.outcomes.len()
            )?;
            for o in s.falsifications() {
                match o.diverged_at {
                    Some(t) => writeln!(out, "  trial {}: diverged at t = {t}", o.trial)?,
                    None => writeln!(out, "  trial {}: d = {:.3e}", o.trial, o.final_metric)?,
                }
            }
        }
    }
    Ok(if summary.converged && falsified == 0 {
        ExitCode::Ok
    } else {
        ExitCode::Negative
    })
}

#[derive(Debug, Serialize)]
struct LemmaSummary {
    order: usize,
    trials: usize,
    seed: u64,
    tol: f64,
    passed: bool,
    #[serde(flatten)]
    report: LemmaSuiteReport,
}

fn verify_lemma(
    g: &GlobalArgs,
    order: usize,
    trials: usize,
    seed: u64,
    tamper: bool,
    out: &mut dyn Write,
) -> Outcome {
    let mut gamma = gamma_table(order.clamp(1, dcl_core::legendre::MAX_ORDER));
    if tamper {
        let j = gamma.order() + 1;
        gamma.set(0, j, -gamma.get(0, j));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let report = lemma_suite(&gamma, order, trials, LEMMA_TOL, &mut rng)?;
    let s = LemmaSummary {
        order,
        trials,
        seed,
        tol: LEMMA_TOL,
        passed: report.passed(),
        report,
    };
    if g.json {
        emit_json(out, &s)?;
    } else {
        writeln!(out, "{}", if s.passed { "PASS" } else { "FAIL" })?;
        writeln!(out, "N: {}", s.order)?;
        writeln!(out, "draws: {}", s.report.draws)?;
        writeln!(out, "worst lhs - rhs: {:e}", s.report.worst_violation)?;
        writeln!(out, "minimiser cases: {}", s.report.tight_cases)?;
        writeln!(
            out,
            "worst |rhs - lhs| at minimiser: {:e}",
            s.report.worst_tightness
        )?;
        for f in &s.report.failures {
            writeln!(out, "  {f}")?;
        }
    }
    Ok(if s.passed {
        ExitCode::Ok
    } else {
        ExitCode::Negative
    })
}
