//! Efficient-frontier sweeps and result tables.
//!
//! Runs the configured solvers over a list of target returns and collects
//! one [`SolveReport`] per `(R, solver)` pair, in the shape of the usual
//! `R / value / iterations / CPU` result tables. Tables serialize to CSV,
//! JSON, or markdown and parse back losslessly from the first two.

use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bnb::{self, BnbStatus};
use crate::dca::{self, DcaConfig};
use crate::error::{Error, Result};
use crate::ingest::AssetStatistics;
use crate::model::{MixedPoint, PortfolioInstance};
use crate::oracle;

/// Which algorithm produced a report row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Dca,
    Bnb,
    Oracle,
}

impl SolverKind {
    pub fn name(&self) -> &'static str {
        match self {
            SolverKind::Dca => "dca",
            SolverKind::Bnb => "bnb",
            SolverKind::Oracle => "oracle",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dca" => Some(SolverKind::Dca),
            "bnb" | "branch-and-bound" | "bb" => Some(SolverKind::Bnb),
            "oracle" | "brute" | "brute-force" => Some(SolverKind::Oracle),
            _ => None,
        }
    }
}

/// Outcome of one solve within a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Solved,
    Infeasible,
    NodeLimit,
    NumericalFailure,
}

impl SolveStatus {
    pub fn name(&self) -> &'static str {
        match self {
            SolveStatus::Solved => "solved",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::NodeLimit => "node_limit",
            SolveStatus::NumericalFailure => "numerical_failure",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "solved" => Some(SolveStatus::Solved),
            "infeasible" => Some(SolveStatus::Infeasible),
            "node_limit" => Some(SolveStatus::NodeLimit),
            "numerical_failure" => Some(SolveStatus::NumericalFailure),
            _ => None,
        }
    }
}

/// Snapshot of the configuration behind a report row. Fields not applicable
/// to the producing solver stay `None`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReportConfig {
    pub t: Option<f64>,
    pub eps: Option<f64>,
    pub init_strategy: Option<String>,
    pub escalate: Option<bool>,
    pub escalations: Option<u32>,
    pub t_final: Option<f64>,
    pub repaired: Option<bool>,
    pub gap_tol: Option<f64>,
    pub node_limit: Option<u64>,
    pub seed: Option<u64>,
    pub stopping_norm: Option<String>,
}

/// One row of a results table: a solver run at one target return.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    /// Target expected return R.
    pub target_return: f64,
    pub solver: SolverKind,
    pub status: SolveStatus,
    /// Objective `y' Q y` of the returned portfolio; absent when infeasible.
    pub value: Option<f64>,
    /// Solver-specific work count: subproblem iterations for the DC solver,
    /// explored nodes for branch-and-bound, enumerated supports for the
    /// oracle.
    pub iterations: Option<u64>,
    /// Wall time of the solve call, excluding data loading.
    pub cpu_seconds: f64,
    /// Wall time spent computing the initial point, when separate.
    pub init_seconds: Option<f64>,
    pub config: ReportConfig,
}

/// Sweep-wide solver configuration.
#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub dca: DcaConfig,
    pub gap_tol: f64,
    pub node_limit: usize,
    /// Largest n the oracle will enumerate.
    pub oracle_limit: usize,
    /// Fan the (R, solver) pairs out across threads.
    pub parallel: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            dca: DcaConfig::default(),
            gap_tol: 1e-9,
            node_limit: 1_000_000,
            oracle_limit: oracle::DEFAULT_SUPPORT_LIMIT,
            parallel: true,
        }
    }
}

/// Runs one solver on one instance. Infeasibility and numerical breakdowns
/// come back as report rows, not errors; errors are reserved for invalid
/// inputs.
pub fn solve_instance(
    inst: &PortfolioInstance,
    solver: SolverKind,
    cfg: &SweepConfig,
) -> Result<(Option<MixedPoint>, SolveReport)> {
    match solver {
        SolverKind::Dca => {
            let clock = Instant::now();
            match dca::solve_with_escalation(inst, &cfg.dca) {
                Ok(run) => Ok((Some(run.point), run.report)),
                Err(Error::Infeasible(_)) => Ok((
                    None,
                    failed_report(inst, solver, SolveStatus::Infeasible, clock, cfg),
                )),
                Err(Error::Numerical(_)) => Ok((
                    None,
                    failed_report(inst, solver, SolveStatus::NumericalFailure, clock, cfg),
                )),
                Err(e) => Err(e),
            }
        }
        SolverKind::Bnb => {
            let clock = Instant::now();
            let res = bnb::bnb_solve(inst, cfg.gap_tol, cfg.node_limit)?;
            let cpu_seconds = clock.elapsed().as_secs_f64();
            let status = match res.status {
                BnbStatus::ProvedOptimal => SolveStatus::Solved,
                BnbStatus::Infeasible => SolveStatus::Infeasible,
                BnbStatus::NodeLimit => SolveStatus::NodeLimit,
            };
            Ok((
                res.best_point,
                SolveReport {
                    target_return: inst.target_return(),
                    solver,
                    status,
                    value: res.best_value,
                    iterations: Some(res.nodes_explored as u64),
                    cpu_seconds,
                    init_seconds: None,
                    config: ReportConfig {
                        gap_tol: Some(cfg.gap_tol),
                        node_limit: Some(cfg.node_limit as u64),
                        seed: inst.seed(),
                        ..ReportConfig::default()
                    },
                },
            ))
        }
        SolverKind::Oracle => {
            if inst.n() > cfg.oracle_limit {
                return Err(Error::InvalidData(format!(
                    "oracle refused: n={} exceeds the enumeration limit {}",
                    inst.n(),
                    cfg.oracle_limit
                )));
            }
            let clock = Instant::now();
            let supports = (1u64 << inst.n()) - 1;
            match oracle::brute_force(inst, cfg.oracle_limit) {
                Ok(Some(best)) => {
                    let cpu_seconds = clock.elapsed().as_secs_f64();
                    let point = best.point();
                    Ok((
                        Some(point),
                        SolveReport {
                            target_return: inst.target_return(),
                            solver,
                            status: SolveStatus::Solved,
                            value: Some(best.value),
                            iterations: Some(supports),
                            cpu_seconds,
                            init_seconds: None,
                            config: ReportConfig {
                                seed: inst.seed(),
                                ..ReportConfig::default()
                            },
                        },
                    ))
                }
                Ok(None) => Ok((
                    None,
                    failed_report(inst, solver, SolveStatus::Infeasible, clock, cfg),
                )),
                Err(Error::Numerical(_)) => Ok((
                    None,
                    failed_report(inst, solver, SolveStatus::NumericalFailure, clock, cfg),
                )),
                Err(e) => Err(e),
            }
        }
    }
}

fn failed_report(
    inst: &PortfolioInstance,
    solver: SolverKind,
    status: SolveStatus,
    clock: Instant,
    cfg: &SweepConfig,
) -> SolveReport {
    let config = match solver {
        SolverKind::Dca => ReportConfig {
            t: Some(cfg.dca.t),
            eps: Some(cfg.dca.eps),
            init_strategy: Some(cfg.dca.init_strategy.name().to_string()),
            escalate: Some(cfg.dca.escalate),
            seed: inst.seed(),
            stopping_norm: Some("euclidean-sum".to_string()),
            ..ReportConfig::default()
        },
        SolverKind::Bnb => ReportConfig {
            gap_tol: Some(cfg.gap_tol),
            node_limit: Some(cfg.node_limit as u64),
            seed: inst.seed(),
            ..ReportConfig::default()
        },
        SolverKind::Oracle => ReportConfig {
            seed: inst.seed(),
            ..ReportConfig::default()
        },
    };
    SolveReport {
        target_return: inst.target_return(),
        solver,
        status,
        value: None,
        iterations: None,
        cpu_seconds: clock.elapsed().as_secs_f64(),
        init_seconds: None,
        config,
    }
}

/// Runs every requested solver at every target return. Unreachable targets
/// yield `Infeasible` rows instead of aborting; reports come back sorted by
/// `(R, solver)`.
pub fn sweep(
    stats: &AssetStatistics,
    r_list: &[f64],
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    solvers: &[SolverKind],
    cfg: &SweepConfig,
) -> Result<Vec<SolveReport>> {
    if r_list.is_empty() {
        return Err(Error::InvalidData("no target returns given".into()));
    }
    if solvers.is_empty() {
        return Ok(Vec::new());
    }
    // validate statistics and bounds once up front
    let probe = PortfolioInstance::from_statistics(stats, r_list[0], lower.clone(), upper.clone())?;
    if solvers.contains(&SolverKind::Oracle) && probe.n() > cfg.oracle_limit {
        return Err(Error::InvalidData(format!(
            "oracle requested but n={} exceeds the enumeration limit {}",
            probe.n(),
            cfg.oracle_limit
        )));
    }

    let pairs: Vec<(f64, SolverKind)> = r_list
        .iter()
        .flat_map(|&r| solvers.iter().map(move |&s| (r, s)))
        .collect();
    let run = |&(r, solver): &(f64, SolverKind)| -> Result<SolveReport> {
        let inst = probe.with_target_return(r)?;
        Ok(solve_instance(&inst, solver, cfg)?.1)
    };
    let mut reports: Vec<SolveReport> = if cfg.parallel {
        pairs.par_iter().map(run).collect::<Result<_>>()?
    } else {
        pairs.iter().map(run).collect::<Result<_>>()?
    };
    reports.sort_by(|a, b| {
        a.target_return
            .total_cmp(&b.target_return)
            .then(a.solver.cmp(&b.solver))
    });
    Ok(reports)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Csv,
    Json,
    Markdown,
}

impl TableFormat {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Some(TableFormat::Csv),
            "json" => Some(TableFormat::Json),
            "markdown" | "md" => Some(TableFormat::Markdown),
            _ => None,
        }
    }
}

const CSV_COLUMNS: [&str; 18] = [
    "R",
    "solver",
    "status",
    "value",
    "iterations",
    "cpu_seconds",
    "init_seconds",
    "t",
    "eps",
    "init_strategy",
    "escalate",
    "escalations",
    "t_final",
    "repaired",
    "gap_tol",
    "node_limit",
    "seed",
    "stopping_norm",
];

/// Renders reports as a table. CSV and JSON carry every field and parse
/// back losslessly; markdown shows the classic `R / value / iter / CPU`
/// layout, one section per solver.
pub fn emit_table(reports: &[SolveReport], format: TableFormat) -> String {
    match format {
        TableFormat::Json => {
            serde_json::to_string_pretty(reports).expect("reports serialize")
        }
        TableFormat::Csv => {
            fn opt<T: std::fmt::Display>(v: &Option<T>) -> String {
                v.as_ref().map(|x| x.to_string()).unwrap_or_default()
            }
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(CSV_COLUMNS).expect("header");
            for rep in reports {
                let c = &rep.config;
                w.write_record(&[
                    rep.target_return.to_string(),
                    rep.solver.name().to_string(),
                    rep.status.name().to_string(),
                    opt(&rep.value),
                    opt(&rep.iterations),
                    rep.cpu_seconds.to_string(),
                    opt(&rep.init_seconds),
                    opt(&c.t),
                    opt(&c.eps),
                    opt(&c.init_strategy),
                    opt(&c.escalate),
                    opt(&c.escalations),
                    opt(&c.t_final),
                    opt(&c.repaired),
                    opt(&c.gap_tol),
                    opt(&c.node_limit),
                    opt(&c.seed),
                    opt(&c.stopping_norm),
                ])
                .expect("record");
            }
            String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
        }
        TableFormat::Markdown => {
            let mut out = String::new();
            let mut solvers: Vec<SolverKind> = reports.iter().map(|r| r.solver).collect();
            solvers.sort();
            solvers.dedup();
            for solver in solvers {
                out.push_str(&format!("## {}\n\n", solver.name()));
                out.push_str("| R | value | iter | CPU (s) |\n|---|---|---|---|\n");
                for rep in reports.iter().filter(|r| r.solver == solver) {
                    let value = rep
                        .value
                        .map(|v| format!("{v:.6}"))
                        .unwrap_or_else(|| rep.status.name().to_string());
                    let iter = rep
                        .iterations
                        .map(|i| i.to_string())
                        .unwrap_or_default();
                    out.push_str(&format!(
                        "| {} | {} | {} | {:.3} |\n",
                        rep.target_return, value, iter, rep.cpu_seconds
                    ));
                }
                out.push('\n');
            }
            out
        }
    }
}

pub fn parse_table_json(text: &str) -> Result<Vec<SolveReport>> {
    Ok(serde_json::from_str(text)?)
}

pub fn parse_table_csv(text: &str) -> Result<Vec<SolveReport>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse(format!("table header: {e}")))?
        .clone();
    if headers.iter().ne(CSV_COLUMNS) {
        return Err(Error::Parse("unexpected table columns".into()));
    }
    fn opt_parse<T: std::str::FromStr>(field: &str, what: &str) -> Result<Option<T>> {
        if field.is_empty() {
            return Ok(None);
        }
        field
            .parse()
            .map(Some)
            .map_err(|_| Error::Parse(format!("bad {what}: {field:?}")))
    }
    let mut reports = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse(format!("table row: {e}")))?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let solver = SolverKind::parse(field(1))
            .ok_or_else(|| Error::Parse(format!("unknown solver {:?}", field(1))))?;
        let status = SolveStatus::parse(field(2))
            .ok_or_else(|| Error::Parse(format!("unknown status {:?}", field(2))))?;
        reports.push(SolveReport {
            target_return: field(0)
                .parse()
                .map_err(|_| Error::Parse(format!("bad R {:?}", field(0))))?,
            solver,
            status,
            value: opt_parse(field(3), "value")?,
            iterations: opt_parse(field(4), "iterations")?,
            cpu_seconds: field(5)
                .parse()
                .map_err(|_| Error::Parse(format!("bad cpu_seconds {:?}", field(5))))?,
            init_seconds: opt_parse(field(6), "init_seconds")?,
            config: ReportConfig {
                t: opt_parse(field(7), "t")?,
                eps: opt_parse(field(8), "eps")?,
                init_strategy: opt_parse(field(9), "init_strategy")?,
                escalate: opt_parse(field(10), "escalate")?,
                escalations: opt_parse(field(11), "escalations")?,
                t_final: opt_parse(field(12), "t_final")?,
                repaired: opt_parse(field(13), "repaired")?,
                gap_tol: opt_parse(field(14), "gap_tol")?,
                node_limit: opt_parse(field(15), "node_limit")?,
                seed: opt_parse(field(16), "seed")?,
                stopping_norm: opt_parse(field(17), "stopping_norm")?,
            },
        });
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::AssetStatistics;
    use crate::oracle;

    fn small_stats() -> AssetStatistics {
        let inst = oracle::random_instance(5, 3141).unwrap();
        AssetStatistics::new(inst.mean_returns().clone(), inst.covariance().clone(), None)
            .unwrap()
    }

    fn bounds(n: usize) -> (DVector<f64>, DVector<f64>) {
        (DVector::from_element(n, 0.05), DVector::from_element(n, 1.0))
    }

    #[test]
    fn empty_solver_set_gives_empty_reports() {
        let stats = small_stats();
        let (lo, hi) = bounds(5);
        let reports = sweep(&stats, &[0.001], &lo, &hi, &[], &SweepConfig::default()).unwrap();
        assert!(reports.is_empty());
    }

    #[test]
    fn sweep_reports_infeasible_rows_without_aborting() {
        let stats = small_stats();
        let (lo, hi) = bounds(5);
        let r_mid = stats.mean_returns().mean();
        // 0.5 is far above any achievable return
        let reports = sweep(
            &stats,
            &[r_mid, 0.5],
            &lo,
            &hi,
            &[SolverKind::Dca, SolverKind::Bnb],
            &SweepConfig::default(),
        )
        .unwrap();
        assert_eq!(reports.len(), 4);
        // sorted by (R, solver)
        assert_eq!(reports[0].target_return, r_mid);
        assert_eq!(reports[0].solver, SolverKind::Dca);
        assert_eq!(reports[1].solver, SolverKind::Bnb);
        for rep in &reports[2..] {
            assert_eq!(rep.status, SolveStatus::Infeasible);
            assert!(rep.value.is_none());
        }
        for rep in &reports[..2] {
            assert_eq!(rep.status, SolveStatus::Solved);
            assert!(rep.iterations.unwrap() >= 1);
            assert!(rep.value.unwrap() >= -1e-12);
        }
    }

    #[test]
    fn dca_never_beats_bnb_beyond_tolerance() {
        let stats = small_stats();
        let (lo, hi) = bounds(5);
        let r_mid = stats.mean_returns().mean();
        let reports = sweep(
            &stats,
            &[r_mid],
            &lo,
            &hi,
            &[SolverKind::Dca, SolverKind::Bnb, SolverKind::Oracle],
            &SweepConfig::default(),
        )
        .unwrap();
        let value = |k: SolverKind| {
            reports
                .iter()
                .find(|r| r.solver == k)
                .and_then(|r| r.value)
                .unwrap()
        };
        assert!(value(SolverKind::Dca) >= value(SolverKind::Bnb) - 1e-9);
        assert!(value(SolverKind::Bnb) >= value(SolverKind::Oracle) - 1e-9);
        assert!(value(SolverKind::Bnb) <= value(SolverKind::Oracle) + 1e-7);
    }

    #[test]
    fn tables_round_trip_through_csv_and_json() {
        let stats = small_stats();
        let (lo, hi) = bounds(5);
        let r_mid = stats.mean_returns().mean();
        let reports = sweep(
            &stats,
            &[r_mid, 0.5],
            &lo,
            &hi,
            &[SolverKind::Dca, SolverKind::Bnb],
            &SweepConfig::default(),
        )
        .unwrap();

        let json = emit_table(&reports, TableFormat::Json);
        let from_json = parse_table_json(&json).unwrap();
        assert_eq!(from_json, reports);

        let csv_text = emit_table(&from_json, TableFormat::Csv);
        let from_csv = parse_table_csv(&csv_text).unwrap();
        assert_eq!(from_csv, reports);

        let json2 = emit_table(&from_csv, TableFormat::Json);
        assert_eq!(json, json2);

        let md = emit_table(&reports, TableFormat::Markdown);
        assert!(md.contains("## dca"));
        assert!(md.contains("| R | value | iter | CPU (s) |"));
        // one data row per report plus headers
        assert!(md.contains("infeasible"));
    }

    #[test]
    fn single_report_renders_header_and_row() {
        let rep = SolveReport {
            target_return: 0.001,
            solver: SolverKind::Bnb,
            status: SolveStatus::Solved,
            value: Some(3.05e-4),
            iterations: Some(12),
            cpu_seconds: 0.125,
            init_seconds: None,
            config: ReportConfig::default(),
        };
        let csv_text = emit_table(std::slice::from_ref(&rep), TableFormat::Csv);
        assert_eq!(csv_text.lines().count(), 2);
        let md = emit_table(std::slice::from_ref(&rep), TableFormat::Markdown);
        assert_eq!(md.lines().filter(|l| l.starts_with("| 0.001")).count(), 1);
    }

    #[test]
    fn sweeps_are_deterministic() {
        let stats = small_stats();
        let (lo, hi) = bounds(5);
        let r_mid = stats.mean_returns().mean();
        let r_list = [r_mid * 0.5, r_mid, r_mid * 1.5];
        let solvers = [SolverKind::Dca, SolverKind::Bnb];
        let cfg = SweepConfig::default();
        let a = sweep(&stats, &r_list, &lo, &hi, &solvers, &cfg).unwrap();
        let b = sweep(&stats, &r_list, &lo, &hi, &solvers, &cfg).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.value.map(f64::to_bits), y.value.map(f64::to_bits));
            assert_eq!(x.iterations, y.iterations);
            assert_eq!(x.status, y.status);
        }
    }

    #[test]
    fn relaxation_frontier_is_monotone_beyond_the_risk_minimizer() {
        use crate::dca::relaxation;
        let inst = oracle::random_instance(6, 999).unwrap();
        let (lo_r, hi_r) = crate::model::return_range(&inst).unwrap();

        // relaxation value over an R grid
        let grid: Vec<f64> = (0..12)
            .map(|k| lo_r + (hi_r - lo_r) * (0.05 + 0.9 * k as f64 / 11.0))
            .collect();
        let values: Vec<f64> = grid
            .iter()
            .map(|&r| {
                let i = inst.with_target_return(r).unwrap();
                relaxation(&i, 1e-8).unwrap().1
            })
            .collect();

        // the sweep is convex in R; past its minimum it must be non-decreasing
        let argmin = values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        for k in argmin..values.len() - 1 {
            assert!(
                values[k + 1] >= values[k] - 1e-8,
                "relaxed frontier dipped after its minimum: {} -> {}",
                values[k],
                values[k + 1]
            );
        }
    }
}
