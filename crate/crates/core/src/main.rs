//! Command-line front end for the buy-in portfolio solvers.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nalgebra::DVector;

use buyin::dca::InitStrategy;
use buyin::error::Error;
use buyin::frontier::{
    emit_table, solve_instance, sweep, SolveReport, SolveStatus, SolverKind, SweepConfig,
    TableFormat,
};
use buyin::ingest::{
    asset_statistics, compute_returns, load_meanstd_correlation_path, AssetStatistics,
    PriceMatrix, ReturnKind,
};
use buyin::model::PortfolioInstance;
use buyin::oracle;

const EXIT_INFEASIBLE: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_BAD_INPUT: u8 = 4;

#[derive(Parser)]
#[command(
    name = "buyin",
    version,
    about = "Mean-variance portfolio selection under buy-in thresholds"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, clap::Args)]
struct SolverOpts {
    /// Penalty weight for the DC solver.
    #[arg(long)]
    t: Option<f64>,
    /// Stopping tolerance for the DC solver.
    #[arg(long)]
    eps: Option<f64>,
    /// Initial point strategy: rounded | relaxed | minpenalty.
    #[arg(long)]
    init: Option<String>,
    /// Escalate the penalty weight while indicators stay fractional: on | off.
    #[arg(long)]
    escalate: Option<String>,
    /// Branch-and-bound absolute gap tolerance.
    #[arg(long = "gap-tol")]
    gap_tol: Option<f64>,
    /// Branch-and-bound node budget.
    #[arg(long = "node-limit")]
    node_limit: Option<usize>,
}

impl SolverOpts {
    fn sweep_config(&self) -> Result<SweepConfig, Error> {
        let mut cfg = SweepConfig::default();
        if let Some(t) = self.t {
            cfg.dca.t = t;
        }
        if let Some(eps) = self.eps {
            cfg.dca.eps = eps;
        }
        if let Some(init) = &self.init {
            cfg.dca.init_strategy = InitStrategy::parse(init)
                .ok_or_else(|| Error::InvalidData(format!("unknown init strategy {init:?}")))?;
        }
        if let Some(esc) = &self.escalate {
            cfg.dca.escalate = parse_switch(esc)?;
        }
        if let Some(g) = self.gap_tol {
            cfg.gap_tol = g;
        }
        if let Some(l) = self.node_limit {
            cfg.node_limit = l;
        }
        cfg.dca.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Solve one instance file with a single solver.
    Solve {
        #[arg(long)]
        instance: PathBuf,
        /// dca | bnb | oracle
        #[arg(long)]
        solver: String,
        #[command(flatten)]
        opts: SolverOpts,
        /// Write the report (with the portfolio) as JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep target returns and emit a results table.
    Frontier {
        /// Statistics JSON produced by `stats`.
        #[arg(long)]
        stats: PathBuf,
        /// Buy-in minimum applied to every asset.
        #[arg(long, default_value_t = 0.05)]
        a: f64,
        /// Upper bound applied to every asset.
        #[arg(long, default_value_t = 1.0)]
        b: f64,
        /// Comma-separated target returns.
        #[arg(long)]
        returns: String,
        /// Comma-separated solvers from dca, bnb, oracle.
        #[arg(long, default_value = "dca,bnb")]
        solvers: String,
        #[arg(long)]
        out: Option<PathBuf>,
        /// csv | json | markdown
        #[arg(long, default_value = "csv")]
        format: String,
        #[command(flatten)]
        opts: SolverOpts,
    },
    /// Estimate mean/covariance statistics from market data.
    Stats {
        /// Price CSV: header of asset names, one row per date.
        #[arg(long)]
        prices: Option<PathBuf>,
        /// Plain-text mean/stddev/correlation file.
        #[arg(long)]
        orlib: Option<PathBuf>,
        /// arithmetic | log (price inputs only)
        #[arg(long, default_value = "arithmetic")]
        kind: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a random test instance.
    Gen {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run dca, bnb, and (when small enough) the oracle; print a gap report.
    Compare {
        #[arg(long)]
        instance: PathBuf,
        #[command(flatten)]
        opts: SolverOpts,
    },
}

fn parse_switch(s: &str) -> Result<bool, Error> {
    match s.to_ascii_lowercase().as_str() {
        "on" | "true" | "yes" | "1" => Ok(true),
        "off" | "false" | "no" | "0" => Ok(false),
        _ => Err(Error::InvalidData(format!("expected on|off, got {s:?}"))),
    }
}

fn write_or_print(path: &Option<PathBuf>, text: &str) -> Result<(), Error> {
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn status_exit(status: SolveStatus) -> u8 {
    match status {
        SolveStatus::Solved => 0,
        SolveStatus::Infeasible => EXIT_INFEASIBLE,
        SolveStatus::NodeLimit | SolveStatus::NumericalFailure => EXIT_NUMERICAL,
    }
}

fn print_report_line(rep: &SolveReport) {
    let value = rep
        .value
        .map(|v| format!("{v:.9}"))
        .unwrap_or_else(|| "-".into());
    let iters = rep
        .iterations
        .map(|i| i.to_string())
        .unwrap_or_else(|| "-".into());
    println!(
        "{:<8} {:<18} {:>10} {:>10.3}  {}",
        rep.solver.name(),
        value,
        iters,
        rep.cpu_seconds,
        rep.status.name()
    );
}

fn run_solve(
    instance: &Path,
    solver: &str,
    opts: &SolverOpts,
    out: &Option<PathBuf>,
) -> Result<u8, Error> {
    let solver = SolverKind::parse(solver)
        .ok_or_else(|| Error::InvalidData(format!("unknown solver {solver:?}")))?;
    let inst = PortfolioInstance::load(instance)?;
    let cfg = opts.sweep_config()?;
    let (point, report) = solve_instance(&inst, solver, &cfg)?;

    println!("target return R = {}", inst.target_return());
    println!(
        "{:<8} {:<18} {:>10} {:>10}  status",
        "solver", "value", "iters", "cpu_s"
    );
    print_report_line(&report);
    if let Some(pt) = &point {
        let held: Vec<String> = (0..inst.n())
            .filter(|&i| pt.y[i] > 1e-9)
            .map(|i| format!("y[{}]={:.6}", i + 1, pt.y[i]))
            .collect();
        println!("portfolio: {}", held.join(" "));
    }
    if out.is_some() {
        #[derive(serde::Serialize)]
        struct SolveOutput<'a> {
            report: &'a SolveReport,
            y: Option<Vec<f64>>,
            z: Option<Vec<f64>>,
        }
        let dump = SolveOutput {
            report: &report,
            y: point.as_ref().map(|p| p.y.iter().copied().collect()),
            z: point.as_ref().map(|p| p.z.iter().copied().collect()),
        };
        write_or_print(out, &serde_json::to_string_pretty(&dump)?)?;
    }
    Ok(status_exit(report.status))
}

#[allow(clippy::too_many_arguments)]
fn run_frontier(
    stats_path: &Path,
    a: f64,
    b: f64,
    returns: &str,
    solvers: &str,
    out: &Option<PathBuf>,
    format: &str,
    opts: &SolverOpts,
) -> Result<u8, Error> {
    let stats = AssetStatistics::load(stats_path)?;
    let format = TableFormat::parse(format)
        .ok_or_else(|| Error::InvalidData(format!("unknown table format {format:?}")))?;
    let r_list: Vec<f64> = returns
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Parse(format!("bad target return {s:?}")))
        })
        .collect::<Result<_, _>>()?;
    let solver_list: Vec<SolverKind> = solvers
        .split(',')
        .map(|s| {
            SolverKind::parse(s.trim())
                .ok_or_else(|| Error::InvalidData(format!("unknown solver {s:?}")))
        })
        .collect::<Result<_, _>>()?;
    let cfg = opts.sweep_config()?;
    let n = stats.num_assets();
    let lower = DVector::from_element(n, a);
    let upper = DVector::from_element(n, b);
    let reports = sweep(&stats, &r_list, &lower, &upper, &solver_list, &cfg)?;
    write_or_print(out, &emit_table(&reports, format))?;
    Ok(0)
}

fn run_stats(
    prices: &Option<PathBuf>,
    orlib: &Option<PathBuf>,
    kind: &str,
    out: &Option<PathBuf>,
) -> Result<u8, Error> {
    let stats = match (prices, orlib) {
        (Some(path), None) => {
            let kind = match kind.to_ascii_lowercase().as_str() {
                "arithmetic" => ReturnKind::Arithmetic,
                "log" => ReturnKind::Log,
                _ => {
                    return Err(Error::InvalidData(format!(
                        "unknown return kind {kind:?}"
                    )))
                }
            };
            let prices = PriceMatrix::from_csv_path(path)?;
            let names = prices.asset_names().to_vec();
            let history = compute_returns(&prices, kind);
            let stats = asset_statistics(&history)?;
            AssetStatistics::new(
                stats.mean_returns().clone(),
                stats.covariance().clone(),
                Some(names),
            )?
        }
        (None, Some(path)) => load_meanstd_correlation_path(path)?,
        _ => {
            return Err(Error::InvalidData(
                "give exactly one of --prices or --orlib".into(),
            ))
        }
    };
    write_or_print(out, &stats.to_json())?;
    Ok(0)
}

fn run_gen(n: usize, seed: u64, out: &Option<PathBuf>) -> Result<u8, Error> {
    let inst = oracle::random_instance(n, seed)?;
    let text = serde_json::to_string_pretty(&inst.to_instance_file())?;
    write_or_print(out, &text)?;
    Ok(0)
}

fn run_compare(instance: &Path, opts: &SolverOpts) -> Result<u8, Error> {
    let inst = PortfolioInstance::load(instance)?;
    let cfg = opts.sweep_config()?;
    let mut solvers = vec![SolverKind::Dca, SolverKind::Bnb];
    if inst.n() <= cfg.oracle_limit {
        solvers.push(SolverKind::Oracle);
    } else {
        println!(
            "oracle skipped: n={} exceeds the enumeration limit {}",
            inst.n(),
            cfg.oracle_limit
        );
    }

    println!("target return R = {}", inst.target_return());
    println!(
        "{:<8} {:<18} {:>10} {:>10}  status",
        "solver", "value", "iters", "cpu_s"
    );
    let mut reports = Vec::new();
    for solver in solvers {
        let (_, report) = solve_instance(&inst, solver, &cfg)?;
        print_report_line(&report);
        reports.push(report);
    }
    let value = |k: SolverKind| {
        reports
            .iter()
            .find(|r| r.solver == k)
            .and_then(|r| r.value)
    };
    if let (Some(d), Some(bb)) = (value(SolverKind::Dca), value(SolverKind::Bnb)) {
        println!("gap(dca - bnb)    = {:+.3e}", d - bb);
    }
    if let (Some(d), Some(o)) = (value(SolverKind::Dca), value(SolverKind::Oracle)) {
        println!("gap(dca - oracle) = {:+.3e}", d - o);
    }
    if let (Some(bb), Some(o)) = (value(SolverKind::Bnb), value(SolverKind::Oracle)) {
        println!("gap(bnb - oracle) = {:+.3e}", bb - o);
    }
    let worst = reports
        .iter()
        .map(|r| status_exit(r.status))
        .max()
        .unwrap_or(0);
    Ok(worst)
}

fn dispatch(cli: Cli) -> Result<u8, Error> {
    match &cli.command {
        Command::Solve {
            instance,
            solver,
            opts,
            out,
        } => run_solve(instance, solver, opts, out),
        Command::Frontier {
            stats,
            a,
            b,
            returns,
            solvers,
            out,
            format,
            opts,
        } => run_frontier(stats, *a, *b, returns, solvers, out, format, opts),
        Command::Stats {
            prices,
            orlib,
            kind,
            out,
        } => run_stats(prices, orlib, kind, out),
        Command::Gen { n, seed, out } => run_gen(*n, *seed, out),
        Command::Compare { instance, opts } => run_compare(instance, opts),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help and version are not input errors
            let code = if e.use_stderr() { EXIT_BAD_INPUT } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                Error::Infeasible(_) => EXIT_INFEASIBLE,
                Error::Numerical(_) => EXIT_NUMERICAL,
                _ => EXIT_BAD_INPUT,
            };
            ExitCode::from(code)
        }
    }
}
