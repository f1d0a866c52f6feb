//! Difference-of-convex solver for the penalized portfolio program.
//!
//! The penalized objective `F(y, z) = y'Qy + t p(z)` over the relaxed
//! polytope splits into convex parts `g = y'Qy + indicator(A)` and
//! `h = t sum_i z_i (z_i - 1)`. Each iteration linearizes `h` at the
//! current indicators — its gradient is `v_j = t (2 z_j - 1)` — and solves
//! the convex quadratic subproblem
//!
//! ```text
//!     minimize  y'Qy - v'z   over  (y, z) in A,
//! ```
//!
//! stopping when consecutive iterates move less than `eps`. For `t` above a
//! finite (instance-dependent) threshold the minimizers have binary `z`; the
//! threshold is unknown in advance, so [`solve_with_escalation`] doubles `t`
//! until the indicators land on {0, 1}, then falls back to rounding plus a
//! fixed-support repair if they never do.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::frontier::{ReportConfig, SolveReport, SolveStatus, SolverKind};
use crate::model::{self, MixedPoint, PortfolioInstance};
use crate::oracle;
use crate::qp::{self, QpProblem, QpStatus};

/// Subproblems are solved an order tighter than the default stopping
/// tolerance so solver noise cannot masquerade as progress.
pub const DEFAULT_QP_EPS: f64 = 1e-8;
/// Indicators within this distance of {0, 1} count as binary.
pub const BINARY_TOL: f64 = 1e-6;
/// Relaxation indicators above this round to one in the initial point.
pub const ROUNDING_THRESHOLD: f64 = 1e-6;
/// Iteration cap for the penalty-minimizing initial point's inner loop.
const MIN_PENALTY_MAX_ITER: usize = 200;

/// Where the starting point comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitStrategy {
    /// Solve the relaxation, round every nonzero indicator up to one.
    RoundedRelaxed,
    /// Use the relaxation solution as is.
    Relaxed,
    /// Minimize the binary penalty over the polytope (concave minimization
    /// by the same linearization scheme, with linear subproblems).
    MinPenalty,
}

impl InitStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            InitStrategy::RoundedRelaxed => "rounded",
            InitStrategy::Relaxed => "relaxed",
            InitStrategy::MinPenalty => "minpenalty",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rounded" | "roundedrelaxed" | "rounded-relaxed" => Some(InitStrategy::RoundedRelaxed),
            "relaxed" => Some(InitStrategy::Relaxed),
            "minpenalty" | "min-penalty" => Some(InitStrategy::MinPenalty),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DcaConfig {
    /// Penalty weight t.
    pub t: f64,
    /// Stopping tolerance on `||dy|| + ||dz||` (Euclidean norms).
    pub eps: f64,
    pub max_iter: usize,
    pub init_strategy: InitStrategy,
    /// Escalate t (multiplying by `escalation_factor`) while the indicators
    /// stay fractional.
    pub escalate: bool,
    pub escalation_factor: f64,
    pub max_escalations: usize,
    /// KKT tolerance handed to the subproblem solver.
    pub qp_eps: f64,
}

impl Default for DcaConfig {
    fn default() -> Self {
        Self {
            t: 0.01,
            eps: 1e-7,
            max_iter: 500,
            init_strategy: InitStrategy::RoundedRelaxed,
            escalate: true,
            escalation_factor: 2.0,
            max_escalations: 10,
            qp_eps: DEFAULT_QP_EPS,
        }
    }
}

impl DcaConfig {
    pub fn validate(&self) -> Result<()> {
        // t = 0 is tolerated as a degenerate override when escalation can
        // lift it; without escalation the penalty would never act
        let t_ok = if self.escalate {
            self.t >= 0.0
        } else {
            self.t > 0.0
        };
        if !(t_ok && self.t.is_finite()) {
            return Err(Error::InvalidData(format!(
                "penalty weight t must be positive, got {}",
                self.t
            )));
        }
        if !(self.eps > 0.0) || self.max_iter == 0 {
            return Err(Error::InvalidData(
                "eps must be positive and max_iter at least 1".into(),
            ));
        }
        if self.escalate && !(self.escalation_factor > 1.0) {
            return Err(Error::InvalidData(
                "escalation factor must exceed 1".into(),
            ));
        }
        if !(self.qp_eps > 0.0) {
            return Err(Error::InvalidData("qp_eps must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Converged,
    MaxIter,
}

/// Record of one solver run. Iterates (and their objective values) start at
/// the first subproblem solution: the starting point may sit outside the
/// polytope, where the penalized objective does not obey the descent
/// property.
#[derive(Debug, Clone)]
pub struct DcaTrace {
    pub start: MixedPoint,
    pub iterates: Vec<MixedPoint>,
    /// Penalized objective `F` at each iterate.
    pub objective_values: Vec<f64>,
    /// Binary penalty `p(z)` at each iterate.
    pub penalty_values: Vec<f64>,
    /// `(||dy||, ||dz||)` against the previous iterate (the start for k=0).
    pub step_norms: Vec<(f64, f64)>,
    pub stop_reason: StopReason,
    pub iter_count: usize,
    pub wall_seconds: f64,
    /// Penalty weight this run used.
    pub t: f64,
}

impl DcaTrace {
    /// Counts descent violations: consecutive objective values rising by
    /// more than `slack`.
    pub fn descent_violations(&self, slack: f64) -> usize {
        self.objective_values
            .windows(2)
            .filter(|w| w[1] > w[0] + slack)
            .count()
    }

    /// One line per iteration: `k,F,p,dy,dz`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,F,p,dy,dz\n");
        for (k, ((f, p), (dy, dz))) in self
            .objective_values
            .iter()
            .zip(&self.penalty_values)
            .zip(&self.step_norms)
            .enumerate()
        {
            out.push_str(&format!("{},{},{},{},{}\n", k + 1, f, p, dy, dz));
        }
        out
    }
}

/// Failure modes of a single run, carrying the partial trace for
/// post-mortems when the subproblem solver gives out mid-run.
#[derive(Debug)]
pub enum DcaFailure {
    Invalid(String),
    /// A subproblem was infeasible: the target return is unreachable.
    Infeasible(String),
    Numerical {
        message: String,
        trace: Box<DcaTrace>,
    },
}

impl From<DcaFailure> for Error {
    fn from(f: DcaFailure) -> Self {
        match f {
            DcaFailure::Invalid(m) => Error::InvalidData(m),
            DcaFailure::Infeasible(m) => Error::Infeasible(m),
            DcaFailure::Numerical { message, .. } => Error::Numerical(message),
        }
    }
}

/// Gradient of the linearized concave part at `z`: `u = 0`,
/// `v_j = t (2 z_j - 1)`.
pub fn penalty_subgradient(z: &DVector<f64>, t: f64) -> (DVector<f64>, DVector<f64>) {
    (
        DVector::zeros(z.len()),
        z.map(|zj| t * (2.0 * zj - 1.0)),
    )
}

/// The convex subproblem `min y'Qy - v'z` over the polytope, as a QP over
/// the stacked variables `(y, z)`.
pub fn build_subproblem(inst: &PortfolioInstance, v: &DVector<f64>) -> Result<QpProblem> {
    let n = inst.n();
    if v.len() != n {
        return Err(Error::Dimension(format!(
            "linear term has {} entries for {} assets",
            v.len(),
            n
        )));
    }
    let d = 2 * n;
    let mut h = DMatrix::zeros(d, d);
    for i in 0..n {
        for j in 0..n {
            h[(i, j)] = inst.covariance()[(i, j)];
        }
    }
    let mut c = DVector::zeros(d);
    for j in 0..n {
        c[n + j] = -v[j];
    }
    let poly = inst.polytope();
    QpProblem::new(
        h,
        c,
        poly.a_eq().clone(),
        poly.b_eq().clone(),
        poly.a_in().clone(),
        poly.b_in().clone(),
    )
}

/// Solves the relaxation (`z` free in the box) and returns the point with
/// indicators normalized to their smallest feasible values `y_i / b_i`,
/// plus the relaxation objective. Interior-point solves land in the middle
/// of the optimal face where `z` has no objective weight; the normalization
/// pins the vertex representative a simplex-type solver would report.
pub fn relaxation(inst: &PortfolioInstance, qp_eps: f64) -> Result<(MixedPoint, f64)> {
    let subproblem = build_subproblem(inst, &DVector::zeros(inst.n()))?;
    let sol = qp::solve_qp(&subproblem, qp_eps);
    match sol.status {
        QpStatus::Optimal => {
            let mut pt = model::unstack(&sol.x, inst.n());
            for i in 0..inst.n() {
                pt.z[i] = (pt.y[i] / inst.upper_bounds()[i]).clamp(0.0, 1.0);
            }
            Ok((pt, sol.objective))
        }
        QpStatus::Infeasible => Err(Error::Infeasible(format!(
            "relaxation infeasible: target return {} unreachable",
            inst.target_return()
        ))),
        QpStatus::NumericalFailure => {
            Err(Error::Numerical("relaxation QP did not converge".into()))
        }
    }
}

/// Rounds every indicator above `rho` up to one, the rest down to zero.
pub fn round_up_nonzero(z: &DVector<f64>, rho: f64) -> DVector<f64> {
    z.map(|zi| if zi > rho { 1.0 } else { 0.0 })
}

/// Computes the starting point for the chosen strategy.
pub fn initial_point(inst: &PortfolioInstance, strategy: InitStrategy) -> Result<MixedPoint> {
    initial_point_with(inst, strategy, DEFAULT_QP_EPS)
}

pub fn initial_point_with(
    inst: &PortfolioInstance,
    strategy: InitStrategy,
    qp_eps: f64,
) -> Result<MixedPoint> {
    let (relaxed, _) = relaxation(inst, qp_eps)?;
    match strategy {
        InitStrategy::Relaxed => Ok(relaxed),
        InitStrategy::RoundedRelaxed => Ok(MixedPoint::new(
            relaxed.y.clone(),
            round_up_nonzero(&relaxed.z, ROUNDING_THRESHOLD),
        )),
        InitStrategy::MinPenalty => min_penalty_point(inst, relaxed, qp_eps),
    }
}

/// Minimizes `p(z)` over the polytope by the same linearization scheme with
/// the quadratic term absent, so each subproblem is a linear program.
/// Starts from the relaxation solution; the descent property then caps the
/// result's penalty by the relaxation's.
fn min_penalty_point(
    inst: &PortfolioInstance,
    start: MixedPoint,
    qp_eps: f64,
) -> Result<MixedPoint> {
    let n = inst.n();
    let poly = inst.polytope();
    let h = DMatrix::zeros(2 * n, 2 * n);
    let mut current = start;
    for _ in 0..MIN_PENALTY_MAX_ITER {
        // gradient of sum z_i (z_i - 1), the convex negation of p
        let v = current.z.map(|zj| 2.0 * zj - 1.0);
        let mut c = DVector::zeros(2 * n);
        for j in 0..n {
            c[n + j] = -v[j];
        }
        let lp = QpProblem::new(
            h.clone(),
            c,
            poly.a_eq().clone(),
            poly.b_eq().clone(),
            poly.a_in().clone(),
            poly.b_in().clone(),
        )?;
        let sol = qp::solve_qp(&lp, qp_eps);
        let next = match sol.status {
            QpStatus::Optimal => model::unstack(&sol.x, n),
            QpStatus::Infeasible => {
                return Err(Error::Infeasible(
                    "penalty-minimizing linear program infeasible".into(),
                ))
            }
            QpStatus::NumericalFailure => {
                return Err(Error::Numerical(
                    "penalty-minimizing linear program did not converge".into(),
                ))
            }
        };
        let moved = (&next.y - &current.y).norm() + (&next.z - &current.z).norm();
        current = next;
        if moved <= 1e-7 {
            break;
        }
    }
    Ok(current)
}

/// Runs the linearize-and-solve iteration from `start` at fixed `t`.
///
/// The start's indicators must lie in the unit box; the point itself need
/// not be feasible — the first subproblem lands in the polytope.
pub fn dca_solve(
    inst: &PortfolioInstance,
    cfg: &DcaConfig,
    start: &MixedPoint,
) -> std::result::Result<(MixedPoint, DcaTrace), DcaFailure> {
    let n = inst.n();
    if start.y.len() != n || start.z.len() != n {
        return Err(DcaFailure::Invalid(format!(
            "start point has dimensions {}/{} for {} assets",
            start.y.len(),
            start.z.len(),
            n
        )));
    }
    if start
        .z
        .iter()
        .any(|&zi| !(-model::PENALTY_DOMAIN_SLACK..=1.0 + model::PENALTY_DOMAIN_SLACK).contains(&zi))
    {
        return Err(DcaFailure::Invalid(
            "start indicators must lie in [0, 1]".into(),
        ));
    }
    if !(cfg.t >= 0.0 && cfg.t.is_finite()) {
        return Err(DcaFailure::Invalid(format!("bad penalty weight {}", cfg.t)));
    }

    let clock = Instant::now();
    let mut trace = DcaTrace {
        start: start.clone(),
        iterates: Vec::new(),
        objective_values: Vec::new(),
        penalty_values: Vec::new(),
        step_norms: Vec::new(),
        stop_reason: StopReason::MaxIter,
        iter_count: 0,
        wall_seconds: 0.0,
        t: cfg.t,
    };

    let mut previous = start.clone();
    for k in 1..=cfg.max_iter {
        let (_, v) = penalty_subgradient(&previous.z, cfg.t);
        let subproblem = build_subproblem(inst, &v).map_err(|e| DcaFailure::Invalid(e.to_string()))?;
        let sol = qp::solve_qp(&subproblem, cfg.qp_eps);
        let point = match sol.status {
            QpStatus::Optimal => model::unstack(&sol.x, n),
            QpStatus::Infeasible => {
                return Err(DcaFailure::Infeasible(format!(
                    "target return {} unreachable: subproblem infeasible at iteration {k}",
                    inst.target_return()
                )))
            }
            QpStatus::NumericalFailure => {
                trace.wall_seconds = clock.elapsed().as_secs_f64();
                return Err(DcaFailure::Numerical {
                    message: format!("subproblem failed to converge at iteration {k}"),
                    trace: Box::new(trace),
                });
            }
        };

        let penalty = model::binary_penalty(&point.z).map_err(|e| DcaFailure::Numerical {
            message: format!("subproblem returned indicators outside the box: {e}"),
            trace: Box::new(trace.clone()),
        })?;
        let objective = inst.variance(&point.y) + cfg.t * penalty;
        let dy = (&point.y - &previous.y).norm();
        let dz = (&point.z - &previous.z).norm();

        trace.iterates.push(point.clone());
        trace.objective_values.push(objective);
        trace.penalty_values.push(penalty);
        trace.step_norms.push((dy, dz));
        trace.iter_count = k;

        if dy + dz <= cfg.eps {
            trace.stop_reason = StopReason::Converged;
            trace.wall_seconds = clock.elapsed().as_secs_f64();
            return Ok((point, trace));
        }
        previous = point;
    }
    trace.stop_reason = StopReason::MaxIter;
    trace.wall_seconds = clock.elapsed().as_secs_f64();
    Ok((previous, trace))
}

/// A full solve: initial point, repeated runs with growing `t` until the
/// indicators are binary, and a rounding-plus-repair fallback.
#[derive(Debug, Clone)]
pub struct EscalationRun {
    pub point: MixedPoint,
    /// `y' Q y` of the final portfolio.
    pub value: f64,
    pub report: SolveReport,
    pub traces: Vec<DcaTrace>,
    pub t_final: f64,
    pub escalations: usize,
    /// Whether the fallback rounding/repair produced the final point.
    pub repaired: bool,
}

pub fn solve_with_escalation(inst: &PortfolioInstance, cfg: &DcaConfig) -> Result<EscalationRun> {
    cfg.validate()?;
    let init_clock = Instant::now();
    model::check_target_reachable(inst)?;
    let start = initial_point_with(inst, cfg.init_strategy, cfg.qp_eps)?;
    let init_seconds = init_clock.elapsed().as_secs_f64();

    let solve_clock = Instant::now();
    let mut traces: Vec<DcaTrace> = Vec::new();
    let mut t_current = cfg.t;
    let mut escalations = 0usize;
    let mut current_start = start;
    let mut repaired = false;

    let point = loop {
        let mut run_cfg = cfg.clone();
        run_cfg.t = t_current;
        let (point, trace) = dca_solve(inst, &run_cfg, &current_start)?;
        traces.push(trace);

        if point.binary_distance() <= BINARY_TOL {
            break snap_to_support(inst, &point)?.unwrap_or(point);
        }
        if !cfg.escalate || escalations >= cfg.max_escalations {
            break repair_fractional(inst, &point, &mut repaired)?;
        }
        escalations += 1;
        t_current = if t_current > 0.0 {
            t_current * cfg.escalation_factor
        } else {
            DcaConfig::default().t
        };
        current_start = MixedPoint::new(point.y.clone(), point.z.map(|z| z.clamp(0.0, 1.0)));
    };

    let cpu_seconds = solve_clock.elapsed().as_secs_f64();
    let value = inst.variance(&point.y);
    let iterations: u64 = traces.iter().map(|t| t.iter_count as u64).sum();
    let report = SolveReport {
        target_return: inst.target_return(),
        solver: SolverKind::Dca,
        status: SolveStatus::Solved,
        value: Some(value),
        iterations: Some(iterations),
        cpu_seconds,
        init_seconds: Some(init_seconds),
        config: ReportConfig {
            t: Some(cfg.t),
            eps: Some(cfg.eps),
            init_strategy: Some(cfg.init_strategy.name().to_string()),
            escalate: Some(cfg.escalate),
            escalations: Some(escalations as u32),
            t_final: Some(t_current),
            repaired: Some(repaired),
            gap_tol: None,
            node_limit: None,
            seed: inst.seed(),
            stopping_norm: Some("euclidean-sum".to_string()),
        },
    };
    Ok(EscalationRun {
        point,
        value,
        report,
        traces,
        t_final: t_current,
        escalations,
        repaired,
    })
}

/// Cleans a binary-within-tolerance point: indicators snap to exact {0, 1}
/// and the weights re-solve on that support, so the reported value never
/// undercuts the support's true optimum through coupling-row slack.
fn snap_to_support(inst: &PortfolioInstance, point: &MixedPoint) -> Result<Option<MixedPoint>> {
    let support: Vec<usize> = (0..inst.n()).filter(|&i| point.z[i] >= 0.5).collect();
    match oracle::fixed_support_qp(inst, &support) {
        Ok(Some((y, _))) => {
            let z = DVector::from_fn(inst.n(), |i, _| {
                if support.contains(&i) {
                    1.0
                } else {
                    0.0
                }
            });
            Ok(Some(MixedPoint::new(y, z)))
        }
        // keep the raw iterate when the snapped support will not solve
        Ok(None) | Err(Error::Numerical(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Rounds fractional indicators to the nearest binary point and repairs the
/// weights with a fixed-support solve.
fn repair_fractional(
    inst: &PortfolioInstance,
    point: &MixedPoint,
    repaired: &mut bool,
) -> Result<MixedPoint> {
    *repaired = true;
    let nearest: Vec<usize> = (0..inst.n()).filter(|&i| point.z[i] >= 0.5).collect();
    let fallback: Vec<usize> = (0..inst.n())
        .filter(|&i| point.z[i] > ROUNDING_THRESHOLD)
        .collect();
    for support in [nearest, fallback] {
        if support.is_empty() {
            continue;
        }
        if let Some((y, _)) = oracle::fixed_support_qp(inst, &support)? {
            let z = DVector::from_fn(inst.n(), |i, _| {
                if support.contains(&i) {
                    1.0
                } else {
                    0.0
                }
            });
            return Ok(MixedPoint::new(y, z));
        }
    }
    Err(Error::Numerical(
        "indicators stayed fractional after escalation and no rounded support is feasible".into(),
    ))
}
