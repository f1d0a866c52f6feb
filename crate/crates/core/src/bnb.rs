//! Branch-and-bound over the mixed 0-1 model.
//!
//! Lower bounds come from the convex relaxation (`z` in `[0, 1]`), branching
//! fixes the most fractional indicator to 0 or 1, and the incumbent updates
//! whenever a relaxation comes back with binary indicators. Nodes are
//! explored best-first by lower bound, which keeps node counts reproducible
//! and proves optimality when the open list empties.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{MixedPoint, PortfolioInstance};
use crate::oracle::box_return_range;
use crate::qp::{self, QpProblem, QpStatus};

/// Indicators within this distance of {0, 1} count as integral.
pub const INTEGRALITY_TOL: f64 = 1e-6;
/// Weights below this are treated as exact zeros when reading indicators
/// off a relaxation solution.
const WEIGHT_ZERO_TOL: f64 = 1e-7;

#[derive(Debug, Clone)]
pub struct BnbNode {
    pub fixed_zero: Vec<usize>,
    pub fixed_one: Vec<usize>,
    pub lower_bound: f64,
    pub relaxation_point: MixedPoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnbStatus {
    ProvedOptimal,
    Infeasible,
    NodeLimit,
}

#[derive(Debug, Clone)]
pub struct BnbResult {
    pub best_point: Option<MixedPoint>,
    pub best_value: Option<f64>,
    /// Relaxations solved, the root included.
    pub nodes_explored: usize,
    pub status: BnbStatus,
    /// Distinct indicator variables ever branched on, ascending.
    pub branched_variables: Vec<usize>,
    pub log: Option<Vec<NodeLogEntry>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeAction {
    Branched,
    FathomedIntegral,
    PrunedBound,
    Infeasible,
    /// Left unexplored when the node limit fired.
    Abandoned,
}

impl NodeAction {
    fn name(&self) -> &'static str {
        match self {
            NodeAction::Branched => "branched",
            NodeAction::FathomedIntegral => "fathomed_integral",
            NodeAction::PrunedBound => "pruned_bound",
            NodeAction::Infeasible => "infeasible",
            NodeAction::Abandoned => "abandoned",
        }
    }
}

#[derive(Debug, Clone)]
pub struct NodeLogEntry {
    pub id: u64,
    pub parent: Option<u64>,
    /// `(variable, value)` the node was created by fixing, root excepted.
    pub branch: Option<(usize, u8)>,
    pub lower_bound: Option<f64>,
    pub incumbent_after: Option<f64>,
    pub action: NodeAction,
    pub fixed_zero: Vec<usize>,
    pub fixed_one: Vec<usize>,
}

/// Node log as CSV: `id,parent,branch_var,branch_value,lower_bound,incumbent,action`.
pub fn node_log_csv(log: &[NodeLogEntry]) -> String {
    let mut out = String::from("id,parent,branch_var,branch_value,lower_bound,incumbent,action\n");
    for e in log {
        let parent = e.parent.map(|p| p.to_string()).unwrap_or_default();
        let (bvar, bval) = e
            .branch
            .map(|(v, x)| (v.to_string(), x.to_string()))
            .unwrap_or_default();
        let bound = e.lower_bound.map(|b| b.to_string()).unwrap_or_default();
        let inc = e.incumbent_after.map(|b| b.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            e.id,
            parent,
            bvar,
            bval,
            bound,
            inc,
            e.action.name()
        ));
    }
    out
}

/// Outcome of one node relaxation.
#[derive(Debug, Clone)]
pub enum NodeRelaxation {
    Optimal {
        point: MixedPoint,
        value: f64,
    },
    Infeasible,
}

/// Solves the relaxation with the given indicator fixings. Fixed variables
/// are eliminated rather than pinned by equalities so the interior-point
/// subproblem keeps a strictly feasible region whenever one exists.
/// Feasibility itself is decided by exact box arithmetic up front.
pub fn node_relaxation(
    inst: &PortfolioInstance,
    fixed_zero: &[usize],
    fixed_one: &[usize],
) -> Result<NodeRelaxation> {
    let n = inst.n();
    for &i in fixed_zero.iter().chain(fixed_one) {
        if i >= n {
            return Err(Error::InvalidData(format!(
                "fixed index {i} out of range for {n} assets"
            )));
        }
    }
    if fixed_zero.iter().any(|i| fixed_one.contains(i)) {
        return Err(Error::InvalidData(
            "an index is fixed to both 0 and 1".into(),
        ));
    }
    let is_zero = |i: usize| fixed_zero.contains(&i);
    let is_one = |i: usize| fixed_one.contains(&i);

    let a = inst.lower_bounds();
    let b = inst.upper_bounds();
    let r = inst.mean_returns();

    // exact feasibility of the node's y-box
    let lo: Vec<f64> = (0..n)
        .map(|i| if is_one(i) { a[i] } else { 0.0 })
        .collect();
    let hi: Vec<f64> = (0..n)
        .map(|i| if is_zero(i) { 0.0 } else { b[i] })
        .collect();
    let (rmin, rmax) = match box_return_range(r, &lo, &hi) {
        Some(range) => range,
        None => return Ok(NodeRelaxation::Infeasible),
    };
    let target = inst.target_return();
    if target < rmin - 1e-9 || target > rmax + 1e-9 {
        return Ok(NodeRelaxation::Infeasible);
    }

    // reduced variables: y for every unfixed-zero asset, z only where free
    let y_vars: Vec<usize> = (0..n).filter(|&i| !is_zero(i)).collect();
    let z_vars: Vec<usize> = (0..n).filter(|&i| !is_zero(i) && !is_one(i)).collect();
    let ny = y_vars.len();
    let nz = z_vars.len();
    let d = ny + nz;

    let mut h = DMatrix::zeros(d, d);
    for (p, &i) in y_vars.iter().enumerate() {
        for (q, &j) in y_vars.iter().enumerate() {
            h[(p, q)] = inst.covariance()[(i, j)];
        }
    }
    let mut a_eq = DMatrix::zeros(2, d);
    for (p, &i) in y_vars.iter().enumerate() {
        a_eq[(0, p)] = r[i];
        a_eq[(1, p)] = 1.0;
    }
    let b_eq = DVector::from_row_slice(&[target, 1.0]);

    let free_rows = 4 * nz;
    let one_rows = 2 * (ny - nz);
    let mut a_in = DMatrix::zeros(free_rows + one_rows, d);
    let mut b_in = DVector::zeros(free_rows + one_rows);
    let mut row = 0;
    for (q, &i) in z_vars.iter().enumerate() {
        let p = y_vars.iter().position(|&j| j == i).expect("free z has y");
        let zc = ny + q;
        // a_i z_i - y_i <= 0
        a_in[(row, p)] = -1.0;
        a_in[(row, zc)] = a[i];
        row += 1;
        // y_i - b_i z_i <= 0
        a_in[(row, p)] = 1.0;
        a_in[(row, zc)] = -b[i];
        row += 1;
        // 0 <= z_i <= 1
        a_in[(row, zc)] = -1.0;
        row += 1;
        a_in[(row, zc)] = 1.0;
        b_in[row] = 1.0;
        row += 1;
    }
    for (p, &i) in y_vars.iter().enumerate() {
        if is_one(i) {
            // a_i <= y_i <= b_i
            a_in[(row, p)] = -1.0;
            b_in[row] = -a[i];
            row += 1;
            a_in[(row, p)] = 1.0;
            b_in[row] = b[i];
            row += 1;
        }
    }

    let problem = QpProblem::new(h, DVector::zeros(d), a_eq, b_eq, a_in, b_in)?;
    let sol = qp::solve_qp(&problem, 1e-8);
    match sol.status {
        QpStatus::Optimal => {
            let mut y = DVector::zeros(n);
            for (p, &i) in y_vars.iter().enumerate() {
                y[i] = sol.x[p];
            }
            let z = canonical_indicators(inst, &y, fixed_zero, fixed_one);
            Ok(NodeRelaxation::Optimal {
                point: MixedPoint::new(y, z),
                value: sol.objective,
            })
        }
        // borderline targets inside the greedy band may genuinely lack a
        // feasible point; trust the certificate there
        QpStatus::Infeasible => Ok(NodeRelaxation::Infeasible),
        QpStatus::NumericalFailure => Err(Error::Numerical(format!(
            "node relaxation (fixed_zero {fixed_zero:?}, fixed_one {fixed_one:?}) \
             did not converge"
        ))),
    }
}

/// Indicators read off a relaxation's weights. The indicator carries no
/// objective weight, so any feasible choice is optimal; this picks the
/// binary value whenever one is feasible for `y_i` (0 for zero weights, 1
/// for weights at or above the buy-in minimum) and the forced fractional
/// value `y_i / a_i` for weights strictly inside `(0, a_i)`.
fn canonical_indicators(
    inst: &PortfolioInstance,
    y: &DVector<f64>,
    fixed_zero: &[usize],
    fixed_one: &[usize],
) -> DVector<f64> {
    DVector::from_fn(inst.n(), |i, _| {
        if fixed_zero.contains(&i) {
            0.0
        } else if fixed_one.contains(&i) {
            1.0
        } else if y[i] <= WEIGHT_ZERO_TOL {
            0.0
        } else if y[i] >= inst.lower_bounds()[i] - WEIGHT_ZERO_TOL {
            1.0
        } else {
            y[i] / inst.lower_bounds()[i]
        }
    })
}

/// Index of the most fractional indicator (largest `min(z, 1-z)`), ties to
/// the smallest index; `None` when all are within [`INTEGRALITY_TOL`] of
/// {0, 1} and the caller should fathom.
pub fn select_branch_variable(point: &MixedPoint) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &zi) in point.z.iter().enumerate() {
        let frac = zi.min(1.0 - zi);
        if frac > INTEGRALITY_TOL && best.map_or(true, |(_, bf)| frac > bf) {
            best = Some((i, frac));
        }
    }
    best.map(|(i, _)| i)
}

/// Options beyond the two knobs of [`bnb_solve`].
#[derive(Debug, Clone)]
pub struct BnbOptions {
    pub gap_tol: f64,
    pub node_limit: usize,
    /// Seed the incumbent (for pruning experiments); off for the baseline.
    pub seed_incumbent: Option<(MixedPoint, f64)>,
    pub collect_log: bool,
}

impl Default for BnbOptions {
    fn default() -> Self {
        Self {
            gap_tol: 1e-9,
            node_limit: 1_000_000,
            seed_incumbent: None,
            collect_log: false,
        }
    }
}

pub fn bnb_solve(inst: &PortfolioInstance, gap_tol: f64, node_limit: usize) -> Result<BnbResult> {
    bnb_solve_with(
        inst,
        &BnbOptions {
            gap_tol,
            node_limit,
            ..BnbOptions::default()
        },
    )
}

struct OpenNode {
    bound: f64,
    id: u64,
    node: BnbNode,
}

impl PartialEq for OpenNode {
    fn eq(&self, other: &Self) -> bool {
        self.bound == other.bound && self.id == other.id
    }
}
impl Eq for OpenNode {}
impl PartialOrd for OpenNode {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for OpenNode {
    // reversed: BinaryHeap is a max-heap, we pop the smallest bound
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then(other.id.cmp(&self.id))
    }
}

pub fn bnb_solve_with(inst: &PortfolioInstance, opts: &BnbOptions) -> Result<BnbResult> {
    if !(opts.gap_tol >= 0.0) || opts.node_limit == 0 {
        return Err(Error::InvalidData(
            "gap_tol must be nonnegative and node_limit positive".into(),
        ));
    }
    let mut log: Vec<NodeLogEntry> = Vec::new();
    let mut incumbent: Option<(MixedPoint, f64)> = opts.seed_incumbent.clone();
    let mut heap: BinaryHeap<OpenNode> = BinaryHeap::new();
    let mut explored = 0usize;
    let mut next_id = 0u64;
    let mut branched: Vec<usize> = Vec::new();
    let mut hit_limit = false;

    // evaluates a node and either fathoms it (incumbent / infeasible /
    // bound-dominated) or queues it for branching
    let mut process = |fixed_zero: Vec<usize>,
                       fixed_one: Vec<usize>,
                       parent: Option<u64>,
                       branch: Option<(usize, u8)>,
                       explored: &mut usize,
                       incumbent: &mut Option<(MixedPoint, f64)>,
                       heap: &mut BinaryHeap<OpenNode>,
                       log: &mut Vec<NodeLogEntry>|
     -> Result<()> {
        let id = next_id;
        next_id += 1;
        *explored += 1;
        let mut entry = NodeLogEntry {
            id,
            parent,
            branch,
            lower_bound: None,
            incumbent_after: incumbent.as_ref().map(|(_, v)| *v),
            action: NodeAction::Infeasible,
            fixed_zero: fixed_zero.clone(),
            fixed_one: fixed_one.clone(),
        };
        match node_relaxation(inst, &fixed_zero, &fixed_one)? {
            NodeRelaxation::Infeasible => {
                entry.action = NodeAction::Infeasible;
            }
            NodeRelaxation::Optimal { point, value } => {
                entry.lower_bound = Some(value);
                let dominated = incumbent
                    .as_ref()
                    .is_some_and(|(_, inc)| value >= inc - opts.gap_tol);
                if dominated {
                    entry.action = NodeAction::PrunedBound;
                } else if point.binary_distance() <= INTEGRALITY_TOL {
                    *incumbent = Some((point, value));
                    entry.action = NodeAction::FathomedIntegral;
                } else {
                    entry.action = NodeAction::Branched;
                    heap.push(OpenNode {
                        bound: value,
                        id,
                        node: BnbNode {
                            fixed_zero,
                            fixed_one,
                            lower_bound: value,
                            relaxation_point: point,
                        },
                    });
                }
            }
        }
        entry.incumbent_after = incumbent.as_ref().map(|(_, v)| *v);
        if opts.collect_log {
            log.push(entry);
        }
        Ok(())
    };

    process(
        Vec::new(),
        Vec::new(),
        None,
        None,
        &mut explored,
        &mut incumbent,
        &mut heap,
        &mut log,
    )?;

    while let Some(OpenNode { bound, id, node }) = heap.pop() {
        if incumbent
            .as_ref()
            .is_some_and(|(_, inc)| bound >= inc - opts.gap_tol)
        {
            // best-first order: every remaining node is dominated too
            if opts.collect_log {
                log.push(NodeLogEntry {
                    id,
                    parent: None,
                    branch: None,
                    lower_bound: Some(bound),
                    incumbent_after: incumbent.as_ref().map(|(_, v)| *v),
                    action: NodeAction::PrunedBound,
                    fixed_zero: node.fixed_zero.clone(),
                    fixed_one: node.fixed_one.clone(),
                });
                while let Some(open) = heap.pop() {
                    log.push(NodeLogEntry {
                        id: open.id,
                        parent: None,
                        branch: None,
                        lower_bound: Some(open.bound),
                        incumbent_after: incumbent.as_ref().map(|(_, v)| *v),
                        action: NodeAction::PrunedBound,
                        fixed_zero: open.node.fixed_zero.clone(),
                        fixed_one: open.node.fixed_one.clone(),
                    });
                }
            }
            break;
        }
        if explored >= opts.node_limit {
            hit_limit = true;
            if opts.collect_log {
                log.push(NodeLogEntry {
                    id,
                    parent: None,
                    branch: None,
                    lower_bound: Some(bound),
                    incumbent_after: incumbent.as_ref().map(|(_, v)| *v),
                    action: NodeAction::Abandoned,
                    fixed_zero: node.fixed_zero.clone(),
                    fixed_one: node.fixed_one.clone(),
                });
            }
            break;
        }
        let var = match select_branch_variable(&node.relaxation_point) {
            Some(v) => v,
            // queued nodes are always fractional; defensive fathom
            None => continue,
        };
        if !branched.contains(&var) {
            branched.push(var);
        }
        let mut zero_child = node.fixed_zero.clone();
        zero_child.push(var);
        process(
            zero_child,
            node.fixed_one.clone(),
            Some(id),
            Some((var, 0)),
            &mut explored,
            &mut incumbent,
            &mut heap,
            &mut log,
        )?;
        let mut one_child = node.fixed_one.clone();
        one_child.push(var);
        process(
            node.fixed_zero.clone(),
            one_child,
            Some(id),
            Some((var, 1)),
            &mut explored,
            &mut incumbent,
            &mut heap,
            &mut log,
        )?;
    }

    let status = if hit_limit {
        BnbStatus::NodeLimit
    } else if incumbent.is_some() {
        BnbStatus::ProvedOptimal
    } else {
        BnbStatus::Infeasible
    };
    branched.sort_unstable();
    let (best_point, best_value) = match incumbent {
        Some((p, v)) => (Some(p), Some(v)),
        None => (None, None),
    };
    Ok(BnbResult {
        best_point,
        best_value,
        nodes_explored: explored,
        status,
        branched_variables: branched,
        log: opts.collect_log.then_some(log),
    })
}
