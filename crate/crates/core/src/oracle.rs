//! Brute-force ground truth for small instances.
//!
//! Enumerates every nonempty support (set of held assets), solves the convex
//! QP restricted to that support, and takes the best. Deliberately naive:
//! each support is an independent QP, so the result shares no search logic
//! with the branch-and-bound path it is used to audit.
//!
//! Also hosts the seeded random-instance generator used by the test corpus.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{MixedPoint, PortfolioInstance};
use crate::qp::{self, QpProblem, QpStatus};

/// Largest `n` accepted for full enumeration (2^n supports).
pub const DEFAULT_SUPPORT_LIMIT: usize = 20;

/// Values closer than this tie and fall back to the indicator order.
pub const VALUE_TIE_TOL: f64 = 1e-12;

/// Slack on the greedy feasibility checks. The greedy endpoints are exact
/// up to rounding in the sums; targets within this band of an endpoint go
/// to the QP rather than being rejected arithmetically.
pub(crate) const FEASIBILITY_BAND: f64 = 1e-9;

/// The best portfolio found by enumeration.
#[derive(Debug, Clone)]
pub struct OracleSolution {
    pub y: DVector<f64>,
    pub z: DVector<f64>,
    pub value: f64,
    pub support: Vec<usize>,
}

impl OracleSolution {
    pub fn point(&self) -> MixedPoint {
        MixedPoint::new(self.y.clone(), self.z.clone())
    }
}

/// Exact achievable-return interval of `{sum y = 1, lo <= y <= hi}` by the
/// greedy (continuous-knapsack) argument, or `None` when the box cannot meet
/// the budget. Decides feasibility with plain arithmetic, independent of
/// any QP solve.
pub(crate) fn box_return_range(r: &DVector<f64>, lo: &[f64], hi: &[f64]) -> Option<(f64, f64)> {
    let n = r.len();
    let lo_sum: f64 = lo.iter().sum();
    let hi_sum: f64 = hi.iter().sum();
    if lo_sum > 1.0 + FEASIBILITY_BAND || hi_sum < 1.0 - FEASIBILITY_BAND {
        return None;
    }
    let base: f64 = (0..n).map(|i| lo[i] * r[i]).sum();
    let budget = (1.0 - lo_sum).max(0.0);

    let spread = |ascending: bool| -> f64 {
        let mut order: Vec<usize> = (0..n).filter(|&i| hi[i] > lo[i]).collect();
        order.sort_by(|&i, &j| {
            let c = r[i].total_cmp(&r[j]).then(i.cmp(&j));
            if ascending {
                c
            } else {
                c.reverse()
            }
        });
        let mut left = budget;
        let mut acc = base;
        for i in order {
            let take = (hi[i] - lo[i]).min(left);
            acc += take * r[i];
            left -= take;
            if left <= 0.0 {
                break;
            }
        }
        acc
    };
    Some((spread(true), spread(false)))
}

/// Minimizes `y' Q y` with weights restricted to `support`: budget and
/// target-return equalities, `a_i <= y_i <= b_i` on the support, `y_i = 0`
/// elsewhere. `Ok(None)` means the support admits no feasible portfolio.
pub fn fixed_support_qp(
    inst: &PortfolioInstance,
    support: &[usize],
) -> Result<Option<(DVector<f64>, f64)>> {
    let n = inst.n();
    let mut support: Vec<usize> = support.to_vec();
    support.sort_unstable();
    support.dedup();
    if support.iter().any(|&i| i >= n) {
        return Err(Error::InvalidData(format!(
            "support index out of range for {n} assets"
        )));
    }
    if support.is_empty() {
        return Ok(None);
    }
    let a = inst.lower_bounds();
    let b = inst.upper_bounds();
    let r = inst.mean_returns();
    let target = inst.target_return();

    let in_support = |i: usize| support.binary_search(&i).is_ok();
    let lo: Vec<f64> = (0..n).map(|i| if in_support(i) { a[i] } else { 0.0 }).collect();
    let hi: Vec<f64> = (0..n).map(|i| if in_support(i) { b[i] } else { 0.0 }).collect();
    let (rmin, rmax) = match box_return_range(r, &lo, &hi) {
        Some(range) => range,
        None => return Ok(None),
    };
    if target < rmin - FEASIBILITY_BAND || target > rmax + FEASIBILITY_BAND {
        return Ok(None);
    }

    let k = support.len();
    if k == 1 {
        // fully determined: the single asset carries the whole budget
        let i = support[0];
        let mut y = DVector::zeros(n);
        y[i] = 1.0;
        return Ok(Some((y, inst.covariance()[(i, i)])));
    }

    let h = DMatrix::from_fn(k, k, |p, q| inst.covariance()[(support[p], support[q])]);
    let mut a_eq = DMatrix::zeros(2, k);
    for (p, &i) in support.iter().enumerate() {
        a_eq[(0, p)] = r[i];
        a_eq[(1, p)] = 1.0;
    }
    let b_eq = DVector::from_row_slice(&[target, 1.0]);
    let mut a_in = DMatrix::zeros(2 * k, k);
    let mut b_in = DVector::zeros(2 * k);
    for (p, &i) in support.iter().enumerate() {
        a_in[(2 * p, p)] = -1.0;
        b_in[2 * p] = -a[i];
        a_in[(2 * p + 1, p)] = 1.0;
        b_in[2 * p + 1] = b[i];
    }
    let problem = QpProblem::new(h, DVector::zeros(k), a_eq, b_eq, a_in, b_in)?;
    let sol = qp::solve_qp(&problem, 1e-8);
    match sol.status {
        QpStatus::Optimal => {
            let mut y = DVector::zeros(n);
            for (p, &i) in support.iter().enumerate() {
                y[i] = sol.x[p];
            }
            Ok(Some((y, sol.objective)))
        }
        // borderline targets inside the greedy band may genuinely lack a
        // feasible point; trust the certificate there
        QpStatus::Infeasible => Ok(None),
        QpStatus::NumericalFailure => Err(Error::Numerical(format!(
            "fixed-support QP on {support:?} did not converge"
        ))),
    }
}

/// Enumerates all nonempty supports and returns the global minimizer, or
/// `Ok(None)` when no support is feasible. Ties in value (within
/// [`VALUE_TIE_TOL`]) go to the lexicographically smallest indicator vector.
pub fn brute_force(
    inst: &PortfolioInstance,
    support_limit: usize,
) -> Result<Option<OracleSolution>> {
    let n = inst.n();
    if n > support_limit {
        return Err(Error::InvalidData(format!(
            "brute force refused: n={n} exceeds the enumeration limit {support_limit}"
        )));
    }
    let outcomes: Vec<Option<(u64, DVector<f64>, f64)>> = (1u64..(1u64 << n))
        .into_par_iter()
        .map(|mask| {
            let support: Vec<usize> = (0..n).filter(|&i| mask >> i & 1 == 1).collect();
            fixed_support_qp(inst, &support).map(|opt| opt.map(|(y, value)| (mask, y, value)))
        })
        .collect::<Result<Vec<_>>>()?;

    // sequential scan in mask order keeps tie-breaking deterministic
    let mut best: Option<(u64, DVector<f64>, f64)> = None;
    for cand in outcomes.into_iter().flatten() {
        best = match best {
            None => Some(cand),
            Some(cur) => {
                if cand.2 < cur.2 - VALUE_TIE_TOL {
                    Some(cand)
                } else if cand.2 <= cur.2 + VALUE_TIE_TOL && lex_less(cand.0, cur.0, n) {
                    Some(cand)
                } else {
                    Some(cur)
                }
            }
        };
    }
    Ok(best.map(|(mask, y, value)| OracleSolution {
        y,
        z: DVector::from_fn(n, |i, _| (mask >> i & 1) as f64),
        value,
        support: (0..n).filter(|&i| mask >> i & 1 == 1).collect(),
    }))
}

/// Lexicographic order on indicator vectors `(z_1, ..., z_n)`.
fn lex_less(mask_a: u64, mask_b: u64, n: usize) -> bool {
    for i in 0..n {
        let za = mask_a >> i & 1;
        let zb = mask_b >> i & 1;
        if za != zb {
            return za < zb;
        }
    }
    false
}

/// Seeded random instance for tests and benchmarks: a factor-model
/// covariance `FF'/cols + 1e-6 I`, mean returns uniform in
/// `[-0.005, 0.01]`, buy-in bounds `a = 0.05`, `b = 1.0`, and a target
/// return realized by a randomly drawn feasible portfolio (so the instance
/// is feasible by construction).
pub fn random_instance(n: usize, seed: u64) -> Result<PortfolioInstance> {
    if n == 0 {
        return Err(Error::InvalidData("n must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cols = (n / 2).max(2);
    let f = DMatrix::from_fn(n, cols, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut q = &f * f.transpose() / cols as f64;
    for i in 0..n {
        q[(i, i)] += 1e-6;
    }
    q = (&q + q.transpose()) * 0.5;
    let r = DVector::from_fn(n, |_, _| rng.random_range(-0.005..0.01));

    let lower = DVector::from_element(n, 0.05);
    let upper = DVector::from_element(n, 1.0);

    let mut support: Vec<usize> = (0..n).filter(|_| rng.random_bool(0.5)).collect();
    if support.is_empty() {
        support.push(rng.random_range(0..n));
    }
    let weights: Vec<f64> = support.iter().map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let wsum: f64 = weights.iter().sum();
    let extra = 1.0 - 0.05 * support.len() as f64;
    let mut y = DVector::zeros(n);
    for (k, &i) in support.iter().enumerate() {
        y[i] = 0.05 + extra * weights[k] / wsum;
    }
    let target = r.dot(&y);

    Ok(PortfolioInstance::new(r, q, target, lower, upper)?.with_seed(seed))
}
