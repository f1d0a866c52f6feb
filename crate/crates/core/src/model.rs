//! The portfolio selection model with buy-in thresholds.
//!
//! A portfolio `y` must satisfy `sum_i r_i y_i = R`, `sum_i y_i = 1`, and
//! each weight is either exactly zero or inside `[a_i, b_i]`. Selection
//! indicators `z_i` linearize the either/or constraint: `a_i z_i <= y_i <=
//! b_i z_i` with `z_i` binary. Relaxing `z` to `[0, 1]` yields the convex
//! polytope [`Polytope`]; the binary requirement is equivalently `p(z) = 0`
//! for the concave penalty `p(z) = sum_i z_i (1 - z_i)`, which the penalized
//! objective `y'Qy + t p(z)` drives to zero for large enough `t`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{check_covariance, AssetStatistics};
use crate::qp::{self, QpProblem, QpStatus};

/// Default absolute per-row feasibility tolerance for classification.
pub const DEFAULT_FEASIBILITY_TOL: f64 = 1e-6;
/// Indicator values may sit outside [0, 1] by at most this much when
/// evaluating the penalty (subproblem solutions overshoot by solver
/// tolerance).
pub const PENALTY_DOMAIN_SLACK: f64 = 1e-6;

/// The full problem datum: asset statistics, target return, and per-asset
/// buy-in bounds. Immutable once constructed.
#[derive(Debug, Clone)]
pub struct PortfolioInstance {
    mean_returns: DVector<f64>,
    covariance: DMatrix<f64>,
    target_return: f64,
    lower: DVector<f64>,
    upper: DVector<f64>,
    seed: Option<u64>,
}

impl PortfolioInstance {
    pub fn new(
        mean_returns: DVector<f64>,
        covariance: DMatrix<f64>,
        target_return: f64,
        lower: DVector<f64>,
        upper: DVector<f64>,
    ) -> Result<Self> {
        let n = mean_returns.len();
        if n == 0 {
            return Err(Error::InvalidData("instance has no assets".into()));
        }
        if covariance.nrows() != n || covariance.ncols() != n {
            return Err(Error::Dimension(format!(
                "covariance is {}x{} for {} assets",
                covariance.nrows(),
                covariance.ncols(),
                n
            )));
        }
        if lower.len() != n || upper.len() != n {
            return Err(Error::Dimension(format!(
                "bounds have lengths {}/{} for {} assets",
                lower.len(),
                upper.len(),
                n
            )));
        }
        if !target_return.is_finite()
            || mean_returns.iter().any(|v| !v.is_finite())
            || lower.iter().any(|v| !v.is_finite())
            || upper.iter().any(|v| !v.is_finite())
        {
            return Err(Error::InvalidData("non-finite instance datum".into()));
        }
        for i in 0..n {
            if !(lower[i] > 0.0 && lower[i] <= upper[i] && upper[i] <= 1.0) {
                return Err(Error::InvalidData(format!(
                    "bounds for asset {} must satisfy 0 < a <= b <= 1, got a={} b={}",
                    i + 1,
                    lower[i],
                    upper[i]
                )));
            }
        }
        check_covariance(&covariance)?;
        Ok(Self {
            mean_returns,
            covariance,
            target_return,
            lower,
            upper,
            seed: None,
        })
    }

    pub fn from_statistics(
        stats: &AssetStatistics,
        target_return: f64,
        lower: DVector<f64>,
        upper: DVector<f64>,
    ) -> Result<Self> {
        Self::new(
            stats.mean_returns().clone(),
            stats.covariance().clone(),
            target_return,
            lower,
            upper,
        )
    }

    pub fn n(&self) -> usize {
        self.mean_returns.len()
    }

    pub fn mean_returns(&self) -> &DVector<f64> {
        &self.mean_returns
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn target_return(&self) -> f64 {
        self.target_return
    }

    pub fn lower_bounds(&self) -> &DVector<f64> {
        &self.lower
    }

    pub fn upper_bounds(&self) -> &DVector<f64> {
        &self.upper
    }

    /// Generator seed recorded for provenance, if any.
    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    /// The same instance with a different target return.
    pub fn with_target_return(&self, target_return: f64) -> Result<Self> {
        let mut inst = Self::new(
            self.mean_returns.clone(),
            self.covariance.clone(),
            target_return,
            self.lower.clone(),
            self.upper.clone(),
        )?;
        inst.seed = self.seed;
        Ok(inst)
    }

    /// Portfolio risk `y' Q y`.
    pub fn variance(&self, y: &DVector<f64>) -> f64 {
        (y.transpose() * &self.covariance * y)[(0, 0)]
    }

    /// `y' Q y + t * p(z)`.
    pub fn penalized_objective(&self, pt: &MixedPoint, t: f64) -> Result<f64> {
        if t < 0.0 {
            return Err(Error::InvalidData(format!("penalty weight t={t} < 0")));
        }
        Ok(self.variance(&pt.y) + t * binary_penalty(&pt.z)?)
    }

    pub fn polytope(&self) -> Polytope {
        Polytope::build(self)
    }

    /// Classifies a point against the mixed 0-1 model at tolerance `tol`.
    pub fn classify(&self, pt: &MixedPoint, tol: f64) -> Feasibility {
        let poly = self.polytope();
        if !poly.contains(pt, tol) {
            return Feasibility::Infeasible;
        }
        if pt.binary_distance() <= tol {
            Feasibility::MiqpFeasible
        } else {
            Feasibility::RelaxedFeasible
        }
    }
}

/// A candidate `(y, z)` pair: portfolio weights plus selection indicators.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedPoint {
    pub y: DVector<f64>,
    pub z: DVector<f64>,
}

impl MixedPoint {
    pub fn new(y: DVector<f64>, z: DVector<f64>) -> Self {
        Self { y, z }
    }

    /// Largest distance of any indicator from {0, 1}.
    pub fn binary_distance(&self) -> f64 {
        self.z
            .iter()
            .fold(0.0_f64, |m, &zi| m.max(zi.min(1.0 - zi)))
    }
}

/// Feasibility classification of a [`MixedPoint`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Feasibility {
    /// In the polytope with binary indicators: feasible for the 0-1 model.
    MiqpFeasible,
    /// In the polytope but with fractional indicators.
    RelaxedFeasible,
    Infeasible,
}

/// Explicit linear constraint system over `x = (y, z)` in `R^{2n}`:
/// two equality rows (target return, budget), `2n` coupling rows
/// `a_i z_i - y_i <= 0` and `y_i - b_i z_i <= 0`, and `2n` box rows
/// `0 <= z_i <= 1`. `y >= 0` is implied by the coupling rows.
#[derive(Debug, Clone)]
pub struct Polytope {
    n: usize,
    a_eq: DMatrix<f64>,
    b_eq: DVector<f64>,
    a_in: DMatrix<f64>,
    b_in: DVector<f64>,
}

impl Polytope {
    fn build(inst: &PortfolioInstance) -> Self {
        let n = inst.n();
        let d = 2 * n;
        let mut a_eq = DMatrix::zeros(2, d);
        for i in 0..n {
            a_eq[(0, i)] = inst.mean_returns[i];
            a_eq[(1, i)] = 1.0;
        }
        let b_eq = DVector::from_row_slice(&[inst.target_return, 1.0]);

        let mut a_in = DMatrix::zeros(4 * n, d);
        let mut b_in = DVector::zeros(4 * n);
        for i in 0..n {
            // coupling: a_i z_i - y_i <= 0 and y_i - b_i z_i <= 0
            a_in[(2 * i, i)] = -1.0;
            a_in[(2 * i, n + i)] = inst.lower[i];
            a_in[(2 * i + 1, i)] = 1.0;
            a_in[(2 * i + 1, n + i)] = -inst.upper[i];
            // box: -z_i <= 0 and z_i <= 1
            a_in[(2 * n + 2 * i, n + i)] = -1.0;
            a_in[(2 * n + 2 * i + 1, n + i)] = 1.0;
            b_in[2 * n + 2 * i + 1] = 1.0;
        }
        Self {
            n,
            a_eq,
            b_eq,
            a_in,
            b_in,
        }
    }

    pub fn num_assets(&self) -> usize {
        self.n
    }

    pub fn num_equalities(&self) -> usize {
        self.a_eq.nrows()
    }

    pub fn num_coupling(&self) -> usize {
        2 * self.n
    }

    pub fn num_box(&self) -> usize {
        2 * self.n
    }

    pub fn a_eq(&self) -> &DMatrix<f64> {
        &self.a_eq
    }

    pub fn b_eq(&self) -> &DVector<f64> {
        &self.b_eq
    }

    pub fn a_in(&self) -> &DMatrix<f64> {
        &self.a_in
    }

    pub fn b_in(&self) -> &DVector<f64> {
        &self.b_in
    }

    /// Worst constraint violation: `max` of equality residual magnitudes and
    /// positive inequality residuals.
    pub fn max_violation(&self, pt: &MixedPoint) -> f64 {
        let x = stack(&pt.y, &pt.z);
        let mut worst: f64 = 0.0;
        let re = &self.a_eq * &x - &self.b_eq;
        for v in re.iter() {
            worst = worst.max(v.abs());
        }
        let ri = &self.a_in * &x - &self.b_in;
        for v in ri.iter() {
            worst = worst.max(*v);
        }
        worst
    }

    /// Membership within an absolute per-row tolerance.
    pub fn contains(&self, pt: &MixedPoint, tol: f64) -> bool {
        pt.y.len() == self.n && pt.z.len() == self.n && self.max_violation(pt) <= tol
    }
}

/// Concatenates `(y, z)` into the polytope's variable vector.
pub fn stack(y: &DVector<f64>, z: &DVector<f64>) -> DVector<f64> {
    let mut x = DVector::zeros(y.len() + z.len());
    x.rows_mut(0, y.len()).copy_from(y);
    x.rows_mut(y.len(), z.len()).copy_from(z);
    x
}

/// Splits a polytope variable vector back into `(y, z)`.
pub fn unstack(x: &DVector<f64>, n: usize) -> MixedPoint {
    MixedPoint::new(x.rows(0, n).into_owned(), x.rows(n, n).into_owned())
}

/// `sum_i z_i (1 - z_i)`: nonnegative on the unit box, zero exactly at
/// binary points. Components may stray outside [0, 1] by
/// [`PENALTY_DOMAIN_SLACK`]; further out is a domain error.
pub fn binary_penalty(z: &DVector<f64>) -> Result<f64> {
    for (i, &zi) in z.iter().enumerate() {
        if !((-PENALTY_DOMAIN_SLACK..=1.0 + PENALTY_DOMAIN_SLACK).contains(&zi)) {
            return Err(Error::InvalidData(format!(
                "indicator {} = {} outside [0, 1]",
                i + 1,
                zi
            )));
        }
    }
    Ok(z.iter().map(|&zi| zi * (1.0 - zi)).sum())
}

/// The achievable range of expected returns over the relaxed feasible set
/// (the polytope with the target-return row dropped), via two linear
/// programs. Used to reject unreachable targets before solving.
pub fn return_range(inst: &PortfolioInstance) -> Result<(f64, f64)> {
    let poly = inst.polytope();
    let d = 2 * inst.n();
    // budget row only
    let a_eq = poly.a_eq.rows(1, 1).into_owned();
    let b_eq = DVector::from_element(1, 1.0);
    let mut lo_c = DVector::zeros(d);
    for i in 0..inst.n() {
        lo_c[i] = inst.mean_returns[i];
    }
    let hi_c = -&lo_c;

    let mut endpoints = [0.0_f64; 2];
    for (k, c) in [lo_c, hi_c].into_iter().enumerate() {
        let lp = QpProblem::new(
            DMatrix::zeros(d, d),
            c,
            a_eq.clone(),
            b_eq.clone(),
            poly.a_in.clone(),
            poly.b_in.clone(),
        )?;
        let sol = qp::solve_qp(&lp, 1e-8);
        match sol.status {
            QpStatus::Optimal => {
                endpoints[k] = if k == 0 { sol.objective } else { -sol.objective }
            }
            QpStatus::Infeasible => {
                return Err(Error::Infeasible(
                    "no portfolio satisfies the budget and bounds".into(),
                ))
            }
            QpStatus::NumericalFailure => {
                return Err(Error::Numerical(
                    "return-range linear program did not converge".into(),
                ))
            }
        }
    }
    Ok((endpoints[0], endpoints[1]))
}

/// Rejects a target return outside the achievable range with a diagnostic.
pub fn check_target_reachable(inst: &PortfolioInstance) -> Result<(f64, f64)> {
    let (lo, hi) = return_range(inst)?;
    let r = inst.target_return();
    if r < lo - 1e-8 || r > hi + 1e-8 {
        return Err(Error::Infeasible(format!(
            "target return {r} outside the achievable range [{lo:.6e}, {hi:.6e}]"
        )));
    }
    Ok((lo, hi))
}

/// Scalar-or-vector field in instance files; scalars broadcast to all assets.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScalarOrVec {
    Scalar(f64),
    Vec(Vec<f64>),
}

impl ScalarOrVec {
    pub fn broadcast(&self, n: usize) -> Result<DVector<f64>> {
        match self {
            ScalarOrVec::Scalar(v) => Ok(DVector::from_element(n, *v)),
            ScalarOrVec::Vec(vs) => {
                if vs.len() != n {
                    return Err(Error::Dimension(format!(
                        "bound vector has {} entries for {} assets",
                        vs.len(),
                        n
                    )));
                }
                Ok(DVector::from_vec(vs.clone()))
            }
        }
    }
}

/// On-disk instance schema: inline statistics (`r`, `Q`) or a reference to
/// a statistics file, plus the target return and buy-in bounds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceFile {
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<Vec<f64>>,
    #[serde(rename = "Q", default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<Vec<f64>>>,
    /// Path to a statistics JSON file, relative to this instance file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stats: Option<String>,
    #[serde(rename = "R")]
    pub target_return: f64,
    pub a: ScalarOrVec,
    pub b: ScalarOrVec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl PortfolioInstance {
    pub fn from_instance_file(file: &InstanceFile, base_dir: Option<&Path>) -> Result<Self> {
        let (r, q) = match (&file.r, &file.q, &file.stats) {
            (Some(r), Some(q), None) => {
                if r.len() != file.n || q.len() != file.n || q.iter().any(|row| row.len() != file.n)
                {
                    return Err(Error::Dimension(
                        "instance r/Q dimensions disagree with n".into(),
                    ));
                }
                (
                    DVector::from_vec(r.clone()),
                    DMatrix::from_fn(file.n, file.n, |i, j| q[i][j]),
                )
            }
            (None, None, Some(stats_path)) => {
                let path = match base_dir {
                    Some(dir) => dir.join(stats_path),
                    None => Path::new(stats_path).to_path_buf(),
                };
                let stats = AssetStatistics::load(&path)?;
                if stats.num_assets() != file.n {
                    return Err(Error::Dimension(format!(
                        "statistics file has {} assets, instance claims {}",
                        stats.num_assets(),
                        file.n
                    )));
                }
                (stats.mean_returns().clone(), stats.covariance().clone())
            }
            _ => {
                return Err(Error::InvalidData(
                    "instance must carry either inline r and Q or a stats reference".into(),
                ))
            }
        };
        let lower = file.a.broadcast(file.n)?;
        let upper = file.b.broadcast(file.n)?;
        let mut inst = Self::new(r, q, file.target_return, lower, upper)?;
        inst.seed = file.seed;
        Ok(inst)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: InstanceFile = serde_json::from_str(&text)
            .map_err(|e| Error::Parse(format!("instance file {}: {e}", path.display())))?;
        Self::from_instance_file(&file, path.parent())
    }

    pub fn to_instance_file(&self) -> InstanceFile {
        InstanceFile {
            n: self.n(),
            r: Some(self.mean_returns.iter().copied().collect()),
            q: Some(
                (0..self.n())
                    .map(|i| self.covariance.row(i).iter().copied().collect())
                    .collect(),
            ),
            stats: None,
            target_return: self.target_return,
            a: ScalarOrVec::Vec(self.lower.iter().copied().collect()),
            b: ScalarOrVec::Vec(self.upper.iter().copied().collect()),
            seed: self.seed,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_instance_file())?;
        std::fs::write(path, text)?;
        Ok(())
    }
}
