//! Dense convex quadratic programming.
//!
//! Solves problems of the form
//!
//! ```text
//!     minimize    x' H x + c' x
//!     subject to  A_eq x  = b_eq
//!                 A_in x <= b_in
//! ```
//!
//! with `H` symmetric positive semidefinite. Note the quadratic term is
//! *not* halved; callers that think in `1/2 x'Qx` terms must scale.
//!
//! The engine is a primal-dual interior-point method with Mehrotra-style
//! predictor-corrector steps. Equality constraints are kept in the KKT
//! system rather than eliminated, the augmented system carries a static
//! regularization on both diagonal blocks, and a final active-set polish
//! refines the iterate to tight KKT residuals. Infeasible problems are
//! reported together with a Farkas-type dual ray.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};

/// Default iteration cap for the interior-point loop.
pub const DEFAULT_MAX_ITER: usize = 200;

/// Static regularization added to the augmented KKT system
/// (`+delta` on the primal block, `-delta` on the dual block).
pub const KKT_REGULARIZATION: f64 = 1e-10;

const SYMMETRY_TOL: f64 = 1e-12;

/// A convex quadratic program over linear constraints.
#[derive(Debug, Clone)]
pub struct QpProblem {
    h: DMatrix<f64>,
    c: DVector<f64>,
    a_eq: DMatrix<f64>,
    b_eq: DVector<f64>,
    a_in: DMatrix<f64>,
    b_in: DVector<f64>,
}

impl QpProblem {
    /// Builds a problem, checking dimensional consistency and symmetry of `H`
    /// (within 1e-12). Positive semidefiniteness is the caller's contract;
    /// use [`QpProblem::min_h_eigenvalue`] to audit it where `H` originates.
    pub fn new(
        h: DMatrix<f64>,
        c: DVector<f64>,
        a_eq: DMatrix<f64>,
        b_eq: DVector<f64>,
        a_in: DMatrix<f64>,
        b_in: DVector<f64>,
    ) -> Result<Self> {
        let d = c.len();
        if h.nrows() != d || h.ncols() != d {
            return Err(Error::Dimension(format!(
                "H is {}x{}, expected {}x{}",
                h.nrows(),
                h.ncols(),
                d,
                d
            )));
        }
        if a_eq.nrows() != b_eq.len() || (a_eq.nrows() > 0 && a_eq.ncols() != d) {
            return Err(Error::Dimension(format!(
                "equality block is {}x{} with rhs {}",
                a_eq.nrows(),
                a_eq.ncols(),
                b_eq.len()
            )));
        }
        if a_in.nrows() != b_in.len() || (a_in.nrows() > 0 && a_in.ncols() != d) {
            return Err(Error::Dimension(format!(
                "inequality block is {}x{} with rhs {}",
                a_in.nrows(),
                a_in.ncols(),
                b_in.len()
            )));
        }
        let mut asym: f64 = 0.0;
        for i in 0..d {
            for j in (i + 1)..d {
                asym = asym.max((h[(i, j)] - h[(j, i)]).abs());
            }
        }
        if asym > SYMMETRY_TOL {
            return Err(Error::InvalidData(format!(
                "H is not symmetric: max |H - H'| = {asym:.3e}"
            )));
        }
        let all = h
            .iter()
            .chain(c.iter())
            .chain(a_eq.iter())
            .chain(b_eq.iter())
            .chain(a_in.iter())
            .chain(b_in.iter());
        for v in all {
            if !v.is_finite() {
                return Err(Error::InvalidData("non-finite problem datum".into()));
            }
        }
        Ok(Self {
            h,
            c,
            a_eq,
            b_eq,
            a_in,
            b_in,
        })
    }

    pub fn dim(&self) -> usize {
        self.c.len()
    }

    pub fn num_eq(&self) -> usize {
        self.a_eq.nrows()
    }

    pub fn num_ineq(&self) -> usize {
        self.a_in.nrows()
    }

    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn c(&self) -> &DVector<f64> {
        &self.c
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

    /// `x' H x + c' x`.
    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        (x.transpose() * &self.h * x)[(0, 0)] + self.c.dot(x)
    }

    /// Smallest eigenvalue of `H`, for auditing the PSD contract.
    pub fn min_h_eigenvalue(&self) -> f64 {
        if self.dim() == 0 {
            return 0.0;
        }
        let sym = (&self.h + self.h.transpose()) * 0.5;
        sym.symmetric_eigenvalues().min()
    }

    /// JSON dump of the full problem datum for reproduction reports.
    pub fn dump_json(&self) -> String {
        #[derive(Serialize)]
        struct Dump {
            dim: usize,
            h: Vec<Vec<f64>>,
            c: Vec<f64>,
            a_eq: Vec<Vec<f64>>,
            b_eq: Vec<f64>,
            a_in: Vec<Vec<f64>>,
            b_in: Vec<f64>,
        }
        let rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
            (0..m.nrows())
                .map(|i| m.row(i).iter().copied().collect())
                .collect()
        };
        let dump = Dump {
            dim: self.dim(),
            h: rows(&self.h),
            c: self.c.iter().copied().collect(),
            a_eq: rows(&self.a_eq),
            b_eq: self.b_eq.iter().copied().collect(),
            a_in: rows(&self.a_in),
            b_in: self.b_in.iter().copied().collect(),
        };
        serde_json::to_string_pretty(&dump).expect("plain floats serialize")
    }
}

/// Outcome classification of a QP solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    NumericalFailure,
}

/// Independently checkable optimality residuals.
#[derive(Debug, Clone, Copy)]
pub struct KktResiduals {
    /// `||2Hx + c + A_eq' lam + A_in' mu||_inf`
    pub stationarity: f64,
    /// worst equality violation and positive inequality violation
    pub primal: f64,
    /// `max_i |mu_i (b_in - A_in x)_i|`
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal).max(self.complementarity)
    }
}

/// Farkas-type certificate for an infeasible constraint system: a dual ray
/// `(lam, mu)` with `mu >= 0`, `A_eq' lam + A_in' mu ~ 0` and
/// `b_eq' lam + b_in' mu < 0`.
#[derive(Debug, Clone)]
pub struct InfeasibilityCertificate {
    pub eq_ray: DVector<f64>,
    pub ineq_ray: DVector<f64>,
    /// `-(b_eq' lam + b_in' mu)`; certified infeasible when well above zero.
    pub violation: f64,
    /// `||A_eq' lam + A_in' mu||_inf` of the normalized ray.
    pub ray_residual: f64,
}

/// Solver-side notes attached to a solution.
#[derive(Debug, Clone, Default)]
pub struct QpDiagnostics {
    /// Regularization actually applied to the KKT system.
    pub regularization: f64,
    /// Whether the active-set polish was accepted.
    pub polished: bool,
    pub message: Option<String>,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    /// Lagrangian value at the returned multipliers; a lower bound on the
    /// optimum up to the reported residuals.
    pub dual_objective: f64,
    pub eq_multipliers: DVector<f64>,
    pub ineq_multipliers: DVector<f64>,
    pub kkt: KktResiduals,
    pub status: QpStatus,
    pub iterations: usize,
    pub certificate: Option<InfeasibilityCertificate>,
    pub diagnostics: QpDiagnostics,
}

/// Recomputes KKT residuals of a claimed solution from `(x, multipliers)`
/// alone, independent of the solver's internal state.
pub fn check_kkt(p: &QpProblem, s: &QpSolution) -> KktResiduals {
    residuals_at(p, &s.x, &s.eq_multipliers, &s.ineq_multipliers)
}

fn residuals_at(
    p: &QpProblem,
    x: &DVector<f64>,
    lam: &DVector<f64>,
    mu: &DVector<f64>,
) -> KktResiduals {
    let mut grad = &p.h * x * 2.0 + &p.c;
    if p.num_eq() > 0 {
        grad += p.a_eq.tr_mul(lam);
    }
    if p.num_ineq() > 0 {
        grad += p.a_in.tr_mul(mu);
    }
    let stationarity = inf_norm(&grad);

    let mut primal: f64 = 0.0;
    if p.num_eq() > 0 {
        primal = primal.max(inf_norm(&(&p.a_eq * x - &p.b_eq)));
    }
    let mut complementarity: f64 = 0.0;
    if p.num_ineq() > 0 {
        let ax = &p.a_in * x;
        for i in 0..p.num_ineq() {
            let viol = ax[i] - p.b_in[i];
            primal = primal.max(viol.max(0.0));
            complementarity = complementarity.max((mu[i] * (p.b_in[i] - ax[i])).abs());
        }
    }
    KktResiduals {
        stationarity,
        primal,
        complementarity,
    }
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Solves `p` to KKT residuals at most `eps` on all three measures.
pub fn solve_qp(p: &QpProblem, eps: f64) -> QpSolution {
    solve_qp_with_start(p, eps, None)
}

/// As [`solve_qp`], with an optional primal starting-point hint.
pub fn solve_qp_with_start(p: &QpProblem, eps: f64, start: Option<&DVector<f64>>) -> QpSolution {
    Ipm::new(p, eps, start).run()
}

struct Ipm<'a> {
    p: &'a QpProblem,
    eps: f64,
    d: usize,
    ne: usize,
    ni: usize,
    ineq_nz: Vec<Vec<(usize, f64)>>,
    start: Option<DVector<f64>>,
    delta: f64,
    kkt_cache: Option<DMatrix<f64>>,
    message: Option<String>,
}

struct Direction {
    dx: DVector<f64>,
    dlam: DVector<f64>,
    ds: DVector<f64>,
    dmu: DVector<f64>,
}

impl<'a> Ipm<'a> {
    fn new(p: &'a QpProblem, eps: f64, start: Option<&DVector<f64>>) -> Self {
        let ineq_nz = (0..p.num_ineq())
            .map(|r| {
                (0..p.dim())
                    .filter_map(|j| {
                        let v = p.a_in[(r, j)];
                        (v != 0.0).then_some((j, v))
                    })
                    .collect()
            })
            .collect();
        Self {
            p,
            eps,
            d: p.dim(),
            ne: p.num_eq(),
            ni: p.num_ineq(),
            ineq_nz,
            start: start.cloned(),
            delta: KKT_REGULARIZATION,
            kkt_cache: None,
            message: None,
        }
    }

    fn run(mut self) -> QpSolution {
        if self.ni == 0 {
            return self.solve_equality_only();
        }

        let (mut x, mut lam) = self.initial_primal();
        let (mut s, mut mu) = self.initial_slacks(&x);

        let mut history: Vec<(f64, f64)> = Vec::new();
        let mut best: Option<(KktResiduals, DVector<f64>, DVector<f64>, DVector<f64>)> = None;

        let mut iterations = 0;
        let mut converged = false;
        for k in 0..DEFAULT_MAX_ITER {
            iterations = k;
            let res = residuals_at(self.p, &x, &lam, &mu);
            if best.as_ref().map_or(true, |(b, ..)| res.max() < b.max()) {
                best = Some((res, x.clone(), lam.clone(), mu.clone()));
            }
            if res.max() <= self.eps {
                converged = true;
                break;
            }

            let rd = self.dual_residual(&x, &lam, &mu);
            let re = &self.p.a_eq * &x - &self.p.b_eq;
            let ri = &self.p.a_in * &x + &s - &self.p.b_in;
            let mu_gap = s.dot(&mu) / self.ni as f64;

            let infeas = inf_norm(&re).max(inf_norm(&ri));
            history.push((infeas, mu_gap));
            if let Some(cert) = self.detect_infeasibility(&history, &lam, &mu) {
                return self.infeasible_solution(x, lam, mu, cert, k);
            }

            let lu = match self.factor_kkt(&s, &mu) {
                Some(f) => f,
                None => break,
            };

            // predictor
            let rc_aff = DVector::from_fn(self.ni, |i, _| -s[i] * mu[i]);
            let aff = self.solve_newton(&lu, &rd, &re, &ri, &rc_aff, &s, &mu);
            let (ap_aff, ad_aff) = step_lengths(&s, &aff.ds, &mu, &aff.dmu);
            let mu_aff = (&s + &aff.ds * ap_aff).dot(&(&mu + &aff.dmu * ad_aff)) / self.ni as f64;
            let sigma = ((mu_aff / mu_gap).powi(3)).clamp(1e-12, 1.0);

            // corrector
            let rc = DVector::from_fn(self.ni, |i, _| {
                sigma * mu_gap - s[i] * mu[i] - aff.ds[i] * aff.dmu[i]
            });
            let dir = self.solve_newton(&lu, &rd, &re, &ri, &rc, &s, &mu);

            let (ap_max, ad_max) = step_lengths(&s, &dir.ds, &mu, &dir.dmu);
            let tau = (1.0 - mu_gap).clamp(0.995, 0.99999);
            let ap = (tau * ap_max).min(1.0);
            let ad = (tau * ad_max).min(1.0);

            x += &dir.dx * ap;
            s += &dir.ds * ap;
            lam += &dir.dlam * ad;
            mu += &dir.dmu * ad;

            if !x.iter().all(|v| v.is_finite()) || !mu.iter().all(|v| v.is_finite()) {
                self.note("iterates became non-finite");
                break;
            }
        }

        let (res, bx, blam, bmu) = best.expect("at least one iterate recorded");
        let (x, lam, mu, res, polished) = self.polish(bx, blam, bmu, res);

        // polish never degrades the residuals, so a converged loop always
        // lands here with res within tolerance
        if converged || res.max() <= self.eps {
            return self.optimal_solution(x, lam, mu, res, iterations + 1, polished);
        }
        if let Some(cert) = self.try_certificate(&lam, &mu) {
            return self.infeasible_solution(x, lam, mu, cert, iterations + 1);
        }
        self.failure_solution(x, lam, mu, res, iterations + 1, polished)
    }

    fn note(&mut self, msg: &str) {
        match &mut self.message {
            Some(m) => {
                m.push_str("; ");
                m.push_str(msg);
            }
            None => self.message = Some(msg.to_string()),
        }
    }

    fn dual_residual(&self, x: &DVector<f64>, lam: &DVector<f64>, mu: &DVector<f64>) -> DVector<f64> {
        let mut rd = &self.p.h * x * 2.0 + &self.p.c;
        if self.ne > 0 {
            rd += self.p.a_eq.tr_mul(lam);
        }
        rd += self.p.a_in.tr_mul(mu);
        rd
    }

    /// Equality-regularized least-squares start for `x`; also seeds `lam`.
    fn initial_primal(&self) -> (DVector<f64>, DVector<f64>) {
        if let Some(x0) = &self.start {
            return (x0.clone(), DVector::zeros(self.ne));
        }
        let n = self.d + self.ne;
        let mut k = DMatrix::zeros(n, n);
        for i in 0..self.d {
            for j in 0..self.d {
                k[(i, j)] = 2.0 * self.p.h[(i, j)];
            }
            k[(i, i)] += 1.0;
        }
        for r in 0..self.ne {
            for j in 0..self.d {
                k[(self.d + r, j)] = self.p.a_eq[(r, j)];
                k[(j, self.d + r)] = self.p.a_eq[(r, j)];
            }
            k[(self.d + r, self.d + r)] = -self.delta;
        }
        let mut rhs = DVector::zeros(n);
        for i in 0..self.d {
            rhs[i] = -self.p.c[i];
        }
        for r in 0..self.ne {
            rhs[self.d + r] = self.p.b_eq[r];
        }
        match k.lu().solve(&rhs) {
            Some(sol) => (
                sol.rows(0, self.d).into_owned(),
                sol.rows(self.d, self.ne).into_owned(),
            ),
            None => (DVector::zeros(self.d), DVector::zeros(self.ne)),
        }
    }

    fn initial_slacks(&self, x: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let s_hat = &self.p.b_in - &self.p.a_in * x;
        let min_sh = s_hat.iter().copied().fold(f64::INFINITY, f64::min);
        let shift = (-1.5 * min_sh).max(0.0);
        let s_tilde = s_hat.add_scalar(shift);
        let mu_tilde = DVector::from_element(self.ni, 1.0);
        let dot = s_tilde.dot(&mu_tilde);
        let ds = 0.5 * dot / (self.ni as f64);
        let dmu = 0.5 * dot / s_tilde.sum().max(1e-8);
        let s = s_tilde.map(|v| (v + ds).max(1e-4));
        let mu = mu_tilde.map(|v| (v + dmu).max(1e-4));
        (s, mu)
    }

    fn factor_kkt(&mut self, s: &DVector<f64>, mu: &DVector<f64>) -> Option<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>> {
        let n = self.d + self.ne;
        for attempt in 0..3 {
            let mut k = DMatrix::zeros(n, n);
            for i in 0..self.d {
                for j in 0..self.d {
                    k[(i, j)] = 2.0 * self.p.h[(i, j)];
                }
                k[(i, i)] += self.delta;
            }
            for (r, nz) in self.ineq_nz.iter().enumerate() {
                let w = mu[r] / s[r];
                for &(i, vi) in nz {
                    for &(j, vj) in nz {
                        k[(i, j)] += w * vi * vj;
                    }
                }
            }
            for r in 0..self.ne {
                for j in 0..self.d {
                    k[(self.d + r, j)] = self.p.a_eq[(r, j)];
                    k[(j, self.d + r)] = self.p.a_eq[(r, j)];
                }
                k[(self.d + r, self.d + r)] = -self.delta;
            }
            let lu = k.clone().lu();
            let probe = lu.solve(&DVector::from_element(n, 1.0));
            match probe {
                Some(sol) if sol.iter().all(|v| v.is_finite()) => {
                    self.kkt_cache = Some(k);
                    return Some(lu);
                }
                _ => {
                    self.delta *= 1e4;
                    if attempt == 2 {
                        self.note("KKT factorization failed at maximum regularization");
                    } else {
                        self.note("KKT factorization retried with larger regularization");
                    }
                }
            }
        }
        None
    }

    #[allow(clippy::too_many_arguments)]
    fn solve_newton(
        &self,
        lu: &nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
        rd: &DVector<f64>,
        re: &DVector<f64>,
        ri: &DVector<f64>,
        rc: &DVector<f64>,
        s: &DVector<f64>,
        mu: &DVector<f64>,
    ) -> Direction {
        let g = DVector::from_fn(self.ni, |i, _| (rc[i] + mu[i] * ri[i]) / s[i]);
        let mut rhs = DVector::zeros(self.d + self.ne);
        let top = -rd - self.p.a_in.tr_mul(&g);
        for i in 0..self.d {
            rhs[i] = top[i];
        }
        for r in 0..self.ne {
            rhs[self.d + r] = -re[r];
        }
        let mut sol = lu.solve(&rhs).unwrap_or_else(|| DVector::zeros(self.d + self.ne));
        // one round of iterative refinement on the augmented system
        if let Some(k) = &self.kkt_cache {
            let resid = &rhs - k * &sol;
            if let Some(corr) = lu.solve(&resid) {
                sol += corr;
            }
        }
        let dx = sol.rows(0, self.d).into_owned();
        let dlam = sol.rows(self.d, self.ne).into_owned();
        let ds = -ri - &self.p.a_in * &dx;
        let dmu = DVector::from_fn(self.ni, |i, _| (rc[i] - mu[i] * ds[i]) / s[i]);
        Direction { dx, dlam, ds, dmu }
    }

    fn detect_infeasibility(
        &self,
        history: &[(f64, f64)],
        lam: &DVector<f64>,
        mu: &DVector<f64>,
    ) -> Option<InfeasibilityCertificate> {
        const WINDOW: usize = 20;
        let k = history.len();
        let dual_scale = inf_norm(lam).max(inf_norm(mu));
        let blown_up = dual_scale > 1e10;
        let stalled = k >= WINDOW + 1 && {
            let recent = &history[k - WINDOW..];
            recent.iter().all(|&(inf, _)| inf > 1e3 * self.eps)
                && history[k - 1].1 >= history[k - 1 - WINDOW].1
        };
        if !(stalled || blown_up) {
            return None;
        }
        self.try_certificate(lam, mu)
    }

    fn try_certificate(
        &self,
        lam: &DVector<f64>,
        mu: &DVector<f64>,
    ) -> Option<InfeasibilityCertificate> {
        let scale = inf_norm(lam).max(inf_norm(mu));
        if scale < 1e-12 {
            return None;
        }
        let eq_ray = lam / scale;
        let ineq_ray = mu.map(|v| v.max(0.0) / scale);
        let mut ray = DVector::zeros(self.d);
        if self.ne > 0 {
            ray += self.p.a_eq.tr_mul(&eq_ray);
        }
        if self.ni > 0 {
            ray += self.p.a_in.tr_mul(&ineq_ray);
        }
        let ray_residual = inf_norm(&ray);
        let violation = -(self.p.b_eq.dot(&eq_ray) + self.p.b_in.dot(&ineq_ray));
        if violation >= 10.0 * self.eps && ray_residual <= 1e-3 * violation {
            Some(InfeasibilityCertificate {
                eq_ray,
                ineq_ray,
                violation,
                ray_residual,
            })
        } else {
            None
        }
    }

    /// Re-solves the KKT system restricted to the apparent active set,
    /// keeping the result only when it does not degrade the residuals.
    fn polish(
        &mut self,
        x: DVector<f64>,
        lam: DVector<f64>,
        mu: DVector<f64>,
        res: KktResiduals,
    ) -> (DVector<f64>, DVector<f64>, DVector<f64>, KktResiduals, bool) {
        let s_hat = &self.p.b_in - &self.p.a_in * &x;
        let mut active: Vec<usize> = (0..self.ni)
            .filter(|&i| mu[i] > s_hat[i] || s_hat[i] < 1e-7)
            .collect();

        for _pass in 0..2 {
            let na = active.len();
            let n = self.d + self.ne + na;
            let mut m = DMatrix::zeros(n, n);
            for i in 0..self.d {
                for j in 0..self.d {
                    m[(i, j)] = 2.0 * self.p.h[(i, j)];
                }
                m[(i, i)] += 1e-12;
            }
            for r in 0..self.ne {
                for j in 0..self.d {
                    m[(self.d + r, j)] = self.p.a_eq[(r, j)];
                    m[(j, self.d + r)] = self.p.a_eq[(r, j)];
                }
                m[(self.d + r, self.d + r)] = -1e-12;
            }
            for (idx, &r) in active.iter().enumerate() {
                let row = self.d + self.ne + idx;
                for j in 0..self.d {
                    m[(row, j)] = self.p.a_in[(r, j)];
                    m[(j, row)] = self.p.a_in[(r, j)];
                }
                m[(row, row)] = -1e-12;
            }
            let mut rhs = DVector::zeros(n);
            for i in 0..self.d {
                rhs[i] = -self.p.c[i];
            }
            for r in 0..self.ne {
                rhs[self.d + r] = self.p.b_eq[r];
            }
            for (idx, &r) in active.iter().enumerate() {
                rhs[self.d + self.ne + idx] = self.p.b_in[r];
            }
            let lu = m.clone().lu();
            let mut sol = match lu.solve(&rhs) {
                Some(s) if s.iter().all(|v| v.is_finite()) => s,
                _ => break,
            };
            for _ in 0..2 {
                let r = &rhs - &m * &sol;
                match lu.solve(&r) {
                    Some(corr) => sol += corr,
                    None => break,
                }
            }
            let px = sol.rows(0, self.d).into_owned();
            let plam = sol.rows(self.d, self.ne).into_owned();
            let mut pmu = DVector::zeros(self.ni);
            let mut negatives = Vec::new();
            for (idx, &r) in active.iter().enumerate() {
                let v = sol[self.d + self.ne + idx];
                if v < -self.eps {
                    negatives.push(r);
                } else {
                    pmu[r] = v.max(0.0);
                }
            }
            if !negatives.is_empty() {
                active.retain(|r| !negatives.contains(r));
                continue;
            }
            let pres = residuals_at(self.p, &px, &plam, &pmu);
            if pres.max() <= res.max() {
                return (px, plam, pmu, pres, true);
            }
            break;
        }
        (x, lam, mu, res, false)
    }

    fn solve_equality_only(mut self) -> QpSolution {
        let n = self.d + self.ne;
        let mut k = DMatrix::zeros(n, n);
        for i in 0..self.d {
            for j in 0..self.d {
                k[(i, j)] = 2.0 * self.p.h[(i, j)];
            }
            k[(i, i)] += self.delta;
        }
        for r in 0..self.ne {
            for j in 0..self.d {
                k[(self.d + r, j)] = self.p.a_eq[(r, j)];
                k[(j, self.d + r)] = self.p.a_eq[(r, j)];
            }
            k[(self.d + r, self.d + r)] = -self.delta;
        }
        let mut rhs = DVector::zeros(n);
        for i in 0..self.d {
            rhs[i] = -self.p.c[i];
        }
        for r in 0..self.ne {
            rhs[self.d + r] = self.p.b_eq[r];
        }
        let lu = k.clone().lu();
        let sol = lu.solve(&rhs).map(|mut s| {
            for _ in 0..2 {
                let r = &rhs - &k * &s;
                if let Some(corr) = lu.solve(&r) {
                    s += corr;
                } else {
                    break;
                }
            }
            s
        });
        let (x, lam) = match sol {
            Some(s) if s.iter().all(|v| v.is_finite()) => (
                s.rows(0, self.d).into_owned(),
                s.rows(self.d, self.ne).into_owned(),
            ),
            _ => (DVector::zeros(self.d), DVector::zeros(self.ne)),
        };
        let mu = DVector::zeros(0);
        let res = residuals_at(self.p, &x, &lam, &mu);
        if res.max() <= self.eps {
            return self.optimal_solution(x, lam, mu, res, 1, false);
        }
        if res.primal > self.eps {
            if let Some(cert) = self.equality_certificate() {
                return self.infeasible_solution(x, lam, mu, cert, 1);
            }
        }
        self.note("equality-constrained KKT solve did not certify");
        self.failure_solution(x, lam, mu, res, 1, false)
    }

    /// Null-space Farkas ray for inconsistent equalities: a combination of
    /// equality rows that cancels to zero while its right-hand side does not.
    fn equality_certificate(&self) -> Option<InfeasibilityCertificate> {
        if self.ne == 0 {
            return None;
        }
        // rows of a_eq as columns: find lam with a_eq' lam = 0, b_eq' lam < 0
        let at = self.p.a_eq.transpose(); // d x ne
        let svd = at.clone().svd(false, true);
        let vt = svd.v_t.as_ref()?;
        let smax = svd.singular_values.iter().copied().fold(0.0_f64, f64::max);
        let tol = smax.max(1.0) * 1e-12;
        let mut best: Option<DVector<f64>> = None;
        let mut best_score = 0.0;
        for (i, &sv) in svd.singular_values.iter().enumerate() {
            if sv <= tol {
                let v = vt.row(i).transpose();
                let score = self.p.b_eq.dot(&v).abs();
                if score > best_score {
                    best_score = score;
                    best = Some(v);
                }
            }
        }
        // SVD of a thin matrix omits trailing null directions; complete the
        // basis by projecting out the row space when needed.
        if best.is_none() && self.ne > svd.singular_values.len() {
            let rows = svd.singular_values.len();
            for j in 0..self.ne {
                let mut e = DVector::zeros(self.ne);
                e[j] = 1.0;
                let mut v = e.clone();
                for i in 0..rows {
                    if svd.singular_values[i] > tol {
                        let basis = vt.row(i).transpose();
                        let proj = basis.dot(&e);
                        v -= basis * proj;
                    }
                }
                if v.norm() > 1e-8 {
                    let v = v.normalize();
                    let score = self.p.b_eq.dot(&v).abs();
                    if score > best_score {
                        best_score = score;
                        best = Some(v);
                    }
                }
            }
        }
        let v = best?;
        let mut lam = v;
        if self.p.b_eq.dot(&lam) > 0.0 {
            lam = -lam;
        }
        let scale = inf_norm(&lam);
        if scale < 1e-12 {
            return None;
        }
        lam /= scale;
        let ray_residual = inf_norm(&self.p.a_eq.tr_mul(&lam));
        let violation = -self.p.b_eq.dot(&lam);
        if violation >= 10.0 * self.eps && ray_residual <= 1e-3 * violation {
            Some(InfeasibilityCertificate {
                eq_ray: lam,
                ineq_ray: DVector::zeros(self.ni),
                violation,
                ray_residual,
            })
        } else {
            None
        }
    }

    fn optimal_solution(
        self,
        x: DVector<f64>,
        lam: DVector<f64>,
        mu: DVector<f64>,
        res: KktResiduals,
        iterations: usize,
        polished: bool,
    ) -> QpSolution {
        let objective = self.p.objective(&x);
        let dual_objective = self.dual_value(&x, &lam, &mu, objective);
        QpSolution {
            x,
            objective,
            dual_objective,
            eq_multipliers: lam,
            ineq_multipliers: mu,
            kkt: res,
            status: QpStatus::Optimal,
            iterations,
            certificate: None,
            diagnostics: QpDiagnostics {
                regularization: self.delta,
                polished,
                message: self.message,
            },
        }
    }

    fn infeasible_solution(
        self,
        x: DVector<f64>,
        lam: DVector<f64>,
        mu: DVector<f64>,
        cert: InfeasibilityCertificate,
        iterations: usize,
    ) -> QpSolution {
        let objective = self.p.objective(&x);
        let res = residuals_at(self.p, &x, &lam, &mu);
        QpSolution {
            x,
            objective,
            dual_objective: f64::INFINITY,
            eq_multipliers: lam,
            ineq_multipliers: mu,
            kkt: res,
            status: QpStatus::Infeasible,
            iterations,
            certificate: Some(cert),
            diagnostics: QpDiagnostics {
                regularization: self.delta,
                polished: false,
                message: self.message,
            },
        }
    }

    fn failure_solution(
        self,
        x: DVector<f64>,
        lam: DVector<f64>,
        mu: DVector<f64>,
        res: KktResiduals,
        iterations: usize,
        polished: bool,
    ) -> QpSolution {
        let objective = self.p.objective(&x);
        let dual_objective = self.dual_value(&x, &lam, &mu, objective);
        QpSolution {
            x,
            objective,
            dual_objective,
            eq_multipliers: lam,
            ineq_multipliers: mu,
            kkt: res,
            status: QpStatus::NumericalFailure,
            iterations,
            certificate: None,
            diagnostics: QpDiagnostics {
                regularization: self.delta,
                polished,
                message: self.message,
            },
        }
    }

    fn dual_value(&self, x: &DVector<f64>, lam: &DVector<f64>, mu: &DVector<f64>, obj: f64) -> f64 {
        let mut v = obj;
        if self.ne > 0 {
            v += lam.dot(&(&self.p.a_eq * x - &self.p.b_eq));
        }
        if self.ni > 0 {
            v += mu.dot(&(&self.p.a_in * x - &self.p.b_in));
        }
        v
    }
}

fn step_lengths(
    s: &DVector<f64>,
    ds: &DVector<f64>,
    mu: &DVector<f64>,
    dmu: &DVector<f64>,
) -> (f64, f64) {
    let mut ap = 1.0_f64;
    let mut ad = 1.0_f64;
    for i in 0..s.len() {
        if ds[i] < 0.0 {
            ap = ap.min(-s[i] / ds[i]);
        }
        if dmu[i] < 0.0 {
            ad = ad.min(-mu[i] / dmu[i]);
        }
    }
    (ap, ad)
}
