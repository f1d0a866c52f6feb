//! Market-data ingestion: price series, per-period returns, and the
//! mean/covariance statistics that parameterize the portfolio model.
//!
//! Covariances use the population normalization `1/m`, not the unbiased
//! `1/(m-1)`; the downstream model is defined in those terms.

use std::io::{BufRead, Read};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `||Q - Q'||_inf` for covariance symmetry.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// The smallest covariance eigenvalue may be negative by at most this
/// fraction of the spectral norm.
pub const PSD_REL_TOL: f64 = 1e-9;
/// Correlations may overshoot [-1, 1] by at most this much before rejection.
pub const CORRELATION_SLACK: f64 = 1e-9;

/// How raw prices are turned into per-period returns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReturnKind {
    /// `(p_{k+1} - p_k) / p_k`
    Arithmetic,
    /// `ln(p_{k+1} / p_k)`
    Log,
}

/// Strictly positive price observations, one row per asset, one column per
/// observation date.
#[derive(Debug, Clone)]
pub struct PriceMatrix {
    prices: DMatrix<f64>,
    asset_names: Vec<String>,
}

impl PriceMatrix {
    pub fn new(prices: DMatrix<f64>, asset_names: Vec<String>) -> Result<Self> {
        if prices.nrows() == 0 {
            return Err(Error::InvalidData("price matrix has no assets".into()));
        }
        if prices.ncols() < 2 {
            return Err(Error::InvalidData(
                "price matrix needs at least 2 observations per asset".into(),
            ));
        }
        if asset_names.len() != prices.nrows() {
            return Err(Error::Dimension(format!(
                "{} asset names for {} price rows",
                asset_names.len(),
                prices.nrows()
            )));
        }
        for j in 0..prices.ncols() {
            for i in 0..prices.nrows() {
                let v = prices[(i, j)];
                if !(v.is_finite() && v > 0.0) {
                    return Err(Error::InvalidData(format!(
                        "non-positive price {} for asset {} at observation {}",
                        v, asset_names[i], j
                    )));
                }
            }
        }
        Ok(Self {
            prices,
            asset_names,
        })
    }

    /// Reads a price CSV: a header row of asset names, then one row per
    /// date whose first column is an opaque date label. A leading header
    /// label for the date column is accepted but not required.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut records = rdr.records();
        let header = records
            .next()
            .ok_or_else(|| Error::Parse("empty price CSV".into()))?
            .map_err(|e| Error::Parse(format!("price CSV header: {e}")))?;

        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (line, rec) in records.enumerate() {
            let rec = rec.map_err(|e| Error::Parse(format!("price CSV row {}: {e}", line + 2)))?;
            if rec.iter().all(|f| f.is_empty()) {
                continue;
            }
            let mut vals = Vec::with_capacity(rec.len().saturating_sub(1));
            for (col, field) in rec.iter().enumerate().skip(1) {
                let v: f64 = field.parse().map_err(|_| {
                    Error::Parse(format!(
                        "price CSV row {} column {}: expected a number, got {field:?}",
                        line + 2,
                        col + 1
                    ))
                })?;
                vals.push(v);
            }
            rows.push(vals);
        }
        if rows.is_empty() {
            return Err(Error::Parse("price CSV has no data rows".into()));
        }
        let n = rows[0].len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Parse("ragged price CSV rows".into()));
        }
        let names: Vec<String> = if header.len() == n + 1 {
            header.iter().skip(1).map(str::to_string).collect()
        } else if header.len() == n {
            header.iter().map(str::to_string).collect()
        } else {
            return Err(Error::Parse(format!(
                "header names {} columns but data rows carry {} prices",
                header.len(),
                n
            )));
        };
        // rows are dates; the matrix stores assets as rows
        let prices = DMatrix::from_fn(n, rows.len(), |asset, date| rows[date][asset]);
        Self::new(prices, names)
    }

    pub fn from_csv_path(path: &Path) -> Result<Self> {
        Self::from_csv(std::fs::File::open(path)?)
    }

    pub fn num_assets(&self) -> usize {
        self.prices.nrows()
    }

    pub fn num_observations(&self) -> usize {
        self.prices.ncols()
    }

    pub fn prices(&self) -> &DMatrix<f64> {
        &self.prices
    }

    pub fn asset_names(&self) -> &[String] {
        &self.asset_names
    }
}

/// Per-asset, per-period historical returns (`n x m`).
#[derive(Debug, Clone)]
pub struct ReturnHistory {
    returns: DMatrix<f64>,
}

impl ReturnHistory {
    pub fn new(returns: DMatrix<f64>) -> Result<Self> {
        if returns.nrows() == 0 || returns.ncols() == 0 {
            return Err(Error::InvalidData(
                "return history needs at least one asset and one period".into(),
            ));
        }
        if returns.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite return entry".into()));
        }
        Ok(Self { returns })
    }

    pub fn num_assets(&self) -> usize {
        self.returns.nrows()
    }

    pub fn num_periods(&self) -> usize {
        self.returns.ncols()
    }

    pub fn returns(&self) -> &DMatrix<f64> {
        &self.returns
    }
}

/// Converts prices to per-period returns; `m = observations - 1`.
pub fn compute_returns(p: &PriceMatrix, kind: ReturnKind) -> ReturnHistory {
    let n = p.num_assets();
    let m = p.num_observations() - 1;
    let prices = p.prices();
    let returns = DMatrix::from_fn(n, m, |i, k| match kind {
        ReturnKind::Arithmetic => (prices[(i, k + 1)] - prices[(i, k)]) / prices[(i, k)],
        ReturnKind::Log => (prices[(i, k + 1)] / prices[(i, k)]).ln(),
    });
    ReturnHistory { returns }
}

/// Mean returns and covariance matrix of a set of assets.
#[derive(Debug, Clone)]
pub struct AssetStatistics {
    mean_returns: DVector<f64>,
    covariance: DMatrix<f64>,
    asset_names: Option<Vec<String>>,
}

impl AssetStatistics {
    pub fn new(
        mean_returns: DVector<f64>,
        covariance: DMatrix<f64>,
        asset_names: Option<Vec<String>>,
    ) -> Result<Self> {
        let n = mean_returns.len();
        if n == 0 {
            return Err(Error::InvalidData("no assets".into()));
        }
        if covariance.nrows() != n || covariance.ncols() != n {
            return Err(Error::Dimension(format!(
                "covariance is {}x{} for {} assets",
                covariance.nrows(),
                covariance.ncols(),
                n
            )));
        }
        if let Some(names) = &asset_names {
            if names.len() != n {
                return Err(Error::Dimension(format!(
                    "{} asset names for {} assets",
                    names.len(),
                    n
                )));
            }
        }
        if mean_returns
            .iter()
            .chain(covariance.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::InvalidData("non-finite statistic".into()));
        }
        check_covariance(&covariance)?;
        Ok(Self {
            mean_returns,
            covariance,
            asset_names,
        })
    }

    pub fn num_assets(&self) -> usize {
        self.mean_returns.len()
    }

    pub fn mean_returns(&self) -> &DVector<f64> {
        &self.mean_returns
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn asset_names(&self) -> Option<&[String]> {
        self.asset_names.as_deref()
    }

    /// Per-asset standard deviations, `sqrt` of the covariance diagonal.
    pub fn stddevs(&self) -> DVector<f64> {
        DVector::from_fn(self.num_assets(), |i, _| self.covariance[(i, i)].sqrt())
    }

    /// Correlation matrix; zero-variance assets get zero off-diagonal
    /// correlations and a unit diagonal.
    pub fn correlations(&self) -> DMatrix<f64> {
        let s = self.stddevs();
        DMatrix::from_fn(self.num_assets(), self.num_assets(), |i, j| {
            if i == j {
                1.0
            } else if s[i] > 0.0 && s[j] > 0.0 {
                self.covariance[(i, j)] / (s[i] * s[j])
            } else {
                0.0
            }
        })
    }

    pub fn to_json(&self) -> String {
        let file = StatsFile {
            n: self.num_assets(),
            asset_names: self.asset_names.clone(),
            mean_returns: self.mean_returns.iter().copied().collect(),
            covariance: (0..self.num_assets())
                .map(|i| self.covariance.row(i).iter().copied().collect())
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("plain floats serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: StatsFile = serde_json::from_str(text)?;
        if file.mean_returns.len() != file.n {
            return Err(Error::Parse(format!(
                "stats file claims n={} but lists {} mean returns",
                file.n,
                file.mean_returns.len()
            )));
        }
        if file.covariance.len() != file.n || file.covariance.iter().any(|r| r.len() != file.n) {
            return Err(Error::Parse("stats file covariance is not n x n".into()));
        }
        let cov = DMatrix::from_fn(file.n, file.n, |i, j| file.covariance[i][j]);
        Self::new(DVector::from_vec(file.mean_returns), cov, file.asset_names)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Validates symmetry, nonnegative diagonal, and positive semidefiniteness
/// of a covariance matrix; reports the offending eigenvalue on failure.
pub fn check_covariance(covariance: &DMatrix<f64>) -> Result<()> {
    let n = covariance.nrows();
    let mut asym: f64 = 0.0;
    for i in 0..n {
        if covariance[(i, i)] < 0.0 {
            return Err(Error::InvalidData(format!(
                "negative variance {} for asset {}",
                covariance[(i, i)],
                i + 1
            )));
        }
        for j in (i + 1)..n {
            asym = asym.max((covariance[(i, j)] - covariance[(j, i)]).abs());
        }
    }
    if asym > SYMMETRY_TOL {
        return Err(Error::InvalidData(format!(
            "covariance asymmetry {asym:.3e} exceeds {SYMMETRY_TOL:.0e}"
        )));
    }
    let eigs = covariance.symmetric_eigenvalues();
    let lmin = eigs.min();
    let norm = eigs.amax();
    if lmin < -PSD_REL_TOL * norm {
        return Err(Error::InvalidData(format!(
            "covariance is not positive semidefinite: eigenvalue {lmin:.6e} \
             below -{PSD_REL_TOL:.0e} * {norm:.6e}"
        )));
    }
    Ok(())
}

/// On-disk statistics schema.
#[derive(Debug, Serialize, Deserialize)]
struct StatsFile {
    n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    asset_names: Option<Vec<String>>,
    mean_returns: Vec<f64>,
    covariance: Vec<Vec<f64>>,
}

/// Sample means and the `1/m`-normalized covariance of a return history.
pub fn asset_statistics(h: &ReturnHistory) -> Result<AssetStatistics> {
    let n = h.num_assets();
    let m = h.num_periods();
    let r = h.returns();
    let means = DVector::from_fn(n, |i, _| r.row(i).sum() / m as f64);
    let centered = DMatrix::from_fn(n, m, |i, k| r[(i, k)] - means[i]);
    let mut cov = &centered * centered.transpose() / m as f64;
    cov = (&cov + cov.transpose()) * 0.5;
    AssetStatistics::new(means, cov, None)
}

/// Parses the plain-text statistics format:
///
/// ```text
/// n
/// mean_1 stddev_1
/// ...
/// mean_n stddev_n
/// i j rho      (1-based, one triple per pair; diagonal triples optional)
/// ```
///
/// Covariances are assembled as `rho_ij * s_i * s_j`. Every off-diagonal
/// pair must appear exactly once; diagonal triples must carry rho = 1.
pub fn load_meanstd_correlation<R: BufRead>(reader: R) -> Result<AssetStatistics> {
    let mut lines = reader
        .lines()
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .map(|l| l.trim().to_string())
        .filter(|l| !l.is_empty());

    let n: usize = lines
        .next()
        .ok_or_else(|| Error::Parse("empty statistics file".into()))?
        .parse()
        .map_err(|_| Error::Parse("first line must be the asset count".into()))?;
    if n == 0 {
        return Err(Error::Parse("asset count must be positive".into()));
    }

    let mut means = DVector::zeros(n);
    let mut stds = DVector::zeros(n);
    for i in 0..n {
        let line = lines
            .next()
            .ok_or_else(|| Error::Parse(format!("missing mean/stddev line for asset {}", i + 1)))?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 2 {
            return Err(Error::Parse(format!(
                "asset {} line must be `mean stddev`, got {line:?}",
                i + 1
            )));
        }
        means[i] = toks[0]
            .parse()
            .map_err(|_| Error::Parse(format!("bad mean for asset {}", i + 1)))?;
        stds[i] = toks[1]
            .parse::<f64>()
            .map_err(|_| Error::Parse(format!("bad stddev for asset {}", i + 1)))?;
        if !(stds[i].is_finite() && stds[i] >= 0.0) {
            return Err(Error::InvalidData(format!(
                "stddev for asset {} must be nonnegative",
                i + 1
            )));
        }
    }

    let mut seen = vec![false; n * n];
    let mut rho = DMatrix::identity(n, n);
    for line in lines {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 3 {
            return Err(Error::Parse(format!(
                "correlation line must be `i j rho`, got {line:?}"
            )));
        }
        let i: usize = toks[0]
            .parse()
            .map_err(|_| Error::Parse(format!("bad index in {line:?}")))?;
        let j: usize = toks[1]
            .parse()
            .map_err(|_| Error::Parse(format!("bad index in {line:?}")))?;
        let r: f64 = toks[2]
            .parse()
            .map_err(|_| Error::Parse(format!("bad correlation in {line:?}")))?;
        if i < 1 || i > n || j < 1 || j > n {
            return Err(Error::Parse(format!(
                "correlation indices ({i}, {j}) out of range 1..={n}"
            )));
        }
        let (lo, hi) = (i.min(j) - 1, i.max(j) - 1);
        if seen[lo * n + hi] {
            return Err(Error::InvalidData(format!(
                "duplicate correlation for pair ({}, {})",
                lo + 1,
                hi + 1
            )));
        }
        seen[lo * n + hi] = true;
        if r.abs() > 1.0 + CORRELATION_SLACK {
            return Err(Error::InvalidData(format!(
                "correlation {r} for pair ({}, {}) outside [-1, 1]",
                lo + 1,
                hi + 1
            )));
        }
        if lo == hi && (r - 1.0).abs() > CORRELATION_SLACK {
            return Err(Error::InvalidData(format!(
                "self-correlation for asset {} must be 1, got {r}",
                lo + 1
            )));
        }
        let r = r.clamp(-1.0, 1.0);
        rho[(lo, hi)] = r;
        rho[(hi, lo)] = r;
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if !seen[i * n + j] {
                return Err(Error::InvalidData(format!(
                    "missing correlation for pair ({}, {})",
                    i + 1,
                    j + 1
                )));
            }
        }
    }

    let cov = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            stds[i] * stds[i]
        } else {
            rho[(i, j)] * stds[i] * stds[j]
        }
    });
    AssetStatistics::new(means, cov, None)
}

pub fn load_meanstd_correlation_path(path: &Path) -> Result<AssetStatistics> {
    load_meanstd_correlation(std::io::BufReader::new(std::fs::File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn price_row(prices: &[f64]) -> PriceMatrix {
        PriceMatrix::new(
            DMatrix::from_row_slice(1, prices.len(), prices),
            vec!["A".into()],
        )
        .unwrap()
    }

    #[test]
    fn arithmetic_returns_match_definition() {
        let h = compute_returns(&price_row(&[100.0, 110.0]), ReturnKind::Arithmetic);
        assert_eq!(h.num_periods(), 1);
        assert_relative_eq!(h.returns()[(0, 0)], 0.10, epsilon = 1e-15);

        let h = compute_returns(&price_row(&[100.0, 100.0, 100.0]), ReturnKind::Arithmetic);
        assert_eq!(h.returns().as_slice(), &[0.0, 0.0]);

        let h = compute_returns(&price_row(&[100.0, 110.0, 99.0]), ReturnKind::Arithmetic);
        assert_relative_eq!(h.returns()[(0, 0)], 0.10, epsilon = 1e-15);
        assert_relative_eq!(h.returns()[(0, 1)], -0.10, epsilon = 1e-15);
    }

    #[test]
    fn log_returns_match_definition() {
        let h = compute_returns(&price_row(&[100.0, 110.0]), ReturnKind::Log);
        assert_relative_eq!(h.returns()[(0, 0)], (1.1_f64).ln(), epsilon = 1e-15);
    }

    #[test]
    fn rejects_nonpositive_prices() {
        let err = PriceMatrix::new(DMatrix::from_row_slice(1, 2, &[100.0, 0.0]), vec!["A".into()]);
        assert!(err.is_err());
        let err = PriceMatrix::new(
            DMatrix::from_row_slice(1, 2, &[100.0, -1.0]),
            vec!["A".into()],
        );
        assert!(err.is_err());
    }

    #[test]
    fn statistics_use_population_normalization() {
        // single asset, returns [0.1, -0.1]: mean 0, variance (1/2)(0.01+0.01)
        let h = ReturnHistory::new(DMatrix::from_row_slice(1, 2, &[0.1, -0.1])).unwrap();
        let s = asset_statistics(&h).unwrap();
        assert_relative_eq!(s.mean_returns()[0], 0.0, epsilon = 1e-15);
        assert_relative_eq!(s.covariance()[(0, 0)], 0.01, epsilon = 1e-15);
    }

    #[test]
    fn identical_assets_share_covariance() {
        let h =
            ReturnHistory::new(DMatrix::from_row_slice(2, 2, &[0.1, -0.1, 0.1, -0.1])).unwrap();
        let s = asset_statistics(&h).unwrap();
        assert_relative_eq!(s.covariance()[(0, 1)], 0.01, epsilon = 1e-15);
        assert_relative_eq!(s.covariance()[(0, 0)], 0.01, epsilon = 1e-15);
    }

    #[test]
    fn constant_returns_have_zero_variance() {
        let h = ReturnHistory::new(DMatrix::from_row_slice(1, 3, &[0.02, 0.02, 0.02])).unwrap();
        let s = asset_statistics(&h).unwrap();
        assert!(s.covariance()[(0, 0)].abs() < 1e-18);
    }

    #[test]
    fn meanstd_file_assembles_covariance() {
        let text = "2\n0.001 0.1\n0.002 0.2\n1 2 0.5\n";
        let s = load_meanstd_correlation(text.as_bytes()).unwrap();
        assert_relative_eq!(s.covariance()[(0, 1)], 0.01, epsilon = 1e-15);
        assert_relative_eq!(s.covariance()[(0, 0)], 0.01, epsilon = 1e-15);
        assert_relative_eq!(s.covariance()[(1, 1)], 0.04, epsilon = 1e-15);
    }

    #[test]
    fn meanstd_file_accepts_diagonal_triples() {
        let text = "2\n0.001 0.1\n0.002 0.2\n1 1 1.0\n1 2 0.5\n2 2 1.0\n";
        let s = load_meanstd_correlation(text.as_bytes()).unwrap();
        assert_relative_eq!(s.covariance()[(0, 0)], 0.01, epsilon = 1e-15);
        assert_relative_eq!(s.covariance()[(1, 1)], 0.04, epsilon = 1e-15);
    }

    #[test]
    fn meanstd_file_rejects_bad_correlations() {
        let out_of_range = "2\n0.001 0.1\n0.002 0.2\n1 2 1.5\n";
        assert!(load_meanstd_correlation(out_of_range.as_bytes()).is_err());

        let missing = "3\n0.001 0.1\n0.002 0.2\n0.003 0.3\n1 2 0.5\n1 3 0.5\n";
        let err = load_meanstd_correlation(missing.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("(2, 3)"), "got: {err}");

        let duplicate = "2\n0.001 0.1\n0.002 0.2\n1 2 0.5\n2 1 0.5\n";
        let err = load_meanstd_correlation(duplicate.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("duplicate"), "got: {err}");
    }

    #[test]
    fn rejects_inconsistent_correlation_matrix() {
        // rho(1,2)=1, rho(1,3)=1, rho(2,3)=-1 cannot come from any
        // distribution; the eigenvalue check must fire
        let text = "3\n0.0 0.1\n0.0 0.1\n0.0 0.1\n1 2 1.0\n1 3 1.0\n2 3 -1.0\n";
        let err = load_meanstd_correlation(text.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("eigenvalue"), "got: {err}");
    }

    #[test]
    fn csv_header_with_and_without_date_label() {
        let with_label = "date,A,B\n2020-01-01,100,200\n2020-01-08,110,190\n";
        let p = PriceMatrix::from_csv(with_label.as_bytes()).unwrap();
        assert_eq!(p.asset_names(), &["A".to_string(), "B".to_string()]);
        assert_eq!(p.num_observations(), 2);
        assert_relative_eq!(p.prices()[(1, 1)], 190.0);

        let without_label = "A,B\n2020-01-01,100,200\n2020-01-08,110,190\n";
        let p2 = PriceMatrix::from_csv(without_label.as_bytes()).unwrap();
        assert_eq!(p2.asset_names(), &["A".to_string(), "B".to_string()]);
        assert_eq!(p2.prices(), p.prices());
    }

    #[test]
    fn stats_json_round_trips() {
        let h = ReturnHistory::new(DMatrix::from_row_slice(
            2,
            3,
            &[0.01, -0.02, 0.005, 0.0, 0.01, -0.01],
        ))
        .unwrap();
        let s = asset_statistics(&h).unwrap();
        let s2 = AssetStatistics::from_json(&s.to_json()).unwrap();
        assert_eq!(s.mean_returns(), s2.mean_returns());
        assert_eq!(s.covariance(), s2.covariance());
    }

    proptest! {
        #[test]
        fn covariance_reconstructs_from_centered_outer_product(
            seed in 0u64..500, n in 1usize..5, m in 1usize..12
        ) {
            use rand::prelude::*;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let r = DMatrix::from_fn(n, m, |_, _| rng.random_range(-0.05..0.05));
            let h = ReturnHistory::new(r.clone()).unwrap();
            let s = asset_statistics(&h).unwrap();
            // element-wise reconstruction, independent of the matrix product
            for i in 0..n {
                for j in 0..n {
                    let ri = r.row(i).sum() / m as f64;
                    let rj = r.row(j).sum() / m as f64;
                    let mut acc = 0.0;
                    for k in 0..m {
                        acc += (r[(i, k)] - ri) * (r[(j, k)] - rj);
                    }
                    acc /= m as f64;
                    let got = s.covariance()[(i, j)];
                    let scale = acc.abs().max(1e-12);
                    prop_assert!((got - acc).abs() <= 1e-12 * scale.max(1.0));
                }
            }
        }

        #[test]
        fn statistics_invariant_under_period_permutation(
            seed in 0u64..500, n in 1usize..5, m in 2usize..12
        ) {
            use rand::prelude::*;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let r = DMatrix::from_fn(n, m, |_, _| rng.random_range(-0.05..0.05));
            let mut perm: Vec<usize> = (0..m).collect();
            perm.shuffle(&mut rng);
            let rp = DMatrix::from_fn(n, m, |i, k| r[(i, perm[k])]);
            let s1 = asset_statistics(&ReturnHistory::new(r).unwrap()).unwrap();
            let s2 = asset_statistics(&ReturnHistory::new(rp).unwrap()).unwrap();
            for i in 0..n {
                let d = (s1.mean_returns()[i] - s2.mean_returns()[i]).abs();
                prop_assert!(d <= 1e-12 * s1.mean_returns()[i].abs().max(1.0));
                for j in 0..n {
                    let a = s1.covariance()[(i, j)];
                    let b = s2.covariance()[(i, j)];
                    prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
                }
            }
        }

        #[test]
        fn meanstd_round_trips_through_statistics(
            seed in 0u64..200, n in 2usize..6
        ) {
            use rand::prelude::*;
            use std::fmt::Write;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            // a valid correlation matrix via a random factor model
            let f = DMatrix::from_fn(n, n + 2, |_, _| rng.random_range(-1.0..1.0));
            let cov: DMatrix<f64> = &f * f.transpose();
            let sd = DVector::from_fn(n, |i, _| cov[(i, i)].sqrt());
            let mut text = format!("{n}\n");
            for i in 0..n {
                writeln!(text, "{} {}", rng.random_range(-0.005..0.01), sd[i] * 0.01).unwrap();
            }
            for i in 0..n {
                for j in (i + 1)..n {
                    let rho = cov[(i, j)] / (sd[i] * sd[j]);
                    writeln!(text, "{} {} {}", i + 1, j + 1, rho).unwrap();
                }
            }
            let s = load_meanstd_correlation(text.as_bytes()).unwrap();
            let back_sd = s.stddevs();
            let back_rho = s.correlations();
            for i in 0..n {
                prop_assert!((back_sd[i] - sd[i] * 0.01).abs() <= 1e-12 * (sd[i] * 0.01).max(1.0));
                for j in (i + 1)..n {
                    let rho = cov[(i, j)] / (sd[i] * sd[j]);
                    prop_assert!((back_rho[(i, j)] - rho).abs() <= 1e-12);
                }
            }
        }
    }
}
