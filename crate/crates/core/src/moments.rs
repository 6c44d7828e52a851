//! Return-series ingestion, moment estimation and the spectral view of the
//! covariance matrix that every other module works through.

use std::collections::HashSet;
use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative eigenvalue floor used by SPD repair.
pub const SPD_REPAIR_FLOOR: f64 = 1e-10;
/// Relative asymmetry accepted before a matrix is rejected.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Relative Frobenius error allowed when reconstructing from the spectrum.
pub const RECONSTRUCTION_TOL: f64 = 1e-10;
/// Spread below which a set of expected returns counts as constant.
pub const DEGENERATE_ALPHA_TOL: f64 = 1e-14;

const EIGEN_MAX_ITER: usize = 10_000;

/// A T x n panel of per-period simple returns.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnsPanel {
    assets: Vec<String>,
    rows: DMatrix<f64>,
}

impl ReturnsPanel {
    pub fn new(assets: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = assets.len();
        if n < 2 {
            return Err(Error::InvalidDimension(format!(
                "need at least 2 assets, got {n}"
            )));
        }
        if rows.len() < 2 {
            return Err(Error::InvalidDimension(format!(
                "need at least 2 observations, got {}",
                rows.len()
            )));
        }
        let mut seen = HashSet::new();
        for a in &assets {
            if !seen.insert(a.as_str()) {
                return Err(Error::DuplicateAsset(a.clone()));
            }
        }
        let t = rows.len();
        let mut m = DMatrix::zeros(t, n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::MissingCell {
                    row: i + 1,
                    column: row.len().min(n) + 1,
                });
            }
            for (j, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::NonFiniteData(format!(
                        "returns row {}, column {}",
                        i + 1,
                        j + 1
                    )));
                }
                m[(i, j)] = v;
            }
        }
        Ok(Self { assets, rows: m })
    }

    /// Reads `,`-delimited UTF-8 CSV: a header row of asset names followed by
    /// one row of decimal returns per period. Empty or absent cells are errors.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let assets: Vec<String> = rdr
            .headers()
            .map_err(|e| Error::MalformedInput(e.to_string()))?
            .iter()
            .map(str::to_owned)
            .collect();
        let n = assets.len();
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::MalformedInput(e.to_string()))?;
            let mut row = Vec::with_capacity(n);
            for j in 0..n {
                let cell = rec.get(j).unwrap_or("");
                if cell.is_empty() {
                    return Err(Error::MissingCell { row: i + 1, column: j + 1 });
                }
                let v: f64 = cell.parse().map_err(|_| {
                    Error::MalformedInput(format!(
                        "row {}, column {}: `{cell}` is not a number",
                        i + 1,
                        j + 1
                    ))
                })?;
                row.push(v);
            }
            if rec.len() > n {
                return Err(Error::MalformedInput(format!(
                    "row {} has {} cells, header has {n}",
                    i + 1,
                    rec.len()
                )));
            }
            rows.push(row);
        }
        Self::new(assets, rows)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path)
            .map_err(|e| Error::MalformedInput(format!("{}: {e}", path.display())))?;
        Self::from_csv(file)
    }

    pub fn assets(&self) -> &[String] {
        &self.assets
    }

    pub fn observations(&self) -> usize {
        self.rows.nrows()
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    pub fn rows(&self) -> &DMatrix<f64> {
        &self.rows
    }
}

/// Expected per-period returns.
///
/// Only finiteness and `n >= 2` are enforced here; a constant vector is
/// rejected by the operations that need `D > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaVector(DVector<f64>);

impl AlphaVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        Self::from_vector(DVector::from_vec(values))
    }

    pub fn from_vector(v: DVector<f64>) -> Result<Self> {
        if v.len() < 2 {
            return Err(Error::InvalidDimension(format!(
                "alpha needs at least 2 entries, got {}",
                v.len()
            )));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteData("alpha".into()));
        }
        Ok(Self(v))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn mean(&self) -> f64 {
        self.0.mean()
    }

    /// True when all entries agree to within [`DEGENERATE_ALPHA_TOL`].
    pub fn is_constant(&self) -> bool {
        self.0.max() - self.0.min() <= DEGENERATE_ALPHA_TOL
    }
}

/// Eigenvalues in descending order with matching orthonormal eigenvectors
/// stored as columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl Spectrum {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let q = &self.vectors;
        q * DMatrix::from_diagonal(&self.values) * q.transpose()
    }
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(Error::InvalidDimension(format!(
            "matrix is {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteData("matrix".into()));
    }
    let scale = m.amax().max(f64::MIN_POSITIVE);
    let asym = (m - m.transpose()).amax();
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::NotSymmetric(asym));
    }
    Ok(())
}

/// Symmetric eigendecomposition with a deterministic ordering: eigenvalues
/// descending, each eigenvector's first non-negligible component positive,
/// exact ties ordered lexicographically by eigenvector.
pub fn spectral_decompose(matrix: &DMatrix<f64>) -> Result<Spectrum> {
    check_symmetric(matrix)?;
    let n = matrix.nrows();
    let sym = (matrix + matrix.transpose()) * 0.5;
    let eig = SymmetricEigen::try_new(sym.clone(), f64::EPSILON, EIGEN_MAX_ITER).ok_or_else(
        || Error::ConvergenceFailure(format!("no convergence after {EIGEN_MAX_ITER} sweeps")),
    )?;

    let mut pairs: Vec<(f64, Vec<f64>)> = (0..n)
        .map(|j| {
            let mut v: Vec<f64> = eig.eigenvectors.column(j).iter().copied().collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter_mut().for_each(|x| *x /= norm);
            if let Some(&first) = v.iter().find(|x| x.abs() > 1e-12) {
                if first < 0.0 {
                    v.iter_mut().for_each(|x| *x = -*x);
                }
            }
            (eig.eigenvalues[j], v)
        })
        .collect();
    pairs.sort_by(|a, b| {
        b.0.total_cmp(&a.0).then_with(|| {
            b.1.iter()
                .zip(&a.1)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
    });

    let values = DVector::from_iterator(n, pairs.iter().map(|p| p.0));
    let vectors = DMatrix::from_fn(n, n, |i, j| pairs[j].1[i]);
    let spectrum = Spectrum { values, vectors };

    let ortho = (spectrum.vectors.transpose() * &spectrum.vectors - DMatrix::identity(n, n)).amax();
    let denom = sym.norm().max(f64::MIN_POSITIVE);
    let recon = (spectrum.reconstruct() - &sym).norm() / denom;
    if ortho > RECONSTRUCTION_TOL || recon > RECONSTRUCTION_TOL {
        return Err(Error::ConvergenceFailure(format!(
            "orthogonality error {ortho:e}, reconstruction error {recon:e}"
        )));
    }
    Ok(spectrum)
}

/// Symmetric positive-definite covariance with its cached spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct CovMatrix {
    matrix: DMatrix<f64>,
    spectrum: Spectrum,
}

impl CovMatrix {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() < 2 {
            return Err(Error::InvalidDimension(format!(
                "covariance must be at least 2x2, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        let spectrum = spectral_decompose(&matrix)?;
        let min = spectrum.values[spectrum.values.len() - 1];
        if min <= 0.0 {
            return Err(Error::SingularCovariance(min));
        }
        let matrix = (&matrix + matrix.transpose()) * 0.5;
        Ok(Self { matrix, spectrum })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidDimension("covariance rows are ragged".into()));
        }
        Self::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub fn identity(n: usize) -> Result<Self> {
        Self::new(DMatrix::identity(n, n))
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn spectrum(&self) -> &Spectrum {
        &self.spectrum
    }

    /// Eigenvalues, largest first.
    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.spectrum.values
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.spectrum.vectors
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.spectrum.values[0]
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.spectrum.values[self.dim() - 1]
    }

    pub fn condition_number(&self) -> f64 {
        self.max_eigenvalue() / self.min_eigenvalue()
    }

    /// Applies f(rho) spectrally: Q diag(f(rho)) Q' x.
    pub fn apply_spectral(&self, x: &DVector<f64>, f: impl Fn(f64) -> f64) -> DVector<f64> {
        let q = &self.spectrum.vectors;
        let mut coeffs = q.tr_mul(x);
        for (c, &rho) in coeffs.iter_mut().zip(self.spectrum.values.iter()) {
            *c *= f(rho);
        }
        q * coeffs
    }

    /// inv(S) x through the cached spectrum.
    pub fn solve(&self, x: &DVector<f64>) -> DVector<f64> {
        self.apply_spectral(x, |rho| 1.0 / rho)
    }

    pub fn mul(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.matrix * x
    }

    pub fn quad_form(&self, x: &DVector<f64>) -> f64 {
        x.dot(&(&self.matrix * x))
    }

    pub fn inv_quad_form(&self, x: &DVector<f64>) -> f64 {
        x.dot(&self.solve(x))
    }
}

/// Ratio of the extreme eigenvalues.
pub fn condition_number(cov: &CovMatrix) -> f64 {
    cov.condition_number()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateOptions {
    /// Accept T < n+1 (a rank-deficient sample covariance).
    pub allow_rank_deficient: bool,
    /// Clip small eigenvalues instead of failing.
    pub spd_repair: bool,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        Self { allow_rank_deficient: false, spd_repair: true }
    }
}

#[derive(Debug, Clone)]
pub struct Moments {
    pub assets: Vec<String>,
    pub alpha: AlphaVector,
    pub cov: CovMatrix,
    /// Set when eigenvalues were floored during estimation.
    pub repaired: bool,
}

/// Column means and unbiased sample covariance of a returns panel.
pub fn estimate_moments(panel: &ReturnsPanel, options: EstimateOptions) -> Result<Moments> {
    let t = panel.observations();
    let n = panel.dim();
    if t < n + 1 && !options.allow_rank_deficient {
        return Err(Error::InsufficientObservations { needed: n + 1, got: t });
    }
    let rows = panel.rows();
    let means = DVector::from_iterator(n, rows.column_iter().map(|c| c.mean()));
    let alpha = AlphaVector::from_vector(means.clone())?;
    if alpha.is_constant() {
        return Err(Error::DegenerateAlpha("all column means are equal".into()));
    }

    let mut centered = rows.clone();
    for (j, mut col) in centered.column_iter_mut().enumerate() {
        col.add_scalar_mut(-means[j]);
    }
    let sample = centered.tr_mul(&centered) / (t as f64 - 1.0);
    let sample = (&sample + sample.transpose()) * 0.5;

    let spectrum = spectral_decompose(&sample)?;
    let top = spectrum.values[0];
    let bottom = spectrum.values[n - 1];
    if top <= 0.0 {
        return Err(Error::SingularCovariance(top));
    }
    let floor = SPD_REPAIR_FLOOR * top;
    let (cov, repaired) = if bottom <= floor {
        if !options.spd_repair {
            return Err(Error::SingularCovariance(bottom));
        }
        let clipped = spectrum.values.map(|v| v.max(floor));
        let q = &spectrum.vectors;
        let rebuilt = q * DMatrix::from_diagonal(&clipped) * q.transpose();
        (CovMatrix::new(rebuilt)?, true)
    } else {
        (CovMatrix::new(sample)?, false)
    };
    Ok(Moments { assets: panel.assets().to_vec(), alpha, cov, repaired })
}
