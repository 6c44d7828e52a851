//! Alpha-weight angle and its spectral lower bounds.
//!
//! For any `theta` proportional to `inv(S) a`, `cos(a, theta)` is bounded
//! below by `2 sqrt(k) / (k + 1)` with `k` the condition number of `S`
//! (Kantorovich). Gearing-constrained portfolios `theta = inv(S) z` only obey
//! the weaker Bauer-Householder bound, where `k` is inflated by
//! `(1 + sin psi) / (1 - sin psi)` and `psi` bounds the angle between
//! `S^(-1/2) a` and `S^(-1/2) z`.

use std::f64::consts::FRAC_PI_2;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::moments::{AlphaVector, CovMatrix};
use crate::solvers::Portfolio;

/// Cosine of the angle between two vectors, clamped to [-1, 1].
pub fn cosine(x: &DVector<f64>, y: &DVector<f64>, what: &'static str) -> Result<f64> {
    let nx = x.norm();
    let ny = y.norm();
    if nx == 0.0 || ny == 0.0 || !nx.is_finite() || !ny.is_finite() {
        return Err(Error::ZeroVector(what));
    }
    Ok((x.dot(y) / (nx * ny)).clamp(-1.0, 1.0))
}

/// `cos(phi) = a'theta / (|a| |theta|)`.
pub fn alpha_angle(alpha: &AlphaVector, theta: &DVector<f64>) -> Result<f64> {
    if alpha.dim() != theta.len() {
        return Err(Error::InvalidDimension("alpha vs theta".into()));
    }
    cosine(alpha.as_vector(), theta, "alpha-angle")
}

/// The angle itself in radians.
pub fn angle_radians(cos_phi: f64) -> f64 {
    cos_phi.clamp(-1.0, 1.0).acos()
}

/// `2 sqrt(k) / (k + 1)`
pub fn kantorovich_bound(kappa: f64) -> Result<f64> {
    if !kappa.is_finite() || kappa < 1.0 {
        return Err(Error::InvalidKappa(kappa));
    }
    Ok(2.0 * kappa.sqrt() / (kappa + 1.0))
}

/// Returns `(kappa_psi, bound)` with
/// `kappa_psi = k (1 + sin psi) / (1 - sin psi)` and
/// `bound = sqrt(4 / (kappa_psi + 2 + 1/kappa_psi))`.
pub fn bauer_householder_bound(kappa: f64, psi: f64) -> Result<(f64, f64)> {
    if !(0.0..FRAC_PI_2).contains(&psi) {
        return Err(Error::InvalidPsi(psi));
    }
    let s = psi.sin();
    bauer_householder_from_sin(kappa, s)
}

fn bauer_householder_from_sin(kappa: f64, sin_psi: f64) -> Result<(f64, f64)> {
    let kappa_psi = kappa * (1.0 + sin_psi) / (1.0 - sin_psi);
    Ok((kappa_psi, kantorovich_bound(kappa_psi)?))
}

/// Realised alpha-angle of a portfolio against the applicable lower bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub cos_phi: f64,
    pub kappa: f64,
    pub bound_kantorovich: f64,
    pub psi: Option<f64>,
    pub kappa_psi: Option<f64>,
    pub bound_bh: Option<f64>,
    pub slack: f64,
}

/// Relative tolerance for deciding that `theta` is parallel to `inv(S) a`.
const COLLINEAR_TOL: f64 = 1e-12;

/// Compares `cos(a, theta)` with its lower bound.
///
/// When `theta` is parallel to `inv(S) a` the Kantorovich bound applies and
/// `psi` stays empty. Otherwise `theta = inv(S) z` and the Bauer-Householder
/// bound is used: with `psi` supplied it is taken as is; without it the
/// smallest admissible `psi`, the angle between `S^(-1/2) a` and
/// `S^(1/2) theta`, is computed. When that angle reaches `pi/2` the bound is
/// vacuous: `psi` stays empty, `bound_bh` is zero and the slack is `cos_phi`.
pub fn verify_bound(
    alpha: &AlphaVector,
    cov: &CovMatrix,
    theta: &DVector<f64>,
    psi: Option<f64>,
) -> Result<BoundReport> {
    if alpha.dim() != cov.dim() {
        return Err(Error::InvalidDimension("alpha vs covariance".into()));
    }
    let cos_phi = alpha_angle(alpha, theta)?;
    let kappa = cov.condition_number();
    let bound_kantorovich = kantorovich_bound(kappa)?;

    let direction = cov.solve(alpha.as_vector());
    let parallel = cosine(&direction, theta, "theta")?;
    if psi.is_none() && parallel.abs() >= 1.0 - COLLINEAR_TOL {
        // a theta pointing against inv(S) a still has |cos| above the bound
        return Ok(BoundReport {
            cos_phi,
            kappa,
            bound_kantorovich,
            psi: None,
            kappa_psi: None,
            bound_bh: None,
            slack: cos_phi.abs() - bound_kantorovich,
        });
    }

    let (psi, sin_psi) = match psi {
        Some(psi) => {
            if !(0.0..FRAC_PI_2).contains(&psi) {
                return Err(Error::InvalidPsi(psi));
            }
            (Some(psi), psi.sin())
        }
        None => {
            let x = cov.apply_spectral(alpha.as_vector(), |rho| 1.0 / rho.sqrt());
            let y = cov.apply_spectral(theta, f64::sqrt);
            let c = cosine(&x, &y, "transformed pair")?;
            if c <= 0.0 {
                (None, 1.0)
            } else {
                // sin from the rejection of x on y keeps precision near psi = 0
                let yhat = &y / y.norm();
                let sin = ((&x - &yhat * x.dot(&yhat)).norm() / x.norm()).min(1.0);
                (Some(sin.asin()), sin)
            }
        }
    };
    if psi.is_none() {
        return Ok(BoundReport {
            cos_phi,
            kappa,
            bound_kantorovich,
            psi: None,
            kappa_psi: None,
            bound_bh: Some(0.0),
            slack: cos_phi,
        });
    }
    let (kappa_psi, bound_bh) = bauer_householder_from_sin(kappa, sin_psi)?;
    Ok(BoundReport {
        cos_phi,
        kappa,
        bound_kantorovich,
        psi,
        kappa_psi: Some(kappa_psi),
        bound_bh: Some(bound_bh),
        slack: cos_phi - bound_bh,
    })
}

/// An `(a, theta)` pair that attains a lower bound with equality.
#[derive(Debug, Clone, PartialEq)]
pub struct WorstCasePair {
    pub alpha: AlphaVector,
    pub theta: DVector<f64>,
    pub achieved_cos: f64,
    /// Inflation factor `(1 + sin psi) / (1 - sin psi)`; 1 for the
    /// unconstrained construction.
    pub eta: f64,
}

/// `a = sqrt(rho_1) q_1 + sqrt(rho_n) q_n`, `theta = inv(S) a`, which meets
/// the Kantorovich bound exactly. With a flat spectrum the pair is aligned.
pub fn worst_case_unconstrained(cov: &CovMatrix) -> WorstCasePair {
    worst_case_pair(cov, 1.0)
}

/// `a = sqrt(eta rho_1) q_1 + sqrt(rho_n) q_n`,
/// `theta = q_1 / sqrt(eta rho_1) + q_n / sqrt(rho_n)`, attaining
/// `2 sqrt(eta k) / (eta k + 1)`.
pub fn worst_case_constrained(cov: &CovMatrix, eta: f64) -> Result<WorstCasePair> {
    if !eta.is_finite() || eta < 1.0 {
        return Err(Error::InvalidEta(eta));
    }
    Ok(worst_case_pair(cov, eta))
}

fn worst_case_pair(cov: &CovMatrix, eta: f64) -> WorstCasePair {
    let n = cov.dim();
    let q = cov.eigenvectors();
    let top = eta * cov.max_eigenvalue();
    let bottom = cov.min_eigenvalue();
    let q1 = q.column(0);
    let qn = q.column(n - 1);
    let alpha = q1 * top.sqrt() + qn * bottom.sqrt();
    let theta = q1 / top.sqrt() + qn / bottom.sqrt();
    let alpha = AlphaVector::from_vector(alpha).expect("finite construction");
    let achieved_cos = alpha_angle(&alpha, &theta).expect("nonzero construction");
    WorstCasePair { alpha, theta, achieved_cos, eta }
}

/// `sqrt(rho_n rho_1) / ((rho_n + rho_1) / 2)`, the best cosine a spectrum
/// can guarantee.
pub fn minimax_degeneracy(cov: &CovMatrix) -> f64 {
    let hi = cov.max_eigenvalue();
    let lo = cov.min_eigenvalue();
    (lo * hi).sqrt() / (0.5 * (lo + hi))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngleDecomposition {
    pub cos_phi: f64,
    /// Angle between alpha and the GMV portfolio, radians.
    pub phi0: f64,
    /// Angle between alpha and the risky portfolio, radians.
    pub phi1: f64,
    pub residual: f64,
}

/// Splits `cos(a, theta)` for `theta = (g0 - w) theta_0 + w theta_a` into
/// the GMV and risky contributions weighted by their relative lengths.
pub fn angle_decomposition(
    alpha: &AlphaVector,
    theta0: &Portfolio,
    theta_alpha: &Portfolio,
    g0: f64,
    w: f64,
) -> Result<AngleDecomposition> {
    let t0 = theta0.weights();
    let ta = theta_alpha.weights();
    let theta = t0 * (g0 - w) + ta * w;
    let norm = theta.norm();
    if norm == 0.0 {
        return Err(Error::ZeroVector("combined portfolio"));
    }
    let cos_phi = alpha_angle(alpha, &theta)?;
    let cos0 = alpha_angle(alpha, t0)?;
    let cos1 = alpha_angle(alpha, ta)?;
    let recombined = (g0 - w) * (t0.norm() / norm) * cos0 + w * (ta.norm() / norm) * cos1;
    Ok(AngleDecomposition {
        cos_phi,
        phi0: angle_radians(cos0),
        phi1: angle_radians(cos1),
        residual: (cos_phi - recombined).abs(),
    })
}
