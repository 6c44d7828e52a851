//! Alpha-angle shrinkage and the robust (uncertainty-ball) objective.
//!
//! Shrinking `S` towards the identity lowers its condition number and turns
//! `inv(S) a` towards `a`. In the angle-targeted mode the convex weight on
//! the identity is `k / k0`, with `k0` the cosine between `a` and `inv(S) a`
//! of the unshrunk covariance.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::{alpha_angle, cosine, kantorovich_bound};
use crate::moments::{AlphaVector, CovMatrix};
use crate::solvers::{self, optimal_risky_portfolio, Portfolio, Program, ProgramParams};

/// Shrinkage towards a structured target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ShrinkageSpec {
    /// `(k/k0) I + (1 - k/k0) S` with `0 <= k < k0`.
    AngleTargeted { k: f64, k0: f64 },
    /// `q I + (1 - q) S` with `q` in [0, 1].
    Identity { q: f64 },
    /// `q diag(S) + (1 - q) S` with `q` in [0, 1].
    Diagonal { q: f64 },
}

/// Cosine between `a` and `inv(S) a`; the ceiling `k0` for angle-targeted
/// shrinkage.
pub fn risky_direction_cosine(alpha: &AlphaVector, cov: &CovMatrix) -> Result<f64> {
    alpha_angle(alpha, &cov.solve(alpha.as_vector()))
}

impl ShrinkageSpec {
    pub fn angle_targeted(k: f64, alpha: &AlphaVector, cov: &CovMatrix) -> Result<Self> {
        let k0 = risky_direction_cosine(alpha, cov)?;
        let spec = ShrinkageSpec::AngleTargeted { k, k0 };
        spec.validate()?;
        Ok(spec)
    }

    pub fn identity(q: f64) -> Result<Self> {
        let spec = ShrinkageSpec::Identity { q };
        spec.validate()?;
        Ok(spec)
    }

    pub fn diagonal(q: f64) -> Result<Self> {
        let spec = ShrinkageSpec::Diagonal { q };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ShrinkageSpec::AngleTargeted { k, k0 } => {
                if !(0.0..k0).contains(&k) || k0 > 1.0 {
                    return Err(Error::InvalidK { value: k, limit: k0 });
                }
            }
            ShrinkageSpec::Identity { q } | ShrinkageSpec::Diagonal { q } => {
                if !(0.0..=1.0).contains(&q) {
                    return Err(Error::InvalidK { value: q, limit: 1.0 });
                }
            }
        }
        Ok(())
    }

    /// Convex weight placed on the target matrix.
    pub fn weight(&self) -> f64 {
        match *self {
            ShrinkageSpec::AngleTargeted { k, k0 } => k / k0,
            ShrinkageSpec::Identity { q } | ShrinkageSpec::Diagonal { q } => q,
        }
    }

    /// The user-facing intensity (`k` or `q`).
    pub fn intensity(&self) -> f64 {
        match *self {
            ShrinkageSpec::AngleTargeted { k, .. } => k,
            ShrinkageSpec::Identity { q } | ShrinkageSpec::Diagonal { q } => q,
        }
    }

    fn tag(&self, p: Portfolio) -> Portfolio {
        match *self {
            ShrinkageSpec::AngleTargeted { k, k0 } => p.with_param("k", k).with_param("k0", k0),
            ShrinkageSpec::Identity { q } => p.with_param("q", q),
            ShrinkageSpec::Diagonal { q } => p.with_param("q_diag", q),
        }
    }
}

/// The regularised covariance for a shrinkage spec.
pub fn shrink_covariance(cov: &CovMatrix, spec: &ShrinkageSpec) -> Result<CovMatrix> {
    spec.validate()?;
    let w = spec.weight();
    if w == 0.0 {
        return Ok(cov.clone());
    }
    let n = cov.dim();
    let target = match spec {
        ShrinkageSpec::AngleTargeted { .. } | ShrinkageSpec::Identity { .. } => {
            DMatrix::identity(n, n)
        }
        ShrinkageSpec::Diagonal { .. } => DMatrix::from_diagonal(&cov.matrix().diagonal()),
    };
    let shrunk = target * w + cov.matrix() * (1.0 - w);
    CovMatrix::new(shrunk).map_err(|e| match e {
        Error::SingularCovariance(_) => Error::ShrinkBrokeSpd,
        other => other,
    })
}

/// Fully invested risky portfolio of the shrunk covariance.
pub fn shrunk_risky_portfolio(
    alpha: &AlphaVector,
    cov: &CovMatrix,
    spec: &ShrinkageSpec,
) -> Result<Portfolio> {
    let shrunk = shrink_covariance(cov, spec)?;
    Ok(spec.tag(optimal_risky_portfolio(alpha, &shrunk)?))
}

/// GMV portfolio of the shrunk covariance; `1/n` at full identity shrink.
pub fn shrunk_gmv_portfolio(cov: &CovMatrix, spec: &ShrinkageSpec) -> Result<Portfolio> {
    let shrunk = shrink_covariance(cov, spec)?;
    Ok(spec.tag(solvers::gmv_portfolio(&shrunk)))
}

/// Any closed-form program re-solved on the shrunk covariance.
pub fn solve_robust(
    program: Program,
    alpha: &AlphaVector,
    cov: &CovMatrix,
    spec: &ShrinkageSpec,
    params: &ProgramParams,
) -> Result<Portfolio> {
    let shrunk = shrink_covariance(cov, spec)?;
    Ok(spec.tag(solvers::solve(program, alpha, &shrunk, params)?))
}

/// Worst-case expected return over the ball of radius `k |a|` around `a`:
/// `a'theta - k |a| |theta|`.
pub fn robust_alpha(alpha: &AlphaVector, theta: &DVector<f64>, k: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&k) {
        return Err(Error::InvalidK { value: k, limit: 1.0 });
    }
    if alpha.dim() != theta.len() {
        return Err(Error::InvalidDimension("alpha vs theta".into()));
    }
    let a = alpha.as_vector();
    Ok(a.dot(theta) - k * a.norm() * theta.norm())
}

/// Program VII at full identity shrink: `g0 e + (a - mean(a) 1) / gamma`
/// with `e = 1/n`.
pub fn max_shrink_mean_variance(alpha: &AlphaVector, gamma: f64, g0: f64) -> Result<Portfolio> {
    if !gamma.is_finite() || gamma <= 0.0 {
        return Err(Error::NonPositiveParameter { name: "gamma", value: gamma });
    }
    if !g0.is_finite() {
        return Err(Error::NonFiniteData("g0".into()));
    }
    let n = alpha.dim() as f64;
    let mean = alpha.mean();
    let w = alpha.as_vector().map(|a| g0 / n + (a - mean) / gamma);
    Ok(Portfolio::new(w, Program::MaxShrinkVII).with_param("gamma", gamma).with_param("g0", g0))
}

/// Program VI at full identity shrink:
/// `g0 e + (alpha0 - g0 mean(a)) / (n var(a)) (a - mean(a) 1)`, where
/// `var(a) = a'a/n - mean(a)^2`.
pub fn max_shrink_min_risk(alpha: &AlphaVector, alpha0: f64, g0: f64) -> Result<Portfolio> {
    if !alpha0.is_finite() || !g0.is_finite() {
        return Err(Error::NonFiniteData("alpha0/g0".into()));
    }
    let n = alpha.dim() as f64;
    let mean = alpha.mean();
    let dev = alpha.as_vector().add_scalar(-mean);
    let var = dev.norm_squared() / n;
    if var <= solvers::DEGENERACY_TOL * alpha.as_vector().norm_squared() / n || var == 0.0 {
        return Err(Error::DegenerateAlpha("alpha has zero cross-sectional variance".into()));
    }
    let omega = (alpha0 - g0 * mean) / (n * var);
    let w = dev * omega;
    let w = w.add_scalar(g0 / n);
    Ok(Portfolio::new(w, Program::MaxShrinkVI).with_param("alpha0", alpha0).with_param("g0", g0))
}

/// `inv(w I + (1 - w) S) a` through the spectrum of `S`.
fn identity_shrunk_solve(cov: &CovMatrix, alpha: &DVector<f64>, w: f64) -> DVector<f64> {
    cov.apply_spectral(alpha, |rho| 1.0 / (w + (1.0 - w) * rho))
}

const IMPLICIT_MAX_ITER: usize = 200;

/// Solves the implicit robust portfolio
/// `theta = [ (k|a||theta|/s_p) I + ((a'theta - k|a||theta|)/s_p) S ]^-1 a`
/// (fully invested), using its reduction to
/// `theta ~ inv((k/c) I + (1 - k/c) S) a` where `c` is the cosine between
/// `a` and `theta` itself. The scalar `c` is found by bisection on
/// `(k, 1]`; the map `c -> cos(a, theta(c))` is decreasing, so the root is
/// unique.
pub fn implicit_shrunk_theta(alpha: &AlphaVector, cov: &CovMatrix, k: f64) -> Result<Portfolio> {
    if alpha.dim() != cov.dim() {
        return Err(Error::InvalidDimension("alpha vs covariance".into()));
    }
    let k0 = risky_direction_cosine(alpha, cov)?;
    if !(0.0..k0).contains(&k) {
        return Err(Error::InvalidK { value: k, limit: k0 });
    }
    let a = alpha.as_vector();
    let direction_cos = |c: f64| -> Result<f64> {
        cosine(a, &identity_shrunk_solve(cov, a, k / c), "implicit direction")
    };

    let c = if k == 0.0 {
        k0
    } else {
        let (mut lo, mut hi) = (k, 1.0);
        if direction_cos(hi)? >= hi {
            hi
        } else {
            for _ in 0..IMPLICIT_MAX_ITER {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if direction_cos(mid)? > mid {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        }
    };
    let raw = identity_shrunk_solve(cov, a, k / c);
    let s = raw.sum();
    if s.abs() <= solvers::DEGENERACY_TOL * raw.abs().sum() {
        return Err(Error::ZeroB(s));
    }
    Ok(Portfolio::new(raw / s, Program::ImplicitShrunk)
        .with_param("k", k)
        .with_param("k0", k0)
        .with_param("cos_phi", c))
}

/// One row of a shrinkage sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub intensity: f64,
    pub kappa_tilde: f64,
    pub cos_phi_risky: f64,
    pub cos_phi_optimal: f64,
    pub bound_kantorovich: f64,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShrinkageMode {
    AngleTargeted,
    Identity,
    Diagonal,
}

impl ShrinkageMode {
    pub fn spec(self, intensity: f64, alpha: &AlphaVector, cov: &CovMatrix) -> Result<ShrinkageSpec> {
        match self {
            ShrinkageMode::AngleTargeted => ShrinkageSpec::angle_targeted(intensity, alpha, cov),
            ShrinkageMode::Identity => ShrinkageSpec::identity(intensity),
            ShrinkageMode::Diagonal => ShrinkageSpec::diagonal(intensity),
        }
    }
}

/// Re-solves `program` along a grid of shrinkage intensities.
pub fn shrink_sweep(
    alpha: &AlphaVector,
    cov: &CovMatrix,
    mode: ShrinkageMode,
    grid: &[f64],
    program: Program,
    params: &ProgramParams,
) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(Error::EmptyGrid("shrinkage"));
    }
    grid.iter()
        .map(|&x| {
            let spec = mode.spec(x, alpha, cov)?;
            let shrunk = shrink_covariance(cov, &spec)?;
            let risky = optimal_risky_portfolio(alpha, &shrunk)?;
            let optimal = solvers::solve(program, alpha, &shrunk, params)?;
            let kappa_tilde = shrunk.condition_number();
            Ok(SweepRow {
                intensity: x,
                kappa_tilde,
                cos_phi_risky: alpha_angle(alpha, risky.weights())?,
                cos_phi_optimal: alpha_angle(alpha, optimal.weights())?,
                bound_kantorovich: kantorovich_bound(kappa_tilde)?,
                weights: optimal.weights().iter().copied().collect(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solvers::{geared_mean_variance, geared_min_risk, gmv_portfolio};

    fn close(a: &DVector<f64>, b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn robust_alpha_examples() {
        let alpha = AlphaVector::new(vec![0.1, 0.2]).unwrap();
        let theta = DVector::from_vec(vec![0.0, 1.0]);
        assert_eq!(robust_alpha(&alpha, &theta, 0.0).unwrap(), 0.2);
        let v = robust_alpha(&alpha, &theta, 0.5).unwrap();
        assert!((v - 0.088_196_601_125_010_5).abs() < 1e-15);
        let same = alpha.as_vector().clone();
        let v = robust_alpha(&alpha, &same, 0.3).unwrap();
        assert!((v - 0.7 * 0.05).abs() < 1e-15);
        assert_eq!(robust_alpha(&alpha, &theta, 1.0).unwrap_err().name(), "InvalidK");
    }

    #[test]
    fn shrink_examples() {
        let cov = CovMatrix::from_diagonal(&[4.0, 1.0]).unwrap();
        let alpha = AlphaVector::new(vec![0.1, 0.2]).unwrap();
        let same = shrink_covariance(&cov, &ShrinkageSpec::angle_targeted(0.0, &alpha, &cov).unwrap())
            .unwrap();
        assert_eq!(same.matrix(), cov.matrix());
        let eye = shrink_covariance(&cov, &ShrinkageSpec::identity(1.0).unwrap()).unwrap();
        assert_eq!(eye.matrix(), &DMatrix::identity(2, 2));
        let half = shrink_covariance(&cov, &ShrinkageSpec::identity(0.5).unwrap()).unwrap();
        assert_eq!(half.matrix(), &DMatrix::from_diagonal(&DVector::from_vec(vec![2.5, 1.0])));
        assert_eq!(half.condition_number(), 2.5);
    }

    #[test]
    fn angle_targeted_rejects_k_at_ceiling() {
        let cov = CovMatrix::from_diagonal(&[4.0, 1.0]).unwrap();
        let alpha = AlphaVector::new(vec![0.1, 0.2]).unwrap();
        let k0 = risky_direction_cosine(&alpha, &cov).unwrap();
        let err = ShrinkageSpec::angle_targeted(k0, &alpha, &cov).unwrap_err();
        assert_eq!(err.name(), "InvalidK");
        assert!(ShrinkageSpec::identity(1.5).is_err());
        assert!(ShrinkageSpec::diagonal(-0.1).is_err());
    }

    #[test]
    fn diagonal_target_keeps_variances() {
        let cov = CovMatrix::from_rows(&[vec![2.0, 0.8], vec![0.8, 1.0]]).unwrap();
        let s = shrink_covariance(&cov, &ShrinkageSpec::diagonal(1.0).unwrap()).unwrap();
        assert_eq!(s.matrix(), &DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0])));
        let s = shrink_covariance(&cov, &ShrinkageSpec::diagonal(0.5).unwrap()).unwrap();
        assert!(s.condition_number() <= cov.condition_number());
    }

    #[test]
    fn shrunk_portfolios_limits() {
        let cov = CovMatrix::from_diagonal(&[4.0, 1.0]).unwrap();
        let alpha = AlphaVector::new(vec![0.1, 0.2]).unwrap();
        let full = ShrinkageSpec::identity(1.0).unwrap();
        let g = shrunk_gmv_portfolio(&cov, &full).unwrap();
        assert!(close(g.weights(), &[0.5, 0.5], 1e-15));
        let r = shrunk_risky_portfolio(&alpha, &cov, &full).unwrap();
        assert!(close(r.weights(), &[1.0 / 3.0, 2.0 / 3.0], 1e-15));

        let none = ShrinkageSpec::identity(0.0).unwrap();
        let g = shrunk_gmv_portfolio(&cov, &none).unwrap();
        assert_eq!(g.weights(), gmv_portfolio(&cov).weights());

        let half = ShrinkageSpec::identity(0.5).unwrap();
        let g = shrunk_gmv_portfolio(&cov, &half).unwrap();
        assert!(close(g.weights(), &[0.4 / 1.4, 1.0 / 1.4], 1e-15));

        let mut last = -1.0;
        for q in [0.0, 0.5, 1.0] {
            let r = shrunk_risky_portfolio(&alpha, &cov, &ShrinkageSpec::identity(q).unwrap())
                .unwrap();
            let c = alpha_angle(&alpha, r.weights()).unwrap();
            assert!(c >= last - 1e-12);
            last = c;
        }
    }

    #[test]
    fn robust_solve_delegates() {
        let cov = CovMatrix::from_rows(&[vec![3.0, 0.5], vec![0.5, 1.0]]).unwrap();
        let alpha = AlphaVector::new(vec![0.1, 0.2]).unwrap();
        let params = ProgramParams { gamma: Some(1.0), g0: Some(1.0), ..Default::default() };
        let zero = ShrinkageSpec::identity(0.0).unwrap();
        let p = solve_robust(Program::VII, &alpha, &cov, &zero, &params).unwrap();
        assert_eq!(p.weights(), geared_mean_variance(&alpha, &cov, 1.0, 1.0).unwrap().weights());

        let full = ShrinkageSpec::identity(1.0).unwrap();
        let p = solve_robust(Program::VII, &alpha, &cov, &full, &params).unwrap();
        let limit = max_shrink_mean_variance(&alpha, 1.0, 1.0).unwrap();
        assert!((p.weights() - limit.weights()).amax() < 1e-12);

        let eye = CovMatrix::identity(2).unwrap();
        let params = ProgramParams { alpha0: Some(0.2), g0: Some(1.0), ..Default::default() };
        let p = solve_robust(Program::VI, &alpha, &eye, &full, &params).unwrap();
        assert!(close(p.weights(), &[0.0, 1.0], 1e-12));
    }

    #[test]
    fn max_shrink_examples() {
        let alpha = AlphaVector::new(vec![0.1, 0.2]).unwrap();
        let p = max_shrink_mean_variance(&alpha, 1.0, 1.0).unwrap();
        assert!(close(p.weights(), &[0.45, 0.55], 1e-15));
        let p = max_shrink_mean_variance(&alpha, 1.0, 0.0).unwrap();
        assert!(close(p.weights(), &[-0.05, 0.05], 1e-15));
        assert!(p.gearing().abs() < 1e-15);
        let flat = AlphaVector::new(vec![0.3, 0.3, 0.3]).unwrap();
        let p = max_shrink_mean_variance(&flat, 2.0, 1.5).unwrap();
        assert_eq!(p.weights(), &DVector::from_element(3, 0.5));

        let p = max_shrink_min_risk(&alpha, 0.2, 1.0).unwrap();
        assert!(close(p.weights(), &[0.0, 1.0], 1e-12));
        let p = max_shrink_min_risk(&alpha, 0.15, 1.0).unwrap();
        assert!(close(p.weights(), &[0.5, 0.5], 1e-15));
        let eye = CovMatrix::identity(2).unwrap();
        let q = geared_min_risk(&alpha, &eye, 0.2, 1.0).unwrap();
        assert!((q.weights() - max_shrink_min_risk(&alpha, 0.2, 1.0).unwrap().weights()).amax() < 1e-12);
        assert_eq!(max_shrink_min_risk(&flat, 0.2, 1.0).unwrap_err().name(), "DegenerateAlpha");
    }

    #[test]
    fn implicit_limits() {
        let cov = CovMatrix::from_rows(&[vec![3.0, 0.5], vec![0.5, 1.0]]).unwrap();
        let alpha = AlphaVector::new(vec![0.1, 0.2]).unwrap();
        let p = implicit_shrunk_theta(&alpha, &cov, 0.0).unwrap();
        let risky = optimal_risky_portfolio(&alpha, &cov).unwrap();
        assert!((p.weights() - risky.weights()).amax() < 1e-15);

        let eye = CovMatrix::identity(2).unwrap();
        let p = implicit_shrunk_theta(&alpha, &eye, 0.6).unwrap();
        assert!(close(p.weights(), &[1.0 / 3.0, 2.0 / 3.0], 1e-14));

        let k0 = risky_direction_cosine(&alpha, &cov).unwrap();
        assert!(implicit_shrunk_theta(&alpha, &cov, k0).is_err());
    }
}
