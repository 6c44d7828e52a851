//! Mean-variance portfolio with gearing and an effective-number-of-bets
//! constraint:
//!
//! ```text
//!     max  a'theta - gamma/2 theta' S theta
//!     s.t. 1'theta = g0,  theta'theta = 1/n0
//! ```
//!
//! The feasible set is the sphere of radius `r = sqrt(1/n0 - g0^2/n)`
//! centred at `g0/n 1` inside the plane `1'theta = g0`. Writing
//! `theta = g0/n 1 + P u` with `P` an orthonormal basis of that plane, the
//! problem becomes a trust-region problem on `|u| = r` whose global
//! maximiser solves `(gamma P'SP + mu I) u = P'(a - gamma S g0/n 1)` with
//! `gamma P'SP + mu I` positive semidefinite. The shift `mu` is the root of
//! the secular equation `|u(mu)| = r` to the right of the smallest pole.
//!
//! Multipliers are reported for the Lagrangian
//! `-a'theta + gamma/2 theta'S theta - l1 (theta'theta - 1/n0) - l2 (1'theta - g0)`
//! differentiated literally, so `l1 = -mu / 2` and stationarity reads
//! `-a + gamma S theta - 2 l1 theta - l2 1 = 0`. In the regularised reading
//! `theta = (mu I + gamma S)^-1 (a + l2 1)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::moments::{spectral_decompose, AlphaVector, CovMatrix};
use crate::solvers::{Portfolio, Program};

pub const SPHERE_TOL: f64 = 1e-8;
pub const GEARING_TOL: f64 = 1e-10;
pub const STATIONARITY_TOL: f64 = 1e-8;
const MAX_ITER: usize = 200;
const MAX_DOUBLINGS: usize = 60;
const BRACKET_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct QoqcProblem {
    pub alpha: AlphaVector,
    pub cov: CovMatrix,
    pub gamma: f64,
    pub g0: f64,
    pub n0: f64,
}

/// A KKT point found on the way; the solution is the best of them.
#[derive(Debug, Clone, PartialEq)]
pub struct KktCandidate {
    pub weights: DVector<f64>,
    pub shift: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QoqcSolution {
    pub weights: DVector<f64>,
    /// Multiplier of `theta'theta = 1/n0` (literal Lagrangian convention).
    pub lambda1: f64,
    /// Multiplier of `1'theta = g0`.
    pub lambda2: f64,
    /// `mu = -2 lambda1`, the ridge added to `gamma S`.
    pub shift: f64,
    pub objective: f64,
    /// Max-norm of `-a + gamma S theta - 2 lambda1 theta - lambda2 1`.
    pub kkt_residual: f64,
    /// Set when `g0^2/n = 1/n0` and `g0/n 1` is the only feasible point.
    pub boundary: bool,
    pub candidates: Vec<KktCandidate>,
}

impl QoqcSolution {
    pub fn to_portfolio(&self, problem: &QoqcProblem) -> Portfolio {
        Portfolio::new(self.weights.clone(), Program::Qoqc)
            .with_param("gamma", problem.gamma)
            .with_param("g0", problem.g0)
            .with_param("n0", problem.n0)
            .with_param("lambda1", self.lambda1)
            .with_param("lambda2", self.lambda2)
    }
}

/// Orthonormal basis (as columns) of the complement of `1`, taken from a
/// Householder reflection that maps `e_1` onto `1/sqrt(n)`.
fn plane_basis(n: usize) -> DMatrix<f64> {
    let mut v = DVector::from_element(n, -1.0 / (n as f64).sqrt());
    v[0] += 1.0;
    let h = DMatrix::identity(n, n) - &v * v.transpose() * (2.0 / v.norm_squared());
    h.columns(1, n - 1).into_owned()
}

fn objective(problem: &QoqcProblem, theta: &DVector<f64>) -> f64 {
    theta.dot(problem.alpha.as_vector()) - 0.5 * problem.gamma * problem.cov.quad_form(theta)
}

/// `(multipliers, residual)` for a candidate `theta` and shift `mu`.
fn multipliers(problem: &QoqcProblem, theta: &DVector<f64>, mu: f64) -> (f64, f64, f64) {
    let g = problem.cov.mul(theta) * problem.gamma + theta * mu - problem.alpha.as_vector();
    let lambda2 = g.mean();
    let residual = g.add_scalar(-lambda2).amax();
    (-0.5 * mu, lambda2, residual)
}

/// Secular equation in the eigenbasis of the reduced Hessian.
struct Secular {
    /// `gamma` times eigenvalues of `P'SP`, ascending.
    poles: Vec<f64>,
    /// Right-hand side in the same eigenbasis.
    rhs: Vec<f64>,
    radius2: f64,
}

impl Secular {
    fn norm2(&self, mu: f64) -> f64 {
        self.poles.iter().zip(&self.rhs).map(|(p, b)| (b / (p + mu)).powi(2)).sum()
    }

    fn h(&self, mu: f64) -> f64 {
        self.norm2(mu) - self.radius2
    }

    /// Newton step on `1/|u| - 1/r`, which is close to linear in `mu`.
    fn newton(&self, mu: f64) -> f64 {
        let n2 = self.norm2(mu);
        let d3: f64 = self.poles.iter().zip(&self.rhs).map(|(p, b)| b * b / (p + mu).powi(3)).sum();
        let norm = n2.sqrt();
        let phi = 1.0 / norm - 1.0 / self.radius2.sqrt();
        let dphi = d3 / (norm * n2);
        mu - phi / dphi
    }

    /// Root of `h` in `(lo, hi)` with `h(lo) > 0 > h(hi)`.
    fn root_in(&self, mut lo: f64, mut hi: f64) -> Result<f64> {
        let mut mu = 0.5 * (lo + hi);
        for _ in 0..MAX_ITER {
            let val = self.h(mu);
            if val.abs() <= 1e-15 * self.radius2 {
                return Ok(mu);
            }
            if val > 0.0 {
                lo = mu;
            } else {
                hi = mu;
            }
            if hi - lo <= BRACKET_TOL * mu.abs().max(1.0) {
                return Ok(0.5 * (lo + hi));
            }
            let step = self.newton(mu);
            mu = if step.is_finite() && step > lo && step < hi { step } else { 0.5 * (lo + hi) };
        }
        Err(Error::ToleranceNotMet(format!(
            "secular equation bracket [{lo:e}, {hi:e}] after {MAX_ITER} iterations"
        )))
    }
}

/// Solves the diversity-constrained problem.
pub fn solve_qoqc(problem: &QoqcProblem) -> Result<QoqcSolution> {
    let n = problem.cov.dim();
    if problem.alpha.dim() != n {
        return Err(Error::InvalidDimension("alpha vs covariance".into()));
    }
    if !problem.gamma.is_finite() || problem.gamma <= 0.0 {
        return Err(Error::NonPositiveParameter { name: "gamma", value: problem.gamma });
    }
    if !problem.g0.is_finite() {
        return Err(Error::NonFiniteData("g0".into()));
    }
    if !(problem.n0 >= 1.0 && problem.n0 <= n as f64) {
        return Err(Error::Infeasible(format!(
            "effective bets n0 = {} must lie in [1, {n}]",
            problem.n0
        )));
    }
    let nf = n as f64;
    let target = 1.0 / problem.n0;
    let radius2 = target - problem.g0 * problem.g0 / nf;
    if radius2 < -1e-12 * target {
        return Err(Error::Infeasible(format!(
            "g0^2/n = {} exceeds 1/n0 = {target}",
            problem.g0 * problem.g0 / nf
        )));
    }
    let centre = DVector::from_element(n, problem.g0 / nf);
    if radius2 <= 1e-12 * target {
        let (lambda1, lambda2, kkt_residual) = multipliers(problem, &centre, 0.0);
        let objective = objective(problem, &centre);
        return Ok(QoqcSolution {
            candidates: vec![KktCandidate { weights: centre.clone(), shift: 0.0, objective }],
            weights: centre,
            lambda1,
            lambda2,
            shift: 0.0,
            objective,
            kkt_residual,
            boundary: true,
        });
    }

    let gamma = problem.gamma;
    let basis = plane_basis(n);
    let reduced = basis.tr_mul(&(problem.cov.matrix() * &basis));
    let reduced = (&reduced + reduced.transpose()) * 0.5;
    let spectrum = spectral_decompose(&reduced)?;
    // ascending order for the secular equation
    let m = n - 1;
    let vecs = DMatrix::from_fn(m, m, |i, j| spectrum.vectors[(i, m - 1 - j)]);
    let poles: Vec<f64> = (0..m).map(|j| gamma * spectrum.values[m - 1 - j]).collect();
    let b = basis.tr_mul(&(problem.alpha.as_vector() - problem.cov.mul(&centre) * gamma));
    let rhs: Vec<f64> = vecs.tr_mul(&b).iter().copied().collect();
    let secular = Secular { poles: poles.clone(), rhs: rhs.clone(), radius2 };

    let build = |coords: DVector<f64>, mu: f64| -> KktCandidate {
        let u = &vecs * coords;
        let theta = &centre + &basis * u;
        let objective = objective(problem, &theta);
        KktCandidate { weights: theta, shift: mu, objective }
    };
    let coords_at = |mu: f64| -> DVector<f64> {
        let mut c = DVector::from_iterator(m, poles.iter().zip(&rhs).map(|(p, b)| b / (p + mu)));
        // land exactly on the sphere
        let norm = c.norm();
        if norm > 0.0 {
            c *= radius2.sqrt() / norm;
        }
        c
    };

    let lowest = -poles[0];
    let scale_b = rhs.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut candidates = Vec::new();

    let hard_case = rhs[0].abs() <= 1e-14 * scale_b.max(f64::MIN_POSITIVE) || scale_b == 0.0;
    let rest_norm2: f64 = if hard_case {
        poles.iter().zip(&rhs).skip(1).map(|(p, b)| (b / (p - poles[0])).powi(2)).sum()
    } else {
        f64::INFINITY
    };
    if hard_case && rest_norm2 <= radius2 {
        // the shift sits on the smallest pole; fill the radius along its eigenvector
        let mut c = DVector::zeros(m);
        for j in 1..m {
            if poles[j] > poles[0] {
                c[j] = rhs[j] / (poles[j] - poles[0]);
            }
        }
        c[0] = (radius2 - rest_norm2).max(0.0).sqrt();
        candidates.push(build(c, lowest));
    } else {
        let mut step = lowest.abs().max(scale_b / radius2.sqrt()).max(gamma).max(1.0);
        let mut hi = lowest + step;
        let mut found = false;
        for _ in 0..MAX_DOUBLINGS {
            if secular.h(hi) < 0.0 {
                found = true;
                break;
            }
            step *= 2.0;
            hi = lowest + step;
        }
        if !found {
            return Err(Error::NoRoot(format!(
                "|u(mu)|^2 - r^2 stays positive up to mu = {hi:e} (r^2 = {radius2:e})"
            )));
        }
        let mu = secular.root_in(lowest, hi)?;
        candidates.push(build(coords_at(mu), mu));
    }

    // the next interval between poles can hold two more KKT points
    if m >= 2 && poles[1] > poles[0] * (1.0 + 1e-12) {
        let (mut a, mut b2) = (-poles[1], -poles[0]);
        for _ in 0..MAX_ITER {
            let t1 = a + (b2 - a) / 3.0;
            let t2 = b2 - (b2 - a) / 3.0;
            if secular.h(t1) < secular.h(t2) {
                b2 = t2;
            } else {
                a = t1;
            }
        }
        let valley = 0.5 * (a + b2);
        if secular.h(valley) < 0.0 {
            for (lo, hi) in [(valley, -poles[0]), (-poles[1], valley)] {
                if let Ok(mu) = bisect_sign_change(&secular, lo, hi) {
                    candidates.push(build(coords_at(mu), mu));
                }
            }
        }
    }

    let best = candidates
        .iter()
        .max_by(|x, y| x.objective.total_cmp(&y.objective))
        .expect("at least one candidate")
        .clone();
    let (lambda1, lambda2, kkt_residual) = multipliers(problem, &best.weights, best.shift);
    let sol = QoqcSolution {
        weights: best.weights,
        lambda1,
        lambda2,
        shift: best.shift,
        objective: best.objective,
        kkt_residual,
        boundary: false,
        candidates,
    };
    check_solution(problem, &sol)?;
    Ok(sol)
}

fn bisect_sign_change(secular: &Secular, mut lo: f64, mut hi: f64) -> Result<f64> {
    let lo_sign = secular.h(lo) > 0.0;
    for _ in 0..MAX_ITER {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if (secular.h(mid) > 0.0) == lo_sign {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mid = 0.5 * (lo + hi);
    if secular.h(mid).is_finite() {
        Ok(mid)
    } else {
        Err(Error::NoRoot("secondary branch".into()))
    }
}

fn check_solution(problem: &QoqcProblem, sol: &QoqcSolution) -> Result<()> {
    let sphere = (sol.weights.norm_squared() - 1.0 / problem.n0).abs();
    let gearing = (sol.weights.sum() - problem.g0).abs();
    if sphere > SPHERE_TOL || gearing > GEARING_TOL || sol.kkt_residual > STATIONARITY_TOL {
        return Err(Error::ToleranceNotMet(format!(
            "sphere {sphere:e}, gearing {gearing:e}, stationarity {:e}",
            sol.kkt_residual
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn problem(alpha: Vec<f64>, cov: CovMatrix, gamma: f64, g0: f64, n0: f64) -> QoqcProblem {
        QoqcProblem { alpha: AlphaVector::new(alpha).unwrap(), cov, gamma, g0, n0 }
    }

    #[test]
    fn basis_is_orthonormal_and_orthogonal_to_ones() {
        for n in 2..7 {
            let p = plane_basis(n);
            assert!((p.tr_mul(&p) - DMatrix::identity(n - 1, n - 1)).amax() < 1e-14);
            assert!(p.tr_mul(&DVector::from_element(n, 1.0)).amax() < 1e-14);
        }
    }

    #[test]
    fn unique_feasible_point() {
        let p = problem(vec![0.1, 0.2], CovMatrix::identity(2).unwrap(), 1.0, 1.0, 2.0);
        let s = solve_qoqc(&p).unwrap();
        assert!(s.boundary);
        assert_eq!(s.weights.as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn two_point_feasible_set_picks_better() {
        let p = problem(vec![0.1, 0.2], CovMatrix::identity(2).unwrap(), 1.0, 1.0, 1.0);
        let s = solve_qoqc(&p).unwrap();
        assert!((s.weights[0]).abs() < 1e-12, "{:?}", s.weights);
        assert!((s.weights[1] - 1.0).abs() < 1e-12);
        assert!(s.kkt_residual < 1e-12);
        assert!((s.shift + 0.9).abs() < 1e-12);
        assert!((s.lambda1 - 0.45).abs() < 1e-12);
    }

    #[test]
    fn infeasible_and_bad_parameters() {
        let cov = CovMatrix::identity(3).unwrap();
        let p = problem(vec![0.1, 0.2, 0.3], cov.clone(), 1.0, 2.0, 3.0);
        assert_eq!(solve_qoqc(&p).unwrap_err().name(), "Infeasible");
        let p = problem(vec![0.1, 0.2, 0.3], cov.clone(), 0.0, 1.0, 2.0);
        assert_eq!(solve_qoqc(&p).unwrap_err().name(), "NonPositiveParameter");
        let p = problem(vec![0.1, 0.2, 0.3], cov, 1.0, 1.0, 4.0);
        assert_eq!(solve_qoqc(&p).unwrap_err().name(), "Infeasible");
    }

    #[test]
    fn interior_solution_satisfies_kkt() {
        let cov = CovMatrix::from_rows(&[
            vec![0.04, 0.006, 0.002],
            vec![0.006, 0.09, 0.01],
            vec![0.002, 0.01, 0.0225],
        ])
        .unwrap();
        let p = problem(vec![0.05, 0.08, 0.03], cov, 3.0, 1.0, 2.0);
        let s = solve_qoqc(&p).unwrap();
        assert!((s.weights.norm_squared() - 0.5).abs() < 1e-12);
        assert!((s.weights.sum() - 1.0).abs() < 1e-12);
        assert!(s.kkt_residual < 1e-10);
        assert!(s.candidates.iter().all(|c| c.objective <= s.objective));
    }
}
