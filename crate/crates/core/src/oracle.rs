//! Independent reference computations for testing and `verify`.
//!
//! Nothing here touches the solvers or the spectral machinery: the KKT
//! oracle factorises the bordered system directly and the dominance sampler
//! only evaluates a caller-supplied objective.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

pub const KKT_TOL: f64 = 1e-10;

/// `min 1/2 theta'Q theta - c'theta` subject to `E theta = d`.
#[derive(Debug, Clone, PartialEq)]
pub struct KktProblem {
    pub quadratic: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub eq_lhs: DMatrix<f64>,
    pub eq_rhs: DVector<f64>,
}

impl KktProblem {
    pub fn new(
        quadratic: DMatrix<f64>,
        linear: DVector<f64>,
        eq_lhs: DMatrix<f64>,
        eq_rhs: DVector<f64>,
    ) -> Result<Self> {
        let n = quadratic.nrows();
        if quadratic.ncols() != n || linear.len() != n {
            return Err(Error::InvalidDimension("quadratic and linear terms".into()));
        }
        if eq_lhs.ncols() != n || eq_lhs.nrows() != eq_rhs.len() {
            return Err(Error::InvalidDimension("constraint matrix and rhs".into()));
        }
        Ok(Self { quadratic, linear, eq_lhs, eq_rhs })
    }

    pub fn unconstrained(quadratic: DMatrix<f64>, linear: DVector<f64>) -> Result<Self> {
        let n = quadratic.nrows();
        Self::new(quadratic, linear, DMatrix::zeros(0, n), DVector::zeros(0))
    }

    pub fn dim(&self) -> usize {
        self.quadratic.nrows()
    }

    pub fn constraints(&self) -> usize {
        self.eq_lhs.nrows()
    }
}

/// Solution with multipliers for the Lagrangian
/// `1/2 theta'Q theta - c'theta - lambda'(E theta - d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KktSolution {
    pub theta: DVector<f64>,
    pub multipliers: DVector<f64>,
    pub stationarity: f64,
    pub feasibility: f64,
}

fn constraint_rank(e: &DMatrix<f64>) -> usize {
    if e.nrows() == 0 {
        return 0;
    }
    let sv = e.clone().svd(false, false).singular_values;
    let top = sv.amax();
    let tol = top * 1e-12 * e.nrows().max(e.ncols()) as f64;
    sv.iter().filter(|s| **s > tol).count()
}

pub fn solve_kkt(problem: &KktProblem) -> Result<KktSolution> {
    let n = problem.dim();
    let m = problem.constraints();
    let q = &problem.quadratic;
    if q.iter().any(|x| !x.is_finite())
        || problem.linear.iter().any(|x| !x.is_finite())
        || problem.eq_lhs.iter().any(|x| !x.is_finite())
        || problem.eq_rhs.iter().any(|x| !x.is_finite())
    {
        return Err(Error::NonFiniteData("KKT problem".into()));
    }
    let asym = (q - q.transpose()).amax();
    if asym > 1e-12 * q.amax().max(1.0) {
        return Err(Error::NotSymmetric(asym));
    }
    if Cholesky::new(q.clone()).is_none() {
        return Err(Error::SingularKkt("quadratic term is not positive definite".into()));
    }
    let rank = constraint_rank(&problem.eq_lhs);
    if rank < m {
        return Err(Error::RankDeficientConstraints { rank, rows: m });
    }

    let mut kkt = DMatrix::zeros(n + m, n + m);
    kkt.view_mut((0, 0), (n, n)).copy_from(q);
    kkt.view_mut((0, n), (n, m)).copy_from(&problem.eq_lhs.transpose());
    kkt.view_mut((n, 0), (m, n)).copy_from(&problem.eq_lhs);
    let mut rhs = DVector::zeros(n + m);
    rhs.rows_mut(0, n).copy_from(&problem.linear);
    rhs.rows_mut(n, m).copy_from(&problem.eq_rhs);

    let lu = kkt.clone().full_piv_lu();
    let mut z = lu
        .solve(&rhs)
        .ok_or_else(|| Error::SingularKkt("bordered system is singular".into()))?;
    // one step of iterative refinement
    let r = &rhs - &kkt * &z;
    if let Some(dz) = lu.solve(&r) {
        z += dz;
    }

    let theta = z.rows(0, n).into_owned();
    let multipliers = -z.rows(n, m).into_owned();
    let grad = q * &theta - &problem.linear - problem.eq_lhs.tr_mul(&multipliers);
    let stationarity = grad.amax();
    let feasibility = if m == 0 { 0.0 } else { (&problem.eq_lhs * &theta - &problem.eq_rhs).amax() };
    let scale_s = (q.amax() * theta.amax()).max(problem.linear.amax()).max(1.0);
    let scale_f = (problem.eq_lhs.amax() * theta.amax()).max(problem.eq_rhs.amax()).max(1.0);
    if stationarity > KKT_TOL * scale_s || feasibility > KKT_TOL * scale_f {
        return Err(Error::SingularKkt(format!(
            "residuals {stationarity:e} (stationarity), {feasibility:e} (feasibility)"
        )));
    }
    Ok(KktSolution { theta, multipliers, stationarity, feasibility })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConstraintSet {
    Free,
    Gearing { g0: f64 },
}

impl ConstraintSet {
    /// Orthogonal projection onto the set.
    pub fn project(&self, theta: &mut DVector<f64>) {
        if let ConstraintSet::Gearing { g0 } = *self {
            let shift = (g0 - theta.sum()) / theta.len() as f64;
            theta.add_scalar_mut(shift);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DominanceSample {
    pub best: f64,
    pub argmax: DVector<f64>,
}

/// Best objective over `count` standard-normal draws projected onto `set`.
/// Non-finite objective values are skipped.
///
/// # Panics
/// If `count` is zero.
pub fn dominance_sample<F>(set: ConstraintSet, dim: usize, objective: F, count: usize, seed: u64) -> DominanceSample
where
    F: Fn(&DVector<f64>) -> f64,
{
    assert!(count >= 1, "dominance_sample needs at least one draw");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = f64::NEG_INFINITY;
    let mut argmax = DVector::zeros(dim);
    let mut theta = DVector::zeros(dim);
    for _ in 0..count {
        for x in theta.iter_mut() {
            *x = StandardNormal.sample(&mut rng);
        }
        set.project(&mut theta);
        let value = objective(&theta);
        if value.is_finite() && value > best {
            best = value;
            argmax.copy_from(&theta);
        }
    }
    DominanceSample { best, argmax }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gmv_on_identity() {
        let p = KktProblem::new(
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            DMatrix::from_element(1, 2, 1.0),
            DVector::from_element(1, 1.0),
        )
        .unwrap();
        let s = solve_kkt(&p).unwrap();
        assert!((s.theta[0] - 0.5).abs() < 1e-15 && (s.theta[1] - 0.5).abs() < 1e-15);
        assert!((s.multipliers[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn two_constraint_micro() {
        let p = KktProblem::new(
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            DMatrix::from_row_slice(2, 2, &[0.1, 0.2, 1.0, 1.0]),
            DVector::from_vec(vec![0.2, 1.0]),
        )
        .unwrap();
        let s = solve_kkt(&p).unwrap();
        assert!(s.theta[0].abs() < 1e-12 && (s.theta[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mean_variance_with_gearing_micro() {
        let p = KktProblem::new(
            DMatrix::identity(2, 2),
            DVector::from_vec(vec![0.1, 0.2]),
            DMatrix::from_element(1, 2, 1.0),
            DVector::from_element(1, 1.0),
        )
        .unwrap();
        let s = solve_kkt(&p).unwrap();
        assert!((s.theta[0] - 0.45).abs() < 1e-12 && (s.theta[1] - 0.55).abs() < 1e-12);
    }

    #[test]
    fn rank_deficient_rejected() {
        let p = KktProblem::new(
            DMatrix::identity(3, 3),
            DVector::zeros(3),
            DMatrix::from_row_slice(2, 3, &[1.0, 1.0, 1.0, 2.0, 2.0, 2.0]),
            DVector::from_vec(vec![1.0, 2.0]),
        )
        .unwrap();
        assert!(matches!(solve_kkt(&p), Err(Error::RankDeficientConstraints { rank: 1, rows: 2 })));
    }

    #[test]
    fn indefinite_rejected() {
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let p = KktProblem::unconstrained(q, DVector::zeros(2)).unwrap();
        assert_eq!(solve_kkt(&p).unwrap_err().name(), "SingularKkt");
    }

    #[test]
    fn sampler_is_deterministic() {
        let f = |t: &DVector<f64>| t[0] - t[1];
        let a = dominance_sample(ConstraintSet::Gearing { g0: 1.0 }, 3, f, 1, 7);
        let b = dominance_sample(ConstraintSet::Gearing { g0: 1.0 }, 3, f, 1, 7);
        assert_eq!(a, b);
        assert!((a.argmax.sum() - 1.0).abs() < 1e-14);
        let c = dominance_sample(ConstraintSet::Free, 3, |_| 2.5, 10, 0);
        assert_eq!(c.best, 2.5);
    }
}
