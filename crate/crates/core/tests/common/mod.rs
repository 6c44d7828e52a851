#![allow(dead_code)]

use mvgeom::moments::{AlphaVector, CovMatrix};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn gaussian_vector(n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Haar-distributed orthogonal matrix (QR of a Gaussian matrix with the
/// sign of `R`'s diagonal folded into `Q`).
pub fn random_orthogonal(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let qr = gaussian_matrix(n, n, rng).qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Eigenvalues log-uniform on `[scale, scale * kappa]` with both endpoints
/// present, so the condition number is exactly `kappa` up to rounding.
pub fn spectrum_with_kappa(n: usize, kappa: f64, scale: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut vals: Vec<f64> = (0..n)
        .map(|i| match i {
            0 => kappa,
            1 => 1.0,
            _ => kappa.powf(rng.random::<f64>()),
        })
        .collect();
    vals.iter_mut().for_each(|v| *v *= scale);
    vals
}

pub fn spd_from_spectrum(values: &[f64], rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let n = values.len();
    let q = random_orthogonal(n, rng);
    let m = &q * DMatrix::from_diagonal(&DVector::from_column_slice(values)) * q.transpose();
    (&m + m.transpose()) * 0.5
}

pub fn random_cov(n: usize, kappa: f64, rng: &mut ChaCha8Rng) -> CovMatrix {
    let vals = spectrum_with_kappa(n, kappa, 0.01, rng);
    CovMatrix::new(spd_from_spectrum(&vals, rng)).unwrap()
}

/// Log-uniform condition number in `[1.5, kappa_max]`.
pub fn random_kappa(kappa_max: f64, rng: &mut ChaCha8Rng) -> f64 {
    1.5 * (kappa_max / 1.5).powf(rng.random::<f64>())
}

pub fn random_alpha(n: usize, rng: &mut ChaCha8Rng) -> AlphaVector {
    let v = gaussian_vector(n, rng).map(|x| 0.05 + 0.1 * x);
    AlphaVector::from_vector(v).unwrap()
}

fn scalars(alpha: &AlphaVector, cov: &CovMatrix) -> (f64, f64, f64) {
    let ones = DVector::from_element(alpha.dim(), 1.0);
    let a = cov.inv_quad_form(&ones);
    let b = alpha.as_vector().dot(&cov.solve(&ones));
    let c = cov.inv_quad_form(alpha.as_vector());
    (a, b, c)
}

/// Random instance with `|B| / sqrt(AC) >= 0.05` and `D / (AC) >= 0.05`,
/// so neither the risky portfolio nor the frontier is near-degenerate.
/// With `positive_b` the risky portfolio also has positive excess return.
pub fn random_instance(
    n: usize,
    kappa_max: f64,
    positive_b: bool,
    rng: &mut ChaCha8Rng,
) -> (AlphaVector, CovMatrix) {
    loop {
        let kappa = random_kappa(kappa_max, rng);
        let cov = random_cov(n, kappa, rng);
        let alpha = random_alpha(n, rng);
        let (a, b, c) = scalars(&alpha, &cov);
        let ratio = b / (a * c).sqrt();
        if ratio.abs() < 0.05 || 1.0 - ratio * ratio < 0.05 || (positive_b && b <= 0.0) {
            continue;
        }
        return (alpha, cov);
    }
}

pub fn max_abs_diff(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax()
}

pub fn cos(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.dot(b) / (a.norm() * b.norm())
}

/// Number of eigenvalues of symmetric `m` below `x`, from the inertia of an
/// `LDL'` factorisation of `m - x I` (Sylvester's law).
pub fn eigen_count_below(m: &DMatrix<f64>, x: f64) -> usize {
    let n = m.nrows();
    let mut a = m.clone();
    for i in 0..n {
        a[(i, i)] -= x;
    }
    let mut negatives = 0;
    for k in 0..n {
        let mut pivot = a[(k, k)];
        if pivot == 0.0 {
            pivot = -f64::EPSILON * m.amax().max(1.0);
        }
        if pivot < 0.0 {
            negatives += 1;
        }
        for i in k + 1..n {
            let l = a[(i, k)] / pivot;
            for j in k + 1..n {
                a[(i, j)] -= l * a[(k, j)];
            }
        }
    }
    negatives
}

/// Eigenvalues (descending) by bisection on the inertia count; independent
/// of any eigensolver.
pub fn bisection_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let radius = (0..n)
        .map(|i| (0..n).map(|j| m[(i, j)].abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        // k-th smallest eigenvalue: smallest x with count_below(x) > k
        let (mut lo, mut hi) = (-radius - 1.0, radius + 1.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if eigen_count_below(m, mid) > k {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        out.push(0.5 * (lo + hi));
    }
    out.reverse();
    out
}

/// Damped fixed-point iteration of the implicit robust portfolio
/// `theta <- (1-d) theta + d M(theta)^-1 a`, normalised to sum to one.
pub fn implicit_fixed_point(alpha: &AlphaVector, cov: &CovMatrix, k: f64) -> DVector<f64> {
    let a = alpha.as_vector();
    let n = a.len();
    let c = cov.inv_quad_form(a);
    let mut theta = cov.solve(a) / c.sqrt();
    for _ in 0..200 {
        let sp = cov.quad_form(&theta).sqrt();
        let ball = k * a.norm() * theta.norm();
        let m = DMatrix::identity(n, n) * (ball / sp) + cov.matrix() * ((a.dot(&theta) - ball) / sp);
        let next = m.lu().solve(a).expect("fixed-point map invertible");
        theta = &theta * 0.5 + next * 0.5;
    }
    let s = theta.sum();
    theta / s
}

/// Brute-force maximiser of `a'theta - gamma/2 theta'S theta` over the circle
/// `{1'theta = g0, theta'theta = 1/n0}` in three dimensions: a dense scan of
/// the angle followed by golden-section refinement.
pub fn qoqc_manifold_oracle(
    alpha: &AlphaVector,
    cov: &CovMatrix,
    gamma: f64,
    g0: f64,
    n0: f64,
    samples: usize,
) -> DVector<f64> {
    assert_eq!(alpha.dim(), 3);
    let a = alpha.as_vector();
    let s = cov.matrix();
    let centre = DVector::from_element(3, g0 / 3.0);
    let r = (1.0 / n0 - g0 * g0 / 3.0).sqrt();
    let u1 = DVector::from_vec(vec![1.0, -1.0, 0.0]) / 2f64.sqrt();
    let u2 = DVector::from_vec(vec![1.0, 1.0, -2.0]) / 6f64.sqrt();
    let point = |t: f64| &centre + (&u1 * t.cos() + &u2 * t.sin()) * r;
    let q = |x: &DVector<f64>, y: &DVector<f64>| x.dot(&(s * y));
    let k0 = a.dot(&centre) - 0.5 * gamma * q(&centre, &centre);
    let kc = r * (a.dot(&u1) - gamma * q(&centre, &u1));
    let ks = r * (a.dot(&u2) - gamma * q(&centre, &u2));
    let kcc = -0.5 * gamma * r * r * q(&u1, &u1);
    let kss = -0.5 * gamma * r * r * q(&u2, &u2);
    let kcs = -gamma * r * r * q(&u1, &u2);
    let f = |t: f64| {
        let (sn, cs) = t.sin_cos();
        k0 + kc * cs + ks * sn + kcc * cs * cs + kss * sn * sn + kcs * cs * sn
    };
    let h = std::f64::consts::TAU / samples as f64;
    let mut best = (0.0, f64::NEG_INFINITY);
    for i in 0..samples {
        let t = i as f64 * h;
        let v = f(t);
        if v > best.1 {
            best = (t, v);
        }
    }
    let (mut lo, mut hi) = (best.0 - h, best.0 + h);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let x = hi - g * (hi - lo);
        let y = lo + g * (hi - lo);
        if f(x) < f(y) {
            lo = x;
        } else {
            hi = y;
        }
    }
    point(0.5 * (lo + hi))
}
