//! Closed-form mean-variance programs.
//!
//! Programs I-IV carry no gearing constraint and are all scalar multiples of
//! the optimal risky portfolio `theta_a = inv(S) a / B`. Programs V-VIII add
//! the gearing constraint `1'theta = g0`; VI and VII become affine
//! combinations of the global minimum variance portfolio `theta_0` and
//! `theta_a`. Every linear solve goes through the spectrum cached in
//! [`CovMatrix`].

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::moments::{AlphaVector, CovMatrix};

/// Relative size below which `D` or `B` is treated as zero.
pub const DEGENERACY_TOL: f64 = 1e-14;

/// Portfolio-producing programs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Program {
    /// max a'theta s.t. theta' S theta <= sigma0^2
    I,
    /// min theta' S theta / 2 s.t. a'theta >= alpha0
    II,
    /// max a'theta - gamma/2 theta' S theta
    III,
    /// max Sharpe ratio, scaled to gearing g0
    IV,
    /// max return at fixed risk or gearing
    V,
    /// min risk at target return and gearing
    VI,
    /// mean-variance with gearing
    VII,
    /// max Sharpe ratio with gearing
    VIII,
    Gmv,
    Risky,
    Qoqc,
    MaxShrinkVI,
    MaxShrinkVII,
    ImplicitShrunk,
}

impl Program {
    pub const ALL: [Program; 14] = [
        Program::I,
        Program::II,
        Program::III,
        Program::IV,
        Program::V,
        Program::VI,
        Program::VII,
        Program::VIII,
        Program::Gmv,
        Program::Risky,
        Program::Qoqc,
        Program::MaxShrinkVI,
        Program::MaxShrinkVII,
        Program::ImplicitShrunk,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Program::I => "I",
            Program::II => "II",
            Program::III => "III",
            Program::IV => "IV",
            Program::V => "V",
            Program::VI => "VI",
            Program::VII => "VII",
            Program::VIII => "VIII",
            Program::Gmv => "GMV",
            Program::Risky => "RISKY",
            Program::Qoqc => "QOQC",
            Program::MaxShrinkVI => "MAX_SHRINK_VI",
            Program::MaxShrinkVII => "MAX_SHRINK_VII",
            Program::ImplicitShrunk => "IMPLICIT_SHRUNK",
        }
    }

    /// Programs whose solution is a scalar multiple of `theta_a`.
    pub fn is_risky_multiple(self) -> bool {
        matches!(
            self,
            Program::I
                | Program::II
                | Program::III
                | Program::IV
                | Program::V
                | Program::VIII
                | Program::Risky
        )
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Program {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let up = s.trim().to_ascii_uppercase().replace('-', "_");
        Program::ALL
            .into_iter()
            .find(|p| p.as_str() == up)
            .ok_or_else(|| format!("unknown program `{s}`"))
    }
}

/// `A = 1' inv(S) 1`, `B = a' inv(S) 1`, `C = a' inv(S) a`, `D = AC - B^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrontierScalars {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl FrontierScalars {
    /// Expected return of the geared GMV portfolio, `g0 B / A`.
    pub fn gmv_return(&self, g0: f64) -> f64 {
        g0 * self.b / self.a
    }

    /// Expected return of the geared risky portfolio, `g0 C / B`.
    pub fn risky_return(&self, g0: f64) -> f64 {
        g0 * self.c / self.b
    }
}

/// Portfolio weights together with the program and parameters that made them.
#[derive(Debug, Clone, PartialEq)]
pub struct Portfolio {
    weights: DVector<f64>,
    program: Program,
    params: BTreeMap<String, f64>,
    gearing: f64,
    leverage: f64,
}

impl Portfolio {
    pub fn new(weights: DVector<f64>, program: Program) -> Self {
        let gearing = weights.sum();
        let leverage = weights.iter().map(|w| w.abs()).sum();
        Self { weights, program, params: BTreeMap::new(), gearing, leverage }
    }

    pub fn with_param(mut self, name: &str, value: f64) -> Self {
        self.params.insert(name.to_owned(), value);
        self
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn into_weights(self) -> DVector<f64> {
        self.weights
    }

    pub fn program(&self) -> Program {
        self.program
    }

    pub fn params(&self) -> &BTreeMap<String, f64> {
        &self.params
    }

    pub fn param(&self, name: &str) -> Option<f64> {
        self.params.get(name).copied()
    }

    /// `1'theta`
    pub fn gearing(&self) -> f64 {
        self.gearing
    }

    /// `1'|theta|`
    pub fn leverage(&self) -> f64 {
        self.leverage
    }

    pub fn expected_return(&self, alpha: &AlphaVector) -> f64 {
        self.weights.dot(alpha.as_vector())
    }

    pub fn variance(&self, cov: &CovMatrix) -> f64 {
        cov.quad_form(&self.weights)
    }
}

/// Gearing `1'theta` and leverage `1'|theta|` of a portfolio.
pub fn leverage(portfolio: &Portfolio) -> (f64, f64) {
    (portfolio.gearing(), portfolio.leverage())
}

fn ones(n: usize) -> DVector<f64> {
    DVector::from_element(n, 1.0)
}

fn check_dims(alpha: &AlphaVector, cov: &CovMatrix) -> Result<()> {
    if alpha.dim() != cov.dim() {
        return Err(Error::InvalidDimension(format!(
            "alpha has {} entries, covariance is {}x{}",
            alpha.dim(),
            cov.dim(),
            cov.dim()
        )));
    }
    Ok(())
}

fn positive(name: &'static str, value: f64) -> Result<f64> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonPositiveParameter { name, value })
    }
}

fn finite(name: &'static str, value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFiniteData(name.into()))
    }
}

fn nonzero_gearing(g0: f64) -> Result<f64> {
    finite("g0", g0)?;
    if g0 == 0.0 {
        Err(Error::NonPositiveParameter { name: "g0", value: g0 })
    } else {
        Ok(g0)
    }
}

/// Shared pieces of every closed form: `inv(S) 1`, `inv(S) a` and the
/// frontier scalars built from them.
#[derive(Debug, Clone)]
struct Basis {
    inv_ones: DVector<f64>,
    inv_alpha: DVector<f64>,
    scalars: FrontierScalars,
}

impl Basis {
    fn new(alpha: &AlphaVector, cov: &CovMatrix) -> Result<Self> {
        check_dims(alpha, cov)?;
        let a_vec = alpha.as_vector();
        let inv_ones = cov.solve(&ones(cov.dim()));
        let inv_alpha = cov.solve(a_vec);
        let a = inv_ones.sum();
        let b = 0.5 * (a_vec.dot(&inv_ones) + inv_alpha.sum());
        let c = a_vec.dot(&inv_alpha);
        let d = a * c - b * b;
        Ok(Self { inv_ones, inv_alpha, scalars: FrontierScalars { a, b, c, d } })
    }

    fn require_nondegenerate(&self) -> Result<()> {
        let s = self.scalars;
        if s.d <= DEGENERACY_TOL * s.a * s.c || s.c <= 0.0 {
            return Err(Error::DegenerateAlpha(format!(
                "D = {:e}; the frontier is undefined",
                s.d
            )));
        }
        Ok(())
    }

    fn require_nonzero_b(&self) -> Result<()> {
        let s = self.scalars;
        if s.b.abs() <= DEGENERACY_TOL * (s.a * s.c).sqrt() || s.b == 0.0 {
            return Err(Error::ZeroB(s.b));
        }
        Ok(())
    }

    fn require_nonzero_c(&self) -> Result<()> {
        if self.scalars.c <= 0.0 {
            return Err(Error::DegenerateAlpha("alpha is the zero vector".into()));
        }
        Ok(())
    }

    fn gmv(&self) -> DVector<f64> {
        &self.inv_ones / self.inv_ones.sum()
    }

    fn risky(&self) -> Result<DVector<f64>> {
        self.require_nonzero_b()?;
        Ok(&self.inv_alpha / self.inv_alpha.sum())
    }
}

pub fn frontier_scalars(alpha: &AlphaVector, cov: &CovMatrix) -> Result<FrontierScalars> {
    let basis = Basis::new(alpha, cov)?;
    basis.require_nondegenerate()?;
    Ok(basis.scalars)
}

/// Global minimum variance portfolio `inv(S) 1 / A`.
pub fn gmv_portfolio(cov: &CovMatrix) -> Portfolio {
    let w = cov.solve(&ones(cov.dim()));
    let s = w.sum();
    Portfolio::new(w / s, Program::Gmv)
}

/// Fully invested Sharpe-optimal portfolio `inv(S) a / B`.
pub fn optimal_risky_portfolio(alpha: &AlphaVector, cov: &CovMatrix) -> Result<Portfolio> {
    let basis = Basis::new(alpha, cov)?;
    Ok(Portfolio::new(basis.risky()?, Program::Risky))
}

/// Program I: maximum return at risk budget `sigma0`.
pub fn max_return_for_risk(alpha: &AlphaVector, cov: &CovMatrix, sigma0: f64) -> Result<Portfolio> {
    let sigma0 = positive("sigma0", sigma0)?;
    let basis = Basis::new(alpha, cov)?;
    basis.require_nonzero_c()?;
    let w = &basis.inv_alpha * (sigma0 / basis.scalars.c.sqrt());
    Ok(Portfolio::new(w, Program::I).with_param("sigma0", sigma0))
}

/// Program II: minimum risk at return target `alpha0` (binding).
pub fn min_risk_for_return(alpha: &AlphaVector, cov: &CovMatrix, alpha0: f64) -> Result<Portfolio> {
    let alpha0 = positive("alpha0", alpha0)?;
    let basis = Basis::new(alpha, cov)?;
    basis.require_nonzero_c()?;
    let w = &basis.inv_alpha * (alpha0 / basis.scalars.c);
    Ok(Portfolio::new(w, Program::II).with_param("alpha0", alpha0))
}

/// Program III: unconstrained mean-variance with risk aversion `gamma`.
pub fn mean_variance(alpha: &AlphaVector, cov: &CovMatrix, gamma: f64) -> Result<Portfolio> {
    let gamma = positive("gamma", gamma)?;
    check_dims(alpha, cov)?;
    let w = cov.solve(alpha.as_vector()) / gamma;
    Ok(Portfolio::new(w, Program::III).with_param("gamma", gamma))
}

/// Program IV: Sharpe-optimal direction scaled to gearing `g0`.
pub fn max_sharpe(alpha: &AlphaVector, cov: &CovMatrix, g0: f64) -> Result<Portfolio> {
    let g0 = nonzero_gearing(g0)?;
    let basis = Basis::new(alpha, cov)?;
    Ok(Portfolio::new(basis.risky()? * g0, Program::IV).with_param("g0", g0))
}

/// How program V is pinned down: a risk level or, equivalently, a gearing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RiskOrGearing {
    Risk(f64),
    Gearing(f64),
}

/// Program V: maximum return with gearing; fixing the risk fixes the gearing
/// at `g0 = sigma0 B / sqrt(C)`.
pub fn geared_max_return(
    alpha: &AlphaVector,
    cov: &CovMatrix,
    level: RiskOrGearing,
) -> Result<Portfolio> {
    let basis = Basis::new(alpha, cov)?;
    basis.require_nonzero_c()?;
    let risky = basis.risky()?;
    let s = basis.scalars;
    let (g0, sigma0) = match level {
        RiskOrGearing::Risk(sigma0) => {
            let sigma0 = positive("sigma0", sigma0)?;
            (sigma0 * s.b / s.c.sqrt(), Some(sigma0))
        }
        RiskOrGearing::Gearing(g0) => (positive("g0", g0)?, None),
    };
    let mut p = Portfolio::new(risky * g0, Program::V).with_param("g0", g0);
    if let Some(sigma0) = sigma0 {
        p = p.with_param("sigma0", sigma0);
    }
    Ok(p)
}

/// Program VI: minimum variance at return `alpha0` and gearing `g0`, both
/// binding. Computed from the multiplier expansion
/// `((alpha0 A - g0 B) inv(S) a + (g0 C - alpha0 B) inv(S) 1) / D`, which
/// needs no division by `B`.
pub fn geared_min_risk(
    alpha: &AlphaVector,
    cov: &CovMatrix,
    alpha0: f64,
    g0: f64,
) -> Result<Portfolio> {
    let alpha0 = finite("alpha0", alpha0)?;
    let g0 = finite("g0", g0)?;
    let basis = Basis::new(alpha, cov)?;
    basis.require_nondegenerate()?;
    let s = basis.scalars;
    let w = &basis.inv_alpha * ((alpha0 * s.a - g0 * s.b) / s.d)
        + &basis.inv_ones * ((g0 * s.c - alpha0 * s.b) / s.d);
    Ok(Portfolio::new(w, Program::VI).with_param("alpha0", alpha0).with_param("g0", g0))
}

/// Weight on `theta_a` in the program VI decomposition
/// `(g0 - w) theta_0 + w theta_a`, i.e. `w = B (alpha0 A - g0 B) / D`.
pub fn min_risk_risky_weight(scalars: &FrontierScalars, alpha0: f64, g0: f64) -> f64 {
    scalars.b * (alpha0 * scalars.a - g0 * scalars.b) / scalars.d
}

/// True when a program VI target sits below the geared GMV return, on the
/// lower (inefficient) half of the frontier parabola.
pub fn is_inefficient_target(scalars: &FrontierScalars, alpha0: f64, g0: f64) -> bool {
    alpha0 < scalars.gmv_return(g0)
}

/// Program VII: `(g0 - B/gamma) theta_0 + inv(S) a / gamma`.
pub fn geared_mean_variance(
    alpha: &AlphaVector,
    cov: &CovMatrix,
    gamma: f64,
    g0: f64,
) -> Result<Portfolio> {
    let gamma = positive("gamma", gamma)?;
    let g0 = finite("g0", g0)?;
    let basis = Basis::new(alpha, cov)?;
    let s = basis.scalars;
    let w = basis.gmv() * (g0 - s.b / gamma) + &basis.inv_alpha / gamma;
    Ok(Portfolio::new(w, Program::VII).with_param("gamma", gamma).with_param("g0", g0))
}

/// Program VIII: Sharpe ratio maximised at gearing `g0`, `g0 theta_a`.
pub fn geared_max_sharpe(alpha: &AlphaVector, cov: &CovMatrix, g0: f64) -> Result<Portfolio> {
    let g0 = nonzero_gearing(g0)?;
    let basis = Basis::new(alpha, cov)?;
    Ok(Portfolio::new(basis.risky()? * g0, Program::VIII).with_param("g0", g0))
}

/// Minimum variance on the geared frontier:
/// `(alpha_p^2 A - 2 g0 alpha_p B + g0^2 C) / D`.
pub fn frontier_variance(scalars: &FrontierScalars, alpha_p: f64, g0: f64) -> Result<f64> {
    if scalars.d <= DEGENERACY_TOL * scalars.a * scalars.c {
        return Err(Error::DegenerateAlpha(format!("D = {:e}", scalars.d)));
    }
    let s = scalars;
    Ok((alpha_p * alpha_p * s.a - 2.0 * g0 * alpha_p * s.b + g0 * g0 * s.c) / s.d)
}

/// Parameters consumed by [`solve`]; each program reads the ones it needs.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ProgramParams {
    pub sigma0: Option<f64>,
    pub alpha0: Option<f64>,
    pub gamma: Option<f64>,
    pub g0: Option<f64>,
}

fn need(value: Option<f64>, name: &'static str) -> Result<f64> {
    value.ok_or(Error::MissingParameter(name))
}

/// Runs one of the closed-form programs I-VIII, GMV or RISKY.
pub fn solve(
    program: Program,
    alpha: &AlphaVector,
    cov: &CovMatrix,
    params: &ProgramParams,
) -> Result<Portfolio> {
    match program {
        Program::I => max_return_for_risk(alpha, cov, need(params.sigma0, "sigma0")?),
        Program::II => min_risk_for_return(alpha, cov, need(params.alpha0, "alpha0")?),
        Program::III => mean_variance(alpha, cov, need(params.gamma, "gamma")?),
        Program::IV => max_sharpe(alpha, cov, params.g0.unwrap_or(1.0)),
        Program::V => {
            let level = match (params.sigma0, params.g0) {
                (Some(s), None) => RiskOrGearing::Risk(s),
                (None, Some(g)) => RiskOrGearing::Gearing(g),
                (None, None) => return Err(Error::MissingParameter("sigma0 or g0")),
                (Some(_), Some(_)) => {
                    return Err(Error::Infeasible(
                        "program V takes exactly one of sigma0 and g0".into(),
                    ))
                }
            };
            geared_max_return(alpha, cov, level)
        }
        Program::VI => geared_min_risk(
            alpha,
            cov,
            need(params.alpha0, "alpha0")?,
            need(params.g0, "g0")?,
        ),
        Program::VII => geared_mean_variance(
            alpha,
            cov,
            need(params.gamma, "gamma")?,
            need(params.g0, "g0")?,
        ),
        Program::VIII => geared_max_sharpe(alpha, cov, need(params.g0, "g0")?),
        Program::Gmv => {
            check_dims(alpha, cov)?;
            Ok(gmv_portfolio(cov))
        }
        Program::Risky => optimal_risky_portfolio(alpha, cov),
        other => Err(Error::Infeasible(format!(
            "program {other} is not a closed-form solver program"
        ))),
    }
}

/// A point of the `(alpha_p, g0, sigma_p)` frontier surface.
#[derive(Debug, Clone, PartialEq)]
pub struct FrontierPoint {
    pub alpha_p: f64,
    pub g0: f64,
    pub sigma_p: f64,
    /// Grid cell closest to the geared GMV line `alpha_p = g0 B / A`.
    pub is_gmv_line: bool,
    /// Grid cell closest to the geared risky line `theta = g0 theta_a`.
    pub is_risky_line: bool,
    pub weights: Option<Portfolio>,
}

fn nearest_within_half_step(grid: &[f64], target: f64) -> Option<usize> {
    let (idx, dist) = grid
        .iter()
        .enumerate()
        .map(|(i, &x)| (i, (x - target).abs()))
        .min_by(|a, b| a.1.total_cmp(&b.1))?;
    let step = grid
        .windows(2)
        .map(|w| (w[1] - w[0]).abs())
        .fold(f64::INFINITY, f64::min);
    let tol = if step.is_finite() {
        0.5 * step
    } else {
        1e-12 * target.abs().max(1.0)
    };
    (dist <= tol).then_some(idx)
}

/// Minimum-variance surface over an `alpha_p` x `g0` grid, `g0`-major.
///
/// On each `g0` row the cell nearest (within half a grid step) to the GMV
/// line and to the risky line is flagged. With `attach_weights` every point
/// also carries the program VI portfolio.
pub fn pareto_surface(
    alpha: &AlphaVector,
    cov: &CovMatrix,
    alpha_grid: &[f64],
    g0_grid: &[f64],
    attach_weights: bool,
) -> Result<Vec<FrontierPoint>> {
    if alpha_grid.is_empty() {
        return Err(Error::EmptyGrid("alpha_p"));
    }
    if g0_grid.is_empty() {
        return Err(Error::EmptyGrid("g0"));
    }
    if alpha_grid.iter().chain(g0_grid).any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteData("grid".into()));
    }
    let scalars = frontier_scalars(alpha, cov)?;
    let mut out = Vec::with_capacity(alpha_grid.len() * g0_grid.len());
    for &g0 in g0_grid {
        let gmv_idx = nearest_within_half_step(alpha_grid, scalars.gmv_return(g0));
        let risky_idx = if scalars.b != 0.0 {
            nearest_within_half_step(alpha_grid, scalars.risky_return(g0))
        } else {
            None
        };
        for (i, &alpha_p) in alpha_grid.iter().enumerate() {
            let var = frontier_variance(&scalars, alpha_p, g0)?;
            let weights = if attach_weights {
                Some(geared_min_risk(alpha, cov, alpha_p, g0)?)
            } else {
                None
            };
            out.push(FrontierPoint {
                alpha_p,
                g0,
                sigma_p: var.max(0.0).sqrt(),
                is_gmv_line: gmv_idx == Some(i),
                is_risky_line: risky_idx == Some(i),
                weights,
            });
        }
    }
    Ok(out)
}

/// Reverse optimisation: the returns `pi` (normalised to sum to one) for
/// which `inv(S) pi / (1' inv(S) pi)` reproduces a fully invested target.
pub fn implied_returns(target: &Portfolio, cov: &CovMatrix) -> Result<AlphaVector> {
    if target.weights().len() != cov.dim() {
        return Err(Error::InvalidDimension("target weights vs covariance".into()));
    }
    if (target.gearing() - 1.0).abs() > 1e-10 {
        return Err(Error::Infeasible(format!(
            "implied returns need a fully invested target, gearing is {}",
            target.gearing()
        )));
    }
    let pi = cov.mul(target.weights());
    let s = pi.sum();
    if s.abs() <= DEGENERACY_TOL * pi.abs().sum() {
        return Err(Error::ZeroSum);
    }
    AlphaVector::from_vector(pi / s)
}

/// JSON form of a portfolio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioRecord {
    pub program: String,
    pub params: BTreeMap<String, f64>,
    pub assets: Vec<String>,
    pub weights: Vec<f64>,
    pub gearing: f64,
    pub leverage: f64,
    pub alpha_p: f64,
    pub sigma_p: f64,
}

impl PortfolioRecord {
    pub fn new(p: &Portfolio, assets: &[String], alpha: &AlphaVector, cov: &CovMatrix) -> Self {
        Self {
            program: p.program().to_string(),
            params: p.params().clone(),
            assets: assets.to_vec(),
            weights: p.weights().iter().copied().collect(),
            gearing: p.gearing(),
            leverage: p.leverage(),
            alpha_p: p.expected_return(alpha),
            sigma_p: p.variance(cov).max(0.0).sqrt(),
        }
    }
}
