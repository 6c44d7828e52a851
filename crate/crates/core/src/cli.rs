//! Command-line front-end. Errors are reported as one `code=NAME message`
//! line on stderr; exit status is 2 for argument, grid and I/O problems and
//! 3 for failures raised by the numerical modules.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::format::{g17, to_json};
use crate::geometry::{verify_bound, BoundReport};
use crate::moments::{estimate_moments, AlphaVector, CovMatrix, EstimateOptions, ReturnsPanel};
use crate::oracle::{dominance_sample, solve_kkt, ConstraintSet, KktProblem};
use crate::qoqc::{solve_qoqc, QoqcProblem, QoqcSolution};
use crate::robust::{
    implicit_shrunk_theta, max_shrink_mean_variance, max_shrink_min_risk, shrink_covariance,
    shrink_sweep, solve_robust, ShrinkageMode, ShrinkageSpec,
};
use crate::solvers::{self, pareto_surface, Portfolio, PortfolioRecord, Program, ProgramParams};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "mvgeom", version, about = "Closed-form mean-variance portfolios and alpha-angle diagnostics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample mean and covariance of a returns CSV.
    Estimate {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Solve one program.
    Solve {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        output: OutputArgs,
        #[arg(long)]
        program: Program,
        #[command(flatten)]
        params: ParamArgs,
        #[command(flatten)]
        shrink: ShrinkArgs,
    },
    /// Minimum-variance frontier at one gearing level.
    Frontier {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        output: OutputArgs,
        #[arg(long, default_value_t = 1.0)]
        g0: f64,
        /// start:step:stop
        #[arg(long)]
        alpha_grid: String,
        /// Attach program VI weights to every point.
        #[arg(long)]
        weights: bool,
    },
    /// Minimum-variance surface over expected return and gearing.
    Surface {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        output: OutputArgs,
        /// start:step:stop
        #[arg(long)]
        g0: String,
        /// start:step:stop
        #[arg(long)]
        alpha_grid: String,
        #[arg(long)]
        weights: bool,
    },
    /// Alpha-angle of a portfolio against its spectral lower bound.
    Bounds {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        output: OutputArgs,
        /// Comma-separated weights.
        #[arg(long, conflicts_with = "program", required_unless_present = "program")]
        weights: Option<String>,
        #[arg(long)]
        program: Option<Program>,
        #[command(flatten)]
        params: ParamArgs,
        #[arg(long)]
        psi: Option<f64>,
    },
    /// Re-solve a program along a grid of shrinkage intensities.
    ShrinkSweep {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        output: OutputArgs,
        #[arg(long, value_enum, default_value_t = SweepMode::Angle)]
        mode: SweepMode,
        /// start:step:stop
        #[arg(long)]
        grid: String,
        #[arg(long, default_value = "VIII")]
        program: Program,
        #[command(flatten)]
        params: ParamArgs,
    },
    /// Mean-variance with gearing and an effective-number-of-bets constraint.
    Qoqc {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        output: OutputArgs,
        #[arg(long)]
        gamma: f64,
        #[arg(long)]
        g0: f64,
        #[arg(long)]
        n0: f64,
    },
    /// Re-check a portfolio JSON produced by `solve`.
    Verify {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        output: OutputArgs,
        #[arg(long)]
        portfolio: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
    },
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Returns CSV: header of asset names, one row per period.
    #[arg(long, required_unless_present = "moments")]
    pub input: Option<PathBuf>,
    /// Moments JSON as written by `estimate`.
    #[arg(long, conflicts_with = "input")]
    pub moments: Option<PathBuf>,
    #[arg(long)]
    pub allow_rank_deficient: bool,
    #[arg(long)]
    pub no_spd_repair: bool,
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Debug, Args, Default)]
pub struct ParamArgs {
    #[arg(long)]
    pub sigma0: Option<f64>,
    #[arg(long)]
    pub alpha0: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub g0: Option<f64>,
    #[arg(long)]
    pub n0: Option<f64>,
}

impl ParamArgs {
    fn program_params(&self) -> ProgramParams {
        ProgramParams { sigma0: self.sigma0, alpha0: self.alpha0, gamma: self.gamma, g0: self.g0 }
    }
}

#[derive(Debug, Args, Default)]
#[group(multiple = false)]
pub struct ShrinkArgs {
    /// Angle-targeted shrinkage intensity.
    #[arg(long)]
    pub k: Option<f64>,
    /// Shrinkage weight towards the identity.
    #[arg(long)]
    pub q: Option<f64>,
    /// Shrinkage weight towards the diagonal.
    #[arg(long)]
    pub q_diag: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepMode {
    Angle,
    #[value(alias = "simple")]
    Identity,
    Diagonal,
}

impl From<SweepMode> for ShrinkageMode {
    fn from(m: SweepMode) -> Self {
        match m {
            SweepMode::Angle => ShrinkageMode::AngleTargeted,
            SweepMode::Identity => ShrinkageMode::Identity,
            SweepMode::Diagonal => ShrinkageMode::Diagonal,
        }
    }
}

/// Failure of a CLI run.
#[derive(Debug)]
pub enum CliError {
    Usage { code: &'static str, message: String },
    Numeric(Error),
}

impl CliError {
    fn usage(code: &'static str, message: impl Into<String>) -> Self {
        CliError::Usage { code, message: message.into() }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage { .. } => EXIT_USAGE,
            CliError::Numeric(_) => EXIT_NUMERIC,
        }
    }

    pub fn line(&self) -> String {
        let (code, message) = match self {
            CliError::Usage { code, message } => (*code, message.clone()),
            CliError::Numeric(e) => (e.name(), e.to_string()),
        };
        format!("code={code} {}", message.replace(['\n', '\r'], " "))
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Numeric(e)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parses `args` (including the program name), runs the command and returns
/// the exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return EXIT_OK;
            }
            let msg = e.to_string();
            let msg = msg.lines().map(str::trim).filter(|l| !l.is_empty()).collect::<Vec<_>>().join(" ");
            eprintln!("code=InvalidArgument {msg}");
            return EXIT_USAGE;
        }
    };
    match run(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("{}", e.line());
            e.exit_code()
        }
    }
}

/// Moments as exchanged between commands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentsRecord {
    pub assets: Vec<String>,
    pub alpha: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
    #[serde(default)]
    pub repaired: bool,
    #[serde(default)]
    pub condition_number: Option<f64>,
}

struct Loaded {
    assets: Vec<String>,
    alpha: AlphaVector,
    cov: CovMatrix,
    repaired: bool,
}

fn read_file(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::usage("Io", format!("{}: {e}", path.display())))
}

fn load(input: &InputArgs) -> CliResult<Loaded> {
    if let Some(path) = &input.moments {
        let text = read_file(path)?;
        let rec: MomentsRecord = serde_json::from_str(&text)
            .map_err(|e| CliError::usage("MalformedJson", format!("{}: {e}", path.display())))?;
        let n = rec.alpha.len();
        if rec.assets.len() != n || rec.cov.len() != n || rec.cov.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidDimension("moments JSON shapes disagree".into()).into());
        }
        let alpha = AlphaVector::new(rec.alpha)?;
        let cov = CovMatrix::from_rows(&rec.cov)?;
        return Ok(Loaded { assets: rec.assets, alpha, cov, repaired: rec.repaired });
    }
    let path = input.input.as_ref().ok_or_else(|| CliError::usage("InvalidArgument", "--input or --moments is required"))?;
    let file = fs::File::open(path).map_err(|e| CliError::usage("Io", format!("{}: {e}", path.display())))?;
    let panel = ReturnsPanel::from_csv(file)?;
    let options = EstimateOptions {
        allow_rank_deficient: input.allow_rank_deficient,
        spd_repair: !input.no_spd_repair,
    };
    let m = estimate_moments(&panel, options)?;
    Ok(Loaded { assets: m.assets, alpha: m.alpha, cov: m.cov, repaired: m.repaired })
}

fn emit(output: &OutputArgs, body: String) -> CliResult<()> {
    let mut body = body;
    if !body.ends_with('\n') {
        body.push('\n');
    }
    match &output.output {
        Some(path) => fs::write(path, body)
            .map_err(|e| CliError::usage("Io", format!("{}: {e}", path.display()))),
        None => std::io::stdout()
            .write_all(body.as_bytes())
            .map_err(|e| CliError::usage("Io", format!("stdout: {e}"))),
    }
}

fn json<T: Serialize + ?Sized>(value: &T) -> CliResult<String> {
    to_json(value).map_err(|e| CliError::usage("Io", format!("serialisation: {e}")))
}

fn csv_table(header: &[&str], rows: Vec<Vec<String>>) -> CliResult<String> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let io = |e: csv::Error| CliError::usage("Io", format!("csv: {e}"));
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(&r).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::usage("Io", format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv writes UTF-8"))
}

fn opt(x: Option<f64>) -> String {
    x.map(g17).unwrap_or_default()
}

/// Parses `start:step:stop` (or a single number) into an inclusive grid;
/// the last point may overshoot `stop` by at most half a step.
pub fn parse_grid(spec: &str) -> CliResult<Vec<f64>> {
    let bad = |m: &str| CliError::usage("InvalidGrid", format!("`{spec}`: {m}"));
    let parts: Vec<f64> = spec
        .split(':')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| bad("expected numbers"))?;
    if parts.iter().any(|x| !x.is_finite()) {
        return Err(bad("non-finite value"));
    }
    match parts.as_slice() {
        [x] => Ok(vec![*x]),
        [start, step, stop] => {
            if *step == 0.0 {
                return if start == stop { Ok(vec![*start]) } else { Err(bad("zero step")) };
            }
            let ratio = (stop - start) / step;
            if ratio < -0.5 {
                return Err(bad("step points away from stop"));
            }
            let count = (ratio + 0.5).floor() as usize + 1;
            if count > 10_000_000 {
                return Err(bad("too many points"));
            }
            Ok((0..count).map(|i| start + i as f64 * step).collect())
        }
        _ => Err(bad("expected start:step:stop")),
    }
}

fn parse_weights(s: &str) -> CliResult<DVector<f64>> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| CliError::usage("InvalidArgument", format!("bad weight list `{s}`")))?;
    Ok(DVector::from_vec(v))
}

fn shrink_spec(shrink: &ShrinkArgs, alpha: &AlphaVector, cov: &CovMatrix) -> CliResult<Option<ShrinkageSpec>> {
    Ok(match (shrink.k, shrink.q, shrink.q_diag) {
        (Some(k), _, _) => Some(ShrinkageSpec::angle_targeted(k, alpha, cov)?),
        (_, Some(q), _) => Some(ShrinkageSpec::identity(q)?),
        (_, _, Some(q)) => Some(ShrinkageSpec::diagonal(q)?),
        _ => None,
    })
}

fn need(x: Option<f64>, name: &'static str) -> crate::Result<f64> {
    x.ok_or(Error::MissingParameter(name))
}

/// Solves any program, including the robust and diversity-constrained ones.
pub fn solve_program(
    program: Program,
    alpha: &AlphaVector,
    cov: &CovMatrix,
    params: &ParamArgs,
    shrink: &ShrinkArgs,
) -> CliResult<Portfolio> {
    let p = match program {
        Program::MaxShrinkVI => max_shrink_min_risk(alpha, need(params.alpha0, "alpha0")?, need(params.g0, "g0")?)?,
        Program::MaxShrinkVII => {
            max_shrink_mean_variance(alpha, need(params.gamma, "gamma")?, need(params.g0, "g0")?)?
        }
        Program::ImplicitShrunk => implicit_shrunk_theta(alpha, cov, need(shrink.k, "k")?)?,
        Program::Qoqc => {
            let problem = QoqcProblem {
                alpha: alpha.clone(),
                cov: cov.clone(),
                gamma: need(params.gamma, "gamma")?,
                g0: need(params.g0, "g0")?,
                n0: need(params.n0, "n0")?,
            };
            solve_qoqc(&problem)?.to_portfolio(&problem)
        }
        _ => match shrink_spec(shrink, alpha, cov)? {
            Some(spec) => solve_robust(program, alpha, cov, &spec, &params.program_params())?,
            None => solvers::solve(program, alpha, cov, &params.program_params())?,
        },
    };
    Ok(p)
}

pub fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Estimate { input, output } => {
            let m = load(&input)?;
            let n = m.alpha.dim();
            let rec = MomentsRecord {
                assets: m.assets.clone(),
                alpha: m.alpha.as_slice().to_vec(),
                cov: (0..n).map(|i| m.cov.matrix().row(i).iter().copied().collect()).collect(),
                repaired: m.repaired,
                condition_number: Some(m.cov.condition_number()),
            };
            let body = match output.format {
                Format::Json => json(&rec)?,
                Format::Csv => {
                    let mut header = vec!["asset", "alpha"];
                    header.extend(rec.assets.iter().map(String::as_str));
                    let rows = (0..n)
                        .map(|i| {
                            let mut r = vec![rec.assets[i].clone(), g17(rec.alpha[i])];
                            r.extend(rec.cov[i].iter().map(|x| g17(*x)));
                            r
                        })
                        .collect();
                    csv_table(&header, rows)?
                }
            };
            emit(&output, body)
        }
        Command::Solve { input, output, program, params, shrink } => {
            let m = load(&input)?;
            let p = solve_program(program, &m.alpha, &m.cov, &params, &shrink)?;
            let rec = PortfolioRecord::new(&p, &m.assets, &m.alpha, &m.cov);
            let body = match output.format {
                Format::Json => json(&rec)?,
                Format::Csv => csv_table(
                    &["asset", "weight"],
                    rec.assets.iter().zip(&rec.weights).map(|(a, w)| vec![a.clone(), g17(*w)]).collect(),
                )?,
            };
            emit(&output, body)
        }
        Command::Frontier { input, output, g0, alpha_grid, weights } => {
            let m = load(&input)?;
            let grid = parse_grid(&alpha_grid)?;
            surface_output(&m, &output, &grid, &[g0], weights)
        }
        Command::Surface { input, output, g0, alpha_grid, weights } => {
            let m = load(&input)?;
            let a_grid = parse_grid(&alpha_grid)?;
            let g_grid = parse_grid(&g0)?;
            surface_output(&m, &output, &a_grid, &g_grid, weights)
        }
        Command::Bounds { input, output, weights, program, params, psi } => {
            let m = load(&input)?;
            let theta = match (weights, program) {
                (Some(w), _) => parse_weights(&w)?,
                (None, Some(p)) => solve_program(p, &m.alpha, &m.cov, &params, &ShrinkArgs::default())?.into_weights(),
                (None, None) => return Err(CliError::usage("InvalidArgument", "--weights or --program is required")),
            };
            if theta.len() != m.alpha.dim() {
                return Err(Error::InvalidDimension(format!(
                    "{} weights for {} assets",
                    theta.len(),
                    m.alpha.dim()
                ))
                .into());
            }
            let report = verify_bound(&m.alpha, &m.cov, &theta, psi)?;
            let body = match output.format {
                Format::Json => json(&report)?,
                Format::Csv => bounds_csv(&report)?,
            };
            emit(&output, body)
        }
        Command::ShrinkSweep { input, output, mode, grid, program, params } => {
            let m = load(&input)?;
            let grid = parse_grid(&grid)?;
            let mut pp = params.program_params();
            if pp.g0.is_none() && matches!(program, Program::IV | Program::VIII) {
                pp.g0 = Some(1.0);
            }
            let rows = shrink_sweep(&m.alpha, &m.cov, mode.into(), &grid, program, &pp)?;
            let body = match output.format {
                Format::Json => {
                    let recs: Vec<SweepRecord> = rows
                        .iter()
                        .map(|r| SweepRecord {
                            k: r.intensity,
                            kappa_tilde: r.kappa_tilde,
                            cos_phi_risky: r.cos_phi_risky,
                            cos_phi_optimal: r.cos_phi_optimal,
                            bound_kantorovich: r.bound_kantorovich,
                            weights: r.weights.clone(),
                        })
                        .collect();
                    json(&recs)?
                }
                Format::Csv => {
                    let mut out = Vec::with_capacity(rows.len());
                    for r in &rows {
                        out.push(vec![
                            g17(r.intensity),
                            g17(r.kappa_tilde),
                            g17(r.cos_phi_risky),
                            g17(r.cos_phi_optimal),
                            g17(r.bound_kantorovich),
                            json(&r.weights)?,
                        ]);
                    }
                    csv_table(
                        &["k", "kappa_tilde", "cos_phi_risky", "cos_phi_optimal", "bound_kantorovich", "weights_json"],
                        out,
                    )?
                }
            };
            emit(&output, body)
        }
        Command::Qoqc { input, output, gamma, g0, n0 } => {
            let m = load(&input)?;
            let problem = QoqcProblem { alpha: m.alpha.clone(), cov: m.cov.clone(), gamma, g0, n0 };
            let sol = solve_qoqc(&problem)?;
            let rec = QoqcRecord::new(&sol, &m.assets);
            let body = match output.format {
                Format::Json => json(&rec)?,
                Format::Csv => csv_table(
                    &["asset", "weight"],
                    rec.assets.iter().zip(&rec.weights).map(|(a, w)| vec![a.clone(), g17(*w)]).collect(),
                )?,
            };
            emit(&output, body)
        }
        Command::Verify { input, output, portfolio, seed, samples } => {
            let m = load(&input)?;
            let text = read_file(&portfolio)?;
            let rec: PortfolioRecord = serde_json::from_str(&text)
                .map_err(|e| CliError::usage("MalformedJson", format!("{}: {e}", portfolio.display())))?;
            let report = verify_record(&rec, &m.assets, &m.alpha, &m.cov, seed, samples.max(1))?;
            let body = match output.format {
                Format::Json => json(&report)?,
                Format::Csv => csv_table(
                    &["check", "passed", "value", "tolerance"],
                    report
                        .checks
                        .iter()
                        .map(|c| vec![c.name.clone(), c.passed.to_string(), g17(c.value), g17(c.tolerance)])
                        .collect(),
                )?,
            };
            emit(&output, body)?;
            if report.passed {
                Ok(())
            } else {
                let failed: Vec<&str> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
                Err(Error::VerificationFailed(failed.join(",")).into())
            }
        }
    }
}

#[derive(Debug, Serialize)]
struct SweepRecord {
    k: f64,
    kappa_tilde: f64,
    cos_phi_risky: f64,
    cos_phi_optimal: f64,
    bound_kantorovich: f64,
    weights: Vec<f64>,
}

#[derive(Debug, Serialize)]
struct SurfaceRecord {
    alpha_p: f64,
    g0: f64,
    sigma_p: f64,
    is_gmv_line: bool,
    is_risky_line: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    weights: Option<Vec<f64>>,
}

#[derive(Debug, Serialize)]
struct QoqcCandidateRecord {
    weights: Vec<f64>,
    shift: f64,
    objective: f64,
}

#[derive(Debug, Serialize)]
struct QoqcRecord {
    assets: Vec<String>,
    weights: Vec<f64>,
    lambda1: f64,
    lambda2: f64,
    shift: f64,
    objective: f64,
    kkt_residual: f64,
    boundary: bool,
    candidates: Vec<QoqcCandidateRecord>,
}

impl QoqcRecord {
    fn new(sol: &QoqcSolution, assets: &[String]) -> Self {
        Self {
            assets: assets.to_vec(),
            weights: sol.weights.iter().copied().collect(),
            lambda1: sol.lambda1,
            lambda2: sol.lambda2,
            shift: sol.shift,
            objective: sol.objective,
            kkt_residual: sol.kkt_residual,
            boundary: sol.boundary,
            candidates: sol
                .candidates
                .iter()
                .map(|c| QoqcCandidateRecord {
                    weights: c.weights.iter().copied().collect(),
                    shift: c.shift,
                    objective: c.objective,
                })
                .collect(),
        }
    }
}

fn surface_output(m: &Loaded, output: &OutputArgs, a_grid: &[f64], g_grid: &[f64], weights: bool) -> CliResult<()> {
    let points = pareto_surface(&m.alpha, &m.cov, a_grid, g_grid, weights)?;
    let recs: Vec<SurfaceRecord> = points
        .iter()
        .map(|p| SurfaceRecord {
            alpha_p: p.alpha_p,
            g0: p.g0,
            sigma_p: p.sigma_p,
            is_gmv_line: p.is_gmv_line,
            is_risky_line: p.is_risky_line,
            weights: p.weights.as_ref().map(|w| w.weights().iter().copied().collect()),
        })
        .collect();
    let body = match output.format {
        Format::Json => json(&recs)?,
        Format::Csv => {
            let mut header = vec!["alpha_p", "g0", "sigma_p", "is_gmv_line", "is_risky_line"];
            if weights {
                header.push("weights_json");
            }
            let mut rows = Vec::with_capacity(recs.len());
            for r in &recs {
                let mut row = vec![
                    g17(r.alpha_p),
                    g17(r.g0),
                    g17(r.sigma_p),
                    r.is_gmv_line.to_string(),
                    r.is_risky_line.to_string(),
                ];
                if let Some(w) = &r.weights {
                    row.push(json(w)?);
                }
                rows.push(row);
            }
            csv_table(&header, rows)?
        }
    };
    emit(output, body)
}

fn bounds_csv(r: &BoundReport) -> CliResult<String> {
    csv_table(
        &["cos_phi", "kappa", "bound_kantorovich", "psi", "kappa_psi", "bound_bh", "slack"],
        vec![vec![
            g17(r.cos_phi),
            g17(r.kappa),
            g17(r.bound_kantorovich),
            opt(r.psi),
            opt(r.kappa_psi),
            opt(r.bound_bh),
            g17(r.slack),
        ]],
    )
}

/// One line of a `verify` report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub program: String,
    pub passed: bool,
    pub checks: Vec<Check>,
}

const WEIGHT_TOL: f64 = 1e-8;
const CONSTRAINT_TOL: f64 = 1e-10;
const DOMINANCE_TOL: f64 = 1e-9;

fn param(params: &BTreeMap<String, f64>, name: &'static str) -> crate::Result<f64> {
    params.get(name).copied().ok_or(Error::MissingParameter(name))
}

/// Covariance the record was solved against (shrunk when the record carries
/// shrinkage parameters).
fn effective_cov(program: Program, params: &BTreeMap<String, f64>, cov: &CovMatrix) -> crate::Result<CovMatrix> {
    let spec = if let Some(q) = params.get("q") {
        Some(ShrinkageSpec::Identity { q: *q })
    } else if let Some(q) = params.get("q_diag") {
        Some(ShrinkageSpec::Diagonal { q: *q })
    } else if let (Some(k), Some(k0), false) = (params.get("k"), params.get("k0"), program == Program::ImplicitShrunk) {
        Some(ShrinkageSpec::AngleTargeted { k: *k, k0: *k0 })
    } else {
        None
    };
    match spec {
        Some(s) => shrink_covariance(cov, &s),
        None => Ok(cov.clone()),
    }
}

/// Weights from the generic KKT oracle for the programs that are
/// equality-constrained quadratic programs (or rescalings of one).
/// Returns `None` for programs outside that class.
pub fn kkt_reference(
    program: Program,
    alpha: &AlphaVector,
    cov: &DMatrix<f64>,
    params: &BTreeMap<String, f64>,
) -> crate::Result<Option<DVector<f64>>> {
    let n = alpha.dim();
    let a = alpha.as_vector();
    let ones_row = DMatrix::from_element(1, n, 1.0);
    let alpha_row = DMatrix::from_row_slice(1, n, a.as_slice());
    let both = DMatrix::from_fn(2, n, |i, j| if i == 0 { a[j] } else { 1.0 });
    let zero = DVector::zeros(n);
    let scalar = |x: f64| DVector::from_element(1, x);
    // direction of inv(S) a, normalised to a'theta = 1
    let return_direction = || -> crate::Result<DVector<f64>> {
        Ok(solve_kkt(&KktProblem::new(cov.clone(), zero.clone(), alpha_row.clone(), scalar(1.0))?)?.theta)
    };
    let at_risk = |sigma0: f64| -> crate::Result<DVector<f64>> {
        let d = return_direction()?;
        let s = d.dot(&(cov * &d)).sqrt();
        Ok(d * (sigma0 / s))
    };
    let at_gearing = |g0: f64| -> crate::Result<DVector<f64>> {
        let d = return_direction()?;
        let s = d.sum();
        Ok(d * (g0 / s))
    };
    let theta = match program {
        Program::I => at_risk(param(params, "sigma0")?)?,
        Program::II => {
            solve_kkt(&KktProblem::new(cov.clone(), zero, alpha_row, scalar(param(params, "alpha0")?))?)?.theta
        }
        Program::III => {
            let gamma = param(params, "gamma")?;
            solve_kkt(&KktProblem::unconstrained(cov * gamma, a.clone())?)?.theta
        }
        Program::IV | Program::VIII => at_gearing(params.get("g0").copied().unwrap_or(1.0))?,
        Program::Risky => at_gearing(1.0)?,
        Program::V => match params.get("sigma0") {
            Some(s) => at_risk(*s)?,
            None => at_gearing(param(params, "g0")?)?,
        },
        Program::VI => {
            let rhs = DVector::from_vec(vec![param(params, "alpha0")?, param(params, "g0")?]);
            solve_kkt(&KktProblem::new(cov.clone(), zero, both, rhs)?)?.theta
        }
        Program::VII => {
            let gamma = param(params, "gamma")?;
            solve_kkt(&KktProblem::new(cov * gamma, a.clone(), ones_row, scalar(param(params, "g0")?))?)?.theta
        }
        Program::Gmv => solve_kkt(&KktProblem::new(cov.clone(), zero, ones_row, scalar(1.0))?)?.theta,
        Program::MaxShrinkVI => {
            let rhs = DVector::from_vec(vec![param(params, "alpha0")?, param(params, "g0")?]);
            solve_kkt(&KktProblem::new(DMatrix::identity(n, n), zero, both, rhs)?)?.theta
        }
        Program::MaxShrinkVII => {
            let gamma = param(params, "gamma")?;
            let q = DMatrix::identity(n, n) * gamma;
            solve_kkt(&KktProblem::new(q, a.clone(), ones_row, scalar(param(params, "g0")?))?)?.theta
        }
        Program::Qoqc | Program::ImplicitShrunk => return Ok(None),
    };
    Ok(Some(theta))
}

fn push(checks: &mut Vec<Check>, name: &str, value: f64, tolerance: f64) {
    checks.push(Check { name: name.into(), passed: value.is_finite() && value <= tolerance, value, tolerance });
}

fn rel(x: f64, y: f64) -> f64 {
    (x - y).abs() / x.abs().max(y.abs()).max(1.0)
}

/// Recomputes the invariants of a portfolio record against the given moments.
pub fn verify_record(
    rec: &PortfolioRecord,
    assets: &[String],
    alpha: &AlphaVector,
    cov: &CovMatrix,
    seed: u64,
    samples: usize,
) -> CliResult<VerifyReport> {
    let program: Program =
        rec.program.parse().map_err(|e: String| CliError::usage("MalformedJson", e))?;
    let n = alpha.dim();
    if rec.weights.len() != n {
        return Err(Error::InvalidDimension(format!("{} weights for {n} assets", rec.weights.len())).into());
    }
    let theta = DVector::from_column_slice(&rec.weights);
    let params = &rec.params;
    let cov_eff = effective_cov(program, params, cov)?;
    let mut checks = Vec::new();

    push(&mut checks, "assets", if rec.assets.is_empty() || rec.assets == assets { 0.0 } else { 1.0 }, 0.0);
    push(&mut checks, "gearing_reported", (theta.sum() - rec.gearing).abs(), CONSTRAINT_TOL);
    push(&mut checks, "leverage_reported", (theta.abs().sum() - rec.leverage).abs(), CONSTRAINT_TOL);
    let alpha_p = theta.dot(alpha.as_vector());
    let sigma_p = cov.quad_form(&theta).max(0.0).sqrt();
    push(&mut checks, "alpha_p_reported", rel(alpha_p, rec.alpha_p), CONSTRAINT_TOL);
    push(&mut checks, "sigma_p_reported", rel(sigma_p, rec.sigma_p), CONSTRAINT_TOL);

    let geared_target = match program {
        Program::Gmv | Program::Risky | Program::ImplicitShrunk => Some(1.0),
        Program::IV | Program::VIII => Some(params.get("g0").copied().unwrap_or(1.0)),
        Program::V => params.get("g0").copied(),
        Program::VI | Program::VII | Program::Qoqc | Program::MaxShrinkVI | Program::MaxShrinkVII => {
            Some(param(params, "g0")?)
        }
        _ => None,
    };
    if let Some(g0) = geared_target {
        push(&mut checks, "gearing_constraint", (theta.sum() - g0).abs(), CONSTRAINT_TOL);
    }
    if matches!(program, Program::II | Program::VI | Program::MaxShrinkVI) {
        push(&mut checks, "return_constraint", (alpha_p - param(params, "alpha0")?).abs(), CONSTRAINT_TOL);
    }
    if let (Program::I | Program::V, Some(s0)) = (program, params.get("sigma0")) {
        let sigma_eff = cov_eff.quad_form(&theta).max(0.0).sqrt();
        push(&mut checks, "risk_constraint", rel(sigma_eff, *s0), CONSTRAINT_TOL);
    }

    if let Some(reference) = kkt_reference(program, alpha, cov_eff.matrix(), params)? {
        push(&mut checks, "kkt_oracle", (&theta - reference).amax(), WEIGHT_TOL);
    }

    match program {
        Program::Qoqc => {
            let gamma = param(params, "gamma")?;
            let n0 = param(params, "n0")?;
            let l1 = param(params, "lambda1")?;
            let l2 = param(params, "lambda2")?;
            push(&mut checks, "sphere_constraint", (theta.norm_squared() - 1.0 / n0).abs(), 1e-8);
            let residual = cov_eff.mul(&theta) * gamma - alpha.as_vector() - &theta * (2.0 * l1);
            push(&mut checks, "stationarity", residual.add_scalar(-l2).amax(), 1e-8);
        }
        Program::ImplicitShrunk => {
            let k = param(params, "k")?;
            let a = alpha.as_vector();
            let s_p = cov.quad_form(&theta).sqrt();
            let ball = k * a.norm() * theta.norm();
            let mat = DMatrix::identity(n, n) * (ball / s_p) + cov.matrix() * ((a.dot(&theta) - ball) / s_p);
            let next = mat.lu().solve(a).ok_or(Error::SingularKkt("implicit fixed-point map".into()))?;
            let next = &next / next.sum();
            push(&mut checks, "fixed_point", (&next - &theta).amax(), WEIGHT_TOL);
        }
        _ => {}
    }

    if let Some(check) = dominance_check(program, alpha, &cov_eff, params, &theta, seed, samples)? {
        checks.push(check);
    }

    let passed = checks.iter().all(|c| c.passed);
    Ok(VerifyReport { program: program.to_string(), passed, checks })
}

type Objective<'a> = Box<dyn Fn(&DVector<f64>) -> f64 + 'a>;

fn dominance_check(
    program: Program,
    alpha: &AlphaVector,
    cov: &CovMatrix,
    params: &BTreeMap<String, f64>,
    theta: &DVector<f64>,
    seed: u64,
    samples: usize,
) -> crate::Result<Option<Check>> {
    let n = alpha.dim();
    let a = alpha.as_vector().clone();
    let sharpe = |t: &DVector<f64>| t.dot(&a) / cov.quad_form(t).sqrt();
    let (set, objective): (ConstraintSet, Objective<'_>) = match program {
        Program::IV | Program::VIII | Program::Risky => {
            let g0 = if program == Program::Risky { 1.0 } else { params.get("g0").copied().unwrap_or(1.0) };
            // the gearing slice only has a finite Sharpe maximum on the positive side
            if !(g0 > 0.0 && theta.dot(&a) > 0.0) {
                return Ok(None);
            }
            (ConstraintSet::Gearing { g0 }, Box::new(sharpe))
        }
        Program::III => {
            let gamma = param(params, "gamma")?;
            (ConstraintSet::Free, Box::new(move |t: &DVector<f64>| t.dot(&a) - 0.5 * gamma * cov.quad_form(t)))
        }
        Program::VII => {
            let gamma = param(params, "gamma")?;
            let g0 = param(params, "g0")?;
            (
                ConstraintSet::Gearing { g0 },
                Box::new(move |t: &DVector<f64>| t.dot(&a) - 0.5 * gamma * cov.quad_form(t)),
            )
        }
        Program::MaxShrinkVII => {
            let gamma = param(params, "gamma")?;
            let g0 = param(params, "g0")?;
            (
                ConstraintSet::Gearing { g0 },
                Box::new(move |t: &DVector<f64>| t.dot(&a) - 0.5 * gamma * t.norm_squared()),
            )
        }
        Program::Gmv => (ConstraintSet::Gearing { g0: 1.0 }, Box::new(|t: &DVector<f64>| -cov.quad_form(t))),
        _ => return Ok(None),
    };
    let own = objective(theta);
    let best = dominance_sample(set, n, &objective, samples, seed).best;
    let excess = (best - own).max(0.0);
    Ok(Some(Check {
        name: "dominance".into(),
        passed: best <= own + DOMINANCE_TOL * own.abs().max(1.0),
        value: excess,
        tolerance: DOMINANCE_TOL * own.abs().max(1.0),
    }))
}

