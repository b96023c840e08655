mod config;
mod output;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gns_forge::functional::{
    crit_identity_residual, dd_extremal, el_residual_conformal, el_residual_measure, el_residual_metric, exponents,
    multipliers_integral, qk, tractor_multipliers, ExponentSet, FunctionalValue, Multipliers,
};
use gns_forge::identities::{qe_trichotomy, TrichotomyReport};
use gns_forge::solver::{self, ResidualReport};
use gns_forge::{Branch, Domain, GnsError, GnsParams, Model};
use serde::Serialize;

use crate::config::{default_domain, default_scale, Command, Format, GridMeta, RunConfig};
use crate::output::{emit, sig17, to_json};

/// Residuals at or below this count as critical in extremal reports.
const CRITICAL_TOL: f64 = 1e-5;
/// A sweep row is measure-critical when its measure residual is within this factor of its conformal residual.
const MEASURE_NOISE_FACTOR: f64 = 10.0;

#[derive(Parser)]
#[command(name = "gns-forge", version, about = "Conformal GNS constants and tractor identities on radial model spaces")]
#[command(allow_negative_numbers = true)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Minimize the quotient and report the sharp constant.
    Constant {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "1", value_parser = parse_real)]
        k: f64,
    },
    /// Evaluate the explicit extremal: quotient, multipliers, residuals, rigidity case.
    Extremal {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "1", value_parser = parse_real)]
        k: f64,
    },
    /// Run the identity suite; exit 5 unless every row passes.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "1", value_parser = parse_real)]
        k: f64,
    },
    /// Minimize for each k in a comma-separated list.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', required = true, value_parser = parse_real)]
        k: Vec<f64>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long, default_value_t = 3)]
    n: usize,
    #[arg(long, default_value = "1", allow_hyphen_values = true, value_parser = parse_real)]
    m: f64,
    /// euclidean, sphere or hyperbolic.
    #[arg(long, default_value = "euclidean", value_parser = parse_model)]
    model: Model,
    /// half_line, unit_ball, sphere_chart or segment; defaults to the model's natural chart.
    #[arg(long, value_parser = parse_domain)]
    domain: Option<Domain>,
    /// Grid nodes, a power of two in [64, 32768].
    #[arg(long = "N", visible_alias = "grid-size", default_value_t = 4096)]
    grid_size: usize,
    /// Half-line or segment length scale.
    #[arg(long, value_parser = parse_real)]
    scale: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3000)]
    max_iters: usize,
    #[arg(long, default_value = "1e-7", value_parser = parse_real)]
    grad_tol: f64,
    /// Output file; stdout when absent.
    #[arg(long, short)]
    output: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

fn parse_real(s: &str) -> Result<f64, String> {
    s.trim().replace('\u{2212}', "-").parse::<f64>().map_err(|e| format!("`{s}`: {e}"))
}

fn parse_model(s: &str) -> Result<Model, String> {
    Model::parse(s).map_err(|e| e.to_string())
}

fn parse_domain(s: &str) -> Result<Domain, String> {
    Domain::parse(s).map_err(|e| e.to_string())
}

impl Common {
    fn into_config(self, command: Command, k: Vec<f64>) -> RunConfig {
        let domain = self.domain.unwrap_or_else(|| default_domain(self.model));
        let default_format = if command == Command::Sweep { Format::Csv } else { Format::Json };
        RunConfig {
            command,
            n: self.n,
            m: self.m,
            k,
            model: self.model,
            domain,
            grid_size: self.grid_size,
            scale: self.scale.unwrap_or_else(|| default_scale(domain)),
            seed: self.seed,
            max_iters: self.max_iters,
            grad_tol: self.grad_tol,
            output_path: self.output,
            format: self.format.unwrap_or(default_format),
        }
    }
}

#[derive(Debug)]
enum Failure {
    Gns(GnsError),
    Io(std::io::Error),
    Verification(usize),
}

impl From<GnsError> for Failure {
    fn from(e: GnsError) -> Self {
        Failure::Gns(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e)
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Io(e.into())
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Gns(GnsError::Parameter(_) | GnsError::Domain(_) | GnsError::Shape(_)) => 2,
            Failure::Gns(GnsError::Divergence { .. }) => 3,
            Failure::Gns(GnsError::NonConvergence { .. }) => 4,
            Failure::Gns(GnsError::Precondition(_)) | Failure::Verification(_) => 5,
            Failure::Io(_) => 1,
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Gns(e) => e.to_string(),
            Failure::Io(e) => format!("i/o error: {e}"),
            Failure::Verification(count) => format!("{count} identity check(s) did not pass"),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match cli.command {
        Cmd::Constant { common, k } => common.into_config(Command::Constant, vec![k]),
        Cmd::Extremal { common, k } => common.into_config(Command::Extremal, vec![k]),
        Cmd::Verify { common, k } => common.into_config(Command::Verify, vec![k]),
        Cmd::Sweep { common, k } => common.into_config(Command::Sweep, k),
    };
    match run(&cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("gns-forge: {}", f.message());
            ExitCode::from(f.exit_code())
        }
    }
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var("GNS_FORGE_THREADS") else { return Ok(()) };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|t| *t > 0)
        .ok_or_else(|| GnsError::Parameter(format!("GNS_FORGE_THREADS = `{raw}` is not a positive integer")))?;
    // Fails only if a pool already exists, which cannot happen this early.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    Ok(())
}

fn run(cfg: &RunConfig) -> Result<(), Failure> {
    configure_threads()?;
    cfg.validate()?;
    match cfg.command {
        Command::Constant => cmd_constant(cfg),
        Command::Extremal => cmd_extremal(cfg),
        Command::Verify => cmd_verify(cfg),
        Command::Sweep => cmd_sweep(cfg),
    }
}

#[derive(Serialize)]
struct ConstantReport<'a> {
    command: Command,
    config: &'a RunConfig,
    grid: GridMeta,
    branch: Branch,
    sigma: f64,
    gns_constant: f64,
    exponents: ExponentSet,
    iterations: usize,
    grad_norm: f64,
    half_mass_radius: f64,
    residual_report: ResidualReport,
}

fn cmd_constant(cfg: &RunConfig) -> Result<(), Failure> {
    let k = cfg.k[0];
    let params = GnsParams::new(cfg.n, cfg.m, k)?;
    let grid = cfg.grid()?;
    let smms = cfg.smms(&grid)?;
    let res = solver::minimize(&smms, k, &cfg.solver_options())?;
    let ex = exponents(&params)?;
    match cfg.format {
        Format::Json => {
            let report = ConstantReport {
                command: cfg.command,
                config: cfg,
                grid: GridMeta::of(&grid),
                branch: params.branch()?,
                sigma: res.sigma,
                gns_constant: res.sigma.powf(ex.const_power),
                exponents: ex,
                iterations: res.iterations,
                grad_norm: res.grad_norm,
                half_mass_radius: res.half_mass_radius,
                residual_report: res.residual_report,
            };
            emit(cfg.output_path.as_deref(), &to_json(&report)?)?;
        }
        Format::Csv => {
            let rows = [solver::SweepRow { k, outcome: Ok(res) }];
            emit(cfg.output_path.as_deref(), &sweep_csv(cfg, &rows)?)?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct TractorMultiplierSummary {
    lambda_mean: f64,
    lambda_variation: f64,
    mu_mean: f64,
    mu_variation: f64,
}

#[derive(Serialize)]
struct ExtremalResiduals {
    conformal: f64,
    measure: f64,
    metric: f64,
    critical_point_identity: f64,
    window_r: [f64; 2],
}

#[derive(Serialize)]
struct Criticality {
    conformal: bool,
    measure: bool,
    metric: bool,
    tol: f64,
}

#[derive(Serialize)]
struct ExtremalReport<'a> {
    command: Command,
    config: &'a RunConfig,
    grid: GridMeta,
    branch: Branch,
    profile: &'static str,
    quotient: Option<FunctionalValue>,
    #[serde(skip_serializing_if = "Option::is_none")]
    quotient_error: Option<String>,
    exponents: ExponentSet,
    multipliers_integral: Multipliers,
    tractor_multipliers: TractorMultiplierSummary,
    residuals: ExtremalResiduals,
    criticality: Criticality,
    trichotomy: Option<TrichotomyReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    trichotomy_error: Option<String>,
}

fn cmd_extremal(cfg: &RunConfig) -> Result<(), Failure> {
    if cfg.format != Format::Json {
        return Err(GnsError::Parameter("extremal reports are JSON only".into()).into());
    }
    if cfg.model != Model::Euclidean {
        return Err(GnsError::Parameter("the explicit extremal is defined on the euclidean model".into()).into());
    }
    let k = cfg.k[0];
    let params = GnsParams::new(cfg.n, cfg.m, k)?;
    let branch = params.branch()?;
    let grid = cfg.grid()?;
    let smms = cfg.smms(&grid)?;
    let (u, w) = dd_extremal(&params, branch, &grid)?;
    let (window, profile) = match branch {
        Branch::SphereLike => (grid.default_window(), "(1+r^2)^(-(m+n-2)/2)"),
        Branch::BallLike => (grid.window_r(0.0, 0.9), "(1-r^2)_+^(-(m+n-2)/2)"),
    };

    // Away from k = 1 the extremal's k-weight can decay too slowly for the strict tail check;
    // the residuals below do not need the quotient.
    let (quotient, quotient_error) = match qk(&smms, k, &w) {
        Ok(v) => (Some(v), None),
        Err(e @ GnsError::Divergence { .. }) => (None, Some(e.to_string())),
        Err(e) => return Err(e.into()),
    };
    let mult = multipliers_integral(&smms, k, &u)?;
    let (lam, mu) = tractor_multipliers(&smms, k, &u)?;
    let conformal = el_residual_conformal(&smms, k, &u, &mult)?.linf_on(&window);
    let measure = el_residual_measure(&smms, k, &u, &mult)?.linf_on(&window);
    let (met_a, met_b) = el_residual_metric(&smms, k, &u, &mult)?;
    let metric = met_a.linf_on(&window).max(met_b.linf_on(&window));
    let crit = crit_identity_residual(&smms, k, &u, &mult)?.linf_on(&window);
    let (trichotomy, trichotomy_error) = match qe_trichotomy(&smms, k, &u) {
        Ok(rep) => (Some(rep), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let r = grid.r();
    let report = ExtremalReport {
        command: cfg.command,
        config: cfg,
        grid: GridMeta::of(&grid),
        branch,
        profile,
        quotient,
        quotient_error,
        exponents: exponents(&params)?,
        multipliers_integral: mult,
        tractor_multipliers: TractorMultiplierSummary {
            lambda_mean: lam.mean_on(&window),
            lambda_variation: lam.relative_variation_on(&window),
            mu_mean: mu.mean_on(&window),
            mu_variation: mu.relative_variation_on(&window),
        },
        residuals: ExtremalResiduals {
            conformal,
            measure,
            metric,
            critical_point_identity: crit,
            window_r: [r[window.start], r[window.end - 1]],
        },
        criticality: Criticality {
            conformal: conformal <= CRITICAL_TOL,
            measure: measure <= CRITICAL_TOL,
            metric: metric <= CRITICAL_TOL,
            tol: CRITICAL_TOL,
        },
        trichotomy,
        trichotomy_error,
    };
    emit(cfg.output_path.as_deref(), &to_json(&report)?)?;
    Ok(())
}

#[derive(Serialize)]
struct VerifyReport<'a> {
    command: Command,
    config: &'a RunConfig,
    grid: GridMeta,
    rows: &'a [verify::Row],
    all_pass: bool,
}

fn cmd_verify(cfg: &RunConfig) -> Result<(), Failure> {
    let grid = cfg.grid()?;
    let rows = verify::run(cfg);
    let failing = rows.iter().filter(|r| r.status != verify::Status::Pass).count();
    let bytes = match cfg.format {
        Format::Json => to_json(&VerifyReport {
            command: cfg.command,
            config: cfg,
            grid: GridMeta::of(&grid),
            rows: &rows,
            all_pass: failing == 0,
        })?,
        Format::Csv => {
            let mut out = csv::Writer::from_writer(Vec::new());
            out.write_record(["name", "residual", "order", "tol", "sizes", "status", "error"])?;
            for row in &rows {
                let sizes: Vec<String> = row.sizes.iter().map(usize::to_string).collect();
                let status = serde_json::to_value(row.status).map_err(std::io::Error::from)?;
                out.write_record([
                    row.name.clone(),
                    row.residual.map(sig17).unwrap_or_default(),
                    row.order.map(sig17).unwrap_or_default(),
                    sig17(row.tol),
                    sizes.join(";"),
                    status.as_str().unwrap_or_default().to_string(),
                    row.error.clone().unwrap_or_default(),
                ])?;
            }
            out.into_inner().map_err(|e| e.into_error())?
        }
    };
    emit(cfg.output_path.as_deref(), &bytes)?;
    if failing > 0 {
        return Err(Failure::Verification(failing));
    }
    Ok(())
}

const SWEEP_HEADER: [&str; 18] = [
    "k",
    "sigma",
    "res_conformal",
    "res_measure",
    "res_metric",
    "measure_critical",
    "lambda",
    "mu",
    "iterations",
    "grad_norm",
    "n",
    "m",
    "model",
    "domain",
    "N",
    "scale",
    "seed",
    "error",
];

fn sweep_csv(cfg: &RunConfig, rows: &[solver::SweepRow]) -> Result<Vec<u8>, Failure> {
    let mut out = csv::Writer::from_writer(Vec::new());
    out.write_record(SWEEP_HEADER)?;
    let grid = cfg.grid()?;
    for row in rows {
        let mut rec: Vec<String> = vec![sig17(row.k)];
        match &row.outcome {
            Ok(res) => {
                let rep = &res.residual_report;
                let critical = rep.measure <= MEASURE_NOISE_FACTOR * rep.conformal;
                rec.extend([
                    sig17(res.sigma),
                    sig17(rep.conformal),
                    sig17(rep.measure),
                    sig17(rep.metric),
                    critical.to_string(),
                    sig17(rep.multipliers.lambda),
                    sig17(rep.multipliers.mu),
                    res.iterations.to_string(),
                    sig17(res.grad_norm),
                ]);
            }
            Err(_) => rec.extend(std::iter::repeat(String::new()).take(9)),
        }
        rec.extend([
            cfg.n.to_string(),
            sig17(cfg.m),
            cfg.model.name().to_string(),
            cfg.domain.name().to_string(),
            grid.len().to_string(),
            sig17(cfg.scale),
            cfg.seed.to_string(),
            row.outcome.as_ref().err().map(ToString::to_string).unwrap_or_default(),
        ]);
        out.write_record(&rec)?;
    }
    out.into_inner().map_err(|e| Failure::Io(e.into_error()))
}

#[derive(Serialize)]
struct SweepJsonRow {
    k: f64,
    sigma: Option<f64>,
    iterations: Option<usize>,
    grad_norm: Option<f64>,
    residual_report: Option<ResidualReport>,
    measure_critical: Option<bool>,
    error: Option<String>,
}

#[derive(Serialize)]
struct SweepReport<'a> {
    command: Command,
    config: &'a RunConfig,
    grid: GridMeta,
    rows: Vec<SweepJsonRow>,
}

fn cmd_sweep(cfg: &RunConfig) -> Result<(), Failure> {
    let grid = cfg.grid()?;
    let smms = cfg.smms(&grid)?;
    let rows = solver::sweep(&smms, &cfg.k, &cfg.solver_options());
    for row in &rows {
        if let Err(e) = &row.outcome {
            eprintln!("gns-forge: warning: k = {}: {e}", row.k);
        }
    }
    let bytes = match cfg.format {
        Format::Csv => sweep_csv(cfg, &rows)?,
        Format::Json => {
            let rows = rows
                .iter()
                .map(|row| match &row.outcome {
                    Ok(res) => SweepJsonRow {
                        k: row.k,
                        sigma: Some(res.sigma),
                        iterations: Some(res.iterations),
                        grad_norm: Some(res.grad_norm),
                        residual_report: Some(res.residual_report),
                        measure_critical: Some(
                            res.residual_report.measure <= MEASURE_NOISE_FACTOR * res.residual_report.conformal,
                        ),
                        error: None,
                    },
                    Err(e) => SweepJsonRow {
                        k: row.k,
                        sigma: None,
                        iterations: None,
                        grad_norm: None,
                        residual_report: None,
                        measure_critical: None,
                        error: Some(e.to_string()),
                    },
                })
                .collect();
            to_json(&SweepReport { command: cfg.command, config: cfg, grid: GridMeta::of(&grid), rows })?
        }
    };
    emit(cfg.output_path.as_deref(), &bytes)?;
    Ok(())
}
