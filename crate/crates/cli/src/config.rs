use std::path::PathBuf;
use std::sync::Arc;

use gns_forge::solver::SolverOptions;
use gns_forge::{make_grid, Domain, GnsError, GnsParams, Model, RadialGrid, Result, Smms, WarpedGeometry};
use serde::Serialize;

pub const MIN_LOG2_N: u32 = 6;
pub const MAX_LOG2_N: u32 = 15;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Constant,
    Extremal,
    Verify,
    Sweep,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Json,
    Csv,
}

/// Fully resolved run configuration; echoed into every output file.
#[derive(Clone, Debug, Serialize)]
pub struct RunConfig {
    pub command: Command,
    pub n: usize,
    pub m: f64,
    /// Exponents; a single entry except for sweeps.
    pub k: Vec<f64>,
    pub model: Model,
    pub domain: Domain,
    #[serde(rename = "N")]
    pub grid_size: usize,
    pub scale: f64,
    pub seed: u64,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub output_path: Option<PathBuf>,
    pub format: Format,
}

#[derive(Serialize)]
pub struct GridMeta {
    pub domain: Domain,
    #[serde(rename = "N")]
    pub nodes: usize,
    pub scale: f64,
    pub step: f64,
    pub r_min: f64,
    pub r_max: f64,
}

impl GridMeta {
    pub fn of(grid: &RadialGrid) -> Self {
        GridMeta {
            domain: grid.domain(),
            nodes: grid.len(),
            scale: grid.scale(),
            step: grid.step(),
            r_min: grid.r()[0],
            r_max: grid.r()[grid.len() - 1],
        }
    }
}

pub fn default_domain(model: Model) -> Domain {
    match model {
        Model::Sphere => Domain::SphereChart,
        Model::Hyperbolic => Domain::Segment,
        Model::Euclidean | Model::Custom => Domain::HalfLine,
    }
}

pub fn default_scale(domain: Domain) -> f64 {
    match domain {
        Domain::Segment => 3.0,
        _ => 1.0,
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let size = self.grid_size;
        if !size.is_power_of_two() || size < 1 << MIN_LOG2_N || size > 1 << MAX_LOG2_N {
            return Err(GnsError::Parameter(format!(
                "N = {size} must be a power of two in [{}, {}]",
                1u32 << MIN_LOG2_N,
                1u32 << MAX_LOG2_N
            )));
        }
        if self.k.is_empty() {
            return Err(GnsError::Parameter("at least one k is required".into()));
        }
        let compatible = matches!(
            (self.model, self.domain),
            (Model::Euclidean, Domain::HalfLine | Domain::UnitBall | Domain::Segment)
                | (Model::Sphere, Domain::SphereChart | Domain::Segment)
                | (Model::Hyperbolic, Domain::HalfLine | Domain::Segment)
        );
        if !compatible {
            return Err(GnsError::Parameter(format!(
                "domain {} does not fit model {}",
                self.domain.name(),
                self.model.name()
            )));
        }
        if self.command != Command::Sweep {
            GnsParams::new(self.n, self.m, self.k[0])?;
        }
        self.solver_options().validate()
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions { max_iters: self.max_iters, grad_tol: self.grad_tol, seed: self.seed, ..SolverOptions::default() }
    }

    pub fn grid_at(&self, size: usize) -> Result<Arc<RadialGrid>> {
        make_grid(self.domain, size, self.scale)
    }

    pub fn grid(&self) -> Result<Arc<RadialGrid>> {
        self.grid_at(self.grid_size)
    }

    pub fn geometry(&self, grid: &Arc<RadialGrid>) -> Result<WarpedGeometry> {
        WarpedGeometry::new(self.model, grid, self.n)
    }

    /// The space with constant density `v = 1`.
    pub fn smms(&self, grid: &Arc<RadialGrid>) -> Result<Smms> {
        Smms::unweighted(self.geometry(grid)?, self.m)
    }
}
