//! Identity suite behind `gns-forge verify`.

use std::sync::Arc;

use gns_forge::functional::{
    crit_identity_residual_from, dd_extremal, el_residual_conformal, el_residual_measure, el_residual_metric,
    multipliers_integral, qk, Multipliers,
};
use gns_forge::geometry::conformal_rescale;
use gns_forge::identities::{
    convergence_order, covariance_residual_on, obata_identity_residual, obata_identity_terms,
    obata_tensorial_residual, qe_trichotomy, smms_tractor_check, Classification,
};
use gns_forge::tractor::{split, tmetric, QuadraticDensity, TractorNorms};
use gns_forge::{make_grid, Branch, Domain, GnsParams, Model, RadialField, RadialGrid, Result, Smms, Window};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::RunConfig;

/// Finest grid used by refinement studies; beyond it rounding in third and
/// fourth derivatives overtakes truncation error.
pub const STUDY_MAX: usize = 512;
/// The unit ball has a finer radial step at equal N.
pub const STUDY_MAX_BALL: usize = 256;
/// Coarsest grid a refinement study accepts.
pub const STUDY_MIN: usize = 64;
pub const ORDER_MIN: f64 = 1.8;
pub const ORDER_MAX: f64 = 2.2;
/// Residuals below this are exact to rounding and need no order.
const EXACT_FLOOR: f64 = 1e-10;
const CRITICAL_TOL: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Status {
    #[serde(rename = "pass")]
    Pass,
    #[serde(rename = "fail")]
    Fail,
    #[serde(rename = "insufficient resolution")]
    InsufficientResolution,
}

#[derive(Clone, Debug, Serialize)]
pub struct Row {
    pub name: String,
    /// Residual on the finest grid used.
    pub residual: Option<f64>,
    pub order: Option<f64>,
    pub tol: f64,
    /// Grid sizes the row was evaluated on.
    pub sizes: Vec<usize>,
    /// Residual at each size.
    pub residuals: Vec<f64>,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Row {
    fn failed(name: &str, tol: f64, sizes: Vec<usize>, err: String) -> Self {
        Row { name: name.into(), residual: None, order: None, tol, sizes, residuals: vec![], status: Status::Fail, error: Some(err) }
    }
}

/// Grid sizes of a refinement study ending at `min(N, STUDY_MAX)`, or `None` when too coarse.
pub fn study_sizes(grid_size: usize, domain: Domain) -> Option<[usize; 3]> {
    let cap = if domain == Domain::UnitBall { STUDY_MAX_BALL } else { STUDY_MAX };
    let fine = grid_size.min(cap);
    (fine / 4 >= STUDY_MIN).then_some([fine / 4, fine / 2, fine])
}

/// Even coordinate `zeta ~ r^2` near the origin, smooth on the whole model.
fn zeta(model: Model) -> fn(f64) -> f64 {
    match model {
        Model::Sphere => |r| 2.0 * (1.0 - r.cos()),
        Model::Hyperbolic => |r| 2.0 * (r.cosh() - 1.0),
        _ => |r| r * r,
    }
}

/// Curvature sign of the model.
fn kappa(model: Model) -> f64 {
    match model {
        Model::Sphere => 1.0,
        Model::Hyperbolic => -1.0,
        _ => 0.0,
    }
}

/// Positive rational function of `zeta` with seeded coefficients.
fn random_density(rng: &mut ChaCha8Rng, model: Model) -> impl Fn(f64) -> f64 {
    let (a, b, c) = (rng.gen_range(0.5..1.5), rng.gen_range(0.05..0.3), rng.gen_range(0.2..1.0));
    let z = zeta(model);
    move |r| {
        let q = z(r);
        (1.0 + a * q + b * q * q) / (1.0 + c * q)
    }
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
}

impl Ctx<'_> {
    fn grid(&self, size: usize) -> Result<Arc<RadialGrid>> {
        self.cfg.grid_at(size)
    }

    fn smms(&self, grid: &Arc<RadialGrid>, v: Option<RadialField>) -> Result<Smms> {
        let geom = self.cfg.geometry(grid)?;
        match v {
            Some(v) if self.cfg.m != 0.0 => Smms::new(geom, v, self.cfg.m),
            _ => Smms::unweighted(geom, self.cfg.m),
        }
    }

    /// Window `[lo, hi]`, clipped away from a boundary at finite radius.
    fn window(&self, grid: &RadialGrid, lo: f64, hi: f64) -> Window {
        let hi = match grid.domain() {
            Domain::UnitBall | Domain::Segment => hi.min(0.9 * grid.r_end()),
            _ => hi,
        };
        grid.window_r(lo, hi)
    }

    /// Upper end of the default identity window for the model.
    fn r_hi(&self) -> f64 {
        match self.cfg.model {
            Model::Sphere => std::f64::consts::PI,
            Model::Hyperbolic => 2.5,
            _ => 5.0,
        }
    }
}

struct Rows {
    grid_size: usize,
    sizes: Option<[usize; 3]>,
    rows: Vec<Row>,
}

impl Rows {
    fn single(&mut self, name: &str, tol: f64, eval: impl FnOnce() -> Result<f64>) {
        let sizes = vec![self.grid_size];
        let row = match eval() {
            Ok(res) => {
                let ok = res.is_finite() && res <= tol;
                Row {
                    name: name.into(),
                    residual: Some(res),
                    order: None,
                    tol,
                    sizes,
                    residuals: vec![res],
                    status: if ok { Status::Pass } else { Status::Fail },
                    error: None,
                }
            }
            Err(e) => Row::failed(name, tol, sizes, e.to_string()),
        };
        self.rows.push(row);
    }

    /// Refinement study; each evaluation returns one residual per named component.
    fn study<const C: usize>(&mut self, names: [&str; C], band: (f64, f64), eval: impl Fn(usize) -> Result<[f64; C]>) {
        let Some(sizes) = self.sizes else {
            for name in names {
                self.rows.push(Row {
                    name: name.into(),
                    residual: None,
                    order: None,
                    tol: band.0,
                    sizes: vec![],
                    residuals: vec![],
                    status: Status::InsufficientResolution,
                    error: None,
                });
            }
            return;
        };
        let results: Result<Vec<[f64; C]>> = sizes.iter().map(|&s| eval(s)).collect();
        match results {
            Ok(errs) => {
                for (c, name) in names.iter().enumerate() {
                    let seq = [errs[0][c], errs[1][c], errs[2][c]];
                    let order = convergence_order(&seq);
                    let exact = seq.iter().all(|e| *e <= EXACT_FLOOR);
                    let ok = exact || (order >= band.0 && order <= band.1);
                    self.rows.push(Row {
                        name: (*name).into(),
                        residual: Some(seq[2]),
                        order: order.is_finite().then_some(order),
                        tol: band.0,
                        sizes: sizes.to_vec(),
                        residuals: seq.to_vec(),
                        status: if ok { Status::Pass } else { Status::Fail },
                        error: None,
                    });
                }
            }
            Err(e) => {
                for name in names {
                    self.rows.push(Row::failed(name, band.0, sizes.to_vec(), e.to_string()));
                }
            }
        }
    }
}

/// Runs the suite for the configured model, `n` and `m`.
pub fn run(cfg: &RunConfig) -> Vec<Row> {
    let suite = Ctx { cfg };
    let mut rows = Rows { grid_size: cfg.grid_size, sizes: study_sizes(cfg.grid_size, cfg.domain), rows: Vec::new() };
    let (model, n) = (cfg.model, cfg.n as f64);
    let z = zeta(model);
    let kap = kappa(model);
    let r_hi = suite.r_hi();

    rows.single("model_curvature", 1e-10, || {
        let geom = cfg.geometry(&cfg.grid()?)?;
        Ok((geom.scalar_curvature() - n * (n - 1.0) * kap).linf())
    });

    rows.single("tractor_length_of_rescaling", 1e-6, || {
        let grid = cfg.grid()?;
        let geom = cfg.geometry(&grid)?;
        let u = match model {
            Model::Sphere => RadialField::constant(&grid, 1.0),
            Model::Hyperbolic => RadialField::from_fn(&grid, f64::cosh),
            _ => RadialField::from_fn(&grid, |r| (1.0 + r * r) / 2.0),
        };
        let lu = split(&geom, &u)?;
        let length = tmetric(&lu, &lu)?.scale(-n * (n - 1.0));
        let curvature = geom.conformal_to(&u)?.scalar_curvature();
        // Rescaled curvature carries O(h^2) error growing with r on the half-line.
        let w = suite.window(&grid, 0.0, 2.0);
        let target = n * (n - 1.0);
        let a = (&length - &curvature).linf_on(&w);
        let b = (length - target).linf_on(&w);
        Ok(a.max(b) / target)
    });

    rows.study(["conformal_covariance"], (ORDER_MIN, ORDER_MAX), |size| {
        let grid = suite.grid(size)?;
        let smms = suite.smms(&grid, None)?;
        let s = RadialField::from_fn(&grid, |r| -0.25 * (1.0 + z(r)).ln());
        let w = RadialField::from_fn(&grid, |r| (1.0 + 0.3 * (-2.0 * (z(r) - 1.0).powi(2)).exp()) * (-0.1 * z(r)).exp());
        Ok([covariance_residual_on(&smms, &s, &w, &suite.window(&grid, 0.0, r_hi))?])
    });

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let fu = random_density(&mut rng, model);
    let fv = random_density(&mut rng, model);
    rows.study(
        ["weighted_tractor_display_1", "weighted_tractor_display_2", "weighted_tractor_display_3"],
        (ORDER_MIN, f64::INFINITY),
        |size| {
            let grid = suite.grid(size)?;
            let smms = suite.smms(&grid, Some(RadialField::from_fn(&grid, &fv)))?;
            let res = smms_tractor_check(&smms, &RadialField::from_fn(&grid, &fu))?;
            let w = suite.window(&grid, 0.0, r_hi.min(4.0));
            let first = res.res1_rad.linf_on(&w).max(res.res1_tan.linf_on(&w));
            Ok([first, res.res2.linf_on(&w), res.res3.linf_on(&w)])
        },
    );

    let obata_u = move |r: f64| match model {
        Model::Sphere => 1.0 + 0.3 * (-4.0 * (r - 1.0).powi(2)).exp() + 0.1 * r.cos(),
        _ => (1.0 + z(r)).powi(2),
    };
    let obata_window = match model {
        Model::Sphere => (0.1, 3.0),
        Model::Hyperbolic => (0.1, 2.0),
        _ => (0.1, 5.0),
    };
    rows.study(["obata_identity"], (ORDER_MIN, f64::INFINITY), |size| {
        let grid = suite.grid(size)?;
        let geom = cfg.geometry(&grid)?;
        let res = obata_identity_residual(&geom, &RadialField::from_fn(&grid, obata_u), &RadialField::constant(&grid, 1.0))?;
        Ok([res.linf_on(&suite.window(&grid, obata_window.0, obata_window.1))])
    });

    rows.single("obata_rhs_nonpositive", 0.0, || {
        let grid = cfg.grid()?;
        let geom = cfg.geometry(&grid)?;
        let terms = obata_identity_terms(&geom, &RadialField::from_fn(&grid, obata_u), &RadialField::constant(&grid, 1.0))?;
        Ok(terms.rhs.max().max(0.0))
    });

    let tensorial_u = move |r: f64| match model {
        Model::Sphere => 1.0 + 0.3 * (-4.0 * (r - 1.0).powi(2)).exp(),
        Model::Hyperbolic => r.cosh() * (1.0 + 0.1 * (-r * r).exp()),
        _ => 0.5 * (1.0 + r * r) * (1.0 + 0.1 * (-r * r).exp()),
    };
    let tensorial_window = match model {
        Model::Sphere => (0.3, 2.8),
        Model::Hyperbolic => (0.5, 2.5),
        _ => (0.5, 5.0),
    };
    rows.study(["obata_tensorial"], (ORDER_MIN, f64::INFINITY), |size| {
        let grid = suite.grid(size)?;
        let geom = cfg.geometry(&grid)?;
        let res = obata_tensorial_residual(&geom, kap, &RadialField::from_fn(&grid, tensorial_u))?;
        Ok([res.linf_on(&suite.window(&grid, tensorial_window.0, tensorial_window.1))])
    });

    // Decays one power faster than the extremal, so every integral converges with a small tail.
    let (m, k) = (cfg.m, cfg.k[0]);
    let profile = move |r: f64| match model {
        Model::Euclidean if cfg.domain == Domain::UnitBall => (1.0 - r * r).max(0.0).powi(3),
        Model::Euclidean => (1.0 + r * r).powf(-(m + n - 1.0) / 2.0) * (1.0 + 0.1 * (-r * r).exp()),
        _ => 1.0 + 0.3 * (-2.0 * (z(r) - 1.0).powi(2)).exp(),
    };
    rows.single("quotient_homogeneity", 1e-10, || {
        let grid = cfg.grid()?;
        let smms = suite.smms(&grid, None)?;
        let w = RadialField::from_fn(&grid, profile);
        let base = qk(&smms, k, &w)?.qk;
        let worst = [0.1, 7.0]
            .iter()
            .map(|&c| qk(&smms, k, &w.scale(c)).map(|v| (v.qk - base).abs() / base.abs()))
            .collect::<Result<Vec<_>>>()?;
        Ok(worst.into_iter().fold(0.0, f64::max))
    });

    rows.single("quotient_conformal_invariance", 1e-10, || {
        let grid = cfg.grid()?;
        let smms = suite.smms(&grid, None)?;
        let w = RadialField::from_fn(&grid, profile);
        let s = RadialField::from_fn(&grid, |r| 0.4 * (-z(r)).exp() - 0.2 * (1.0 + z(r)).ln());
        let moved = &w * &s.scale(-(m + n - 2.0) / 2.0).exp();
        let a = qk(&smms, k, &w)?.qk;
        let b = qk(&conformal_rescale(&smms, &s)?, k, &moved)?.qk;
        Ok((a - b).abs() / a.abs())
    });

    if model == Model::Euclidean && cfg.domain == Domain::HalfLine {
        rows.single("quotient_dilation_invariance", 1e-6, || {
            let grid = cfg.grid()?;
            let smms = suite.smms(&grid, None)?;
            let dilated = |c: f64| RadialField::from_fn(&grid, move |r| profile(c * r));
            let base = qk(&smms, k, &dilated(1.0))?.qk;
            let worst = [0.5, 2.0]
                .iter()
                .map(|&c| qk(&smms, k, &dilated(c)).map(|v| (v.qk - base).abs() / base.abs()))
                .collect::<Result<Vec<_>>>()?;
            Ok(worst.into_iter().fold(0.0, f64::max))
        });
    }

    extremal_rows(&suite, &mut rows);

    if model == Model::Euclidean {
        rows.single("trichotomy_cases", 0.0, || trichotomy_misses(cfg.grid_size));
    }
    rows.rows
}

/// Criticality of the explicit extremal (flat) or of constants (curved models) at `k = 1`.
fn extremal_rows(suite: &Ctx, rows: &mut Rows) {
    let cfg = suite.cfg;
    let Ok(params) = GnsParams::new(cfg.n, cfg.m, 1.0) else { return };
    let grid = match cfg.grid() {
        Ok(g) => g,
        Err(_) => return,
    };
    let built = (|| -> Result<(Smms, RadialField, Window)> {
        let smms = suite.smms(&grid, None)?;
        match cfg.model {
            Model::Euclidean => {
                let branch = params.branch()?;
                let (u, _) = dd_extremal(&params, branch, &grid)?;
                let w = match branch {
                    Branch::SphereLike => grid.default_window(),
                    Branch::BallLike => grid.window_r(0.0, 0.9),
                };
                Ok((smms, u, w))
            }
            _ => Ok((smms, RadialField::constant(&grid, 1.0), grid.default_window())),
        }
    })();
    let (smms, u, window) = match built {
        Ok(b) => b,
        Err(e) => {
            rows.rows.push(Row::failed("extremal_criticality", CRITICAL_TOL, vec![cfg.grid_size], e.to_string()));
            return;
        }
    };
    let mult = multipliers_integral(&smms, 1.0, &u);
    let residual = |f: &dyn Fn(&Multipliers) -> Result<f64>| -> Result<f64> { f(mult.as_ref().map_err(Clone::clone)?) };
    rows.single("extremal_conformal_residual", CRITICAL_TOL, || {
        residual(&|mu| Ok(el_residual_conformal(&smms, 1.0, &u, mu)?.linf_on(&window)))
    });
    rows.single("extremal_measure_residual", CRITICAL_TOL, || {
        residual(&|mu| Ok(el_residual_measure(&smms, 1.0, &u, mu)?.linf_on(&window)))
    });
    rows.single("extremal_metric_residual", CRITICAL_TOL, || {
        residual(&|mu| {
            let (a, b) = el_residual_metric(&smms, 1.0, &u, mu)?;
            Ok(a.linf_on(&window).max(b.linf_on(&window)))
        })
    });
    if cfg.model == Model::Euclidean && params.branch() == Ok(Branch::SphereLike) {
        // Exact multipliers of `u = 1 + r^2`, with the closed-form tractor norms.
        let (n, m) = (cfg.n as f64, cfg.m);
        let exact = Multipliers { lambda: 4.0 * (m + n - 1.0), mu: 2.0 * m };
        rows.single("extremal_critical_point_identity", 1e-10, || {
            let q = QuadraticDensity::radial(1.0, 1.0, cfg.n);
            let one = QuadraticDensity::radial(1.0, 0.0, cfg.n);
            let norms = TractorNorms::flat_quadratic(&grid, &q, &one);
            Ok(crit_identity_residual_from(&smms, 1.0, &u, &exact, &norms)?.linf_on(&window))
        });
    }
}

/// Number of canonical rigidity configurations that do not classify as their single expected case.
fn trichotomy_misses(grid_size: usize) -> Result<f64> {
    let half = make_grid(Domain::HalfLine, grid_size, 1.0)?;
    let flat = |m: f64, v: Option<RadialField>| -> Result<Smms> {
        let geom = gns_forge::WarpedGeometry::euclidean(&half, 3)?;
        match v {
            Some(v) => Smms::new(geom, v, m),
            None => Smms::unweighted(geom, m),
        }
    };
    let quad = RadialField::from_fn(&half, |r| 1.0 + r * r);
    let mut misses = 0;
    let mut expect = |rep: gns_forge::identities::TrichotomyReport, case: Classification| {
        if rep.classification != case || rep.cases.len() != 1 {
            misses += 1;
        }
    };
    expect(qe_trichotomy(&flat(2.0, Some(quad.clone()))?, 1.37, &quad)?, Classification::RatioConstant);
    expect(qe_trichotomy(&flat(1.0, None)?, 1.0, &quad)?, Classification::K1ScalarFlat);
    let ball = make_grid(Domain::UnitBall, grid_size, 1.0)?;
    let v = RadialField::from_fn(&ball, |r| (1.0 - r * r) / 2.0);
    let smms = Smms::new(gns_forge::WarpedGeometry::euclidean(&ball, 3)?, v, 3.0)?;
    let u = RadialField::from_fn(&ball, |r| (1.0 + r * r) / 2.0);
    expect(qe_trichotomy(&smms, 2.0, &u)?, Classification::K2Orthogonal);
    Ok(misses as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn study_sizes_guard() {
        assert_eq!(study_sizes(64, Domain::HalfLine), None);
        assert_eq!(study_sizes(128, Domain::HalfLine), None);
        assert_eq!(study_sizes(256, Domain::HalfLine), Some([64, 128, 256]));
        assert_eq!(study_sizes(4096, Domain::HalfLine), Some([128, 256, 512]));
        assert_eq!(study_sizes(4096, Domain::UnitBall), Some([64, 128, 256]));
    }
}
