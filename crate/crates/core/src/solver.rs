//! Preconditioned descent for `Q_k` over positive radial profiles, and
//! parameter sweeps.
//!
//! Iterates live in the model frame of the space. The step direction solves the
//! tridiagonal system of a positive surrogate Hessian of `log Q_k`; positivity is
//! kept by moving along `w e^{t d / w}` (or `(sqrt w + t d / (2 sqrt w))^2` on the
//! ball-like branch, where extremals vanish at the boundary).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{GnsError, Result};
use crate::functional::{
    cwm_fields, multipliers_from_parts, qk, residual_conformal_from, residual_measure_from, residual_metric_from,
    DiscreteQuotient, Multipliers, QuotientParts,
};
use crate::geometry::{Branch, GnsParams, Model, Smms};
use crate::grid::{Domain, RadialField, Window};

/// Armijo sufficient-decrease constant.
const ARMIJO: f64 = 1e-4;
/// Nodes below this share of `max w` are ignored when capping the step.
const NEGLIGIBLE: f64 = 1e-30;
/// Largest log-change per step at negligible nodes.
const NEGLIGIBLE_CLAMP: f64 = 2.0;
/// Smallest profile value kept.
const FLOOR: f64 = 1e-300;
/// Smallest trial step before the line search gives up.
const MIN_STEP: f64 = 1e-20;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SolverOptions {
    pub max_iters: usize,
    /// Stop when the preconditioned gradient norm `sqrt(g^T B^{-1} g)` drops below this.
    pub grad_tol: f64,
    /// First trial step of each line search.
    pub step0: f64,
    pub backtrack_factor: f64,
    /// Seeds the perturbation of the cold start.
    pub seed: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { max_iters: 3000, grad_tol: 1e-7, step0: 1.0, backtrack_factor: 0.5, seed: 0 }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(GnsError::Parameter("max_iters must be at least 1".into()));
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return Err(GnsError::Parameter(format!("backtrack_factor {} not in (0, 1)", self.backtrack_factor)));
        }
        if !(self.grad_tol > 0.0 && self.step0 > 0.0) {
            return Err(GnsError::Parameter("grad_tol and step0 must be positive".into()));
        }
        Ok(())
    }
}

/// Euler-Lagrange residuals of a computed minimizer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ResidualReport {
    /// Multipliers from the quotient integrals at the minimizer.
    pub multipliers: Multipliers,
    /// L-infinity norms over the report window.
    pub conformal: f64,
    pub measure: f64,
    pub metric: f64,
    /// Outer radius of the report window.
    pub window_r: f64,
}

#[derive(Clone, Debug)]
pub struct MinimizeResult {
    /// Minimizer on the given space, normalized to `omega0 = 1`.
    pub w_star: RadialField,
    pub sigma: f64,
    pub iterations: usize,
    pub grad_norm: f64,
    pub residual_report: ResidualReport,
    /// `log Q_k` at the initial iterate and after every accepted step.
    pub history: Vec<f64>,
    /// Radius enclosing half of `omega0` in the model frame.
    pub half_mass_radius: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Chart {
    Log,
    Root,
}

impl Chart {
    /// Log-change `ln(w_new / w)` for the step `t d`.
    fn rho(self, t: f64, d: f64, w: f64) -> f64 {
        match self {
            Chart::Log => t * d / w,
            Chart::Root => 2.0 * (t * d / (2.0 * w)).ln_1p(),
        }
    }

    /// Largest step keeping the relative change of the chart variable bounded.
    fn cap(self, max_rel: f64) -> f64 {
        match self {
            Chart::Log => 2.0 / max_rel,
            Chart::Root => 1.0 / max_rel,
        }
    }
}

fn params_of(smms: &Smms, k: f64) -> Result<(GnsParams, Branch)> {
    let params = GnsParams::new(smms.n(), smms.m(), k)?;
    let branch = params.validate()?;
    Ok((params, branch))
}

/// Cold start: an algebraically decaying bump on the half-line, a bump
/// symmetric under `r -> pi - r` on the sphere chart, a boundary-vanishing
/// profile on the ball-like branch; times a small smooth seeded perturbation.
pub fn cold_start(smms: &Smms, k: f64, seed: u64) -> Result<RadialField> {
    let (params, branch) = params_of(smms, k)?;
    let grid = smms.grid();
    let mn2 = params.m + params.n as f64 - 2.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let amps: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let scale = grid.scale();
    let bump = |r: f64| -> f64 {
        let x = r / scale;
        match (grid.domain(), branch) {
            (Domain::UnitBall, Branch::BallLike) => (1.0 - x * x).max(0.0).powi(4),
            (Domain::SphereChart, _) => 1.0 + 0.5 * (-(r - std::f64::consts::FRAC_PI_2).powi(2)).exp(),
            (Domain::HalfLine, _) => (1.0 + x * x).powf(-0.75 * mn2.abs()),
            _ => 1.0 + 0.5 * (-x * x).exp(),
        }
    };
    let perturb = |r: f64| -> f64 {
        let x = r / scale;
        let basis = |j: usize| match grid.domain() {
            Domain::SphereChart => (2.0 * j as f64 * r).cos(),
            _ => (j as f64 * std::f64::consts::PI * x * x / (1.0 + x * x)).cos(),
        };
        (0.05 * amps.iter().enumerate().map(|(j, a)| a * basis(j + 1)).sum::<f64>()).exp()
    };
    let w = RadialField::from_fn(grid, |r| bump(r) * perturb(r));
    Ok(if branch == Branch::BallLike { w.with_outer_zero() } else { w })
}

/// The explicit extremal of the space, for warm starts.
pub fn warm_start(smms: &Smms, k: f64) -> Result<RadialField> {
    let (params, branch) = params_of(smms, k)?;
    let (_, w) = crate::functional::dd_extremal(&params, branch, smms.grid())?;
    Ok(w)
}

/// Minimizes `Q_k` from the cold start.
pub fn minimize(smms: &Smms, k: f64, opts: &SolverOptions) -> Result<MinimizeResult> {
    let w0 = cold_start(smms, k, opts.seed)?;
    minimize_from(smms, k, opts, &w0)
}

/// Symmetric tridiagonal matrix `(diag, off)`.
struct Tridiag {
    diag: Vec<f64>,
    off: Vec<f64>,
}

impl Tridiag {
    #[cfg(test)]
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y: Vec<f64> = self.diag.iter().zip(x).map(|(d, v)| d * v).collect();
        for (i, o) in self.off.iter().enumerate() {
            y[i] += o * x[i + 1];
            y[i + 1] += o * x[i];
        }
        y
    }

    /// Thomas algorithm; the matrix is symmetric positive definite.
    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.diag.len();
        let mut c = vec![0.0; n];
        let mut x = vec![0.0; n];
        let mut denom = self.diag[0];
        x[0] = b[0] / denom;
        for i in 1..n {
            c[i - 1] = self.off[i - 1] / denom;
            denom = self.diag[i] - self.off[i - 1] * c[i - 1];
            x[i] = (b[i] - self.off[i - 1] * x[i - 1]) / denom;
        }
        for i in (0..n - 1).rev() {
            x[i] -= c[i] * x[i + 1];
        }
        x
    }
}

/// Positive surrogate for the Hessian of `log Q_k`: the stiffness with `|potential|`
/// plus the absolute curvatures of the two power terms.
fn preconditioner(dq: &DiscreteQuotient, w: &[f64], parts: &QuotientParts) -> Tridiag {
    let e = dq.exponents();
    let face = dq.face_coefficients();
    let scale = 2.0 / parts.energy;
    let mut diag: Vec<f64> = dq.potential().iter().map(|p| scale * p.abs()).collect();
    for (i, c) in face.iter().enumerate() {
        diag[i] += scale * c;
        diag[i + 1] += scale * c;
    }
    let a0 = (e.q_f * e.q_leb * (e.q_leb - 1.0)).abs() / parts.omega0;
    let ak = if e.p_f == 0.0 { 0.0 } else { (e.p_f * e.p_leb * (e.p_leb - 1.0)).abs() / parts.omegak };
    for (i, d) in diag.iter_mut().enumerate() {
        *d += a0 * dq.weight0()[i] * w[i].powf(e.q_leb - 2.0);
        if ak != 0.0 {
            *d += ak * dq.weightk()[i] * w[i].powf(e.p_leb - 2.0);
        }
    }
    let off = face.iter().map(|c| -scale * c).collect();
    Tridiag { diag, off }
}

/// Whether the conformal dilations are symmetries of the model-frame quotient.
/// On the ball-like branch only shrinking dilations are; starting inside the
/// support of the extremal keeps the pinned problem on the extremal family.
fn has_dilation_symmetry(base: &Smms, branch: Branch) -> bool {
    let geom = base.geom();
    if geom.is_rescaled() || !base.has_constant_density() {
        return false;
    }
    let domain = base.grid().domain();
    match geom.model() {
        Model::Euclidean => domain == Domain::HalfLine || (domain == Domain::UnitBall && branch == Branch::BallLike),
        Model::Sphere => domain == Domain::SphereChart && base.m() == 0.0,
        _ => false,
    }
}

/// Gradient of the share of `omega0` carried by the nodes with `r <= pin`.
fn pin_normal(dq: &DiscreteQuotient, w: &[f64], pin: f64) -> Vec<f64> {
    let q = dq.exponents().q_leb;
    let r = dq.grid().r();
    let mass: Vec<f64> = dq.weight0().iter().zip(w).map(|(c, x)| c * x.powf(q)).collect();
    let total: f64 = mass.iter().sum();
    let inner: f64 = mass.iter().zip(r).filter(|(_, ri)| **ri <= pin).map(|(m, _)| m).sum();
    let share = inner / total;
    (0..w.len())
        .map(|i| {
            let inside = if r[i] <= pin { 1.0 } else { 0.0 };
            q * mass[i] / w[i] * (inside - share) / total
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(dq: &DiscreteQuotient, w: &mut [f64]) {
    let q = dq.exponents().q_leb;
    let omega0: f64 = dq.weight0().iter().zip(w.iter()).map(|(c, x)| c * x.powf(q)).sum();
    let factor = omega0.powf(-1.0 / q);
    for x in w.iter_mut() {
        *x = (*x * factor).max(FLOOR);
    }
}

fn half_mass_radius(dq: &DiscreteQuotient, w: &[f64]) -> f64 {
    let q = dq.exponents().q_leb;
    let mass: Vec<f64> = dq.weight0().iter().zip(w).map(|(c, x)| c * x.powf(q)).collect();
    let total: f64 = mass.iter().sum();
    let mut acc = 0.0;
    for (i, m) in mass.iter().enumerate() {
        acc += m;
        if acc >= 0.5 * total {
            return dq.grid().r()[i];
        }
    }
    dq.grid().r()[w.len() - 1]
}

/// Minimizes `Q_k` starting from `w0`.
pub fn minimize_from(smms: &Smms, k: f64, opts: &SolverOptions, w0: &RadialField) -> Result<MinimizeResult> {
    opts.validate()?;
    let (params, branch) = params_of(smms, k)?;
    w0.check_grid(smms.v(), "initial profile")?;
    if w0.min() <= 0.0 && branch == Branch::SphereLike {
        return Err(GnsError::Domain("initial profile must be positive".into()));
    }
    let dirichlet = branch == Branch::BallLike && smms.grid().domain() != Domain::HalfLine;
    let dq = DiscreteQuotient::new(smms, k, dirichlet)?;
    let (base, _) = smms.pull_back();
    let chart = if branch == Branch::BallLike { Chart::Root } else { Chart::Log };

    let mut w = dq.to_base(w0.values());
    normalize(&dq, &mut w);
    dq.check_energy_tail(&w)?;
    // Dilations are quotiented out by holding the omega0 share inside the
    // initial half-mass radius fixed.
    let pin = has_dilation_symmetry(&base, branch).then(|| half_mass_radius(&dq, &w));
    let mut parts = dq.parts(&w);
    let mut logq = dq.log_value(&parts)?;
    let mut history = vec![logq];
    let mut grad_norm = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < opts.max_iters {
        let g = dq.gradient(&w, &parts);
        let b = preconditioner(&dq, &w, &parts);
        let mut d: Vec<f64> = b.solve(&g).into_iter().map(|x| -x).collect();
        if let Some(pin) = pin {
            let normal = pin_normal(&dq, &w, pin);
            let y = b.solve(&normal);
            let nyn = dot(&normal, &y);
            if nyn > 0.0 {
                let coef = dot(&normal, &d) / nyn;
                d.iter_mut().zip(&y).for_each(|(di, yi)| *di -= coef * yi);
            }
        }
        let slope = dot(&g, &d);
        grad_norm = (-slope).max(0.0).sqrt();
        if !grad_norm.is_finite() {
            return Err(GnsError::Divergence { name: "gradient".into(), fraction: f64::INFINITY, tol: 0.0 });
        }
        if grad_norm <= opts.grad_tol {
            converged = true;
            break;
        }

        let w_max = w.iter().cloned().fold(0.0, f64::max);
        let significant = |x: f64| x >= NEGLIGIBLE * w_max;
        let max_rel = w
            .iter()
            .zip(&d)
            .filter(|(x, _)| significant(**x))
            .map(|(x, di)| (di / x).abs())
            .fold(0.0, f64::max);
        let mut t = if max_rel > 0.0 { opts.step0.min(chart.cap(max_rel)) } else { opts.step0 };
        let mut accepted = None;
        while t >= MIN_STEP {
            let rho: Vec<f64> = w
                .iter()
                .zip(&d)
                .map(|(x, di)| {
                    if significant(*x) {
                        chart.rho(t, *di, *x)
                    } else {
                        (t * di / x).clamp(-NEGLIGIBLE_CLAMP, NEGLIGIBLE_CLAMP)
                    }
                })
                .collect();
            let change = dq.log_change(&w, &rho, &parts);
            if change.is_finite() && change <= ARMIJO * t * slope {
                accepted = Some(rho);
                break;
            }
            t *= opts.backtrack_factor;
        }
        let Some(rho) = accepted else {
            break;
        };
        for (x, r) in w.iter_mut().zip(&rho) {
            *x *= r.exp();
        }
        normalize(&dq, &mut w);
        parts = dq.parts(&w);
        let next = dq.log_value(&parts)?;
        assert!(next <= logq + 1e-13 * logq.abs().max(1.0), "descent step increased log Q_k: {logq} -> {next}");
        logq = next;
        history.push(logq);
        iterations += 1;
    }
    if !converged {
        return Err(GnsError::NonConvergence { iterations, grad_norm });
    }

    let half_mass_radius = half_mass_radius(&dq, &w);
    let mut w_star = RadialField::new(smms.grid(), dq.from_base(&w))?;
    if branch == Branch::BallLike {
        w_star = w_star.with_outer_zero();
    }
    let sigma = qk(smms, k, &w_star)?.qk;
    let multipliers = multipliers_from_parts(&params, &parts)?;
    let residual_report = residual_report(smms, k, &w_star, &multipliers)?;
    Ok(MinimizeResult { w_star, sigma, iterations, grad_norm, residual_report, history, half_mass_radius })
}

/// Default window cut where `w` drops below `1e-8 max w`.
pub fn report_window(w: &RadialField) -> Window {
    let window = w.grid().default_window();
    let floor = 1e-8 * w.max();
    let end = w.values()[window.indices()].iter().position(|x| *x < floor).unwrap_or(window.len());
    w.grid().window_r(0.0, w.r()[end.max(1) - 1])
}

/// L-infinity norms of the three Euler-Lagrange residuals of `w` with `u = w^{-2/(m+n-2)}`.
pub fn residual_report(smms: &Smms, k: f64, w: &RadialField, mult: &Multipliers) -> Result<ResidualReport> {
    let mn2 = smms.m() + smms.n() as f64 - 2.0;
    let window = report_window(w);
    let u = w.powf(-2.0 / mn2);
    let cwm = cwm_fields(smms, &u)?;
    let conformal = residual_conformal_from(smms, k, &cwm, mult).linf_on(&window);
    let measure = residual_measure_from(smms, k, &cwm, mult).linf_on(&window);
    let (rad, tan) = residual_metric_from(k, &cwm, mult);
    let metric = rad.linf_on(&window).max(tan.linf_on(&window));
    let window_r = w.r()[window.indices().end.max(1) - 1];
    Ok(ResidualReport { multipliers: *mult, conformal, measure, metric, window_r })
}

/// One row of a sweep.
#[derive(Clone, Debug)]
pub struct SweepRow {
    pub k: f64,
    pub outcome: Result<MinimizeResult>,
}

/// Independent minimizations over `k_list`; failures are kept per row.
pub fn sweep(smms: &Smms, k_list: &[f64], opts: &SolverOptions) -> Vec<SweepRow> {
    k_list.par_iter().map(|&k| SweepRow { k, outcome: minimize(smms, k, opts) }).collect()
}
