//! Warped-product model geometries and the weighted curvature operators of a
//! smooth metric measure space `(M, g, v^m dvol)`.
//!
//! A geometry is `g = e^{2s} (dr^2 + f(r)^2 g_sphere)` where `f` belongs to a
//! named model (or is sampled) and `s` is an optional conformal exponent added
//! by [`conformal_rescale`]. The radial coordinate is never re-parametrized:
//! every operator carries the lapse `a = e^s` explicitly.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{GnsError, Result};
use crate::grid::{Domain, Parity, RadialField, RadialGrid, Window};

/// Relative tail contribution above which an integral is declared divergent.
pub const TAIL_TOL: f64 = 1e-6;

/// Dimension `n`, dimensional parameter `m` and exponent `k`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GnsParams {
    pub n: usize,
    pub m: f64,
    pub k: f64,
}

/// Which admissible parameter range a [`GnsParams`] lies in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// `m >= 0`, `0 < k <= (m+n+2)/2`; extremals are spherical caps `(1+r^2)^-a`.
    SphereLike,
    /// `m <= -n-2`, `0 < k <= -2m/(n-2)`; extremals are supported on the ball.
    BallLike,
}

impl GnsParams {
    pub fn new(n: usize, m: f64, k: f64) -> Result<Self> {
        let p = GnsParams { n, m, k };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<Branch> {
        let (n, m, k) = (self.n as f64, self.m, self.k);
        if self.n < 3 {
            return Err(GnsError::Parameter(format!("dimension n = {} must be at least 3", self.n)));
        }
        if !m.is_finite() || !k.is_finite() {
            return Err(GnsError::Parameter("m and k must be finite".into()));
        }
        if m + n - 2.0 == 0.0 {
            return Err(GnsError::Parameter("m + n - 2 must be nonzero".into()));
        }
        if m >= 0.0 {
            let top = (m + n + 2.0) / 2.0;
            if k > 0.0 && k <= top {
                return Ok(Branch::SphereLike);
            }
            Err(GnsError::Parameter(format!("k = {k} outside (0, {top}] for m = {m}, n = {n}")))
        } else if m <= -n - 2.0 {
            let top = -2.0 * m / (n - 2.0);
            if k > 0.0 && k <= top {
                return Ok(Branch::BallLike);
            }
            Err(GnsError::Parameter(format!("k = {k} outside (0, {top}] for m = {m}, n = {n}")))
        } else {
            Err(GnsError::Parameter(format!("m = {m} must satisfy m >= 0 or m <= -n-2 = {}", -n - 2.0)))
        }
    }

    pub fn branch(&self) -> Result<Branch> {
        self.validate()
    }
}

/// Warp function family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    /// `f = r`.
    Euclidean,
    /// `f = sin r`.
    Sphere,
    /// `f = sinh r`.
    Hyperbolic,
    /// Sampled `f`, derivatives by finite differences.
    Custom,
}

impl Model {
    pub fn name(self) -> &'static str {
        match self {
            Model::Euclidean => "euclidean",
            Model::Sphere => "sphere",
            Model::Hyperbolic => "hyperbolic",
            Model::Custom => "custom",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "euclidean" | "flat" => Ok(Model::Euclidean),
            "sphere" => Ok(Model::Sphere),
            "hyperbolic" => Ok(Model::Hyperbolic),
            other => Err(GnsError::Parameter(format!("unknown model `{other}`"))),
        }
    }

    fn log_f(self, r: f64) -> f64 {
        match self {
            Model::Euclidean => r.ln(),
            Model::Sphere => r.sin().ln(),
            Model::Hyperbolic => r + (-(-2.0 * r).exp_m1()).ln() - std::f64::consts::LN_2,
            Model::Custom => f64::NAN,
        }
    }
}

/// Area of the unit `(n-1)`-sphere, `2 pi^{n/2} / Gamma(n/2)`.
pub fn sphere_area(n: usize) -> f64 {
    let mut gamma = if n % 2 == 0 { 1.0 } else { PI.sqrt() };
    let mut x = if n % 2 == 0 { 1.0 } else { 0.5 };
    while x < n as f64 / 2.0 {
        gamma *= x;
        x += 1.0;
    }
    2.0 * PI.powf(n as f64 / 2.0) / gamma
}

/// `(m+n-2) / (4(m+n-1))`, the zeroth-order coefficient of the weighted conformal Laplacian.
pub fn conformal_coefficient(n: usize, m: f64) -> Result<f64> {
    let d = m + n as f64;
    if d - 1.0 == 0.0 {
        return Err(GnsError::Parameter("m + n - 1 must be nonzero".into()));
    }
    Ok((d - 2.0) / (4.0 * (d - 1.0)))
}

#[derive(Clone, Debug)]
struct Conformal {
    s: RadialField,
    s1: RadialField,
    s2: RadialField,
}

/// Rotationally symmetric metric `e^{2s}(dr^2 + f^2 g_sphere)`.
#[derive(Clone, Debug)]
pub struct WarpedGeometry {
    n: usize,
    model: Model,
    grid: Arc<RadialGrid>,
    log_f: RadialField,
    fp_over_f: RadialField,
    fpp_over_f: RadialField,
    // (1 - f'^2) / f^2
    kappa: RadialField,
    conformal: Option<Conformal>,
}

impl WarpedGeometry {
    pub fn new(model: Model, grid: &Arc<RadialGrid>, n: usize) -> Result<Self> {
        if n < 3 {
            return Err(GnsError::Parameter(format!("dimension n = {n} must be at least 3")));
        }
        let r_end = grid.r_end();
        let (fp, fpp, kappa): (fn(f64) -> f64, f64, f64) = match model {
            Model::Euclidean => (|r| 1.0 / r, 0.0, 0.0),
            Model::Sphere => {
                if r_end > PI {
                    return Err(GnsError::Domain("sphere model needs r < pi; use the sphere chart".into()));
                }
                (|r: f64| r.cos() / r.sin(), -1.0, 1.0)
            }
            Model::Hyperbolic => (|r: f64| 1.0 / r.tanh(), 1.0, -1.0),
            Model::Custom => {
                return Err(GnsError::Parameter("custom geometries are built with WarpedGeometry::custom".into()))
            }
        };
        Ok(WarpedGeometry {
            n,
            model,
            grid: grid.clone(),
            log_f: RadialField::from_fn(grid, |r| model.log_f(r)).with_parity(Parity::Unknown),
            fp_over_f: RadialField::from_fn_odd(grid, fp),
            fpp_over_f: RadialField::constant(grid, fpp),
            kappa: RadialField::constant(grid, kappa),
            conformal: None,
        })
    }

    pub fn euclidean(grid: &Arc<RadialGrid>, n: usize) -> Result<Self> {
        Self::new(Model::Euclidean, grid, n)
    }

    pub fn sphere(grid: &Arc<RadialGrid>, n: usize) -> Result<Self> {
        Self::new(Model::Sphere, grid, n)
    }

    pub fn hyperbolic(grid: &Arc<RadialGrid>, n: usize) -> Result<Self> {
        Self::new(Model::Hyperbolic, grid, n)
    }

    /// Geometry with a sampled warp function `f` (odd in `r`, positive on the nodes).
    pub fn custom(f: &RadialField, n: usize) -> Result<Self> {
        if n < 3 {
            return Err(GnsError::Parameter(format!("dimension n = {n} must be at least 3")));
        }
        if f.min() <= 0.0 {
            return Err(GnsError::Domain("warp function must be positive".into()));
        }
        let f = f.clone().with_parity(Parity::Odd);
        let fp = f.d1();
        let fpp = f.d2();
        Ok(WarpedGeometry {
            n,
            model: Model::Custom,
            grid: f.grid().clone(),
            log_f: f.ln(),
            fp_over_f: &fp / &f,
            fpp_over_f: &fpp / &f,
            kappa: (fp.square().scale(-1.0) + 1.0) / f.square(),
            conformal: None,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn model(&self) -> Model {
        self.model
    }

    pub fn grid(&self) -> &Arc<RadialGrid> {
        &self.grid
    }

    /// The warp function `f` of the base metric.
    pub fn f(&self) -> RadialField {
        self.log_f.exp().with_parity(Parity::Odd)
    }

    pub fn log_f(&self) -> &RadialField {
        &self.log_f
    }

    /// `f'/f` of the base metric.
    pub fn fp_over_f(&self) -> &RadialField {
        &self.fp_over_f
    }

    /// `f''/f` of the base metric.
    pub fn fpp_over_f(&self) -> &RadialField {
        &self.fpp_over_f
    }

    pub fn is_rescaled(&self) -> bool {
        self.conformal.is_some()
    }

    /// Accumulated conformal exponent `s` (zero for an unscaled model).
    pub fn conformal_exponent(&self) -> RadialField {
        match &self.conformal {
            Some(c) => c.s.clone(),
            None => RadialField::constant(&self.grid, 0.0),
        }
    }

    /// The underlying model without any conformal factor.
    pub fn base(&self) -> WarpedGeometry {
        WarpedGeometry { conformal: None, ..self.clone() }
    }

    pub(crate) fn with_added_exponent(&self, s: &RadialField) -> Result<WarpedGeometry> {
        s.check_grid(&self.log_f, "conformal rescale")?;
        let total = match &self.conformal {
            Some(c) => &c.s + s,
            None => s.clone(),
        };
        let conformal = Conformal { s1: total.d1(), s2: total.d2(), s: total };
        Ok(WarpedGeometry { conformal: Some(conformal), ..self.clone() })
    }

    /// Lapse `a = e^s`.
    pub fn lapse(&self) -> RadialField {
        match &self.conformal {
            Some(c) => c.s.exp(),
            None => RadialField::constant(&self.grid, 1.0),
        }
    }

    fn inv_lapse_sq(&self) -> Option<RadialField> {
        self.conformal.as_ref().map(|c| c.s.scale(-2.0).exp())
    }

    fn check(&self, w: &RadialField, what: &str) -> Result<()> {
        w.check_grid(&self.log_f, what)
    }

    /// Unit-speed radial derivative `w' / a`.
    pub fn dt(&self, w: &RadialField) -> RadialField {
        match &self.conformal {
            Some(c) => &w.d1() / &c.s.exp(),
            None => w.d1(),
        }
    }

    /// `(F_t / F)`: mean-curvature ratio of the distance spheres in the full metric.
    pub fn warp_ratio(&self) -> RadialField {
        match &self.conformal {
            Some(c) => (&c.s1 + &self.fp_over_f) / c.s.exp(),
            None => self.fp_over_f.clone(),
        }
    }

    /// Divergence of the radial vector field `y d_t` (unit-speed component `y`).
    pub fn radial_divergence(&self, y: &RadialField) -> RadialField {
        self.dt(y) + (self.warp_ratio() * y).scale(self.n as f64 - 1.0)
    }

    /// The same manifold with metric `u^{-2} g`.
    pub fn conformal_to(&self, u: &RadialField) -> Result<WarpedGeometry> {
        if u.min() <= 0.0 {
            return Err(GnsError::Domain("conformal factor must be positive".into()));
        }
        self.with_added_exponent(&u.ln().scale(-1.0))
    }

    /// Laplacian of a radial field from its first two `r`-derivatives.
    pub(crate) fn laplacian_from(&self, d1: &RadialField, d2: &RadialField) -> RadialField {
        let n = self.n as f64;
        match &self.conformal {
            Some(c) => {
                let drift = c.s1.scale(n - 2.0) + self.fp_over_f.scale(n - 1.0);
                (d2 + &(&drift * d1)) * self.inv_lapse_sq().unwrap()
            }
            None => d2 + &(self.fp_over_f.scale(n - 1.0) * d1),
        }
    }

    pub fn laplacian(&self, w: &RadialField) -> RadialField {
        self.laplacian_from(&w.d1(), &w.d2())
    }

    /// Hessian eigenvalues (radial, tangential) of a radial field from its `r`-derivatives.
    pub(crate) fn hessian_from(&self, d1: &RadialField, d2: &RadialField) -> (RadialField, RadialField) {
        match &self.conformal {
            Some(c) => {
                let ia2 = self.inv_lapse_sq().unwrap();
                let rad = (d2 - &(&c.s1 * d1)) * &ia2;
                let tan = (&c.s1 + &self.fp_over_f) * d1 * &ia2;
                (rad, tan)
            }
            None => (d2.clone(), &self.fp_over_f * d1),
        }
    }

    pub fn hessian(&self, w: &RadialField) -> (RadialField, RadialField) {
        self.hessian_from(&w.d1(), &w.d2())
    }

    /// `F_tt / F` and `(1 - F_t^2)/F^2` of the full metric.
    fn curvature_parts(&self) -> (RadialField, RadialField) {
        match &self.conformal {
            Some(c) => {
                let ia2 = self.inv_lapse_sq().unwrap();
                let ftt = (&c.s2 + &(&c.s1 * &self.fp_over_f) + &self.fpp_over_f) * &ia2;
                let kap = (&self.kappa - &c.s1.square() - (&c.s1 * &self.fp_over_f).scale(2.0)) * &ia2;
                (ftt, kap)
            }
            None => (self.fpp_over_f.clone(), self.kappa.clone()),
        }
    }

    pub fn scalar_curvature(&self) -> RadialField {
        let n = self.n as f64;
        let (ftt, kap) = self.curvature_parts();
        ftt.scale(-2.0 * (n - 1.0)) + kap.scale((n - 1.0) * (n - 2.0))
    }

    /// Ricci eigenvalues on the radial direction and on the tangent spheres.
    pub fn ricci_eigenvalues(&self) -> (RadialField, RadialField) {
        let n = self.n as f64;
        let (ftt, kap) = self.curvature_parts();
        let rad = ftt.scale(-(n - 1.0));
        let tan = kap.scale(n - 2.0) - &ftt;
        (rad, tan)
    }

    /// Volume density per unit `dr`: `|S^{n-1}| e^{ns} f^{n-1}`.
    pub fn volume_density(&self) -> RadialField {
        let n = self.n as f64;
        let mut log = self.log_f.scale(n - 1.0);
        if let Some(c) = &self.conformal {
            log = log + c.s.scale(n);
        }
        log.exp().scale(sphere_area(self.n))
    }

    /// Base-metric volume of each grid cell `[s_i - h/2, s_i + h/2]`, by
    /// three-point Gauss-Legendre quadrature in `s` (midpoint rule for sampled warps).
    pub(crate) fn cell_volumes(&self) -> Vec<f64> {
        let n = self.n as f64;
        let area = sphere_area(self.n);
        let grid = &self.grid;
        if self.model == Model::Custom {
            let vol = self.log_f.scale(n - 1.0).exp().scale(area);
            return vol.values().iter().zip(grid.quad_weight()).map(|(v, q)| v * q).collect();
        }
        let h = grid.step();
        let nodes = [(-(0.6f64).sqrt(), 5.0 / 9.0), (0.0, 8.0 / 9.0), ((0.6f64).sqrt(), 5.0 / 9.0)];
        grid.s()
            .iter()
            .map(|&sc| {
                nodes
                    .iter()
                    .map(|(x, wt)| {
                        let (r, jac) = grid.map(sc + 0.5 * h * x);
                        0.5 * h * wt * jac * ((n - 1.0) * self.model.log_f(r)).exp()
                    })
                    .sum::<f64>()
                    * area
            })
            .collect()
    }

    /// Volume density per unit `dr` of the base metric at the cell faces.
    pub(crate) fn face_volume_density(&self) -> Vec<f64> {
        let n = self.n as f64;
        let area = sphere_area(self.n);
        let r = self.grid.r();
        let lf = self.log_f.values();
        self.grid
            .r_face()
            .iter()
            .enumerate()
            .map(|(i, &rf)| {
                let log_f = match self.model {
                    Model::Custom => {
                        let t = (rf - r[i]) / (r[i + 1] - r[i]);
                        lf[i] + t * (lf[i + 1] - lf[i])
                    }
                    model => model.log_f(rf),
                };
                area * ((n - 1.0) * log_f).exp()
            })
            .collect()
    }
}

/// Result of a checked quadrature.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Integral {
    pub value: f64,
    /// Estimated share of the integral beyond the last node, relative to the integral of `|.|`.
    pub tail_fraction: f64,
}

/// `int_M F dvol` for a radial integrand, with a tail check on the half-line.
pub fn integrate(geom: &WarpedGeometry, integrand: &RadialField, name: &str) -> Result<Integral> {
    integrate_with_tol(geom, integrand, name, TAIL_TOL)
}

pub fn integrate_with_tol(geom: &WarpedGeometry, integrand: &RadialField, name: &str, tol: f64) -> Result<Integral> {
    geom.check(integrand, "integrate")?;
    let density: Vec<f64> = integrand
        .values()
        .iter()
        .zip(geom.volume_density().values())
        .map(|(f, v)| if *f == 0.0 { 0.0 } else { f * v })
        .collect();
    let divergent = |fraction| GnsError::Divergence { name: name.to_string(), fraction, tol };
    if density.iter().any(|d| !d.is_finite()) {
        return Err(divergent(f64::INFINITY));
    }
    let q = geom.grid.quad_weight();
    let value: f64 = density.iter().zip(q).map(|(d, w)| d * w).sum();
    let mass: f64 = density.iter().zip(q).map(|(d, w)| d.abs() * w).sum();
    let tail = if geom.grid.domain() == Domain::HalfLine { tail_estimate(geom.grid.r(), &density) } else { 0.0 };
    let tail_fraction = if tail == 0.0 { 0.0 } else if mass > 0.0 { tail / mass } else { f64::INFINITY };
    if !(tail_fraction <= tol) {
        return Err(divergent(tail_fraction));
    }
    Ok(Integral { value, tail_fraction })
}

/// `int_M F dvol` with the half-line tail beyond the last interior face added from a
/// power-law fit, for slowly decaying integrands. Fails when the fitted decay is not
/// integrable or the added tail exceeds `tol` of the total mass.
pub fn integrate_extrapolated(geom: &WarpedGeometry, integrand: &RadialField, name: &str, tol: f64) -> Result<Integral> {
    if geom.grid.domain() != Domain::HalfLine {
        return integrate_with_tol(geom, integrand, name, tol);
    }
    geom.check(integrand, "integrate")?;
    let density: Vec<f64> = integrand.values().iter().zip(geom.volume_density().values()).map(|(f, v)| f * v).collect();
    let divergent = |fraction| GnsError::Divergence { name: name.to_string(), fraction, tol };
    if density.iter().any(|d| !d.is_finite()) {
        return Err(divergent(f64::INFINITY));
    }
    let grid = &geom.grid;
    let (r, q) = (grid.r(), grid.quad_weight());
    let last = r.len() - 2;
    let value: f64 = density[..=last].iter().zip(q).map(|(d, w)| d * w).sum();
    let mass: f64 = density[..=last].iter().zip(q).map(|(d, w)| d.abs() * w).sum();
    let g_last = density[last];
    if g_last == 0.0 {
        return Ok(Integral { value, tail_fraction: 0.0 });
    }
    let k = r.partition_point(|&x| x <= r[last] / 10.0).saturating_sub(1);
    let alpha = (density[k].abs() / g_last.abs()).ln() / (r[last] / r[k]).ln();
    if !(alpha > 1.0) {
        return Err(divergent(f64::INFINITY));
    }
    let face = grid.r_face()[last];
    let tail = g_last * r[last].powf(alpha) * face.powf(1.0 - alpha) / (alpha - 1.0);
    let tail_fraction = tail.abs() / mass;
    if !(tail_fraction <= tol) {
        return Err(divergent(tail_fraction));
    }
    Ok(Integral { value: value + tail, tail_fraction })
}

/// Power-law extrapolation of `int |G| dr` beyond the second-to-last sample, fitted
/// over the preceding decade. The outermost sample is skipped because one-sided
/// derivative stencils are least reliable there; the overlap makes the estimate
/// conservative.
pub(crate) fn tail_estimate(r: &[f64], density: &[f64]) -> f64 {
    let last = r.len() - 2;
    let g_last = density[last].abs();
    if g_last == 0.0 {
        return 0.0;
    }
    let k = r.partition_point(|&x| x <= r[last] / 10.0).saturating_sub(1);
    let g_k = density[k].abs();
    if g_k == 0.0 || k == last {
        return f64::INFINITY;
    }
    let alpha = (g_k / g_last).ln() / (r[last] / r[k]).ln();
    if alpha <= 1.0 {
        f64::INFINITY
    } else {
        g_last * r[last] / (alpha - 1.0)
    }
}

/// Smooth metric measure space `(M, g, v^m dvol)`; the potential `phi = -m log v` is never stored.
#[derive(Clone, Debug)]
pub struct Smms {
    geom: WarpedGeometry,
    v: RadialField,
    m: f64,
}

impl Smms {
    pub fn new(geom: WarpedGeometry, v: RadialField, m: f64) -> Result<Self> {
        geom.check(&v, "smms density")?;
        if !m.is_finite() {
            return Err(GnsError::Parameter("m must be finite".into()));
        }
        if v.min() <= 0.0 {
            return Err(GnsError::Domain("density v must be positive at every node".into()));
        }
        if m == 0.0 && v.relative_variation_on(&Window { start: 0, end: v.len() }) > 1e-12 {
            return Err(GnsError::Domain("m = 0 requires a constant density v".into()));
        }
        Ok(Smms { geom, v, m })
    }

    /// `v = 1`.
    pub fn unweighted(geom: WarpedGeometry, m: f64) -> Result<Self> {
        let v = RadialField::constant(geom.grid(), 1.0);
        Self::new(geom, v, m)
    }

    pub fn geom(&self) -> &WarpedGeometry {
        &self.geom
    }

    pub fn v(&self) -> &RadialField {
        &self.v
    }

    pub fn m(&self) -> f64 {
        self.m
    }

    pub fn n(&self) -> usize {
        self.geom.n
    }

    pub fn grid(&self) -> &Arc<RadialGrid> {
        self.geom.grid()
    }

    /// Whether `v` is constant (relative variation below `1e-12`).
    pub fn has_constant_density(&self) -> bool {
        self.v.relative_variation_on(&Window { start: 0, end: self.v.len() }) <= 1e-12
    }

    /// `(log v)'` and `(log v)''` in `r`, computed from `v'/v` and `v''/v`.
    pub fn log_density_derivatives(&self) -> (RadialField, RadialField) {
        let lv1 = &self.v.d1() / &self.v;
        let lv2 = &self.v.d2() / &self.v - lv1.square();
        (lv1, lv2)
    }

    /// The same space written over the unscaled model, and the exponent that was removed.
    pub fn pull_back(&self) -> (Smms, Option<RadialField>) {
        if !self.geom.is_rescaled() {
            return (self.clone(), None);
        }
        let s = self.geom.conformal_exponent();
        let v = if self.m == 0.0 { self.v.clone() } else { &self.v * &s.scale(-1.0).exp() };
        (Smms { geom: self.geom.base(), v, m: self.m }, Some(s))
    }

    /// `R_phi^m` with `phi = -m log v`.
    pub fn weighted_scalar(&self) -> RadialField {
        let r = self.geom.scalar_curvature();
        if self.m == 0.0 {
            return r;
        }
        let m = self.m;
        let (lv1, lv2) = self.log_density_derivatives();
        let lap = self.geom.laplacian_from(&lv1, &lv2);
        let grad_sq = self.geom.dt_from(&lv1).square();
        r - lap.scale(2.0 * m) - grad_sq.scale(m * (m + 1.0))
    }

    /// Eigenvalues of `Ric_phi^m = Ric + Hess(phi) - dphi^2 / m`.
    pub fn bakry_emery_eigenvalues(&self) -> (RadialField, RadialField) {
        let (rad, tan) = self.geom.ricci_eigenvalues();
        if self.m == 0.0 {
            return (rad, tan);
        }
        let m = self.m;
        let (lv1, lv2) = self.log_density_derivatives();
        let (h_rad, h_tan) = self.geom.hessian_from(&lv1, &lv2);
        let grad_sq = self.geom.dt_from(&lv1).square();
        (rad - h_rad.scale(m) - grad_sq.scale(m), tan - h_tan.scale(m))
    }

    /// `Delta_phi w = Delta w + m <grad log v, grad w>`.
    pub fn weighted_laplacian(&self, w: &RadialField) -> RadialField {
        let d1 = w.d1();
        let lap = self.geom.laplacian_from(&d1, &w.d2());
        if self.m == 0.0 {
            return lap;
        }
        let (lv1, _) = self.log_density_derivatives();
        let drift = self.geom.dt_from(&lv1) * self.geom.dt_from(&d1);
        lap + drift.scale(self.m)
    }

    /// `L_phi^m w = -Delta_phi w + c(m,n) R_phi^m w`.
    pub fn weighted_conformal_laplacian(&self, w: &RadialField) -> Result<RadialField> {
        let c = conformal_coefficient(self.n(), self.m)?;
        Ok((self.weighted_scalar() * w).scale(c) - self.weighted_laplacian(w))
    }

    /// Measure density `v^m` (identically 1 when `m = 0`).
    pub fn measure_density(&self) -> RadialField {
        if self.m == 0.0 {
            RadialField::constant(self.grid(), 1.0)
        } else {
            self.v.powf(self.m)
        }
    }
}

impl WarpedGeometry {
    /// Unit-speed derivative given the `r`-derivative.
    pub(crate) fn dt_from(&self, d1: &RadialField) -> RadialField {
        match &self.conformal {
            Some(c) => d1 / &c.s.exp(),
            None => d1.clone(),
        }
    }
}

/// `(e^{2s} g, (e^s v)^m dvol, m)`. For `m = 0` the density is left untouched, since
/// the measure does not see it.
pub fn conformal_rescale(smms: &Smms, s: &RadialField) -> Result<Smms> {
    let geom = smms.geom.with_added_exponent(s)?;
    let v = if smms.m == 0.0 { smms.v.clone() } else { &smms.v * &s.exp() };
    Ok(Smms { geom, v, m: smms.m })
}

pub fn laplacian(geom: &WarpedGeometry, w: &RadialField) -> Result<RadialField> {
    geom.check(w, "laplacian")?;
    Ok(geom.laplacian(w))
}

pub fn weighted_laplacian(smms: &Smms, w: &RadialField) -> Result<RadialField> {
    smms.geom.check(w, "weighted_laplacian")?;
    Ok(smms.weighted_laplacian(w))
}

pub fn scalar_curvature(geom: &WarpedGeometry) -> RadialField {
    geom.scalar_curvature()
}

pub fn ricci_eigenvalues(geom: &WarpedGeometry) -> (RadialField, RadialField) {
    geom.ricci_eigenvalues()
}

pub fn weighted_scalar(smms: &Smms) -> RadialField {
    smms.weighted_scalar()
}

pub fn bakry_emery_eigenvalues(smms: &Smms) -> (RadialField, RadialField) {
    smms.bakry_emery_eigenvalues()
}

pub fn weighted_conformal_laplacian(smms: &Smms, w: &RadialField) -> Result<RadialField> {
    smms.geom.check(w, "weighted_conformal_laplacian")?;
    smms.weighted_conformal_laplacian(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;

    fn half_line(n: usize) -> Arc<RadialGrid> {
        make_grid(Domain::HalfLine, n, 1.0).unwrap()
    }

    #[test]
    fn params_ranges() {
        assert_eq!(GnsParams::new(3, 1.0, 1.0).unwrap().branch().unwrap(), Branch::SphereLike);
        assert_eq!(GnsParams::new(3, -6.0, 1.0).unwrap().branch().unwrap(), Branch::BallLike);
        assert!(GnsParams::new(3, 0.5, 9.0).is_err());
        assert!(GnsParams::new(3, -2.0, 1.0).is_err());
        assert!(GnsParams::new(2, 1.0, 1.0).is_err());
        assert!(GnsParams::new(3, -6.0, 13.0).is_err());
    }

    #[test]
    fn sphere_areas() {
        assert!((sphere_area(3) - 4.0 * PI).abs() < 1e-14);
        assert!((sphere_area(4) - 2.0 * PI * PI).abs() < 1e-13);
        assert!((sphere_area(2) - 2.0 * PI).abs() < 1e-14);
    }

    #[test]
    fn laplacian_of_r_squared() {
        let g = half_line(1024);
        let geom = WarpedGeometry::euclidean(&g, 3).unwrap();
        let lap = geom.laplacian(&RadialField::from_fn(&g, |r| r * r));
        let w = g.default_window();
        assert!((lap - 6.0).linf_on(&w) < 1e-8);
    }

    #[test]
    fn laplacian_of_cos_on_sphere() {
        let g = make_grid(Domain::SphereChart, 512, 1.0).unwrap();
        let geom = WarpedGeometry::sphere(&g, 3).unwrap();
        let w = RadialField::from_fn(&g, f64::cos);
        let err = geom.laplacian(&w) + w.scale(3.0);
        assert!(err.linf() < 1e-3, "{}", err.linf());
    }

    #[test]
    fn model_curvatures() {
        let g = make_grid(Domain::UnitBall, 64, 1.0).unwrap();
        for n in 3..6 {
            let nn = n as f64;
            for (model, sign) in [(Model::Euclidean, 0.0), (Model::Sphere, 1.0), (Model::Hyperbolic, -1.0)] {
                let geom = WarpedGeometry::new(model, &g, n).unwrap();
                let r = geom.scalar_curvature();
                assert!((r - sign * nn * (nn - 1.0)).linf() < 1e-12);
                let (rad, tan) = geom.ricci_eigenvalues();
                assert!((rad - sign * (nn - 1.0)).linf() < 1e-12);
                assert!((tan - sign * (nn - 1.0)).linf() < 1e-12);
            }
        }
    }

    #[test]
    fn gaussian_integral() {
        let g = half_line(4096);
        let geom = WarpedGeometry::euclidean(&g, 3).unwrap();
        let val = integrate(&geom, &RadialField::from_fn(&g, |r| (-r * r).exp()), "gauss").unwrap();
        assert!((val.value - PI.powf(1.5)).abs() < 1e-8, "{}", val.value - PI.powf(1.5));
    }

    #[test]
    fn sphere_volume() {
        let g = make_grid(Domain::SphereChart, 1024, 1.0).unwrap();
        let geom = WarpedGeometry::sphere(&g, 3).unwrap();
        let val = integrate(&geom, &RadialField::constant(&g, 1.0), "one").unwrap();
        assert!((val.value - 2.0 * PI * PI).abs() < 1e-8);
    }

    #[test]
    fn slow_decay_is_divergent() {
        let g = half_line(4096);
        let geom = WarpedGeometry::euclidean(&g, 3).unwrap();
        let err = integrate(&geom, &RadialField::from_fn(&g, |r| 1.0 / (1.0 + r * r)), "slow").unwrap_err();
        assert!(matches!(err, GnsError::Divergence { .. }));
    }

    fn gaussian_density_errors(n: usize) -> [f64; 4] {
        let g = half_line(n);
        let dim = 3;
        let m = 2.0;
        let geom = WarpedGeometry::euclidean(&g, dim).unwrap();
        let v = RadialField::from_fn(&g, |r| (0.5 * r * r).exp().min(1e300));
        let smms = Smms::new(geom, v, m).unwrap();
        let window = g.window_r(0.0, 2.0);
        let scalar = RadialField::from_fn(&g, |r| -2.0 * m * dim as f64 - m * (m + 1.0) * r * r);
        let w = RadialField::from_fn(&g, |r| r * r);
        let lap = RadialField::from_fn(&g, |r| 2.0 * dim as f64 + 2.0 * m * r * r);
        let (rad, tan) = smms.bakry_emery_eigenvalues();
        let rad_exact = RadialField::from_fn(&g, |r| -2.0 - 2.0 * r * r);
        [
            (smms.weighted_scalar() - scalar).linf_on(&window),
            (smms.weighted_laplacian(&w) - lap).linf_on(&window),
            (rad - rad_exact).linf_on(&window),
            (tan + 2.0).linf_on(&window),
        ]
    }

    #[test]
    fn gaussian_density_operators_converge() {
        let coarse = gaussian_density_errors(1024);
        let fine = gaussian_density_errors(2048);
        for (c, f) in coarse.iter().zip(&fine) {
            assert!(*f < 2e-3, "{fine:?}");
            assert!(c / f > 3.5, "{coarse:?} {fine:?}");
        }
    }

    #[test]
    fn zero_m_requires_constant_density() {
        let g = half_line(64);
        let geom = WarpedGeometry::euclidean(&g, 3).unwrap();
        let v = RadialField::from_fn(&g, |r| 1.0 + r);
        assert!(matches!(Smms::new(geom, v, 0.0), Err(GnsError::Domain(_))));
    }

    #[test]
    fn conformal_laplacian_constants_on_sphere() {
        let g = make_grid(Domain::SphereChart, 256, 1.0).unwrap();
        let smms = Smms::unweighted(WarpedGeometry::sphere(&g, 3).unwrap(), 0.0).unwrap();
        let l = smms.weighted_conformal_laplacian(&RadialField::constant(&g, 1.0)).unwrap();
        assert!((l - 0.75).linf() < 1e-10);
    }

    #[test]
    fn rescale_round_trip() {
        let g = half_line(512);
        let smms = Smms::new(
            WarpedGeometry::euclidean(&g, 3).unwrap(),
            RadialField::from_fn(&g, |r| 1.0 + 0.5 / (1.0 + r * r)),
            1.5,
        )
        .unwrap();
        let s = RadialField::from_fn(&g, |r| 0.3 * (-r * r).exp());
        let there = conformal_rescale(&smms, &s).unwrap();
        let back = conformal_rescale(&there, &s.scale(-1.0)).unwrap();
        assert!((back.v() - smms.v()).linf() < 1e-10);
        assert!((back.geom().scalar_curvature() - smms.geom().scalar_curvature()).linf() < 1e-10);
    }

    #[test]
    fn rescale_by_quadratic_factor() {
        let g = half_line(4096);
        let smms = Smms::unweighted(WarpedGeometry::euclidean(&g, 3).unwrap(), 1.0).unwrap();
        let s = RadialField::from_fn(&g, |r| -(1.0 + r * r).ln());
        let rescaled = conformal_rescale(&smms, &s).unwrap();
        let err = rescaled.geom().scalar_curvature() - 24.0;
        assert!(err.linf_on(&g.window_r(0.0, 3.0)) < 1e-4, "{}", err.linf_on(&g.window_r(0.0, 3.0)));
    }

    #[test]
    fn rescaled_curvature_converges_at_second_order() {
        let errs: Vec<f64> = [512, 1024]
            .iter()
            .map(|&n| {
                let g = half_line(n);
                let smms = Smms::unweighted(WarpedGeometry::euclidean(&g, 3).unwrap(), 1.0).unwrap();
                let s = RadialField::from_fn(&g, |r| -(1.0 + r * r).ln());
                let rescaled = conformal_rescale(&smms, &s).unwrap();
                (rescaled.geom().scalar_curvature() - 24.0).linf_on(&g.window_r(0.0, 10.0))
            })
            .collect();
        assert!(errs[0] / errs[1] > 3.5, "{errs:?}");
    }
}
