//! Standard tractors `I = (rho, omega, sigma)` of radial data.
//!
//! For a radial tractor `omega` is a multiple of the unit radial covector, so a
//! tractor is three radial fields. Its covariant derivative has a radial part,
//! itself a radial tractor, and a tangential part `(0, c e, 0)` described by the
//! single coefficient `c` because the Schouten tensor is diagonal and
//! `nabla_e d_r = (F_t/F) e` on a warped product.
//!
//! Flat space also has a closed-form backend: for `u = alpha + beta.x + gamma |x|^2`
//! the tractor `Lu` is parallel and `|Lu|^2 = |beta|^2 - 4 alpha gamma`.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{GnsError, Result};
use crate::geometry::WarpedGeometry;
use crate::grid::{RadialField, RadialGrid, Window};

/// Radial tractor `(rho, omega_r, sigma)`.
#[derive(Clone, Debug)]
pub struct Tractor {
    pub rho: RadialField,
    pub omega: RadialField,
    pub sigma: RadialField,
}

impl Tractor {
    pub fn new(rho: RadialField, omega: RadialField, sigma: RadialField) -> Result<Self> {
        rho.check_grid(&omega, "tractor")?;
        rho.check_grid(&sigma, "tractor")?;
        Ok(Tractor { rho, omega, sigma })
    }

    /// The canonical tractor `X = (1, 0, 0)`.
    pub fn x(grid: &Arc<RadialGrid>) -> Self {
        Tractor {
            rho: RadialField::constant(grid, 1.0),
            omega: RadialField::constant(grid, 0.0).with_parity(crate::grid::Parity::Odd),
            sigma: RadialField::constant(grid, 0.0),
        }
    }

    pub fn grid(&self) -> &Arc<RadialGrid> {
        self.rho.grid()
    }

    pub fn scale(&self, c: f64) -> Tractor {
        Tractor { rho: self.rho.scale(c), omega: self.omega.scale(c), sigma: self.sigma.scale(c) }
    }

    pub fn add(&self, other: &Tractor) -> Tractor {
        Tractor { rho: &self.rho + &other.rho, omega: &self.omega + &other.omega, sigma: &self.sigma + &other.sigma }
    }
}

/// Covariant derivative of a radial tractor.
#[derive(Clone, Debug)]
pub struct TractorDerivative {
    /// `nabla_{d_t} I` along the unit radial direction.
    pub radial: Tractor,
    /// `c` with `nabla_e I = (0, c e, 0)` for unit tangential `e`.
    pub tangential_coeff: RadialField,
}

/// Eigenvalues of the Schouten tensor and its trace `J`.
#[derive(Clone, Debug)]
pub struct Schouten {
    pub p_rad: RadialField,
    pub p_tan: RadialField,
    pub j: RadialField,
}

pub fn schouten(geom: &WarpedGeometry) -> Schouten {
    let n = geom.n() as f64;
    let r = geom.scalar_curvature();
    let (ric_rad, ric_tan) = geom.ricci_eigenvalues();
    let j = r.scale(1.0 / (2.0 * (n - 1.0)));
    Schouten {
        p_rad: (ric_rad - &j).scale(1.0 / (n - 2.0)),
        p_tan: (ric_tan - &j).scale(1.0 / (n - 2.0)),
        j,
    }
}

/// Splitting operator `L sigma = (-(Delta sigma + J sigma)/n, grad sigma, sigma)`.
pub fn split(geom: &WarpedGeometry, sigma: &RadialField) -> Result<Tractor> {
    sigma.check_grid(geom.log_f(), "split")?;
    let n = geom.n() as f64;
    let j = schouten(geom).j;
    let d1 = sigma.d1();
    let rho = (geom.laplacian_from(&d1, &sigma.d2()) + &j * sigma).scale(-1.0 / n);
    Ok(Tractor { rho, omega: geom.dt_from(&d1), sigma: sigma.clone() })
}

/// Tractor metric `h(I1, I2) = sigma1 rho2 + sigma2 rho1 + omega1 omega2`.
pub fn tmetric(a: &Tractor, b: &Tractor) -> Result<RadialField> {
    a.rho.check_grid(&b.rho, "tmetric")?;
    Ok(&a.sigma * &b.rho + &b.sigma * &a.rho + &a.omega * &b.omega)
}

/// `nabla I` for a radial tractor.
pub fn tderiv(geom: &WarpedGeometry, t: &Tractor) -> Result<TractorDerivative> {
    t.rho.check_grid(geom.log_f(), "tderiv")?;
    let p = schouten(geom);
    let radial = Tractor {
        rho: geom.dt(&t.rho) - &p.p_rad * &t.omega,
        omega: geom.dt(&t.omega) + &t.sigma * &p.p_rad + &t.rho,
        sigma: geom.dt(&t.sigma) - &t.omega,
    };
    let tangential_coeff = &t.omega * &geom.warp_ratio() + &t.sigma * &p.p_tan + &t.rho;
    Ok(TractorDerivative { radial, tangential_coeff })
}

/// Largest of the four component magnitudes of `nabla I` over a window.
pub fn parallel_residual_on(geom: &WarpedGeometry, t: &Tractor, window: &Window) -> Result<f64> {
    let d = tderiv(geom, t)?;
    Ok([&d.radial.rho, &d.radial.omega, &d.radial.sigma, &d.tangential_coeff]
        .iter()
        .map(|f| f.linf_on(window))
        .fold(0.0, f64::max))
}

/// [`parallel_residual_on`] over the grid's default window.
pub fn parallel_residual(geom: &WarpedGeometry, t: &Tractor) -> Result<f64> {
    parallel_residual_on(geom, t, &geom.grid().default_window())
}

/// Threshold below which a tractor counts as parallel on this grid.
///
/// Third derivatives carry a rounding floor growing like `N^3`, so the nominal
/// `1e-6` is relaxed in proportion above `N = 1024`.
pub fn parallel_tolerance(grid: &RadialGrid) -> f64 {
    let ratio = grid.len() as f64 / 1024.0;
    1e-6 * ratio.powi(3).max(1.0)
}

/// `|nabla I|^2 = h(nabla_r I, nabla_r I) + (n-1) c^2`.
pub fn grad_norm_sq(geom: &WarpedGeometry, t: &Tractor) -> Result<RadialField> {
    let d = tderiv(geom, t)?;
    let n = geom.n() as f64;
    Ok(tmetric(&d.radial, &d.radial)? + d.tangential_coeff.square().scale(n - 1.0))
}

/// `u(x) = alpha + beta . x + gamma |x|^2` on flat space.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QuadraticDensity {
    pub alpha: f64,
    pub beta: Vec<f64>,
    pub gamma: f64,
}

impl QuadraticDensity {
    pub fn new(alpha: f64, beta: Vec<f64>, gamma: f64) -> Result<Self> {
        if !alpha.is_finite() || !gamma.is_finite() || beta.iter().any(|b| !b.is_finite()) {
            return Err(GnsError::Parameter("quadratic density coefficients must be finite".into()));
        }
        Ok(QuadraticDensity { alpha, beta, gamma })
    }

    /// Radial member `alpha + gamma r^2` in dimension `n`.
    pub fn radial(alpha: f64, gamma: f64, n: usize) -> Self {
        QuadraticDensity { alpha, beta: vec![0.0; n], gamma }
    }

    /// Coefficients `(a_0, a_1..a_n, a_{n+1})` of `a_0 (1+r^2)/2 + a.x + a_{n+1} (1-r^2)/2`.
    pub fn from_basis(coeffs: &[f64]) -> Result<Self> {
        if coeffs.len() < 5 {
            return Err(GnsError::Parameter("basis expansion needs n + 2 >= 5 coefficients".into()));
        }
        let last = coeffs.len() - 1;
        let (a0, an1) = (coeffs[0], coeffs[last]);
        Self::new((a0 + an1) / 2.0, coeffs[1..last].to_vec(), (a0 - an1) / 2.0)
    }

    pub fn dim(&self) -> usize {
        self.beta.len()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let dot: f64 = self.beta.iter().zip(x).map(|(b, xi)| b * xi).sum();
        let sq: f64 = x.iter().map(|xi| xi * xi).sum();
        self.alpha + dot + self.gamma * sq
    }

    pub fn is_radial(&self) -> bool {
        self.beta.iter().all(|b| *b == 0.0)
    }

    /// Samples a radial member on a grid.
    pub fn to_field(&self, grid: &Arc<RadialGrid>) -> Result<RadialField> {
        if !self.is_radial() {
            return Err(GnsError::Parameter("only radial quadratic densities can be sampled".into()));
        }
        Ok(RadialField::from_fn(grid, |r| self.alpha + self.gamma * r * r))
    }
}

/// `|Lu|^2 = |beta|^2 - 4 alpha gamma`.
pub fn quad_tractor_norm(q: &QuadraticDensity) -> f64 {
    quad_tractor_inner(q, q)
}

/// Polarized form `beta1.beta2 - 2(alpha1 gamma2 + alpha2 gamma1)`.
pub fn quad_tractor_inner(a: &QuadraticDensity, b: &QuadraticDensity) -> f64 {
    let dot: f64 = a.beta.iter().zip(&b.beta).map(|(x, y)| x * y).sum();
    dot - 2.0 * (a.alpha * b.gamma + b.alpha * a.gamma)
}

/// The three inner products `|Lu|^2`, `<Lu, Lv>`, `|Lv|^2` as fields.
#[derive(Clone, Debug)]
pub struct TractorNorms {
    pub uu: RadialField,
    pub uv: RadialField,
    pub vv: RadialField,
}

impl TractorNorms {
    /// Finite-difference evaluation on any radial geometry.
    pub fn radial(geom: &WarpedGeometry, u: &RadialField, v: &RadialField) -> Result<Self> {
        let lu = split(geom, u)?;
        let lv = split(geom, v)?;
        Ok(TractorNorms { uu: tmetric(&lu, &lu)?, uv: tmetric(&lu, &lv)?, vv: tmetric(&lv, &lv)? })
    }

    /// Closed-form values for flat quadratic densities.
    pub fn flat_quadratic(grid: &Arc<RadialGrid>, u: &QuadraticDensity, v: &QuadraticDensity) -> Self {
        TractorNorms {
            uu: RadialField::constant(grid, quad_tractor_norm(u)),
            uv: RadialField::constant(grid, quad_tractor_inner(u, v)),
            vv: RadialField::constant(grid, quad_tractor_norm(v)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{make_grid, Domain};

    fn flat(n: usize) -> (Arc<RadialGrid>, WarpedGeometry) {
        let g = make_grid(Domain::HalfLine, n, 1.0).unwrap();
        let geom = WarpedGeometry::euclidean(&g, 3).unwrap();
        (g, geom)
    }

    #[test]
    fn schouten_of_models() {
        let g = make_grid(Domain::UnitBall, 64, 1.0).unwrap();
        let p = schouten(&WarpedGeometry::sphere(&g, 3).unwrap());
        assert!((p.p_rad - 0.5).linf() < 1e-14 && (p.p_tan - 0.5).linf() < 1e-14 && (p.j - 1.5).linf() < 1e-14);
        let p = schouten(&WarpedGeometry::hyperbolic(&g, 4).unwrap());
        assert!((p.p_rad + 0.5).linf() < 1e-14 && (p.j + 2.0).linf() < 1e-14);
        let p = schouten(&WarpedGeometry::euclidean(&g, 5).unwrap());
        assert!(p.j.linf() == 0.0);
    }

    #[test]
    fn split_examples() {
        let (g, geom) = flat(512);
        let one = split(&geom, &RadialField::constant(&g, 1.0)).unwrap();
        assert!(one.rho.linf() < 1e-9 && one.omega.linf() < 1e-12);
        let u = split(&geom, &RadialField::from_fn(&g, |r| (1.0 + r * r) / 2.0)).unwrap();
        assert!((&u.rho + 1.0).linf_on(&g.default_window()) < 1e-8);
        assert!((&u.omega - &RadialField::radius(&g)).linf_on(&g.default_window()) < 1e-8);
        let s = make_grid(Domain::SphereChart, 128, 1.0).unwrap();
        let sphere = WarpedGeometry::sphere(&s, 3).unwrap();
        let one = split(&sphere, &RadialField::constant(&s, 1.0)).unwrap();
        assert!((one.rho + 0.5).linf() < 1e-10);
    }

    #[test]
    fn flat_basis_metric() {
        let (g, geom) = flat(512);
        let w = g.default_window();
        let a = split(&geom, &RadialField::from_fn(&g, |r| (1.0 + r * r) / 2.0)).unwrap();
        let b = split(&geom, &RadialField::from_fn(&g, |r| (1.0 - r * r) / 2.0)).unwrap();
        assert!((tmetric(&a, &a).unwrap() + 1.0).linf_on(&w) < 1e-7);
        assert!((tmetric(&b, &b).unwrap() - 1.0).linf_on(&w) < 1e-7);
        assert!(tmetric(&a, &b).unwrap().linf_on(&w) < 1e-7);
        let x = Tractor::x(&g);
        assert_eq!(tmetric(&x, &x).unwrap().linf(), 0.0);
    }

    #[test]
    fn quadratic_norms() {
        assert_eq!(quad_tractor_norm(&QuadraticDensity::radial(0.5, 0.5, 3)), -1.0);
        assert_eq!(quad_tractor_norm(&QuadraticDensity::radial(1.0, 1.0, 3)), -4.0);
        assert_eq!(quad_tractor_norm(&QuadraticDensity::new(0.0, vec![1.0, 0.0, 0.0], 0.0).unwrap()), 1.0);
        let q = QuadraticDensity::from_basis(&[1.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(q, QuadraticDensity::radial(0.5, 0.5, 3));
    }

    #[test]
    fn derivative_of_x() {
        let (g, geom) = flat(128);
        let d = tderiv(&geom, &Tractor::x(&g)).unwrap();
        assert!(d.radial.rho.linf() < 1e-12 && d.radial.sigma.linf() == 0.0);
        assert!((d.radial.omega - 1.0).linf() == 0.0);
        assert!((d.tangential_coeff - 1.0).linf() == 0.0);
    }

    #[test]
    fn parallel_examples() {
        let (g, geom) = flat(512);
        let lu = split(&geom, &RadialField::from_fn(&g, |r| 1.0 + r * r)).unwrap();
        assert!(parallel_residual(&geom, &lu).unwrap() < 1e-7);
        let bad = split(&geom, &RadialField::from_fn(&g, |r| (1.0 + r * r).powi(2))).unwrap();
        assert!(parallel_residual_on(&geom, &bad, &g.window_r(0.5, 2.0)).unwrap() > 0.1);
        let h = make_grid(Domain::Segment, 512, 4.0).unwrap();
        let hyp = WarpedGeometry::hyperbolic(&h, 3).unwrap();
        let one = split(&hyp, &RadialField::constant(&h, 1.0)).unwrap();
        assert!(parallel_residual(&hyp, &one).unwrap() < parallel_tolerance(&h));
        let s = make_grid(Domain::SphereChart, 256, 1.0).unwrap();
        let sphere = WarpedGeometry::sphere(&s, 4).unwrap();
        let one = split(&sphere, &RadialField::constant(&s, 1.0)).unwrap();
        assert!(grad_norm_sq(&sphere, &one).unwrap().linf() < 1e-10);
    }

    #[test]
    fn tolerance_is_grid_relative() {
        let small = make_grid(Domain::HalfLine, 512, 1.0).unwrap();
        let big = make_grid(Domain::HalfLine, 4096, 1.0).unwrap();
        assert_eq!(parallel_tolerance(&small), 1e-6);
        assert!((parallel_tolerance(&big) - 6.4e-5).abs() < 1e-18);
    }
}
