//! Numerical checks of the conformal covariance law, the tractor formulae for
//! the Bakry-Emery data of a conformal change, the Obata-type divergence
//! identity and the rigidity statements.
//!
//! Every check returns residual fields or reports; nothing here asserts.

use serde::Serialize;

use crate::error::{GnsError, Result};
use crate::functional::{cwm_fields, tractor_multipliers_from, Multipliers};
use crate::geometry::{conformal_rescale, integrate_with_tol, Smms, WarpedGeometry};
use crate::grid::{RadialField, Window};
use crate::tractor::{grad_norm_sq, parallel_residual, parallel_tolerance, split, tderiv, tmetric, TractorNorms};

/// Default tolerance for classification and precondition checks.
pub const IDENTITY_TOL: f64 = 1e-6;

/// Mean order `log2(e_i / e_{i+1})` of a sequence of errors under grid doubling.
pub fn convergence_order(errors: &[f64]) -> f64 {
    let orders: Vec<f64> = errors.windows(2).map(|e| (e[0] / e[1]).log2()).collect();
    orders.iter().sum::<f64>() / orders.len().max(1) as f64
}

/// Relative L-infinity mismatch of the two sides of the covariance law
/// `L[e^{2s} g] w = e^{-(m+n+2)s/2} L[g] (e^{(m+n-2)s/2} w)` over a window.
pub fn covariance_residual_on(smms: &Smms, s: &RadialField, w: &RadialField, window: &Window) -> Result<f64> {
    let mn = smms.m() + smms.n() as f64;
    let rescaled = conformal_rescale(smms, s)?;
    let lhs = rescaled.weighted_conformal_laplacian(w)?;
    let inner = w * &s.scale((mn - 2.0) / 2.0).exp();
    let rhs = smms.weighted_conformal_laplacian(&inner)? * s.scale(-(mn + 2.0) / 2.0).exp();
    let scale = rhs.linf_on(window);
    let diff = (&lhs - &rhs).linf_on(window);
    Ok(if scale == 0.0 { diff } else { diff / scale })
}

/// [`covariance_residual_on`] over the default window.
pub fn covariance_check(smms: &Smms, s: &RadialField, w: &RadialField) -> Result<f64> {
    covariance_residual_on(smms, s, w, &smms.grid().default_window())
}

/// Residuals of the three tractor expressions for the Bakry-Emery data.
#[derive(Clone, Debug)]
pub struct SmmsTractorResiduals {
    /// Traceless Ricci part, radial eigenvalue.
    pub res1_rad: RadialField,
    /// Traceless Ricci part, tangential eigenvalue.
    pub res1_tan: RadialField,
    /// `R - m Delta_rho beta` against `|Lu|^2` and `<Lu, Lv>`.
    pub res2: RadialField,
    /// `R - (m+n) Delta_rho beta` against `<Lu, Lv>` and `|Lv|^2`.
    pub res3: RadialField,
}

fn traceless(rad: &RadialField, tan: &RadialField, n: f64) -> (RadialField, RadialField) {
    let mean = (rad + &tan.scale(n - 1.0)).scale(1.0 / n);
    (rad - &mean, tan - &mean)
}

/// Eigenvalues of the `T*M (x) TM` slot of `nabla L sigma`.
fn omega_slot(geom: &WarpedGeometry, sigma: &RadialField) -> Result<(RadialField, RadialField)> {
    let d = tderiv(geom, &split(geom, sigma)?)?;
    Ok((d.radial.omega, d.tangential_coeff))
}

/// Right-hand sides of the second and third tractor expressions.
pub fn smms_tractor_rhs(smms: &Smms, u: &RadialField, norms: &TractorNorms) -> (RadialField, RadialField) {
    let (n, m, v) = (smms.n() as f64, smms.m(), smms.v());
    let uv_inv = (u * v).recip();
    let rhs2 = (u.powf(-2.0) * &norms.uu).scale(-(m + n - 1.0) * n) + (&uv_inv * &norms.uv).scale(m * n);
    let rhs3 = (&uv_inv * &norms.uv).scale(-(m + n - 2.0) * n) + (v.powf(-2.0) * &norms.vv).scale((m - 1.0) * n);
    (rhs2, rhs3)
}

pub fn smms_tractor_check(smms: &Smms, u: &RadialField) -> Result<SmmsTractorResiduals> {
    let geom = smms.geom();
    let (n, m, v) = (smms.n() as f64, smms.m(), smms.v());
    let cwm = cwm_fields(smms, u)?;

    let (ric_rad, ric_tan) = traceless(&cwm.ric_fphi_rad, &cwm.ric_fphi_tan, n);
    let (au_rad, au_tan) = omega_slot(geom, u)?;
    let (av_rad, av_tan) = omega_slot(geom, v)?;
    let combine = |au: &RadialField, av: &RadialField| (v * au).scale(m + n - 2.0) - (u * av).scale(m);
    let (t_rad, t_tan) = traceless(&combine(&au_rad, &av_rad), &combine(&au_tan, &av_tan), n);
    let uv_inv = (u * v).recip();

    let norms = TractorNorms::radial(geom, u, v)?;
    let (rhs2, rhs3) = smms_tractor_rhs(smms, u, &norms);
    Ok(SmmsTractorResiduals {
        res1_rad: ric_rad - &uv_inv * &t_rad,
        res1_tan: ric_tan - &uv_inv * &t_tan,
        res2: &cwm.r_fphi - cwm.delta_rho_beta.scale(m) - rhs2,
        res3: &cwm.r_fphi - cwm.delta_rho_beta.scale(m + n) - rhs3,
    })
}

/// Both sides of the Obata-type identity.
#[derive(Clone, Debug)]
pub struct ObataTerms {
    /// `u^{n-2} delta(u^{2-n} grad<Lu,Lv>) - v^{n-1}/(2u) delta(v^{2-n} grad|Lu|^2)`.
    pub lhs: RadialField,
    /// `-(v/u) |grad Lu|^2`.
    pub rhs: RadialField,
}

impl ObataTerms {
    pub fn residual(&self) -> RadialField {
        &self.lhs - &self.rhs
    }
}

fn require_parallel(geom: &WarpedGeometry, v: &RadialField) -> Result<()> {
    let res = parallel_residual(geom, &split(geom, v)?)?;
    let tol = parallel_tolerance(geom.grid());
    if res > tol {
        return Err(GnsError::Precondition(format!("Lv is not parallel: residual {res:e} > {tol:e}")));
    }
    Ok(())
}

pub fn obata_identity_terms(geom: &WarpedGeometry, u: &RadialField, v: &RadialField) -> Result<ObataTerms> {
    u.check_grid(v, "obata_identity")?;
    require_parallel(geom, v)?;
    let n = geom.n() as f64;
    let lu = split(geom, u)?;
    let lv = split(geom, v)?;
    let uv = tmetric(&lu, &lv)?;
    let uu = tmetric(&lu, &lu)?;
    let first = u.powf(n - 2.0) * geom.radial_divergence(&(u.powf(2.0 - n) * geom.dt(&uv)));
    let second = (v.powf(n - 1.0) / u).scale(0.5) * geom.radial_divergence(&(v.powf(2.0 - n) * geom.dt(&uu)));
    let rhs = -(v / u) * grad_norm_sq(geom, &lu)?;
    Ok(ObataTerms { lhs: first - second, rhs })
}

/// LHS minus RHS of the Obata-type identity; requires `Lv` parallel.
pub fn obata_identity_residual(geom: &WarpedGeometry, u: &RadialField, v: &RadialField) -> Result<RadialField> {
    Ok(obata_identity_terms(geom, u, v)?.residual())
}

/// Tensorial form on an Einstein background `Ric = (n-1) lambda_e g`:
/// `u^{-2} |Ric(ghat)_0|^2_ghat / (n-2)^2` minus
/// `(1/n) u^{n-1} delta(u^{2-n} grad(Delta u + n lambda_e u)) - Delta Rhat / (2n(n-1))`,
/// with `ghat = u^{-2} g` and all operators in `g`.
pub fn obata_tensorial_residual(geom: &WarpedGeometry, lambda_e: f64, u: &RadialField) -> Result<RadialField> {
    let n = geom.n() as f64;
    let (ric_rad, ric_tan) = geom.ricci_eigenvalues();
    let target = (n - 1.0) * lambda_e;
    let deficit = (ric_rad - target).linf().max((ric_tan - target).linf());
    if deficit > 1e-8 * target.abs().max(1.0) {
        return Err(GnsError::Precondition(format!("geometry is not Einstein with lambda = {lambda_e}: deficit {deficit:e}")));
    }
    let hat = geom.conformal_to(u)?;
    let (hr, ht) = hat.ricci_eigenvalues();
    let (dr, dt) = traceless(&hr, &ht, n);
    let lhs = (dr.square() + dt.square().scale(n - 1.0)) / u.square();
    let lhs = lhs.scale(1.0 / ((n - 2.0) * (n - 2.0)));
    let inner = geom.laplacian(u) + u.scale(n * lambda_e);
    let first = u.powf(n - 1.0) * geom.radial_divergence(&(u.powf(2.0 - n) * geom.dt(&inner)));
    let r_hat = hat.scalar_curvature();
    let rhs = first.scale(1.0 / n) - geom.laplacian(&r_hat).scale(1.0 / (2.0 * n * (n - 1.0)));
    Ok(lhs - rhs)
}

/// Which rigidity case a configuration falls into.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    RatioConstant,
    K1ScalarFlat,
    K2Orthogonal,
    None,
}

/// Window means and spreads of the three tractor inner products.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct NormRecord {
    pub uu: f64,
    pub uv: f64,
    pub vv: f64,
    pub uu_spread: f64,
    pub uv_spread: f64,
    pub vv_spread: f64,
}

fn spread(f: &RadialField, w: &Window) -> f64 {
    let s = &f.values()[w.indices()];
    let lo = s.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    hi - lo
}

impl NormRecord {
    pub fn from_norms(norms: &TractorNorms, w: &Window) -> Self {
        NormRecord {
            uu: norms.uu.mean_on(w),
            uv: norms.uv.mean_on(w),
            vv: norms.vv.mean_on(w),
            uu_spread: spread(&norms.uu, w),
            uv_spread: spread(&norms.uv, w),
            vv_spread: spread(&norms.vv, w),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TrichotomyReport {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    /// Max of `|a x^2 + 2 b x - c|` with `x = u/v`, relative to `max(|a|, |b|, |c|, 1)`.
    pub quad_residual: f64,
    pub lambda: f64,
    pub classification: Classification,
    /// Every case whose defining condition holds.
    pub cases: Vec<Classification>,
    pub norms: NormRecord,
    /// Parallel residuals of `Lu` and `Lv`.
    pub parallel_residuals: (f64, f64),
    pub tol: f64,
}

pub fn qe_trichotomy(smms: &Smms, k: f64, u: &RadialField) -> Result<TrichotomyReport> {
    qe_trichotomy_with_tol(smms, k, u, IDENTITY_TOL)
}

pub fn qe_trichotomy_with_tol(smms: &Smms, k: f64, u: &RadialField, tol: f64) -> Result<TrichotomyReport> {
    let geom = smms.geom();
    let (n, m, v) = (smms.n() as f64, smms.m(), smms.v());
    let window = smms.grid().default_window();
    let norms = TractorNorms::radial(geom, u, v)?;
    let parallel_residuals = (parallel_residual(geom, &split(geom, u)?)?, parallel_residual(geom, &split(geom, v)?)?);
    let (lambda_field, _) = tractor_multipliers_from(smms, k, u, &norms)?;
    let lambda = lambda_field.mean_on(&window);
    let rec = NormRecord::from_norms(&norms, &window);

    let a = m * (m - 1.0) * (2.0 - k) * rec.vv;
    let b = m * (m + n - 2.0) * (k - 1.0) * rec.uv;
    let c = (m + n - 2.0) * k * (lambda + (m + n - 1.0) * rec.uu);
    let x = u / v;
    let quad = x.map(|t| a * t * t + 2.0 * b * t - c);
    let quad_residual = quad.linf_on(&window) / a.abs().max(b.abs()).max(c.abs()).max(1.0);

    let mut cases = Vec::new();
    if x.relative_variation_on(&window) <= tol {
        cases.push(Classification::RatioConstant);
    }
    if (k - 1.0).abs() <= tol && rec.vv.abs() <= tol {
        cases.push(Classification::K1ScalarFlat);
    }
    if (k - 2.0).abs() <= tol && rec.uv.abs() <= tol {
        cases.push(Classification::K2Orthogonal);
    }
    let classification = if cases.len() == 1 && quad_residual <= tol { cases[0] } else { Classification::None };
    Ok(TrichotomyReport {
        a,
        b,
        c,
        quad_residual,
        lambda,
        classification,
        cases,
        norms: rec,
        parallel_residuals,
        tol,
    })
}

/// Residuals of the two norm relations and the weighted integral of the
/// divergence form of `|grad Lu|^2`.
#[derive(Clone, Debug)]
pub struct VRigidReport {
    /// `-2(k-1) mu (u/v)^k - lambda - (m+n-1)|Lu|^2`.
    pub norm_res1: RadialField,
    /// `-k mu (u/v)^{k-1} - m <Lu, Lv>`.
    pub norm_res2: RadialField,
    /// Integral of `-(v/u)|grad Lu|^2 - C u^{m+n-2} v^{-m} delta(u^{k-m-n} v^{m-k} X)` against
    /// `u^{2-m-n} v^m (u/v)^{1-k} dvol`, `X = v grad u - u grad v`.
    pub divergence_integral: f64,
    /// Estimated share of that integral beyond the grid.
    pub tail_fraction: f64,
}

pub fn v_rigid_check(smms: &Smms, k: f64, u: &RadialField, mult: &Multipliers) -> Result<VRigidReport> {
    let geom = smms.geom();
    let (n, m, v) = (smms.n() as f64, smms.m(), smms.v());
    if m == 0.0 {
        return Err(GnsError::Parameter("v-rigidity needs m != 0".into()));
    }
    let flat = geom.conformal_to(v)?;
    let (rr, rt) = flat.ricci_eigenvalues();
    let window = smms.grid().default_window();
    let deficit = rr.linf_on(&window).max(rt.linf_on(&window));
    if deficit > IDENTITY_TOL {
        return Err(GnsError::Precondition(format!("v^-2 g is not Ricci flat: deficit {deficit:e}")));
    }
    let mn = m + n;
    let norms = TractorNorms::radial(geom, u, v)?;
    let ratio = u / v;
    let norm_res1 = ratio.powf(k).scale(-2.0 * (k - 1.0) * mult.mu) - mult.lambda - norms.uu.scale(mn - 1.0);
    let norm_res2 = ratio.powf(k - 1.0).scale(-k * mult.mu) - norms.uv.scale(m);

    let c = k * (k - 1.0) * mult.mu / (m * (mn - 1.0));
    let x = v * &geom.dt(u) - u * &geom.dt(v);
    let flux = u.powf(k - mn) * v.powf(m - k) * x;
    let div_term = (u.powf(mn - 2.0) * v.powf(-m) * geom.radial_divergence(&flux)).scale(c);
    let grad = grad_norm_sq(geom, &split(geom, u)?)?;
    let integrand = -(v / u) * grad - div_term;
    let measure = u.powf(2.0 - mn) * v.powf(m) * ratio.powf(1.0 - k);
    let total = integrate_with_tol(geom, &(integrand * measure), "divergence form", f64::INFINITY)?;
    Ok(VRigidReport { norm_res1, norm_res2, divergence_integral: total.value, tail_fraction: total.tail_fraction })
}
