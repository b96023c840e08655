//! The conformal GNS quotient `Q_k`, its exponents, Lagrange multipliers and
//! Euler-Lagrange residuals.
//!
//! A positive profile `w` is tied to the conformal factor `u` by
//! `w = u^{-(m+n-2)/2}`. Residuals are returned as fields; callers pick the
//! window and norm.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{GnsError, Result};
use crate::geometry::{conformal_coefficient, integrate, integrate_extrapolated, tail_estimate, Branch, GnsParams, Smms, WarpedGeometry, TAIL_TOL};
use crate::grid::{Domain, RadialField, RadialGrid};
use crate::tractor::TractorNorms;

/// Exponents attached to `(n, m, k)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ExponentSet {
    /// Power of the `omega_k` factor.
    pub p_f: f64,
    /// Power of the `omega_0` factor in the denominator.
    pub q_f: f64,
    /// Lebesgue exponent of `omega_k`.
    pub p_leb: f64,
    /// Lebesgue exponent of `omega_0`.
    pub q_leb: f64,
    /// Interpolation weight of `|grad w|_2` in the GNS inequality.
    pub theta: f64,
    /// `C = sigma^const_power` for the sharp GNS constant.
    pub const_power: f64,
}

pub fn exponents(params: &GnsParams) -> Result<ExponentSet> {
    let branch = params.validate()?;
    let (n, m, k) = (params.n as f64, params.m, params.k);
    let denom = 2.0 * m + k * (n - 2.0);
    if denom == 0.0 {
        return Err(GnsError::Parameter(format!("2m + k(n-2) vanishes at m = {m}, k = {k}")));
    }
    let p_leb = 2.0 * (m + n - k) / (m + n - 2.0);
    let q_leb = 2.0 * (m + n) / (m + n - 2.0);
    let sobolev = 0.5 - 1.0 / n;
    // Sphere-like: 1/q = t (1/2 - 1/n) + (1-t)/p. Ball-like swaps p and q.
    let (lhs, other) = match branch {
        Branch::SphereLike => (1.0 / q_leb, 1.0 / p_leb),
        Branch::BallLike => (1.0 / p_leb, 1.0 / q_leb),
    };
    let theta = if sobolev == other { 1.0 } else { (lhs - other) / (sobolev - other) };
    Ok(ExponentSet {
        p_f: 2.0 * m / (n * k),
        q_f: denom / (n * k),
        p_leb,
        q_leb,
        theta,
        const_power: -(m + n - 2.0) * n * k / ((m + n) * denom),
    })
}

/// Largest tail share accepted for the extrapolated multiplier integrals.
pub const MULTIPLIER_TAIL_TOL: f64 = 1e-2;

/// The three integrals entering `Q_k` and the quotient itself.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FunctionalValue {
    pub energy: f64,
    pub omega0: f64,
    /// Infinite when `p_f = 0` and the integral diverges.
    pub omegak: f64,
    pub qk: f64,
}

/// Lagrange multipliers `(lambda, mu)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Multipliers {
    pub lambda: f64,
    pub mu: f64,
}

/// Node-level discretization of `log Q_k` over the unscaled model.
///
/// The energy uses differences across cell faces,
/// `sum_f c_f (w_{i+1} - w_i)^2 + sum_i p_i w_i^2`, so its gradient is an exact
/// tridiagonal operator. A rescaled space is handled by pulling `w` back to the
/// model with the weight-`(m+n-2)/2` factor, which leaves every integrand
/// unchanged.
#[derive(Clone, Debug)]
pub struct DiscreteQuotient {
    grid: Arc<RadialGrid>,
    exps: ExponentSet,
    lift: Option<Vec<f64>>,
    face: Vec<f64>,
    potential: Vec<f64>,
    weight0: Vec<f64>,
    weightk: Vec<f64>,
}

/// `(energy, omega0, omegak)` for a base-frame profile.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuotientParts {
    pub energy: f64,
    pub omega0: f64,
    pub omegak: f64,
}

impl DiscreteQuotient {
    /// `dirichlet` closes the energy with `w = 0` at the outer end of a bounded domain.
    pub fn new(smms: &Smms, k: f64, dirichlet: bool) -> Result<Self> {
        let params = GnsParams::new(smms.n(), smms.m(), k)?;
        let exps = exponents(&params)?;
        let (base, s) = smms.pull_back();
        let m = base.m();
        let n = base.n() as f64;
        let grid = base.grid().clone();
        let lift = s.map(|s| s.scale((m + n - 2.0) / 2.0).exp().into_values());
        let geom = base.geom();
        let vol = geom.volume_density();
        let r = grid.r();
        let log_v = base.v().ln();
        let lv = log_v.values();

        let face_vol = geom.face_volume_density();
        let mut face: Vec<f64> = (0..grid.len() - 1)
            .map(|i| {
                let dr = r[i + 1] - r[i];
                let vm = (m * 0.5 * (lv[i] + lv[i + 1])).exp();
                grid.face_weight()[i] * face_vol[i] * vm / (dr * dr)
            })
            .collect();
        let last = grid.len() - 1;
        let closure = if dirichlet {
            if grid.domain() == Domain::HalfLine {
                return Err(GnsError::Parameter("Dirichlet closure needs a bounded domain".into()));
            }
            let gap = grid.r_end() - r[last];
            vol.values()[last] * (m * lv[last]).exp() / gap
        } else {
            0.0
        };

        let c = conformal_coefficient(base.n(), m)?;
        let rphi = base.weighted_scalar();
        let cells = geom.cell_volumes();
        let mut potential: Vec<f64> =
            (0..grid.len()).map(|i| cells[i] * c * rphi.values()[i] * (m * lv[i]).exp()).collect();
        potential[last] += closure;
        let weight0 = (0..grid.len()).map(|i| cells[i] * (m * lv[i]).exp()).collect();
        let weightk = (0..grid.len()).map(|i| cells[i] * ((m - k) * lv[i]).exp()).collect();
        face.shrink_to_fit();
        Ok(DiscreteQuotient { grid, exps, lift, face, potential, weight0, weightk })
    }

    pub fn exponents(&self) -> &ExponentSet {
        &self.exps
    }

    pub fn grid(&self) -> &Arc<RadialGrid> {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.potential.len()
    }

    pub fn is_empty(&self) -> bool {
        self.potential.is_empty()
    }

    /// Maps a profile on the (possibly rescaled) space to the model frame.
    pub fn to_base(&self, w: &[f64]) -> Vec<f64> {
        match &self.lift {
            Some(l) => w.iter().zip(l).map(|(a, b)| a * b).collect(),
            None => w.to_vec(),
        }
    }

    /// Inverse of [`DiscreteQuotient::to_base`].
    pub fn from_base(&self, w: &[f64]) -> Vec<f64> {
        match &self.lift {
            Some(l) => w.iter().zip(l).map(|(a, b)| a / b).collect(),
            None => w.to_vec(),
        }
    }

    /// Face coefficients `c_f` of the kinetic term.
    pub fn face_coefficients(&self) -> &[f64] {
        &self.face
    }

    /// Node coefficients of the potential term.
    pub fn potential(&self) -> &[f64] {
        &self.potential
    }

    pub fn weight0(&self) -> &[f64] {
        &self.weight0
    }

    pub fn weightk(&self) -> &[f64] {
        &self.weightk
    }

    /// `A w` with `energy = w^T A w`.
    pub fn apply_stiffness(&self, w: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = w.iter().zip(&self.potential).map(|(x, p)| x * p).collect();
        for (i, c) in self.face.iter().enumerate() {
            let flux = c * (w[i + 1] - w[i]);
            out[i] -= flux;
            out[i + 1] += flux;
        }
        out
    }

    fn bilinear(&self, a: &[f64], b: &[f64]) -> f64 {
        let kinetic: f64 = self.face.iter().enumerate().map(|(i, c)| c * (a[i + 1] - a[i]) * (b[i + 1] - b[i])).sum();
        let pot: f64 = self.potential.iter().zip(a).zip(b).map(|((p, x), y)| p * x * y).sum();
        kinetic + pot
    }

    fn power_sum(weight: &[f64], w: &[f64], p: f64) -> f64 {
        weight.iter().zip(w).map(|(c, x)| if *x == 0.0 { 0.0 } else { c * x.powf(p) }).sum()
    }

    /// Divergence check of the energy: power-law tails of the face and node densities.
    pub fn check_energy_tail(&self, w: &[f64]) -> Result<()> {
        let divergent = |fraction| GnsError::Divergence { name: "energy".into(), fraction, tol: TAIL_TOL };
        if w.iter().any(|x| !x.is_finite()) {
            return Err(divergent(f64::INFINITY));
        }
        if self.grid.domain() != Domain::HalfLine {
            return Ok(());
        }
        let kinetic: Vec<f64> = self.face.iter().enumerate().map(|(i, c)| c * (w[i + 1] - w[i]).powi(2)).collect();
        let nodal: Vec<f64> = self.potential.iter().zip(w).map(|(p, x)| (p * x * x).abs()).collect();
        let mass = kinetic.iter().sum::<f64>() + nodal.iter().sum::<f64>();
        let per_r = |vals: &[f64], weights: &[f64]| -> Vec<f64> { vals.iter().zip(weights).map(|(v, q)| v / q).collect() };
        let tail = tail_estimate(self.grid.r_face(), &per_r(&kinetic, self.grid.face_weight()))
            + tail_estimate(self.grid.r(), &per_r(&nodal, self.grid.quad_weight()));
        let fraction = if tail == 0.0 { 0.0 } else { tail / mass };
        if fraction <= TAIL_TOL {
            Ok(())
        } else {
            Err(divergent(fraction))
        }
    }

    pub fn parts(&self, w: &[f64]) -> QuotientParts {
        let omegak = if self.exps.p_f == 0.0 { f64::NAN } else { Self::power_sum(&self.weightk, w, self.exps.p_leb) };
        QuotientParts {
            energy: self.bilinear(w, w),
            omega0: Self::power_sum(&self.weight0, w, self.exps.q_leb),
            omegak,
        }
    }

    /// `log Q_k` from its parts; requires positive energy.
    pub fn log_value(&self, parts: &QuotientParts) -> Result<f64> {
        if !(parts.energy > 0.0 && parts.omega0 > 0.0) {
            return Err(GnsError::Domain(format!(
                "log Q_k needs positive energy and omega0, got {} and {}",
                parts.energy, parts.omega0
            )));
        }
        let middle = if self.exps.p_f == 0.0 { 0.0 } else { self.exps.p_f * parts.omegak.ln() };
        Ok(parts.energy.ln() + middle - self.exps.q_f * parts.omega0.ln())
    }

    /// Gradient of `log Q_k` with respect to the base-frame node values.
    pub fn gradient(&self, w: &[f64], parts: &QuotientParts) -> Vec<f64> {
        let e = &self.exps;
        let aw = self.apply_stiffness(w);
        (0..w.len())
            .map(|i| {
                let mut g = 2.0 * aw[i] / parts.energy
                    - e.q_f * e.q_leb * self.weight0[i] * w[i].powf(e.q_leb - 1.0) / parts.omega0;
                if e.p_f != 0.0 {
                    g += e.p_f * e.p_leb * self.weightk[i] * w[i].powf(e.p_leb - 1.0) / parts.omegak;
                }
                g
            })
            .collect()
    }

    /// `log Q_k(w + dw) - log Q_k(w)` without cancellation, for `w + dw = w e^{rho}`.
    pub fn log_change(&self, w: &[f64], rho: &[f64], parts: &QuotientParts) -> f64 {
        let e = &self.exps;
        let dw: Vec<f64> = w.iter().zip(rho).map(|(x, r)| x * r.exp_m1()).collect();
        let two_w_dw: Vec<f64> = w.iter().zip(&dw).map(|(x, d)| 2.0 * x + d).collect();
        let de = self.bilinear(&dw, &two_w_dw);
        let change = |weight: &[f64], p: f64| -> f64 {
            weight
                .iter()
                .zip(w)
                .zip(rho)
                .map(|((c, x), r)| if *x == 0.0 { 0.0 } else { c * x.powf(p) * (p * r).exp_m1() })
                .sum()
        };
        let mut out = (de / parts.energy).ln_1p() - e.q_f * (change(&self.weight0, e.q_leb) / parts.omega0).ln_1p();
        if e.p_f != 0.0 {
            out += e.p_f * (change(&self.weightk, e.p_leb) / parts.omegak).ln_1p();
        }
        out
    }
}

fn lifted(smms: &Smms, w: &RadialField) -> (Smms, RadialField) {
    let (base, s) = smms.pull_back();
    let n = smms.n() as f64;
    let w = match s {
        Some(s) => w * &s.scale((smms.m() + n - 2.0) / 2.0).exp(),
        None => w.clone(),
    };
    (base, w)
}

fn dirichlet_for(w: &RadialField) -> bool {
    w.outer_zero() && w.grid().domain() != Domain::HalfLine
}

fn check_profile(smms: &Smms, w: &RadialField) -> Result<()> {
    w.check_grid(smms.v(), "profile")?;
    if w.min() < 0.0 || w.max() <= 0.0 {
        return Err(GnsError::Domain("profile w must be nonnegative and not identically zero".into()));
    }
    Ok(())
}

/// `int (|grad w|^2 + c R_phi^m w^2) v^m dvol`.
pub fn energy(smms: &Smms, w: &RadialField) -> Result<f64> {
    check_profile(smms, w)?;
    let dq = discrete_for(smms, 1.0, w)?;
    let wb = dq.to_base(w.values());
    dq.check_energy_tail(&wb)?;
    Ok(dq.bilinear(&wb, &wb))
}

fn discrete_for(smms: &Smms, k: f64, w: &RadialField) -> Result<DiscreteQuotient> {
    // k only affects omega_k; any admissible value works for the energy alone.
    let k = if GnsParams::new(smms.n(), smms.m(), k).is_ok() { k } else { admissible_k(smms)? };
    DiscreteQuotient::new(smms, k, dirichlet_for(w))
}

fn admissible_k(smms: &Smms) -> Result<f64> {
    let (n, m) = (smms.n() as f64, smms.m());
    let top = if m >= 0.0 { (m + n + 2.0) / 2.0 } else { -2.0 * m / (n - 2.0) };
    GnsParams::new(smms.n(), m, top / 2.0).map(|p| p.k)
}

/// `int w L_phi^m w v^m dvol`, evaluated directly with the operator.
pub fn energy_literal(smms: &Smms, w: &RadialField) -> Result<f64> {
    check_profile(smms, w)?;
    let lw = smms.weighted_conformal_laplacian(w)?;
    Ok(integrate(smms.geom(), &(w * &lw * smms.measure_density()), "energy")?.value)
}

/// Evaluates `Q_k(w)` with divergence checks on all three integrals.
pub fn qk(smms: &Smms, k: f64, w: &RadialField) -> Result<FunctionalValue> {
    check_profile(smms, w)?;
    let dq = DiscreteQuotient::new(smms, k, dirichlet_for(w))?;
    let e = *dq.exponents();
    let (base, wb) = lifted(smms, w);
    let geom = base.geom();
    dq.check_energy_tail(wb.values())?;
    let vm = base.measure_density();
    integrate(geom, &(wb.powf(e.q_leb) * &vm), "omega0")?;
    let k_density = wb.powf(e.p_leb) * &vm * &base.v().powf(-k);
    let omegak_ok = integrate(geom, &k_density, "omegak");
    let mut parts = dq.parts(wb.values());
    let middle = if e.p_f == 0.0 {
        parts.omegak = match omegak_ok {
            Ok(_) => DiscreteQuotient::power_sum(&dq.weightk, wb.values(), e.p_leb),
            Err(_) => f64::INFINITY,
        };
        1.0
    } else {
        omegak_ok?;
        parts.omegak.powf(e.p_f)
    };
    Ok(FunctionalValue {
        energy: parts.energy,
        omega0: parts.omega0,
        omegak: parts.omegak,
        qk: parts.energy * middle / parts.omega0.powf(e.q_f),
    })
}

/// Bakry-Emery data of the conformal factor `u` against the density `v`.
#[derive(Clone, Debug)]
pub struct CwmFields {
    pub u: RadialField,
    /// `log(u/v)`.
    pub beta: RadialField,
    /// Weighted scalar curvature of the rescaled space.
    pub r_fphi: RadialField,
    /// The same quantity through the weighted conformal Laplacian of `u^{-(m+n-2)/2}`.
    pub r_fphi_covariant: RadialField,
    pub ric_fphi_rad: RadialField,
    pub ric_fphi_tan: RadialField,
    /// `Delta_rho beta` for the measure `u^{2-m-n} v^m dvol`.
    pub delta_rho_beta: RadialField,
    pub drho_weight: RadialField,
    pub domega_weight: RadialField,
    /// Max difference of the two scalar routes over the default window.
    pub route_discrepancy: f64,
}

pub fn cwm_fields(smms: &Smms, u: &RadialField) -> Result<CwmFields> {
    u.check_grid(smms.v(), "cwm_fields")?;
    if u.min() <= 0.0 {
        return Err(GnsError::Domain("conformal factor u must be positive".into()));
    }
    let geom = smms.geom();
    let n = smms.n() as f64;
    let m = smms.m();
    let v = smms.v();
    let mn = m + n;

    let (u1, u2) = (u.d1(), u.d2());
    let (v1, v2) = (v.d1(), v.d2());
    let ut = &geom.dt_from(&u1) / u;
    let vt = &geom.dt_from(&v1) / v;
    let lap_u = &geom.laplacian_from(&u1, &u2) / u;
    let lap_v = &geom.laplacian_from(&v1, &v2) / v;
    let (hu_rad, hu_tan) = geom.hessian_from(&u1, &u2);
    let (hv_rad, hv_tan) = geom.hessian_from(&v1, &v2);
    let (ric_rad, ric_tan) = geom.ricci_eigenvalues();

    let shift = &lap_u - ut.square().scale(mn - 1.0) + (&ut * &vt).scale(m);
    let ric_fphi_rad = ric_rad + (&hu_rad / u).scale(mn - 2.0) - (&hv_rad / v).scale(m) + &shift;
    let ric_fphi_tan = ric_tan + (&hu_tan / u).scale(mn - 2.0) - (&hv_tan / v).scale(m) + &shift;

    let beta_t = &ut - &vt;
    let lap_beta = &lap_u - ut.square() - &lap_v + vt.square();
    let drift = ut.scale(2.0 - mn) + vt.scale(m);
    let delta_rho_beta = lap_beta + drift * &beta_t;
    let r_fphi = &ric_fphi_rad + ric_fphi_tan.scale(n - 1.0) + delta_rho_beta.scale(m);

    let xi = u.powf(-(mn - 2.0) / 2.0);
    let l_xi = smms.weighted_conformal_laplacian(&xi)?;
    // The conformal Laplacian gives the curvature of u^{-2} g; u^{-2} brings it back to g.
    let r_fphi_covariant =
        (xi.powf(-(mn + 2.0) / (mn - 2.0)) * l_xi / u.square()).scale(4.0 * (mn - 1.0) / (mn - 2.0));
    let route_discrepancy = (&r_fphi - &r_fphi_covariant).linf_on(&u.grid().default_window());

    let vm = smms.measure_density();
    Ok(CwmFields {
        beta: u.ln() - v.ln(),
        drho_weight: u.powf(2.0 - mn) * &vm,
        domega_weight: u.powf(-mn) * &vm,
        u: u.clone(),
        r_fphi,
        r_fphi_covariant,
        ric_fphi_rad,
        ric_fphi_tan,
        delta_rho_beta,
        route_discrepancy,
    })
}

/// `(lambda, mu)` from the integral normalizations.
pub fn multipliers_integral(smms: &Smms, k: f64, u: &RadialField) -> Result<Multipliers> {
    let cwm = cwm_fields(smms, u)?;
    multipliers_from_cwm(smms, k, &cwm)
}

pub fn multipliers_from_cwm(smms: &Smms, k: f64, cwm: &CwmFields) -> Result<Multipliers> {
    let (n, m) = (smms.n() as f64, smms.m());
    let geom = smms.geom();
    let quad = |f: &RadialField, name: &str| integrate_extrapolated(geom, f, name, MULTIPLIER_TAIL_TOL).map(|i| i.value);
    let r_rho = quad(&(&cwm.r_fphi * &cwm.drho_weight), "R drho")?;
    let volume = quad(&cwm.domega_weight, "omega(M)")?;
    let denom = (m + n - 2.0) * n * k;
    let lambda = (2.0 * m + k * (n - 2.0)) * r_rho / (denom * volume);
    let mu = if m == 0.0 {
        0.0
    } else {
        let ratio = quad(&(cwm.beta.scale(k).exp() * &cwm.domega_weight), "(u/v)^k domega")?;
        m * r_rho / (denom * ratio)
    };
    Ok(Multipliers { lambda, mu })
}

/// `(lambda, mu)` from the quotient integrals, using `int R drho = 4(m+n-1)/(m+n-2) E(w)`,
/// `omega(M) = omega0` and `int (u/v)^k domega = omegak`.
pub fn multipliers_from_parts(params: &GnsParams, parts: &QuotientParts) -> Result<Multipliers> {
    params.validate()?;
    let (n, m, k) = (params.n as f64, params.m, params.k);
    let r_rho = 4.0 * (m + n - 1.0) / (m + n - 2.0) * parts.energy;
    let denom = (m + n - 2.0) * n * k;
    let lambda = (2.0 * m + k * (n - 2.0)) * r_rho / (denom * parts.omega0);
    let mu = if m == 0.0 { 0.0 } else { m * r_rho / (denom * parts.omegak) };
    Ok(Multipliers { lambda, mu })
}

/// `u^{k-2} v^{-k}`.
fn mu_weight(cwm: &CwmFields, k: f64) -> RadialField {
    (cwm.beta.scale(k) - cwm.u.ln().scale(2.0)).exp()
}

/// Conformal criticality: `R + 2(m+n-k) mu u^{k-2} v^{-k} - (m+n) lambda u^{-2}`.
pub fn el_residual_conformal(smms: &Smms, k: f64, u: &RadialField, mult: &Multipliers) -> Result<RadialField> {
    let cwm = cwm_fields(smms, u)?;
    Ok(residual_conformal_from(smms, k, &cwm, mult))
}

pub fn residual_conformal_from(smms: &Smms, k: f64, cwm: &CwmFields, mult: &Multipliers) -> RadialField {
    let mn = smms.m() + smms.n() as f64;
    &cwm.r_fphi + mu_weight(cwm, k).scale(2.0 * (mn - k) * mult.mu) - cwm.u.powf(-2.0).scale(mn * mult.lambda)
}

/// Measure criticality: `R - m Delta_rho beta + n(2-k) mu u^{k-2} v^{-k} - n lambda u^{-2}`.
pub fn el_residual_measure(smms: &Smms, k: f64, u: &RadialField, mult: &Multipliers) -> Result<RadialField> {
    let cwm = cwm_fields(smms, u)?;
    Ok(residual_measure_from(smms, k, &cwm, mult))
}

pub fn residual_measure_from(smms: &Smms, k: f64, cwm: &CwmFields, mult: &Multipliers) -> RadialField {
    let (n, m) = (smms.n() as f64, smms.m());
    &cwm.r_fphi - cwm.delta_rho_beta.scale(m) + mu_weight(cwm, k).scale(n * (2.0 - k) * mult.mu)
        - cwm.u.powf(-2.0).scale(n * mult.lambda)
}

/// Metric criticality as radial and tangential eigenvalue residuals of
/// `Ric_fphi + (2-k) mu u^{k-2} v^{-k} g - lambda u^{-2} g`.
pub fn el_residual_metric(
    smms: &Smms,
    k: f64,
    u: &RadialField,
    mult: &Multipliers,
) -> Result<(RadialField, RadialField)> {
    let cwm = cwm_fields(smms, u)?;
    Ok(residual_metric_from(k, &cwm, mult))
}

pub fn residual_metric_from(k: f64, cwm: &CwmFields, mult: &Multipliers) -> (RadialField, RadialField) {
    let shift = mu_weight(cwm, k).scale((2.0 - k) * mult.mu) - cwm.u.powf(-2.0).scale(mult.lambda);
    (&cwm.ric_fphi_rad + &shift, &cwm.ric_fphi_tan + &shift)
}

/// Pointwise `lambda` and `mu` solved from the tractor displays (finite-difference tractors).
pub fn tractor_multipliers(smms: &Smms, k: f64, u: &RadialField) -> Result<(RadialField, RadialField)> {
    let norms = TractorNorms::radial(smms.geom(), u, smms.v())?;
    tractor_multipliers_from(smms, k, u, &norms)
}

pub fn tractor_multipliers_from(
    smms: &Smms,
    k: f64,
    u: &RadialField,
    norms: &TractorNorms,
) -> Result<(RadialField, RadialField)> {
    if k == 0.0 {
        return Err(GnsError::Parameter("tractor multipliers need k != 0".into()));
    }
    u.check_grid(smms.v(), "tractor_multipliers")?;
    let (n, m, v) = (smms.n() as f64, smms.m(), smms.v());
    let a = m + n - 2.0;
    let uv = u * v;
    let lambda_num = (v.square() * &norms.uu).scale(-k * (m + n - 1.0) * a)
        + (u.square() * &norms.vv).scale(m * (m - 1.0) * (2.0 - k))
        + (&uv * &norms.uv).scale(2.0 * (k - 1.0) * m * a);
    let lambda = (lambda_num / v.square()).scale(1.0 / (a * k));
    let mu_num = (&uv * &norms.uv).scale(-m * a) + (u.square() * &norms.vv).scale(m * (m - 1.0));
    let mu_den = (u.ln().scale(k) + v.ln().scale(2.0 - k)).exp().scale(a * k);
    Ok((lambda, mu_num / mu_den))
}

/// Tractor form of conformal criticality, LHS minus RHS.
pub fn crit_identity_residual(smms: &Smms, k: f64, u: &RadialField, mult: &Multipliers) -> Result<RadialField> {
    let norms = TractorNorms::radial(smms.geom(), u, smms.v())?;
    crit_identity_residual_from(smms, k, u, mult, &norms)
}

pub fn crit_identity_residual_from(
    smms: &Smms,
    k: f64,
    u: &RadialField,
    mult: &Multipliers,
    norms: &TractorNorms,
) -> Result<RadialField> {
    u.check_grid(smms.v(), "crit_identity_residual")?;
    let (n, m, v) = (smms.n() as f64, smms.m(), smms.v());
    let mn = m + n;
    let v2 = v.square();
    let lhs = v2.scale(mn * mult.lambda)
        - (u.ln().scale(k) + v.ln().scale(2.0 - k)).exp().scale(2.0 * (mn - k) * mult.mu);
    let rhs = (&v2 * &norms.uu).scale(-mn * (mn - 1.0)) + (u * v * &norms.uv).scale(2.0 * m * (mn - 1.0))
        - (u.square() * &norms.vv).scale(m * (m - 1.0));
    Ok(lhs - rhs)
}

/// The explicit extremal pair `(u, w)` with `w = u^{-(m+n-2)/2}`:
/// `u = 1 + r^2` on the sphere-like branch, `u = 1 - r^2` on the unit ball otherwise.
pub fn dd_extremal(params: &GnsParams, branch: Branch, grid: &Arc<RadialGrid>) -> Result<(RadialField, RadialField)> {
    let actual = params.validate()?;
    if actual != branch {
        return Err(GnsError::Parameter(format!("parameters {params:?} lie on the {actual:?} branch, not {branch:?}")));
    }
    let (n, m) = (params.n as f64, params.m);
    let power = -(m + n - 2.0) / 2.0;
    let t = (m + n) / (m + n - 2.0);
    debug_assert!((1.0 / (t - 1.0) - (m + n - 2.0) / 2.0).abs() < 1e-12);
    match branch {
        Branch::SphereLike => {
            let u = RadialField::from_fn(grid, |r| 1.0 + r * r);
            let w = u.powf(power);
            Ok((u, w))
        }
        Branch::BallLike => {
            if grid.domain() != Domain::UnitBall {
                return Err(GnsError::Parameter("the ball-like extremal lives on the unit_ball domain".into()));
            }
            let u = RadialField::from_fn(grid, |r| 1.0 - r * r);
            let w = u.powf(power).with_outer_zero();
            Ok((u, w))
        }
    }
}

/// `Q_k` at the explicit extremal of the given space (used as an oracle).
pub fn qk_at_extremal(smms: &Smms, k: f64) -> Result<FunctionalValue> {
    let params = GnsParams::new(smms.n(), smms.m(), k)?;
    let (_, w) = dd_extremal(&params, params.branch()?, smms.grid())?;
    qk(smms, k, &w)
}

/// Reference geometry for a flat space over a half-line or ball grid.
pub fn flat_space(grid: &Arc<RadialGrid>, n: usize, m: f64) -> Result<Smms> {
    Smms::unweighted(WarpedGeometry::euclidean(grid, n)?, m)
}
