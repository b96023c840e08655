//! Compactified radial grids and sampled radial fields.
//!
//! Nodes sit at the midpoints `s_i = (i + 1/2)/N` of a uniform partition of
//! `[0, 1)`, so neither the origin nor the far end is ever sampled. Radial
//! derivatives are taken directly in `r` with three-point Lagrange stencils on
//! the (non-uniform) physical nodes. At the origin a field's parity supplies an
//! exact mirror value at `-r_0`; on the sphere chart the same mirror is used at
//! the south pole.

use std::f64::consts::PI;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::sync::Arc;

use serde::Serialize;

use crate::error::{GnsError, Result};

/// Radial parameter domain.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    /// `r in (0, inf)` through `r = scale * s / (1 - s)`.
    HalfLine,
    /// `r in (0, 1)` through `r = s`.
    UnitBall,
    /// `r in (0, pi)`; both ends are poles of the round sphere.
    SphereChart,
    /// `r in (0, scale)` through `r = scale * s`; the outer end is an open boundary.
    Segment,
}

impl Domain {
    pub fn name(self) -> &'static str {
        match self {
            Domain::HalfLine => "half_line",
            Domain::UnitBall => "unit_ball",
            Domain::SphereChart => "sphere_chart",
            Domain::Segment => "segment",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "half_line" => Ok(Domain::HalfLine),
            "unit_ball" => Ok(Domain::UnitBall),
            "sphere_chart" | "sphere" => Ok(Domain::SphereChart),
            "segment" => Ok(Domain::Segment),
            other => Err(GnsError::Parameter(format!("unknown domain `{other}`"))),
        }
    }
}

/// Reflection symmetry of a radial field about the origin.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Parity {
    Even,
    Odd,
    /// No symmetry known; one-sided stencils are used at the ends.
    Unknown,
}

impl Parity {
    fn sign(self) -> Option<f64> {
        match self {
            Parity::Even => Some(1.0),
            Parity::Odd => Some(-1.0),
            Parity::Unknown => None,
        }
    }

    fn flip(self) -> Self {
        match self {
            Parity::Even => Parity::Odd,
            Parity::Odd => Parity::Even,
            Parity::Unknown => Parity::Unknown,
        }
    }

    fn sum(self, other: Self) -> Self {
        if self == other {
            self
        } else {
            Parity::Unknown
        }
    }

    fn product(self, other: Self) -> Self {
        match (self, other) {
            (Parity::Unknown, _) | (_, Parity::Unknown) => Parity::Unknown,
            (a, b) if a == b => Parity::Even,
            _ => Parity::Odd,
        }
    }
}

/// Node index range `[start, end)` used for residual norms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Window {
    pub start: usize,
    pub end: usize,
}

impl Window {
    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn indices(&self) -> std::ops::Range<usize> {
        self.start..self.end
    }
}

/// Sample locations, quadrature weights and finite-difference stencils.
#[derive(Debug)]
pub struct RadialGrid {
    domain: Domain,
    scale: f64,
    s: Vec<f64>,
    r: Vec<f64>,
    jacobian: Vec<f64>,
    quad_weight: Vec<f64>,
    r_face: Vec<f64>,
    face_weight: Vec<f64>,
    d1: Vec<[f64; 3]>,
    d2: Vec<[f64; 3]>,
}

/// Finite-difference weights for derivatives of order `0..=max_order` at `x0`
/// from samples at `xs` (Fornberg's recursion).
pub fn fd_weights(x0: f64, xs: &[f64], max_order: usize) -> Vec<Vec<f64>> {
    let n = xs.len();
    let mut c = vec![vec![0.0; n]; max_order + 1];
    c[0][0] = 1.0;
    let mut c1 = 1.0;
    let mut c4 = xs[0] - x0;
    for i in 1..n {
        let mn = i.min(max_order);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = xs[i] - x0;
        for j in 0..i {
            let c3 = xs[i] - xs[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] = c4 * c[0][j] / c3;
        }
        c1 = c2;
    }
    c
}

impl RadialGrid {
    /// Builds a grid with `n` midpoint nodes.
    pub fn new(domain: Domain, n: usize, scale: f64) -> Result<Arc<Self>> {
        if n < 16 {
            return Err(GnsError::Parameter(format!("grid needs N >= 16, got {n}")));
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(GnsError::Parameter(format!("grid scale must be positive, got {scale}")));
        }
        let h = 1.0 / n as f64;
        let map = |s: f64| -> (f64, f64) {
            match domain {
                Domain::HalfLine => (scale * s / (1.0 - s), scale / ((1.0 - s) * (1.0 - s))),
                Domain::UnitBall => (s, 1.0),
                Domain::SphereChart => (PI * s, PI),
                Domain::Segment => (scale * s, scale),
            }
        };
        let s: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) * h).collect();
        let (r, jacobian): (Vec<f64>, Vec<f64>) = s.iter().map(|&si| map(si)).unzip();
        let quad_weight = jacobian.iter().map(|j| j * h).collect();
        let (r_face, face_weight) = (1..n).map(|i| map(i as f64 * h)).map(|(rf, jf)| (rf, jf * h)).unzip();

        let mut d1 = vec![[0.0; 3]; n];
        let mut d2 = vec![[0.0; 3]; n];
        for i in 1..n - 1 {
            let w = fd_weights(r[i], &[r[i - 1], r[i], r[i + 1]], 2);
            d1[i] = [w[1][0], w[1][1], w[1][2]];
            d2[i] = [w[2][0], w[2][1], w[2][2]];
        }
        let domain_scale = match domain {
            Domain::HalfLine | Domain::Segment => scale,
            Domain::UnitBall => 1.0,
            Domain::SphereChart => PI,
        };
        Ok(Arc::new(RadialGrid {
            domain,
            scale: domain_scale,
            s,
            r,
            jacobian,
            quad_weight,
            r_face,
            face_weight,
            d1,
            d2,
        }))
    }

    /// `(r, dr/ds)` at a chart coordinate `s`.
    pub(crate) fn map(&self, s: f64) -> (f64, f64) {
        let scale = self.scale;
        match self.domain {
            Domain::HalfLine => (scale * s / (1.0 - s), scale / ((1.0 - s) * (1.0 - s))),
            Domain::UnitBall => (s, 1.0),
            Domain::SphereChart => (PI * s, PI),
            Domain::Segment => (scale * s, scale),
        }
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    /// Half-line map scale, segment length, 1 for the ball, pi for the sphere chart.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    pub fn step(&self) -> f64 {
        1.0 / self.len() as f64
    }

    pub fn s(&self) -> &[f64] {
        &self.s
    }

    pub fn r(&self) -> &[f64] {
        &self.r
    }

    pub fn jacobian(&self) -> &[f64] {
        &self.jacobian
    }

    pub fn quad_weight(&self) -> &[f64] {
        &self.quad_weight
    }

    /// Radii of the `N - 1` cell faces between consecutive nodes.
    pub fn r_face(&self) -> &[f64] {
        &self.r_face
    }

    /// Midpoint weights `h * dr/ds` attached to the faces.
    pub fn face_weight(&self) -> &[f64] {
        &self.face_weight
    }

    /// Radius of the outer end of the domain (infinite on the half-line).
    pub fn r_end(&self) -> f64 {
        match self.domain {
            Domain::HalfLine => f64::INFINITY,
            _ => self.scale,
        }
    }

    pub fn same_as(&self, other: &RadialGrid) -> bool {
        std::ptr::eq(self, other)
            || (self.domain == other.domain && self.scale == other.scale && self.len() == other.len())
    }

    /// All nodes except the outermost 5%.
    pub fn default_window(&self) -> Window {
        let n = self.len();
        let cut = ((n as f64) * 0.05).ceil() as usize;
        Window { start: 0, end: n - cut.max(1) }
    }

    /// Nodes with `lo <= r <= hi`.
    pub fn window_r(&self, lo: f64, hi: f64) -> Window {
        let start = self.r.partition_point(|&x| x < lo);
        let end = self.r.partition_point(|&x| x <= hi);
        Window { start, end: end.max(start) }
    }

    /// Derivative of order 1 or 2 in `r`.
    pub(crate) fn derivative(&self, values: &[f64], parity: Parity, outer_zero: bool, order: usize) -> Vec<f64> {
        let n = self.len();
        let r = &self.r;
        let interior = if order == 1 { &self.d1 } else { &self.d2 };
        let mut out = vec![0.0; n];
        for i in 1..n - 1 {
            let c = interior[i];
            out[i] = c[0] * values[i - 1] + c[1] * values[i] + c[2] * values[i + 1];
        }
        out[0] = match parity.sign() {
            Some(sign) => {
                let w = fd_weights(r[0], &[-r[0], r[0], r[1]], order);
                (w[order][0] * sign + w[order][1]) * values[0] + w[order][2] * values[1]
            }
            None => one_sided(r, values, 0, order, true),
        };
        let last = n - 1;
        out[last] = match (self.domain, parity.sign()) {
            (Domain::SphereChart, Some(sign)) => {
                let ghost = 2.0 * PI - r[last];
                let w = fd_weights(r[last], &[r[last - 1], r[last], ghost], order);
                w[order][0] * values[last - 1] + (w[order][1] + w[order][2] * sign) * values[last]
            }
            (Domain::UnitBall | Domain::Segment, _) if outer_zero => {
                let w = fd_weights(r[last], &[r[last - 1], r[last], self.scale], order);
                w[order][0] * values[last - 1] + w[order][1] * values[last]
            }
            _ => one_sided(r, values, last, order, false),
        };
        out
    }
}

fn one_sided(r: &[f64], values: &[f64], at: usize, order: usize, forward: bool) -> f64 {
    let count = order + 2;
    let idx: Vec<usize> = if forward { (0..count).collect() } else { (at + 1 - count..=at).collect() };
    let xs: Vec<f64> = idx.iter().map(|&j| r[j]).collect();
    let w = fd_weights(r[at], &xs, order);
    idx.iter().zip(&w[order]).map(|(&j, c)| c * values[j]).sum()
}

/// A radial function sampled at the grid nodes.
#[derive(Clone, Debug)]
pub struct RadialField {
    grid: Arc<RadialGrid>,
    values: Vec<f64>,
    parity: Parity,
    outer_zero: bool,
}

impl RadialField {
    /// Wraps samples; rejects non-finite values. Parity defaults to even.
    pub fn new(grid: &Arc<RadialGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(GnsError::Shape(format!(
                "field has {} samples but grid has {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(GnsError::Domain(format!("non-finite sample at r = {:e}", grid.r[i])));
        }
        Ok(Self { grid: grid.clone(), values, parity: Parity::Even, outer_zero: false })
    }

    /// Samples an even radial function.
    pub fn from_fn(grid: &Arc<RadialGrid>, f: impl Fn(f64) -> f64) -> Self {
        let values = grid.r.iter().map(|&r| f(r)).collect();
        Self { grid: grid.clone(), values, parity: Parity::Even, outer_zero: false }
    }

    /// Samples an odd radial function.
    pub fn from_fn_odd(grid: &Arc<RadialGrid>, f: impl Fn(f64) -> f64) -> Self {
        Self::from_fn(grid, f).with_parity(Parity::Odd)
    }

    pub fn constant(grid: &Arc<RadialGrid>, c: f64) -> Self {
        Self::from_fn(grid, |_| c)
    }

    pub fn radius(grid: &Arc<RadialGrid>) -> Self {
        Self::from_fn_odd(grid, |r| r)
    }

    pub(crate) fn raw(grid: &Arc<RadialGrid>, values: Vec<f64>, parity: Parity) -> Self {
        Self { grid: grid.clone(), values, parity, outer_zero: false }
    }

    pub fn with_parity(mut self, parity: Parity) -> Self {
        self.parity = parity;
        self
    }

    /// Declares that the field vanishes at the outer end of a bounded domain.
    pub fn with_outer_zero(mut self) -> Self {
        self.outer_zero = true;
        self
    }

    pub fn parity(&self) -> Parity {
        self.parity
    }

    pub fn outer_zero(&self) -> bool {
        self.outer_zero
    }

    pub fn grid(&self) -> &Arc<RadialGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn r(&self) -> &[f64] {
        &self.grid.r
    }

    pub fn same_grid(&self, other: &RadialField) -> bool {
        self.grid.same_as(&other.grid)
    }

    pub(crate) fn check_grid(&self, other: &RadialField, what: &str) -> Result<()> {
        if self.same_grid(other) {
            Ok(())
        } else {
            Err(GnsError::Shape(format!("{what}: fields live on different grids")))
        }
    }

    /// First radial derivative.
    pub fn d1(&self) -> RadialField {
        let values = self.grid.derivative(&self.values, self.parity, self.outer_zero, 1);
        Self::raw(&self.grid, values, self.parity.flip())
    }

    /// Second radial derivative.
    pub fn d2(&self) -> RadialField {
        let values = self.grid.derivative(&self.values, self.parity, self.outer_zero, 2);
        Self::raw(&self.grid, values, self.parity)
    }

    /// Applies `f` pointwise. An even field stays even; otherwise symmetry is dropped.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> RadialField {
        let parity = if self.parity == Parity::Even { Parity::Even } else { Parity::Unknown };
        Self::raw(&self.grid, self.values.iter().map(|&x| f(x)).collect(), parity)
    }

    /// Pointwise combination of two fields; symmetry is dropped unless both are even.
    pub fn zip_map(&self, other: &RadialField, f: impl Fn(f64, f64) -> f64) -> RadialField {
        assert_same(self, other);
        let parity = if self.parity == Parity::Even && other.parity == Parity::Even {
            Parity::Even
        } else {
            Parity::Unknown
        };
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect();
        Self::raw(&self.grid, values, parity)
    }

    pub fn scale(&self, c: f64) -> RadialField {
        let mut out = Self::raw(&self.grid, self.values.iter().map(|x| c * x).collect(), self.parity);
        out.outer_zero = self.outer_zero;
        out
    }

    pub fn powf(&self, p: f64) -> RadialField {
        self.map(|x| x.powf(p))
    }

    pub fn ln(&self) -> RadialField {
        self.map(f64::ln)
    }

    pub fn exp(&self) -> RadialField {
        self.map(f64::exp)
    }

    pub fn recip(&self) -> RadialField {
        let mut out = Self::raw(&self.grid, self.values.iter().map(|x| 1.0 / x).collect(), self.parity);
        out.outer_zero = false;
        out
    }

    pub fn square(&self) -> RadialField {
        self * self
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Maximum absolute value over all nodes.
    pub fn linf(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Maximum absolute value over a node window.
    pub fn linf_on(&self, window: &Window) -> f64 {
        self.values[window.indices()].iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Mean value over a node window.
    pub fn mean_on(&self, window: &Window) -> f64 {
        let slice = &self.values[window.indices()];
        slice.iter().sum::<f64>() / slice.len().max(1) as f64
    }

    /// `(max - min) / max|.|` over a window; 0 for a constant field.
    pub fn relative_variation_on(&self, window: &Window) -> f64 {
        let slice = &self.values[window.indices()];
        let lo = slice.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = slice.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let scale = lo.abs().max(hi.abs());
        if scale == 0.0 {
            0.0
        } else {
            (hi - lo) / scale
        }
    }
}

fn assert_same(a: &RadialField, b: &RadialField) {
    assert!(a.same_grid(b), "radial fields live on different grids");
}

macro_rules! binary_op {
    ($trait:ident, $method:ident, $op:tt, $parity:ident, $zero:expr) => {
        impl $trait<&RadialField> for &RadialField {
            type Output = RadialField;
            fn $method(self, rhs: &RadialField) -> RadialField {
                assert_same(self, rhs);
                let values = self.values.iter().zip(&rhs.values).map(|(a, b)| a $op b).collect();
                let mut out = RadialField::raw(&self.grid, values, self.parity.$parity(rhs.parity));
                let zero: fn(bool, bool) -> bool = $zero;
                out.outer_zero = zero(self.outer_zero, rhs.outer_zero);
                out
            }
        }
        impl $trait<RadialField> for RadialField {
            type Output = RadialField;
            fn $method(self, rhs: RadialField) -> RadialField {
                (&self).$method(&rhs)
            }
        }
        impl $trait<&RadialField> for RadialField {
            type Output = RadialField;
            fn $method(self, rhs: &RadialField) -> RadialField {
                (&self).$method(rhs)
            }
        }
        impl $trait<RadialField> for &RadialField {
            type Output = RadialField;
            fn $method(self, rhs: RadialField) -> RadialField {
                self.$method(&rhs)
            }
        }
    };
}

binary_op!(Add, add, +, sum, |a, b| a && b);
binary_op!(Sub, sub, -, sum, |a, b| a && b);
binary_op!(Mul, mul, *, product, |a, b| a || b);
binary_op!(Div, div, /, product, |a, _| a);

impl Mul<&RadialField> for f64 {
    type Output = RadialField;
    fn mul(self, rhs: &RadialField) -> RadialField {
        rhs.scale(self)
    }
}

impl Mul<RadialField> for f64 {
    type Output = RadialField;
    fn mul(self, rhs: RadialField) -> RadialField {
        rhs.scale(self)
    }
}

impl Add<f64> for &RadialField {
    type Output = RadialField;
    fn add(self, c: f64) -> RadialField {
        let parity = if c == 0.0 { self.parity } else { self.parity.sum(Parity::Even) };
        RadialField::raw(&self.grid, self.values.iter().map(|x| x + c).collect(), parity)
    }
}

impl Add<f64> for RadialField {
    type Output = RadialField;
    fn add(self, c: f64) -> RadialField {
        &self + c
    }
}

impl Sub<f64> for &RadialField {
    type Output = RadialField;
    fn sub(self, c: f64) -> RadialField {
        self + (-c)
    }
}

impl Sub<f64> for RadialField {
    type Output = RadialField;
    fn sub(self, c: f64) -> RadialField {
        &self + (-c)
    }
}

impl Neg for &RadialField {
    type Output = RadialField;
    fn neg(self) -> RadialField {
        self.scale(-1.0)
    }
}

impl Neg for RadialField {
    type Output = RadialField;
    fn neg(self) -> RadialField {
        self.scale(-1.0)
    }
}

/// Convenience wrapper for [`RadialGrid::new`].
pub fn make_grid(domain: Domain, n: usize, scale: f64) -> Result<Arc<RadialGrid>> {
    RadialGrid::new(domain, n, scale)
}
