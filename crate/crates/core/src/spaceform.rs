//! Closed-form ambient geometry of the model spaces `N^n(ε)`.
//!
//! Each space form is the warped product `dr² + λ(r)² g_{S^{n-1}}` with
//! `λ = sinh r, r, sin r` for `ε = -1, 0, 1`. [`BallFunctions`] collects the
//! geodesic-ball comparison functions that appear on the right-hand side of
//! every inequality checked by the crate, together with a bracketed
//! inverse.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inequalities::WeightFunction;
use crate::quadrature;

/// Distance kept from the antipode in the round sphere.
pub const ANTIPODE_GAP: f64 = 1e-6;
/// Default radial cap for the non-compact forms.
pub const DEFAULT_R_MAX: f64 = 10.0;

/// Sign of the ambient sectional curvature.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "i32", into = "i32")]
pub enum SpaceForm {
    Hyperbolic,
    Euclidean,
    Spherical,
}

impl TryFrom<i32> for SpaceForm {
    type Error = Error;
    fn try_from(eps: i32) -> Result<Self> {
        Self::from_epsilon(eps)
    }
}

impl From<SpaceForm> for i32 {
    fn from(f: SpaceForm) -> i32 {
        f.epsilon()
    }
}

impl fmt::Display for SpaceForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            SpaceForm::Hyperbolic => "hyperbolic",
            SpaceForm::Euclidean => "euclidean",
            SpaceForm::Spherical => "spherical",
        };
        write!(f, "{name} (eps={})", self.epsilon())
    }
}

/// `(λ, λ′, Φ)` at one radius.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Warp {
    pub lambda: f64,
    pub dlambda: f64,
    pub phi: f64,
}

impl SpaceForm {
    pub fn from_epsilon(eps: i32) -> Result<Self> {
        match eps {
            -1 => Ok(SpaceForm::Hyperbolic),
            0 => Ok(SpaceForm::Euclidean),
            1 => Ok(SpaceForm::Spherical),
            other => Err(Error::invalid(format!("curvature sign must be -1, 0 or 1, got {other}"))),
        }
    }

    pub fn epsilon(self) -> i32 {
        match self {
            SpaceForm::Hyperbolic => -1,
            SpaceForm::Euclidean => 0,
            SpaceForm::Spherical => 1,
        }
    }

    #[inline]
    pub fn eps(self) -> f64 {
        self.epsilon() as f64
    }

    /// Largest admissible radius.
    pub fn radial_cap(self) -> f64 {
        match self {
            SpaceForm::Spherical => PI - ANTIPODE_GAP,
            _ => f64::INFINITY,
        }
    }

    #[inline]
    pub fn lambda(self, r: f64) -> f64 {
        match self {
            SpaceForm::Hyperbolic => r.sinh(),
            SpaceForm::Euclidean => r,
            SpaceForm::Spherical => r.sin(),
        }
    }

    #[inline]
    pub fn dlambda(self, r: f64) -> f64 {
        match self {
            SpaceForm::Hyperbolic => r.cosh(),
            SpaceForm::Euclidean => 1.0,
            SpaceForm::Spherical => r.cos(),
        }
    }

    /// `Φ(r) = ∫_0^r λ`. Half-angle forms below `r = 1` keep full relative
    /// precision near the origin.
    #[inline]
    pub fn phi(self, r: f64) -> f64 {
        match self {
            SpaceForm::Hyperbolic => {
                if r < 1.0 {
                    let s = (0.5 * r).sinh();
                    2.0 * s * s
                } else {
                    r.cosh() - 1.0
                }
            }
            SpaceForm::Euclidean => 0.5 * r * r,
            SpaceForm::Spherical => {
                if r < 1.0 {
                    let s = (0.5 * r).sin();
                    2.0 * s * s
                } else {
                    1.0 - r.cos()
                }
            }
        }
    }

    #[inline]
    pub fn warp_unchecked(self, r: f64) -> Warp {
        Warp {
            lambda: self.lambda(r),
            dlambda: self.dlambda(r),
            phi: self.phi(r),
        }
    }

    pub fn check_radius(self, r: f64) -> Result<()> {
        if !(r >= 0.0 && r <= self.radial_cap()) || !r.is_finite() {
            return Err(Error::Domain {
                what: "radius",
                value: r,
                domain: match self {
                    SpaceForm::Spherical => format!("[0, {}]", self.radial_cap()),
                    _ => "[0, inf)".into(),
                },
            });
        }
        Ok(())
    }

    /// `(λ, λ′, Φ)` with domain checking.
    pub fn eval_warp(self, r: f64) -> Result<Warp> {
        self.check_radius(r)?;
        Ok(self.warp_unchecked(r))
    }
}

/// Area of the unit sphere `S^{n-1} ⊂ R^n`: `2π^{n/2} / Γ(n/2)`.
pub fn unit_sphere_area(n: usize) -> f64 {
    let half = n as f64 / 2.0;
    2.0 * PI.powf(half) / statrs::function::gamma::gamma(half)
}

/// Comparison quantities whose inverse is needed on the right-hand sides.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Comparison {
    /// `f_l(r) = W_l(B_r)`
    Quermass(usize),
    /// `h(r) = ∫_{B_r} λ′ dv`
    WeightedVolume,
    /// `ξ(r) = |∂B_r|`
    Area,
}

/// Geodesic-ball functions in `N^n(ε)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BallFunctions {
    pub n: usize,
    pub form: SpaceForm,
    pub r_max: f64,
}

impl BallFunctions {
    pub fn new(n: usize, form: SpaceForm) -> Result<Self> {
        if n < 3 {
            return Err(Error::invalid(format!("ambient dimension must be >= 3, got {n}")));
        }
        Ok(Self { n, form, r_max: DEFAULT_R_MAX })
    }

    pub fn with_r_max(mut self, r_max: f64) -> Self {
        self.r_max = r_max;
        self
    }

    /// `ω_{n-1}`, the area of the unit sphere bounding `B_1 ⊂ R^n`.
    pub fn omega(&self) -> f64 {
        unit_sphere_area(self.n)
    }

    fn check(&self, r: f64) -> Result<Warp> {
        let cap = match self.form {
            SpaceForm::Spherical => self.form.radial_cap(),
            _ => self.r_max,
        };
        if !(r >= 0.0 && r <= cap) {
            return Err(Error::Domain {
                what: "radius",
                value: r,
                domain: format!("[0, {cap}]"),
            });
        }
        Ok(self.form.warp_unchecked(r))
    }

    /// Interval on which every comparison function is strictly increasing.
    pub fn monotone_bracket(&self) -> (f64, f64) {
        match self.form {
            // λ = sin r peaks at the equator
            SpaceForm::Spherical => (0.0, PI / 2.0),
            _ => (0.0, self.r_max),
        }
    }

    /// `∫_0^r λ(s)^{n-1} ds`
    pub fn radial_volume(&self, r: f64) -> Result<f64> {
        self.check(r)?;
        let form = self.form;
        let p = self.n as i32 - 1;
        quadrature::integrate_default(|s| form.lambda(s).powi(p), 0.0, r)
    }

    /// `∫_0^r f(Φ(s)) λ(s)^{n-1} ds`
    pub fn radial_weighted_volume(&self, f: &WeightFunction, r: f64) -> Result<f64> {
        self.check(r)?;
        let form = self.form;
        let p = self.n as i32 - 1;
        quadrature::integrate_default(|s| f.value(form.phi(s)) * form.lambda(s).powi(p), 0.0, r)
    }

    /// `∫_{∂B_r} H_k dμ = ω λ^{n-1} (λ′/λ)^k`
    pub fn sphere_curvature_integral(&self, k: usize, r: f64) -> Result<f64> {
        if k > self.n - 1 {
            return Err(Error::OrderOutOfRange { order: k, max: self.n - 1 });
        }
        let w = self.check(r)?;
        Ok(self.omega() * w.lambda.powi((self.n - 1 - k) as i32) * w.dlambda.powi(k as i32))
    }

    /// `W_l(B_r)` by the quermassintegral recursion.
    pub fn quermassintegral(&self, l: usize, r: f64) -> Result<f64> {
        let n = self.n;
        if l > n {
            return Err(Error::OrderOutOfRange { order: l, max: n });
        }
        self.check(r)?;
        if l == n {
            return Ok(self.omega() / n as f64);
        }
        let mut w_prev = self.omega() * self.radial_volume(r)?;
        if l == 0 {
            return Ok(w_prev);
        }
        let mut w_cur = self.sphere_curvature_integral(0, r)? / (n - 1) as f64;
        let eps = self.form.eps();
        for k in 1..l {
            let denom = (n - 1 - k) as f64;
            let next = self.sphere_curvature_integral(k, r)? / denom + eps * k as f64 / denom * w_prev;
            w_prev = w_cur;
            w_cur = next;
        }
        Ok(w_cur)
    }

    /// `χ_k(r) = ∫_{∂B_r} f(Φ) H_k dμ = ω λ^{n-1} f(Φ) (λ′/λ)^k`.
    pub fn chi_k(&self, k: usize, f: &WeightFunction, r: f64) -> Result<f64> {
        let w = self.check(r)?;
        Ok(self.sphere_curvature_integral(k, r)? * f.value(w.phi))
    }

    /// `h(r) = ∫_{B_r} λ′ dv = ω λ^n / n`.
    pub fn weighted_volume(&self, r: f64) -> Result<f64> {
        let w = self.check(r)?;
        Ok(self.omega() * w.lambda.powi(self.n as i32) / self.n as f64)
    }

    /// `ξ(r) = ω λ^{n-1}`
    pub fn xi(&self, r: f64) -> Result<f64> {
        let w = self.check(r)?;
        Ok(self.omega() * w.lambda.powi(self.n as i32 - 1))
    }

    /// `∫_{B_r} f(Φ) dv`
    pub fn ball_weighted_integral(&self, f: &WeightFunction, r: f64) -> Result<f64> {
        Ok(self.omega() * self.radial_weighted_volume(f, r)?)
    }

    /// `χ(r) = ∫_{∂B_r} f(Φ) H_1 dμ + ε ∫_{B_r} f(Φ) dv`.
    pub fn chi_minkowski(&self, f: &WeightFunction, r: f64) -> Result<f64> {
        let eps = self.form.eps();
        let bulk = if eps == 0.0 { 0.0 } else { self.ball_weighted_integral(f, r)? };
        Ok(self.chi_k(1, f, r)? + eps * bulk)
    }

    pub fn comparison(&self, c: Comparison, r: f64) -> Result<f64> {
        match c {
            Comparison::Quermass(l) => self.quermassintegral(l, r),
            Comparison::WeightedVolume => self.weighted_volume(r),
            Comparison::Area => self.xi(r),
        }
    }

    /// Radius `r` in the monotone bracket with `c(r) = y`.
    pub fn invert(&self, c: Comparison, y: f64) -> Result<f64> {
        if let Comparison::Quermass(l) = c {
            if l >= self.n {
                return Err(Error::invalid(format!("W_{l} of a ball is constant in r and has no inverse")));
            }
        }
        let (mut lo, cap) = self.monotone_bracket();
        let g = |r: f64| self.comparison(c, r);
        // grow the bracket from r = 1: on [0, r_max] the functions span
        // many orders of magnitude and secant steps stall
        let mut hi = cap.min(1.0);
        while hi < cap && g(hi)? < y {
            lo = hi;
            hi = (2.0 * hi).min(cap);
        }
        invert_increasing(g, y, lo, hi)
    }
}

const INVERT_MAX_ITER: usize = 200;

/// Solve `g(r) = y` for strictly increasing `g` on `[lo, hi]`.
///
/// Illinois-modified regula falsi (secant steps kept inside the bracket)
/// with a bisection fallback whenever the secant stalls. Converges to
/// `|g(r) - y| <= 1e-13·|y|` or until the bracket collapses to
/// adjacent floats.
pub fn invert_increasing<G>(g: G, y: f64, lo: f64, hi: f64) -> Result<f64>
where
    G: Fn(f64) -> Result<f64>,
{
    let tol = 1e-13 * y.abs();
    let (mut a, mut b) = (lo, hi);
    let mut ga = g(a)? - y;
    let mut gb = g(b)? - y;
    if ga.abs() <= tol {
        return Ok(a);
    }
    if gb.abs() <= tol {
        return Ok(b);
    }
    if ga > 0.0 || gb < 0.0 {
        return Err(Error::Bracket { target: y, lo: ga + y, hi: gb + y });
    }
    let mut side = 0i8;
    for it in 0..INVERT_MAX_ITER {
        let width = b - a;
        // every fourth iteration bisects to guarantee progress
        let mut c = if it % 4 == 3 { 0.5 * (a + b) } else { (a * gb - b * ga) / (gb - ga) };
        if !(c > a && c < b) {
            c = 0.5 * (a + b);
        }
        if c <= a || c >= b {
            // no float strictly between the endpoints
            return Ok(if ga.abs() < gb.abs() { a } else { b });
        }
        let gc = g(c)? - y;
        if gc.abs() <= tol {
            return Ok(c);
        }
        if gc < 0.0 {
            a = c;
            ga = gc;
            if side == -1 {
                gb *= 0.5;
            }
            side = -1;
        } else {
            b = c;
            gb = gc;
            if side == 1 {
                ga *= 0.5;
            }
            side = 1;
        }
        if b - a >= width {
            break;
        }
    }
    let mid = 0.5 * (a + b);
    if b - a <= 4.0 * f64::EPSILON * mid.abs().max(1.0) {
        return Ok(mid);
    }
    Err(Error::Numeric(format!(
        "inversion for target {y} did not converge within {INVERT_MAX_ITER} iterations"
    )))
}
