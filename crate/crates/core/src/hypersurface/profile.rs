//! Rotationally symmetric graphs `r = ρ(θ)` on a uniform polar grid.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use smallvec::smallvec;

use super::{validate_rho, Graph, NodeGeometry, PointwiseGeometry, Representation, ShapeFile, Values};
use crate::error::{Error, Result};
use crate::quadrature::polar_weights;
use crate::spaceform::{unit_sphere_area, SpaceForm};
use crate::symfunc::binomial;

/// Behaviour of a grid function under reflection through a pole.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Parity {
    Even,
    Odd,
}

/// Value at virtual index `j`, continued across both poles by reflection.
#[inline]
fn reflected(values: &[f64], j: isize, parity: Parity) -> f64 {
    let n = values.len() as isize - 1;
    let (idx, flipped) = if j < 0 {
        (-j, true)
    } else if j > n {
        (2 * n - j, true)
    } else {
        (j, false)
    };
    let v = values[idx as usize];
    if flipped && parity == Parity::Odd {
        -v
    } else {
        v
    }
}

/// Fourth-order central first derivative.
pub fn d1(values: &[f64], h: f64, parity: Parity) -> Vec<f64> {
    let n = values.len() as isize;
    (0..n)
        .map(|i| {
            let a = reflected(values, i + 1, parity) - reflected(values, i - 1, parity);
            let b = reflected(values, i + 2, parity) - reflected(values, i - 2, parity);
            (8.0 * a - b) / (12.0 * h)
        })
        .collect()
}

/// Fourth-order central second derivative; exactly zero on constants.
pub fn d2(values: &[f64], h: f64, parity: Parity) -> Vec<f64> {
    let n = values.len() as isize;
    (0..n)
        .map(|i| {
            let a = reflected(values, i + 1, parity) + reflected(values, i - 1, parity);
            let b = reflected(values, i + 2, parity) + reflected(values, i - 2, parity);
            (16.0 * a - b - 30.0 * values[i as usize]) / (12.0 * h * h)
        })
        .collect()
}

const MIN_INTERVALS: usize = 4;

/// Hypersurface `{(ρ(θ), θ, ω) : ω ∈ S^{n−2}}` sampled at `θ_i = iπ/N`.
#[derive(Clone, Debug)]
pub struct ProfileGraph {
    n: usize,
    form: SpaceForm,
    rho: Vec<f64>,
    /// `dσ` weights on `S^{n−1}` for each latitude
    weights: Arc<Vec<f64>>,
}

/// Maximum-norm residuals of the pointwise hypersurface identities, each
/// relative to the size of its right-hand side.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityResiduals {
    /// `∇²Φ = λ′ g − u h`
    pub hessian: f64,
    /// `∇u = h(∇Φ)`
    pub gradient: f64,
    /// `div(T_{k−1} ∇Φ) = (n−k) λ′ σ_{k−1} − k σ_k u`
    pub divergence: f64,
}

fn relative(diff: f64, scale: f64) -> f64 {
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

impl ProfileGraph {
    pub fn new(n: usize, form: SpaceForm, rho: Vec<f64>) -> Result<Self> {
        if n < 3 {
            return Err(Error::invalid(format!("ambient dimension must be >= 3, got {n}")));
        }
        if rho.len() < MIN_INTERVALS + 1 {
            return Err(Error::invalid(format!("profile grid needs at least {} nodes, got {}", MIN_INTERVALS + 1, rho.len())));
        }
        validate_rho(form, &rho)?;
        let intervals = rho.len() - 1;
        let scale = unit_sphere_area(n - 1);
        let weights = polar_weights(intervals, n - 2).into_iter().map(|w| w * scale).collect();
        Ok(Self { n, form, rho, weights: Arc::new(weights) })
    }

    pub fn from_fn<F: Fn(f64) -> f64>(n: usize, form: SpaceForm, intervals: usize, f: F) -> Result<Self> {
        let rho = (0..=intervals).map(|i| f(PI * i as f64 / intervals as f64)).collect();
        Self::new(n, form, rho)
    }

    /// Geodesic sphere of radius `r` about the origin.
    pub fn sphere(n: usize, form: SpaceForm, intervals: usize, r: f64) -> Result<Self> {
        Self::from_fn(n, form, intervals, |_| r)
    }

    /// Geodesic sphere of radius `radius` centered at distance `offset` from
    /// the origin on the polar axis.
    pub fn off_center_sphere(n: usize, form: SpaceForm, intervals: usize, radius: f64, offset: f64) -> Result<Self> {
        if !(offset >= 0.0 && offset < radius) {
            return Err(Error::invalid(format!("offset {offset} must lie in [0, radius = {radius})")));
        }
        if form == SpaceForm::Spherical && radius + offset >= PI / 2.0 {
            return Err(Error::invalid("off-center sphere must stay inside the open hemisphere"));
        }
        Self::from_fn(n, form, intervals, |theta| off_center_radius(form, radius, offset, theta))
    }

    pub fn intervals(&self) -> usize {
        self.rho.len() - 1
    }

    pub fn theta(&self, i: usize) -> f64 {
        PI * i as f64 / self.intervals() as f64
    }

    fn step(&self) -> f64 {
        PI / self.intervals() as f64
    }

    /// `(ρ′, ρ″)` at every node.
    pub fn derivatives(&self) -> (Vec<f64>, Vec<f64>) {
        let h = self.step();
        (d1(&self.rho, h, Parity::Even), d2(&self.rho, h, Parity::Even))
    }

    /// Meridian and azimuthal principal curvatures and `v` at node `i`.
    fn curvatures(&self, i: usize, p: f64, q: f64) -> (f64, f64, f64) {
        let r = self.rho[i];
        let lam = self.form.lambda(r);
        let dlam = self.form.dlambda(r);
        let v = (1.0 + p * p / (lam * lam)).sqrt();
        let k_mer = (lam * dlam + 2.0 * dlam * p * p / lam - q) / (v * v * v * lam * lam);
        // cot θ ρ′ → ρ″ at the poles
        let cot_term = if i == 0 || i == self.intervals() { q } else { p / self.theta(i).tan() };
        let k_az = (lam * dlam - cot_term) / (v * lam * lam);
        (k_mer, k_az, v)
    }

    /// Discrete residuals of the Hessian, gradient and divergence identities
    /// over interior nodes, with the divergence identity at order `k`.
    pub fn identity_residuals(&self, k: usize) -> Result<IdentityResiduals> {
        let n = self.n;
        if k == 0 || k > n - 1 {
            return Err(Error::OrderOutOfRange { order: k, max: n - 1 });
        }
        let geo = self.geometry()?;
        let h = self.step();
        let nn = self.intervals();
        let (rp, _) = self.derivatives();
        let form = self.form;

        let phi: Vec<f64> = geo.nodes.iter().map(|p| p.phi).collect();
        let metric: Vec<f64> = geo.nodes.iter().zip(&rp).map(|(p, d)| p.lambda * p.lambda + d * d).collect();
        let u: Vec<f64> = geo.nodes.iter().map(|p| p.u).collect();
        let dphi = d1(&phi, h, Parity::Even);
        let ddphi = d2(&phi, h, Parity::Even);
        let dmetric = d1(&metric, h, Parity::Even);
        let du = d1(&u, h, Parity::Even);

        // Φ_θ = λ ρ′; the azimuthal entry of T_{k−1} only sees κ_az
        let t_mer = |p: &NodeGeometry| binomial(n - 2, k - 1) * p.kappa[n - 2].powi(k as i32 - 1);
        let field: Vec<f64> = geo
            .nodes
            .iter()
            .zip(&rp)
            .zip(&metric)
            .map(|((p, d), a)| t_mer(p) * p.lambda * d / a)
            .collect();
        let dfield = d1(&field, h, Parity::Odd);

        let (mut hess, mut hess_scale) = (0.0f64, 0.0f64);
        let (mut grad, mut grad_scale) = (0.0f64, 0.0f64);
        let (mut div, mut div_scale) = (0.0f64, 0.0f64);
        for i in 1..nn {
            let p = &geo.nodes[i];
            let a = metric[i];
            let warp_log = form.dlambda(p.rho) * rp[i] / p.lambda + 1.0 / self.theta(i).tan();
            let (k_mer, k_az) = (p.kappa[0], p.kappa[n - 2]);

            let mer = (ddphi[i] - dmetric[i] / (2.0 * a) * dphi[i]) / a;
            let az = warp_log * dphi[i] / a;
            hess = hess.max((mer - (p.dlambda - p.u * k_mer)).abs()).max((az - (p.dlambda - p.u * k_az)).abs());
            hess_scale = hess_scale.max(p.dlambda.abs());

            let rhs = k_mer * p.lambda * rp[i];
            grad = grad.max((du[i] - rhs).abs());
            grad_scale = grad_scale.max(rhs.abs());

            let lhs = dfield[i] + (dmetric[i] / (2.0 * a) + (n - 2) as f64 * warp_log) * field[i];
            let source = (n - k) as f64 * p.dlambda * p.sigma[k - 1];
            let rhs = source - k as f64 * p.sigma[k] * p.u;
            div = div.max((lhs - rhs).abs());
            div_scale = div_scale.max(source.abs());
        }
        Ok(IdentityResiduals {
            hessian: relative(hess, hess_scale),
            gradient: relative(grad, grad_scale),
            divergence: relative(div, div_scale),
        })
    }
}

/// Radial function of an off-center geodesic sphere, from the law of
/// cosines of the space form.
pub fn off_center_radius(form: SpaceForm, radius: f64, offset: f64, theta: f64) -> f64 {
    match form {
        SpaceForm::Euclidean => {
            let s = offset * theta.sin();
            offset * theta.cos() + (radius * radius - s * s).sqrt()
        }
        SpaceForm::Hyperbolic => {
            // cosh d cosh r − sinh d sinh r cos θ = cosh R
            let a = offset.cosh();
            let b = offset.sinh() * theta.cos();
            let psi = (b / a).atanh();
            psi + (radius.cosh() / (a * a - b * b).sqrt()).acosh()
        }
        SpaceForm::Spherical => {
            // cos d cos r + sin d sin r cos θ = cos R
            let a = offset.cos();
            let b = offset.sin() * theta.cos();
            let psi = b.atan2(a);
            psi + (radius.cos() / (a * a + b * b).sqrt()).acos()
        }
    }
}

impl Graph for ProfileGraph {
    fn form(&self) -> SpaceForm {
        self.form
    }

    fn dim(&self) -> usize {
        self.n
    }

    fn rho(&self) -> &[f64] {
        &self.rho
    }

    fn with_rho(&self, rho: Vec<f64>) -> Result<Self> {
        if rho.len() != self.rho.len() {
            return Err(Error::invalid(format!("expected {} radial values, got {}", self.rho.len(), rho.len())));
        }
        validate_rho(self.form, &rho)?;
        Ok(Self { rho, ..self.clone() })
    }

    fn geometry(&self) -> Result<PointwiseGeometry> {
        let (rp, rpp) = self.derivatives();
        let n = self.n;
        let mut nodes = Vec::with_capacity(self.rho.len());
        for i in 0..self.rho.len() {
            let (p, q) = (rp[i], rpp[i]);
            if !(p.is_finite() && q.is_finite()) {
                return Err(Error::Numeric(format!("non-finite radial derivative at node {i}")));
            }
            let (k_mer, k_az, v) = self.curvatures(i, p, q);
            let mut kappa: Values = smallvec![k_mer];
            kappa.extend(std::iter::repeat_n(k_az, n - 2));
            let lam = self.form.lambda(self.rho[i]);
            let mut grad_phi: Values = smallvec![lam * lam * p * p / (lam * lam + p * p)];
            grad_phi.extend(std::iter::repeat_n(0.0, n - 2));
            nodes.push(NodeGeometry::assemble(n, self.form, self.rho[i], v, kappa, grad_phi, self.weights[i]));
        }
        Ok(PointwiseGeometry { n, form: self.form, nodes })
    }

    fn grid_spacing(&self) -> f64 {
        self.step()
    }

    fn enforce_regularity(&mut self) {}

    fn representation(&self) -> Representation {
        Representation::Profile
    }

    fn to_shape_file(&self, metadata: serde_json::Value) -> ShapeFile {
        ShapeFile {
            epsilon: self.form.epsilon(),
            n: self.n,
            representation: Representation::Profile,
            resolution: self.intervals(),
            n_phi: None,
            rho: self.rho.clone(),
            metadata,
        }
    }
}
