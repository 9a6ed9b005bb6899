//! Graphs `r = ρ(θ, φ)` over `S²` on a latitude–longitude grid (`n = 3`).

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{Matrix2, SymmetricEigen, Vector2};
use smallvec::smallvec;

use super::{validate_rho, Graph, NodeGeometry, PointwiseGeometry, Representation, ShapeFile};
use crate::error::{Error, Result};
use crate::quadrature::polar_weights;
use crate::spaceform::SpaceForm;

pub const DEFAULT_N_THETA: usize = 256;
pub const DEFAULT_N_PHI: usize = 64;

/// Grid `θ_i = iπ/N_θ` (`i = 0..=N_θ`), `φ_j = 2πj/N_φ`, row-major in `i`.
#[derive(Clone, Debug)]
pub struct SphereGraph {
    form: SpaceForm,
    n_theta: usize,
    n_phi: usize,
    rho: Vec<f64>,
    /// latitude weights of `∫ … sin θ dθ`
    weights: Arc<Vec<f64>>,
}

/// Gradient and covariant Hessian of `ρ` in the orthonormal frame
/// `(∂_θ, ∂_φ / sin θ)` of the round metric, or in normal coordinates at a
/// pole.
#[derive(Clone, Copy, Debug)]
struct Jet {
    grad: Vector2<f64>,
    hess: Matrix2<f64>,
}

impl SphereGraph {
    pub fn new(form: SpaceForm, n_theta: usize, n_phi: usize, mut rho: Vec<f64>) -> Result<Self> {
        if n_theta < 4 {
            return Err(Error::invalid(format!("need at least 4 latitude intervals, got {n_theta}")));
        }
        if n_phi < 8 || !n_phi.is_multiple_of(2) {
            return Err(Error::invalid(format!("longitude count must be even and >= 8, got {n_phi}")));
        }
        if rho.len() != (n_theta + 1) * n_phi {
            return Err(Error::invalid(format!("expected {} radial values, got {}", (n_theta + 1) * n_phi, rho.len())));
        }
        validate_rho(form, &rho)?;
        synchronize_poles(&mut rho, n_theta, n_phi);
        let weights = polar_weights(n_theta, 1);
        Ok(Self { form, n_theta, n_phi, rho, weights: Arc::new(weights) })
    }

    pub fn from_fn<F: Fn(f64, f64) -> f64>(form: SpaceForm, n_theta: usize, n_phi: usize, f: F) -> Result<Self> {
        let mut rho = Vec::with_capacity((n_theta + 1) * n_phi);
        for i in 0..=n_theta {
            let theta = PI * i as f64 / n_theta as f64;
            for j in 0..n_phi {
                rho.push(f(theta, 2.0 * PI * j as f64 / n_phi as f64));
            }
        }
        Self::new(form, n_theta, n_phi, rho)
    }

    pub fn sphere(form: SpaceForm, n_theta: usize, n_phi: usize, r: f64) -> Result<Self> {
        Self::from_fn(form, n_theta, n_phi, |_, _| r)
    }

    pub fn n_theta(&self) -> usize {
        self.n_theta
    }

    pub fn n_phi(&self) -> usize {
        self.n_phi
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.rho[i * self.n_phi + j % self.n_phi]
    }

    fn h_theta(&self) -> f64 {
        PI / self.n_theta as f64
    }

    fn h_phi(&self) -> f64 {
        2.0 * PI / self.n_phi as f64
    }

    /// Second-order differences on an interior row.
    fn interior_jet(&self, i: usize, j: usize) -> Jet {
        let (ht, hp) = (self.h_theta(), self.h_phi());
        let np = self.n_phi;
        let (jm, jp) = ((j + np - 1) % np, (j + 1) % np);
        let c = self.at(i, j);
        let r_t = (self.at(i + 1, j) - self.at(i - 1, j)) / (2.0 * ht);
        let r_tt = (self.at(i + 1, j) - 2.0 * c + self.at(i - 1, j)) / (ht * ht);
        let r_p = (self.at(i, jp) - self.at(i, jm)) / (2.0 * hp);
        let r_pp = (self.at(i, jp) - 2.0 * c + self.at(i, jm)) / (hp * hp);
        let r_tp = (self.at(i + 1, jp) - self.at(i + 1, jm) - self.at(i - 1, jp) + self.at(i - 1, jm)) / (4.0 * ht * hp);
        let theta = ht * i as f64;
        let (s, cot) = (theta.sin(), 1.0 / theta.tan());
        let h12 = (r_tp - cot * r_p) / s;
        Jet {
            grad: Vector2::new(r_t, r_p / s),
            hess: Matrix2::new(r_tt, h12, h12, r_pp / (s * s) + cot * r_t),
        }
    }

    /// Local quadratic fit at a pole from the adjacent ring, in normal
    /// coordinates `(s cos φ, s sin φ)` with `s` the distance to the pole.
    fn pole_jet(&self, pole_row: usize, ring_row: usize) -> Jet {
        let np = self.n_phi;
        let half = np / 2;
        let s = self.h_theta();
        let r0 = self.at(pole_row, 0);
        let (mut a, mut b, mut c0, mut c2, mut s2) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for j in 0..np {
            let phi = 2.0 * PI * j as f64 / np as f64;
            let (x, y) = (self.at(ring_row, j), self.at(ring_row, j + half));
            let odd = (x - y) / (2.0 * s);
            let even = (x - 2.0 * r0 + y) / (s * s);
            a += odd * phi.cos();
            b += odd * phi.sin();
            c0 += even;
            c2 += even * (2.0 * phi).cos();
            s2 += even * (2.0 * phi).sin();
        }
        let npf = np as f64;
        let (a, b) = (2.0 * a / npf, 2.0 * b / npf);
        let (c0, c2, s2) = (c0 / npf, 2.0 * c2 / npf, 2.0 * s2 / npf);
        Jet {
            grad: Vector2::new(a, b),
            hess: Matrix2::new(c0 + c2, s2, s2, c0 - c2),
        }
    }

    fn node(&self, jet: Jet, rho: f64, sphere_weight: f64) -> Result<NodeGeometry> {
        let form = self.form;
        let lam = form.lambda(rho);
        let dlam = form.dlambda(rho);
        let g_vec = jet.grad;
        let v = (1.0 + g_vec.norm_squared() / (lam * lam)).sqrt();
        let outer = g_vec * g_vec.transpose();
        let metric = Matrix2::identity() * (lam * lam) + outer;
        let second = (-jet.hess + outer * (2.0 * dlam / lam) + Matrix2::identity() * (lam * dlam)) / v;
        let chol = metric
            .cholesky()
            .ok_or_else(|| Error::Numeric("induced metric is not positive definite".into()))?;
        let linv = chol
            .l()
            .try_inverse()
            .ok_or_else(|| Error::Numeric("singular metric factor".into()))?;
        let shape = linv * second * linv.transpose();
        let shape = (shape + shape.transpose()) * 0.5;
        let eig = SymmetricEigen::new(shape);
        let order = if eig.eigenvalues[0] <= eig.eigenvalues[1] { [0, 1] } else { [1, 0] };
        let covector = linv * (g_vec * lam);
        let kappa = smallvec![eig.eigenvalues[order[0]], eig.eigenvalues[order[1]]];
        let grad_phi = smallvec![
            eig.eigenvectors.column(order[0]).dot(&covector).powi(2),
            eig.eigenvectors.column(order[1]).dot(&covector).powi(2),
        ];
        if !(v.is_finite() && eig.eigenvalues.iter().all(|x| x.is_finite())) {
            return Err(Error::Numeric("non-finite curvature on sphere grid".into()));
        }
        Ok(NodeGeometry::assemble(3, form, rho, v, kappa, grad_phi, sphere_weight))
    }
}

/// Replace each pole row by its mean.
fn synchronize_poles(rho: &mut [f64], n_theta: usize, n_phi: usize) {
    for row in [0, n_theta] {
        let slice = &mut rho[row * n_phi..(row + 1) * n_phi];
        let mean = slice.iter().sum::<f64>() / n_phi as f64;
        slice.fill(mean);
    }
}

impl Graph for SphereGraph {
    fn form(&self) -> SpaceForm {
        self.form
    }

    fn dim(&self) -> usize {
        3
    }

    fn rho(&self) -> &[f64] {
        &self.rho
    }

    fn with_rho(&self, rho: Vec<f64>) -> Result<Self> {
        Self::new(self.form, self.n_theta, self.n_phi, rho)
    }

    fn geometry(&self) -> Result<PointwiseGeometry> {
        let (nt, np) = (self.n_theta, self.n_phi);
        let hp = self.h_phi();
        let mut nodes = Vec::with_capacity(self.rho.len());
        let north = self.node(self.pole_jet(0, 1), self.at(0, 0), self.weights[0] * hp)?;
        let south = self.node(self.pole_jet(nt, nt - 1), self.at(nt, 0), self.weights[nt] * hp)?;
        nodes.extend(std::iter::repeat_n(north, np));
        for i in 1..nt {
            for j in 0..np {
                nodes.push(self.node(self.interior_jet(i, j), self.at(i, j), self.weights[i] * hp)?);
            }
        }
        nodes.extend(std::iter::repeat_n(south, np));
        Ok(PointwiseGeometry { n: 3, form: self.form, nodes })
    }

    fn grid_spacing(&self) -> f64 {
        self.h_theta().min(self.h_theta().sin() * self.h_phi())
    }

    fn enforce_regularity(&mut self) {
        synchronize_poles(&mut self.rho, self.n_theta, self.n_phi);
    }

    fn representation(&self) -> Representation {
        Representation::Sphere
    }

    fn to_shape_file(&self, metadata: serde_json::Value) -> ShapeFile {
        ShapeFile {
            epsilon: self.form.epsilon(),
            n: 3,
            representation: Representation::Sphere,
            resolution: self.n_theta,
            n_phi: Some(self.n_phi),
            rho: self.rho.clone(),
            metadata,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pole_fit_recovers_quadratic() {
        // ρ = 1 + 0.1 z + 0.05 (x² − y²) + 0.02 xy near the north pole, in
        // unit-sphere coordinates x = sinθ cosφ etc.
        let g = SphereGraph::from_fn(SpaceForm::Euclidean, 64, 16, |t, p| {
            let (x, y, z) = (t.sin() * p.cos(), t.sin() * p.sin(), t.cos());
            1.0 + 0.1 * z + 0.03 * x + 0.05 * (x * x - y * y) + 0.02 * x * y
        })
        .unwrap();
        let jet = g.pole_jet(0, 1);
        assert!((jet.grad[0] - 0.03).abs() < 1e-3);
        assert!(jet.grad[1].abs() < 1e-3);
        // covariant Hessian of z is −z·I; of the quadratic terms 2·coefficients
        assert!((jet.hess[(0, 0)] - (-0.1 + 0.1)).abs() < 5e-3, "{}", jet.hess);
        assert!((jet.hess[(1, 1)] - (-0.1 - 0.1)).abs() < 5e-3);
        assert!((jet.hess[(0, 1)] - 0.02).abs() < 5e-3);
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(SphereGraph::sphere(SpaceForm::Euclidean, 16, 6, 1.0).is_err());
        assert!(SphereGraph::sphere(SpaceForm::Euclidean, 16, 9, 1.0).is_err());
        assert!(SphereGraph::sphere(SpaceForm::Euclidean, 3, 8, 1.0).is_err());
        assert!(SphereGraph::new(SpaceForm::Euclidean, 4, 8, vec![1.0; 10]).is_err());
    }

    #[test]
    fn poles_are_synchronized() {
        let g = SphereGraph::from_fn(SpaceForm::Hyperbolic, 8, 8, |_, p| 1.0 + 0.01 * p).unwrap();
        let first = g.rho()[0];
        assert!(g.rho()[..8].iter().all(|x| *x == first));
    }
}
