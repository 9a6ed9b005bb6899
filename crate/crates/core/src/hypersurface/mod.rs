//! Star-shaped hypersurfaces written as radial graphs `r = ρ(x)` over the
//! unit sphere, their pointwise curvature and the integrals built from it.

mod profile;
mod shapefile;
mod sphere;

pub use profile::{IdentityResiduals, Parity, ProfileGraph};
pub use shapefile::{AnyGraph, Representation, ShapeFile};
pub use sphere::{SphereGraph, DEFAULT_N_PHI, DEFAULT_N_THETA};

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::inequalities::WeightFunction;
use crate::quadrature;
use crate::spaceform::{unit_sphere_area, SpaceForm};
use crate::symfunc::{self, binomial, ConeMembership};

/// Smallest admissible radial value; the origin must be strictly enclosed.
pub const RHO_FLOOR: f64 = 1e-6;

/// Gauss–Legendre order for radial integrals `∫_0^ρ … ds`.
const RADIAL_ORDER: usize = 32;

pub type Values = SmallVec<[f64; 8]>;

/// Geometry at one grid node.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NodeGeometry {
    pub rho: f64,
    pub lambda: f64,
    pub dlambda: f64,
    pub phi: f64,
    /// support function `λ/v`
    pub u: f64,
    /// `√(1 + |∇ρ|²/λ²)`
    pub v: f64,
    /// principal curvatures, `n − 1` entries
    pub kappa: Values,
    /// `σ_0..σ_{n−1}`
    pub sigma: Values,
    /// `H_0..H_{n−1}`
    pub h: Values,
    /// squared components of `∇Φ` along the principal directions
    pub grad_phi: Values,
    /// `dμ` quadrature weight
    pub area_weight: f64,
    /// `dσ` quadrature weight on the unit sphere
    pub sphere_weight: f64,
}

impl NodeGeometry {
    /// Fill in the derived fields from curvatures and first-order data.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn assemble(
        n: usize,
        form: SpaceForm,
        rho: f64,
        v: f64,
        kappa: Values,
        grad_phi: Values,
        sphere_weight: f64,
    ) -> Self {
        let w = form.warp_unchecked(rho);
        let m = n - 1;
        let sigma: Values = symfunc::sigma_all(&kappa).into_iter().collect();
        let h: Values = sigma.iter().enumerate().map(|(k, s)| s / binomial(m, k)).collect();
        Self {
            rho,
            lambda: w.lambda,
            dlambda: w.dlambda,
            phi: w.phi,
            u: w.lambda / v,
            v,
            kappa,
            sigma,
            h,
            grad_phi,
            area_weight: w.lambda.powi(m as i32) * v * sphere_weight,
            sphere_weight,
        }
    }

    pub fn kappa_min(&self) -> f64 {
        self.kappa.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn kappa_max(&self) -> f64 {
        self.kappa.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `T_{k}^{ij} Φ_i Φ_j` through the deleted-curvature diagonal of `T_k`.
    pub fn newton_gradient_form(&self, k: usize) -> f64 {
        self.grad_phi
            .iter()
            .enumerate()
            .filter(|(_, g)| **g != 0.0)
            .map(|(i, g)| symfunc::deleted_sigma(&self.kappa, i, k) * g)
            .sum()
    }

    /// `|∇Φ|²`
    pub fn grad_phi_sq(&self) -> f64 {
        self.grad_phi.iter().sum()
    }
}

/// Per-node geometry of a discretized hypersurface.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PointwiseGeometry {
    pub n: usize,
    pub form: SpaceForm,
    pub nodes: Vec<NodeGeometry>,
}

/// Volume and the two weighted bulk integrals over the enclosed domain.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BulkIntegrals {
    pub volume: f64,
    /// `∫_Ω λ′ dv`
    pub dlambda: f64,
    /// `∫_Ω f(Φ) dv`
    pub weighted: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvexityReport {
    /// `min κ`
    pub strict_margin: f64,
    /// `min (κ_min − u/λ′)`
    pub static_margin: f64,
    /// `min (κ_min − 1)`
    pub h_convex_margin: f64,
    /// entry `k − 1` is membership of every node in `Γ_k⁺`, with the
    /// smallest `σ_j` over nodes as margin
    pub k_convex: Vec<ConeMembership>,
}

impl ConvexityReport {
    pub fn strictly_convex(&self) -> bool {
        self.strict_margin > 0.0
    }

    pub fn static_convex(&self) -> bool {
        self.static_margin > 0.0
    }

    pub fn h_convex(&self) -> bool {
        self.h_convex_margin >= 0.0
    }

    pub fn k_convex(&self, k: usize) -> bool {
        k >= 1 && self.k_convex.get(k - 1).is_some_and(|c| c.member)
    }
}

/// Two sphericity measures, both zero exactly on centered geodesic spheres.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Roundness {
    /// `max κ / min κ − 1`
    pub pinching: f64,
    /// `ρ_max − ρ_min`
    pub oscillation: f64,
}

/// `∫_0^ρ g(s) ds` by fixed-order Gauss–Legendre, smooth in `ρ`.
pub(crate) fn radial_integral<G: Fn(f64) -> f64>(g: G, rho: f64) -> f64 {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    let (nodes, weights) = RULE.get_or_init(|| quadrature::gauss_legendre_nodes(RADIAL_ORDER));
    let h = 0.5 * rho;
    nodes.iter().zip(weights).map(|(x, w)| w * g(h * (1.0 + x))).sum::<f64>() * h
}

fn check_order(k: usize, max: usize) -> Result<()> {
    if k > max {
        return Err(Error::OrderOutOfRange { order: k, max });
    }
    Ok(())
}

impl PointwiseGeometry {
    pub fn integrate<F: Fn(&NodeGeometry) -> f64>(&self, f: F) -> f64 {
        self.nodes.iter().map(|p| f(p) * p.area_weight).sum()
    }

    /// `∫_{S^{n-1}} g dσ`
    pub fn integrate_sphere<F: Fn(&NodeGeometry) -> f64>(&self, f: F) -> f64 {
        self.nodes.iter().map(|p| f(p) * p.sphere_weight).sum()
    }

    pub fn area(&self) -> f64 {
        self.integrate(|_| 1.0)
    }

    /// `∫_Σ H_k dμ`
    pub fn curvature_integral(&self, k: usize) -> Result<f64> {
        check_order(k, self.n - 1)?;
        Ok(self.integrate(|p| p.h[k]))
    }

    fn check_phi(&self) -> Result<()> {
        if let Some(p) = self.nodes.iter().find(|p| !(p.phi > 0.0)) {
            return Err(Error::Domain {
                what: "Phi",
                value: p.phi,
                domain: "(0, inf)".into(),
            });
        }
        Ok(())
    }

    /// `∫_Σ f(Φ) H_k dμ`
    pub fn weighted_curvature_integral(&self, k: usize, f: &WeightFunction) -> Result<f64> {
        check_order(k, self.n - 1)?;
        self.check_phi()?;
        let value = self.integrate(|p| f.value(p.phi) * p.h[k]);
        if !value.is_finite() {
            return Err(Error::Numeric(format!("weight {} produced a non-finite integral", f.id())));
        }
        Ok(value)
    }

    /// Enclosed volume `∫_{S^{n-1}} ∫_0^ρ λ^{n-1} ds dσ`.
    pub fn volume(&self) -> f64 {
        let form = self.form;
        let p = self.n as i32 - 1;
        self.integrate_sphere(|node| radial_integral(|s| form.lambda(s).powi(p), node.rho))
    }

    /// `W_0..W_up_to` through the recursion
    /// `W_{k+1} = ∫H_k/(n−1−k) + ε k/(n−1−k) W_{k−1}`.
    pub fn quermassintegrals(&self, up_to: usize) -> Result<Vec<f64>> {
        let n = self.n;
        check_order(up_to, n)?;
        let mut w = vec![self.volume()];
        if up_to >= 1 {
            w.push(self.area() / (n - 1) as f64);
        }
        let eps = self.form.eps();
        for k in 1..up_to.min(n - 1) {
            let denom = (n - 1 - k) as f64;
            let next = self.curvature_integral(k)? / denom + eps * k as f64 / denom * w[k - 1];
            w.push(next);
        }
        if up_to == n {
            w.push(unit_sphere_area(n) / n as f64);
        }
        Ok(w)
    }

    /// `(Vol, ∫_Ω λ′ dv, ∫_Ω f(Φ) dv)`; `λ′λ^{n−1}` integrates to `λ^n/n`.
    pub fn bulk_integrals(&self, f: &WeightFunction) -> Result<BulkIntegrals> {
        let form = self.form;
        let n = self.n as i32;
        let volume = self.volume();
        let dlambda = self.integrate_sphere(|p| p.lambda.powi(n) / n as f64);
        let weighted = self.integrate_sphere(|p| radial_integral(|s| f.value(form.phi(s)) * form.lambda(s).powi(n - 1), p.rho));
        if !weighted.is_finite() {
            return Err(Error::Numeric(format!("weight {} produced a non-finite bulk integral", f.id())));
        }
        Ok(BulkIntegrals { volume, dlambda, weighted })
    }

    pub fn convexity(&self) -> ConvexityReport {
        let m = self.n - 1;
        let mut strict = f64::INFINITY;
        let mut stat = f64::INFINITY;
        let mut hconv = f64::INFINITY;
        let mut cone = vec![f64::INFINITY; m];
        for p in &self.nodes {
            let kmin = p.kappa_min();
            strict = strict.min(kmin);
            hconv = hconv.min(kmin - 1.0);
            let s = if p.dlambda > 0.0 { kmin - p.u / p.dlambda } else { f64::NEG_INFINITY };
            stat = stat.min(s);
            let mut running = f64::INFINITY;
            for (j, c) in cone.iter_mut().enumerate() {
                running = running.min(p.sigma[j + 1]);
                *c = c.min(running);
            }
        }
        ConvexityReport {
            strict_margin: strict,
            static_margin: stat,
            h_convex_margin: hconv,
            k_convex: cone.into_iter().map(|margin| ConeMembership { member: margin > 0.0, margin }).collect(),
        }
    }

    /// Indices of nodes with `H_k ≤ 0`.
    pub fn cone_violations(&self, k: usize) -> Vec<usize> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, p)| !(p.h[k] > 0.0))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn roundness(&self) -> Roundness {
        let (mut kmin, mut kmax) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut rmin, mut rmax) = (f64::INFINITY, f64::NEG_INFINITY);
        for p in &self.nodes {
            kmin = kmin.min(p.kappa_min());
            kmax = kmax.max(p.kappa_max());
            rmin = rmin.min(p.rho);
            rmax = rmax.max(p.rho);
        }
        let pinching = if kmin > 0.0 { kmax / kmin - 1.0 } else { f64::INFINITY };
        Roundness { pinching, oscillation: rmax - rmin }
    }

    pub fn rho_range(&self) -> (f64, f64) {
        self.nodes
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.rho), b.max(p.rho)))
    }

    /// Relative defect of `∫ u H_k dμ = ∫ λ′ H_{k−1} dμ`.
    pub fn minkowski_residual(&self, k: usize) -> Result<f64> {
        if k == 0 {
            return Err(Error::OrderOutOfRange { order: k, max: self.n - 1 });
        }
        check_order(k, self.n - 1)?;
        let lhs = self.integrate(|p| p.u * p.h[k]);
        let rhs = self.integrate(|p| p.dlambda * p.h[k - 1]);
        let scale = self.integrate(|p| (p.dlambda * p.h[k - 1]).abs());
        Ok((lhs - rhs).abs() / scale)
    }

    /// Relative size of `∫ [(n−k)λ′σ_{k−1} − kσ_k u] dμ`, the integral of a
    /// divergence on a closed hypersurface.
    pub fn divergence_identity_residual(&self, k: usize) -> Result<f64> {
        if k == 0 {
            return Err(Error::OrderOutOfRange { order: k, max: self.n - 1 });
        }
        check_order(k, self.n - 1)?;
        let a = (self.n - k) as f64;
        let b = k as f64;
        let total = self.integrate(|p| a * p.dlambda * p.sigma[k - 1] - b * p.sigma[k] * p.u);
        let scale = self.integrate(|p| (a * p.dlambda * p.sigma[k - 1]).abs());
        Ok(total.abs() / scale)
    }

    /// `max |g|` over nodes.
    pub fn max_node<F: Fn(&NodeGeometry) -> f64>(&self, f: F) -> f64 {
        self.nodes.iter().map(|p| f(p).abs()).fold(0.0, f64::max)
    }
}

/// A discretized radial graph over the unit sphere.
pub trait Graph: Clone + Send + Sync + std::fmt::Debug {
    fn form(&self) -> SpaceForm;

    /// Ambient dimension `n`.
    fn dim(&self) -> usize;

    fn rho(&self) -> &[f64];

    /// Same grid with new radial values, validated.
    fn with_rho(&self, rho: Vec<f64>) -> Result<Self>;

    fn geometry(&self) -> Result<PointwiseGeometry>;

    /// Smallest geodesic node spacing on the unit sphere.
    fn grid_spacing(&self) -> f64;

    /// Restore discrete pole consistency after an update.
    fn enforce_regularity(&mut self);

    fn representation(&self) -> Representation;

    fn to_shape_file(&self, metadata: serde_json::Value) -> ShapeFile;
}

/// Shared radial-value validation.
pub(crate) fn validate_rho(form: SpaceForm, rho: &[f64]) -> Result<()> {
    for &r in rho {
        if !r.is_finite() {
            return Err(Error::Numeric(format!("non-finite radial value {r}")));
        }
        if r < RHO_FLOOR {
            return Err(Error::Domain {
                what: "rho",
                value: r,
                domain: format!("[{RHO_FLOOR}, ...)"),
            });
        }
        form.check_radius(r)?;
    }
    Ok(())
}
