//! Both sides of the weighted curvature inequalities on a discretized shape.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::weight::{admissibility, WeightCondition, WeightFunction};
use crate::error::{Error, Result};
use crate::flow::working_range;
use crate::hypersurface::{Graph, PointwiseGeometry};
use crate::spaceform::{BallFunctions, Comparison, SpaceForm};

/// The implemented inequalities, each with one comparison quantity on the
/// right-hand side.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Inequality {
    /// `∫ f(Φ) H_k ≥ χ_k(f_l⁻¹(W_l))`
    WeightedQuermass,
    /// `∫ f(Φ) H_k ≥ χ_k(h⁻¹(∫_Ω λ′))`
    WeightedQuermassVolume,
    /// `∫ Φ^α H_k ≥ χ_k(f_l⁻¹(W_l))` with `α ≥ k/(k−1)`
    PowerQuermass,
    /// `∫ Φ^α H_k ≥ χ_k(h⁻¹(∫_Ω λ′))`
    PowerQuermassVolume,
    /// `∫ f(Φ) H_1 − ∫_Ω f(Φ) ≥ χ(ξ⁻¹(|Σ|))` in `ℍⁿ`
    HyperbolicMinkowskiArea,
    /// `∫ f(Φ) H_1 − ∫_Ω f(Φ) ≥ χ(h⁻¹(∫_Ω λ′))` in `ℍⁿ`
    HyperbolicMinkowskiVolume,
    /// `∫ f(Φ) H_1 + ∫_Ω f(Φ) ≥ χ(h⁻¹(∫_Ω λ′))` in `𝕊ⁿ`
    SphericalMinkowski,
    /// `∫_Ω λ′ ≥ h(f_0⁻¹(Vol))` for star-shaped domains
    VolumeComparison,
}

impl Inequality {
    pub fn id(self) -> &'static str {
        match self {
            Inequality::WeightedQuermass => "weighted-quermass",
            Inequality::WeightedQuermassVolume => "weighted-quermass-volume",
            Inequality::PowerQuermass => "power-quermass",
            Inequality::PowerQuermassVolume => "power-quermass-volume",
            Inequality::HyperbolicMinkowskiArea => "hyperbolic-minkowski-area",
            Inequality::HyperbolicMinkowskiVolume => "hyperbolic-minkowski-volume",
            Inequality::SphericalMinkowski => "spherical-minkowski",
            Inequality::VolumeComparison => "volume-comparison",
        }
    }
}

impl fmt::Display for Inequality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GapTolerances {
    /// a gap passes when `gap ≥ −gap·|LHS|`
    pub gap: f64,
    /// a centered sphere must give `|gap| ≤ equality·|LHS|`
    pub equality: f64,
    /// radial oscillation below which a shape counts as a centered sphere
    pub sphere_oscillation: f64,
}

impl Default for GapTolerances {
    fn default() -> Self {
        Self { gap: 1e-6, equality: 1e-8, sphere_oscillation: 1e-12 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub inequality: Inequality,
    pub shape: String,
    pub k: usize,
    pub l: Option<usize>,
    pub weight: Option<String>,
    pub lhs: f64,
    pub rhs: f64,
    /// `lhs − rhs`
    pub gap: f64,
    /// `gap / |lhs|`
    pub relative_gap: f64,
    /// the shape is a centered geodesic sphere
    pub equality_case: bool,
    pub passed: bool,
}

impl GapReport {
    #[allow(clippy::too_many_arguments)]
    fn new(
        inequality: Inequality,
        geo: &PointwiseGeometry,
        k: usize,
        l: Option<usize>,
        weight: Option<&WeightFunction>,
        lhs: f64,
        rhs: f64,
        tol: &GapTolerances,
    ) -> Self {
        let gap = lhs - rhs;
        let relative_gap = gap / lhs.abs();
        let (lo, hi) = geo.rho_range();
        let equality_case = hi - lo <= tol.sphere_oscillation * hi;
        let passed = if equality_case { relative_gap.abs() <= tol.equality } else { relative_gap >= -tol.gap };
        Self {
            inequality,
            shape: String::new(),
            k,
            l,
            weight: weight.map(|f| f.id().to_string()),
            lhs,
            rhs,
            gap,
            relative_gap,
            equality_case,
            passed,
        }
    }

    pub fn with_shape(mut self, label: &str) -> Self {
        self.shape = label.to_string();
        self
    }
}

/// Evaluation context shared by the verifiers.
struct Shape {
    geo: PointwiseGeometry,
    balls: BallFunctions,
}

impl Shape {
    fn new<G: Graph>(g: &G) -> Result<Self> {
        Ok(Self { geo: g.geometry()?, balls: BallFunctions::new(g.dim(), g.form())? })
    }

    fn require_form(&self, allowed: &[SpaceForm], what: &str) -> Result<()> {
        if !allowed.contains(&self.geo.form) {
            return Err(Error::Hypothesis(format!("{what} is not stated in {}", self.geo.form)));
        }
        Ok(())
    }

    fn require_static_convex(&self) -> Result<()> {
        let margin = self.geo.convexity().static_margin;
        if !(margin > 0.0) {
            return Err(Error::Hypothesis(format!("shape is not static convex (margin {margin:.3e})")));
        }
        Ok(())
    }

    fn require_strictly_convex(&self) -> Result<()> {
        let margin = self.geo.convexity().strict_margin;
        if !(margin > 0.0) {
            return Err(Error::Hypothesis(format!("shape is not strictly convex (margin {margin:.3e})")));
        }
        Ok(())
    }

    fn require_weight(&self, f: &WeightFunction, cond: WeightCondition) -> Result<()> {
        let report = admissibility(f, cond, working_range(&self.geo))?;
        if !report.admissible {
            return Err(Error::Hypothesis(format!(
                "weight {} is not admissible ({cond}) on [{:.4e}, {:.4e}]",
                f.id(),
                report.range.0,
                report.range.1
            )));
        }
        Ok(())
    }

    fn dlambda_volume(&self) -> Result<f64> {
        Ok(self.geo.bulk_integrals(&WeightFunction::constant())?.dlambda)
    }
}

/// Weighted quermassintegral inequality of order `k` against `W_l` (report
/// A) and against `∫_Ω λ′` (report B). Requires `ℍⁿ` (or `ℝⁿ` as a sanity
/// form), static convexity, `2 ≤ k ≤ n−1`, `l ≤ k` and an admissible weight.
pub fn verify_weighted_quermass<G: Graph>(
    g: &G,
    k: usize,
    l: usize,
    f: &WeightFunction,
    tol: &GapTolerances,
) -> Result<[GapReport; 2]> {
    weighted_quermass(g, k, l, f, tol, [Inequality::WeightedQuermass, Inequality::WeightedQuermassVolume])
}

fn weighted_quermass<G: Graph>(
    g: &G,
    k: usize,
    l: usize,
    f: &WeightFunction,
    tol: &GapTolerances,
    ids: [Inequality; 2],
) -> Result<[GapReport; 2]> {
    let n = g.dim();
    if k < 2 || k > n - 1 {
        return Err(Error::OrderOutOfRange { order: k, max: n - 1 });
    }
    if l > k {
        return Err(Error::OrderOutOfRange { order: l, max: k });
    }
    let shape = Shape::new(g)?;
    shape.require_form(&[SpaceForm::Hyperbolic, SpaceForm::Euclidean], "the weighted quermassintegral inequality")?;
    match shape.geo.form {
        SpaceForm::Hyperbolic => shape.require_static_convex()?,
        _ => shape.require_strictly_convex()?,
    }
    shape.require_weight(f, WeightCondition::HigherOrder { k })?;
    let lhs = shape.geo.weighted_curvature_integral(k, f)?;
    let w_l = shape.geo.quermassintegrals(l)?[l];
    let r_a = shape.balls.invert(Comparison::Quermass(l), w_l)?;
    let r_b = shape.balls.invert(Comparison::WeightedVolume, shape.dlambda_volume()?)?;
    let a = GapReport::new(ids[0], &shape.geo, k, Some(l), Some(f), lhs, shape.balls.chi_k(k, f, r_a)?, tol);
    let b = GapReport::new(ids[1], &shape.geo, k, None, Some(f), lhs, shape.balls.chi_k(k, f, r_b)?, tol);
    Ok([a, b])
}

/// The power-weight case `f(s) = s^α`, `α ≥ k/(k−1)`.
pub fn verify_power_weight<G: Graph>(g: &G, k: usize, l: usize, alpha: f64, tol: &GapTolerances) -> Result<[GapReport; 2]> {
    if k < 2 {
        return Err(Error::OrderOutOfRange { order: k, max: g.dim() - 1 });
    }
    let threshold = k as f64 / (k as f64 - 1.0);
    if !(alpha >= threshold) {
        return Err(Error::Hypothesis(format!("exponent {alpha} is below k/(k-1) = {threshold}")));
    }
    let f = WeightFunction::power(alpha);
    weighted_quermass(g, k, l, &f, tol, [Inequality::PowerQuermass, Inequality::PowerQuermassVolume])
}

/// Weighted Minkowski inequality in `ℍⁿ` against the area (report A) and
/// `∫_Ω λ′` (report B). Requires static convexity and `(f(s)/s)′ ≥ 0`.
pub fn verify_hyperbolic_minkowski<G: Graph>(g: &G, f: &WeightFunction, tol: &GapTolerances) -> Result<[GapReport; 2]> {
    let shape = Shape::new(g)?;
    shape.require_form(&[SpaceForm::Hyperbolic], "the hyperbolic weighted Minkowski inequality")?;
    shape.require_static_convex()?;
    shape.require_weight(f, WeightCondition::MeanHyperbolic)?;
    let bulk = shape.geo.bulk_integrals(f)?;
    let lhs = shape.geo.weighted_curvature_integral(1, f)? - bulk.weighted;
    let r_a = shape.balls.invert(Comparison::Area, shape.geo.area())?;
    let r_b = shape.balls.invert(Comparison::WeightedVolume, bulk.dlambda)?;
    Ok([
        GapReport::new(Inequality::HyperbolicMinkowskiArea, &shape.geo, 1, None, Some(f), lhs, shape.balls.chi_minkowski(f, r_a)?, tol),
        GapReport::new(Inequality::HyperbolicMinkowskiVolume, &shape.geo, 1, None, Some(f), lhs, shape.balls.chi_minkowski(f, r_b)?, tol),
    ])
}

/// Weighted Minkowski inequality in `𝕊ⁿ`. Requires strict convexity inside
/// the open hemisphere and a positive, non-decreasing, convex weight.
pub fn verify_spherical_minkowski<G: Graph>(g: &G, f: &WeightFunction, tol: &GapTolerances) -> Result<GapReport> {
    let shape = Shape::new(g)?;
    shape.require_form(&[SpaceForm::Spherical], "the spherical weighted Minkowski inequality")?;
    shape.require_strictly_convex()?;
    let (_, rho_max) = shape.geo.rho_range();
    if !(rho_max < std::f64::consts::FRAC_PI_2) {
        return Err(Error::Hypothesis(format!("shape leaves the hemisphere (max radius {rho_max})")));
    }
    shape.require_weight(f, WeightCondition::MeanSpherical)?;
    let bulk = shape.geo.bulk_integrals(f)?;
    let lhs = shape.geo.weighted_curvature_integral(1, f)? + bulk.weighted;
    let r = shape.balls.invert(Comparison::WeightedVolume, bulk.dlambda)?;
    Ok(GapReport::new(Inequality::SphericalMinkowski, &shape.geo, 1, None, Some(f), lhs, shape.balls.chi_minkowski(f, r)?, tol))
}

/// `∫_Ω λ′ dv ≥ h(f_0⁻¹(Vol))`, the comparison used for `l = 0` in the
/// weighted quermassintegral inequality; stated for star-shaped domains,
/// which every radial graph is. In `𝕊ⁿ` the direction reverses, so only
/// `ℍⁿ` and the trivial Euclidean case are accepted.
pub fn verify_volume_comparison<G: Graph>(g: &G, tol: &GapTolerances) -> Result<GapReport> {
    let shape = Shape::new(g)?;
    shape.require_form(&[SpaceForm::Hyperbolic, SpaceForm::Euclidean], "the volume comparison")?;
    let bulk = shape.geo.bulk_integrals(&WeightFunction::constant())?;
    let r = shape.balls.invert(Comparison::Quermass(0), bulk.volume)?;
    let rhs = shape.balls.weighted_volume(r)?;
    Ok(GapReport::new(Inequality::VolumeComparison, &shape.geo, 0, Some(0), None, bulk.dlambda, rhs, tol))
}

/// Flat CSV, one row per report, 17 significant digits.
pub fn write_gap_csv<W: Write>(reports: &[GapReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "shape",
        "inequality",
        "k",
        "l",
        "weight",
        "lhs",
        "rhs",
        "gap",
        "relative_gap",
        "equality_case",
        "passed",
    ])?;
    for r in reports {
        w.write_record([
            r.shape.clone(),
            r.inequality.id().to_string(),
            r.k.to_string(),
            r.l.map(|l| l.to_string()).unwrap_or_default(),
            r.weight.clone().unwrap_or_default(),
            format!("{:.16e}", r.lhs),
            format!("{:.16e}", r.rhs),
            format!("{:.16e}", r.gap),
            format!("{:.16e}", r.relative_gap),
            r.equality_case.to_string(),
            r.passed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypersurface::ProfileGraph;

    fn tol() -> GapTolerances {
        GapTolerances::default()
    }

    fn sphere(form: SpaceForm, n: usize, r: f64) -> ProfileGraph {
        ProfileGraph::sphere(n, form, 512, r).unwrap()
    }

    fn bumpy(form: SpaceForm, n: usize, r: f64, amp: f64) -> ProfileGraph {
        ProfileGraph::from_fn(n, form, 256, |t| r * (1.0 + amp * (2.0 * t).cos() + 0.5 * amp * t.cos())).unwrap()
    }

    #[test]
    fn weighted_quermass_equality_on_sphere() {
        let g = sphere(SpaceForm::Hyperbolic, 3, 1.0);
        for l in 0..=2 {
            let [a, b] = verify_weighted_quermass(&g, 2, l, &WeightFunction::power(2.0), &tol()).unwrap();
            for r in [a, b] {
                assert!(r.equality_case && r.passed, "{r:?}");
                assert!(r.relative_gap.abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn weighted_quermass_positive_gap_when_perturbed() {
        let g = bumpy(SpaceForm::Hyperbolic, 4, 1.0, 0.05);
        for k in 2..=3 {
            for l in 0..=k {
                let [a, b] = verify_weighted_quermass(&g, k, l, &WeightFunction::power(2.0), &tol()).unwrap();
                assert!(a.gap > 0.0 && b.gap > 0.0, "k={k} l={l} {a:?} {b:?}");
                assert!(!a.equality_case);
            }
        }
    }

    #[test]
    fn weighted_quermass_hypotheses() {
        let flat = ProfileGraph::from_fn(3, SpaceForm::Hyperbolic, 128, |t| 1.5 + 0.45 * (2.0 * t).cos()).unwrap();
        let f = WeightFunction::power(2.0);
        assert!(matches!(verify_weighted_quermass(&flat, 2, 1, &f, &tol()), Err(Error::Hypothesis(_))));
        let g = sphere(SpaceForm::Hyperbolic, 3, 1.0);
        assert!(matches!(verify_weighted_quermass(&g, 1, 1, &f, &tol()), Err(Error::OrderOutOfRange { .. })));
        assert!(matches!(verify_weighted_quermass(&g, 2, 3, &f, &tol()), Err(Error::OrderOutOfRange { .. })));
        // s ↦ s fails f′ ≥ 2 f/s
        let lin = WeightFunction::power(1.0);
        assert!(matches!(verify_weighted_quermass(&g, 2, 1, &lin, &tol()), Err(Error::Hypothesis(_))));
        let s = sphere(SpaceForm::Spherical, 3, 0.5);
        assert!(matches!(verify_weighted_quermass(&s, 2, 1, &f, &tol()), Err(Error::Hypothesis(_))));
    }

    #[test]
    fn power_weight_threshold() {
        let g = sphere(SpaceForm::Hyperbolic, 4, 1.0);
        let [a, _] = verify_power_weight(&g, 2, 1, 2.0, &tol()).unwrap();
        assert!(a.passed && a.equality_case);
        // α = 3/2 is the boundary case for k = 3
        assert!(verify_power_weight(&g, 3, 1, 1.5, &tol()).is_ok());
        assert!(matches!(verify_power_weight(&g, 2, 1, 1.5, &tol()), Err(Error::Hypothesis(_))));
    }

    #[test]
    fn hyperbolic_minkowski_cases() {
        let s = sphere(SpaceForm::Hyperbolic, 3, 1.0);
        for f in [WeightFunction::power(2.0), WeightFunction::power(1.0)] {
            for r in verify_hyperbolic_minkowski(&s, &f, &tol()).unwrap() {
                assert!(r.equality_case && r.passed, "{r:?}");
            }
        }
        let g = bumpy(SpaceForm::Hyperbolic, 3, 1.0, 0.05);
        for r in verify_hyperbolic_minkowski(&g, &WeightFunction::power(2.0), &tol()).unwrap() {
            assert!(r.gap > 0.0, "{r:?}");
        }
    }

    #[test]
    fn spherical_minkowski_cases() {
        let f = WeightFunction::power(2.0);
        let r = verify_spherical_minkowski(&sphere(SpaceForm::Spherical, 3, 0.5), &f, &tol()).unwrap();
        assert!(r.equality_case && r.relative_gap.abs() <= 1e-8, "{r:?}");
        let r = verify_spherical_minkowski(&bumpy(SpaceForm::Spherical, 3, 0.5, 0.05), &f, &tol()).unwrap();
        assert!(r.gap > 0.0, "{r:?}");
        let dumbbell = ProfileGraph::from_fn(3, SpaceForm::Spherical, 128, |t| 0.5 + 0.3 * t.cos().powi(2)).unwrap();
        assert!(matches!(verify_spherical_minkowski(&dumbbell, &f, &tol()), Err(Error::Hypothesis(_))));
    }

    #[test]
    fn volume_comparison_holds() {
        let r = verify_volume_comparison(&sphere(SpaceForm::Hyperbolic, 3, 0.7), &tol()).unwrap();
        assert!(r.equality_case && r.passed, "{r:?}");
        let r = verify_volume_comparison(&bumpy(SpaceForm::Hyperbolic, 3, 0.7, 0.05), &tol()).unwrap();
        assert!(r.gap > 0.0, "{r:?}");
        // λ′ ≡ 1: both sides are the volume
        let r = verify_volume_comparison(&bumpy(SpaceForm::Euclidean, 3, 0.7, 0.05), &tol()).unwrap();
        assert!(r.relative_gap.abs() < 1e-12, "{r:?}");
        let s = sphere(SpaceForm::Spherical, 3, 0.7);
        assert!(matches!(verify_volume_comparison(&s, &tol()), Err(Error::Hypothesis(_))));
    }

    #[test]
    fn csv_has_one_row_per_report() {
        let g = sphere(SpaceForm::Hyperbolic, 3, 1.0);
        let reports: Vec<GapReport> = verify_weighted_quermass(&g, 2, 1, &WeightFunction::power(2.0), &tol())
            .unwrap()
            .into_iter()
            .map(|r| r.with_shape("unit"))
            .collect();
        let mut buf = Vec::new();
        write_gap_csv(&reports, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.contains("unit,weighted-quermass,2,1,pow:2,"));
    }
}
