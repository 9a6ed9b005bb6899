//! Weight functions `f` applied to `Φ` and their admissibility conditions.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Non-negative prefactor `g` in the family `f(s) = g(s) s^α`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Prefactor {
    One,
    OnePlusS,
    Exp,
}

impl Prefactor {
    fn eval(self, s: f64) -> [f64; 3] {
        match self {
            Prefactor::One => [1.0, 0.0, 0.0],
            Prefactor::OnePlusS => [1.0 + s, 1.0, 0.0],
            Prefactor::Exp => {
                let e = s.exp();
                [e, e, e]
            }
        }
    }
}

type Triple = Arc<dyn Fn(f64) -> [f64; 3] + Send + Sync>;

#[derive(Clone)]
enum Kind {
    Scaled { g: Prefactor, alpha: f64 },
    PowerSum(Vec<(f64, f64)>),
    Custom(Triple),
}

/// Scalar weight with analytic first and second derivatives.
#[derive(Clone)]
pub struct WeightFunction {
    id: String,
    kind: Kind,
}

impl fmt::Debug for WeightFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("WeightFunction").field("id", &self.id).finish()
    }
}

fn power_terms(s: f64, alpha: f64) -> [f64; 3] {
    if alpha == 0.0 {
        return [1.0, 0.0, 0.0];
    }
    let p = s.powf(alpha);
    [p, alpha * p / s, alpha * (alpha - 1.0) * p / (s * s)]
}

impl Serialize for WeightFunction {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.id)
    }
}

impl<'de> Deserialize<'de> for WeightFunction {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let id = String::deserialize(deserializer)?;
        Self::parse(&id).map_err(serde::de::Error::custom)
    }
}

/// User-defined weight file: `f(s) = Σ c_i s^{p_i}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WeightFile {
    pub name: String,
    pub terms: Vec<(f64, f64)>,
}

impl WeightFunction {
    /// `f(s) = s^α`
    pub fn power(alpha: f64) -> Self {
        Self::scaled(Prefactor::One, alpha)
    }

    /// `f ≡ 1`
    pub fn constant() -> Self {
        Self { id: "one".into(), kind: Kind::Scaled { g: Prefactor::One, alpha: 0.0 } }
    }

    /// `f(s) = g(s) s^α`
    pub fn scaled(g: Prefactor, alpha: f64) -> Self {
        let id = match g {
            Prefactor::One => format!("pow:{alpha}"),
            Prefactor::OnePlusS => format!("lin-pow:{alpha}"),
            Prefactor::Exp => format!("exp-pow:{alpha}"),
        };
        Self { id, kind: Kind::Scaled { g, alpha } }
    }

    pub fn power_sum(name: &str, terms: Vec<(f64, f64)>) -> Self {
        Self { id: format!("file:{name}"), kind: Kind::PowerSum(terms) }
    }

    /// Arbitrary weight from a closure returning `(f, f′, f″)`.
    pub fn custom<F>(name: &str, f: F) -> Self
    where
        F: Fn(f64) -> [f64; 3] + Send + Sync + 'static,
    {
        Self { id: format!("custom:{name}"), kind: Kind::Custom(Arc::new(f)) }
    }

    /// Parse a registry id (`one`, `pow:α`, `lin-pow:α`, `exp-pow:α`) or,
    /// failing that, read a [`WeightFile`] from the given path.
    pub fn parse(spec: &str) -> Result<Self> {
        let spec = spec.trim();
        if spec == "one" {
            return Ok(Self::constant());
        }
        if let Some((head, tail)) = spec.split_once(':') {
            let g = match head {
                "pow" => Some(Prefactor::One),
                "lin-pow" => Some(Prefactor::OnePlusS),
                "exp-pow" => Some(Prefactor::Exp),
                _ => None,
            };
            if let Some(g) = g {
                let alpha: f64 = tail
                    .parse()
                    .map_err(|_| Error::invalid(format!("bad exponent in weight id {spec:?}")))?;
                return Ok(Self::scaled(g, alpha));
            }
        }
        let path = Path::new(spec);
        if path.exists() {
            return Self::from_file(path);
        }
        Err(Error::invalid(format!("unknown weight {spec:?}")))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let wf: WeightFile = serde_json::from_str(&text)?;
        if wf.terms.is_empty() {
            return Err(Error::invalid("weight file has no terms"));
        }
        Ok(Self::power_sum(&wf.name, wf.terms))
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    /// `Some(α)` when the weight is the pure power `s^α`.
    pub fn power_exponent(&self) -> Option<f64> {
        match self.kind {
            Kind::Scaled { g: Prefactor::One, alpha } if self.id != "one" => Some(alpha),
            _ => None,
        }
    }

    /// `(f, f′, f″)` at `s`.
    pub fn eval(&self, s: f64) -> [f64; 3] {
        match &self.kind {
            Kind::Scaled { g, alpha } => {
                let [g0, g1, g2] = g.eval(s);
                let [p0, p1, p2] = power_terms(s, *alpha);
                [g0 * p0, g1 * p0 + g0 * p1, g2 * p0 + 2.0 * g1 * p1 + g0 * p2]
            }
            Kind::PowerSum(terms) => terms.iter().fold([0.0; 3], |acc, &(c, p)| {
                let [a, b, d] = power_terms(s, p);
                [acc[0] + c * a, acc[1] + c * b, acc[2] + c * d]
            }),
            Kind::Custom(f) => f(s),
        }
    }

    #[inline]
    pub fn value(&self, s: f64) -> f64 {
        match &self.kind {
            Kind::Scaled { g: Prefactor::One, alpha } => {
                if *alpha == 0.0 {
                    1.0
                } else {
                    s.powf(*alpha)
                }
            }
            _ => self.eval(s)[0],
        }
    }

    pub fn d1(&self, s: f64) -> f64 {
        self.eval(s)[1]
    }

    pub fn d2(&self, s: f64) -> f64 {
        self.eval(s)[2]
    }
}

/// Hypotheses a weight may have to satisfy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightCondition {
    /// positive, non-decreasing and convex
    Basic,
    /// basic plus `f′(s) ≥ k/(k−1) · f(s)/s`, for the order-`k ≥ 2` weighted
    /// quermassintegral inequalities
    HigherOrder { k: usize },
    /// basic plus `(f(s)/s)′ ≥ 0`, for the hyperbolic weighted Minkowski
    /// inequality
    MeanHyperbolic,
    /// basic only, for the spherical weighted Minkowski inequality
    MeanSpherical,
}

impl WeightCondition {
    /// The condition needed by a flow of order `k` in the given space form.
    pub fn for_flow(k: usize, eps: i32) -> Self {
        match (k, eps) {
            (1, -1) => WeightCondition::MeanHyperbolic,
            (1, 1) => WeightCondition::MeanSpherical,
            (k, _) if k >= 2 => WeightCondition::HigherOrder { k },
            _ => WeightCondition::Basic,
        }
    }

    /// Exponent `p` with the condition equivalent to `f(s)/s^p` non-decreasing.
    fn exponent(self) -> Option<f64> {
        match self {
            WeightCondition::HigherOrder { k } => Some(k as f64 / (k as f64 - 1.0)),
            WeightCondition::MeanHyperbolic => Some(1.0),
            _ => None,
        }
    }
}

impl fmt::Display for WeightCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightCondition::Basic => write!(f, "basic"),
            WeightCondition::HigherOrder { k } => write!(f, "higher-order(k={k})"),
            WeightCondition::MeanHyperbolic => write!(f, "mean-hyperbolic"),
            WeightCondition::MeanSpherical => write!(f, "mean-spherical"),
        }
    }
}

/// Outcome of sampling a weight against a condition on `[s_min, s_max]`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub weight: String,
    pub condition: WeightCondition,
    pub range: (f64, f64),
    pub min_value: f64,
    pub min_slope: f64,
    pub min_convexity: f64,
    /// `min s f′/f − p`; `None` when the condition carries no growth bound.
    pub growth_margin: Option<f64>,
    /// `s ↦ f(s)/s^p` non-decreasing on the sample grid
    pub equivalent_form_holds: bool,
    /// largest relative mismatch between analytic and central-difference
    /// derivatives
    pub derivative_mismatch: f64,
    pub admissible: bool,
}

pub const ADMISSIBILITY_SAMPLES: usize = 1000;
const MARGIN_TOL: f64 = 1e-12;
const DERIVATIVE_TOL: f64 = 1e-6;

/// Sample the condition on `range`.
pub fn admissibility(f: &WeightFunction, cond: WeightCondition, range: (f64, f64)) -> Result<AdmissibilityReport> {
    let (lo, hi) = range;
    if !(lo > 0.0 && hi > lo && hi.is_finite()) {
        return Err(Error::invalid(format!("degenerate admissibility range [{lo}, {hi}]")));
    }
    let m = ADMISSIBILITY_SAMPLES;
    let ratio = (hi / lo).ln();
    let samples: Vec<f64> = (0..m)
        .map(|i| lo * (ratio * i as f64 / (m - 1) as f64).exp())
        .collect();
    let p = cond.exponent();

    let mut min_value = f64::INFINITY;
    let mut min_slope = f64::INFINITY;
    let mut min_convexity = f64::INFINITY;
    let mut growth = f64::INFINITY;
    let mut mismatch: f64 = 0.0;
    let mut equivalent = true;
    let mut prev_q: Option<f64> = None;
    for &s in &samples {
        let [v, d1, d2] = f.eval(s);
        min_value = min_value.min(v);
        min_slope = min_slope.min(d1);
        min_convexity = min_convexity.min(d2);
        if let Some(p) = p {
            growth = growth.min(s * d1 / v - p);
            let q = v / s.powf(p);
            if let Some(prev) = prev_q {
                if q < prev * (1.0 - MARGIN_TOL) - f64::MIN_POSITIVE {
                    equivalent = false;
                }
            }
            prev_q = Some(q);
        }
        let h = 1e-4 * s;
        let [vp, d1p, _] = f.eval(s + h);
        let [vm, d1m, _] = f.eval(s - h);
        let fd1 = (vp - vm) / (2.0 * h);
        let fd2 = (d1p - d1m) / (2.0 * h);
        let e1 = (fd1 - d1).abs() / d1.abs().max(v.abs() / s).max(1e-300);
        let e2 = (fd2 - d2).abs() / d2.abs().max(d1.abs() / s).max(1e-300);
        mismatch = mismatch.max(e1).max(e2);
    }
    let basic = min_value > 0.0 && min_slope >= -MARGIN_TOL && min_convexity >= -MARGIN_TOL;
    let growth_margin = p.map(|_| growth);
    let admissible = basic
        && growth_margin.is_none_or(|g| g >= -MARGIN_TOL)
        && equivalent
        && mismatch <= DERIVATIVE_TOL;
    Ok(AdmissibilityReport {
        weight: f.id().to_string(),
        condition: cond,
        range,
        min_value,
        min_slope,
        min_convexity,
        growth_margin,
        equivalent_form_holds: equivalent,
        derivative_mismatch: mismatch,
        admissible,
    })
}

/// Default sampling range for registry metadata.
pub const REGISTRY_RANGE: (f64, f64) = (1e-3, 50.0);

/// A built-in weight with precomputed admissibility.
#[derive(Clone, Debug)]
pub struct RegistryEntry {
    pub weight: WeightFunction,
    pub admissible_for: Vec<WeightCondition>,
}

/// The built-in weights: `s^α` and `g(s) s^α` for `g ∈ {1, 1+s, e^s}`,
/// with admissibility evaluated for orders `k ≤ max_k`.
pub fn registry(max_k: usize) -> Vec<RegistryEntry> {
    let mut weights = vec![WeightFunction::constant()];
    for alpha in [1.0, 1.5, 2.0, 3.0] {
        weights.push(WeightFunction::power(alpha));
    }
    for g in [Prefactor::OnePlusS, Prefactor::Exp] {
        for alpha in [1.0, 2.0] {
            weights.push(WeightFunction::scaled(g, alpha));
        }
    }
    let mut conds = vec![WeightCondition::Basic, WeightCondition::MeanHyperbolic, WeightCondition::MeanSpherical];
    conds.extend((2..=max_k).map(|k| WeightCondition::HigherOrder { k }));
    weights
        .into_iter()
        .map(|w| {
            let admissible_for = conds
                .iter()
                .copied()
                .filter(|&c| admissibility(&w, c, REGISTRY_RANGE).map(|r| r.admissible).unwrap_or(false))
                .collect();
            RegistryEntry { weight: w, admissible_for }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundary_power_is_admissible_with_zero_margin() {
        let r = admissibility(&WeightFunction::power(2.0), WeightCondition::HigherOrder { k: 2 }, (0.01, 10.0)).unwrap();
        assert!(r.admissible);
        assert!(r.growth_margin.unwrap().abs() < 1e-12);
    }

    #[test]
    fn linear_weight_fails_order_two() {
        let r = admissibility(&WeightFunction::power(1.0), WeightCondition::HigherOrder { k: 2 }, (0.01, 10.0)).unwrap();
        assert!(!r.admissible);
        assert!(!r.equivalent_form_holds);
        assert!((r.growth_margin.unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn scaled_family_is_admissible() {
        for k in 2..6 {
            let alpha = k as f64 / (k as f64 - 1.0);
            for g in [Prefactor::One, Prefactor::OnePlusS, Prefactor::Exp] {
                let w = WeightFunction::scaled(g, alpha);
                let r = admissibility(&w, WeightCondition::HigherOrder { k }, (1e-3, 20.0)).unwrap();
                assert!(r.admissible, "{} k={k}: {r:?}", w.id());
            }
        }
    }

    #[test]
    fn mean_curvature_conditions() {
        let lin = WeightFunction::power(1.0);
        assert!(admissibility(&lin, WeightCondition::MeanHyperbolic, (0.01, 10.0)).unwrap().admissible);
        let one = WeightFunction::constant();
        assert!(!admissibility(&one, WeightCondition::MeanHyperbolic, (0.01, 10.0)).unwrap().admissible);
        assert!(admissibility(&one, WeightCondition::MeanSpherical, (0.01, 10.0)).unwrap().admissible);
        let sqrt = WeightFunction::power(0.5);
        assert!(!admissibility(&sqrt, WeightCondition::MeanSpherical, (0.01, 10.0)).unwrap().admissible);
    }

    #[test]
    fn degenerate_range_rejected() {
        assert!(admissibility(&WeightFunction::power(2.0), WeightCondition::Basic, (1.0, 1.0)).is_err());
        assert!(admissibility(&WeightFunction::power(2.0), WeightCondition::Basic, (0.0, 1.0)).is_err());
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let w = WeightFunction::scaled(Prefactor::Exp, 2.0);
        let r = admissibility(&w, WeightCondition::Basic, (0.01, 5.0)).unwrap();
        assert!(r.derivative_mismatch < 1e-6, "{}", r.derivative_mismatch);
        let bad = WeightFunction::custom("wrong", |s| [s * s, s, 2.0]);
        let r = admissibility(&bad, WeightCondition::Basic, (0.01, 5.0)).unwrap();
        assert!(!r.admissible);
    }

    #[test]
    fn parse_registry_ids() {
        assert_eq!(WeightFunction::parse("pow:2").unwrap().value(3.0), 9.0);
        assert_eq!(WeightFunction::parse("lin-pow:2").unwrap().value(2.0), 12.0);
        assert!((WeightFunction::parse("exp-pow:1").unwrap().value(1.0) - 1f64.exp()).abs() < 1e-15);
        assert_eq!(WeightFunction::parse("one").unwrap().value(7.0), 1.0);
        assert!(WeightFunction::parse("nope:1").is_err());
    }

    #[test]
    fn weight_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.json");
        let wf = WeightFile { name: "quad".into(), terms: vec![(1.0, 2.0), (0.5, 3.0)] };
        std::fs::write(&path, serde_json::to_string(&wf).unwrap()).unwrap();
        let w = WeightFunction::parse(path.to_str().unwrap()).unwrap();
        assert_eq!(w.value(2.0), 8.0);
        assert_eq!(w.d1(2.0), 4.0 + 6.0);
    }

    #[test]
    fn registry_metadata() {
        let reg = registry(4);
        let sq = reg.iter().find(|e| e.weight.id() == "pow:2").unwrap();
        assert!(sq.admissible_for.contains(&WeightCondition::HigherOrder { k: 2 }));
        assert!(sq.admissible_for.contains(&WeightCondition::HigherOrder { k: 4 }));
        let lin = reg.iter().find(|e| e.weight.id() == "pow:1").unwrap();
        assert!(!lin.admissible_for.contains(&WeightCondition::HigherOrder { k: 2 }));
        assert!(lin.admissible_for.contains(&WeightCondition::MeanHyperbolic));
    }
}
