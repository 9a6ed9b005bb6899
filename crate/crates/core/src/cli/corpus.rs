//! Seeded corpora of perturbed geodesic spheres that satisfy the flow
//! hypothesis of their space form with a margin.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::FlowHypothesis;
use crate::hypersurface::{AnyGraph, Graph, ProfileGraph, Representation, SphereGraph};
use crate::spaceform::SpaceForm;

/// Corpus index file written next to the shape files.
pub const INDEX_FILE: &str = "corpus.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSpec {
    pub count: usize,
    /// spherical-harmonic degrees that receive a random coefficient
    pub modes: Vec<usize>,
    /// bound on every coefficient
    pub amplitude: f64,
    pub seed: u64,
    /// radius of the unperturbed sphere
    pub r0: f64,
    /// smallest accepted hypothesis margin
    pub margin_floor: f64,
    /// candidate budget; `None` means `50·count + 50`
    pub max_attempts: Option<usize>,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            count: 20,
            modes: vec![1, 2, 3, 4],
            amplitude: 0.05,
            seed: 20240611,
            r0: 1.0,
            margin_floor: 0.01,
            max_attempts: None,
        }
    }
}

impl CorpusSpec {
    /// `default`, or comma-separated `key=value` overrides of the default
    /// (`count`, `amplitude`, `seed`, `r0`, `floor`, `attempts`, `modes`
    /// as `1-4` or `2;3`).
    pub fn parse(text: &str) -> Result<Self> {
        let mut spec = Self::default();
        let text = text.trim();
        if text.is_empty() || text == "default" {
            return Ok(spec);
        }
        for item in text.split(',') {
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("corpus item {item:?} is not key=value")))?;
            let bad = || Error::Config(format!("bad value {value:?} for corpus key {key:?}"));
            match key.trim() {
                "count" => spec.count = value.parse().map_err(|_| bad())?,
                "amplitude" | "amp" => spec.amplitude = value.parse().map_err(|_| bad())?,
                "seed" => spec.seed = value.parse().map_err(|_| bad())?,
                "r0" => spec.r0 = value.parse().map_err(|_| bad())?,
                "floor" | "margin_floor" => spec.margin_floor = value.parse().map_err(|_| bad())?,
                "attempts" | "max_attempts" => spec.max_attempts = Some(value.parse().map_err(|_| bad())?),
                "modes" => spec.modes = parse_modes(value).ok_or_else(bad)?,
                other => return Err(Error::Config(format!("unknown corpus key {other:?}"))),
            }
        }
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::Config("corpus count must be positive".into()));
        }
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            return Err(Error::Config(format!("amplitude must be non-negative, got {}", self.amplitude)));
        }
        if !(self.r0 > 0.0) {
            return Err(Error::Config(format!("r0 must be positive, got {}", self.r0)));
        }
        if self.modes.contains(&0) {
            return Err(Error::Config("mode degrees start at 1".into()));
        }
        Ok(())
    }

    fn budget(&self) -> usize {
        self.max_attempts.unwrap_or(50 * self.count + 50)
    }
}

fn parse_modes(text: &str) -> Option<Vec<usize>> {
    if let Some((a, b)) = text.split_once('-') {
        let (a, b): (usize, usize) = (a.trim().parse().ok()?, b.trim().parse().ok()?);
        return (a <= b).then(|| (a..=b).collect());
    }
    text.split(';').map(|s| s.trim().parse().ok()).collect()
}

/// One term `c · Y_{degree}^{order}`: `order ≥ 0` multiplies `cos(order φ)`,
/// `order < 0` multiplies `sin(|order| φ)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub degree: usize,
    pub order: i32,
    pub coefficient: f64,
}

/// `ρ(θ, φ) = r_0 (1 + Σ c Y(θ, φ))`
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub r0: f64,
    pub modes: Vec<Mode>,
}

impl Perturbation {
    pub fn sphere(r0: f64) -> Self {
        Self { r0, modes: Vec::new() }
    }

    pub fn is_axisymmetric(&self) -> bool {
        self.modes.iter().all(|m| m.order == 0)
    }

    pub fn radius(&self, theta: f64, phi: f64) -> f64 {
        let x = theta.cos();
        let s: f64 = self
            .modes
            .iter()
            .map(|m| {
                let order = m.order.unsigned_abs() as usize;
                let angular = if m.order >= 0 { (order as f64 * phi).cos() } else { (order as f64 * phi).sin() };
                m.coefficient * schmidt_legendre(m.degree, order, x) * angular
            })
            .sum();
        self.r0 * (1.0 + s)
    }

    /// Same coefficients scaled by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let modes = self.modes.iter().map(|m| Mode { coefficient: m.coefficient * factor, ..*m }).collect();
        Self { r0: self.r0, modes }
    }

    /// Discretize on the given grid. Profiles need an axisymmetric
    /// perturbation; sphere grids need `n = 3`.
    pub fn graph(&self, form: SpaceForm, n: usize, grid: &GridSpec) -> Result<AnyGraph> {
        match grid.representation {
            Representation::Profile => {
                if !self.is_axisymmetric() {
                    return Err(Error::invalid("profile graphs need an axisymmetric perturbation"));
                }
                Ok(AnyGraph::Profile(ProfileGraph::from_fn(n, form, grid.resolution, |t| self.radius(t, 0.0))?))
            }
            Representation::Sphere => {
                if n != 3 {
                    return Err(Error::invalid("sphere grids require n = 3"));
                }
                let g = SphereGraph::from_fn(form, grid.resolution, grid.n_phi, |t, p| self.radius(t, p))?;
                Ok(AnyGraph::Sphere(g))
            }
        }
    }
}

/// Schmidt semi-normalized associated Legendre function `P̃_l^m(x)`,
/// bounded by 1 on `[−1, 1]`, without the Condon–Shortley phase.
pub fn schmidt_legendre(l: usize, m: usize, x: f64) -> f64 {
    if m > l {
        return 0.0;
    }
    let s = (1.0 - x * x).max(0.0).sqrt();
    // P_m^m = (2m−1)!! s^m
    let mut pmm = 1.0;
    for i in 0..m {
        pmm *= (2 * i + 1) as f64 * s;
    }
    let value = if l == m {
        pmm
    } else {
        let mut prev = pmm;
        let mut cur = x * (2 * m + 1) as f64 * pmm;
        for d in (m + 2)..=l {
            let next = ((2 * d - 1) as f64 * x * cur - (d + m - 1) as f64 * prev) / (d - m) as f64;
            prev = cur;
            cur = next;
        }
        cur
    };
    if m == 0 {
        return value;
    }
    // sqrt(2 (l−m)!/(l+m)!)
    let ratio: f64 = ((l - m + 1)..=(l + m)).map(|i| i as f64).product();
    value * (2.0 / ratio).sqrt()
}

/// Discretization shared by all corpus shapes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub representation: Representation,
    pub resolution: usize,
    pub n_phi: usize,
}

impl GridSpec {
    pub fn profile(resolution: usize) -> Self {
        Self { representation: Representation::Profile, resolution, n_phi: 0 }
    }

    pub fn sphere(n_theta: usize, n_phi: usize) -> Self {
        Self { representation: Representation::Sphere, resolution: n_theta, n_phi }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Margins {
    pub hypothesis: f64,
    pub strict: f64,
    pub static_convex: f64,
    pub h_convex: f64,
    pub pinching: f64,
}

impl Margins {
    fn of(g: &AnyGraph) -> Result<Self> {
        let geo = g.geometry()?;
        let c = geo.convexity();
        Ok(Self {
            hypothesis: FlowHypothesis::for_form(g.form()).margin(&geo),
            strict: c.strict_margin,
            static_convex: c.static_margin,
            h_convex: c.h_convex_margin,
            pinching: geo.roundness().pinching,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusShape {
    pub label: String,
    /// shape file name relative to the corpus directory, once written
    pub file: Option<String>,
    pub margins: Margins,
    /// seed, candidate index and coefficients
    pub seed: u64,
    pub attempt: usize,
    pub perturbation: Perturbation,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Corpus {
    pub epsilon: i32,
    pub n: usize,
    pub grid: GridSpec,
    pub spec: CorpusSpec,
    pub attempts: usize,
    pub acceptance_rate: f64,
    pub shapes: Vec<CorpusShape>,
}

impl Corpus {
    pub fn form(&self) -> SpaceForm {
        SpaceForm::from_epsilon(self.epsilon).expect("corpus epsilon validated at generation")
    }

    pub fn graph(&self, shape: &CorpusShape) -> Result<AnyGraph> {
        shape.perturbation.graph(self.form(), self.n, &self.grid)
    }

    /// Write every shape file and the index into `dir`.
    pub fn write(&mut self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let form = self.form();
        for shape in &mut self.shapes {
            let name = format!("{}.json", shape.label);
            let g = shape.perturbation.graph(form, self.n, &self.grid)?;
            let meta = serde_json::json!({ "label": shape.label, "seed": shape.seed, "attempt": shape.attempt, "perturbation": shape.perturbation });
            g.to_shape_file(meta).write(&dir.join(&name))?;
            shape.file = Some(name);
        }
        std::fs::write(dir.join(INDEX_FILE), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(dir.join(INDEX_FILE))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// The mode list for a representation: `m = 0` only for profiles, all
/// `|m| ≤ l` for sphere grids.
fn mode_slots(degrees: &[usize], representation: Representation) -> Vec<(usize, i32)> {
    let mut out = Vec::new();
    for &l in degrees {
        match representation {
            Representation::Profile => out.push((l, 0)),
            Representation::Sphere => out.extend((-(l as i32)..=l as i32).map(|m| (l, m))),
        }
    }
    out
}

/// Per-mode coefficient factor. The Schmidt functions of one degree satisfy
/// `Σ_m Y_m² = 1`, so bounding each of the `2l+1` coefficients by
/// `amplitude/√(2l+1)` bounds the whole degree by `amplitude`, as for a
/// single Legendre mode.
fn degree_scale(degree: usize, representation: Representation) -> f64 {
    match representation {
        Representation::Profile => 1.0,
        Representation::Sphere => 1.0 / ((2 * degree + 1) as f64).sqrt(),
    }
}

/// Rejection-sample `spec.count` shapes whose hypothesis margin is at least
/// `spec.margin_floor`.
pub fn generate(form: SpaceForm, n: usize, grid: GridSpec, spec: &CorpusSpec) -> Result<Corpus> {
    spec.validate()?;
    let slots = mode_slots(&spec.modes, grid.representation);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let budget = spec.budget();
    let mut shapes = Vec::with_capacity(spec.count);
    let mut attempts = 0;
    while shapes.len() < spec.count {
        if attempts == budget {
            return Err(Error::Budget {
                accepted: shapes.len(),
                requested: spec.count,
                attempts,
                rate: shapes.len() as f64 / attempts as f64,
            });
        }
        attempts += 1;
        let modes: Vec<Mode> = slots
            .iter()
            .map(|&(degree, order)| Mode {
                degree,
                order,
                coefficient: if spec.amplitude > 0.0 {
                    let bound = spec.amplitude * degree_scale(degree, grid.representation);
                    rng.gen_range(-bound..=bound)
                } else {
                    0.0
                },
            })
            .collect();
        let perturbation = Perturbation { r0: spec.r0, modes };
        let Ok(g) = perturbation.graph(form, n, &grid) else { continue };
        let Ok(margins) = Margins::of(&g) else { continue };
        if margins.hypothesis >= spec.margin_floor {
            shapes.push(CorpusShape {
                label: format!("shape-{:03}", shapes.len()),
                file: None,
                margins,
                seed: spec.seed,
                attempt: attempts - 1,
                perturbation,
            });
        }
    }
    Ok(Corpus {
        epsilon: form.epsilon(),
        n,
        grid,
        spec: spec.clone(),
        attempts,
        acceptance_rate: shapes.len() as f64 / attempts as f64,
        shapes,
    })
}

/// Convenience for tests and sweeps: a single centered sphere as a corpus.
pub fn sphere_corpus(form: SpaceForm, n: usize, grid: GridSpec, r0: f64) -> Result<Corpus> {
    let spec = CorpusSpec { count: 1, amplitude: 0.0, r0, margin_floor: f64::NEG_INFINITY, ..CorpusSpec::default() };
    generate(form, n, grid, &spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_matches_closed_forms() {
        for x in [-0.9, -0.3, 0.0, 0.4, 1.0] {
            let s = (1.0f64 - x * x).sqrt();
            assert!((schmidt_legendre(2, 0, x) - 0.5 * (3.0 * x * x - 1.0)).abs() < 1e-14);
            assert!((schmidt_legendre(3, 0, x) - 0.5 * (5.0 * x * x * x - 3.0 * x)).abs() < 1e-14);
            assert!((schmidt_legendre(1, 1, x) - s).abs() < 1e-14);
            // P_2^1 = 3 x s, normalized by sqrt(2/6)
            assert!((schmidt_legendre(2, 1, x) - 3.0 * x * s * (1.0f64 / 3.0).sqrt()).abs() < 1e-14);
            // P_2^2 = 3 s², normalized by sqrt(2/24)
            assert!((schmidt_legendre(2, 2, x) - 3.0 * s * s * (1.0f64 / 12.0).sqrt()).abs() < 1e-14);
        }
    }

    #[test]
    fn schmidt_functions_are_bounded() {
        for l in 0..=6 {
            for m in 0..=l {
                let peak = (0..=400).map(|i| schmidt_legendre(l, m, -1.0 + i as f64 / 200.0).abs()).fold(0.0, f64::max);
                assert!(peak <= 1.0 + 1e-12, "l={l} m={m} peak {peak}");
            }
            // addition theorem: the squares of one degree sum to 1
            for x in [-0.95, -0.2, 0.0, 0.6, 1.0] {
                let total: f64 = (0..=l).map(|m| schmidt_legendre(l, m, x).powi(2)).sum();
                assert!((total - 1.0).abs() < 1e-13, "l={l} x={x} total {total}");
            }
        }
    }

    #[test]
    fn spec_parsing() {
        assert_eq!(CorpusSpec::parse("default").unwrap(), CorpusSpec::default());
        let s = CorpusSpec::parse("count=5,amp=0.1,seed=3,modes=2-3,floor=0.02").unwrap();
        assert_eq!((s.count, s.amplitude, s.seed, s.modes.clone(), s.margin_floor), (5, 0.1, 3, vec![2, 3], 0.02));
        assert_eq!(CorpusSpec::parse("modes=1;4").unwrap().modes, vec![1, 4]);
        assert!(CorpusSpec::parse("count").is_err());
        assert!(CorpusSpec::parse("colour=red").is_err());
    }

    #[test]
    fn zero_amplitude_gives_spheres() {
        let spec = CorpusSpec { count: 3, amplitude: 0.0, ..CorpusSpec::default() };
        let c = generate(SpaceForm::Hyperbolic, 3, GridSpec::profile(32), &spec).unwrap();
        for s in &c.shapes {
            assert!(c.graph(s).unwrap().rho().iter().all(|&r| r == 1.0));
        }
    }

    #[test]
    fn generation_is_deterministic_and_meets_floor() {
        let spec = CorpusSpec { count: 10, ..CorpusSpec::default() };
        let a = generate(SpaceForm::Hyperbolic, 3, GridSpec::profile(64), &spec).unwrap();
        let b = generate(SpaceForm::Hyperbolic, 3, GridSpec::profile(64), &spec).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert!(a.shapes.iter().all(|s| s.margins.hypothesis >= spec.margin_floor));
        assert!(a.acceptance_rate >= 0.9, "acceptance {}", a.acceptance_rate);
    }

    #[test]
    fn huge_amplitude_exhausts_budget() {
        let spec = CorpusSpec { count: 5, amplitude: 0.9, max_attempts: Some(200), ..CorpusSpec::default() };
        let err = generate(SpaceForm::Hyperbolic, 3, GridSpec::profile(32), &spec).unwrap_err();
        assert!(matches!(err, Error::Budget { .. }), "{err}");
    }

    #[test]
    fn sphere_grid_corpus_is_not_axisymmetric() {
        let spec = CorpusSpec { count: 2, modes: vec![2], ..CorpusSpec::default() };
        let c = generate(SpaceForm::Hyperbolic, 3, GridSpec::sphere(16, 16), &spec).unwrap();
        assert_eq!(c.shapes[0].perturbation.modes.len(), 5);
        assert!(!c.shapes[0].perturbation.is_axisymmetric());
    }

    #[test]
    fn write_and_read_back() {
        let dir = tempfile::tempdir().unwrap();
        let spec = CorpusSpec { count: 2, ..CorpusSpec::default() };
        let mut c = generate(SpaceForm::Spherical, 3, GridSpec::profile(32), &CorpusSpec { r0: 0.7, ..spec }).unwrap();
        c.write(dir.path()).unwrap();
        let back = Corpus::read(dir.path()).unwrap();
        assert_eq!(back.shapes.len(), 2);
        let file = crate::hypersurface::ShapeFile::read(&dir.path().join(back.shapes[1].file.as_ref().unwrap())).unwrap();
        assert_eq!(file.rho, c.graph(&c.shapes[1]).unwrap().rho());
    }
}
