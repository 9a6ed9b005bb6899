//! The locally constrained inverse curvature flow
//! `∂_t X = (H_{k−1}/H_k − u/λ′) ν` on radial graphs, integrated with
//! explicit RK4 under convexity guards, with monitored functionals.

use std::f64::consts::FRAC_PI_2;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypersurface::{Graph, NodeGeometry, PointwiseGeometry, Representation};
use crate::inequalities::{admissibility, WeightCondition, WeightFunction};
use crate::spaceform::{unit_sphere_area, SpaceForm};
use crate::symfunc::{binomial, deleted_sigma};

pub const DEFAULT_CFL: f64 = 0.4;

/// In `𝕊ⁿ` the shape must stay in `ρ < π/2 − HEMISPHERE_MARGIN` so that
/// `λ′ = cos ρ` is bounded away from zero.
pub const HEMISPHERE_MARGIN: f64 = 0.05;

/// Below this fraction of `∫|integrand| dμ` both sides of a rate check count
/// as zero.
const STATIONARY_FRACTION: f64 = 1e-12;

/// A rate smaller than this fraction of `∫|integrand · F| dμ` is treated as
/// cancelled (e.g. `W_k` in `ℝⁿ`, which the flow preserves); its mismatch is
/// then measured against the floor instead of against two noise values.
pub const CANCELLATION_FLOOR: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowTolerances {
    /// wrong-direction change allowed per sample interval, relative to the
    /// larger endpoint magnitude
    pub monotonicity_slack: f64,
    /// stop once curvature pinching falls below this
    pub roundness_stop: f64,
    /// a step is rejected when the hypothesis margin drops below `−guard`
    pub convexity_guard: f64,
}

impl Default for FlowTolerances {
    fn default() -> Self {
        Self { monotonicity_slack: 1e-8, roundness_stop: 1e-3, convexity_guard: 1e-8 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowConfig {
    pub k: usize,
    /// upper bound on every step
    pub dt_init: f64,
    pub cfl: f64,
    pub t_max: f64,
    pub sample_every: f64,
    /// consecutive rejections tolerated before the run stops
    pub max_halvings: usize,
    pub max_steps: usize,
    pub tolerances: FlowTolerances,
    /// weights whose functionals are monitored; the flow itself is
    /// weight-independent
    pub weights: Vec<WeightFunction>,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            k: 1,
            dt_init: 1e-2,
            cfl: DEFAULT_CFL,
            t_max: 20.0,
            sample_every: 0.05,
            max_halvings: 30,
            max_steps: 5_000_000,
            tolerances: FlowTolerances::default(),
            weights: Vec::new(),
        }
    }
}

impl FlowConfig {
    pub fn new(k: usize) -> Self {
        Self { k, ..Self::default() }
    }

    pub fn with_weights(mut self, weights: Vec<WeightFunction>) -> Self {
        self.weights = weights;
        self
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        check_flow_order(n, self.k)?;
        let positive = [
            ("dt_init", self.dt_init),
            ("cfl", self.cfl),
            ("t_max", self.t_max),
            ("sample_every", self.sample_every),
            ("monotonicity_slack", self.tolerances.monotonicity_slack),
            ("roundness_stop", self.tolerances.roundness_stop),
            ("convexity_guard", self.tolerances.convexity_guard),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive and finite, got {value}")));
            }
        }
        if self.max_steps == 0 {
            return Err(Error::invalid("max_steps must be positive"));
        }
        Ok(())
    }
}

fn check_flow_order(n: usize, k: usize) -> Result<()> {
    if k == 0 || k > n - 1 {
        return Err(Error::OrderOutOfRange { order: k, max: n - 1 });
    }
    Ok(())
}

/// Convexity class required of the initial shape and guarded along the run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlowHypothesis {
    /// `κ_i > u/λ′` everywhere (hyperbolic space)
    StaticConvex,
    /// `κ_i > 0` and `ρ < π/2 − HEMISPHERE_MARGIN` (sphere)
    StrictlyConvexHemisphere,
    /// `κ_i > 0` (Euclidean space)
    StrictlyConvex,
}

impl FlowHypothesis {
    pub fn for_form(form: SpaceForm) -> Self {
        match form {
            SpaceForm::Hyperbolic => FlowHypothesis::StaticConvex,
            SpaceForm::Spherical => FlowHypothesis::StrictlyConvexHemisphere,
            SpaceForm::Euclidean => FlowHypothesis::StrictlyConvex,
        }
    }

    /// Positive exactly when the hypothesis holds.
    pub fn margin(self, geo: &PointwiseGeometry) -> f64 {
        let c = geo.convexity();
        match self {
            FlowHypothesis::StaticConvex => c.static_margin,
            FlowHypothesis::StrictlyConvex => c.strict_margin,
            FlowHypothesis::StrictlyConvexHemisphere => {
                let (_, rho_max) = geo.rho_range();
                c.strict_margin.min(FRAC_PI_2 - HEMISPHERE_MARGIN - rho_max)
            }
        }
    }

    pub fn describe(self) -> &'static str {
        match self {
            FlowHypothesis::StaticConvex => "static convex",
            FlowHypothesis::StrictlyConvexHemisphere => "strictly convex inside the hemisphere",
            FlowHypothesis::StrictlyConvex => "strictly convex",
        }
    }
}

/// Normal speed `F = H_{k−1}/H_k − u/λ′` at every node.
pub fn speed(geo: &PointwiseGeometry, k: usize) -> Result<Vec<f64>> {
    check_flow_order(geo.n, k)?;
    let bad = geo.cone_violations(k);
    if !bad.is_empty() {
        return Err(Error::ConeNodes { order: k, nodes: bad });
    }
    geo.nodes
        .iter()
        .map(|p| {
            if !(p.dlambda > 0.0) {
                return Err(Error::Domain { what: "lambda'", value: p.dlambda, domain: "(0, inf)".into() });
            }
            Ok(p.h[k - 1] / p.h[k] - p.u / p.dlambda)
        })
        .collect()
}

/// Bound on the coefficient of second derivatives of `ρ` in `F·v`:
/// `Σ_j |∂F/∂κ_j| / λ²`.
fn diffusivity(p: &NodeGeometry, k: usize) -> f64 {
    let m = p.kappa.len();
    let (lower, upper) = (p.h[k - 1], p.h[k]);
    let (c_lower, c_upper) = (binomial(m, k - 1), binomial(m, k));
    let total: f64 = (0..m)
        .map(|j| {
            let d_lower = if k >= 2 { deleted_sigma(&p.kappa, j, k - 2) / c_lower } else { 0.0 };
            let d_upper = deleted_sigma(&p.kappa, j, k - 1) / c_upper;
            ((d_lower * upper - lower * d_upper) / (upper * upper)).abs()
        })
        .sum();
    total / (p.lambda * p.lambda)
}

/// A graph with its geometry and speed.
#[derive(Clone, Debug)]
struct State<G> {
    graph: G,
    geo: PointwiseGeometry,
    speed: Vec<f64>,
}

impl<G: Graph> State<G> {
    fn new(graph: G, k: usize) -> Result<Self> {
        let geo = graph.geometry()?;
        let speed = speed(&geo, k)?;
        Ok(Self { graph, geo, speed })
    }

    /// `∂ρ/∂t = F·v`
    fn radial_velocity(&self) -> Vec<f64> {
        self.geo.nodes.iter().zip(&self.speed).map(|(p, f)| f * p.v).collect()
    }

    fn stable_dt(&self, k: usize, cfl: f64) -> f64 {
        let d = self.geo.nodes.iter().map(|p| diffusivity(p, k)).fold(0.0, f64::max);
        let h = self.graph.grid_spacing();
        if d > 0.0 {
            cfl * h * h / d
        } else {
            f64::INFINITY
        }
    }

    fn max_speed(&self) -> f64 {
        self.speed.iter().fold(0.0, |a, f| a.max(f.abs()))
    }

    fn shifted(&self, dir: &[f64], scale: f64, k: usize) -> Result<Self> {
        let rho = self.graph.rho().iter().zip(dir).map(|(r, d)| r + scale * d).collect();
        Self::new(self.graph.with_rho(rho)?, k)
    }

    fn rk4(&self, k: usize, dt: f64) -> Result<Self> {
        let k1 = self.radial_velocity();
        let k2 = self.shifted(&k1, 0.5 * dt, k)?.radial_velocity();
        let k3 = self.shifted(&k2, 0.5 * dt, k)?.radial_velocity();
        let k4 = self.shifted(&k3, dt, k)?.radial_velocity();
        let rho = self
            .graph
            .rho()
            .iter()
            .enumerate()
            .map(|(i, r)| r + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
            .collect();
        let mut graph = self.graph.with_rho(rho)?;
        graph.enforce_regularity();
        Self::new(graph, k)
    }

    /// One guarded step; any failure is a rejection.
    fn try_step(&self, cfg: &FlowConfig, hyp: FlowHypothesis, dt: f64) -> Result<(Self, f64)> {
        let next = self.rk4(cfg.k, dt).map_err(|e| Error::StepRejected(e.to_string()))?;
        let margin = hyp.margin(&next.geo);
        if !(margin >= -cfg.tolerances.convexity_guard) {
            return Err(Error::StepRejected(format!("{} margin fell to {margin:.3e}", hyp.describe())));
        }
        Ok((next, margin))
    }
}

/// One explicit RK4 step of size `dt`.
pub fn step<G: Graph>(g: &G, cfg: &FlowConfig, dt: f64) -> Result<G> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::invalid(format!("step size must be positive, got {dt}")));
    }
    check_flow_order(g.dim(), cfg.k)?;
    let state = State::new(g.clone(), cfg.k)?;
    let hyp = FlowHypothesis::for_form(g.form());
    Ok(state.try_step(cfg, hyp, dt)?.0.graph)
}

/// Outcome of [`step_with_halving`].
#[derive(Clone, Debug)]
pub struct AcceptedStep<G> {
    pub graph: G,
    pub dt: f64,
    pub halvings: usize,
}

/// Try `dt`, halving on each rejection up to `cfg.max_halvings` times.
pub fn step_with_halving<G: Graph>(g: &G, cfg: &FlowConfig, dt: f64) -> Result<AcceptedStep<G>> {
    let mut dt = dt;
    let mut halvings = 0;
    loop {
        match step(g, cfg, dt) {
            Ok(graph) => return Ok(AcceptedStep { graph, dt, halvings }),
            Err(Error::StepRejected(msg)) => {
                if halvings == cfg.max_halvings {
                    return Err(Error::StepRejected(format!("gave up after {halvings} halvings: {msg}")));
                }
                halvings += 1;
                dt *= 0.5;
            }
            Err(e) => return Err(e),
        }
    }
}

/// Expected behaviour of a monitored series.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    NonIncreasing,
    NonDecreasing,
    /// recorded, not audited
    Informational,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Monitor {
    pub column: String,
    pub direction: Direction,
    /// why the direction is expected, or why it is not audited
    pub basis: String,
}

/// Weight-dependent functionals at one instant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedSample {
    /// `∫ f(Φ) H_k dμ`
    pub curvature: f64,
    /// `∫_Ω f(Φ) dv`
    pub bulk: f64,
    /// `∫ f(Φ) H_1 dμ + ε ∫_Ω f(Φ) dv`
    pub mean_with_bulk: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowSample {
    pub t: f64,
    /// last accepted step size (0 at the start)
    pub dt: f64,
    /// `W_0..W_k`
    pub quermass: Vec<f64>,
    /// `∫_Ω λ′ dv`
    pub dlambda_volume: f64,
    pub weighted: Vec<WeightedSample>,
    pub static_margin: f64,
    pub h_convex_margin: f64,
    pub strict_margin: f64,
    pub pinching: f64,
    pub oscillation: f64,
    pub max_speed: f64,
}

impl FlowSample {
    fn record<G: Graph>(state: &State<G>, t: f64, dt: f64, k: usize, weights: &[WeightFunction]) -> Result<Self> {
        let geo = &state.geo;
        let eps = geo.form.eps();
        let quermass = geo.quermassintegrals(k)?;
        let mut weighted = Vec::with_capacity(weights.len());
        let dlambda_volume = geo.bulk_integrals(&WeightFunction::constant())?.dlambda;
        for f in weights {
            let bulk = geo.bulk_integrals(f)?;
            weighted.push(WeightedSample {
                curvature: geo.weighted_curvature_integral(k, f)?,
                bulk: bulk.weighted,
                mean_with_bulk: geo.weighted_curvature_integral(1, f)? + eps * bulk.weighted,
            });
        }
        let convexity = geo.convexity();
        let roundness = geo.roundness();
        Ok(Self {
            t,
            dt,
            quermass,
            dlambda_volume,
            weighted,
            static_margin: convexity.static_margin,
            h_convex_margin: convexity.h_convex_margin,
            strict_margin: convexity.strict_margin,
            pinching: roundness.pinching,
            oscillation: roundness.oscillation,
            max_speed: state.max_speed(),
        })
    }

    /// Values in [`FlowRun::columns`] order.
    pub fn values(&self) -> Vec<f64> {
        let mut out = vec![self.t, self.dt];
        out.extend(&self.quermass);
        out.push(self.dlambda_volume);
        for w in &self.weighted {
            out.extend([w.curvature, w.bulk, w.mean_with_bulk]);
        }
        out.extend([
            self.static_margin,
            self.h_convex_margin,
            self.strict_margin,
            self.pinching,
            self.oscillation,
            self.max_speed,
        ]);
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Terminal {
    pub converged: bool,
    pub t: f64,
    /// area-weighted mean of `ρ` over the unit sphere at termination
    pub r_inf: f64,
    pub reason: String,
    pub steps: usize,
    pub rejected_steps: usize,
    /// first time the hypothesis margin went non-positive, if ever
    pub convexity_lost_at: Option<f64>,
}

/// A wrong-direction change beyond slack over one sample interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub column: String,
    pub t_start: f64,
    pub t_end: f64,
    /// change in the forbidden direction (positive)
    pub excess: f64,
    pub allowed: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FlowRun {
    pub config: FlowConfig,
    pub epsilon: i32,
    pub n: usize,
    pub representation: Representation,
    pub hypothesis: FlowHypothesis,
    /// admissibility of each monitored weight on the initial working range
    pub weight_admissible: Vec<bool>,
    pub monitors: Vec<Monitor>,
    pub samples: Vec<FlowSample>,
    pub terminal: Terminal,
    pub violations: Vec<Violation>,
}

/// Everything but the samples.
#[derive(Serialize)]
pub struct RunManifest<'a> {
    pub config: &'a FlowConfig,
    pub epsilon: i32,
    pub n: usize,
    pub representation: Representation,
    pub hypothesis: FlowHypothesis,
    pub weight_admissible: &'a [bool],
    pub monitors: &'a [Monitor],
    pub terminal: &'a Terminal,
    pub violations: &'a [Violation],
}

/// Column names shared by CSV output and the monitor table.
pub fn columns(k: usize, weights: &[WeightFunction]) -> Vec<String> {
    let mut out = vec!["t".to_string(), "dt".to_string()];
    out.extend((0..=k).map(|l| format!("W{l}")));
    out.push("dlambda_volume".into());
    for f in weights {
        let id = f.id();
        out.push(format!("fH{k}[{id}]"));
        out.push(format!("f_volume[{id}]"));
        out.push(format!("fH1_with_bulk[{id}]"));
    }
    out.extend(
        ["static_margin", "h_convex_margin", "strict_margin", "pinching", "oscillation", "max_speed"].map(String::from),
    );
    out
}

/// Expected directions for every column of a run of order `k`.
pub fn monitors(form: SpaceForm, k: usize, weights: &[WeightFunction], admissible: &[bool]) -> Vec<Monitor> {
    use Direction::*;
    let info = |column: String, basis: &str| Monitor { column, direction: Informational, basis: basis.into() };
    let mut out = vec![info("t".into(), "time"), info("dt".into(), "step size")];
    for l in 0..=k {
        let column = format!("W{l}");
        out.push(match form {
            SpaceForm::Hyperbolic if l >= 1 => Monitor {
                column,
                direction: NonDecreasing,
                basis: "variation formula with Newton-Maclaurin and Heintze-Karcher".into(),
            },
            SpaceForm::Euclidean => Monitor {
                column,
                direction: NonDecreasing,
                basis: "Newton-Maclaurin with the Minkowski formula (lambda' = 1)".into(),
            },
            _ => info(column, "no sign available for this quermassintegral"),
        });
    }
    out.push(Monitor {
        column: "dlambda_volume".into(),
        direction: NonDecreasing,
        basis: "Newton-Maclaurin with Heintze-Karcher".into(),
    });
    for (f, &ok) in weights.iter().zip(admissible) {
        let id = f.id();
        let cond = WeightCondition::for_flow(k, form.epsilon());
        let (curv, combined) = match (form, k) {
            (SpaceForm::Hyperbolic, k) if k >= 2 => (true, false),
            (SpaceForm::Hyperbolic, 1) | (SpaceForm::Spherical, 1) => (false, true),
            _ => (false, false),
        };
        let audited = |on: bool, column: String, what: &str| {
            if on && ok {
                Monitor { column, direction: NonIncreasing, basis: format!("{what}; weight admissible ({cond})") }
            } else if on {
                info(column, &format!("weight not admissible ({cond})"))
            } else {
                info(column, "no monotonicity statement for this order and space form")
            }
        };
        out.push(audited(curv, format!("fH{k}[{id}]"), "weighted k-th mean curvature integral"));
        out.push(info(format!("f_volume[{id}]"), "weighted volume"));
        out.push(audited(combined, format!("fH1_with_bulk[{id}]"), "weighted mean curvature integral with bulk term"));
    }
    for c in ["static_margin", "h_convex_margin", "strict_margin", "pinching", "oscillation", "max_speed"] {
        out.push(info(c.into(), "diagnostic"));
    }
    out
}

/// Working range `[Φ(ρ_min)·0.9, Φ(ρ_max)·1.1]` of a shape.
pub fn working_range(geo: &PointwiseGeometry) -> (f64, f64) {
    let (lo, hi) = geo.rho_range();
    (geo.form.phi(lo) * 0.9, geo.form.phi(hi) * 1.1)
}

/// Intervals on which `values` moves against `direction` by more than
/// `slack·max(|a|, |b|)`.
pub fn interval_violations(
    column: &str,
    times: &[f64],
    values: &[f64],
    direction: Direction,
    slack: f64,
) -> Vec<Violation> {
    let sign = match direction {
        Direction::NonDecreasing => 1.0,
        Direction::NonIncreasing => -1.0,
        Direction::Informational => return Vec::new(),
    };
    let mut out = Vec::new();
    for i in 1..values.len() {
        let (a, b) = (values[i - 1], values[i]);
        let excess = -sign * (b - a);
        let allowed = slack * a.abs().max(b.abs());
        if excess > allowed || !excess.is_finite() {
            out.push(Violation { column: column.into(), t_start: times[i - 1], t_end: times[i], excess, allowed });
        }
    }
    out
}

impl FlowRun {
    pub fn columns(&self) -> Vec<String> {
        columns(self.config.k, &self.config.weights)
    }

    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    /// One column of the sample table.
    pub fn series(&self, column: &str) -> Option<Vec<f64>> {
        let idx = self.columns().iter().position(|c| c == column)?;
        Some(self.samples.iter().map(|s| s.values()[idx]).collect())
    }

    /// All violations of the monitor table at the configured slack.
    pub fn find_violations(&self) -> Vec<Violation> {
        let times = self.times();
        let slack = self.config.tolerances.monotonicity_slack;
        self.monitors
            .iter()
            .filter(|m| m.direction != Direction::Informational)
            .flat_map(|m| {
                let values = self.series(&m.column).unwrap_or_default();
                interval_violations(&m.column, &times, &values, m.direction, slack)
            })
            .collect()
    }

    pub fn manifest(&self) -> RunManifest<'_> {
        RunManifest {
            config: &self.config,
            epsilon: self.epsilon,
            n: self.n,
            representation: self.representation,
            hypothesis: self.hypothesis,
            weight_admissible: &self.weight_admissible,
            monitors: &self.monitors,
            terminal: &self.terminal,
            violations: &self.violations,
        }
    }

    /// One row per sample, 17 significant digits.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.columns())?;
        for s in &self.samples {
            w.write_record(s.values().iter().map(|x| format!("{x:.16e}")))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Integrate the flow from `g` until the pinching drops below
/// `roundness_stop`, `t_max` is reached, or steps keep being rejected.
pub fn run<G: Graph>(g: &G, cfg: &FlowConfig) -> Result<FlowRun> {
    cfg.validate(g.dim())?;
    let k = cfg.k;
    let form = g.form();
    let hyp = FlowHypothesis::for_form(form);
    let initial = g.geometry()?;
    let margin0 = hyp.margin(&initial);
    if !(margin0 > 0.0) {
        return Err(Error::Hypothesis(format!("initial shape is not {} (margin {margin0:.3e})", hyp.describe())));
    }
    let mut state = State::new(g.clone(), k)?;
    let range = working_range(&state.geo);
    let cond = WeightCondition::for_flow(k, form.epsilon());
    let weight_admissible = cfg
        .weights
        .iter()
        .map(|f| admissibility(f, cond, range).map(|r| r.admissible))
        .collect::<Result<Vec<_>>>()?;

    let mut samples = vec![FlowSample::record(&state, 0.0, 0.0, k, &cfg.weights)?];
    let mut t = 0.0;
    let mut next_sample = cfg.sample_every;
    let mut dt_cap = cfg.dt_init;
    let mut steps = 0;
    let mut rejected = 0;
    let mut last_dt = 0.0;
    let mut convexity_lost_at = None;
    let stop = cfg.tolerances.roundness_stop;
    let time_eps = 1e-12 * cfg.t_max.max(1.0);

    let (converged, reason) = loop {
        if state.geo.roundness().pinching < stop {
            break (true, format!("pinching below {stop:e}"));
        }
        if t >= cfg.t_max - time_eps {
            break (false, format!("reached t_max = {}", cfg.t_max));
        }
        if steps >= cfg.max_steps {
            break (false, format!("step budget of {} exhausted", cfg.max_steps));
        }
        let mut dt = dt_cap
            .min(state.stable_dt(k, cfg.cfl))
            .min(next_sample - t)
            .min(cfg.t_max - t);
        let mut halvings = 0;
        let outcome = loop {
            match state.try_step(cfg, hyp, dt) {
                Ok(next) => break Ok(next),
                Err(_) if halvings < cfg.max_halvings => {
                    rejected += 1;
                    halvings += 1;
                    dt *= 0.5;
                }
                Err(e) => break Err(e),
            }
        };
        let (next, margin) = match outcome {
            Ok(x) => x,
            Err(e) => {
                convexity_lost_at.get_or_insert(t);
                break (false, format!("step at t = {t:.6e} rejected {halvings} times: {e}"));
            }
        };
        if halvings > 0 {
            dt_cap = dt;
        } else if dt == dt_cap {
            dt_cap = (2.0 * dt_cap).min(cfg.dt_init);
        }
        if margin <= 0.0 {
            convexity_lost_at.get_or_insert(t + dt);
        }
        state = next;
        t += dt;
        steps += 1;
        last_dt = dt;
        if (next_sample - t).abs() <= time_eps || t > next_sample {
            samples.push(FlowSample::record(&state, t, dt, k, &cfg.weights)?);
            next_sample += cfg.sample_every;
        }
    };
    if samples.last().is_some_and(|s| s.t < t) {
        samples.push(FlowSample::record(&state, t, last_dt, k, &cfg.weights)?);
    }
    let n = g.dim();
    let r_inf = state.geo.integrate_sphere(|p| p.rho) / unit_sphere_area(n);
    let mut run = FlowRun {
        config: cfg.clone(),
        epsilon: form.epsilon(),
        n,
        representation: g.representation(),
        hypothesis: hyp,
        monitors: monitors(form, k, &cfg.weights, &weight_admissible),
        weight_admissible,
        samples,
        terminal: Terminal { converged, t, r_inf, reason, steps, rejected_steps: rejected, convexity_lost_at },
        violations: Vec::new(),
    };
    run.violations = run.find_violations();
    Ok(run)
}

/// Finite-difference rate of a functional against its predicted rate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateResidual {
    pub finite_difference: f64,
    pub predicted: f64,
    /// `∫|integrand · F| dμ`
    pub scale: f64,
    /// `|fd − predicted| / max(|fd|, |predicted|, CANCELLATION_FLOOR · scale)`,
    /// 0 when both vanish
    pub relative: f64,
}

impl RateResidual {
    /// `magnitude` is `∫|integrand| dμ`, `scale` is `∫|integrand · F| dμ`.
    fn new(finite_difference: f64, predicted: f64, magnitude: f64, scale: f64) -> Self {
        let big = finite_difference.abs().max(predicted.abs());
        let relative = if big <= STATIONARY_FRACTION * magnitude {
            0.0
        } else {
            (finite_difference - predicted).abs() / big.max(CANCELLATION_FLOOR * scale)
        };
        Self { finite_difference, predicted, scale, relative }
    }
}

/// Centered difference of `q` along `ρ ± δ·F·v`.
fn directional_rate<G, Q>(state: &State<G>, delta: f64, q: Q) -> Result<f64>
where
    G: Graph,
    Q: Fn(&PointwiseGeometry) -> Result<f64>,
{
    let dir = state.radial_velocity();
    let at = |s: f64| -> Result<f64> {
        let rho = state.graph.rho().iter().zip(&dir).map(|(r, d)| r + s * d).collect();
        let mut g = state.graph.with_rho(rho)?;
        g.enforce_regularity();
        q(&g.geometry()?)
    };
    Ok((at(delta)? - at(-delta)?) / (2.0 * delta))
}

/// `dW_l/dt` against `∫ F H_l dμ` for `l = 0..=k`.
pub fn variational_residuals<G: Graph>(g: &G, k: usize, delta: f64) -> Result<Vec<RateResidual>> {
    let state = State::new(g.clone(), k)?;
    let weights: Vec<f64> = state.geo.nodes.iter().map(|p| p.area_weight).collect();
    (0..=k)
        .map(|l| {
            let fd = directional_rate(&state, delta, |geo| Ok(geo.quermassintegrals(l)?[l]))?;
            let terms = state.geo.nodes.iter().zip(&state.speed).map(|(p, f)| p.h[l] * f);
            let predicted: f64 = terms.clone().zip(&weights).map(|(x, w)| x * w).sum();
            let magnitude = state.geo.integrate(|p| p.h[l].abs());
            let scale: f64 = terms.zip(&weights).map(|(x, w)| x.abs() * w).sum();
            Ok(RateResidual::new(fd, predicted, magnitude, scale))
        })
        .collect()
}

/// Integrand `I` with `d/dt ∫ f(Φ) H_k dμ = ∫ I F dμ` under a normal
/// variation of speed `F`:
/// `(n−1−k) f H_{k+1} + (k+1) f′ u H_k − k f′ λ′ H_{k−1} − ε k f H_{k−1}
///  − f″ T_{k−1}(∇Φ, ∇Φ) / C(n−1, k)`.
pub fn weighted_rate_integrand(p: &NodeGeometry, n: usize, eps: f64, k: usize, f: &WeightFunction) -> f64 {
    let m = n - 1;
    let [fv, f1, f2] = f.eval(p.phi);
    let kf = k as f64;
    let upper = if k < m { (m - k) as f64 * fv * p.h[k + 1] } else { 0.0 };
    upper + (kf + 1.0) * f1 * p.u * p.h[k]
        - kf * f1 * p.dlambda * p.h[k - 1]
        - eps * kf * fv * p.h[k - 1]
        - f2 * p.newton_gradient_form(k - 1) / binomial(m, k)
}

/// Rate check for the weighted curvature functional of order `k`: for
/// `k ≥ 2` it is `∫ f(Φ) H_k dμ`, for `k = 1` it is
/// `∫ f(Φ) H_1 dμ + ε ∫_Ω f(Φ) dv`.
pub fn evolution_residual<G: Graph>(g: &G, k: usize, f: &WeightFunction, delta: f64) -> Result<RateResidual> {
    let state = State::new(g.clone(), k)?;
    let geo = &state.geo;
    let (n, eps) = (geo.n, geo.form.eps());
    let functional = |geo: &PointwiseGeometry| -> Result<f64> {
        let curvature = geo.weighted_curvature_integral(k, f)?;
        Ok(if k == 1 { curvature + eps * geo.bulk_integrals(f)?.weighted } else { curvature })
    };
    let integrand = |p: &NodeGeometry| {
        let base = weighted_rate_integrand(p, n, eps, k, f);
        if k == 1 {
            base + eps * f.value(p.phi)
        } else {
            base
        }
    };
    let fd = directional_rate(&state, delta, functional)?;
    let predicted: f64 = geo.nodes.iter().zip(&state.speed).map(|(p, s)| integrand(p) * s * p.area_weight).sum();
    let magnitude = geo.integrate(|p| integrand(p).abs());
    let scale: f64 = geo.nodes.iter().zip(&state.speed).map(|(p, s)| (integrand(p) * s).abs() * p.area_weight).sum();
    Ok(RateResidual::new(fd, predicted, magnitude, scale))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypersurface::{ProfileGraph, SphereGraph};

    fn bumpy(form: SpaceForm, n: usize, intervals: usize, amp: f64) -> ProfileGraph {
        ProfileGraph::from_fn(n, form, intervals, |t| 1.0 + amp * (2.0 * t).cos()).unwrap()
    }

    #[test]
    fn spheres_are_stationary() {
        for form in [SpaceForm::Hyperbolic, SpaceForm::Euclidean, SpaceForm::Spherical] {
            for n in 3..=5 {
                let geo = ProfileGraph::sphere(n, form, 512, 1.0).unwrap().geometry().unwrap();
                for k in 1..n {
                    let f = speed(&geo, k).unwrap();
                    assert!(f.iter().all(|x| x.abs() < 1e-12), "{form} n={n} k={k}");
                }
            }
        }
    }

    #[test]
    fn speed_rejects_order_and_cone() {
        let geo = ProfileGraph::sphere(3, SpaceForm::Hyperbolic, 16, 1.0).unwrap().geometry().unwrap();
        assert!(matches!(speed(&geo, 0), Err(Error::OrderOutOfRange { .. })));
        assert!(matches!(speed(&geo, 3), Err(Error::OrderOutOfRange { .. })));
        // a dumbbell has saddle regions where H_2 < 0
        let waist = ProfileGraph::from_fn(3, SpaceForm::Euclidean, 128, |t| 1.0 + 0.6 * t.cos().powi(2)).unwrap();
        let geo = waist.geometry().unwrap();
        assert!(matches!(speed(&geo, 2), Err(Error::ConeNodes { order: 2, .. })));
    }

    #[test]
    fn perturbed_speed_pushes_toward_roundness() {
        // ρ = 1 + 0.05 cos 2θ bulges at the poles, so the poles move inward
        let g = bumpy(SpaceForm::Hyperbolic, 3, 128, 0.05);
        let f = speed(&g.geometry().unwrap(), 1).unwrap();
        assert!(f[0] < 0.0 && f[64] > 0.0, "pole {} equator {}", f[0], f[64]);
    }

    #[test]
    fn sphere_step_is_identity() {
        let g = ProfileGraph::sphere(3, SpaceForm::Hyperbolic, 64, 1.0).unwrap();
        let next = step(&g, &FlowConfig::new(2), 1e-3).unwrap();
        for (a, b) in g.rho().iter().zip(next.rho()) {
            assert!((a - b).abs() <= 1e-14 * a.abs());
        }
    }

    #[test]
    fn huge_step_is_rejected_then_halved() {
        let g = bumpy(SpaceForm::Hyperbolic, 3, 64, 0.05);
        let cfg = FlowConfig::new(1);
        assert!(matches!(step(&g, &cfg, 10.0), Err(Error::StepRejected(_))));
        let accepted = step_with_halving(&g, &cfg, 10.0).unwrap();
        assert!(accepted.halvings > 0);
        assert!(accepted.dt < 10.0);
    }

    #[test]
    fn roundness_decreases_over_small_steps() {
        let mut g = bumpy(SpaceForm::Hyperbolic, 3, 64, 0.05);
        let cfg = FlowConfig::new(1);
        let mut prev = g.geometry().unwrap().roundness();
        for _ in 0..10 {
            g = step(&g, &cfg, 1e-3).unwrap();
            let now = g.geometry().unwrap().roundness();
            assert!(now.pinching < prev.pinching && now.oscillation < prev.oscillation);
            prev = now;
        }
    }

    #[test]
    fn sphere_run_converges_immediately() {
        let g = ProfileGraph::sphere(3, SpaceForm::Hyperbolic, 64, 1.0).unwrap();
        let cfg = FlowConfig::new(2).with_weights(vec![WeightFunction::power(2.0)]);
        let run = run(&g, &cfg).unwrap();
        assert!(run.terminal.converged);
        assert_eq!(run.terminal.steps, 0);
        assert!((run.terminal.r_inf - 1.0).abs() < 1e-10);
        assert!(run.violations.is_empty());
    }

    #[test]
    fn non_static_convex_start_is_rejected() {
        // elongated ellipsoid-like profile: flat sides break κ > u/λ′
        let g = ProfileGraph::from_fn(3, SpaceForm::Hyperbolic, 128, |t| 1.5 + 0.45 * (2.0 * t).cos()).unwrap();
        assert!(matches!(run(&g, &FlowConfig::new(1)), Err(Error::Hypothesis(_))));
    }

    #[test]
    fn hyperbolic_run_is_monotone_and_converges() {
        let g = bumpy(SpaceForm::Hyperbolic, 3, 64, 0.05);
        let cfg = FlowConfig::new(2).with_weights(vec![WeightFunction::power(2.0)]);
        let run = run(&g, &cfg).unwrap();
        assert!(run.terminal.converged, "{:?}", run.terminal);
        assert!(run.violations.is_empty(), "{:?}", run.violations);
        let times = run.times();
        assert!(times.windows(2).all(|w| w[1] > w[0]));
        assert!(run.samples.iter().all(|s| s.values().iter().all(|x| x.is_finite())));
        let audited = run.monitors.iter().filter(|m| m.direction != Direction::Informational).count();
        assert_eq!(audited, 4, "W1, W2, dlambda_volume and the weighted integral");
    }

    #[test]
    fn evolution_residual_vanishes_on_spheres() {
        let g = ProfileGraph::sphere(3, SpaceForm::Hyperbolic, 64, 1.0).unwrap();
        let r = evolution_residual(&g, 1, &WeightFunction::power(2.0), 1e-4).unwrap();
        assert_eq!(r.relative, 0.0);
    }

    #[test]
    fn evolution_residual_is_small_for_k1() {
        let g = bumpy(SpaceForm::Hyperbolic, 3, 512, 0.05);
        let r = evolution_residual(&g, 1, &WeightFunction::power(2.0), 1e-4).unwrap();
        assert!(r.relative <= 1e-3, "{r:?}");
    }

    #[test]
    fn euclidean_flow_preserves_top_quermassintegral() {
        // ∫H_k F = ∫H_{k−1} − ∫u H_k = 0 by the Minkowski formula
        for k in 1..=3 {
            let g = bumpy(SpaceForm::Euclidean, 4, 256, 0.05);
            let top = *variational_residuals(&g, k, 1e-4).unwrap().last().unwrap();
            assert!(top.predicted.abs() <= 1e-6 * top.scale, "{top:?}");
            assert!(top.finite_difference.abs() <= 1e-5 * top.scale, "{top:?}");
            assert!(top.relative <= 1e-3, "{top:?}");
        }
    }

    #[test]
    fn variational_residuals_are_small() {
        let g = bumpy(SpaceForm::Spherical, 4, 256, 0.05);
        for r in variational_residuals(&g, 2, 1e-4).unwrap() {
            assert!(r.relative <= 1e-3, "{r:?}");
        }
    }

    #[test]
    fn sphere_grid_step_matches_profile_step() {
        let form = SpaceForm::Hyperbolic;
        let prof = bumpy(form, 3, 64, 0.05);
        let grid = SphereGraph::from_fn(form, 64, 16, |t, _| 1.0 + 0.05 * (2.0 * t).cos()).unwrap();
        let cfg = FlowConfig::new(1);
        let (a, b) = (step(&prof, &cfg, 1e-4).unwrap(), step(&grid, &cfg, 1e-4).unwrap());
        for i in [0, 16, 32] {
            let da = a.rho()[i] - prof.rho()[i];
            let db = b.rho()[i * 16 + 3] - grid.rho()[i * 16 + 3];
            // the latitude-longitude stencil is second order: h² ≈ 2.4e-3
            assert!((da - db).abs() < 1e-2 * da.abs().max(1e-8), "i={i} {da} {db}");
        }
    }

    #[test]
    fn csv_and_manifest_serialize() {
        let g = bumpy(SpaceForm::Euclidean, 3, 32, 0.02);
        let cfg = FlowConfig { t_max: 0.1, ..FlowConfig::new(1) }.with_weights(vec![WeightFunction::power(2.0)]);
        let run = run(&g, &cfg).unwrap();
        let mut buf = Vec::new();
        run.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), run.samples.len() + 1);
        assert!(text.lines().next().unwrap().contains("fH1[pow:2]"));
        let manifest = serde_json::to_value(run.manifest()).unwrap();
        assert_eq!(manifest["config"]["weights"][0], "pow:2");
        let back: FlowConfig = serde_json::from_value(manifest["config"].clone()).unwrap();
        assert_eq!(back.weights[0].id(), "pow:2");
    }
}
