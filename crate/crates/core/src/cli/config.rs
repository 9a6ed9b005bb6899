//! Experiment configuration: a TOML document whose keys are the field names
//! below, overridden by command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::corpus::{CorpusSpec, GridSpec};
use crate::error::{Error, Result};
use crate::flow::{FlowConfig, FlowTolerances, DEFAULT_CFL};
use crate::hypersurface::{Representation, DEFAULT_N_PHI};
use crate::inequalities::{GapTolerances, WeightFunction};
use crate::spaceform::SpaceForm;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub gap: f64,
    pub equality: f64,
    pub monotonicity_slack: f64,
    pub roundness_stop: f64,
    pub convexity_guard: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        let g = GapTolerances::default();
        let f = FlowTolerances::default();
        Self {
            gap: g.gap,
            equality: g.equality,
            monotonicity_slack: f.monotonicity_slack,
            roundness_stop: f.roundness_stop,
            convexity_guard: f.convexity_guard,
        }
    }
}

impl Tolerances {
    /// Apply `key=value[,key=value…]` overrides.
    pub fn apply_overrides(&mut self, text: &str) -> Result<()> {
        for item in text.split(',').filter(|s| !s.trim().is_empty()) {
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("tolerance override {item:?} is not key=value")))?;
            let v: f64 = value
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad tolerance value {value:?}")))?;
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("tolerance {key} must be positive, got {v}")));
            }
            match key.trim() {
                "gap" => self.gap = v,
                "equality" => self.equality = v,
                "monotonicity_slack" => self.monotonicity_slack = v,
                "roundness_stop" => self.roundness_stop = v,
                "convexity_guard" => self.convexity_guard = v,
                other => return Err(Error::Config(format!("unknown tolerance {other:?}"))),
            }
        }
        Ok(())
    }

    pub fn gap_tolerances(&self) -> GapTolerances {
        GapTolerances { gap: self.gap, equality: self.equality, ..GapTolerances::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowSettings {
    pub dt_init: f64,
    pub cfl: f64,
    pub t_max: f64,
    pub sample_every: f64,
    pub max_halvings: usize,
}

impl Default for FlowSettings {
    fn default() -> Self {
        let f = FlowConfig::default();
        Self { dt_init: f.dt_init, cfl: DEFAULT_CFL, t_max: f.t_max, sample_every: f.sample_every, max_halvings: f.max_halvings }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub epsilon: i32,
    pub n: usize,
    pub representation: Representation,
    /// polar intervals; `None` lets each command pick its own default
    pub resolution: Option<usize>,
    pub n_phi: usize,
    pub k: usize,
    /// quermassintegral index; `None` sweeps `0..=k`
    pub l: Option<usize>,
    /// registry ids or weight-file paths
    pub weights: Vec<String>,
    pub corpus: CorpusSpec,
    pub tolerances: Tolerances,
    pub flow: FlowSettings,
    pub output: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            epsilon: -1,
            n: 3,
            representation: Representation::Profile,
            resolution: None,
            n_phi: DEFAULT_N_PHI,
            k: 2,
            l: None,
            weights: vec!["pow:2".into()],
            corpus: CorpusSpec::default(),
            tolerances: Tolerances::default(),
            flow: FlowSettings::default(),
            output: PathBuf::from("results"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn form(&self) -> Result<SpaceForm> {
        SpaceForm::from_epsilon(self.epsilon)
    }

    /// Check that the configuration resolves into valid module configs.
    pub fn validate(&self) -> Result<()> {
        self.form()?;
        if self.n < 3 {
            return Err(Error::Config(format!("n must be at least 3, got {}", self.n)));
        }
        if self.representation == Representation::Sphere && self.n != 3 {
            return Err(Error::Config("sphere-grid representation requires n = 3".into()));
        }
        if self.k == 0 || self.k > self.n - 1 {
            return Err(Error::Config(format!("k must lie in 1..={}, got {}", self.n - 1, self.k)));
        }
        if let Some(l) = self.l.filter(|&l| l > self.k) {
            return Err(Error::Config(format!("l must not exceed k = {}, got {l}", self.k)));
        }
        self.corpus.validate()?;
        self.weight_functions()?;
        self.flow_config()?.validate(self.n)
    }

    pub fn weight_functions(&self) -> Result<Vec<WeightFunction>> {
        self.weights.iter().map(|w| WeightFunction::parse(w)).collect()
    }

    pub fn grid(&self, default_resolution: usize) -> GridSpec {
        let resolution = self.resolution.unwrap_or(default_resolution);
        match self.representation {
            Representation::Profile => GridSpec::profile(resolution),
            Representation::Sphere => GridSpec::sphere(resolution, self.n_phi),
        }
    }

    pub fn flow_config(&self) -> Result<FlowConfig> {
        Ok(FlowConfig {
            k: self.k,
            dt_init: self.flow.dt_init,
            cfl: self.flow.cfl,
            t_max: self.flow.t_max,
            sample_every: self.flow.sample_every,
            max_halvings: self.flow.max_halvings,
            tolerances: FlowTolerances {
                monotonicity_slack: self.tolerances.monotonicity_slack,
                roundness_stop: self.tolerances.roundness_stop,
                convexity_guard: self.tolerances.convexity_guard,
            },
            weights: self.weight_functions()?,
            ..FlowConfig::default()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let mut cfg = ExperimentConfig { epsilon: 1, resolution: Some(128), ..ExperimentConfig::default() };
        cfg.corpus.count = 7;
        let text = cfg.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_documents_use_defaults() {
        let cfg = ExperimentConfig::from_toml("epsilon = 1\n[corpus]\ncount = 4\n").unwrap();
        assert_eq!(cfg.epsilon, 1);
        assert_eq!(cfg.corpus.count, 4);
        assert_eq!(cfg.corpus.amplitude, CorpusSpec::default().amplitude);
        assert!(ExperimentConfig::from_toml("epsilom = 1").is_err());
    }

    #[test]
    fn validation() {
        assert!(ExperimentConfig::default().validate().is_ok());
        let bad = [
            ExperimentConfig { epsilon: 2, ..Default::default() },
            ExperimentConfig { k: 3, ..Default::default() },
            ExperimentConfig { l: Some(3), ..Default::default() },
            ExperimentConfig { n: 4, representation: Representation::Sphere, ..Default::default() },
            ExperimentConfig { weights: vec!["nope".into()], ..Default::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn tolerance_overrides() {
        let mut t = Tolerances::default();
        t.apply_overrides("gap=1e-7,roundness_stop=1e-4").unwrap();
        assert_eq!((t.gap, t.roundness_stop), (1e-7, 1e-4));
        assert!(t.apply_overrides("gap=-1").is_err());
        assert!(t.apply_overrides("speed=1").is_err());
    }
}
