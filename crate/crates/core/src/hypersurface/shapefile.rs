//! JSON shape files and a representation-agnostic graph wrapper.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Graph, PointwiseGeometry, ProfileGraph, SphereGraph};
use crate::error::{Error, Result};
use crate::spaceform::SpaceForm;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Representation {
    Profile,
    Sphere,
}

/// On-disk form of a graph. Floats use shortest round-trip formatting, so a
/// write/read cycle is bit-exact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeFile {
    pub epsilon: i32,
    pub n: usize,
    pub representation: Representation,
    /// polar intervals (`N` for profiles, `N_θ` for sphere grids)
    #[serde(rename = "N")]
    pub resolution: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_phi: Option<usize>,
    pub rho: Vec<f64>,
    #[serde(default)]
    pub metadata: serde_json::Value,
}

impl ShapeFile {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn into_graph(self) -> Result<AnyGraph> {
        let form = SpaceForm::from_epsilon(self.epsilon)?;
        match self.representation {
            Representation::Profile => {
                if self.rho.len() != self.resolution + 1 {
                    return Err(Error::invalid(format!(
                        "profile shape declares N = {} but has {} values",
                        self.resolution,
                        self.rho.len()
                    )));
                }
                Ok(AnyGraph::Profile(ProfileGraph::new(self.n, form, self.rho)?))
            }
            Representation::Sphere => {
                if self.n != 3 {
                    return Err(Error::invalid("sphere-grid shapes require n = 3"));
                }
                let n_phi = self.n_phi.ok_or_else(|| Error::invalid("sphere-grid shape is missing n_phi"))?;
                Ok(AnyGraph::Sphere(SphereGraph::new(form, self.resolution, n_phi, self.rho)?))
            }
        }
    }
}

#[derive(Clone, Debug)]
pub enum AnyGraph {
    Profile(ProfileGraph),
    Sphere(SphereGraph),
}

macro_rules! delegate {
    ($self:ident, $g:ident => $e:expr) => {
        match $self {
            AnyGraph::Profile($g) => $e,
            AnyGraph::Sphere($g) => $e,
        }
    };
}

impl Graph for AnyGraph {
    fn form(&self) -> SpaceForm {
        delegate!(self, g => g.form())
    }

    fn dim(&self) -> usize {
        delegate!(self, g => g.dim())
    }

    fn rho(&self) -> &[f64] {
        delegate!(self, g => g.rho())
    }

    fn with_rho(&self, rho: Vec<f64>) -> Result<Self> {
        Ok(match self {
            AnyGraph::Profile(g) => AnyGraph::Profile(g.with_rho(rho)?),
            AnyGraph::Sphere(g) => AnyGraph::Sphere(g.with_rho(rho)?),
        })
    }

    fn geometry(&self) -> Result<PointwiseGeometry> {
        delegate!(self, g => g.geometry())
    }

    fn grid_spacing(&self) -> f64 {
        delegate!(self, g => g.grid_spacing())
    }

    fn enforce_regularity(&mut self) {
        delegate!(self, g => g.enforce_regularity())
    }

    fn representation(&self) -> Representation {
        delegate!(self, g => g.representation())
    }

    fn to_shape_file(&self, metadata: serde_json::Value) -> ShapeFile {
        delegate!(self, g => g.to_shape_file(metadata))
    }
}
