//! Hypersurface geometry in space forms, a locally constrained inverse
//! curvature flow, and numerical checks of weighted curvature inequalities.

pub mod cli;
pub mod error;
pub mod flow;
pub mod hypersurface;
pub mod inequalities;
pub mod quadrature;
pub mod spaceform;
pub mod symfunc;

pub use error::{Error, Result};
pub use spaceform::SpaceForm;
