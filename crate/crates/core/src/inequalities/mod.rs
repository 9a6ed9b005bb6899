//! Weighted curvature inequalities: weights, gap verification and
//! monotonicity audits along the flow.

pub mod audit;
pub mod gap;
pub mod weight;

pub use audit::{monotonicity_audit, write_audit_csv, AuditReport, AuditVerdict};
pub use gap::{
    verify_hyperbolic_minkowski, verify_power_weight, verify_spherical_minkowski, verify_volume_comparison,
    verify_weighted_quermass, write_gap_csv, GapReport, GapTolerances, Inequality,
};
pub use weight::{admissibility, AdmissibilityReport, Prefactor, WeightCondition, WeightFunction};
