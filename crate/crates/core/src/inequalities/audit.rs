//! Per-series verdicts on a completed flow run.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::flow::{interval_violations, Direction, FlowRun};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditVerdict {
    pub column: String,
    pub direction: Direction,
    pub basis: String,
    /// largest wrong-direction change over one interval, relative to the
    /// larger endpoint magnitude; 0 when the series never moves the wrong way
    pub max_violation: f64,
    /// interval where `max_violation` occurs
    pub worst_interval: Option<(f64, f64)>,
    /// number of intervals beyond slack
    pub failures: usize,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub slack: f64,
    pub converged: bool,
    pub verdicts: Vec<AuditVerdict>,
    pub passed: bool,
}

/// Check every audited series of `run` against its expected direction.
pub fn monotonicity_audit(run: &FlowRun) -> AuditReport {
    let slack = run.config.tolerances.monotonicity_slack;
    let times = run.times();
    let verdicts: Vec<AuditVerdict> = run
        .monitors
        .iter()
        .filter(|m| m.direction != Direction::Informational)
        .map(|m| {
            let values = run.series(&m.column).unwrap_or_default();
            let sign = if m.direction == Direction::NonDecreasing { 1.0 } else { -1.0 };
            let mut worst = (0.0_f64, None);
            for i in 1..values.len() {
                let (a, b) = (values[i - 1], values[i]);
                let scale = a.abs().max(b.abs()).max(f64::MIN_POSITIVE);
                let rel = -sign * (b - a) / scale;
                if rel > worst.0 {
                    worst = (rel, Some((times[i - 1], times[i])));
                }
            }
            let failures = interval_violations(&m.column, &times, &values, m.direction, slack).len();
            AuditVerdict {
                column: m.column.clone(),
                direction: m.direction,
                basis: m.basis.clone(),
                max_violation: worst.0,
                worst_interval: worst.1,
                failures,
                passed: failures == 0,
            }
        })
        .collect();
    let passed = verdicts.iter().all(|v| v.passed);
    AuditReport { slack, converged: run.terminal.converged, verdicts, passed }
}

impl AuditReport {
    /// One row per audited series.
    pub fn write_csv<W: Write>(&self, label: &str, out: W) -> Result<()> {
        write_audit_csv(&[(label, self)], out)
    }
}

/// Audits of several runs in one table, one row per audited series.
pub fn write_audit_csv<W: Write>(reports: &[(&str, &AuditReport)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["run", "column", "direction", "max_violation", "t_start", "t_end", "failures", "passed"])?;
    for (label, report) in reports {
        for v in &report.verdicts {
            let (a, b) = v.worst_interval.map_or((String::new(), String::new()), |(a, b)| (format!("{a:.16e}"), format!("{b:.16e}")));
            w.write_record([
                label.to_string(),
                v.column.clone(),
                serde_json::to_value(v.direction)?.as_str().unwrap_or_default().to_string(),
                format!("{:.16e}", v.max_violation),
                a,
                b,
                v.failures.to_string(),
                v.passed.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{run, FlowConfig};
    use crate::hypersurface::ProfileGraph;
    use crate::inequalities::WeightFunction;
    use crate::SpaceForm;

    #[test]
    fn sphere_run_passes_trivially() {
        let g = ProfileGraph::sphere(3, SpaceForm::Hyperbolic, 32, 1.0).unwrap();
        let cfg = FlowConfig::new(2).with_weights(vec![WeightFunction::power(2.0)]);
        let report = monotonicity_audit(&run(&g, &cfg).unwrap());
        assert!(report.passed && report.converged);
        assert!(report.verdicts.iter().all(|v| v.max_violation == 0.0));
    }

    #[test]
    fn spherical_run_passes() {
        let g = ProfileGraph::from_fn(3, SpaceForm::Spherical, 64, |t| 0.6 * (1.0 + 0.04 * (2.0 * t).cos())).unwrap();
        let cfg = FlowConfig::new(1).with_weights(vec![WeightFunction::power(2.0), WeightFunction::constant()]);
        let run = run(&g, &cfg).unwrap();
        let report = monotonicity_audit(&run);
        assert!(report.passed && report.converged, "{report:?}");
        // ∫_Ω λ′ and the two combined weighted functionals
        assert_eq!(report.verdicts.len(), 3);
        let mut buf = Vec::new();
        report.write_csv("s3", &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 4);
    }

    #[test]
    fn tampered_series_fails_with_interval() {
        let g = ProfileGraph::from_fn(3, SpaceForm::Hyperbolic, 32, |t| 1.0 + 0.03 * (2.0 * t).cos()).unwrap();
        let cfg = FlowConfig { t_max: 0.5, ..FlowConfig::new(1) };
        let mut run = run(&g, &cfg).unwrap();
        let last = run.samples.len() - 1;
        run.samples[last].quermass[1] *= 0.5;
        let report = monotonicity_audit(&run);
        assert!(!report.passed);
        let bad = report.verdicts.iter().find(|v| v.column == "W1").unwrap();
        assert_eq!(bad.failures, 1);
        assert_eq!(bad.worst_interval.unwrap().1, run.samples[last].t);
    }
}
