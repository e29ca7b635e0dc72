//! Per-run iteration traces and their CSV form.
//!
//! Both solvers emit the same schema so downstream aggregation and plotting
//! treat them uniformly:
//!
//! ```text
//! t,objective,violation,avg_objective,avg_violation,lambda_norm
//! ```
//!
//! `objective` and `violation` columns are evaluation-only instrumentation;
//! they are filled when the run was given an evaluation model and left empty
//! otherwise.

use nalgebra::DVector;

use crate::error::Result;
use crate::mdp::RandomizedPolicy;

/// One strided checkpoint. `t` counts completed iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub t: usize,
    pub objective: Option<f64>,
    pub violation: Option<f64>,
    pub avg_objective: Option<f64>,
    pub avg_violation: Option<f64>,
    pub lambda_norm: f64,
}

/// Outcome of one solver run.
#[derive(Debug, Clone)]
pub struct RunTrace {
    pub records: Vec<TraceRecord>,
    /// Weighted running average of the primal iterates.
    pub theta_hat: DVector<f64>,
    /// Weighted running average of the dual iterates (primal-dual runs only).
    pub lambda_hat: Option<DVector<f64>>,
    /// Policy extracted from `theta_hat`.
    pub policy: RandomizedPolicy,
    /// Times an iterate had to be pulled off the geometry boundary.
    pub clamp_events: usize,
    /// Error that aborted the run, when iteration failed mid-way; the records
    /// cover everything up to the failure.
    pub error: Option<String>,
    pub seed: u64,
}

pub const TRACE_HEADER: [&str; 6] =
    ["t", "objective", "violation", "avg_objective", "avg_violation", "lambda_norm"];

fn field(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

impl RunTrace {
    /// Default checkpoint stride for a horizon: about a thousand records.
    pub fn default_stride(iterations: usize) -> usize {
        (iterations / 1000).max(1)
    }

    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(TRACE_HEADER)?;
        for r in &self.records {
            w.write_record(&[
                r.t.to_string(),
                field(r.objective),
                field(r.violation),
                field(r.avg_objective),
                field(r.avg_violation),
                format!("{}", r.lambda_norm),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Final checkpoint, if any records were taken.
    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }
}

/// Read records back from a trace CSV (used by aggregation verification).
pub fn read_trace_csv(path: &std::path::Path) -> Result<Vec<TraceRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let parse_opt = |i: usize| -> Option<f64> {
            let s = rec.get(i).unwrap_or("");
            if s.is_empty() {
                None
            } else {
                s.parse().ok()
            }
        };
        out.push(TraceRecord {
            t: rec.get(0).unwrap_or("0").parse().unwrap_or(0),
            objective: parse_opt(1),
            violation: parse_opt(2),
            avg_objective: parse_opt(3),
            avg_violation: parse_opt(4),
            lambda_norm: rec.get(5).unwrap_or("0").parse().unwrap_or(0.0),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stride_covers_horizon() {
        assert_eq!(RunTrace::default_stride(1), 1);
        assert_eq!(RunTrace::default_stride(999), 1);
        assert_eq!(RunTrace::default_stride(123_456), 123);
    }

    #[test]
    fn csv_roundtrip_preserves_records() {
        let records = vec![
            TraceRecord {
                t: 10,
                objective: Some(1.25),
                violation: Some(0.0),
                avg_objective: Some(1.5),
                avg_violation: Some(0.125),
                lambda_norm: 2.0,
            },
            TraceRecord {
                t: 20,
                objective: None,
                violation: None,
                avg_objective: None,
                avg_violation: None,
                lambda_norm: 0.5,
            },
        ];
        let trace = RunTrace {
            records: records.clone(),
            theta_hat: DVector::from_vec(vec![0.5, 0.5]),
            lambda_hat: None,
            policy: RandomizedPolicy::uniform(1, 2),
            clamp_events: 0,
            error: None,
            seed: 0,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        trace.write_csv(&path).unwrap();
        let back = read_trace_csv(&path).unwrap();
        assert_eq!(back, records);
    }
}
