//! Cross-trial aggregation at shared checkpoints.

use crate::error::{Error, Result};
use crate::trace::TraceRecord;

/// Mean, sample standard deviation, and normal-approximation 95% half-width
/// (`1.96 sd / sqrt(trials)`) for objective and violation columns at one
/// checkpoint, over instantaneous and running-average iterates.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub t: usize,
    pub objective: ColumnStats,
    pub violation: ColumnStats,
    pub avg_objective: ColumnStats,
    pub avg_violation: ColumnStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColumnStats {
    pub mean: f64,
    pub sd: f64,
    pub ci95: f64,
}

const CI95_Z: f64 = 1.96;

fn stats(values: &[f64]) -> ColumnStats {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    ColumnStats { mean, sd, ci95: CI95_Z * sd / n.sqrt() }
}

/// Aggregate per-trial traces; all trials must share the checkpoint grid and
/// carry evaluation columns.
pub fn aggregate(trials: &[Vec<TraceRecord>]) -> Result<Vec<SummaryRow>> {
    let first = trials.first().ok_or_else(|| Error::Invalid("no trials to aggregate".into()))?;
    let checkpoints: Vec<usize> = first.iter().map(|r| r.t).collect();
    for (k, trial) in trials.iter().enumerate() {
        let ts: Vec<usize> = trial.iter().map(|r| r.t).collect();
        if ts != checkpoints {
            return Err(Error::Invalid(format!("trial {k} has a different checkpoint grid")));
        }
    }
    let pick = |f: fn(&TraceRecord) -> Option<f64>, row: usize| -> Result<Vec<f64>> {
        trials
            .iter()
            .map(|trial| {
                f(&trial[row]).ok_or_else(|| {
                    Error::Invalid("trace lacks evaluation columns; run with an evaluator".into())
                })
            })
            .collect()
    };
    let mut out = Vec::with_capacity(checkpoints.len());
    for (row, &t) in checkpoints.iter().enumerate() {
        out.push(SummaryRow {
            t,
            objective: stats(&pick(|r| r.objective, row)?),
            violation: stats(&pick(|r| r.violation, row)?),
            avg_objective: stats(&pick(|r| r.avg_objective, row)?),
            avg_violation: stats(&pick(|r| r.avg_violation, row)?),
        });
    }
    Ok(out)
}

pub const SUMMARY_HEADER: [&str; 13] = [
    "t",
    "objective_mean",
    "objective_sd",
    "objective_ci95",
    "violation_mean",
    "violation_sd",
    "violation_ci95",
    "avg_objective_mean",
    "avg_objective_sd",
    "avg_objective_ci95",
    "avg_violation_mean",
    "avg_violation_sd",
    "avg_violation_ci95",
];

pub fn write_summary_csv(rows: &[SummaryRow], path: &std::path::Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SUMMARY_HEADER)?;
    for r in rows {
        let mut rec = vec![r.t.to_string()];
        for col in [&r.objective, &r.violation, &r.avg_objective, &r.avg_violation] {
            rec.push(format!("{}", col.mean));
            rec.push(format!("{}", col.sd));
            rec.push(format!("{}", col.ci95));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
