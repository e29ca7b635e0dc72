//! Multi-trial experiment execution and artifact layout.
//!
//! One bundle directory per run:
//!
//! ```text
//! out/
//!   features.csv              feature matrix used by every solver
//!   <solver>/trial_NN.csv     per-trial traces (shared seeds across solvers)
//!   <solver>/summary.csv      cross-trial aggregation per checkpoint
//!   <solver>/final.json       final iterates, objectives, policies
//!   manifest.json             config echo, seeds, sha256 per artifact
//! ```
//!
//! Trials are independent and run data-parallel under the `--jobs` bound;
//! aggregation is a serial reduce afterwards, so reruns with the same config
//! produce byte-identical artifacts.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::mdp::Mdp;
use crate::parallel;
use crate::penalty::run_penalty;
use crate::spd::{run_spd, MixtureOracle};
use crate::trace::RunTrace;

use super::config::ExperimentConfig;
use super::manifest::Manifest;
use super::summary::{aggregate, write_summary_csv};

#[derive(Debug)]
pub struct ExperimentOutput {
    pub out_dir: PathBuf,
    pub solvers: Vec<String>,
    /// Human-readable descriptions of failed trials, if any.
    pub failures: Vec<String>,
}

#[derive(Serialize)]
struct TrialFinal {
    seed: u64,
    theta_hat: Vec<f64>,
    final_objective: Option<f64>,
    final_avg_objective: Option<f64>,
    final_violation: Option<f64>,
    final_avg_violation: Option<f64>,
    clamp_events: usize,
    error: Option<String>,
    policy: Vec<Vec<f64>>,
}

fn final_record(trace: &RunTrace) -> TrialFinal {
    let last = trace.last();
    TrialFinal {
        seed: trace.seed,
        theta_hat: trace.theta_hat.iter().copied().collect(),
        final_objective: last.and_then(|r| r.objective),
        final_avg_objective: last.and_then(|r| r.avg_objective),
        final_violation: last.and_then(|r| r.violation),
        final_avg_violation: last.and_then(|r| r.avg_violation),
        clamp_events: trace.clamp_events,
        error: trace.error.clone(),
        policy: (0..trace.policy.n())
            .map(|s| (0..trace.policy.m()).map(|a| trace.policy.prob(s, a)).collect())
            .collect(),
    }
}

fn write_solver_artifacts(
    dir: &Path,
    label: &str,
    traces: &[RunTrace],
    manifest: &mut Manifest,
    failures: &mut Vec<String>,
) -> Result<()> {
    let solver_dir = dir.join(label);
    std::fs::create_dir_all(&solver_dir)?;
    for (k, trace) in traces.iter().enumerate() {
        let path = solver_dir.join(format!("trial_{k:02}.csv"));
        trace.write_csv(&path)?;
        manifest.add_file(dir, &path)?;
        if let Some(err) = &trace.error {
            failures.push(format!("{label} trial {k} (seed {}): {err}", trace.seed));
        }
    }
    let finals: Vec<TrialFinal> = traces.iter().map(final_record).collect();
    let final_path = solver_dir.join("final.json");
    std::fs::write(&final_path, serde_json::to_string_pretty(&finals)? + "\n")?;
    manifest.add_file(dir, &final_path)?;

    // aggregate only over clean trials with a shared checkpoint grid
    if traces.iter().all(|t| t.error.is_none()) {
        let records: Vec<_> = traces.iter().map(|t| t.records.clone()).collect();
        let rows = aggregate(&records)?;
        let summary_path = solver_dir.join("summary.csv");
        write_summary_csv(&rows, &summary_path)?;
        manifest.add_file(dir, &summary_path)?;
    }
    Ok(())
}

/// Run every configured solver over the shared seed set and write the bundle.
///
/// Partial artifacts are kept on failure; the error lists which trials broke.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let (mdp, base) = cfg.build_env()?;
    let fm = cfg.build_features(&mdp, &base)?;
    let oracle = MixtureOracle::new(&mdp, &fm)?;
    let out_dir = PathBuf::from(&cfg.out_dir);
    std::fs::create_dir_all(&out_dir)?;

    let mut manifest = Manifest::new(serde_json::to_value(cfg)?, cfg.base_seed, cfg.trials);
    let features_path = out_dir.join("features.csv");
    fm.write_csv(&features_path)?;
    manifest.add_file(&out_dir, &features_path)?;

    let mut solvers = Vec::new();
    let mut failures = Vec::new();

    parallel::with_jobs(cfg.jobs, || -> Result<()> {
        if let Some(spd_block) = &cfg.spd {
            let traces: Vec<RunTrace> = parallel::map_indexed(cfg.trials, |k| {
                let solver_cfg = spd_block.to_solver_config(mdp.gamma(), cfg.base_seed + k as u64);
                run_spd(&solver_cfg, &fm, &oracle, Some(&mdp))
            })
            .into_iter()
            .collect::<Result<_>>()?;
            write_solver_artifacts(&out_dir, "spd", &traces, &mut manifest, &mut failures)?;
            solvers.push("spd".to_string());
        }
        for block in &cfg.penalty {
            let label = block.label();
            let traces: Vec<RunTrace> = parallel::map_indexed(cfg.trials, |k| {
                let solver_cfg = block.to_solver_config(cfg.base_seed + k as u64);
                run_penalty(&solver_cfg, &fm, &mdp, Some(&oracle))
            })
            .into_iter()
            .collect::<Result<_>>()?;
            write_solver_artifacts(&out_dir, &label, &traces, &mut manifest, &mut failures)?;
            solvers.push(label);
        }
        Ok(())
    })?;

    manifest.write(&out_dir)?;

    if failures.is_empty() {
        Ok(ExperimentOutput { out_dir, solvers, failures })
    } else {
        Err(Error::Numeric(format!("{} trial(s) failed: {}", failures.len(), failures.join("; "))))
    }
}

/// Evaluation hook shared by the oracle and histogram subcommands: the
/// environment, base policies, and solver feature matrix for a config.
pub fn build_environment(cfg: &ExperimentConfig) -> Result<(Mdp, Vec<crate::mdp::RandomizedPolicy>, FeatureMatrix)> {
    let (mdp, base) = cfg.build_env()?;
    let fm = cfg.build_features(&mdp, &base)?;
    Ok((mdp, base, fm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::manifest;

    fn smoke_config(dir: &Path) -> ExperimentConfig {
        let toml_text = format!(
            r#"
trials = 2
base_seed = 11
out_dir = "{}"
oracle_grid = 10

[env]
kind = "queue"
L = 8
rho = 0.5
actions = [0.2, 0.4, 0.6, 0.8]
gamma = 0.9

[spd]
iterations = 40
stride = 10
radius = 50.0

[[penalty]]
iterations = 40
omega = 5.0
stride = 10
"#,
            dir.display()
        );
        toml::from_str(&toml_text).unwrap()
    }

    #[test]
    fn smoke_run_writes_bundle() {
        let tmp = tempfile::tempdir().unwrap();
        let out = tmp.path().join("bundle");
        let cfg = smoke_config(&out);
        let result = run_experiment(&cfg).unwrap();
        assert_eq!(result.solvers, vec!["spd", "penalty_w5"]);
        for solver in &result.solvers {
            assert!(out.join(solver).join("trial_00.csv").exists());
            assert!(out.join(solver).join("trial_01.csv").exists());
            assert!(out.join(solver).join("summary.csv").exists());
            assert!(out.join(solver).join("final.json").exists());
        }
        assert!(out.join("features.csv").exists());
        assert!(manifest::verify(&out).unwrap().is_empty());
    }

    #[test]
    fn reruns_are_byte_identical() {
        let tmp = tempfile::tempdir().unwrap();
        let out = tmp.path().join("bundle");
        let cfg = smoke_config(&out);
        run_experiment(&cfg).unwrap();
        let first = std::fs::read(out.join("spd/summary.csv")).unwrap();
        let first_trace = std::fs::read(out.join("penalty_w5/trial_01.csv")).unwrap();
        run_experiment(&cfg).unwrap();
        assert_eq!(std::fs::read(out.join("spd/summary.csv")).unwrap(), first);
        assert_eq!(std::fs::read(out.join("penalty_w5/trial_01.csv")).unwrap(), first_trace);
    }

    #[test]
    fn aggregation_matches_independent_pass_over_files() {
        let tmp = tempfile::tempdir().unwrap();
        let out = tmp.path().join("bundle");
        let cfg = smoke_config(&out);
        run_experiment(&cfg).unwrap();

        // recompute the summary from the trace files alone
        let records: Vec<_> = (0..2)
            .map(|k| {
                crate::trace::read_trace_csv(&out.join(format!("spd/trial_{k:02}.csv"))).unwrap()
            })
            .collect();
        let rows = aggregate(&records).unwrap();
        let text = std::fs::read_to_string(out.join("spd/summary.csv")).unwrap();
        let mut lines = text.lines().skip(1);
        for row in rows {
            let line = lines.next().unwrap();
            let fields: Vec<f64> =
                line.split(',').skip(1).map(|x| x.parse::<f64>().unwrap()).collect();
            assert!((fields[0] - row.objective.mean).abs() <= 1e-12);
            assert!((fields[1] - row.objective.sd).abs() <= 1e-12);
            assert!((fields[2] - row.objective.ci95).abs() <= 1e-12);
            assert!((fields[9] - row.avg_violation.mean).abs() <= 1e-12);
        }
    }
}
