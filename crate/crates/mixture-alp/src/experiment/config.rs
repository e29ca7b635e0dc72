//! Experiment configuration: one human-editable file (TOML or JSON by
//! extension) describing the environment, the solver blocks, and the trial
//! layout.

use serde::{Deserialize, Serialize};

use crate::bregman::GeometryKind;
use crate::error::{Error, Result};
use crate::features::{build_features_empirical, build_features_exact, FeatureMatrix};
use crate::mdp::{Mdp, RandomizedPolicy};
use crate::penalty::{PenaltyConfig, PenaltyGradientMode};
use crate::queue::{build_queue_mdp, make_base_policies, QueueSpec};
use crate::spd::{BetaSchedule, DualMode, EtaSchedule, SpdConfig};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Number of trials (seeds) per solver block.
    pub trials: usize,
    /// Trial `k` runs with seed `base_seed + k`, shared across solvers.
    pub base_seed: u64,
    /// Output directory for traces, summaries, and the manifest.
    pub out_dir: String,
    /// Simplex-grid resolution for the oracle subcommand.
    #[serde(default = "default_grid")]
    pub oracle_grid: usize,
    /// Worker bound for concurrent trials; 0 lets the runtime decide.
    #[serde(default)]
    pub jobs: usize,
    pub env: EnvConfig,
    #[serde(default)]
    pub features: FeaturesConfig,
    #[serde(default)]
    pub spd: Option<SpdBlock>,
    #[serde(default)]
    pub penalty: Vec<PenaltyBlock>,
}

fn default_grid() -> usize {
    200
}

/// Environment: the built-in queue or an MDP loaded from JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EnvConfig {
    Queue(QueueSpec),
    MdpJson {
        path: String,
        /// State-independent base-policy rows (one per policy).
        base_policies: Vec<Vec<f64>>,
    },
}

/// Feature-matrix construction for the solvers and tooling.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeaturesConfig {
    #[serde(default)]
    pub mode: FeatureModeConfig,
    /// Rollout length for empirical construction and histograms.
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_horizon() -> usize {
    1_000_000
}

impl Default for FeaturesConfig {
    fn default() -> Self {
        Self { mode: FeatureModeConfig::Exact, horizon: default_horizon(), seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureModeConfig {
    #[default]
    Exact,
    Empirical,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpdBlock {
    pub iterations: usize,
    /// `"inv-sqrt"` or a constant step.
    #[serde(default = "default_eta")]
    pub eta: EtaSchedule,
    /// `"t-quarter"` or an explicit value (required meaning for gamma = 1).
    #[serde(default = "default_beta")]
    pub beta: BetaSchedule,
    #[serde(default = "default_geometry")]
    pub geometry: GeometryKind,
    #[serde(default = "default_radius")]
    pub radius: f64,
    #[serde(default)]
    pub theta0: Option<Vec<f64>>,
    #[serde(default)]
    pub dual_mode: DualMode,
    #[serde(default = "default_true")]
    pub normalize_costs: bool,
    #[serde(default)]
    pub stride: Option<usize>,
}

fn default_eta() -> EtaSchedule {
    EtaSchedule::INV_SQRT
}

fn default_beta() -> BetaSchedule {
    BetaSchedule::T_QUARTER
}

fn default_geometry() -> GeometryKind {
    GeometryKind::Ball
}

fn default_radius() -> f64 {
    100.0
}

fn default_true() -> bool {
    true
}

impl SpdBlock {
    pub fn to_solver_config(&self, gamma: f64, seed: u64) -> SpdConfig {
        SpdConfig {
            iterations: self.iterations,
            eta: self.eta,
            beta: self.beta,
            geometry: self.geometry,
            radius: self.radius,
            theta0: self.theta0.clone(),
            dual_mode: self.dual_mode,
            normalize_costs: self.normalize_costs,
            gamma,
            stride: self.stride,
            seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenaltyBlock {
    pub iterations: usize,
    /// Constant step; defaults to `1/iterations`.
    #[serde(default)]
    pub eta: Option<f64>,
    pub omega: f64,
    #[serde(default = "default_radius")]
    pub radius: f64,
    #[serde(default)]
    pub theta0: Option<Vec<f64>>,
    #[serde(default)]
    pub gradient_mode: PenaltyGradientMode,
    #[serde(default)]
    pub stride: Option<usize>,
}

impl PenaltyBlock {
    pub fn to_solver_config(&self, seed: u64) -> PenaltyConfig {
        PenaltyConfig {
            iterations: self.iterations,
            eta: self.eta,
            omega: self.omega,
            radius: self.radius,
            theta0: self.theta0.clone(),
            gradient_mode: self.gradient_mode,
            stride: self.stride,
            seed,
        }
    }

    /// Directory label, distinguishing sweep members by their penalty factor.
    pub fn label(&self) -> String {
        format!("penalty_w{}", self.omega)
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.spd.is_none() && self.penalty.is_empty() {
            return Err(Error::Config("need at least one solver block ([spd] or [[penalty]])".into()));
        }
        if self.oracle_grid < 2 {
            return Err(Error::Config("oracle_grid must be at least 2".into()));
        }
        if let EnvConfig::Queue(spec) = &self.env {
            spec.validate()?;
        }
        Ok(())
    }

    /// Parse from a path; the syntax flavor follows the file extension.
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text)?,
            Some("toml") | None => toml::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
            Some(other) => {
                return Err(Error::Config(format!("unknown config extension {other:?}")));
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Materialize the environment: the model and its base policies.
    pub fn build_env(&self) -> Result<(Mdp, Vec<RandomizedPolicy>)> {
        match &self.env {
            EnvConfig::Queue(spec) => {
                let mdp = build_queue_mdp(spec)?;
                let (p1, p2) = make_base_policies(spec)?;
                Ok((mdp, vec![p1, p2]))
            }
            EnvConfig::MdpJson { path, base_policies } => {
                let mdp = Mdp::read_json(std::path::Path::new(path))?;
                if base_policies.is_empty() {
                    return Err(Error::Config("mdp-json env needs at least one base policy".into()));
                }
                let base = base_policies
                    .iter()
                    .map(|row| RandomizedPolicy::state_independent(mdp.n(), row))
                    .collect::<Result<Vec<_>>>()?;
                Ok((mdp, base))
            }
        }
    }

    /// Build the feature matrix the solvers consume.
    pub fn build_features(&self, mdp: &Mdp, base: &[RandomizedPolicy]) -> Result<FeatureMatrix> {
        match self.features.mode {
            FeatureModeConfig::Exact => build_features_exact(mdp, base),
            FeatureModeConfig::Empirical => {
                build_features_empirical(mdp, base, self.features.horizon, self.features.seed)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const QUEUE_TOML: &str = r#"
trials = 3
base_seed = 7
out_dir = "out"
oracle_grid = 50

[env]
kind = "queue"
L = 20
rho = 0.5
actions = [0.2, 0.4, 0.6, 0.8]
gamma = 0.95

[spd]
iterations = 100
eta = "inv-sqrt"
beta = "t-quarter"
geometry = "ball"
radius = 100.0

[[penalty]]
iterations = 100
omega = 10.0
gradient_mode = "sampled"
"#;

    #[test]
    fn toml_parses_and_mirrors_to_json() {
        let cfg: ExperimentConfig = toml::from_str(QUEUE_TOML).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.trials, 3);
        assert!(matches!(cfg.env, EnvConfig::Queue(ref q) if q.buffer == 20));
        assert_eq!(cfg.spd.as_ref().unwrap().eta, EtaSchedule::INV_SQRT);
        assert_eq!(cfg.penalty.len(), 1);
        assert_eq!(cfg.penalty[0].label(), "penalty_w10");

        // the same structure round-trips through the JSON mirror
        let json = serde_json::to_string_pretty(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&json).unwrap();
        back.validate().unwrap();
        assert_eq!(back.trials, cfg.trials);
        assert_eq!(back.penalty[0].omega, 10.0);
    }

    #[test]
    fn constant_eta_parses_from_number() {
        let toml_text = QUEUE_TOML.replace("eta = \"inv-sqrt\"", "eta = 0.001");
        let cfg: ExperimentConfig = toml::from_str(&toml_text).unwrap();
        assert_eq!(cfg.spd.as_ref().unwrap().eta, EtaSchedule::Constant(0.001));
        let beta_text = QUEUE_TOML.replace("beta = \"t-quarter\"", "beta = 5.5");
        let cfg: ExperimentConfig = toml::from_str(&beta_text).unwrap();
        assert_eq!(cfg.spd.as_ref().unwrap().beta, BetaSchedule::Value(5.5));
    }

    #[test]
    fn missing_solvers_rejected() {
        let mut cfg: ExperimentConfig = toml::from_str(QUEUE_TOML).unwrap();
        cfg.spd = None;
        cfg.penalty.clear();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn env_builds_queue_pair() {
        let cfg: ExperimentConfig = toml::from_str(QUEUE_TOML).unwrap();
        let (mdp, base) = cfg.build_env().unwrap();
        assert_eq!(mdp.n(), 20);
        assert_eq!(base.len(), 2);
        let fm = cfg.build_features(&mdp, &base).unwrap();
        assert_eq!(fm.d(), 2);
    }
}
