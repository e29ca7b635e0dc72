//! Single-queue benchmark with controlled service rate.
//!
//! States are queue lengths `1..=L` (stored 0-based), actions are service
//! probabilities, jobs arrive with probability `rho` per slot, and the cost of
//! holding `s` jobs while serving at rate `a` is `s^2 + 60 a^3`. Blocked
//! transitions at the two buffer ends fold into self-loops, and the chain
//! starts from the near-empty state `s = 1`.
//!
//! The slotted kernel comes in two flavors because arrival and departure
//! probabilities can exceed one jointly:
//!
//! * `product` (default): at most one event per slot with
//!   `P(up) = rho (1 - a)`, `P(down) = a (1 - rho)`; valid for every
//!   `(rho, a)` in the open unit square and keeps all service rates
//!   distinguishable.
//! * `literal-clamped`: `P(up) = rho`, `P(down) = min(a, 1 - rho)`; the
//!   unnormalized textbook rule with the service rate capped where it would
//!   break stochasticity.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::mdp::{Mdp, RandomizedPolicy};
use crate::spd::MixtureOracle;

/// Holding-cost exponent in `c(s, a) = s^2 + 60 a^3`.
const STATE_EXPONENT: i32 = 2;
/// Service-cost coefficient.
const ACTION_COEFFICIENT: f64 = 60.0;
/// Service-cost exponent.
const ACTION_EXPONENT: i32 = 3;

/// Slot-kernel normalization strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelKind {
    #[default]
    Product,
    LiteralClamped,
}

/// Benchmark parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueueSpec {
    /// Buffer size; states are `1..=L`.
    #[serde(rename = "L")]
    pub buffer: usize,
    /// Arrival probability per slot.
    pub rho: f64,
    /// Available service probabilities.
    pub actions: Vec<f64>,
    /// Discount; the benchmark itself runs average-cost (`1.0`).
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default)]
    pub kernel: KernelKind,
}

fn default_gamma() -> f64 {
    1.0
}

impl QueueSpec {
    /// The benchmark configuration: `L = 100`, `rho = 0.5`,
    /// actions `{0.2, 0.4, 0.6, 0.8}`, average cost.
    pub fn benchmark() -> Self {
        Self {
            buffer: 100,
            rho: 0.5,
            actions: vec![0.2, 0.4, 0.6, 0.8],
            gamma: 1.0,
            kernel: KernelKind::Product,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.buffer < 2 {
            return Err(Error::Invalid("queue buffer must be at least 2".into()));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::Invalid(format!("arrival probability {} outside (0, 1)", self.rho)));
        }
        if self.actions.is_empty() {
            return Err(Error::Invalid("need at least one service rate".into()));
        }
        if self.actions.iter().any(|&a| !(a > 0.0 && a < 1.0)) {
            return Err(Error::Invalid("service rates must lie in (0, 1)".into()));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Invalid(format!("gamma = {} outside (0, 1]", self.gamma)));
        }
        Ok(())
    }

    /// Cost of holding `s` jobs (1-based queue length) at service rate `a`.
    pub fn cost(&self, s: usize, a: f64) -> f64 {
        (s as f64).powi(STATE_EXPONENT) + ACTION_COEFFICIENT * a.powi(ACTION_EXPONENT)
    }

    fn up_down(&self, a: f64) -> (f64, f64) {
        match self.kernel {
            KernelKind::Product => (self.rho * (1.0 - a), a * (1.0 - self.rho)),
            KernelKind::LiteralClamped => (self.rho, a.min(1.0 - self.rho)),
        }
    }
}

/// Build the queue MDP: states `1..=L` mapped to indices `0..L`, initial
/// distribution a point mass at queue length 1.
pub fn build_queue_mdp(spec: &QueueSpec) -> Result<Mdp> {
    spec.validate()?;
    let n = spec.buffer;
    let m = spec.actions.len();
    let mut kernels = Vec::with_capacity(m);
    for &a in &spec.actions {
        let (up, down) = spec.up_down(a);
        let mut pa = DMatrix::zeros(n, n);
        for s in 0..n {
            if s + 1 < n {
                pa[(s, s + 1)] += up;
            } else {
                pa[(s, s)] += up;
            }
            if s > 0 {
                pa[(s, s - 1)] += down;
            } else {
                pa[(s, s)] += down;
            }
            pa[(s, s)] += 1.0 - up - down;
        }
        kernels.push(pa);
    }
    let c = DMatrix::from_fn(m, n, |ai, s| spec.cost(s + 1, spec.actions[ai]));
    let mut alpha = DVector::zeros(n);
    alpha[0] = 1.0;
    Mdp::new(kernels, c, spec.gamma, alpha)
}

/// The benchmark's two state-independent base policies,
/// `(0.25, 0.25, 0.25, 0.25)` and `(0.3, 0.3, 0.2, 0.2)`.
pub fn make_base_policies(spec: &QueueSpec) -> Result<(RandomizedPolicy, RandomizedPolicy)> {
    if spec.actions.len() != 4 {
        return Err(Error::Invalid(format!(
            "the base-policy pair expects 4 actions, spec has {}",
            spec.actions.len()
        )));
    }
    let p1 = RandomizedPolicy::state_independent(spec.buffer, &[0.25, 0.25, 0.25, 0.25])?;
    let p2 = RandomizedPolicy::state_independent(spec.buffer, &[0.3, 0.3, 0.2, 0.2])?;
    Ok((p1, p2))
}

/// Sampling oracle over the queue: uniform base-policy index, `(s, a)` from
/// that policy's occupancy column, observed cost from the table; also serves
/// as the environment's transition sampler for rollouts.
pub fn queue_sampler(mdp: &Mdp, fm: &FeatureMatrix) -> Result<MixtureOracle> {
    MixtureOracle::new(mdp, fm)
}
