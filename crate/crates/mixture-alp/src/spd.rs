//! Projection-free stochastic primal-dual solver for the reduced dual ALP.
//!
//! The problem is the saddle point of `L(theta, lambda) = c' Psi theta -
//! lambda' Psi theta` over the hyperplane-and-domain intersection in the
//! primal and the clipped dual ball `{lambda >= 0, |lambda|_2 <= G_beta}`.
//! Each round draws one state-action pair from the base-policy mixture,
//! forms the importance-weighted primal gradient, takes a mirror step through
//! the chosen Bregman geometry followed by the hyperplane projection, and
//! ascends the dual with the exact (full-vector) gradient.
//!
//! Two scale conventions keep the dynamics well-posed:
//!
//! * The dual ascent direction is `-Psi theta` (the Lagrangian above is
//!   linear in `lambda` with that gradient), so multipliers accumulate on
//!   violated coordinates and drain on satisfied ones.
//! * Sampled costs are mapped to `[0, 1]` through the known cost bounds
//!   before entering the gradients. On the hyperplane `1' Psi theta = 1`
//!   this is an affine reparameterization that leaves the minimizer
//!   unchanged while putting the multiplier bound `G_beta` and the
//!   learning-rate schedule on the scale the dual-ball radius assumes.
//!   Reported objectives are always in original cost units.

use nalgebra::DVector;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bregman::{hyperplane_project, BregmanGeometry, GeometryKind};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::mdp::{flat_index, policy_from_occupancy, sample_cdf, transition_cdfs, Mdp, OccupancyVector, RandomizedPolicy};
use crate::trace::{RunTrace, TraceRecord};

/// Learning-rate schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EtaSchedule {
    /// Fixed step.
    Constant(f64),
    /// Named schedule; `"inv-sqrt"` gives `eta_t = 1/sqrt(t + 1)`.
    Named(EtaName),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EtaName {
    InvSqrt,
}

impl EtaSchedule {
    pub const INV_SQRT: EtaSchedule = EtaSchedule::Named(EtaName::InvSqrt);

    pub fn eta(&self, t: usize) -> f64 {
        match self {
            EtaSchedule::Constant(v) => *v,
            EtaSchedule::Named(EtaName::InvSqrt) => 1.0 / ((t + 1) as f64).sqrt(),
        }
    }

    fn validate(&self) -> Result<()> {
        if let EtaSchedule::Constant(v) = self {
            if !(*v > 0.0) {
                return Err(Error::Invalid(format!("constant eta {v} must be positive")));
            }
        }
        Ok(())
    }
}

/// Dual-radius parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BetaSchedule {
    Value(f64),
    Named(BetaName),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BetaName {
    /// `beta = T^(1/4)`.
    TQuarter,
}

impl BetaSchedule {
    pub const T_QUARTER: BetaSchedule = BetaSchedule::Named(BetaName::TQuarter);

    pub fn value(&self, iterations: usize) -> f64 {
        match self {
            BetaSchedule::Value(v) => *v,
            BetaSchedule::Named(BetaName::TQuarter) => (iterations as f64).powf(0.25),
        }
    }
}

/// Radius of the dual multiplier ball.
#[derive(Debug, Clone, Copy)]
pub struct GBound {
    pub g_beta: f64,
}

impl GBound {
    /// `G_beta = max(1/(1-gamma), beta)` for discounted problems; for
    /// `gamma = 1` the first branch is undefined and `beta` alone sets the
    /// radius, so it must be chosen explicitly.
    pub fn new(gamma: f64, beta: f64) -> Result<Self> {
        if !(beta > 0.0) {
            return Err(Error::Invalid(format!("beta = {beta} must be positive")));
        }
        let g_beta = if gamma < 1.0 { (1.0 / (1.0 - gamma)).max(beta) } else { beta };
        Ok(Self { g_beta })
    }
}

/// How the dual iterate is mapped back into the multiplier set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DualMode {
    /// Drop negative coordinates, then rescale into the ball. Default: the
    /// multiplier set lives in the nonnegative orthant.
    #[default]
    ClipThenRescale,
    /// Pure radial rescaling, matching the written update verbatim.
    RescaleOnly,
}

/// Solver configuration.
#[derive(Debug, Clone)]
pub struct SpdConfig {
    /// Rounds `T`.
    pub iterations: usize,
    pub eta: EtaSchedule,
    pub beta: BetaSchedule,
    pub geometry: GeometryKind,
    pub radius: f64,
    /// Start point on the hyperplane; uniform mixture when absent.
    pub theta0: Option<Vec<f64>>,
    pub dual_mode: DualMode,
    /// Map sampled costs to [0, 1] through the oracle's bounds (default on).
    pub normalize_costs: bool,
    /// Discount of the underlying MDP; sets the dual radius.
    pub gamma: f64,
    /// Checkpoint stride; `default_stride` when absent.
    pub stride: Option<usize>,
    pub seed: u64,
}

impl SpdConfig {
    pub fn new(iterations: usize, geometry: GeometryKind, radius: f64, gamma: f64, seed: u64) -> Self {
        Self {
            iterations,
            eta: EtaSchedule::INV_SQRT,
            beta: BetaSchedule::T_QUARTER,
            geometry,
            radius,
            theta0: None,
            dual_mode: DualMode::default(),
            normalize_costs: true,
            gamma,
            stride: None,
            seed,
        }
    }

    fn validate(&self, d: usize) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Invalid("need at least one iteration".into()));
        }
        self.eta.validate()?;
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Invalid(format!("gamma = {} outside (0, 1]", self.gamma)));
        }
        if let Some(t0) = &self.theta0 {
            if t0.len() != d {
                return Err(Error::Dimension(format!("theta0 has length {}, expected {d}", t0.len())));
            }
            let sum: f64 = t0.iter().sum();
            if (sum - 1.0).abs() > 1e-10 {
                return Err(Error::Invalid(format!("theta0 sums to {sum}, must lie on the hyperplane")));
            }
        }
        Ok(())
    }
}

/// One oracle draw: a base-policy index, the sampled pair, and its cost.
#[derive(Debug, Clone, Copy)]
pub struct OracleSample {
    pub policy_index: usize,
    pub state: usize,
    pub action: usize,
    pub cost: f64,
}

/// Model-free sampling interface: draw `i` uniformly, then `(s, a)` from the
/// base occupancy `psi^i`, and observe the cost.
pub trait SamplingOracle: Sync {
    fn draw(&self, rng: &mut dyn RngCore) -> OracleSample;

    /// Known cost range `[c_min, c_max]`.
    fn cost_bounds(&self) -> (f64, f64);
}

/// Sampling oracle backed by exact (or empirical) feature columns plus the
/// model's cost table; also exposes the environment's transition sampler.
pub struct MixtureOracle {
    column_cdfs: Vec<Vec<f64>>,
    costs: DVector<f64>,
    bounds: (f64, f64),
    transition: Vec<Vec<f64>>,
    m: usize,
}

impl MixtureOracle {
    pub fn new(mdp: &Mdp, fm: &FeatureMatrix) -> Result<Self> {
        if fm.nm() != mdp.n() * mdp.m() {
            return Err(Error::Dimension("feature rows do not match the MDP".into()));
        }
        let column_cdfs = (0..fm.d())
            .map(|i| {
                let col = fm.psi().column(i);
                let total: f64 = col.iter().sum();
                let mut acc = 0.0;
                col.iter()
                    .map(|&x| {
                        acc += x / total;
                        acc
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            column_cdfs,
            costs: mdp.cost_flat(),
            bounds: (mdp.cost_min(), mdp.cost_max()),
            transition: transition_cdfs(mdp),
            m: mdp.m(),
        })
    }

    /// Sample a successor state `s' ~ P_a(. , s)`.
    pub fn step(&self, s: usize, a: usize, rng: &mut dyn RngCore) -> usize {
        sample_cdf(&self.transition[flat_index(s, a, self.m)], rng.random::<f64>())
    }
}

impl SamplingOracle for MixtureOracle {
    fn draw(&self, rng: &mut dyn RngCore) -> OracleSample {
        let i = rng.random_range(0..self.column_cdfs.len());
        let k = sample_cdf(&self.column_cdfs[i], rng.random::<f64>());
        OracleSample {
            policy_index: i,
            state: k / self.m,
            action: k % self.m,
            cost: self.costs[k],
        }
    }

    fn cost_bounds(&self) -> (f64, f64) {
        self.bounds
    }
}

/// Importance-weighted primal gradient for one sample:
/// `(cost - lambda(s,a)) * Psi_(s,a) / ((1/d) sum_i psi^i(s,a))`.
pub fn stochastic_primal_gradient(
    lambda: &DVector<f64>,
    sample: &OracleSample,
    fm: &FeatureMatrix,
) -> Result<DVector<f64>> {
    let k = flat_index(sample.state, sample.action, fm.m());
    let mean = fm.psi().row(k).iter().sum::<f64>() / fm.d() as f64;
    if mean <= 0.0 {
        return Err(Error::SamplingSupport { state: sample.state, action: sample.action });
    }
    let scale = (sample.cost - lambda[k]) / mean;
    Ok(fm.psi().row(k).transpose() * scale)
}

/// Dual-side gradient of the Lagrangian's bilinear term: `Psi theta`.
pub fn dual_gradient(theta: &DVector<f64>, fm: &FeatureMatrix) -> DVector<f64> {
    fm.apply(theta)
}

/// Project a dual candidate into the multiplier set.
pub fn project_dual(mut u: DVector<f64>, g_beta: f64, mode: DualMode) -> DVector<f64> {
    if mode == DualMode::ClipThenRescale {
        u.iter_mut().for_each(|x| *x = x.max(0.0));
    }
    let norm = u.norm();
    if norm > g_beta {
        u *= g_beta / norm;
    }
    u
}

/// Dual ascent step: `lambda+ = project(lambda - eta * Psi theta)`.
///
/// The Lagrangian is linear in `lambda` with gradient `-Psi theta`, so the
/// ascent direction subtracts `xi = Psi theta`: multipliers grow exactly on
/// the violated (negative) coordinates.
pub fn dual_step(
    lambda: &DVector<f64>,
    xi: &DVector<f64>,
    eta: f64,
    g_beta: f64,
    mode: DualMode,
) -> DVector<f64> {
    project_dual(lambda - xi * eta, g_beta, mode)
}

/// Mirror step through the geometry followed by the hyperplane projection.
/// Returns the new point and how many boundary clamps happened.
pub fn primal_step(
    theta: &DVector<f64>,
    grad: &DVector<f64>,
    eta: f64,
    geom: &dyn BregmanGeometry,
) -> Result<(DVector<f64>, usize)> {
    let mut clamps = 0;
    let mut anchor = theta.clone();
    if geom.clamp_interior(&mut anchor) {
        clamps += 1;
    }
    let y = geom.grad_phi(&anchor) - grad * eta;
    let mut mirrored = geom.grad_phi_star(&y);
    if geom.clamp_interior(&mut mirrored) {
        clamps += 1;
    }
    let projected = hyperplane_project(geom, &mirrored)?;
    Ok((projected, clamps))
}

/// Constraint violation `V(theta) = 0.5 * || [Psi theta]_- ||_2`, treating
/// entries above `-1e-15` as clean zeros.
pub fn violation(theta: &DVector<f64>, fm: &FeatureMatrix) -> f64 {
    violation_of_xi(&fm.apply(theta))
}

pub(crate) fn violation_of_xi(xi: &DVector<f64>) -> f64 {
    let neg_sq: f64 = xi.iter().map(|&x| if x < -1e-15 { x * x } else { 0.0 }).sum();
    0.5 * neg_sq.sqrt()
}

/// Randomized policy from the positive part of `Psi theta`; states whose
/// block has no positive mass fall back to the uniform row.
pub fn extract_policy(theta: &DVector<f64>, fm: &FeatureMatrix) -> RandomizedPolicy {
    let xi = fm.apply(theta).map(|x| x.max(0.0));
    policy_from_occupancy(&OccupancyVector { xi }, fm.n(), fm.m())
        .expect("clipped occupancy is nonnegative")
}

/// Largest importance-weighted feature row, `max_(s,a) |Psi_(s,a) / mean|`;
/// the gradient-magnitude diagnostic. The dual norm pairs with the geometry:
/// Euclidean for the ball class, l1 for the box class.
pub fn gradient_scale_diagnostic(fm: &FeatureMatrix, geometry: GeometryKind) -> f64 {
    let mean = fm.mixture_mean();
    let mut worst = 0.0f64;
    for k in 0..fm.nm() {
        if mean[k] <= 0.0 {
            continue;
        }
        let row = fm.psi().row(k) / mean[k];
        let norm = match geometry {
            GeometryKind::Ball => row.norm(),
            GeometryKind::Box => row.iter().map(|x| x.abs()).sum(),
        };
        worst = worst.max(norm);
    }
    worst
}

struct CostScale {
    lo: f64,
    width: f64,
}

impl CostScale {
    fn new(enabled: bool, bounds: (f64, f64)) -> Self {
        if !enabled {
            return Self { lo: 0.0, width: 1.0 };
        }
        let (lo, hi) = bounds;
        let width = hi - lo;
        Self { lo, width: if width > 0.0 { width } else { 1.0 } }
    }

    fn apply(&self, cost: f64) -> f64 {
        (cost - self.lo) / self.width
    }
}

/// Run the full primal-dual loop.
///
/// `evaluator` is instrumentation only: when present, checkpoint records carry
/// the exact objective `c' Psi theta` and violation; the solver itself never
/// reads the cost table. Runs are deterministic in `(config, features, seed)`.
/// Numeric failures mid-run return the trace collected so far with the error
/// recorded on it.
pub fn run_spd(
    cfg: &SpdConfig,
    fm: &FeatureMatrix,
    oracle: &dyn SamplingOracle,
    evaluator: Option<&Mdp>,
) -> Result<RunTrace> {
    let d = fm.d();
    cfg.validate(d)?;
    let geom = cfg.geometry.build(cfg.radius, d)?;
    let t_total = cfg.iterations;
    let g_beta = GBound::new(cfg.gamma, cfg.beta.value(t_total))?.g_beta;
    let scale = CostScale::new(cfg.normalize_costs, oracle.cost_bounds());
    let stride = cfg.stride.unwrap_or_else(|| RunTrace::default_stride(t_total)).max(1);
    let cost_flat = evaluator.map(|mdp| mdp.cost_flat());

    let mut theta = match &cfg.theta0 {
        Some(t0) => DVector::from_vec(t0.clone()),
        None => DVector::from_element(d, 1.0 / d as f64),
    };
    if !geom.is_interior(&theta) {
        return Err(Error::Domain("theta0 is not interior to the geometry".into()));
    }
    let nm = fm.nm();
    let mut lambda = DVector::zeros(nm);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut theta_acc = DVector::zeros(d);
    let mut lambda_acc = DVector::zeros(nm);
    let mut eta_acc = 0.0;
    let mut clamp_events = 0usize;
    let mut records = Vec::with_capacity(t_total.div_ceil(stride));
    let mut failure: Option<String> = None;

    for t in 0..t_total {
        let eta = cfg.eta.eta(t);
        theta_acc.axpy(eta, &theta, 1.0);
        lambda_acc.axpy(eta, &lambda, 1.0);
        eta_acc += eta;

        let mut sample = oracle.draw(&mut rng);
        sample.cost = scale.apply(sample.cost);
        let step_result = stochastic_primal_gradient(&lambda, &sample, fm)
            .and_then(|grad| primal_step(&theta, &grad, eta, geom.as_ref()));
        let (next_theta, clamps) = match step_result {
            Ok(v) => v,
            Err(e) => {
                failure = Some(e.to_string());
                break;
            }
        };
        let xi_t = dual_gradient(&theta, fm);
        theta = next_theta;
        lambda = dual_step(&lambda, &xi_t, eta, g_beta, cfg.dual_mode);
        clamp_events += clamps;

        debug_assert!((theta.iter().sum::<f64>() - 1.0).abs() <= 1e-8, "iterate left the hyperplane");
        debug_assert!(lambda.norm() <= g_beta + 1e-12, "dual iterate left the ball");

        if (t + 1) % stride == 0 || t + 1 == t_total {
            let theta_hat = &theta_acc / eta_acc;
            records.push(checkpoint(t + 1, &theta, &theta_hat, &lambda, fm, cost_flat.as_ref()));
        }
    }

    let theta_hat = if eta_acc > 0.0 { &theta_acc / eta_acc } else { theta.clone() };
    let lambda_hat = if eta_acc > 0.0 { &lambda_acc / eta_acc } else { lambda.clone() };
    let policy = extract_policy(&theta_hat, fm);
    Ok(RunTrace {
        records,
        theta_hat,
        lambda_hat: Some(lambda_hat),
        policy,
        clamp_events,
        error: failure,
        seed: cfg.seed,
    })
}

fn checkpoint(
    t: usize,
    theta: &DVector<f64>,
    theta_hat: &DVector<f64>,
    lambda: &DVector<f64>,
    fm: &FeatureMatrix,
    cost_flat: Option<&DVector<f64>>,
) -> TraceRecord {
    let (objective, violation_now, avg_objective, avg_violation) = match cost_flat {
        Some(c) => {
            let xi = fm.apply(theta);
            let xi_hat = fm.apply(theta_hat);
            (
                Some(c.dot(&xi)),
                Some(violation_of_xi(&xi)),
                Some(c.dot(&xi_hat)),
                Some(violation_of_xi(&xi_hat)),
            )
        }
        None => (None, None, None, None),
    };
    TraceRecord {
        t,
        objective,
        violation: violation_now,
        avg_objective,
        avg_violation,
        lambda_norm: lambda.norm(),
    }
}
