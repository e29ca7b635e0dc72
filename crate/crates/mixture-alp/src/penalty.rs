//! Penalty-function baseline: projected subgradient descent on
//! `f_w(theta) = c' Psi theta + w ||[Psi theta]_-||_1 + w ||theta' Psi' (P - Q)||_1`
//! over the ball-hyperplane intersection.
//!
//! With exact features the stationarity term vanishes identically, but it is
//! evaluated anyway so the objective stays meaningful for empirical feature
//! matrices. The projection onto `{|theta| <= R} ∩ {theta' 1 = 1}` has a
//! closed form: project onto the hyperplane, then shrink toward the
//! hyperplane's center point until the sphere is met.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{build_q, FeatureMatrix};
use crate::mdp::Mdp;
use crate::spd::{stochastic_primal_gradient, violation_of_xi, SamplingOracle};
use crate::trace::{RunTrace, TraceRecord};

/// Subgradient source for the cost term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PenaltyGradientMode {
    /// Exact subgradient of the full objective.
    #[default]
    Full,
    /// Importance-weighted sampled cost gradient (the penalty terms stay
    /// exact: they depend only on the known features and kernel).
    Sampled,
}

/// Baseline configuration.
#[derive(Debug, Clone)]
pub struct PenaltyConfig {
    pub iterations: usize,
    /// Constant step size; defaults to `1/T`.
    pub eta: Option<f64>,
    /// Penalty factor `w > 0`.
    pub omega: f64,
    pub radius: f64,
    pub theta0: Option<Vec<f64>>,
    pub gradient_mode: PenaltyGradientMode,
    pub stride: Option<usize>,
    pub seed: u64,
}

impl PenaltyConfig {
    pub fn new(iterations: usize, omega: f64, radius: f64, seed: u64) -> Self {
        Self {
            iterations,
            eta: None,
            omega,
            radius,
            theta0: None,
            gradient_mode: PenaltyGradientMode::default(),
            stride: None,
            seed,
        }
    }

    fn validate(&self, d: usize) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Invalid("need at least one iteration".into()));
        }
        if !(self.omega > 0.0) {
            return Err(Error::Invalid(format!("omega = {} must be positive", self.omega)));
        }
        if let Some(eta) = self.eta {
            if !(eta > 0.0) {
                return Err(Error::Invalid(format!("eta = {eta} must be positive")));
            }
        }
        if let Some(t0) = &self.theta0 {
            if t0.len() != d {
                return Err(Error::Dimension(format!("theta0 has length {}, expected {d}", t0.len())));
            }
        }
        Ok(())
    }
}

/// Stationarity operator `Psi' (P - Q)` (d-by-n), precomputed once per run.
fn stationarity_operator(fm: &FeatureMatrix, mdp: &Mdp) -> Result<DMatrix<f64>> {
    if fm.nm() != mdp.n() * mdp.m() {
        return Err(Error::Dimension("feature rows do not match the MDP".into()));
    }
    let p_minus_q = mdp.transition_flat() - build_q(mdp.n(), mdp.m()).matrix();
    Ok(fm.psi().transpose() * p_minus_q)
}

/// Exact penalty objective `f_w(theta)`.
pub fn penalty_objective(theta: &DVector<f64>, fm: &FeatureMatrix, mdp: &Mdp, omega: f64) -> Result<f64> {
    let xi = fm.apply(theta);
    let cost = mdp.cost_flat().dot(&xi);
    let neg_l1: f64 = xi.iter().map(|&x| (-x).max(0.0)).sum();
    let stat = stationarity_operator(fm, mdp)?.transpose() * theta;
    let stat_l1: f64 = stat.iter().map(|x| x.abs()).sum();
    Ok(cost + omega * neg_l1 + omega * stat_l1)
}

/// A subgradient of `f_w` at `theta`; at kinks the zero element is chosen.
pub fn penalty_subgradient(
    theta: &DVector<f64>,
    fm: &FeatureMatrix,
    mdp: &Mdp,
    omega: f64,
) -> Result<DVector<f64>> {
    let xi = fm.apply(theta);
    // sigma_k = -1 on strictly negative entries of Psi theta
    let sigma = xi.map(|x| if x < 0.0 { -1.0 } else { 0.0 });
    let mut g = fm.psi().transpose() * (mdp.cost_flat() + sigma * omega);
    let stat_op = stationarity_operator(fm, mdp)?;
    let stat = stat_op.transpose() * theta;
    let sign = stat.map(|x| {
        if x > 0.0 {
            1.0
        } else if x < 0.0 {
            -1.0
        } else {
            0.0
        }
    });
    g += stat_op * sign * omega;
    Ok(g)
}

/// Euclidean projection onto `{theta' 1 = 1} ∩ {|theta|_2 <= r}`.
///
/// Hyperplane projection first; when the result leaves the ball it is pulled
/// toward the hyperplane's center `(1/d) 1` by the unique factor that lands
/// on the sphere. Both constraint sets are closed under that move, and the
/// decomposition into the hyperplane-normal and in-plane components makes the
/// result the exact projection onto the intersection.
pub fn project_ball_hyperplane(theta: &DVector<f64>, r: f64) -> Result<DVector<f64>> {
    let d = theta.len();
    if d == 0 {
        return Err(Error::Dimension("empty point".into()));
    }
    let df = d as f64;
    if r * r <= 1.0 / df {
        return Err(Error::InfeasibleGeometry(format!(
            "ball radius {r} gives an empty interior with the hyperplane in dimension {d}"
        )));
    }
    let shift = (theta.iter().sum::<f64>() - 1.0) / df;
    let on_plane = theta.add_scalar(-shift);
    if on_plane.norm() <= r {
        return Ok(on_plane);
    }
    let center = DVector::from_element(d, 1.0 / df);
    let radial = &on_plane - &center;
    let in_plane_radius = (r * r - 1.0 / df).sqrt();
    Ok(center + radial * (in_plane_radius / radial.norm()))
}

/// Projected subgradient descent on `f_w` with uniform iterate averaging.
///
/// The sampled gradient mode draws costs through `oracle` with the same
/// importance weighting as the primal-dual solver; the penalty terms are
/// computed exactly in both modes.
pub fn run_penalty(
    cfg: &PenaltyConfig,
    fm: &FeatureMatrix,
    mdp: &Mdp,
    oracle: Option<&dyn SamplingOracle>,
) -> Result<RunTrace> {
    let d = fm.d();
    cfg.validate(d)?;
    if cfg.gradient_mode == PenaltyGradientMode::Sampled && oracle.is_none() {
        return Err(Error::Invalid("sampled gradient mode needs a sampling oracle".into()));
    }
    let t_total = cfg.iterations;
    let eta = cfg.eta.unwrap_or(1.0 / t_total as f64);
    let stride = cfg.stride.unwrap_or_else(|| RunTrace::default_stride(t_total)).max(1);
    let omega = cfg.omega;
    let cost_flat = mdp.cost_flat();
    let stat_op = stationarity_operator(fm, mdp)?;
    let psi_t_c = fm.psi().transpose() * &cost_flat;

    let mut theta = match &cfg.theta0 {
        Some(t0) => project_ball_hyperplane(&DVector::from_vec(t0.clone()), cfg.radius)?,
        None => DVector::from_element(d, 1.0 / d as f64),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut theta_acc: DVector<f64> = DVector::zeros(d);
    let mut count = 0usize;
    let mut records = Vec::with_capacity(t_total.div_ceil(stride));
    let mut failure = None;

    for t in 0..t_total {
        let xi = fm.apply(&theta);
        let cost_part = match cfg.gradient_mode {
            PenaltyGradientMode::Full => psi_t_c.clone(),
            PenaltyGradientMode::Sampled => {
                let sample = oracle.unwrap().draw(&mut rng);
                match stochastic_primal_gradient(&DVector::zeros(fm.nm()), &sample, fm) {
                    Ok(g) => g,
                    Err(e) => {
                        failure = Some(e.to_string());
                        break;
                    }
                }
            }
        };
        let sigma = xi.map(|x| if x < 0.0 { -1.0 } else { 0.0 });
        let stat_sign = (stat_op.transpose() * &theta).map(|x| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        });
        let grad = cost_part
            + fm.psi().transpose() * sigma * omega
            + &stat_op * stat_sign * omega;
        theta = match project_ball_hyperplane(&(&theta - grad * eta), cfg.radius) {
            Ok(p) => p,
            Err(e) => {
                failure = Some(e.to_string());
                break;
            }
        };
        theta_acc += &theta;
        count += 1;

        debug_assert!((theta.iter().sum::<f64>() - 1.0).abs() <= 1e-10);
        debug_assert!(theta.norm() <= cfg.radius + 1e-10);

        if (t + 1) % stride == 0 || t + 1 == t_total {
            let theta_hat = &theta_acc / count as f64;
            let xi_now = fm.apply(&theta);
            let xi_hat = fm.apply(&theta_hat);
            records.push(TraceRecord {
                t: t + 1,
                objective: Some(cost_flat.dot(&xi_now)),
                violation: Some(violation_of_xi(&xi_now)),
                avg_objective: Some(cost_flat.dot(&xi_hat)),
                avg_violation: Some(violation_of_xi(&xi_hat)),
                lambda_norm: 0.0,
            });
        }
    }

    let theta_hat = if count > 0 { &theta_acc / count as f64 } else { theta.clone() };
    let policy = crate::spd::extract_policy(&theta_hat, fm);
    Ok(RunTrace {
        records,
        theta_hat,
        lambda_hat: None,
        policy,
        clamp_events: 0,
        error: failure,
        seed: cfg.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::build_features_exact;
    use crate::mdp::tests::{random_mdp, random_policy};
    use crate::mdp::RandomizedPolicy;
    use approx::assert_abs_diff_eq;
    use rand::rngs::StdRng;
    use rand::Rng;

    fn ergodic_instance(seed: u64) -> (Mdp, FeatureMatrix) {
        let mut rng = StdRng::seed_from_u64(seed);
        let mdp = random_mdp(&mut rng, 3, 2, 1.0);
        let base = vec![random_policy(&mut rng, 3, 2), random_policy(&mut rng, 3, 2)];
        let fm = build_features_exact(&mdp, &base).unwrap();
        (mdp, fm)
    }

    #[test]
    fn objective_on_simplex_is_plain_cost() {
        let (mdp, fm) = ergodic_instance(60);
        let theta = DVector::from_vec(vec![0.3, 0.7]);
        let f = penalty_objective(&theta, &fm, &mdp, 5.0).unwrap();
        let plain = mdp.cost_flat().dot(&fm.apply(&theta));
        assert_abs_diff_eq!(f, plain, epsilon = 1e-7 * 5.0 + 1e-12);
    }

    #[test]
    fn zero_omega_is_plain_cost() {
        let (mdp, fm) = ergodic_instance(61);
        let theta = DVector::from_vec(vec![-0.4, 1.4]);
        let f = penalty_objective(&theta, &fm, &mdp, 0.0).unwrap();
        assert_abs_diff_eq!(f, mdp.cost_flat().dot(&fm.apply(&theta)), epsilon = 1e-12);
    }

    #[test]
    fn crafted_negative_part_prices_in() {
        // single state, two actions: P - Q = 0, so only the negative part
        // contributes. Psi theta = (-0.3, 0.4), costs (2, 4):
        // f = 1 + 2 * 0.3 = 1.6
        let p = vec![
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
        ];
        let c = DMatrix::from_row_slice(2, 1, &[2.0, 4.0]);
        let mdp = Mdp::new(p, c, 1.0, DVector::from_element(1, 1.0)).unwrap();
        let psi = DMatrix::from_row_slice(2, 1, &[-0.3, 0.4]);
        let fm = crate::features::FeatureMatrix::from_parts(
            psi,
            vec![RandomizedPolicy::uniform(1, 2)],
            1,
            2,
        );
        let theta = DVector::from_vec(vec![1.0]);
        let f = penalty_objective(&theta, &fm, &mdp, 2.0).unwrap();
        assert_abs_diff_eq!(f, 1.6, epsilon = 1e-12);
    }

    #[test]
    fn subgradient_in_feasible_interior_is_feature_cost() {
        let (mdp, fm) = ergodic_instance(62);
        let theta = DVector::from_vec(vec![0.5, 0.5]);
        let g = penalty_subgradient(&theta, &fm, &mdp, 7.0).unwrap();
        let direct = fm.psi().transpose() * mdp.cost_flat();
        // stationarity residual of exact gamma=1 features is ~1e-12; its sign
        // vector may be nonzero there, so compare loosely
        assert!((g - direct).amax() <= 1e-6);

        let g0 = penalty_subgradient(&theta, &fm, &mdp, 0.0).unwrap();
        assert!((g0 - fm.psi().transpose() * mdp.cost_flat()).amax() <= 1e-15);
    }

    #[test]
    fn subgradient_matches_finite_differences_off_kinks() {
        let (mdp, fm) = ergodic_instance(63);
        let mut rng = StdRng::seed_from_u64(64);
        let h = 1e-7;
        let omega = 3.0;
        let mut checked = 0;
        while checked < 50 {
            let raw: f64 = rng.random::<f64>() * 6.0 - 3.0;
            let theta = DVector::from_vec(vec![raw, rng.random::<f64>() * 6.0 - 3.0]);
            // keep clear of kinks: every coordinate of Psi theta away from 0
            if fm.apply(&theta).iter().any(|x| x.abs() < 1e-4) {
                continue;
            }
            let g = penalty_subgradient(&theta, &fm, &mdp, omega).unwrap();
            for j in 0..2 {
                let mut plus = theta.clone();
                let mut minus = theta.clone();
                plus[j] += h;
                minus[j] -= h;
                let fd = (penalty_objective(&plus, &fm, &mdp, omega).unwrap()
                    - penalty_objective(&minus, &fm, &mdp, omega).unwrap())
                    / (2.0 * h);
                assert!(
                    (fd - g[j]).abs() <= 1e-5 * (1.0 + g[j].abs()),
                    "fd {fd} vs subgradient {}",
                    g[j]
                );
            }
            checked += 1;
        }
    }

    #[test]
    fn projection_keeps_feasible_points() {
        let theta = DVector::from_vec(vec![0.2, 0.8]);
        let p = project_ball_hyperplane(&theta, 100.0).unwrap();
        assert!((p - theta).amax() <= 1e-15);
    }

    #[test]
    fn projection_hand_case() {
        let theta = DVector::from_vec(vec![3.0, 1.0]);
        let p = project_ball_hyperplane(&theta, 100.0).unwrap();
        assert_abs_diff_eq!(p[0], 1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], -0.5, epsilon = 1e-12);
    }

    #[test]
    fn projection_beats_random_candidates_and_satisfies_kkt() {
        let mut rng = StdRng::seed_from_u64(65);
        for _ in 0..20 {
            let d = rng.random_range(2..6);
            let r = 0.8 + rng.random::<f64>() * 3.0;
            let theta = DVector::from_fn(d, |_, _| rng.random::<f64>() * 20.0 - 10.0);
            let p = project_ball_hyperplane(&theta, r).unwrap();
            assert_abs_diff_eq!(p.iter().sum::<f64>(), 1.0, epsilon = 1e-10);
            assert!(p.norm() <= r + 1e-10);

            // random feasible candidates never come closer
            let dist = (&p - &theta).norm();
            for _ in 0..500 {
                let mut q = DVector::from_fn(d, |_, _| rng.random::<f64>() * 2.0 - 1.0);
                let shift = (q.iter().sum::<f64>() - 1.0) / d as f64;
                q.add_scalar_mut(-shift);
                let center = DVector::from_element(d, 1.0 / d as f64);
                let radial: DVector<f64> = &q - &center;
                let max_r = (r * r - 1.0 / d as f64).sqrt();
                let q = if radial.norm() > max_r {
                    &center + radial * (max_r / radial.norm())
                } else {
                    q
                };
                assert!((&q - &theta).norm() >= dist - 1e-9);
            }

            // KKT stationarity: x - theta + z 1 + 2 nu x = 0 with nu >= 0
            // active only on the sphere
            let resid = &p - &theta;
            if p.norm() < r - 1e-9 {
                let mean = resid.iter().sum::<f64>() / d as f64;
                assert!((resid.add_scalar(-mean)).amax() <= 1e-10);
            } else {
                // solve the 2-unknown least squares for (z, nu)
                let ones = DVector::from_element(d, 1.0);
                let a = DMatrix::from_columns(&[ones, p.clone() * 2.0]);
                let sol = (a.transpose() * &a)
                    .lu()
                    .solve(&(a.transpose() * (-&resid)))
                    .unwrap();
                let krr = (&resid + DVector::from_element(d, sol[0]) + &p * (2.0 * sol[1])).amax();
                assert!(krr <= 1e-10, "KKT residual {krr}");
                assert!(sol[1] >= -1e-10, "multiplier sign {sol}");
            }
        }
    }

    #[test]
    fn projection_rejects_empty_intersection() {
        let theta = DVector::from_vec(vec![0.5, 0.5]);
        assert!(matches!(
            project_ball_hyperplane(&theta, 0.5),
            Err(Error::InfeasibleGeometry(_))
        ));
    }

    #[test]
    fn zero_cost_zero_penalty_stays_put() {
        let mut rng = StdRng::seed_from_u64(66);
        let base_mdp = random_mdp(&mut rng, 3, 2, 1.0);
        let mdp = Mdp::new(
            (0..2).map(|a| base_mdp.kernel(a).clone()).collect(),
            DMatrix::zeros(2, 3),
            1.0,
            base_mdp.alpha().clone(),
        )
        .unwrap();
        let base = vec![random_policy(&mut rng, 3, 2), random_policy(&mut rng, 3, 2)];
        let fm = build_features_exact(&mdp, &base).unwrap();
        // omega must be positive; on the simplex both penalties vanish so any
        // small omega keeps the gradient at Psi'c = 0
        let mut cfg = PenaltyConfig::new(50, 1e-9, 100.0, 3);
        cfg.stride = Some(10);
        let trace = run_penalty(&cfg, &fm, &mdp, None).unwrap();
        assert!((trace.theta_hat - DVector::from_element(2, 0.5)).amax() <= 1e-7);
    }

    #[test]
    fn penalty_runs_are_deterministic() {
        let (mdp, fm) = ergodic_instance(67);
        let oracle = crate::spd::MixtureOracle::new(&mdp, &fm).unwrap();
        let mut cfg = PenaltyConfig::new(200, 10.0, 50.0, 99);
        cfg.gradient_mode = PenaltyGradientMode::Sampled;
        cfg.stride = Some(20);
        let a = run_penalty(&cfg, &fm, &mdp, Some(&oracle)).unwrap();
        let b = run_penalty(&cfg, &fm, &mdp, Some(&oracle)).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.theta_hat, b.theta_hat);
    }

    #[test]
    fn iterates_stay_in_the_intersection() {
        let (mdp, fm) = ergodic_instance(68);
        let mut cfg = PenaltyConfig::new(300, 10.0, 2.0, 5);
        cfg.eta = Some(0.05);
        cfg.stride = Some(1);
        let trace = run_penalty(&cfg, &fm, &mdp, None).unwrap();
        assert!(trace.error.is_none());
        assert_eq!(trace.records.len(), 300);
    }
}
