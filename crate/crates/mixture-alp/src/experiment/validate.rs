//! Machine-readable validation suite: feature identities, geometry
//! identities, gradient unbiasedness, and the ergodicity diagnostic, each as
//! a named check with its measured value and tolerance.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bregman::{BallModulus, BoxModulus, BregmanGeometry, NormTag};
use crate::error::Result;
use crate::features::{validate_feature_matrix, FeatureMatrix};
use crate::mdp::{ergodicity_kappa, flat_index, Mdp, RandomizedPolicy};
use crate::spd::{stochastic_primal_gradient, OracleSample};

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Measured residual or diagnostic value.
    pub value: f64,
    /// Tolerance the value was held against (NaN for report-only entries).
    pub tolerance: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<CheckResult>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn write_json(&self, path: &std::path::Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }
}

fn interior_point(rng: &mut ChaCha8Rng, geom: &dyn BregmanGeometry, d: usize) -> DVector<f64> {
    let v = DVector::from_fn(d, |_, _| rng.random::<f64>() * 2.0 - 1.0);
    match geom.norm_tag() {
        NormTag::Euclidean => {
            let norm = v.norm().max(1e-12);
            let scale = rng.random::<f64>() * 0.9 * geom.radius();
            v * (scale / norm)
        }
        NormTag::Max => v * (0.9 * geom.radius()),
    }
}

fn geometry_checks(checks: &mut Vec<CheckResult>, name: &str, geom: &dyn BregmanGeometry, d: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(0xB0B0);
    let mut worst_bijection = 0.0f64;
    let mut worst_fenchel = 0.0f64;
    let mut worst_convexity_slack = f64::INFINITY;
    for _ in 0..100 {
        let theta = interior_point(&mut rng, geom, d);
        let y = geom.grad_phi(&theta);
        worst_bijection = worst_bijection.max((geom.grad_phi_star(&y) - &theta).amax());
        let fenchel = (geom.phi(&theta) + geom.phi_star(&y) - theta.dot(&y)).abs()
            / (1.0 + geom.phi_star(&y).abs());
        worst_fenchel = worst_fenchel.max(fenchel);
        let other = interior_point(&mut rng, geom, d);
        let div = geom.divergence(&theta, &other).expect("interior points");
        let slack = div - 0.5 * geom.strong_convexity_norm_sq(&(&theta - &other));
        worst_convexity_slack = worst_convexity_slack.min(slack);
    }
    checks.push(CheckResult {
        name: format!("geometry_bijection_{name}"),
        passed: worst_bijection <= 1e-10,
        value: worst_bijection,
        tolerance: 1e-10,
    });
    checks.push(CheckResult {
        name: format!("geometry_fenchel_{name}"),
        passed: worst_fenchel <= 1e-10,
        value: worst_fenchel,
        tolerance: 1e-10,
    });
    checks.push(CheckResult {
        name: format!("geometry_strong_convexity_{name}"),
        passed: worst_convexity_slack >= -1e-9,
        value: worst_convexity_slack,
        tolerance: -1e-9,
    });
}

fn unbiasedness_residual(mdp: &Mdp, fm: &FeatureMatrix) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(0xFEED);
    let nm = fm.nm();
    let lambda = DVector::from_fn(nm, |_, _| rng.random::<f64>());
    let mean = fm.mixture_mean();
    let mut expectation = DVector::zeros(fm.d());
    for s in 0..mdp.n() {
        for a in 0..mdp.m() {
            let k = flat_index(s, a, mdp.m());
            if mean[k] <= 0.0 {
                continue;
            }
            let sample = OracleSample { policy_index: 0, state: s, action: a, cost: mdp.cost(s, a) };
            if let Ok(g) = stochastic_primal_gradient(&lambda, &sample, fm) {
                expectation += g * mean[k];
            }
        }
    }
    let direct = fm.psi().transpose() * (mdp.cost_flat() - lambda);
    (expectation - direct).amax()
}

/// Run the whole suite against a model, its base policies, and the feature
/// matrix the solvers would use (either freshly built or loaded from disk).
pub fn validate_suite(
    mdp: &Mdp,
    base: &[RandomizedPolicy],
    psi: &DMatrix<f64>,
    fm: &FeatureMatrix,
) -> Result<ValidationReport> {
    let mut checks = Vec::new();

    let features = validate_feature_matrix(psi, mdp)?;
    checks.push(CheckResult {
        name: "feature_normalization".into(),
        passed: features.normalization_ok,
        value: features.normalization_residual,
        tolerance: 1e-10,
    });
    checks.push(CheckResult {
        name: "feature_stationarity".into(),
        passed: features.stationarity_ok,
        value: features.stationarity_residual,
        tolerance: 1e-8,
    });

    let d = fm.d().max(2);
    let ball = BallModulus::new(100.0).expect("positive radius");
    geometry_checks(&mut checks, "ball", &ball, d);
    let boxm = BoxModulus::new(100.0, d).expect("positive radius");
    geometry_checks(&mut checks, "box", &boxm, d);

    let unbiased = unbiasedness_residual(mdp, fm);
    checks.push(CheckResult {
        name: "gradient_unbiasedness".into(),
        passed: unbiased <= 1e-12,
        value: unbiased,
        tolerance: 1e-12,
    });

    let kappa = ergodicity_kappa(mdp, base)?;
    checks.push(CheckResult {
        name: "ergodicity_kappa".into(),
        passed: kappa.bounded,
        value: kappa.kappa,
        tolerance: f64::NAN,
    });

    Ok(ValidationReport { checks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::build_features_exact;
    use crate::queue::{build_queue_mdp, make_base_policies, KernelKind, QueueSpec};

    fn queue_setup() -> (Mdp, Vec<RandomizedPolicy>, FeatureMatrix) {
        let spec = QueueSpec {
            buffer: 10,
            rho: 0.5,
            actions: vec![0.2, 0.4, 0.6, 0.8],
            gamma: 1.0,
            kernel: KernelKind::Product,
        };
        let mdp = build_queue_mdp(&spec).unwrap();
        let (p1, p2) = make_base_policies(&spec).unwrap();
        let base = vec![p1, p2];
        let fm = build_features_exact(&mdp, &base).unwrap();
        (mdp, base, fm)
    }

    #[test]
    fn default_queue_suite_passes() {
        let (mdp, base, fm) = queue_setup();
        let report = validate_suite(&mdp, &base, fm.psi(), &fm).unwrap();
        assert!(report.all_passed(), "failing checks: {:?}", report.checks);
        assert!(report.checks.iter().any(|c| c.name == "ergodicity_kappa" && c.value.is_finite()));
    }

    #[test]
    fn corrupted_features_fail_normalization() {
        let (mdp, base, fm) = queue_setup();
        let mut psi = fm.psi().clone();
        psi[(3, 0)] += 5e-3;
        let report = validate_suite(&mdp, &base, &psi, &fm).unwrap();
        let norm = report.checks.iter().find(|c| c.name == "feature_normalization").unwrap();
        assert!(!norm.passed);
        assert!((norm.value - 5e-3).abs() < 1e-10);
    }

    #[test]
    fn report_serializes() {
        let (mdp, base, fm) = queue_setup();
        let report = validate_suite(&mdp, &base, fm.psi(), &fm).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("validation.json");
        report.write_json(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("feature_normalization"));
    }
}
