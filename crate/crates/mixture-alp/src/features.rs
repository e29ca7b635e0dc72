//! Feature matrices from base-policy occupation measures.
//!
//! Column `i` of the nm-by-d matrix `Psi` is the occupation measure of base
//! policy `i` (state-major rows). Because every column is itself a valid
//! occupancy, `Psi' 1 = 1` and, in the average-cost case, `Psi' (P - Q) = 0`:
//! the dual LP's normalization and stationarity constraints are absorbed by
//! construction and only nonnegativity survives.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mdp::{
    flat_index, occupation_measure, sample_cdf, transition_cdfs, Mdp, RandomizedPolicy,
};
use crate::parallel;

/// How a feature matrix was produced; fixes the column-sum tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureMode {
    Exact,
    Empirical,
}

/// Binary nm-by-n matrix whose column `i` has ones exactly on state block `i`.
#[derive(Debug, Clone)]
pub struct AggregationMatrix {
    q: DMatrix<f64>,
}

/// Build the state-aggregation matrix for `n` states and `m` actions.
pub fn build_q(n: usize, m: usize) -> AggregationMatrix {
    AggregationMatrix {
        q: DMatrix::from_fn(n * m, n, |k, j| if k / m == j { 1.0 } else { 0.0 }),
    }
}

impl AggregationMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.q
    }

    /// State marginals of a flat state-action vector: `xi' Q`.
    pub fn state_marginals(&self, xi: &DVector<f64>) -> DVector<f64> {
        self.q.transpose() * xi
    }
}

/// The nm-by-d feature matrix together with the base policies that induced it.
#[derive(Debug, Clone)]
pub struct FeatureMatrix {
    psi: DMatrix<f64>,
    base: Vec<RandomizedPolicy>,
    n: usize,
    m: usize,
    mode: FeatureMode,
}

impl FeatureMatrix {
    fn validated(
        psi: DMatrix<f64>,
        base: Vec<RandomizedPolicy>,
        n: usize,
        m: usize,
        mode: FeatureMode,
    ) -> Result<Self> {
        let tol = match mode {
            FeatureMode::Exact => 1e-10,
            FeatureMode::Empirical => 0.01,
        };
        for i in 0..psi.ncols() {
            let col = psi.column(i);
            if col.iter().any(|&x| x < -1e-14) {
                return Err(Error::Invalid(format!("feature column {i} has negative entries")));
            }
            let sum: f64 = col.iter().sum();
            if (sum - 1.0).abs() > tol {
                return Err(Error::Invalid(format!("feature column {i} sums to {sum}")));
            }
        }
        Ok(Self { psi, base, n, m, mode })
    }

    /// Assemble from a raw matrix without occupancy checks (test and
    /// harness plumbing).
    pub(crate) fn from_parts(psi: DMatrix<f64>, base: Vec<RandomizedPolicy>, n: usize, m: usize) -> Self {
        Self { psi, base, n, m, mode: FeatureMode::Exact }
    }

    pub fn psi(&self) -> &DMatrix<f64> {
        &self.psi
    }

    pub fn base_policies(&self) -> &[RandomizedPolicy] {
        &self.base
    }

    pub fn d(&self) -> usize {
        self.psi.ncols()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn nm(&self) -> usize {
        self.psi.nrows()
    }

    pub fn mode(&self) -> FeatureMode {
        self.mode
    }

    /// `Psi theta`.
    pub fn apply(&self, theta: &DVector<f64>) -> DVector<f64> {
        &self.psi * theta
    }

    /// Mixture mass `(1/d) sum_i psi^i` per state-action pair; the sampling
    /// distribution of the oracle and the importance-weight denominator.
    pub fn mixture_mean(&self) -> DVector<f64> {
        let d = self.d() as f64;
        let mut mean = DVector::zeros(self.nm());
        for i in 0..self.d() {
            mean += self.psi.column(i);
        }
        mean / d
    }

    /// One column per base policy, rows in state-major order.
    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let header: Vec<String> = (1..=self.d()).map(|i| format!("psi_{i}")).collect();
        w.write_record(&header)?;
        for k in 0..self.nm() {
            let row: Vec<String> = (0..self.d()).map(|i| format!("{}", self.psi[(k, i)])).collect();
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Read a feature matrix written by [`FeatureMatrix::write_csv`] back as a
/// raw matrix (the base policies are not part of the file).
pub fn read_feature_csv(path: &std::path::Path) -> Result<DMatrix<f64>> {
    let mut r = csv::Reader::from_path(path)?;
    let d = r.headers()?.len();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|x| x.parse::<f64>().map_err(|e| Error::Invalid(format!("bad float in feature csv: {e}"))))
            .collect::<Result<Vec<f64>>>()?;
        if row.len() != d {
            return Err(Error::Dimension("ragged feature csv".into()));
        }
        rows.push(row);
    }
    Ok(DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]))
}

/// Exact feature matrix: column `i` is `occupation_measure(mdp, base[i])`.
pub fn build_features_exact(mdp: &Mdp, base: &[RandomizedPolicy]) -> Result<FeatureMatrix> {
    if base.is_empty() {
        return Err(Error::Invalid("need at least one base policy".into()));
    }
    let columns = parallel::map_indexed(base.len(), |i| occupation_measure(mdp, &base[i]));
    let mut psi = DMatrix::zeros(mdp.n() * mdp.m(), base.len());
    for (i, col) in columns.into_iter().enumerate() {
        psi.set_column(i, &col?.xi);
    }
    FeatureMatrix::validated(psi, base.to_vec(), mdp.n(), mdp.m(), FeatureMode::Exact)
}

/// Empirical feature matrix from one rollout per base policy.
///
/// Each column holds normalized `(s, a)` visit counts of a single
/// `horizon`-step trajectory started from `alpha`, counted from the first
/// step with no burn-in. Trajectory `i` uses the deterministic stream seeded
/// by `(seed, i)`.
pub fn build_features_empirical(
    mdp: &Mdp,
    base: &[RandomizedPolicy],
    horizon: usize,
    seed: u64,
) -> Result<FeatureMatrix> {
    if base.is_empty() {
        return Err(Error::Invalid("need at least one base policy".into()));
    }
    if horizon == 0 {
        return Err(Error::Invalid("empirical horizon must be at least 1".into()));
    }
    for (i, pi) in base.iter().enumerate() {
        if pi.n() != mdp.n() || pi.m() != mdp.m() {
            return Err(Error::Dimension(format!("base policy {i} does not match the MDP")));
        }
    }
    let transition = transition_cdfs(mdp);
    let alpha_cdf: Vec<f64> = mdp
        .alpha()
        .iter()
        .scan(0.0, |acc, &x| {
            *acc += x;
            Some(*acc)
        })
        .collect();
    let columns = parallel::map_indexed(base.len(), |i| {
        let pi = &base[i];
        let m = mdp.m();
        let policy_cdf: Vec<Vec<f64>> = (0..mdp.n())
            .map(|s| {
                (0..m)
                    .scan(0.0, |acc, a| {
                        *acc += pi.prob(s, a);
                        Some(*acc)
                    })
                    .collect()
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
        let mut counts = vec![0u64; mdp.n() * m];
        let mut s = sample_cdf(&alpha_cdf, rng.random::<f64>());
        for _ in 0..horizon {
            let a = sample_cdf(&policy_cdf[s], rng.random::<f64>());
            counts[flat_index(s, a, m)] += 1;
            s = sample_cdf(&transition[flat_index(s, a, m)], rng.random::<f64>());
        }
        DVector::from_fn(mdp.n() * m, |k, _| counts[k] as f64 / horizon as f64)
    });
    let mut psi = DMatrix::zeros(mdp.n() * mdp.m(), base.len());
    for (i, col) in columns.into_iter().enumerate() {
        psi.set_column(i, &col);
    }
    FeatureMatrix::validated(psi, base.to_vec(), mdp.n(), mdp.m(), FeatureMode::Empirical)
}

/// Residual report for the absorbed dual-LP constraints.
#[derive(Debug, Clone, Copy)]
pub struct FeatureValidation {
    /// `max_i |1' psi^i - 1|`.
    pub normalization_residual: f64,
    /// `max |Psi' (P - Q)|` entrywise.
    pub stationarity_residual: f64,
    /// Residuals measured against the exact-mode tolerances (1e-10, 1e-8).
    pub normalization_ok: bool,
    pub stationarity_ok: bool,
}

impl FeatureValidation {
    pub fn passes(&self) -> bool {
        self.normalization_ok && self.stationarity_ok
    }

    pub fn passes_at(&self, tol_norm: f64, tol_stat: f64) -> bool {
        self.normalization_residual <= tol_norm && self.stationarity_residual <= tol_stat
    }
}

/// Measure `Psi' 1 = 1` and `Psi' (P - Q) = 0` residuals against `mdp`.
pub fn validate_features(fm: &FeatureMatrix, mdp: &Mdp) -> Result<FeatureValidation> {
    validate_feature_matrix(fm.psi(), mdp)
}

/// Residuals for a raw matrix (for feature files loaded from disk).
pub fn validate_feature_matrix(psi: &DMatrix<f64>, mdp: &Mdp) -> Result<FeatureValidation> {
    let nm = mdp.n() * mdp.m();
    if psi.nrows() != nm {
        return Err(Error::Dimension(format!("feature matrix has {} rows, expected {nm}", psi.nrows())));
    }
    let mut norm_resid = 0.0f64;
    for i in 0..psi.ncols() {
        norm_resid = norm_resid.max((psi.column(i).iter().sum::<f64>() - 1.0).abs());
    }
    let p_minus_q = mdp.transition_flat() - build_q(mdp.n(), mdp.m()).matrix();
    let stat = psi.transpose() * p_minus_q;
    let stat_resid = stat.amax();
    Ok(FeatureValidation {
        normalization_residual: norm_resid,
        stationarity_residual: stat_resid,
        normalization_ok: norm_resid <= 1e-10,
        stationarity_ok: stat_resid <= 1e-8,
    })
}

/// Convex combination of base policies: `pi_omega = sum_i omega_i pi^i`
/// rowwise.
pub fn mixture_policy(base: &[RandomizedPolicy], omega: &[f64]) -> Result<RandomizedPolicy> {
    if base.is_empty() || base.len() != omega.len() {
        return Err(Error::Dimension(format!(
            "{} base policies vs {} weights",
            base.len(),
            omega.len()
        )));
    }
    if omega.iter().any(|&w| w < 0.0) {
        return Err(Error::Domain("mixture weights must be nonnegative".into()));
    }
    let sum: f64 = omega.iter().sum();
    if (sum - 1.0).abs() > 1e-10 {
        return Err(Error::Domain(format!("mixture weights sum to {sum}")));
    }
    let (n, m) = (base[0].n(), base[0].m());
    if base.iter().any(|p| p.n() != n || p.m() != m) {
        return Err(Error::Dimension("base policies differ in shape".into()));
    }
    let mut pi = DMatrix::zeros(n, m);
    for (w, p) in omega.iter().zip(base) {
        pi += p.matrix() * *w;
    }
    RandomizedPolicy::new(pi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{policy_cost, state_occupancy, OccupancyVector};
    use approx::assert_abs_diff_eq;
    use rand::rngs::StdRng;

    fn two_state_two_action_mdp(gamma: f64) -> Mdp {
        // action 0 stays put, action 1 swaps states
        let stay = DMatrix::identity(2, 2);
        let swap = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        Mdp::new(
            vec![stay, swap],
            DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]),
            gamma,
            DVector::from_vec(vec![1.0, 0.0]),
        )
        .unwrap()
    }

    #[test]
    fn q_single_state_is_all_ones_column() {
        let q = build_q(1, 3);
        assert_eq!(q.matrix().nrows(), 3);
        assert_eq!(q.matrix().ncols(), 1);
        assert!(q.matrix().iter().all(|&x| x == 1.0));
    }

    #[test]
    fn q_block_identity_pattern() {
        let q = build_q(2, 2);
        let expect = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
        assert_eq!(q.matrix(), &expect);
    }

    #[test]
    fn q_recovers_state_marginals() {
        let mut rng = StdRng::seed_from_u64(30);
        let (n, m) = (4, 3);
        let mut xi = DVector::from_fn(n * m, |_, _| rng.random::<f64>());
        xi /= xi.iter().sum::<f64>();
        let marg = build_q(n, m).state_marginals(&xi);
        for s in 0..n {
            let direct: f64 = (0..m).map(|a| xi[flat_index(s, a, m)]).sum();
            assert_abs_diff_eq!(marg[s], direct, epsilon = 1e-14);
        }
    }

    #[test]
    fn exact_single_policy_column() {
        let mdp = two_state_two_action_mdp(0.9);
        let pi = RandomizedPolicy::uniform(2, 2);
        let fm = build_features_exact(&mdp, &[pi.clone()]).unwrap();
        assert_eq!(fm.d(), 1);
        let xi = occupation_measure(&mdp, &pi).unwrap().xi;
        assert!((fm.psi().column(0) - xi).amax() < 1e-15);
        assert_abs_diff_eq!(fm.psi().column(0).iter().sum::<f64>(), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn identical_base_policies_give_identical_columns() {
        let mdp = two_state_two_action_mdp(0.9);
        let pi = RandomizedPolicy::uniform(2, 2);
        let fm = build_features_exact(&mdp, &[pi.clone(), pi]).unwrap();
        assert!((fm.psi().column(0) - fm.psi().column(1)).amax() == 0.0);
    }

    #[test]
    fn feasibility_absorption_under_random_theta() {
        // (Psi theta)' 1 = 1 and (Psi theta)' (P - Q) = 0 for theta' 1 = 1
        // at gamma = 1 (stationary columns)
        let stay = DMatrix::from_row_slice(2, 2, &[0.7, 0.3, 0.4, 0.6]);
        let swap = DMatrix::from_row_slice(2, 2, &[0.2, 0.8, 0.9, 0.1]);
        let mdp = Mdp::new(
            vec![stay, swap],
            DMatrix::zeros(2, 2),
            1.0,
            DVector::from_vec(vec![0.5, 0.5]),
        )
        .unwrap();
        let mut rng = StdRng::seed_from_u64(31);
        let base = vec![
            crate::mdp::tests::random_policy(&mut rng, 2, 2),
            crate::mdp::tests::random_policy(&mut rng, 2, 2),
        ];
        let fm = build_features_exact(&mdp, &base).unwrap();
        let p_minus_q = mdp.transition_flat() - build_q(2, 2).matrix();
        for _ in 0..100 {
            let raw: f64 = rng.random::<f64>() * 4.0 - 2.0;
            let theta = DVector::from_vec(vec![raw, 1.0 - raw]);
            let xi = fm.apply(&theta);
            assert_abs_diff_eq!(xi.iter().sum::<f64>(), 1.0, epsilon = 1e-10);
            assert!((xi.transpose() * &p_minus_q).amax() <= 1e-8);
        }
    }

    #[test]
    fn validation_catches_perturbed_column() {
        let mdp = two_state_two_action_mdp(1.0);
        // use an ergodic policy pair at gamma=1
        let mdp = Mdp::new(
            vec![
                DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]),
                DMatrix::from_row_slice(2, 2, &[0.3, 0.7, 0.6, 0.4]),
            ],
            DMatrix::zeros(2, 2),
            1.0,
            mdp.alpha().clone(),
        )
        .unwrap();
        let base = vec![RandomizedPolicy::uniform(2, 2)];
        let fm = build_features_exact(&mdp, &base).unwrap();
        let report = validate_features(&fm, &mdp).unwrap();
        assert!(report.passes(), "clean features should pass: {report:?}");

        let mut psi = fm.psi().clone();
        psi[(1, 0)] += 1e-3;
        let report = validate_feature_matrix(&psi, &mdp).unwrap();
        assert!(!report.normalization_ok);
        assert!((report.normalization_residual - 1e-3).abs() < 1e-9);
    }

    #[test]
    fn empirical_horizon_one_is_one_hot() {
        let mdp = two_state_two_action_mdp(0.9);
        let fm = build_features_empirical(&mdp, &[RandomizedPolicy::uniform(2, 2)], 1, 7).unwrap();
        let col = fm.psi().column(0);
        assert_eq!(col.iter().filter(|&&x| x == 1.0).count(), 1);
        assert_eq!(col.iter().filter(|&&x| x == 0.0).count(), 3);
    }

    #[test]
    fn empirical_zero_horizon_errors() {
        let mdp = two_state_two_action_mdp(0.9);
        assert!(build_features_empirical(&mdp, &[RandomizedPolicy::uniform(2, 2)], 0, 7).is_err());
    }

    #[test]
    fn empirical_deterministic_cycle_is_exact() {
        // deterministic swap chain visits the two states alternately
        let swap = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let mdp = Mdp::new(
            vec![swap],
            DMatrix::zeros(1, 2),
            1.0,
            DVector::from_vec(vec![1.0, 0.0]),
        )
        .unwrap();
        let fm =
            build_features_empirical(&mdp, &[RandomizedPolicy::uniform(2, 1)], 1000, 3).unwrap();
        assert_abs_diff_eq!(fm.psi()[(0, 0)], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(fm.psi()[(1, 0)], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn mixture_policy_rules() {
        let p1 = RandomizedPolicy::deterministic(&[0, 1], 2).unwrap();
        let p2 = RandomizedPolicy::deterministic(&[1, 0], 2).unwrap();
        let base = vec![p1.clone(), p2];

        let ek = mixture_policy(&base, &[1.0, 0.0]).unwrap();
        assert_eq!(&ek, &p1);

        let half = mixture_policy(&base, &[0.5, 0.5]).unwrap();
        for s in 0..2 {
            for a in 0..2 {
                assert_abs_diff_eq!(half.prob(s, a), 0.5, epsilon = 1e-15);
            }
        }

        assert!(matches!(mixture_policy(&base, &[-0.1, 1.1]), Err(Error::Domain(_))));
        assert!(matches!(mixture_policy(&base, &[0.4, 0.4]), Err(Error::Domain(_))));
    }

    #[test]
    fn occupancy_of_mixture_differs_from_feature_combination() {
        // the dual image of a mixture is NOT the mixture of the dual images
        let mdp = two_state_two_action_mdp(0.9);
        let base = vec![
            RandomizedPolicy::deterministic(&[0, 0], 2).unwrap(),
            RandomizedPolicy::deterministic(&[1, 1], 2).unwrap(),
        ];
        let fm = build_features_exact(&mdp, &base).unwrap();
        let omega = [0.5, 0.5];
        let combo = fm.apply(&DVector::from_vec(omega.to_vec()));
        let mixed = occupation_measure(&mdp, &mixture_policy(&base, &omega).unwrap()).unwrap().xi;
        let tv = 0.5 * (combo - mixed).abs().sum();
        assert!(tv > 1e-3, "expected a visible gap, got TV = {tv}");
    }

    #[test]
    fn csv_roundtrip() {
        let mdp = two_state_two_action_mdp(0.9);
        let base = vec![RandomizedPolicy::uniform(2, 2), RandomizedPolicy::deterministic(&[0, 1], 2).unwrap()];
        let fm = build_features_exact(&mdp, &base).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("features.csv");
        fm.write_csv(&path).unwrap();
        let back = read_feature_csv(&path).unwrap();
        assert_eq!(back.nrows(), 4);
        assert_eq!(back.ncols(), 2);
        assert!((back - fm.psi()).amax() == 0.0);
    }

    #[test]
    fn mixture_cost_is_mean_under_uniform_weights() {
        let mdp = two_state_two_action_mdp(0.9);
        let uniform = OccupancyVector { xi: DVector::from_element(4, 0.25) };
        let mean = mdp.cost_flat().iter().sum::<f64>() / 4.0;
        assert_abs_diff_eq!(policy_cost(&mdp, &uniform).unwrap(), mean, epsilon = 1e-13);
        let mu = state_occupancy(&mdp, &RandomizedPolicy::uniform(2, 2)).unwrap().mu;
        assert_abs_diff_eq!(mu.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }
}
