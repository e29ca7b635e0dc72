//! State-visit histograms per base policy: exact stationary/discounted
//! weights next to single-trajectory estimates.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::features::{build_features_empirical, build_q};
use crate::mdp::{state_occupancy, Mdp, RandomizedPolicy};

/// Per-policy comparison of exact and empirical state distributions.
#[derive(Debug, Clone)]
pub struct HistogramResult {
    pub exact: DVector<f64>,
    pub empirical: DVector<f64>,
    pub max_abs_diff: f64,
    pub tv_distance: f64,
}

/// Compute exact state weights and a `horizon`-step empirical histogram for
/// each base policy. Policy `i` rolls out with seed `seed + i`.
pub fn features_histogram(
    mdp: &Mdp,
    base: &[RandomizedPolicy],
    horizon: usize,
    seed: u64,
) -> Result<Vec<HistogramResult>> {
    if horizon == 0 {
        return Err(Error::Invalid("histogram horizon must be at least 1".into()));
    }
    let q = build_q(mdp.n(), mdp.m());
    base.iter()
        .enumerate()
        .map(|(i, pi)| {
            let exact = state_occupancy(mdp, pi)?.mu;
            let fm = build_features_empirical(mdp, std::slice::from_ref(pi), horizon, seed + i as u64)?;
            let empirical = q.state_marginals(&fm.psi().column(0).into_owned());
            let diff = &empirical - &exact;
            Ok(HistogramResult {
                max_abs_diff: diff.amax(),
                tv_distance: 0.5 * diff.abs().sum(),
                exact,
                empirical,
            })
        })
        .collect()
}

/// Write one CSV per policy with columns `state,exact,empirical,abs_diff`
/// (states reported 1-based).
pub fn write_histogram_csvs(
    results: &[HistogramResult],
    dir: &std::path::Path,
) -> Result<Vec<std::path::PathBuf>> {
    let mut paths = Vec::new();
    for (i, res) in results.iter().enumerate() {
        let path = dir.join(format!("histogram_policy_{}.csv", i + 1));
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["state", "exact", "empirical", "abs_diff"])?;
        for s in 0..res.exact.len() {
            w.write_record(&[
                (s + 1).to_string(),
                format!("{}", res.exact[s]),
                format!("{}", res.empirical[s]),
                format!("{}", (res.empirical[s] - res.exact[s]).abs()),
            ])?;
        }
        w.flush()?;
        paths.push(path);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;

    #[test]
    fn deterministic_cycle_has_exact_split() {
        let swap = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let mdp = Mdp::new(
            vec![swap],
            DMatrix::zeros(1, 2),
            1.0,
            DVector::from_vec(vec![1.0, 0.0]),
        )
        .unwrap();
        let res = features_histogram(&mdp, &[RandomizedPolicy::uniform(2, 1)], 1000, 5).unwrap();
        assert_eq!(res.len(), 1);
        assert_abs_diff_eq!(res[0].empirical[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(res[0].exact[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(res[0].max_abs_diff, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_horizon_rejected() {
        let swap = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let mdp = Mdp::new(
            vec![swap],
            DMatrix::zeros(1, 2),
            1.0,
            DVector::from_vec(vec![0.5, 0.5]),
        )
        .unwrap();
        assert!(features_histogram(&mdp, &[RandomizedPolicy::uniform(2, 1)], 0, 5).is_err());
    }

    #[test]
    fn csv_layout_is_stable() {
        let swap = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let mdp = Mdp::new(
            vec![swap],
            DMatrix::zeros(1, 2),
            1.0,
            DVector::from_vec(vec![1.0, 0.0]),
        )
        .unwrap();
        let res = features_histogram(&mdp, &[RandomizedPolicy::uniform(2, 1)], 100, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let paths = write_histogram_csvs(&res, dir.path()).unwrap();
        let text = std::fs::read_to_string(&paths[0]).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "state,exact,empirical,abs_diff");
        assert!(lines.next().unwrap().starts_with("1,0.5,"));
    }
}
