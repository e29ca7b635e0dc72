//! Brute-force simplex-grid oracle over mixture weights.
//!
//! Enumerates weight vectors on the simplex grid with spacing `1/K`, prices
//! each mixture policy exactly through its occupation measure, and returns
//! the minimizer. The feature-space objective `c' Psi omega` is minimized
//! over the same grid and reported alongside: the first is the
//! decision-relevant target (cost of the deployable mixture policy), the
//! second is the quantity the dual solvers optimize.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::features::{mixture_policy, FeatureMatrix};
use crate::mdp::{occupation_measure, policy_cost, Mdp, RandomizedPolicy};
use crate::parallel;

#[derive(Debug, Clone, Serialize)]
pub struct GridOracleResult {
    /// Grid minimizer of the exact mixture-policy cost.
    pub best_omega: Vec<f64>,
    pub best_cost: f64,
    /// Grid minimizer of the feature-space objective `c' Psi omega`.
    pub best_alp_omega: Vec<f64>,
    pub best_alp_cost: f64,
    pub resolution: usize,
}

fn simplex_grid(d: usize, k: usize) -> Vec<Vec<f64>> {
    let kf = k as f64;
    match d {
        1 => vec![vec![1.0]],
        2 => (0..=k).map(|j| vec![1.0 - j as f64 / kf, j as f64 / kf]).collect(),
        3 => {
            let mut grid = Vec::new();
            for i in 0..=k {
                for j in 0..=(k - i) {
                    grid.push(vec![
                        i as f64 / kf,
                        j as f64 / kf,
                        (k - i - j) as f64 / kf,
                    ]);
                }
            }
            grid
        }
        _ => unreachable!("grid oracle guards d <= 3"),
    }
}

/// Exhaustive grid search over the mixture simplex. Ties resolve to the
/// earliest grid point in enumeration order.
pub fn oracle_grid_search(
    mdp: &Mdp,
    base: &[RandomizedPolicy],
    fm: &FeatureMatrix,
    resolution: usize,
) -> Result<GridOracleResult> {
    let d = base.len();
    if d == 0 || d > 3 {
        return Err(Error::Invalid(format!("grid oracle supports 1 <= d <= 3, got {d}")));
    }
    if resolution < 2 {
        return Err(Error::Invalid("grid resolution must be at least 2".into()));
    }
    if fm.d() != d {
        return Err(Error::Dimension("feature matrix and base-policy count differ".into()));
    }
    let grid = simplex_grid(d, resolution);
    let cost_flat = mdp.cost_flat();
    let evaluated = parallel::map_indexed(grid.len(), |g| {
        let omega = &grid[g];
        let mix_cost = mixture_policy(base, omega)
            .and_then(|pi| occupation_measure(mdp, &pi))
            .and_then(|xi| policy_cost(mdp, &xi));
        let alp_cost = cost_flat.dot(&fm.apply(&nalgebra::DVector::from_vec(omega.clone())));
        mix_cost.map(|c| (c, alp_cost))
    });
    let mut best: Option<(usize, f64)> = None;
    let mut best_alp: Option<(usize, f64)> = None;
    for (g, entry) in evaluated.into_iter().enumerate() {
        let (mix_cost, alp_cost) = entry?;
        if best.map(|(_, c)| mix_cost < c).unwrap_or(true) {
            best = Some((g, mix_cost));
        }
        if best_alp.map(|(_, c)| alp_cost < c).unwrap_or(true) {
            best_alp = Some((g, alp_cost));
        }
    }
    let (gi, best_cost) = best.expect("grid nonempty");
    let (ga, best_alp_cost) = best_alp.expect("grid nonempty");
    Ok(GridOracleResult {
        best_omega: grid[gi].clone(),
        best_cost,
        best_alp_omega: grid[ga].clone(),
        best_alp_cost,
        resolution,
    })
}
