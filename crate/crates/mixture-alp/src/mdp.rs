//! Exact finite-MDP data model and linear-algebra primitives.
//!
//! States are indexed `0..n`, actions `0..m`. State-action pairs flatten
//! state-major: the pair `(s, a)` lives at `s * m + a`. That ordering is fixed
//! across the crate (occupancy vectors, feature rows, cost vectors, and the
//! aggregation matrix all share it).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Flat state-major index of the pair `(s, a)`.
#[inline]
pub fn flat_index(s: usize, a: usize, m: usize) -> usize {
    s * m + a
}

/// A finite MDP: per-action transition kernels, cost table, discount, and
/// initial state distribution.
#[derive(Debug, Clone)]
pub struct Mdp {
    n: usize,
    m: usize,
    /// `p[a]` is the n-by-n kernel of action `a`; row `s` is a distribution
    /// over successor states.
    p: Vec<DMatrix<f64>>,
    /// Cost table, `c[(a, s)]` = cost of playing `a` in `s`.
    c: DMatrix<f64>,
    gamma: f64,
    alpha: DVector<f64>,
}

const STOCHASTIC_TOL: f64 = 1e-12;

fn check_distribution(v: impl Iterator<Item = f64>, what: &str) -> Result<()> {
    let mut sum = 0.0;
    for (i, x) in v.enumerate() {
        if !x.is_finite() || x < 0.0 {
            return Err(Error::Invalid(format!("{what}: entry {i} = {x}")));
        }
        sum += x;
    }
    if (sum - 1.0).abs() > STOCHASTIC_TOL {
        return Err(Error::Invalid(format!("{what}: sums to {sum}")));
    }
    Ok(())
}

impl Mdp {
    /// Validate and build an MDP.
    pub fn new(p: Vec<DMatrix<f64>>, c: DMatrix<f64>, gamma: f64, alpha: DVector<f64>) -> Result<Self> {
        let m = p.len();
        if m == 0 {
            return Err(Error::Invalid("need at least one action".into()));
        }
        let n = p[0].nrows();
        if n == 0 {
            return Err(Error::Invalid("need at least one state".into()));
        }
        for (a, pa) in p.iter().enumerate() {
            if pa.nrows() != n || pa.ncols() != n {
                return Err(Error::Dimension(format!(
                    "kernel of action {a} is {}x{}, expected {n}x{n}",
                    pa.nrows(),
                    pa.ncols()
                )));
            }
            for s in 0..n {
                check_distribution(pa.row(s).iter().copied(), &format!("P[{a}] row {s}"))?;
            }
        }
        if c.nrows() != m || c.ncols() != n {
            return Err(Error::Dimension(format!(
                "cost table is {}x{}, expected {m}x{n}",
                c.nrows(),
                c.ncols()
            )));
        }
        if c.iter().any(|x| !x.is_finite()) {
            return Err(Error::Invalid("cost table has non-finite entries".into()));
        }
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::Invalid(format!("gamma = {gamma} outside (0, 1]")));
        }
        if alpha.len() != n {
            return Err(Error::Dimension(format!("alpha has length {}, expected {n}", alpha.len())));
        }
        check_distribution(alpha.iter().copied(), "alpha")?;
        Ok(Self { n, m, p, c, gamma, alpha })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    /// Kernel of action `a`.
    pub fn kernel(&self, a: usize) -> &DMatrix<f64> {
        &self.p[a]
    }

    /// Cost of playing action `a` in state `s`.
    pub fn cost(&self, s: usize, a: usize) -> f64 {
        self.c[(a, s)]
    }

    pub fn cost_min(&self) -> f64 {
        self.c.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn cost_max(&self) -> f64 {
        self.c.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Cost table flattened state-major to length `n*m`.
    pub fn cost_flat(&self) -> DVector<f64> {
        DVector::from_fn(self.n * self.m, |k, _| self.c[(k % self.m, k / self.m)])
    }

    /// The nm-by-n transition matrix whose row `(s, a)` is `P_a(s, ·)`.
    pub fn transition_flat(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n * self.m, self.n, |k, sp| self.p[k % self.m][(k / self.m, sp)])
    }

    /// Replace the discount factor (used by verification runs).
    pub fn with_gamma(mut self, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::Invalid(format!("gamma = {gamma} outside (0, 1]")));
        }
        self.gamma = gamma;
        Ok(self)
    }
}

/// JSON wire format: `{n, m, gamma, alpha, P: [a][s][s'], c: [a][s]}`.
#[derive(Debug, Serialize, Deserialize)]
pub struct MdpJson {
    pub n: usize,
    pub m: usize,
    pub gamma: f64,
    pub alpha: Vec<f64>,
    #[serde(rename = "P")]
    pub p: Vec<Vec<Vec<f64>>>,
    pub c: Vec<Vec<f64>>,
}

impl Mdp {
    pub fn to_json(&self) -> MdpJson {
        MdpJson {
            n: self.n,
            m: self.m,
            gamma: self.gamma,
            alpha: self.alpha.iter().copied().collect(),
            p: (0..self.m)
                .map(|a| (0..self.n).map(|s| self.p[a].row(s).iter().copied().collect()).collect())
                .collect(),
            c: (0..self.m).map(|a| (0..self.n).map(|s| self.c[(a, s)]).collect()).collect(),
        }
    }

    pub fn from_json(j: &MdpJson) -> Result<Self> {
        if j.p.len() != j.m || j.c.len() != j.m {
            return Err(Error::Dimension("P/c action count differs from m".into()));
        }
        let p = j
            .p
            .iter()
            .map(|rows| {
                if rows.len() != j.n || rows.iter().any(|r| r.len() != j.n) {
                    return Err(Error::Dimension("P rows differ from n".into()));
                }
                Ok(DMatrix::from_fn(j.n, j.n, |s, sp| rows[s][sp]))
            })
            .collect::<Result<Vec<_>>>()?;
        if j.c.iter().any(|r| r.len() != j.n) {
            return Err(Error::Dimension("c rows differ from n".into()));
        }
        let c = DMatrix::from_fn(j.m, j.n, |a, s| j.c[a][s]);
        Mdp::new(p, c, j.gamma, DVector::from_vec(j.alpha.clone()))
    }

    pub fn write_json(&self, path: &std::path::Path) -> Result<()> {
        let s = serde_json::to_string_pretty(&self.to_json())?;
        std::fs::write(path, s + "\n")?;
        Ok(())
    }

    pub fn read_json(path: &std::path::Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)?;
        let j: MdpJson = serde_json::from_str(&s)?;
        Self::from_json(&j)
    }
}

/// A randomized stationary policy: row `s` is a distribution over actions.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomizedPolicy {
    pi: DMatrix<f64>,
}

impl RandomizedPolicy {
    pub fn new(pi: DMatrix<f64>) -> Result<Self> {
        for s in 0..pi.nrows() {
            check_distribution(pi.row(s).iter().copied(), &format!("policy row {s}"))?;
        }
        Ok(Self { pi })
    }

    /// Every state plays the same action distribution `row`.
    pub fn state_independent(n: usize, row: &[f64]) -> Result<Self> {
        let m = row.len();
        Self::new(DMatrix::from_fn(n, m, |_, a| row[a]))
    }

    /// Uniform distribution over actions in every state.
    pub fn uniform(n: usize, m: usize) -> Self {
        Self { pi: DMatrix::from_element(n, m, 1.0 / m as f64) }
    }

    /// Deterministic policy from an action index per state.
    pub fn deterministic(actions: &[usize], m: usize) -> Result<Self> {
        if let Some(&bad) = actions.iter().find(|&&a| a >= m) {
            return Err(Error::Invalid(format!("action index {bad} out of range")));
        }
        Ok(Self {
            pi: DMatrix::from_fn(actions.len(), m, |s, a| if actions[s] == a { 1.0 } else { 0.0 }),
        })
    }

    pub fn n(&self) -> usize {
        self.pi.nrows()
    }

    pub fn m(&self) -> usize {
        self.pi.ncols()
    }

    /// Probability of action `a` in state `s`.
    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.pi[(s, a)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.pi
    }
}

/// A distribution over state-action pairs in state-major order.
#[derive(Debug, Clone)]
pub struct OccupancyVector {
    pub xi: DVector<f64>,
}

/// A distribution over states.
#[derive(Debug, Clone)]
pub struct StateDistribution {
    pub mu: DVector<f64>,
}

fn check_shapes(mdp: &Mdp, pi: &RandomizedPolicy) -> Result<()> {
    if pi.n() != mdp.n() || pi.m() != mdp.m() {
        return Err(Error::Dimension(format!(
            "policy is {}x{}, MDP wants {}x{}",
            pi.n(),
            pi.m(),
            mdp.n(),
            mdp.m()
        )));
    }
    Ok(())
}

/// Kernel induced by a policy: `P_pi(s, s') = sum_a pi_a(s) P_a(s, s')`.
pub fn policy_transition(mdp: &Mdp, pi: &RandomizedPolicy) -> Result<DMatrix<f64>> {
    check_shapes(mdp, pi)?;
    let n = mdp.n();
    let mut k = DMatrix::zeros(n, n);
    for a in 0..mdp.m() {
        let pa = mdp.kernel(a);
        for s in 0..n {
            let w = pi.prob(s, a);
            if w == 0.0 {
                continue;
            }
            for sp in 0..n {
                k[(s, sp)] += w * pa[(s, sp)];
            }
        }
    }
    Ok(k)
}

/// Stationary solve tolerance: singular values below `tol * sigma_max` count
/// as rank deficiency.
const RANK_TOL: f64 = 1e-10;

fn stationary_distribution(kernel: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = kernel.nrows();
    // Stack (P' - I) with the normalization row and least-squares solve; a
    // second stationary solution shows up as rank deficiency.
    let mut a = DMatrix::zeros(n + 1, n);
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] = kernel[(j, i)] - if i == j { 1.0 } else { 0.0 };
        }
    }
    for j in 0..n {
        a[(n, j)] = 1.0;
    }
    let mut b = DVector::zeros(n + 1);
    b[n] = 1.0;
    let svd = a.svd(true, true);
    let sigma_max = svd.singular_values.max();
    if svd.rank(RANK_TOL * sigma_max) < n {
        return Err(Error::Ergodicity(
            "stationary distribution is not unique (rank-deficient balance system)".into(),
        ));
    }
    let mu = svd
        .solve(&b, RANK_TOL * sigma_max)
        .map_err(|e| Error::Numeric(format!("stationary solve failed: {e}")))?
        .column(0)
        .into_owned();
    let resid = (kernel.transpose() * &mu - &mu).amax();
    if resid > 1e-8 {
        return Err(Error::Ergodicity(format!("stationary residual {resid:.3e}")));
    }
    normalize_distribution(mu)
}

fn normalize_distribution(mut mu: DVector<f64>) -> Result<DVector<f64>> {
    for (i, x) in mu.iter_mut().enumerate() {
        if *x < 0.0 {
            if *x < -1e-10 {
                return Err(Error::Ergodicity(format!("negative stationary mass {x:.3e} at state {i}")));
            }
            *x = 0.0;
        }
    }
    let sum: f64 = mu.iter().sum();
    if sum <= 0.0 {
        return Err(Error::Ergodicity("stationary mass vanished".into()));
    }
    mu /= sum;
    Ok(mu)
}

/// State-visit distribution of a policy.
///
/// For `gamma < 1` this is the discounted occupancy
/// `mu = (1 - gamma) * alpha' (I - gamma P_pi)^{-1}` solved as a dense linear
/// system; for `gamma = 1` it is the stationary distribution `mu' P_pi = mu'`,
/// which must be unique.
pub fn state_occupancy(mdp: &Mdp, pi: &RandomizedPolicy) -> Result<StateDistribution> {
    let kernel = policy_transition(mdp, pi)?;
    let gamma = mdp.gamma();
    let mu = if gamma < 1.0 {
        // (I - gamma P_pi)' mu = (1 - gamma) alpha
        let n = mdp.n();
        let a = DMatrix::identity(n, n) - kernel.transpose() * gamma;
        let b = mdp.alpha() * (1.0 - gamma);
        let mu = a
            .lu()
            .solve(&b)
            .ok_or_else(|| Error::Numeric("discounted occupancy solve is singular".into()))?;
        normalize_distribution(mu)?
    } else {
        stationary_distribution(&kernel)?
    };
    Ok(StateDistribution { mu })
}

/// Occupation measure `xi(s, a) = pi_a(s) * mu(s)` in state-major order.
pub fn occupation_measure(mdp: &Mdp, pi: &RandomizedPolicy) -> Result<OccupancyVector> {
    let mu = state_occupancy(mdp, pi)?.mu;
    let m = mdp.m();
    let xi = DVector::from_fn(mdp.n() * m, |k, _| mu[k / m] * pi.prob(k / m, k % m));
    Ok(OccupancyVector { xi })
}

/// Expected cost of an occupancy: `c' xi` with the cost table flattened
/// state-major.
pub fn policy_cost(mdp: &Mdp, xi: &OccupancyVector) -> Result<f64> {
    if xi.xi.len() != mdp.n() * mdp.m() {
        return Err(Error::Dimension(format!(
            "occupancy length {}, expected {}",
            xi.xi.len(),
            mdp.n() * mdp.m()
        )));
    }
    Ok(mdp.cost_flat().dot(&xi.xi))
}

/// One Bellman backup: `(Sv)(s) = min_a { c_a(s) + gamma * sum P_a(s,s') v(s') }`.
pub fn bellman_backup(mdp: &Mdp, v: &DVector<f64>) -> Result<DVector<f64>> {
    if mdp.gamma() >= 1.0 {
        return Err(Error::UnsupportedDiscount(
            "Bellman backup needs gamma < 1; average-cost evaluation goes through occupancies".into(),
        ));
    }
    if v.len() != mdp.n() {
        return Err(Error::Dimension(format!("value vector length {}, expected {}", v.len(), mdp.n())));
    }
    let gamma = mdp.gamma();
    let mut out = DVector::zeros(mdp.n());
    for s in 0..mdp.n() {
        let mut best = f64::INFINITY;
        for a in 0..mdp.m() {
            let mut q = mdp.cost(s, a);
            let pa = mdp.kernel(a);
            for sp in 0..mdp.n() {
                q += gamma * pa[(s, sp)] * v[sp];
            }
            if q < best {
                best = q;
            }
        }
        out[s] = best;
    }
    Ok(out)
}

/// Value iteration to `||Sv - v||_inf <= tol`; greedy ties break toward the
/// lowest action index.
pub fn value_iteration(mdp: &Mdp, tol: f64) -> Result<(DVector<f64>, RandomizedPolicy)> {
    if mdp.gamma() >= 1.0 {
        return Err(Error::UnsupportedDiscount("value iteration needs gamma < 1".into()));
    }
    if !(tol > 0.0) {
        return Err(Error::Invalid(format!("tol = {tol} must be positive")));
    }
    let gamma = mdp.gamma();
    let span = mdp.cost_max() - mdp.cost_min();
    let cap = if span <= 0.0 {
        1
    } else {
        ((tol * (1.0 - gamma) / span).ln() / gamma.ln()).ceil().max(1.0) as usize + 8
    };
    let mut v = DVector::zeros(mdp.n());
    let mut resid = f64::INFINITY;
    for _ in 0..cap {
        let next = bellman_backup(mdp, &v)?;
        resid = (&next - &v).amax();
        v = next;
        if resid <= tol {
            let greedy = greedy_policy(mdp, &v);
            return Ok((v, greedy));
        }
    }
    Err(Error::IterationLimit { iterations: cap, residual: resid })
}

fn greedy_policy(mdp: &Mdp, v: &DVector<f64>) -> RandomizedPolicy {
    let gamma = mdp.gamma();
    let actions: Vec<usize> = (0..mdp.n())
        .map(|s| {
            let mut best = (f64::INFINITY, 0usize);
            for a in 0..mdp.m() {
                let mut q = mdp.cost(s, a);
                let pa = mdp.kernel(a);
                for sp in 0..mdp.n() {
                    q += gamma * pa[(s, sp)] * v[sp];
                }
                if q < best.0 {
                    best = (q, a);
                }
            }
            best.1
        })
        .collect();
    RandomizedPolicy::deterministic(&actions, mdp.m()).expect("greedy indices in range")
}

/// Recover a policy from an occupancy by normalizing each state block; states
/// with zero marginal get the uniform row.
pub fn policy_from_occupancy(xi: &OccupancyVector, n: usize, m: usize) -> Result<RandomizedPolicy> {
    if xi.xi.len() != n * m {
        return Err(Error::Dimension(format!("occupancy length {}, expected {}", xi.xi.len(), n * m)));
    }
    if let Some((index, &value)) = xi.xi.iter().enumerate().find(|(_, &x)| x < -1e-12) {
        return Err(Error::Negativity { index, value });
    }
    let mut pi = DMatrix::zeros(n, m);
    for s in 0..n {
        let marginal: f64 = (0..m).map(|a| xi.xi[flat_index(s, a, m)].max(0.0)).sum();
        for a in 0..m {
            pi[(s, a)] = if marginal > 0.0 {
                xi.xi[flat_index(s, a, m)].max(0.0) / marginal
            } else {
                1.0 / m as f64
            };
        }
    }
    RandomizedPolicy::new(pi)
}

/// Ergodicity diagnostic for a set of policies.
#[derive(Debug, Clone, Copy)]
pub struct KappaDiagnostic {
    /// Smallest factor satisfying `1/(n sqrt(k)) <= mu(s) <= sqrt(k)/n` over
    /// the supplied policies; `f64::INFINITY` when some state is unvisited.
    pub kappa: f64,
    /// False when a zero-mass state forced the infinite sentinel.
    pub bounded: bool,
}

/// Smallest sandwich factor over the supplied policies:
/// `kappa = max_{pi, s} max{ (n mu(s))^2, (n mu(s))^{-2} }`.
///
/// A diagnostic over the supplied policies only, not a certificate for the
/// whole policy class.
pub fn ergodicity_kappa(mdp: &Mdp, policies: &[RandomizedPolicy]) -> Result<KappaDiagnostic> {
    let n = mdp.n() as f64;
    let mut kappa: f64 = 1.0;
    for pi in policies {
        let mu = state_occupancy(mdp, pi)?.mu;
        for &x in mu.iter() {
            if x <= 0.0 {
                return Ok(KappaDiagnostic { kappa: f64::INFINITY, bounded: false });
            }
            let scaled = n * x;
            kappa = kappa.max(scaled * scaled).max(1.0 / (scaled * scaled));
        }
    }
    Ok(KappaDiagnostic { kappa, bounded: true })
}

/// Cumulative rows of every `(s, a)` kernel row, flat-indexed; used by the
/// rollout samplers.
pub(crate) fn transition_cdfs(mdp: &Mdp) -> Vec<Vec<f64>> {
    let (n, m) = (mdp.n(), mdp.m());
    let mut out = Vec::with_capacity(n * m);
    for s in 0..n {
        for a in 0..m {
            let mut acc = 0.0;
            let row: Vec<f64> = (0..n)
                .map(|sp| {
                    acc += mdp.kernel(a)[(s, sp)];
                    acc
                })
                .collect();
            out.push(row);
        }
    }
    out
}

/// Draw an index from a cumulative distribution via binary search.
pub(crate) fn sample_cdf(cdf: &[f64], u: f64) -> usize {
    let mut lo = 0usize;
    let mut hi = cdf.len() - 1;
    while lo < hi {
        let mid = (lo + hi) / 2;
        if cdf[mid] < u {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    lo
}
