//! Legendre moduli, their conjugates, and the Bregman projection onto the
//! hyperplane `theta' 1 = 1`.
//!
//! A Legendre modulus `phi` carries a gradient map `grad phi` that bijects the
//! domain interior onto the conjugate domain, with inverse `grad phi*`. The
//! mirror step moves in conjugate space, and the projection back onto the
//! hyperplane reduces to the one-dimensional problem
//!
//! ```text
//!   z* = argmin_z J(z),   J(z) = phi*(z 1 + grad phi(theta~)) - z,
//! ```
//!
//! after which the projected point is `grad phi*(z* 1 + grad phi(theta~))`.
//! `J` is strictly convex with `J'(z) = 1' grad phi*(z 1 + y) - 1`, so the
//! solve is a safeguarded Newton iteration; for the Euclidean-ball modulus the
//! minimizer has a closed form ([`solve_z_ball`]).
//!
//! Two moduli are provided:
//!
//! * [`BallModulus`]: `phi(t) = -sqrt(R^2 - |t|^2)` on the Euclidean ball,
//!   with conjugate `R sqrt(1 + |y|^2)` and a Hellinger-like divergence.
//! * [`BoxModulus`]: the symmetric entropy
//!   `phi(t) = sum (R+t_i) ln(R+t_i) + (R-t_i) ln(R-t_i)` on the hypercube
//!   `(-R, R)^d`, with `grad phi*(y) = R tanh(y/2)` coordinatewise.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative width of the guard band that keeps iterates off the boundary,
/// where the gradient map blows up.
pub const BOUNDARY_SHRINK: f64 = 1e-9;

/// Margin on the feasibility requirement for the hyperplane to cut the domain
/// interior (`R > 1/sqrt(d)` for the ball, `R > 1/d` for the box).
const FEASIBILITY_MARGIN: f64 = 1e-6;

/// Norm that shapes the policy-class domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormTag {
    Euclidean,
    Max,
}

/// A Legendre modulus over a bounded domain, with conjugate and divergence.
pub trait BregmanGeometry: Sync + Send {
    /// Domain radius.
    fn radius(&self) -> f64;

    /// Norm defining the domain.
    fn norm_tag(&self) -> NormTag;

    fn phi(&self, theta: &DVector<f64>) -> f64;

    fn grad_phi(&self, theta: &DVector<f64>) -> DVector<f64>;

    fn phi_star(&self, y: &DVector<f64>) -> f64;

    fn grad_phi_star(&self, y: &DVector<f64>) -> DVector<f64>;

    /// Is `theta` in the closed domain?
    fn contains(&self, theta: &DVector<f64>) -> bool;

    /// Is `theta` strictly inside the domain?
    fn is_interior(&self, theta: &DVector<f64>) -> bool;

    /// Pull `theta` into the shrunken domain if it strayed onto or past the
    /// boundary. Returns true when a clamp happened.
    fn clamp_interior(&self, theta: &mut DVector<f64>) -> bool;

    /// Squared norm under which the modulus is 1-strongly convex, so that
    /// `divergence(a, b) >= 0.5 * strong_convexity_norm_sq(a - b)`.
    fn strong_convexity_norm_sq(&self, v: &DVector<f64>) -> f64;

    /// `1' Hess(phi*)(u) 1`, the second derivative of `J` at `u = z 1 + y`.
    fn ones_hessian_phi_star(&self, u: &DVector<f64>) -> f64;

    /// Bregman divergence `D(a; b) = phi(a) - phi(b) - <a - b, grad phi(b)>`,
    /// through the modulus-specific closed form.
    fn divergence(&self, a: &DVector<f64>, b: &DVector<f64>) -> Result<f64>;

    /// Check the hyperplane `theta' 1 = 1` cuts the domain interior for
    /// dimension `d`.
    fn check_hyperplane_feasible(&self, d: usize) -> Result<()>;

    /// Multiplier `z*` minimizing `J(z) = phi*(z 1 + y) - z`. The default is
    /// the safeguarded Newton solve; moduli with closed forms override it.
    fn solve_hyperplane_multiplier(&self, y: &DVector<f64>) -> Result<f64> {
        minimize_j(self, y)
    }
}

/// `phi(theta) = -sqrt(R^2 - |theta|_2^2)` on the closed Euclidean ball of
/// radius `R`.
#[derive(Debug, Clone, Copy)]
pub struct BallModulus {
    r: f64,
}

impl BallModulus {
    pub fn new(r: f64) -> Result<Self> {
        if !(r > 0.0) {
            return Err(Error::Invalid(format!("ball radius {r} must be positive")));
        }
        Ok(Self { r })
    }

    fn defect(&self, theta: &DVector<f64>) -> f64 {
        self.r * self.r - theta.norm_squared()
    }
}

impl BregmanGeometry for BallModulus {
    fn radius(&self) -> f64 {
        self.r
    }

    fn norm_tag(&self) -> NormTag {
        NormTag::Euclidean
    }

    fn phi(&self, theta: &DVector<f64>) -> f64 {
        -self.defect(theta).max(0.0).sqrt()
    }

    fn grad_phi(&self, theta: &DVector<f64>) -> DVector<f64> {
        theta / self.defect(theta).sqrt()
    }

    fn phi_star(&self, y: &DVector<f64>) -> f64 {
        self.r * (1.0 + y.norm_squared()).sqrt()
    }

    fn grad_phi_star(&self, y: &DVector<f64>) -> DVector<f64> {
        y * (self.r / (1.0 + y.norm_squared()).sqrt())
    }

    fn contains(&self, theta: &DVector<f64>) -> bool {
        theta.norm() <= self.r
    }

    fn is_interior(&self, theta: &DVector<f64>) -> bool {
        theta.norm() < self.r
    }

    fn clamp_interior(&self, theta: &mut DVector<f64>) -> bool {
        let limit = (1.0 - BOUNDARY_SHRINK) * self.r;
        let norm = theta.norm();
        if norm > limit {
            *theta *= limit / norm;
            true
        } else {
            false
        }
    }

    fn strong_convexity_norm_sq(&self, v: &DVector<f64>) -> f64 {
        v.norm_squared() / self.r
    }

    fn ones_hessian_phi_star(&self, u: &DVector<f64>) -> f64 {
        let d = u.len() as f64;
        let s = (1.0 + u.norm_squared()).sqrt();
        let ones_dot: f64 = u.iter().sum();
        self.r * (d / s - ones_dot * ones_dot / (s * s * s))
    }

    fn divergence(&self, a: &DVector<f64>, b: &DVector<f64>) -> Result<f64> {
        if !self.contains(a) {
            return Err(Error::Domain(format!("|a| = {} exceeds ball radius {}", a.norm(), self.r)));
        }
        if !self.is_interior(b) {
            return Err(Error::Domain(format!("|b| = {} not interior to ball radius {}", b.norm(), self.r)));
        }
        let r2 = self.r * self.r;
        Ok((r2 - a.dot(b)) / self.defect(b).sqrt() - self.defect(a).max(0.0).sqrt())
    }

    fn check_hyperplane_feasible(&self, d: usize) -> Result<()> {
        let needed = (1.0 + FEASIBILITY_MARGIN) / (d as f64).sqrt();
        if self.r < needed {
            return Err(Error::InfeasibleGeometry(format!(
                "ball radius {} cannot reach the hyperplane in dimension {d} (needs R >= {needed:.6})",
                self.r
            )));
        }
        Ok(())
    }

    fn solve_hyperplane_multiplier(&self, y: &DVector<f64>) -> Result<f64> {
        // grad phi(theta~) equals the V vector of the closed form.
        solve_z_ball(self.r, y.len(), y)
    }
}

/// Symmetric-entropy modulus on the hypercube `(-R, R)^d`.
#[derive(Debug, Clone, Copy)]
pub struct BoxModulus {
    r: f64,
    dim: usize,
}

impl BoxModulus {
    pub fn new(r: f64, dim: usize) -> Result<Self> {
        if !(r > 0.0) {
            return Err(Error::Invalid(format!("box radius {r} must be positive")));
        }
        if dim == 0 {
            return Err(Error::Invalid("box dimension must be positive".into()));
        }
        Ok(Self { r, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

fn xlogx(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

impl BregmanGeometry for BoxModulus {
    fn radius(&self) -> f64 {
        self.r
    }

    fn norm_tag(&self) -> NormTag {
        NormTag::Max
    }

    fn phi(&self, theta: &DVector<f64>) -> f64 {
        theta.iter().map(|&t| xlogx(self.r + t) + xlogx(self.r - t)).sum()
    }

    fn grad_phi(&self, theta: &DVector<f64>) -> DVector<f64> {
        theta.map(|t| ((self.r + t) / (self.r - t)).ln())
    }

    fn phi_star(&self, y: &DVector<f64>) -> f64 {
        // per coordinate: R|y| + 2R ln(1 + exp(-|y|)) - 2R ln(2R)
        let log_2r = (2.0 * self.r).ln();
        y.iter()
            .map(|&v| {
                let a = v.abs();
                self.r * a + 2.0 * self.r * ((-a).exp().ln_1p() - log_2r)
            })
            .sum()
    }

    fn grad_phi_star(&self, y: &DVector<f64>) -> DVector<f64> {
        y.map(|v| self.r * (v / 2.0).tanh())
    }

    fn contains(&self, theta: &DVector<f64>) -> bool {
        theta.iter().all(|&t| t.abs() <= self.r)
    }

    fn is_interior(&self, theta: &DVector<f64>) -> bool {
        theta.iter().all(|&t| t.abs() < self.r)
    }

    fn clamp_interior(&self, theta: &mut DVector<f64>) -> bool {
        let limit = (1.0 - BOUNDARY_SHRINK) * self.r;
        let mut clamped = false;
        for t in theta.iter_mut() {
            if t.abs() > limit {
                *t = t.signum() * limit;
                clamped = true;
            }
        }
        clamped
    }

    fn strong_convexity_norm_sq(&self, v: &DVector<f64>) -> f64 {
        let max = v.amax();
        2.0 * max * max / self.r
    }

    fn ones_hessian_phi_star(&self, u: &DVector<f64>) -> f64 {
        // (R/2) sum sech^2(u_i / 2), written overflow-safe
        u.iter()
            .map(|&v| {
                let e = (-v.abs()).exp();
                let denom = 1.0 + e;
                self.r / 2.0 * (4.0 * e / (denom * denom))
            })
            .sum()
    }

    fn divergence(&self, a: &DVector<f64>, b: &DVector<f64>) -> Result<f64> {
        if a.len() != b.len() {
            return Err(Error::Dimension("divergence operands differ in length".into()));
        }
        if !self.contains(a) {
            return Err(Error::Domain("a outside the hypercube".into()));
        }
        if !self.is_interior(b) {
            return Err(Error::Domain("b not interior to the hypercube".into()));
        }
        let mut sum = 0.0;
        for i in 0..a.len() {
            let (ai, bi) = (a[i], b[i]);
            let plus = if ai + self.r > 0.0 {
                (ai + self.r) * ((ai + self.r) / (bi + self.r)).ln()
            } else {
                0.0
            };
            let minus = if self.r - ai > 0.0 {
                (self.r - ai) * ((self.r - ai) / (self.r - bi)).ln()
            } else {
                0.0
            };
            sum += plus + minus;
        }
        Ok(sum)
    }

    fn check_hyperplane_feasible(&self, d: usize) -> Result<()> {
        let needed = (1.0 + FEASIBILITY_MARGIN) / d as f64;
        if self.r < needed {
            return Err(Error::InfeasibleGeometry(format!(
                "box radius {} cannot reach the hyperplane in dimension {d} (needs R >= {needed:.6})",
                self.r
            )));
        }
        Ok(())
    }
}

/// Closed-form minimizer of `J` for the ball modulus.
///
/// With `V = theta~ / sqrt(R^2 - |theta~|^2)` (that is, `grad phi(theta~)`),
/// `J'(z) = 0` reduces to the quadratic
/// `d(R^2 d - 1) z^2 + 2 S (R^2 d - 1) z + (R^2 S^2 - 1 - |V|^2) = 0`,
/// `S = 1'V`, whose valid root keeps `z d + S >= 0`. The discriminant
/// rearranges to `(R^2 d - 1)(d (1 + |V|^2) - S^2)`, nonnegative by
/// Cauchy-Schwarz, and the root is taken in the cancellation-free branch.
pub fn solve_z_ball(r: f64, d: usize, v: &DVector<f64>) -> Result<f64> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("non-finite conjugate vector in hyperplane solve".into()));
    }
    let df = d as f64;
    let r2d = r * r * df;
    if r2d - 1.0 < FEASIBILITY_MARGIN {
        return Err(Error::InfeasibleGeometry(format!(
            "ball radius {r} too small for the hyperplane in dimension {d}"
        )));
    }
    let s: f64 = v.iter().sum();
    let v2 = v.norm_squared();
    let a = df * (r2d - 1.0);
    let b_half = s * (r2d - 1.0);
    let c = r * r * s * s - 1.0 - v2;
    let mut disc_quarter = (r2d - 1.0) * (df * (1.0 + v2) - s * s);
    if disc_quarter < 0.0 {
        if disc_quarter < -1e-12 {
            return Err(Error::Numeric(format!("negative discriminant {disc_quarter:.3e} in hyperplane solve")));
        }
        disc_quarter = 0.0;
    }
    let sq = disc_quarter.sqrt();
    let z = if b_half <= 0.0 { (-b_half + sq) / a } else { c / (-b_half - sq) };
    Ok(z)
}

const NEWTON_MAX_ITERS: usize = 200;
const BRACKET_MAX_DOUBLINGS: usize = 64;
const J_PRIME_TOL: f64 = 1e-10;
const Z_STEP_TOL: f64 = 1e-12;

fn j_prime(geom: &(impl BregmanGeometry + ?Sized), y: &DVector<f64>, z: f64) -> f64 {
    let u = y.add_scalar(z);
    geom.grad_phi_star(&u).iter().sum::<f64>() - 1.0
}

/// Newton iteration with bisection safeguarding for `argmin_z J(z)`.
///
/// `J'` is increasing, so a sign-changing bracket is grown by doubling from
/// zero; failure to bracket within 64 doublings means the hyperplane is out of
/// reach.
pub fn minimize_j(geom: &(impl BregmanGeometry + ?Sized), y: &DVector<f64>) -> Result<f64> {
    let g0 = j_prime(geom, y, 0.0);
    if g0.abs() <= J_PRIME_TOL {
        return Ok(0.0);
    }
    // bracket [lo, hi] with J'(lo) < 0 < J'(hi)
    let (mut lo, mut hi, mut g_lo, mut g_hi);
    if g0 < 0.0 {
        lo = 0.0;
        g_lo = g0;
        let mut step = 1.0;
        loop {
            hi = lo + step;
            g_hi = j_prime(geom, y, hi);
            if g_hi > 0.0 {
                break;
            }
            step *= 2.0;
            if step > 2f64.powi(BRACKET_MAX_DOUBLINGS as i32) {
                return Err(Error::InfeasibleGeometry(
                    "hyperplane multiplier bracket not found (J' stays negative)".into(),
                ));
            }
        }
    } else {
        hi = 0.0;
        g_hi = g0;
        let mut step = 1.0;
        loop {
            lo = hi - step;
            g_lo = j_prime(geom, y, lo);
            if g_lo < 0.0 {
                break;
            }
            step *= 2.0;
            if step > 2f64.powi(BRACKET_MAX_DOUBLINGS as i32) {
                return Err(Error::InfeasibleGeometry(
                    "hyperplane multiplier bracket not found (J' stays positive)".into(),
                ));
            }
        }
    }
    let _ = (g_lo, g_hi);
    let mut z = 0.5 * (lo + hi);
    for _ in 0..NEWTON_MAX_ITERS {
        let g = j_prime(geom, y, z);
        if g.abs() <= J_PRIME_TOL {
            return Ok(z);
        }
        if g < 0.0 {
            lo = z;
        } else {
            hi = z;
        }
        let h = geom.ones_hessian_phi_star(&y.add_scalar(z));
        let newton = if h > 0.0 { z - g / h } else { f64::NAN };
        let next = if newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - z).abs() <= Z_STEP_TOL {
            return Ok(next);
        }
        z = next;
    }
    Err(Error::Numeric("hyperplane multiplier solve did not converge".into()))
}

/// Bregman projection of an interior point onto the hyperplane
/// `theta' 1 = 1`: `theta+ = grad phi*(z* 1 + grad phi(theta~))`.
pub fn hyperplane_project(
    geom: &(impl BregmanGeometry + ?Sized),
    theta_tilde: &DVector<f64>,
) -> Result<DVector<f64>> {
    geom.check_hyperplane_feasible(theta_tilde.len())?;
    if !geom.is_interior(theta_tilde) {
        return Err(Error::Domain("projection input must be strictly interior".into()));
    }
    let y = geom.grad_phi(theta_tilde);
    let z = geom.solve_hyperplane_multiplier(&y)?;
    Ok(geom.grad_phi_star(&y.add_scalar(z)))
}

/// Geometry selector for configs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeometryKind {
    Ball,
    Box,
}

impl GeometryKind {
    /// Instantiate the modulus for dimension `d`, checking the hyperplane is
    /// reachable.
    pub fn build(self, r: f64, d: usize) -> Result<std::boxed::Box<dyn BregmanGeometry>> {
        let geom: std::boxed::Box<dyn BregmanGeometry> = match self {
            GeometryKind::Ball => std::boxed::Box::new(BallModulus::new(r)?),
            GeometryKind::Box => std::boxed::Box::new(BoxModulus::new(r, d)?),
        };
        geom.check_hyperplane_feasible(d)?;
        Ok(geom)
    }
}
