//! Reference values computed independently of the continuation machinery:
//! the radial family on the unit disk, shooting on the interval, and
//! brute-force enumeration of discrete solutions on tiny grids.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::continuation::Branch;
use crate::error::{Error, Result};
use crate::geometry::DomainKind;
use crate::linalg::sup_norm;
use crate::nonlinearity::Nonlinearity;
use crate::problem::Problem;
use crate::solver::{linearize, newton_correct, residual, LinearSolve, NewtonOptions, StateVector};

/// Point of the family `u_b(r) = 2 ln((1 + b)/(1 + b r²))`, which solves
/// `−Δu = μ eᵘ` on the unit disk with `μ = 8b/(1 + b)²`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadialFamilyPoint {
    pub b: f64,
    pub mu: f64,
    pub sup: f64,
}

impl RadialFamilyPoint {
    pub fn u(&self, r: f64) -> f64 {
        2.0 * ((1.0 + self.b) / (1.0 + self.b * r * r)).ln()
    }

    /// `u″` in the radial direction; its largest magnitude sits at the
    /// centre, `4b`.
    pub fn u_rr(&self, r: f64) -> f64 {
        let q = 1.0 + self.b * r * r;
        -4.0 * self.b * (1.0 - self.b * r * r) / (q * q)
    }

    /// Family member with the given maximum, `b = e^{sup/2} − 1`.
    pub fn from_sup(sup: f64) -> Result<Self> {
        radial_family((0.5 * sup).exp() - 1.0)
    }
}

pub fn radial_family(b: f64) -> Result<RadialFamilyPoint> {
    if !(b > 0.0) || !b.is_finite() {
        return Err(Error::Domain(format!("radial family needs b > 0, got {b}")));
    }
    Ok(RadialFamilyPoint { b, mu: 8.0 * b / ((1.0 + b) * (1.0 + b)), sup: 2.0 * (1.0 + b).ln() })
}

/// Sup-norm of `Δ_h u_b + μ e^{u_b}` on an unmapped disk problem.
pub fn radial_residual(problem: &Problem, point: &RadialFamilyPoint) -> Result<f64> {
    if problem.mesh.domain.kind != DomainKind::Disk || !problem.diffeo.is_identity() {
        return Err(Error::Config("radial family lives on the unmapped disk".into()));
    }
    let full = problem.mesh.sample(|x| point.u(x[0].hypot(x[1])));
    let mut r = problem.op.apply_laplacian_full(&full);
    for (ri, &node) in r.iter_mut().zip(&problem.mesh.interior) {
        *ri += point.mu * full[node].exp();
    }
    Ok(sup_norm(&r))
}

/// `‖v − u_b‖∞` over the unknowns for the family member with `v`'s maximum.
pub fn radial_profile_error(problem: &Problem, v: &[f64]) -> Result<(RadialFamilyPoint, f64)> {
    let point = RadialFamilyPoint::from_sup(sup_norm(v))?;
    let err = problem
        .mesh
        .interior
        .iter()
        .zip(v)
        .map(|(&node, vi)| {
            let x = problem.mesh.points[node];
            (vi - point.u(x[0].hypot(x[1]))).abs()
        })
        .fold(0.0, f64::max);
    Ok((point, err))
}

/// First zero of the Bessel function `J₀`, by bisection on its power series.
pub fn bessel_j0_first_zero() -> f64 {
    let j0 = |x: f64| {
        let q = -0.25 * x * x;
        let (mut term, mut sum) = (1.0, 1.0);
        for k in 1..60 {
            term *= q / (k * k) as f64;
            sum += term;
        }
        sum
    };
    let (mut lo, mut hi) = (2.0, 3.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if j0(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Shot {
    pub alpha: f64,
    /// `v(1)`.
    pub end: f64,
    /// Accepted steps `(x, v, v')`.
    pub profile: Vec<(f64, f64, f64)>,
}

/// Dormand–Prince 5(4) coefficients.
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] =
    [5179.0 / 57600.0, 0.0, 7571.0 / 16695.0, 393.0 / 640.0, -92097.0 / 339200.0, 187.0 / 2100.0, 1.0 / 40.0];

/// Cap on `|v|` during integration.
pub const SHOOT_CAP: f64 = 1e6;

/// Integrates `v″ = −μ f(v)`, `v(0) = 0`, `v′(0) = α` to `x = 1` with an
/// adaptive embedded pair at relative and absolute tolerance `tol`.
pub fn shoot_1d_with(spec: &Nonlinearity, mu: f64, alpha: f64, tol: f64) -> Result<Shot> {
    let rhs = |y: [f64; 2]| -> Result<[f64; 2]> {
        if !spec.admits(y[0]) {
            return Err(Error::Domain(format!("v = {} outside the domain of {}", y[0], spec.description)));
        }
        Ok([y[1], -mu * spec.f(y[0])])
    };
    let mut x = 0.0;
    let mut y = [0.0, alpha];
    let mut h = 1e-3;
    let mut profile = vec![(0.0, 0.0, alpha)];
    let mut k = [[0.0; 2]; 7];
    k[0] = rhs(y)?;
    let mut steps = 0usize;
    while x < 1.0 {
        steps += 1;
        if steps > 2_000_000 {
            return Err(Error::NoConvergence { iterations: steps, residual: f64::NAN });
        }
        if x + h > 1.0 {
            h = 1.0 - x;
        }
        for s in 1..7 {
            let mut yi = y;
            for (j, kj) in k.iter().enumerate().take(s) {
                yi[0] += h * A[s][j] * kj[0];
                yi[1] += h * A[s][j] * kj[1];
            }
            k[s] = rhs(yi).unwrap_or([f64::NAN; 2]);
        }
        let mut y5 = y;
        let mut y4 = y;
        for s in 0..7 {
            y5[0] += h * B5[s] * k[s][0];
            y5[1] += h * B5[s] * k[s][1];
            y4[0] += h * B4[s] * k[s][0];
            y4[1] += h * B4[s] * k[s][1];
        }
        let mut err = 0.0f64;
        for i in 0..2 {
            let sc = tol + tol * y[i].abs().max(y5[i].abs());
            err = err.max((y5[i] - y4[i]).abs() / sc);
        }
        if !err.is_finite() {
            h *= 0.25;
            continue;
        }
        if err <= 1.0 {
            x += h;
            y = y5;
            // first-same-as-last: the seventh stage is f at the new point
            k[0] = k[6];
            if !k[0][0].is_finite() {
                k[0] = rhs(y)?;
            }
            profile.push((x, y[0], y[1]));
            if y[0].abs() > SHOOT_CAP {
                return Err(Error::Blowup { x, value: y[0] });
            }
        }
        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h *= factor;
        if h < 1e-14 {
            return Err(Error::Blowup { x, value: y[0] });
        }
    }
    Ok(Shot { alpha, end: y[0], profile })
}

pub fn shoot_1d(spec: &Nonlinearity, mu: f64, alpha: f64) -> Result<Shot> {
    shoot_1d_with(spec, mu, alpha, 1e-10)
}

/// Sign-definite end value: blow-up counts with the sign it was heading to.
fn end_value(spec: &Nonlinearity, mu: f64, alpha: f64, tol: f64) -> Result<f64> {
    match shoot_1d_with(spec, mu, alpha, tol) {
        Ok(s) => Ok(s.end),
        Err(Error::Blowup { value, .. }) => Ok(value.signum() * SHOOT_CAP),
        Err(e) => Err(e),
    }
}

/// All `α ∈ [0, alpha_max]` with `v(1) = 0`, from a scan of `n_scan`
/// intervals refined by bisection. `α = 0` counts when `μ = 0`.
pub fn shooting_roots(spec: &Nonlinearity, mu: f64, alpha_max: f64, n_scan: usize, tol: f64) -> Result<Vec<f64>> {
    let grid: Vec<f64> = (0..=n_scan).map(|i| alpha_max * i as f64 / n_scan as f64).collect();
    let vals: Vec<f64> = grid.iter().map(|&a| end_value(spec, mu, a, tol)).collect::<Result<_>>()?;
    let mut roots = Vec::new();
    for i in 0..n_scan {
        let (mut a, mut b) = (grid[i], grid[i + 1]);
        let (mut fa, fb) = (vals[i], vals[i + 1]);
        if fa == 0.0 {
            roots.push(a);
            continue;
        }
        if fa.signum() == fb.signum() || fb == 0.0 {
            continue;
        }
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            let fm = end_value(spec, mu, m, tol)?;
            if fm.signum() == fa.signum() {
                a = m;
                fa = fm;
            } else {
                b = m;
            }
            if b - a <= 1e-15 * b.max(1.0) {
                break;
            }
        }
        roots.push(0.5 * (a + b));
    }
    if vals[n_scan] == 0.0 {
        roots.push(alpha_max);
    }
    Ok(roots)
}

/// `max_α v(1; α)` on `[0, alpha_max]`: coarse scan, then golden section.
fn max_end(spec: &Nonlinearity, mu: f64, alpha_max: f64, tol: f64) -> Result<f64> {
    let n = 64;
    let mut best = (0usize, f64::NEG_INFINITY);
    for i in 0..=n {
        let v = end_value(spec, mu, alpha_max * i as f64 / n as f64, tol)?;
        if v > best.1 {
            best = (i, v);
        }
    }
    let step = alpha_max / n as f64;
    let (mut a, mut b) = ((best.0 as f64 - 1.0).max(0.0) * step, (best.0 as f64 + 1.0).min(n as f64) * step);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = end_value(spec, mu, c, tol)?;
    let mut fd = end_value(spec, mu, d, tol)?;
    for _ in 0..80 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = end_value(spec, mu, c, tol)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = end_value(spec, mu, d, tol)?;
        }
    }
    Ok(fc.max(fd).max(best.1))
}

/// Largest `μ` for which a shooting root exists, by bisection on
/// `max_α v(1; α) ≥ 0` over `[mu_lo, mu_hi]`.
pub fn fold_1d(spec: &Nonlinearity, mu_lo: f64, mu_hi: f64, alpha_max: f64, tol: f64) -> Result<f64> {
    let exists = |mu: f64| max_end(spec, mu, alpha_max, tol).map(|m| m >= 0.0);
    if !exists(mu_lo)? || exists(mu_hi)? {
        return Err(Error::Bracket { lo: mu_lo, hi: mu_hi });
    }
    let (mut lo, mut hi) = (mu_lo, mu_hi);
    while hi - lo > 1e-11 {
        let m = 0.5 * (lo + hi);
        if exists(m)? {
            lo = m;
        } else {
            hi = m;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Undamped Newton iteration. Residual-decreasing damping steers almost
/// every start to the stable solution; full steps keep the basins of the
/// unstable ones reachable.
fn full_step_newton(problem: &Problem, mu: f64, mut v: Vec<f64>, max_iter: usize) -> Option<Vec<f64>> {
    for _ in 0..=max_iter {
        let state = StateVector { mu, v };
        let r = residual(problem, &state).ok()?;
        let rn = sup_norm(&r);
        if !rn.is_finite() || sup_norm(&state.v) > 1e3 {
            return None;
        }
        if rn <= problem.effective_tol(1e-11, sup_norm(&state.v)) {
            return Some(state.v);
        }
        let lin = linearize(problem, &state).ok()?;
        let ls = LinearSolve::new(&lin).ok()?;
        let neg: Vec<f64> = r.iter().map(|x| -x).collect();
        let d = ls.solve(&neg).ok()?;
        v = state.v.iter().zip(&d).map(|(a, b)| a + b).collect();
    }
    None
}

/// Distribution of multistart initial points: `a·w + η` with `w` the
/// torsion function (`−Δ_h w = 1`, scaled to unit maximum), `a` uniform in
/// `amplitude` and `η` uniform in `[−noise, noise]` per component.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StartDistribution {
    pub amplitude: (f64, f64),
    pub noise: f64,
}

impl Default for StartDistribution {
    fn default() -> Self {
        Self { amplitude: (-1.0, 10.0), noise: 1.0 }
    }
}

/// Distinct converged Newton solutions from `n_starts` random starts.
/// Each start has its own stream, so the result does not depend on the
/// thread count.
pub fn multistart_enumerate(
    problem: &Problem,
    mu: f64,
    n_starts: usize,
    seed: u64,
    starts: StartDistribution,
) -> Result<Vec<Vec<f64>>> {
    let n = problem.n();
    let lin = linearize(problem, &StateVector::zero(n))?;
    let w = LinearSolve::new(&lin)?.solve(&vec![-1.0; n])?;
    let wmax = sup_norm(&w);
    let shape: Vec<f64> = w.iter().map(|x| x / wmax).collect();
    let found: Vec<Option<Vec<f64>>> = (0..n_starts)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let a = rng.random_range(starts.amplitude.0..=starts.amplitude.1);
            let v0: Vec<f64> =
                shape.iter().map(|s| a * s + starts.noise * rng.random_range(-1.0..=1.0)).collect();
            full_step_newton(problem, mu, v0, 60)
        })
        .collect();
    let mut distinct: Vec<Vec<f64>> = Vec::new();
    for v in found.into_iter().flatten() {
        let dup = distinct.iter().any(|w| w.iter().zip(&v).all(|(a, b)| (a - b).abs() < 1e-6));
        if !dup {
            distinct.push(v);
        }
    }
    distinct.sort_by(|a, b| sup_norm(a).total_cmp(&sup_norm(b)));
    Ok(distinct)
}

/// Solutions on `branch` at parameter `mu`: every pair of consecutive
/// stored points bracketing `mu` is interpolated and corrected by Newton.
pub fn branch_solutions_at(problem: &Problem, branch: &Branch, mu: f64) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    let pts: Vec<_> = branch.points.iter().filter(|p| p.v.is_some()).collect();
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        if (a.mu - mu) * (b.mu - mu) > 0.0 || a.mu == b.mu {
            continue;
        }
        let t = (mu - a.mu) / (b.mu - a.mu);
        let va = a.v.as_ref().unwrap();
        let vb = b.v.as_ref().unwrap();
        let guess: Vec<f64> = va.iter().zip(vb).map(|(x, y)| x + t * (y - x)).collect();
        if let Ok(r) = newton_correct(problem, mu, &guess, &NewtonOptions::default()) {
            if !out.iter().any(|w| w.iter().zip(&r.v).all(|(a, b)| (a - b).abs() < 1e-6)) {
                out.push(r.v);
            }
        }
    }
    out
}
