//! Eigenpairs of the linearization, Morse indices and fold diagnostics.
//!
//! Eigenvalues are reported in the convention `(−Δ − μ f'(v)) φ = σ φ`:
//! ascending, so `σ₁` is first and is positive on the minimal branch.
//! The solver is shift-invert subspace iteration in the `M` inner product
//! with Rayleigh–Ritz. Every shift is certified to lie below `σ₁` by the
//! inertia of `A − sM`.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{wdot, wnorm, SymmetricSolver};
use crate::nonlinearity::Nonlinearity;
use crate::solver::{LinearizedOperator, StateVector};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenPair {
    pub sigma: f64,
    /// Normalized to `∫ φ² = 1` in the quadrature of the mapped domain.
    pub phi: Vec<f64>,
    /// `‖Lφ + σφ‖_w`, the eigen-residual in the stored convention.
    pub residual: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 400 }
    }
}

/// Residual accepted for a returned pair, raised to a multiple of the
/// rounding floor on fine grids.
pub const EIG_ACCEPT: f64 = 1e-8;

/// `∫φ > 0` if `φ` has (essentially) one sign, else the first entry that is
/// not negligible is made positive.
fn fix_sign(w: &[f64], phi: &mut [f64]) {
    let max = phi.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let neg = phi.iter().any(|&v| v < -1e-8 * max);
    let pos = phi.iter().any(|&v| v > 1e-8 * max);
    let flip = if neg && pos {
        phi.iter().find(|v| v.abs() > 1e-3 * max).is_some_and(|&v| v < 0.0)
    } else {
        phi.iter().zip(w).map(|(p, w)| p * w).sum::<f64>() < 0.0
    };
    if flip {
        phi.iter_mut().for_each(|v| *v = -*v);
    }
}

fn factor_below<'a>(lin: &LinearizedOperator<'a>, mut shift: f64, mut step: f64) -> Result<(f64, SymmetricSolver<'a>)> {
    for _ in 0..200 {
        let s = lin.factor(shift)?;
        if s.negative_pivots() == 0 && s.ldl.perturbed_pivots == 0 {
            return Ok((shift, s));
        }
        shift -= step;
        step *= 2.0;
    }
    Err(Error::EigSolverFailure("no certified shift below the spectrum".into()))
}

/// Apply `A x = (K − μ M f'(v)) x`.
fn apply_a(lin: &LinearizedOperator, x: &[f64]) -> Vec<f64> {
    let m = lin.weights();
    let mut y = vec![0.0; x.len()];
    lin.problem.op.k.mul_vec(x, &mut y);
    for i in 0..x.len() {
        y[i] -= m[i] * lin.mu * lin.dfv[i] * x[i];
    }
    y
}

/// `M`-orthonormalizes the columns in place (two passes of modified Gram–Schmidt).
fn orthonormalize(w: &[f64], block: &mut Vec<Vec<f64>>) {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(block.len());
    for mut x in block.drain(..) {
        for _ in 0..2 {
            for q in &out {
                let c = wdot(w, q, &x);
                x.iter_mut().zip(q).for_each(|(a, b)| *a -= c * b);
            }
        }
        let nrm = wnorm(w, &x);
        if nrm > 1e-300 {
            x.iter_mut().for_each(|a| *a /= nrm);
            out.push(x);
        }
    }
    *block = out;
}

struct Ritz {
    values: Vec<f64>,
    vectors: Vec<Vec<f64>>,
    residuals: Vec<f64>,
}

fn rayleigh_ritz(lin: &LinearizedOperator, block: &[Vec<f64>]) -> Ritz {
    let w = lin.weights();
    let m = block.len();
    let ab: Vec<Vec<f64>> = block.iter().map(|x| apply_a(lin, x)).collect();
    let h = DMatrix::from_fn(m, m, |i, j| {
        let a: f64 = block[i].iter().zip(&ab[j]).map(|(x, y)| x * y).sum();
        let b: f64 = block[j].iter().zip(&ab[i]).map(|(x, y)| x * y).sum();
        0.5 * (a + b)
    });
    let eig = SymmetricEigen::new(h);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let n = block[0].len();
    let mut values = Vec::with_capacity(m);
    let mut vectors = Vec::with_capacity(m);
    let mut residuals = Vec::with_capacity(m);
    for &c in &order {
        let theta = eig.eigenvalues[c];
        let mut x = vec![0.0; n];
        let mut ax = vec![0.0; n];
        for j in 0..m {
            let coef = eig.eigenvectors[(j, c)];
            for i in 0..n {
                x[i] += coef * block[j][i];
                ax[i] += coef * ab[j][i];
            }
        }
        // ‖M⁻¹(Ax − θMx)‖_M
        let r: f64 = (0..n).map(|i| (ax[i] - theta * w[i] * x[i]).powi(2) / w[i]).sum::<f64>().sqrt();
        values.push(theta);
        vectors.push(x);
        residuals.push(r);
    }
    Ritz { values, vectors, residuals }
}

/// The `k` smallest eigenpairs of `A φ = σ M φ`, with an optional guess
/// for `σ₁` to place the first shift.
pub fn eigenpairs_with(lin: &LinearizedOperator, k: usize, hint: Option<f64>, opts: &EigenOptions) -> Result<Vec<EigenPair>> {
    let n = lin.n();
    if k == 0 || k >= n {
        return Err(Error::EigSolverFailure(format!("cannot compute {k} eigenpairs of a {n}-dimensional operator")));
    }
    let w = lin.weights();
    let p = (k + 3).min(n);
    let max_df = lin.dfv.iter().fold(0.0f64, |m, &d| m.max(d));
    let scale = 1.0 + lin.mu.abs() * max_df;
    // Certified lower bound: K + M(μ max f' − μ f' + 1) is positive definite.
    let floor = -(lin.mu.max(0.0) * max_df) - 1.0;
    let (mut shift, mut solver) = match hint {
        Some(h) => factor_below(lin, h - 0.05 * h.abs().max(1.0), 0.1 * scale)?,
        None => factor_below(lin, floor, scale)?,
    };
    // Start block: smooth positive profile plus deterministic oscillations.
    let mut block: Vec<Vec<f64>> = (0..p)
        .map(|j| (0..n).map(|i| 1.0 + ((i * (j + 1)) as f64 * 0.618_033_988_7).sin() * if j == 0 { 0.1 } else { 1.0 }).collect())
        .collect();
    orthonormalize(w, &mut block);
    let mut reshifted = hint.is_some();
    let mut last: Option<Ritz> = None;
    let mut iterations = 0;
    let floor_tol = 8.0 * f64::EPSILON * lin.problem.op.op_norm;
    let mut best = f64::INFINITY;
    let mut stalled = 0;
    for it in 0..opts.max_iter {
        iterations = it + 1;
        let mut next = Vec::with_capacity(block.len());
        for x in &block {
            // Rayleigh–Ritz absorbs solve errors; refinement is not needed here.
            let mut mx: Vec<f64> = x.iter().zip(w).map(|(a, b)| a * b).collect();
            solver.ldl.solve_in_place(&mut mx);
            next.push(mx);
        }
        orthonormalize(w, &mut next);
        if next.len() < k {
            return Err(Error::EigSolverFailure("subspace collapsed".into()));
        }
        let ritz = rayleigh_ritz(lin, &next);
        let tol = (opts.tol * (1.0 + ritz.values[..k].iter().fold(0.0f64, |m, v| m.max(v.abs()))))
            .max(floor_tol);
        let worst = ritz.residuals[..k].iter().fold(0.0f64, |m, &r| m.max(r));
        // Stagnation at the rounding level also ends the iteration.
        if worst < best * 0.5 {
            best = worst;
            stalled = 0;
        } else {
            stalled += 1;
        }
        let accept = EIG_ACCEPT.max(64.0 * floor_tol);
        let done = worst <= tol || (stalled >= 8 && worst <= accept);
        block = ritz.vectors.clone();
        if done {
            last = Some(ritz);
            break;
        }
        // Once σ₁ is roughly known, move the shift up under it.
        if !reshifted && it >= 3 && ritz.residuals[0] < 1e-2 * scale {
            let gap = (ritz.values[1] - ritz.values[0]).max(1e-6 * scale);
            let target = ritz.values[0] - 0.2 * gap - ritz.residuals[0];
            if target > shift {
                let (s, f) = factor_below(lin, target, 0.2 * gap)?;
                shift = s;
                solver = f;
            }
            reshifted = true;
        }
        last = Some(ritz);
    }
    log::trace!("eigenpairs: {iterations} iterations, final shift {shift}");
    let ritz = last.ok_or_else(|| Error::EigSolverFailure("no iterations".into()))?;
    let mut out = Vec::with_capacity(k);
    for i in 0..k {
        if !(ritz.residuals[i] <= EIG_ACCEPT.max(64.0 * floor_tol) * (1.0 + ritz.values[i].abs())) {
            return Err(Error::EigSolverFailure(format!(
                "pair {i} residual {:.3e} after {} iterations",
                ritz.residuals[i], opts.max_iter
            )));
        }
        let mut phi = ritz.vectors[i].clone();
        fix_sign(w, &mut phi);
        out.push(EigenPair { sigma: ritz.values[i], phi, residual: ritz.residuals[i] });
    }
    Ok(out)
}

/// The `k` smallest eigenpairs.
pub fn eigenpairs(lin: &LinearizedOperator, k: usize) -> Result<Vec<EigenPair>> {
    eigenpairs_with(lin, k, None, &EigenOptions::default())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MorseInfo {
    pub index: usize,
    /// Some eigenvalue lies in `[−shift_tol, shift_tol]`.
    pub near_singular: bool,
}

/// Number of negative `σ` (unstable directions), by inertia.
pub fn morse_index(lin: &LinearizedOperator, shift_tol: f64) -> Result<MorseInfo> {
    let index = lin.factor(0.0)?.negative_pivots();
    let lo = lin.factor(-shift_tol)?.negative_pivots();
    let hi = lin.factor(shift_tol)?.negative_pivots();
    Ok(MorseInfo { index, near_singular: lo != hi })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transversality {
    /// `∫ f(v) φ`.
    pub value: f64,
    /// `∫ f(v) φ / ‖f(v)‖`, with `‖φ‖ = 1`.
    pub normalized: f64,
}

pub fn transversality(spec: &Nonlinearity, state: &StateVector, phi: &EigenPair, weights: &[f64]) -> Transversality {
    let fv: Vec<f64> = state.v.iter().map(|&t| spec.f(t)).collect();
    let value = wdot(weights, &fv, &phi.phi);
    let norm = wnorm(weights, &fv) * wnorm(weights, &phi.phi);
    Transversality { value, normalized: value / norm }
}

/// Local fold diagnostics from samples around a refined fold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrDiagnostics {
    /// `dμ/dc` at the fold from a cubic fit of `μ(c)`, `c = ⟨v − v_fold, φ⟩`.
    pub mu_prime_at_fold: f64,
    pub mu_second_at_fold: f64,
    /// Mean spacing of the samples in `c`.
    pub c_step: f64,
    /// Least-squares slope of `log‖ξ‖` against `log|c|`.
    pub xi_second_order_slope: f64,
    /// Largest relative mismatch of `σ/μ'(c)` against `∫fφ / ∫φ²`.
    pub ratio_law_error: f64,
    pub ratio_expected: f64,
    pub samples: Vec<CrSample>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrSample {
    /// Signed sample offset in steps from the fold.
    pub offset: i32,
    pub c: f64,
    pub mu: f64,
    pub sigma1: f64,
    pub xi_norm: f64,
    pub mu_prime: f64,
}

/// Inputs for one fold-neighbourhood point.
#[derive(Clone, Debug)]
pub struct CrPoint<'a> {
    pub offset: i32,
    pub mu: f64,
    pub v: &'a [f64],
    pub sigma1: f64,
    pub tangent_v: &'a [f64],
    pub tangent_mu: f64,
}

fn least_squares(x: &[f64], y: &[f64], degree: usize) -> Vec<f64> {
    let a = DMatrix::from_fn(x.len(), degree + 1, |i, j| x[i].powi(j as i32));
    let b = nalgebra::DVector::from_column_slice(y);
    let svd = a.svd(true, true);
    svd.solve(&b, 1e-14).map(|s| s.iter().copied().collect()).unwrap_or_else(|_| vec![f64::NAN; degree + 1])
}

/// Checks the local expansion `v = v_fold + cφ + ξ`, `μ'(0) = 0` and the
/// ratio law on `points` around a fold at `(mu_fold, v_fold)` with
/// eigenfunction `phi`. Needs `window` points on each side.
pub fn cr_expansion_check(
    weights: &[f64],
    spec: &Nonlinearity,
    mu_fold: f64,
    v_fold: &[f64],
    phi: &[f64],
    points: &[CrPoint],
    window: usize,
) -> Result<CrDiagnostics> {
    let left = points.iter().filter(|p| p.offset < 0).count();
    let right = points.iter().filter(|p| p.offset > 0).count();
    if left < window || right < window || window < 3 {
        return Err(Error::InsufficientSamples(format!(
            "need {window} (≥ 3) points per side, have {left} and {right}"
        )));
    }
    let phi_sq = wdot(weights, phi, phi);
    let fv: Vec<f64> = v_fold.iter().map(|&t| spec.f(t)).collect();
    let ratio_expected = wdot(weights, &fv, phi) / phi_sq;
    let mut samples = Vec::new();
    for p in points {
        let d: Vec<f64> = p.v.iter().zip(v_fold).map(|(a, b)| a - b).collect();
        let c = wdot(weights, &d, phi) / phi_sq;
        let xi: Vec<f64> = d.iter().zip(phi).map(|(d, f)| d - c * f).collect();
        let dc = wdot(weights, p.tangent_v, phi) / phi_sq;
        samples.push(CrSample {
            offset: p.offset,
            c,
            mu: p.mu,
            sigma1: p.sigma1,
            xi_norm: wnorm(weights, &xi),
            mu_prime: p.tangent_mu / dc,
        });
    }
    samples.sort_by_key(|s| s.offset);
    let mut cs: Vec<f64> = samples.iter().map(|s| s.c).collect();
    let mut mus: Vec<f64> = samples.iter().map(|s| s.mu - mu_fold).collect();
    cs.push(0.0);
    mus.push(0.0);
    let fit = least_squares(&cs, &mus, 3);
    let c_step = samples.iter().map(|s| s.c.abs() / s.offset.unsigned_abs() as f64).sum::<f64>() / samples.len() as f64;
    let lx: Vec<f64> = samples.iter().map(|s| s.c.abs().ln()).collect();
    let ly: Vec<f64> = samples.iter().map(|s| s.xi_norm.ln()).collect();
    let slope = least_squares(&lx, &ly, 1)[1];
    let ratio_law_error = samples
        .iter()
        .filter(|s| matches!(s.offset.abs(), 2 | 3))
        .map(|s| ((s.sigma1 / s.mu_prime) - ratio_expected).abs() / ratio_expected.abs())
        .fold(0.0f64, f64::max);
    Ok(CrDiagnostics {
        mu_prime_at_fold: fit[1],
        mu_second_at_fold: 2.0 * fit[2],
        c_step,
        xi_second_order_slope: slope,
        ratio_law_error,
        ratio_expected,
        samples,
    })
}

/// `(s, σ₁)` with a flag on every interval where `σ₁` changes sign.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sigma1Track {
    pub series: Vec<(f64, f64)>,
    /// Indices `i` with a sign change between points `i` and `i + 1`.
    pub sign_changes: Vec<usize>,
    /// More than ten consecutive points with `|σ₁| < tol`.
    pub vanishing: bool,
}

pub fn track_sigma1(series: &[(f64, f64)], tol: f64) -> Sigma1Track {
    let mut sign_changes = Vec::new();
    for i in 0..series.len().saturating_sub(1) {
        if series[i].1.signum() != series[i + 1].1.signum() {
            sign_changes.push(i);
        }
    }
    let mut run = 0;
    let mut vanishing = false;
    for &(_, s) in series {
        if s.abs() < tol {
            run += 1;
            vanishing |= run > 10;
        } else {
            run = 0;
        }
    }
    Sigma1Track { series: series.to_vec(), sign_changes, vanishing }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Diffeomorphism, ReferenceDomain};
    use crate::problem::Problem;
    use crate::solver::linearize;
    use std::f64::consts::PI;

    fn laplace(d: ReferenceDomain) -> Problem {
        Problem::new(Nonlinearity::exponential(), &d, Diffeomorphism::identity()).unwrap()
    }

    #[test]
    fn interval_stencil_eigenvalue() {
        let n = 40;
        let p = laplace(ReferenceDomain::interval(n));
        let lin = linearize(&p, &StateVector::zero(n)).unwrap();
        let pairs = eigenpairs(&lin, 3).unwrap();
        let h = 1.0 / (n + 1) as f64;
        for (k, pair) in pairs.iter().enumerate() {
            let exact = 2.0 / (h * h) * (1.0 - ((k + 1) as f64 * PI * h).cos());
            assert!((pair.sigma - exact).abs() < 1e-9 * exact, "{} {}", pair.sigma, exact);
            assert!(pair.residual < 1e-8);
        }
        assert!(pairs[0].phi.iter().all(|&x| x > 0.0));
        for i in 0..3 {
            for j in 0..3 {
                let d = wdot(p.weights(), &pairs[i].phi, &pairs[j].phi);
                assert!((d - if i == j { 1.0 } else { 0.0 }).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn rectangle_spectrum() {
        let p = laplace(ReferenceDomain::rectangle(40, 40, 1.0, 1.0));
        let lin = linearize(&p, &StateVector::zero(p.n())).unwrap();
        let pairs = eigenpairs(&lin, 2).unwrap();
        assert!((pairs[0].sigma / (2.0 * PI * PI) - 1.0).abs() < 0.01);
        assert!((pairs[1].sigma / (5.0 * PI * PI) - 1.0).abs() < 0.01);
        assert_eq!(morse_index(&lin, 1e-6).unwrap(), MorseInfo { index: 0, near_singular: false });
    }

    #[test]
    fn morse_index_counts_negative_sigma() {
        let n = 30;
        let p = laplace(ReferenceDomain::interval(n));
        let h = 1.0 / (n + 1) as f64;
        let l1 = 2.0 / (h * h) * (1.0 - (PI * h).cos());
        let l2 = 2.0 / (h * h) * (1.0 - (2.0 * PI * h).cos());
        // f'(0) = 1, so μ shifts the whole spectrum down by μ.
        let lin = linearize(&p, &StateVector { mu: 0.5 * (l1 + l2), v: vec![0.0; n] }).unwrap();
        assert_eq!(morse_index(&lin, 1e-6).unwrap().index, 1);
        let lin = linearize(&p, &StateVector { mu: l1, v: vec![0.0; n] }).unwrap();
        assert!(morse_index(&lin, 1e-6).unwrap().near_singular);
    }

    #[test]
    fn transversality_is_linear_in_phi() {
        let n = 20;
        let p = laplace(ReferenceDomain::interval(n));
        let state = StateVector { mu: 1.0, v: vec![0.2; n] };
        let lin = linearize(&p, &state).unwrap();
        let pair = eigenpairs(&lin, 1).unwrap().remove(0);
        let t = transversality(&p.nonlinearity, &state, &pair, p.weights());
        assert!(t.value > 0.0);
        let flipped = EigenPair { phi: pair.phi.iter().map(|x| -x).collect(), ..pair };
        let u = transversality(&p.nonlinearity, &state, &flipped, p.weights());
        assert_eq!(u.value, -t.value);
    }

    #[test]
    fn sigma_tracking() {
        let t = track_sigma1(&[(0.0, 3.0), (1.0, 1.0), (2.0, -1.0), (3.0, -2.0)], 1e-9);
        assert_eq!(t.sign_changes, vec![1]);
        assert!(!t.vanishing);
        let zeros: Vec<(f64, f64)> = (0..12).map(|i| (i as f64, 0.0)).collect();
        assert!(track_sigma1(&zeros, 1e-9).vanishing);
    }
}
