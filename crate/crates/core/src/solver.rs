//! Residual, linearization, Newton corrector and bordered solves.
//!
//! Stored convention: `L = Δ_h + μ diag f'(v)`. Its symmetric form is
//! `A = K − μ M diag f'(v)` with `L = −M⁻¹A`, so the reported eigenvalues
//! `A φ = σ M φ` are those of `−Δ − μ f'(v)` and `σ₁ > 0` on the minimal branch.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{sup_norm, wdot, SymmetricSolver};
use crate::problem::Problem;

/// `(μ, v)` with `v` on the interior unknowns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    pub mu: f64,
    pub v: Vec<f64>,
}

impl StateVector {
    pub fn zero(n: usize) -> Self {
        Self { mu: 0.0, v: vec![0.0; n] }
    }
}

fn check_domain(problem: &Problem, v: &[f64]) -> Result<()> {
    if let Some((i, &t)) = v.iter().enumerate().find(|(_, &t)| !problem.nonlinearity.admits(t)) {
        return Err(Error::Domain(format!(
            "v = {t} at unknown {i} is outside the domain of {}",
            problem.nonlinearity.description
        )));
    }
    Ok(())
}

/// `Δ_h v + μ f(v)`.
pub fn residual(problem: &Problem, state: &StateVector) -> Result<Vec<f64>> {
    check_domain(problem, &state.v)?;
    let mut r = problem.op.apply_laplacian(&state.v);
    let f = &problem.nonlinearity;
    for (ri, &vi) in r.iter_mut().zip(&state.v) {
        *ri += state.mu * f.f(vi);
    }
    Ok(r)
}

/// `L_μ = Δ_h + μ diag f'(v)` at a state, with the values of `f(v)` kept
/// for the μ-column of bordered systems.
#[derive(Clone, Debug)]
pub struct LinearizedOperator<'a> {
    pub problem: &'a Problem,
    pub mu: f64,
    pub fv: Vec<f64>,
    pub dfv: Vec<f64>,
}

pub fn linearize<'a>(problem: &'a Problem, state: &StateVector) -> Result<LinearizedOperator<'a>> {
    check_domain(problem, &state.v)?;
    let f = &problem.nonlinearity;
    let fv = state.v.iter().map(|&t| f.f(t)).collect();
    let dfv = state.v.iter().map(|&t| f.df(t)).collect();
    Ok(LinearizedOperator { problem, mu: state.mu, fv, dfv })
}

impl<'a> LinearizedOperator<'a> {
    pub fn n(&self) -> usize {
        self.fv.len()
    }

    pub fn weights(&self) -> &'a [f64] {
        self.problem.weights()
    }

    /// `L w`.
    pub fn apply(&self, w: &[f64]) -> Vec<f64> {
        let mut out = self.problem.op.apply_laplacian(w);
        for ((o, d), wi) in out.iter_mut().zip(&self.dfv).zip(w) {
            *o += self.mu * d * wi;
        }
        out
    }

    /// Factorization of `A − shift·M`; its negative pivots count the
    /// eigenvalues `σ < shift`.
    pub fn factor(&self, shift: f64) -> Result<SymmetricSolver<'a>> {
        let m = &self.problem.op.mass;
        let diag = m.iter().zip(&self.dfv).map(|(m, d)| -m * (self.mu * d + shift)).collect();
        SymmetricSolver::new(&self.problem.op.k, diag)
    }
}

/// A factored `L` that solves `L x = b`.
pub struct LinearSolve<'a> {
    pub solver: SymmetricSolver<'a>,
    mass: &'a [f64],
}

impl<'a> LinearSolve<'a> {
    pub fn new(lin: &LinearizedOperator<'a>) -> Result<Self> {
        Ok(Self { solver: lin.factor(0.0)?, mass: lin.weights() })
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let rhs: Vec<f64> = b.iter().zip(self.mass).map(|(b, m)| -b * m).collect();
        self.solver.solve(&rhs)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 25, max_halvings: 8 }
    }
}

/// Converged iterate with the residual sup-norm after every iteration
/// (entry 0 is the initial residual).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NewtonReport {
    pub v: Vec<f64>,
    pub iterations: usize,
    pub history: Vec<f64>,
    pub tol_used: f64,
}

fn log_iteration(kind: &str, k: usize, mu: f64, r: f64) {
    log::debug!(
        target: "gelfand::newton",
        "{}",
        serde_json::json!({"solver": kind, "iter": k, "mu": mu, "residual": r})
    );
}

/// Newton's method in `v` at fixed `μ`, with residual-halving damping.
pub fn newton_correct(problem: &Problem, mu: f64, v0: &[f64], opts: &NewtonOptions) -> Result<NewtonReport> {
    let mut state = StateVector { mu, v: v0.to_vec() };
    let mut r = residual(problem, &state)?;
    let mut rn = sup_norm(&r);
    let mut history = vec![rn];
    log_iteration("newton", 0, mu, rn);
    for k in 0..=opts.max_iter {
        let tol = problem.effective_tol(opts.tol, sup_norm(&state.v));
        if rn <= tol {
            return Ok(NewtonReport { v: state.v, iterations: k, history, tol_used: tol });
        }
        if k == opts.max_iter {
            break;
        }
        let lin = linearize(problem, &state)?;
        let ls = LinearSolve::new(&lin)?;
        if ls.solver.ldl.perturbed_pivots > 0 {
            return Err(Error::SingularJacobian(format!("zero pivot at mu = {mu}")));
        }
        let neg_r: Vec<f64> = r.iter().map(|x| -x).collect();
        let delta = ls.solve(&neg_r)?;
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..=opts.max_halvings {
            let trial = StateVector {
                mu,
                v: state.v.iter().zip(&delta).map(|(v, d)| v + step * d).collect(),
            };
            if let Ok(rt) = residual(problem, &trial) {
                let rtn = sup_norm(&rt);
                if rtn.is_finite() && rtn < rn {
                    state = trial;
                    r = rt;
                    rn = rtn;
                    accepted = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if !accepted {
            // A full step that fails to decrease a residual already at the
            // rounding floor is not a failure of the method.
            if rn <= 10.0 * problem.effective_tol(opts.tol, sup_norm(&state.v)) {
                let tol = 10.0 * problem.effective_tol(opts.tol, sup_norm(&state.v));
                return Ok(NewtonReport { v: state.v, iterations: k + 1, history, tol_used: tol });
            }
            return Err(Error::NoConvergence { iterations: k + 1, residual: rn });
        }
        history.push(rn);
        log_iteration("newton", k + 1, mu, rn);
    }
    Err(Error::NoConvergence { iterations: opts.max_iter, residual: rn })
}

/// Solves
/// `L v̇ + f(v) μ̇ = rhs_v`, `⟨τ_v, v̇⟩_w + τ_μ μ̇ = rhs_s`
/// by block elimination against a factored `L`, followed by two rounds of
/// refinement on the full bordered residual.
pub fn bordered_solve(
    lin: &LinearizedOperator,
    rhs_v: &[f64],
    rhs_s: f64,
    tau_v: &[f64],
    tau_mu: f64,
) -> Result<(Vec<f64>, f64)> {
    let ls = LinearSolve::new(lin)?;
    bordered_solve_with(lin, &ls, rhs_v, rhs_s, tau_v, tau_mu)
}

/// [`bordered_solve`] with an existing factorization of `L`.
pub fn bordered_solve_with(
    lin: &LinearizedOperator,
    ls: &LinearSolve,
    rhs_v: &[f64],
    rhs_s: f64,
    tau_v: &[f64],
    tau_mu: f64,
) -> Result<(Vec<f64>, f64)> {
    let w = lin.weights();
    let b = ls.solve(&lin.fv)?;
    let tb = wdot(w, tau_v, &b);
    let denom = tau_mu - tb;
    let scale = tau_mu.abs() + tb.abs();
    if !(denom.abs() > 1e-13 * scale) || !denom.is_finite() {
        return Err(Error::SingularBordered(format!("Schur complement {denom:.3e} (scale {scale:.3e})")));
    }
    let elim = |rv: &[f64], rs: f64| -> Result<(Vec<f64>, f64)> {
        let a = ls.solve(rv)?;
        let mu_dot = (rs - wdot(w, tau_v, &a)) / denom;
        let v_dot = a.iter().zip(&b).map(|(a, b)| a - mu_dot * b).collect();
        Ok((v_dot, mu_dot))
    };
    let (mut v_dot, mut mu_dot) = elim(rhs_v, rhs_s)?;
    for _ in 0..2 {
        let lv = lin.apply(&v_dot);
        let rv: Vec<f64> = rhs_v.iter().zip(&lv).zip(&lin.fv).map(|((r, l), f)| r - l - f * mu_dot).collect();
        let rs = rhs_s - wdot(w, tau_v, &v_dot) - tau_mu * mu_dot;
        let (dv, dm) = elim(&rv, rs)?;
        for (x, d) in v_dot.iter_mut().zip(&dv) {
            *x += d;
        }
        mu_dot += dm;
    }
    if !mu_dot.is_finite() || v_dot.iter().any(|x: &f64| !x.is_finite()) {
        return Err(Error::SingularBordered("non-finite solution".into()));
    }
    Ok((v_dot, mu_dot))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Diffeomorphism, ReferenceDomain};
    use crate::nonlinearity::Nonlinearity;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn interval(n: usize) -> Problem {
        Problem::new(Nonlinearity::exponential(), &ReferenceDomain::interval(n), Diffeomorphism::identity()).unwrap()
    }

    #[test]
    fn residual_basics() {
        let p = interval(15);
        assert!(residual(&p, &StateVector::zero(15)).unwrap().iter().all(|&r| r == 0.0));
        let r = residual(&p, &StateVector { mu: 1.0, v: vec![0.0; 15] }).unwrap();
        assert!(r.iter().all(|&x| x == 1.0));
        let q = Problem::new(Nonlinearity::power(2.0).unwrap(), &ReferenceDomain::interval(5), Diffeomorphism::identity()).unwrap();
        assert!(matches!(residual(&q, &StateVector { mu: 1.0, v: vec![-2.0; 5] }), Err(Error::Domain(_))));
    }

    #[test]
    fn linearization_matches_finite_differences() {
        let p = Problem::new(
            Nonlinearity::exponential(),
            &ReferenceDomain::disk(8, 16),
            Diffeomorphism::random_fourier(&ReferenceDomain::disk(8, 16), 1, 0, 0.05, 3),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = p.n();
        let state = StateVector { mu: 1.3, v: (0..n).map(|_| rng.random_range(0.0..1.0)).collect() };
        let lin = linearize(&p, &state).unwrap();
        let r0 = residual(&p, &state).unwrap();
        for _ in 0..5 {
            let w: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let eps = 1e-6;
            let vp: Vec<f64> = state.v.iter().zip(&w).map(|(v, w)| v + eps * w).collect();
            let r1 = residual(&p, &StateVector { mu: state.mu, v: vp }).unwrap();
            let lw = lin.apply(&w);
            let fd: Vec<f64> = r1.iter().zip(&r0).map(|(a, b)| (a - b) / eps).collect();
            let err = sup_norm(&fd.iter().zip(&lw).map(|(a, b)| a - b).collect::<Vec<_>>());
            assert!(err <= 1e-4 * sup_norm(&lw), "{err}");
        }
    }

    #[test]
    fn newton_trivial_and_symmetric() {
        let p = interval(31);
        let rep = newton_correct(&p, 0.0, &vec![0.0; 31], &NewtonOptions::default()).unwrap();
        assert_eq!(rep.iterations, 0);
        let rep = newton_correct(&p, 1.0, &vec![0.0; 31], &NewtonOptions::default()).unwrap();
        assert!(rep.v.iter().all(|&x| x > 0.0));
        for i in 0..31 {
            assert!((rep.v[i] - rep.v[30 - i]).abs() < 1e-10);
        }
    }

    #[test]
    fn newton_fails_above_the_fold() {
        let p = interval(63);
        let out = newton_correct(&p, 3.6, &vec![0.0; 63], &NewtonOptions::default());
        assert!(out.is_err());
    }

    #[test]
    fn bordered_block_elimination() {
        let p = interval(21);
        let state = StateVector { mu: 1.0, v: vec![0.1; 21] };
        let lin = linearize(&p, &state).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rhs: Vec<f64> = (0..21).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (vd, md) = bordered_solve(&lin, &rhs, 0.7, &[0.0; 21], 1.0).unwrap();
        assert!((md - 0.7).abs() < 1e-14);
        let expect: Vec<f64> = rhs.iter().zip(&lin.fv).map(|(r, f)| r - f * 0.7).collect();
        let x = LinearSolve::new(&lin).unwrap().solve(&expect).unwrap();
        for (a, b) in vd.iter().zip(&x) {
            assert!((a - b).abs() < 1e-10 * (1.0 + b.abs()));
        }
    }
}
