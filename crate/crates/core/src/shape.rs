//! Derivatives with respect to the domain and the sampling experiment on
//! random domain perturbations.
//!
//! A perturbation `ḣ` moves the mapped domain by `h_ε = (id + εḣ) ∘ h`.
//! At fixed reference values the residual then changes by
//! `−(Δ + μf'(v))(ḣ·∇v)` in the continuum; on the grid the exact derivative
//! of the assembled residual is available as well, and the two agree to
//! discretization order.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::continuation::{trace_continuum, BranchEvent, ContinuationConfig, EventKind};
use crate::error::{Error, Result};
use crate::geometry::{Diffeomorphism, DiscreteOperator, DisplacementField, PullbackCoefficients, ReferenceDomain};
use crate::geometry::physical_gradient;
use crate::linalg::{wdot, wnorm};
use crate::nonlinearity::Nonlinearity;
use crate::problem::Problem;
use crate::solver::{linearize, residual, StateVector};
use crate::spectral::EigenPair;

/// A domain velocity `ḣ` together with its normal trace on the mapped
/// boundary.
#[derive(Clone, Debug)]
pub struct PerturbationField {
    pub field: DisplacementField,
    /// `ḣ·ν` per boundary node.
    pub normal_trace: Vec<f64>,
}

impl PerturbationField {
    pub fn new(problem: &Problem, field: DisplacementField) -> Self {
        let boundary = problem.boundary();
        let normal_trace = problem
            .mesh
            .boundary
            .iter()
            .zip(&boundary.normal)
            .map(|(b, nu)| {
                let (c, _) = field.eval(problem.coeffs.mapped[b.node]);
                c[0] * nu[0] + c[1] * nu[1]
            })
            .collect();
        Self { field, normal_trace }
    }

    pub fn is_zero(&self) -> bool {
        self.field.is_zero()
    }

    /// `ḣ·∇v` at every node, `v` given on the unknowns.
    fn directional(&self, problem: &Problem, v: &[f64]) -> Vec<f64> {
        let full = problem.mesh.extend(v);
        let grad = physical_gradient(&problem.mesh, &problem.coeffs, &full);
        grad.iter()
            .zip(&problem.coeffs.mapped)
            .map(|(g, y)| {
                let (c, _) = self.field.eval(*y);
                c[0] * g[0] + c[1] * g[1]
            })
            .collect()
    }
}

/// `(Δ_h + μ diag f'(v))(ḣ·∇v)` without checking that `state` solves the
/// problem.
pub fn transport_term_unchecked(problem: &Problem, state: &StateVector, hdot: &PerturbationField) -> Vec<f64> {
    if hdot.is_zero() {
        return vec![0.0; problem.n()];
    }
    let g = hdot.directional(problem, &state.v);
    let mut out = problem.op.apply_laplacian_full(&g);
    let f = &problem.nonlinearity;
    for ((o, &node), &vi) in out.iter_mut().zip(&problem.mesh.interior).zip(&state.v) {
        *o += state.mu * f.df(vi) * g[node];
    }
    out
}

/// [`transport_term_unchecked`] for a converged solution.
pub fn transport_term(problem: &Problem, state: &StateVector, hdot: &PerturbationField, tol: f64) -> Result<Vec<f64>> {
    let r = residual(problem, state)?;
    let rn = crate::linalg::sup_norm(&r);
    let limit = 10.0 * problem.effective_tol(tol, crate::linalg::sup_norm(&state.v));
    if rn > limit {
        return Err(Error::Domain(format!("not a solution: residual {rn:.3e} exceeds {limit:.3e}")));
    }
    Ok(transport_term_unchecked(problem, state, hdot))
}

/// `(R_{h_ε}(μ, v) − R_h(μ, v)) / ε` with `h_ε = (id + εḣ) ∘ h`.
pub fn fd_domain_derivative(problem: &Problem, state: &StateVector, hdot: &PerturbationField, eps: f64) -> Result<Vec<f64>> {
    if hdot.is_zero() {
        return Ok(vec![0.0; problem.n()]);
    }
    let moved = problem.with_diffeo(problem.diffeo.perturbed(eps, &hdot.field))?;
    let r0 = problem.op.apply_laplacian(&state.v);
    let r1 = moved.op.apply_laplacian(&state.v);
    Ok(r1.iter().zip(&r0).map(|(a, b)| (a - b) / eps).collect())
}

/// Exact derivative in `ε` of the assembled residual,
/// `−M⁻¹K'v + M⁻¹M'M⁻¹Kv`.
pub fn domain_derivative(problem: &Problem, state: &StateVector, hdot: &PerturbationField) -> Result<Vec<f64>> {
    if hdot.is_zero() {
        return Ok(vec![0.0; problem.n()]);
    }
    let d = PullbackCoefficients::derivative(&problem.mesh, &problem.diffeo, &hdot.field)?;
    let (dk, dm) = DiscreteOperator::derivative_parts(&problem.mesh, &d);
    let n = problem.n();
    let m = &problem.op.mass;
    let mut kv = vec![0.0; n];
    problem.op.k.mul_vec(&state.v, &mut kv);
    let mut dkv = vec![0.0; n];
    dk.mul_vec(&state.v, &mut dkv);
    Ok((0..n).map(|i| (-dkv[i] + dm[i] * kv[i] / m[i]) / m[i]).collect())
}

/// `(lhs, rhs) = (∫ φ (Δ + μf')(ḣ·∇v), −∮ ∂_νφ ∂_νv ḣ·ν)` at a fold.
pub fn hadamard_pairing(
    problem: &Problem,
    phi: &EigenPair,
    state: &StateVector,
    hdot: &PerturbationField,
    fold_tol: f64,
) -> Result<(f64, f64)> {
    let lin = linearize(problem, state)?;
    let w = problem.weights();
    let lphi = lin.apply(&phi.phi);
    let res = wnorm(w, &lphi) / wnorm(w, &phi.phi);
    if res > 10.0 * fold_tol {
        return Err(Error::NotAFold { residual: res, limit: 10.0 * fold_tol });
    }
    let t = transport_term_unchecked(problem, state, hdot);
    let lhs = wdot(w, &phi.phi, &t);
    let b = problem.boundary();
    let dphi = b.normal_derivative(&problem.mesh, &problem.coeffs, &problem.mesh.extend(&phi.phi));
    let dv = b.normal_derivative(&problem.mesh, &problem.coeffs, &problem.mesh.extend(&state.v));
    let rhs = -(0..dphi.len()).map(|i| dphi[i] * dv[i] * hdot.normal_trace[i] * b.arc_weight[i]).sum::<f64>();
    Ok((lhs, rhs))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeDerivativeReport {
    pub epsilons: Vec<f64>,
    /// Weighted norms of the difference quotients.
    pub fd_values: Vec<f64>,
    /// Weighted norm of the exact discrete derivative, once per epsilon.
    pub formula_values: Vec<f64>,
    /// `‖FD(ε) − formula‖ / ‖formula‖`.
    pub errors: Vec<f64>,
    /// Least-squares slope of `log error` against `log ε`.
    pub observed_order: f64,
    /// Richardson extrapolation of the two smallest steps against the
    /// transport form, relative.
    pub transport_gap: f64,
    pub hadamard_lhs: Option<f64>,
    pub hadamard_rhs: Option<f64>,
    pub relative_gap: Option<f64>,
}

/// Slope of the least-squares line through `(ln x, ln y)`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// FD sweep over `epsilons` (descending), transport comparison and, given
/// a fold eigenpair, the Hadamard pairing.
pub fn shape_derivative_report(
    problem: &Problem,
    state: &StateVector,
    hdot: &PerturbationField,
    epsilons: &[f64],
    phi: Option<&EigenPair>,
    fold_tol: f64,
) -> Result<ShapeDerivativeReport> {
    if hdot.is_zero() {
        return Err(Error::Config("perturbation: the zero field has no derivative to check".into()));
    }
    if epsilons.len() < 2 {
        return Err(Error::Config("epsilons: need at least two values".into()));
    }
    let w = problem.weights();
    let formula = domain_derivative(problem, state, hdot)?;
    let fnorm = wnorm(w, &formula);
    let mut fd_values = Vec::new();
    let mut errors = Vec::new();
    let mut quotients = Vec::new();
    for &eps in epsilons {
        let fd = fd_domain_derivative(problem, state, hdot, eps)?;
        let diff: Vec<f64> = fd.iter().zip(&formula).map(|(a, b)| a - b).collect();
        fd_values.push(wnorm(w, &fd));
        errors.push(wnorm(w, &diff) / fnorm);
        quotients.push(fd);
    }
    let observed_order = log_log_slope(epsilons, &errors);
    // Richardson on the two smallest steps, assuming first-order error.
    let mut idx: Vec<usize> = (0..epsilons.len()).collect();
    idx.sort_by(|&a, &b| epsilons[a].total_cmp(&epsilons[b]));
    let (i0, i1) = (idx[0], idx[1]);
    let r = epsilons[i1] / epsilons[i0];
    let rich: Vec<f64> =
        quotients[i0].iter().zip(&quotients[i1]).map(|(a, b)| (r * a - b) / (r - 1.0)).collect();
    let transport = transport_term_unchecked(problem, state, hdot);
    let gap: Vec<f64> = rich.iter().zip(&transport).map(|(a, t)| a + t).collect();
    let transport_gap = wnorm(w, &gap) / wnorm(w, &rich);
    let (hadamard_lhs, hadamard_rhs, relative_gap) = match phi {
        Some(p) => {
            let (l, rr) = hadamard_pairing(problem, p, state, hdot, fold_tol)?;
            (Some(l), Some(rr), Some((l - rr).abs() / l.abs().max(rr.abs()).max(1e-300)))
        }
        None => (None, None, None),
    };
    Ok(ShapeDerivativeReport {
        epsilons: epsilons.to_vec(),
        fd_values,
        formula_values: vec![fnorm; epsilons.len()],
        errors,
        observed_order,
        transport_gap,
        hadamard_lhs,
        hadamard_rhs,
        relative_gap,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub mu: f64,
    pub sup_norm: f64,
    pub sigma: f64,
    pub spectral_gap: f64,
    pub transversality: f64,
    pub simple: bool,
    pub transversal: bool,
    pub cr_ratio_error: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleReport {
    pub index: usize,
    /// `None` on success, otherwise the error that stopped the sample.
    pub failure: Option<String>,
    pub n_points: usize,
    pub events: Vec<BranchEvent>,
    pub folds: Vec<FoldSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub n_samples: usize,
    pub n_failed: usize,
    pub n_folds: usize,
    pub degenerate_halts: usize,
    pub min_spectral_gap: Option<f64>,
    pub min_transversality: Option<f64>,
    pub all_simple: bool,
    pub all_transversal: bool,
    pub simple_threshold: f64,
    pub transversal_threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub domain: String,
    pub nonlinearity: String,
    pub amplitude: f64,
    pub n_modes: usize,
    pub seed: u64,
    pub samples: Vec<SampleReport>,
    pub summary: ExperimentSummary,
}

#[derive(Clone, Debug)]
pub struct ExperimentSpec {
    pub domain: ReferenceDomain,
    pub nonlinearity: Nonlinearity,
    pub n_samples: usize,
    pub amplitude: f64,
    pub n_modes: usize,
    pub seed: u64,
    pub transversal_threshold: f64,
}

fn run_sample(spec: &ExperimentSpec, index: usize, cfg: &ContinuationConfig) -> SampleReport {
    let h = Diffeomorphism::random_fourier(&spec.domain, spec.seed, index as u64, spec.amplitude, spec.n_modes);
    let outcome = Problem::new(spec.nonlinearity.clone(), &spec.domain, h).and_then(|p| trace_continuum(&p, cfg));
    match outcome {
        Ok(branch) => SampleReport {
            index,
            failure: None,
            n_points: branch.points.len(),
            folds: branch
                .folds
                .iter()
                .map(|f| FoldSummary {
                    mu: f.mu_fold,
                    sup_norm: f.sup_norm,
                    sigma: f.sigma,
                    spectral_gap: f.spectral_gap,
                    transversality: f.transversality.normalized,
                    simple: f.spectral_gap >= 10.0 * cfg.fold_tol,
                    transversal: f.transversality.normalized.abs() >= spec.transversal_threshold,
                    cr_ratio_error: f.cr.as_ref().map(|c| c.ratio_law_error),
                })
                .collect(),
            events: branch.events,
        },
        Err(e) => SampleReport { index, failure: Some(e.to_string()), n_points: 0, events: Vec::new(), folds: Vec::new() },
    }
}

/// Traces the continuum on `n_samples` random perturbations of the base
/// domain on `jobs` threads. Each sample draws from its own stream, so the
/// report does not depend on `jobs`.
pub fn genericity_experiment(spec: &ExperimentSpec, cfg: &ContinuationConfig, jobs: usize) -> Result<ExperimentReport> {
    cfg.validate()?;
    if !(spec.amplitude >= 0.0) {
        return Err(Error::Config("amplitude: must be non-negative".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("jobs: {e}")))?;
    let samples: Vec<SampleReport> =
        pool.install(|| (0..spec.n_samples).into_par_iter().map(|i| run_sample(spec, i, cfg)).collect());
    let folds: Vec<&FoldSummary> = samples.iter().flat_map(|s| &s.folds).collect();
    let summary = ExperimentSummary {
        n_samples: spec.n_samples,
        n_failed: samples.iter().filter(|s| s.failure.is_some()).count(),
        n_folds: folds.len(),
        degenerate_halts: samples
            .iter()
            .flat_map(|s| &s.events)
            .filter(|e| matches!(e.kind, EventKind::DegeneratePoint { .. }))
            .count(),
        min_spectral_gap: folds.iter().map(|f| f.spectral_gap).reduce(f64::min),
        min_transversality: folds.iter().map(|f| f.transversality.abs()).reduce(f64::min),
        all_simple: folds.iter().all(|f| f.simple),
        all_transversal: folds.iter().all(|f| f.transversal),
        simple_threshold: 10.0 * cfg.fold_tol,
        transversal_threshold: spec.transversal_threshold,
    };
    Ok(ExperimentReport {
        domain: spec.domain.key(),
        nonlinearity: spec.nonlinearity.description.clone(),
        amplitude: spec.amplitude,
        n_modes: spec.n_modes,
        seed: spec.seed,
        samples,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::{newton_correct, NewtonOptions};

    fn solved(domain: ReferenceDomain, mu: f64) -> (Problem, StateVector) {
        let p = Problem::new(Nonlinearity::exponential(), &domain, Diffeomorphism::identity()).unwrap();
        let rep = newton_correct(&p, mu, &vec![0.0; p.n()], &NewtonOptions::default()).unwrap();
        (p, StateVector { mu, v: rep.v })
    }

    #[test]
    fn zero_field_gives_zero() {
        let (p, s) = solved(ReferenceDomain::interval(32), 1.0);
        let z = PerturbationField::new(&p, DisplacementField::Zero);
        assert!(transport_term(&p, &s, &z, 1e-10).unwrap().iter().all(|&x| x == 0.0));
        assert!(fd_domain_derivative(&p, &s, &z, 1e-3).unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn transport_of_quadratic_profile_is_exact() {
        // v = x(1−x), ḣ = a + bx: ḣ v' = a + (b−2a)x − 2bx², so
        // (Δ + μf')(ḣv') = −4b + μ e^v (ḣ v').
        let n = 15;
        let p = Problem::new(Nonlinearity::exponential(), &ReferenceDomain::interval(n), Diffeomorphism::identity())
            .unwrap();
        let (a, b, mu) = (0.3, -0.7, 0.9);
        let hdot = PerturbationField::new(&p, DisplacementField::Polynomial1d(vec![a, b]));
        let xs: Vec<f64> = p.mesh.interior.iter().map(|&i| p.mesh.points[i][0]).collect();
        let s = StateVector { mu, v: xs.iter().map(|x| x * (1.0 - x)).collect() };
        let t = transport_term_unchecked(&p, &s, &hdot);
        for (x, got) in xs.iter().zip(&t) {
            let g = a + (b - 2.0 * a) * x - 2.0 * b * x * x;
            let want = -4.0 * b + mu * (x * (1.0 - x)).exp() * g;
            assert!((got - want).abs() < 1e-8, "{got} vs {want}");
        }
        assert!(transport_term(&p, &s, &hdot, 1e-10).is_err());
    }

    #[test]
    fn formula_is_linear_in_the_field() {
        let (p, s) = solved(ReferenceDomain::disk(8, 16), 1.0);
        let f1 = crate::geometry::parse_perturbation("normal:1", &p.mesh.domain).unwrap();
        let f2 = crate::geometry::parse_perturbation("tangential:2", &p.mesh.domain).unwrap();
        let d1 = domain_derivative(&p, &s, &PerturbationField::new(&p, f1.clone())).unwrap();
        let d2 = domain_derivative(&p, &s, &PerturbationField::new(&p, f2.clone())).unwrap();
        let d3 = domain_derivative(&p, &s, &PerturbationField::new(&p, f1.scaled(-2.0))).unwrap();
        for i in 0..p.n() {
            assert!((d3[i] + 2.0 * d1[i]).abs() < 1e-10 * (1.0 + d1[i].abs()));
        }
        assert!(d2.iter().any(|x| x.abs() > 0.0));
    }

    #[test]
    fn difference_quotients_converge_at_first_order() {
        for d in [ReferenceDomain::interval(64), ReferenceDomain::disk(12, 24)] {
            let (p, s) = solved(d, 1.0);
            let f = crate::geometry::parse_perturbation("normal:0", &d).unwrap();
            let h = PerturbationField::new(&p, f);
            let rep = shape_derivative_report(&p, &s, &h, &[1e-2, 1e-3, 1e-4], None, 1e-7).unwrap();
            assert!(rep.observed_order > 0.9, "{:?}", rep);
        }
    }

    #[test]
    fn rigid_translation_moves_the_solution() {
        // Translating the whole domain moves u(y) to u(y − εc): the
        // residual at fixed reference values does not change.
        let (p, s) = solved(ReferenceDomain::rectangle(10, 10, 1.0, 1.0), 2.0);
        let h = PerturbationField::new(&p, DisplacementField::Constant([0.3, -0.2]));
        let exact = domain_derivative(&p, &s, &h).unwrap();
        assert!(exact.iter().all(|x| x.abs() < 1e-9));
        let fd = fd_domain_derivative(&p, &s, &h, 1e-3).unwrap();
        assert!(fd.iter().all(|x| x.abs() < 1e-9));
    }
}
