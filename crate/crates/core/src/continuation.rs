//! Tracing the solution continuum from `(0, 0)` through folds.
//!
//! The minimal branch is followed by natural continuation in `μ`; once `σ₁`
//! has dropped below a fraction of its value at `μ = 0` the trace switches
//! to pseudo-arclength continuation with the weighted norm
//! `ds² = ω μ̇² + (1 − ω)‖v̇‖²_w`. A sign change of `σ₁` between accepted
//! points brackets a fold, which is then refined and sampled.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{sup_norm, wdot};
use crate::problem::Problem;
use crate::solver::{
    bordered_solve_with, linearize, newton_correct, residual, LinearSolve, LinearizedOperator, NewtonOptions,
    StateVector,
};
use crate::spectral::{
    cr_expansion_check, eigenpairs_with, transversality, CrDiagnostics, CrPoint, EigenOptions, EigenPair,
    Transversality,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContinuationConfig {
    pub ds_init: f64,
    pub ds_min: f64,
    pub ds_max: f64,
    pub mu_floor: f64,
    pub norm_cap: f64,
    pub max_steps: usize,
    /// Weight of the μ-component in the arclength norm.
    pub omega: f64,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    /// Switch to arclength once `σ₁ < switch_ratio · σ₁(μ = 0)`.
    pub switch_ratio: f64,
    /// `|σ₁|` accepted at a refined fold.
    pub fold_tol: f64,
    /// Points sampled on each side of a fold; 0 disables the local checks.
    pub cr_window: usize,
    pub cr_ds: f64,
    /// Keep `v` at every k-th point and at the last one.
    pub snapshot_every: usize,
}

impl Default for ContinuationConfig {
    fn default() -> Self {
        Self {
            ds_init: 0.05,
            ds_min: 1e-6,
            ds_max: 0.5,
            mu_floor: 0.05,
            norm_cap: 10.0,
            max_steps: 2000,
            omega: 0.5,
            newton_tol: 1e-10,
            newton_max_iter: 25,
            switch_ratio: 0.3,
            fold_tol: 1e-7,
            cr_window: 4,
            cr_ds: 0.005,
            snapshot_every: 1,
        }
    }
}

impl ContinuationConfig {
    /// Checks the invariants; the message names the offending key.
    pub fn validate(&self) -> Result<()> {
        let bad = |k: &str, why: &str| Err(Error::Config(format!("{k}: {why}")));
        if !(self.ds_min > 0.0) {
            return bad("ds_min", "must be positive");
        }
        if !(self.ds_init >= self.ds_min) {
            return bad("ds_init", "must be at least ds_min");
        }
        if !(self.ds_max >= self.ds_init) {
            return bad("ds_max", "must be at least ds_init");
        }
        if !(self.mu_floor > 0.0) {
            return bad("mu_floor", "must be positive");
        }
        if !(self.norm_cap > 0.0) {
            return bad("norm_cap", "must be positive");
        }
        if !(self.omega > 0.0 && self.omega < 1.0) {
            return bad("omega", "must lie in (0, 1)");
        }
        if !(self.newton_tol > 0.0) {
            return bad("newton_tol", "must be positive");
        }
        if self.newton_max_iter == 0 {
            return bad("newton_max_iter", "must be positive");
        }
        if !(self.switch_ratio > 0.0 && self.switch_ratio < 1.0) {
            return bad("switch_ratio", "must lie in (0, 1)");
        }
        if !(self.fold_tol > 0.0) {
            return bad("fold_tol", "must be positive");
        }
        if self.cr_window != 0 && self.cr_window < 3 {
            return bad("cr_window", "must be 0 or at least 3");
        }
        if !(self.cr_ds > 0.0) {
            return bad("cr_ds", "must be positive");
        }
        if self.snapshot_every == 0 {
            return bad("snapshot_every", "must be positive");
        }
        Ok(())
    }

    fn newton(&self) -> NewtonOptions {
        NewtonOptions { tol: self.newton_tol, max_iter: self.newton_max_iter, ..NewtonOptions::default() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Natural,
    Arclength,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchPoint {
    pub s: f64,
    pub mu: f64,
    pub sup_norm: f64,
    /// Smallest eigenvalue, reported convention.
    pub sigma1: f64,
    pub sigma2: f64,
    pub morse_index: usize,
    pub phase: Phase,
    /// Newton residual sup-norms, initial residual first.
    pub newton_history: Vec<f64>,
    pub tangent_mu: f64,
    pub tangent_v: Option<Vec<f64>>,
    pub v: Option<Vec<f64>>,
}

impl BranchPoint {
    pub fn state(&self) -> Option<StateVector> {
        self.v.as_ref().map(|v| StateVector { mu: self.mu, v: v.clone() })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    Fold { fold_id: usize },
    MuFloor,
    NormCap,
    MaxSteps,
    NewtonFailure { message: String },
    DegeneratePoint { message: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchEvent {
    #[serde(flatten)]
    pub kind: EventKind,
    pub s_at: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldRecord {
    pub id: usize,
    pub s_fold: f64,
    pub mu_fold: f64,
    pub sup_norm: f64,
    pub sigma: f64,
    pub eigen_residual: f64,
    /// `|σ₂|`, distance of the next eigenvalue from zero.
    pub spectral_gap: f64,
    pub transversality: Transversality,
    /// Simple and transversal at the configured thresholds.
    pub simple: bool,
    pub morse_before: usize,
    pub morse_after: usize,
    /// `μ̇` changed sign across the bracket as well.
    pub mu_dot_sign_change: bool,
    pub cr: Option<CrDiagnostics>,
    pub cr_error: Option<String>,
    #[serde(skip)]
    pub v: Vec<f64>,
    #[serde(skip)]
    pub phi: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub points: Vec<BranchPoint>,
    pub events: Vec<BranchEvent>,
    pub folds: Vec<FoldRecord>,
}

impl Branch {
    pub fn terminal(&self) -> Option<&BranchEvent> {
        self.events.iter().rev().find(|e| !matches!(e.kind, EventKind::Fold { .. }))
    }

    pub fn sigma1_series(&self) -> Vec<(f64, f64)> {
        self.points.iter().map(|p| (p.s, p.sigma1)).collect()
    }
}

fn arc_norm(w: &[f64], dv: &[f64], dmu: f64, omega: f64) -> f64 {
    (omega * dmu * dmu + (1.0 - omega) * wdot(w, dv, dv)).sqrt()
}

fn distance(w: &[f64], a: &StateVector, b: &StateVector, omega: f64) -> f64 {
    let dv: Vec<f64> = a.v.iter().zip(&b.v).map(|(x, y)| x - y).collect();
    arc_norm(w, &dv, a.mu - b.mu, omega)
}

/// Unit tangent at a solution, oriented so that `⟨τ, τ_prev⟩ > 0`.
fn tangent(
    lin: &LinearizedOperator,
    ls: &LinearSolve,
    prev_v: &[f64],
    prev_mu: f64,
    omega: f64,
) -> Result<(Vec<f64>, f64)> {
    let n = lin.n();
    let tv: Vec<f64> = prev_v.iter().map(|x| (1.0 - omega) * x).collect();
    let (v, mu) = bordered_solve_with(lin, ls, &vec![0.0; n], 1.0, &tv, omega * prev_mu)?;
    let norm = arc_norm(lin.weights(), &v, mu, omega);
    Ok((v.iter().map(|x| x / norm).collect(), mu / norm))
}

/// Everything computed at an accepted solution.
struct Evaluated {
    tangent_v: Vec<f64>,
    tangent_mu: f64,
    pairs: Vec<EigenPair>,
    morse: usize,
}

fn evaluate(
    problem: &Problem,
    state: &StateVector,
    prev_tangent: (&[f64], f64),
    hint: Option<f64>,
    cfg: &ContinuationConfig,
) -> Result<Evaluated> {
    let lin = linearize(problem, state)?;
    let ls = LinearSolve::new(&lin)?;
    let morse = ls.solver.negative_pivots();
    let (tangent_v, tangent_mu) = tangent(&lin, &ls, prev_tangent.0, prev_tangent.1, cfg.omega)?;
    let pairs = eigenpairs_with(&lin, 2, hint, &EigenOptions::default())?;
    Ok(Evaluated { tangent_v, tangent_mu, pairs, morse })
}

/// Pseudo-arclength corrector from `base` along `(τ_v, τ_μ)` at step `ds`.
fn correct(
    problem: &Problem,
    base: &StateVector,
    tau_v: &[f64],
    tau_mu: f64,
    ds: f64,
    cfg: &ContinuationConfig,
    max_iter: usize,
) -> Result<(StateVector, Vec<f64>)> {
    let w = problem.weights();
    let omega = cfg.omega;
    let pred = StateVector {
        mu: base.mu + ds * tau_mu,
        v: base.v.iter().zip(tau_v).map(|(v, t)| v + ds * t).collect(),
    };
    let mut state = pred.clone();
    let bv: Vec<f64> = tau_v.iter().map(|t| (1.0 - omega) * t).collect();
    let bmu = omega * tau_mu;
    let mut history = Vec::new();
    for k in 0..=max_iter {
        let r = residual(problem, &state)?;
        let rn = sup_norm(&r);
        history.push(rn);
        log::debug!(
            target: "gelfand::newton",
            "{}",
            serde_json::json!({"solver": "arclength", "iter": k, "mu": state.mu, "residual": rn})
        );
        let dv: Vec<f64> = state.v.iter().zip(&pred.v).map(|(a, b)| a - b).collect();
        let nres = wdot(w, &bv, &dv) + bmu * (state.mu - pred.mu);
        let tol = problem.effective_tol(cfg.newton_tol, sup_norm(&state.v));
        if rn <= tol && nres.abs() <= 1e-12 * (1.0 + ds) {
            return Ok((state, history));
        }
        if k == max_iter || !rn.is_finite() {
            break;
        }
        let lin = linearize(problem, &state)?;
        let ls = LinearSolve::new(&lin)?;
        let neg: Vec<f64> = r.iter().map(|x| -x).collect();
        let (dv, dmu) = bordered_solve_with(&lin, &ls, &neg, -nres, &bv, bmu)?;
        for (x, d) in state.v.iter_mut().zip(&dv) {
            *x += d;
        }
        state.mu += dmu;
    }
    Err(Error::NoConvergence { iterations: history.len().saturating_sub(1), residual: *history.last().unwrap_or(&f64::NAN) })
}

/// Corrector budget: more than eight iterations halves the step.
const CORRECTOR_MAX_ITER: usize = 12;

fn make_point(
    s: f64,
    state: &StateVector,
    ev: Evaluated,
    phase: Phase,
    history: Vec<f64>,
) -> BranchPoint {
    BranchPoint {
        s,
        mu: state.mu,
        sup_norm: sup_norm(&state.v),
        sigma1: ev.pairs[0].sigma,
        sigma2: ev.pairs[1].sigma,
        morse_index: ev.morse,
        phase,
        newton_history: history,
        tangent_mu: ev.tangent_mu,
        tangent_v: Some(ev.tangent_v),
        v: Some(state.v.clone()),
    }
}

fn start_point(problem: &Problem, cfg: &ContinuationConfig) -> Result<BranchPoint> {
    let n = problem.n();
    let state = StateVector::zero(n);
    let zeros = vec![0.0; n];
    let ev = evaluate(problem, &state, (&zeros, 1.0), None, cfg)?;
    Ok(make_point(0.0, &state, ev, Phase::Natural, vec![0.0]))
}

fn step_size(ds: f64, iterations: usize, cfg: &ContinuationConfig) -> f64 {
    let next = if iterations <= 3 {
        ds * 1.3
    } else if iterations > 8 {
        ds * 0.5
    } else {
        ds
    };
    next.clamp(cfg.ds_min, cfg.ds_max)
}

/// Natural continuation in `μ` from `(0, 0)` along the minimal branch.
/// Stops once `σ₁ < switch_ratio · σ₁(0)`; the last point is the switch point.
pub fn trace_minimal_branch(problem: &Problem, cfg: &ContinuationConfig) -> Result<Branch> {
    cfg.validate()?;
    let mut branch = Branch::default();
    let first = start_point(problem, cfg)?;
    let sigma0 = first.sigma1;
    branch.points.push(first);
    minimal_phase(problem, cfg, sigma0, &mut branch)?;
    Ok(branch)
}

/// Returns `true` if the switch threshold was reached.
fn minimal_phase(problem: &Problem, cfg: &ContinuationConfig, sigma0: f64, branch: &mut Branch) -> Result<bool> {
    let w = problem.weights();
    let mut dmu = cfg.ds_init;
    let opts = cfg.newton();
    while branch.points.len() < cfg.max_steps {
        let last = branch.points.last().unwrap();
        if last.sigma1 < cfg.switch_ratio * sigma0 {
            return Ok(true);
        }
        let lv = last.v.as_ref().unwrap();
        let tv = last.tangent_v.as_ref().unwrap();
        // dv/dμ along the tangent
        let slope: Vec<f64> = tv.iter().map(|t| t / last.tangent_mu).collect();
        let mu = last.mu + dmu;
        let pred: Vec<f64> = lv.iter().zip(&slope).map(|(v, d)| v + dmu * d).collect();
        let attempt = newton_correct(problem, mu, &pred, &opts).and_then(|rep| {
            let state = StateVector { mu, v: rep.v.clone() };
            let ev = evaluate(problem, &state, (tv, last.tangent_mu), Some(last.sigma1), cfg)?;
            if ev.pairs[0].sigma <= 0.0 || ev.morse != 0 {
                return Err(Error::StepFailure("left the minimal branch".into()));
            }
            Ok((state, ev, rep))
        });
        match attempt {
            Ok((state, ev, rep)) => {
                let prev = StateVector { mu: last.mu, v: lv.clone() };
                let s = last.s + distance(w, &state, &prev, cfg.omega);
                let iterations = rep.iterations;
                branch.points.push(make_point(s, &state, ev, Phase::Natural, rep.history));
                dmu = step_size(dmu, iterations, cfg);
            }
            Err(e) => {
                dmu *= 0.5;
                if dmu < cfg.ds_min {
                    let s_at = last.s;
                    branch.events.push(BranchEvent { kind: EventKind::NewtonFailure { message: e.to_string() }, s_at });
                    return Ok(false);
                }
            }
        }
    }
    let s_at = branch.points.last().unwrap().s;
    branch.events.push(BranchEvent { kind: EventKind::MaxSteps, s_at });
    Ok(false)
}

/// One pseudo-arclength step of size `ds` from `last`.
pub fn step_pseudoarclength(
    problem: &Problem,
    last: &BranchPoint,
    ds: f64,
    cfg: &ContinuationConfig,
) -> Result<(BranchPoint, usize)> {
    let w = problem.weights();
    let base = last.state().ok_or_else(|| Error::StepFailure("point without a stored solution".into()))?;
    let tv = last.tangent_v.as_ref().ok_or_else(|| Error::StepFailure("point without a tangent".into()))?;
    let (state, history) = correct(problem, &base, tv, last.tangent_mu, ds, cfg, CORRECTOR_MAX_ITER)
        .map_err(|e| match e {
            Error::SingularBordered(m) => Error::DegeneratePoint { s: last.s, reason: m },
            other => Error::StepFailure(other.to_string()),
        })?;
    let iterations = history.len() - 1;
    let chord = distance(w, &state, &base, cfg.omega);
    if chord > 1.1 * ds {
        return Err(Error::StepFailure(format!("chord {chord:.3e} exceeds step {ds:.3e}")));
    }
    let ev = evaluate(problem, &state, (tv, last.tangent_mu), Some(last.sigma1), cfg).map_err(|e| match e {
        Error::SingularBordered(m) => Error::DegeneratePoint { s: last.s + chord, reason: m },
        other => other,
    })?;
    let ip = wdot(w, ev.tangent_v.as_slice(), tv) * (1.0 - cfg.omega) + cfg.omega * ev.tangent_mu * last.tangent_mu;
    if !(ip > 0.0) {
        return Err(Error::StepFailure("tangent reversed".into()));
    }
    Ok((make_point(last.s + chord, &state, ev, Phase::Arclength, history), iterations))
}

/// Illinois iteration on `σ₁(d)`, `d` the step from `left` along its
/// tangent, bracketed by `(0, d_hi)`.
pub fn refine_fold(
    problem: &Problem,
    left: &BranchPoint,
    right: &BranchPoint,
    d_hi: f64,
    id: usize,
    cfg: &ContinuationConfig,
) -> Result<FoldRecord> {
    if left.sigma1.signum() == right.sigma1.signum() {
        return Err(Error::Bracket { lo: left.s, hi: right.s });
    }
    let (mut a, mut fa) = (0.0, left.sigma1);
    let (mut b, mut fb) = (d_hi, right.sigma1);
    let mut best: Option<BranchPoint> = None;
    let mut side = 0i32;
    for _ in 0..60 {
        let d = (a * fb - b * fa) / (fb - fa);
        let d = if d > a && d < b { d } else { 0.5 * (a + b) };
        let (p, _) = step_pseudoarclength(problem, left, d, cfg)?;
        let fd = p.sigma1;
        let done = fd.abs() <= cfg.fold_tol || (b - a) < 1e-14 * (1.0 + d_hi);
        best = Some(p);
        if done {
            break;
        }
        if fd.signum() == fa.signum() {
            a = d;
            fa = fd;
            if side == -1 {
                fb *= 0.5;
            }
            side = -1;
        } else {
            b = d;
            fb = fd;
            if side == 1 {
                fa *= 0.5;
            }
            side = 1;
        }
    }
    let fold = best.ok_or(Error::Bracket { lo: left.s, hi: right.s })?;
    let state = fold.state().unwrap();
    let lin = linearize(problem, &state)?;
    let pairs = eigenpairs_with(&lin, 2, Some(fold.sigma1), &EigenOptions::default())?;
    let t = transversality(&problem.nonlinearity, &state, &pairs[0], problem.weights());
    let spectral_gap = pairs[1].sigma.abs();
    let simple = spectral_gap > 10.0 * cfg.fold_tol;
    Ok(FoldRecord {
        id,
        s_fold: fold.s,
        mu_fold: fold.mu,
        sup_norm: fold.sup_norm,
        sigma: pairs[0].sigma,
        eigen_residual: pairs[0].residual,
        spectral_gap,
        transversality: t,
        simple,
        morse_before: left.morse_index,
        morse_after: right.morse_index,
        mu_dot_sign_change: left.tangent_mu.signum() != right.tangent_mu.signum(),
        cr: None,
        cr_error: None,
        v: state.v,
        phi: pairs[0].phi.clone(),
    })
}

/// Points at `±j·cr_ds`, `j = 1..=window`, along the fold tangent.
pub fn fold_neighbourhood(
    problem: &Problem,
    fold: &FoldRecord,
    fold_tangent: (&[f64], f64),
    cfg: &ContinuationConfig,
) -> Result<Vec<(i32, BranchPoint)>> {
    let base = BranchPoint {
        s: fold.s_fold,
        mu: fold.mu_fold,
        sup_norm: fold.sup_norm,
        sigma1: fold.sigma,
        sigma2: fold.sigma + fold.spectral_gap,
        morse_index: fold.morse_before,
        phase: Phase::Arclength,
        newton_history: Vec::new(),
        tangent_mu: fold_tangent.1,
        tangent_v: Some(fold_tangent.0.to_vec()),
        v: Some(fold.v.clone()),
    };
    let mut out = Vec::new();
    for sign in [-1.0, 1.0] {
        for j in 1..=cfg.cr_window {
            let d = sign * j as f64 * cfg.cr_ds;
            let (mut p, _) = step_pseudoarclength(problem, &base, d, cfg).or_else(|_| {
                // the orientation check is meaningless for backward samples
                let st = base.state().unwrap();
                let (state, history) =
                    correct(problem, &st, fold_tangent.0, fold_tangent.1, d, cfg, CORRECTOR_MAX_ITER)?;
                let ev = evaluate(problem, &state, fold_tangent, Some(fold.sigma), cfg)?;
                Ok::<_, Error>((make_point(fold.s_fold + d, &state, ev, Phase::Arclength, history), 0))
            })?;
            p.s = fold.s_fold + d;
            out.push(((sign as i32) * j as i32, p));
        }
    }
    Ok(out)
}

fn attach_cr(problem: &Problem, fold: &mut FoldRecord, fold_tangent: (&[f64], f64), cfg: &ContinuationConfig) {
    if cfg.cr_window == 0 {
        return;
    }
    let result = fold_neighbourhood(problem, fold, fold_tangent, cfg).and_then(|pts| {
        let cr_points: Vec<CrPoint> = pts
            .iter()
            .map(|(o, p)| CrPoint {
                offset: *o,
                mu: p.mu,
                v: p.v.as_deref().unwrap(),
                sigma1: p.sigma1,
                tangent_v: p.tangent_v.as_deref().unwrap(),
                tangent_mu: p.tangent_mu,
            })
            .collect();
        cr_expansion_check(problem.weights(), &problem.nonlinearity, fold.mu_fold, &fold.v, &fold.phi, &cr_points, cfg.cr_window)
    });
    match result {
        Ok(cr) => fold.cr = Some(cr),
        Err(e) => fold.cr_error = Some(e.to_string()),
    }
}

/// Tangent at a refined fold, oriented along the step that reached it.
fn fold_tangent(problem: &Problem, fold: &FoldRecord, left: &BranchPoint, cfg: &ContinuationConfig) -> Result<(Vec<f64>, f64)> {
    let state = StateVector { mu: fold.mu_fold, v: fold.v.clone() };
    let lin = linearize(problem, &state)?;
    let ls = LinearSolve::new(&lin)?;
    tangent(&lin, &ls, left.tangent_v.as_ref().unwrap(), left.tangent_mu, cfg.omega)
}

/// Pseudo-arclength phase from the last point of `branch`.
fn arclength_phase(problem: &Problem, cfg: &ContinuationConfig, branch: &mut Branch, stop_at_fold: bool) -> Result<()> {
    let mut ds = cfg.ds_init;
    loop {
        let last = branch.points.last().unwrap().clone();
        if last.mu < cfg.mu_floor {
            branch.events.push(BranchEvent { kind: EventKind::MuFloor, s_at: last.s });
            return Ok(());
        }
        if last.sup_norm > cfg.norm_cap {
            branch.events.push(BranchEvent { kind: EventKind::NormCap, s_at: last.s });
            return Ok(());
        }
        if branch.points.len() >= cfg.max_steps {
            branch.events.push(BranchEvent { kind: EventKind::MaxSteps, s_at: last.s });
            return Ok(());
        }
        match step_pseudoarclength(problem, &last, ds, cfg) {
            Ok((p, iterations)) => {
                if p.sigma1.signum() != last.sigma1.signum() {
                    let id = branch.folds.len();
                    match refine_fold(problem, &last, &p, ds, id, cfg) {
                        Ok(mut fold) => {
                            if !fold.simple {
                                let s_at = fold.s_fold;
                                let message = format!("fold eigenvalue not simple: gap {:.3e}", fold.spectral_gap);
                                branch.folds.push(fold);
                                branch.events.push(BranchEvent { kind: EventKind::DegeneratePoint { message }, s_at });
                                return Ok(());
                            }
                            if !fold.mu_dot_sign_change {
                                log::warn!("sigma1 changed sign at s = {:.6} without a turn in mu", fold.s_fold);
                            }
                            if let Ok((tv, tm)) = fold_tangent(problem, &fold, &last, cfg) {
                                attach_cr(problem, &mut fold, (&tv, tm), cfg);
                            }
                            branch.events.push(BranchEvent { kind: EventKind::Fold { fold_id: id }, s_at: fold.s_fold });
                            branch.folds.push(fold);
                            if stop_at_fold {
                                branch.points.push(p);
                                return Ok(());
                            }
                        }
                        Err(Error::DegeneratePoint { s, reason }) => {
                            branch.events.push(BranchEvent { kind: EventKind::DegeneratePoint { message: reason }, s_at: s });
                            return Ok(());
                        }
                        Err(e) => {
                            // Not fatal for the trace: the crossing is recorded
                            // without a refined fold.
                            log::warn!("fold refinement failed: {e}");
                        }
                    }
                }
                branch.points.push(p);
                ds = step_size(ds, iterations, cfg);
            }
            Err(Error::DegeneratePoint { s, reason }) => {
                branch.events.push(BranchEvent { kind: EventKind::DegeneratePoint { message: reason }, s_at: s });
                return Ok(());
            }
            Err(e) => {
                ds *= 0.5;
                if ds < cfg.ds_min {
                    branch.events.push(BranchEvent { kind: EventKind::NewtonFailure { message: e.to_string() }, s_at: last.s });
                    return Ok(());
                }
            }
        }
    }
}

/// Drops stored solutions per `snapshot_every`, keeping the last point.
fn thin(branch: &mut Branch, every: usize) {
    let n = branch.points.len();
    for (i, p) in branch.points.iter_mut().enumerate() {
        if i % every != 0 && i + 1 != n {
            p.v = None;
            p.tangent_v = None;
        }
    }
}

/// The full trace from `(0, 0)` to a terminal event. Failures become
/// events; the branch computed so far is always returned.
pub fn trace_continuum(problem: &Problem, cfg: &ContinuationConfig) -> Result<Branch> {
    cfg.validate()?;
    let mut branch = Branch::default();
    let first = start_point(problem, cfg)?;
    let sigma0 = first.sigma1;
    branch.points.push(first);
    if minimal_phase(problem, cfg, sigma0, &mut branch)? {
        arclength_phase(problem, cfg, &mut branch, false)?;
    }
    thin(&mut branch, cfg.snapshot_every);
    Ok(branch)
}

/// Traces from `(0, 0)` until the first refined fold and returns it. The
/// branch stops right after the fold and carries no terminal event.
pub fn locate_first_fold(problem: &Problem, cfg: &ContinuationConfig) -> Result<(Branch, FoldRecord)> {
    cfg.validate()?;
    let mut branch = Branch::default();
    let first = start_point(problem, cfg)?;
    let sigma0 = first.sigma1;
    branch.points.push(first);
    if minimal_phase(problem, cfg, sigma0, &mut branch)? {
        arclength_phase(problem, cfg, &mut branch, true)?;
    }
    match branch.folds.first() {
        Some(f) => {
            let f = f.clone();
            Ok((branch, f))
        }
        None => {
            let last = branch.points.last().map_or(0.0, |p| p.s);
            Err(Error::Bracket { lo: 0.0, hi: last })
        }
    }
}

/// Continues by pseudo-arclength from a stored point (with solution and tangent).
pub fn resume(problem: &Problem, cfg: &ContinuationConfig, start: BranchPoint) -> Result<Branch> {
    cfg.validate()?;
    if start.v.as_ref().map(|v| v.len()) != Some(problem.n()) || start.tangent_v.is_none() {
        return Err(Error::Config("resume point needs a solution and tangent on this grid".into()));
    }
    let mut branch = Branch { points: vec![start], ..Branch::default() };
    arclength_phase(problem, cfg, &mut branch, false)?;
    thin(&mut branch, cfg.snapshot_every);
    Ok(branch)
}

/// Pairs of accepted points farther apart than `5 ds_max` in `s` that
/// coincide in `(μ, v)`; empty for a simple curve.
pub fn revisits(branch: &Branch, ds_max: f64) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let pts = &branch.points;
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            if (pts[j].s - pts[i].s).abs() <= 5.0 * ds_max || (pts[i].mu - pts[j].mu).abs() >= 1e-8 {
                continue;
            }
            let same = match (&pts[i].v, &pts[j].v) {
                (Some(a), Some(b)) => a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-6),
                _ => (pts[i].sup_norm - pts[j].sup_norm).abs() < 1e-6,
            };
            if same {
                out.push((i, j));
            }
        }
    }
    out
}
