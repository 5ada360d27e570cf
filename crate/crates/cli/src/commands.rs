use std::path::Path;
use std::process::ExitCode;

use serde::Serialize;
use serde_json::json;

use gelfand::config::RunConfig;
use gelfand::continuation::{locate_first_fold, resume, trace_continuum, BranchPoint, EventKind};
use gelfand::geometry::{DomainKind, ReferenceDomain};
use gelfand::io::{cross_check, write_atomic, write_branch, write_json};
use gelfand::linalg::sup_norm;
use gelfand::oracles::{fold_1d, multistart_enumerate, radial_family, radial_residual};
use gelfand::problem::Problem;
use gelfand::shape::{genericity_experiment, shape_derivative_report, ExperimentSpec, PerturbationField};
use gelfand::solver::{linearize, newton_correct, NewtonOptions, StateVector};
use gelfand::spectral::{eigenpairs_with, morse_index, EigenOptions, EigenPair};
use gelfand::{Error, Result};

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_DEGENERATE: u8 = 2;
pub const EXIT_THRESHOLD: u8 = 3;

/// Prints the error and, when an output directory is known, leaves a JSON
/// report there.
pub fn fail(command: &str, out: Option<&Path>, e: &Error) -> ExitCode {
    log::error!("{command}: {e}");
    let report = json!({ "command": command, "error": e.to_string() });
    eprintln!("{report}");
    if let Some(dir) = out {
        let _ = write_json(&dir.join("error.json"), &report);
    }
    ExitCode::from(EXIT_FAILURE)
}

fn print_json<T: Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("plain data"));
}

pub fn trace(cfg: &RunConfig, self_test: bool) -> Result<u8> {
    let problem = cfg.build_problem()?;
    let branch = match &cfg.trace.resume {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("trace.resume: cannot read {}: {e}", path.display())))?;
            let start: BranchPoint = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("trace.resume: {e}")))?;
            resume(&problem, &cfg.continuation, start)?
        }
        None => trace_continuum(&problem, &cfg.continuation)?,
    };
    write_branch(&cfg.out, &branch, cfg.trace.write_snapshots)?;
    if self_test {
        let rows = cross_check(&cfg.out)?;
        log::info!("self-test: {rows} rows identical in branch.csv and branch.jsonl");
    }
    let terminal = branch.terminal().cloned();
    let folds: Vec<_> = branch.folds.iter().map(|f| json!({"mu": f.mu_fold, "sup_norm": f.sup_norm})).collect();
    let last = branch.points.last();
    print_json(&json!({
        "points": branch.points.len(),
        "folds": folds,
        "terminal": terminal,
        "last_mu": last.map(|p| p.mu),
        "last_sup_norm": last.map(|p| p.sup_norm),
    }));
    Ok(match terminal.map(|e| e.kind) {
        Some(EventKind::DegeneratePoint { .. }) => EXIT_DEGENERATE,
        Some(EventKind::NewtonFailure { message }) => {
            log::error!("trace stopped: {message}");
            EXIT_FAILURE
        }
        Some(EventKind::MaxSteps) => {
            log::warn!("trace stopped at max_steps before reaching mu_floor or norm_cap");
            EXIT_OK
        }
        _ => EXIT_OK,
    })
}

pub fn shape_check(cfg: &RunConfig) -> Result<u8> {
    let problem = cfg.build_problem()?;
    let field = cfg.perturbation(&problem.mesh.domain)?;
    if field.is_zero() {
        return Err(Error::Config("shape.perturbation: the zero field gives nothing to check".into()));
    }
    let mut cont = cfg.continuation.clone();
    cont.cr_window = 0;
    let (_, fold) = locate_first_fold(&problem, &cont)?;
    let state = StateVector { mu: fold.mu_fold, v: fold.v.clone() };
    let phi = EigenPair { sigma: fold.sigma, phi: fold.phi.clone(), residual: fold.eigen_residual };
    let hdot = PerturbationField::new(&problem, field);
    let (report, pairing_error) =
        match shape_derivative_report(&problem, &state, &hdot, &cfg.shape.epsilons, Some(&phi), cont.fold_tol) {
            Ok(r) => (r, None),
            Err(e @ Error::NotAFold { .. }) => {
                let r = shape_derivative_report(&problem, &state, &hdot, &cfg.shape.epsilons, None, cont.fold_tol)?;
                (r, Some(e.to_string()))
            }
            Err(e) => return Err(e),
        };
    let order_ok = report.observed_order >= cfg.shape.order_threshold;
    let gap_ok = report.relative_gap.is_some_and(|g| g <= cfg.shape.hadamard_threshold);
    let doc = json!({
        "domain": problem.mesh.domain.key(),
        "perturbation": cfg.shape.perturbation,
        "fold": {"mu": fold.mu_fold, "sup_norm": fold.sup_norm, "sigma": fold.sigma},
        "report": report,
        "pairing_error": pairing_error,
        "thresholds": {"order": cfg.shape.order_threshold, "hadamard": cfg.shape.hadamard_threshold},
        "passed": {"order": order_ok, "hadamard": gap_ok},
    });
    write_json(&cfg.out.join("shape_report.json"), &doc)?;
    print_json(&doc["passed"]);
    Ok(if order_ok && gap_ok { EXIT_OK } else { EXIT_THRESHOLD })
}

pub fn generic_exp(cfg: &RunConfig, jobs: usize) -> Result<u8> {
    let spec = ExperimentSpec {
        domain: cfg.domain()?,
        nonlinearity: cfg.nonlinearity()?,
        n_samples: cfg.experiment.n_samples,
        amplitude: cfg.experiment.amplitude,
        n_modes: cfg.experiment.n_modes,
        seed: cfg.seed,
        transversal_threshold: cfg.experiment.transversal_threshold,
    };
    let report = genericity_experiment(&spec, &cfg.continuation, jobs)?;
    write_json(&cfg.out.join("experiment.json"), &report)?;
    print_json(&report.summary);
    Ok(EXIT_OK)
}

pub fn oracle(cfg: &RunConfig) -> Result<u8> {
    let o = &cfg.oracle;
    let check_domain = match cfg.domain()? {
        d if d.kind == DomainKind::Disk => d,
        _ => ReferenceDomain::disk(64, 128),
    };
    let disk = Problem::new(cfg.nonlinearity()?, &check_domain, gelfand::geometry::Diffeomorphism::identity())?;
    let mut family = String::from("b,mu,sup,grid_residual\n");
    for &b in &o.b_grid {
        let p = radial_family(b)?;
        let res = radial_residual(&disk, &p)?;
        family.push_str(&format!("{:.16e},{:.16e},{:.16e},{:.16e}\n", p.b, p.mu, p.sup, res));
    }
    write_atomic(&cfg.out.join("oracle_family.csv"), family.as_bytes())?;
    print!("{family}");

    let nl = cfg.nonlinearity()?;
    let mu_fold = fold_1d(&nl, o.fold_mu_lo, o.fold_mu_hi, o.alpha_max, o.shoot_tol)?;
    let fold_doc = json!({"nonlinearity": nl.description, "mu_fold": mu_fold, "tol": o.shoot_tol});
    write_json(&cfg.out.join("oracle_fold.json"), &fold_doc)?;
    println!("mu_fold\n{mu_fold:.16e}");

    if o.multistart_nodes > 0 {
        let tiny = Problem::new(nl, &ReferenceDomain::interval(o.multistart_nodes), gelfand::geometry::Diffeomorphism::identity())?;
        let mut table = String::from("mu,solutions\n");
        for &mu in &o.multistart_mu {
            let sols = multistart_enumerate(&tiny, mu, o.multistart_starts, cfg.seed, o.starts)?;
            table.push_str(&format!("{:.16e},{}\n", mu, sols.len()));
        }
        write_atomic(&cfg.out.join("oracle_multistart.csv"), table.as_bytes())?;
        print!("{table}");
    }
    Ok(EXIT_OK)
}

/// Minimal solution at `mu` by natural continuation in steps of at most 0.1.
fn minimal_solution(problem: &Problem, mu: f64) -> Result<StateVector> {
    let steps = (mu.abs() / 0.1).ceil().max(1.0) as usize;
    let mut v = vec![0.0; problem.n()];
    for k in 1..=steps {
        let m = mu * k as f64 / steps as f64;
        v = newton_correct(problem, m, &v, &NewtonOptions::default())
            .map_err(|e| Error::StepFailure(format!("no minimal solution at mu = {m}: {e}")))?
            .v;
    }
    Ok(StateVector { mu, v })
}

pub fn spectrum(cfg: &RunConfig) -> Result<u8> {
    let problem = cfg.build_problem()?;
    let state = match &cfg.spectrum.point {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("spectrum.point: cannot read {}: {e}", path.display())))?;
            let p: BranchPoint =
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("spectrum.point: {e}")))?;
            match p.state() {
                Some(s) if s.v.len() == problem.n() => s,
                _ => return Err(Error::Config("spectrum.point: no solution on this grid".into())),
            }
        }
        None => minimal_solution(&problem, cfg.spectrum.mu)?,
    };
    let lin = linearize(&problem, &state)?;
    let pairs = eigenpairs_with(&lin, cfg.spectrum.count, None, &EigenOptions::default())?;
    let morse = morse_index(&lin, 1e-8)?;
    let mut table = String::from("index,sigma,residual\n");
    for (i, p) in pairs.iter().enumerate() {
        table.push_str(&format!("{},{:.16e},{:.16e}\n", i + 1, p.sigma, p.residual));
    }
    write_atomic(&cfg.out.join("spectrum.csv"), table.as_bytes())?;
    let doc = json!({
        "mu": state.mu,
        "sup_norm": sup_norm(&state.v),
        "morse_index": morse.index,
        "near_singular": morse.near_singular,
        "sigma": pairs.iter().map(|p| p.sigma).collect::<Vec<_>>(),
        "residual": pairs.iter().map(|p| p.residual).collect::<Vec<_>>(),
    });
    write_json(&cfg.out.join("spectrum.json"), &doc)?;
    print!("{table}");
    Ok(EXIT_OK)
}
