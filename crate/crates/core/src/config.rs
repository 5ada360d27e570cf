//! Run configuration, read from TOML.
//!
//! Every table is optional and falls back to its defaults; unknown keys are
//! rejected. `RunConfig::to_toml` prints the fully resolved configuration.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::continuation::ContinuationConfig;
use crate::error::{Error, Result};
use crate::geometry::{parse_perturbation, Diffeomorphism, DisplacementField, ReferenceDomain};
use crate::nonlinearity::Nonlinearity;
use crate::oracles::StartDistribution;
use crate::problem::Problem;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProblemSection {
    /// `exp` or `power:<p>`.
    pub nonlinearity: String,
    /// `interval:<n>`, `rect:<nx>x<ny>:<lx>x<ly>` or `disk:<nr>x<ntheta>`.
    pub domain: String,
    /// `none` or `fourier:<seed>:<amplitude>:<n_modes>`.
    pub diffeo: String,
}

impl Default for ProblemSection {
    fn default() -> Self {
        Self { nonlinearity: "exp".into(), domain: "interval:512".into(), diffeo: "none".into() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TraceSection {
    /// Resume from a stored branch point instead of starting at `(0, 0)`.
    pub resume: Option<PathBuf>,
    /// Write every stored solution under `snapshots/`.
    pub write_snapshots: bool,
}

impl Default for TraceSection {
    fn default() -> Self {
        Self { resume: None, write_snapshots: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShapeSection {
    /// See the perturbation grammar in the geometry module.
    pub perturbation: String,
    pub epsilons: Vec<f64>,
    pub order_threshold: f64,
    /// Largest accepted Hadamard relative gap.
    pub hadamard_threshold: f64,
}

impl Default for ShapeSection {
    fn default() -> Self {
        Self {
            perturbation: "normal:0".into(),
            epsilons: vec![1e-2, 1e-3, 1e-4],
            order_threshold: 0.9,
            hadamard_threshold: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub n_samples: usize,
    pub amplitude: f64,
    pub n_modes: usize,
    pub transversal_threshold: f64,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self { n_samples: 20, amplitude: 0.02, n_modes: 4, transversal_threshold: 1e-3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleSection {
    pub b_grid: Vec<f64>,
    /// Bracket for the interval fold search.
    pub fold_mu_lo: f64,
    pub fold_mu_hi: f64,
    pub alpha_max: f64,
    pub shoot_tol: f64,
    /// Multistart scan on `interval:<multistart_nodes>`; 0 disables it.
    pub multistart_nodes: usize,
    pub multistart_starts: usize,
    pub multistart_mu: Vec<f64>,
    pub starts: StartDistribution,
}

impl Default for OracleSection {
    fn default() -> Self {
        Self {
            b_grid: vec![0.5, 1.0, 2.0],
            fold_mu_lo: 3.0,
            fold_mu_hi: 4.0,
            alpha_max: 20.0,
            shoot_tol: 1e-10,
            multistart_nodes: 0,
            multistart_starts: 500,
            multistart_mu: vec![1.0],
            starts: StartDistribution::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumSection {
    /// Stored branch point (a snapshot file); without it the minimal
    /// solution at `mu` is used.
    pub point: Option<PathBuf>,
    pub mu: f64,
    pub count: usize,
}

impl Default for SpectrumSection {
    fn default() -> Self {
        Self { point: None, mu: 1.0, count: 6 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub problem: ProblemSection,
    pub continuation: ContinuationConfig,
    pub trace: TraceSection,
    pub shape: ShapeSection,
    pub experiment: ExperimentSection,
    pub oracle: OracleSection,
    pub spectrum: SpectrumSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("out"),
            problem: ProblemSection::default(),
            continuation: ContinuationConfig::default(),
            trace: TraceSection::default(),
            shape: ShapeSection::default(),
            experiment: ExperimentSection::default(),
            oracle: OracleSection::default(),
            spectrum: SpectrumSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Parses every string-valued key and checks numeric ranges.
    pub fn validate(&self) -> Result<()> {
        self.continuation.validate()?;
        self.nonlinearity()?;
        let d = self.domain()?;
        self.diffeo(&d)?;
        parse_perturbation(&self.shape.perturbation, &d)?;
        if self.shape.epsilons.len() < 2 || self.shape.epsilons.iter().any(|e| !(*e > 0.0)) {
            return Err(Error::Config("shape.epsilons: need at least two positive values".into()));
        }
        if !(self.experiment.amplitude >= 0.0) {
            return Err(Error::Config("experiment.amplitude: must be non-negative".into()));
        }
        if self.oracle.b_grid.is_empty() || self.oracle.b_grid.iter().any(|b| !(*b > 0.0)) {
            return Err(Error::Config("oracle.b_grid: need at least one positive value".into()));
        }
        if !(self.oracle.fold_mu_lo < self.oracle.fold_mu_hi) {
            return Err(Error::Config("oracle.fold_mu_lo: must be below fold_mu_hi".into()));
        }
        if self.spectrum.count == 0 {
            return Err(Error::Config("spectrum.count: must be positive".into()));
        }
        Ok(())
    }

    pub fn nonlinearity(&self) -> Result<Nonlinearity> {
        Nonlinearity::parse(&self.problem.nonlinearity)
    }

    pub fn domain(&self) -> Result<ReferenceDomain> {
        let d = ReferenceDomain::parse(&self.problem.domain)?;
        d.validate()?;
        Ok(d)
    }

    pub fn diffeo(&self, domain: &ReferenceDomain) -> Result<Diffeomorphism> {
        Diffeomorphism::parse(&self.problem.diffeo, domain)
    }

    pub fn perturbation(&self, domain: &ReferenceDomain) -> Result<DisplacementField> {
        parse_perturbation(&self.shape.perturbation, domain)
    }

    pub fn build_problem(&self) -> Result<Problem> {
        let d = self.domain()?;
        Problem::new(self.nonlinearity()?, &d, self.diffeo(&d)?)
    }
}
