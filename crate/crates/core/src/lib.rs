//! Numerical continuation for `−Δv = μ f(v)` with zero Dirichlet data on
//! reference domains mapped by smooth diffeomorphisms.
//!
//! The solution curve is traced from `(0, 0)` through its folds, every fold
//! is refined and checked for a simple, transversal crossing, and the
//! dependence of the problem on the domain is available through exact
//! discrete domain derivatives. The guide in `book/` walks through each
//! stage with runnable examples.
//!
//! ```
//! use gelfand::continuation::{trace_continuum, ContinuationConfig};
//! use gelfand::geometry::{Diffeomorphism, ReferenceDomain};
//! use gelfand::nonlinearity::Nonlinearity;
//! use gelfand::problem::Problem;
//!
//! let p = Problem::new(Nonlinearity::exponential(), &ReferenceDomain::interval(64), Diffeomorphism::identity())?;
//! let branch = trace_continuum(&p, &ContinuationConfig::default())?;
//! assert!((branch.folds[0].mu_fold - 3.51).abs() < 0.02);
//! # Ok::<(), gelfand::Error>(())
//! ```

pub mod config;
pub mod continuation;
pub mod error;
pub mod geometry;
pub mod io;
pub mod linalg;
pub mod nonlinearity;
pub mod oracles;
pub mod problem;
pub mod shape;
pub mod solver;
pub mod spectral;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/problem.md")]
    mod problem {}
    #[doc = include_str!("../../../book/src/discretization.md")]
    mod discretization {}
    #[doc = include_str!("../../../book/src/solving.md")]
    mod solving {}
    #[doc = include_str!("../../../book/src/continuation.md")]
    mod continuation {}
    #[doc = include_str!("../../../book/src/spectrum.md")]
    mod spectrum {}
    #[doc = include_str!("../../../book/src/shape.md")]
    mod shape {}
    #[doc = include_str!("../../../book/src/oracles.md")]
    mod oracles {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
