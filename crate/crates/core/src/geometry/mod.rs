//! Reference domains, maps, pullback coefficients and operator assembly.

pub mod diffeo;
pub mod mesh;
pub mod operator;
pub mod pullback;

pub use diffeo::{parse_perturbation, CollarMode, Diffeomorphism, Direction, DisplacementField};
pub use mesh::{DomainKind, Mesh, ReferenceDomain};
pub use operator::{normal_derivative, physical_gradient, DiscreteOperator, PhysicalBoundary};
pub use pullback::PullbackCoefficients;
