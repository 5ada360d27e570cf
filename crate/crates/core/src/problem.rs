//! A nonlinearity on a discretized, possibly mapped, domain.

use crate::error::Result;
use crate::geometry::{
    Diffeomorphism, DiscreteOperator, Mesh, PhysicalBoundary, PullbackCoefficients, ReferenceDomain,
};
use crate::nonlinearity::Nonlinearity;

/// Everything needed to evaluate `Δ_h v + μ f(v)` on `h(Ω₀)`.
#[derive(Clone, Debug)]
pub struct Problem {
    pub nonlinearity: Nonlinearity,
    pub mesh: Mesh,
    pub diffeo: Diffeomorphism,
    pub coeffs: PullbackCoefficients,
    pub op: DiscreteOperator,
}

impl Problem {
    pub fn new(nonlinearity: Nonlinearity, domain: &ReferenceDomain, diffeo: Diffeomorphism) -> Result<Self> {
        let mesh = Mesh::build(domain)?;
        Self::on_mesh(nonlinearity, mesh, diffeo)
    }

    pub fn on_mesh(nonlinearity: Nonlinearity, mesh: Mesh, diffeo: Diffeomorphism) -> Result<Self> {
        let coeffs = PullbackCoefficients::compute(&mesh, &diffeo)?;
        let op = DiscreteOperator::assemble(&mesh, &coeffs);
        Ok(Self { nonlinearity, mesh, diffeo, coeffs, op })
    }

    /// Same nonlinearity and grid, different map.
    pub fn with_diffeo(&self, diffeo: Diffeomorphism) -> Result<Self> {
        Self::on_mesh(self.nonlinearity.clone(), self.mesh.clone(), diffeo)
    }

    /// Number of unknowns.
    pub fn n(&self) -> usize {
        self.op.n()
    }

    /// Quadrature weights of the mapped domain on the unknowns.
    pub fn weights(&self) -> &[f64] {
        &self.op.mass
    }

    pub fn boundary(&self) -> PhysicalBoundary {
        PhysicalBoundary::new(&self.mesh, &self.coeffs)
    }

    /// Smallest residual sup-norm that rounding allows for `v`: applying
    /// `M⁻¹K` loses about `ε‖M⁻¹K‖∞‖v‖∞`. Fine polar grids push this above
    /// the nominal Newton tolerance.
    pub fn residual_floor(&self, sup_v: f64) -> f64 {
        4.0 * f64::EPSILON * self.op.op_norm * sup_v.max(1.0)
    }

    /// Tolerance actually enforced for a requested `tol`.
    pub fn effective_tol(&self, tol: f64, sup_v: f64) -> f64 {
        tol.max(self.residual_floor(sup_v))
    }
}
