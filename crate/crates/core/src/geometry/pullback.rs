//! Coefficient fields of the Laplacian transported to the reference domain.

use serde::Serialize;

use super::diffeo::{det, inverse, matmul, transpose, Diffeomorphism, DisplacementField, Mat2, Vec2};
use super::mesh::{DomainKind, Mesh, ReferenceDomain};
use crate::error::{Error, Result};

/// Symmetric 2×2 tensor stored as `[a11, a12, a22]`.
pub type Sym2 = [f64; 3];

fn sym(m: &Mat2) -> Sym2 {
    [m[0][0], 0.5 * (m[0][1] + m[1][0]), m[1][1]]
}

fn full(s: &Sym2) -> Mat2 {
    [[s[0], s[1]], [s[1], s[2]]]
}

/// Pullback data. Node fields are in reference Cartesian coordinates;
/// the staggered fields are in computational coordinates and already carry
/// the grid geometry.
#[derive(Clone, Debug, Serialize)]
pub struct PullbackCoefficients {
    /// `|det J| J⁻¹ J⁻ᵀ` at every node.
    pub a: Vec<Sym2>,
    /// `|det J|` at every node.
    pub rho: Vec<f64>,
    /// Jacobian of the map at every node.
    pub jac: Vec<Mat2>,
    /// Image of every node.
    pub mapped: Vec<Vec2>,
    pub(crate) edge_kappa: Vec<f64>,
    pub(crate) cell_cross: Vec<f64>,
}

/// The map's Jacobian restricted to what the domain sees: for the interval
/// only `∂h₁/∂x₁` is kept.
fn project(domain: &ReferenceDomain, m: Mat2, one: f64) -> Mat2 {
    match domain.kind {
        DomainKind::Interval => [[m[0][0], 0.0], [0.0, one]],
        _ => m,
    }
}

/// Computational tensor `det P · P⁻¹ A P⁻ᵀ` for the reference embedding `P = ∂x/∂ξ`.
fn to_computational(p: &Mat2, a: &Sym2) -> Sym2 {
    let pi = inverse(p);
    let m = matmul(&matmul(&pi, &full(a)), &transpose(&pi));
    let d = det(p);
    let s = sym(&m);
    [d * s[0], d * s[1], d * s[2]]
}

struct Local {
    a_cart: Sym2,
    rho: f64,
    jac: Mat2,
    y: Vec2,
}

fn local(domain: &ReferenceDomain, h: &Diffeomorphism, x: Vec2) -> Local {
    let (y, j) = h.map(x);
    let j = project(domain, j, 1.0);
    let d = det(&j);
    let ji = inverse(&j);
    let m = matmul(&ji, &transpose(&ji));
    let s = sym(&m);
    Local { a_cart: [d * s[0], d * s[1], d * s[2]], rho: d, jac: j, y }
}

/// `d/dε` of `(A, ρ)` for `h_ε = (id + ε χ) ∘ h`, at `ε = 0`.
fn local_derivative(domain: &ReferenceDomain, h: &Diffeomorphism, chi: &DisplacementField, x: Vec2) -> (Sym2, f64) {
    let (y0, j0) = h.map(x);
    let j0 = project(domain, j0, 1.0);
    let (_, b) = chi.eval(y0);
    let b = project(domain, b, 0.0);
    let d0 = det(&j0);
    let tr = b[0][0] + b[1][1];
    let ji = inverse(&j0);
    let base = matmul(&ji, &transpose(&ji));
    let bs = [[2.0 * b[0][0], b[0][1] + b[1][0]], [b[0][1] + b[1][0], 2.0 * b[1][1]]];
    let corr = matmul(&matmul(&ji, &bs), &transpose(&ji));
    let mut out = [[0.0; 2]; 2];
    for i in 0..2 {
        for k in 0..2 {
            out[i][k] = d0 * (tr * base[i][k] - corr[i][k]);
        }
    }
    (sym(&out), tr * d0)
}

impl PullbackCoefficients {
    /// Evaluates the coefficient fields of `h` on `mesh`.
    pub fn compute(mesh: &Mesh, h: &Diffeomorphism) -> Result<Self> {
        let domain = &mesh.domain;
        let n = mesh.n_nodes();
        let mut a = Vec::with_capacity(n);
        let mut rho = Vec::with_capacity(n);
        let mut jac = Vec::with_capacity(n);
        let mut mapped = Vec::with_capacity(n);
        for (node, &x) in mesh.points.iter().enumerate() {
            let l = local(domain, h, x);
            if !(l.rho > 0.0) {
                return Err(Error::DegenerateMap { node, det: l.rho });
            }
            a.push(l.a_cart);
            rho.push(l.rho);
            jac.push(l.jac);
            mapped.push(l.y);
        }
        let comp_tensor = |xi: Vec2, near: usize| -> Result<Sym2> {
            let (x, p) = domain.embed(xi);
            let l = local(domain, h, x);
            if !(l.rho > 0.0) {
                return Err(Error::DegenerateMap { node: near, det: l.rho });
            }
            Ok(to_computational(&p, &l.a_cart))
        };
        let mut edge_kappa = Vec::with_capacity(mesh.edges.len());
        for e in &mesh.edges {
            let t = comp_tensor(e.at, e.a)?;
            edge_kappa.push((if e.dir == 0 { t[0] } else { t[2] }) * e.geom);
        }
        let mut cell_cross = Vec::with_capacity(mesh.cells.len());
        for c in &mesh.cells {
            cell_cross.push(comp_tensor(c.center, c.corners[0])?[1]);
        }
        Ok(Self { a, rho, jac, mapped, edge_kappa, cell_cross })
    }

    /// Derivative of the coefficient fields along `h_ε = (id + ε χ) ∘ h`
    /// at `ε = 0`. The node Jacobians and images are those of `h`.
    pub fn derivative(mesh: &Mesh, h: &Diffeomorphism, chi: &DisplacementField) -> Result<Self> {
        if h.outer.is_some() {
            return Err(Error::Config("derivative of an already perturbed map".into()));
        }
        let domain = &mesh.domain;
        let base = Self::compute(mesh, h)?;
        let mut a = Vec::with_capacity(mesh.n_nodes());
        let mut rho = Vec::with_capacity(mesh.n_nodes());
        for &x in &mesh.points {
            let (da, dr) = local_derivative(domain, h, chi, x);
            a.push(da);
            rho.push(dr);
        }
        let comp = |xi: Vec2| {
            let (x, p) = domain.embed(xi);
            to_computational(&p, &local_derivative(domain, h, chi, x).0)
        };
        let edge_kappa = mesh
            .edges
            .iter()
            .map(|e| {
                let t = comp(e.at);
                (if e.dir == 0 { t[0] } else { t[2] }) * e.geom
            })
            .collect();
        let cell_cross = mesh.cells.iter().map(|c| comp(c.center)[1]).collect();
        Ok(Self { a, rho, jac: base.jac, mapped: base.mapped, edge_kappa, cell_cross })
    }

    /// Smallest and largest eigenvalue of `A` over all nodes.
    pub fn ellipticity_bounds(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for s in &self.a {
            let m = 0.5 * (s[0] + s[2]);
            let r = (0.25 * (s[0] - s[2]).powi(2) + s[1] * s[1]).sqrt();
            lo = lo.min(m - r);
            hi = hi.max(m + r);
        }
        (lo, hi)
    }
}
