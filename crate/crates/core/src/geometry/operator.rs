//! Assembly of the pulled-back Laplacian `ρ⁻¹ div(A ∇·)` with Dirichlet elimination.
//!
//! The operator is stored as `Δ_h = −M⁻¹ K`, where `K` is the symmetric
//! stiffness matrix of the energy `∫ A∇u·∇u` and `M` the lumped mass
//! `w ρ`. Diagonal flux terms live on grid edges, the cross term on cells.

use super::diffeo::{inverse, Vec2};
use super::mesh::{DomainKind, Mesh};
use super::pullback::PullbackCoefficients;
use crate::linalg::CsrMatrix;

#[derive(Clone, Debug)]
pub struct DiscreteOperator {
    /// Stiffness restricted to interior unknowns.
    pub k: CsrMatrix,
    /// Interior rows, all node columns; applies to fields with boundary data.
    pub k_full: CsrMatrix,
    /// Lumped mass (physical quadrature weights) on interior unknowns.
    pub mass: Vec<f64>,
    /// Lumped mass on every node.
    pub mass_full: Vec<f64>,
    /// Largest absolute row sum of `M⁻¹ K`.
    pub op_norm: f64,
}

const A_CROSS: [f64; 4] = [-1.0, 1.0, -1.0, 1.0];
const B_CROSS: [f64; 4] = [-1.0, -1.0, 1.0, 1.0];

/// Stiffness rows for the given staggered coefficients.
fn stiffness_rows(mesh: &Mesh, edge_kappa: &[f64], cell_cross: &[f64]) -> Vec<Vec<(usize, f64)>> {
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); mesh.n_unknowns()];
    let mut add = |p: usize, q: usize, v: f64| {
        if let Some(r) = mesh.unknown_of[p] {
            rows[r].push((q, v));
        }
    };
    for (e, &kappa) in mesh.edges.iter().zip(edge_kappa) {
        add(e.a, e.a, kappa);
        add(e.a, e.b, -kappa);
        add(e.b, e.b, kappa);
        add(e.b, e.a, -kappa);
    }
    for (c, &a12) in mesh.cells.iter().zip(cell_cross) {
        if a12 == 0.0 {
            continue;
        }
        for p in 0..4 {
            for q in 0..4 {
                let v = 0.25 * a12 * (A_CROSS[p] * B_CROSS[q] + B_CROSS[p] * A_CROSS[q]);
                if v != 0.0 {
                    add(c.corners[p], c.corners[q], v);
                }
            }
        }
    }
    rows
}

/// Splits node-column rows into the interior block (unknown columns).
fn interior_block(mesh: &Mesh, rows: &[Vec<(usize, f64)>]) -> CsrMatrix {
    let inner = rows
        .iter()
        .map(|r| r.iter().filter_map(|&(c, v)| mesh.unknown_of[c].map(|u| (u, v))).collect())
        .collect();
    CsrMatrix::from_rows(mesh.n_unknowns(), inner)
}

impl DiscreteOperator {
    pub fn assemble(mesh: &Mesh, coeffs: &PullbackCoefficients) -> Self {
        let rows = stiffness_rows(mesh, &coeffs.edge_kappa, &coeffs.cell_cross);
        let k = interior_block(mesh, &rows);
        let k_full = CsrMatrix::from_rows(mesh.n_nodes(), rows);
        let mass_full: Vec<f64> = mesh.weights.iter().zip(&coeffs.rho).map(|(w, r)| w * r).collect();
        let mass = mesh.restrict(&mass_full);
        let op_norm = k.scaled_row_norm(&mass);
        Self { k, k_full, mass, mass_full, op_norm }
    }

    /// `(K', M')` for coefficient derivatives produced by
    /// [`PullbackCoefficients::derivative`].
    pub fn derivative_parts(mesh: &Mesh, d: &PullbackCoefficients) -> (CsrMatrix, Vec<f64>) {
        let rows = stiffness_rows(mesh, &d.edge_kappa, &d.cell_cross);
        let dm: Vec<f64> = mesh.weights.iter().zip(&d.rho).map(|(w, r)| w * r).collect();
        (interior_block(mesh, &rows), mesh.restrict(&dm))
    }

    pub fn n(&self) -> usize {
        self.k.n_rows
    }

    /// `Δ_h v` for interior values with zero boundary data.
    pub fn apply_laplacian(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n()];
        self.k.mul_vec(v, &mut out);
        for (o, m) in out.iter_mut().zip(&self.mass) {
            *o = -*o / m;
        }
        out
    }

    /// `Δ_h g` at interior nodes for a field given on every node.
    pub fn apply_laplacian_full(&self, g: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n()];
        self.k_full.mul_vec(g, &mut out);
        for (o, m) in out.iter_mut().zip(&self.mass) {
            *o = -*o / m;
        }
        out
    }

    /// Sorted `(row, col, value)` triplets of `K`.
    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        self.k.triplets()
    }
}

/// Outward normal derivative on the reference boundary by one-sided
/// second-order stencils; corner nodes average their two stencils along the
/// diagonal normal.
pub fn normal_derivative(mesh: &Mesh, field: &[f64]) -> Vec<f64> {
    mesh.boundary
        .iter()
        .map(|b| {
            b.stencils
                .iter()
                .map(|s| {
                    let [i0, i1, i2] = s.nodes;
                    s.weight * (3.0 * field[i0] - 4.0 * field[i1] + field[i2]) / (2.0 * s.step)
                })
                .sum()
        })
        .collect()
}

/// Boundary data on the mapped domain: outward unit normals, normal
/// derivatives of a field vanishing on the boundary, and arc-length weights.
#[derive(Clone, Debug)]
pub struct PhysicalBoundary {
    pub normal: Vec<Vec2>,
    pub arc_weight: Vec<f64>,
}

impl PhysicalBoundary {
    pub fn new(mesh: &Mesh, coeffs: &PullbackCoefficients) -> Self {
        let mut normal = Vec::with_capacity(mesh.boundary.len());
        let mut arc_weight = Vec::with_capacity(mesh.boundary.len());
        for b in &mesh.boundary {
            let j = coeffs.jac[b.node];
            let ji = inverse(&j);
            // J⁻ᵀ ν
            let t = [ji[0][0] * b.normal[0] + ji[1][0] * b.normal[1], ji[0][1] * b.normal[0] + ji[1][1] * b.normal[1]];
            let len = t[0].hypot(t[1]);
            normal.push([t[0] / len, t[1] / len]);
            arc_weight.push(coeffs.rho[b.node] * len * b.arc_weight);
        }
        Self { normal, arc_weight }
    }

    /// `∂_ν u` on the mapped boundary for a field with zero boundary values,
    /// so that `∇u = (∂_ν u) ν` there.
    pub fn normal_derivative(&self, mesh: &Mesh, coeffs: &PullbackCoefficients, field: &[f64]) -> Vec<f64> {
        mesh.boundary
            .iter()
            .zip(&self.normal)
            .map(|(b, nu)| {
                let j = coeffs.jac[b.node];
                let mut acc = 0.0;
                for s in &b.stencils {
                    let [i0, i1, i2] = s.nodes;
                    let d = (3.0 * field[i0] - 4.0 * field[i1] + field[i2]) / (2.0 * s.step);
                    let p0 = mesh.points[i0];
                    let p1 = mesh.points[i1];
                    let t = [(p0[0] - p1[0]) / s.step, (p0[1] - p1[1]) / s.step];
                    let jt = [j[0][0] * t[0] + j[0][1] * t[1], j[1][0] * t[0] + j[1][1] * t[1]];
                    acc += d / (nu[0] * jt[0] + nu[1] * jt[1]);
                }
                acc / b.stencils.len() as f64
            })
            .collect()
    }
}

/// Outward derivative at a boundary node from values along the inward line.
/// The centred difference is applied with a ghost value extrapolated by a
/// quartic, so the boundary value carries the same leading error as the
/// interior centred values. Short lines fall back to the three-point rule.
fn boundary_derivative(line: &[f64], h: f64) -> f64 {
    match line {
        [a, b, c, d, e, ..] => (5.0 * a - 11.0 * b + 10.0 * c - 5.0 * d + e) / (2.0 * h),
        [a, b, c, ..] => (3.0 * a - 4.0 * b + c) / (2.0 * h),
        _ => unreachable!("grids have at least three nodes per line"),
    }
}

/// Gradient in computational coordinates: centered differences inside,
/// one-sided differences on the boundary. Entries at the disk pole are
/// Cartesian.
fn computational_gradient(mesh: &Mesh, u: &[f64]) -> Vec<Vec2> {
    let d = &mesh.domain;
    let [h1, h2] = mesh.spacing;
    let mut g = vec![[0.0; 2]; mesh.n_nodes()];
    match d.kind {
        DomainKind::Interval => {
            let n = d.n1 + 1;
            for i in 0..=n {
                let len = 5.min(n + 1);
                g[i][0] = if i == 0 {
                    -boundary_derivative(&u[..len], h1)
                } else if i == n {
                    let line: Vec<f64> = (0..len).map(|k| u[n - k]).collect();
                    boundary_derivative(&line, h1)
                } else {
                    (u[i + 1] - u[i - 1]) / (2.0 * h1)
                };
            }
        }
        DomainKind::Rectangle { .. } => {
            let (mx, my) = (d.n1 + 2, d.n2 + 2);
            for j in 0..my {
                for i in 0..mx {
                    let at = |a: usize, b: usize| u[mesh.node(a, b)];
                    let gx = if i == 0 {
                        -boundary_derivative(&(0..5.min(mx)).map(|k| at(k, j)).collect::<Vec<_>>(), h1)
                    } else if i == mx - 1 {
                        boundary_derivative(&(0..5.min(mx)).map(|k| at(i - k, j)).collect::<Vec<_>>(), h1)
                    } else {
                        (at(i + 1, j) - at(i - 1, j)) / (2.0 * h1)
                    };
                    let gy = if j == 0 {
                        -boundary_derivative(&(0..5.min(my)).map(|k| at(i, k)).collect::<Vec<_>>(), h2)
                    } else if j == my - 1 {
                        boundary_derivative(&(0..5.min(my)).map(|k| at(i, j - k)).collect::<Vec<_>>(), h2)
                    } else {
                        (at(i, j + 1) - at(i, j - 1)) / (2.0 * h2)
                    };
                    g[mesh.node(i, j)] = [gx, gy];
                }
            }
        }
        DomainKind::Disk => {
            let (nr, nt) = (d.n1, d.n2);
            for i in 1..=nr {
                for j in 0..nt {
                    let at = |a: usize, b: usize| u[mesh.node(a, b)];
                    let gr = if i == nr {
                        // the pole lies on the same line, so ring 0 may be used
                        boundary_derivative(&(0..5.min(nr + 1)).map(|k| at(nr - k, j)).collect::<Vec<_>>(), h1)
                    } else {
                        // ring 1 reaches across the pole to the opposite ray only
                        // through the pole value, which lies on the same line.
                        (at(i + 1, j) - at(i - 1, j)) / (2.0 * h1)
                    };
                    let gt = (at(i, j + 1) - at(i, j + nt - 1)) / (2.0 * h2);
                    g[mesh.node(i, j)] = [gr, gt];
                }
            }
            // First Fourier mode of ring 1 around the pole.
            let (mut gx, mut gy) = (0.0, 0.0);
            for j in 0..nt {
                let (s, c) = (j as f64 * h2).sin_cos();
                let du = u[mesh.node(1, j)] - u[0];
                gx += c * du;
                gy += s * du;
            }
            let scale = 2.0 / (nt as f64 * h1);
            g[0] = [gx * scale, gy * scale];
        }
    }
    g
}

/// Gradient on the mapped domain at every node, `∇_y u = J⁻ᵀ P⁻ᵀ ∇_ξ u`.
pub fn physical_gradient(mesh: &Mesh, coeffs: &PullbackCoefficients, u: &[f64]) -> Vec<Vec2> {
    let gc = computational_gradient(mesh, u);
    gc.iter()
        .enumerate()
        .map(|(n, g)| {
            let gx = if mesh.domain.kind == DomainKind::Disk && n == 0 {
                *g
            } else {
                let (_, p) = mesh.domain.embed(mesh.comp[n]);
                let pi = inverse(&p);
                [pi[0][0] * g[0] + pi[1][0] * g[1], pi[0][1] * g[0] + pi[1][1] * g[1]]
            };
            let ji = inverse(&coeffs.jac[n]);
            [ji[0][0] * gx[0] + ji[1][0] * gx[1], ji[0][1] * gx[0] + ji[1][1] * gx[1]]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::diffeo::Diffeomorphism;
    use crate::geometry::mesh::ReferenceDomain;
    use crate::linalg::wdot;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn build(d: ReferenceDomain, h: &Diffeomorphism) -> (Mesh, PullbackCoefficients, DiscreteOperator) {
        let mesh = Mesh::build(&d).unwrap();
        let c = PullbackCoefficients::compute(&mesh, h).unwrap();
        let op = DiscreteOperator::assemble(&mesh, &c);
        (mesh, c, op)
    }

    #[test]
    fn identity_interval_is_three_point() {
        let (_, _, op) = build(ReferenceDomain::interval(5), &Diffeomorphism::identity());
        let h = 1.0 / 6.0;
        assert!((op.k.get(2, 2) - 2.0 / h).abs() < 1e-12);
        assert!((op.k.get(2, 1) + 1.0 / h).abs() < 1e-12);
        let lap = op.apply_laplacian(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        // u = 6x·... linear interior, boundary zero at the right end
        assert!(lap[2].abs() < 1e-9);
    }

    #[test]
    fn weighted_symmetry_on_perturbed_domains() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for d in [ReferenceDomain::rectangle(7, 9, 1.0, 1.5), ReferenceDomain::disk(8, 16)] {
            let h = Diffeomorphism::random_fourier(&d, 2, 0, 0.1, 3);
            let (_, _, op) = build(d, &h);
            let n = op.n();
            let u: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let a = wdot(&op.mass, &op.apply_laplacian(&u), &v);
            let b = wdot(&op.mass, &u, &op.apply_laplacian(&v));
            assert!((a - b).abs() < 1e-10 * a.abs().max(1.0));
            assert!(wdot(&op.mass, &op.apply_laplacian(&u), &u) < 0.0);
        }
    }

    #[test]
    fn pullback_consistency_on_quadratics() {
        // Δ(x² + y²) = 4 on any domain; the map is the identity so this
        // exercises the polar stencil and its pole closure.
        let (mesh, _, op) = build(ReferenceDomain::disk(16, 32), &Diffeomorphism::identity());
        let g = mesh.sample(|p| p[0] * p[0] + p[1] * p[1]);
        let lap = op.apply_laplacian_full(&g);
        for v in lap {
            assert!((v - 4.0).abs() < 1e-9, "{v}");
        }
    }

    #[test]
    fn normal_derivatives() {
        let mesh = Mesh::build(&ReferenceDomain::interval(9)).unwrap();
        let v = mesh.sample(|p| p[0] * (1.0 - p[0]));
        for d in normal_derivative(&mesh, &v) {
            assert!((d + 1.0).abs() < 1e-12);
        }
        let c = vec![3.0; mesh.n_nodes()];
        assert!(normal_derivative(&mesh, &c).iter().all(|&d| d == 0.0));
        let mesh = Mesh::build(&ReferenceDomain::disk(32, 64)).unwrap();
        let v = mesh.sample(|p| 1.0 - p[0] * p[0] - p[1] * p[1]);
        for d in normal_derivative(&mesh, &v) {
            assert!((d + 2.0).abs() < 1e-10);
        }
    }

    #[test]
    fn physical_normal_derivative_on_a_dilated_disk() {
        // h(x) = 2x maps the unit disk onto radius 2; u(y) = 4 − |y|² has ∂_ν u = −4.
        let d = ReferenceDomain::disk(16, 32);
        let h = Diffeomorphism::from_field(crate::geometry::diffeo::DisplacementField::Linear(
            crate::geometry::diffeo::IDENTITY,
        ));
        let (mesh, c, _) = build(d, &h);
        let u: Vec<f64> = c.mapped.iter().map(|y| 4.0 - y[0] * y[0] - y[1] * y[1]).collect();
        let pb = PhysicalBoundary::new(&mesh, &c);
        for dn in pb.normal_derivative(&mesh, &c, &u) {
            assert!((dn + 4.0).abs() < 1e-10);
        }
        let len: f64 = pb.arc_weight.iter().sum();
        assert!((len - 4.0 * std::f64::consts::PI).abs() < 1e-10);
    }

    #[test]
    fn gradients_of_linear_fields() {
        let d = ReferenceDomain::disk(6, 64);
        let (mesh, c, _) = build(d, &Diffeomorphism::identity());
        let u = mesh.sample(|p| 2.0 * p[0] - 3.0 * p[1]);
        let g = physical_gradient(&mesh, &c, &u);
        assert!((g[0][0] - 2.0).abs() < 1e-12 && (g[0][1] + 3.0).abs() < 1e-12);
        // centered angular differences carry a sin(Δθ)/Δθ factor
        for g in g {
            assert!((g[0] - 2.0).abs() < 1e-2 && (g[1] + 3.0).abs() < 1e-2, "{g:?}");
        }
        let mesh = Mesh::build(&ReferenceDomain::rectangle(5, 4, 1.0, 1.0)).unwrap();
        let c = PullbackCoefficients::compute(&mesh, &Diffeomorphism::identity()).unwrap();
        let u = mesh.sample(|p| 2.0 * p[0] - 3.0 * p[1]);
        for g in physical_gradient(&mesh, &c, &u) {
            assert!((g[0] - 2.0).abs() < 1e-12 && (g[1] + 3.0).abs() < 1e-12);
        }
    }
}
