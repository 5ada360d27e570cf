use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of the reference domain `Ω₀`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum DomainKind {
    /// The unit interval `(0, 1)`.
    Interval,
    /// `(0, lx) × (0, ly)`.
    Rectangle { lx: f64, ly: f64 },
    /// The unit disk on a polar grid.
    Disk,
}

/// Reference domain plus resolution.
///
/// `n1`, `n2` are interior node counts per axis for the interval and the
/// rectangle. For the disk `n1` is the number of radial intervals (rings
/// `1..n1` are interior, ring `n1` is the boundary circle) and `n2` the
/// number of angular nodes per ring.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceDomain {
    pub kind: DomainKind,
    pub n1: usize,
    pub n2: usize,
}

impl ReferenceDomain {
    pub fn interval(n: usize) -> Self {
        Self { kind: DomainKind::Interval, n1: n, n2: 1 }
    }

    pub fn rectangle(nx: usize, ny: usize, lx: f64, ly: f64) -> Self {
        Self { kind: DomainKind::Rectangle { lx, ly }, n1: nx, n2: ny }
    }

    pub fn disk(nr: usize, ntheta: usize) -> Self {
        Self { kind: DomainKind::Disk, n1: nr, n2: ntheta }
    }

    /// Parses `interval:<n> | rect:<nx>x<ny>:<lx>x<ly> | disk:<nr>x<ntheta>`.
    pub fn parse(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("domain: cannot parse `{s}`"));
        let pair = |t: &str| -> Result<(String, String)> {
            let (a, b) = t.split_once('x').ok_or_else(bad)?;
            Ok((a.to_string(), b.to_string()))
        };
        let parts: Vec<&str> = s.trim().split(':').collect();
        match parts.as_slice() {
            ["interval", n] => Ok(Self::interval(n.parse().map_err(|_| bad())?)),
            ["disk", res] => {
                let (a, b) = pair(res)?;
                Ok(Self::disk(a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?))
            }
            ["rect", res, size] => {
                let (a, b) = pair(res)?;
                let (lx, ly) = pair(size)?;
                Ok(Self::rectangle(
                    a.parse().map_err(|_| bad())?,
                    b.parse().map_err(|_| bad())?,
                    lx.parse().map_err(|_| bad())?,
                    ly.parse().map_err(|_| bad())?,
                ))
            }
            _ => Err(bad()),
        }
    }

    pub fn key(&self) -> String {
        match self.kind {
            DomainKind::Interval => format!("interval:{}", self.n1),
            DomainKind::Rectangle { lx, ly } => format!("rect:{}x{}:{}x{}", self.n1, self.n2, lx, ly),
            DomainKind::Disk => format!("disk:{}x{}", self.n1, self.n2),
        }
    }

    pub fn dim(&self) -> usize {
        match self.kind {
            DomainKind::Interval => 1,
            _ => 2,
        }
    }

    /// Lebesgue measure of `Ω₀`.
    pub fn measure(&self) -> f64 {
        match self.kind {
            DomainKind::Interval => 1.0,
            DomainKind::Rectangle { lx, ly } => lx * ly,
            DomainKind::Disk => PI,
        }
    }

    /// Grid spacing per computational axis (`Δr`, `Δθ` for the disk).
    pub fn spacing(&self) -> [f64; 2] {
        match self.kind {
            DomainKind::Interval => [1.0 / (self.n1 + 1) as f64, 1.0],
            DomainKind::Rectangle { lx, ly } => {
                [lx / (self.n1 + 1) as f64, ly / (self.n2 + 1) as f64]
            }
            DomainKind::Disk => [1.0 / self.n1 as f64, 2.0 * PI / self.n2 as f64],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let small = match self.kind {
            DomainKind::Interval => self.n1 < 3,
            _ => self.n1 < 3 || self.n2 < 3,
        };
        if small {
            return Err(Error::Config(format!(
                "resolution {}x{} below 3 nodes per axis",
                self.n1, self.n2
            )));
        }
        if let DomainKind::Rectangle { lx, ly } = self.kind {
            if !(lx > 0.0 && ly > 0.0) {
                return Err(Error::Config(format!("rectangle sides must be positive: {lx}x{ly}")));
            }
        }
        Ok(())
    }

    /// Reference point and Jacobian `∂x/∂ξ` of the computational coordinates
    /// `ξ` (`(x, ·)`, `(x, y)` or `(r, θ)`).
    pub fn embed(&self, xi: [f64; 2]) -> ([f64; 2], [[f64; 2]; 2]) {
        match self.kind {
            DomainKind::Interval => ([xi[0], 0.0], [[1.0, 0.0], [0.0, 1.0]]),
            DomainKind::Rectangle { .. } => (xi, [[1.0, 0.0], [0.0, 1.0]]),
            DomainKind::Disk => {
                let (r, t) = (xi[0], xi[1]);
                let (s, c) = t.sin_cos();
                ([r * c, r * s], [[c, -r * s], [s, r * c]])
            }
        }
    }
}

/// One-sided second-order difference `(3 v0 - 4 v1 + v2) / (2 step)` along
/// an inward line, scaled by `weight`.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalStencil {
    pub nodes: [usize; 3],
    pub step: f64,
    pub weight: f64,
}

/// Boundary node with its outward unit normal, normal-derivative stencils
/// and arc-length quadrature weight on `∂Ω₀`.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryNode {
    pub node: usize,
    pub normal: [f64; 2],
    pub stencils: Vec<NormalStencil>,
    pub arc_weight: f64,
}

/// Edge of the computational grid; carries a diagonal flux coefficient.
#[derive(Clone, Debug)]
pub(crate) struct Edge {
    pub a: usize,
    pub b: usize,
    pub dir: usize,
    pub at: [f64; 2],
    /// Face length over node distance in computational coordinates.
    pub geom: f64,
}

/// Grid cell `(c00, c10, c01, c11)`; carries the off-diagonal coefficient.
#[derive(Clone, Debug)]
pub(crate) struct Cell {
    pub corners: [usize; 4],
    pub center: [f64; 2],
}

/// Structured grid over a reference domain with an interior/boundary split.
#[derive(Clone, Debug)]
pub struct Mesh {
    pub domain: ReferenceDomain,
    /// Reference coordinates of every node.
    pub points: Vec<[f64; 2]>,
    /// Computational coordinates of every node.
    pub comp: Vec<[f64; 2]>,
    pub is_boundary: Vec<bool>,
    /// Node index of each interior unknown.
    pub interior: Vec<usize>,
    /// Unknown index of each node, `None` on the boundary.
    pub unknown_of: Vec<Option<usize>>,
    /// Quadrature weights on `Ω₀` for every node.
    pub weights: Vec<f64>,
    pub boundary: Vec<BoundaryNode>,
    pub spacing: [f64; 2],
    pub(crate) edges: Vec<Edge>,
    pub(crate) cells: Vec<Cell>,
}

impl Mesh {
    pub fn n_nodes(&self) -> usize {
        self.points.len()
    }

    pub fn n_unknowns(&self) -> usize {
        self.interior.len()
    }

    /// Node index of grid position `(i, j)`.
    pub fn node(&self, i: usize, j: usize) -> usize {
        match self.domain.kind {
            DomainKind::Interval => i,
            DomainKind::Rectangle { .. } => j * (self.domain.n1 + 2) + i,
            DomainKind::Disk => {
                if i == 0 {
                    0
                } else {
                    1 + (i - 1) * self.domain.n2 + (j % self.domain.n2)
                }
            }
        }
    }

    /// Restricts a full nodal field to the interior unknowns.
    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        self.interior.iter().map(|&n| full[n]).collect()
    }

    /// Extends interior values by zero Dirichlet data.
    pub fn extend(&self, interior: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_nodes()];
        for (&n, &v) in self.interior.iter().zip(interior) {
            out[n] = v;
        }
        out
    }

    /// Evaluates `g` at every node.
    pub fn sample(&self, g: impl Fn([f64; 2]) -> f64) -> Vec<f64> {
        self.points.iter().map(|&p| g(p)).collect()
    }

    /// Quadrature weights restricted to interior unknowns.
    pub fn interior_weights(&self) -> Vec<f64> {
        self.restrict(&self.weights)
    }

    /// Builds the grid for `domain`.
    pub fn build(domain: &ReferenceDomain) -> Result<Self> {
        domain.validate()?;
        match domain.kind {
            DomainKind::Interval => Ok(build_interval(domain)),
            DomainKind::Rectangle { .. } => Ok(build_rectangle(domain)),
            DomainKind::Disk => Ok(build_disk(domain)),
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn finish(
    domain: &ReferenceDomain,
    comp: Vec<[f64; 2]>,
    is_boundary: Vec<bool>,
    interior_order: Vec<usize>,
    weights: Vec<f64>,
    boundary: Vec<BoundaryNode>,
    edges: Vec<Edge>,
    cells: Vec<Cell>,
) -> Mesh {
    let points = comp.iter().map(|&xi| domain.embed(xi).0).collect();
    let mut unknown_of = vec![None; comp.len()];
    for (u, &n) in interior_order.iter().enumerate() {
        unknown_of[n] = Some(u);
    }
    Mesh {
        domain: *domain,
        points,
        comp,
        is_boundary,
        interior: interior_order,
        unknown_of,
        weights,
        boundary,
        spacing: domain.spacing(),
        edges,
        cells,
    }
}

fn build_interval(domain: &ReferenceDomain) -> Mesh {
    let n = domain.n1;
    let h = domain.spacing()[0];
    let comp: Vec<[f64; 2]> = (0..n + 2).map(|i| [i as f64 * h, 0.0]).collect();
    let is_boundary: Vec<bool> = (0..n + 2).map(|i| i == 0 || i == n + 1).collect();
    let mut weights = vec![h; n + 2];
    weights[0] = 0.5 * h;
    weights[n + 1] = 0.5 * h;
    let boundary = vec![
        BoundaryNode {
            node: 0,
            normal: [-1.0, 0.0],
            stencils: vec![NormalStencil { nodes: [0, 1, 2], step: h, weight: 1.0 }],
            arc_weight: 1.0,
        },
        BoundaryNode {
            node: n + 1,
            normal: [1.0, 0.0],
            stencils: vec![NormalStencil { nodes: [n + 1, n, n - 1], step: h, weight: 1.0 }],
            arc_weight: 1.0,
        },
    ];
    let edges = (0..=n)
        .map(|i| Edge { a: i, b: i + 1, dir: 0, at: [(i as f64 + 0.5) * h, 0.0], geom: 1.0 / h })
        .collect();
    finish(domain, comp, is_boundary, (1..=n).collect(), weights, boundary, edges, Vec::new())
}

fn build_rectangle(domain: &ReferenceDomain) -> Mesh {
    let (nx, ny) = (domain.n1, domain.n2);
    let [hx, hy] = domain.spacing();
    let (mx, my) = (nx + 2, ny + 2);
    let idx = |i: usize, j: usize| j * mx + i;
    let mut comp = Vec::with_capacity(mx * my);
    let mut is_boundary = Vec::with_capacity(mx * my);
    let mut weights = Vec::with_capacity(mx * my);
    for j in 0..my {
        for i in 0..mx {
            comp.push([i as f64 * hx, j as f64 * hy]);
            let bx = i == 0 || i == mx - 1;
            let by = j == 0 || j == my - 1;
            is_boundary.push(bx || by);
            let wx = if bx { 0.5 } else { 1.0 };
            let wy = if by { 0.5 } else { 1.0 };
            weights.push(hx * hy * wx * wy);
        }
    }
    let interior: Vec<usize> =
        (1..=ny).flat_map(|j| (1..=nx).map(move |i| idx(i, j))).collect();

    let mut boundary = Vec::new();
    for j in 0..my {
        for i in 0..mx {
            if !(i == 0 || i == mx - 1 || j == 0 || j == my - 1) {
                continue;
            }
            let mut stencils = Vec::new();
            let mut normal = [0.0, 0.0];
            let mut arc = 0.0;
            if i == 0 || i == mx - 1 {
                let (s, n1, n2) = if i == 0 { (-1.0, 1, 2) } else { (1.0, mx - 2, mx - 3) };
                normal[0] = s;
                stencils.push(NormalStencil { nodes: [idx(i, j), idx(n1, j), idx(n2, j)], step: hx, weight: 1.0 });
                arc += if j == 0 || j == my - 1 { 0.5 * hy } else { hy };
            }
            if j == 0 || j == my - 1 {
                let (s, n1, n2) = if j == 0 { (-1.0, 1, 2) } else { (1.0, my - 2, my - 3) };
                normal[1] = s;
                stencils.push(NormalStencil { nodes: [idx(i, j), idx(i, n1), idx(i, n2)], step: hy, weight: 1.0 });
                arc += if i == 0 || i == mx - 1 { 0.5 * hx } else { hx };
            }
            if stencils.len() == 2 {
                let r = 0.5f64.sqrt();
                normal = [normal[0] * r, normal[1] * r];
                for s in stencils.iter_mut() {
                    s.weight = r;
                }
            }
            boundary.push(BoundaryNode { node: idx(i, j), normal, stencils, arc_weight: arc });
        }
    }

    let mut edges = Vec::new();
    for j in 0..my {
        for i in 0..mx {
            if i + 1 < mx && !(is_boundary[idx(i, j)] && is_boundary[idx(i + 1, j)]) {
                edges.push(Edge {
                    a: idx(i, j),
                    b: idx(i + 1, j),
                    dir: 0,
                    at: [(i as f64 + 0.5) * hx, j as f64 * hy],
                    geom: hy / hx,
                });
            }
            if j + 1 < my && !(is_boundary[idx(i, j)] && is_boundary[idx(i, j + 1)]) {
                edges.push(Edge {
                    a: idx(i, j),
                    b: idx(i, j + 1),
                    dir: 1,
                    at: [i as f64 * hx, (j as f64 + 0.5) * hy],
                    geom: hx / hy,
                });
            }
        }
    }
    let mut cells = Vec::new();
    for j in 0..my - 1 {
        for i in 0..mx - 1 {
            cells.push(Cell {
                corners: [idx(i, j), idx(i + 1, j), idx(i, j + 1), idx(i + 1, j + 1)],
                center: [(i as f64 + 0.5) * hx, (j as f64 + 0.5) * hy],
            });
        }
    }
    finish(domain, comp, is_boundary, interior, weights, boundary, edges, cells)
}

fn build_disk(domain: &ReferenceDomain) -> Mesh {
    let (nr, nt) = (domain.n1, domain.n2);
    let [dr, dt] = domain.spacing();
    let idx = |i: usize, j: usize| if i == 0 { 0 } else { 1 + (i - 1) * nt + (j % nt) };
    let n_nodes = 1 + nr * nt;
    let mut comp = vec![[0.0, 0.0]; n_nodes];
    let mut is_boundary = vec![false; n_nodes];
    let mut weights = vec![0.0; n_nodes];
    weights[0] = PI * 0.25 * dr * dr;
    for i in 1..=nr {
        let r = i as f64 * dr;
        for j in 0..nt {
            let n = idx(i, j);
            comp[n] = [r, j as f64 * dt];
            if i == nr {
                is_boundary[n] = true;
                weights[n] = PI * (dr - 0.25 * dr * dr) / nt as f64;
            } else {
                weights[n] = r * dr * dt;
            }
        }
    }
    let interior: Vec<usize> = (0..1 + (nr - 1) * nt).collect();
    let boundary = (0..nt)
        .map(|j| {
            let t = j as f64 * dt;
            BoundaryNode {
                node: idx(nr, j),
                normal: [t.cos(), t.sin()],
                stencils: vec![NormalStencil {
                    nodes: [idx(nr, j), idx(nr - 1, j), idx(nr - 2, j)],
                    step: dr,
                    weight: 1.0,
                }],
                arc_weight: dt,
            }
        })
        .collect();

    let mut edges = Vec::new();
    for i in 0..nr {
        for j in 0..nt {
            // radial edge (i, j) -> (i + 1, j)
            edges.push(Edge {
                a: idx(i, j),
                b: idx(i + 1, j),
                dir: 0,
                at: [(i as f64 + 0.5) * dr, j as f64 * dt],
                geom: dt / dr,
            });
            // angular edge on ring i (interior rings only)
            if i >= 1 {
                edges.push(Edge {
                    a: idx(i, j),
                    b: idx(i, j + 1),
                    dir: 1,
                    at: [i as f64 * dr, (j as f64 + 0.5) * dt],
                    geom: dr / dt,
                });
            }
        }
    }
    let mut cells = Vec::new();
    for i in 0..nr {
        for j in 0..nt {
            cells.push(Cell {
                corners: [idx(i, j), idx(i + 1, j), idx(i, j + 1), idx(i + 1, j + 1)],
                center: [(i as f64 + 0.5) * dr, (j as f64 + 0.5) * dt],
            });
        }
    }
    finish(domain, comp, is_boundary, interior, weights, boundary, edges, cells)
}
