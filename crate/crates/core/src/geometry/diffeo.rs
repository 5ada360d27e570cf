//! Smooth maps `h = id + ψ` of the reference domain and perturbation fields.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mesh::{DomainKind, ReferenceDomain};
use crate::error::{Error, Result};

pub type Vec2 = [f64; 2];
pub type Mat2 = [[f64; 2]; 2];

pub const IDENTITY: Mat2 = [[1.0, 0.0], [0.0, 1.0]];

pub fn det(m: &Mat2) -> f64 {
    m[0][0] * m[1][1] - m[0][1] * m[1][0]
}

pub fn inverse(m: &Mat2) -> Mat2 {
    let d = det(m);
    [[m[1][1] / d, -m[0][1] / d], [-m[1][0] / d, m[0][0] / d]]
}

pub fn matmul(a: &Mat2, b: &Mat2) -> Mat2 {
    let mut c = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    c
}

pub fn transpose(a: &Mat2) -> Mat2 {
    [[a[0][0], a[1][0]], [a[0][1], a[1][1]]]
}

/// C⁴ smootherstep: 0 with four vanishing derivatives at `t ≤ 0`, 1 likewise at `t ≥ 1`.
fn smoothstep(t: f64) -> (f64, f64) {
    if t <= 0.0 {
        return (0.0, 0.0);
    }
    if t >= 1.0 {
        return (1.0, 0.0);
    }
    let t2 = t * t;
    let t4 = t2 * t2;
    let p = 126.0 - 420.0 * t + 540.0 * t2 - 315.0 * t2 * t + 70.0 * t4;
    let dp = -420.0 + 1080.0 * t - 945.0 * t2 + 280.0 * t2 * t;
    (t4 * t * p, 5.0 * t4 * p + t4 * t * dp)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Normal,
    Tangential,
}

/// `amplitude · (cos kθ | sin kθ)` along the radial or angular unit vector.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollarMode {
    pub k: usize,
    pub sine: bool,
    pub direction: Direction,
    pub amplitude: f64,
}

/// Normalized polar frame around the domain center. The radial bump is
/// zero for normalized radius ≤ `inner` and one for radius ≥ 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollarFrame {
    pub center: Vec2,
    pub scale: Vec2,
    /// Displacement produced by a unit amplitude at the boundary.
    pub length: f64,
    pub inner: f64,
    pub one_dimensional: bool,
}

impl CollarFrame {
    pub fn for_domain(domain: &ReferenceDomain) -> Self {
        match domain.kind {
            DomainKind::Interval => Self {
                center: [0.5, 0.0],
                scale: [0.5, 1.0],
                length: 0.5,
                inner: 0.5,
                one_dimensional: true,
            },
            DomainKind::Rectangle { lx, ly } => Self {
                center: [0.5 * lx, 0.5 * ly],
                scale: [0.5 * lx, 0.5 * ly],
                length: 0.5 * lx.min(ly),
                inner: 0.5,
                one_dimensional: false,
            },
            DomainKind::Disk => Self {
                center: [0.0, 0.0],
                scale: [1.0, 1.0],
                length: 1.0,
                inner: 0.5,
                one_dimensional: false,
            },
        }
    }
}

/// Displacement fields `ψ` with analytic Jacobians.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum DisplacementField {
    Zero,
    /// Fourier modes in the boundary angle times a radial collar bump.
    Collar { frame: CollarFrame, modes: Vec<CollarMode> },
    Constant(Vec2),
    /// `ψ(x) = B x`.
    Linear(Mat2),
    /// `ψ(x) = (Σ c_k x^k, 0)`; for one-dimensional domains.
    Polynomial1d(Vec<f64>),
}

impl DisplacementField {
    pub fn is_zero(&self) -> bool {
        match self {
            DisplacementField::Zero => true,
            DisplacementField::Collar { modes, .. } => modes.iter().all(|m| m.amplitude == 0.0),
            DisplacementField::Constant(c) => c[0] == 0.0 && c[1] == 0.0,
            DisplacementField::Linear(b) => b.iter().flatten().all(|&v| v == 0.0),
            DisplacementField::Polynomial1d(c) => c.iter().all(|&v| v == 0.0),
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        match self {
            DisplacementField::Zero => DisplacementField::Zero,
            DisplacementField::Collar { frame, modes } => DisplacementField::Collar {
                frame: *frame,
                modes: modes.iter().map(|m| CollarMode { amplitude: m.amplitude * s, ..*m }).collect(),
            },
            DisplacementField::Constant(c) => DisplacementField::Constant([s * c[0], s * c[1]]),
            DisplacementField::Linear(b) => {
                DisplacementField::Linear([[s * b[0][0], s * b[0][1]], [s * b[1][0], s * b[1][1]]])
            }
            DisplacementField::Polynomial1d(c) => {
                DisplacementField::Polynomial1d(c.iter().map(|v| v * s).collect())
            }
        }
    }

    /// Largest mode amplitude; the size measure recorded for perturbations.
    pub fn max_amplitude(&self) -> f64 {
        match self {
            DisplacementField::Zero => 0.0,
            DisplacementField::Collar { modes, .. } => {
                modes.iter().fold(0.0, |m, c| f64::max(m, c.amplitude.abs()))
            }
            DisplacementField::Constant(c) => c[0].abs().max(c[1].abs()),
            DisplacementField::Linear(b) => b.iter().flatten().fold(0.0, |m, v| f64::max(m, v.abs())),
            DisplacementField::Polynomial1d(c) => c.iter().fold(0.0, |m, v| f64::max(m, v.abs())),
        }
    }

    /// Value and Jacobian `∂ψ_i/∂x_k` at `x`.
    pub fn eval(&self, x: Vec2) -> (Vec2, Mat2) {
        match self {
            DisplacementField::Zero => ([0.0; 2], [[0.0; 2]; 2]),
            DisplacementField::Constant(c) => (*c, [[0.0; 2]; 2]),
            DisplacementField::Linear(b) => {
                ([b[0][0] * x[0] + b[0][1] * x[1], b[1][0] * x[0] + b[1][1] * x[1]], *b)
            }
            DisplacementField::Polynomial1d(c) => {
                let (mut v, mut d) = (0.0, 0.0);
                for ck in c.iter().rev() {
                    d = d * x[0] + v;
                    v = v * x[0] + ck;
                }
                ([v, 0.0], [[d, 0.0], [0.0, 0.0]])
            }
            DisplacementField::Collar { frame, modes } => collar_eval(frame, modes, x),
        }
    }
}

fn collar_eval(frame: &CollarFrame, modes: &[CollarMode], x: Vec2) -> (Vec2, Mat2) {
    let u = [(x[0] - frame.center[0]) / frame.scale[0], (x[1] - frame.center[1]) / frame.scale[1]];
    let zero = ([0.0; 2], [[0.0; 2]; 2]);
    let (r, theta) = if frame.one_dimensional {
        (u[0].abs(), if u[0] >= 0.0 { 0.0 } else { PI })
    } else {
        (u[0].hypot(u[1]), u[1].atan2(u[0]))
    };
    if r <= frame.inner {
        return zero;
    }
    let width = 1.0 - frame.inner;
    let (beta, dbeta) = smoothstep((r - frame.inner) / width);
    let dbeta = dbeta / width;
    let (mut gn, mut gt, mut dgn, mut dgt) = (0.0, 0.0, 0.0, 0.0);
    for m in modes {
        let k = m.k as f64;
        let (s, c) = (k * theta).sin_cos();
        let (val, der) = if m.sine { (s, k * c) } else { (c, -k * s) };
        match m.direction {
            Direction::Normal => {
                gn += m.amplitude * val;
                dgn += m.amplitude * der;
            }
            Direction::Tangential => {
                gt += m.amplitude * val;
                dgt += m.amplitude * der;
            }
        }
    }
    let l = frame.length;
    if frame.one_dimensional {
        // e_r = sign(u); the bump depends on |u| only.
        let sign = if u[0] >= 0.0 { 1.0 } else { -1.0 };
        let value = l * beta * gn * sign;
        let d = l * dbeta * gn / frame.scale[0];
        return ([value, 0.0], [[d, 0.0], [0.0, 0.0]]);
    }
    let (st, ct) = theta.sin_cos();
    let er = [ct, st];
    let et = [-st, ct];
    let mut value = [0.0; 2];
    let mut d_r = [0.0; 2];
    let mut d_t = [0.0; 2];
    for i in 0..2 {
        value[i] = l * beta * (gn * er[i] + gt * et[i]);
        d_r[i] = l * dbeta * (gn * er[i] + gt * et[i]);
        d_t[i] = l * beta * (dgn * er[i] + gn * et[i] + dgt * et[i] - gt * er[i]);
    }
    let mut jac = [[0.0; 2]; 2];
    for i in 0..2 {
        let du = ct * d_r[i] - st / r * d_t[i];
        let dv = st * d_r[i] + ct / r * d_t[i];
        jac[i][0] = du / frame.scale[0];
        jac[i][1] = dv / frame.scale[1];
    }
    (value, jac)
}

/// `h(x) = x + ψ(x)`, optionally followed by an outer perturbation
/// `y ↦ y + ε χ(y)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diffeomorphism {
    pub base: DisplacementField,
    pub outer: Option<(f64, DisplacementField)>,
}

impl Default for Diffeomorphism {
    fn default() -> Self {
        Self::identity()
    }
}

impl Diffeomorphism {
    pub fn identity() -> Self {
        Self { base: DisplacementField::Zero, outer: None }
    }

    pub fn from_field(field: DisplacementField) -> Self {
        Self { base: field, outer: None }
    }

    /// `(id + ε χ) ∘ self`.
    pub fn perturbed(&self, eps: f64, chi: &DisplacementField) -> Self {
        assert!(self.outer.is_none(), "only one outer perturbation is supported");
        Self { base: self.base.clone(), outer: Some((eps, chi.clone())) }
    }

    pub fn is_identity(&self) -> bool {
        self.base.is_zero() && self.outer.as_ref().is_none_or(|(e, f)| *e == 0.0 || f.is_zero())
    }

    /// Image point and Jacobian `J = ∂h/∂x`. One-dimensional fields leave
    /// the second coordinate untouched.
    pub fn map(&self, x: Vec2) -> (Vec2, Mat2) {
        let (psi, dpsi) = self.base.eval(x);
        let y0 = [x[0] + psi[0], x[1] + psi[1]];
        let j0 = [[1.0 + dpsi[0][0], dpsi[0][1]], [dpsi[1][0], 1.0 + dpsi[1][1]]];
        match &self.outer {
            None => (y0, j0),
            Some((eps, chi)) => {
                let (c, dc) = chi.eval(y0);
                let y = [y0[0] + eps * c[0], y0[1] + eps * c[1]];
                let outer = [[1.0 + eps * dc[0][0], eps * dc[0][1]], [eps * dc[1][0], 1.0 + eps * dc[1][1]]];
                (y, matmul(&outer, &j0))
            }
        }
    }

    /// Random collar field: coefficients uniform in `[-amplitude, amplitude]`
    /// over the first `n_modes` normal Fourier modes. The stream for sample
    /// `index` is selected with ChaCha's stream counter, so samples are
    /// independent of evaluation order.
    pub fn random_fourier(
        domain: &ReferenceDomain,
        seed: u64,
        index: u64,
        amplitude: f64,
        n_modes: usize,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index);
        let frame = CollarFrame::for_domain(domain);
        let mut modes = Vec::new();
        let max_k = if frame.one_dimensional { n_modes.min(2) } else { n_modes };
        for k in 0..max_k {
            let sines: &[bool] = if k == 0 || frame.one_dimensional { &[false] } else { &[false, true] };
            for &sine in sines {
                let a: f64 = if amplitude > 0.0 { rng.random_range(-amplitude..=amplitude) } else { 0.0 };
                modes.push(CollarMode { k, sine, direction: Direction::Normal, amplitude: a });
            }
        }
        Self::from_field(DisplacementField::Collar { frame, modes })
    }

    /// Parses `none | fourier:<seed>:<amplitude>:<n_modes>`.
    pub fn parse(s: &str, domain: &ReferenceDomain) -> Result<Self> {
        let bad = || Error::Config(format!("diffeo: cannot parse `{s}`"));
        let s = s.trim();
        if s == "none" {
            return Ok(Self::identity());
        }
        let parts: Vec<&str> = s.split(':').collect();
        match parts.as_slice() {
            ["fourier", seed, amp, modes] => {
                let seed: u64 = seed.parse().map_err(|_| bad())?;
                let amp: f64 = amp.parse().map_err(|_| bad())?;
                let modes: usize = modes.parse().map_err(|_| bad())?;
                if !(amp >= 0.0) || modes == 0 {
                    return Err(bad());
                }
                Ok(Self::random_fourier(domain, seed, 0, amp, modes))
            }
            _ => Err(bad()),
        }
    }
}

/// Parses a perturbation direction `ḣ`:
/// `zero | normal:<k> | normal-sin:<k> | tangential:<k> | translate:<ax>:<ay> | fourier:<seed>:<amp>:<n>`.
/// Collar modes have unit amplitude.
pub fn parse_perturbation(s: &str, domain: &ReferenceDomain) -> Result<DisplacementField> {
    let bad = || Error::Config(format!("hdot: cannot parse `{s}`"));
    let s = s.trim();
    let frame = CollarFrame::for_domain(domain);
    let collar = |k: &str, sine: bool, direction: Direction| -> Result<DisplacementField> {
        let k: usize = k.parse().map_err(|_| bad())?;
        if frame.one_dimensional && (sine || direction == Direction::Tangential || k > 1) {
            return Err(Error::Config(format!("hdot: `{s}` has no one-dimensional analog")));
        }
        Ok(DisplacementField::Collar {
            frame,
            modes: vec![CollarMode { k, sine, direction, amplitude: 1.0 }],
        })
    };
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        ["zero"] => Ok(DisplacementField::Zero),
        ["normal", k] => collar(k, false, Direction::Normal),
        ["normal-sin", k] => collar(k, true, Direction::Normal),
        ["tangential", k] => collar(k, false, Direction::Tangential),
        ["translate", ax, ay] => Ok(DisplacementField::Constant([
            ax.parse().map_err(|_| bad())?,
            ay.parse().map_err(|_| bad())?,
        ])),
        ["fourier", ..] => Ok(Diffeomorphism::parse(s, domain)?.base),
        _ => Err(bad()),
    }
}
