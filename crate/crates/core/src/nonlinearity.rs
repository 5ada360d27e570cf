//! Nonlinearities `f` for `-Δv = μ f(v)` and sampled checks of the standing
//! hypotheses: positivity, monotonicity and convexity on `(a, +∞)`, plus the
//! growth conditions that give a priori bounds away from `μ = 0`.
//!
//! Growth conditions are limits at infinity and cannot be certified on a
//! finite sample; [`check_growth`] reports trends only.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower end `a` of the domain `(a, +∞)` of `f`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum LowerLimit {
    /// `a = -∞`; kept as an explicit variant so that no large negative
    /// float ever leaks into comparisons.
    NegInfinity,
    Finite(f64),
}

impl LowerLimit {
    pub fn admits(&self, t: f64) -> bool {
        match *self {
            LowerLimit::NegInfinity => t.is_finite(),
            LowerLimit::Finite(a) => t > a && t.is_finite(),
        }
    }
}

/// Chebyshev expansion `f(t) = Σ c_k T_k(x)` with `x` the affine image of
/// `t ∈ [lo, hi]` onto `[-1, 1]`. Evaluation outside `(lo, hi]` is an error.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChebyshevSeries {
    pub lo: f64,
    pub hi: f64,
    pub coeffs: Vec<f64>,
}

impl ChebyshevSeries {
    pub fn new(lo: f64, hi: f64, coeffs: Vec<f64>) -> Result<Self> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Domain(format!("invalid interval [{lo}, {hi}]")));
        }
        if coeffs.is_empty() {
            return Err(Error::Domain("empty coefficient list".into()));
        }
        Ok(Self { lo, hi, coeffs })
    }

    fn to_unit(&self, t: f64) -> f64 {
        (2.0 * t - self.lo - self.hi) / (self.hi - self.lo)
    }

    /// Clenshaw summation.
    fn clenshaw(coeffs: &[f64], x: f64) -> f64 {
        let (mut b1, mut b2) = (0.0, 0.0);
        for &c in coeffs.iter().skip(1).rev() {
            let b0 = 2.0 * x * b1 - b2 + c;
            b2 = b1;
            b1 = b0;
        }
        coeffs[0] + x * b1 - b2
    }

    /// Coefficients of the derivative with respect to `t`.
    fn derivative(coeffs: &[f64], lo: f64, hi: f64) -> Vec<f64> {
        let n = coeffs.len();
        if n <= 1 {
            return vec![0.0];
        }
        let mut d = vec![0.0; n + 1];
        for k in (1..n).rev() {
            d[k - 1] = d[k + 1] + 2.0 * k as f64 * coeffs[k];
        }
        d[0] *= 0.5;
        d.truncate(n - 1);
        let scale = 2.0 / (hi - lo);
        d.iter_mut().for_each(|c| *c *= scale);
        d
    }

    /// Antiderivative coefficients (with respect to `t`), constant term zero.
    fn integral(coeffs: &[f64], lo: f64, hi: f64) -> Vec<f64> {
        let n = coeffs.len();
        let get = |k: usize| if k < n { coeffs[k] } else { 0.0 };
        let mut out = vec![0.0; n + 1];
        for (k, o) in out.iter_mut().enumerate().skip(1) {
            let prev = if k == 1 { 2.0 * get(0) } else { get(k - 1) };
            *o = (prev - get(k + 1)) / (2.0 * k as f64);
        }
        let scale = 0.5 * (hi - lo);
        out.iter_mut().for_each(|c| *c *= scale);
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum NonlinearityKind {
    /// `f(t) = e^t`.
    Exponential,
    /// `f(t) = (1 + t)^p`, `p > 1`.
    Power { p: f64 },
    Custom(ChebyshevSeries),
}

/// A nonlinearity together with the lower end of its domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Nonlinearity {
    pub kind: NonlinearityKind,
    pub lower_limit: LowerLimit,
    pub description: String,
    #[serde(skip)]
    derived: Option<Box<(Vec<f64>, Vec<f64>)>>,
}

/// Values of `f` and, up to the requested order, its derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FValues {
    pub f: f64,
    pub df: Option<f64>,
    pub d2f: Option<f64>,
}

impl Nonlinearity {
    pub fn exponential() -> Self {
        Self {
            kind: NonlinearityKind::Exponential,
            lower_limit: LowerLimit::NegInfinity,
            description: "exp".into(),
            derived: None,
        }
    }

    pub fn power(p: f64) -> Result<Self> {
        if !(p > 1.0) || !p.is_finite() {
            return Err(Error::Domain(format!("power exponent must exceed 1, got {p}")));
        }
        Ok(Self {
            kind: NonlinearityKind::Power { p },
            lower_limit: LowerLimit::Finite(-1.0),
            description: format!("power:{p}"),
            derived: None,
        })
    }

    pub fn custom(series: ChebyshevSeries, description: impl Into<String>) -> Self {
        let d1 = ChebyshevSeries::derivative(&series.coeffs, series.lo, series.hi);
        let d2 = ChebyshevSeries::derivative(&d1, series.lo, series.hi);
        Self {
            lower_limit: LowerLimit::Finite(series.lo),
            kind: NonlinearityKind::Custom(series),
            description: description.into(),
            derived: Some(Box::new((d1, d2))),
        }
    }

    /// Parses the configuration syntax `exp | power:<p>`.
    pub fn parse(key: &str) -> Result<Self> {
        let key = key.trim();
        if key == "exp" {
            return Ok(Self::exponential());
        }
        if let Some(p) = key.strip_prefix("power:") {
            let p: f64 = p
                .parse()
                .map_err(|_| Error::Config(format!("nonlinearity: bad exponent in `{key}`")))?;
            return Self::power(p).map_err(|e| Error::Config(format!("nonlinearity: {e}")));
        }
        Err(Error::Config(format!("nonlinearity: unknown key `{key}`")))
    }

    pub fn admits(&self, t: f64) -> bool {
        if !self.lower_limit.admits(t) {
            return false;
        }
        match &self.kind {
            NonlinearityKind::Custom(s) => t <= s.hi,
            _ => true,
        }
    }

    fn check(&self, t: f64) -> Result<()> {
        if self.admits(t) {
            Ok(())
        } else {
            Err(Error::Domain(format!("t = {t} outside the domain of {}", self.description)))
        }
    }

    fn custom_parts(&self) -> (&ChebyshevSeries, &[f64], &[f64]) {
        match &self.kind {
            NonlinearityKind::Custom(s) => {
                let d = self.derived.as_ref().expect("custom derivatives are set at construction");
                (s, &d.0, &d.1)
            }
            _ => unreachable!(),
        }
    }

    /// `(f, f', f'')` truncated to `max_order`.
    pub fn eval(&self, t: f64, max_order: usize) -> Result<FValues> {
        if max_order > 2 {
            return Err(Error::Domain(format!("max_order must be 0..=2, got {max_order}")));
        }
        self.check(t)?;
        let (f, df, d2f) = self.eval_unchecked(t);
        Ok(FValues {
            f,
            df: (max_order >= 1).then_some(df),
            d2f: (max_order >= 2).then_some(d2f),
        })
    }

    /// All three values without a domain check; the caller guarantees `admits(t)`.
    pub fn eval_unchecked(&self, t: f64) -> (f64, f64, f64) {
        match &self.kind {
            NonlinearityKind::Exponential => {
                let e = t.exp();
                (e, e, e)
            }
            NonlinearityKind::Power { p } => {
                let b = 1.0 + t;
                let bp2 = b.powf(p - 2.0);
                (bp2 * b * b, p * bp2 * b, p * (p - 1.0) * bp2)
            }
            NonlinearityKind::Custom(_) => {
                let (s, d1, d2) = self.custom_parts();
                let x = s.to_unit(t);
                (
                    ChebyshevSeries::clenshaw(&s.coeffs, x),
                    ChebyshevSeries::clenshaw(d1, x),
                    ChebyshevSeries::clenshaw(d2, x),
                )
            }
        }
    }

    #[inline]
    pub fn f(&self, t: f64) -> f64 {
        match &self.kind {
            NonlinearityKind::Exponential => t.exp(),
            NonlinearityKind::Power { p } => (1.0 + t).powf(*p),
            NonlinearityKind::Custom(_) => self.eval_unchecked(t).0,
        }
    }

    #[inline]
    pub fn df(&self, t: f64) -> f64 {
        match &self.kind {
            NonlinearityKind::Exponential => t.exp(),
            NonlinearityKind::Power { p } => p * (1.0 + t).powf(p - 1.0),
            NonlinearityKind::Custom(_) => self.eval_unchecked(t).1,
        }
    }

    /// `F(t) = ∫_0^t f`.
    pub fn antiderivative(&self, t: f64) -> Result<f64> {
        self.check(t)?;
        Ok(match &self.kind {
            NonlinearityKind::Exponential => t.exp_m1(),
            NonlinearityKind::Power { p } => ((1.0 + t).powf(p + 1.0) - 1.0) / (p + 1.0),
            NonlinearityKind::Custom(s) => {
                self.check(0.0)?;
                let c = ChebyshevSeries::integral(&s.coeffs, s.lo, s.hi);
                ChebyshevSeries::clenshaw(&c, s.to_unit(t))
                    - ChebyshevSeries::clenshaw(&c, s.to_unit(0.0))
            }
        })
    }
}

/// First sample violating `f > 0`, `f' > 0` or `f'' > 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct H1Violation {
    pub t: f64,
    pub condition: &'static str,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct H1Check {
    pub ok: bool,
    pub first_violation: Option<H1Violation>,
}

/// Checks positivity, monotonicity and convexity of `f` at every sample.
/// Samples outside the domain count as violations of the `domain` condition.
pub fn check_h1(spec: &Nonlinearity, t_grid: &[f64]) -> H1Check {
    for &t in t_grid {
        let violation = match spec.eval(t, 2) {
            Err(_) => Some(("domain", t)),
            Ok(v) => {
                let (df, d2f) = (v.df.unwrap_or(f64::NAN), v.d2f.unwrap_or(f64::NAN));
                if !(v.f > 0.0) {
                    Some(("f > 0", v.f))
                } else if !(df > 0.0) {
                    Some(("f' > 0", df))
                } else if !(d2f > 0.0) {
                    Some(("f'' > 0", d2f))
                } else {
                    None
                }
            }
        };
        if let Some((condition, value)) = violation {
            return H1Check { ok: false, first_violation: Some(H1Violation { t, condition, value }) };
        }
    }
    H1Check { ok: true, first_violation: None }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthSample {
    pub t: f64,
    /// `f(t)/t`
    pub superlinear: f64,
    /// `f(t)/t^β`
    pub subcritical: f64,
    /// `t f'(t)/f(t)`, the local growth exponent.
    pub local_exponent: f64,
    /// `(t f(t) - θ F(t)) / (t² f(t)^{2/N})`
    pub dln: f64,
}

/// Sampled trends of the growth conditions. Deterministic in its inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthReport {
    pub dim: usize,
    pub theta_used: f64,
    pub beta_used: f64,
    pub superlinear_ok: bool,
    /// Neither an increasing nor a clearly decreasing trend of `f(t)/t`.
    pub superlinear_inconclusive: bool,
    pub subcritical_ok: bool,
    pub dln_ok: bool,
    pub details: Vec<GrowthSample>,
}

fn non_increasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12) + 1e-300)
}

fn non_decreasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] >= w[0] * (1.0 - 1e-12))
}

/// Samples the growth conditions on a geometric grid in `[1, t_max]`.
pub fn check_growth(
    spec: &Nonlinearity,
    dim: usize,
    theta: f64,
    t_max: f64,
    n_samples: usize,
) -> Result<GrowthReport> {
    if dim < 1 {
        return Err(Error::Domain("dimension must be positive".into()));
    }
    let theta_cap = if dim >= 3 { 2.0 * dim as f64 / (dim as f64 - 2.0) } else { f64::INFINITY };
    if !(theta >= 0.0) || theta >= theta_cap {
        return Err(Error::Domain(format!("theta = {theta} outside [0, {theta_cap})")));
    }
    if n_samples < 10 {
        return Err(Error::Domain(format!("need at least 10 samples, got {n_samples}")));
    }
    if !(t_max > 1.0) {
        return Err(Error::Domain(format!("t_max = {t_max} must exceed 1")));
    }
    let ts: Vec<f64> = (0..n_samples)
        .map(|i| t_max.powf(i as f64 / (n_samples - 1) as f64))
        .collect();
    let mut raw = Vec::with_capacity(n_samples);
    for &t in &ts {
        let v = spec.eval(t, 1)?;
        let big_f = spec.antiderivative(t)?;
        raw.push((t, v.f, v.df.unwrap(), big_f));
    }
    let exponents: Vec<f64> = raw.iter().map(|&(t, f, df, _)| t * df / f).collect();
    let half = n_samples / 2;
    let beta = if dim >= 3 {
        (dim as f64 + 2.0) / (dim as f64 - 2.0)
    } else {
        exponents.iter().cloned().fold(f64::MIN, f64::max) + 1.0
    };
    let power_n = 2.0 / dim as f64;
    let details: Vec<GrowthSample> = raw
        .iter()
        .zip(&exponents)
        .map(|(&(t, f, _, big_f), &e)| GrowthSample {
            t,
            superlinear: f / t,
            subcritical: f / t.powf(beta),
            local_exponent: e,
            dln: (t * f - theta * big_f) / (t * t * f.powf(power_n)),
        })
        .collect();
    let upper = &details[half..];
    let sl: Vec<f64> = upper.iter().map(|d| d.superlinear).collect();
    let growth = sl[sl.len() - 1] / sl[0];
    let superlinear_ok = non_decreasing(&sl) && growth >= 1.5;
    let clearly_sublinear = non_increasing(&sl) && growth <= 1.0 / 1.5;
    let subcritical_ok = if dim >= 3 {
        non_increasing(&details.iter().map(|d| d.subcritical).collect::<Vec<_>>())
    } else {
        let ex: Vec<f64> = upper.iter().map(|d| d.local_exponent).collect();
        non_increasing(&ex) || ex[ex.len() - 1] <= ex[0] * 1.05
    };
    let dl: Vec<f64> = upper.iter().map(|d| d.dln).collect();
    let dln_ok = dl[dl.len() - 1] <= 0.0 || (non_increasing(&dl) && dl[dl.len() - 1] < dl[0]);
    Ok(GrowthReport {
        dim,
        theta_used: theta,
        beta_used: beta,
        superlinear_ok,
        superlinear_inconclusive: !superlinear_ok && !clearly_sublinear,
        subcritical_ok,
        dln_ok,
        details,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + b.abs())
    }

    #[test]
    fn exp_values() {
        let e = Nonlinearity::exponential();
        let v = e.eval(0.0, 2).unwrap();
        assert_eq!((v.f, v.df, v.d2f), (1.0, Some(1.0), Some(1.0)));
        let v = e.eval(2f64.ln(), 2).unwrap();
        assert!(close(v.f, 2.0, 1e-15) && close(v.d2f.unwrap(), 2.0, 1e-15));
        let v = e.eval(0.0, 0).unwrap();
        assert_eq!(v.df, None);
        assert!(e.eval(0.0, 3).is_err());
    }

    #[test]
    fn power_values_and_domain() {
        let p = Nonlinearity::power(2.0).unwrap();
        let v = p.eval(1.0, 2).unwrap();
        assert!(close(v.f, 4.0, 1e-15));
        assert!(close(v.df.unwrap(), 4.0, 1e-15));
        assert!(close(v.d2f.unwrap(), 2.0, 1e-15));
        assert!(matches!(p.eval(-1.0, 0), Err(Error::Domain(_))));
        assert!(matches!(p.eval(-2.0, 0), Err(Error::Domain(_))));
        assert!(Nonlinearity::power(1.0).is_err());
    }

    #[test]
    fn parse_keys() {
        assert_eq!(Nonlinearity::parse("exp").unwrap().kind, NonlinearityKind::Exponential);
        assert_eq!(
            Nonlinearity::parse("power:3").unwrap().kind,
            NonlinearityKind::Power { p: 3.0 }
        );
        assert!(matches!(Nonlinearity::parse("power:x"), Err(Error::Config(_))));
        assert!(matches!(Nonlinearity::parse("sin"), Err(Error::Config(_))));
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let step = 1e-5;
        for spec in [Nonlinearity::exponential(), Nonlinearity::power(2.5).unwrap()] {
            for i in 0..=20 {
                let t = 0.5 * i as f64;
                let (_, df, d2f) = spec.eval_unchecked(t);
                let fd1 = (spec.f(t + step) - spec.f(t - step)) / (2.0 * step);
                let fd2 = (spec.df(t + step) - spec.df(t - step)) / (2.0 * step);
                assert!(((fd1 - df) / df).abs() <= 1e-6, "{t}: {fd1} vs {df}");
                assert!(((fd2 - d2f) / d2f).abs() <= 1e-6, "{t}: {fd2} vs {d2f}");
            }
        }
    }

    #[test]
    fn h1_holds_for_builtins() {
        let exp = Nonlinearity::exponential();
        assert!(check_h1(&exp, &[-1.0, 0.0, 1.0, 10.0]).ok);
        let pow = Nonlinearity::power(2.0).unwrap();
        assert!(check_h1(&pow, &[-0.5, 0.0, 3.0]).ok);
        let outside = check_h1(&pow, &[-1.5, 0.0]);
        assert!(!outside.ok);
        assert_eq!(outside.first_violation.unwrap().condition, "domain");
    }

    #[test]
    fn custom_series_reproduces_a_quadratic() {
        // (1+t)^2 on [-1, 3]: x = (t - 1)/2, so 1 + t = 2 + 2x and
        // (2+2x)^2 = 4 + 8x + 4x^2 = 6 T0 + 8 T1 + 2 T2.
        let s = ChebyshevSeries::new(-1.0, 3.0, vec![6.0, 8.0, 2.0]).unwrap();
        let f = Nonlinearity::custom(s, "quadratic");
        for &t in &[-0.5, 0.0, 1.0, 2.5] {
            let v = f.eval(t, 2).unwrap();
            assert!(close(v.f, (1.0 + t) * (1.0 + t), 1e-13));
            assert!(close(v.df.unwrap(), 2.0 * (1.0 + t), 1e-13));
            assert!(close(v.d2f.unwrap(), 2.0, 1e-13));
            let big_f = f.antiderivative(t).unwrap();
            assert!(close(big_f, ((1.0 + t).powi(3) - 1.0) / 3.0, 1e-12));
        }
        assert!(f.eval(3.5, 0).is_err(), "extrapolation must fail");
        assert!(check_h1(&f, &[-0.5, 0.0, 2.0]).ok);
    }

    #[test]
    fn custom_concave_sample_is_reported() {
        // 2 T0 + 0.5 T1 - 0.25 T2 on [-1, 1]: f'' = -1 < 0 everywhere.
        let s = ChebyshevSeries::new(-1.0, 1.0, vec![2.0, 0.5, -0.25]).unwrap();
        let f = Nonlinearity::custom(s, "concave");
        let r = check_h1(&f, &[-0.5, 0.0, 0.5]);
        assert!(!r.ok);
        let v = r.first_violation.unwrap();
        assert_eq!(v.t, -0.5);
        assert_eq!(v.condition, "f'' > 0");
    }

    #[test]
    fn growth_power_in_three_dimensions() {
        let p = Nonlinearity::power(2.0).unwrap();
        let r = check_growth(&p, 3, 2.0, 1e4, 40).unwrap();
        assert!(r.superlinear_ok);
        assert!(r.subcritical_ok);
        assert!(r.dln_ok);
        assert_eq!(r.beta_used, 5.0);
        // direct evaluation of (1+t)^2/t at the first and last samples
        let first = &r.details[0];
        assert!(close(first.superlinear, 4.0, 1e-14));
        let last = r.details.last().unwrap();
        assert!(close(last.superlinear, (1.0 + 1e4) * (1.0 + 1e4) / 1e4, 1e-12));
    }

    #[test]
    fn growth_exp_in_two_dimensions() {
        let e = Nonlinearity::exponential();
        let r = check_growth(&e, 2, 0.0, 50.0, 30).unwrap();
        assert!(r.superlinear_ok);
        assert!(!r.superlinear_inconclusive);
        // e^t outgrows every power: no polynomial subcritical bound
        assert!(!r.subcritical_ok);
        assert!(r.dln_ok);
        let last = r.details.last().unwrap();
        assert!(close(last.superlinear, 50f64.exp() / 50.0, 1e-12));
    }

    #[test]
    fn growth_near_linear_is_inconclusive() {
        let p = Nonlinearity::power(1.0001).unwrap();
        let r = check_growth(&p, 2, 0.0, 5.0, 10).unwrap();
        assert!(!r.superlinear_ok);
        assert!(r.superlinear_inconclusive);
    }

    #[test]
    fn growth_rejects_bad_theta() {
        let p = Nonlinearity::power(2.0).unwrap();
        assert!(check_growth(&p, 3, 6.0, 100.0, 10).is_err());
        assert!(check_growth(&p, 3, -0.1, 100.0, 10).is_err());
        assert!(check_growth(&p, 2, 100.0, 100.0, 10).is_ok());
    }

    #[test]
    fn growth_report_is_deterministic() {
        let p = Nonlinearity::power(3.0).unwrap();
        let a = check_growth(&p, 2, 1.0, 1e3, 25).unwrap();
        let b = check_growth(&p, 2, 1.0, 1e3, 25).unwrap();
        assert_eq!(a, b);
        let json = serde_json::to_string(&a).unwrap();
        assert!(json.contains("\"theta_used\":1.0"));
    }
}
