//! Helmholtz free-energy densities and their convex/concave split
//! `f(s) = φ(s) - (d/2) s²`.

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PotentialError {
    #[error("temperatures must be positive and finite (T_abs = {t_abs}, T_crit = {t_crit})")]
    InvalidTemperature { t_abs: f64, t_crit: f64 },
    #[error("interval [{a}, {b}] must satisfy a < 0 < b")]
    InvalidInterval { a: f64, b: f64 },
    #[error("polynomial needs at least one finite coefficient")]
    InvalidCoefficients,
    #[error("f'' is unbounded below or not finite on the interval")]
    Inadmissible,
    #[error("split constant d = {given} is smaller than the required {required}")]
    SplitTooSmall { given: f64, required: f64 },
    #[error("s = {0} lies outside the open interval")]
    OutsideDomain(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum PotentialFamily {
    /// `T_abs/2 [(1+s)ln(1+s) + (1-s)ln(1-s)] - T_crit/2 s²` on `[-1, 1]`.
    Logarithmic { t_abs: f64, t_crit: f64 },
    /// `Σ_k coeffs[k] s^k` on `[a, b]`.
    Polynomial { coeffs: Vec<f64> },
}

/// Value and first two derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Derivatives {
    pub value: f64,
    pub first: f64,
    pub second: f64,
}

/// Total evaluation of `f`: interior values, endpoint limits, or `+∞` outside.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Density {
    Interior(Derivatives),
    /// Finite endpoint limit of `f`; `slope` is `±∞` for the logarithmic family.
    Endpoint { value: f64, slope: f64, curvature: f64 },
    Outside,
}

impl Density {
    pub fn value(&self) -> f64 {
        match self {
            Self::Interior(d) => d.value,
            Self::Endpoint { value, .. } => *value,
            Self::Outside => f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Potential {
    family: PotentialFamily,
    a: f64,
    b: f64,
    d: f64,
}

impl Potential {
    pub fn logarithmic(t_abs: f64, t_crit: f64) -> Result<Self, PotentialError> {
        if !(t_abs.is_finite() && t_crit.is_finite() && t_abs > 0.0 && t_crit > 0.0) {
            return Err(PotentialError::InvalidTemperature { t_abs, t_crit });
        }
        let mut p = Self { family: PotentialFamily::Logarithmic { t_abs, t_crit }, a: -1.0, b: 1.0, d: 0.0 };
        p.d = p.compute_split_constant()?;
        Ok(p)
    }

    pub fn polynomial(coeffs: Vec<f64>, a: f64, b: f64) -> Result<Self, PotentialError> {
        if !(a.is_finite() && b.is_finite() && a < 0.0 && 0.0 < b) {
            return Err(PotentialError::InvalidInterval { a, b });
        }
        if coeffs.is_empty() || coeffs.iter().any(|c| !c.is_finite()) {
            return Err(PotentialError::InvalidCoefficients);
        }
        let mut p = Self { family: PotentialFamily::Polynomial { coeffs }, a, b, d: 0.0 };
        p.d = p.compute_split_constant()?;
        Ok(p)
    }

    /// Replaces the split constant; it must not be smaller than the minimal one.
    pub fn with_split_constant(mut self, d: f64) -> Result<Self, PotentialError> {
        let required = self.compute_split_constant()?;
        if !(d.is_finite() && d >= required * (1.0 - 1e-12)) {
            return Err(PotentialError::SplitTooSmall { given: d, required });
        }
        self.d = d;
        Ok(self)
    }

    pub fn family(&self) -> &PotentialFamily {
        &self.family
    }

    /// Numeric family id stored in snapshot headers.
    pub fn family_id(&self) -> u32 {
        match self.family {
            PotentialFamily::Logarithmic { .. } => 1,
            PotentialFamily::Polynomial { .. } => 2,
        }
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.a, self.b)
    }

    pub fn split_constant(&self) -> f64 {
        self.d
    }

    pub fn is_singular(&self) -> bool {
        matches!(self.family, PotentialFamily::Logarithmic { .. })
    }

    /// Whether `s` gives finite energy for an initial datum: strictly interior
    /// for the logarithmic family, inside the closed interval otherwise.
    pub fn admits(&self, s: f64) -> bool {
        if self.is_singular() {
            s > self.a && s < self.b
        } else {
            s >= self.a && s <= self.b
        }
    }

    pub fn eval_f(&self, s: f64) -> Density {
        if !(s >= self.a && s <= self.b) {
            return Density::Outside;
        }
        match &self.family {
            PotentialFamily::Logarithmic { t_abs, t_crit } => {
                if s == self.a || s == self.b {
                    let value = t_abs * std::f64::consts::LN_2 - 0.5 * t_crit;
                    let slope = if s == self.b { f64::INFINITY } else { f64::NEG_INFINITY };
                    Density::Endpoint { value, slope, curvature: f64::INFINITY }
                } else {
                    Density::Interior(log_derivs(*t_abs, *t_crit, s))
                }
            }
            PotentialFamily::Polynomial { coeffs } => {
                let d = poly_derivs(coeffs, s);
                if s == self.a || s == self.b {
                    Density::Endpoint { value: d.value, slope: d.first, curvature: d.second }
                } else {
                    Density::Interior(d)
                }
            }
        }
    }

    /// `f`, `f'`, `f''` at an interior point without the marker wrapper.
    #[inline]
    pub fn f_interior(&self, s: f64) -> Derivatives {
        match &self.family {
            PotentialFamily::Logarithmic { t_abs, t_crit } => log_derivs(*t_abs, *t_crit, s),
            PotentialFamily::Polynomial { coeffs } => poly_derivs(coeffs, s),
        }
    }

    /// Convex part `φ = f + (d/2)s²` and its derivatives.
    pub fn eval_phi(&self, s: f64) -> Result<Derivatives, PotentialError> {
        if !(s > self.a && s < self.b) {
            return Err(PotentialError::OutsideDomain(s));
        }
        Ok(self.phi_interior(s))
    }

    #[inline]
    pub fn phi_interior(&self, s: f64) -> Derivatives {
        let f = self.f_interior(s);
        Derivatives {
            value: f.value + 0.5 * self.d * s * s,
            first: f.first + self.d * s,
            second: f.second + self.d,
        }
    }

    /// Clamps into `[a + εs, b - εs]` with `εs = 1e-12 (b - a)`; for
    /// linear-algebra guards only.
    pub fn clamp_interior(&self, s: f64) -> f64 {
        let eps = 1e-12 * (self.b - self.a);
        s.clamp(self.a + eps, self.b - eps)
    }

    /// Smallest `d >= 0` with `f'' + d >= 0` on `(a, b)`.
    pub fn compute_split_constant(&self) -> Result<f64, PotentialError> {
        match &self.family {
            // f'' = T_abs / (1 - s²) - T_crit attains its minimum at s = 0
            PotentialFamily::Logarithmic { t_abs, t_crit } => Ok((t_crit - t_abs).max(0.0)),
            PotentialFamily::Polynomial { coeffs } => {
                let m = minimize_second_derivative(coeffs, self.a, self.b);
                if m.is_finite() {
                    Ok((-m).max(0.0))
                } else {
                    Err(PotentialError::Inadmissible)
                }
            }
        }
    }

    /// `min_{[a,b]} f`, used to shift energies to a nonnegative scale.
    pub fn minimum_value(&self) -> f64 {
        let n = 20_000;
        let (a, b) = (self.a, self.b);
        let mut best = f64::INFINITY;
        let mut arg = 0.0;
        for i in 1..n {
            let s = a + (b - a) * i as f64 / n as f64;
            let v = self.f_interior(s).value;
            if v < best {
                best = v;
                arg = s;
            }
        }
        let w = (b - a) / n as f64;
        let (lo, hi) = ((arg - w).max(a + 1e-14), (arg + w).min(b - 1e-14));
        let s = golden_section(|s| self.f_interior(s).value, lo, hi);
        best.min(self.f_interior(s).value).min(self.eval_f(a).value()).min(self.eval_f(b).value())
    }
}

fn log_derivs(t_abs: f64, t_crit: f64, s: f64) -> Derivatives {
    let lp = s.ln_1p();
    let lm = (-s).ln_1p();
    Derivatives {
        value: 0.5 * t_abs * ((1.0 + s) * lp + (1.0 - s) * lm) - 0.5 * t_crit * s * s,
        first: 0.5 * t_abs * (lp - lm) - t_crit * s,
        second: t_abs / ((1.0 - s) * (1.0 + s)) - t_crit,
    }
}

fn poly_derivs(coeffs: &[f64], s: f64) -> Derivatives {
    let (mut v, mut d1, mut d2) = (0.0, 0.0, 0.0);
    for (k, &c) in coeffs.iter().enumerate().rev() {
        d2 = d2 * s + 2.0 * d1;
        d1 = d1 * s + v;
        v = v * s + c;
        let _ = k;
    }
    Derivatives { value: v, first: d1, second: d2 }
}

fn minimize_second_derivative(coeffs: &[f64], a: f64, b: f64) -> f64 {
    let n = 10_000;
    let second = |s: f64| poly_derivs(coeffs, s).second;
    let mut best = f64::INFINITY;
    let mut arg = a;
    for i in 0..=n {
        let s = a + (b - a) * i as f64 / n as f64;
        let v = second(s);
        if !v.is_finite() {
            return f64::NAN;
        }
        if v < best {
            best = v;
            arg = s;
        }
    }
    let w = (b - a) / n as f64;
    let s = golden_section(second, (arg - w).max(a), (arg + w).min(b));
    best.min(second(s))
}

fn golden_section(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..100 {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = f(x2);
        }
    }
    0.5 * (lo + hi)
}
