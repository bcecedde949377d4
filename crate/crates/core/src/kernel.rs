//! Interaction kernels `k(x, y, z)` with a `|z|^{-n-α}` singularity.
//!
//! A kernel is a pure pointwise function. Restriction of the interaction to
//! the domain is the business of the operator assembly.

use std::collections::hash_map::DefaultHasher;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::expr::Expr;
use crate::operator::Grid;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("kernel order alpha = {0} must lie in the open interval (1, 2)")]
    InvalidOrder(f64),
    #[error("kernel amplitude must be positive and finite, got {0}")]
    InvalidAmplitude(f64),
    #[error("declared bounds must satisfy 0 < c0 <= C0, got c0 = {lower}, C0 = {upper}")]
    InvalidBounds { lower: f64, upper: f64 },
    #[error("kernel is singular at coincident points")]
    Coincident,
    #[error("points have different dimensions ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("kernel value {value} at x = {x:?}, y = {y:?} is not positive")]
    NonPositive { value: f64, x: Vec<f64>, y: Vec<f64> },
}

/// Singularity order `α`, restricted to `(1, 2)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize)]
pub struct Order(f64);

impl Order {
    pub fn new(alpha: f64) -> Result<Self, KernelError> {
        if alpha.is_finite() && alpha > 1.0 && alpha < 2.0 {
            Ok(Self(alpha))
        } else {
            Err(KernelError::InvalidOrder(alpha))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

/// User supplied kernel `k(x, y, z)`; `z = x - y` is passed for convenience.
pub type CustomKernelFn = Arc<dyn Fn(&[f64], &[f64], &[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum KernelFamily {
    /// `A |z|^{-n-α}`.
    Homogeneous,
    /// `A g(x, y) |z|^{-n-α}` with `g` given as an expression.
    Modulated(Expr),
    /// Arbitrary function; `amplitude` is ignored.
    Custom { label: String, f: CustomKernelFn },
}

impl fmt::Debug for KernelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Homogeneous => f.write_str("Homogeneous"),
            Self::Modulated(e) => write!(f, "Modulated({e})"),
            Self::Custom { label, .. } => write!(f, "Custom({label})"),
        }
    }
}

impl KernelFamily {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Homogeneous => "homogeneous",
            Self::Modulated(_) => "modulated",
            Self::Custom { .. } => "custom",
        }
    }
}

/// An admissible interaction kernel together with its declared bound
/// constants `c0 |z|^{-n-α} <= k <= C0 |z|^{-n-α}`.
#[derive(Clone, Debug)]
pub struct Kernel {
    order: Order,
    amplitude: f64,
    family: KernelFamily,
    lower: f64,
    upper: f64,
    symmetrized: bool,
}

impl Kernel {
    pub fn homogeneous(alpha: f64, amplitude: f64) -> Result<Self, KernelError> {
        check_amplitude(amplitude)?;
        Ok(Self {
            order: Order::new(alpha)?,
            amplitude,
            family: KernelFamily::Homogeneous,
            lower: amplitude,
            upper: amplitude,
            symmetrized: false,
        })
    }

    /// `amplitude * g(x, y) * |z|^{-n-α}`. The bounds are the declared
    /// `c0`, `C0` of the full kernel (amplitude included).
    pub fn modulated(
        alpha: f64,
        amplitude: f64,
        modulation: Expr,
        lower: f64,
        upper: f64,
    ) -> Result<Self, KernelError> {
        check_amplitude(amplitude)?;
        check_bounds(lower, upper)?;
        Ok(Self {
            order: Order::new(alpha)?,
            amplitude,
            family: KernelFamily::Modulated(modulation),
            lower,
            upper,
            symmetrized: false,
        })
    }

    pub fn custom(
        alpha: f64,
        label: impl Into<String>,
        f: CustomKernelFn,
        lower: f64,
        upper: f64,
    ) -> Result<Self, KernelError> {
        check_bounds(lower, upper)?;
        Ok(Self {
            order: Order::new(alpha)?,
            amplitude: 1.0,
            family: KernelFamily::Custom { label: label.into(), f },
            lower,
            upper,
            symmetrized: false,
        })
    }

    /// Returns `k̃(x,y,z) = ½(k(x,y,z) + k(y,x,-z))`. Idempotent.
    pub fn symmetrize(&self) -> Self {
        let mut out = self.clone();
        if !matches!(self.family, KernelFamily::Homogeneous) {
            out.symmetrized = true;
        }
        out
    }

    pub fn order(&self) -> Order {
        self.order
    }

    pub fn alpha(&self) -> f64 {
        self.order.0
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn family(&self) -> &KernelFamily {
        &self.family
    }

    pub fn is_symmetrized(&self) -> bool {
        self.symmetrized || matches!(self.family, KernelFamily::Homogeneous)
    }

    /// Declared `(c0, C0)`.
    pub fn bounds(&self) -> (f64, f64) {
        (self.lower, self.upper)
    }

    pub fn with_bounds(mut self, lower: f64, upper: f64) -> Result<Self, KernelError> {
        check_bounds(lower, upper)?;
        self.lower = lower;
        self.upper = upper;
        Ok(self)
    }

    /// Checked evaluation of `k(x, y, x - y)`.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64, KernelError> {
        if x.len() != y.len() {
            return Err(KernelError::DimensionMismatch(x.len(), y.len()));
        }
        if x.iter().zip(y).all(|(a, b)| a == b) {
            return Err(KernelError::Coincident);
        }
        let v = self.value(x, y);
        if v.is_finite() && v > 0.0 {
            Ok(v)
        } else {
            Err(KernelError::NonPositive { value: v, x: x.to_vec(), y: y.to_vec() })
        }
    }

    /// Unchecked evaluation for distinct points of equal dimension.
    #[inline]
    pub fn value(&self, x: &[f64], y: &[f64]) -> f64 {
        if self.symmetrized {
            0.5 * (self.raw(x, y) + self.raw(y, x))
        } else {
            self.raw(x, y)
        }
    }

    #[inline]
    fn raw(&self, x: &[f64], y: &[f64]) -> f64 {
        let n = x.len();
        let mut r2 = 0.0;
        for d in 0..n {
            let z = x[d] - y[d];
            r2 += z * z;
        }
        match &self.family {
            KernelFamily::Homogeneous => self.amplitude * self.power(r2, n),
            KernelFamily::Modulated(g) => self.amplitude * g.eval(x, y) * self.power(r2, n),
            KernelFamily::Custom { f, .. } => {
                let mut z = [0.0; 3];
                for d in 0..n.min(3) {
                    z[d] = x[d] - y[d];
                }
                f(x, y, &z[..n.min(3)])
            }
        }
    }

    /// `|z|^{-n-α}` from `|z|^2`.
    #[inline]
    pub fn power(&self, r2: f64, n: usize) -> f64 {
        r2.powf(-0.5 * (n as f64 + self.order.0))
    }

    /// Coefficient `lim_{z→0} k(x, x, z) |z|^{n+α}` used for the frozen
    /// local kernel near the diagonal.
    pub fn local_amplitude(&self, x: &[f64]) -> f64 {
        match &self.family {
            KernelFamily::Homogeneous => self.amplitude,
            KernelFamily::Modulated(g) => self.amplitude * g.eval(x, x),
            KernelFamily::Custom { .. } => {
                let n = x.len();
                let eps = 1e-7 * (1.0 + x.iter().fold(0.0f64, |m, v| m.max(v.abs())));
                let mut y = x.to_vec();
                y[0] += eps;
                let mut yb = x.to_vec();
                yb[0] -= eps;
                let scale = eps.powf(n as f64 + self.order.0);
                0.5 * (self.value(x, &y) + self.value(x, &yb)) * scale
            }
        }
    }

    /// Stable identifier of the kernel parameters (custom kernels hash their label).
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.family.name().hash(&mut h);
        self.order.0.to_bits().hash(&mut h);
        self.amplitude.to_bits().hash(&mut h);
        self.symmetrized.hash(&mut h);
        match &self.family {
            KernelFamily::Homogeneous => {}
            KernelFamily::Modulated(e) => e.source().hash(&mut h),
            KernelFamily::Custom { label, .. } => label.hash(&mut h),
        }
        h.finish()
    }

    /// Samples point pairs at log-uniform separations in `[h/10, diam]` and
    /// checks `c0 <= k |z|^{n+α} <= C0` at every sample.
    pub fn verify_bounds(&self, grid: &Grid, sample_count: usize, seed: u64) -> BoundsReport {
        let n = grid.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h_min = grid.spacing().iter().cloned().fold(f64::INFINITY, f64::min);
        let diam = grid.diameter();
        let (lo_s, hi_s) = ((h_min / 10.0).ln(), diam.ln());
        let mut report = BoundsReport {
            samples: 0,
            violations: Vec::new(),
            min_ratio: f64::INFINITY,
            max_ratio: f64::NEG_INFINITY,
            worst_ratio: f64::NAN,
        };
        let mut attempts = 0usize;
        while report.samples < sample_count.max(1) && attempts < 1000 * sample_count.max(1) {
            attempts += 1;
            let x: Vec<f64> = grid.extents().iter().map(|&l| rng.random::<f64>() * l).collect();
            let s = (lo_s + (hi_s - lo_s) * rng.random::<f64>()).exp();
            let dir = random_direction(&mut rng, n);
            let y: Vec<f64> = x.iter().zip(&dir).map(|(a, u)| a + s * u).collect();
            if !grid.contains(&y) {
                continue;
            }
            report.samples += 1;
            let ratio = self.value(&x, &y) * s.powf(n as f64 + self.alpha());
            report.min_ratio = report.min_ratio.min(ratio);
            report.max_ratio = report.max_ratio.max(ratio);
            let slack = 1e-12 * self.upper;
            if !(ratio >= self.lower - slack && ratio <= self.upper + slack) {
                report.violations.push(BoundViolation { x, y, ratio });
            }
        }
        let below = self.lower / report.min_ratio;
        let above = report.max_ratio / self.upper;
        report.worst_ratio = if below >= above { report.min_ratio } else { report.max_ratio };
        report
    }

    /// Finite-difference spot check of the first `z` derivative bound at ten
    /// random pairs. Returns `max |∂_z k| |z|^{n+α+1}`.
    pub fn derivative_spot_check(&self, grid: &Grid, seed: u64) -> f64 {
        let n = grid.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst: f64 = 0.0;
        let mut done = 0;
        let mut attempts = 0;
        while done < 10 && attempts < 10_000 {
            attempts += 1;
            let x: Vec<f64> = grid.extents().iter().map(|&l| rng.random::<f64>() * l).collect();
            let s = grid.diameter() * (0.05 + 0.5 * rng.random::<f64>());
            let dir = random_direction(&mut rng, n);
            let y: Vec<f64> = x.iter().zip(&dir).map(|(a, u)| a + s * u).collect();
            if !grid.contains(&y) {
                continue;
            }
            done += 1;
            let eps = 1e-5 * s;
            let yp: Vec<f64> = y.iter().zip(&dir).map(|(a, u)| a - eps * u).collect();
            let ym: Vec<f64> = y.iter().zip(&dir).map(|(a, u)| a + eps * u).collect();
            let deriv = (self.value(&x, &yp) - self.value(&x, &ym)) / (2.0 * eps);
            worst = worst.max(deriv.abs() * s.powf(n as f64 + self.alpha() + 1.0));
        }
        worst
    }
}

fn check_amplitude(a: f64) -> Result<(), KernelError> {
    if a.is_finite() && a > 0.0 {
        Ok(())
    } else {
        Err(KernelError::InvalidAmplitude(a))
    }
}

fn check_bounds(lower: f64, upper: f64) -> Result<(), KernelError> {
    if lower.is_finite() && upper.is_finite() && lower > 0.0 && lower <= upper {
        Ok(())
    } else {
        Err(KernelError::InvalidBounds { lower, upper })
    }
}

fn random_direction(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![if rng.random::<bool>() { 1.0 } else { -1.0 }];
    }
    let t = rng.random::<f64>() * std::f64::consts::TAU;
    vec![t.cos(), t.sin()]
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundViolation {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub ratio: f64,
}

/// Outcome of [`Kernel::verify_bounds`]. `worst_ratio` is whichever of the
/// extremal ratios `k |z|^{n+α}` lies relatively further from `[c0, C0]`.
#[derive(Debug, Clone, Serialize)]
pub struct BoundsReport {
    pub samples: usize,
    pub violations: Vec<BoundViolation>,
    pub min_ratio: f64,
    pub max_ratio: f64,
    pub worst_ratio: f64,
}
