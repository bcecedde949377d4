//! Energies and the scalar certificates computed from trajectories.

use serde::Serialize;
use thiserror::Error;

use crate::model::Model;
use crate::operator::{mean, NormContext};
use crate::potential::Density;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagnosticsError {
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("samples must span t in [0, {needed}], last time is {got}")]
    ShortSpan { needed: f64, got: f64 },
    #[error("energy sample {0} is not finite")]
    NonFinite(usize),
}

/// `E_θ,h = ½ℰ_h(c,c) + (θ/2)‖∇c‖² + Σ f(c_i) h^n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyBreakdown {
    /// `½ℰ_h(c, c)`.
    pub nonlocal: f64,
    pub gradient: f64,
    pub bulk: f64,
    /// `+∞` when some cell sits on or beyond an endpoint of a singular potential.
    pub total: f64,
}

impl EnergyBreakdown {
    pub fn is_finite(&self) -> bool {
        self.total.is_finite()
    }
}

pub fn energy(model: &Model, c: &[f64], theta_reg: f64) -> EnergyBreakdown {
    let vol = model.grid.vol();
    let nonlocal = 0.5 * model.coupling.energy(c);
    let gradient = if theta_reg > 0.0 { 0.5 * theta_reg * model.neumann.gradient_sq(c) } else { 0.0 };
    let p = &model.potential;
    let mut bulk = 0.0;
    for &s in c {
        match p.eval_f(s) {
            Density::Interior(d) => bulk += d.value,
            Density::Endpoint { value, .. } if !p.is_singular() => bulk += value,
            _ => {
                bulk = f64::INFINITY;
                break;
            }
        }
    }
    bulk *= vol;
    EnergyBreakdown { nonlocal, gradient, bulk, total: nonlocal + gradient + bulk }
}

/// `|E(T) + D(T) - E(0)| / (|E(0)| + 1)`.
pub fn energy_identity_residual(e0: f64, e_final: f64, dissipation: f64) -> f64 {
    (e_final + dissipation - e0).abs() / (e0.abs() + 1.0)
}

/// `‖∇_h μ‖²` for the chemical potential of `c`.
pub fn grad_mu_sq(model: &Model, c: &[f64], theta_reg: f64) -> f64 {
    model.neumann.gradient_sq(&model.chemical_potential(c, theta_reg))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AbsorbingFit {
    /// Smallest `C` with `E(t) <= e^{-t} E(0) + C` at every sample.
    pub c_abs: f64,
    /// Late-time energy level (mean over the last fifth of the samples).
    pub asymptote: f64,
    /// Least-squares rate of `E(t) - asymptote ~ e^{-rate t}`; NaN if no decay is visible.
    pub decay_rate: f64,
    pub holds: bool,
}

/// Energies must already be shifted to be nonnegative.
pub fn absorbing_set_check(times: &[f64], energies: &[f64]) -> Result<AbsorbingFit, DiagnosticsError> {
    if times.len() < 10 || energies.len() != times.len() {
        return Err(DiagnosticsError::TooFewSamples { needed: 10, got: times.len().min(energies.len()) });
    }
    let t_last = *times.last().unwrap();
    if t_last < 5.0 {
        return Err(DiagnosticsError::ShortSpan { needed: 5.0, got: t_last });
    }
    if let Some(i) = energies.iter().position(|e| !e.is_finite()) {
        return Err(DiagnosticsError::NonFinite(i));
    }
    let e0 = energies[0];
    let c_abs = times
        .iter()
        .zip(energies)
        .map(|(t, e)| e - (-t).exp() * e0)
        .fold(0.0f64, f64::max);
    let holds = times.iter().zip(energies).all(|(t, e)| *e <= (-t).exp() * e0 + c_abs * (1.0 + 1e-12) + 1e-15);
    let tail = (energies.len() / 5).max(1);
    let asymptote = energies[energies.len() - tail..].iter().sum::<f64>() / tail as f64;
    let span = e0 - asymptote;
    let (mut sx, mut sy, mut sxx, mut sxy, mut k) = (0.0, 0.0, 0.0, 0.0, 0.0);
    if span > 0.0 {
        for (t, e) in times.iter().zip(energies) {
            let rel = (e - asymptote) / span;
            if rel > 1e-3 {
                let y = -rel.ln();
                sx += t;
                sy += y;
                sxx += t * t;
                sxy += t * y;
                k += 1.0;
            }
        }
    }
    let decay_rate = if k >= 2.0 && (k * sxx - sx * sx).abs() > 0.0 { (k * sxy - sx * sy) / (k * sxx - sx * sx) } else { f64::NAN };
    Ok(AbsorbingFit { c_abs, asymptote, decay_rate, holds })
}

/// `max C_abs / min C_abs` across a batch.
pub fn absorbing_spread(fits: &[AbsorbingFit]) -> f64 {
    let hi = fits.iter().map(|f| f.c_abs).fold(f64::NEG_INFINITY, f64::max);
    let lo = fits.iter().map(|f| f.c_abs).fold(f64::INFINITY, f64::min);
    hi / lo
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DomainEstimate {
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
}

/// `(θ‖c‖²_{H¹} + ‖c‖²_{H^{α/2}} + ‖φ'(c)‖²) / (‖∂F_θ(c)‖² + ‖c‖² + 1)` with
/// `∂F_θ(c) = θAc + ℒ_h c + P₀φ'(c)`.
pub fn domain_estimate_ratio(model: &Model, norms: &NormContext, c: &[f64], theta_reg: f64) -> DomainEstimate {
    let grid = &model.grid;
    let phi_p: Vec<f64> = c.iter().map(|&s| model.potential.phi_interior(s).first).collect();
    let l2c = grid.inner(c, c);
    let lhs = theta_reg * (l2c + norms.h1_seminorm_sq(c)) + norms.fractional_sq(c) + grid.inner(&phi_p, &phi_p);
    let m = mean(&phi_p);
    let mut sub = model.coupling.apply(c).expect("state size matches the model");
    let ac = model.neumann.apply(c);
    for i in 0..c.len() {
        sub[i] += theta_reg * ac[i] + phi_p[i] - m;
    }
    let rhs = grid.inner(&sub, &sub) + l2c + 1.0;
    DomainEstimate { lhs, rhs, ratio: lhs / rhs }
}

/// `κ(t) = (t / (1 + t))^{1/2}`.
pub fn kappa(t: f64) -> f64 {
    (t / (1.0 + t)).sqrt()
}

/// Discrete modulus of continuity `ω(r) = max_{|x_i - x_j| <= r} |c_i - c_j|`.
pub fn modulus_of_continuity(model: &Model, c: &[f64], radii: &[f64]) -> Vec<(f64, f64)> {
    let grid = &model.grid;
    let n = grid.len();
    let centers = grid.centers();
    radii
        .iter()
        .map(|&r| {
            let mut w: f64 = 0.0;
            for i in 0..n {
                for j in i + 1..n {
                    let d2 = (centers[i][0] - centers[j][0]).powi(2) + (centers[i][1] - centers[j][1]).powi(2);
                    if d2 <= r * r * (1.0 + 1e-12) {
                        w = w.max((c[i] - c[j]).abs());
                    }
                }
            }
            (r, w)
        })
        .collect()
}
