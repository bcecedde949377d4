//! Boundary asymptotics of the nonlocal operator on a flat face.
//!
//! Probes work in a local frame where the face point `x₀` is the origin and
//! the domain is the half-space `{s > 0}` along the inward normal. Each rung
//! of a `δ` ladder gets its own uniform patch with a fixed number of cells
//! per `δ`, so relative resolution is the same on every rung.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::kernel::Kernel;
use crate::operator::Grid;
use crate::quadrature::{rect_moment, segment_moment, Angular};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundaryError {
    #[error("delta = {delta} is below three cell widths ({min})")]
    DeltaTooSmall { delta: f64, min: f64 },
    #[error("ladder must be strictly decreasing and positive")]
    Ladder,
    #[error("need at least {needed} ladder rungs, got {got}")]
    TooFewRungs { needed: usize, got: usize },
    #[error("point {0:?} is not on the boundary of the grid")]
    NotOnBoundary(Vec<f64>),
    #[error("exponent r = {r} must exceed -1 - n = {min}")]
    Exponent { r: f64, min: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("inward normal must be a unit vector")]
    Normal,
}

/// `φ_δ(x) = max(0, 1 - |x - x₀|/δ)`.
#[inline]
pub fn cone(x: &[f64], x0: &[f64], delta: f64) -> f64 {
    let r = x.iter().zip(x0).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    (1.0 - r / delta).max(0.0)
}

/// Samples `φ_δ` at the cell centres of `grid`.
pub fn cone_test_function(grid: &Grid, x0: &[f64], delta: f64) -> Result<Vec<f64>, BoundaryError> {
    if x0.len() != grid.dim() {
        return Err(BoundaryError::Dimension(format!("x0 has {} coordinates, grid has {}", x0.len(), grid.dim())));
    }
    let min = 3.0 * grid.max_spacing();
    if !(delta >= min) {
        return Err(BoundaryError::DeltaTooSmall { delta, min });
    }
    Ok(grid.sample(|x| cone(x, x0, delta)))
}

/// Geometric ladder `δ_max, δ_max q, …` with `count` rungs ending at `δ_min`.
pub fn geometric_ladder(delta_max: f64, delta_min: f64, count: usize) -> Result<Vec<f64>, BoundaryError> {
    if count < 2 || !(delta_max > delta_min && delta_min > 0.0) {
        return Err(BoundaryError::Ladder);
    }
    let q = (delta_min / delta_max).powf(1.0 / (count - 1) as f64);
    Ok((0..count).map(|k| if k + 1 == count { delta_min } else { delta_max * q.powi(k as i32) }).collect())
}

fn check_ladder(ladder: &[f64]) -> Result<(), BoundaryError> {
    if ladder.is_empty() || ladder.iter().any(|d| !(d.is_finite() && *d > 0.0)) || ladder.windows(2).any(|w| w[1] >= w[0]) {
        return Err(BoundaryError::Ladder);
    }
    Ok(())
}

/// Local half-space frame at a face point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Frame {
    pub dim: usize,
    pub x0: [f64; 2],
    /// Unit inward normal.
    pub inward: [f64; 2],
}

impl Frame {
    pub fn new(x0: &[f64], inward: &[f64]) -> Result<Self, BoundaryError> {
        let dim = x0.len();
        if !(1..=2).contains(&dim) || inward.len() != dim {
            return Err(BoundaryError::Dimension("x0 and the normal must both have 1 or 2 coordinates".into()));
        }
        let norm = inward.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(BoundaryError::Normal);
        }
        let mut f = Self { dim, x0: [0.0; 2], inward: [0.0; 2] };
        f.x0[..dim].copy_from_slice(x0);
        f.inward[..dim].copy_from_slice(inward);
        Ok(f)
    }

    /// Midpoint of the bottom face of `(0, L₁) × (0, L₂)` (or the left end in 1D).
    pub fn center_face(grid: &Grid) -> Self {
        match grid.dim() {
            1 => Self { dim: 1, x0: [0.0; 2], inward: [1.0, 0.0] },
            _ => Self { dim: 2, x0: [0.5 * grid.extents()[0], 0.0], inward: [0.0, 1.0] },
        }
    }

    /// Outward normal `ν = -inward`.
    pub fn outward(&self) -> [f64; 2] {
        [-self.inward[0], -self.inward[1]]
    }

    /// Global point of local coordinates `(t, s)`: tangential `t`, inward `s`.
    #[inline]
    fn global(&self, t: f64, s: f64) -> [f64; 2] {
        if self.dim == 1 {
            return [self.x0[0] + s * self.inward[0], 0.0];
        }
        let tangent = [self.inward[1], -self.inward[0]];
        [self.x0[0] + t * tangent[0] + s * self.inward[0], self.x0[1] + t * tangent[1] + s * self.inward[1]]
    }

    /// Rotates a local vector `(t, s)` to global coordinates.
    fn rotate(&self, v: [f64; 2]) -> [f64; 2] {
        if self.dim == 1 {
            return [v[1] * self.inward[0], 0.0];
        }
        let tangent = [self.inward[1], -self.inward[0]];
        [v[0] * tangent[0] + v[1] * self.inward[0], v[0] * tangent[1] + v[1] * self.inward[1]]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DirectionOptions {
    /// Patch cells per `δ` (at least 8).
    pub cells_per_delta: usize,
    /// Subcells per axis for near pairs.
    pub refinement: usize,
    /// Patch radius in units of the largest `δ`; the tail beyond it is added analytically.
    pub reach: f64,
}

impl Default for DirectionOptions {
    fn default() -> Self {
        Self { cells_per_delta: 8, refinement: 4, reach: 3.0 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RungValue {
    pub delta: f64,
    /// Scaled integral `δ^{-1-n+α} ∫∫ (x - y)(φ_δ(x) - φ_δ(y)) k` in global coordinates.
    pub vector: [f64; 2],
}

#[derive(Debug, Clone, Serialize)]
pub struct DirectionReport {
    pub rungs: Vec<RungValue>,
    /// Richardson limit; `None` when the ladder is inconclusive.
    pub extrapolated: Option<[f64; 2]>,
    /// Unit vector along `extrapolated`.
    pub direction: Option<[f64; 2]>,
    /// Fitted correction exponent, if the fit was well posed.
    pub beta: Option<f64>,
    pub converged: bool,
    /// Relative change between the last two rungs.
    pub last_change: f64,
    pub magnitude: f64,
    /// Magnitude below `1e-8` of the largest rung value.
    pub near_zero: bool,
    /// `|cos|` of the angle between `direction` and the outward normal.
    pub cos_normal: Option<f64>,
}

fn norm2(v: [f64; 2]) -> f64 {
    (v[0] * v[0] + v[1] * v[1]).sqrt()
}

/// Scaled direction integral for one `δ`.
pub fn direction_integral(kernel: &Kernel, frame: &Frame, delta: f64, delta_max: f64, opts: &DirectionOptions) -> [f64; 2] {
    let n = frame.dim;
    let alpha = kernel.alpha();
    let cpd = opts.cells_per_delta.max(8);
    let h = delta / cpd as f64;
    let radius = opts.reach * delta_max;
    let rc = (radius / h).ceil() as i64;
    // local cell centres (t, s) of the half-ball patch
    let mut cells: Vec<[f64; 2]> = Vec::new();
    let t_range = if n == 1 { 0..1 } else { -rc..rc };
    for i in t_range {
        for j in 0..rc {
            let t = if n == 1 { 0.0 } else { (i as f64 + 0.5) * h };
            let s = (j as f64 + 0.5) * h;
            if t * t + s * s <= radius * radius {
                cells.push([t, s]);
            }
        }
    }
    let vol = h.powi(n as i32);
    let band = delta + h * (n as f64).sqrt() * 0.5;
    let in_support = |c: &[f64; 2]| (c[0] * c[0] + c[1] * c[1]).sqrt() < band;
    let support: Vec<usize> = (0..cells.len()).filter(|&i| in_support(&cells[i])).collect();
    let phi = |p: [f64; 2]| (1.0 - (p[0] * p[0] + p[1] * p[1]).sqrt() / delta).max(0.0);
    let kval = |x: [f64; 2], y: [f64; 2]| {
        let (gx, gy) = (frame.global(x[0], x[1]), frame.global(y[0], y[1]));
        kernel.value(&gx[..n], &gy[..n])
    };
    let m = opts.refinement.max(1);
    let sub: Vec<[f64; 2]> = if n == 1 {
        (0..m).map(|b| [0.0, (b as f64 + 0.5) * h / m as f64 - 0.5 * h]).collect()
    } else {
        (0..m)
            .flat_map(|a| (0..m).map(move |b| [(a as f64 + 0.5) * h / m as f64 - 0.5 * h, (b as f64 + 0.5) * h / m as f64 - 0.5 * h]))
            .collect()
    };
    let near = 3.0 * h * (1.0 + 1e-9);
    // self-cell moments ∫_C∫_C z_d² |z|^{-n-α}
    let (s_t, s_s) = if n == 1 {
        (0.0, segment_moment(h, 1.0 - alpha))
    } else {
        (rect_moment([h, h], -alpha, Angular::Cos2), rect_moment([h, h], -alpha, Angular::Sin2))
    };

    let partial: Vec<[f64; 2]> = support
        .par_iter()
        .map(|&i| {
            let ci = cells[i];
            let pi = phi(ci);
            let mut acc = [0.0; 2];
            for (j, &cj) in cells.iter().enumerate() {
                if j == i {
                    continue;
                }
                let weight = if in_support(&cj) { 1.0 } else { 2.0 };
                let dist = ((ci[0] - cj[0]).powi(2) + (ci[1] - cj[1]).powi(2)).sqrt();
                if dist > near {
                    let f = (pi - phi(cj)) * kval(ci, cj) * weight;
                    acc[0] += (ci[0] - cj[0]) * f;
                    acc[1] += (ci[1] - cj[1]) * f;
                } else {
                    let mut pair = [0.0; 2];
                    for a in &sub {
                        let x = [ci[0] + a[0], ci[1] + a[1]];
                        let px = phi(x);
                        for b in &sub {
                            let y = [cj[0] + b[0], cj[1] + b[1]];
                            if y[1] <= 0.0 {
                                continue;
                            }
                            let f = (px - phi(y)) * kval(x, y);
                            pair[0] += (x[0] - y[0]) * f;
                            pair[1] += (x[1] - y[1]) * f;
                        }
                    }
                    let w = weight / (sub.len() * sub.len()) as f64;
                    acc[0] += pair[0] * w;
                    acc[1] += pair[1] * w;
                }
            }
            // the pair (i, i): ∫∫ (x - y)((x - y)·∇φ) k over one cell
            let r = (ci[0] * ci[0] + ci[1] * ci[1]).sqrt();
            if r > 0.0 && r < delta {
                let a = kernel.local_amplitude(&frame.global(ci[0], ci[1])[..n]);
                let grad = [-ci[0] / (r * delta), -ci[1] / (r * delta)];
                acc[0] += a * s_t * grad[0] / (vol * vol);
                acc[1] += a * s_s * grad[1] / (vol * vol);
            }
            acc
        })
        .collect();
    let local = partial.iter().fold([0.0; 2], |a, b| [a[0] + b[0], a[1] + b[1]]);
    let mut total = [local[0] * vol * vol, local[1] * vol * vol];
    // far field: φ(y) = 0 and (x - y) ≈ -y, integrated exactly over |y| > R
    let mass = if n == 1 { 0.5 * delta } else { PI * delta * delta / 6.0 };
    let sphere = if n == 1 { 1.0 } else { 2.0 };
    let a0 = kernel.local_amplitude(&frame.x0[..n]);
    total[1] -= 2.0 * mass * a0 * sphere * radius.powf(1.0 - alpha) / (alpha - 1.0);
    let scale = delta.powf(-1.0 - n as f64 + alpha);
    let g = frame.rotate([total[0] * scale, total[1] * scale]);
    if n == 1 {
        [g[0], 0.0]
    } else {
        g
    }
}

/// Evaluates the scaled integral on every rung and extrapolates `δ → 0`.
/// In one dimension the direction is the scalar 1 and no integral is formed.
pub fn direction_vector(kernel: &Kernel, frame: &Frame, ladder: &[f64], opts: &DirectionOptions) -> Result<DirectionReport, BoundaryError> {
    check_ladder(ladder)?;
    if frame.dim == 1 {
        return Ok(DirectionReport {
            rungs: Vec::new(),
            extrapolated: Some([1.0, 0.0]),
            direction: Some([1.0, 0.0]),
            beta: None,
            converged: true,
            last_change: 0.0,
            magnitude: 1.0,
            near_zero: false,
            cos_normal: Some(1.0),
        });
    }
    let rungs: Vec<RungValue> = ladder
        .iter()
        .map(|&d| RungValue { delta: d, vector: direction_integral(kernel, frame, d, ladder[0], opts) })
        .collect();
    Ok(summarize(rungs, frame))
}

fn summarize(rungs: Vec<RungValue>, frame: &Frame) -> DirectionReport {
    let k = rungs.len();
    let last = rungs[k - 1].vector;
    let largest = rungs.iter().map(|r| norm2(r.vector)).fold(0.0, f64::max);
    let (last_change, converged) = if k >= 2 {
        let prev = rungs[k - 2].vector;
        let c = norm2([last[0] - prev[0], last[1] - prev[1]]) / norm2(last).max(f64::MIN_POSITIVE);
        (c, c <= 0.1)
    } else {
        (0.0, true)
    };
    let (extrapolated, beta) = if k >= 3 {
        richardson(&rungs[k - 3..])
    } else {
        (last, None)
    };
    let magnitude = norm2(extrapolated);
    let near_zero = magnitude <= 1e-8 * largest;
    if !converged {
        return DirectionReport {
            rungs,
            extrapolated: None,
            direction: None,
            beta,
            converged,
            last_change,
            magnitude,
            near_zero,
            cos_normal: None,
        };
    }
    let direction = if magnitude > 0.0 { Some([extrapolated[0] / magnitude, extrapolated[1] / magnitude]) } else { None };
    let nu = frame.outward();
    let cos_normal = direction.map(|d| (d[0] * nu[0] + d[1] * nu[1]).abs());
    DirectionReport { rungs, extrapolated: Some(extrapolated), direction, beta, converged, last_change, magnitude, near_zero, cos_normal }
}

/// Three-rung Richardson extrapolation with a fitted exponent; falls back to
/// the last rung when the differences do not contract.
fn richardson(r: &[RungValue]) -> ([f64; 2], Option<f64>) {
    let (v1, v2, v3) = (r[0].vector, r[1].vector, r[2].vector);
    let d12 = norm2([v1[0] - v2[0], v1[1] - v2[1]]);
    let d23 = norm2([v2[0] - v3[0], v2[1] - v3[1]]);
    let q = r[1].delta / r[2].delta;
    let q0 = r[0].delta / r[1].delta;
    if d23 <= 1e-12 * norm2(v3) || d12 <= d23 || (q / q0 - 1.0).abs() > 1e-6 {
        return (v3, None);
    }
    let beta = (d12 / d23).ln() / q.ln();
    let f = q.powf(beta) - 1.0;
    ([v3[0] + (v3[0] - v2[0]) / f, v3[1] + (v3[1] - v2[1]) / f], Some(beta))
}

#[derive(Debug, Clone, Serialize)]
pub struct ExponentFit {
    pub deltas: Vec<f64>,
    pub integrals: Vec<f64>,
    pub slope: f64,
    pub predicted: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LemmaOptions {
    /// Fine-grid cells per smallest `δ`.
    pub cells_per_delta: usize,
    pub refinement: usize,
}

impl Default for LemmaOptions {
    fn default() -> Self {
        Self { cells_per_delta: 16, refinement: 4 }
    }
}

/// `I_r(δ) = ∫∫_{B⁺_δ × B⁺_δ} |x - y|^r ||x - x₀| - |y - x₀||` on one fixed
/// fine grid for the whole ladder, and the least-squares slope of
/// `log I_r` against `log δ`.
pub fn lemma_integral_exponent(dim: usize, r: f64, ladder: &[f64], opts: &LemmaOptions) -> Result<ExponentFit, BoundaryError> {
    if !(1..=2).contains(&dim) {
        return Err(BoundaryError::Dimension(format!("dimension {dim}")));
    }
    let min = -1.0 - dim as f64;
    if !(r > min) {
        return Err(BoundaryError::Exponent { r, min });
    }
    check_ladder(ladder)?;
    if ladder.len() < 3 {
        return Err(BoundaryError::TooFewRungs { needed: 3, got: ladder.len() });
    }
    let h = ladder[ladder.len() - 1] / opts.cells_per_delta.max(4) as f64;
    let integrals: Vec<f64> = ladder.iter().map(|&d| lemma_integral(dim, r, d, h, opts.refinement.max(1))).collect();
    let xs: Vec<f64> = ladder.iter().map(|d| d.ln()).collect();
    let ys: Vec<f64> = integrals.iter().map(|v| v.ln()).collect();
    let k = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / k, ys.iter().sum::<f64>() / k);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    Ok(ExponentFit { deltas: ladder.to_vec(), integrals, slope: sxy / sxx, predicted: 1.0 + r + 2.0 * dim as f64 })
}

/// One rung of [`lemma_integral_exponent`] on cells of width `h`.
pub fn lemma_integral(dim: usize, r: f64, delta: f64, h: f64, m: usize) -> f64 {
    let rc = (delta / h).ceil() as i64 + 1;
    let subs: Vec<[f64; 2]> = if dim == 1 {
        (0..m).map(|b| [(b as f64 + 0.5) / m as f64 - 0.5, 0.0]).collect()
    } else {
        (0..m)
            .flat_map(|a| (0..m).map(move |b| [(a as f64 + 0.5) / m as f64 - 0.5, (b as f64 + 0.5) / m as f64 - 0.5]))
            .collect()
    };
    let inside = |p: [f64; 2]| p[1] >= 0.0 && p[0] * p[0] + p[1] * p[1] < delta * delta;
    struct Cell {
        c: [f64; 2],
        w: f64,
        rad: f64,
    }
    let mut cells = Vec::new();
    let t_range = if dim == 1 { 0..1 } else { -rc..rc };
    for i in t_range {
        for j in 0..rc {
            let c = if dim == 1 { [(j as f64 + 0.5) * h, 0.0] } else { [(i as f64 + 0.5) * h, (j as f64 + 0.5) * h] };
            let c = if dim == 1 { [0.0, c[0]] } else { c };
            let count = subs.iter().filter(|s| inside([c[0] + s[0] * h, c[1] + s[1] * h])).count();
            if count > 0 {
                let w = count as f64 / subs.len() as f64;
                cells.push(Cell { c, w, rad: (c[0] * c[0] + c[1] * c[1]).sqrt() });
            }
        }
    }
    let vol = h.powi(dim as i32);
    let near = 3.0 * h * (1.0 + 1e-9);
    let (self_moment, c_n) = if dim == 1 {
        (segment_moment(h, r + 1.0), 1.0)
    } else {
        (rect_moment([h, h], r + 1.0, Angular::One), 2.0 / PI)
    };
    let partial: Vec<f64> = (0..cells.len())
        .into_par_iter()
        .map(|i| {
            let a = &cells[i];
            let mut acc = a.w * c_n * self_moment;
            for b in &cells[i + 1..] {
                let dz2 = (a.c[0] - b.c[0]).powi(2) + (a.c[1] - b.c[1]).powi(2);
                let v = if dz2.sqrt() > near {
                    a.w * b.w * dz2.powf(0.5 * r) * (a.rad - b.rad).abs() * vol * vol
                } else {
                    let mut s = 0.0;
                    for p in &subs {
                        let x = [a.c[0] + p[0] * h, a.c[1] + p[1] * h];
                        if !inside(x) {
                            continue;
                        }
                        let rx = (x[0] * x[0] + x[1] * x[1]).sqrt();
                        for q in &subs {
                            let y = [b.c[0] + q[0] * h, b.c[1] + q[1] * h];
                            if !inside(y) {
                                continue;
                            }
                            let ry = (y[0] * y[0] + y[1] * y[1]).sqrt();
                            let d2 = (x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2);
                            s += d2.powf(0.5 * r) * (rx - ry).abs();
                        }
                    }
                    s * vol * vol / (subs.len() * subs.len()) as f64
                };
                acc += 2.0 * v;
            }
            acc
        })
        .collect();
    partial.iter().sum()
}

/// `∇u(x₀)·n` at a boundary point from one-sided second-order differences:
/// normal derivative `(-2u₁ + 3u₂ - u₃)/h`, face values `(15u₁ - 10u₂ + 3u₃)/8`
/// and linear interpolation between the two nearest columns along the face.
pub fn neumann_defect(grid: &Grid, u: &[f64], x0: &[f64], direction: &[f64]) -> Result<f64, BoundaryError> {
    let dim = grid.dim();
    if x0.len() != dim || direction.len() != dim || u.len() != grid.len() {
        return Err(BoundaryError::Dimension("x0, direction and field must match the grid".into()));
    }
    let ext = grid.extents();
    let tol = 1e-12 * grid.diameter();
    if !grid.contains(x0) {
        return Err(BoundaryError::NotOnBoundary(x0.to_vec()));
    }
    let face = (0..dim).find_map(|d| {
        if x0[d].abs() <= tol {
            Some((d, false))
        } else if (x0[d] - ext[d]).abs() <= tol {
            Some((d, true))
        } else {
            None
        }
    });
    let Some((axis, upper)) = face else {
        return Err(BoundaryError::NotOnBoundary(x0.to_vec()));
    };
    let cells = grid.cells();
    if cells[axis] < 3 {
        return Err(BoundaryError::Dimension("need three cells along the normal".into()));
    }
    let h = grid.spacing()[axis];
    let layer = |k: usize| if upper { cells[axis] - 1 - k } else { k };
    let value = |col: usize, k: usize| {
        let mut idx = [0usize; 2];
        idx[axis] = layer(k);
        if dim == 2 {
            idx[1 - axis] = col;
        }
        u[grid.index(idx[0], idx[1])]
    };
    let column = |col: usize| {
        let (u1, u2, u3) = (value(col, 0), value(col, 1), value(col, 2));
        let inward = (-2.0 * u1 + 3.0 * u2 - u3) / h;
        let face_value = (15.0 * u1 - 10.0 * u2 + 3.0 * u3) / 8.0;
        (if upper { -inward } else { inward }, face_value)
    };
    let mut grad = [0.0; 2];
    if dim == 1 {
        grad[0] = column(0).0;
    } else {
        let t = 1 - axis;
        let ht = grid.spacing()[t];
        let pos = (x0[t] / ht - 0.5).clamp(0.0, (cells[t] - 1) as f64);
        let j0 = (pos.floor() as usize).min(cells[t].saturating_sub(2));
        let w = pos - j0 as f64;
        let (a, b) = (column(j0), column(j0 + 1));
        grad[axis] = (1.0 - w) * a.0 + w * b.0;
        grad[t] = (b.1 - a.1) / ht;
    }
    Ok(grad[..dim].iter().zip(direction).map(|(g, n)| g * n).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Expr;

    #[test]
    fn cone_profile() {
        assert_eq!(cone(&[0.3, 0.0], &[0.3, 0.0], 0.2), 1.0);
        assert!((cone(&[0.4, 0.0], &[0.3, 0.0], 0.2) - 0.5).abs() < 1e-12);
        assert_eq!(cone(&[0.5, 0.1], &[0.3, 0.0], 0.2), 0.0);
    }

    #[test]
    fn cone_on_grid_is_bounded_and_lipschitz() {
        let grid = Grid::new(&[1.0, 1.0], &[40, 40]).unwrap();
        let delta = 0.2;
        let f = cone_test_function(&grid, &[0.5, 0.0], delta).unwrap();
        assert!(f.iter().all(|v| (0.0..=1.0).contains(v)));
        let h = grid.spacing()[0];
        for i in 0..40 {
            for j in 0..39 {
                let (a, b) = (f[grid.index(i, j)], f[grid.index(i, j + 1)]);
                assert!((a - b).abs() <= h / delta + 1e-12);
            }
        }
        assert!(matches!(cone_test_function(&grid, &[0.5, 0.0], 0.05), Err(BoundaryError::DeltaTooSmall { .. })));
    }

    #[test]
    fn one_dimensional_direction_is_one() {
        let k = Kernel::homogeneous(1.5, 1.0).unwrap();
        let frame = Frame::new(&[0.0], &[1.0]).unwrap();
        let rep = direction_vector(&k, &frame, &[0.1, 0.05], &DirectionOptions::default()).unwrap();
        assert_eq!(rep.direction.unwrap()[0], 1.0);
    }

    #[test]
    fn isotropic_direction_is_normal() {
        let k = Kernel::homogeneous(1.6, 1.0).unwrap();
        let frame = Frame::new(&[0.5, 0.0], &[0.0, 1.0]).unwrap();
        let ladder = [0.1, 0.05, 0.025];
        let rep = direction_vector(&k, &frame, &ladder, &DirectionOptions::default()).unwrap();
        assert!(rep.converged);
        assert!(rep.cos_normal.unwrap() >= 0.99);
        for r in &rep.rungs {
            assert!(r.vector[0].abs() <= 0.05 * r.vector[1].abs());
        }
    }

    #[test]
    fn rotated_frame_gives_rotated_direction() {
        let k = Kernel::homogeneous(1.5, 1.0).unwrap();
        let a = direction_integral(&k, &Frame::new(&[0.5, 0.0], &[0.0, 1.0]).unwrap(), 0.1, 0.1, &DirectionOptions::default());
        let b = direction_integral(&k, &Frame::new(&[0.0, 0.5], &[1.0, 0.0]).unwrap(), 0.1, 0.1, &DirectionOptions::default());
        assert!((a[1] - b[0]).abs() < 1e-10 * a[1].abs());
        assert!((a[0] - b[1]).abs() < 1e-10 * a[1].abs());
    }

    #[test]
    fn modulated_direction_matches_frozen_coefficients() {
        let g = Expr::parse("1 + 0.5*(x1 + y1) + 0.5*(x2 + y2)").unwrap();
        let k = Kernel::modulated(1.5, 1.0, g, 0.5, 4.0).unwrap();
        let frame = Frame::new(&[0.5, 0.0], &[0.0, 1.0]).unwrap();
        let frozen = Kernel::homogeneous(1.5, k.local_amplitude(&[0.5, 0.0])).unwrap();
        let ladder = [0.08, 0.04, 0.02];
        let opts = DirectionOptions::default();
        let a = direction_vector(&k, &frame, &ladder, &opts).unwrap();
        let b = direction_vector(&frozen, &frame, &ladder, &opts).unwrap();
        let (va, vb) = (a.extrapolated.unwrap(), b.extrapolated.unwrap());
        let diff = norm2([va[0] - vb[0], va[1] - vb[1]]) / norm2(vb);
        assert!(diff < 0.05, "{va:?} {vb:?}");
    }

    #[test]
    fn lemma_exponent_one_dimensional_exact() {
        // I_0(δ) = δ³/3 on the half-line
        let fit = lemma_integral_exponent(1, 0.0, &[0.2, 0.1, 0.05], &LemmaOptions::default()).unwrap();
        assert!((fit.integrals[0] - 0.2f64.powi(3) / 3.0).abs() < 1e-3 * fit.integrals[0]);
        assert!((fit.slope - 3.0).abs() < 0.01);
        assert!(lemma_integral_exponent(1, 0.0, &[0.2, 0.1], &LemmaOptions::default()).is_err());
        assert!(lemma_integral_exponent(2, -3.5, &[0.2, 0.1, 0.05], &LemmaOptions::default()).is_err());
    }

    #[test]
    fn lemma_dyadic_ratio() {
        for (dim, r) in [(2usize, -2.5), (2, 0.5), (1, -1.5)] {
            let fit = lemma_integral_exponent(dim, r, &[0.2, 0.1, 0.05], &LemmaOptions::default()).unwrap();
            let expected = 2f64.powf(1.0 + r + 2.0 * dim as f64);
            for w in fit.integrals.windows(2) {
                let ratio = w[0] / w[1];
                assert!((ratio / expected - 1.0).abs() < 0.1, "n={dim} r={r}: {ratio} vs {expected}");
            }
        }
    }

    #[test]
    fn neumann_defect_of_manufactured_fields() {
        let grid = Grid::new(&[1.0, 1.0], &[32, 32]).unwrap();
        let c = vec![0.7; grid.len()];
        assert!(neumann_defect(&grid, &c, &[0.5, 0.0], &[0.0, -1.0]).unwrap().abs() < 1e-12);
        // u = 0.3 s + s² along the inward normal, slope 0.3 at the face
        let u = grid.sample(|x| 0.3 * x[1] + x[1] * x[1] + 0.1 * x[0] * x[0]);
        let d = neumann_defect(&grid, &u, &[0.5, 0.0], &[0.0, 1.0]).unwrap();
        assert!((d - 0.3).abs() < 1e-12);
        let top = neumann_defect(&grid, &u, &[0.25, 1.0], &[0.0, 1.0]).unwrap();
        assert!((top - 2.3).abs() < 1e-12);
        let errs: Vec<f64> = [8usize, 16, 32]
            .iter()
            .map(|&n| {
                let g = Grid::new(&[1.0, 1.0], &[n, n]).unwrap();
                let u = g.sample(|x| x[1].powi(3) + 0.2 * x[1]);
                (neumann_defect(&g, &u, &[0.5, 0.0], &[0.0, 1.0]).unwrap() - 0.2).abs()
            })
            .collect();
        assert!(errs[1] < errs[0] / 3.5 && errs[2] < errs[1] / 3.5, "{errs:?}");
        assert!(matches!(neumann_defect(&grid, &u, &[0.5, 0.5], &[0.0, 1.0]), Err(BoundaryError::NotOnBoundary(_))));
    }
}
