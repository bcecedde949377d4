//! Convex-splitting time integration of `∂t c = Δμ`, `μ = θAc + ℒc + f'(c)`.
//!
//! One step solves for the mean-zero increment `w = c⁺ - c` from
//!
//! ```text
//! A⁺w/dt + P₀[θAc⁺ + ℒ_h c⁺ + φ'(c⁺) - d c] = 0
//! ```
//!
//! which is `c⁺ = c - dt A μ⁺` written on the mean-zero subspace. The
//! left-hand side is the gradient of a convex functional, so Newton with an
//! Armijo backtracking on that functional is globally convergent, and
//! iterates are kept strictly inside the potential's interval.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostics::{energy, grad_mu_sq};
use crate::elliptic::{pcg, solve_singular_spd, DENSE_LIMIT};
use crate::model::Model;
use crate::operator::{mean, project_mean_zero_mut, State};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Splitting {
    ConvexSplit,
    FullyImplicit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NewtonConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub backtrack_factor: f64,
    /// Distance kept from the interval ends; `None` means `1e-9 (b - a)`.
    pub feasibility_margin: Option<f64>,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 50, backtrack_factor: 0.5, feasibility_margin: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SchemeConfig {
    pub dt: f64,
    pub theta_reg: f64,
    pub newton: NewtonConfig,
    pub splitting: Splitting,
}

impl SchemeConfig {
    pub fn new(dt: f64) -> Self {
        Self { dt, theta_reg: 0.0, newton: NewtonConfig::default(), splitting: Splitting::ConvexSplit }
    }

    pub fn with_theta(mut self, theta_reg: f64) -> Self {
        self.theta_reg = theta_reg;
        self
    }

    pub fn margin(&self, interval: (f64, f64)) -> f64 {
        self.newton.feasibility_margin.unwrap_or(1e-9 * (interval.1 - interval.0))
    }

    /// Returns every violated constraint.
    pub fn validate(&self, interval: (f64, f64)) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.dt.is_finite() && self.dt > 0.0) {
            errs.push(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.theta_reg.is_finite() && self.theta_reg >= 0.0) {
            errs.push(format!("theta_reg must be nonnegative, got {}", self.theta_reg));
        }
        if !(self.newton.tol.is_finite() && self.newton.tol > 0.0) {
            errs.push(format!("newton.tol must be positive, got {}", self.newton.tol));
        }
        if self.newton.max_iter == 0 {
            errs.push("newton.max_iter must be at least 1".into());
        }
        if !(self.newton.backtrack_factor > 0.0 && self.newton.backtrack_factor < 1.0) {
            errs.push(format!("newton.backtrack_factor must lie in (0, 1), got {}", self.newton.backtrack_factor));
        }
        let m = self.margin(interval);
        if !(m > 0.0 && m < 0.25 * (interval.1 - interval.0)) {
            errs.push(format!("newton.feasibility_margin must lie in (0, (b - a)/4), got {m}"));
        }
        errs
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StepReport {
    pub newton_iters: usize,
    pub residual: f64,
    pub energy_before: f64,
    pub energy_after: f64,
    /// Scheme chemical potential `θAc⁺ + ℒ_h c⁺ + φ'(c⁺) - d c` (`d c⁺` when fully implicit).
    pub mu: Vec<f64>,
    pub mass_drift: f64,
    pub dt: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StepError {
    #[error("cell {index} has value {value}, outside the feasible interval")]
    Infeasible { index: usize, value: f64 },
    #[error("Newton failed after {iterations} iterations (residual {residual:e})")]
    Newton { iterations: usize, residual: f64 },
    #[error("linear solve failed in Newton iteration {0}")]
    Linear(usize),
    #[error("invalid scheme configuration: {0}")]
    Config(String),
    #[error("state has {got} cells, model has {expected}")]
    Size { expected: usize, got: usize },
    #[error("step rejected {halvings} times at t = {time}; giving up")]
    Abort { time: f64, halvings: usize },
}

struct Eval {
    /// mean-zero residual `H(w)`
    h: Vec<f64>,
    merit: f64,
    mu: Vec<f64>,
}

struct Stepper<'a> {
    model: &'a Model,
    c: &'a [f64],
    dt: f64,
    theta: f64,
    d: f64,
    implicit: bool,
    lo: f64,
    hi: f64,
}

impl Stepper<'_> {
    fn feasible(&self, cp: &[f64]) -> bool {
        cp.iter().all(|&s| s > self.lo && s < self.hi)
    }

    fn eval(&self, w: &[f64]) -> Eval {
        let m = self.model;
        let vol = m.grid.vol();
        let cp: Vec<f64> = self.c.iter().zip(w).map(|(a, b)| a + b).collect();
        let mut lc = vec![0.0; cp.len()];
        m.coupling.apply_into(&cp, &mut lc);
        let apw = m.neumann.pinv(w);
        let mut merit = 0.5 / self.dt * m.grid.inner(w, &apw) + 0.5 * m.grid.inner(&lc, &cp);
        let mut mu = lc;
        if self.theta > 0.0 {
            let ac = m.neumann.apply(&cp);
            merit += 0.5 * self.theta * m.grid.inner(&ac, &cp);
            for (x, a) in mu.iter_mut().zip(ac) {
                *x += self.theta * a;
            }
        }
        let mut bulk = 0.0;
        for i in 0..cp.len() {
            let phi = m.potential.phi_interior(cp[i]);
            bulk += phi.value;
            let concave = if self.implicit { cp[i] } else { self.c[i] };
            mu[i] += phi.first - self.d * concave;
        }
        merit += bulk * vol;
        merit -= if self.implicit {
            0.5 * self.d * m.grid.inner(&cp, &cp)
        } else {
            self.d * m.grid.inner(self.c, w)
        };
        let mut h: Vec<f64> = mu.clone();
        project_mean_zero_mut(&mut h);
        for (x, a) in h.iter_mut().zip(&apw) {
            *x += a / self.dt;
        }
        Eval { h, merit, mu }
    }

    /// Solves `J δ = -H` on mean-zero fields.
    fn newton_direction(&self, w: &[f64], h: &[f64]) -> Option<Vec<f64>> {
        let m = self.model;
        let n = w.len();
        let curv: Vec<f64> = self
            .c
            .iter()
            .zip(w)
            .map(|(a, b)| {
                let s = m.potential.clamp_interior(a + b);
                m.potential.phi_interior(s).second - if self.implicit { self.d } else { 0.0 }
            })
            .collect();
        let rhs: Vec<f64> = h.iter().map(|v| -v).collect();
        if m.grid.dim() == 1 && n <= DENSE_LIMIT {
            let base = m.dense_base(self.dt, self.theta);
            let mut j: DMatrix<f64> = (*base).clone();
            // P₀ diag(q) P₀
            let inv = 1.0 / n as f64;
            let qsum: f64 = curv.iter().sum::<f64>() * inv * inv;
            for c in 0..n {
                for r in 0..n {
                    j[(r, c)] += qsum - (curv[r] + curv[c]) * inv;
                }
                j[(c, c)] += curv[c];
            }
            if self.implicit {
                let gamma = j.trace() / (n * n) as f64;
                j.add_scalar_mut(gamma);
                let mut x: Vec<f64> = j.lu().solve(&DVector::from_vec(rhs))?.iter().copied().collect();
                project_mean_zero_mut(&mut x);
                Some(x)
            } else {
                solve_singular_spd(j, &rhs)
            }
        } else {
            let mut diag = m.coupling.operator_diagonal();
            let pd = m.neumann.pinv_diagonal();
            let ad = m.neumann.diagonal();
            for i in 0..n {
                diag[i] += pd[i] / self.dt + self.theta * ad[i] + curv[i];
            }
            let apply = |v: &[f64], out: &mut [f64]| {
                m.coupling.apply_into(v, out);
                let p = m.neumann.pinv(v);
                let a = if self.theta > 0.0 { m.neumann.apply(v) } else { vec![0.0; n] };
                let mv = mean(v);
                let mut qv: Vec<f64> = (0..n).map(|i| curv[i] * (v[i] - mv)).collect();
                project_mean_zero_mut(&mut qv);
                for i in 0..n {
                    out[i] += p[i] / self.dt + self.theta * a[i] + qv[i];
                }
            };
            let out = pcg(apply, &diag, &rhs, 1e-12, 10 * n);
            if out.converged || out.residual < 1e-8 {
                Some(out.x)
            } else {
                None
            }
        }
    }
}

/// Advances one step of size `cfg.dt`.
pub fn step(model: &Model, state: &State, cfg: &SchemeConfig) -> Result<(State, StepReport), StepError> {
    let interval = model.potential.interval();
    let errs = cfg.validate(interval);
    if !errs.is_empty() {
        return Err(StepError::Config(errs.join("; ")));
    }
    if state.len() != model.len() {
        return Err(StepError::Size { expected: model.len(), got: state.len() });
    }
    let margin = cfg.margin(interval);
    let st = Stepper {
        model,
        c: &state.c,
        dt: cfg.dt,
        theta: cfg.theta_reg,
        d: model.potential.split_constant(),
        implicit: cfg.splitting == Splitting::FullyImplicit,
        lo: interval.0 + margin,
        hi: interval.1 - margin,
    };
    if let Some(index) = state.c.iter().position(|&s| !(s > st.lo && s < st.hi)) {
        return Err(StepError::Infeasible { index, value: state.c[index] });
    }
    let n = state.len();
    let grid = &model.grid;
    let norm = |v: &[f64]| grid.inner(v, v).sqrt();

    let mut w = vec![0.0; n];
    let mut ev = st.eval(&w);
    let target = cfg.newton.tol * (1.0 + norm(&ev.h));
    let mut res = norm(&ev.h);
    let mut iters = 0;
    while res > target {
        if iters >= cfg.newton.max_iter {
            return Err(StepError::Newton { iterations: iters, residual: res });
        }
        iters += 1;
        let delta = st.newton_direction(&w, &ev.h).ok_or(StepError::Linear(iters))?;
        let slope = grid.inner(&ev.h, &delta);
        let mut s = 1.0;
        let accepted = loop {
            let trial: Vec<f64> = w.iter().zip(&delta).map(|(a, b)| a + s * b).collect();
            let cp: Vec<f64> = state.c.iter().zip(&trial).map(|(a, b)| a + b).collect();
            if st.feasible(&cp) {
                let te = st.eval(&trial);
                let slack = 1e-13 * (1.0 + ev.merit.abs());
                if te.merit <= ev.merit + 1e-4 * s * slope.min(0.0) + slack {
                    break Some((trial, te, s));
                }
            }
            s *= cfg.newton.backtrack_factor;
            if s < 1e-14 {
                break None;
            }
        };
        let Some((trial, te, s)) = accepted else {
            if res <= 1e3 * target {
                break;
            }
            return Err(StepError::Newton { iterations: iters, residual: res });
        };
        let step_size = s * delta.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        w = trial;
        ev = te;
        res = norm(&ev.h);
        // stagnation at round-off level
        if step_size < 1e-15 * (1.0 + state.max().abs()) && res <= 1e3 * target {
            break;
        }
    }
    project_mean_zero_mut(&mut w);
    let c_new: Vec<f64> = state.c.iter().zip(&w).map(|(a, b)| a + b).collect();
    if let Some(index) = c_new.iter().position(|&s| !(s > interval.0 && s < interval.1)) {
        return Err(StepError::Infeasible { index, value: c_new[index] });
    }
    let new_mean = mean(&c_new);
    let e_before = energy(model, &state.c, cfg.theta_reg).total;
    let e_after = energy(model, &c_new, cfg.theta_reg).total;
    let report = StepReport {
        newton_iters: iters,
        residual: res,
        energy_before: e_before,
        energy_after: e_after,
        mu: ev.mu,
        mass_drift: (new_mean - state.mean).abs(),
        dt: cfg.dt,
    };
    let next = State { c: c_new, mean: state.mean, time: state.time + cfg.dt };
    Ok((next, report))
}

/// Diagnostics row written every `sample_every` nominal steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Sample {
    pub t: f64,
    pub mass: f64,
    pub energy: f64,
    pub dissipation_cum: f64,
    pub max_c: f64,
    pub min_c: f64,
    pub newton_iters: usize,
    pub grad_mu_sq: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RunConfig {
    pub t_final: f64,
    pub sample_every: usize,
    pub max_halvings: usize,
}

impl RunConfig {
    pub fn new(t_final: f64) -> Self {
        Self { t_final, sample_every: 1, max_halvings: 20 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    /// Energy after every accepted step, starting with the initial energy.
    pub step_energies: Vec<f64>,
    /// Largest `|m(c) - m(c₀)|` over all accepted steps.
    pub max_mass_drift: f64,
    pub steps: usize,
    pub halvings: usize,
    pub final_state: State,
}

impl Trajectory {
    pub fn initial_energy(&self) -> f64 {
        self.step_energies[0]
    }

    pub fn final_energy(&self) -> f64 {
        *self.step_energies.last().unwrap()
    }

    pub fn dissipation(&self) -> f64 {
        self.samples.last().map(|s| s.dissipation_cum).unwrap_or(0.0)
    }
}

/// Marches to `run.t_final`, halving a rejected step up to `run.max_halvings`
/// times. Dissipation `∫‖∇μ‖²` is accumulated by the trapezoid rule over
/// accepted steps. `sink` sees every sample with its state.
pub fn run(
    model: &Model,
    initial: &State,
    cfg: &SchemeConfig,
    run: &RunConfig,
    mut sink: impl FnMut(&Sample, &State),
) -> Result<Trajectory, StepError> {
    let e0 = energy(model, &initial.c, cfg.theta_reg).total;
    if !e0.is_finite() {
        let index = initial.c.iter().position(|&s| !model.potential.admits(s)).unwrap_or(0);
        return Err(StepError::Infeasible { index, value: initial.c[index] });
    }
    let mut state = initial.clone();
    let mut g_prev = grad_mu_sq(model, &state.c, cfg.theta_reg);
    let mut dissipation = 0.0;
    let make_sample = |state: &State, e: f64, d: f64, it: usize, g: f64| Sample {
        t: state.time,
        mass: mean(&state.c),
        energy: e,
        dissipation_cum: d,
        max_c: state.max(),
        min_c: state.min(),
        newton_iters: it,
        grad_mu_sq: g,
    };
    let first = make_sample(&state, e0, 0.0, 0, g_prev);
    sink(&first, &state);
    let mut samples = vec![first];
    let mut step_energies = vec![e0];
    let mut max_drift: f64 = 0.0;
    let (mut steps, mut halvings) = (0usize, 0usize);
    let start = initial.time;
    let nominal = if run.t_final > 0.0 { ((run.t_final / cfg.dt) - 1e-9).ceil().max(1.0) as usize } else { 0 };
    for k in 0..nominal {
        let target = if k + 1 == nominal { start + run.t_final } else { start + (k + 1) as f64 * cfg.dt };
        let mut dt = cfg.dt;
        let mut local_halvings = 0;
        let mut iters = 0;
        while state.time < target - 1e-12 * cfg.dt {
            let h = dt.min(target - state.time);
            let sub = SchemeConfig { dt: h, ..*cfg };
            match step(model, &state, &sub) {
                Ok((next, report)) => {
                    let g = grad_mu_sq(model, &next.c, cfg.theta_reg);
                    dissipation += 0.5 * h * (g_prev + g);
                    g_prev = g;
                    max_drift = max_drift.max((mean(&next.c) - initial.mean).abs());
                    step_energies.push(report.energy_after);
                    iters += report.newton_iters;
                    state = next;
                    steps += 1;
                }
                Err(StepError::Newton { .. }) | Err(StepError::Linear(_)) | Err(StepError::Infeasible { .. }) => {
                    local_halvings += 1;
                    halvings += 1;
                    if local_halvings > run.max_halvings {
                        return Err(StepError::Abort { time: state.time, halvings: local_halvings });
                    }
                    dt *= 0.5;
                }
                Err(e) => return Err(e),
            }
        }
        state.time = target;
        if (k + 1) % run.sample_every.max(1) == 0 || k + 1 == nominal {
            let s = make_sample(&state, *step_energies.last().unwrap(), dissipation, iters, g_prev);
            sink(&s, &state);
            samples.push(s);
        }
    }
    Ok(Trajectory { samples, step_energies, max_mass_drift: max_drift, steps, halvings, final_state: state })
}

/// Gaussian smoothing `exp(-ε²A/2) c₀` with `ε = θ^{1/4} diam(Ω)/10`,
/// clamped below by the cell size; the mean is restored exactly.
pub fn mollify_initial(model: &Model, c0: &State, theta_reg: f64) -> State {
    if theta_reg <= 0.0 {
        return c0.clone();
    }
    let eps = (theta_reg.powf(0.25) * model.grid.diameter() / 10.0).max(model.grid.max_spacing());
    let mut c = model.neumann.heat(&c0.c, 0.5 * eps * eps);
    let shift = c0.mean - mean(&c);
    c.iter_mut().for_each(|v| *v += shift);
    State { c, mean: c0.mean, time: c0.time }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::Kernel;
    use crate::operator::Grid;
    use crate::potential::Potential;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model(cells: &[usize], amp: f64) -> Model {
        let ext = vec![1.0; cells.len()];
        let grid = Grid::new(&ext, cells).unwrap();
        Model::new(grid, Kernel::homogeneous(1.5, amp).unwrap(), Potential::logarithmic(1.0, 2.0).unwrap(), 2).unwrap()
    }

    fn noise(n: usize, amp: f64, seed: u64) -> State {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut c: Vec<f64> = (0..n).map(|_| amp * (2.0 * rng.random::<f64>() - 1.0)).collect();
        project_mean_zero_mut(&mut c);
        State::new(c, 0.0).unwrap()
    }

    #[test]
    fn constant_state_is_steady() {
        let m = model(&[16], 1.0);
        let s = State::constant(16, 0.3);
        let (next, rep) = step(&m, &s, &SchemeConfig::new(1e-3)).unwrap();
        assert_eq!(next.c, s.c);
        let spread = rep.mu.iter().fold(0.0f64, |a, v| a.max((v - rep.mu[0]).abs()));
        assert!(spread < 1e-12);
    }

    #[test]
    fn mass_and_energy_over_many_steps() {
        let m = model(&[32], 1e-2);
        let mut s = noise(32, 0.05, 1);
        let cfg = SchemeConfig::new(1e-3);
        for _ in 0..200 {
            let (next, rep) = step(&m, &s, &cfg).unwrap();
            assert!((mean(&next.c) - mean(&s.c)).abs() <= 1e-13);
            assert!(rep.energy_after <= rep.energy_before + 1e-10);
            s = next;
        }
    }

    #[test]
    fn two_dimensional_step_conserves_mass_and_decreases_energy() {
        let m = model(&[8, 8], 1e-2);
        let mut s = noise(64, 0.1, 2);
        let cfg = SchemeConfig::new(1e-3).with_theta(1e-3);
        for _ in 0..5 {
            let (next, rep) = step(&m, &s, &cfg).unwrap();
            assert!(rep.mass_drift <= 1e-13);
            assert!(rep.energy_after <= rep.energy_before + 1e-10);
            s = next;
        }
    }

    #[test]
    fn fully_implicit_step_runs() {
        let m = model(&[16], 0.1);
        let s = noise(16, 0.1, 3);
        let mut cfg = SchemeConfig::new(1e-4);
        cfg.splitting = Splitting::FullyImplicit;
        let (next, rep) = step(&m, &s, &cfg).unwrap();
        assert!(rep.mass_drift <= 1e-13);
        assert!(next.c != s.c);
    }

    #[test]
    fn infeasible_input_and_bad_config() {
        let m = model(&[4], 1.0);
        let s = State::new(vec![0.0, 0.0, 1.0, -1.0], 0.0).unwrap();
        assert!(matches!(step(&m, &s, &SchemeConfig::new(1e-3)), Err(StepError::Infeasible { index: 2, .. })));
        let ok = State::constant(4, 0.0);
        assert!(matches!(step(&m, &ok, &SchemeConfig::new(-1.0)), Err(StepError::Config(_))));
        assert!(run(&m, &s, &SchemeConfig::new(1e-3), &RunConfig::new(1.0), |_, _| {}).is_err());
    }

    #[test]
    fn zero_final_time_is_trivial() {
        let m = model(&[8], 1.0);
        let s = noise(8, 0.1, 4);
        let t = run(&m, &s, &SchemeConfig::new(1e-3), &RunConfig::new(0.0), |_, _| {}).unwrap();
        assert_eq!(t.samples.len(), 1);
        assert_eq!(t.dissipation(), 0.0);
        assert_eq!(t.final_state, s);
    }

    #[test]
    fn run_lands_on_final_time_and_dissipates() {
        let m = model(&[16], 1e-2);
        let s = noise(16, 0.05, 5);
        let mut seen = 0;
        let t = run(&m, &s, &SchemeConfig::new(3e-3), &RunConfig { t_final: 0.01, sample_every: 2, max_halvings: 20 }, |_, _| seen += 1)
            .unwrap();
        assert!((t.final_state.time - 0.01).abs() < 1e-15);
        assert_eq!(t.steps, 4);
        assert_eq!(seen, t.samples.len());
        assert!(t.dissipation() > 0.0);
        assert!(t.step_energies.windows(2).all(|w| w[1] <= w[0] + 1e-10));
    }

    #[test]
    fn mollifier_properties() {
        let m = model(&[64], 1.0);
        let s = noise(64, 0.5, 6);
        assert_eq!(mollify_initial(&m, &s, 0.0), s);
        let mut last = f64::INFINITY;
        for theta in [1.0, 0.25, 1.0 / 16.0] {
            let c = mollify_initial(&m, &s, theta);
            assert!((mean(&c.c) - s.mean).abs() < 1e-14);
            let h1 = m.grid.inner(&c.c, &c.c) + m.neumann.gradient_sq(&c.c);
            let v = theta * h1;
            assert!(v < last);
            last = v;
        }
    }
}
