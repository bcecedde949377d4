//! Stationary problems `(θA + ℒ_h) u = g` on mean-zero fields, where
//! `A = -Δ_{N,h}`. `θ = 0` is the purely nonlocal problem.

use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

use crate::operator::{mean, project_mean_zero_mut, CouplingMatrix, NeumannLaplacian, NormContext};

/// Dense direct solves are used in 1D up to this many cells.
pub const DENSE_LIMIT: usize = 1024;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EllipticError {
    #[error("right-hand side is not mean-zero (mean {mean}, norm {norm})")]
    NotMeanZero { mean: f64, norm: f64 },
    #[error("theta_reg must be nonnegative and finite, got {0}")]
    Theta(f64),
    #[error("field has {got} entries, expected {expected}")]
    Size { expected: usize, got: usize },
    #[error("solver stopped after {iterations} iterations with relative residual {residual:e}")]
    NoConvergence { iterations: usize, residual: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Cholesky,
    ConjugateGradient,
}

#[derive(Debug, Clone, Serialize)]
pub struct EllipticSolution {
    pub u: Vec<f64>,
    /// `‖(θA + ℒ_h)u - g‖ / ‖g‖`.
    pub residual: f64,
    pub iterations: usize,
    pub method: Method,
}

#[derive(Debug, Clone)]
pub struct EllipticProblem<'a> {
    coupling: &'a CouplingMatrix,
    neumann: &'a NeumannLaplacian,
    theta_reg: f64,
    g: Vec<f64>,
    tol: f64,
}

fn rms(v: &[f64]) -> f64 {
    (v.iter().map(|x| x * x).sum::<f64>() / v.len().max(1) as f64).sqrt()
}

impl<'a> EllipticProblem<'a> {
    pub fn new(
        coupling: &'a CouplingMatrix,
        neumann: &'a NeumannLaplacian,
        theta_reg: f64,
        g: Vec<f64>,
        tol: f64,
    ) -> Result<Self, EllipticError> {
        if !(theta_reg.is_finite() && theta_reg >= 0.0) {
            return Err(EllipticError::Theta(theta_reg));
        }
        if g.len() != coupling.len() || neumann.grid().len() != coupling.len() {
            return Err(EllipticError::Size { expected: coupling.len(), got: g.len() });
        }
        let (m, norm) = (mean(&g), rms(&g));
        if m.abs() > 1e-10 * norm {
            return Err(EllipticError::NotMeanZero { mean: m, norm });
        }
        Ok(Self { coupling, neumann, theta_reg, g, tol })
    }

    pub fn theta_reg(&self) -> f64 {
        self.theta_reg
    }

    pub fn rhs(&self) -> &[f64] {
        &self.g
    }

    /// `(θA + ℒ_h) u`.
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; u.len()];
        self.coupling.apply_into(u, &mut out);
        if self.theta_reg > 0.0 {
            for (o, a) in out.iter_mut().zip(self.neumann.apply(u)) {
                *o += self.theta_reg * a;
            }
        }
        out
    }

    /// `½(θ‖∇v‖² + ℰ_h(v,v)) - (g, v)_h`, minimized by the solution.
    pub fn objective(&self, v: &[f64]) -> f64 {
        let grid = self.neumann.grid();
        0.5 * (self.theta_reg * self.neumann.gradient_sq(v) + self.coupling.energy(v)) - grid.inner(&self.g, v)
    }

    pub fn solve(&self) -> Result<EllipticSolution, EllipticError> {
        let n = self.g.len();
        let gnorm = rms(&self.g);
        if gnorm == 0.0 {
            return Ok(EllipticSolution { u: vec![0.0; n], residual: 0.0, iterations: 0, method: Method::Cholesky });
        }
        let grid = self.neumann.grid();
        let (u, iterations, method) = if grid.dim() == 1 && n <= DENSE_LIMIT {
            let mut m = self.coupling.dense_operator();
            if self.theta_reg > 0.0 {
                m += self.neumann.dense() * self.theta_reg;
            }
            let u = solve_singular_spd(m, &self.g).ok_or(EllipticError::NoConvergence { iterations: 0, residual: f64::NAN })?;
            (u, 1, Method::Cholesky)
        } else {
            let mut diag = self.coupling.operator_diagonal();
            if self.theta_reg > 0.0 {
                for (d, a) in diag.iter_mut().zip(self.neumann.diagonal()) {
                    *d += self.theta_reg * a;
                }
            }
            let out = pcg(|v, out| out.copy_from_slice(&self.apply(v)), &diag, &self.g, 1e-12_f64.min(self.tol), 10 * n);
            (out.x, out.iterations, Method::ConjugateGradient)
        };
        let r: Vec<f64> = self.apply(&u).iter().zip(&self.g).map(|(a, b)| a - b).collect();
        let residual = rms(&r) / gnorm;
        if residual > self.tol {
            return Err(EllipticError::NoConvergence { iterations, residual });
        }
        Ok(EllipticSolution { u, residual, iterations, method })
    }
}

/// Mean-zero solution of `M u = g` for symmetric `M` that is positive definite
/// on mean-zero fields and annihilates constants. Returns `None` if the
/// shifted matrix is not positive definite.
pub fn solve_singular_spd(mut m: DMatrix<f64>, g: &[f64]) -> Option<Vec<f64>> {
    let n = g.len();
    let gamma = m.trace() / (n * n) as f64;
    m.add_scalar_mut(gamma);
    let chol = m.cholesky()?;
    let mut rhs = nalgebra::DVector::from_column_slice(g);
    let gm = mean(g);
    rhs.add_scalar_mut(-gm);
    let x = chol.solve(&rhs);
    let mut u: Vec<f64> = x.iter().copied().collect();
    project_mean_zero_mut(&mut u);
    Some(u)
}

#[derive(Debug, Clone)]
pub struct PcgOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Final `‖r‖/‖b‖`.
    pub residual: f64,
    pub converged: bool,
}

/// Conjugate gradients on mean-zero fields with a Jacobi preconditioner.
/// `apply` must be symmetric and map mean-zero fields to mean-zero fields.
pub fn pcg(apply: impl Fn(&[f64], &mut [f64]), diag: &[f64], b: &[f64], tol: f64, max_iter: usize) -> PcgOutcome {
    let n = b.len();
    let mut r = b.to_vec();
    project_mean_zero_mut(&mut r);
    let bnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return PcgOutcome { x, iterations: 0, residual: 0.0, converged: true };
    }
    let precond = |r: &[f64], z: &mut [f64]| {
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        project_mean_zero_mut(z);
    };
    let mut z = vec![0.0; n];
    precond(&r, &mut z);
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let mut ap = vec![0.0; n];
    let mut residual = 1.0;
    for it in 1..=max_iter {
        apply(&p, &mut ap);
        project_mean_zero_mut(&mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if !(pap > 0.0) {
            return PcgOutcome { x, iterations: it, residual, converged: false };
        }
        let a = rz / pap;
        for i in 0..n {
            x[i] += a * p[i];
            r[i] -= a * ap[i];
        }
        residual = r.iter().map(|v| v * v).sum::<f64>().sqrt() / bnorm;
        if residual <= tol {
            project_mean_zero_mut(&mut x);
            return PcgOutcome { x, iterations: it, residual, converged: true };
        }
        precond(&r, &mut z);
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    project_mean_zero_mut(&mut x);
    PcgOutcome { x, iterations: max_iter, residual, converged: false }
}

pub fn solve_nonlocal(
    coupling: &CouplingMatrix,
    neumann: &NeumannLaplacian,
    g: Vec<f64>,
    tol: f64,
) -> Result<EllipticSolution, EllipticError> {
    EllipticProblem::new(coupling, neumann, 0.0, g, tol)?.solve()
}

pub fn solve_regularized(
    coupling: &CouplingMatrix,
    neumann: &NeumannLaplacian,
    theta_reg: f64,
    g: Vec<f64>,
    tol: f64,
) -> Result<EllipticSolution, EllipticError> {
    if theta_reg <= 0.0 {
        return Err(EllipticError::Theta(theta_reg));
    }
    EllipticProblem::new(coupling, neumann, theta_reg, g, tol)?.solve()
}

/// `(θ‖∇u‖² + ‖u‖²_{H^{α/2}}) / ‖g‖²`.
pub fn estimate_ratio(norms: &NormContext, theta_reg: f64, u: &[f64], g: &[f64]) -> f64 {
    (theta_reg * norms.h1_seminorm_sq(u) + norms.fractional_sq(u)) / norms.grid.inner(g, g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::Kernel;
    use crate::operator::{assemble_coupling, project_mean_zero, Grid};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(grid: &Grid) -> (CouplingMatrix, NeumannLaplacian) {
        let k = Kernel::homogeneous(1.5, 1.0).unwrap();
        (assemble_coupling(grid, &k, 2).unwrap(), NeumannLaplacian::new(grid))
    }

    fn random_mean_zero(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        project_mean_zero(&(0..n).map(|_| rng.random::<f64>() - 0.5).collect::<Vec<_>>())
    }

    #[test]
    fn zero_rhs() {
        let grid = Grid::new(&[1.0], &[16]).unwrap();
        let (k, a) = setup(&grid);
        assert_eq!(solve_nonlocal(&k, &a, vec![0.0; 16], 1e-10).unwrap().u, vec![0.0; 16]);
        assert_eq!(solve_regularized(&k, &a, 0.5, vec![0.0; 16], 1e-10).unwrap().u, vec![0.0; 16]);
    }

    #[test]
    fn weak_form_holds_against_random_tests() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for grid in [Grid::new(&[1.0], &[48]).unwrap(), Grid::new(&[1.0, 1.0], &[8, 8]).unwrap()] {
            let (k, a) = setup(&grid);
            let g = random_mean_zero(grid.len(), &mut rng);
            let sol = solve_nonlocal(&k, &a, g.clone(), 1e-10).unwrap();
            assert!(mean(&sol.u).abs() < 1e-12);
            for _ in 0..20 {
                let psi = random_mean_zero(grid.len(), &mut rng);
                let lhs = k.bilinear(&sol.u, &psi).unwrap();
                let rhs = grid.inner(&g, &psi);
                assert!((lhs - rhs).abs() <= 1e-8 * rhs.abs().max(1e-3), "{lhs} {rhs}");
            }
            // forward operator recovers g
            let back = k.apply(&sol.u).unwrap();
            let err = back.iter().zip(&g).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            assert!(err <= 1e-10 * g.iter().fold(0.0f64, |m, v| m.max(v.abs())));
        }
    }

    #[test]
    fn rejects_bad_input() {
        let grid = Grid::new(&[1.0], &[8]).unwrap();
        let (k, a) = setup(&grid);
        assert!(matches!(solve_nonlocal(&k, &a, vec![1.0; 8], 1e-10), Err(EllipticError::NotMeanZero { .. })));
        assert!(matches!(solve_regularized(&k, &a, 0.0, vec![0.0; 8], 1e-10), Err(EllipticError::Theta(_))));
        assert!(EllipticProblem::new(&k, &a, -1.0, vec![0.0; 8], 1e-10).is_err());
    }

    #[test]
    fn solution_minimizes_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let grid = Grid::new(&[1.0], &[32]).unwrap();
        let (k, a) = setup(&grid);
        let g = random_mean_zero(32, &mut rng);
        let p = EllipticProblem::new(&k, &a, 0.1, g, 1e-10).unwrap();
        let u = p.solve().unwrap().u;
        let base = p.objective(&u);
        for _ in 0..10 {
            let d = random_mean_zero(32, &mut rng);
            let v: Vec<f64> = u.iter().zip(&d).map(|(x, y)| x + 1e-3 * y).collect();
            assert!(p.objective(&v) >= base);
        }
    }

    #[test]
    fn nonlocal_energy_grows_as_theta_decreases() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let grid = Grid::new(&[1.0], &[32]).unwrap();
        let (k, a) = setup(&grid);
        let g = random_mean_zero(32, &mut rng);
        let mut last = 0.0;
        for theta in [1.0, 0.25, 0.0625, 0.0] {
            let u = EllipticProblem::new(&k, &a, theta, g.clone(), 1e-10).unwrap().solve().unwrap().u;
            let e = k.energy(&u);
            assert!(e >= last);
            last = e;
        }
    }

    #[test]
    fn cg_agrees_with_cholesky() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let grid = Grid::new(&[1.0], &[40]).unwrap();
        let (k, a) = setup(&grid);
        let g = random_mean_zero(40, &mut rng);
        let direct = solve_regularized(&k, &a, 0.01, g.clone(), 1e-10).unwrap().u;
        let p = EllipticProblem::new(&k, &a, 0.01, g.clone(), 1e-10).unwrap();
        let mut diag = k.operator_diagonal();
        for (d, x) in diag.iter_mut().zip(a.diagonal()) {
            *d += 0.01 * x;
        }
        let out = pcg(|v, o| o.copy_from_slice(&p.apply(v)), &diag, &g, 1e-13, 400);
        assert!(out.converged);
        for (x, y) in out.x.iter().zip(&direct) {
            assert!((x - y).abs() < 1e-9);
        }
    }
}
