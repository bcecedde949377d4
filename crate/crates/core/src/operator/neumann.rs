use std::f64::consts::PI;
use std::sync::OnceLock;

use nalgebra::DMatrix;
use thiserror::Error;

use super::grid::{mean, Grid};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NeumannError {
    #[error("right-hand side has mean {mean}, expected zero (norm {norm})")]
    NotMeanZero { mean: f64, norm: f64 },
    #[error("field has {got} entries, expected {expected}")]
    Size { expected: usize, got: usize },
}

/// Orthonormal eigenbasis of the 1D Neumann stencil,
/// `v_k(i) = s_k cos(πk(i + ½)/n)` with eigenvalue `(2 - 2cos(πk/n))/h²`.
#[derive(Debug)]
struct AxisBasis {
    n: usize,
    modes: Vec<f64>,
    lambda: Vec<f64>,
}

impl AxisBasis {
    fn new(n: usize, h: f64) -> Self {
        let mut modes = vec![0.0; n * n];
        for k in 0..n {
            let s = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
            for i in 0..n {
                modes[k * n + i] = s * (PI * k as f64 * (i as f64 + 0.5) / n as f64).cos();
            }
        }
        let lambda = (0..n).map(|k| (2.0 - 2.0 * (PI * k as f64 / n as f64).cos()) / (h * h)).collect();
        Self { n, modes, lambda }
    }

    #[inline]
    fn mode(&self, k: usize) -> &[f64] {
        &self.modes[k * self.n..(k + 1) * self.n]
    }
}

/// `A = -Δ_{N,h}`: the cell-centred five-point (three-point in 1D) stencil
/// with zero-flux ghost cells.
#[derive(Debug)]
pub struct NeumannLaplacian {
    grid: Grid,
    basis: OnceLock<Vec<AxisBasis>>,
}

impl Clone for NeumannLaplacian {
    fn clone(&self) -> Self {
        Self::new(&self.grid)
    }
}

impl NeumannLaplacian {
    pub fn new(grid: &Grid) -> Self {
        Self { grid: grid.clone(), basis: OnceLock::new() }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    fn basis(&self) -> &[AxisBasis] {
        self.basis.get_or_init(|| {
            (0..self.grid.dim()).map(|d| AxisBasis::new(self.grid.cells()[d], self.grid.spacing()[d])).collect()
        })
    }

    fn check(&self, u: &[f64]) -> Result<(), NeumannError> {
        if u.len() == self.grid.len() {
            Ok(())
        } else {
            Err(NeumannError::Size { expected: self.grid.len(), got: u.len() })
        }
    }

    /// `A u`.
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; u.len()];
        self.apply_into(u, &mut out);
        out
    }

    pub fn apply_into(&self, u: &[f64], out: &mut [f64]) {
        assert_eq!(u.len(), self.grid.len());
        out.iter_mut().for_each(|v| *v = 0.0);
        self.for_each_face(|i, j, w| {
            let flux = w * (u[i] - u[j]);
            out[i] += flux;
            out[j] -= flux;
        });
    }

    /// Calls `f(i, j, 1/h_d²)` for every interior face between cells `i < j`.
    fn for_each_face(&self, mut f: impl FnMut(usize, usize, f64)) {
        let g = &self.grid;
        let cells = g.cells();
        for d in 0..g.dim() {
            let w = 1.0 / (g.spacing()[d] * g.spacing()[d]);
            for i in 0..g.len() {
                let c = g.coords(i);
                if c[d] + 1 < cells[d] {
                    let mut cn = c;
                    cn[d] += 1;
                    f(i, g.index(cn[0], cn[1]), w);
                }
            }
        }
    }

    /// Diagonal of `A`.
    pub fn diagonal(&self) -> Vec<f64> {
        let mut diag = vec![0.0; self.grid.len()];
        self.for_each_face(|i, j, w| {
            diag[i] += w;
            diag[j] += w;
        });
        diag
    }

    /// Dense matrix of `A`.
    pub fn dense(&self) -> DMatrix<f64> {
        let n = self.grid.len();
        let mut m = DMatrix::zeros(n, n);
        self.for_each_face(|i, j, w| {
            m[(i, i)] += w;
            m[(j, j)] += w;
            m[(i, j)] -= w;
            m[(j, i)] -= w;
        });
        m
    }

    /// `‖∇_h u‖² = Σ_faces ((u_j - u_i)/h_d)² h^n`, so that `‖∇_h u‖² = (A u, u)_h`.
    pub fn gradient_sq(&self, u: &[f64]) -> f64 {
        let mut acc = 0.0;
        self.for_each_face(|i, j, w| acc += w * (u[j] - u[i]).powi(2));
        acc * self.grid.vol()
    }

    fn ensure_mean_zero(g: &[f64]) -> Result<(), NeumannError> {
        let m = mean(g);
        let norm = (g.iter().map(|v| v * v).sum::<f64>() / g.len().max(1) as f64).sqrt();
        if m.abs() <= 1e-10 * norm || (m == 0.0 && norm == 0.0) {
            Ok(())
        } else {
            Err(NeumannError::NotMeanZero { mean: m, norm })
        }
    }

    /// The mean-zero `u` with `A u = g`.
    pub fn invert(&self, g: &[f64]) -> Result<Vec<f64>, NeumannError> {
        self.check(g)?;
        Self::ensure_mean_zero(g)?;
        Ok(self.pinv(g))
    }

    /// `A⁺ g`: inverse on mean-zero fields, annihilates constants. No mean check.
    pub fn pinv(&self, g: &[f64]) -> Vec<f64> {
        let m = mean(g);
        if self.grid.dim() == 1 {
            // F_{i+½} = F_{i-½} - h g_i, u_{i+1} = u_i + h F_{i+½}
            let h = self.grid.spacing()[0];
            let mut u = vec![0.0; g.len()];
            let mut flux = 0.0;
            for i in 0..g.len() - 1 {
                flux -= h * (g[i] - m);
                u[i + 1] = u[i] + h * flux;
            }
            super::project_mean_zero_mut(&mut u);
            u
        } else {
            self.spectral(g, |lam| if lam > 0.0 { 1.0 / lam } else { 0.0 })
        }
    }

    /// Applies `f(A)` through the cosine eigenbasis.
    pub fn spectral(&self, u: &[f64], f: impl Fn(f64) -> f64) -> Vec<f64> {
        let basis = self.basis();
        match basis.len() {
            1 => {
                let b = &basis[0];
                let coef: Vec<f64> =
                    (0..b.n).map(|k| f(b.lambda[k]) * dot(b.mode(k), u)).collect();
                let mut out = vec![0.0; b.n];
                for (k, c) in coef.iter().enumerate() {
                    if *c != 0.0 {
                        for (o, v) in out.iter_mut().zip(b.mode(k)) {
                            *o += c * v;
                        }
                    }
                }
                out
            }
            _ => {
                let (b0, b1) = (&basis[0], &basis[1]);
                let (n0, n1) = (b0.n, b1.n);
                // transform along axis 1 (contiguous), then axis 0
                let mut t = vec![0.0; n0 * n1];
                for i in 0..n0 {
                    let row = &u[i * n1..(i + 1) * n1];
                    for l in 0..n1 {
                        t[i * n1 + l] = dot(b1.mode(l), row);
                    }
                }
                let mut c = vec![0.0; n0 * n1];
                for k in 0..n0 {
                    let mk = b0.mode(k);
                    for i in 0..n0 {
                        let w = mk[i];
                        for l in 0..n1 {
                            c[k * n1 + l] += w * t[i * n1 + l];
                        }
                    }
                }
                for k in 0..n0 {
                    for l in 0..n1 {
                        c[k * n1 + l] *= f(b0.lambda[k] + b1.lambda[l]);
                    }
                }
                let mut s = vec![0.0; n0 * n1];
                for k in 0..n0 {
                    let mk = b0.mode(k);
                    for i in 0..n0 {
                        let w = mk[i];
                        for l in 0..n1 {
                            s[i * n1 + l] += w * c[k * n1 + l];
                        }
                    }
                }
                let mut out = vec![0.0; n0 * n1];
                for i in 0..n0 {
                    for l in 0..n1 {
                        let cl = s[i * n1 + l];
                        if cl != 0.0 {
                            for (o, v) in out[i * n1..(i + 1) * n1].iter_mut().zip(b1.mode(l)) {
                                *o += cl * v;
                            }
                        }
                    }
                }
                out
            }
        }
    }

    /// Heat semigroup `exp(-tA) u`.
    pub fn heat(&self, u: &[f64], t: f64) -> Vec<f64> {
        self.spectral(u, |lam| (-t * lam).exp())
    }

    /// Diagonal of `A⁺`.
    pub fn pinv_diagonal(&self) -> Vec<f64> {
        let basis = self.basis();
        let g = &self.grid;
        let mut diag = vec![0.0; g.len()];
        match basis.len() {
            1 => {
                let b = &basis[0];
                for k in 1..b.n {
                    for (d, v) in diag.iter_mut().zip(b.mode(k)) {
                        *d += v * v / b.lambda[k];
                    }
                }
            }
            _ => {
                let (b0, b1) = (&basis[0], &basis[1]);
                for k in 0..b0.n {
                    for l in 0..b1.n {
                        let lam = b0.lambda[k] + b1.lambda[l];
                        if k == 0 && l == 0 {
                            continue;
                        }
                        for i in 0..b0.n {
                            let a = b0.mode(k)[i].powi(2) / lam;
                            for j in 0..b1.n {
                                diag[i * b1.n + j] += a * b1.mode(l)[j].powi(2);
                            }
                        }
                    }
                }
            }
        }
        diag
    }

    /// Dense `A⁺`, column by column.
    pub fn dense_pinv(&self) -> DMatrix<f64> {
        let n = self.grid.len();
        let mut m = DMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            let col = self.pinv(&e);
            for (i, v) in col.iter().enumerate() {
                m[(i, j)] = *v;
            }
        }
        m
    }

    /// `‖f‖²_{H⁻¹,h} = ‖∇_h A⁺ f‖²` for mean-zero `f`.
    pub fn h_minus1_sq(&self, f: &[f64]) -> Result<f64, NeumannError> {
        let u = self.invert(f)?;
        Ok(self.gradient_sq(&u))
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::project_mean_zero;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn max_abs(v: &[f64]) -> f64 {
        v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let a = NeumannLaplacian::new(&Grid::new(&[1.0], &[10]).unwrap());
        assert_eq!(a.invert(&[0.0; 10]).unwrap(), vec![0.0; 10]);
    }

    #[test]
    fn cosine_eigenfunction_second_order() {
        // exact Neumann solution of -u'' = cos(πx) is cos(πx)/π²
        let mut errs = Vec::new();
        for n in [32, 64, 128] {
            let grid = Grid::new(&[1.0], &[n]).unwrap();
            let a = NeumannLaplacian::new(&grid);
            let g = grid.sample(|x| (PI * x[0]).cos());
            let u = a.invert(&g).unwrap();
            let exact = grid.sample(|x| (PI * x[0]).cos() / (PI * PI));
            errs.push(max_abs(&u.iter().zip(&exact).map(|(a, b)| a - b).collect::<Vec<_>>()));
        }
        assert!(errs[0] < 1e-3);
        for w in errs.windows(2) {
            let rate = (w[0] / w[1]).log2();
            assert!((rate - 2.0).abs() < 0.1, "{errs:?}");
        }
    }

    #[test]
    fn round_trip_on_random_fields() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for grid in [Grid::new(&[1.0], &[50]).unwrap(), Grid::new(&[1.0, 0.5], &[12, 7]).unwrap()] {
            let a = NeumannLaplacian::new(&grid);
            for _ in 0..20 {
                let g = project_mean_zero(&(0..grid.len()).map(|_| rng.random::<f64>() - 0.5).collect::<Vec<_>>());
                let u = a.invert(&g).unwrap();
                assert!(mean(&u).abs() < 1e-14);
                let back = a.apply(&u);
                let err = max_abs(&back.iter().zip(&g).map(|(x, y)| x - y).collect::<Vec<_>>());
                assert!(err <= 1e-10 * max_abs(&g), "{err}");
            }
        }
    }

    #[test]
    fn rejects_non_mean_zero() {
        let a = NeumannLaplacian::new(&Grid::new(&[1.0], &[4]).unwrap());
        assert!(matches!(a.invert(&[1.0, 0.0, 0.0, 0.0]), Err(NeumannError::NotMeanZero { .. })));
        assert!(matches!(a.invert(&[0.0; 3]), Err(NeumannError::Size { .. })));
    }

    #[test]
    fn h_minus1_of_laplacian_is_gradient_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let grid = Grid::new(&[1.0, 1.0], &[9, 11]).unwrap();
        let a = NeumannLaplacian::new(&grid);
        let u: Vec<f64> = (0..grid.len()).map(|_| rng.random::<f64>()).collect();
        let f = a.apply(&u);
        let lhs = a.h_minus1_sq(&f).unwrap();
        let rhs = a.gradient_sq(&u);
        assert!((lhs - rhs).abs() < 1e-10 * rhs);
        assert!((grid.inner(&f, &u) - rhs).abs() < 1e-10 * rhs);
    }

    #[test]
    fn spectral_and_recursive_inverses_agree_and_dense_forms_match() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let grid = Grid::new(&[2.0], &[17]).unwrap();
        let a = NeumannLaplacian::new(&grid);
        let g = project_mean_zero(&(0..17).map(|_| rng.random::<f64>()).collect::<Vec<_>>());
        let u1 = a.pinv(&g);
        let u2 = a.spectral(&g, |l| if l > 1e-12 { 1.0 / l } else { 0.0 });
        assert!(u1.iter().zip(&u2).all(|(x, y)| (x - y).abs() < 1e-11));
        let p = a.dense_pinv();
        let diag = a.pinv_diagonal();
        for i in 0..17 {
            assert!((p[(i, i)] - diag[i]).abs() < 1e-11);
        }
        let d = a.dense();
        let au = a.apply(&u1);
        let du = &d * nalgebra::DVector::from_vec(u1.clone());
        assert!(au.iter().zip(du.iter()).all(|(x, y)| (x - y).abs() < 1e-10));
    }

    #[test]
    fn two_dimensional_pinv_diagonal_matches_columns() {
        let grid = Grid::new(&[1.0, 1.0], &[4, 5]).unwrap();
        let a = NeumannLaplacian::new(&grid);
        let p = a.dense_pinv();
        let d = a.pinv_diagonal();
        for i in 0..grid.len() {
            assert!((p[(i, i)] - d[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn heat_preserves_mean_and_damps() {
        let grid = Grid::new(&[1.0], &[32]).unwrap();
        let a = NeumannLaplacian::new(&grid);
        let u = grid.sample(|x| 0.3 + (3.0 * PI * x[0]).cos());
        let s = a.heat(&u, 1e-3);
        assert!((mean(&s) - 0.3).abs() < 1e-14);
        assert!(max_abs(&s) < max_abs(&u));
    }
}
