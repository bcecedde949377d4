use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use super::grid::Grid;
use crate::kernel::Kernel;
use crate::quadrature::{rect_moment, segment_moment, Angular};

/// Largest grid for which a dense `N × N` matrix is assembled.
pub const MAX_DENSE: usize = 4096;
/// Pairs whose centres are at most this many cell widths apart use subcell quadrature.
pub const NEAR_CUTOFF: f64 = 3.0;
pub const DEFAULT_REFINEMENT: usize = 4;

const MAGIC: &[u8; 4] = b"NLCH";
const EXPORT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CouplingError {
    #[error("dense coupling matrix for {cells} cells exceeds the limit of {max} cells ({bytes} bytes)")]
    TooLarge { cells: usize, max: usize, bytes: u128 },
    #[error("refinement level must be at least 1")]
    Refinement,
    #[error("kernel dimension mismatch: grid has dimension {0}")]
    Dimension(usize),
    #[error("field has {got} entries, expected {expected}")]
    Size { expected: usize, got: usize },
    #[error("kernel is not positive at cells {i} and {j} (value {value})")]
    NonPositive { i: usize, j: usize, value: f64 },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed matrix file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CouplingMeta {
    pub kernel_hash: u64,
    pub grid_hash: u64,
    pub refinement: usize,
}

/// Dense symmetric pair weights `K_ij` with
/// `ℰ_h(u, v) = ½ Σ_{i≠j} (u_i - u_j)(v_i - v_j) K_ij h^{2n}`.
#[derive(Debug, Clone)]
pub struct CouplingMatrix {
    n: usize,
    vol: f64,
    data: Vec<f64>,
    rowsum: Vec<f64>,
    meta: CouplingMeta,
}

/// `S_d = ∫_C ∫_C (x_d - y_d)² |x - y|^{-n-α} dx dy` over one cell.
pub fn self_cell_moment(grid: &Grid, alpha: f64, axis: usize) -> f64 {
    let h = grid.spacing();
    match grid.dim() {
        1 => segment_moment(h[0], 1.0 - alpha),
        _ => {
            let w = if axis == 0 { Angular::Cos2 } else { Angular::Sin2 };
            rect_moment([h[0], h[1]], -alpha, w)
        }
    }
}

/// Assembles the coupling matrix.
///
/// Far pairs take the kernel at the centres. Near pairs weight the subcell
/// average by `|x - y|²`, which integrates the pair exactly for linear
/// fields. The interaction of a cell with itself, lost in the
/// piecewise-constant difference, is restored through its axis neighbours.
pub fn assemble_coupling(grid: &Grid, kernel: &Kernel, refinement: usize) -> Result<CouplingMatrix, CouplingError> {
    let n = grid.len();
    if n > MAX_DENSE {
        return Err(CouplingError::TooLarge { cells: n, max: MAX_DENSE, bytes: (n as u128).pow(2) * 8 });
    }
    if refinement == 0 {
        return Err(CouplingError::Refinement);
    }
    let dim = grid.dim();
    let h = grid.spacing().to_vec();
    let cutoff = NEAR_CUTOFF * grid.max_spacing() * (1.0 + 1e-12);
    let offsets = subcell_offsets(&h, refinement);
    let norm = 1.0 / (offsets.len() * offsets.len()) as f64;

    let mut data = vec![0.0; n * n];
    data.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        let ci = grid.center(i);
        for j in i + 1..n {
            let cj = grid.center(j);
            let mut r2 = 0.0;
            for d in 0..dim {
                r2 += (ci[d] - cj[d]).powi(2);
            }
            row[j] = if r2.sqrt() > cutoff {
                kernel.value(&ci[..dim], &cj[..dim])
            } else {
                let mut acc = 0.0;
                let (mut x, mut y) = ([0.0; 2], [0.0; 2]);
                for a in &offsets {
                    for d in 0..dim {
                        x[d] = ci[d] + a[d];
                    }
                    for b in &offsets {
                        let mut s2 = 0.0;
                        for d in 0..dim {
                            y[d] = cj[d] + b[d];
                            s2 += (x[d] - y[d]).powi(2);
                        }
                        acc += s2 * kernel.value(&x[..dim], &y[..dim]);
                    }
                }
                acc * norm / r2
            };
        }
    });

    let vol = grid.vol();
    let amp: Vec<f64> = (0..n).map(|i| kernel.local_amplitude(&grid.center(i)[..dim])).collect();
    for axis in 0..dim {
        let cells = grid.cells()[axis];
        if cells < 2 {
            continue;
        }
        let s = self_cell_moment(grid, kernel.alpha(), axis);
        let scale = s / (2.0 * h[axis] * h[axis] * vol * vol);
        let p = |k: usize| if k == 0 || k + 1 == cells { 1.0 } else { 2.0 };
        for i in 0..n {
            let c = grid.coords(i);
            if c[axis] + 1 >= cells {
                continue;
            }
            let mut cn = c;
            cn[axis] += 1;
            let j = grid.index(cn[0], cn[1]);
            data[i * n + j] += scale * (amp[i] / p(c[axis]) + amp[j] / p(cn[axis]));
        }
    }

    for i in 0..n {
        for j in i + 1..n {
            let v = data[i * n + j];
            if !(v.is_finite() && v > 0.0) {
                return Err(CouplingError::NonPositive { i, j, value: v });
            }
            data[j * n + i] = v;
        }
    }
    let rowsum = data.par_chunks(n).map(|r| r.iter().sum()).collect();
    Ok(CouplingMatrix {
        n,
        vol,
        data,
        rowsum,
        meta: CouplingMeta { kernel_hash: kernel.fingerprint(), grid_hash: grid.fingerprint(), refinement },
    })
}

fn subcell_offsets(h: &[f64], m: usize) -> Vec<[f64; 2]> {
    let one = |hd: f64| (0..m).map(move |a| (a as f64 + 0.5) * hd / m as f64 - 0.5 * hd);
    match h.len() {
        1 => one(h[0]).map(|a| [a, 0.0]).collect(),
        _ => one(h[0]).flat_map(|a| one(h[1]).map(move |b| [a, b])).collect(),
    }
}

impl CouplingMatrix {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn vol(&self) -> f64 {
        self.vol
    }

    pub fn meta(&self) -> CouplingMeta {
        self.meta
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Diagonal of `ℒ_h` as a matrix, `h^n Σ_j K_ij`.
    pub fn operator_diagonal(&self) -> Vec<f64> {
        self.rowsum.iter().map(|s| s * self.vol).collect()
    }

    fn check(&self, u: &[f64]) -> Result<(), CouplingError> {
        if u.len() == self.n {
            Ok(())
        } else {
            Err(CouplingError::Size { expected: self.n, got: u.len() })
        }
    }

    /// `(ℒ_h u)_i = Σ_{j≠i} (u_i - u_j) K_ij h^n`.
    pub fn apply(&self, u: &[f64]) -> Result<Vec<f64>, CouplingError> {
        self.check(u)?;
        let mut out = vec![0.0; self.n];
        self.apply_into(u, &mut out);
        Ok(out)
    }

    /// Unchecked [`Self::apply`]; panics on size mismatch.
    pub fn apply_into(&self, u: &[f64], out: &mut [f64]) {
        assert_eq!(u.len(), self.n);
        let vol = self.vol;
        let row = |(i, o): (usize, &mut f64)| {
            let ui = u[i];
            *o = self.row(i).iter().zip(u).map(|(k, uj)| k * (ui - uj)).sum::<f64>() * vol;
        };
        if self.n >= 256 {
            out.par_iter_mut().enumerate().for_each(row);
        } else {
            out.iter_mut().enumerate().for_each(row);
        }
    }

    /// `ℰ_h(u, v)` evaluated as the pair double sum.
    pub fn bilinear(&self, u: &[f64], v: &[f64]) -> Result<f64, CouplingError> {
        self.check(u)?;
        self.check(v)?;
        let n = self.n;
        // ordered partials keep the result bitwise reproducible
        let partial: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|i| {
                let r = self.row(i);
                let mut acc = 0.0;
                for j in i + 1..n {
                    acc += (u[i] - u[j]) * (v[i] - v[j]) * r[j];
                }
                acc
            })
            .collect();
        Ok(partial.iter().sum::<f64>() * self.vol * self.vol)
    }

    /// `ℰ_h(u, u)`; panics on size mismatch.
    pub fn energy(&self, u: &[f64]) -> f64 {
        self.bilinear(u, u).expect("field size matches the coupling matrix")
    }

    /// Matrix of `ℒ_h`, `h^n (diag(Σ_j K_ij) - K)`.
    pub fn dense_operator(&self) -> DMatrix<f64> {
        let n = self.n;
        DMatrix::from_fn(n, n, |i, j| if i == j { self.rowsum[i] * self.vol } else { -self.get(i, j) * self.vol })
    }

    /// Writes `{"NLCH", version u32, N u32, f64 row-major}` little-endian.
    pub fn export(&self, path: &Path) -> Result<(), CouplingError> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&EXPORT_VERSION.to_le_bytes())?;
        w.write_all(&(self.n as u32).to_le_bytes())?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a file produced by [`Self::export`]; returns `(N, entries)`.
    pub fn read_export(path: &Path) -> Result<(usize, Vec<f64>), CouplingError> {
        let mut bytes = Vec::new();
        BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(CouplingError::Format("bad magic".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != EXPORT_VERSION {
            return Err(CouplingError::Format(format!("unsupported version {version}")));
        }
        let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let payload = &bytes[12..];
        if payload.len() != n * n * 8 {
            return Err(CouplingError::Format(format!("expected {} payload bytes, found {}", n * n * 8, payload.len())));
        }
        let data = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Ok((n, data))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Expr;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()
    }

    #[test]
    fn symmetric_zero_diagonal_positive() {
        let grid = Grid::new(&[1.0, 1.0], &[6, 5]).unwrap();
        let g = Expr::parse("1 + x1*y2").unwrap();
        let k = Kernel::modulated(1.4, 1.0, g, 1.0, 2.0).unwrap();
        let m = assemble_coupling(&grid, &k, 2).unwrap();
        for i in 0..m.len() {
            assert_eq!(m.get(i, i), 0.0);
            for j in 0..m.len() {
                assert_eq!(m.get(i, j), m.get(j, i));
                if i != j {
                    assert!(m.get(i, j) > 0.0);
                }
            }
        }
    }

    /// Stratified Monte Carlo estimate of `½ ∫∫ (x - y)² |x - y|^{-1-α}` on `(0,1)²`.
    fn monte_carlo_linear_energy(alpha: f64, side: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = 1.0 / side as f64;
        let mut acc = 0.0;
        for a in 0..side {
            for b in 0..side {
                let x = (a as f64 + rng.random::<f64>()) * w;
                let y = (b as f64 + rng.random::<f64>()) * w;
                acc += (x - y).abs().powf(1.0 - alpha);
            }
        }
        0.5 * acc / (side * side) as f64
    }

    #[test]
    fn linear_field_energy_matches_monte_carlo() {
        let alpha = 1.5;
        let grid = Grid::new(&[1.0], &[16]).unwrap();
        let k = Kernel::homogeneous(alpha, 1.0).unwrap();
        let m = assemble_coupling(&grid, &k, DEFAULT_REFINEMENT).unwrap();
        let u = grid.sample(|x| x[0]);
        let e = m.energy(&u);
        let mc = monte_carlo_linear_energy(alpha, 1000, 17);
        assert!((e - mc).abs() / mc < 0.02, "E_h = {e}, Monte Carlo = {mc}");
    }

    #[test]
    fn subcell_refinement_self_converges() {
        let grid = Grid::new(&[1.0], &[16]).unwrap();
        let k = Kernel::homogeneous(1.5, 1.0).unwrap();
        let u = grid.sample(|x| (std::f64::consts::PI * x[0]).cos());
        let e: Vec<f64> = [2, 4, 8]
            .iter()
            .map(|&m| assemble_coupling(&grid, &k, m).unwrap().energy(&u))
            .collect();
        let ratio = (e[1] - e[0]) / (e[2] - e[1]);
        let p = ratio.abs().log2().max(0.5);
        let limit = e[2] + (e[2] - e[1]) / (2f64.powf(p) - 1.0);
        assert!((e[1] - e[0]).abs() < (e[0] - limit).abs() * 1.0001, "{e:?} {limit}");
    }

    #[test]
    fn two_dimensional_linear_energy_matches_monte_carlo() {
        let alpha = 1.5;
        let grid = Grid::new(&[1.0, 1.0], &[12, 12]).unwrap();
        let k = Kernel::homogeneous(alpha, 1.0).unwrap();
        let m = assemble_coupling(&grid, &k, 3).unwrap();
        let u = grid.sample(|x| x[0]);
        let e = m.energy(&u);
        // stratified sampling of ½ ∫∫ (x₁ - y₁)² |x - y|^{-2-α} over (0,1)⁴
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let side = 32;
        let w = 1.0 / side as f64;
        let mut acc = 0.0;
        let mut count = 0usize;
        for a in 0..side * side {
            for b in 0..side * side {
                let x = [((a / side) as f64 + rng.random::<f64>()) * w, ((a % side) as f64 + rng.random::<f64>()) * w];
                let y = [((b / side) as f64 + rng.random::<f64>()) * w, ((b % side) as f64 + rng.random::<f64>()) * w];
                let r2 = (x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2);
                acc += (x[0] - y[0]).powi(2) * r2.powf(-0.5 * (2.0 + alpha));
                count += 1;
            }
        }
        let mc = 0.5 * acc / count as f64;
        assert!((e - mc).abs() / mc < 0.05, "E_h = {e}, Monte Carlo = {mc}");
    }

    #[test]
    fn duality_constants_and_mean_zero_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for grid in [Grid::new(&[1.0], &[40]).unwrap(), Grid::new(&[1.0, 2.0], &[5, 8]).unwrap()] {
            let k = Kernel::homogeneous(1.7, 0.3).unwrap();
            let m = assemble_coupling(&grid, &k, 2).unwrap();
            let ones = vec![3.0; grid.len()];
            assert!(m.apply(&ones).unwrap().iter().all(|v| *v == 0.0));
            assert_eq!(m.bilinear(&ones, &random_field(grid.len(), &mut rng)).unwrap(), 0.0);
            for _ in 0..10 {
                let u = random_field(grid.len(), &mut rng);
                let v = random_field(grid.len(), &mut rng);
                let lu = m.apply(&u).unwrap();
                let lhs = grid.inner(&lu, &v);
                let rhs = m.bilinear(&u, &v).unwrap();
                assert!((lhs - rhs).abs() <= 1e-10 * rhs.abs().max(1e-300) + 1e-12);
                assert!((rhs - m.bilinear(&v, &u).unwrap()).abs() <= 1e-13 * rhs.abs());
                let norm = lu.iter().map(|x| x * x).sum::<f64>().sqrt();
                assert!(crate::operator::mean(&lu).abs() <= 1e-12 * norm);
                assert!(m.energy(&u) > 0.0);
            }
        }
    }

    #[test]
    fn size_and_refinement_errors() {
        let grid = Grid::new(&[1.0], &[8]).unwrap();
        let k = Kernel::homogeneous(1.5, 1.0).unwrap();
        assert!(matches!(assemble_coupling(&grid, &k, 0), Err(CouplingError::Refinement)));
        let m = assemble_coupling(&grid, &k, 1).unwrap();
        assert!(matches!(m.apply(&[0.0; 3]), Err(CouplingError::Size { .. })));
        let big = Grid::new(&[1.0, 1.0], &[65, 64]).unwrap();
        assert!(matches!(assemble_coupling(&big, &k, 1), Err(CouplingError::TooLarge { .. })));
    }

    #[test]
    fn export_round_trip() {
        let grid = Grid::new(&[1.0], &[7]).unwrap();
        let k = Kernel::homogeneous(1.5, 1.0).unwrap();
        let m = assemble_coupling(&grid, &k, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("k.bin");
        m.export(&path).unwrap();
        let (n, data) = CouplingMatrix::read_export(&path).unwrap();
        assert_eq!(n, 7);
        assert_eq!(data, m.data());
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(CouplingMatrix::read_export(&path).is_err());
    }

    #[test]
    fn dense_operator_matches_apply() {
        let grid = Grid::new(&[1.0], &[9]).unwrap();
        let k = Kernel::homogeneous(1.2, 1.0).unwrap();
        let m = assemble_coupling(&grid, &k, 2).unwrap();
        let u: Vec<f64> = (0..9).map(|i| (i as f64).sin()).collect();
        let a = m.dense_operator() * nalgebra::DVector::from_vec(u.clone());
        let b = m.apply(&u).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-10 * (1.0 + y.abs()));
        }
    }
}
