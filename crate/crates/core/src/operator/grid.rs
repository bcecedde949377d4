use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use serde::Serialize;
use thiserror::Error;

/// Default cap on the number of cells.
pub const MAX_CELLS: usize = 65_536;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("dimension must be 1 or 2, got {0}")]
    Dimension(usize),
    #[error("extents and cell counts have different lengths ({0} vs {1})")]
    Shape(usize, usize),
    #[error("extent {0} is not positive and finite")]
    Extent(f64),
    #[error("cell count must be positive")]
    EmptyAxis,
    #[error("{cells} cells exceed the maximum of {max}")]
    TooManyCells { cells: usize, max: usize },
}

/// Uniform cell-centred mesh of `(0, L₁)` or `(0, L₁) × (0, L₂)`.
/// Cells are numbered row-major, `i = i₀ n₁ + i₁`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Grid {
    dim: usize,
    extents: [f64; 2],
    cells: [usize; 2],
    h: [f64; 2],
}

impl Grid {
    pub fn new(extents: &[f64], cells: &[usize]) -> Result<Self, GridError> {
        Self::with_max(extents, cells, MAX_CELLS)
    }

    pub fn with_max(extents: &[f64], cells: &[usize], max: usize) -> Result<Self, GridError> {
        let dim = extents.len();
        if !(1..=2).contains(&dim) {
            return Err(GridError::Dimension(dim));
        }
        if cells.len() != dim {
            return Err(GridError::Shape(dim, cells.len()));
        }
        let mut e = [1.0; 2];
        let mut c = [1usize; 2];
        for d in 0..dim {
            if !(extents[d].is_finite() && extents[d] > 0.0) {
                return Err(GridError::Extent(extents[d]));
            }
            if cells[d] == 0 {
                return Err(GridError::EmptyAxis);
            }
            e[d] = extents[d];
            c[d] = cells[d];
        }
        let total = c[0].saturating_mul(c[1]);
        if total > max {
            return Err(GridError::TooManyCells { cells: total, max });
        }
        let h = [e[0] / c[0] as f64, e[1] / c[1] as f64];
        Ok(Self { dim, extents: e, cells: c, h })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn extents(&self) -> &[f64] {
        &self.extents[..self.dim]
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells[..self.dim]
    }

    pub fn spacing(&self) -> &[f64] {
        &self.h[..self.dim]
    }

    pub fn len(&self) -> usize {
        self.cells[0] * if self.dim == 2 { self.cells[1] } else { 1 }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cell volume `Π h_d`.
    pub fn vol(&self) -> f64 {
        self.spacing().iter().product()
    }

    /// `|Ω|`.
    pub fn measure(&self) -> f64 {
        self.extents().iter().product()
    }

    pub fn diameter(&self) -> f64 {
        self.extents().iter().map(|l| l * l).sum::<f64>().sqrt()
    }

    pub fn max_spacing(&self) -> f64 {
        self.spacing().iter().cloned().fold(0.0, f64::max)
    }

    /// Whether `x` lies in the closed domain.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim && x.iter().zip(self.extents()).all(|(&v, &l)| (0.0..=l).contains(&v))
    }

    /// Multi-index of cell `i`.
    #[inline]
    pub fn coords(&self, i: usize) -> [usize; 2] {
        if self.dim == 1 {
            [i, 0]
        } else {
            [i / self.cells[1], i % self.cells[1]]
        }
    }

    #[inline]
    pub fn index(&self, i0: usize, i1: usize) -> usize {
        if self.dim == 1 {
            i0
        } else {
            i0 * self.cells[1] + i1
        }
    }

    /// Centre of cell `i`; the unused second coordinate is 0 in 1D.
    #[inline]
    pub fn center(&self, i: usize) -> [f64; 2] {
        let c = self.coords(i);
        let mut p = [0.0; 2];
        for d in 0..self.dim {
            p[d] = (c[d] as f64 + 0.5) * self.h[d];
        }
        p
    }

    pub fn centers(&self) -> Vec<[f64; 2]> {
        (0..self.len()).map(|i| self.center(i)).collect()
    }

    /// Samples `f` at cell centres.
    pub fn sample(&self, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        (0..self.len()).map(|i| f(&self.center(i)[..self.dim])).collect()
    }

    /// Discrete inner product `Σ u_i v_i h^n`.
    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() * self.vol()
    }

    pub fn mean(&self, u: &[f64]) -> f64 {
        mean(u)
    }

    pub fn fingerprint(&self) -> u64 {
        let mut s = DefaultHasher::new();
        self.dim.hash(&mut s);
        for d in 0..2 {
            self.extents[d].to_bits().hash(&mut s);
            self.cells[d].hash(&mut s);
        }
        s.finish()
    }
}

/// Arithmetic mean with a compensated sum.
pub fn mean(u: &[f64]) -> f64 {
    if u.is_empty() {
        return 0.0;
    }
    let (mut s, mut comp) = (0.0f64, 0.0f64);
    for &v in u {
        let y = v - comp;
        let t = s + y;
        comp = (t - s) - y;
        s = t;
    }
    s / u.len() as f64
}
