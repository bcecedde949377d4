//! Grids, the discrete nonlocal operator, the Neumann Laplacian and the
//! discrete norms built on them.

mod coupling;
mod grid;
mod neumann;
mod norms;

pub use coupling::{
    assemble_coupling, self_cell_moment, CouplingError, CouplingMatrix, DEFAULT_REFINEMENT, MAX_DENSE,
    NEAR_CUTOFF,
};
pub use grid::{mean, Grid, GridError, MAX_CELLS};
pub use neumann::{NeumannError, NeumannLaplacian};
pub use norms::{h_minus1_norm_sq, l2_norm, norm_equivalence_ratio, slobodeckii_norm_sq, NormContext};

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StateError {
    #[error("field has {got} entries, grid has {expected}")]
    Size { expected: usize, got: usize },
    #[error("recorded mean {recorded} differs from the field mean {actual}")]
    Mean { recorded: f64, actual: f64 },
    #[error("time {0} is negative or not finite")]
    Time(f64),
    #[error("field contains a non-finite value at cell {0}")]
    NonFinite(usize),
}

/// Concentration field with its recorded mean and time stamp.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct State {
    pub c: Vec<f64>,
    pub mean: f64,
    pub time: f64,
}

impl State {
    pub fn new(c: Vec<f64>, time: f64) -> Result<Self, StateError> {
        if !(time.is_finite() && time >= 0.0) {
            return Err(StateError::Time(time));
        }
        if let Some(i) = c.iter().position(|v| !v.is_finite()) {
            return Err(StateError::NonFinite(i));
        }
        let m = mean(&c);
        Ok(Self { c, mean: m, time })
    }

    pub fn constant(n: usize, value: f64) -> Self {
        Self { c: vec![value; n], mean: value, time: 0.0 }
    }

    pub fn len(&self) -> usize {
        self.c.len()
    }

    pub fn is_empty(&self) -> bool {
        self.c.is_empty()
    }

    /// Rechecks the stored mean against the field to `tol`.
    pub fn check_mean(&self, tol: f64) -> Result<(), StateError> {
        let actual = mean(&self.c);
        if (actual - self.mean).abs() <= tol {
            Ok(())
        } else {
            Err(StateError::Mean { recorded: self.mean, actual })
        }
    }

    pub fn max(&self) -> f64 {
        self.c.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.c.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// `P₀u = u - m(u)`.
pub fn project_mean_zero(u: &[f64]) -> Vec<f64> {
    let m = mean(u);
    u.iter().map(|v| v - m).collect()
}

/// In-place variant of [`project_mean_zero`].
pub fn project_mean_zero_mut(u: &mut [f64]) {
    let m = mean(u);
    u.iter_mut().for_each(|v| *v -= m);
}
