use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use nalgebra::DMatrix;
use thiserror::Error;

use crate::kernel::Kernel;
use crate::operator::{assemble_coupling, CouplingError, CouplingMatrix, Grid, NeumannLaplacian};
use crate::potential::Potential;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("kernel order {kernel} does not match the model order {model}")]
    Order { kernel: f64, model: f64 },
    #[error(transparent)]
    Coupling(#[from] CouplingError),
}

/// Dense system matrices keyed by the bit patterns of `(dt, θ)`.
type DenseCache = Mutex<HashMap<(u64, u64), Arc<DMatrix<f64>>>>;

/// Everything a trajectory needs on one grid: the assembled nonlocal
/// operator, the Neumann Laplacian and the potential.
#[derive(Debug)]
pub struct Model {
    pub grid: Grid,
    pub kernel: Kernel,
    pub coupling: Arc<CouplingMatrix>,
    pub neumann: Arc<NeumannLaplacian>,
    pub potential: Potential,
    dense_cache: DenseCache,
}

impl Clone for Model {
    fn clone(&self) -> Self {
        Self {
            grid: self.grid.clone(),
            kernel: self.kernel.clone(),
            coupling: Arc::clone(&self.coupling),
            neumann: Arc::clone(&self.neumann),
            potential: self.potential.clone(),
            dense_cache: Mutex::new(HashMap::new()),
        }
    }
}

impl Model {
    pub fn new(grid: Grid, kernel: Kernel, potential: Potential, refinement: usize) -> Result<Self, ModelError> {
        let coupling = Arc::new(assemble_coupling(&grid, &kernel, refinement)?);
        Ok(Self::from_parts(grid, kernel, coupling, potential))
    }

    /// Reuses an assembled matrix, e.g. across a parameter sweep.
    pub fn from_parts(grid: Grid, kernel: Kernel, coupling: Arc<CouplingMatrix>, potential: Potential) -> Self {
        let neumann = Arc::new(NeumannLaplacian::new(&grid));
        Self { grid, kernel, coupling, neumann, potential, dense_cache: Mutex::new(HashMap::new()) }
    }

    pub fn with_potential(&self, potential: Potential) -> Self {
        let mut m = self.clone();
        m.potential = potential;
        m
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// `μ(c) = θAc + ℒ_h c + f'(c)` for an interior state.
    pub fn chemical_potential(&self, c: &[f64], theta_reg: f64) -> Vec<f64> {
        let mut mu = vec![0.0; c.len()];
        self.coupling.apply_into(c, &mut mu);
        if theta_reg > 0.0 {
            for (m, a) in mu.iter_mut().zip(self.neumann.apply(c)) {
                *m += theta_reg * a;
            }
        }
        for (m, &s) in mu.iter_mut().zip(c) {
            *m += self.potential.f_interior(s).first;
        }
        mu
    }

    /// Dense `A⁺/dt + θA + ℒ_h`, cached per `(dt, θ)`.
    pub(crate) fn dense_base(&self, dt: f64, theta_reg: f64) -> Arc<DMatrix<f64>> {
        let key = (dt.to_bits(), theta_reg.to_bits());
        if let Some(m) = self.dense_cache.lock().unwrap().get(&key) {
            return Arc::clone(m);
        }
        let mut m = self.coupling.dense_operator();
        m += self.neumann.dense_pinv() / dt;
        if theta_reg > 0.0 {
            m += self.neumann.dense() * theta_reg;
        }
        let m = Arc::new(m);
        let mut cache = self.dense_cache.lock().unwrap();
        if cache.len() > 32 {
            cache.clear();
        }
        cache.insert(key, Arc::clone(&m));
        m
    }
}
