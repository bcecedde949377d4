use super::coupling::{assemble_coupling, CouplingError, CouplingMatrix};
use super::grid::{mean, Grid};
use super::neumann::{NeumannError, NeumannLaplacian};
use crate::kernel::Kernel;

/// `‖u‖_{L²,h}`.
pub fn l2_norm(grid: &Grid, u: &[f64]) -> f64 {
    grid.inner(u, u).sqrt()
}

/// `‖u‖²_{L²} + ∫∫ |u(x) - u(y)|² |x - y|^{-n-α}` with the double integral
/// taken from a coupling matrix assembled for the amplitude-one power law.
pub fn slobodeckii_norm_sq(grid: &Grid, power: &CouplingMatrix, u: &[f64]) -> f64 {
    grid.inner(u, u) + 2.0 * power.energy(u)
}

/// `‖f‖²_{H⁻¹,h}` for mean-zero `f`.
pub fn h_minus1_norm_sq(neumann: &NeumannLaplacian, f: &[f64]) -> Result<f64, NeumannError> {
    neumann.h_minus1_sq(f)
}

/// `(|m(u)|² + ℰ_h(u,u)) / ‖u‖²_{H^{α/2},h}`.
pub fn norm_equivalence_ratio(grid: &Grid, coupling: &CouplingMatrix, power: &CouplingMatrix, u: &[f64]) -> f64 {
    let m = mean(u);
    (m * m + coupling.energy(u)) / slobodeckii_norm_sq(grid, power, u)
}

/// Bundles what the discrete norms need on one grid.
#[derive(Debug, Clone)]
pub struct NormContext {
    pub grid: Grid,
    pub neumann: NeumannLaplacian,
    pub power: CouplingMatrix,
}

impl NormContext {
    pub fn new(grid: &Grid, alpha: f64, refinement: usize) -> Result<Self, CouplingError> {
        let pure = Kernel::homogeneous(alpha, 1.0).map_err(|_| CouplingError::Refinement)?;
        Ok(Self {
            grid: grid.clone(),
            neumann: NeumannLaplacian::new(grid),
            power: assemble_coupling(grid, &pure, refinement)?,
        })
    }

    pub fn l2(&self, u: &[f64]) -> f64 {
        l2_norm(&self.grid, u)
    }

    /// `∫∫ |u(x) - u(y)|² |x - y|^{-n-α}`.
    pub fn seminorm_sq(&self, u: &[f64]) -> f64 {
        2.0 * self.power.energy(u)
    }

    pub fn fractional_sq(&self, u: &[f64]) -> f64 {
        slobodeckii_norm_sq(&self.grid, &self.power, u)
    }

    pub fn h1_seminorm_sq(&self, u: &[f64]) -> f64 {
        self.neumann.gradient_sq(u)
    }

    pub fn h_minus1_sq(&self, f: &[f64]) -> Result<f64, NeumannError> {
        self.neumann.h_minus1_sq(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::project_mean_zero;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_field_norms() {
        let grid = Grid::new(&[2.0], &[16]).unwrap();
        let ctx = NormContext::new(&grid, 1.5, 2).unwrap();
        let u = vec![-3.0; 16];
        assert_eq!(ctx.seminorm_sq(&u), 0.0);
        assert!((ctx.l2(&u) - 3.0 * 2f64.sqrt()).abs() < 1e-14);
        assert!(ctx.h_minus1_sq(&u).is_err());
    }

    #[test]
    fn seminorm_is_twice_pure_energy_and_matches_double_sum() {
        let grid = Grid::new(&[1.0], &[12]).unwrap();
        let ctx = NormContext::new(&grid, 1.3, 2).unwrap();
        let u = grid.sample(|x| x[0] * x[0]);
        let mut direct = 0.0;
        for i in 0..12 {
            for j in 0..12 {
                direct += (u[i] - u[j]).powi(2) * ctx.power.get(i, j);
            }
        }
        direct *= grid.vol() * grid.vol();
        assert!((ctx.seminorm_sq(&u) - direct).abs() < 1e-12 * direct);
    }

    #[test]
    fn equivalence_ratios_are_bounded_below() {
        let grid = Grid::new(&[1.0], &[32]).unwrap();
        let k = Kernel::homogeneous(1.5, 2.0).unwrap();
        let coupling = assemble_coupling(&grid, &k, 2).unwrap();
        let ctx = NormContext::new(&grid, 1.5, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let u: Vec<f64> = (0..32).map(|_| rng.random::<f64>() - 0.3).collect();
            let r = norm_equivalence_ratio(&grid, &coupling, &ctx.power, &u);
            assert!(r > 0.0 && r.is_finite());
            let z = project_mean_zero(&u);
            assert!(coupling.energy(&z) > 0.0);
        }
    }
}
