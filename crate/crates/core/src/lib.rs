//! Nonlocal Cahn-Hilliard dynamics driven by a regional fractional Laplacian
//! with a singular interaction kernel and a logarithmic free energy.
//!
//! Fields live on a uniform cell-centred grid of an interval or rectangle.
//! The nonlocal operator is carried by a dense symmetric [`CouplingMatrix`].

pub mod boundary;
pub mod diagnostics;
pub mod elliptic;
pub mod expr;
pub mod io;
pub mod kernel;
pub mod model;
pub mod operator;
pub mod potential;
pub mod quadrature;
pub mod timestepper;

pub use diagnostics::EnergyBreakdown;
pub use elliptic::EllipticProblem;
pub use kernel::{Kernel, KernelFamily};
pub use model::Model;
pub use operator::{CouplingMatrix, Grid, NeumannLaplacian, State};
pub use potential::Potential;
pub use timestepper::{SchemeConfig, Splitting, StepReport};

