//! Multi-agent coordination via cellular sheaves: coordination sheaf
//! construction, synchronous and partially asynchronous nonlinear sheaf
//! diffusion, spectral convergence constants, and the experiment harness.

pub mod diffusion;
pub mod error;
pub mod experiments;
pub mod generators;
pub mod graph;
pub mod io;
pub mod potentials;
pub mod sheaf;
pub mod spectral;

pub use error::{Result, SheafError};
pub use graph::Graph;
pub use potentials::{dirichlet_energy, energy_minimum, EdgePotential, PotentialSet};
pub use sheaf::{CellularSheaf, Cochain0, Cochain1, SectionBasis};
