//! Numerical minimization of the conformally invariant energy
//! E(a,b) = (||grad a||^2 + ||grad b||^2) / (2 ||grad phi||_2) over
//! rotation-equivariant pairs on an annulus, where phi solves the
//! Jacobian-determinant Dirichlet problem -lap phi = {a,b}. Converged pairs
//! are candidate critical points of the H-system lap u = u_x ^ u_y; the
//! verification module certifies every property such critical points satisfy,
//! and the surface module doubles the annulus into a closed torus-topology
//! mesh.

pub mod energy;
pub mod equivariance;
pub mod error;
pub mod grid;
pub mod minimizer;
mod par;
pub mod poisson;
pub mod radial_solver;
pub mod report;
pub mod surface;
pub mod verification;

pub use error::{Error, Result};
pub use grid::{build_grid, AnnulusGrid, GridSpec, ScalarField, VectorField};
