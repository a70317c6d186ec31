//! Numerical kernels for eigenstate thermalization studies of a small qubit
//! system coupled to a disordered qubit bath.
//!
//! Modules follow the data flow: [`model`] builds Hamiltonians, [`spectra`]
//! diagonalises them, [`overlaps`] and [`xstats`] measure eigenvector and
//! coupling statistics, [`rmt`] provides the analytic predictions and
//! [`rdm`] reduces eigenstates to the system.

pub mod fit;
pub mod model;
pub mod overlaps;
pub mod quad;
pub mod rdm;
pub mod rmt;
pub mod spectra;
pub mod stats;
pub mod xstats;

pub use faer::{c64, Mat};
