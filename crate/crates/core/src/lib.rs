//! Velocity-space solver for the spatially homogeneous Landau equation with
//! Coulomb interaction and Fermi-Dirac (Pauli-blocked) statistics.
//!
//! The crate covers the whole pipeline: a cell-centered velocity grid,
//! FFT-accelerated evaluation of the nonlocal diffusion matrix and
//! potentials, a lagged-coefficient implicit Euler integrator with an inner
//! Picard loop, the Fermi-Dirac equilibrium fitter, entropy functionals, the
//! linearized collision operator and long-time diagnostics.

pub mod coefficients;
pub mod config;
pub mod diagnostics;
pub mod entropy;
pub mod equilibrium;
pub mod error;
pub mod experiment;
mod fft;
pub mod grid;
pub mod io;
pub mod krylov;
pub mod lattice;
pub mod linearized;
pub mod quadrature;
pub mod stencil;
pub mod stepper;

pub use coefficients::{CoefficientField, KernelSet, StructureReport};
pub use equilibrium::EquilibriumParams;
pub use stepper::{DiagRecord, StepConfig, Stepper, Trajectory};

pub use error::{Error, Result};
pub use grid::{Field, MomentVector, SymTensorField, VectorField, VelocityGrid};
