//! Mean-field coupled-dipole simulation of a driven cold atomic cloud.
//!
//! The engine drives `N` two-level atoms to steady state, switches the drive
//! off, records observables along the decay, and extracts early-time
//! collective decay rates by fitting a single exponential.
//!
//! Units are natural throughout: the single-atom linewidth is 1 (time in
//! `1/Γ`) and the laser wavenumber is 1 (length in `1/k_l`).
//!
//! With the default `parallel` feature the coupling matrix–vector product,
//! the sphere quadrature and the ensemble sweep run on rayon. Every reduction
//! keeps a fixed order, so results are bit-identical to the sequential build.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cloud;
pub mod decay;
pub mod error;
pub mod integrator;
pub mod kernel;
pub mod observables;
mod par;
pub mod quadrature;
pub mod rng;
pub mod runner;
pub mod validation;

pub use cloud::{radius_from_b0, sample_gaussian_cloud, Cloud};
pub use decay::{fit_single_exponential, normalize_to_switch_off, DecayFit, DecaySeries};
pub use error::{Error, Result};
pub use integrator::{run_drive_decay, Schedule, Trajectory};
pub use kernel::{
    build_coupling, rabi_from_saturation, single_atom_steady_state, AtomicState,
    CouplingMatrix, DriveParams,
};
pub use observables::{Direction, Observable};
pub use quadrature::SphereQuadrature;
pub use runner::{run_experiment, ExperimentConfig};
