//! Pseudo-spectral direct numerical simulation of incompressible
//! Navier-Stokes flow in a triply periodic box.
//!
//! The velocity is advanced in Fourier space with classical RK4. Nonlinear
//! terms are evaluated pointwise in physical space in rotational form
//! (`u x omega`), then projected back onto divergence-free fields. All 3D
//! transforms are distributed real-to-complex FFTs over either a slab or a
//! pencil decomposition, written against the [`transport::Communicator`]
//! trait so the same code runs on one rank or many.

pub mod app;
pub mod diagnostics;
pub mod error;
pub mod fft;
pub mod grid;
pub mod integrate;
pub mod ns_core;
pub mod transport;
pub mod verify;

pub use error::{ConfigError, Error, Result, TransportError};
pub use grid::{Case, Decomp, RankLayout, SolverConfig, WavenumberMesh};

/// Complex scalar used for every spectral coefficient.
pub type Complex = num_complex::Complex64;
