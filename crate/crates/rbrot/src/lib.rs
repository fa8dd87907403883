//! Numerical laboratory for rotating Rayleigh-Benard convection in the
//! combined gravitational-centrifugal scaling regime.
//!
//! The crate implements two solvers on a shared structured grid:
//!
//! * [`primitive`]: the scaled compressible Navier-Stokes-Fourier system
//!   with pressure O(1/eps^2), gravity and centrifugal forcing O(1/eps),
//!   and Coriolis force O(1/sqrt(eps));
//! * [`limit`]: the singular-limit target system, a planar
//!   (Taylor-Proudman) horizontal flow coupled to a three-dimensional
//!   temperature deviation through a Boussinesq-type constraint and a
//!   nonlocal scalar source.
//!
//! [`diagnostics`] measures the distance between the two with the
//! relative-energy functional and tracks the Taylor-Proudman signature
//! of an epsilon-family of primitive runs; [`harness`] orchestrates
//! configured runs, sweeps, and reports.
//!
//! Start with the examples: each major capability has a runnable
//! example under `examples/`.

pub mod config;
pub mod diagnostics;
pub mod error;
pub mod field;
pub mod grid;
pub mod harness;
pub mod limit;
pub mod ops;
pub mod poisson;
pub mod primitive;
pub mod snapshot;
pub mod thermo;

pub use error::{Error, Result};
pub use field::{BoundaryFn, BoundaryKind, Face, ScalarField, VectorField};
pub use grid::{Geometry, GridSpec};
pub use thermo::{BackgroundState, EosSpec, GasLaw, Transport};
