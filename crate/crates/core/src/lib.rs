//! Simulation and verification toolkit for controlled stochastic Volterra
//! integral equations (SVIEs) with jumps.
//!
//! The crate covers the full pipeline for a scalar controlled SVIE
//!
//! ```text
//! X(t) = xi(t) + int_0^t b(t,s,X(s),u(s)) ds
//!               + int_0^t sigma(t,s,X(s),u(s)) dB(s)
//!               + int_0^t int gamma(t,s,X(s),u(s),z) Ntilde(ds,dz)
//! ```
//!
//! driven by a Brownian motion and a compensated Poisson random measure with
//! a finite-activity, finite-support mark distribution:
//!
//! * [`driver`] — time grids, Lévy mark specifications and seeded joint
//!   Brownian/compound-Poisson path generation with reproducible per-path
//!   streams;
//! * [`forward`] — forward solvers (direct triangular substitution and Picard
//!   iteration) and Monte Carlo evaluation of the performance functional;
//! * [`resolvent`] — iterated kernels, the Neumann resolvent series and an
//!   independent backward collocation solver used to cross-validate it;
//! * [`measure`] — the Doléans-Dade exponential, the shifted driver under the
//!   equivalent martingale measure and Bayes-rule conditional expectations;
//! * [`adjoint`] — Hamiltonian evaluation, the expanded adjoint driver, the
//!   closed-form adjoint of the linear cash-flow model, and representation
//!   components for catalog cases;
//! * [`principle`] — bump perturbations, the pathwise derivative process,
//!   two independent Gateaux-derivative routes and stationarity residuals;
//! * [`consumption`] — the memory cash-flow model, its closed-form optimal
//!   consumption rate and an optimality certification report;
//! * [`malliavin`] — Monte Carlo witnesses for the duality and Clark-Ocone
//!   identities on a catalog of functionals with hand-coded derivatives;
//! * [`config`] / [`runner`] — the JSON experiment schema and the batch
//!   front end behind the `volterra` binary.

pub mod adjoint;
pub mod config;
pub mod consumption;
pub mod driver;
pub mod error;
pub mod forward;
pub mod malliavin;
pub mod measure;
pub mod principle;
pub mod resolvent;
pub mod runner;
pub mod stats;

pub use error::{Error, Result};
