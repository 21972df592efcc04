//! Topological Schrödinger bridges between Gaussian distributions of
//! signals on graphs and simplicial 2-complexes.
//!
//! The crate is organized bottom-up:
//!
//! - [`topology`]: simplicial 2-complexes, incidence matrices, Hodge
//!   Laplacians and projectors;
//! - [`spectral`]: eigendecompositions, matrix functions, polynomial
//!   coefficient schedules;
//! - [`dynamics`]: topology-aware reference SDEs (TSHeat-BM/VE/VP,
//!   general linear, heterogeneous) with closed-form transition kernels;
//! - [`gtsb`]: the static entropic coupling and the Gaussian topological
//!   Schrödinger bridge with its optimal SDE drift;
//! - [`gp`]: topology-aware Gaussian-process kernels for endpoints;
//! - [`sim`]: Euler-Maruyama ensembles, reverse-score and Doob-bridge
//!   sampling, FB-TSDE simulation, likelihood bounds, probability flow;
//! - [`metrics`]: Bures-Wasserstein, Gaussian KL, empirical Wasserstein
//!   (exact and Sinkhorn), Dirichlet energy functional.
//!
//! See `examples/` for end-to-end usage; the `topobridge` binary exposes
//! the same pipeline on the command line.

pub mod cli;
pub mod dynamics;
pub mod error;
pub mod gp;
pub mod gtsb;
pub mod metrics;
pub mod quad;
pub mod sim;
pub mod spectral;
pub mod synthetic;
pub mod topology;

pub use error::{Error, Result};
