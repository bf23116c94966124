//! Reconstruction of diffusion and absorption coefficients from
//! photoacoustic internal data d = sigma_a * u on a 2-D structured grid.
//!
//! The chain: complex-geometrical-optics illuminations produce internal
//! data whose transport coefficients (beta, gamma) satisfy
//! beta . grad(mu) + gamma mu = 0 for mu = sigma_a / sqrt(D). Integrating
//! characteristics of beta recovers mu, the Schrodinger field u = d / mu
//! yields the Liouville potential q, and the shifted elliptic solve
//! -Delta w - q w = mu recovers sqrt(D), hence (D, sigma_a).

pub mod cgo;
pub mod data;
pub mod elliptic;
pub mod error;
pub mod grid;
pub mod io;
pub mod phantom;
pub mod pipeline;
pub mod recon;
pub mod solver;
pub mod transport;
pub mod experiments;

pub use error::{Error, Result};
pub use grid::{
    boundary_trace, BoundaryValues, ComplexField, DomainMask, Field, GridSpec, MaskShape,
    ScalarField, VectorField,
};
