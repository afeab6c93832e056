//! Numerical toolkit for finite-time melting of the 3D radial one-phase
//! Stefan problem.
//!
//! The crate verifies, at desk scale, the computable content of the melting
//! construction: the Gaussian-weighted Laguerre basis diagonalising the
//! harmonic oscillator `-Delta + Lambda`, the Dirichlet-hole eigenproblem on
//! `[sqrt(b), inf)` and its perturbative eigenvalue expansion, the reduced
//! modulation ODE systems for the stable and excited melting regimes, a
//! front-tracking solver for the free-boundary heat problem itself, and the
//! extinction-rate fits tying everything together.

pub mod basis;
pub mod dense;
pub mod error;
pub mod gamma;
pub mod grid;
pub mod modulation;
pub mod operators;
pub mod output;
pub mod parallel;
pub mod quadrature;
pub mod rates;
pub mod spectral;
pub mod stefan;
pub mod svg;
pub mod tridiag;
pub mod verify;

pub use error::{MeltError, Result};
