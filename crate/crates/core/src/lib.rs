//! Spectral-Galerkin laboratory for parabolic SPDEs
//!
//! ```text
//! du + (A(t)u + F(t,u)) dt + Σ_k B_k(t)u dw^k = 0
//! ```
//!
//! The crate discretises such equations in the eigenbasis of a positive
//! self-adjoint operator `Â`, integrates sample paths, and evaluates the
//! functionals that govern backward uniqueness and the long-time behaviour of
//! the spectral quotient `⟨Ãu,u⟩/|u|²`, where `Ã = A − ½ Σ_k B_kᵀB_k`.
//!
//! Modules:
//! - [`spectral`]: bases, operator families, `Ã`, compressions, norms, spectra.
//! - [`assumptions`]: numerical certificates for the structural hypotheses.
//! - [`integrator`]: Brownian drivers and time-stepping schemes.
//! - [`diagnostics`]: quotients, martingale densities, bound processes,
//!   envelopes, hitting times, Galerkin gaps, spectral-limit verdicts.
//! - [`systems`]: ready-made operator families with closed-form oracles.
//! - [`runner`]: configuration, ensembles, persistence and reports.

pub mod assumptions;
pub mod diagnostics;
pub mod error;
pub mod integrator;
pub mod spectral;
pub mod runner;
pub mod systems;

pub use error::{Error, Result};
pub use spectral::{
    assemble_tilde_a, commutator_c, galerkin_compress, inner_h, inner_v, operator_norm_v_vprime,
    spectrum, Matrix, OperatorFamily, SpectralBasis, StateVector, TildeOperator, TimeMatrix, Vector,
};
