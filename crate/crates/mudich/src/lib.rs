//! mudich: dichotomy analysis for nonautonomous difference equations
//! `x_{n+1} = A_n x_n` on R^d.
//!
//! The library is organized around a time-rescaling transform: a system with
//! contraction/expansion measured against a general discrete growth rate mu
//! is converted into one with exponential rates by sampling the evolution
//! family at the indices where mu crosses the levels of a second rate eta.
//! On top of that sit
//!
//! - [`growth`]: discrete growth rates, interpolants and ratio audits,
//! - [`system`]: matrix sequences, cached evolution families, time-indexed
//!   norm and projection families,
//! - [`rescale`]: the rescaled system Q and its index map tau,
//! - [`dichotomy`]: finite-sample certificates for ordinary / mu /
//!   exponential dichotomies, bounded-growth audits, projection transport
//!   and adapted norms,
//! - [`spectrum`]: dichotomy spectra (direct and via rescaling), resonance
//!   and band/gap checkers,
//! - [`linearize`]: conjugacies between a perturbed system and its linear
//!   part, built from dichotomy-weighted Green sums,
//! - [`scenario`] / [`report`] / [`cli`]: JSON scenario ingestion, report
//!   emission and the `mudich` command-line front end.
//!
//! See the crate examples for one runnable walkthrough per capability.

pub mod cli;
pub mod dichotomy;
pub mod error;
pub mod growth;
pub mod linearize;
pub mod report;
pub mod rescale;
pub mod scenario;
pub mod spectrum;
pub mod system;

pub use error::{Error, Result};
pub use growth::GrowthRate;
pub use system::{EvolutionFamily, NormFamily, OperatorSequence, ProjectionFamily};
