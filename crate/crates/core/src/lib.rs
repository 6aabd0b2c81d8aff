//! Exact-diagonalization laboratory for thermalization in a driven XY spin
//! chain: quench dynamics, canonical ensembles, entanglement diagnostics,
//! level statistics and Lindblad decoherence.

extern crate openblas_src;

pub mod dynamics;
pub mod error;
pub mod hamiltonian;
pub mod initial;
pub mod linalg;
pub mod observables;
pub mod qcore;
pub mod runner;
pub mod spectra;
pub mod thermal;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
