//! Forward and partial inverse spectral problems for Sturm-Liouville
//! operators on metric trees with equal-length edges and σ ∈ L₂ potentials
//! (q = σ′ taken distributionally, handled through the quasi-derivative
//! y^[1] = y′ − σy).
//!
//! The forward path builds characteristic functions recursively over the
//! tree, finds eigenvalues by scanning in ρ = √λ, and numbers them against
//! the zero-potential branch structure ρ ≈ n + α_k. The inverse path
//! reconstructs the unknown subtree's characteristic functions from a
//! subspectrum via a moment system over L₂(0, lπ) ⊕ L₂(0, lπ), then recovers
//! potentials edge by edge with two-spectra fits.

pub mod cauchy;
pub mod charfn;
pub mod error;
pub mod interval;
pub mod moment;
pub mod optim;
pub mod par;
pub mod potential;
pub mod presets;
pub mod problem;
pub mod report;
pub mod spectrum;
pub mod tree;
pub mod trigpoly;
pub mod util;

pub use error::{Error, Result};
