//! Meta-learned physics-informed surrogate for single-particle lithium-ion
//! cell simulation, with evolutionary inverse inference of degradation
//! scaling factors from measured discharge curves.
//!
//! The crate is organized bottom-up:
//!
//! - [`model`] — cell parameters, nondimensionalization, scaling factors.
//! - [`series`] — closed-form constant-flux sphere diffusion series (oracle).
//! - [`solver`] — finite-volume Crank–Nicolson reference solver.
//! - [`basis`] — randomized single-layer feature basis with analytic
//!   derivatives.
//! - [`fit`] — physics-informed least-squares fine-tuning of basis weights.
//! - [`ocp`] — open-circuit potential curves.
//! - [`voltage`] — terminal voltage synthesis and cutoff handling.
//! - [`es`] — evolution strategies (separable NES and CMA-ES).
//! - [`meta`] — Baldwinian meta-learning of basis-distribution genomes.
//! - [`inverse`] — CMA-ES inference of cycle scaling factors from
//!   voltage–time curves.
//! - [`data`] — cycler CSV ingestion and discharge-segment extraction.
//! - [`artifacts`] — run directories, manifests, and serialized outputs.

pub mod artifacts;
pub mod basis;
pub mod config;
pub mod data;
pub mod error;
pub mod es;
pub mod fit;
pub mod inverse;
pub mod meta;
pub mod metrics;
pub mod model;
pub mod ocp;
pub mod seeds;
pub mod series;
pub mod solver;
pub mod voltage;

pub use error::{Error, Result};
