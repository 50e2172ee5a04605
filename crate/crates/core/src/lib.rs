//! Trivialized kinetic Langevin diffusion models on compact matrix Lie groups.
//!
//! Data live on a group `G` (tori, SO(n), U(n) and their products). The
//! noising process augments each point with a momentum `ξ` in the fixed Lie
//! algebra and runs underdamped Langevin dynamics on `G × 𝔤`; generation runs
//! the learned time reversal. All integrators move `g` by exact matrix
//! exponentials, so iterates stay on the group without projection.

pub mod datasets;
pub mod dynamics;
pub mod error;
pub mod eval;
pub mod lie;
pub mod likelihood;
pub mod losses;
pub mod net;
pub mod par;
pub mod rng;
pub mod score;

pub use error::{Error, Result};
