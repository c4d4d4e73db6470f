//! Physics-regularized diffusion refinement of articulated-body motion.
//!
//! The crate covers rigid-body kinematics and dynamics in generalized
//! coordinates, mesh-derived inertia, a residual-shifting diffusion sampler
//! with an MLP denoiser, training losses with a Euler-Lagrange penalty,
//! variance propagation through the reverse chain, and pose metrics.

pub mod denoiser;
pub mod diffusion;
pub mod dynamics;
pub mod error;
pub mod inertia;
pub mod kinematics;
pub mod metrics;
pub mod motion;
pub mod training;
pub mod uncertainty;

pub use error::{Error, Result};
pub use motion::Motion;
