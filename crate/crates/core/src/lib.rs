//! Task-parameterized Gaussian mixture motion models.
//!
//! The library learns a motion model from a handful of demonstrations, each
//! recorded together with the coordinate frames (start pose, goal pose, ...)
//! that parameterize the task. Demonstrations are projected into every frame,
//! a Gaussian mixture is fitted jointly across the frames, and new situations
//! are handled by transforming the per-frame Gaussians into the global frame
//! and fusing them. Reproductions come out of Gaussian mixture regression.
//!
//! On top of the model sits an augmentation loop: candidate demonstrations are
//! synthesized (noise injection, random-frame reproduction, or both), the
//! model is retrained with each candidate, and the candidate is kept only when
//! it lowers the reproduction cost on the expert (or a held-out validation)
//! set.

pub mod augment;
pub mod dataset;
pub mod error;
mod util;
pub mod frames;
pub mod gmm;
pub mod metrics;
pub mod tpgmm;

pub use error::{Error, Result};
