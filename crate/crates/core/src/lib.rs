//! Polytopic robust control invariant (RCI) sets and invariance-inducing
//! state-feedback gains computed directly from one noisy state-input
//! trajectory of an unknown linear system.
//!
//! The pipeline is:
//!
//! 1. [`sim`] generates data (or it is loaded with [`dataset::Trajectory::from_csv`]).
//! 2. [`dataset`] arranges it into data matrices and the lifted band
//!    description of the feasible model set.
//! 3. [`lmi`] assembles affine constraints and the S-procedure LMIs over a
//!    flat decision vector.
//! 4. [`sdp`] maximizes log det of the set matrix subject to those LMIs.
//! 5. [`synthesis`] orchestrates the one-step and iterative schemes.
//! 6. [`verify`] re-checks every guarantee against the true system and
//!    sampled feasible models.

pub mod dataset;
pub mod error;
pub mod geometry;
pub mod linalg;
pub mod lmi;
pub mod sdp;
pub mod sim;
pub mod synthesis;
pub mod verify;

pub use error::{Error, Result};
