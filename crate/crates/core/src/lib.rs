//! Bias-aware optimal experimental design for linear functionals `C theta`
//! of an unknown element `theta` of a reproducing kernel Hilbert space.
//!
//! The crate is organised bottom-up:
//!
//! * [`features`] builds explicit feature maps `Phi` and the prior `V0`.
//! * [`functionals`] builds the target functionals `C` and bias quantities.
//! * [`estimators`] computes estimates and information matrices.
//! * [`confidence`] turns information matrices into confidence ellipsoids.
//! * [`design`] optimizes query allocations.

pub mod confidence;
pub mod design;
pub mod error;
pub mod estimators;
pub mod features;
pub mod functionals;
pub mod linalg;

pub use error::{OedError, Result};
