//! Kinematics, controlled evolution and special multi-flag verification for
//! an articulated arm of `n + 1` unit segments in `R^{k+1}`, the
//! generalization of the car with `n` trailers.

pub mod arm_model;
pub mod dynamics;
pub mod error;
pub mod flag_verifier;
pub mod hyperspherical;
pub mod sampling;
pub mod span;
pub mod sweep;
pub mod vector_fields;

pub use arm_model::{gamma, gamma_inverse, AngularConfig, ArmDims, CartesianConfig};
pub use error::{Error, Result};
