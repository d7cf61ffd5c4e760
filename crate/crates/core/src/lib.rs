//! Rigid registration of a 3D model point set to 2D image observations under
//! a pinhole camera, by expectation conditional maximisation over a Gaussian
//! mixture centred on the projected model points.
//!
//! The pose CM-step is pluggable: an exhaustive-per-coordinate grid search
//! ([`solvers::traversal_cm_step`]) or a closed-form least-squares fit on
//! hardened, back-projected correspondences ([`solvers::lse_cm_step`]).

mod clock;
pub mod ecm;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod registration;
pub mod solvers;
pub mod synthdata;

pub use error::{Error, Result};
pub use geometry::{CameraModel, EulerAngles, Point2, Point3, RigidTransform};
pub use registration::{register, RegistrationConfig, RegistrationResult};
pub use solvers::Solver;
