//! Complementarity-based rigid-body motion prediction.
//!
//! Bodies touching the ground or each other exchange a single wrench impulse
//! applied at an equivalent contact point (ECP) that the solver places inside
//! the body's convex hull. Friction lives on an ellipsoidal limit surface, and
//! every contact pair is one small mixed complementarity problem per step.
//! On top of the stepper sit a sampling-based planar pushing planner, a
//! sphere-based whole-body avoidance projection for serial arms and a scene
//! session that ties them together.

pub mod avoidance;
pub mod contact;
pub mod cp;
pub mod error;
pub mod geometry;
pub mod log;
pub mod math;
pub mod planner;
pub mod protocol;
pub mod scene;
pub mod session;
pub mod stepper;

pub use error::{Error, Result};
