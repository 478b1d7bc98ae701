//! Decentralized encirclement of a moving 3D target by a ring of kinematic
//! point robots.
//!
//! Each robot runs only local laws: a feedback transformation to cylindrical
//! coordinates around the target ([`geometry`]), radial/height/phase control
//! ([`control`]) driven by the phases of its two ring neighbors
//! ([`phase`]), consensus-based estimation of the target pose and of the
//! collision-safety bound ([`estimation`]), all exchanged over a simulated
//! multi-hop network ([`network`]). The [`sim`] module closes the loop and logs
//! everything needed to audit convergence ([`sim::metrics`]) and safety
//! ([`safety`]); [`verify`] packages the acceptance checks.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod control;
pub mod error;
pub mod estimation;
pub mod geometry;
pub mod network;
pub mod phase;
pub mod safety;
pub mod sim;
pub mod verify;

pub use control::{ControllerMode, GainSet, LambdaShape, SafetyParams};
pub use error::{Error, Result};
pub use geometry::{CylCoords, CylVelocity, Mat3, TargetFrame, Vec3};
pub use phase::{RingSeam, RingView};
pub use sim::log::SimLog;
pub use sim::metrics::Summary;
pub use sim::scenario::Scenario;
pub use sim::{run, sweep, RunOptions};
