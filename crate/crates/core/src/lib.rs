//! Time-optimized pick-and-place motion planning for suction-gripped payloads.
//!
//! The crate combines an analytic multi-cup suction failure model, a
//! lumped-parameter suction-cup simulator, a self-supervised data pipeline,
//! a small learned failure classifier with exact input gradients, and a
//! trust-region SQP planner with a shrinking time horizon.
//!
//! The numeric core is generic over the scalar type (`scalar::Real`, either
//! `f32` or `f64`); the aliases below fix the default double-precision build
//! used by the CLI, the file formats, and the benchmark harness.

pub mod error;
pub mod kinematics;
pub mod mlp;
pub mod pipeline;
pub mod profile;
pub mod qp;
pub mod sim;
pub mod sparse;
pub mod suction;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Real;

/// Default scalar for the CLI, the file formats, and the benchmarks.
pub type Scalar = f64;

/// Concrete aliases for the default build.
pub type RobotModel64 = kinematics::RobotModel<Scalar>;
pub type Pose64 = kinematics::Pose<Scalar>;
