//! Functional grasp synthesis for articulated robot hands.
//!
//! A single demonstrated grasp is turned into fine-grained contact targets
//! (object contact map, per-segment contact regions, anchor regions), carried
//! over to other instances of the same object category through a deformable
//! template, mapped onto a robot hand's kinematics and then optimized. The
//! crate also ships the evaluation metrics used to score the results and the
//! object pose/scale estimator used when only a partial point cloud is known.
//!
//! All lengths are centimeters and all angles radians.

pub mod error;
pub mod contact;
pub mod correspondence;
pub mod fit;
pub mod geometry;
pub mod hand;
pub mod io;
pub mod metrics;
pub mod optimize;
pub mod pipeline;
pub mod retarget;
pub mod synth;

pub use error::{Error, Result};
