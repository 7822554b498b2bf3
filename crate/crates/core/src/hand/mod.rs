//! Articulated hands: spec files, coupling, forward kinematics, Jacobians
//! and world-space signed distance to the posed links.

pub mod builtin;
mod closing;
mod kinematics;
mod spec;

pub use closing::{close_hand, ClosingOptions, Closure};
pub use kinematics::{forward_kinematics, Grasp, GraspGradient, LinkForces, PosedHand};
pub use spec::{
    Anchor, ClampEvent, Coupling, Fingertip, HandSpec, HandSpecRecord, Joint, Link,
    HANDSPEC_SCHEMA,
};
