//! Software twin of a beetle-based insect–computer hybrid robot.
//!
//! Stimulation of the subalar flight muscles is turned into muscle
//! activation ([`stimulus`]), mapped to stroke-averaged attitude and force
//! changes ([`dose`]) and integrated by a 6-DOF flight model ([`dynamics`]).
//! Emulated instruments ([`sensors`]) feed the analysis chain ([`pipeline`])
//! and the statistics battery ([`stats`]). The base station and backpack talk
//! over a framed binary protocol ([`protocol`]); [`controller`] closes the loop
//! and [`experiment`] drives batches, live sessions and replays.

pub mod controller;
pub mod dose;
pub mod dynamics;
pub mod experiment;
pub mod geometry;
pub mod pipeline;
pub mod protocol;
pub mod sensors;
pub mod stats;
pub mod stimulus;
pub mod wing;

pub use geometry::{EulerBody, UnitQuat, Vec3};
pub use stimulus::{StimCommand, Target};
