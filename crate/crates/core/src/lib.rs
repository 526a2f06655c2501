//! Simulation core of the desk-scale hardware-in-the-loop harness.
//!
//! The crate is organized by subsystem:
//!
//! - [`world`]: actors, the fixed-step clock and the tick loop
//! - [`road`]: the lane-graph road network
//! - [`actuation`]: command filtering, longitudinal control modes, steering
//!   and vehicle status
//! - [`sensors`]: config-driven sensor kit (LiDAR, camera, navigation)
//! - [`groundtruth`]: detected, tracked and predicted objects
//! - [`scenario`]: statics, traffic agents, sources, sinks, pedestrian flows
//!   and weather
//! - [`sync`]: Euler-extrapolated replication of actors onto secondary worlds
//! - [`frame`]: the per-tick snapshot message handed to services

pub mod actuation;
pub mod codec;
pub mod frame;
pub mod geometry;
pub mod groundtruth;
pub mod road;
pub mod scenario;
pub mod sensors;
pub mod sync;
pub mod world;

pub use geometry::{Pose, Vec3};
pub use road::{LaneId, RoadError, RoadNetwork};
pub use world::{
    Actor, ActorId, ActorKind, ManagedBy, SimClock, Snapshot, TickMode, World, WorldError,
    WorldMailbox,
};
