//! The HiL server and everything that runs around it.
//!
//! [`server::HilServer`] owns the world and its tick loop and exposes them on
//! a message bus plus a control channel. The plugin [`services`] (sensor
//! interface, vehicle interface, scenario configurator, ground truth, map)
//! attach over that channel and can be killed and restarted independently.
//! [`harness`] measures topic cadence, compares it against reference tables
//! and runs repeated-lap track experiments.

pub mod config;
pub mod server;
pub mod sim;
pub mod topics;
pub mod pcmap;
pub mod services;
pub mod harness;
