//! Deterministic discrete-event simulation of the asynchronous network.

pub mod channel;
pub mod cycles;
pub mod scheduler;
pub mod trace;
pub mod world;

pub use world::{Actor, LayerCounts, SimWorld, Stop, WorldError, WorldSpec};
