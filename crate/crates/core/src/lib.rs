//! Discrete-event simulator for AODV and an energy-aware variant that
//! signals battery level through HELLO acknowledgment timing.

pub mod aodv;
pub mod energy;
pub mod experiment;
pub mod kernel;
pub mod metrics;
pub mod model;
pub mod pcaodv;
pub mod scenario;
pub mod world;

pub use model::{NodeId, Protocol};
pub use world::{World, WorldSetup};
