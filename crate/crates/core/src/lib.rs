//! Deterministic discrete-time 2-D swarm simulator: decentralized
//! subgoal-based path formation with light/message-based task allocation,
//! chain-straightening alignment passes, an A* baseline and a batch
//! evaluation harness.

pub mod agent;
pub mod baseline;
pub mod comms;
pub mod geom;
pub mod harness;
pub mod params;
pub mod sim;
pub mod world;
