//! Packet-level simulator for inter-flow XOR network coding in wireless mesh networks.
//!
//! Four link-layer variants share one node state machine: plain 802.11-style forwarding,
//! COPE, BEND, and FlexONC.

pub mod coding;
pub mod error;
pub mod model;
pub mod node;
pub mod phy;
pub mod routing;
pub mod scenario;
pub mod sim;

pub use coding::Protocol;
pub use model::{NodeId, PayloadId};
