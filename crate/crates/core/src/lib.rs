//! Deterministic simulator for covert channels built on shared,
//! limited browser resource pools.
//!
//! Two colluding contexts talk by consuming and releasing resources from a
//! pool that the browser does not partition between them. The crate
//! provides the wire protocol, a pool model with drift and delayed
//! feedback, a virtual-time event scheduler with background noise, and the
//! experiment harness that runs trials against browser presets and
//! partitioning defenses.

pub mod experiments;
pub mod pool;
pub mod protocol;
pub mod scenario_file;
pub mod sim;
pub mod time;

pub use pool::{ContextId, DriftModel, FeedbackModel, PoolScope, ResourcePool};
pub use protocol::{BitString, Chunk, PartyRole, PartyState, ProtocolParams};
pub use time::SimTime;
