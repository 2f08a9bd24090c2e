//! Virtual-time discrete-event machinery and background noise.

mod noise;
mod rng;
mod scheduler;

pub use noise::{spawn_noise, NoiseEvent, NoiseProcess, NoiseProfile, NoiseTab};
pub use rng::{derive_seed, sample, stream_rng, DistributionSpec, RngState, SimRng};
pub use scheduler::{EventHandle, EventQueue, Scheduler, VirtualClock, DEFAULT_EVENT_CAP};

use thiserror::Error;

use crate::time::SimTime;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("cannot schedule at {at}: clock is already at {now}")]
    PastEvent { at: SimTime, now: SimTime },
    #[error("event limit of {0} exceeded")]
    EventLimitExceeded(u64),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("invalid noise profile: {0}")]
    InvalidNoise(String),
}
