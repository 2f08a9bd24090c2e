//! Message codec and the sender/receiver state machines.
//!
//! Nothing in here knows about clocks or concrete pools: a party is driven
//! by an external scheduler and touches the pool only through
//! [`PoolAccess`].

mod bits;
mod party;

pub use bits::{chunk_message, chunk_to_int, int_to_chunk, max_packet_size, BitString, Chunk};
pub use party::{
    negotiate_role, swap_roles, PartyRole, PartyState, Phase, PoolAccess, ReadOutcome, TerminationReason,
    DEFAULT_OVER_CONSUME,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::{SimTime, TICKS_PER_SEC};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("message length {len} is not a multiple of packet size {pkt_size}")]
    NonDivisibleMessage { len: usize, pkt_size: u32 },
    #[error("message is empty")]
    EmptyMessage,
    #[error("value {value} does not fit in {width} bits")]
    ValueOutOfRange { value: u64, width: u32 },
    #[error("pool of {0} resources is too small (need at least 3)")]
    PoolTooSmall(u64),
    #[error("packet size {0} must be between 1 and 63 bits")]
    InvalidPacketSize(u32),
    #[error("invalid bit character {0:?}")]
    InvalidBit(char),
    #[error("pool_size {pool_size} < 2^{pkt_size} + 1: the release-all signal would be ambiguous")]
    PoolBelowSignalBound { pool_size: u64, pkt_size: u32 },
    #[error("interval {name} must be positive and finite, got {value}")]
    InvalidInterval { name: &'static str, value: f64 },
    #[error("negotiation tie: held exactly half of a {pool_size}-resource pool")]
    NegotiationTie { pool_size: u64 },
    #[error("pool refused to release {requested} held resources (released {released})")]
    PoolAccessFailure { requested: u64, released: u64 },
    #[error("role swap unavailable: a party is still mid-transmission")]
    RoleSwapUnavailable,
    #[error("operation requires role {expected:?}, party is {actual:?}")]
    WrongRole { expected: PartyRole, actual: PartyRole },
}

/// Parameters both colluding parties agree on ahead of time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolParams {
    pub pool_size: u64,
    pub pkt_size: u32,
    /// Seconds.
    pub negotiate_interval: f64,
    /// Seconds.
    pub pulse_interval: f64,
    pub message: BitString,
}

impl ProtocolParams {
    pub fn validate(&self) -> Result<(), ProtocolError> {
        if self.pkt_size == 0 || self.pkt_size > 62 {
            return Err(ProtocolError::InvalidPacketSize(self.pkt_size));
        }
        if self.pool_size < (1u64 << self.pkt_size) + 1 {
            return Err(ProtocolError::PoolBelowSignalBound {
                pool_size: self.pool_size,
                pkt_size: self.pkt_size,
            });
        }
        if !self.message.len().is_multiple_of(self.pkt_size as usize) {
            return Err(ProtocolError::NonDivisibleMessage {
                len: self.message.len(),
                pkt_size: self.pkt_size,
            });
        }
        for (name, value) in [
            ("negotiate_interval", self.negotiate_interval),
            ("pulse_interval", self.pulse_interval),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(ProtocolError::InvalidInterval { name, value });
            }
        }
        Ok(())
    }

    pub fn chunk_count(&self) -> usize {
        self.message.len() / self.pkt_size as usize
    }

    /// Largest count the sender may put on the wire for a data packet.
    pub fn max_wire_value(&self) -> u64 {
        1u64 << self.pkt_size
    }

    /// Minimum count a party must hold to claim the sender role.
    pub fn majority(&self) -> u64 {
        self.pool_size / 2 + 1
    }

    pub fn negotiate_ticks(&self) -> SimTime {
        SimTime::from_secs_f64(self.negotiate_interval)
    }

    /// Start of pulse slot `i` (sender acts here).
    pub fn slot_start(&self, start: SimTime, i: usize) -> SimTime {
        start + self.negotiate_ticks() + SimTime::from_secs_f64(i as f64 * self.pulse_interval)
    }

    /// Half-way through pulse slot `i` (receiver reads here).
    pub fn read_time(&self, start: SimTime, i: usize) -> SimTime {
        self.slot_start(start, i) + self.half_pulse()
    }

    pub fn half_pulse(&self) -> SimTime {
        SimTime::from_secs_f64(self.pulse_interval / 2.0)
    }
}

/// Next shared start instant: the smallest whole multiple of the
/// schedule period strictly greater than `now`, where the period is the
/// negotiation plus transmission time rounded up to a whole second.
pub fn compute_start_time(now: SimTime, params: &ProtocolParams) -> SimTime {
    let span = params.negotiate_ticks() + SimTime::from_secs_f64(params.chunk_count() as f64 * params.pulse_interval);
    let period_secs = span.ticks().div_ceil(TICKS_PER_SEC).max(1);
    let period = period_secs * TICKS_PER_SEC;
    SimTime((now.ticks() / period + 1) * period)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(neg: f64, pulse: f64, bits: usize) -> ProtocolParams {
        ProtocolParams {
            pool_size: 200,
            pkt_size: 5,
            negotiate_interval: neg,
            pulse_interval: pulse,
            message: BitString::from_bits(vec![false; bits]),
        }
    }

    #[test]
    fn start_time_examples() {
        let p = params(2.0, 0.714, 35);
        assert_eq!(compute_start_time(SimTime::ZERO, &p), SimTime::from_secs_f64(7.0));
        assert_eq!(
            compute_start_time(SimTime::from_secs_f64(7.0), &p),
            SimTime::from_secs_f64(14.0)
        );
        assert_eq!(
            compute_start_time(SimTime::from_secs_f64(13.2), &p),
            SimTime::from_secs_f64(14.0)
        );
    }

    #[test]
    fn start_time_exact_sevenths_do_not_round_up() {
        let p = params(2.0, 5.0 / 7.0, 35);
        assert_eq!(compute_start_time(SimTime::ZERO, &p), SimTime::from_secs_f64(7.0));
        let chrome = params(0.1, 0.5 / 7.0, 35);
        assert_eq!(compute_start_time(SimTime::ZERO, &chrome), SimTime::from_secs_f64(1.0));
    }

    #[test]
    fn validation() {
        assert!(params(2.0, 0.7, 35).validate().is_ok());
        let mut p = params(2.0, 0.7, 35);
        p.pool_size = 32;
        assert!(matches!(p.validate(), Err(ProtocolError::PoolBelowSignalBound { .. })));
        p.pool_size = 33;
        assert!(p.validate().is_ok());
        assert!(matches!(
            params(2.0, 0.7, 34).validate(),
            Err(ProtocolError::NonDivisibleMessage { .. })
        ));
        assert!(matches!(
            params(0.0, 0.7, 35).validate(),
            Err(ProtocolError::InvalidInterval { .. })
        ));
        assert!(matches!(
            params(1.0, f64::NAN, 35).validate(),
            Err(ProtocolError::InvalidInterval { .. })
        ));
    }

    #[test]
    fn slot_schedule() {
        let p = params(2.0, 5.0 / 7.0, 35);
        let start = SimTime::from_secs_f64(7.0);
        assert_eq!(p.slot_start(start, 0), SimTime::from_secs_f64(9.0));
        assert_eq!(p.slot_start(start, 7), SimTime::from_secs_f64(14.0));
        for i in 0..7 {
            assert_eq!(p.read_time(start, i) - p.slot_start(start, i), p.half_pulse());
        }
    }
}
