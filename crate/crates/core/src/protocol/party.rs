use serde::{Deserialize, Serialize};

use super::{chunk_message, int_to_chunk, BitString, Chunk, ProtocolError, ProtocolParams};
use crate::time::SimTime;

/// Extra resources requested beyond the expected limit on every
/// consume-all, so a silently grown limit is absorbed by the sender.
pub const DEFAULT_OVER_CONSUME: u64 = 8;

/// Synchronous view of a pool from one party's context.
pub trait PoolAccess {
    /// Attempts to take `n` resources; returns how many were granted.
    fn consume(&mut self, n: u64) -> u64;
    /// Gives back up to `n` held resources; returns how many were released.
    fn release(&mut self, n: u64) -> u64;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PartyRole {
    Unassigned,
    Sender,
    Receiver,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    WaitStart,
    Race,
    HoldOrRelease,
    Pulse,
    Terminated,
    RoleSwapped,
}

/// Why a party left the data phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TerminationReason {
    /// Sender put its release-all on the wire.
    SentAll,
    /// Receiver collected the agreed number of packets.
    Complete,
    /// Receiver read more than any packet can encode.
    ReleaseAll(u64),
    /// Receiver read nothing.
    Silence,
}

/// Result of one receiver read.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReadOutcome {
    Recorded { consumed: u64, chunk: Chunk },
    Terminated { consumed: u64, reason: TerminationReason },
}

/// Majority rule: strictly more than half the pool makes the sender,
/// strictly less the receiver. Exactly half is a tie.
pub fn negotiate_role(held: u64, pool_size: u64) -> Result<PartyRole, ProtocolError> {
    let doubled = held * 2;
    match doubled.cmp(&pool_size) {
        std::cmp::Ordering::Greater => Ok(PartyRole::Sender),
        std::cmp::Ordering::Less => Ok(PartyRole::Receiver),
        std::cmp::Ordering::Equal => Err(ProtocolError::NegotiationTie { pool_size }),
    }
}

/// One colluding party.
#[derive(Debug, Clone, PartialEq)]
pub struct PartyState {
    pub role: PartyRole,
    pub held: u64,
    pub chunk_index: usize,
    pub recv_buffer: BitString,
    pub start_time: SimTime,
    pub phase: Phase,
    params: ProtocolParams,
    chunks: Vec<Chunk>,
    /// Packets the receiver expects before finishing on its own. `None`
    /// means read until an in-band termination signal.
    expected_chunks: Option<usize>,
    over_consume: u64,
    termination: Option<TerminationReason>,
}

impl PartyState {
    /// A party that will transmit `params.message` if it wins the race.
    /// An empty message is allowed: such a sender emits only the
    /// termination signal.
    pub fn new(params: ProtocolParams) -> Result<Self, ProtocolError> {
        params.validate()?;
        let chunks = if params.message.is_empty() {
            Vec::new()
        } else {
            chunk_message(&params.message, params.pkt_size)?
        };
        let expected = Some(chunks.len());
        Ok(Self {
            role: PartyRole::Unassigned,
            held: 0,
            chunk_index: 0,
            recv_buffer: BitString::new(),
            start_time: SimTime::ZERO,
            phase: Phase::WaitStart,
            params,
            chunks,
            expected_chunks: expected,
            over_consume: DEFAULT_OVER_CONSUME,
            termination: None,
        })
    }

    pub fn with_start_time(mut self, start: SimTime) -> Self {
        self.start_time = start;
        self
    }

    pub fn with_over_consume(mut self, extra: u64) -> Self {
        self.over_consume = extra;
        self
    }

    /// Overrides how many packets this party expects when receiving.
    pub fn with_expected_chunks(mut self, expected: Option<usize>) -> Self {
        self.expected_chunks = expected;
        self
    }

    pub fn params(&self) -> &ProtocolParams {
        &self.params
    }

    pub fn chunks(&self) -> &[Chunk] {
        &self.chunks
    }

    pub fn expected_chunks(&self) -> Option<usize> {
        self.expected_chunks
    }

    pub fn termination(&self) -> Option<TerminationReason> {
        self.termination
    }

    pub fn is_terminated(&self) -> bool {
        self.phase == Phase::Terminated
    }

    fn require(&self, expected: PartyRole) -> Result<(), ProtocolError> {
        if self.role != expected {
            return Err(ProtocolError::WrongRole {
                expected,
                actual: self.role,
            });
        }
        Ok(())
    }

    fn terminate(&mut self, reason: TerminationReason) {
        self.phase = Phase::Terminated;
        self.termination = Some(reason);
    }

    // ---- negotiation ----

    /// Size of the opening race batch: just enough to own a majority.
    pub fn race_request(&mut self) -> u64 {
        self.phase = Phase::Race;
        self.params.majority().saturating_sub(self.held)
    }

    /// Records the race grant and settles the role from the majority rule.
    pub fn on_race_grant(&mut self, granted: u64) -> Result<PartyRole, ProtocolError> {
        self.held += granted;
        let role = negotiate_role(self.held, self.params.pool_size)?;
        self.role = role;
        self.phase = Phase::HoldOrRelease;
        Ok(role)
    }

    /// Request that takes every unheld resource, plus the over-consume margin.
    pub fn consume_all_request(&self) -> u64 {
        self.params.pool_size.saturating_sub(self.held) + self.over_consume
    }

    pub fn on_consumed(&mut self, granted: u64) {
        self.held += granted;
    }

    /// Hands back everything; returns the count to release.
    pub fn release_all(&mut self) -> u64 {
        std::mem::take(&mut self.held)
    }

    /// Books a release the pool has already performed.
    pub fn confirm_release(&mut self, requested: u64, released: u64) -> Result<(), ProtocolError> {
        if released != requested {
            return Err(ProtocolError::PoolAccessFailure { requested, released });
        }
        Ok(())
    }

    /// Race, then hold (sender) or release (receiver), against an
    /// immediate pool.
    pub fn negotiate(&mut self, pool: &mut impl PoolAccess) -> Result<PartyRole, ProtocolError> {
        let want = self.race_request();
        let got = pool.consume(want);
        let role = self.on_race_grant(got)?;
        match role {
            PartyRole::Sender => self.claim_pool(pool),
            _ => {
                let n = self.release_all();
                let released = pool.release(n);
                self.confirm_release(n, released)?;
            }
        }
        Ok(role)
    }

    /// Sender keeps consuming until a batch comes back empty (bounded).
    pub fn claim_pool(&mut self, pool: &mut impl PoolAccess) {
        for _ in 0..MAX_CLAIM_ROUNDS {
            let got = pool.consume(self.consume_all_request());
            self.held += got;
            if got == 0 {
                break;
            }
        }
    }

    // ---- data phase: sender ----

    /// Count to release for the current packet once the sender holds the
    /// pool, or `None` when every packet is out and the release-all is due.
    pub fn next_wire_count(&self) -> Option<u64> {
        self.chunks.get(self.chunk_index).map(|c| c.to_int() + 1)
    }

    /// Called after the slot's consume-all has been granted. Returns the
    /// number of resources to release: the packet value plus one, or
    /// everything held for the termination signal.
    pub fn sender_release_count(&mut self) -> Result<u64, ProtocolError> {
        self.require(PartyRole::Sender)?;
        self.phase = Phase::Pulse;
        Ok(match self.next_wire_count() {
            Some(count) => count.min(self.held),
            None => self.held,
        })
    }

    /// Books the release of one slot and advances to the next packet.
    pub fn sender_after_release(&mut self, released: u64) {
        self.held -= released;
        if self.chunk_index < self.chunks.len() {
            self.chunk_index += 1;
        } else {
            self.terminate(TerminationReason::SentAll);
        }
    }

    /// One full sender slot against an immediate pool. The slot after the
    /// last packet releases everything instead.
    pub fn sender_pulse(&mut self, pool: &mut impl PoolAccess) -> Result<u64, ProtocolError> {
        self.require(PartyRole::Sender)?;
        if self.chunk_index < self.chunks.len() {
            let got = pool.consume(self.consume_all_request());
            self.on_consumed(got);
        }
        let count = self.sender_release_count()?;
        let released = pool.release(count);
        self.confirm_release(count, released)?;
        self.sender_after_release(released);
        Ok(released)
    }

    // ---- data phase: receiver ----

    /// Request for a receiver read: as many as the pool could ever hold.
    pub fn receiver_read_request(&self) -> u64 {
        self.params.pool_size + self.over_consume
    }

    /// Interprets a read of `consumed` resources. The caller must release
    /// everything held afterwards.
    pub fn receiver_on_read(&mut self, consumed: u64) -> Result<ReadOutcome, ProtocolError> {
        self.require(PartyRole::Receiver)?;
        self.phase = Phase::Pulse;
        self.held += consumed;
        if consumed == 0 || consumed > self.params.max_wire_value() {
            let reason = if consumed == 0 {
                TerminationReason::Silence
            } else {
                TerminationReason::ReleaseAll(consumed)
            };
            self.terminate(reason);
            return Ok(ReadOutcome::Terminated { consumed, reason });
        }
        let chunk = int_to_chunk(consumed - 1, self.params.pkt_size)?;
        self.recv_buffer.extend_from(chunk.bits());
        self.chunk_index += 1;
        Ok(ReadOutcome::Recorded { consumed, chunk })
    }

    /// True once the receiver holds every packet it was told to expect.
    pub fn receiver_has_all(&self) -> bool {
        self.expected_chunks.is_some_and(|n| self.chunk_index >= n)
    }

    /// Ends a receiver that has every expected packet.
    pub fn receiver_finish(&mut self) {
        if self.phase != Phase::Terminated {
            self.terminate(TerminationReason::Complete);
        }
    }

    /// One receiver read against an immediate pool.
    pub fn receiver_pulse(&mut self, pool: &mut impl PoolAccess) -> Result<ReadOutcome, ProtocolError> {
        let consumed = pool.consume(self.receiver_read_request());
        let outcome = self.receiver_on_read(consumed)?;
        let n = self.release_all();
        let released = pool.release(n);
        self.confirm_release(n, released)?;
        if matches!(outcome, ReadOutcome::Recorded { .. }) && self.receiver_has_all() {
            self.receiver_finish();
        }
        Ok(outcome)
    }
}

const MAX_CLAIM_ROUNDS: usize = 16;

/// Exchanges roles after a finished transmission. The old receiver sends
/// its own message next; the new receiver reads until the termination
/// signal since it has no agreed length for the return leg.
pub fn swap_roles(sender: PartyState, receiver: PartyState) -> Result<(PartyState, PartyState), ProtocolError> {
    let finished = |p: &PartyState, role| p.role == role && p.phase == Phase::Terminated && p.held == 0;
    if !finished(&sender, PartyRole::Sender) || !finished(&receiver, PartyRole::Receiver) {
        return Err(ProtocolError::RoleSwapUnavailable);
    }
    let reset = |mut p: PartyState, role| {
        p.role = role;
        p.chunk_index = 0;
        p.recv_buffer = BitString::new();
        p.phase = Phase::RoleSwapped;
        p.termination = None;
        p.expected_chunks = None;
        p
    };
    let new_sender = reset(receiver, PartyRole::Sender);
    let new_receiver = reset(sender, PartyRole::Receiver);
    Ok((new_sender, new_receiver))
}
