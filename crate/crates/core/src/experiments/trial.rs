//! One trial: fresh pool, fresh scheduler, two parties, run to the end.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::scenario::Scenario;
use super::ExperimentError;
use crate::pool::{ContextId, ResourcePool};
use crate::protocol::{
    compute_start_time, swap_roles, BitString, PartyRole, PartyState, ProtocolError, ReadOutcome, TerminationReason,
};
use crate::sim::{derive_seed, spawn_noise, stream_rng, NoiseEvent, NoiseProcess, Scheduler, SimError};
use crate::time::SimTime;

const STREAM_NOISE: u64 = 3;
const STREAM_MESSAGE: u64 = 4;
const MAX_CLAIM_ROUNDS: u32 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FailureKind {
    None,
    NegotiationTie,
    CorruptedChunk,
    EarlyTermination,
    ChannelDead,
}

impl FailureKind {
    pub const ALL: [FailureKind; 5] = [
        FailureKind::None,
        FailureKind::NegotiationTie,
        FailureKind::CorruptedChunk,
        FailureKind::EarlyTermination,
        FailureKind::ChannelDead,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FailureKind::None => "None",
            FailureKind::NegotiationTie => "NegotiationTie",
            FailureKind::CorruptedChunk => "CorruptedChunk",
            FailureKind::EarlyTermination => "EarlyTermination",
            FailureKind::ChannelDead => "ChannelDead",
        }
    }
}

impl fmt::Display for FailureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Outcome of one trial. Durations are virtual.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: u32,
    pub success: bool,
    /// Race start to end of negotiation.
    pub setup_time: SimTime,
    /// End of negotiation to receiver termination.
    pub send_time: SimTime,
    pub total_time: SimTime,
    pub bits_correct: usize,
    pub message_bits: usize,
    pub failure_kind: FailureKind,
    /// Wait between trial start and the shared start instant; not part of
    /// `setup_time`.
    pub start_wait: SimTime,
    /// Party index (0 = `sender_ctx`) that won the sender role.
    pub sender: Option<usize>,
    /// Split of the pool right after the race, per party.
    pub race_split: [u64; 2],
    /// Virtual time at which the event queue drained.
    pub final_time: SimTime,
}

impl TrialResult {
    pub fn setup_s(&self) -> f64 {
        self.setup_time.as_secs_f64()
    }

    pub fn send_s(&self) -> f64 {
        self.send_time.as_secs_f64()
    }

    pub fn total_s(&self) -> f64 {
        self.total_time.as_secs_f64()
    }
}

/// Who did something, in a trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Actor {
    Party(usize),
    Noise(usize),
    Static,
    Script,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TraceKind {
    RaceGrant,
    Role(PartyRole),
    Tie,
    ClaimGrant,
    /// Sender consume-all at the top of a slot.
    SlotConsume,
    /// Sender release that carries a packet value (count = value + 1).
    WireRelease,
    /// Sender release-all after the last packet.
    TerminationRelease,
    ReceiverRead,
    ReceiverRelease,
    Terminated(TerminationReason),
    RoleSwap,
    Consume,
    Release,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub at: SimTime,
    pub actor: Actor,
    pub kind: TraceKind,
    pub count: u64,
    /// Slot index for data-phase entries.
    pub slot: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Event {
    RaceStart { party: usize },
    RaceSettle,
    RaceLearn { party: usize, granted: u64 },
    ClaimLearn { party: usize, granted: u64, round: u32 },
    TransmissionBegin,
    SlotStart { party: usize, slot: usize },
    SlotLearn { party: usize, slot: usize, granted: u64 },
    ReceiverRead { party: usize, slot: usize },
    ReceiverLearn { party: usize, slot: usize, granted: u64 },
    ReceiverFinish { party: usize, slot: usize },
    Scripted { index: usize },
    Noise(NoiseEvent),
}

impl From<NoiseEvent> for Event {
    fn from(e: NoiseEvent) -> Self {
        Event::Noise(e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stage {
    Negotiating,
    Transmitting { leg: u8 },
    Done,
}

struct Trial<'a> {
    scenario: &'a Scenario,
    pool: ResourcePool,
    parties: [PartyState; 2],
    ctxs: [ContextId; 2],
    messages: [BitString; 2],
    start: SimTime,
    stage: Stage,
    race_pending: Vec<usize>,
    settle_scheduled: bool,
    tie: bool,
    decided: [bool; 2],
    race_split: [u64; 2],
    sender: Option<usize>,
    /// Slot index at which the current leg began.
    leg_base: usize,
    leg_results: Vec<(usize, BitString)>,
    early_termination: bool,
    receiver_done_at: Option<SimTime>,
    noise: Option<NoiseProcess>,
    trace: Option<Vec<TraceEntry>>,
    error: Option<ExperimentError>,
}

impl Trial<'_> {
    fn record(&mut self, at: SimTime, actor: Actor, kind: TraceKind, count: u64, slot: Option<usize>) {
        if let Some(trace) = self.trace.as_mut() {
            trace.push(TraceEntry {
                at,
                actor,
                kind,
                count,
                slot,
            });
        }
    }

    fn fail(&mut self, e: impl Into<ExperimentError>) {
        if self.error.is_none() {
            self.error = Some(e.into());
        }
        self.stage = Stage::Done;
    }

    fn release_all(&mut self, p: usize) -> Result<u64, ProtocolError> {
        let n = self.parties[p].release_all();
        let released = self.pool.release(&self.ctxs[p], n);
        self.parties[p].confirm_release(n, released)?;
        Ok(released)
    }

    fn handle(&mut self, sched: &mut Scheduler<Event>, event: Event) {
        let now = sched.now();
        if let Event::Noise(e) = event {
            if let Some(noise) = self.noise.as_mut() {
                let tab = match e {
                    NoiseEvent::Arrival { tab } | NoiseEvent::Release { tab, .. } => tab,
                };
                let before = self.pool.held(&noise.tabs[tab].ctx);
                if let Err(err) = noise.handle(sched, &mut self.pool, e) {
                    self.fail(err);
                    return;
                }
                let after = self.pool.held(&noise.tabs[tab].ctx);
                if after != before {
                    let (kind, n) = if after > before {
                        (TraceKind::Consume, after - before)
                    } else {
                        (TraceKind::Release, before - after)
                    };
                    self.record(now, Actor::Noise(tab), kind, n, None);
                }
            }
            return;
        }
        if let Event::Scripted { index } = event {
            let action = self.scenario.scripted[index].clone();
            if action.consume > 0 {
                let g = self.pool.consume(&action.ctx, action.consume);
                self.record(now, Actor::Script, TraceKind::Consume, g, None);
            }
            if action.release > 0 {
                let r = self.pool.release(&action.ctx, action.release);
                self.record(now, Actor::Script, TraceKind::Release, r, None);
            }
            return;
        }
        if self.stage == Stage::Done {
            return;
        }
        if let Err(e) = self.handle_party(sched, now, event) {
            self.fail(e);
        }
    }

    fn handle_party(
        &mut self,
        sched: &mut Scheduler<Event>,
        now: SimTime,
        event: Event,
    ) -> Result<(), ExperimentError> {
        match event {
            Event::RaceStart { party } => {
                self.race_pending.push(party);
                if !self.settle_scheduled {
                    self.settle_scheduled = true;
                    sched.schedule(now, Event::RaceSettle)?;
                }
            }
            Event::RaceSettle => {
                self.settle_scheduled = false;
                let batch: Vec<(ContextId, u64)> = self
                    .race_pending
                    .iter()
                    .map(|&p| (self.ctxs[p].clone(), self.parties[p].race_request()))
                    .collect();
                let parties = std::mem::take(&mut self.race_pending);
                let grants = self.pool.consume_concurrent(&batch, now);
                for (p, g) in parties.into_iter().zip(grants) {
                    self.race_split[p] = g.granted;
                    self.record(now, Actor::Party(p), TraceKind::RaceGrant, g.granted, None);
                    sched.schedule(
                        g.ready_at,
                        Event::RaceLearn {
                            party: p,
                            granted: g.granted,
                        },
                    )?;
                }
            }
            Event::RaceLearn { party, granted } => match self.parties[party].on_race_grant(granted) {
                Ok(role) => {
                    self.record(now, Actor::Party(party), TraceKind::Role(role), granted, None);
                    self.decided[party] = true;
                    match role {
                        PartyRole::Sender => self.issue_claim(sched, now, party, 0)?,
                        _ => {
                            let n = self.release_all(party)?;
                            self.record(now, Actor::Party(party), TraceKind::Release, n, None);
                        }
                    }
                }
                Err(ProtocolError::NegotiationTie { .. }) => {
                    self.tie = true;
                    self.record(now, Actor::Party(party), TraceKind::Tie, granted, None);
                }
                Err(e) => return Err(e.into()),
            },
            Event::ClaimLearn { party, granted, round } => {
                self.parties[party].on_consumed(granted);
                self.record(now, Actor::Party(party), TraceKind::ClaimGrant, granted, None);
                if granted > 0 && round + 1 < MAX_CLAIM_ROUNDS && self.stage == Stage::Negotiating {
                    self.issue_claim(sched, now, party, round + 1)?;
                }
            }
            Event::TransmissionBegin => self.begin_transmission(sched)?,
            Event::SlotStart { party, slot } => {
                let p = &self.parties[party];
                if p.chunk_index < p.chunks().len() {
                    let want = p.consume_all_request();
                    let g = self.pool.consume_batch(&self.ctxs[party], want, now);
                    self.record(now, Actor::Party(party), TraceKind::SlotConsume, g.granted, Some(slot));
                    sched.schedule(
                        g.ready_at,
                        Event::SlotLearn {
                            party,
                            slot,
                            granted: g.granted,
                        },
                    )?;
                } else {
                    self.sender_release(sched, now, party, slot)?;
                }
            }
            Event::SlotLearn { party, slot, granted } => {
                self.parties[party].on_consumed(granted);
                self.sender_release(sched, now, party, slot)?;
            }
            Event::ReceiverRead { party, slot } => {
                let want = self.parties[party].receiver_read_request();
                let g = self.pool.consume_batch(&self.ctxs[party], want, now);
                sched.schedule(
                    g.ready_at,
                    Event::ReceiverLearn {
                        party,
                        slot,
                        granted: g.granted,
                    },
                )?;
            }
            Event::ReceiverLearn { party, slot, granted } => {
                self.record(now, Actor::Party(party), TraceKind::ReceiverRead, granted, Some(slot));
                let outcome = self.parties[party].receiver_on_read(granted)?;
                let n = self.release_all(party)?;
                self.record(now, Actor::Party(party), TraceKind::ReceiverRelease, n, Some(slot));
                match outcome {
                    ReadOutcome::Terminated { reason, .. } => {
                        if self.parties[party].expected_chunks().is_some() {
                            self.early_termination = true;
                        }
                        self.record(now, Actor::Party(party), TraceKind::Terminated(reason), 0, Some(slot));
                        self.receiver_finished(sched, now, party)?;
                    }
                    ReadOutcome::Recorded { .. } => {
                        let params = self.parties[party].params().clone();
                        if self.parties[party].receiver_has_all() {
                            let at = params.slot_start(self.start, slot + 1).max(now);
                            sched.schedule(at, Event::ReceiverFinish { party, slot: slot + 1 })?;
                        } else {
                            let at = params.read_time(self.start, slot + 1).max(now);
                            sched.schedule(at, Event::ReceiverRead { party, slot: slot + 1 })?;
                        }
                    }
                }
            }
            Event::ReceiverFinish { party, slot } => {
                self.parties[party].receiver_finish();
                self.record(
                    now,
                    Actor::Party(party),
                    TraceKind::Terminated(TerminationReason::Complete),
                    0,
                    Some(slot),
                );
                self.receiver_finished(sched, now, party)?;
            }
            Event::Scripted { .. } | Event::Noise(_) => unreachable!("handled above"),
        }
        Ok(())
    }

    fn issue_claim(
        &mut self,
        sched: &mut Scheduler<Event>,
        now: SimTime,
        party: usize,
        round: u32,
    ) -> Result<(), ExperimentError> {
        let want = self.parties[party].consume_all_request();
        let g = self.pool.consume_batch(&self.ctxs[party], want, now);
        sched.schedule(
            g.ready_at,
            Event::ClaimLearn {
                party,
                granted: g.granted,
                round,
            },
        )?;
        Ok(())
    }

    fn begin_transmission(&mut self, sched: &mut Scheduler<Event>) -> Result<(), ExperimentError> {
        let roles = [self.parties[0].role, self.parties[1].role];
        let sender = match roles {
            _ if self.tie || !(self.decided[0] && self.decided[1]) => None,
            [PartyRole::Sender, PartyRole::Receiver] => Some(0),
            [PartyRole::Receiver, PartyRole::Sender] => Some(1),
            _ => None,
        };
        let Some(s) = sender else {
            self.stage = Stage::Done;
            return Ok(());
        };
        self.sender = Some(s);
        self.stage = Stage::Transmitting { leg: 1 };
        self.start_leg(sched, s, 0)
    }

    fn start_leg(&mut self, sched: &mut Scheduler<Event>, sender: usize, base: usize) -> Result<(), ExperimentError> {
        let receiver = 1 - sender;
        self.leg_base = base;
        let params = self.parties[sender].params().clone();
        sched.schedule(
            params.slot_start(self.start, base).max(sched.now()),
            Event::SlotStart {
                party: sender,
                slot: base,
            },
        )?;
        let rparams = self.parties[receiver].params().clone();
        if self.parties[receiver].receiver_has_all() {
            sched.schedule(
                rparams.slot_start(self.start, base).max(sched.now()),
                Event::ReceiverFinish {
                    party: receiver,
                    slot: base,
                },
            )?;
        } else {
            sched.schedule(
                rparams.read_time(self.start, base).max(sched.now()),
                Event::ReceiverRead {
                    party: receiver,
                    slot: base,
                },
            )?;
        }
        Ok(())
    }

    fn sender_release(
        &mut self,
        sched: &mut Scheduler<Event>,
        now: SimTime,
        party: usize,
        slot: usize,
    ) -> Result<(), ExperimentError> {
        let data = self.parties[party].next_wire_count().is_some();
        let count = self.parties[party].sender_release_count()?;
        let released = self.pool.release(&self.ctxs[party], count);
        self.parties[party].confirm_release(count, released)?;
        self.parties[party].sender_after_release(released);
        let kind = if data {
            TraceKind::WireRelease
        } else {
            TraceKind::TerminationRelease
        };
        self.record(now, Actor::Party(party), kind, released, Some(slot));
        if data {
            let at = self.parties[party].params().slot_start(self.start, slot + 1).max(now);
            sched.schedule(at, Event::SlotStart { party, slot: slot + 1 })?;
        } else {
            self.maybe_end_leg(sched, now)?;
        }
        Ok(())
    }

    fn receiver_finished(
        &mut self,
        sched: &mut Scheduler<Event>,
        now: SimTime,
        party: usize,
    ) -> Result<(), ExperimentError> {
        self.receiver_done_at = Some(now);
        let buffer = self.parties[party].recv_buffer.clone();
        self.leg_results.push((party, buffer));
        if self.early_termination {
            self.stage = Stage::Done;
            return Ok(());
        }
        self.maybe_end_leg(sched, now)
    }

    fn maybe_end_leg(&mut self, sched: &mut Scheduler<Event>, now: SimTime) -> Result<(), ExperimentError> {
        let Stage::Transmitting { leg } = self.stage else {
            return Ok(());
        };
        if !(self.parties[0].is_terminated() && self.parties[1].is_terminated()) {
            return Ok(());
        }
        if leg == 1 && self.scenario.bidirectional {
            let s = self.sender.expect("sender chosen");
            let [a, b] = self.parties.clone();
            let (old_sender, old_receiver) = if s == 0 { (a, b) } else { (b, a) };
            let (new_sender, new_receiver) = swap_roles(old_sender, old_receiver)?;
            let new_receiver = new_receiver.with_expected_chunks(Some(new_sender.chunks().len()));
            self.record(now, Actor::Party(1 - s), TraceKind::RoleSwap, 0, None);
            let ns = 1 - s;
            self.parties[ns] = new_sender;
            self.parties[s] = new_receiver;
            self.stage = Stage::Transmitting { leg: 2 };
            let base = self.leg_base
                + self.parties[ns]
                    .params()
                    .chunk_count()
                    .max(self.parties[s].chunks().len())
                + 1;
            return self.start_leg(sched, ns, base);
        }
        self.stage = Stage::Done;
        Ok(())
    }
}

/// Runs trial `trial_index` of `scenario`.
pub fn run_trial(scenario: &Scenario, trial_index: u32) -> Result<TrialResult, ExperimentError> {
    run_trial_inner(scenario, trial_index, false).map(|(r, _)| r)
}

/// Like [`run_trial`] but also returns every pool interaction in order.
pub fn run_trial_traced(
    scenario: &Scenario,
    trial_index: u32,
) -> Result<(TrialResult, Vec<TraceEntry>), ExperimentError> {
    run_trial_inner(scenario, trial_index, true).map(|(r, t)| (r, t.unwrap_or_default()))
}

fn run_trial_inner(
    scenario: &Scenario,
    trial_index: u32,
    traced: bool,
) -> Result<(TrialResult, Option<Vec<TraceEntry>>), ExperimentError> {
    scenario.validate()?;
    let seed = derive_seed(scenario.seed, u64::from(trial_index));
    let mut msg_rng = stream_rng(seed, STREAM_MESSAGE);
    let first = scenario
        .message
        .clone()
        .unwrap_or_else(|| BitString::random(scenario.message_bits, &mut msg_rng));
    let second = BitString::random(scenario.message_bits, &mut msg_rng);
    let messages = [first, second];

    let mut pool = ResourcePool::new(
        scenario.effective_pool_limit(),
        scenario.effective_scope(),
        scenario.drift,
        scenario.feedback,
    )?
    .seeded(seed);
    if let super::Defense::HybridCap { per_site_limit } = scenario.defense {
        pool = pool.with_site_cap(per_site_limit);
    }
    if scenario.static_hold > 0 {
        let holder = ContextId::new("static-holder.example", scenario.sender_ctx.profile.clone());
        pool.consume(&holder, scenario.static_hold);
    }

    let make_party = |m: &BitString| -> Result<PartyState, ExperimentError> {
        Ok(PartyState::new(scenario.protocol_params(m.clone()))?.with_over_consume(scenario.over_consume))
    };
    let parties = [make_party(&messages[0])?, make_party(&messages[1])?];
    let params = parties[0].params().clone();
    let start = compute_start_time(SimTime::ZERO, &params);
    let parties = parties.map(|p| p.with_start_time(start));

    let mut sched: Scheduler<Event> = Scheduler::new();
    let legs = if scenario.bidirectional { 2 } else { 1 };
    let horizon = params.slot_start(start, legs * (params.chunk_count() + 2));
    let noise = if scenario.effective_noise().is_quiet() {
        None
    } else {
        Some(spawn_noise(
            &mut sched,
            scenario.effective_noise(),
            &scenario.sender_ctx.profile,
            stream_rng(seed, STREAM_NOISE),
            horizon,
        )?)
    };
    for (index, action) in scenario.scripted.iter().enumerate() {
        sched.schedule(action.at, Event::Scripted { index })?;
    }
    sched.schedule(start, Event::RaceStart { party: 0 })?;
    sched.schedule(
        start + SimTime::from_ticks(scenario.start_jitter_ticks),
        Event::RaceStart { party: 1 },
    )?;
    let negotiation_end = start + params.negotiate_ticks();
    sched.schedule(negotiation_end, Event::TransmissionBegin)?;

    let mut trial = Trial {
        scenario,
        pool,
        parties,
        ctxs: [scenario.sender_ctx.clone(), scenario.receiver_ctx.clone()],
        messages,
        start,
        stage: Stage::Negotiating,
        race_pending: Vec::new(),
        settle_scheduled: false,
        tie: false,
        decided: [false; 2],
        race_split: [0; 2],
        sender: None,
        leg_base: 0,
        leg_results: Vec::new(),
        early_termination: false,
        receiver_done_at: None,
        noise,
        trace: traced.then(Vec::new),
        error: None,
    };

    let run = sched.run_until_idle(|s, e| trial.handle(s, e));
    let final_time = sched.now();
    let limit_hit = match run {
        Ok(_) => false,
        Err(SimError::EventLimitExceeded(_)) => true,
        Err(e) => return Err(e.into()),
    };
    if let Some(e) = trial.error.take() {
        return Err(e);
    }

    let message_bits = scenario.message_bits;
    let setup_time = params.negotiate_ticks();
    let send_time = match trial.receiver_done_at {
        Some(t) if !limit_hit => t - negotiation_end,
        _ => final_time.saturating_sub(negotiation_end),
    };
    let expected_legs = if scenario.bidirectional { 2 } else { 1 };
    let (failure_kind, bits_correct) = match trial.sender {
        _ if limit_hit => (FailureKind::ChannelDead, 0),
        None if trial.tie => (FailureKind::NegotiationTie, 0),
        None => (FailureKind::ChannelDead, 0),
        Some(s) => {
            // Score each leg against the message its sender transmitted.
            let mut bits = 0;
            let mut total = 0;
            let mut complete = trial.leg_results.len() == expected_legs;
            for (i, (receiver, buffer)) in trial.leg_results.iter().enumerate() {
                let sender = if i == 0 { s } else { 1 - s };
                debug_assert_eq!(*receiver, 1 - sender);
                bits += buffer.matching_prefix_bits(&trial.messages[sender]);
                total += message_bits;
                complete &= buffer.len() == message_bits;
            }
            let kind = if trial.early_termination {
                FailureKind::EarlyTermination
            } else if !complete {
                FailureKind::ChannelDead
            } else if bits == total {
                FailureKind::None
            } else {
                FailureKind::CorruptedChunk
            };
            (kind, bits / expected_legs)
        }
    };

    Ok((
        TrialResult {
            trial: trial_index,
            success: failure_kind == FailureKind::None,
            setup_time,
            send_time,
            total_time: setup_time + send_time,
            bits_correct,
            message_bits,
            failure_kind,
            start_wait: start,
            sender: trial.sender,
            race_split: trial.race_split,
            final_time,
        },
        trial.trace,
    ))
}
