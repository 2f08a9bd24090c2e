use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::SimError;
use crate::time::SimTime;

/// Runaway guard used when a scheduler is built with [`Scheduler::new`].
pub const DEFAULT_EVENT_CAP: u64 = 1_000_000;

/// Virtual time; moves only when an event executes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct VirtualClock {
    now: SimTime,
}

impl VirtualClock {
    pub fn now(&self) -> SimTime {
        self.now
    }

    fn advance_to(&mut self, t: SimTime) {
        debug_assert!(t >= self.now, "clock moved backwards");
        self.now = t;
    }
}

/// Insertion sequence number of a scheduled event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EventHandle(pub u64);

struct Entry<E> {
    at: SimTime,
    seq: u64,
    event: E,
}

impl<E> PartialEq for Entry<E> {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.seq) == (other.at, other.seq)
    }
}

impl<E> Eq for Entry<E> {}

impl<E> PartialOrd for Entry<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Entry<E> {
    // BinaryHeap is a max-heap: invert so the earliest (time, seq) pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.at, other.seq).cmp(&(self.at, self.seq))
    }
}

/// Pending events ordered by (fire time, insertion sequence).
pub struct EventQueue<E> {
    heap: BinaryHeap<Entry<E>>,
    next_seq: u64,
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        Self {
            heap: BinaryHeap::new(),
            next_seq: 0,
        }
    }
}

impl<E> EventQueue<E> {
    pub fn push(&mut self, at: SimTime, event: E) -> EventHandle {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Entry { at, seq, event });
        EventHandle(seq)
    }

    pub fn pop(&mut self) -> Option<(SimTime, EventHandle, E)> {
        self.heap.pop().map(|e| (e.at, EventHandle(e.seq), e.event))
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.heap.peek().map(|e| e.at)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

/// Clock plus queue. Handlers receive `&mut Scheduler` so they can
/// enqueue follow-up events.
pub struct Scheduler<E> {
    clock: VirtualClock,
    queue: EventQueue<E>,
    executed: u64,
    event_cap: u64,
}

impl<E> Default for Scheduler<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> Scheduler<E> {
    pub fn new() -> Self {
        Self::with_event_cap(DEFAULT_EVENT_CAP)
    }

    pub fn with_event_cap(event_cap: u64) -> Self {
        Self {
            clock: VirtualClock::default(),
            queue: EventQueue::default(),
            executed: 0,
            event_cap,
        }
    }

    pub fn now(&self) -> SimTime {
        self.clock.now()
    }

    pub fn executed(&self) -> u64 {
        self.executed
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn schedule(&mut self, at: SimTime, event: E) -> Result<EventHandle, SimError> {
        let now = self.clock.now();
        if at < now {
            return Err(SimError::PastEvent { at, now });
        }
        Ok(self.queue.push(at, event))
    }

    /// Schedules `delay` after the current instant.
    pub fn schedule_in(&mut self, delay: SimTime, event: E) -> EventHandle {
        let at = self.clock.now() + delay;
        self.queue.push(at, event)
    }

    /// Pops and executes one event. `Ok(false)` when the queue is empty.
    pub fn step<F>(&mut self, handler: &mut F) -> Result<bool, SimError>
    where
        F: FnMut(&mut Self, E),
    {
        let Some((at, _, event)) = self.queue.pop() else {
            return Ok(false);
        };
        if self.executed >= self.event_cap {
            return Err(SimError::EventLimitExceeded(self.event_cap));
        }
        self.clock.advance_to(at);
        self.executed += 1;
        handler(self, event);
        Ok(true)
    }

    /// Executes every event in order and returns the final virtual time.
    pub fn run_until_idle<F>(&mut self, mut handler: F) -> Result<SimTime, SimError>
    where
        F: FnMut(&mut Self, E),
    {
        while self.step(&mut handler)? {}
        Ok(self.clock.now())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: f64) -> SimTime {
        SimTime::from_secs_f64(s)
    }

    #[test]
    fn same_instant_fires_before_later() {
        let mut s: Scheduler<&str> = Scheduler::new();
        s.schedule(t(1.0), "later").unwrap();
        s.schedule(t(0.0), "now").unwrap();
        let mut seen = vec![];
        s.run_until_idle(|_, e| seen.push(e)).unwrap();
        assert_eq!(seen, ["now", "later"]);
    }

    #[test]
    fn ties_fire_in_insertion_order() {
        let mut s: Scheduler<u32> = Scheduler::new();
        for i in 0..5 {
            s.schedule(t(2.0), i).unwrap();
        }
        let mut seen = vec![];
        let end = s.run_until_idle(|_, e| seen.push(e)).unwrap();
        assert_eq!(seen, [0, 1, 2, 3, 4]);
        assert_eq!(end, t(2.0));
    }

    #[test]
    fn past_events_rejected() {
        let mut s: Scheduler<()> = Scheduler::new();
        s.schedule(t(5.0), ()).unwrap();
        s.run_until_idle(|_, _| {}).unwrap();
        assert!(matches!(s.schedule(t(4.0), ()), Err(SimError::PastEvent { .. })));
        assert!(s.schedule(t(5.0), ()).is_ok());
    }

    #[test]
    fn empty_queue_returns_now() {
        let mut s: Scheduler<()> = Scheduler::new();
        assert_eq!(s.run_until_idle(|_, _| {}).unwrap(), SimTime::ZERO);
    }

    #[test]
    fn runaway_rescheduling_hits_the_cap() {
        let mut s: Scheduler<()> = Scheduler::with_event_cap(1_000_000);
        s.schedule(SimTime::ZERO, ()).unwrap();
        let r = s.run_until_idle(|s, ()| {
            s.schedule_in(SimTime::from_ticks(1), ());
        });
        assert_eq!(r, Err(SimError::EventLimitExceeded(1_000_000)));
    }

    #[test]
    fn clock_never_decreases() {
        let mut s: Scheduler<u64> = Scheduler::new();
        s.schedule(SimTime::ZERO, 0).unwrap();
        let mut last = SimTime::ZERO;
        s.run_until_idle(|s, n| {
            assert!(s.now() >= last);
            last = s.now();
            if n < 100 {
                s.schedule_in(SimTime::from_ticks(n % 3), n + 1);
            }
        })
        .unwrap();
    }
}
