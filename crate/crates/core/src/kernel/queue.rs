use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::time::SimTime;

/// Identifies the simulated component an event is delivered to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ComponentId {
    Node(u32),
    Port { node: u32, port: u32 },
    Flow(u32),
    Stats,
}

impl fmt::Display for ComponentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ComponentId::Node(n) => write!(f, "n{n}"),
            ComponentId::Port { node, port } => write!(f, "n{node}.p{port}"),
            ComponentId::Flow(id) => write!(f, "f{id}"),
            ComponentId::Stats => f.write_str("stats"),
        }
    }
}

/// What the kernel needs to know about an event payload.
pub trait EventPayload {
    fn target(&self) -> ComponentId;
    fn kind(&self) -> &'static str;
}

/// Handle returned by [`EventQueue::schedule`]; `(fire_at, seq)` is unique.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EventId {
    pub fire_at: SimTime,
    pub seq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event<P> {
    pub fire_at: SimTime,
    pub seq: u64,
    pub payload: P,
}

impl<P: EventPayload> Event<P> {
    pub fn target(&self) -> ComponentId {
        self.payload.target()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum KernelError {
    #[error("cannot schedule at {at} when the clock is already at {now}")]
    SchedulingInPast { at: SimTime, now: SimTime },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSummary {
    /// Events delivered during this call.
    pub events: u64,
    pub end_time: SimTime,
    pub wall_clock: Duration,
}

/// Virtual clock plus pending-event set ordered by `(fire_at, seq)`.
pub struct EventQueue<P> {
    now: SimTime,
    next_seq: u64,
    pending: BTreeMap<(SimTime, u64), P>,
    scheduled: u64,
    cancelled: u64,
    processed: u64,
    rng: ChaCha8Rng,
    trace: Option<String>,
}

impl<P: EventPayload> EventQueue<P> {
    pub fn new(seed: u64) -> Self {
        EventQueue {
            now: SimTime::ZERO,
            next_seq: 0,
            pending: BTreeMap::new(),
            scheduled: 0,
            cancelled: 0,
            processed: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            trace: None,
        }
    }

    /// Records `time,seq,target,kind` for every delivered event.
    pub fn enable_trace(&mut self) {
        self.trace.get_or_insert_with(String::new);
    }

    pub fn take_trace(&mut self) -> Option<String> {
        self.trace.take()
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    pub fn scheduled_count(&self) -> u64 {
        self.scheduled
    }

    pub fn cancelled_count(&self) -> u64 {
        self.cancelled
    }

    pub fn processed_count(&self) -> u64 {
        self.processed
    }

    pub fn schedule(&mut self, fire_at: SimTime, payload: P) -> Result<EventId, KernelError> {
        if fire_at < self.now {
            return Err(KernelError::SchedulingInPast {
                at: fire_at,
                now: self.now,
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.scheduled += 1;
        self.pending.insert((fire_at, seq), payload);
        Ok(EventId { fire_at, seq })
    }

    /// `true` iff the event was still pending. Cancelled events never fire.
    pub fn cancel(&mut self, id: EventId) -> bool {
        let removed = self.pending.remove(&(id.fire_at, id.seq)).is_some();
        if removed {
            self.cancelled += 1;
        }
        removed
    }

    /// Pops the earliest event with `fire_at <= t_end`, advancing the clock to it.
    pub fn pop_due(&mut self, t_end: SimTime) -> Option<Event<P>> {
        let (&(fire_at, _), _) = self.pending.first_key_value()?;
        if fire_at > t_end {
            return None;
        }
        let ((fire_at, seq), payload) = self.pending.pop_first()?;
        debug_assert!(fire_at >= self.now);
        self.now = fire_at;
        self.processed += 1;
        if let Some(trace) = self.trace.as_mut() {
            let _ = writeln!(
                trace,
                "{},{},{},{}",
                fire_at.as_ns(),
                seq,
                payload.target(),
                payload.kind()
            );
        }
        Some(Event {
            fire_at,
            seq,
            payload,
        })
    }

    /// Delivers every event due by `t_end` to `handler`, then sets the clock to `t_end`.
    ///
    /// The handler may schedule and cancel further events. An error from the
    /// handler stops the run with the clock at the failing event.
    pub fn run_until<E>(
        &mut self,
        t_end: SimTime,
        mut handler: impl FnMut(&mut Self, Event<P>) -> Result<(), E>,
    ) -> Result<RunSummary, E> {
        let started = Instant::now();
        let mut events = 0;
        while let Some(ev) = self.pop_due(t_end) {
            events += 1;
            handler(self, ev)?;
        }
        if t_end > self.now {
            self.now = t_end;
        }
        Ok(RunSummary {
            events,
            end_time: self.now,
            wall_clock: started.elapsed(),
        })
    }
}
