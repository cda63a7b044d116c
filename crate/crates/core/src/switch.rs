//! Network-element behavior: round-robin VL arbitration per output port,
//! the two congestion detectors and ECN marking.

use std::collections::{BTreeSet, VecDeque};

use serde::Serialize;

use crate::config::{MarkAt, RcmMode};
use crate::kernel::{EventId, SimTime};
use crate::link::Credit;
use crate::packet::{Ecn, FlowKey, Packet};

/// Round-robin over a fixed set of queues (one per `(input port, vl)`).
#[derive(Clone, Debug)]
pub struct Arbiter {
    queues: usize,
    cursor: usize,
}

impl Arbiter {
    pub fn new(queues: usize) -> Self {
        // the first grant goes to queue 0
        Arbiter {
            queues,
            cursor: queues.saturating_sub(1),
        }
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    /// Grants the first eligible queue after the cursor and moves the cursor to it.
    pub fn arbitrate(&mut self, mut eligible: impl FnMut(usize) -> bool) -> Option<usize> {
        for step in 1..=self.queues {
            let q = (self.cursor + step) % self.queues;
            if eligible(q) {
                self.cursor = q;
                return Some(q);
            }
        }
        None
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum CongestionKind {
    #[default]
    None,
    Root,
    Victim,
    Threshold,
}

impl CongestionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CongestionKind::None => "NONE",
            CongestionKind::Root => "ROOT",
            CongestionKind::Victim => "VICTIM",
            CongestionKind::Threshold => "THRESHOLD",
        }
    }
}

/// Root/victim classification. A congested port that the downstream PFC
/// is blocking is a victim; one that can send is the root.
pub fn detect_rcm_1a(
    backlog: Credit,
    threshold_credits: u32,
    paused_by_downstream: bool,
) -> CongestionKind {
    if backlog.0 <= threshold_credits {
        CongestionKind::None
    } else if paused_by_downstream {
        CongestionKind::Victim
    } else {
        CongestionKind::Root
    }
}

/// Demand above capacity with backlog above threshold.
///
/// `offered_bits` is the traffic the competing inputs delivered toward this
/// output during the trailing `window_ns`.
pub fn detect_rcm_1b(
    offered_bits: u64,
    window_ns: u64,
    output_rate_bps: u64,
    backlog: Credit,
    threshold_credits: u32,
) -> CongestionKind {
    let demand = offered_bits as u128 * 1_000_000_000;
    let capacity = output_rate_bps as u128 * window_ns as u128;
    if demand > capacity && backlog.0 > threshold_credits {
        CongestionKind::Threshold
    } else {
        CongestionKind::None
    }
}

/// Sets CE on data packets. Control traffic is never marked.
pub fn mark_ecn(packet: &mut Packet) {
    if packet.is_data() {
        packet.ecn = Ecn::Ce;
    }
}

/// Whether a port in `kind` marks exiting packets.
pub fn marks_in(kind: CongestionKind, mode: RcmMode, mark_at: MarkAt) -> bool {
    match (mode, kind) {
        (RcmMode::Off, _) | (_, CongestionKind::None) => false,
        (_, CongestionKind::Victim) => mark_at == MarkAt::RootAndVictim,
        _ => true,
    }
}

/// Per-input record of bytes offered to one output, for rate estimation.
#[derive(Clone, Debug, Default)]
pub struct OfferedWindow {
    /// Per input port: `(first bit received, wire bytes)`.
    arrivals: Vec<VecDeque<(SimTime, u32)>>,
}

impl OfferedWindow {
    pub fn new(inputs: usize) -> Self {
        OfferedWindow {
            arrivals: vec![VecDeque::new(); inputs],
        }
    }

    pub fn record(&mut self, input: usize, head_at: SimTime, wire_bytes: u32) {
        self.arrivals[input].push_back((head_at, wire_bytes));
    }

    /// Bits received in `(now - window, now]`, each input capped at what its
    /// own link could carry in the window.
    ///
    /// An input in `held_back` (paused by this switch) that sent toward the
    /// output during the window is counted at its full link rate.
    pub fn offered_bits(
        &mut self,
        now: SimTime,
        window_ns: u64,
        input_rates: &[u64],
        held_back: &[bool],
    ) -> u64 {
        let from = now.saturating_sub(SimTime::from_ns(window_ns));
        let mut total = 0u64;
        for (input, q) in self.arrivals.iter_mut().enumerate() {
            while q.front().is_some_and(|&(t, _)| t < from) {
                q.pop_front();
            }
            let bits: u64 = q.iter().map(|&(_, b)| b as u64 * 8).sum();
            let cap = (input_rates[input] as u128 * window_ns as u128 / 1_000_000_000) as u64;
            total += if held_back[input] && !q.is_empty() {
                cap
            } else {
                bits.min(cap)
            };
        }
        total
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Transition {
    Unchanged,
    Onset(CongestionKind),
    Changed {
        from: CongestionKind,
        to: CongestionKind,
    },
    /// The condition has just turned false; re-check at this time.
    ArmClear(SimTime),
    Cleared(CongestionKind),
}

/// Detector state of one output port.
#[derive(Clone, Debug, Default)]
pub struct CongestionState {
    pub kind: CongestionKind,
    pub since: SimTime,
    pub false_since: Option<SimTime>,
    pub clear_timer: Option<EventId>,
    /// Flows forwarded through the port during the current interval.
    pub flows_through: BTreeSet<FlowKey>,
}

impl CongestionState {
    /// Folds one detector observation into the state.
    pub fn observe(
        &mut self,
        detected: CongestionKind,
        now: SimTime,
        hysteresis_ns: u64,
    ) -> Transition {
        if detected != CongestionKind::None {
            self.false_since = None;
            let prev = self.kind;
            if prev == detected {
                return Transition::Unchanged;
            }
            self.kind = detected;
            self.since = now;
            return if prev == CongestionKind::None {
                Transition::Onset(detected)
            } else {
                Transition::Changed {
                    from: prev,
                    to: detected,
                }
            };
        }
        if self.kind == CongestionKind::None {
            return Transition::Unchanged;
        }
        let since = *self.false_since.get_or_insert(now);
        if now - since >= hysteresis_ns {
            let prev = self.kind;
            self.kind = CongestionKind::None;
            self.false_since = None;
            Transition::Cleared(prev)
        } else if since == now {
            Transition::ArmClear(since + hysteresis_ns)
        } else {
            Transition::Unchanged
        }
    }
}
