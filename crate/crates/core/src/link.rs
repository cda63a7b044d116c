//! Ports and wires: ibuf credit accounting, the per-VL PFC pause/resume
//! state machine, and the obuf serializer.
//!
//! Receive buffers are accounted in 64-byte credits. A packet reserves its
//! credits when its first bit reaches the port and releases them when it is
//! forwarded or consumed. With that convention the automatic watermark below
//! bounds everything that can still arrive once a pause has been triggered.

use std::collections::VecDeque;

use crate::config::Link;
use crate::kernel::{bit_time_ceil_ns, EventId, FracTime, SimTime};
use crate::packet::{Packet, PfcFrame};
use crate::switch::mark_ecn;

pub const CREDIT_BYTES: u64 = 64;

/// Receive-buffer space in units of 64 bytes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Credit(pub u32);

impl Credit {
    pub fn from_bytes(bytes: u64) -> Credit {
        Credit(bytes.div_ceil(CREDIT_BYTES) as u32)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LinkError {
    #[error("PFC headroom of {headroom_credits} credits leaves no usable watermark in a {capacity}-credit ibuf")]
    HeadroomExceedsCapacity {
        headroom_credits: u32,
        capacity: u32,
    },
    #[error("ibuf overflow on vl {vl}: {occupancy} of {capacity} credits")]
    BufferOverflow {
        vl: u8,
        occupancy: u32,
        capacity: u32,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Watermarks {
    pub high: Credit,
    pub low: Credit,
}

/// Bytes a wire holds in flight: `delay × rate / 8`, rounded up.
pub fn propagation_delay_bytes(link: &Link) -> u64 {
    (link.propagation_delay_ns as u128 * link.rate_bps as u128).div_ceil(8_000_000_000) as u64
}

/// High watermark leaving room for every byte the upstream port can still
/// put on the wire after the pause decision:
/// `2 × delay_bytes + 2 × mtu_wire + pfc_frame`. Low is half of high.
pub fn compute_auto_watermarks(
    link: &Link,
    mtu_wire_bytes: u32,
    pfc_frame_wire_bytes: u32,
    capacity_credits: u32,
) -> Result<Watermarks, LinkError> {
    let headroom_bytes =
        2 * propagation_delay_bytes(link) + 2 * mtu_wire_bytes as u64 + pfc_frame_wire_bytes as u64;
    let headroom = Credit::from_bytes(headroom_bytes).0;
    let err = LinkError::HeadroomExceedsCapacity {
        headroom_credits: headroom,
        capacity: capacity_credits,
    };
    if headroom >= capacity_credits {
        return Err(err);
    }
    let high = capacity_credits - headroom;
    let low = high / 2;
    if high <= low {
        return Err(err);
    }
    Ok(Watermarks {
        high: Credit(high),
        low: Credit(low),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PfcAction {
    /// Queue a pause frame for `vl` on the reverse direction of this port.
    SendPfc { vl: u8, quanta: u16 },
}

/// Receive-side state of one VL of one port.
#[derive(Clone, Debug)]
pub struct IbufVl {
    pub vl: u8,
    pub occupancy_bytes: u64,
    pub capacity: Credit,
    pub watermarks: Watermarks,
    pub pause_sent_active: bool,
    pub pfc_enabled: bool,
    pub pause_quanta: u16,
    pub max_occupancy: Credit,
    /// Pending pause-refresh timer.
    pub refresh: Option<EventId>,
}

impl IbufVl {
    pub fn new(
        vl: u8,
        capacity: Credit,
        watermarks: Watermarks,
        pfc_enabled: bool,
        pause_quanta: u16,
    ) -> Self {
        IbufVl {
            vl,
            occupancy_bytes: 0,
            capacity,
            watermarks,
            pause_sent_active: false,
            pfc_enabled,
            pause_quanta,
            max_occupancy: Credit(0),
            refresh: None,
        }
    }

    pub fn occupancy(&self) -> Credit {
        Credit::from_bytes(self.occupancy_bytes)
    }

    /// Reserves credits for an arriving packet. Pauses the upstream sender
    /// when the occupancy reaches the high watermark.
    pub fn on_ibuf_enqueue(&mut self, wire_bytes: u32) -> Result<Option<PfcAction>, LinkError> {
        self.occupancy_bytes += wire_bytes as u64;
        let occ = self.occupancy();
        if occ > self.capacity {
            return Err(LinkError::BufferOverflow {
                vl: self.vl,
                occupancy: occ.0,
                capacity: self.capacity.0,
            });
        }
        self.max_occupancy = self.max_occupancy.max(occ);
        if self.pfc_enabled && !self.pause_sent_active && occ >= self.watermarks.high {
            self.pause_sent_active = true;
            return Ok(Some(PfcAction::SendPfc {
                vl: self.vl,
                quanta: self.pause_quanta,
            }));
        }
        Ok(None)
    }

    /// Releases credits. Resumes the upstream sender once the occupancy
    /// falls to the low watermark after a pause.
    pub fn on_ibuf_dequeue(&mut self, wire_bytes: u32) -> Option<PfcAction> {
        debug_assert!(self.occupancy_bytes >= wire_bytes as u64);
        self.occupancy_bytes -= wire_bytes as u64;
        if self.pause_sent_active && self.occupancy() <= self.watermarks.low {
            self.pause_sent_active = false;
            return Some(PfcAction::SendPfc {
                vl: self.vl,
                quanta: 0,
            });
        }
        None
    }

    /// Whether a pause refresh is due: still paused and above the low watermark.
    pub fn needs_refresh(&self) -> bool {
        self.pause_sent_active && self.occupancy() > self.watermarks.low
    }
}

/// Outcome of a received pause frame for one VL.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PauseChange {
    pub vl: u8,
    /// `None` means transmission may resume now.
    pub until: Option<SimTime>,
}

#[derive(Clone, Debug)]
pub struct Transmission {
    pub packet: Packet,
    pub start: SimTime,
    pub completes_at: SimTime,
    /// First bit at the peer port.
    pub head_at: SimTime,
    /// Last bit at the peer port.
    pub arrives_at: SimTime,
}

/// Transmit side of a port: pause state received from the peer, control
/// frames waiting for the wire, and the serializer.
#[derive(Clone, Debug)]
pub struct Egress {
    pub rate_bps: u64,
    pub propagation_delay_ns: u64,
    pub paused_until: Vec<Option<SimTime>>,
    pub expiry: Vec<Option<EventId>>,
    pub ecn_marking_active: bool,
    /// Last time a pause on any VL of this egress was lifted.
    pub last_resume: Option<SimTime>,
    /// `(node, port)` recorded on packets this egress marks.
    pub location: (u32, u32),
    control: VecDeque<Packet>,
    busy_until: Option<SimTime>,
    last_end: FracTime,
    last_end_at: SimTime,
    pub bytes_sent: u64,
}

impl Egress {
    pub fn new(
        rate_bps: u64,
        propagation_delay_ns: u64,
        num_vls: u8,
        location: (u32, u32),
    ) -> Self {
        let n = num_vls as usize;
        Egress {
            rate_bps,
            propagation_delay_ns,
            paused_until: vec![None; n],
            expiry: vec![None; n],
            ecn_marking_active: false,
            last_resume: None,
            location,
            control: VecDeque::new(),
            busy_until: None,
            last_end: FracTime::default(),
            last_end_at: SimTime::ZERO,
            bytes_sent: 0,
        }
    }

    pub fn is_paused(&self, vl: u8, now: SimTime) -> bool {
        self.paused_until
            .get(vl as usize)
            .copied()
            .flatten()
            .is_some_and(|until| now < until)
    }

    pub fn any_paused(&self, now: SimTime) -> bool {
        (0..self.paused_until.len() as u8).any(|vl| self.is_paused(vl, now))
    }

    pub fn is_busy(&self, now: SimTime) -> bool {
        self.busy_until.is_some_and(|t| now < t)
    }

    pub fn push_control(&mut self, frame: Packet) {
        self.control.push_back(frame);
    }

    pub fn pending_control(&self) -> usize {
        self.control.len()
    }

    /// Applies a received pause frame. An ongoing serialization is unaffected.
    pub fn on_pfc_received(&mut self, frame: &PfcFrame, now: SimTime) -> Vec<PauseChange> {
        let num_vls = self.paused_until.len();
        frame
            .enabled()
            .filter(|(vl, _)| (*vl as usize) < num_vls)
            .map(|(vl, quanta)| {
                let until = (quanta > 0)
                    .then(|| now + bit_time_ceil_ns(quanta as u64 * 512, self.rate_bps));
                if until.is_none() && self.paused_until[vl as usize].is_some() {
                    self.last_resume = Some(now);
                }
                self.paused_until[vl as usize] = until;
                PauseChange { vl, until }
            })
            .collect()
    }

    /// Clears an expired pause. Returns true if the VL became eligible.
    pub fn expire_pause(&mut self, vl: u8, now: SimTime) -> bool {
        match self.paused_until[vl as usize] {
            Some(until) if until <= now => {
                self.paused_until[vl as usize] = None;
                self.expiry[vl as usize] = None;
                self.last_resume = Some(now);
                true
            }
            _ => false,
        }
    }

    /// Starts the next frame if the wire is idle.
    ///
    /// Pause frames go first and ignore pause state. Otherwise `pick_data` is
    /// asked for a data or CNP packet; it receives this egress so it can skip
    /// paused VLs.
    pub fn transmit_next(
        &mut self,
        now: SimTime,
        pick_data: impl FnOnce(&Egress) -> Option<Packet>,
    ) -> Option<Transmission> {
        if self.is_busy(now) {
            return None;
        }
        let mut packet = match self.control.pop_front() {
            Some(frame) => frame,
            None => pick_data(self)?,
        };
        debug_assert!(packet.is_pfc() || !self.is_paused(packet.vl, now));
        if self.ecn_marking_active && packet.is_data() {
            let before = packet.ecn;
            mark_ecn(&mut packet);
            if before != packet.ecn {
                packet.marked_by.get_or_insert(self.location);
            }
        }
        // back-to-back frames keep the sub-ns residue of the previous one
        let start_exact = if self.busy_until.is_some() && now == self.last_end_at {
            self.last_end
        } else {
            FracTime::whole(now)
        };
        let end = start_exact.add_bits(packet.wire_bytes as u64 * 8, self.rate_bps);
        let completes_at = end.round(self.rate_bps).max(now);
        self.last_end = end;
        self.last_end_at = completes_at;
        self.busy_until = Some(completes_at);
        self.bytes_sent += packet.wire_bytes as u64;
        Some(Transmission {
            packet,
            start: now,
            completes_at,
            head_at: now + self.propagation_delay_ns,
            arrives_at: completes_at + self.propagation_delay_ns,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::PortRef;
    use crate::packet::{Ecn, PacketKind};

    fn link(delay_ns: u64) -> Link {
        Link {
            a: PortRef { node: 0, port: 0 },
            b: PortRef { node: 1, port: 0 },
            rate_bps: 40_000_000_000,
            propagation_delay_ns: delay_ns,
        }
    }

    #[test]
    fn auto_watermarks_100ns_link() {
        assert_eq!(propagation_delay_bytes(&link(100)), 500);
        let w = compute_auto_watermarks(&link(100), 2156, 64, 512).unwrap();
        assert_eq!(w.high, Credit(428));
        assert_eq!(w.low, Credit(214));
    }

    #[test]
    fn auto_watermarks_zero_delay() {
        let w = compute_auto_watermarks(&link(0), 2156, 64, 512).unwrap();
        assert_eq!(w.high, Credit(512 - 69));
    }

    #[test]
    fn headroom_larger_than_buffer() {
        assert_eq!(
            compute_auto_watermarks(&link(100), 2156, 64, 64),
            Err(LinkError::HeadroomExceedsCapacity {
                headroom_credits: 84,
                capacity: 64
            })
        );
    }

    fn ibuf() -> IbufVl {
        IbufVl::new(
            0,
            Credit(512),
            Watermarks {
                high: Credit(428),
                low: Credit(214),
            },
            true,
            65_535,
        )
    }

    #[test]
    fn pause_on_high_watermark_crossing() {
        let mut b = ibuf();
        b.occupancy_bytes = 427 * 64;
        assert_eq!(
            b.on_ibuf_enqueue(64).unwrap(),
            Some(PfcAction::SendPfc {
                vl: 0,
                quanta: 65_535
            })
        );
        assert!(b.pause_sent_active);
        // edge triggered: no second pause while active
        assert_eq!(b.on_ibuf_enqueue(64).unwrap(), None);
    }

    #[test]
    fn no_pause_below_high() {
        let mut b = ibuf();
        b.occupancy_bytes = 10 * 64;
        assert_eq!(b.on_ibuf_enqueue(64).unwrap(), None);
        assert_eq!(b.occupancy(), Credit(11));
    }

    #[test]
    fn resume_on_low_watermark_crossing() {
        let mut b = ibuf();
        b.pause_sent_active = true;
        b.occupancy_bytes = 300 * 64;
        assert_eq!(b.on_ibuf_dequeue(64), None);
        b.occupancy_bytes = 215 * 64;
        assert_eq!(
            b.on_ibuf_dequeue(64),
            Some(PfcAction::SendPfc { vl: 0, quanta: 0 })
        );
        assert!(!b.pause_sent_active);
    }

    #[test]
    fn no_resume_without_pause() {
        let mut b = ibuf();
        b.occupancy_bytes = 215 * 64;
        assert_eq!(b.on_ibuf_dequeue(64), None);
    }

    #[test]
    fn overflow_is_reported() {
        let mut b = ibuf();
        b.occupancy_bytes = 500 * 64;
        assert!(matches!(
            b.on_ibuf_enqueue(2156),
            Err(LinkError::BufferOverflow { occupancy: 534, .. })
        ));
    }

    #[test]
    fn occupancy_rounds_up_to_credits() {
        let mut b = ibuf();
        b.on_ibuf_enqueue(2156).unwrap();
        assert_eq!(b.occupancy(), Credit(34));
        b.on_ibuf_enqueue(2156).unwrap();
        assert_eq!(b.occupancy(), Credit(68)); // ceil(4312 / 64)
    }

    #[test]
    fn received_pause_durations() {
        let mut e = Egress::new(40_000_000_000, 100, 1, (0, 0));
        let now = SimTime::from_ns(1_000);
        let ch = e.on_pfc_received(&PfcFrame::single(0, 65_535), now);
        assert_eq!(
            ch,
            [PauseChange {
                vl: 0,
                until: Some(now + 838_848)
            }]
        );
        assert!(e.is_paused(0, now));
        let ch = e.on_pfc_received(&PfcFrame::single(0, 0), now + 5);
        assert_eq!(ch, [PauseChange { vl: 0, until: None }]);
        assert!(!e.is_paused(0, now + 5));
        assert!(e.on_pfc_received(&PfcFrame::default(), now).is_empty());
        assert!(!e.is_paused(0, now));
    }

    fn data(vl: u8, wire: u32) -> Packet {
        Packet {
            kind: PacketKind::Data {
                flow: 0,
                seq: 0,
                payload_bytes: wire - 108,
                level_at_send: 0,
            },
            src: 0,
            dst: 1,
            vl,
            ecn: Ecn::Ect0,
            wire_bytes: wire,
            sent_at: SimTime::ZERO,
            marked_by: None,
        }
    }

    fn pfc(vl: u8, quanta: u16) -> Packet {
        Packet {
            kind: PacketKind::Pfc(PfcFrame::single(vl, quanta)),
            src: 0,
            dst: 1,
            vl,
            ecn: Ecn::NotEct,
            wire_bytes: 64,
            sent_at: SimTime::ZERO,
            marked_by: None,
        }
    }

    fn fifo_pick(q: &mut VecDeque<Packet>, e: &Egress, now: SimTime) -> Option<Packet> {
        let vl = q.front()?.vl;
        (!e.is_paused(vl, now)).then(|| q.pop_front()).flatten()
    }

    #[test]
    fn serialization_time_of_mtu_packet() {
        let mut e = Egress::new(40_000_000_000, 100, 1, (0, 0));
        let tx = e
            .transmit_next(SimTime::ZERO, |_| Some(data(0, 2156)))
            .unwrap();
        assert_eq!(tx.completes_at, SimTime::from_ns(431));
        assert_eq!(tx.arrives_at, SimTime::from_ns(531));
        assert_eq!(tx.head_at, SimTime::from_ns(100));
        // busy wire refuses a second frame
        assert!(e
            .transmit_next(SimTime::from_ns(200), |_| Some(data(0, 2156)))
            .is_none());
        // five back-to-back packets take exactly 2156 ns
        let mut t = tx.completes_at;
        for _ in 0..4 {
            t = e
                .transmit_next(t, |_| Some(data(0, 2156)))
                .unwrap()
                .completes_at;
        }
        assert_eq!(t, SimTime::from_ns(2156));
    }

    #[test]
    fn paused_vl_leaves_wire_idle() {
        let mut e = Egress::new(40_000_000_000, 100, 1, (0, 0));
        e.on_pfc_received(&PfcFrame::single(0, 65_535), SimTime::ZERO);
        let mut q = VecDeque::from([data(0, 2156)]);
        let now = SimTime::from_ns(10);
        assert!(e
            .transmit_next(now, |e| fifo_pick(&mut q, e, now))
            .is_none());
        assert_eq!(q.len(), 1);
    }

    #[test]
    fn pause_frames_jump_the_queue() {
        let mut e = Egress::new(40_000_000_000, 100, 1, (0, 0));
        e.on_pfc_received(&PfcFrame::single(0, 65_535), SimTime::ZERO);
        let mut q = VecDeque::from([data(0, 2156), data(0, 2156), data(0, 2156)]);
        e.push_control(pfc(0, 65_535));
        let now = SimTime::from_ns(10);
        let tx = e.transmit_next(now, |e| fifo_pick(&mut q, e, now)).unwrap();
        assert!(tx.packet.is_pfc());
        assert_eq!(q.len(), 3);
    }

    #[test]
    fn marking_egress_sets_ce_on_data_only() {
        let mut e = Egress::new(40_000_000_000, 0, 1, (6, 2));
        e.ecn_marking_active = true;
        let tx = e
            .transmit_next(SimTime::ZERO, |_| Some(data(0, 2156)))
            .unwrap();
        assert_eq!(tx.packet.ecn, Ecn::Ce);
        assert_eq!(tx.packet.marked_by, Some((6, 2)));
        e.push_control(pfc(0, 0));
        let tx = e.transmit_next(tx.completes_at, |_| None).unwrap();
        assert_eq!(tx.packet.ecn, Ecn::NotEct);
    }
}
