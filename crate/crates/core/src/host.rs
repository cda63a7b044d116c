//! Channel-adapter endpoints: message segmentation, paced injection under
//! the CNP rate ladder, and CNP reflection at the receiver.
//!
//! The ladder is linear in packet times. With `T` the wire time of one MTU
//! data packet and `k` the current level, consecutive packets of a flow start
//! at least `(k + 1) × T` apart. Each CNP raises `k` by one; each recovery
//! event lowers it by one until it is back at line rate.

use crate::config::{MessageSize, RcmConfig, RecoveryCombine};
use crate::kernel::{EventId, FracTime, SimTime};
use crate::packet::{Ecn, FlowKey, Packet, PacketKind};

/// Payload sizes of the packets a message is cut into.
#[derive(Clone, Debug)]
pub struct Segmenter {
    remaining: Option<u64>,
    mtu: u32,
}

pub fn segment_message(message: MessageSize, mtu_payload_bytes: u32) -> Segmenter {
    assert!(mtu_payload_bytes > 0);
    Segmenter {
        remaining: match message {
            MessageSize::Bytes(n) => Some(n),
            MessageSize::Unbounded => None,
        },
        mtu: mtu_payload_bytes,
    }
}

impl Segmenter {
    pub fn is_done(&self) -> bool {
        self.remaining == Some(0)
    }
}

impl Iterator for Segmenter {
    type Item = u32;

    fn next(&mut self) -> Option<u32> {
        match self.remaining.as_mut() {
            None => Some(self.mtu),
            Some(0) => None,
            Some(rem) => {
                let take = (*rem).min(self.mtu as u64);
                *rem -= take;
                Some(take as u32)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RecoveryPolicy {
    pub time_ns: u64,
    pub bytes: u64,
    pub combine: RecoveryCombine,
}

impl From<&RcmConfig> for RecoveryPolicy {
    fn from(c: &RcmConfig) -> Self {
        RecoveryPolicy {
            time_ns: c.recovery_time_ns,
            bytes: c.recovery_bytes,
            combine: c.recovery_combine,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LevelCause {
    Cnp,
    Recovery,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LevelChange {
    pub old: u32,
    pub new: u32,
    pub cause: LevelCause,
}

/// Per-flow injection pacing.
#[derive(Clone, Debug)]
pub struct RateController {
    level: u32,
    rate_bps: u64,
    /// Bits of one MTU data packet on the wire; `T` is their wire time.
    mtu_wire_bits: u64,
    policy: RecoveryPolicy,
    next_eligible: FracTime,
    last_start: Option<FracTime>,
    bytes_since_change: u64,
    last_change_at: SimTime,
    last_cnp_at: Option<SimTime>,
    /// Pending recovery timer event.
    pub timer: Option<EventId>,
}

impl RateController {
    pub fn new(rate_bps: u64, mtu_wire_bytes: u32, policy: RecoveryPolicy) -> Self {
        RateController {
            level: 0,
            rate_bps,
            mtu_wire_bits: mtu_wire_bytes as u64 * 8,
            policy,
            next_eligible: FracTime::default(),
            last_start: None,
            bytes_since_change: 0,
            last_change_at: SimTime::ZERO,
            last_cnp_at: None,
            timer: None,
        }
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn last_cnp_at(&self) -> Option<SimTime> {
        self.last_cnp_at
    }

    pub fn bytes_since_change(&self) -> u64 {
        self.bytes_since_change
    }

    /// `T` in nanoseconds, exactly.
    pub fn packet_time_ns(&self) -> f64 {
        self.mtu_wire_bits as f64 * 1e9 / self.rate_bps as f64
    }

    /// Current spacing, `(k + 1) × T`, as an exact offset from zero.
    pub fn interval(&self) -> FracTime {
        FracTime::default().add_bits(self.mtu_wire_bits * (self.level as u64 + 1), self.rate_bps)
    }

    pub fn next_eligible(&self) -> FracTime {
        self.next_eligible
    }

    pub fn next_injection_time(&self, now: SimTime) -> SimTime {
        now.max(self.next_eligible.ceil())
    }

    fn reanchor(&mut self) {
        if let Some(start) = self.last_start {
            self.next_eligible =
                start.add_bits(self.mtu_wire_bits * (self.level as u64 + 1), self.rate_bps);
        }
    }

    /// Records an injected packet. Returns a level change if the byte
    /// counter alone completed a recovery.
    pub fn on_transmit(&mut self, now: SimTime, payload_bytes: u32) -> Option<LevelChange> {
        // a packet released exactly at its eligible instant keeps the residue
        let start = if now == self.next_eligible.ceil() {
            self.next_eligible
        } else {
            FracTime::whole(now)
        };
        self.last_start = Some(start);
        self.next_eligible =
            start.add_bits(self.mtu_wire_bits * (self.level as u64 + 1), self.rate_bps);
        self.bytes_since_change += payload_bytes as u64;
        if self.level > 0 && self.recovery_due(now) {
            return self.recover(now);
        }
        None
    }

    pub fn on_cnp(&mut self, now: SimTime) -> LevelChange {
        let old = self.level;
        self.level += 1;
        self.last_cnp_at = Some(now);
        self.bytes_since_change = 0;
        self.last_change_at = now;
        self.reanchor();
        LevelChange {
            old,
            new: self.level,
            cause: LevelCause::Cnp,
        }
    }

    pub fn recovery_due(&self, now: SimTime) -> bool {
        let time_ok = now - self.last_change_at >= self.policy.time_ns;
        let bytes_ok = self.bytes_since_change >= self.policy.bytes;
        match self.policy.combine {
            RecoveryCombine::Any => time_ok || bytes_ok,
            RecoveryCombine::All => time_ok && bytes_ok,
        }
    }

    /// Steps one level back toward line rate. Level 0 stays at 0.
    pub fn recover(&mut self, now: SimTime) -> Option<LevelChange> {
        self.bytes_since_change = 0;
        self.last_change_at = now;
        if self.level == 0 {
            return None;
        }
        let old = self.level;
        self.level -= 1;
        self.reanchor();
        Some(LevelChange {
            old,
            new: self.level,
            cause: LevelCause::Recovery,
        })
    }

    /// Applies a recovery event if its condition holds.
    pub fn on_recovery_event(&mut self, now: SimTime) -> Option<LevelChange> {
        if self.level > 0 && self.recovery_due(now) {
            self.recover(now)
        } else {
            None
        }
    }

    /// When the time-based recovery condition next holds, if anything is left to recover.
    pub fn timer_deadline(&self) -> Option<SimTime> {
        (self.level > 0).then(|| self.last_change_at + self.policy.time_ns)
    }
}

/// Congestion notification for a CE-marked data packet, addressed back to its source.
pub fn reflect_cnp(
    packet: &Packet,
    now: SimTime,
    cnp_wire_bytes: u32,
    cnp_vl: Option<u8>,
) -> Option<Packet> {
    if !packet.is_data() || packet.ecn != Ecn::Ce {
        return None;
    }
    let flow = FlowKey {
        src: packet.src,
        dst: packet.dst,
        vl: packet.vl,
    };
    Some(Packet {
        kind: PacketKind::Cnp { flow },
        src: packet.dst,
        dst: packet.src,
        vl: cnp_vl.unwrap_or(packet.vl),
        ecn: Ecn::NotEct,
        wire_bytes: cnp_wire_bytes,
        sent_at: now,
        marked_by: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const RATE: u64 = 40_000_000_000;

    fn policy(combine: RecoveryCombine) -> RecoveryPolicy {
        RecoveryPolicy {
            time_ns: 100_000,
            bytes: 150 * 1024,
            combine,
        }
    }

    #[test]
    fn segmentation() {
        let sizes: Vec<u32> = segment_message(MessageSize::Bytes(10_000), 2048).collect();
        assert_eq!(sizes, [2048, 2048, 2048, 2048, 1808]);
        let sizes: Vec<u32> = segment_message(MessageSize::Bytes(2048), 2048).collect();
        assert_eq!(sizes, [2048]);
        assert!(segment_message(MessageSize::Unbounded, 2048)
            .take(1000)
            .all(|s| s == 2048));
    }

    #[test]
    fn line_rate_pacing_interval() {
        let mut rc = RateController::new(RATE, 2156, policy(RecoveryCombine::Any));
        // T = 2156 * 8 / 40e9 = 431.2 ns
        assert_eq!(
            rc.interval(),
            FracTime {
                ns: 431,
                rem: 8_000_000_000
            }
        );
        let mut t = SimTime::ZERO;
        let mut starts = vec![];
        for _ in 0..5 {
            t = rc.next_injection_time(t);
            starts.push(t.as_ns());
            rc.on_transmit(t, 2048);
        }
        assert_eq!(starts, [0, 432, 863, 1294, 1725]);
        assert_eq!(rc.next_eligible(), FracTime { ns: 2156, rem: 0 });
    }

    #[test]
    fn ladder_intervals() {
        let mut rc = RateController::new(RATE, 2156, policy(RecoveryCombine::Any));
        rc.on_cnp(SimTime::ZERO);
        assert_eq!(rc.interval().ns, 862);
        let gbps = 2048.0 * 8.0 / (2.0 * rc.packet_time_ns());
        assert!((gbps - 19.0).abs() < 0.01, "{gbps}");
        rc.on_cnp(SimTime::ZERO);
        assert_eq!(rc.level(), 2);
        rc.on_cnp(SimTime::ZERO);
        assert_eq!(
            rc.interval(),
            FracTime {
                ns: 1724,
                rem: 32_000_000_000
            }
        );
    }

    #[test]
    fn cnp_delays_the_next_packet() {
        let mut rc = RateController::new(RATE, 2156, policy(RecoveryCombine::Any));
        rc.on_transmit(SimTime::ZERO, 2048);
        rc.on_cnp(SimTime::from_ns(100));
        assert_eq!(
            rc.next_injection_time(SimTime::from_ns(100)),
            SimTime::from_ns(863)
        );
    }

    #[test]
    fn recovery_steps_down_one_level() {
        let mut rc = RateController::new(RATE, 2156, policy(RecoveryCombine::Any));
        for _ in 0..3 {
            rc.on_cnp(SimTime::ZERO);
        }
        assert_eq!(rc.timer_deadline(), Some(SimTime::from_us(100)));
        assert_eq!(rc.on_recovery_event(SimTime::from_us(50)), None);
        let ch = rc.on_recovery_event(SimTime::from_us(100)).unwrap();
        assert_eq!((ch.old, ch.new), (3, 2));
        assert_eq!(rc.interval().ns, 1293);
        assert_eq!(rc.timer_deadline(), Some(SimTime::from_us(200)));
    }

    #[test]
    fn level_zero_floor() {
        let mut rc = RateController::new(RATE, 2156, policy(RecoveryCombine::Any));
        assert_eq!(rc.recover(SimTime::from_us(500)), None);
        assert_eq!(rc.level(), 0);
        assert_eq!(rc.timer_deadline(), None);
    }

    #[test]
    fn all_combine_requires_bytes_too() {
        let mut rc = RateController::new(RATE, 2156, policy(RecoveryCombine::All));
        rc.on_cnp(SimTime::ZERO);
        rc.on_cnp(SimTime::ZERO);
        assert_eq!(rc.on_recovery_event(SimTime::from_us(150)), None);
        assert_eq!(rc.level(), 2);
        // 75 packets of 2048 bytes reach the 150 KiB threshold
        let mut change = None;
        for i in 0..75 {
            change = change.or(rc.on_transmit(SimTime::from_us(150 + i), 2048));
        }
        assert_eq!(change.map(|c| c.new), Some(1));
    }

    #[test]
    fn any_combine_recovers_on_bytes_alone() {
        let mut rc = RateController::new(RATE, 2156, policy(RecoveryCombine::Any));
        rc.on_cnp(SimTime::ZERO);
        let mut change = None;
        for i in 0..75 {
            change = change.or(rc.on_transmit(SimTime::from_ns(1 + i), 2048));
        }
        assert_eq!(change.map(|c| c.cause), Some(LevelCause::Recovery));
        assert_eq!(rc.level(), 0);
    }

    fn data(ecn: Ecn) -> Packet {
        Packet {
            kind: PacketKind::Data {
                flow: 0,
                seq: 0,
                payload_bytes: 2048,
                level_at_send: 0,
            },
            src: 0,
            dst: 4,
            vl: 0,
            ecn,
            wire_bytes: 2156,
            sent_at: SimTime::ZERO,
            marked_by: None,
        }
    }

    #[test]
    fn cnp_reflection() {
        let cnp = reflect_cnp(&data(Ecn::Ce), SimTime::from_ns(9), 64, None).unwrap();
        assert_eq!((cnp.src, cnp.dst), (4, 0));
        assert_eq!(
            cnp.kind,
            PacketKind::Cnp {
                flow: FlowKey {
                    src: 0,
                    dst: 4,
                    vl: 0
                }
            }
        );
        assert_eq!(cnp.ecn, Ecn::NotEct);
        assert!(reflect_cnp(&data(Ecn::Ect0), SimTime::ZERO, 64, None).is_none());
        assert_eq!(
            reflect_cnp(&data(Ecn::Ce), SimTime::ZERO, 64, Some(1))
                .unwrap()
                .vl,
            1
        );
    }
}
