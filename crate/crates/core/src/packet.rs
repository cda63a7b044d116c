use serde::Serialize;

use crate::config::NodeId;
use crate::kernel::SimTime;

/// The two-bit IP ECN field.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize)]
pub enum Ecn {
    /// `00`
    #[default]
    NotEct,
    /// `01`
    Ect1,
    /// `10`
    Ect0,
    /// `11`, congestion experienced
    Ce,
}

impl Ecn {
    pub fn bits(self) -> u8 {
        match self {
            Ecn::NotEct => 0b00,
            Ecn::Ect1 => 0b01,
            Ecn::Ect0 => 0b10,
            Ecn::Ce => 0b11,
        }
    }

    pub fn from_bits(bits: u8) -> Self {
        match bits & 0b11 {
            0b00 => Ecn::NotEct,
            0b01 => Ecn::Ect1,
            0b10 => Ecn::Ect0,
            _ => Ecn::Ce,
        }
    }
}

/// Identity of a rate-controlled connection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct FlowKey {
    pub src: NodeId,
    pub dst: NodeId,
    pub vl: u8,
}

/// A per-priority pause frame. Quanta are 512 bit times at the link rate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PfcFrame {
    pub class_enable: u8,
    pub pause_quanta: [u16; 8],
}

impl PfcFrame {
    pub fn single(vl: u8, quanta: u16) -> Self {
        let mut f = PfcFrame {
            class_enable: 1 << vl,
            ..Default::default()
        };
        f.pause_quanta[vl as usize] = quanta;
        f
    }

    /// `(vl, quanta)` for every enabled class.
    pub fn enabled(&self) -> impl Iterator<Item = (u8, u16)> + '_ {
        (0..8u8)
            .filter(|vl| self.class_enable & (1 << vl) != 0)
            .map(|vl| (vl, self.pause_quanta[vl as usize]))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PacketKind {
    Data {
        flow: u32,
        seq: u64,
        payload_bytes: u32,
        /// Rate level of the sender when this packet was injected.
        level_at_send: u32,
    },
    Cnp {
        flow: FlowKey,
    },
    Pfc(PfcFrame),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Packet {
    pub kind: PacketKind,
    pub src: NodeId,
    pub dst: NodeId,
    pub vl: u8,
    pub ecn: Ecn,
    pub wire_bytes: u32,
    pub sent_at: SimTime,
    /// `(node, port)` whose egress first set CE on this packet.
    pub marked_by: Option<(NodeId, u32)>,
}

impl Packet {
    pub fn is_data(&self) -> bool {
        matches!(self.kind, PacketKind::Data { .. })
    }

    pub fn is_pfc(&self) -> bool {
        matches!(self.kind, PacketKind::Pfc(_))
    }

    pub fn payload_bytes(&self) -> u32 {
        match self.kind {
            PacketKind::Data { payload_bytes, .. } => payload_bytes,
            _ => 0,
        }
    }

    pub fn flow_key(&self) -> Option<FlowKey> {
        match self.kind {
            PacketKind::Data { .. } => Some(FlowKey {
                src: self.src,
                dst: self.dst,
                vl: self.vl,
            }),
            PacketKind::Cnp { flow } => Some(flow),
            PacketKind::Pfc(_) => None,
        }
    }
}
