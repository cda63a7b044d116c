//! The simulated fabric: nodes, ports and flows driven by the event queue.

use std::collections::{BTreeMap, VecDeque};

use crate::config::{ConfigError, RcmConfig};
use crate::config::{FlowSpec, NodeKind, PortRef, RcmMode, Scenario, WatermarkMode};
use crate::host::{
    reflect_cnp, segment_message, LevelChange, RateController, RecoveryPolicy, Segmenter,
};
use crate::kernel::{
    bit_time_ceil_ns, ComponentId, EventId, EventPayload, EventQueue, KernelError, RunSummary,
    SimTime,
};
use crate::link::{Credit, Egress, IbufVl, LinkError, PfcAction, Transmission};
use crate::packet::{Ecn, FlowKey, Packet, PacketKind, PfcFrame};
use crate::stats::{build_report, Report, StatsError, StatsLedger};
use crate::switch::{
    detect_rcm_1a, detect_rcm_1b, marks_in, Arbiter, CongestionKind, CongestionState,
    OfferedWindow, Transition,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("at {at} on {node}:{port}: {source}")]
    Link {
        at: SimTime,
        node: String,
        port: u32,
        source: LinkError,
    },
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("no route from {node} toward {dst}")]
    NoRoute { node: String, dst: String },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum EventKind {
    FlowStart {
        flow: u32,
    },
    TransmitComplete {
        node: u32,
        port: u32,
    },
    /// First bit of a data packet or CNP reaches a port.
    PacketHead {
        node: u32,
        port: u32,
        vl: u8,
        wire_bytes: u32,
    },
    /// Last bit reaches a port; the packet is now fully received.
    PacketArrival {
        node: u32,
        port: u32,
        head_at: SimTime,
        packet: Box<Packet>,
    },
    PauseExpiry {
        node: u32,
        port: u32,
        vl: u8,
    },
    PauseRefresh {
        node: u32,
        port: u32,
        vl: u8,
    },
    RecoveryTimer {
        flow: u32,
    },
    PacingWakeup {
        node: u32,
        port: u32,
    },
    CongestionCheck {
        node: u32,
        port: u32,
    },
    StatsSample,
}

impl EventPayload for EventKind {
    fn target(&self) -> ComponentId {
        use EventKind::*;
        match *self {
            FlowStart { flow } | RecoveryTimer { flow } => ComponentId::Flow(flow),
            TransmitComplete { node, port }
            | PacketHead { node, port, .. }
            | PacketArrival { node, port, .. }
            | PauseExpiry { node, port, .. }
            | PauseRefresh { node, port, .. }
            | PacingWakeup { node, port }
            | CongestionCheck { node, port } => ComponentId::Port { node, port },
            StatsSample => ComponentId::Stats,
        }
    }

    fn kind(&self) -> &'static str {
        use EventKind::*;
        match self {
            FlowStart { .. } => "FlowStart",
            TransmitComplete { .. } => "TransmitComplete",
            PacketHead { .. } => "PacketHead",
            PacketArrival { .. } => "PacketArrival",
            PauseExpiry { .. } => "PauseExpiry",
            PauseRefresh { .. } => "PauseRefresh",
            RecoveryTimer { .. } => "RecoveryTimer",
            PacingWakeup { .. } => "PacingWakeup",
            CongestionCheck { .. } => "CongestionCheck",
            StatsSample => "StatsSample",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SimOptions {
    pub seed: u64,
    pub trace: bool,
}

/// Receive side of one port.
#[derive(Debug)]
struct Ingress {
    vls: Vec<IbufVl>,
    /// Fully received packets by `[vl][output port]`.
    voq: Vec<Vec<VecDeque<Packet>>>,
    rate_bps: u64,
}

/// Injection state of one CA port.
#[derive(Debug, Default)]
struct CaPort {
    cnps: Vec<VecDeque<Packet>>,
    flows: Vec<u32>,
    arbiter: Option<Arbiter>,
    wakeup: Option<EventId>,
}

#[derive(Debug)]
struct NodeState {
    kind: NodeKind,
    peers: Vec<Option<PortRef>>,
    egress: Vec<Egress>,
    ingress: Vec<Ingress>,
    // switches
    arbiters: Vec<Arbiter>,
    backlog_bytes: Vec<u64>,
    congestion: Vec<CongestionState>,
    offered: Vec<OfferedWindow>,
    // CAs
    ca: Vec<CaPort>,
}

#[derive(Debug)]
struct FlowState {
    key: FlowKey,
    port: u32,
    overhead: u32,
    segments: Segmenter,
    next_payload: Option<u32>,
    seq: u64,
    rate: RateController,
    active: bool,
}

/// A fabric instance bound to its event queue.
pub struct Simulation {
    queue: EventQueue<EventKind>,
    net: Network,
}

struct Network {
    names: Vec<String>,
    routes: BTreeMap<(u32, u32), u32>,
    nodes: Vec<NodeState>,
    flows: Vec<FlowState>,
    flow_by_key: BTreeMap<FlowKey, u32>,
    rcm: RcmConfig,
    num_vls: u8,
    pfc_frame_bytes: u32,
    refresh_guard_percent: u32,
    cnp_last_sent: BTreeMap<FlowKey, SimTime>,
    stats: StatsLedger,
    sample_every: u64,
    occupancy_samples: Vec<OccupancySample>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OccupancySample {
    pub time: SimTime,
    pub node: u32,
    pub port: u32,
    pub vl: u8,
    pub credits: u32,
}

type Q = EventQueue<EventKind>;

impl Simulation {
    pub fn new(scn: &Scenario, opts: &SimOptions) -> Result<Self, SimError> {
        scn.validate()?;
        let mech = &scn.mechanism;
        let topo = &scn.topology;
        let num_vls = mech.num_vls;
        let mut queue = EventQueue::new(opts.seed);
        if opts.trace {
            queue.enable_trace();
        }

        let mut nodes = Vec::with_capacity(topo.nodes.len());
        for (id, node) in topo.nodes.iter().enumerate() {
            let id = id as u32;
            let ports = node.ports as usize;
            let mut peers = Vec::with_capacity(ports);
            let mut egress = Vec::with_capacity(ports);
            let mut ingress = Vec::with_capacity(ports);
            for port in 0..node.ports {
                let here = PortRef { node: id, port };
                let link = topo.link_at(here).map(|(_, l)| l);
                peers.push(topo.peer(here));
                let (rate, delay) = link.map_or((1, 0), |l| (l.rate_bps, l.propagation_delay_ns));
                egress.push(Egress::new(rate, delay, num_vls, (id, port)));
                let watermarks = match link {
                    Some(l) if mech.pfc.enabled => watermarks_for(scn, l)?,
                    _ => crate::link::Watermarks {
                        high: Credit(mech.ibuf_capacity_credits),
                        low: Credit(0),
                    },
                };
                ingress.push(Ingress {
                    vls: (0..num_vls)
                        .map(|vl| {
                            IbufVl::new(
                                vl,
                                Credit(mech.ibuf_capacity_credits),
                                watermarks,
                                mech.pfc.enabled,
                                mech.pfc.pause_quanta,
                            )
                        })
                        .collect(),
                    voq: vec![vec![VecDeque::new(); ports]; num_vls as usize],
                    rate_bps: link.map_or(0, |l| l.rate_bps),
                });
            }
            let is_switch = node.kind == NodeKind::Ne;
            nodes.push(NodeState {
                kind: node.kind,
                peers,
                egress,
                ingress,
                arbiters: if is_switch {
                    (0..ports)
                        .map(|_| Arbiter::new(ports * num_vls as usize))
                        .collect()
                } else {
                    Vec::new()
                },
                backlog_bytes: vec![0; ports],
                congestion: vec![CongestionState::default(); ports],
                offered: (0..ports).map(|_| OfferedWindow::new(ports)).collect(),
                ca: if is_switch {
                    Vec::new()
                } else {
                    (0..ports)
                        .map(|_| CaPort {
                            cnps: vec![VecDeque::new(); num_vls as usize],
                            ..Default::default()
                        })
                        .collect()
                },
            });
        }

        let mut flows = Vec::with_capacity(scn.flows.len());
        let mut flow_names = Vec::with_capacity(scn.flows.len());
        for (i, f) in scn.flows.iter().enumerate() {
            let port = *topo
                .routes
                .get(&(f.src, f.dst))
                .ok_or_else(|| SimError::NoRoute {
                    node: topo.name(f.src).into(),
                    dst: topo.name(f.dst).into(),
                })?;
            let rate_bps = nodes[f.src as usize].egress[port as usize].rate_bps;
            let key = FlowKey {
                src: f.src,
                dst: f.dst,
                vl: f.vl,
            };
            nodes[f.src as usize].ca[port as usize].flows.push(i as u32);
            flows.push(new_flow(
                f,
                key,
                port,
                rate_bps,
                mech.overhead_bytes_per_packet,
                scn,
            ));
            flow_names.push((f.name.clone(), key));
            queue.schedule(f.start_time, EventKind::FlowStart { flow: i as u32 })?;
        }
        for node in nodes.iter_mut() {
            for ca in node.ca.iter_mut() {
                ca.arbiter = Some(Arbiter::new(num_vls as usize + ca.flows.len()));
            }
        }
        let names: Vec<String> = topo.nodes.iter().map(|n| n.name.clone()).collect();
        let sample_every = scn.stats.throughput_window_ns;
        queue.schedule(SimTime::from_ns(sample_every), EventKind::StatsSample)?;
        Ok(Simulation {
            queue,
            net: Network {
                stats: StatsLedger::new(scn.stats.throughput_window_ns, names.clone(), flow_names),
                names,
                routes: topo.routes.clone(),
                nodes,
                flows,
                flow_by_key: BTreeMap::new(),
                rcm: mech.rcm.clone(),
                num_vls,
                pfc_frame_bytes: mech.pfc.frame_wire_bytes,
                refresh_guard_percent: mech.pfc.refresh_guard_percent,
                cnp_last_sent: BTreeMap::new(),
                sample_every,
                occupancy_samples: Vec::new(),
            },
        })
    }

    pub fn now(&self) -> SimTime {
        self.queue.now()
    }

    pub fn run_until(&mut self, t_end: SimTime) -> Result<RunSummary, SimError> {
        let net = &mut self.net;
        let summary = self
            .queue
            .run_until(t_end, |q, ev| net.handle(q, ev.payload))?;
        net.stats.events += summary.events;
        Ok(summary)
    }

    pub fn ledger(&self) -> &StatsLedger {
        &self.net.stats
    }

    /// Closes open intervals at the current clock and builds the report.
    pub fn report(&mut self) -> Report {
        let now = self.queue.now();
        self.net.stats.close_open_intervals(now);
        build_report(&self.net.stats, now)
    }

    pub fn take_trace(&mut self) -> Option<String> {
        self.queue.take_trace()
    }

    pub fn flow_level(&self, flow: u32) -> u32 {
        self.net.flows[flow as usize].rate.level()
    }

    /// Packets injected but not yet delivered.
    pub fn packets_in_flight(&self, flow: u32) -> u64 {
        let f = &self.net.stats.flows[flow as usize];
        f.packets_sent - f.packets_delivered
    }

    /// Highest ibuf occupancy seen on every `(node, port, vl)`.
    pub fn max_occupancy(&self) -> Vec<((u32, u32, u8), Credit, Credit)> {
        let mut out = Vec::new();
        for (n, node) in self.net.nodes.iter().enumerate() {
            for (p, ing) in node.ingress.iter().enumerate() {
                for b in &ing.vls {
                    out.push(((n as u32, p as u32, b.vl), b.max_occupancy, b.capacity));
                }
            }
        }
        out
    }

    /// VLs whose pause was sent and never resumed.
    pub fn active_pauses(&self) -> Vec<(u32, u32, u8)> {
        let mut out = Vec::new();
        for (n, node) in self.net.nodes.iter().enumerate() {
            for (p, ing) in node.ingress.iter().enumerate() {
                for b in ing.vls.iter().filter(|b| b.pause_sent_active) {
                    out.push((n as u32, p as u32, b.vl));
                }
            }
        }
        out
    }

    pub fn occupancy_samples(&self) -> &[OccupancySample] {
        &self.net.occupancy_samples
    }

    pub fn events_scheduled(&self) -> u64 {
        self.queue.scheduled_count()
    }

    pub fn events_cancelled(&self) -> u64 {
        self.queue.cancelled_count()
    }

    pub fn events_pending(&self) -> usize {
        self.queue.len()
    }
}

fn new_flow(
    f: &FlowSpec,
    key: FlowKey,
    port: u32,
    rate_bps: u64,
    overhead: u32,
    scn: &Scenario,
) -> FlowState {
    let mut segments = segment_message(f.message_bytes, f.mtu_payload_bytes);
    let next_payload = segments.next();
    FlowState {
        key,
        port,
        overhead,
        segments,
        next_payload,
        seq: 0,
        rate: RateController::new(
            rate_bps,
            f.mtu_payload_bytes + overhead,
            RecoveryPolicy::from(&scn.mechanism.rcm),
        ),
        active: false,
    }
}

/// What a switch arbiter granted, for post-grant bookkeeping.
struct Grant {
    input: usize,
    vl: u8,
}

enum Picked {
    Switch(Grant),
    Flow(u32, Option<LevelChange>),
    Cnp,
}

impl Network {
    fn handle(&mut self, q: &mut Q, ev: EventKind) -> Result<(), SimError> {
        let now = q.now();
        match ev {
            EventKind::FlowStart { flow } => {
                let f = &mut self.flows[flow as usize];
                f.active = f.next_payload.is_some();
                if f.active {
                    self.flow_by_key.insert(f.key, flow);
                }
                let (src, port) = (f.key.src, f.port);
                self.try_transmit(q, src, port)?;
            }
            EventKind::TransmitComplete { node, port } | EventKind::PacingWakeup { node, port } => {
                if matches!(ev, EventKind::PacingWakeup { .. }) {
                    self.nodes[node as usize].ca[port as usize].wakeup = None;
                }
                self.try_transmit(q, node, port)?;
            }
            EventKind::PacketHead {
                node,
                port,
                vl,
                wire_bytes,
            } => {
                let action = self.nodes[node as usize].ingress[port as usize].vls[vl as usize]
                    .on_ibuf_enqueue(wire_bytes)
                    .map_err(|source| SimError::Link {
                        at: now,
                        node: self.names[node as usize].clone(),
                        port,
                        source,
                    })?;
                if let Some(a) = action {
                    self.apply_pfc_action(q, node, port, a)?;
                }
            }
            EventKind::PacketArrival {
                node,
                port,
                head_at,
                packet,
            } => self.on_arrival(q, node, port, head_at, *packet)?,
            EventKind::PauseExpiry { node, port, vl } => {
                let eg = &mut self.nodes[node as usize].egress[port as usize];
                if eg.expire_pause(vl, now) {
                    self.stats.pause_ended(node, port, vl, now);
                    self.try_transmit(q, node, port)?;
                }
            }
            EventKind::PauseRefresh { node, port, vl } => {
                let b = &mut self.nodes[node as usize].ingress[port as usize].vls[vl as usize];
                b.refresh = None;
                if b.needs_refresh() {
                    let quanta = b.pause_quanta;
                    self.send_pfc(q, node, port, vl, quanta)?;
                }
            }
            EventKind::RecoveryTimer { flow } => {
                let f = &mut self.flows[flow as usize];
                f.rate.timer = None;
                if let Some(change) = f.rate.on_recovery_event(now) {
                    self.after_level_change(q, flow, change)?;
                    let f = &self.flows[flow as usize];
                    let (src, port) = (f.key.src, f.port);
                    self.try_transmit(q, src, port)?;
                }
            }
            EventKind::CongestionCheck { node, port } => {
                self.nodes[node as usize].congestion[port as usize].clear_timer = None;
                self.run_detector(q, node, port)?;
            }
            EventKind::StatsSample => {
                for (n, node) in self.nodes.iter().enumerate() {
                    if node.kind != NodeKind::Ne {
                        continue;
                    }
                    for (p, ing) in node.ingress.iter().enumerate() {
                        for b in ing.vls.iter().filter(|b| b.occupancy_bytes > 0) {
                            self.occupancy_samples.push(OccupancySample {
                                time: now,
                                node: n as u32,
                                port: p as u32,
                                vl: b.vl,
                                credits: b.occupancy().0,
                            });
                        }
                    }
                }
                q.schedule(now + self.sample_every, EventKind::StatsSample)?;
            }
        }
        Ok(())
    }

    fn on_arrival(
        &mut self,
        q: &mut Q,
        node: u32,
        port: u32,
        head_at: SimTime,
        packet: Packet,
    ) -> Result<(), SimError> {
        let now = q.now();
        let n = node as usize;
        if let PacketKind::Pfc(frame) = packet.kind {
            return self.on_pfc(q, node, port, &frame);
        }
        if self.nodes[n].kind == NodeKind::Ca {
            let b = &mut self.nodes[n].ingress[port as usize].vls[packet.vl as usize];
            if let Some(a) = b.on_ibuf_dequeue(packet.wire_bytes) {
                self.apply_pfc_action(q, node, port, a)?;
            }
            return self.consume(q, node, packet);
        }
        let dst = packet.dst;
        let out = *self
            .routes
            .get(&(node, dst))
            .ok_or_else(|| SimError::NoRoute {
                node: self.names[n].clone(),
                dst: self.names[dst as usize].clone(),
            })?;
        let ns = &mut self.nodes[n];
        ns.backlog_bytes[out as usize] += packet.wire_bytes as u64;
        ns.offered[out as usize].record(port as usize, head_at, packet.wire_bytes);
        ns.ingress[port as usize].voq[packet.vl as usize][out as usize].push_back(packet);
        let _ = now;
        self.try_transmit(q, node, out)
    }

    /// Sink side of a CA: deliver data and reflect CNPs, or apply a CNP.
    fn consume(&mut self, q: &mut Q, node: u32, packet: Packet) -> Result<(), SimError> {
        let now = q.now();
        match packet.kind {
            PacketKind::Data {
                flow,
                payload_bytes,
                ..
            } => {
                self.stats
                    .record_delivery(flow, payload_bytes, packet.sent_at, now)?;
                if packet.ecn != Ecn::Ce {
                    return Ok(());
                }
                self.stats.flows[flow as usize].marked_packets_received += 1;
                let key = packet.flow_key().expect("data packet has a flow");
                let min_gap = self.rcm.min_cnp_interval_ns;
                if min_gap > 0 {
                    if let Some(&last) = self.cnp_last_sent.get(&key) {
                        if now - last < min_gap {
                            return Ok(());
                        }
                    }
                }
                let Some(cnp) = reflect_cnp(&packet, now, self.rcm.cnp_wire_bytes, self.rcm.cnp_vl)
                else {
                    return Ok(());
                };
                self.cnp_last_sent.insert(key, now);
                self.stats.flows[flow as usize].cnps_sent += 1;
                let out = *self
                    .routes
                    .get(&(node, cnp.dst))
                    .ok_or_else(|| SimError::NoRoute {
                        node: self.names[node as usize].clone(),
                        dst: self.names[cnp.dst as usize].clone(),
                    })?;
                self.nodes[node as usize].ca[out as usize].cnps[cnp.vl as usize].push_back(cnp);
                self.try_transmit(q, node, out)
            }
            PacketKind::Cnp { flow: key } => {
                let Some(&flow) = self.flow_by_key.get(&key) else {
                    self.stats.unknown_flow_cnps += 1;
                    return Ok(());
                };
                self.stats.flows[flow as usize].cnps_received_at_src += 1;
                let change = self.flows[flow as usize].rate.on_cnp(now);
                self.after_level_change(q, flow, change)?;
                let f = &self.flows[flow as usize];
                let (src, port) = (f.key.src, f.port);
                self.try_transmit(q, src, port)
            }
            PacketKind::Pfc(_) => unreachable!("pause frames are handled by the port"),
        }
    }

    fn after_level_change(
        &mut self,
        q: &mut Q,
        flow: u32,
        change: LevelChange,
    ) -> Result<(), SimError> {
        let now = q.now();
        self.stats
            .record_rate_change(flow, now, change.old, change.new, change.cause);
        let rc = &mut self.flows[flow as usize].rate;
        if let Some(t) = rc.timer.take() {
            q.cancel(t);
        }
        if let Some(deadline) = rc.timer_deadline().filter(|&d| d > now) {
            rc.timer = Some(q.schedule(deadline, EventKind::RecoveryTimer { flow })?);
        }
        Ok(())
    }

    fn on_pfc(
        &mut self,
        q: &mut Q,
        node: u32,
        port: u32,
        frame: &PfcFrame,
    ) -> Result<(), SimError> {
        let now = q.now();
        let eg = &mut self.nodes[node as usize].egress[port as usize];
        let changes = eg.on_pfc_received(frame, now);
        let mut resumed = false;
        for ch in changes {
            if let Some(old) = eg.expiry[ch.vl as usize].take() {
                q.cancel(old);
            }
            match ch.until {
                Some(until) => {
                    eg.expiry[ch.vl as usize] = Some(q.schedule(
                        until,
                        EventKind::PauseExpiry {
                            node,
                            port,
                            vl: ch.vl,
                        },
                    )?);
                    self.stats.pause_started(node, port, ch.vl, now);
                }
                None => {
                    self.stats.pause_ended(node, port, ch.vl, now);
                    resumed = true;
                }
            }
        }
        if resumed {
            self.try_transmit(q, node, port)?;
        }
        Ok(())
    }

    fn apply_pfc_action(
        &mut self,
        q: &mut Q,
        node: u32,
        port: u32,
        action: PfcAction,
    ) -> Result<(), SimError> {
        let PfcAction::SendPfc { vl, quanta } = action;
        self.send_pfc(q, node, port, vl, quanta)
    }

    fn send_pfc(
        &mut self,
        q: &mut Q,
        node: u32,
        port: u32,
        vl: u8,
        quanta: u16,
    ) -> Result<(), SimError> {
        let now = q.now();
        let ns = &mut self.nodes[node as usize];
        let Some(peer) = ns.peers[port as usize] else {
            return Ok(());
        };
        let frame = Packet {
            kind: PacketKind::Pfc(PfcFrame::single(vl, quanta)),
            src: node,
            dst: peer.node,
            vl,
            ecn: Ecn::NotEct,
            wire_bytes: self.pfc_frame_bytes,
            sent_at: now,
            marked_by: None,
        };
        ns.egress[port as usize].push_control(frame);
        *self.stats.pfc_frames_sent.entry((node, port)).or_default() += 1;
        let rate = ns.egress[port as usize].rate_bps;
        let b = &mut ns.ingress[port as usize].vls[vl as usize];
        if let Some(old) = b.refresh.take() {
            q.cancel(old);
        }
        if quanta > 0 {
            let duration = bit_time_ceil_ns(quanta as u64 * 512, rate);
            let lead = duration * (100 - self.refresh_guard_percent as u64) / 100;
            b.refresh = Some(q.schedule(
                now + lead.max(1),
                EventKind::PauseRefresh { node, port, vl },
            )?);
        }
        self.try_transmit(q, node, port)
    }

    /// Starts the next frame on `(node, port)` if its wire is idle.
    fn try_transmit(&mut self, q: &mut Q, node: u32, port: u32) -> Result<(), SimError> {
        let now = q.now();
        let n = node as usize;
        let p = port as usize;
        let Some(peer) = self.nodes[n].peers[p] else {
            return Ok(());
        };
        if self.nodes[n].egress[p].is_busy(now) {
            return Ok(());
        }
        let (tx, picked) = if self.nodes[n].egress[p].pending_control() > 0 {
            (self.nodes[n].egress[p].transmit_next(now, |_| None), None)
        } else {
            let picked = match self.nodes[n].kind {
                NodeKind::Ne => self.pick_switch(n, p, now),
                NodeKind::Ca => self.pick_ca(q, n, p, now)?,
            };
            let Some((packet, picked)) = picked else {
                return Ok(());
            };
            (
                self.nodes[n].egress[p].transmit_next(now, move |_| Some(packet)),
                Some(picked),
            )
        };
        let Some(tx) = tx else {
            return Ok(());
        };
        self.launch(q, node, port, peer, &tx)?;
        match picked {
            Some(Picked::Switch(g)) => {
                let b = &mut self.nodes[n].ingress[g.input].vls[g.vl as usize];
                if let Some(a) = b.on_ibuf_dequeue(tx.packet.wire_bytes) {
                    self.apply_pfc_action(q, node, g.input as u32, a)?;
                }
                self.stats.record_forward(
                    node,
                    port,
                    tx.packet.flow_key(),
                    tx.packet.marked_by == Some((node, port)),
                );
                if self.rcm.mode != RcmMode::Off {
                    self.run_detector(q, node, port)?;
                }
            }
            Some(Picked::Flow(flow, change)) => {
                if let Some(change) = change {
                    self.after_level_change(q, flow, change)?;
                }
            }
            Some(Picked::Cnp) | None => {}
        }
        Ok(())
    }

    fn launch(
        &mut self,
        q: &mut Q,
        node: u32,
        port: u32,
        peer: PortRef,
        tx: &Transmission,
    ) -> Result<(), SimError> {
        q.schedule(tx.completes_at, EventKind::TransmitComplete { node, port })?;
        if !tx.packet.is_pfc() {
            q.schedule(
                tx.head_at,
                EventKind::PacketHead {
                    node: peer.node,
                    port: peer.port,
                    vl: tx.packet.vl,
                    wire_bytes: tx.packet.wire_bytes,
                },
            )?;
        }
        q.schedule(
            tx.arrives_at,
            EventKind::PacketArrival {
                node: peer.node,
                port: peer.port,
                head_at: tx.head_at,
                packet: Box::new(tx.packet.clone()),
            },
        )?;
        Ok(())
    }

    fn pick_switch(&mut self, n: usize, out: usize, now: SimTime) -> Option<(Packet, Picked)> {
        let num_vls = self.num_vls as usize;
        let ns = &mut self.nodes[n];
        let egress = &ns.egress[out];
        let ingress = &ns.ingress;
        let granted = ns.arbiters[out].arbitrate(|qi| {
            let (input, vl) = (qi / num_vls, qi % num_vls);
            !ingress[input].voq[vl][out].is_empty() && !egress.is_paused(vl as u8, now)
        })?;
        let (input, vl) = (granted / num_vls, granted % num_vls);
        let packet = ns.ingress[input].voq[vl][out].pop_front()?;
        ns.backlog_bytes[out] -= packet.wire_bytes as u64;
        Some((
            packet,
            Picked::Switch(Grant {
                input,
                vl: vl as u8,
            }),
        ))
    }

    fn pick_ca(
        &mut self,
        q: &mut Q,
        n: usize,
        p: usize,
        now: SimTime,
    ) -> Result<Option<(Packet, Picked)>, SimError> {
        let num_vls = self.num_vls as usize;
        let ns = &mut self.nodes[n];
        let egress = &ns.egress[p];
        let ca = &mut ns.ca[p];
        let flows = &self.flows;
        let cnps = &ca.cnps;
        let flow_ids = &ca.flows;
        let pick = ca.arbiter.as_mut().and_then(|arb| {
            arb.arbitrate(|c| {
                if c < num_vls {
                    !cnps[c].is_empty() && !egress.is_paused(c as u8, now)
                } else {
                    let f = &flows[flow_ids[c - num_vls] as usize];
                    f.active
                        && !egress.is_paused(f.key.vl, now)
                        && f.rate.next_injection_time(now) <= now
                }
            })
        });
        match pick {
            Some(c) if c < num_vls => {
                let cnp = ca.cnps[c].pop_front().expect("eligible CNP queue");
                Ok(Some((cnp, Picked::Cnp)))
            }
            Some(c) => {
                let flow = ca.flows[c - num_vls];
                let f = &mut self.flows[flow as usize];
                let payload = f.next_payload.expect("active flow has a packet");
                let level = f.rate.level();
                let packet = Packet {
                    kind: PacketKind::Data {
                        flow,
                        seq: f.seq,
                        payload_bytes: payload,
                        level_at_send: level,
                    },
                    src: f.key.src,
                    dst: f.key.dst,
                    vl: f.key.vl,
                    ecn: Ecn::Ect0,
                    wire_bytes: payload + f.overhead,
                    sent_at: now,
                    marked_by: None,
                };
                f.seq += 1;
                let change = f.rate.on_transmit(now, payload);
                f.next_payload = f.segments.next();
                if f.next_payload.is_none() {
                    f.active = false;
                    self.flow_by_key.remove(&f.key);
                }
                self.stats.record_send(flow, payload, level);
                Ok(Some((packet, Picked::Flow(flow, change))))
            }
            None => {
                // nothing eligible; wake when the earliest paced flow may go
                let wake = ca
                    .flows
                    .iter()
                    .map(|&id| &self.flows[id as usize])
                    .filter(|f| f.active && !egress.is_paused(f.key.vl, now))
                    .map(|f| f.rate.next_injection_time(now))
                    .filter(|&t| t > now)
                    .min();
                if let Some(t) = wake {
                    match ca.wakeup {
                        Some(w) if w.fire_at <= t && w.fire_at > now => {}
                        _ => {
                            if let Some(w) = ca.wakeup.take() {
                                q.cancel(w);
                            }
                            ca.wakeup = Some(q.schedule(
                                t,
                                EventKind::PacingWakeup {
                                    node: n as u32,
                                    port: p as u32,
                                },
                            )?);
                        }
                    }
                }
                Ok(None)
            }
        }
    }

    fn paused_recently(&self, n: usize, out: usize, now: SimTime) -> bool {
        let eg = &self.nodes[n].egress[out];
        eg.any_paused(now)
            || eg
                .last_resume
                .is_some_and(|t| now - t <= self.rcm.detection_window_ns)
    }

    fn detect(&mut self, n: usize, out: usize, now: SimTime) -> CongestionKind {
        let backlog = Credit::from_bytes(self.nodes[n].backlog_bytes[out]);
        let threshold = self.rcm.input_threshold_credits;
        match self.rcm.mode {
            RcmMode::Off => CongestionKind::None,
            RcmMode::Rcm1a => detect_rcm_1a(backlog, threshold, self.paused_recently(n, out, now)),
            RcmMode::Rcm1b => {
                let window = self.rcm.detection_window_ns;
                let ns = &mut self.nodes[n];
                let rates: Vec<u64> = ns.ingress.iter().map(|i| i.rate_bps).collect();
                let held: Vec<bool> = ns
                    .ingress
                    .iter()
                    .map(|i| i.vls.iter().any(|b| b.pause_sent_active))
                    .collect();
                let bits = ns.offered[out].offered_bits(now, window, &rates, &held);
                detect_rcm_1b(bits, window, ns.egress[out].rate_bps, backlog, threshold)
            }
        }
    }

    fn run_detector(&mut self, q: &mut Q, node: u32, port: u32) -> Result<(), SimError> {
        let now = q.now();
        let (n, out) = (node as usize, port as usize);
        let detected = self.detect(n, out, now);
        let hysteresis = self.rcm.hysteresis();
        let (mode, mark_at) = (self.rcm.mode, self.rcm.mark_at);
        let ns = &mut self.nodes[n];
        let cs = &mut ns.congestion[out];
        let transition = cs.observe(detected, now, hysteresis);
        if detected != CongestionKind::None {
            if let Some(t) = cs.clear_timer.take() {
                q.cancel(t);
            }
        }
        match transition {
            Transition::Unchanged => {}
            Transition::Onset(kind) | Transition::Changed { to: kind, .. } => {
                ns.egress[out].ecn_marking_active = marks_in(kind, mode, mark_at);
                self.stats.congestion_onset(node, port, kind, now);
            }
            Transition::ArmClear(at) => {
                if let Some(t) = cs.clear_timer.take() {
                    q.cancel(t);
                }
                cs.clear_timer = Some(q.schedule(at, EventKind::CongestionCheck { node, port })?);
            }
            Transition::Cleared(_) => {
                if let Some(t) = cs.clear_timer.take() {
                    q.cancel(t);
                }
                ns.egress[out].ecn_marking_active = false;
                self.stats.congestion_end(node, port, now);
            }
        }
        Ok(())
    }
}

/// Watermarks a port uses for its ibuf, per the configured mode.
pub(crate) fn watermarks_for(
    scn: &Scenario,
    link: &crate::config::Link,
) -> Result<crate::link::Watermarks, ConfigError> {
    let mech = &scn.mechanism;
    match mech.pfc.watermark_mode {
        WatermarkMode::Manual => Ok(crate::link::Watermarks {
            high: Credit(
                mech.pfc
                    .high_watermark_credits
                    .unwrap_or(mech.ibuf_capacity_credits),
            ),
            low: Credit(mech.pfc.low_watermark_credits.unwrap_or(0)),
        }),
        WatermarkMode::Auto => crate::link::compute_auto_watermarks(
            link,
            scn.max_mtu_wire_bytes(),
            mech.pfc.frame_wire_bytes,
            mech.ibuf_capacity_credits,
        )
        .map_err(|e| ConfigError::Validation(e.to_string())),
    }
}

/// Runs a scenario from time zero for `duration` and returns its report.
pub fn run_scenario(
    scn: &Scenario,
    duration: SimTime,
    opts: &SimOptions,
) -> Result<RunOutput, SimError> {
    let mut sim = Simulation::new(scn, opts)?;
    let summary = sim.run_until(duration)?;
    let report = sim.report();
    Ok(RunOutput {
        summary,
        report,
        trace: sim.take_trace(),
    })
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub summary: RunSummary,
    pub report: Report,
    pub trace: Option<String>,
}
