use super::{
    fill_shortest_path_routes, FlowSpec, Link, MechanismConfig, MessageSize, Node, NodeKind,
    PortRef, RoutingMode, RunConfig, Scenario, StatsConfig, Topology,
};
use crate::kernel::SimTime;

const LINK_RATE_BPS: u64 = 40_000_000_000;
const LINK_DELAY_NS: u64 = 100;
const MTU_PAYLOAD: u32 = 2048;

/// Source CAs of the parking-lot preset, in report order.
pub const PARKING_LOT_FLOWS: [&str; 4] = ["A", "B", "C", "D"];

fn ca(name: &str) -> Node {
    Node {
        name: name.into(),
        kind: NodeKind::Ca,
        ports: 1,
    }
}

fn link(a: (u32, u32), b: (u32, u32)) -> Link {
    Link {
        a: PortRef {
            node: a.0,
            port: a.1,
        },
        b: PortRef {
            node: b.0,
            port: b.1,
        },
        rate_bps: LINK_RATE_BPS,
        propagation_delay_ns: LINK_DELAY_NS,
    }
}

fn unbounded_flow(src: u32, dst: u32, name: &str) -> FlowSpec {
    FlowSpec {
        name: name.into(),
        src,
        dst,
        vl: 0,
        start_time: SimTime::ZERO,
        message_bytes: MessageSize::Unbounded,
        mtu_payload_bytes: MTU_PAYLOAD,
    }
}

/// Four sources into one receiver across two switches:
///
/// ```text
/// A ─┐
/// B ─┼─ switch1 ── switch2 ── R
/// C ─┘               │
///                    D
/// ```
///
/// All links 40 Gbps, every flow unbounded on VL 0 with 2048-byte payloads.
pub fn build_parking_lot() -> Scenario {
    // ids: A=0 B=1 C=2 D=3 R=4 switch1=5 switch2=6
    let mut nodes: Vec<Node> = ["A", "B", "C", "D", "R"].into_iter().map(ca).collect();
    nodes.push(Node {
        name: "switch1".into(),
        kind: NodeKind::Ne,
        ports: 4,
    });
    nodes.push(Node {
        name: "switch2".into(),
        kind: NodeKind::Ne,
        ports: 3,
    });
    let links = vec![
        link((0, 0), (5, 0)),
        link((1, 0), (5, 1)),
        link((2, 0), (5, 2)),
        link((5, 3), (6, 0)),
        link((3, 0), (6, 1)),
        link((6, 2), (4, 0)),
    ];
    let mut topology = Topology {
        nodes,
        links,
        ..Default::default()
    };
    fill_shortest_path_routes(&mut topology);
    let flows = PARKING_LOT_FLOWS
        .iter()
        .enumerate()
        .map(|(i, name)| unbounded_flow(i as u32, 4, name))
        .collect();
    Scenario {
        routing: RoutingMode::Static,
        topology,
        flows,
        mechanism: MechanismConfig::default(),
        stats: StatsConfig::default(),
        run: RunConfig::default(),
    }
}

/// One unbounded flow A → R through two switches: the line-rate baseline.
pub fn build_single_flow() -> Scenario {
    let mut nodes = vec![ca("A"), ca("R")];
    for name in ["switch1", "switch2"] {
        nodes.push(Node {
            name: name.into(),
            kind: NodeKind::Ne,
            ports: 2,
        });
    }
    let links = vec![
        link((0, 0), (2, 0)),
        link((2, 1), (3, 0)),
        link((3, 1), (1, 0)),
    ];
    let mut topology = Topology {
        nodes,
        links,
        ..Default::default()
    };
    fill_shortest_path_routes(&mut topology);
    Scenario {
        routing: RoutingMode::Static,
        topology,
        flows: vec![unbounded_flow(0, 1, "A")],
        mechanism: MechanismConfig::default(),
        stats: StatsConfig::default(),
        run: RunConfig::default(),
    }
}
