#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rocesim_core::config::{
    fill_shortest_path_routes, FlowSpec, Link, MessageSize, Node, NodeKind, PortRef, RcmMode,
    RoutingMode, Scenario, Topology,
};
use rocesim_core::link::{compute_auto_watermarks, LinkError};
use rocesim_core::SimTime;

pub const GBPS_40: u64 = 40_000_000_000;

fn node(name: String, kind: NodeKind, ports: u32) -> Node {
    Node { name, kind, ports }
}

fn link(a: (u32, u32), b: (u32, u32), rate_bps: u64, delay: u64) -> Link {
    Link {
        a: PortRef {
            node: a.0,
            port: a.1,
        },
        b: PortRef {
            node: b.0,
            port: b.1,
        },
        rate_bps,
        propagation_delay_ns: delay,
    }
}

pub fn flow(name: &str, src: u32, dst: u32, vl: u8, message: MessageSize, mtu: u32) -> FlowSpec {
    FlowSpec {
        name: name.into(),
        src,
        dst,
        vl,
        start_time: SimTime::ZERO,
        message_bytes: message,
        mtu_payload_bytes: mtu,
    }
}

/// `n` saturating senders through one switch into R.
pub fn star(n: u32) -> Scenario {
    let mut nodes: Vec<Node> = (0..n)
        .map(|i| node(format!("I{i}"), NodeKind::Ca, 1))
        .collect();
    nodes.push(node("R".into(), NodeKind::Ca, 1));
    nodes.push(node("sw".into(), NodeKind::Ne, n + 1));
    let (r, sw) = (n, n + 1);
    let mut links: Vec<Link> = (0..n)
        .map(|i| link((i, 0), (sw, i), GBPS_40, 100))
        .collect();
    links.push(link((sw, n), (r, 0), GBPS_40, 100));
    let mut topology = Topology {
        nodes,
        links,
        ..Default::default()
    };
    fill_shortest_path_routes(&mut topology);
    let flows = (0..n)
        .map(|i| flow(&format!("I{i}"), i, r, 0, MessageSize::Unbounded, 2048))
        .collect();
    Scenario {
        routing: RoutingMode::Static,
        topology,
        flows,
        ..Default::default()
    }
}

/// Replaces every unbounded message with a finite one.
pub fn finite(mut scn: Scenario, bytes: u64) -> Scenario {
    for f in &mut scn.flows {
        f.message_bytes = MessageSize::Bytes(bytes);
    }
    scn
}

/// Random tree of at most four switches and eight flows, AUTO watermarks.
pub fn random_tree(rng: &mut ChaCha8Rng) -> Scenario {
    let switches = rng.gen_range(1..=4u32);
    let cas = rng.gen_range(2..=6u32);
    let rates = [10_000_000_000u64, 25_000_000_000, GBPS_40, 100_000_000_000];

    // switch tree edges (child, parent)
    let parents: Vec<u32> = (1..switches).map(|s| rng.gen_range(0..s)).collect();
    let ca_home: Vec<u32> = (0..cas).map(|_| rng.gen_range(0..switches)).collect();

    let mut ports = vec![0u32; switches as usize];
    let next_port = |s: u32, ports: &mut Vec<u32>| {
        let p = ports[s as usize];
        ports[s as usize] += 1;
        p
    };
    let sw_id = |s: u32| cas + s;
    let mut links = Vec::new();
    for (i, &home) in ca_home.iter().enumerate() {
        let p = next_port(home, &mut ports);
        links.push(link(
            (i as u32, 0),
            (sw_id(home), p),
            *rates.choose(rng).unwrap(),
            rng.gen_range(0..=1_000),
        ));
    }
    for (child, &parent) in parents.iter().enumerate() {
        let child = child as u32 + 1;
        let pc = next_port(child, &mut ports);
        let pp = next_port(parent, &mut ports);
        links.push(link(
            (sw_id(child), pc),
            (sw_id(parent), pp),
            *rates.choose(rng).unwrap(),
            rng.gen_range(0..=1_000),
        ));
    }
    let mut nodes: Vec<Node> = (0..cas)
        .map(|i| node(format!("h{i}"), NodeKind::Ca, 1))
        .collect();
    for s in 0..switches {
        // a leaf switch with nothing attached still needs one port
        nodes.push(node(
            format!("s{s}"),
            NodeKind::Ne,
            ports[s as usize].max(1),
        ));
    }
    let mut topology = Topology {
        nodes,
        links,
        ..Default::default()
    };
    fill_shortest_path_routes(&mut topology);

    let num_vls = rng.gen_range(1..=2u8);
    let mut flows = Vec::new();
    let mut used = std::collections::BTreeSet::new();
    for i in 0..rng.gen_range(1..=8) {
        let src = rng.gen_range(0..cas);
        let dst = rng.gen_range(0..cas);
        let vl = rng.gen_range(0..num_vls);
        if src == dst || !used.insert((src, dst, vl)) {
            continue;
        }
        let mtu = *[512u32, 1024, 2048, 4096].choose(rng).unwrap();
        let mut f = flow(
            &format!("f{i}"),
            src,
            dst,
            vl,
            MessageSize::Bytes(rng.gen_range(1..=400_000)),
            mtu,
        );
        f.start_time = SimTime::from_ns(rng.gen_range(0..50_000));
        flows.push(f);
    }
    if flows.is_empty() {
        flows.push(flow("f0", 0, 1, 0, MessageSize::Bytes(100_000), 2048));
    }

    let mut scn = Scenario {
        routing: RoutingMode::Auto,
        topology,
        flows,
        ..Default::default()
    };
    scn.mechanism.num_vls = num_vls;
    scn.mechanism.rcm.mode = *[RcmMode::Off, RcmMode::Rcm1a, RcmMode::Rcm1b]
        .choose(rng)
        .unwrap();
    // grow the ibuf until AUTO watermarks fit every link
    let mtu_wire = scn.max_mtu_wire_bytes();
    let frame = scn.mechanism.pfc.frame_wire_bytes;
    for l in &scn.topology.links {
        while let Err(LinkError::HeadroomExceedsCapacity { .. }) =
            compute_auto_watermarks(l, mtu_wire, frame, scn.mechanism.ibuf_capacity_credits)
        {
            scn.mechanism.ibuf_capacity_credits *= 2;
        }
    }
    scn
}
