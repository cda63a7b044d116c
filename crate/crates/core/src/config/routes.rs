use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use super::{NodeId, NodeKind, PortRef, Topology};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DiagnosticKind {
    UnreachableDestination,
    /// Nodes visited, in order, until the walk returned to the first repeated node.
    RoutingLoop(Vec<String>),
    /// The route points at a port with no link attached.
    DanglingPort(u32),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Diagnostic {
    pub node: String,
    pub destination: String,
    pub kind: DiagnosticKind,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            DiagnosticKind::UnreachableDestination => write!(
                f,
                "unreachable destination: ({}, {}) has no next hop",
                self.node, self.destination
            ),
            DiagnosticKind::RoutingLoop(cycle) => write!(
                f,
                "routing loop toward {} at {}: {}",
                self.destination,
                self.node,
                cycle.join(" -> ")
            ),
            DiagnosticKind::DanglingPort(p) => write!(
                f,
                "route ({}, {}) uses port {p} which has no link",
                self.node, self.destination
            ),
        }
    }
}

fn components(topo: &Topology) -> Vec<usize> {
    let n = topo.nodes.len();
    let mut comp = vec![usize::MAX; n];
    let mut next = 0;
    for start in 0..n {
        if comp[start] != usize::MAX {
            continue;
        }
        comp[start] = next;
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            for link in &topo.links {
                for (x, y) in [(link.a, link.b), (link.b, link.a)] {
                    if x.node as usize == u && comp[y.node as usize] == usize::MAX {
                        comp[y.node as usize] = next;
                        queue.push_back(y.node as usize);
                    }
                }
            }
        }
        next += 1;
    }
    comp
}

/// Empty iff every `(node, destination CA)` pair within one connected
/// component has a loop-free, complete route.
pub fn validate_routes(topo: &Topology) -> Vec<Diagnostic> {
    let comp = components(topo);
    let mut out = Vec::new();
    let mut seen_loops: BTreeSet<(NodeId, Vec<NodeId>)> = BTreeSet::new();
    let mut seen_missing: BTreeSet<(NodeId, NodeId)> = BTreeSet::new();
    for (d, dst) in topo.nodes.iter().enumerate() {
        if dst.kind != NodeKind::Ca {
            continue;
        }
        let d = d as NodeId;
        for s in 0..topo.nodes.len() as NodeId {
            if s == d || comp[s as usize] != comp[d as usize] {
                continue;
            }
            let mut path = vec![s];
            let mut at = s;
            loop {
                let Some(&port) = topo.routes.get(&(at, d)) else {
                    if seen_missing.insert((at, d)) {
                        out.push(Diagnostic {
                            node: topo.name(at).to_string(),
                            destination: dst.name.clone(),
                            kind: DiagnosticKind::UnreachableDestination,
                        });
                    }
                    break;
                };
                let Some(peer) = topo.peer(PortRef { node: at, port }) else {
                    if seen_missing.insert((at, d)) {
                        out.push(Diagnostic {
                            node: topo.name(at).to_string(),
                            destination: dst.name.clone(),
                            kind: DiagnosticKind::DanglingPort(port),
                        });
                    }
                    break;
                };
                at = peer.node;
                if at == d {
                    break;
                }
                if let Some(pos) = path.iter().position(|&n| n == at) {
                    let mut cycle: Vec<NodeId> = path[pos..].to_vec();
                    // canonical rotation so one loop is reported once
                    let min_pos = cycle
                        .iter()
                        .enumerate()
                        .min_by_key(|(_, n)| **n)
                        .map(|(i, _)| i)
                        .unwrap_or(0);
                    cycle.rotate_left(min_pos);
                    if seen_loops.insert((d, cycle.clone())) {
                        let mut names: Vec<String> =
                            cycle.iter().map(|&n| topo.name(n).to_string()).collect();
                        names.push(names[0].clone());
                        out.push(Diagnostic {
                            node: topo.name(cycle[0]).to_string(),
                            destination: dst.name.clone(),
                            kind: DiagnosticKind::RoutingLoop(names),
                        });
                    }
                    break;
                }
                path.push(at);
            }
        }
    }
    out
}

/// Adds a shortest-path next hop for every `(node, CA)` pair that has none.
/// Declared routes are kept. Ties break toward the lowest port number.
pub fn fill_shortest_path_routes(topo: &mut Topology) {
    let n = topo.nodes.len();
    for d in 0..n {
        if topo.nodes[d].kind != NodeKind::Ca {
            continue;
        }
        // BFS outward from the destination; dist[u] = hops from u to d.
        let mut dist = vec![usize::MAX; n];
        dist[d] = 0;
        let mut queue = VecDeque::from([d]);
        while let Some(u) = queue.pop_front() {
            for link in &topo.links {
                for (x, y) in [(link.a, link.b), (link.b, link.a)] {
                    if x.node as usize == u && dist[y.node as usize] == usize::MAX {
                        dist[y.node as usize] = dist[u] + 1;
                        queue.push_back(y.node as usize);
                    }
                }
            }
        }
        for u in 0..n {
            if u == d || dist[u] == usize::MAX {
                continue;
            }
            let key = (u as NodeId, d as NodeId);
            if topo.routes.contains_key(&key) {
                continue;
            }
            let best = (0..topo.nodes[u].ports)
                .filter_map(|port| {
                    let peer = topo.peer(PortRef {
                        node: u as NodeId,
                        port,
                    })?;
                    // only CAs at the far end if they are the destination
                    let ok = peer.node as usize == d
                        || topo.nodes[peer.node as usize].kind == NodeKind::Ne;
                    (ok && dist[peer.node as usize] + 1 == dist[u]).then_some(port)
                })
                .next();
            if let Some(port) = best {
                topo.routes.insert(key, port);
            }
        }
    }
}
