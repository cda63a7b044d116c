//! The plain-text scenario format.
//!
//! ```text
//! # comment
//! [general]            singleton: routing, num_vls, ibuf_capacity_credits,
//!                      overhead_bytes_per_packet
//! [pfc]                singleton: PFC keys
//! [rcm]                singleton: congestion management keys
//! [stats]              singleton: throughput_window_ns
//! [run]                singleton: duration_ns, seed
//! [node]               repeated: name, kind (ca|ne), ports
//! [link]               repeated: a, b (`node:port`), rate_bps, propagation_delay_ns
//! [flow]               repeated: name, src, dst, vl, start_time_ns,
//!                      message_bytes (integer|unbounded), mtu_payload_bytes
//! [routes]             singleton: lines `node -> destination = port`
//! ```
//!
//! Every value is `key = value` on one line. Unknown sections and keys are
//! errors. `*_ns` keys accept ns/us/ms/s suffixes and `rate_bps` accepts
//! Kbps/Mbps/Gbps. `docs/scenario-format.md` has the full grammar.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use super::{
    fill_shortest_path_routes, validate_routes, ConfigError, FlowSpec, Link, MarkAt, MessageSize,
    Node, NodeKind, PortRef, RcmMode, RecoveryCombine, RoutingMode, Scenario, WatermarkMode,
};
use crate::kernel::SimTime;
use crate::link::compute_auto_watermarks;

struct Entry<'a> {
    key: &'a str,
    value: &'a str,
    line: usize,
}

struct Section<'a> {
    name: &'a str,
    line: usize,
    entries: Vec<Entry<'a>>,
}

const SINGLETONS: [&str; 6] = ["general", "pfc", "rcm", "stats", "run", "routes"];
const REPEATED: [&str; 3] = ["node", "link", "flow"];

fn lex(text: &str) -> Result<Vec<Section<'_>>, ConfigError> {
    let mut sections: Vec<Section> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| ConfigError::parse(line, "unterminated section header"))?
                .trim();
            if !SINGLETONS.contains(&name) && !REPEATED.contains(&name) {
                return Err(ConfigError::parse(
                    line,
                    format!("unknown section [{name}]"),
                ));
            }
            if SINGLETONS.contains(&name) && sections.iter().any(|s| s.name == name) {
                return Err(ConfigError::parse(
                    line,
                    format!("section [{name}] appears twice"),
                ));
            }
            sections.push(Section {
                name,
                line,
                entries: Vec::new(),
            });
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| {
            ConfigError::parse(line, format!("expected `key = value`, got `{content}`"))
        })?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() {
            return Err(ConfigError::parse(line, "empty key"));
        }
        let section = sections.last_mut().ok_or_else(|| {
            ConfigError::parse(line, format!("key `{key}` outside of any section"))
        })?;
        if section.entries.iter().any(|e| e.key == key) {
            return Err(ConfigError::parse(line, format!("duplicate key `{key}`")));
        }
        section.entries.push(Entry { key, value, line });
    }
    Ok(sections)
}

fn int<T: std::str::FromStr>(v: &str) -> Result<T, String> {
    v.replace('_', "")
        .parse()
        .map_err(|_| format!("expected an integer, got `{v}`"))
}

fn duration_ns(v: &str) -> Result<u64, String> {
    v.replace('_', "")
        .parse::<SimTime>()
        .map(SimTime::as_ns)
        .map_err(|e| e.to_string())
}

fn rate_bps(v: &str) -> Result<u64, String> {
    let t = v.replace('_', "");
    let lower = t.to_ascii_lowercase();
    let (digits, mult) = [
        ("gbps", 1_000_000_000u64),
        ("mbps", 1_000_000),
        ("kbps", 1_000),
        ("bps", 1),
    ]
    .iter()
    .find_map(|(sfx, m)| lower.strip_suffix(sfx).map(|d| (d.to_string(), *m)))
    .unwrap_or((lower.clone(), 1));
    let n: u64 = digits
        .trim()
        .parse()
        .map_err(|_| format!("expected a rate like 40Gbps, got `{v}`"))?;
    n.checked_mul(mult)
        .ok_or_else(|| format!("rate `{v}` overflows"))
}

fn boolean(v: &str) -> Result<bool, String> {
    match v {
        "true" | "yes" | "on" => Ok(true),
        "false" | "no" | "off" => Ok(false),
        _ => Err(format!("expected true or false, got `{v}`")),
    }
}

fn optional<T>(v: &str, f: impl Fn(&str) -> Result<T, String>) -> Result<Option<T>, String> {
    if v.eq_ignore_ascii_case("none") || v.eq_ignore_ascii_case("same") {
        Ok(None)
    } else {
        f(v).map(Some)
    }
}

/// Sets one key of a singleton section. Shared by the parser and `--set`.
pub(super) fn set_singleton(
    scn: &mut Scenario,
    section: &str,
    key: &str,
    value: &str,
) -> Result<(), String> {
    let mech = &mut scn.mechanism;
    match (section, key) {
        ("general", "routing") => {
            scn.routing = match value {
                "auto" => RoutingMode::Auto,
                "static" => RoutingMode::Static,
                _ => return Err(format!("expected auto or static, got `{value}`")),
            }
        }
        ("general", "num_vls") => mech.num_vls = int(value)?,
        ("general", "ibuf_capacity_credits") => mech.ibuf_capacity_credits = int(value)?,
        ("general", "overhead_bytes_per_packet") => mech.overhead_bytes_per_packet = int(value)?,
        ("pfc", "enabled") => mech.pfc.enabled = boolean(value)?,
        ("pfc", "watermark_mode") => {
            mech.pfc.watermark_mode = match value {
                "auto" => WatermarkMode::Auto,
                "manual" => WatermarkMode::Manual,
                _ => return Err(format!("expected auto or manual, got `{value}`")),
            }
        }
        ("pfc", "high_watermark_credits") => {
            mech.pfc.high_watermark_credits = optional(value, int)?
        }
        ("pfc", "low_watermark_credits") => mech.pfc.low_watermark_credits = optional(value, int)?,
        ("pfc", "pause_quanta") => mech.pfc.pause_quanta = int(value)?,
        ("pfc", "refresh_guard_percent") => mech.pfc.refresh_guard_percent = int(value)?,
        ("pfc", "frame_wire_bytes") => mech.pfc.frame_wire_bytes = int(value)?,
        ("rcm", "mode") => mech.rcm.mode = value.parse::<RcmMode>()?,
        ("rcm", "mark_at") => mech.rcm.mark_at = value.parse::<MarkAt>()?,
        ("rcm", "input_threshold_credits") => mech.rcm.input_threshold_credits = int(value)?,
        ("rcm", "detection_window_ns") => mech.rcm.detection_window_ns = duration_ns(value)?,
        ("rcm", "hysteresis_ns") => mech.rcm.hysteresis_ns = optional(value, duration_ns)?,
        ("rcm", "recovery_time_ns") => mech.rcm.recovery_time_ns = duration_ns(value)?,
        ("rcm", "recovery_bytes") => mech.rcm.recovery_bytes = int(value)?,
        ("rcm", "recovery_combine") => {
            mech.rcm.recovery_combine = match value {
                "any" => RecoveryCombine::Any,
                "all" => RecoveryCombine::All,
                _ => return Err(format!("expected any or all, got `{value}`")),
            }
        }
        ("rcm", "min_cnp_interval_ns") => mech.rcm.min_cnp_interval_ns = duration_ns(value)?,
        ("rcm", "cnp_vl") => mech.rcm.cnp_vl = optional(value, int)?,
        ("rcm", "cnp_wire_bytes") => mech.rcm.cnp_wire_bytes = int(value)?,
        ("stats", "throughput_window_ns") => scn.stats.throughput_window_ns = duration_ns(value)?,
        ("run", "duration_ns") => scn.run.duration_ns = duration_ns(value)?,
        ("run", "seed") => scn.run.seed = int(value)?,
        (s, _) if SINGLETONS.contains(&s) && s != "routes" => {
            return Err(format!("unknown key `{key}` in [{section}]"))
        }
        _ => return Err(format!("unknown section `{section}`")),
    }
    Ok(())
}

fn node_ref(scn: &Scenario, v: &str) -> Result<u32, String> {
    scn.topology
        .node_id(v)
        .ok_or_else(|| format!("unknown node `{v}`"))
}

fn port_ref(scn: &Scenario, v: &str) -> Result<PortRef, String> {
    let (name, port) = v
        .rsplit_once(':')
        .ok_or_else(|| format!("expected `node:port`, got `{v}`"))?;
    Ok(PortRef {
        node: node_ref(scn, name.trim())?,
        port: int(port.trim())?,
    })
}

fn take<'a>(sec: &Section<'a>, allowed: &[&str], required: &[&str]) -> Result<(), ConfigError> {
    for e in &sec.entries {
        if !allowed.contains(&e.key) {
            return Err(ConfigError::parse(
                e.line,
                format!("unknown key `{}` in [{}]", e.key, sec.name),
            ));
        }
    }
    for r in required {
        if !sec.entries.iter().any(|e| e.key == *r) {
            return Err(ConfigError::parse(
                sec.line,
                format!("[{}] is missing required key `{r}`", sec.name),
            ));
        }
    }
    Ok(())
}

fn get<'a>(sec: &'a Section, key: &str) -> Option<&'a Entry<'a>> {
    sec.entries.iter().find(|e| e.key == key)
}

fn at<T>(line: usize, r: Result<T, String>) -> Result<T, ConfigError> {
    r.map_err(|msg| ConfigError::parse(line, msg))
}

/// Parses, fills defaults and routes, and validates a scenario document.
pub fn parse_scenario(text: &str) -> Result<Scenario, ConfigError> {
    let sections = lex(text)?;
    let mut scn = Scenario::default();

    for sec in sections.iter().filter(|s| s.name == "node") {
        take(sec, &["name", "kind", "ports"], &["name", "kind"])?;
        let name = get(sec, "name").unwrap();
        if !name
            .value
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
            || name.value.is_empty()
        {
            return Err(ConfigError::parse(
                name.line,
                format!(
                    "node name `{}` may only use letters, digits, `_` and `-`",
                    name.value
                ),
            ));
        }
        let kind = get(sec, "kind").unwrap();
        let kind_v = match kind.value {
            "ca" => NodeKind::Ca,
            "ne" => NodeKind::Ne,
            other => {
                return Err(ConfigError::parse(
                    kind.line,
                    format!("node kind must be ca or ne, got `{other}`"),
                ))
            }
        };
        let ports = match get(sec, "ports") {
            Some(e) => at(e.line, int(e.value))?,
            None => 1,
        };
        scn.topology.nodes.push(Node {
            name: name.value.to_string(),
            kind: kind_v,
            ports,
        });
    }

    for sec in &sections {
        match sec.name {
            "general" | "pfc" | "rcm" | "stats" | "run" => {
                for e in &sec.entries {
                    at(e.line, set_singleton(&mut scn, sec.name, e.key, e.value))?;
                }
            }
            "link" => {
                take(
                    sec,
                    &["a", "b", "rate_bps", "propagation_delay_ns"],
                    &["a", "b", "rate_bps"],
                )?;
                let a = get(sec, "a").unwrap();
                let b = get(sec, "b").unwrap();
                let rate = get(sec, "rate_bps").unwrap();
                let delay = match get(sec, "propagation_delay_ns") {
                    Some(e) => at(e.line, duration_ns(e.value))?,
                    None => 0,
                };
                let link = Link {
                    a: at(a.line, port_ref(&scn, a.value))?,
                    b: at(b.line, port_ref(&scn, b.value))?,
                    rate_bps: at(rate.line, rate_bps(rate.value))?,
                    propagation_delay_ns: delay,
                };
                scn.topology.links.push(link);
            }
            "flow" => {
                take(
                    sec,
                    &[
                        "name",
                        "src",
                        "dst",
                        "vl",
                        "start_time_ns",
                        "message_bytes",
                        "mtu_payload_bytes",
                    ],
                    &["name", "src", "dst"],
                )?;
                let e = |k| get(sec, k);
                let name = e("name").unwrap().value.to_string();
                let src = at(
                    e("src").unwrap().line,
                    node_ref(&scn, e("src").unwrap().value),
                )?;
                let dst = at(
                    e("dst").unwrap().line,
                    node_ref(&scn, e("dst").unwrap().value),
                )?;
                let vl = match e("vl") {
                    Some(x) => at(x.line, int(x.value))?,
                    None => 0,
                };
                let start = match e("start_time_ns") {
                    Some(x) => SimTime::from_ns(at(x.line, duration_ns(x.value))?),
                    None => SimTime::ZERO,
                };
                let message = match e("message_bytes") {
                    Some(x) if x.value.eq_ignore_ascii_case("unbounded") => MessageSize::Unbounded,
                    Some(x) => MessageSize::Bytes(at(x.line, int(x.value))?),
                    None => MessageSize::Unbounded,
                };
                let mtu = match e("mtu_payload_bytes") {
                    Some(x) => at(x.line, int(x.value))?,
                    None => 2048,
                };
                scn.flows.push(FlowSpec {
                    name,
                    src,
                    dst,
                    vl,
                    start_time: start,
                    message_bytes: message,
                    mtu_payload_bytes: mtu,
                });
            }
            "routes" => {
                for entry in &sec.entries {
                    let (from, to) = entry.key.split_once("->").ok_or_else(|| {
                        ConfigError::parse(
                            entry.line,
                            "route must look like `node -> destination = port`",
                        )
                    })?;
                    let from = at(entry.line, node_ref(&scn, from.trim()))?;
                    let to = at(entry.line, node_ref(&scn, to.trim()))?;
                    let port = at(entry.line, int(entry.value))?;
                    scn.topology.routes.insert((from, to), port);
                }
            }
            _ => {}
        }
    }
    if scn.routing == RoutingMode::Auto {
        fill_shortest_path_routes(&mut scn.topology);
    }
    validate(&scn)?;
    Ok(scn)
}

pub(super) fn validate(scn: &Scenario) -> Result<(), ConfigError> {
    let topo = &scn.topology;
    let mech = &scn.mechanism;
    let inv = |m: String| Err(ConfigError::Validation(m));

    let mut names = BTreeSet::new();
    for n in &topo.nodes {
        if !names.insert(n.name.as_str()) {
            return inv(format!("duplicate node name `{}`", n.name));
        }
        if n.ports == 0 {
            return inv(format!("node `{}` has no ports", n.name));
        }
    }
    let mut used = BTreeSet::new();
    for l in &topo.links {
        for p in [l.a, l.b] {
            let Some(node) = topo.nodes.get(p.node as usize) else {
                return inv(format!("link references missing node {}", p.node));
            };
            if p.port >= node.ports {
                return inv(format!(
                    "{}:{} does not exist ({} ports)",
                    node.name, p.port, node.ports
                ));
            }
            if !used.insert(p) {
                return inv(format!(
                    "{}:{} is attached to more than one link",
                    node.name, p.port
                ));
            }
        }
        if l.a.node == l.b.node {
            return inv(format!("link loops back on `{}`", topo.name(l.a.node)));
        }
        if l.rate_bps == 0 {
            return inv("link rate must be positive".into());
        }
    }

    if mech.num_vls == 0 || mech.num_vls > 8 {
        return inv(format!("num_vls must be in 1..=8, got {}", mech.num_vls));
    }
    if mech.ibuf_capacity_credits == 0 {
        return inv("ibuf_capacity_credits must be positive".into());
    }

    let mut keys = BTreeSet::new();
    let mut flow_names = BTreeSet::new();
    for f in &scn.flows {
        if !flow_names.insert(f.name.as_str()) {
            return inv(format!("duplicate flow name `{}`", f.name));
        }
        for end in [f.src, f.dst] {
            match topo.nodes.get(end as usize) {
                Some(n) if n.kind == NodeKind::Ca => {}
                _ => return inv(format!("flow `{}` endpoints must be CAs", f.name)),
            }
        }
        if f.src == f.dst {
            return inv(format!("flow `{}` sends to itself", f.name));
        }
        if f.vl >= mech.num_vls {
            return inv(format!(
                "flow `{}` uses vl {} but num_vls = {}",
                f.name, f.vl, mech.num_vls
            ));
        }
        if f.mtu_payload_bytes == 0 {
            return inv(format!("flow `{}` needs mtu_payload_bytes >= 1", f.name));
        }
        if f.message_bytes == MessageSize::Bytes(0) {
            return inv(format!("flow `{}` needs message_bytes >= 1", f.name));
        }
        if !keys.insert((f.src, f.dst, f.vl)) {
            return inv(format!(
                "flow `{}` duplicates another flow's (src, dst, vl)",
                f.name
            ));
        }
    }

    let pfc = &mech.pfc;
    if let (Some(h), Some(l)) = (pfc.high_watermark_credits, pfc.low_watermark_credits) {
        if l >= h {
            return inv(format!("pfc watermarks: low >= high ({l} >= {h})"));
        }
        if h > mech.ibuf_capacity_credits {
            return inv(format!(
                "pfc high watermark {h} exceeds ibuf capacity {}",
                mech.ibuf_capacity_credits
            ));
        }
    }
    if pfc.enabled
        && pfc.watermark_mode == WatermarkMode::Manual
        && (pfc.high_watermark_credits.is_none() || pfc.low_watermark_credits.is_none())
    {
        return inv("manual watermark mode needs both high and low watermarks".into());
    }
    if pfc.enabled && pfc.pause_quanta == 0 {
        return inv("pause_quanta must be positive".into());
    }
    if pfc.refresh_guard_percent >= 100 {
        return inv("refresh_guard_percent must be below 100".into());
    }
    if pfc.enabled && pfc.watermark_mode == WatermarkMode::Auto {
        let mtu_wire = scn.max_mtu_wire_bytes();
        for l in &topo.links {
            if let Err(e) = compute_auto_watermarks(
                l,
                mtu_wire,
                pfc.frame_wire_bytes,
                mech.ibuf_capacity_credits,
            ) {
                return inv(e.to_string());
            }
        }
    }
    let mtu_credits = (scn.max_mtu_wire_bytes() as u64).div_ceil(64);
    if mtu_credits > mech.ibuf_capacity_credits as u64 {
        return inv("an MTU packet does not fit in one ibuf".into());
    }

    let rcm = &mech.rcm;
    if rcm.detection_window_ns == 0 {
        return inv("detection_window_ns must be positive".into());
    }
    if let Some(vl) = rcm.cnp_vl {
        if vl >= mech.num_vls {
            return inv(format!("cnp_vl {vl} out of range"));
        }
    }
    if rcm.cnp_wire_bytes == 0 {
        return inv("cnp_wire_bytes must be positive".into());
    }
    if scn.stats.throughput_window_ns == 0 {
        return inv("throughput_window_ns must be positive".into());
    }

    let diags = validate_routes(topo);
    if !diags.is_empty() {
        let msgs: Vec<String> = diags.iter().map(|d| d.to_string()).collect();
        return inv(msgs.join("; "));
    }
    Ok(())
}

/// Canonical text form; [`parse_scenario`] reads it back to an equal scenario.
pub fn render_scenario(scn: &Scenario) -> String {
    let mut out = String::new();
    let m = &scn.mechanism;
    let topo = &scn.topology;
    let w = &mut out;
    let routing = match scn.routing {
        RoutingMode::Auto => "auto",
        RoutingMode::Static => "static",
    };
    let _ = writeln!(w, "[general]\nrouting = {routing}\nnum_vls = {}", m.num_vls);
    let _ = writeln!(w, "ibuf_capacity_credits = {}", m.ibuf_capacity_credits);
    let _ = writeln!(
        w,
        "overhead_bytes_per_packet = {}\n",
        m.overhead_bytes_per_packet
    );

    let p = &m.pfc;
    let _ = writeln!(w, "[pfc]\nenabled = {}", p.enabled);
    let mode = match p.watermark_mode {
        WatermarkMode::Auto => "auto",
        WatermarkMode::Manual => "manual",
    };
    let _ = writeln!(w, "watermark_mode = {mode}");
    if let Some(h) = p.high_watermark_credits {
        let _ = writeln!(w, "high_watermark_credits = {h}");
    }
    if let Some(l) = p.low_watermark_credits {
        let _ = writeln!(w, "low_watermark_credits = {l}");
    }
    let _ = writeln!(w, "pause_quanta = {}", p.pause_quanta);
    let _ = writeln!(w, "refresh_guard_percent = {}", p.refresh_guard_percent);
    let _ = writeln!(w, "frame_wire_bytes = {}\n", p.frame_wire_bytes);

    let r = &m.rcm;
    let _ = writeln!(
        w,
        "[rcm]\nmode = {}\nmark_at = {}",
        r.mode,
        r.mark_at.as_str()
    );
    let _ = writeln!(w, "input_threshold_credits = {}", r.input_threshold_credits);
    let _ = writeln!(w, "detection_window_ns = {}", r.detection_window_ns);
    if let Some(h) = r.hysteresis_ns {
        let _ = writeln!(w, "hysteresis_ns = {h}");
    }
    let _ = writeln!(w, "recovery_time_ns = {}", r.recovery_time_ns);
    let _ = writeln!(w, "recovery_bytes = {}", r.recovery_bytes);
    let combine = match r.recovery_combine {
        RecoveryCombine::Any => "any",
        RecoveryCombine::All => "all",
    };
    let _ = writeln!(w, "recovery_combine = {combine}");
    let _ = writeln!(w, "min_cnp_interval_ns = {}", r.min_cnp_interval_ns);
    if let Some(vl) = r.cnp_vl {
        let _ = writeln!(w, "cnp_vl = {vl}");
    }
    let _ = writeln!(w, "cnp_wire_bytes = {}\n", r.cnp_wire_bytes);

    let _ = writeln!(
        w,
        "[stats]\nthroughput_window_ns = {}\n",
        scn.stats.throughput_window_ns
    );
    let _ = writeln!(
        w,
        "[run]\nduration_ns = {}\nseed = {}\n",
        scn.run.duration_ns, scn.run.seed
    );

    for n in &topo.nodes {
        let kind = match n.kind {
            NodeKind::Ca => "ca",
            NodeKind::Ne => "ne",
        };
        let _ = writeln!(
            w,
            "[node]\nname = {}\nkind = {kind}\nports = {}\n",
            n.name, n.ports
        );
    }
    for l in &topo.links {
        let _ = writeln!(
            w,
            "[link]\na = {}:{}\nb = {}:{}\nrate_bps = {}\npropagation_delay_ns = {}\n",
            topo.name(l.a.node),
            l.a.port,
            topo.name(l.b.node),
            l.b.port,
            l.rate_bps,
            l.propagation_delay_ns
        );
    }
    for f in &scn.flows {
        let msg = match f.message_bytes {
            MessageSize::Unbounded => "unbounded".to_string(),
            MessageSize::Bytes(b) => b.to_string(),
        };
        let _ = writeln!(
            w,
            "[flow]\nname = {}\nsrc = {}\ndst = {}\nvl = {}\nstart_time_ns = {}\nmessage_bytes = {msg}\nmtu_payload_bytes = {}\n",
            f.name,
            topo.name(f.src),
            topo.name(f.dst),
            f.vl,
            f.start_time.as_ns(),
            f.mtu_payload_bytes
        );
    }
    if !topo.routes.is_empty() {
        let _ = writeln!(w, "[routes]");
        for (&(from, to), port) in &topo.routes {
            let _ = writeln!(w, "{} -> {} = {port}", topo.name(from), topo.name(to));
        }
    }
    out
}
