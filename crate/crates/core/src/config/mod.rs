//! Network, traffic and mechanism description of one simulation run.
//!
//! A [`Scenario`] is built either from the plain-text scenario format
//! ([`parse_scenario`]) or from a preset such as [`build_parking_lot`]. It is
//! fully validated before the simulator ever sees it.

mod preset;
mod routes;
mod scenario;

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use crate::kernel::SimTime;

pub use preset::{build_parking_lot, build_single_flow, PARKING_LOT_FLOWS};
pub use routes::{fill_shortest_path_routes, validate_routes, Diagnostic, DiagnosticKind};
pub use scenario::{parse_scenario, render_scenario};

pub type NodeId = u32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    /// Channel adapter (host endpoint).
    Ca,
    /// Network element (switch).
    Ne,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Node {
    pub name: String,
    pub kind: NodeKind,
    pub ports: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct PortRef {
    pub node: NodeId,
    pub port: u32,
}

/// Full-duplex point-to-point link.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Link {
    pub a: PortRef,
    pub b: PortRef,
    pub rate_bps: u64,
    pub propagation_delay_ns: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RoutingMode {
    /// Declared routes, with missing entries filled by shortest path.
    #[default]
    Auto,
    /// Declared routes only.
    Static,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Topology {
    pub nodes: Vec<Node>,
    pub links: Vec<Link>,
    /// Egress port keyed by `(node, destination CA)`.
    pub routes: BTreeMap<(NodeId, NodeId), u32>,
}

impl Topology {
    pub fn node_id(&self, name: &str) -> Option<NodeId> {
        self.nodes
            .iter()
            .position(|n| n.name == name)
            .map(|i| i as NodeId)
    }

    pub fn name(&self, id: NodeId) -> &str {
        &self.nodes[id as usize].name
    }

    pub fn link_at(&self, port: PortRef) -> Option<(usize, &Link)> {
        self.links
            .iter()
            .enumerate()
            .find(|(_, l)| l.a == port || l.b == port)
    }

    /// The port at the other end of the link attached to `port`.
    pub fn peer(&self, port: PortRef) -> Option<PortRef> {
        self.link_at(port)
            .map(|(_, l)| if l.a == port { l.b } else { l.a })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum MessageSize {
    Bytes(u64),
    Unbounded,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FlowSpec {
    pub name: String,
    pub src: NodeId,
    pub dst: NodeId,
    pub vl: u8,
    pub start_time: SimTime,
    pub message_bytes: MessageSize,
    pub mtu_payload_bytes: u32,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum WatermarkMode {
    #[default]
    Auto,
    Manual,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PfcConfig {
    pub enabled: bool,
    pub watermark_mode: WatermarkMode,
    pub high_watermark_credits: Option<u32>,
    pub low_watermark_credits: Option<u32>,
    /// Quanta carried by a pause frame; one quantum is 512 bit times.
    pub pause_quanta: u16,
    /// A pause is re-sent once the receiver's pause is this close to expiry.
    pub refresh_guard_percent: u32,
    pub frame_wire_bytes: u32,
}

impl Default for PfcConfig {
    fn default() -> Self {
        PfcConfig {
            enabled: true,
            watermark_mode: WatermarkMode::Auto,
            high_watermark_credits: None,
            low_watermark_credits: None,
            pause_quanta: u16::MAX,
            refresh_guard_percent: 10,
            frame_wire_bytes: 64,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub enum RcmMode {
    #[default]
    Off,
    Rcm1a,
    Rcm1b,
}

impl RcmMode {
    pub fn as_str(self) -> &'static str {
        match self {
            RcmMode::Off => "off",
            RcmMode::Rcm1a => "1a",
            RcmMode::Rcm1b => "1b",
        }
    }
}

impl fmt::Display for RcmMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for RcmMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "off" | "none" => Ok(RcmMode::Off),
            "1a" | "rcm_1a" | "rcm1a" => Ok(RcmMode::Rcm1a),
            "1b" | "rcm_1b" | "rcm1b" => Ok(RcmMode::Rcm1b),
            other => Err(format!(
                "unknown rcm mode `{other}` (expected off, 1a or 1b)"
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub enum MarkAt {
    #[default]
    RootOnly,
    RootAndVictim,
}

impl MarkAt {
    pub fn as_str(self) -> &'static str {
        match self {
            MarkAt::RootOnly => "root",
            MarkAt::RootAndVictim => "root+victim",
        }
    }
}

impl std::str::FromStr for MarkAt {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "root" | "root_only" => Ok(MarkAt::RootOnly),
            "root+victim" | "root_and_victim" => Ok(MarkAt::RootAndVictim),
            other => Err(format!(
                "unknown mark_at `{other}` (expected root or root+victim)"
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RecoveryCombine {
    #[default]
    Any,
    All,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RcmConfig {
    pub mode: RcmMode,
    pub mark_at: MarkAt,
    pub input_threshold_credits: u32,
    pub detection_window_ns: u64,
    /// Defaults to `detection_window_ns` when unset.
    pub hysteresis_ns: Option<u64>,
    pub recovery_time_ns: u64,
    pub recovery_bytes: u64,
    pub recovery_combine: RecoveryCombine,
    /// Minimum spacing of CNPs per flow at the notification point; 0 reflects every mark.
    pub min_cnp_interval_ns: u64,
    /// Dedicated VL for CNPs; `None` sends them on the data flow's VL.
    pub cnp_vl: Option<u8>,
    pub cnp_wire_bytes: u32,
}

impl RcmConfig {
    pub fn hysteresis(&self) -> u64 {
        self.hysteresis_ns.unwrap_or(self.detection_window_ns)
    }
}

impl Default for RcmConfig {
    fn default() -> Self {
        RcmConfig {
            mode: RcmMode::Off,
            mark_at: MarkAt::RootOnly,
            input_threshold_credits: 320,
            detection_window_ns: 10_000,
            hysteresis_ns: None,
            recovery_time_ns: 40_000,
            recovery_bytes: 150 * 1024,
            recovery_combine: RecoveryCombine::Any,
            min_cnp_interval_ns: 30_000,
            cnp_vl: None,
            cnp_wire_bytes: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct MechanismConfig {
    pub pfc: PfcConfig,
    pub rcm: RcmConfig,
    pub overhead_bytes_per_packet: u32,
    pub ibuf_capacity_credits: u32,
    pub num_vls: u8,
}

impl Default for MechanismConfig {
    fn default() -> Self {
        MechanismConfig {
            pfc: PfcConfig::default(),
            rcm: RcmConfig::default(),
            overhead_bytes_per_packet: 108,
            ibuf_capacity_credits: 512,
            num_vls: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct StatsConfig {
    pub throughput_window_ns: u64,
}

impl Default for StatsConfig {
    fn default() -> Self {
        StatsConfig {
            throughput_window_ns: 100_000,
        }
    }
}

/// How long to run and which seed to use.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RunConfig {
    pub duration_ns: u64,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            duration_ns: 10_000_000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Scenario {
    pub routing: RoutingMode,
    pub topology: Topology,
    pub flows: Vec<FlowSpec>,
    pub mechanism: MechanismConfig,
    pub stats: StatsConfig,
    pub run: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid scenario: {0}")]
    Validation(String),
}

impl ConfigError {
    fn parse(line: usize, msg: impl Into<String>) -> Self {
        ConfigError::Parse {
            line,
            msg: msg.into(),
        }
    }

    fn invalid(msg: impl Into<String>) -> Self {
        ConfigError::Validation(msg.into())
    }
}

impl Scenario {
    /// Largest on-wire data packet size across flows.
    pub fn max_mtu_wire_bytes(&self) -> u32 {
        self.flows
            .iter()
            .map(|f| f.mtu_payload_bytes + self.mechanism.overhead_bytes_per_packet)
            .max()
            .unwrap_or(self.mechanism.overhead_bytes_per_packet)
    }

    /// Overrides a single `section.key` value, as the CLI's `--set` does.
    ///
    /// Only singleton sections (`general`, `pfc`, `rcm`, `stats`, `run`) are
    /// addressable. The scenario is not re-validated.
    pub fn set(&mut self, dotted_key: &str, value: &str) -> Result<(), ConfigError> {
        let (section, key) = dotted_key.split_once('.').ok_or_else(|| {
            ConfigError::invalid(format!(
                "override `{dotted_key}` must look like section.key"
            ))
        })?;
        scenario::set_singleton(self, section, key, value)
            .map_err(|msg| ConfigError::invalid(format!("{dotted_key}: {msg}")))
    }

    /// Checks every structural and mechanism invariant.
    pub fn validate(&self) -> Result<(), ConfigError> {
        scenario::validate(self)
    }
}
