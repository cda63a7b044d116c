//! Measurement ledger and report rendering.
//!
//! Throughput is payload-only. "Steady state" is the second half of the run.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::str::FromStr;

use serde::Serialize;

use crate::host::LevelCause;
use crate::kernel::SimTime;
use crate::packet::FlowKey;
use crate::switch::CongestionKind;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StatsError {
    #[error("flow {flow}: delivery at {recv} precedes send at {send}")]
    Causality {
        flow: u32,
        send: SimTime,
        recv: SimTime,
    },
    #[error("unsupported report format `{0}` (expected json, csv, congestion-csv, rate-csv, pause-csv or series)")]
    UnsupportedFormat(String),
}

#[derive(Clone, Debug, Default)]
pub struct FlowStats {
    pub name: String,
    pub key: Option<FlowKey>,
    pub packets_sent: u64,
    pub bytes_sent: u64,
    pub packets_delivered: u64,
    pub bytes_delivered: u64,
    pub marked_packets_received: u64,
    pub cnps_sent: u64,
    pub cnps_received_at_src: u64,
    pub rcm_constrained_packets: u64,
    pub constraint_degree: u64,
    /// Per delivered packet: `(receive time ns, payload bytes, latency ns)`.
    pub deliveries: Vec<(u64, u32, u64)>,
    /// Delivered payload bytes per throughput window.
    pub window_bytes: Vec<u64>,
}

impl FlowStats {
    pub fn mean_latency_ns(&self) -> f64 {
        if self.deliveries.is_empty() {
            return 0.0;
        }
        self.deliveries.iter().map(|d| d.2 as f64).sum::<f64>() / self.deliveries.len() as f64
    }

    /// Mean spacing between consecutive deliveries.
    pub fn mean_interval_ns(&self) -> f64 {
        match (self.deliveries.first(), self.deliveries.last()) {
            (Some(a), Some(b)) if self.deliveries.len() > 1 => {
                (b.0 - a.0) as f64 / (self.deliveries.len() - 1) as f64
            }
            _ => 0.0,
        }
    }

    pub fn bytes_delivered_since(&self, from: SimTime) -> u64 {
        let from = from.as_ns();
        let idx = self.deliveries.partition_point(|d| d.0 < from);
        self.deliveries[idx..].iter().map(|d| d.1 as u64).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CongestionEvent {
    pub node: String,
    pub output_port: u32,
    pub kind: CongestionKind,
    pub start_ns: u64,
    pub end_ns: u64,
    pub flows_through: Vec<String>,
    pub marked_packets: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RateChange {
    pub time_ns: u64,
    pub flow: String,
    pub old_level: u32,
    pub new_level: u32,
    pub cause: &'static str,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PauseInterval {
    pub node: String,
    pub port: u32,
    pub vl: u8,
    pub start_ns: u64,
    pub end_ns: u64,
}

#[derive(Clone, Debug)]
struct OpenCongestion {
    kind: CongestionKind,
    start: SimTime,
    flows: BTreeSet<FlowKey>,
    marked: u64,
}

/// Everything measured during one run.
#[derive(Clone, Debug)]
pub struct StatsLedger {
    pub window_ns: u64,
    pub node_names: Vec<String>,
    pub flows: Vec<FlowStats>,
    pub congestion: Vec<CongestionEvent>,
    open_congestion: BTreeMap<(u32, u32), OpenCongestion>,
    pub rate_changes: Vec<RateChange>,
    pub pauses: Vec<PauseInterval>,
    open_pauses: BTreeMap<(u32, u32, u8), SimTime>,
    pub pfc_frames_sent: BTreeMap<(u32, u32), u64>,
    pub marks_by_port: BTreeMap<(u32, u32), u64>,
    pub unknown_flow_cnps: u64,
    pub max_ibuf_occupancy: BTreeMap<(u32, u32), u32>,
    pub events: u64,
}

impl StatsLedger {
    pub fn new(window_ns: u64, node_names: Vec<String>, flows: Vec<(String, FlowKey)>) -> Self {
        StatsLedger {
            window_ns,
            node_names,
            flows: flows
                .into_iter()
                .map(|(name, key)| FlowStats {
                    name,
                    key: Some(key),
                    ..Default::default()
                })
                .collect(),
            congestion: Vec::new(),
            open_congestion: BTreeMap::new(),
            rate_changes: Vec::new(),
            pauses: Vec::new(),
            open_pauses: BTreeMap::new(),
            pfc_frames_sent: BTreeMap::new(),
            marks_by_port: BTreeMap::new(),
            unknown_flow_cnps: 0,
            max_ibuf_occupancy: BTreeMap::new(),
            events: 0,
        }
    }

    fn flow_label(&self, key: &FlowKey) -> String {
        format!(
            "{}>{}@{}",
            self.node_names[key.src as usize], self.node_names[key.dst as usize], key.vl
        )
    }

    pub fn record_send(&mut self, flow: u32, payload_bytes: u32, level: u32) {
        let f = &mut self.flows[flow as usize];
        f.packets_sent += 1;
        f.bytes_sent += payload_bytes as u64;
        if level > 0 {
            f.rcm_constrained_packets += 1;
            f.constraint_degree += level as u64;
        }
    }

    pub fn record_delivery(
        &mut self,
        flow: u32,
        payload_bytes: u32,
        send_time: SimTime,
        recv_time: SimTime,
    ) -> Result<(), StatsError> {
        if recv_time < send_time {
            return Err(StatsError::Causality {
                flow,
                send: send_time,
                recv: recv_time,
            });
        }
        let window = (recv_time.as_ns() / self.window_ns) as usize;
        let f = &mut self.flows[flow as usize];
        f.packets_delivered += 1;
        f.bytes_delivered += payload_bytes as u64;
        f.deliveries
            .push((recv_time.as_ns(), payload_bytes, recv_time - send_time));
        if f.window_bytes.len() <= window {
            f.window_bytes.resize(window + 1, 0);
        }
        f.window_bytes[window] += payload_bytes as u64;
        Ok(())
    }

    pub fn record_rate_change(
        &mut self,
        flow: u32,
        now: SimTime,
        old: u32,
        new: u32,
        cause: LevelCause,
    ) {
        self.rate_changes.push(RateChange {
            time_ns: now.as_ns(),
            flow: self.flows[flow as usize].name.clone(),
            old_level: old,
            new_level: new,
            cause: match cause {
                LevelCause::Cnp => "CNP",
                LevelCause::Recovery => "RECOVERY",
            },
        });
    }

    pub fn congestion_onset(&mut self, node: u32, port: u32, kind: CongestionKind, now: SimTime) {
        self.congestion_end(node, port, now);
        self.open_congestion.insert(
            (node, port),
            OpenCongestion {
                kind,
                start: now,
                flows: BTreeSet::new(),
                marked: 0,
            },
        );
    }

    pub fn congestion_end(&mut self, node: u32, port: u32, now: SimTime) {
        if let Some(open) = self.open_congestion.remove(&(node, port)) {
            let flows_through = open.flows.iter().map(|k| self.flow_label(k)).collect();
            self.congestion.push(CongestionEvent {
                node: self.node_names[node as usize].clone(),
                output_port: port,
                kind: open.kind,
                start_ns: open.start.as_ns(),
                end_ns: now.as_ns(),
                flows_through,
                marked_packets: open.marked,
            });
        }
    }

    /// A packet left a port; noted against any open congestion interval there.
    pub fn record_forward(&mut self, node: u32, port: u32, key: Option<FlowKey>, marked: bool) {
        if marked {
            *self.marks_by_port.entry((node, port)).or_default() += 1;
        }
        if let Some(open) = self.open_congestion.get_mut(&(node, port)) {
            if let Some(k) = key {
                open.flows.insert(k);
            }
            if marked {
                open.marked += 1;
            }
        }
    }

    pub fn pause_started(&mut self, node: u32, port: u32, vl: u8, now: SimTime) {
        self.open_pauses.entry((node, port, vl)).or_insert(now);
    }

    pub fn pause_ended(&mut self, node: u32, port: u32, vl: u8, now: SimTime) {
        if let Some(start) = self.open_pauses.remove(&(node, port, vl)) {
            self.pauses.push(PauseInterval {
                node: self.node_names[node as usize].clone(),
                port,
                vl,
                start_ns: start.as_ns(),
                end_ns: now.as_ns(),
            });
        }
    }

    /// Closes every open interval at `t_end`.
    pub fn close_open_intervals(&mut self, t_end: SimTime) {
        let open: Vec<_> = self.open_congestion.keys().copied().collect();
        for (n, p) in open {
            self.congestion_end(n, p, t_end);
        }
        let open: Vec<_> = self.open_pauses.keys().copied().collect();
        for (n, p, vl) in open {
            self.pause_ended(n, p, vl, t_end);
        }
        self.congestion
            .sort_by_key(|e| (e.start_ns, e.node.clone(), e.output_port));
        self.pauses
            .sort_by_key(|p| (p.start_ns, p.node.clone(), p.port, p.vl));
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FlowRow {
    pub flow: String,
    pub src: String,
    pub dst: String,
    pub vl: u8,
    pub steady_gbps: f64,
    pub total_bytes: u64,
    pub mean_latency_ns: f64,
    pub marked: u64,
    pub cnps: u64,
    pub constrained: u64,
    pub constraint_degree: u64,
    pub packets_sent: u64,
    pub packets_delivered: u64,
    pub full_run_gbps: f64,
    pub mean_interval_ns: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ThroughputSeries {
    pub window_ns: u64,
    pub window_start_ns: Vec<u64>,
    /// Per flow, payload Gbps in each window.
    pub gbps: BTreeMap<String, Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub duration_ns: u64,
    pub steady_from_ns: u64,
    pub aggregate_steady_gbps: f64,
    pub jain_fairness: f64,
    pub events: u64,
    pub unknown_flow_cnps: u64,
    pub pfc_frames_sent: u64,
    pub marked_packets: u64,
}

/// Finalized, immutable result of a run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Report {
    pub summary: Summary,
    pub flows: Vec<FlowRow>,
    pub congestion_events: Vec<CongestionEvent>,
    pub rate_changes: Vec<RateChange>,
    pub pause_intervals: Vec<PauseInterval>,
    pub throughput: ThroughputSeries,
}

/// Jain's index `(Σx)² / (n Σx²)`; 1 for an empty or all-zero set.
pub fn jain_fairness(xs: &[f64]) -> f64 {
    let sum: f64 = xs.iter().sum();
    let sq: f64 = xs.iter().map(|x| x * x).sum();
    if xs.is_empty() || sq == 0.0 {
        1.0
    } else {
        sum * sum / (xs.len() as f64 * sq)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    /// Per-flow summary table.
    Csv,
    CongestionCsv,
    RateCsv,
    PauseCsv,
    /// Whitespace-separated throughput-vs-time columns for plotting.
    Series,
}

impl FromStr for ReportFormat {
    type Err = StatsError;

    fn from_str(s: &str) -> Result<Self, StatsError> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "congestion-csv" => Ok(ReportFormat::CongestionCsv),
            "rate-csv" => Ok(ReportFormat::RateCsv),
            "pause-csv" => Ok(ReportFormat::PauseCsv),
            "series" => Ok(ReportFormat::Series),
            other => Err(StatsError::UnsupportedFormat(other.to_string())),
        }
    }
}

pub fn build_report(ledger: &StatsLedger, t_end: SimTime) -> Report {
    let steady_from = SimTime::from_ns(t_end.as_ns() / 2);
    let steady_secs = (t_end - steady_from) as f64 * 1e-9;
    let run_secs = t_end.as_secs_f64();
    let gbps = |bytes: u64, secs: f64| {
        if secs > 0.0 {
            bytes as f64 * 8.0 / secs / 1e9
        } else {
            0.0
        }
    };
    let name = |id: u32| ledger.node_names[id as usize].clone();
    let flows: Vec<FlowRow> = ledger
        .flows
        .iter()
        .map(|f| {
            let key = f.key.expect("flow key");
            FlowRow {
                flow: f.name.clone(),
                src: name(key.src),
                dst: name(key.dst),
                vl: key.vl,
                steady_gbps: gbps(f.bytes_delivered_since(steady_from), steady_secs),
                total_bytes: f.bytes_delivered,
                mean_latency_ns: f.mean_latency_ns(),
                marked: f.marked_packets_received,
                cnps: f.cnps_received_at_src,
                constrained: f.rcm_constrained_packets,
                constraint_degree: f.constraint_degree,
                packets_sent: f.packets_sent,
                packets_delivered: f.packets_delivered,
                full_run_gbps: gbps(f.bytes_delivered, run_secs),
                mean_interval_ns: f.mean_interval_ns(),
            }
        })
        .collect();

    let n_windows = t_end.as_ns().div_ceil(ledger.window_ns) as usize;
    let window_start_ns = (0..n_windows as u64)
        .map(|i| i * ledger.window_ns)
        .collect();
    let gbps_series = ledger
        .flows
        .iter()
        .map(|f| {
            let series = (0..n_windows)
                .map(|i| {
                    let start = i as u64 * ledger.window_ns;
                    let end = (start + ledger.window_ns).min(t_end.as_ns());
                    let bytes = f.window_bytes.get(i).copied().unwrap_or(0);
                    gbps(bytes, (end - start) as f64 * 1e-9)
                })
                .collect();
            (f.name.clone(), series)
        })
        .collect();

    let steady: Vec<f64> = flows.iter().map(|f| f.steady_gbps).collect();
    Report {
        summary: Summary {
            duration_ns: t_end.as_ns(),
            steady_from_ns: steady_from.as_ns(),
            aggregate_steady_gbps: steady.iter().sum(),
            jain_fairness: jain_fairness(&steady),
            events: ledger.events,
            unknown_flow_cnps: ledger.unknown_flow_cnps,
            pfc_frames_sent: ledger.pfc_frames_sent.values().sum(),
            marked_packets: ledger.marks_by_port.values().sum(),
        },
        flows,
        congestion_events: ledger.congestion.clone(),
        rate_changes: ledger.rate_changes.clone(),
        pause_intervals: ledger.pauses.clone(),
        throughput: ThroughputSeries {
            window_ns: ledger.window_ns,
            window_start_ns,
            gbps: gbps_series,
        },
    }
}

fn csv_of<T: Serialize>(header: &[&str], rows: impl IntoIterator<Item = T>) -> String {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    w.write_record(header).expect("in-memory csv");
    for row in rows {
        w.serialize(row).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf8 csv")
}

impl Report {
    pub fn render(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::Json => {
                let mut s = serde_json::to_string_pretty(self).expect("report serializes");
                s.push('\n');
                s
            }
            ReportFormat::Csv => csv_of(
                &[
                    "flow",
                    "src",
                    "dst",
                    "vl",
                    "steady_gbps",
                    "total_bytes",
                    "mean_latency_ns",
                    "marked",
                    "cnps",
                    "constrained",
                    "constraint_degree",
                ],
                self.flows.iter().map(|f| {
                    (
                        &f.flow,
                        &f.src,
                        &f.dst,
                        f.vl,
                        format!("{:.4}", f.steady_gbps),
                        f.total_bytes,
                        format!("{:.1}", f.mean_latency_ns),
                        f.marked,
                        f.cnps,
                        f.constrained,
                        f.constraint_degree,
                    )
                }),
            ),
            ReportFormat::CongestionCsv => csv_of(
                &["node", "port", "kind", "start_ns", "end_ns", "flows"],
                self.congestion_events.iter().map(|e| {
                    (
                        &e.node,
                        e.output_port,
                        e.kind.as_str(),
                        e.start_ns,
                        e.end_ns,
                        e.flows_through.join(";"),
                    )
                }),
            ),
            ReportFormat::RateCsv => csv_of(
                &["time_ns", "flow", "old_level", "new_level", "cause"],
                self.rate_changes.iter(),
            ),
            ReportFormat::PauseCsv => csv_of(
                &["node", "port", "vl", "start_ns", "end_ns"],
                self.pause_intervals.iter(),
            ),
            ReportFormat::Series => {
                let mut s = String::from("# time_us");
                for name in self.throughput.gbps.keys() {
                    let _ = write!(s, " {name}");
                }
                s.push_str("  (payload Gbps per window)\n");
                for (i, start) in self.throughput.window_start_ns.iter().enumerate() {
                    let _ = write!(s, "{:.1}", *start as f64 / 1e3);
                    for series in self.throughput.gbps.values() {
                        let _ = write!(s, " {:.4}", series[i]);
                    }
                    s.push('\n');
                }
                s
            }
        }
    }
}

/// Builds the report and renders it in the named format.
pub fn finalize_report(
    ledger: &StatsLedger,
    t_end: SimTime,
    format: &str,
) -> Result<String, StatsError> {
    let format: ReportFormat = format.parse()?;
    Ok(build_report(ledger, t_end).render(format))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ledger() -> StatsLedger {
        StatsLedger::new(
            100_000,
            vec!["A".into(), "R".into()],
            vec![(
                "A".into(),
                FlowKey {
                    src: 0,
                    dst: 1,
                    vl: 0,
                },
            )],
        )
    }

    #[test]
    fn single_packet_throughput() {
        let mut l = ledger();
        l.record_delivery(0, 2048, SimTime::from_ns(10), SimTime::from_ns(900_000))
            .unwrap();
        let r = build_report(&l, SimTime::from_ms(1));
        let bps = r.flows[0].full_run_gbps * 1e9;
        assert!((bps - 16.384e6).abs() < 1e-3, "{bps}");
        assert_eq!(r.flows[0].mean_latency_ns, 899_990.0);
    }

    #[test]
    fn causality_violation_is_rejected() {
        let mut l = ledger();
        assert!(matches!(
            l.record_delivery(0, 2048, SimTime::from_ns(10), SimTime::from_ns(5)),
            Err(StatsError::Causality { .. })
        ));
    }

    #[test]
    fn packets_in_one_window_add_up() {
        let mut l = ledger();
        l.record_delivery(0, 2048, SimTime::ZERO, SimTime::from_ns(10))
            .unwrap();
        l.record_delivery(0, 2048, SimTime::ZERO, SimTime::from_ns(20))
            .unwrap();
        assert_eq!(l.flows[0].window_bytes, [4096]);
        let r = build_report(&l, SimTime::from_us(100));
        let expect = 4096.0 * 8.0 / 100e-6 / 1e9;
        assert!((r.throughput.gbps["A"][0] - expect).abs() < 1e-12);
    }

    #[test]
    fn empty_run_renders() {
        let l = StatsLedger::new(100_000, vec![], vec![]);
        let r = build_report(&l, SimTime::from_ms(1));
        assert!(r.flows.is_empty());
        let json: serde_json::Value = serde_json::from_str(&r.render(ReportFormat::Json)).unwrap();
        assert_eq!(json["flows"].as_array().unwrap().len(), 0);
        assert_eq!(
            r.render(ReportFormat::Csv),
            "flow,src,dst,vl,steady_gbps,total_bytes,mean_latency_ns,marked,cnps,constrained,constraint_degree\n"
        );
    }

    #[test]
    fn unknown_format() {
        assert_eq!(
            finalize_report(&ledger(), SimTime::from_ms(1), "xml"),
            Err(StatsError::UnsupportedFormat("xml".into()))
        );
    }

    #[test]
    fn congestion_intervals_close_at_run_end() {
        let mut l = ledger();
        l.congestion_onset(1, 0, CongestionKind::Root, SimTime::from_ns(50));
        l.record_forward(
            1,
            0,
            Some(FlowKey {
                src: 0,
                dst: 1,
                vl: 0,
            }),
            true,
        );
        l.close_open_intervals(SimTime::from_ns(500));
        assert_eq!(
            l.congestion,
            [CongestionEvent {
                node: "R".into(),
                output_port: 0,
                kind: CongestionKind::Root,
                start_ns: 50,
                end_ns: 500,
                flows_through: vec!["A>R@0".into()],
                marked_packets: 1,
            }]
        );
        let csv = build_report(&l, SimTime::from_ns(500)).render(ReportFormat::CongestionCsv);
        assert_eq!(
            csv,
            "node,port,kind,start_ns,end_ns,flows\nR,0,ROOT,50,500,A>R@0\n"
        );
    }

    #[test]
    fn jain_index() {
        assert_eq!(jain_fairness(&[5.0, 5.0, 5.0]), 1.0);
        let j = jain_fairness(&[6.3, 6.3, 6.3, 18.9]);
        assert!((j - 0.75).abs() < 1e-9, "{j}");
    }

    #[test]
    fn constraint_accounting() {
        let mut l = ledger();
        l.record_send(0, 2048, 0);
        l.record_send(0, 2048, 3);
        l.record_send(0, 2048, 1);
        assert_eq!(l.flows[0].rcm_constrained_packets, 2);
        assert_eq!(l.flows[0].constraint_degree, 4);
    }
}
