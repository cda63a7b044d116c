//! Acceptance checks for the simulator. Prints one line per criterion and
//! exits nonzero if any fails.

mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rocesim_core::config::{
    build_parking_lot, build_single_flow, parse_scenario, MessageSize, RecoveryCombine, Scenario,
};
use rocesim_core::host::{RateController, RecoveryPolicy};
use rocesim_core::kernel::FracTime;
use rocesim_core::stats::Report;
use rocesim_core::{run_scenario, ReportFormat, SimOptions, SimTime, Simulation};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, ok: String, fail: String) -> Outcome {
    if cond {
        Ok(ok)
    } else {
        Err(fail)
    }
}

fn parking_lot(mode: &str) -> Report {
    let mut scn = build_parking_lot();
    scn.set("rcm.mode", mode).unwrap();
    run_scenario(&scn, SimTime::from_ms(10), &SimOptions::default())
        .expect("parking lot runs")
        .report
}

fn gbps(r: &Report) -> Vec<f64> {
    r.flows.iter().map(|f| f.steady_gbps).collect()
}

fn fmt(xs: &[f64]) -> String {
    xs.iter()
        .map(|x| format!("{x:.2}"))
        .collect::<Vec<_>>()
        .join("/")
}

fn criterion_1() -> Outcome {
    let r = parking_lot("off");
    let g = gbps(&r);
    let within = |x: f64, target: f64| (x - target).abs() <= 0.1 * target;
    let ratio = g[3] / g[0];
    check(
        g[..3].iter().all(|&x| within(x, 6.3))
            && within(g[3], 18.9)
            && (2.7..=3.3).contains(&ratio),
        format!("A/B/C/D = {} Gbps, D/A = {ratio:.3}", fmt(&g)),
        format!(
            "A/B/C/D = {} Gbps, D/A = {ratio:.3}; want 6.3±10%, 18.9±10%, D/A in [2.7, 3.3]",
            fmt(&g)
        ),
    )
}

fn rcm_bands(r: &Report) -> (bool, String) {
    let g = gbps(r);
    let s = &r.summary;
    let ok = g.iter().all(|x| (9.0..=10.0).contains(x))
        && s.jain_fairness >= 0.99
        && (36.0..=38.5).contains(&s.aggregate_steady_gbps);
    (
        ok,
        format!(
            "flows {} Gbps, Jain {:.4}, aggregate {:.2} Gbps",
            fmt(&g),
            s.jain_fairness,
            s.aggregate_steady_gbps
        ),
    )
}

fn criterion_2() -> Outcome {
    let (ok, detail) = rcm_bands(&parking_lot("1a"));
    check(
        ok,
        detail.clone(),
        format!("{detail}; want each in [9, 10], Jain >= 0.99, aggregate in [36, 38.5]"),
    )
}

fn criterion_3() -> Outcome {
    let a = parking_lot("1a");
    let b = parking_lot("1b");
    let (ok, detail) = rcm_bands(&b);
    let diff = gbps(&a)
        .iter()
        .zip(gbps(&b))
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    check(
        ok && diff <= 0.5,
        format!("{detail}, max |1a - 1b| {diff:.3} Gbps"),
        format!("{detail}, max |1a - 1b| {diff:.3} Gbps; want bands as 1a and difference <= 0.5"),
    )
}

/// Runs until every finite flow is delivered; checks sent = delivered = message size.
fn lossless_run(scn: &Scenario, label: &str) -> Result<(), String> {
    let mut sim =
        Simulation::new(scn, &SimOptions::default()).map_err(|e| format!("{label}: {e}"))?;
    let mut t = SimTime::ZERO;
    let expected: Vec<u64> = scn
        .flows
        .iter()
        .map(|f| match f.message_bytes {
            MessageSize::Bytes(b) => b,
            MessageSize::Unbounded => u64::MAX,
        })
        .collect();
    loop {
        t = t + 5_000_000;
        sim.run_until(t).map_err(|e| format!("{label}: {e}"))?;
        let done = sim
            .ledger()
            .flows
            .iter()
            .zip(&expected)
            .all(|(f, &want)| f.bytes_delivered == want);
        if done {
            break;
        }
        if t >= SimTime::from_ms(200) {
            return Err(format!("{label}: flows not drained by 200 ms"));
        }
    }
    for (f, &want) in sim.ledger().flows.iter().zip(&expected) {
        if f.packets_sent != f.packets_delivered || f.bytes_sent != want {
            return Err(format!(
                "{label}: flow {} sent {} pkts / {} B, delivered {} pkts / {} B, message {want} B",
                f.name, f.packets_sent, f.bytes_sent, f.packets_delivered, f.bytes_delivered
            ));
        }
    }
    Ok(())
}

fn criterion_4() -> Outcome {
    let shipped = [
        (
            "parking-lot.scn",
            include_str!("../../../scenarios/parking-lot.scn"),
        ),
        (
            "single-flow.scn",
            include_str!("../../../scenarios/single-flow.scn"),
        ),
    ];
    let mut runs = 0;
    for (name, text) in shipped {
        let base = parse_scenario(text).map_err(|e| format!("{name}: {e}"))?;
        for mode in ["off", "1a", "1b"] {
            let mut scn = base.clone();
            scn.set("rcm.mode", mode).unwrap();
            // unbounded traffic: no overflow over the default run
            run_scenario(&scn, SimTime::from_ms(10), &SimOptions::default())
                .map_err(|e| format!("{name} rcm {mode}: {e}"))?;
            lossless_run(
                &common::finite(scn, 2_000_000),
                &format!("{name} rcm {mode}"),
            )?;
            runs += 2;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let cases = 200;
    for case in 0..cases {
        let scn = common::random_tree(&mut rng);
        scn.validate()
            .map_err(|e| format!("fuzz case {case}: invalid scenario: {e}"))?;
        lossless_run(&scn, &format!("fuzz case {case}"))?;
        runs += 1;
    }
    Ok(format!(
        "{runs} runs ({cases} random trees), no overflow, sent = delivered everywhere"
    ))
}

fn criterion_5() -> Outcome {
    let r = run_scenario(
        &build_single_flow(),
        SimTime::from_ms(10),
        &SimOptions::default(),
    )
    .map_err(|e| e.to_string())?
    .report;
    let g = r.flows[0].steady_gbps;
    check(
        (g - 38.0).abs() <= 0.02 * 38.0,
        format!("{g:.3} Gbps payload"),
        format!("{g:.3} Gbps payload; want 38 ± 2%"),
    )
}

/// Independent replay of the ladder: level, recovery condition and the
/// exact `(k + 1) × T` spacing as a rational number of nanoseconds.
struct LadderOracle {
    level: u64,
    last_change: u64,
    bytes: u64,
    policy: RecoveryPolicy,
    wire_bits: u128,
    rate: u128,
}

impl LadderOracle {
    fn recovery_ok(&self, now: u64) -> bool {
        let t = now - self.last_change >= self.policy.time_ns;
        let b = self.bytes >= self.policy.bytes;
        match self.policy.combine {
            RecoveryCombine::Any => t || b,
            RecoveryCombine::All => t && b,
        }
    }

    fn cnp(&mut self, now: u64) {
        self.level += 1;
        self.bytes = 0;
        self.last_change = now;
    }

    fn try_recover(&mut self, now: u64) {
        if self.level > 0 && self.recovery_ok(now) {
            self.level -= 1;
            self.bytes = 0;
            self.last_change = now;
        }
    }

    fn transmit(&mut self, now: u64, bytes: u64) {
        self.bytes += bytes;
        self.try_recover(now);
    }

    /// `(k + 1) × T` as `(whole ns, remainder over rate)`.
    fn interval(&self) -> (u64, u64) {
        let num = (self.level as u128 + 1) * self.wire_bits * 1_000_000_000;
        ((num / self.rate) as u64, (num % self.rate) as u64)
    }
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let rates = [
        10_000_000_000u64,
        25_000_000_000,
        40_000_000_000,
        100_000_000_000,
    ];
    let mut events = 0usize;
    for seq in 0..1000 {
        let rate = rates[rng.gen_range(0..rates.len())];
        let mtu_wire = rng.gen_range(256..=4200u32);
        let policy = RecoveryPolicy {
            time_ns: rng.gen_range(1_000..=200_000),
            bytes: rng.gen_range(1_000..=300_000),
            combine: if rng.gen() {
                RecoveryCombine::Any
            } else {
                RecoveryCombine::All
            },
        };
        let mut rc = RateController::new(rate, mtu_wire, policy);
        let mut oracle = LadderOracle {
            level: 0,
            last_change: 0,
            bytes: 0,
            policy,
            wire_bits: mtu_wire as u128 * 8,
            rate: rate as u128,
        };
        let mut now = 0u64;
        for step in 0..rng.gen_range(1..200) {
            now += rng.gen_range(0..50_000);
            let t = SimTime::from_ns(now);
            match rng.gen_range(0..3) {
                0 => {
                    rc.on_cnp(t);
                    oracle.cnp(now);
                }
                1 => {
                    rc.on_recovery_event(t);
                    oracle.try_recover(now);
                }
                _ => {
                    let payload = rng.gen_range(1..=mtu_wire);
                    rc.on_transmit(t, payload);
                    oracle.transmit(now, payload as u64);
                }
            }
            events += 1;
            let FracTime { ns, rem } = rc.interval();
            if rc.level() as u64 != oracle.level || (ns, rem) != oracle.interval() {
                return Err(format!(
                    "sequence {seq} step {step}: controller level {} interval {ns}+{rem}/{rate}, oracle level {} interval {:?}",
                    rc.level(),
                    oracle.level,
                    oracle.interval()
                ));
            }
        }
    }
    Ok(format!(
        "1000 sequences, {events} events, level and interval match exactly"
    ))
}

/// Brute-force round robin over always-backlogged inputs of equal packets.
fn rr_oracle_split(inputs: usize, packets: usize) -> Vec<usize> {
    let mut counts = vec![0; inputs];
    for i in 0..packets {
        counts[i % inputs] += 1;
    }
    counts
}

fn criterion_7() -> Outcome {
    let mut details = Vec::new();
    for n in [2u32, 3] {
        let scn = common::star(n);
        let mtu = scn.flows[0].mtu_payload_bytes as u64;
        let mut sim = Simulation::new(&scn, &SimOptions::default()).map_err(|e| e.to_string())?;
        sim.run_until(SimTime::from_ms(5))
            .map_err(|e| e.to_string())?;
        let flows = &sim.ledger().flows;
        let mut worst = 0f64;
        // every 1 ms window starting on a 10 us grid after the first packets land
        let mut start = 50_000u64;
        while start + 1_000_000 <= 5_000_000 {
            let end = start + 1_000_000;
            let bytes: Vec<u64> = flows
                .iter()
                .map(|f| {
                    f.deliveries
                        .iter()
                        .filter(|&&(t, _, _)| t >= start && t < end)
                        .map(|&(_, b, _)| b as u64)
                        .sum()
                })
                .collect();
            let total: u64 = bytes.iter().sum();
            let packets = (total / mtu) as usize;
            let oracle = rr_oracle_split(n as usize, packets);
            for (i, &b) in bytes.iter().enumerate() {
                let share = total as f64 / n as f64;
                let dev = (b as f64 - share)
                    .abs()
                    .max((b as f64 - (oracle[i] as u64 * mtu) as f64).abs());
                worst = worst.max(dev);
            }
            start += 10_000;
        }
        if worst > mtu as f64 {
            return Err(format!(
                "{n} inputs: worst deviation {worst:.0} B exceeds one MTU ({mtu} B)"
            ));
        }
        details.push(format!("{n} inputs worst {worst:.0} B"));
    }
    Ok(format!("{} (MTU 2048 B)", details.join(", ")))
}

fn criterion_8() -> Outcome {
    let mut scn = build_parking_lot();
    scn.set("rcm.mode", "1a").unwrap();
    let opts = SimOptions {
        seed: 7,
        trace: true,
    };
    let once = || {
        let out = run_scenario(&scn, SimTime::from_ms(2), &opts).expect("run");
        let files: Vec<String> = [
            ReportFormat::Json,
            ReportFormat::Csv,
            ReportFormat::CongestionCsv,
            ReportFormat::RateCsv,
            ReportFormat::PauseCsv,
            ReportFormat::Series,
        ]
        .into_iter()
        .map(|f| out.report.render(f))
        .collect();
        (out.trace.expect("trace enabled"), files)
    };
    let (t1, f1) = once();
    let (t2, f2) = once();
    check(
        t1 == t2 && f1 == f2 && !t1.is_empty(),
        format!(
            "two runs with seed 7: {} trace lines and 6 report files identical",
            t1.lines().count()
        ),
        "two runs with seed 7 differ".to_string(),
    )
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("parking lot, RCM off", criterion_1),
        ("parking lot, RCM-1a", criterion_2),
        ("parking lot, RCM-1b", criterion_3),
        ("losslessness", criterion_4),
        ("single-flow baseline", criterion_5),
        ("rate-ladder oracle", criterion_6),
        ("arbitration oracle", criterion_7),
        ("determinism", criterion_8),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        match f() {
            Ok(detail) => println!("criterion {}: PASS  {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {}: FAIL  {name}: {detail}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
