//! Acceptance suite. Prints one `[PASS]`/`[FAIL]` line per criterion and
//! exits non-zero if any criterion fails.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use oppsim_core::engine::{LogKind, MB};
use oppsim_core::model::{Body, MessageId};
use oppsim_core::report::{parse_rd_timeline_csv, rd_timeline_csv, RdPoint};
use oppsim_core::trace::{
    generate_community_trace, parse_contact_trace, write_contact_trace, CommunityParams,
};
use oppsim_core::{
    compare, ewma, run, run_with_log, Alpha, ContactTrace, ControlParams, ControllerState, Copies,
    MessageKind, NodeId, RunReport, Scenario, SimParams, SimTime, StrategyKind, TraceError,
    UpdateMode,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);
type TraceCase = (&'static str, usize, fn(&TraceError) -> bool);

fn check(cond: bool, what: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what.into())
    }
}

fn close(got: f64, want: f64, what: &str) -> Result<(), String> {
    check(
        (got - want).abs() <= 1e-12,
        format!("{what}: got {got}, expected {want}"),
    )
}

fn hours(h: f64) -> SimTime {
    SimTime::from_secs(h * 3600.0)
}

// ---- control math -------------------------------------------------------

fn controller(rd: f64, mode: UpdateMode) -> ControllerState {
    let mut c = ControllerState::new(&ControlParams {
        update_mode: mode,
        ..ControlParams::default()
    });
    c.rd_current = rd;
    c
}

fn directive_rd(c: &mut ControllerState) -> f64 {
    let m = c.close_window(NodeId(0), SimTime::from_secs(90.0), 5, MessageId(0));
    match m.body {
        Body::Directive(d) => d.new_rd,
        _ => unreachable!(),
    }
}

fn control_math() -> Outcome {
    let start = Instant::now();
    let a = Alpha::new(0.8).unwrap();
    let mut n = 0;
    let mut expect = |got: f64, want: f64, what: &str| {
        n += 1;
        close(got, want, what)
    };

    // oracle: congestion' = (1 - a) * congestion + a * reading
    expect(ewma(None, 4.0, a), 4.0, "ewma init")?;
    expect(
        ewma(Some(10.0), 20.0, a),
        (1.0 - 0.8) * 10.0 + 0.8 * 20.0,
        "ewma 10,20",
    )?;
    for x in [0.0, 3.5, 17.0] {
        expect(
            ewma(Some(x), x, Alpha::new(0.3).unwrap()),
            x,
            "ewma fixed point",
        )?;
    }

    let alg = controller(10.0, UpdateMode::Algorithm);
    expect(alg.rd_update(12.0), 10.0 * 0.2, "decrease")?;
    expect(alg.rd_update(0.0), 10.0 + 10.0 * 0.2, "increase")?;
    let eq = controller(10.0, UpdateMode::Equation);
    expect(
        eq.rd_update(10.0),
        10.0 - 0.2 * 10.0,
        "equation at threshold",
    )?;
    expect(
        eq.rd_update(5.0),
        10.0 + 0.2 * 5.0,
        "equation below threshold",
    )?;
    expect(
        controller(1.0, UpdateMode::Equation).rd_update(1e12),
        1.0,
        "lower clamp",
    )?;

    let mut c = controller(10.0, UpdateMode::Algorithm);
    expect(directive_rd(&mut c), 12.0, "window without metrics")?;

    let mut c = controller(10.0, UpdateMode::Algorithm);
    c.on_metric(20.0);
    c.on_metric(20.0);
    expect(directive_rd(&mut c), 2.0, "window with metrics [20, 20]")?;

    let mut c = controller(10.0, UpdateMode::Algorithm);
    c.on_metric(20.0);
    c.on_metric(20.0);
    c.on_peer_directive(8.0);
    expect(
        directive_rd(&mut c),
        0.2 * 2.0 + 0.8 * 8.0,
        "window with peer directive",
    )?;

    let elapsed = start.elapsed();
    check(
        elapsed < Duration::from_secs(1),
        format!("took {elapsed:?}"),
    )?;
    Ok(format!("{n} examples within 1e-12 in {elapsed:?}"))
}

// ---- copy budget --------------------------------------------------------

fn random_spray_scenario(rng: &mut ChaCha8Rng) -> (Scenario, u32) {
    let nodes = rng.gen_range(3..=10u32);
    // every node creates at most one message per 25 s
    let duration = (50 * 25 / nodes) as f64;
    let trace = generate_community_trace(&CommunityParams {
        groups: 1,
        nodes_per_group: nodes,
        intra_rate: rng.gen_range(20.0..200.0),
        inter_rate: 0.0,
        mean_contact_duration: rng.gen_range(0.005..5.0),
        duration: SimTime::from_secs(duration),
        seed: rng.gen(),
    })
    .unwrap();
    let limit = rng.gen_range(1..=12u32);
    let params = SimParams {
        buffer_bytes: rng.gen_range(1..=8) * MB,
        ..SimParams::default()
    };
    let mut scenario = Scenario::new(trace, StrategyKind::StaticSpray(limit), params, rng.gen());
    scenario.node_count = nodes;
    (scenario, limit)
}

fn copy_conservation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xc0b1e5);
    let mut violations = Vec::new();
    let mut messages = 0usize;
    let mut max_holders = 0usize;
    for i in 0..200 {
        let (scenario, limit) = random_spray_scenario(&mut rng);
        let (report, log) = run_with_log(&scenario).map_err(|e| e.to_string())?;
        check(
            report.created_data <= 50,
            format!("scenario {i}: {} messages", report.created_data),
        )?;
        // independent counter: distinct nodes that ever stored each data id
        let mut data_ids = BTreeSet::new();
        let mut holders: HashMap<MessageId, BTreeSet<NodeId>> = HashMap::new();
        for rec in &log {
            match rec.kind {
                LogKind::Created {
                    id,
                    kind: MessageKind::Data,
                    copies,
                    ..
                } => {
                    check(
                        copies == Copies::Finite(limit),
                        format!("scenario {i}: {id} created with {copies:?}"),
                    )?;
                    data_ids.insert(id);
                }
                LogKind::Stored { node, id, .. } if data_ids.contains(&id) => {
                    holders.entry(id).or_default().insert(node);
                }
                _ => {}
            }
        }
        messages += data_ids.len();
        for (id, nodes) in &holders {
            max_holders = max_holders.max(nodes.len());
            if nodes.len() > limit as usize {
                violations.push(format!(
                    "scenario {i}: {id} in {} buffers, limit {limit}",
                    nodes.len()
                ));
            }
        }
    }
    check(
        violations.is_empty(),
        format!(
            "{} violations, first: {:?}",
            violations.len(),
            violations.first()
        ),
    )?;
    Ok(format!(
        "200 scenarios, {messages} messages, 0 violations (max holders {max_holders})"
    ))
}

// ---- epidemic completeness ----------------------------------------------

fn epidemic_completeness() -> Outcome {
    let trace = generate_community_trace(&CommunityParams {
        groups: 1,
        nodes_per_group: 8,
        intra_rate: 6.0,
        inter_rate: 0.0,
        mean_contact_duration: 30.0,
        duration: hours(3.0),
        seed: 42,
    })
    .unwrap();
    // traffic stops an hour early so every pair meets again afterwards
    let params = SimParams {
        buffer_bytes: 100_000 * MB,
        data_stop: Some(2.0 * 3600.0),
        ..SimParams::default()
    };
    let mut ratios = Vec::new();
    for seed in 1..=3 {
        let r = run(&Scenario::new(
            trace.clone(),
            StrategyKind::Epidemic,
            params.clone(),
            seed,
        ))
        .map_err(|e| e.to_string())?;
        check(r.created_data > 0, "no traffic")?;
        check(
            r.dropped_data == 0,
            format!("seed {seed}: {} drops", r.dropped_data),
        )?;
        check(
            r.delivery_ratio == 1.0,
            format!(
                "seed {seed}: delivered {}/{}",
                r.delivered_data, r.created_data
            ),
        )?;
        ratios.push(format!("{}/{}", r.delivered_data, r.created_data));
    }
    Ok(format!(
        "delivery_ratio = 1.0 exactly ({})",
        ratios.join(", ")
    ))
}

// ---- determinism --------------------------------------------------------

fn determinism() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xde7e);
    for i in 0..20 {
        let trace = generate_community_trace(&CommunityParams {
            groups: rng.gen_range(1..=3),
            nodes_per_group: rng.gen_range(2..=6),
            intra_rate: rng.gen_range(2.0..20.0),
            inter_rate: rng.gen_range(0.0..2.0),
            mean_contact_duration: rng.gen_range(0.05..20.0),
            duration: SimTime::from_secs(rng.gen_range(600.0..3600.0)),
            seed: rng.gen(),
        })
        .unwrap();
        let strategy = match i % 3 {
            0 => StrategyKind::Epidemic,
            1 => StrategyKind::StaticSpray(rng.gen_range(1..=16)),
            _ => StrategyKind::Controlled,
        };
        let params = SimParams {
            buffer_bytes: rng.gen_range(1..=30) * MB,
            ..SimParams::default()
        };
        let scenario = Scenario::new(trace, strategy, params, rng.gen());
        let a = run(&scenario).map_err(|e| e.to_string())?;
        let b = run(&scenario).map_err(|e| e.to_string())?;
        check(
            a.to_csv() == b.to_csv(),
            format!("scenario {i}: report.csv differs"),
        )?;
        check(
            a.to_json() == b.to_json(),
            format!("scenario {i}: report.json differs"),
        )?;
        check(
            rd_timeline_csv(&a.rd_timeline) == rd_timeline_csv(&b.rd_timeline),
            format!("scenario {i}: rd_timeline.csv differs"),
        )?;
    }
    Ok("20 scenarios, byte-identical report.csv".into())
}

// ---- directional comparison ---------------------------------------------

const SEEDS: std::ops::RangeInclusive<u64> = 1..=5;

/// Two 10-node communities over 4 h with brief contacts, so that contact
/// capacity, not only buffer space, is contended.
fn directional_trace() -> ContactTrace {
    generate_community_trace(&CommunityParams {
        groups: 2,
        nodes_per_group: 10,
        intra_rate: 12.0,
        inter_rate: 1.0,
        mean_contact_duration: 0.1,
        duration: hours(4.0),
        seed: 2024,
    })
    .unwrap()
}

fn directional_params(data_size: (u64, u64)) -> SimParams {
    SimParams {
        data_size,
        ..SimParams::default()
    }
}

fn sweep(
    trace: &ContactTrace,
    params: &SimParams,
) -> Result<BTreeMap<String, Vec<RunReport>>, String> {
    let mut by_label = BTreeMap::new();
    for strategy in [
        StrategyKind::Controlled,
        StrategyKind::Epidemic,
        StrategyKind::StaticSpray(10),
    ] {
        let runs = SEEDS
            .map(|seed| {
                run(&Scenario::new(
                    trace.clone(),
                    strategy,
                    params.clone(),
                    seed,
                ))
            })
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| e.to_string())?;
        by_label.insert(strategy.label(), runs);
    }
    Ok(by_label)
}

fn directional() -> Outcome {
    let start = Instant::now();
    let trace = directional_trace();
    let runs = sweep(&trace, &directional_params((MB, MB)))?;
    for r in &runs["epidemic"] {
        check(
            r.data_drop_rate() >= 0.2,
            format!(
                "seed {}: epidemic drop rate {:.3} < 0.2",
                r.seed,
                r.data_drop_rate()
            ),
        )?;
    }
    let table = compare(&runs, "controlled").map_err(|e| e.to_string())?;
    let ctl = table.summary("controlled").unwrap();
    let epi = table.summary("epidemic").unwrap();
    let spray = table.summary("static_spray(10)").unwrap();
    let over_epi = table.improvement_over("epidemic").unwrap_or(f64::NAN);
    let over_spray = table
        .improvement_over("static_spray(10)")
        .unwrap_or(f64::NAN);
    let (cl, el) = (
        ctl.median_latency.unwrap_or(f64::INFINITY),
        epi.median_latency.unwrap_or(0.0),
    );
    let elapsed = start.elapsed();
    let detail = format!(
        "delivery ctl {:.4} / epi {:.4} / spray {:.4} (+{over_epi:.1}%, +{over_spray:.1}%), \
         median latency ctl {cl:.1} s vs epi {el:.1} s, {elapsed:.1?}",
        ctl.median_delivery_ratio, epi.median_delivery_ratio, spray.median_delivery_ratio,
    );
    check(
        over_epi >= 5.0 && over_spray >= 5.0,
        format!("improvement below 5%: {detail}"),
    )?;
    check(cl <= el, format!("latency: {detail}"))?;
    check(
        elapsed < Duration::from_secs(120),
        format!("runtime: {detail}"),
    )?;
    Ok(detail)
}

fn overhead() -> Outcome {
    let trace = directional_trace();
    let mut worst: f64 = 0.0;
    for size in [(600, MB), (MB, MB)] {
        for seed in SEEDS {
            let r = run(&Scenario::new(
                trace.clone(),
                StrategyKind::Controlled,
                directional_params(size),
                seed,
            ))
            .map_err(|e| e.to_string())?;
            check(r.control_bytes_transferred > 0, "no control traffic")?;
            worst = worst.max(r.control_overhead);
        }
    }
    check(worst < 1e-2, format!("control_overhead {worst:.3e}"))?;
    Ok(format!(
        "max control_overhead {worst:.3e} over 10 controlled runs"
    ))
}

// ---- controller dynamics ------------------------------------------------

fn timeline_from_csv(report: &RunReport, name: &str) -> Result<Vec<RdPoint>, String> {
    let path = std::path::Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    std::fs::write(&path, rd_timeline_csv(&report.rd_timeline)).map_err(|e| e.to_string())?;
    let text = std::fs::read_to_string(&path).map_err(|e| e.to_string())?;
    parse_rd_timeline_csv(&text).map_err(|e| e.to_string())
}

fn per_node(points: &[RdPoint]) -> BTreeMap<NodeId, Vec<f64>> {
    let mut out: BTreeMap<NodeId, Vec<f64>> = BTreeMap::new();
    for p in points {
        out.entry(p.node).or_default().push(p.rd);
    }
    out
}

fn controller_dynamics() -> Outcome {
    let trace = generate_community_trace(&CommunityParams {
        groups: 1,
        nodes_per_group: 6,
        intra_rate: 10.0,
        inter_rate: 0.0,
        mean_contact_duration: 10.0,
        duration: hours(1.0),
        seed: 3,
    })
    .unwrap();

    let mut congested = SimParams::default();
    congested.control.injected_drops = congested.control.threshold as u64 + 5;
    let r = run(&Scenario::new(
        trace.clone(),
        StrategyKind::Controlled,
        congested,
        1,
    ))
    .map_err(|e| e.to_string())?;
    let down = timeline_from_csv(&r, "rd_timeline_congested.csv")?;
    check(!down.is_empty(), "no directive applied under congestion")?;
    for (node, rds) in per_node(&down) {
        check(
            rds.windows(2).all(|w| w[1] <= w[0]),
            format!("congested: node {node} rd rose: {rds:?}"),
        )?;
    }
    let ctl_down = per_node(&down)[&NodeId(0)].clone();
    check(
        *ctl_down.last().unwrap() == 1.0,
        format!("congested: never reached 1: {ctl_down:?}"),
    )?;

    let calm = SimParams {
        buffer_bytes: 100_000 * MB,
        ..SimParams::default()
    };
    let r =
        run(&Scenario::new(trace, StrategyKind::Controlled, calm, 1)).map_err(|e| e.to_string())?;
    check(
        r.dropped_data + r.dropped_control == 0,
        "calm run dropped messages",
    )?;
    let up = timeline_from_csv(&r, "rd_timeline_calm.csv")?;
    for (node, rds) in per_node(&up) {
        check(
            rds.windows(2).all(|w| w[1] >= w[0]),
            format!("calm: node {node} rd fell: {rds:?}"),
        )?;
    }
    let ctl_up = per_node(&up)[&NodeId(0)].clone();
    check(
        *ctl_up.last().unwrap() == 64.0,
        format!("calm: never reached rd_max: {ctl_up:?}"),
    )?;
    Ok(format!(
        "congested: {} points non-increasing to 1; calm: {} points non-decreasing to 64",
        down.len(),
        up.len()
    ))
}

// ---- trace round trip and validation ------------------------------------

fn trace_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x7ace);
    let mut events = 0;
    for i in 0..100 {
        let trace = generate_community_trace(&CommunityParams {
            groups: rng.gen_range(1..=4),
            nodes_per_group: rng.gen_range(1..=8),
            intra_rate: rng.gen_range(0.5..30.0),
            inter_rate: rng.gen_range(0.0..0.5),
            mean_contact_duration: rng.gen_range(0.01..600.0),
            duration: SimTime::from_secs(rng.gen_range(60.0..20_000.0)),
            seed: rng.gen(),
        })
        .unwrap();
        let text = write_contact_trace(&trace);
        let back = parse_contact_trace(&text).map_err(|e| format!("trace {i}: {e}"))?;
        check(
            back.events == trace.events,
            format!("trace {i}: events differ"),
        )?;
        check(
            write_contact_trace(&back) == text,
            format!("trace {i}: text differs"),
        )?;
        events += trace.events.len();
    }

    let cases: [TraceCase; 7] = [
        ("0 CONN 0 1 up\n1 CONN 0 1\n", 2, |e| {
            matches!(e, TraceError::Malformed { .. })
        }),
        ("# header\n\n0 CONN 0 1 up\nx CONN 0 1 down\n", 4, |e| {
            matches!(e, TraceError::Malformed { .. })
        }),
        ("0 LINK 0 1 up\n", 1, |e| {
            matches!(e, TraceError::Malformed { .. })
        }),
        ("0 CONN 0 1 up\n-5 CONN 0 1 down\n", 2, |e| {
            matches!(e, TraceError::NegativeTime { .. })
        }),
        ("0 CONN 0 1 up\n3 CONN 2 2 up\n", 2, |e| {
            matches!(e, TraceError::SelfContact { .. })
        }),
        (
            "0 CONN 0 1 up\n5 CONN 0 1 down\n7 CONN 1 0 down\n",
            3,
            |e| matches!(e, TraceError::UnpairedDown { .. }),
        ),
        ("0 CONN 0 1 up\r\n4 CONN 1 0 up\r\n", 2, |e| {
            matches!(e, TraceError::OverlappingUp { .. })
        }),
    ];
    for (text, line, kind) in cases {
        match parse_contact_trace(text) {
            Ok(_) => return Err(format!("accepted {text:?}")),
            Err(e) => {
                check(kind(&e), format!("{text:?}: wrong error {e}"))?;
                check(
                    e.line() == line,
                    format!("{text:?}: line {} != {line}", e.line()),
                )?;
            }
        }
    }
    Ok(format!(
        "100 traces ({events} events) round-trip; {} validator cases",
        cases.len()
    ))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("control-math oracles", control_math),
        ("copy-budget conservation", copy_conservation),
        ("epidemic completeness", epidemic_completeness),
        ("determinism", determinism),
        ("directional comparison", directional),
        ("overhead magnitude", overhead),
        ("controller dynamics", controller_dynamics),
        ("trace round-trip and validation", trace_suite),
    ];
    let mut failed = 0;
    for (name, criterion) in criteria {
        match criterion() {
            Ok(detail) => println!("[PASS] {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("[FAIL] {name}: {detail}");
            }
        }
    }
    println!("{} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
