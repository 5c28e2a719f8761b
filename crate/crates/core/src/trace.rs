//! Contact traces: parsing and writing the `<time> CONN <a> <b> <up|down>`
//! line format, and a seeded community-mobility generator.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ContactEvent, Direction, NodeId, SimTime};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TraceError {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: negative time {time}")]
    NegativeTime { line: usize, time: f64 },
    #[error("line {line}: node {node} cannot contact itself")]
    SelfContact { line: usize, node: NodeId },
    #[error("line {line}: down for pair ({a}, {b}) at {time} without a matching up")]
    UnpairedDown {
        line: usize,
        a: NodeId,
        b: NodeId,
        time: SimTime,
    },
    #[error("line {line}: up for pair ({a}, {b}) at {time} while already up")]
    OverlappingUp {
        line: usize,
        a: NodeId,
        b: NodeId,
        time: SimTime,
    },
}

impl TraceError {
    pub fn line(&self) -> usize {
        match *self {
            TraceError::Malformed { line, .. }
            | TraceError::NegativeTime { line, .. }
            | TraceError::SelfContact { line, .. }
            | TraceError::UnpairedDown { line, .. }
            | TraceError::OverlappingUp { line, .. } => line,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeneratorError {
    #[error("community trace needs at least one node")]
    NoNodes,
    #[error("invalid community parameters: {0}")]
    InvalidParams(String),
}

/// Time-ordered contact events. Node ids are dense in `[0, node_count)`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ContactTrace {
    pub events: Vec<ContactEvent>,
    pub node_count: u32,
    pub duration: SimTime,
}

impl ContactTrace {
    pub fn empty() -> ContactTrace {
        ContactTrace::default()
    }

    /// Number of Up events.
    pub fn contact_count(&self) -> usize {
        self.events
            .iter()
            .filter(|e| e.direction == Direction::Up)
            .count()
    }
}

/// Parses a trace. Events are stably sorted by time and then checked for
/// up/down pairing; errors report the 1-based source line.
pub fn parse_contact_trace(text: &str) -> Result<ContactTrace, TraceError> {
    let mut lined: Vec<(usize, ContactEvent)> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.strip_suffix('\r').unwrap_or(raw).trim();
        if content.is_empty() || content.starts_with('#') {
            continue;
        }
        lined.push((line, parse_line(line, content)?));
    }
    lined.sort_by_key(|x| x.1.time);
    validate_pairing(lined.iter().map(|(l, e)| (*l, e)))?;

    let node_count = lined
        .iter()
        .map(|(_, e)| e.a.0.max(e.b.0) + 1)
        .max()
        .unwrap_or(0);
    let duration = lined.last().map(|(_, e)| e.time).unwrap_or(SimTime::ZERO);
    Ok(ContactTrace {
        events: lined.into_iter().map(|(_, e)| e).collect(),
        node_count,
        duration,
    })
}

fn parse_line(line: usize, content: &str) -> Result<ContactEvent, TraceError> {
    let malformed = |reason: &str| TraceError::Malformed {
        line,
        reason: reason.to_string(),
    };
    let fields: Vec<&str> = content.split_whitespace().collect();
    if fields.len() != 5 {
        return Err(malformed("expected `<time> CONN <id1> <id2> <up|down>`"));
    }
    let time: f64 = fields[0]
        .parse()
        .map_err(|_| malformed("time is not a decimal number"))?;
    if !time.is_finite() {
        return Err(malformed("time is not finite"));
    }
    if time < 0.0 {
        return Err(TraceError::NegativeTime { line, time });
    }
    if fields[1] != "CONN" {
        return Err(malformed("second field must be CONN"));
    }
    let a: u32 = fields[2]
        .parse()
        .map_err(|_| malformed("first node id is not a non-negative integer"))?;
    let b: u32 = fields[3]
        .parse()
        .map_err(|_| malformed("second node id is not a non-negative integer"))?;
    let direction = match fields[4] {
        "up" => Direction::Up,
        "down" => Direction::Down,
        _ => return Err(malformed("direction must be `up` or `down`")),
    };
    if a == b {
        return Err(TraceError::SelfContact {
            line,
            node: NodeId(a),
        });
    }
    Ok(ContactEvent {
        time: SimTime::from_secs(time),
        a: NodeId(a),
        b: NodeId(b),
        direction,
    })
}

fn validate_pairing<'a>(
    events: impl Iterator<Item = (usize, &'a ContactEvent)>,
) -> Result<(), TraceError> {
    let mut up = BTreeSet::new();
    for (line, ev) in events {
        let (a, b) = ev.pair();
        match ev.direction {
            Direction::Up => {
                if !up.insert((a, b)) {
                    return Err(TraceError::OverlappingUp {
                        line,
                        a,
                        b,
                        time: ev.time,
                    });
                }
            }
            Direction::Down => {
                if !up.remove(&(a, b)) {
                    return Err(TraceError::UnpairedDown {
                        line,
                        a,
                        b,
                        time: ev.time,
                    });
                }
            }
        }
    }
    Ok(())
}

/// Checks the invariants of an in-memory trace. Line numbers in errors are
/// 1-based event positions.
pub fn validate_trace(trace: &ContactTrace) -> Result<(), TraceError> {
    for (i, pair) in trace.events.windows(2).enumerate() {
        if pair[1].time < pair[0].time {
            return Err(TraceError::Malformed {
                line: i + 2,
                reason: "events out of time order".into(),
            });
        }
    }
    for (i, ev) in trace.events.iter().enumerate() {
        if ev.a == ev.b {
            return Err(TraceError::SelfContact {
                line: i + 1,
                node: ev.a,
            });
        }
        if ev.a.0 >= trace.node_count || ev.b.0 >= trace.node_count {
            return Err(TraceError::Malformed {
                line: i + 1,
                reason: format!("node id beyond node count {}", trace.node_count),
            });
        }
    }
    validate_pairing(trace.events.iter().enumerate().map(|(i, e)| (i + 1, e)))
}

/// Emits one LF-terminated line per event. Times use the shortest decimal
/// form that parses back to the same `f64`.
pub fn write_contact_trace(trace: &ContactTrace) -> String {
    let mut out = String::new();
    for ev in &trace.events {
        let dir = match ev.direction {
            Direction::Up => "up",
            Direction::Down => "down",
        };
        writeln!(out, "{} CONN {} {} {}", ev.time, ev.a, ev.b, dir).unwrap();
    }
    out
}

/// Parameters of the synthetic community trace. Rates are contacts per node
/// pair per hour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommunityParams {
    pub groups: u32,
    pub nodes_per_group: u32,
    pub intra_rate: f64,
    pub inter_rate: f64,
    pub mean_contact_duration: f64,
    pub duration: SimTime,
    pub seed: u64,
}

impl CommunityParams {
    pub fn node_count(&self) -> u32 {
        self.groups * self.nodes_per_group
    }

    fn validate(&self) -> Result<(), GeneratorError> {
        if self.node_count() == 0 {
            return Err(GeneratorError::NoNodes);
        }
        let bad = |s: &str| Err(GeneratorError::InvalidParams(s.to_string()));
        if !(self.inter_rate.is_finite() && self.inter_rate >= 0.0) {
            return bad("inter_rate must be finite and >= 0");
        }
        if !(self.intra_rate.is_finite() && self.intra_rate >= self.inter_rate) {
            return bad("intra_rate must be finite and >= inter_rate");
        }
        if !(self.mean_contact_duration.is_finite() && self.mean_contact_duration > 0.0) {
            return bad("mean_contact_duration must be > 0");
        }
        Ok(())
    }
}

// Generated times are quantised to this many seconds so written traces stay
// readable.
const TIME_QUANTUM: f64 = 1e-3;

fn quantise(t: f64) -> f64 {
    (t / TIME_QUANTUM).round() * TIME_QUANTUM
}

/// Generates a community trace. Each node pair runs an alternating renewal
/// process: an exponential gap at the pair's rate (intra- or inter-group),
/// then an exponential contact, truncated at the trace end.
pub fn generate_community_trace(params: &CommunityParams) -> Result<ContactTrace, GeneratorError> {
    params.validate()?;
    let n = params.node_count();
    let end = params.duration.as_secs();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let contact_len = Exp::new(1.0 / params.mean_contact_duration)
        .map_err(|e| GeneratorError::InvalidParams(e.to_string()))?;

    let mut events = Vec::new();
    for a in 0..n {
        for b in (a + 1)..n {
            let same_group = a / params.nodes_per_group == b / params.nodes_per_group;
            let rate_per_hour = if same_group {
                params.intra_rate
            } else {
                params.inter_rate
            };
            if rate_per_hour <= 0.0 {
                continue;
            }
            let gap = Exp::new(rate_per_hour / 3600.0)
                .map_err(|e| GeneratorError::InvalidParams(e.to_string()))?;
            let mut t = 0.0;
            loop {
                let start = quantise(t + gap.sample(&mut rng));
                if start >= end {
                    break;
                }
                let len = contact_len.sample(&mut rng).max(TIME_QUANTUM);
                let stop = quantise(start + len).min(end).max(start);
                events.push(ContactEvent {
                    time: SimTime::from_secs(start),
                    a: NodeId(a),
                    b: NodeId(b),
                    direction: Direction::Up,
                });
                events.push(ContactEvent {
                    time: SimTime::from_secs(stop),
                    a: NodeId(a),
                    b: NodeId(b),
                    direction: Direction::Down,
                });
                // a later Up at the same quantised instant sorts after this Down
                t = stop;
            }
        }
    }
    events.sort_by_key(|x| x.time);
    Ok(ContactTrace {
        events,
        node_count: n,
        duration: params.duration,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(seed: u64) -> CommunityParams {
        CommunityParams {
            groups: 2,
            nodes_per_group: 4,
            intra_rate: 4.0,
            inter_rate: 0.5,
            mean_contact_duration: 120.0,
            duration: SimTime::from_secs(4.0 * 3600.0),
            seed,
        }
    }

    #[test]
    fn minimal_trace() {
        let t = parse_contact_trace("10.0 CONN 0 1 up\n25.0 CONN 0 1 down").unwrap();
        assert_eq!(t.events.len(), 2);
        assert_eq!(t.node_count, 2);
        assert_eq!(t.duration, SimTime::from_secs(25.0));
    }

    #[test]
    fn unpaired_down_is_rejected() {
        let err = parse_contact_trace("10.0 CONN 0 1 down").unwrap_err();
        assert!(matches!(err, TraceError::UnpairedDown { line: 1, .. }));
    }

    #[test]
    fn comments_and_blank_lines_are_skipped() {
        let t = parse_contact_trace("# comment\n\n5 CONN 2 0 up").unwrap();
        assert_eq!(t.events.len(), 1);
        assert_eq!(t.node_count, 3);
    }

    #[test]
    fn crlf_is_accepted() {
        let t = parse_contact_trace("1 CONN 0 1 up\r\n2 CONN 0 1 down\r\n").unwrap();
        assert_eq!(t.events.len(), 2);
    }

    #[test]
    fn error_cases_carry_line_numbers() {
        let cases = [
            ("1 CONN 0 1 up\n2 CONN 0 1 sideways", 2),
            ("1 CONN 0 1 up\n\n# x\n-4 CONN 0 2 up", 4),
            ("1 CONN 0 0 up", 1),
            ("1 CONN 0 1 up\n2 CONN 1 0 up", 2),
            ("1 LINK 0 1 up", 1),
            ("abc CONN 0 1 up", 1),
            ("1 CONN 0 1", 1),
            ("1 CONN 0 x up", 1),
        ];
        for (text, line) in cases {
            let err = parse_contact_trace(text).unwrap_err();
            assert_eq!(err.line(), line, "{text:?} -> {err}");
        }
    }

    #[test]
    fn sorting_is_stable_and_validated_after_sort() {
        // down appears first in the file but later in time
        let t = parse_contact_trace("20 CONN 0 1 down\n5 CONN 0 1 up").unwrap();
        assert_eq!(t.events[0].direction, Direction::Up);
        let t = parse_contact_trace("5 CONN 0 1 up\n5 CONN 2 3 up\n5 CONN 0 1 down").unwrap();
        assert_eq!(t.events[1].a, NodeId(2));
    }

    #[test]
    fn empty_trace_writes_nothing() {
        assert_eq!(write_contact_trace(&ContactTrace::empty()), "");
    }

    #[test]
    fn single_event_round_trip() {
        let t = parse_contact_trace("12.345 CONN 3 1 up\n").unwrap();
        let back = parse_contact_trace(&write_contact_trace(&t)).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn zero_inter_rate_has_no_cross_group_contacts() {
        let mut p = params(7);
        p.inter_rate = 0.0;
        let t = generate_community_trace(&p).unwrap();
        assert!(!t.events.is_empty());
        assert!(t.events.iter().all(|e| e.a.0 / 4 == e.b.0 / 4));
    }

    #[test]
    fn generator_is_deterministic() {
        assert_eq!(
            generate_community_trace(&params(99)).unwrap(),
            generate_community_trace(&params(99)).unwrap()
        );
        assert_ne!(
            generate_community_trace(&params(99)).unwrap(),
            generate_community_trace(&params(100)).unwrap()
        );
    }

    #[test]
    fn generated_traces_are_valid() {
        for seed in 0..20 {
            let t = generate_community_trace(&params(seed)).unwrap();
            validate_trace(&t).unwrap();
            assert_eq!(
                parse_contact_trace(&write_contact_trace(&t))
                    .unwrap()
                    .events,
                t.events
            );
        }
    }

    #[test]
    fn zero_nodes_is_an_error() {
        let mut p = params(1);
        p.groups = 0;
        assert_eq!(generate_community_trace(&p), Err(GeneratorError::NoNodes));
    }
}
