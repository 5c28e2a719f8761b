//! Single-threaded discrete-event loop.
//!
//! Events at equal timestamps run in a fixed category order: transfer
//! completions, trace contact events (in trace order), data generation,
//! sensor windows, controller windows; then by node id. A transfer that
//! completes exactly when its contact goes down therefore counts.
//!
//! Links are half-duplex: one transfer at a time, taking `size / bandwidth`
//! seconds. Aborted transfers deliver nothing and refund the spray budget
//! they took from the sender.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::control::{
    ControlParams, ControllerState, DirectiveOutcome, ReplicationState, SensorState,
};
use crate::model::{
    Body, Buffer, Copies, Direction, DirectiveStamp, DropPolicy, Message, MessageId, MessageKind,
    NodeId, SimTime,
};
use crate::report::{quantiles, RdPoint, RunReport};
use crate::routing::{
    self, on_receive, plan_transfer, PeerInfo, PeerView, ReceiveAction, ReceiverView, StrategyKind,
    SummaryVector, TransferKind,
};
use crate::trace::{validate_trace, ContactTrace};

pub const MB: u64 = 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("invalid control settings: {0}")]
    Control(#[from] crate::control::ControlError),
    #[error("invalid trace: {0}")]
    Trace(#[from] crate::trace::TraceError),
}

/// Everything except the trace, strategy and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    /// Link speed, bytes per second.
    pub bandwidth: f64,
    pub buffer_bytes: u64,
    pub drop_policy: DropPolicy,
    /// Inclusive data message size range, bytes.
    pub data_size: (u64, u64),
    /// Inclusive gap between two data messages of one node, seconds.
    pub data_interval: (f64, f64),
    pub data_ttl: Option<f64>,
    /// No data is generated after this time, seconds.
    #[serde(default)]
    pub data_stop: Option<f64>,
    pub control: ControlParams,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            bandwidth: (100 * MB) as f64,
            buffer_bytes: 30 * MB,
            drop_policy: DropPolicy::DropOldest,
            data_size: (600, MB),
            data_interval: (25.0, 35.0),
            data_ttl: None,
            data_stop: None,
            control: ControlParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub trace: ContactTrace,
    pub node_count: u32,
    pub controllers: BTreeSet<NodeId>,
    pub strategy: StrategyKind,
    pub params: SimParams,
    pub seed: u64,
}

impl Scenario {
    /// Scenario over `trace` with node 0 as the sole controller.
    pub fn new(
        trace: ContactTrace,
        strategy: StrategyKind,
        params: SimParams,
        seed: u64,
    ) -> Scenario {
        Scenario {
            node_count: trace.node_count,
            trace,
            controllers: [NodeId(0)].into(),
            strategy,
            params,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let invalid = |s: String| Err(ScenarioError::Invalid(s));
        let p = &self.params;
        validate_trace(&self.trace)?;
        if self.node_count < self.trace.node_count {
            return invalid(format!(
                "node_count {} is below the trace's {}",
                self.node_count, self.trace.node_count
            ));
        }
        if !(p.bandwidth.is_finite() && p.bandwidth > 0.0) {
            return invalid("bandwidth must be > 0".into());
        }
        if p.buffer_bytes == 0 {
            return invalid("buffer size must be > 0".into());
        }
        if p.data_size.0 == 0 || p.data_size.0 > p.data_size.1 {
            return invalid("data size range must be non-empty and positive".into());
        }
        let (lo, hi) = p.data_interval;
        if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi) {
            return invalid("data interval range must be non-empty and positive".into());
        }
        if let Some(ttl) = p.data_ttl {
            if !(ttl.is_finite() && ttl > 0.0) {
                return invalid("data ttl must be > 0".into());
            }
        }
        if let Some(stop) = p.data_stop {
            if !(stop.is_finite() && stop >= 0.0) {
                return invalid("data stop time must be >= 0".into());
            }
        }
        if let StrategyKind::StaticSpray(0) = self.strategy {
            return invalid("spray limit must be >= 1".into());
        }
        if self.strategy.uses_control_layer() {
            p.control.validate()?;
            if self.controllers.is_empty() {
                return invalid("controlled strategy needs at least one controller".into());
            }
            if let Some(c) = self.controllers.iter().find(|c| c.0 >= self.node_count) {
                return invalid(format!("controller {c} is not a node"));
            }
        }
        Ok(())
    }

    pub fn digest(&self) -> String {
        hash_json(self)
    }

    /// Digest that ignores strategy and seed.
    pub fn family_digest(&self) -> String {
        hash_json(&(
            &self.trace,
            self.node_count,
            &self.controllers,
            &self.params,
        ))
    }
}

fn hash_json(value: &impl Serialize) -> String {
    let bytes = serde_json::to_vec(value).expect("scenario serialises");
    let digest = Sha256::digest(&bytes);
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// SplitMix64 finaliser.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of node `node`'s private stream: `mix64(seed + GOLDEN * (node + 1))`.
pub fn node_seed(seed: u64, node: NodeId) -> u64 {
    mix64(seed.wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(node.0 as u64 + 1)))
}

#[derive(Debug, Clone)]
pub struct NodeState {
    pub id: NodeId,
    pub buffer: Buffer,
    pub sensor: SensorState,
    pub controller: Option<ControllerState>,
    pub replication: ReplicationState,
    pub delivered_ids: BTreeSet<MessageId>,
    /// Drops at this node, data and control.
    pub drops: u64,
    links: BTreeSet<(NodeId, NodeId)>,
    rng: ChaCha8Rng,
}

impl NodeState {
    pub fn is_controller(&self) -> bool {
        self.controller.is_some()
    }

    pub fn current_rd(&self) -> f64 {
        self.replication.current_rd
    }

    pub fn summary(&self) -> SummaryVector {
        SummaryVector {
            buffered: self.buffer.ids().collect(),
            delivered: self.delivered_ids.clone(),
            latest_directive: self.replication.last_applied,
        }
    }

    fn receiver_view(&self, id: MessageId) -> ReceiverView {
        ReceiverView {
            id: self.id,
            is_controller: self.is_controller(),
            has_buffered: self.buffer.contains(id),
            has_delivered: self.delivered_ids.contains(&id),
            latest_directive: self.replication.last_applied,
        }
    }
}

impl PeerView for NodeState {
    fn id(&self) -> NodeId {
        self.id
    }

    fn is_controller(&self) -> bool {
        self.controller.is_some()
    }

    fn knows(&self, id: MessageId) -> bool {
        self.buffer.contains(id) || self.delivered_ids.contains(&id)
    }

    fn latest_directive(&self) -> Option<DirectiveStamp> {
        self.replication.last_applied
    }
}

/// Why a message left a buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RemoveReason {
    Dropped,
    Expired,
    Handoff,
    Superseded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LogKind {
    ContactUp {
        a: NodeId,
        b: NodeId,
    },
    ContactDown {
        a: NodeId,
        b: NodeId,
    },
    Created {
        node: NodeId,
        id: MessageId,
        kind: MessageKind,
        copies: Copies,
    },
    Stored {
        node: NodeId,
        id: MessageId,
        copies: Copies,
    },
    Removed {
        node: NodeId,
        id: MessageId,
        reason: RemoveReason,
    },
    /// Incoming message that never entered the buffer.
    Rejected {
        node: NodeId,
        id: MessageId,
    },
    TransferStarted {
        from: NodeId,
        to: NodeId,
        id: MessageId,
        kind: TransferKind,
    },
    TransferCompleted {
        from: NodeId,
        to: NodeId,
        id: MessageId,
    },
    TransferAborted {
        from: NodeId,
        to: NodeId,
        id: MessageId,
    },
    Delivered {
        node: NodeId,
        id: MessageId,
        latency: f64,
    },
    Consumed {
        node: NodeId,
        id: MessageId,
    },
    Discarded {
        node: NodeId,
        id: MessageId,
    },
    DirectiveApplied {
        node: NodeId,
        rd: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub time: SimTime,
    pub kind: LogKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Event {
    TransferDone { pair: (NodeId, NodeId), token: u64 },
    Contact(usize),
    DataGen(NodeId),
    SensorWindow(NodeId),
    ControllerWindow(NodeId),
}

impl Event {
    fn category(&self) -> u8 {
        match self {
            Event::TransferDone { .. } => 0,
            Event::Contact(_) => 1,
            Event::DataGen(_) => 2,
            Event::SensorWindow(_) => 3,
            Event::ControllerWindow(_) => 4,
        }
    }

    fn tie(&self) -> u64 {
        match *self {
            Event::TransferDone { pair, .. } => ((pair.0 .0 as u64) << 32) | pair.1 .0 as u64,
            Event::Contact(i) => i as u64,
            Event::DataGen(n) | Event::SensorWindow(n) | Event::ControllerWindow(n) => n.0 as u64,
        }
    }
}

#[derive(Debug, PartialEq, Eq, PartialOrd, Ord)]
struct Scheduled {
    time: SimTime,
    category: u8,
    tie: u64,
    seq: u64,
    event_idx: usize,
}

#[derive(Debug, Clone, Copy)]
struct Pending {
    from: NodeId,
    to: NodeId,
    id: MessageId,
}

#[derive(Debug, Clone)]
struct InFlight {
    from: NodeId,
    to: NodeId,
    msg: Message,
    kind: TransferKind,
    token: u64,
}

#[derive(Debug, Clone)]
struct Link {
    /// Directive, metric and data queues.
    queues: [VecDeque<Pending>; 3],
    in_flight: Option<InFlight>,
    /// (message, receiver) pairs already queued during this contact.
    offered: HashSet<(MessageId, NodeId)>,
}

fn class_index(kind: MessageKind) -> usize {
    match kind {
        MessageKind::Directive => 0,
        MessageKind::Metric => 1,
        MessageKind::Data => 2,
    }
}

fn pair_key(a: NodeId, b: NodeId) -> (NodeId, NodeId) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

#[derive(Debug, Default, Clone)]
struct Stats {
    created_data: u64,
    delivered_data: u64,
    latencies: Vec<f64>,
    data_store_attempts: u64,
    dropped_data: u64,
    dropped_control: u64,
    data_bytes: u64,
    control_bytes: u64,
    rd_timeline: Vec<RdPoint>,
}

/// A simulation in progress. Most callers want [`run`].
pub struct Simulation {
    scenario: Scenario,
    now: SimTime,
    end: SimTime,
    nodes: Vec<NodeState>,
    links: BTreeMap<(NodeId, NodeId), Link>,
    queue: BinaryHeap<Reverse<Scheduled>>,
    events: Vec<Event>,
    seq: u64,
    next_token: u64,
    next_id: u64,
    stats: Stats,
    log: Option<Vec<LogRecord>>,
}

impl Simulation {
    pub fn new(scenario: Scenario, record_log: bool) -> Result<Simulation, ScenarioError> {
        scenario.validate()?;
        let p = &scenario.params;
        let controlled = scenario.strategy.uses_control_layer();
        let initial_rd = match scenario.strategy {
            StrategyKind::StaticSpray(l) => l as f64,
            _ => p.control.rd_default,
        };
        let nodes = (0..scenario.node_count)
            .map(|i| {
                let id = NodeId(i);
                let is_ctl = controlled && scenario.controllers.contains(&id);
                NodeState {
                    id,
                    buffer: Buffer::new(p.buffer_bytes),
                    sensor: SensorState::new(p.control.metric_interval),
                    controller: is_ctl.then(|| ControllerState::new(&p.control)),
                    replication: ReplicationState::new(initial_rd),
                    delivered_ids: BTreeSet::new(),
                    drops: 0,
                    links: BTreeSet::new(),
                    rng: ChaCha8Rng::seed_from_u64(node_seed(scenario.seed, id)),
                }
            })
            .collect();
        let mut sim = Simulation {
            now: SimTime::ZERO,
            end: scenario.trace.duration,
            nodes,
            links: BTreeMap::new(),
            queue: BinaryHeap::new(),
            events: Vec::new(),
            seq: 0,
            next_token: 0,
            next_id: 0,
            stats: Stats::default(),
            log: record_log.then(Vec::new),
            scenario,
        };
        sim.schedule_initial();
        Ok(sim)
    }

    fn schedule_initial(&mut self) {
        for i in 0..self.scenario.trace.events.len() {
            let t = self.scenario.trace.events[i].time;
            self.schedule(t, Event::Contact(i));
        }
        let n = self.scenario.node_count;
        if n >= 2 {
            let (lo, hi) = self.scenario.params.data_interval;
            for i in 0..n {
                let gap = self.nodes[i as usize].rng.gen_range(lo..=hi);
                self.schedule_data_gen(SimTime::from_secs(gap), NodeId(i));
            }
        }
        if self.scenario.strategy.uses_control_layer() {
            let c = self.scenario.params.control.clone();
            for i in 0..n {
                self.schedule(
                    SimTime::from_secs(c.metric_interval),
                    Event::SensorWindow(NodeId(i)),
                );
            }
            let ctls: Vec<NodeId> = self.scenario.controllers.iter().copied().collect();
            for id in ctls {
                self.schedule(
                    SimTime::from_secs(c.directive_interval),
                    Event::ControllerWindow(id),
                );
            }
        }
    }

    fn schedule_data_gen(&mut self, time: SimTime, node: NodeId) {
        if self
            .scenario
            .params
            .data_stop
            .is_some_and(|stop| time.as_secs() > stop)
        {
            return;
        }
        self.schedule(time, Event::DataGen(node));
    }

    fn schedule(&mut self, time: SimTime, event: Event) {
        if time > self.end {
            return;
        }
        let event_idx = self.events.len();
        self.events.push(event);
        self.queue.push(Reverse(Scheduled {
            time,
            category: event.category(),
            tie: event.tie(),
            seq: self.seq,
            event_idx,
        }));
        self.seq += 1;
    }

    fn log(&mut self, kind: LogKind) {
        if let Some(log) = self.log.as_mut() {
            log.push(LogRecord {
                time: self.now,
                kind,
            });
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn nodes(&self) -> &[NodeState] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &NodeState {
        &self.nodes[id.index()]
    }

    pub fn log_records(&self) -> &[LogRecord] {
        self.log.as_deref().unwrap_or(&[])
    }

    /// Fresh id from the engine's counter.
    pub fn allocate_message_id(&mut self) -> MessageId {
        let id = MessageId(self.next_id);
        self.next_id += 1;
        id
    }

    /// Places a message in a node's buffer as if it had just arrived there.
    /// Data messages count as created.
    pub fn inject(&mut self, node: NodeId, msg: Message) -> bool {
        if msg.kind() == MessageKind::Data {
            self.stats.created_data += 1;
        }
        self.log(LogKind::Created {
            node,
            id: msg.id,
            kind: msg.kind(),
            copies: msg.copies,
        });
        self.store(node, msg)
    }

    /// Processes the next event. Returns false once nothing is left before
    /// the end of the trace.
    pub fn step(&mut self) -> bool {
        let Some(Reverse(next)) = self.queue.pop() else {
            return false;
        };
        debug_assert!(next.time >= self.now, "clock went backwards");
        self.now = next.time;
        let event = self.events[next.event_idx];
        match event {
            Event::TransferDone { pair, token } => self.on_transfer_done(pair, token),
            Event::Contact(i) => {
                let ev = self.scenario.trace.events[i];
                match ev.direction {
                    Direction::Up => self.on_contact_up(ev.a, ev.b),
                    Direction::Down => self.on_contact_down(ev.a, ev.b),
                }
            }
            Event::DataGen(n) => self.on_data_gen(n),
            Event::SensorWindow(n) => self.on_sensor_window(n),
            Event::ControllerWindow(n) => self.on_controller_window(n),
        }
        true
    }

    pub fn run_to_end(mut self) -> (RunReport, Vec<LogRecord>) {
        while self.step() {}
        self.finish()
    }

    fn finish(self) -> (RunReport, Vec<LogRecord>) {
        let s = self.stats;
        let delivery_ratio = if s.created_data == 0 {
            0.0
        } else {
            s.delivered_data as f64 / s.created_data as f64
        };
        let control_overhead = if s.data_bytes == 0 {
            0.0
        } else {
            s.control_bytes as f64 / s.data_bytes as f64
        };
        let report = RunReport {
            strategy: self.scenario.strategy.label(),
            seed: self.scenario.seed,
            created_data: s.created_data,
            delivered_data: s.delivered_data,
            delivery_ratio,
            latency_summary: quantiles(&s.latencies).ok(),
            latencies_s: s.latencies,
            data_store_attempts: s.data_store_attempts,
            dropped_data: s.dropped_data,
            dropped_control: s.dropped_control,
            data_bytes_transferred: s.data_bytes,
            control_bytes_transferred: s.control_bytes,
            control_overhead,
            rd_timeline: s.rd_timeline,
            scenario_digest: self.scenario.digest(),
            family_digest: self.scenario.family_digest(),
        };
        (report, self.log.unwrap_or_default())
    }

    // ---- contacts -------------------------------------------------------

    fn on_contact_up(&mut self, a: NodeId, b: NodeId) {
        let key = pair_key(a, b);
        self.log(LogKind::ContactUp { a: key.0, b: key.1 });
        self.purge_expired(a);
        self.purge_expired(b);

        let mut queues: [VecDeque<Pending>; 3] = Default::default();
        let mut offered = HashSet::new();
        {
            let na = &self.nodes[a.index()];
            let nb = &self.nodes[b.index()];
            let sa = na.summary();
            let sb = nb.summary();
            let to_b = routing::on_contact(
                na.buffer.iter(),
                &PeerInfo {
                    id: b,
                    is_controller: nb.is_controller(),
                    summary: &sb,
                },
            );
            let to_a = routing::on_contact(
                nb.buffer.iter(),
                &PeerInfo {
                    id: a,
                    is_controller: na.is_controller(),
                    summary: &sa,
                },
            );
            let classify = |node: &NodeState, id| {
                class_index(node.buffer.get(id).expect("offered from buffer").kind())
            };
            let mut per_class: [[Vec<Pending>; 2]; 3] = Default::default();
            for o in to_b {
                per_class[classify(na, o.id)][0].push(Pending {
                    from: a,
                    to: b,
                    id: o.id,
                });
            }
            for o in to_a {
                per_class[classify(nb, o.id)][1].push(Pending {
                    from: b,
                    to: a,
                    id: o.id,
                });
            }
            for (class, [xs, ys]) in per_class.into_iter().enumerate() {
                let mut xs = xs.into_iter();
                let mut ys = ys.into_iter();
                loop {
                    let x = xs.next();
                    let y = ys.next();
                    if x.is_none() && y.is_none() {
                        break;
                    }
                    for p in x.into_iter().chain(y) {
                        offered.insert((p.id, p.to));
                        queues[class].push_back(p);
                    }
                }
            }
        }
        self.links.insert(
            key,
            Link {
                queues,
                in_flight: None,
                offered,
            },
        );
        self.nodes[a.index()].links.insert(key);
        self.nodes[b.index()].links.insert(key);
        self.kick(key);
    }

    fn on_contact_down(&mut self, a: NodeId, b: NodeId) {
        let key = pair_key(a, b);
        self.log(LogKind::ContactDown { a: key.0, b: key.1 });
        self.nodes[a.index()].links.remove(&key);
        self.nodes[b.index()].links.remove(&key);
        let Some(link) = self.links.remove(&key) else {
            return;
        };
        if let Some(f) = link.in_flight {
            if let TransferKind::Copy(Copies::Finite(given)) = f.kind {
                if let Some(m) = self.nodes[f.from.index()].buffer.get_mut(f.msg.id) {
                    if let Copies::Finite(kept) = m.copies {
                        m.copies = Copies::Finite(kept + given);
                    }
                }
            }
            self.log(LogKind::TransferAborted {
                from: f.from,
                to: f.to,
                id: f.msg.id,
            });
        }
    }

    /// Starts the next valid queued transfer if the link is idle.
    fn kick(&mut self, key: (NodeId, NodeId)) {
        loop {
            let Some(link) = self.links.get_mut(&key) else {
                return;
            };
            if link.in_flight.is_some() {
                return;
            }
            let Some(p) = link.queues.iter_mut().find_map(|q| q.pop_front()) else {
                return;
            };
            if self.start_transfer(key, p) {
                return;
            }
        }
    }

    fn start_transfer(&mut self, key: (NodeId, NodeId), p: Pending) -> bool {
        let now = self.now;
        let Some(msg) = self.nodes[p.from.index()].buffer.get(p.id) else {
            return false;
        };
        if msg.is_expired(now) {
            self.nodes[p.from.index()].buffer.remove(p.id);
            self.log(LogKind::Removed {
                node: p.from,
                id: p.id,
                reason: RemoveReason::Expired,
            });
            return false;
        }
        let Some(kind) = plan_transfer(msg, &self.nodes[p.to.index()]) else {
            return false;
        };
        let mut carried = msg.clone();
        if let TransferKind::Copy(budget) = kind {
            carried.copies = budget;
            if let (Copies::Finite(given), Some(m)) =
                (budget, self.nodes[p.from.index()].buffer.get_mut(p.id))
            {
                if let Copies::Finite(n) = m.copies {
                    m.copies = Copies::Finite(n - given);
                }
            }
        }
        let completes_at = now.after(carried.size as f64 / self.scenario.params.bandwidth);
        let token = self.next_token;
        self.next_token += 1;
        self.log(LogKind::TransferStarted {
            from: p.from,
            to: p.to,
            id: p.id,
            kind,
        });
        let link = self.links.get_mut(&key).expect("link is up");
        link.in_flight = Some(InFlight {
            from: p.from,
            to: p.to,
            msg: carried,
            kind,
            token,
        });
        // completions past the end of the trace never happen
        self.schedule(completes_at, Event::TransferDone { pair: key, token });
        true
    }

    fn on_transfer_done(&mut self, key: (NodeId, NodeId), token: u64) {
        let Some(link) = self.links.get_mut(&key) else {
            return;
        };
        match &link.in_flight {
            Some(f) if f.token == token => {}
            _ => return,
        }
        let f = link.in_flight.take().expect("checked above");
        self.log(LogKind::TransferCompleted {
            from: f.from,
            to: f.to,
            id: f.msg.id,
        });
        match f.msg.kind() {
            MessageKind::Data => self.stats.data_bytes += f.msg.size,
            _ => self.stats.control_bytes += f.msg.size,
        }
        if f.kind == TransferKind::Handoff
            && self.nodes[f.from.index()].buffer.remove(f.msg.id).is_some()
        {
            self.log(LogKind::Removed {
                node: f.from,
                id: f.msg.id,
                reason: RemoveReason::Handoff,
            });
        }
        self.receive(f.to, f.msg);
        self.kick(key);
    }

    fn receive(&mut self, node: NodeId, msg: Message) {
        let now = self.now;
        let view = self.nodes[node.index()].receiver_view(msg.id);
        match on_receive(&view, &msg) {
            ReceiveAction::Deliver => {
                let latency = now.as_secs() - msg.created_at.as_secs();
                self.nodes[node.index()].delivered_ids.insert(msg.id);
                self.stats.delivered_data += 1;
                self.stats.latencies.push(latency);
                self.log(LogKind::Delivered {
                    node,
                    id: msg.id,
                    latency,
                });
            }
            ReceiveAction::Store => {
                self.store(node, msg);
            }
            ReceiveAction::ConsumeControl => {
                let n = &mut self.nodes[node.index()];
                n.delivered_ids.insert(msg.id);
                if let (Body::Metric(p), Some(ctl)) = (msg.body, n.controller.as_mut()) {
                    ctl.on_metric(p.drop_count as f64);
                }
                self.log(LogKind::Consumed { node, id: msg.id });
            }
            ReceiveAction::ApplyAndStore => {
                let Body::Directive(d) = msg.body else {
                    unreachable!("only directives are applied")
                };
                let n = &mut self.nodes[node.index()];
                if let Some(ctl) = n.controller.as_mut() {
                    if d.controller != node {
                        ctl.on_peer_directive(d.new_rd);
                    }
                }
                self.apply_directive(node, &d);
                // older directives are no longer worth carrying
                let stamp = d.stamp();
                let superseded = self.nodes[node.index()].buffer.remove_where(
                    |m| matches!(m.body, Body::Directive(old) if old.stamp() < stamp),
                );
                for m in superseded {
                    self.log(LogKind::Removed {
                        node,
                        id: m.id,
                        reason: RemoveReason::Superseded,
                    });
                }
                self.store(node, msg);
            }
            ReceiveAction::Discard => {
                self.log(LogKind::Discarded { node, id: msg.id });
            }
        }
    }

    fn apply_directive(&mut self, node: NodeId, d: &crate::model::DirectivePayload) {
        if self.nodes[node.index()].replication.apply_directive(d) == DirectiveOutcome::Applied {
            self.stats.rd_timeline.push(RdPoint {
                time: self.now,
                node,
                rd: d.new_rd,
            });
            self.log(LogKind::DirectiveApplied { node, rd: d.new_rd });
        }
    }

    /// Inserts into a node's buffer, accounting drops, then offers the
    /// message on the node's idle links.
    fn store(&mut self, node: NodeId, msg: Message) -> bool {
        let policy = self.scenario.params.drop_policy;
        let count_control = self.scenario.params.control.count_control_drops;
        let (id, copies, kind) = (msg.id, msg.copies, msg.kind());
        if kind == MessageKind::Data {
            self.stats.data_store_attempts += 1;
        }
        {
            let buf = &self.nodes[node.index()].buffer;
            if buf.occupancy() + msg.size > buf.capacity() {
                self.purge_expired(node);
            }
        }
        let outcome = match self.nodes[node.index()].buffer.insert(msg, policy) {
            Ok(o) => o,
            Err(dup) => {
                self.log(LogKind::Discarded { node, id: dup.0.id });
                return false;
            }
        };
        for dropped in &outcome.dropped {
            let n = &mut self.nodes[node.index()];
            n.drops += 1;
            let is_data = dropped.kind() == MessageKind::Data;
            if is_data {
                self.stats.dropped_data += 1;
            } else {
                self.stats.dropped_control += 1;
            }
            if is_data || count_control {
                n.sensor.record_drop();
            }
            let entry = if dropped.id == id && !outcome.accepted {
                LogKind::Rejected { node, id }
            } else {
                LogKind::Removed {
                    node,
                    id: dropped.id,
                    reason: RemoveReason::Dropped,
                }
            };
            self.log(entry);
        }
        if !outcome.accepted {
            return false;
        }
        self.log(LogKind::Stored { node, id, copies });
        self.offer_everywhere(node, id);
        true
    }

    fn offer_everywhere(&mut self, node: NodeId, id: MessageId) {
        let keys: Vec<(NodeId, NodeId)> = self.nodes[node.index()].links.iter().copied().collect();
        for key in keys {
            let peer = if key.0 == node { key.1 } else { key.0 };
            let Some(msg) = self.nodes[node.index()].buffer.get(id) else {
                return;
            };
            if plan_transfer(msg, &self.nodes[peer.index()]).is_none() {
                continue;
            }
            let class = class_index(msg.kind());
            let link = self
                .links
                .get_mut(&key)
                .expect("node links mirror the link table");
            if link.offered.insert((id, peer)) {
                link.queues[class].push_back(Pending {
                    from: node,
                    to: peer,
                    id,
                });
                self.kick(key);
            }
        }
    }

    fn purge_expired(&mut self, node: NodeId) {
        let now = self.now;
        let expired = self.nodes[node.index()]
            .buffer
            .remove_where(|m| m.is_expired(now));
        for m in expired {
            self.log(LogKind::Removed {
                node,
                id: m.id,
                reason: RemoveReason::Expired,
            });
        }
    }

    // ---- timers ---------------------------------------------------------

    fn on_data_gen(&mut self, node: NodeId) {
        let n = self.scenario.node_count;
        let (slo, shi) = self.scenario.params.data_size;
        let (ilo, ihi) = self.scenario.params.data_interval;
        let (size, dst, gap) = {
            let rng = &mut self.nodes[node.index()].rng;
            let size = rng.gen_range(slo..=shi);
            let mut dst = rng.gen_range(0..n - 1);
            if dst >= node.0 {
                dst += 1;
            }
            (size, NodeId(dst), rng.gen_range(ilo..=ihi))
        };
        let copies = self
            .scenario
            .strategy
            .initial_copies(self.nodes[node.index()].current_rd());
        let id = self.allocate_message_id();
        let msg = Message::data(id, node, dst, size, self.now, copies)
            .with_ttl(self.scenario.params.data_ttl);
        self.inject(node, msg);
        let next = self.now.after(gap);
        self.schedule_data_gen(next, node);
    }

    fn on_sensor_window(&mut self, node: NodeId) {
        let c = &self.scenario.params.control;
        let (size, injected, interval) = (c.metric_size, c.injected_drops, c.metric_interval);
        let id = self.allocate_message_id();
        let now = self.now;
        let n = &mut self.nodes[node.index()];
        n.sensor.drop_count += injected;
        let rd = n.replication.current_rd;
        let msg = n.sensor.close_window(node, now, rd, size, id);
        if let (Some(ctl), Body::Metric(p)) = (n.controller.as_mut(), msg.body) {
            // a controller senses for itself
            ctl.on_metric(p.drop_count as f64);
            n.delivered_ids.insert(msg.id);
        } else {
            self.inject(node, msg);
        }
        self.schedule(now.after(interval), Event::SensorWindow(node));
    }

    fn on_controller_window(&mut self, node: NodeId) {
        let c = &self.scenario.params.control;
        let (size, interval) = (c.directive_size, c.directive_interval);
        let id = self.allocate_message_id();
        let now = self.now;
        let msg = self.nodes[node.index()]
            .controller
            .as_mut()
            .expect("controller windows only run on controllers")
            .close_window(node, now, size, id);
        let Body::Directive(d) = msg.body else {
            unreachable!("controllers emit directives")
        };
        self.apply_directive(node, &d);
        let stamp = d.stamp();
        let superseded = self.nodes[node.index()]
            .buffer
            .remove_where(|m| matches!(m.body, Body::Directive(old) if old.stamp() < stamp));
        for m in superseded {
            self.log(LogKind::Removed {
                node,
                id: m.id,
                reason: RemoveReason::Superseded,
            });
        }
        self.inject(node, msg);
        self.schedule(now.after(interval), Event::ControllerWindow(node));
    }
}

/// Runs a scenario to the end of its trace.
pub fn run(scenario: &Scenario) -> Result<RunReport, ScenarioError> {
    Ok(Simulation::new(scenario.clone(), false)?.run_to_end().0)
}

/// Like [`run`], also returning the full event log.
pub fn run_with_log(scenario: &Scenario) -> Result<(RunReport, Vec<LogRecord>), ScenarioError> {
    Ok(Simulation::new(scenario.clone(), true)?.run_to_end())
}
