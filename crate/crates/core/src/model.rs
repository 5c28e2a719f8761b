//! Domain types shared by every part of the simulator: clock, identities,
//! messages, contact events and the per-node store-carry-forward buffer.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

/// Seconds since simulation start. Always finite and non-negative.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimTime(f64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0.0);

    /// Panics if `secs` is negative or not finite.
    pub fn from_secs(secs: f64) -> SimTime {
        Self::try_from_secs(secs).unwrap_or_else(|| panic!("invalid simulation time {secs}"))
    }

    pub fn try_from_secs(secs: f64) -> Option<SimTime> {
        if secs.is_finite() && secs >= 0.0 {
            // normalise -0.0
            Some(SimTime(secs + 0.0))
        } else {
            None
        }
    }

    pub fn as_secs(self) -> f64 {
        self.0
    }

    pub fn after(self, secs: f64) -> SimTime {
        SimTime::from_secs(self.0 + secs)
    }
}

impl Eq for SimTime {}

impl PartialOrd for SimTime {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for SimTime {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MessageId(pub u64);

impl fmt::Display for MessageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "M{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MessageKind {
    Data,
    Metric,
    Directive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Destination {
    Unicast(NodeId),
    ControllerGroup,
    Broadcast,
}

/// Replication budget carried by one copy of a message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Copies {
    /// Epidemic forwarding: no limit.
    Unlimited,
    /// Remaining spray budget, always at least 1 on a live copy.
    Finite(u32),
}

impl Copies {
    pub fn finite(n: u32) -> Copies {
        assert!(n >= 1, "a live copy needs a budget of at least 1");
        Copies::Finite(n)
    }

    /// Budget for a new message from a real-valued replication degree:
    /// round half to even, then clamp to at least one copy.
    pub fn from_rd(rd: f64) -> Copies {
        let n = rd.round_ties_even().max(1.0);
        Copies::Finite(n.min(u32::MAX as f64) as u32)
    }
}

/// Drop count reported by a node for one sensing window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricPayload {
    pub drop_count: u64,
    pub window_end: SimTime,
    pub sensor: NodeId,
}

/// Replication degree announced by a controller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectivePayload {
    pub new_rd: f64,
    pub issued_at: SimTime,
    pub controller: NodeId,
}

impl DirectivePayload {
    pub fn stamp(&self) -> DirectiveStamp {
        DirectiveStamp {
            issued_at: self.issued_at,
            controller: self.controller,
        }
    }
}

/// Freshness key of a directive: newer `issued_at` wins, ties go to the
/// higher controller id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DirectiveStamp {
    pub issued_at: SimTime,
    pub controller: NodeId,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Body {
    Data,
    Metric(MetricPayload),
    Directive(DirectivePayload),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub id: MessageId,
    pub source: NodeId,
    pub destination: Destination,
    pub size: u64,
    pub created_at: SimTime,
    /// Lifetime in seconds; `None` never expires.
    pub ttl: Option<f64>,
    pub copies: Copies,
    pub body: Body,
}

impl Message {
    pub fn data(
        id: MessageId,
        source: NodeId,
        destination: NodeId,
        size: u64,
        created_at: SimTime,
        copies: Copies,
    ) -> Message {
        assert!(size > 0, "message size must be positive");
        Message {
            id,
            source,
            destination: Destination::Unicast(destination),
            size,
            created_at,
            ttl: None,
            copies,
            body: Body::Data,
        }
    }

    pub fn metric(
        id: MessageId,
        payload: MetricPayload,
        size: u64,
        created_at: SimTime,
        copies: Copies,
    ) -> Message {
        assert!(size > 0, "message size must be positive");
        Message {
            id,
            source: payload.sensor,
            destination: Destination::ControllerGroup,
            size,
            created_at,
            ttl: None,
            copies,
            body: Body::Metric(payload),
        }
    }

    pub fn directive(
        id: MessageId,
        payload: DirectivePayload,
        size: u64,
        created_at: SimTime,
        copies: Copies,
    ) -> Message {
        assert!(size > 0, "message size must be positive");
        assert!(
            payload.new_rd >= 1.0,
            "directive replication degree below 1"
        );
        Message {
            id,
            source: payload.controller,
            destination: Destination::Broadcast,
            size,
            created_at,
            ttl: None,
            copies,
            body: Body::Directive(payload),
        }
    }

    pub fn with_ttl(mut self, ttl: Option<f64>) -> Message {
        self.ttl = ttl;
        self
    }

    pub fn kind(&self) -> MessageKind {
        match self.body {
            Body::Data => MessageKind::Data,
            Body::Metric(_) => MessageKind::Metric,
            Body::Directive(_) => MessageKind::Directive,
        }
    }

    pub fn is_expired(&self, now: SimTime) -> bool {
        match self.ttl {
            Some(ttl) => now.as_secs() >= self.created_at.as_secs() + ttl,
            None => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    Up,
    Down,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContactEvent {
    pub time: SimTime,
    pub a: NodeId,
    pub b: NodeId,
    pub direction: Direction,
}

impl ContactEvent {
    /// Unordered pair key, smaller id first.
    pub fn pair(&self) -> (NodeId, NodeId) {
        if self.a <= self.b {
            (self.a, self.b)
        } else {
            (self.b, self.a)
        }
    }
}

/// What a full buffer gives up to make room.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash, Serialize, Deserialize)]
pub enum DropPolicy {
    /// Evict stored messages in arrival order until the incoming one fits.
    #[default]
    DropOldest,
    /// Keep what is stored; reject the incoming message if it does not fit.
    DropIncoming,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InsertOutcome {
    pub accepted: bool,
    /// Evicted messages in eviction order, or the rejected incoming one.
    pub dropped: Vec<Message>,
}

/// Returned when the buffer already holds a message with the same id.
/// Not a drop.
#[derive(Debug, Clone, PartialEq)]
pub struct DuplicateMessage(pub Message);

/// Bounded message store. Arrival order is tracked with a monotone sequence
/// number so eviction and iteration are deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct Buffer {
    capacity: u64,
    occupancy: u64,
    next_seq: u64,
    stored: BTreeMap<u64, Message>,
    index: HashMap<MessageId, u64>,
}

impl Buffer {
    pub fn new(capacity: u64) -> Buffer {
        Buffer {
            capacity,
            occupancy: 0,
            next_seq: 0,
            stored: BTreeMap::new(),
            index: HashMap::new(),
        }
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    pub fn occupancy(&self) -> u64 {
        self.occupancy
    }

    pub fn len(&self) -> usize {
        self.stored.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stored.is_empty()
    }

    pub fn contains(&self, id: MessageId) -> bool {
        self.index.contains_key(&id)
    }

    pub fn get(&self, id: MessageId) -> Option<&Message> {
        self.index.get(&id).and_then(|seq| self.stored.get(seq))
    }

    pub fn get_mut(&mut self, id: MessageId) -> Option<&mut Message> {
        let seq = *self.index.get(&id)?;
        self.stored.get_mut(&seq)
    }

    /// Stored messages, oldest arrival first.
    pub fn iter(&self) -> impl Iterator<Item = &Message> {
        self.stored.values()
    }

    pub fn ids(&self) -> impl Iterator<Item = MessageId> + '_ {
        self.stored.values().map(|m| m.id)
    }

    pub fn insert(
        &mut self,
        msg: Message,
        policy: DropPolicy,
    ) -> Result<InsertOutcome, DuplicateMessage> {
        if self.contains(msg.id) {
            return Err(DuplicateMessage(msg));
        }
        if msg.size > self.capacity {
            return Ok(InsertOutcome {
                accepted: false,
                dropped: vec![msg],
            });
        }
        let mut dropped = Vec::new();
        match policy {
            DropPolicy::DropOldest => {
                while self.occupancy + msg.size > self.capacity {
                    let (_, oldest) = self
                        .stored
                        .pop_first()
                        .expect("occupancy above zero implies a stored message");
                    self.index.remove(&oldest.id);
                    self.occupancy -= oldest.size;
                    dropped.push(oldest);
                }
            }
            DropPolicy::DropIncoming => {
                if self.occupancy + msg.size > self.capacity {
                    return Ok(InsertOutcome {
                        accepted: false,
                        dropped: vec![msg],
                    });
                }
            }
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.occupancy += msg.size;
        self.index.insert(msg.id, seq);
        self.stored.insert(seq, msg);
        Ok(InsertOutcome {
            accepted: true,
            dropped,
        })
    }

    pub fn remove(&mut self, id: MessageId) -> Option<Message> {
        let seq = self.index.remove(&id)?;
        let msg = self.stored.remove(&seq).expect("index and store agree");
        self.occupancy -= msg.size;
        Some(msg)
    }

    /// Removes every message matching `pred`, returning them in arrival order.
    pub fn remove_where(&mut self, mut pred: impl FnMut(&Message) -> bool) -> Vec<Message> {
        let doomed: Vec<MessageId> = self
            .stored
            .values()
            .filter(|m| pred(m))
            .map(|m| m.id)
            .collect();
        doomed
            .into_iter()
            .filter_map(|id| self.remove(id))
            .collect()
    }
}
