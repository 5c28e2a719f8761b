//! Store-carry-forward strategies.
//!
//! * Epidemic copies every message the peer does not already know about.
//! * StaticSpray and Controlled both use binary spray-and-wait: a copy with
//!   budget `n > 1` hands `floor(n/2)` to the peer and keeps `ceil(n/2)`;
//!   a copy with budget 1 only moves when the peer is a destination. They
//!   differ only in the budget given to new messages (fixed limit vs. the
//!   node's current replication degree).
//!
//! Metric and Directive messages follow the same budget rule. A metric's
//! destination is any controller; a directive's destination is every node,
//! so a single-copy directive keeps moving as a handoff and is applied by
//! each node it visits.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::model::{
    Body, Copies, Destination, DirectiveStamp, Message, MessageId, MessageKind, NodeId,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StrategyKind {
    Epidemic,
    StaticSpray(u32),
    Controlled,
}

impl StrategyKind {
    pub fn label(&self) -> String {
        match self {
            StrategyKind::Epidemic => "epidemic".into(),
            StrategyKind::StaticSpray(l) => format!("static_spray({l})"),
            StrategyKind::Controlled => "controlled".into(),
        }
    }

    /// Budget for a message created now by a node whose RD is `current_rd`.
    pub fn initial_copies(&self, current_rd: f64) -> Copies {
        match *self {
            StrategyKind::Epidemic => Copies::Unlimited,
            StrategyKind::StaticSpray(limit) => Copies::finite(limit.max(1)),
            StrategyKind::Controlled => Copies::from_rd(current_rd),
        }
    }

    pub fn uses_control_layer(&self) -> bool {
        matches!(self, StrategyKind::Controlled)
    }
}

/// What a node advertises at contact start.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SummaryVector {
    /// Ids currently buffered.
    pub buffered: BTreeSet<MessageId>,
    /// Data delivered to, or metrics consumed by, this node.
    pub delivered: BTreeSet<MessageId>,
    /// Freshest directive the node has applied.
    pub latest_directive: Option<DirectiveStamp>,
}

impl SummaryVector {
    pub fn knows(&self, id: MessageId) -> bool {
        self.buffered.contains(&id) || self.delivered.contains(&id)
    }
}

/// What a sender may know about the receiving side of a transfer.
pub trait PeerView {
    fn id(&self) -> NodeId;
    fn is_controller(&self) -> bool;
    /// Whether the peer holds, or has already consumed, this message.
    fn knows(&self, id: MessageId) -> bool;
    fn latest_directive(&self) -> Option<DirectiveStamp>;

    fn is_destination_of(&self, msg: &Message) -> bool {
        match msg.destination {
            Destination::Unicast(n) => n == self.id(),
            Destination::ControllerGroup => self.is_controller(),
            Destination::Broadcast => true,
        }
    }
}

/// A peer as seen through the summary vector it sent at contact start.
#[derive(Debug, Clone, Copy)]
pub struct PeerInfo<'a> {
    pub id: NodeId,
    pub is_controller: bool,
    pub summary: &'a SummaryVector,
}

impl PeerView for PeerInfo<'_> {
    fn id(&self) -> NodeId {
        self.id
    }

    fn is_controller(&self) -> bool {
        self.is_controller
    }

    fn knows(&self, id: MessageId) -> bool {
        self.summary.knows(id)
    }

    fn latest_directive(&self) -> Option<DirectiveStamp> {
        self.summary.latest_directive
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TransferKind {
    /// The peer gets a copy with this budget; the sender keeps the rest.
    Copy(Copies),
    /// The sender's copy moves to the peer.
    Handoff,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Offer {
    pub id: MessageId,
    pub kind: TransferKind,
}

/// `(given, kept)` for a finite budget above one.
pub fn split_budget(n: u32) -> (u32, u32) {
    (n / 2, n - n / 2)
}

/// Decides whether and how `msg` should go to `peer`.
pub fn plan_transfer(msg: &Message, peer: &impl PeerView) -> Option<TransferKind> {
    if peer.knows(msg.id) {
        return None;
    }
    if let Body::Directive(d) = msg.body {
        if peer.latest_directive().is_some_and(|s| s >= d.stamp()) {
            return None;
        }
    }
    match msg.copies {
        Copies::Unlimited => Some(TransferKind::Copy(Copies::Unlimited)),
        Copies::Finite(n) if n > 1 => Some(TransferKind::Copy(Copies::Finite(split_budget(n).0))),
        Copies::Finite(_) => peer.is_destination_of(msg).then_some(TransferKind::Handoff),
    }
}

fn class_rank(kind: MessageKind) -> u8 {
    match kind {
        MessageKind::Directive => 0,
        MessageKind::Metric => 1,
        MessageKind::Data => 2,
    }
}

/// Ordered send list toward `peer`: directives, then metrics, then data;
/// oldest-created first within a class.
pub fn on_contact<'m>(
    buffered: impl IntoIterator<Item = &'m Message>,
    peer: &impl PeerView,
) -> Vec<Offer> {
    let mut offers: Vec<(u8, &Message, TransferKind)> = buffered
        .into_iter()
        .filter_map(|m| plan_transfer(m, peer).map(|k| (class_rank(m.kind()), m, k)))
        .collect();
    offers.sort_by(|x, y| {
        x.0.cmp(&y.0)
            .then(x.1.created_at.cmp(&y.1.created_at))
            .then(x.1.id.cmp(&y.1.id))
    });
    offers
        .into_iter()
        .map(|(_, m, kind)| Offer { id: m.id, kind })
        .collect()
}

/// What the receiver needs to know about itself to classify an arrival.
#[derive(Debug, Clone, Copy)]
pub struct ReceiverView {
    pub id: NodeId,
    pub is_controller: bool,
    pub has_buffered: bool,
    pub has_delivered: bool,
    pub latest_directive: Option<DirectiveStamp>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReceiveAction {
    /// Data reached its destination.
    Deliver,
    /// Keep carrying it.
    Store,
    /// A metric reached a controller.
    ConsumeControl,
    /// Fresh directive: apply the RD, then keep spreading it.
    ApplyAndStore,
    Discard,
}

pub fn on_receive(me: &ReceiverView, msg: &Message) -> ReceiveAction {
    if me.has_buffered || me.has_delivered {
        return ReceiveAction::Discard;
    }
    match msg.body {
        Body::Data => match msg.destination {
            Destination::Unicast(dst) if dst == me.id => ReceiveAction::Deliver,
            _ => ReceiveAction::Store,
        },
        Body::Metric(_) => {
            if me.is_controller {
                ReceiveAction::ConsumeControl
            } else {
                ReceiveAction::Store
            }
        }
        Body::Directive(d) => {
            if me.latest_directive.is_some_and(|s| s >= d.stamp()) {
                ReceiveAction::Discard
            } else {
                ReceiveAction::ApplyAndStore
            }
        }
    }
}
