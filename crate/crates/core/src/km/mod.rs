//! Key-management layer: the KMS in every node.
//!
//! Key transports follow the forwarding scheme: the source draws an RNG key
//! bundle and relays it hop by hop, every hop encrypting the bundle with one
//! QKD key of that hop's link. A transport waits at a hop until a key of the
//! sender's encryption parity is available (FIFO per outgoing link). The
//! destination acknowledges along the reverse path and the bundle becomes
//! usable at the source once the ack arrives. In the CM-via-KMS architecture
//! control traffic is relayed through the same machinery.

mod store;

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::kernel::SimTime;
use crate::quantum::{Parity, QkdModule};
use crate::topology::{LinkId, NodeId};

pub use self::store::KeyStore;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KmParams {
    pub storage_keys: u64,
    pub encryption_latency_ms: f64,
    /// `inf` disables periodic status reports.
    pub link_status_period_s: f64,
    /// Keys on some incident link before the setup message is sent.
    pub setup_threshold: u64,
    /// One QKD key per hop for a whole bundle; otherwise one per carried key.
    pub bundled: bool,
    pub ack_consumes_key: bool,
}

impl Default for KmParams {
    fn default() -> Self {
        KmParams {
            storage_keys: 100_000,
            encryption_latency_ms: 0.018,
            link_status_period_s: 60.0,
            setup_threshold: 1,
            bundled: true,
            ack_consumes_key: false,
        }
    }
}

impl KmParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.storage_keys == 0 {
            return Err("kms.storage_keys must be positive".into());
        }
        if !(self.encryption_latency_ms >= 0.0) || !self.encryption_latency_ms.is_finite() {
            return Err("kms.encryption_latency_ms must be non-negative".into());
        }
        if !(self.link_status_period_s > 0.0) {
            return Err("kms.link_status_period_s must be positive (inf disables)".into());
        }
        Ok(())
    }

    pub fn status_period(&self) -> Option<SimTime> {
        self.link_status_period_s
            .is_finite()
            .then(|| SimTime::from_secs_f64(self.link_status_period_s))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TransportId(pub u64);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KmMessageKind {
    KeyTransport,
    TransportAck,
    Setup,
    LinkStatus,
    CmPayload,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CmKind {
    Setup,
    /// Initial routing/translation table distribution.
    Init,
    LinkStatus { levels: Vec<(LinkId, u64)> },
    VectorRequest { transport: TransportId, dst: NodeId },
    VectorReply { transport: TransportId, path: Option<Vec<NodeId>> },
    TablePush,
}

impl CmKind {
    pub fn name(&self) -> &'static str {
        match self {
            CmKind::Setup => "setup",
            CmKind::Init => "init",
            CmKind::LinkStatus { .. } => "link_status",
            CmKind::VectorRequest { .. } => "vector_request",
            CmKind::VectorReply { .. } => "vector_reply",
            CmKind::TablePush => "table_push",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Body {
    KeyTransport { transport: TransportId, bundle: u32 },
    TransportAck { transport: TransportId },
    Cm { kind: CmKind, log: usize },
}

/// How the next hop is chosen.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Route {
    /// Full path from the origin, `pos` indexes the current node.
    Source { path: Vec<NodeId>, pos: usize },
    /// Next hop from the node's installed routing table.
    Table,
    /// Control traffic toward or from the controller over provisioned routes.
    Control,
}

/// The keys used on the current hop.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HopKey {
    pub link: LinkId,
    pub ids: Vec<u64>,
    /// False when the key was already used by an earlier packet (packet-to-key ratio > 1).
    pub fresh: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KmMessage {
    pub id: u64,
    pub origin: NodeId,
    pub destination: NodeId,
    pub body: Body,
    pub route: Route,
    pub created_at: SimTime,
    pub hops: u32,
    pub hop_key: Option<HopKey>,
}

impl KmMessage {
    pub fn kind(&self) -> KmMessageKind {
        match &self.body {
            Body::KeyTransport { .. } => KmMessageKind::KeyTransport,
            Body::TransportAck { .. } => KmMessageKind::TransportAck,
            Body::Cm { kind: CmKind::Setup, .. } => KmMessageKind::Setup,
            Body::Cm {
                kind: CmKind::LinkStatus { .. },
                ..
            } => KmMessageKind::LinkStatus,
            Body::Cm { .. } => KmMessageKind::CmPayload,
        }
    }

    pub fn is_cm(&self) -> bool {
        matches!(self.body, Body::Cm { .. })
    }
}

/// Where a processed message goes next.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Hop {
    Km(LinkId, NodeId),
    /// The gateway's dedicated link to the controller.
    Controller(NodeId),
}

#[derive(Debug)]
pub(crate) struct Job {
    pub msg: Box<KmMessage>,
    pub hop: Hop,
}

/// One QKD link with both endpoints' key stores and per-direction send queues.
/// Index 0 is the lower node id, index 1 the higher.
#[derive(Debug)]
pub struct KmLink {
    pub id: LinkId,
    pub ends: [NodeId; 2],
    pub qkd: QkdModule,
    pub stores: [KeyStore; 2],
    pub(crate) waiting: [VecDeque<Box<KmMessage>>; 2],
    pub(crate) cm_sent: [u64; 2],
    pub relayed_keys: u64,
    pub relayed_bundles: u64,
    pub cm_keys: u64,
    pub ack_keys: u64,
    pub transport_keys: u64,
}

impl KmLink {
    pub fn new(id: LinkId, a: NodeId, b: NodeId, qkd: QkdModule, capacity: u64, key_size: u32) -> Self {
        let ends = if a <= b { [a, b] } else { [b, a] };
        KmLink {
            id,
            ends,
            qkd,
            stores: [KeyStore::new(id, capacity, key_size), KeyStore::new(id, capacity, key_size)],
            waiting: [VecDeque::new(), VecDeque::new()],
            cm_sent: [0, 0],
            relayed_keys: 0,
            relayed_bundles: 0,
            cm_keys: 0,
            ack_keys: 0,
            transport_keys: 0,
        }
    }

    pub fn side(&self, n: NodeId) -> usize {
        if n == self.ends[0] {
            0
        } else {
            debug_assert_eq!(n, self.ends[1]);
            1
        }
    }

    pub fn peer(&self, n: NodeId) -> NodeId {
        self.ends[1 - self.side(n)]
    }

    /// Lower id encrypts with even keys.
    pub fn encrypt_parity(&self, side: usize) -> Parity {
        if side == 0 {
            Parity::Even
        } else {
            Parity::Odd
        }
    }

    pub fn queued(&self, side: usize) -> usize {
        self.waiting[side].len()
    }
}

/// Per-node counters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct KmsStats {
    pub transports_started: u64,
    pub transports_completed: u64,
    pub transports_failed: u64,
    pub messages_forwarded: u64,
    pub status_emitted: u64,
    pub pushes_received: u64,
    pub vectors_requested: u64,
    /// Integral of the held-message count over time, in message-nanoseconds.
    pub queue_integral: u128,
    pub cm_queue_integral: u128,
}

#[derive(Debug)]
pub struct Kms {
    pub node: NodeId,
    pub incident: Vec<LinkId>,
    pub table: Option<std::collections::BTreeMap<NodeId, NodeId>>,
    pub(crate) server: VecDeque<Job>,
    pub(crate) busy: bool,
    /// Messages currently held by this KMS (waiting for a key, a route, or processing).
    pub held: u64,
    pub held_cm: u64,
    held_since: SimTime,
    pub setup_sent_at: Option<SimTime>,
    pub configured_at: Option<SimTime>,
    pub stats: KmsStats,
}

impl Kms {
    pub fn new(node: NodeId, incident: Vec<LinkId>) -> Self {
        Kms {
            node,
            incident,
            table: None,
            server: VecDeque::new(),
            busy: false,
            held: 0,
            held_cm: 0,
            held_since: SimTime::ZERO,
            setup_sent_at: None,
            configured_at: None,
            stats: KmsStats::default(),
        }
    }

    /// Changes the held count, integrating the previous level up to `now`.
    /// Time before `from` (the end of setup) is not counted.
    pub fn adjust_held(&mut self, now: SimTime, from: Option<SimTime>, delta: i64, cm: bool) {
        if let Some(from) = from {
            let since = self.held_since.max(from);
            if now > since {
                let dt = u128::from((now - since).as_nanos());
                self.stats.queue_integral += u128::from(self.held) * dt;
                self.stats.cm_queue_integral += u128::from(self.held_cm) * dt;
            }
        }
        self.held_since = now;
        self.held = self.held.checked_add_signed(delta).expect("held count underflow");
        if cm {
            self.held_cm = self.held_cm.checked_add_signed(delta).expect("held count underflow");
        }
    }

    /// Installs a routing table after checking every next hop is a neighbor.
    /// An invalid table leaves the current one in place.
    pub fn install_table(
        &mut self,
        table: std::collections::BTreeMap<NodeId, NodeId>,
        neighbors: &[NodeId],
    ) -> Result<(), String> {
        if let Some((d, h)) = table.iter().find(|(_, h)| !neighbors.contains(h)) {
            return Err(format!("node {}: next hop {h} toward {d} is not a neighbor", self.node));
        }
        self.table = Some(table);
        Ok(())
    }
}

/// Bookkeeping for one key request from an NE.
#[derive(Clone, Debug)]
pub struct TransportRecord {
    pub session: usize,
    pub src: NodeId,
    pub dst: NodeId,
    pub bundle: u32,
    pub requested_at: SimTime,
    pub delivered_at: Option<SimTime>,
    pub acked_at: Option<SimTime>,
}

/// Keys consumed on one hop for a message, given the packet-to-key ratio
/// for control traffic. `sent_before` counts earlier control packets on the
/// same hop.
pub fn cm_needs_fresh_key(sent_before: u64, ratio: u64) -> bool {
    sent_before.is_multiple_of(ratio.max(1))
}
