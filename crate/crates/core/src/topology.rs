//! Network graphs: the generated internet-like topology, the Padua path,
//! controller attachment and the topology file format.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::CmArchitectureKind;
use crate::kernel::{RngStream, SimTime};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Index of a key-management link in [`TopologySpec::links`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LinkId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Access,
    Backbone,
    Controller,
    Gateway,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: NodeId,
    pub kind: NodeKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub a: NodeId,
    pub b: NodeId,
    /// Keys per second.
    pub key_rate: f64,
    pub delay_ms: f64,
    #[serde(default)]
    pub loss_probability: f64,
}

impl LinkSpec {
    pub fn new(a: u32, b: u32, key_rate: f64, delay_ms: f64) -> Self {
        LinkSpec {
            a: NodeId(a),
            b: NodeId(b),
            key_rate,
            delay_ms,
            loss_probability: 0.0,
        }
    }

    pub fn delay(&self) -> SimTime {
        SimTime::from_millis_f64(self.delay_ms)
    }

    /// Endpoints ordered (lower, higher).
    pub fn ordered(&self) -> (NodeId, NodeId) {
        if self.a <= self.b {
            (self.a, self.b)
        } else {
            (self.b, self.a)
        }
    }

    pub fn touches(&self, n: NodeId) -> bool {
        self.a == n || self.b == n
    }

    pub fn other(&self, n: NodeId) -> Option<NodeId> {
        if self.a == n {
            Some(self.b)
        } else if self.b == n {
            Some(self.a)
        } else {
            None
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TopologySpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator_seed: Option<u64>,
    pub nodes: Vec<NodeSpec>,
    /// Key-management graph links, each backed by a QKD link.
    #[serde(default)]
    pub links: Vec<LinkSpec>,
    /// Dedicated management star (separately-protected architecture only).
    #[serde(default)]
    pub management_links: Vec<LinkSpec>,
    /// Controller to gateway attachment (CM-via-KMS only); carries no QKD keys.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub controller_link: Option<LinkSpec>,
}

#[derive(Debug, Error, PartialEq)]
pub enum TopologyError {
    #[error("node count {0} is below the minimum of 3")]
    TooFewNodes(usize),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("duplicate node id {0}")]
    DuplicateNode(NodeId),
    #[error("duplicate link {0}-{1}")]
    DuplicateLink(NodeId, NodeId),
    #[error("self loop on node {0}")]
    SelfLoop(NodeId),
    #[error("link {0}-{1}: {2}")]
    InvalidLink(NodeId, NodeId, &'static str),
    #[error("key-management graph is not connected")]
    Disconnected,
    #[error("more than one {0:?} node")]
    DuplicateRole(NodeKind),
    #[error("a controller is already attached")]
    ControllerAlreadyAttached,
    #[error("{0}")]
    Parse(String),
    #[error("{0}")]
    Io(String),
}

impl TopologySpec {
    pub fn node(&self, id: NodeId) -> Option<&NodeSpec> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn controller(&self) -> Option<NodeId> {
        self.nodes.iter().find(|n| n.kind == NodeKind::Controller).map(|n| n.id)
    }

    pub fn gateway(&self) -> Option<NodeId> {
        self.nodes.iter().find(|n| n.kind == NodeKind::Gateway).map(|n| n.id)
    }

    /// Nodes that run a KMS (everything except the controller).
    pub fn km_nodes(&self) -> Vec<NodeId> {
        let mut v: Vec<NodeId> = self
            .nodes
            .iter()
            .filter(|n| n.kind != NodeKind::Controller)
            .map(|n| n.id)
            .collect();
        v.sort();
        v
    }

    pub fn access_nodes(&self) -> Vec<NodeId> {
        let mut v: Vec<NodeId> = self
            .nodes
            .iter()
            .filter(|n| n.kind == NodeKind::Access)
            .map(|n| n.id)
            .collect();
        v.sort();
        v
    }

    /// Sorted adjacency of the key-management graph.
    pub fn km_adjacency(&self) -> BTreeMap<NodeId, Vec<NodeId>> {
        let mut adj: BTreeMap<NodeId, BTreeSet<NodeId>> = BTreeMap::new();
        for n in self.km_nodes() {
            adj.entry(n).or_default();
        }
        for l in &self.links {
            adj.entry(l.a).or_default().insert(l.b);
            adj.entry(l.b).or_default().insert(l.a);
        }
        adj.into_iter().map(|(k, v)| (k, v.into_iter().collect())).collect()
    }

    pub fn degree(&self, n: NodeId) -> usize {
        self.links.iter().filter(|l| l.touches(n)).count()
    }

    pub fn is_km_connected(&self) -> bool {
        let adj = self.km_adjacency();
        let Some(&start) = adj.keys().next() else {
            return true;
        };
        let mut seen = BTreeSet::from([start]);
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            for &v in &adj[&u] {
                if seen.insert(v) {
                    queue.push_back(v);
                }
            }
        }
        seen.len() == adj.len()
    }

    /// Sets the key rate of every key-management link.
    pub fn set_key_rate(&mut self, kps: f64) {
        for l in &mut self.links {
            l.key_rate = kps;
        }
    }

    pub fn validate(&self) -> Result<(), TopologyError> {
        let mut ids = BTreeSet::new();
        for n in &self.nodes {
            if !ids.insert(n.id) {
                return Err(TopologyError::DuplicateNode(n.id));
            }
        }
        for kind in [NodeKind::Controller, NodeKind::Gateway] {
            if self.nodes.iter().filter(|n| n.kind == kind).count() > 1 {
                return Err(TopologyError::DuplicateRole(kind));
            }
        }
        let mut pairs = BTreeSet::new();
        let all = self
            .links
            .iter()
            .chain(&self.management_links)
            .chain(self.controller_link.iter());
        for l in all {
            for end in [l.a, l.b] {
                if !ids.contains(&end) {
                    return Err(TopologyError::UnknownNode(end));
                }
            }
            if l.a == l.b {
                return Err(TopologyError::SelfLoop(l.a));
            }
            if !(l.delay_ms > 0.0) || !l.delay_ms.is_finite() {
                return Err(TopologyError::InvalidLink(l.a, l.b, "delay must be positive"));
            }
            if !(0.0..=1.0).contains(&l.loss_probability) {
                return Err(TopologyError::InvalidLink(l.a, l.b, "loss probability outside [0,1]"));
            }
            if !(l.key_rate >= 0.0) || !l.key_rate.is_finite() {
                return Err(TopologyError::InvalidLink(l.a, l.b, "key rate must be finite and non-negative"));
            }
            let (lo, hi) = l.ordered();
            if !pairs.insert((lo, hi)) {
                return Err(TopologyError::DuplicateLink(lo, hi));
            }
        }
        for l in &self.links {
            if !(l.key_rate > 0.0) {
                return Err(TopologyError::InvalidLink(l.a, l.b, "QKD key rate must be positive"));
            }
            let ctl = self.controller();
            if ctl.is_some() && (Some(l.a) == ctl || Some(l.b) == ctl) {
                return Err(TopologyError::InvalidLink(l.a, l.b, "controller cannot terminate a QKD link"));
            }
        }
        if !self.is_km_connected() {
            return Err(TopologyError::Disconnected);
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self, TopologyError> {
        let topo: TopologySpec = toml::from_str(s).map_err(|e| TopologyError::Parse(e.to_string()))?;
        topo.validate()?;
        Ok(topo)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("topology serializes")
    }

    pub fn load(path: &Path) -> Result<Self, TopologyError> {
        let text = std::fs::read_to_string(path).map_err(|e| TopologyError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            TopologyError::Parse(msg) => TopologyError::Parse(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), TopologyError> {
        crate::output::write_atomic(path, self.to_toml_string().as_bytes())
            .map_err(|e| TopologyError::Io(format!("{}: {e}", path.display())))
    }
}

pub const DEFAULT_LINK_DELAY_MS: f64 = 2.0;
pub const DEFAULT_KEY_RATE: f64 = 100.0;

/// Number of backbone nodes for a generated graph: 9 of 20, scaled.
pub fn default_backbone_count(n: usize) -> usize {
    (n * 9 / 20).max(1)
}

/// Scale-free graph by preferential attachment with two edges per new
/// node, grown from a triangle. The highest-degree nodes become backbone
/// (ties to the lower id), the rest are access nodes.
pub fn generate_internet_like(n: usize, seed: u64) -> Result<TopologySpec, TopologyError> {
    const M: usize = 2;
    if n < 3 {
        return Err(TopologyError::TooFewNodes(n));
    }
    let mut rng = RngStream::new(seed, "topology");
    let mut edges: BTreeSet<(u32, u32)> = BTreeSet::from([(0, 1), (0, 2), (1, 2)]);
    // each node appears once per incident edge
    let mut endpoints: Vec<u32> = vec![0, 1, 0, 2, 1, 2];
    for v in 3..n as u32 {
        let mut targets = BTreeSet::new();
        while targets.len() < M {
            let pick = endpoints[(rng.unit() * endpoints.len() as f64) as usize];
            targets.insert(pick);
        }
        for t in targets {
            edges.insert((t, v));
            endpoints.push(t);
            endpoints.push(v);
        }
    }

    let mut degree = vec![0usize; n];
    for &(a, b) in &edges {
        degree[a as usize] += 1;
        degree[b as usize] += 1;
    }
    let mut by_degree: Vec<u32> = (0..n as u32).collect();
    by_degree.sort_by(|&x, &y| degree[y as usize].cmp(&degree[x as usize]).then(x.cmp(&y)));
    let backbone: BTreeSet<u32> = by_degree.into_iter().take(default_backbone_count(n)).collect();

    let nodes = (0..n as u32)
        .map(|id| NodeSpec {
            id: NodeId(id),
            kind: if backbone.contains(&id) {
                NodeKind::Backbone
            } else {
                NodeKind::Access
            },
        })
        .collect();
    let links = edges
        .into_iter()
        .map(|(a, b)| LinkSpec::new(a, b, DEFAULT_KEY_RATE, DEFAULT_LINK_DELAY_MS))
        .collect();
    Ok(TopologySpec {
        generator_seed: Some(seed),
        nodes,
        links,
        management_links: Vec::new(),
        controller_link: None,
    })
}

/// The four-node Padua path 1-2-3-6: two free-space links at 58 keys/s and
/// a fiber link at 390 keys/s.
pub fn padua_topology() -> TopologySpec {
    let node = |id, kind| NodeSpec { id: NodeId(id), kind };
    TopologySpec {
        generator_seed: None,
        nodes: vec![
            node(1, NodeKind::Access),
            node(2, NodeKind::Backbone),
            node(3, NodeKind::Backbone),
            node(6, NodeKind::Access),
        ],
        links: vec![
            LinkSpec::new(1, 2, 58.0, DEFAULT_LINK_DELAY_MS),
            LinkSpec::new(2, 3, 58.0, DEFAULT_LINK_DELAY_MS),
            LinkSpec::new(3, 6, 390.0, DEFAULT_LINK_DELAY_MS),
        ],
        management_links: Vec::new(),
        controller_link: None,
    }
}

/// Adds the controller node. Separately-protected: a management star to
/// every node. CM-via-KMS: a gateway KMS joined to the key-management graph
/// at `gateway_at`, and a single controller link to the gateway.
pub fn attach_controller(
    topo: &TopologySpec,
    arch: CmArchitectureKind,
    gateway_at: NodeId,
) -> Result<TopologySpec, TopologyError> {
    if topo.controller().is_some() || topo.gateway().is_some() {
        return Err(TopologyError::ControllerAlreadyAttached);
    }
    if topo.node(gateway_at).is_none() {
        return Err(TopologyError::UnknownNode(gateway_at));
    }
    let mut out = topo.clone();
    let next_id = topo.nodes.iter().map(|n| n.id.0).max().unwrap_or(0) + 1;
    let controller = NodeId(next_id);
    let template = topo
        .links
        .iter()
        .filter(|l| l.touches(gateway_at))
        .min_by_key(|l| l.other(gateway_at))
        .cloned()
        .unwrap_or_else(|| LinkSpec::new(0, 0, DEFAULT_KEY_RATE, DEFAULT_LINK_DELAY_MS));
    out.nodes.push(NodeSpec {
        id: controller,
        kind: NodeKind::Controller,
    });
    match arch {
        CmArchitectureKind::SeparatelyProtected => {
            for n in topo.km_nodes() {
                out.management_links.push(LinkSpec {
                    a: n,
                    b: controller,
                    key_rate: 0.0,
                    delay_ms: template.delay_ms,
                    loss_probability: 0.0,
                });
            }
        }
        CmArchitectureKind::CmViaKms => {
            let gateway = NodeId(next_id + 1);
            out.nodes.push(NodeSpec {
                id: gateway,
                kind: NodeKind::Gateway,
            });
            out.links.push(LinkSpec {
                a: gateway_at,
                b: gateway,
                key_rate: template.key_rate,
                delay_ms: template.delay_ms,
                loss_probability: template.loss_probability,
            });
            out.controller_link = Some(LinkSpec {
                a: gateway,
                b: controller,
                key_rate: 0.0,
                delay_ms: template.delay_ms,
                loss_probability: 0.0,
            });
        }
    }
    out.validate()?;
    Ok(out)
}
