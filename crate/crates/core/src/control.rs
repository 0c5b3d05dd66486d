//! Control plane: CM architecture, routing protocol and the SDN controller's
//! view of the KM network.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::kernel::SimTime;
use crate::topology::{NodeId, TopologySpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CmArchitectureKind {
    /// Dedicated key-free management network.
    SeparatelyProtected,
    /// Control traffic relayed through the KMSs and protected with QKD keys.
    CmViaKms,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoutingProtocolKind {
    /// Tables pushed to every KMS, periodically refreshed.
    Proactive,
    /// One routing-vector round trip with the controller per transport.
    Reactive,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CmArchitecture {
    pub kind: CmArchitectureKind,
    /// Control packets protected by one QKD key on a hop.
    pub cm_packet_to_key_ratio: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RoutingProtocol {
    pub kind: RoutingProtocolKind,
    pub update_period: Option<SimTime>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ScenarioLabel {
    A,
    B,
    C,
    D,
}

impl ScenarioLabel {
    pub const ALL: [ScenarioLabel; 4] = [ScenarioLabel::A, ScenarioLabel::B, ScenarioLabel::C, ScenarioLabel::D];

    pub fn parts(self) -> (CmArchitectureKind, RoutingProtocolKind) {
        use CmArchitectureKind::*;
        use RoutingProtocolKind::*;
        match self {
            ScenarioLabel::A => (SeparatelyProtected, Proactive),
            ScenarioLabel::B => (SeparatelyProtected, Reactive),
            ScenarioLabel::C => (CmViaKms, Proactive),
            ScenarioLabel::D => (CmViaKms, Reactive),
        }
    }

    pub fn from_parts(arch: CmArchitectureKind, proto: RoutingProtocolKind) -> ScenarioLabel {
        ScenarioLabel::ALL
            .into_iter()
            .find(|l| l.parts() == (arch, proto))
            .expect("all four combinations are labelled")
    }
}

impl fmt::Display for ScenarioLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ScenarioLabel::A => "A",
            ScenarioLabel::B => "B",
            ScenarioLabel::C => "C",
            ScenarioLabel::D => "D",
        };
        f.write_str(s)
    }
}

impl FromStr for ScenarioLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "A" | "a" => Ok(ScenarioLabel::A),
            "B" | "b" => Ok(ScenarioLabel::B),
            "C" | "c" => Ok(ScenarioLabel::C),
            "D" | "d" => Ok(ScenarioLabel::D),
            other => Err(format!("unknown scenario label {other:?} (expected A, B, C or D)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlParams {
    /// Proactive table refresh period; `inf` pushes only once.
    pub update_period_s: f64,
    pub cm_packet_to_key_ratio: u64,
}

impl Default for ControlParams {
    fn default() -> Self {
        ControlParams {
            update_period_s: 60.0,
            cm_packet_to_key_ratio: 1,
        }
    }
}

impl ControlParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.update_period_s > 0.0) {
            return Err("control.update_period_s must be positive (inf disables)".into());
        }
        if self.cm_packet_to_key_ratio == 0 {
            return Err("control.cm_packet_to_key_ratio must be at least 1".into());
        }
        Ok(())
    }

    pub fn update_period(&self) -> Option<SimTime> {
        self.update_period_s
            .is_finite()
            .then(|| SimTime::from_secs_f64(self.update_period_s))
    }
}

/// All-pairs shortest paths over the KM graph. Among equal-length paths the
/// lowest-id next hop wins, which keeps routes deterministic and consistent
/// hop by hop.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoutingTables {
    index: BTreeMap<NodeId, usize>,
    nodes: Vec<NodeId>,
    dist: Vec<Vec<u32>>,
    next: Vec<Vec<Option<NodeId>>>,
}

const UNREACHABLE: u32 = u32::MAX;

impl RoutingTables {
    pub fn compute(topo: &TopologySpec) -> RoutingTables {
        let adj = topo.km_adjacency();
        let nodes: Vec<NodeId> = adj.keys().copied().collect();
        let index: BTreeMap<NodeId, usize> = nodes.iter().enumerate().map(|(i, n)| (*n, i)).collect();
        let n = nodes.len();
        let mut dist = vec![vec![UNREACHABLE; n]; n];
        for (d, row) in dist.iter_mut().enumerate() {
            row[d] = 0;
            let mut q = VecDeque::from([d]);
            while let Some(u) = q.pop_front() {
                for v in &adj[&nodes[u]] {
                    let vi = index[v];
                    if row[vi] == UNREACHABLE {
                        row[vi] = row[u] + 1;
                        q.push_back(vi);
                    }
                }
            }
        }
        // dist is symmetric; dist[d][s] is the distance from s to d
        let mut next = vec![vec![None; n]; n];
        for s in 0..n {
            for d in 0..n {
                if s == d || dist[d][s] == UNREACHABLE {
                    continue;
                }
                next[s][d] = adj[&nodes[s]]
                    .iter()
                    .copied()
                    .find(|v| dist[d][index[v]] + 1 == dist[d][s]);
            }
        }
        RoutingTables { index, nodes, dist, next }
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn next_hop(&self, from: NodeId, to: NodeId) -> Option<NodeId> {
        let (s, d) = (*self.index.get(&from)?, *self.index.get(&to)?);
        self.next[s][d]
    }

    pub fn hops(&self, from: NodeId, to: NodeId) -> Option<u32> {
        let (s, d) = (*self.index.get(&from)?, *self.index.get(&to)?);
        let h = self.dist[d][s];
        (h != UNREACHABLE).then_some(h)
    }

    /// Node sequence from `from` to `to`, both included.
    pub fn path(&self, from: NodeId, to: NodeId) -> Option<Vec<NodeId>> {
        self.hops(from, to)?;
        let mut path = vec![from];
        let mut cur = from;
        while cur != to {
            cur = self.next_hop(cur, to)?;
            path.push(cur);
        }
        Some(path)
    }

    /// The table a KMS receives: destination -> next hop.
    pub fn table_for(&self, node: NodeId) -> BTreeMap<NodeId, NodeId> {
        self.nodes
            .iter()
            .filter_map(|d| Some((*d, self.next_hop(node, *d)?)))
            .collect()
    }
}

/// One control message as seen by the controller's trace.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CmLogEntry {
    pub kind: &'static str,
    pub origin: NodeId,
    pub destination: NodeId,
    pub sent_at: SimTime,
    pub delivered_at: Option<SimTime>,
    /// Nodes traversed, starting with the origin.
    pub path: Vec<NodeId>,
    /// QKD keys taken for this message along its way.
    pub keys: u64,
}

impl CmLogEntry {
    pub fn new(kind: &'static str, origin: NodeId, destination: NodeId, sent_at: SimTime) -> Self {
        CmLogEntry {
            kind,
            origin,
            destination,
            sent_at,
            delivered_at: None,
            path: vec![origin],
            keys: 0,
        }
    }
}

#[derive(Debug, Default)]
pub struct ControllerState {
    pub ready: BTreeMap<NodeId, SimTime>,
    pub init_sent_at: Option<SimTime>,
    pub pushes: u64,
    pub vectors_served: u64,
    pub status_received: u64,
    pub log: Vec<CmLogEntry>,
}

impl ControllerState {
    /// Sum over the trace of hops that crossed a QKD link, i.e. the keys a
    /// one-to-one packet-to-key ratio must have consumed.
    pub fn km_hop_sum(&self, is_km_link: impl Fn(NodeId, NodeId) -> bool) -> u64 {
        self.log
            .iter()
            .map(|e| e.path.windows(2).filter(|w| is_km_link(w[0], w[1])).count() as u64)
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{generate_internet_like, padua_topology, LinkSpec};

    fn brute_force_dist(topo: &TopologySpec, s: NodeId, d: NodeId) -> Option<u32> {
        // Bellman-Ford style relaxation as an independent oracle
        let nodes = topo.km_nodes();
        let mut dist: BTreeMap<NodeId, u32> = nodes.iter().map(|n| (*n, u32::MAX)).collect();
        dist.insert(s, 0);
        for _ in 0..nodes.len() {
            for l in &topo.links {
                let (a, b) = (l.a, l.b);
                for (x, y) in [(a, b), (b, a)] {
                    if dist[&x] != u32::MAX && dist[&x] + 1 < dist[&y] {
                        dist.insert(y, dist[&x] + 1);
                    }
                }
            }
        }
        let v = dist[&d];
        (v != u32::MAX).then_some(v)
    }

    #[test]
    fn paths_are_shortest() {
        let topo = generate_internet_like(20, 42).unwrap();
        let rt = RoutingTables::compute(&topo);
        for s in topo.km_nodes() {
            for d in topo.km_nodes() {
                let h = brute_force_dist(&topo, s, d);
                assert_eq!(rt.hops(s, d), h);
                let p = rt.path(s, d).unwrap();
                assert_eq!(p.len() as u32 - 1, h.unwrap());
                assert_eq!((p[0], *p.last().unwrap()), (s, d));
            }
        }
    }

    #[test]
    fn lowest_id_tie_break() {
        // square 0-1-3, 0-2-3
        let mut t = padua_topology();
        t.nodes = (0..4)
            .map(|i| crate::topology::NodeSpec {
                id: NodeId(i),
                kind: crate::topology::NodeKind::Access,
            })
            .collect();
        t.links = vec![
            LinkSpec::new(0, 2, 1.0, 2.0),
            LinkSpec::new(2, 3, 1.0, 2.0),
            LinkSpec::new(0, 1, 1.0, 2.0),
            LinkSpec::new(1, 3, 1.0, 2.0),
        ];
        let rt = RoutingTables::compute(&t);
        assert_eq!(rt.path(NodeId(0), NodeId(3)).unwrap(), vec![NodeId(0), NodeId(1), NodeId(3)]);
        assert_eq!(rt.path(NodeId(3), NodeId(0)).unwrap(), vec![NodeId(3), NodeId(1), NodeId(0)]);
    }

    #[test]
    fn padua_path() {
        let rt = RoutingTables::compute(&padua_topology());
        assert_eq!(
            rt.path(NodeId(1), NodeId(6)).unwrap(),
            vec![NodeId(1), NodeId(2), NodeId(3), NodeId(6)]
        );
        assert_eq!(rt.table_for(NodeId(2)).get(&NodeId(6)), Some(&NodeId(3)));
    }

    #[test]
    fn scenario_labels_round_trip() {
        for l in ScenarioLabel::ALL {
            let (a, p) = l.parts();
            assert_eq!(ScenarioLabel::from_parts(a, p), l);
            assert_eq!(l.to_string().parse::<ScenarioLabel>().unwrap(), l);
        }
        assert!("E".parse::<ScenarioLabel>().is_err());
    }

    #[test]
    fn hop_sum_counts_km_links_only() {
        let mut c = ControllerState::default();
        let mut e = CmLogEntry::new("setup", NodeId(1), NodeId(9), SimTime::ZERO);
        e.path.extend([NodeId(2), NodeId(8), NodeId(9)]);
        c.log.push(e);
        // 8-9 is the controller link
        assert_eq!(c.km_hop_sum(|a, b| !(a == NodeId(9) || b == NodeId(9))), 2);
    }
}
