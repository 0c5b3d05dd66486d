use std::collections::BTreeMap;
use std::time::Duration;

use serde::Serialize;

use crate::app::NeStats;
use crate::channel::ChannelStats;
use crate::control::{CmLogEntry, ScenarioLabel};
use crate::kernel::SimTime;
use crate::km::KmsStats;
use crate::metrics::{mean_of_node_means, RunMetrics};
use crate::quantum::GenerationSample;
use crate::topology::{LinkId, NodeId};

use super::World;

#[derive(Clone, Debug, Serialize)]
pub struct LinkReport {
    pub link: LinkId,
    pub a: NodeId,
    pub b: NodeId,
    pub key_rate: f64,
    pub generated: u64,
    /// Keys that left post-processing after setup completed.
    pub generated_in_window: u64,
    /// Per endpoint, lower id first.
    pub consumed: [u64; 2],
    pub stored: [u64; 2],
    pub discarded: [u64; 2],
    pub conserved: [bool; 2],
    pub relayed_keys: u64,
    pub relayed_bundles: u64,
    pub transport_keys: u64,
    pub ack_keys: u64,
    pub cm_keys: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct NodeReport {
    pub node: NodeId,
    pub t_msg_ne_ms: Option<f64>,
    pub t_key_ms: Option<f64>,
    pub t_msg_km_ms: Option<f64>,
    pub n_msg_km: f64,
    pub n_cm_km: f64,
    pub transports_started: u64,
    pub transports_completed: u64,
    pub transports_failed: u64,
    pub messages_forwarded: u64,
    pub status_emitted: u64,
    pub pushes_received: u64,
    pub setup_sent_s: Option<f64>,
    pub configured_s: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SessionReport {
    pub node: NodeId,
    pub peer: NodeId,
    pub start_s: Option<f64>,
    pub stats: NeStats,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct CmReport {
    pub messages: u64,
    pub delivered: u64,
    /// QKD keys taken for control traffic, counted at the key stores.
    pub keys_consumed: u64,
    /// The same, summed over the controller's message trace.
    pub trace_keys: u64,
    /// Hops over key-management links summed over the trace.
    pub km_hop_sum: u64,
    pub by_kind: BTreeMap<&'static str, u64>,
    pub table_pushes: u64,
    pub vectors_served: u64,
    pub status_received: u64,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct QueueSample {
    pub at: SimTime,
    pub node: NodeId,
    pub held: u64,
    pub held_cm: u64,
    pub stored_keys: u64,
}

#[derive(Clone, Debug, Default)]
pub struct Traces {
    pub queue: Vec<QueueSample>,
    pub generation: Vec<(LinkId, GenerationSample)>,
    pub cm_log: Vec<CmLogEntry>,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub label: ScenarioLabel,
    pub seed: u64,
    pub setup_complete: SimTime,
    pub traffic_start: Option<SimTime>,
    pub end: SimTime,
    pub metrics: RunMetrics,
    pub nodes: Vec<NodeReport>,
    pub gateway: Option<NodeId>,
    pub sessions: Vec<SessionReport>,
    pub links: Vec<LinkReport>,
    pub cm: CmReport,
    pub channel: ChannelStats,
    pub events: u64,
    pub transports: u64,
    pub wall_time: Duration,
    pub traces: Option<Traces>,
}

impl RunResult {
    /// Every broken accounting identity, as readable messages.
    pub fn conservation_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for l in &self.links {
            for side in 0..2 {
                if !l.conserved[side] {
                    out.push(format!("link {}: store {side} does not balance", l.link.0));
                }
                let total = l.consumed[side] + l.stored[side] + l.discarded[side];
                if total != l.generated {
                    out.push(format!(
                        "link {}: generated {} != consumed {} + stored {} + discarded {} at end {side}",
                        l.link.0, l.generated, l.consumed[side], l.stored[side], l.discarded[side]
                    ));
                }
            }
        }
        if self.cm.keys_consumed != self.cm.trace_keys {
            out.push(format!(
                "control keys at the stores {} != keys in the trace {}",
                self.cm.keys_consumed, self.cm.trace_keys
            ));
        }
        if self.label.parts().0 == crate::control::CmArchitectureKind::SeparatelyProtected && self.cm.keys_consumed != 0 {
            out.push(format!("separately protected run consumed {} control keys", self.cm.keys_consumed));
        }
        out
    }

    pub fn tx(&self) -> u64 {
        self.sessions.iter().map(|s| s.stats.tx).sum()
    }

    pub fn rx(&self) -> u64 {
        self.sessions.iter().map(|s| s.stats.rx).sum()
    }

    pub fn ne_consumed_keys(&self) -> u64 {
        self.sessions.iter().map(|s| s.stats.consumed_keys).sum()
    }

    pub fn link(&self, a: u32, b: u32) -> Option<&LinkReport> {
        let (lo, hi) = (NodeId(a.min(b)), NodeId(a.max(b)));
        self.links.iter().find(|l| (l.a, l.b) == (lo, hi))
    }
}

fn mean_ms(sum_ns: u128, n: u64) -> Option<f64> {
    (n > 0).then(|| sum_ns as f64 / n as f64 / 1e6)
}

impl World {
    pub(super) fn finish(mut self, events: u64, wall_time: Duration) -> RunResult {
        let setup = self.setup_done.expect("checked by caller");
        let end = self.end.unwrap_or(setup);
        for s in &mut self.sessions {
            s.finish();
        }
        for i in 0..self.kms.len() {
            self.kms[i].adjust_held(end, Some(setup), 0, false);
        }

        // per-node transport latencies; unfinished ones count up to the end
        let mut t_key: BTreeMap<NodeId, (u128, u64)> = BTreeMap::new();
        let mut t_km: BTreeMap<NodeId, (u128, u64)> = BTreeMap::new();
        for r in &self.transports {
            let key = r.acked_at.unwrap_or(end).min(end) - r.requested_at;
            let km = r.delivered_at.unwrap_or(end).min(end) - r.requested_at;
            let e = t_key.entry(r.src).or_default();
            e.0 += u128::from(key.as_nanos());
            e.1 += 1;
            let e = t_km.entry(r.src).or_default();
            e.0 += u128::from(km.as_nanos());
            e.1 += 1;
        }
        let mut ne: BTreeMap<NodeId, (u128, u64)> = BTreeMap::new();
        for s in &self.sessions {
            let e = ne.entry(s.node).or_default();
            e.0 += s.stats.latency_sum_ns;
            e.1 += s.stats.latency_count;
        }
        let window = (end - setup).as_nanos().max(1) as f64;
        let nodes: Vec<NodeReport> = self
            .kms
            .iter()
            .map(|s| {
                let st: &KmsStats = &s.stats;
                let get = |m: &BTreeMap<NodeId, (u128, u64)>| m.get(&s.node).and_then(|&(sum, n)| mean_ms(sum, n));
                NodeReport {
                    node: s.node,
                    t_msg_ne_ms: get(&ne),
                    t_key_ms: get(&t_key),
                    t_msg_km_ms: get(&t_km),
                    n_msg_km: st.queue_integral as f64 / window,
                    n_cm_km: st.cm_queue_integral as f64 / window,
                    transports_started: st.transports_started,
                    transports_completed: st.transports_completed,
                    transports_failed: st.transports_failed,
                    messages_forwarded: st.messages_forwarded,
                    status_emitted: st.status_emitted,
                    pushes_received: st.pushes_received,
                    setup_sent_s: s.setup_sent_at.map(SimTime::as_secs_f64),
                    configured_s: s.configured_at.map(SimTime::as_secs_f64),
                }
            })
            .collect();
        let metrics = RunMetrics {
            t_msg_ne_ms: mean_of_node_means(nodes.iter().map(|n| n.t_msg_ne_ms)),
            t_key_ms: mean_of_node_means(nodes.iter().map(|n| n.t_key_ms)),
            t_msg_km_ms: mean_of_node_means(nodes.iter().map(|n| n.t_msg_km_ms)),
            n_msg_km: mean_of_node_means(nodes.iter().map(|n| Some(n.n_msg_km))),
        };

        let links: Vec<LinkReport> = self
            .links
            .iter()
            .zip(&self.generated_at_setup)
            .map(|(l, &at_setup)| LinkReport {
                link: l.id,
                generated_in_window: l.qkd.generated() - at_setup,
                a: l.ends[0],
                b: l.ends[1],
                key_rate: l.qkd.cfg.key_rate,
                generated: l.qkd.generated(),
                consumed: [l.stores[0].consumed(), l.stores[1].consumed()],
                stored: [l.stores[0].len(), l.stores[1].len()],
                discarded: [l.stores[0].discarded(), l.stores[1].discarded()],
                conserved: [l.stores[0].is_conserved(), l.stores[1].is_conserved()],
                relayed_keys: l.relayed_keys,
                relayed_bundles: l.relayed_bundles,
                transport_keys: l.transport_keys,
                ack_keys: l.ack_keys,
                cm_keys: l.cm_keys,
            })
            .collect();

        let link_of = &self.link_of;
        let mut cm = CmReport {
            messages: self.ctl.log.len() as u64,
            delivered: self.ctl.log.iter().filter(|e| e.delivered_at.is_some()).count() as u64,
            keys_consumed: links.iter().map(|l| l.cm_keys).sum(),
            trace_keys: self.ctl.log.iter().map(|e| e.keys).sum(),
            km_hop_sum: self.ctl.km_hop_sum(|a, b| link_of.contains_key(&(a.min(b), a.max(b)))),
            table_pushes: self.ctl.pushes,
            vectors_served: self.ctl.vectors_served,
            status_received: self.ctl.status_received,
            ..CmReport::default()
        };
        for e in &self.ctl.log {
            *cm.by_kind.entry(e.kind).or_default() += 1;
        }

        let traffic_start = self
            .sessions
            .iter()
            .filter_map(|s| s.window_start())
            .min();
        let sessions = self
            .sessions
            .iter()
            .map(|s| SessionReport {
                node: s.node,
                peer: s.peer,
                start_s: s.window_start().map(SimTime::as_secs_f64),
                stats: s.stats.clone(),
            })
            .collect();

        let traces = self.traces.take().map(|mut t| {
            for l in &self.links {
                if let Some(samples) = l.qkd.trace() {
                    t.generation.extend(samples.iter().map(|s| (l.id, *s)));
                }
            }
            t.cm_log = std::mem::take(&mut self.ctl.log);
            t
        });

        RunResult {
            label: self.cfg.label,
            seed: self.cfg.seed,
            setup_complete: setup,
            traffic_start,
            end,
            metrics,
            nodes,
            gateway: self.gateway,
            sessions,
            links,
            cm,
            channel: self.channel.stats.clone(),
            events,
            transports: self.transports.len() as u64,
            wall_time,
            traces,
        }
    }
}
