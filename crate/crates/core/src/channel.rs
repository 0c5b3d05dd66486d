//! Classical channels between nodes.
//!
//! Each link has a fixed propagation delay. Two sends on the same link at the
//! same instant collide (per direction when full duplex); the later one backs
//! off for an exponentially distributed time and retries. Lost messages are
//! retransmitted the same way.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::kernel::{sample_exponential, RngStream, SimTime};
use crate::topology::{LinkSpec, NodeId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ChanId(pub u32);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelParams {
    pub half_duplex: bool,
    pub backoff_mean_s: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        ChannelParams {
            half_duplex: true,
            backoff_mean_s: 3.0,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.backoff_mean_s > 0.0) || !self.backoff_mean_s.is_finite() {
            return Err("channel.backoff_mean_s must be positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct ChannelLink {
    pub ends: [NodeId; 2],
    pub delay: SimTime,
    pub loss_probability: f64,
    last_send: [Option<SimTime>; 2],
    pub sent: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Transmit {
    Deliver(SimTime),
    Collision,
    Lost,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ChannelStats {
    pub sent: u64,
    pub collisions: u64,
    pub lost: u64,
}

#[derive(Debug)]
pub struct Channel {
    links: Vec<ChannelLink>,
    by_pair: HashMap<(NodeId, NodeId), ChanId>,
    params: ChannelParams,
    loss: RngStream,
    backoff: RngStream,
    pub stats: ChannelStats,
}

impl Channel {
    pub fn new(params: ChannelParams, seed: u64) -> Self {
        Channel {
            links: Vec::new(),
            by_pair: HashMap::new(),
            params,
            loss: RngStream::new(seed, "channel-loss"),
            backoff: RngStream::new(seed, "channel-backoff"),
            stats: ChannelStats::default(),
        }
    }

    pub fn add_link(&mut self, spec: &LinkSpec) -> Result<ChanId, String> {
        let (lo, hi) = spec.ordered();
        if lo == hi {
            return Err(format!("channel {lo}-{hi} is a self loop"));
        }
        if self.by_pair.contains_key(&(lo, hi)) {
            return Err(format!("duplicate channel {lo}-{hi}"));
        }
        if !(0.0..1.0).contains(&spec.loss_probability) {
            return Err(format!("channel {lo}-{hi}: loss probability must lie in [0, 1)"));
        }
        let id = ChanId(self.links.len() as u32);
        self.links.push(ChannelLink {
            ends: [lo, hi],
            delay: spec.delay(),
            loss_probability: spec.loss_probability,
            last_send: [None, None],
            sent: 0,
        });
        self.by_pair.insert((lo, hi), id);
        Ok(id)
    }

    pub fn between(&self, a: NodeId, b: NodeId) -> Option<ChanId> {
        self.by_pair.get(&(a.min(b), a.max(b))).copied()
    }

    pub fn link(&self, id: ChanId) -> &ChannelLink {
        &self.links[id.0 as usize]
    }

    pub fn links(&self) -> &[ChannelLink] {
        &self.links
    }

    /// Attempts a send from `from` at `now`.
    pub fn transmit(&mut self, id: ChanId, from: NodeId, now: SimTime) -> Transmit {
        let half = self.params.half_duplex;
        let link = &mut self.links[id.0 as usize];
        let dir = usize::from(from != link.ends[0]);
        let clash = if half {
            link.last_send.contains(&Some(now))
        } else {
            link.last_send[dir] == Some(now)
        };
        if clash {
            self.stats.collisions += 1;
            return Transmit::Collision;
        }
        link.last_send[dir] = Some(now);
        if link.loss_probability > 0.0 && self.loss.unit() < link.loss_probability {
            self.stats.lost += 1;
            return Transmit::Lost;
        }
        link.sent += 1;
        self.stats.sent += 1;
        Transmit::Deliver(now + link.delay)
    }

    pub fn backoff(&mut self) -> SimTime {
        let mean = SimTime::from_secs_f64(self.params.backoff_mean_s);
        // validated positive, so sampling cannot fail
        sample_exponential(&mut self.backoff, mean).unwrap_or(mean)
    }
}
