//! Application layer: network encryptors (NEs).
//!
//! Each session encrypts constant-bit-rate traffic toward one peer. A key
//! protects a fixed number of consecutive packets (its lifetime divided by
//! the packet interval); when the local cache drops to the request
//! threshold the NE asks its KMS for a fresh bundle. Packets are processed
//! in closed form between key changes instead of one event per packet, so a
//! session costs a handful of events per key rather than per packet.

use serde::{Deserialize, Serialize};

use crate::kernel::{RngStream, SimTime};
use crate::topology::NodeId;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NeParams {
    pub rate_kbps: f64,
    pub packet_bytes: u32,
    pub encryption_latency_ms: f64,
    pub key_lifetime_s: f64,
    pub cache_keys: u64,
    pub request_threshold: u64,
    pub keys_per_request: u32,
    /// Session start times are spread uniformly over this window.
    pub phase_spread_s: f64,
    /// Wait before re-requesting after a failed transport.
    pub retry_after_s: f64,
}

impl Default for NeParams {
    fn default() -> Self {
        NeParams {
            rate_kbps: 10_000.0,
            packet_bytes: 800,
            encryption_latency_ms: 0.018,
            key_lifetime_s: 0.24,
            cache_keys: 3,
            request_threshold: 0,
            keys_per_request: 3,
            phase_spread_s: 0.24,
            retry_after_s: 1.0,
        }
    }
}

impl NeParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.rate_kbps > 0.0) || !self.rate_kbps.is_finite() {
            return Err("ne.rate_kbps must be positive".into());
        }
        if self.packet_bytes == 0 {
            return Err("ne.packet_bytes must be positive".into());
        }
        if !(self.encryption_latency_ms >= 0.0) || !self.encryption_latency_ms.is_finite() {
            return Err("ne.encryption_latency_ms must be non-negative".into());
        }
        if self.packets_per_key() == 0 {
            return Err("ne.key_lifetime_s is shorter than one packet interval".into());
        }
        if self.keys_per_request == 0 {
            return Err("ne.keys_per_request must be positive".into());
        }
        if self.cache_keys < u64::from(self.keys_per_request) {
            return Err("ne.cache_keys must hold at least one bundle".into());
        }
        if self.request_threshold >= self.cache_keys {
            return Err("ne.request_threshold must be below ne.cache_keys".into());
        }
        if !(self.phase_spread_s >= 0.0) || !self.phase_spread_s.is_finite() {
            return Err("ne.phase_spread_s must be non-negative".into());
        }
        if !(self.retry_after_s > 0.0) || !self.retry_after_s.is_finite() {
            return Err("ne.retry_after_s must be positive".into());
        }
        Ok(())
    }

    pub fn packet_interval(&self) -> SimTime {
        SimTime::from_secs_f64(f64::from(self.packet_bytes) * 8.0 / (self.rate_kbps * 1000.0))
    }

    pub fn packets_per_key(&self) -> u64 {
        let interval = self.packet_interval().as_nanos();
        if interval == 0 {
            return 0;
        }
        SimTime::from_secs_f64(self.key_lifetime_s).as_nanos() / interval
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrafficPattern {
    /// Every ordered pair of access nodes.
    #[default]
    FullMesh,
    /// Each access node talks to one uniformly chosen other access node.
    RandomPeer,
    /// Sessions listed explicitly in the configuration.
    Explicit,
}

/// Ordered (source, destination) pairs of NE sessions.
pub fn plan_sessions(
    pattern: TrafficPattern,
    access: &[NodeId],
    explicit: &[(NodeId, NodeId)],
    seed: u64,
) -> Vec<(NodeId, NodeId)> {
    match pattern {
        TrafficPattern::FullMesh => access
            .iter()
            .flat_map(|&a| access.iter().filter(move |&&b| b != a).map(move |&b| (a, b)))
            .collect(),
        TrafficPattern::RandomPeer => {
            let mut rng = RngStream::new(seed, "traffic-peers");
            access
                .iter()
                .filter(|_| access.len() > 1)
                .map(|&a| {
                    let others: Vec<NodeId> = access.iter().copied().filter(|&b| b != a).collect();
                    let i = ((rng.unit() * others.len() as f64) as usize).min(others.len() - 1);
                    (a, others[i])
                })
                .collect()
        }
        TrafficPattern::Explicit => explicit.to_vec(),
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct NeStats {
    /// Packets generated within the window.
    pub tx: u64,
    /// Packets that reached the peer by the end of the run.
    pub rx: u64,
    /// Packets that left the encryptor.
    pub sent: u64,
    pub consumed_keys: u64,
    pub requests: u64,
    pub failed_requests: u64,
    pub cache_overflow: u64,
    /// Packets still waiting for a key when the run ended.
    pub censored: u64,
    pub latency_sum_ns: u128,
    pub latency_count: u64,
}

impl NeStats {
    pub fn mean_latency(&self) -> Option<SimTime> {
        (self.latency_count > 0).then(|| SimTime::from_nanos((self.latency_sum_ns / u128::from(self.latency_count)) as u64))
    }
}

/// What the world has to do after a session advanced.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct NeStep {
    pub request: bool,
    pub wake_at: Option<SimTime>,
}

#[derive(Clone, Debug)]
pub struct NeSession {
    pub id: usize,
    pub node: NodeId,
    pub peer: NodeId,
    /// One-way propagation to the peer.
    pub path_delay: SimTime,
    interval: u64,
    enc: u64,
    ppk: u64,
    cache_cap: u64,
    threshold: u64,
    pub bundle: u32,
    window: Option<(u64, u64)>,
    total: u64,
    cache: u64,
    pub outstanding: bool,
    next: u64,
    budget: u64,
    key_ready: u64,
    enc_free: u64,
    starved: bool,
    pending_wake: Option<SimTime>,
    pub stats: NeStats,
}

impl NeSession {
    pub fn new(id: usize, node: NodeId, peer: NodeId, path_delay: SimTime, p: &NeParams) -> Self {
        NeSession {
            id,
            node,
            peer,
            path_delay,
            interval: p.packet_interval().as_nanos(),
            enc: SimTime::from_millis_f64(p.encryption_latency_ms).as_nanos(),
            ppk: p.packets_per_key(),
            cache_cap: p.cache_keys,
            threshold: p.request_threshold,
            bundle: p.keys_per_request,
            window: None,
            total: 0,
            cache: 0,
            outstanding: false,
            next: 0,
            budget: 0,
            key_ready: 0,
            enc_free: 0,
            starved: false,
            pending_wake: None,
            stats: NeStats::default(),
        }
    }

    /// Opens the traffic window: packets arrive at `start + k * interval`
    /// for every instant before `end`.
    pub fn start(&mut self, start: SimTime, end: SimTime) {
        let (s, e) = (start.as_nanos(), end.as_nanos());
        self.total = if e > s { (e - s).div_ceil(self.interval) } else { 0 };
        self.window = Some((s, e));
        self.stats.tx = self.total;
    }

    pub fn is_started(&self) -> bool {
        self.window.is_some()
    }

    pub fn window_start(&self) -> Option<SimTime> {
        self.window.map(|(s, _)| SimTime::from_nanos(s))
    }

    pub fn cached_keys(&self) -> u64 {
        self.cache
    }

    fn arrival(&self, k: u64) -> u64 {
        self.window.map_or(0, |(s, _)| s) + k * self.interval
    }

    /// Called when a wake event fires; stale wakes are harmless.
    pub fn on_wake(&mut self, now: SimTime) -> NeStep {
        if self.pending_wake == Some(now) {
            self.pending_wake = None;
        }
        self.advance(now)
    }

    /// A key bundle arrived from the KMS.
    pub fn install(&mut self, keys: u64, now: SimTime) -> NeStep {
        let room = self.cache_cap - self.cache;
        self.stats.cache_overflow += keys.saturating_sub(room);
        self.cache += keys.min(room);
        self.outstanding = false;
        self.advance(now)
    }

    /// The KMS could not deliver; the session may ask again later.
    pub fn request_failed(&mut self) {
        self.outstanding = false;
        self.stats.failed_requests += 1;
    }

    /// Processes every packet that has arrived by `now` and for which a key
    /// is available.
    pub fn advance(&mut self, now: SimTime) -> NeStep {
        let mut step = NeStep::default();
        let Some((start, _)) = self.window else {
            return step;
        };
        let t = now.as_nanos();
        let arrived = if t < start {
            0
        } else {
            ((t - start) / self.interval + 1).min(self.total)
        };
        while self.next < arrived {
            if self.budget == 0 {
                if self.cache == 0 {
                    self.starved = true;
                    break;
                }
                self.cache -= 1;
                self.stats.consumed_keys += 1;
                self.budget = self.ppk;
                self.key_ready = t;
                self.starved = false;
            }
            let k = self.budget.min(arrived - self.next);
            self.encrypt(self.next, k);
            self.budget -= k;
            self.next += k;
        }
        if self.cache <= self.threshold && !self.outstanding && self.next < self.total {
            self.outstanding = true;
            self.stats.requests += 1;
            step.request = true;
        }
        if !self.starved || self.budget > 0 {
            let j = self.next + self.budget;
            if j < self.total {
                let at = SimTime::from_nanos(self.arrival(j).max(t));
                if self.pending_wake != Some(at) {
                    self.pending_wake = Some(at);
                    step.wake_at = Some(at);
                }
            }
        }
        step
    }

    /// Runs packets `first .. first + k` through the serial encryptor.
    fn encrypt(&mut self, first: u64, k: u64) {
        let end = self.window.map_or(u64::MAX, |(_, e)| e);
        let path = self.path_delay.as_nanos();
        let mut i = first;
        let stop = first + k;
        while i < stop {
            let a = self.arrival(i);
            let s = a.max(self.enc_free).max(self.key_ready);
            if s == a && self.interval >= self.enc {
                // caught up: every remaining packet leaves `enc` after arrival
                let n = stop - i;
                let lat = self.enc + path;
                self.stats.latency_sum_ns += u128::from(lat) * u128::from(n);
                self.stats.latency_count += n;
                self.stats.sent += n;
                // arrivals a + m * interval with a + m * interval + lat <= end
                if a + lat <= end {
                    self.stats.rx += ((end - a - lat) / self.interval + 1).min(n);
                }
                self.enc_free = self.arrival(stop - 1) + self.enc;
                return;
            }
            let dep = s + self.enc;
            self.enc_free = dep;
            self.stats.latency_sum_ns += u128::from(dep + path - a);
            self.stats.latency_count += 1;
            self.stats.sent += 1;
            if dep + path <= end {
                self.stats.rx += 1;
            }
            i += 1;
        }
    }

    /// Closes the window at its end. Packets never encrypted contribute
    /// their waiting time so far.
    pub fn finish(&mut self) {
        let Some((_, end)) = self.window else {
            return;
        };
        // a final advance over all arrivals before the end
        let _ = self.advance(SimTime::from_nanos(end.saturating_sub(1)));
        let n = self.total - self.next;
        if n > 0 {
            let first = self.arrival(self.next);
            let last = self.arrival(self.total - 1);
            // sum over m of (end - first - m * interval)
            let sum = u128::from(end - first) * u128::from(n)
                - u128::from(self.interval) * u128::from(n) * u128::from(n - 1) / 2;
            debug_assert!(last < end);
            self.stats.latency_sum_ns += sum;
            self.stats.latency_count += n;
            self.stats.censored += n;
            self.next = self.total;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn session(path_ms: u64) -> NeSession {
        NeSession::new(0, NodeId(1), NodeId(6), SimTime::from_millis(path_ms), &NeParams::default())
    }

    #[test]
    fn interval_and_packets_per_key() {
        let p = NeParams::default();
        assert_eq!(p.packet_interval(), SimTime::from_nanos(640_000));
        assert_eq!(p.packets_per_key(), 375);
    }

    /// Packet-by-packet reference model used as an oracle.
    fn reference(arrivals: &[u64], keys_at: &[u64], ppk: usize, enc: u64, path: u64, end: u64) -> (u64, u64, u128) {
        let mut enc_free = 0u64;
        let (mut sent, mut rx, mut sum) = (0, 0, 0u128);
        for (i, &a) in arrivals.iter().enumerate() {
            let key = i / ppk;
            let Some(&ready) = keys_at.get(key) else {
                sum += u128::from(end - a);
                continue;
            };
            let s = a.max(enc_free).max(ready);
            let dep = s + enc;
            enc_free = dep;
            sent += 1;
            if dep + path <= end {
                rx += 1;
            }
            sum += u128::from(dep + path - a);
        }
        (sent, rx, sum)
    }

    #[test]
    fn keys_in_time_give_constant_latency() {
        let mut s = session(6);
        let start = SimTime::from_secs(2);
        let end = start + SimTime::from_secs(1);
        s.start(start, end);
        assert_eq!(s.stats.tx, 1563);
        let mut now = start;
        let mut step = s.advance(now);
        assert!(step.request);
        // bundle arrives immediately
        step = s.install(3, now);
        while let Some(w) = step.wake_at {
            now = w;
            step = s.on_wake(now);
            if step.request {
                let after = s.install(3, now);
                step.wake_at = after.wake_at.or(step.wake_at);
            }
        }
        s.finish();
        assert_eq!(s.stats.sent, 1563);
        assert_eq!(s.stats.consumed_keys, 5); // ceil(1563 / 375)
        assert_eq!(s.stats.mean_latency(), Some(SimTime::from_nanos(6_018_000)));
        let arrivals: Vec<u64> = (0..1563).map(|k| start.as_nanos() + k * 640_000).collect();
        let keys = vec![start.as_nanos(); 5];
        let (sent, rx, sum) = reference(&arrivals, &keys, 375, 18_000, 6_000_000, end.as_nanos());
        assert_eq!((s.stats.sent, s.stats.rx, s.stats.latency_sum_ns), (sent, rx, sum));
    }

    #[test]
    fn late_keys_match_reference_model() {
        let mut s = session(2);
        let start = SimTime::from_secs(1);
        let end = start + SimTime::from_millis(700);
        s.start(start, end);
        let delay = SimTime::from_millis(50);
        let mut key_times = Vec::new();
        let mut pending: Option<SimTime> = None;
        let mut wake: Option<SimTime> = None;
        let mut now = start;
        let mut step = s.advance(now);
        loop {
            if step.request {
                pending = Some(now + delay);
            }
            if let Some(w) = step.wake_at {
                wake = Some(w);
            }
            let next = match (pending, wake) {
                (Some(p), Some(w)) => p.min(w),
                (Some(p), None) => p,
                (None, Some(w)) => w,
                (None, None) => break,
            };
            if next >= end {
                break;
            }
            now = next;
            if pending == Some(now) {
                pending = None;
                key_times.extend([now.as_nanos(); 3]);
                step = s.install(3, now);
            } else {
                wake = None;
                step = s.on_wake(now);
            }
        }
        s.finish();
        let arrivals: Vec<u64> = (0..s.stats.tx).map(|k| start.as_nanos() + k * 640_000).collect();
        // keys activate when first needed, never before they arrive
        let mut activation = Vec::new();
        for (k, &avail) in key_times.iter().enumerate() {
            let first_packet = arrivals.get(k * 375).copied().unwrap_or(u64::MAX);
            activation.push(avail.max(first_packet));
        }
        let (sent, rx, sum) = reference(&arrivals, &activation, 375, 18_000, 2_000_000, end.as_nanos());
        assert_eq!(s.stats.sent, sent);
        assert_eq!(s.stats.rx, rx);
        assert_eq!(s.stats.latency_sum_ns, sum);
        assert!(s.stats.censored == 0 || s.stats.sent < s.stats.tx);
        assert_eq!(s.stats.latency_count, s.stats.tx);
    }

    #[test]
    fn full_mesh_and_random_peer() {
        let access: Vec<NodeId> = (0..11).map(NodeId).collect();
        let mesh = plan_sessions(TrafficPattern::FullMesh, &access, &[], 1);
        assert_eq!(mesh.len(), 110);
        assert!(mesh.iter().all(|(a, b)| a != b));
        let rp = plan_sessions(TrafficPattern::RandomPeer, &access, &[], 42);
        assert_eq!(rp.len(), 11);
        assert!(rp.iter().all(|(a, b)| a != b && access.contains(b)));
        assert_eq!(rp, plan_sessions(TrafficPattern::RandomPeer, &access, &[], 42));
    }

    #[test]
    fn params_validation() {
        assert!(NeParams::default().validate().is_ok());
        let p = NeParams {
            key_lifetime_s: 0.0001,
            ..NeParams::default()
        };
        assert!(p.validate().is_err());
    }
}
