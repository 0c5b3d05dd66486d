//! One simulation run: builds every layer from a resolved configuration,
//! drives the event kernel and collects the results.

mod flow;
mod report;

use std::collections::HashMap;

use thiserror::Error;

use crate::app::{NeParams, NeSession};
use crate::channel::{Channel, ChannelParams};
use crate::control::{CmArchitectureKind, ControlParams, ControllerState, RoutingProtocolKind, RoutingTables, ScenarioLabel};
use crate::kernel::{Kernel, KernelError, ModuleId, RngStream, SimTime};
use crate::km::{KmLink, KmMessage, KmParams, Kms, TransportRecord};
use crate::quantum::{QkdModule, QkdModuleConfig, QkdParams};
use crate::topology::{LinkId, NodeId, NodeKind, TopologySpec};

pub use self::report::{CmReport, LinkReport, NodeReport, QueueSample, RunResult, SessionReport, Traces};

/// When the run stops.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StopAt {
    /// Absolute simulated time.
    Total(SimTime),
    /// A fixed window after setup completes.
    AfterSetup(SimTime),
}

/// Everything one run needs, already validated and resolved.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub label: ScenarioLabel,
    pub seed: u64,
    /// Topology with the controller (and gateway) attached.
    pub topology: TopologySpec,
    pub sessions: Vec<(NodeId, NodeId)>,
    pub qkd: QkdParams,
    pub kms: KmParams,
    pub ne: NeParams,
    pub channel: ChannelParams,
    pub control: ControlParams,
    pub stop: StopAt,
    pub trace_sample: SimTime,
    pub traces: bool,
}

impl RunConfig {
    pub fn architecture(&self) -> CmArchitectureKind {
        self.label.parts().0
    }

    pub fn protocol(&self) -> RoutingProtocolKind {
        self.label.parts().1
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("setup never completed before the run stopped")]
    SetupIncomplete,
}

#[derive(Debug)]
pub(crate) enum Ev {
    QkdTick(LinkId),
    KeysReady { link: LinkId, count: u64 },
    ServiceDone(NodeId),
    Arrive { to: NodeId, msg: Box<KmMessage> },
    Resend { from: NodeId, to: NodeId, msg: Box<KmMessage> },
    NeStart(usize),
    NeWake(usize),
    NeRetry(usize),
    LinkStatus(NodeId),
    TablePush,
    TraceSample,
    Stop,
}

const CHANNEL_MODULE: ModuleId = ModuleId(u32::MAX - 1);
const NE_MODULE_BASE: u32 = 1 << 20;

pub(crate) struct World {
    cfg: RunConfig,
    controller: NodeId,
    gateway: Option<NodeId>,
    kms: Vec<Kms>,
    kms_index: HashMap<NodeId, usize>,
    neighbors: HashMap<NodeId, Vec<NodeId>>,
    links: Vec<KmLink>,
    link_of: HashMap<(NodeId, NodeId), LinkId>,
    channel: Channel,
    routes: RoutingTables,
    ctl: ControllerState,
    sessions: Vec<NeSession>,
    session_phase: Vec<SimTime>,
    transports: Vec<TransportRecord>,
    next_msg: u64,
    enc: SimTime,
    setup_done: Option<SimTime>,
    generated_at_setup: Vec<u64>,
    end: Option<SimTime>,
    traces: Option<Traces>,
}

impl World {
    fn build(cfg: RunConfig) -> Result<World, SimError> {
        let bad = |m: String| SimError::Config(m);
        cfg.topology.validate().map_err(|e| bad(e.to_string()))?;
        cfg.qkd.validate().map_err(bad)?;
        cfg.kms.validate().map_err(bad)?;
        cfg.ne.validate().map_err(bad)?;
        cfg.channel.validate().map_err(bad)?;
        cfg.control.validate().map_err(bad)?;
        let topo = &cfg.topology;
        let controller = topo
            .controller()
            .ok_or_else(|| bad("topology has no controller attached".into()))?;
        let gateway = topo.gateway();
        match (cfg.architecture(), gateway, topo.management_links.is_empty()) {
            (CmArchitectureKind::SeparatelyProtected, None, false) => {}
            (CmArchitectureKind::CmViaKms, Some(_), true) if topo.controller_link.is_some() => {}
            _ => return Err(bad("controller attachment does not match the CM architecture".into())),
        }

        let mut channel = Channel::new(cfg.channel.clone(), cfg.seed);
        let mut links = Vec::with_capacity(topo.links.len());
        let mut link_of = HashMap::new();
        for (i, spec) in topo.links.iter().enumerate() {
            let id = LinkId(i as u32);
            channel.add_link(spec).map_err(bad)?;
            let qkd = QkdModule::new(
                QkdModuleConfig {
                    link: id,
                    endpoints: (spec.a, spec.b),
                    key_rate: spec.key_rate,
                    params: cfg.qkd.clone(),
                },
                cfg.seed,
            );
            let mut link = KmLink::new(id, spec.a, spec.b, qkd, cfg.kms.storage_keys, cfg.qkd.key_size_bits);
            if cfg.traces {
                link.qkd.enable_trace();
            }
            links.push(link);
            link_of.insert(spec.ordered(), id);
        }
        for spec in topo.management_links.iter().chain(topo.controller_link.iter()) {
            channel.add_link(spec).map_err(bad)?;
        }

        let adjacency = topo.km_adjacency();
        let mut kms = Vec::new();
        let mut kms_index = HashMap::new();
        for n in topo.km_nodes() {
            let incident = topo
                .links
                .iter()
                .enumerate()
                .filter(|(_, l)| l.touches(n))
                .map(|(i, _)| LinkId(i as u32))
                .collect();
            kms_index.insert(n, kms.len());
            kms.push(Kms::new(n, incident));
        }
        let neighbors: HashMap<NodeId, Vec<NodeId>> = adjacency.into_iter().collect();
        let routes = RoutingTables::compute(topo);

        let mut phase_rng = RngStream::new(cfg.seed, "traffic-phase");
        let mut sessions = Vec::with_capacity(cfg.sessions.len());
        let mut session_phase = Vec::with_capacity(cfg.sessions.len());
        for (i, &(a, b)) in cfg.sessions.iter().enumerate() {
            let valid = |n: NodeId| topo.node(n).is_some_and(|s| matches!(s.kind, NodeKind::Access | NodeKind::Backbone));
            if a == b || !valid(a) || !valid(b) {
                return Err(bad(format!("session {a}->{b} must join two distinct key-management nodes")));
            }
            let path = routes
                .path(a, b)
                .ok_or_else(|| bad(format!("no path for session {a}->{b}")))?;
            let delay = path
                .windows(2)
                .map(|w| topo.links[link_of[&(w[0].min(w[1]), w[0].max(w[1]))].0 as usize].delay())
                .fold(SimTime::ZERO, |acc, d| acc + d);
            sessions.push(NeSession::new(i, a, b, delay, &cfg.ne));
            session_phase.push(SimTime::from_secs_f64(phase_rng.unit() * cfg.ne.phase_spread_s));
        }

        let enc = SimTime::from_millis_f64(cfg.kms.encryption_latency_ms);
        let traces = cfg.traces.then(Traces::default);
        Ok(World {
            cfg,
            controller,
            gateway,
            kms,
            kms_index,
            neighbors,
            links,
            link_of,
            channel,
            routes,
            ctl: ControllerState::default(),
            sessions,
            session_phase,
            transports: Vec::new(),
            next_msg: 0,
            enc,
            setup_done: None,
            generated_at_setup: Vec::new(),
            end: None,
            traces,
        })
    }

    fn dispatch(&mut self, k: &mut Kernel<Ev>, ev: Ev) -> Result<(), String> {
        match ev {
            Ev::QkdTick(l) => self.on_qkd_tick(k, l),
            Ev::KeysReady { link, count } => self.on_keys_ready(k, link, count),
            Ev::ServiceDone(n) => self.on_service_done(k, n),
            Ev::Arrive { to, msg } => self.on_arrive(k, to, msg),
            Ev::Resend { from, to, msg } => self.send_raw(k, from, to, msg),
            Ev::NeStart(i) | Ev::NeRetry(i) => {
                let step = self.sessions[i].advance(k.now());
                self.apply_ne_step(k, i, step)
            }
            Ev::NeWake(i) => {
                let step = self.sessions[i].on_wake(k.now());
                self.apply_ne_step(k, i, step)
            }
            Ev::LinkStatus(n) => self.on_link_status(k, n),
            Ev::TablePush => self.on_table_push(k),
            Ev::TraceSample => self.on_trace_sample(k),
            Ev::Stop => {
                k.halt();
                Ok(())
            }
        }
    }

    fn on_qkd_tick(&mut self, k: &mut Kernel<Ev>, l: LinkId) -> Result<(), String> {
        let link = &mut self.links[l.0 as usize];
        let now = k.now();
        let count = link.qkd.tick(now);
        let pp = link.qkd.post_processing();
        let interval = link.qkd.tick_interval();
        if count > 0 {
            sched(k, pp, ModuleId(l.0), Ev::KeysReady { link: l, count })?;
        }
        sched(k, interval, ModuleId(l.0), Ev::QkdTick(l))
    }

    fn on_keys_ready(&mut self, k: &mut Kernel<Ev>, l: LinkId, count: u64) -> Result<(), String> {
        let now = k.now();
        let link = &mut self.links[l.0 as usize];
        let batch = link.qkd.emit(count, now);
        // both ends keep the same keys, so the fuller store decides what is dropped
        let accept = link.stores[0].room().min(link.stores[1].room());
        link.stores[0].push_batch(&batch, accept);
        link.stores[1].push_batch(&batch, accept);
        let ends = link.ends;
        for (side, node) in ends.into_iter().enumerate() {
            self.pump(k, l, side)?;
            let idx = self.kms_index[&node];
            let stocked = self.kms[idx]
                .incident
                .iter()
                .any(|li| self.links[li.0 as usize].stores[self.links[li.0 as usize].side(node)].len() >= self.cfg.kms.setup_threshold);
            if self.kms[idx].setup_sent_at.is_none() && stocked {
                self.kms[idx].setup_sent_at = Some(now);
                self.cm_send(k, node, self.controller, crate::km::CmKind::Setup)?;
                if let Some(p) = self.cfg.kms.status_period() {
                    sched(k, p, ModuleId(node.0), Ev::LinkStatus(node))?;
                }
            }
        }
        Ok(())
    }

    fn on_link_status(&mut self, k: &mut Kernel<Ev>, n: NodeId) -> Result<(), String> {
        let idx = self.kms_index[&n];
        let levels = self.kms[idx]
            .incident
            .iter()
            .map(|l| {
                let link = &self.links[l.0 as usize];
                (*l, link.stores[link.side(n)].len())
            })
            .collect();
        self.kms[idx].stats.status_emitted += 1;
        self.cm_send(k, n, self.controller, crate::km::CmKind::LinkStatus { levels })?;
        if let Some(p) = self.cfg.kms.status_period() {
            sched(k, p, ModuleId(n.0), Ev::LinkStatus(n))?;
        }
        Ok(())
    }

    fn on_table_push(&mut self, k: &mut Kernel<Ev>) -> Result<(), String> {
        self.ctl.pushes += 1;
        let nodes: Vec<NodeId> = self.kms.iter().map(|s| s.node).collect();
        for n in nodes {
            self.cm_send(k, self.controller, n, crate::km::CmKind::TablePush)?;
        }
        if let Some(p) = self.cfg.control.update_period() {
            sched(k, p, ModuleId(self.controller.0), Ev::TablePush)?;
        }
        Ok(())
    }

    /// Runs once every node has its configuration.
    fn on_setup_complete(&mut self, k: &mut Kernel<Ev>) -> Result<(), String> {
        let now = k.now();
        self.setup_done = Some(now);
        self.generated_at_setup = self.links.iter().map(|l| l.qkd.generated()).collect();
        let end = match self.cfg.stop {
            StopAt::Total(t) => t,
            StopAt::AfterSetup(d) => now + d,
        };
        self.end = Some(end);
        k.schedule_at(end, ModuleId(self.controller.0), Ev::Stop)
            .map_err(|e| e.to_string())?;
        for i in 0..self.sessions.len() {
            // master/slave negotiation takes one round trip along the path
            let s = &mut self.sessions[i];
            let start = now + s.path_delay + s.path_delay + self.session_phase[i];
            s.start(start, end);
            k.schedule_at(start, ModuleId(NE_MODULE_BASE + i as u32), Ev::NeStart(i))
                .map_err(|e| e.to_string())?;
        }
        if self.traces.is_some() {
            sched(k, SimTime::ZERO, CHANNEL_MODULE, Ev::TraceSample)?;
        }
        Ok(())
    }

    fn on_trace_sample(&mut self, k: &mut Kernel<Ev>) -> Result<(), String> {
        let now = k.now();
        let Some(tr) = self.traces.as_mut() else {
            return Ok(());
        };
        for s in &self.kms {
            let stored: u64 = s
                .incident
                .iter()
                .map(|l| {
                    let link = &self.links[l.0 as usize];
                    link.stores[link.side(s.node)].len()
                })
                .sum();
            tr.queue.push(QueueSample {
                at: now,
                node: s.node,
                held: s.held,
                held_cm: s.held_cm,
                stored_keys: stored,
            });
        }
        if self.end.is_some_and(|e| now + self.cfg.trace_sample <= e) {
            sched(k, self.cfg.trace_sample, CHANNEL_MODULE, Ev::TraceSample)?;
        }
        Ok(())
    }
}

pub(crate) fn sched(k: &mut Kernel<Ev>, delay: SimTime, target: ModuleId, ev: Ev) -> Result<(), String> {
    k.schedule(delay, target, ev).map(|_| ()).map_err(|e| e.to_string())
}

/// Runs one simulation to completion.
pub fn run(cfg: RunConfig) -> Result<RunResult, SimError> {
    let started = std::time::Instant::now();
    let mut world = World::build(cfg)?;
    let mut kernel: Kernel<Ev> = Kernel::new();
    for l in 0..world.links.len() {
        let link = &world.links[l];
        let first = link.qkd.tick_interval();
        kernel.schedule(first, ModuleId(l as u32), Ev::QkdTick(LinkId(l as u32)))?;
    }
    let horizon = match world.cfg.stop {
        StopAt::Total(t) => t,
        StopAt::AfterSetup(_) => SimTime::MAX,
    };
    let report = kernel.run(horizon, |k, ev| world.dispatch(k, ev.payload))?;
    if world.setup_done.is_none() {
        return Err(SimError::SetupIncomplete);
    }
    Ok(world.finish(report.processed, started.elapsed()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{attach_controller, padua_topology};

    pub(crate) fn padua_config(label: ScenarioLabel, effective_s: u64) -> RunConfig {
        let (arch, _) = label.parts();
        let gateway_at = NodeId(6);
        let topology = attach_controller(&padua_topology(), arch, gateway_at).unwrap();
        RunConfig {
            label,
            seed: 42,
            topology,
            sessions: vec![(NodeId(1), NodeId(6))],
            qkd: QkdParams::default(),
            kms: KmParams::default(),
            ne: NeParams {
                phase_spread_s: 0.0,
                ..NeParams::default()
            },
            channel: ChannelParams::default(),
            control: ControlParams::default(),
            stop: StopAt::AfterSetup(SimTime::from_secs(effective_s)),
            trace_sample: SimTime::from_secs(1),
            traces: false,
        }
    }

    #[test]
    fn padua_short_run_conserves_keys() {
        let r = run(padua_config(ScenarioLabel::B, 10)).unwrap();
        assert!(r.conservation_violations().is_empty(), "{:?}", r.conservation_violations());
        assert!(r.sessions[0].stats.rx > 0);
        assert_eq!(r.cm.keys_consumed, 0);
    }

    #[test]
    fn cm_via_kms_charges_control_keys() {
        let r = run(padua_config(ScenarioLabel::D, 10)).unwrap();
        assert!(r.conservation_violations().is_empty(), "{:?}", r.conservation_violations());
        assert!(r.cm.keys_consumed > 0);
        assert_eq!(r.cm.keys_consumed, r.cm.trace_keys);
        assert_eq!(r.cm.keys_consumed, r.cm.km_hop_sum);
    }

    #[test]
    fn missing_controller_is_a_config_error() {
        let mut cfg = padua_config(ScenarioLabel::A, 1);
        cfg.topology = padua_topology();
        assert!(matches!(run(cfg), Err(SimError::Config(_))));
    }
}
