//! Message flow between KMSs, the controller and the NEs.

use crate::app::NeStep;
use crate::channel::Transmit;
use crate::control::{CmArchitectureKind, CmLogEntry, RoutingProtocolKind};
use crate::kernel::{Kernel, ModuleId, SimTime};
use crate::km::{cm_needs_fresh_key, Body, CmKind, Hop, HopKey, Job, KmMessage, Route, TransportId, TransportRecord};
use crate::topology::{LinkId, NodeId};

use super::{sched, Ev, World, CHANNEL_MODULE, NE_MODULE_BASE};

impl World {
    fn new_message(&mut self, origin: NodeId, destination: NodeId, body: Body, route: Route, at: SimTime) -> Box<KmMessage> {
        let id = self.next_msg;
        self.next_msg += 1;
        Box::new(KmMessage {
            id,
            origin,
            destination,
            body,
            route,
            created_at: at,
            hops: 0,
            hop_key: None,
        })
    }

    fn via_kms(&self) -> bool {
        self.cfg.architecture() == CmArchitectureKind::CmViaKms
    }

    fn link_between(&self, a: NodeId, b: NodeId) -> Option<LinkId> {
        self.link_of.get(&(a.min(b), a.max(b))).copied()
    }

    fn adjust_held(&mut self, node: NodeId, now: SimTime, delta: i64, cm: bool) {
        if let Some(&i) = self.kms_index.get(&node) {
            self.kms[i].adjust_held(now, self.setup_done, delta, cm);
        }
    }

    /// Sends a control message from a node agent or the controller.
    pub(super) fn cm_send(&mut self, k: &mut Kernel<Ev>, from: NodeId, to: NodeId, kind: CmKind) -> Result<(), String> {
        let now = k.now();
        let log = self.ctl.log.len();
        self.ctl.log.push(CmLogEntry::new(kind.name(), from, to, now));
        let msg = self.new_message(from, to, Body::Cm { kind, log }, Route::Control, now);
        if !self.via_kms() || from == self.controller {
            // management star, or the controller's own link to the gateway
            let first = if self.via_kms() {
                self.gateway.ok_or("CM-via-KMS without a gateway")?
            } else {
                to
            };
            self.ctl.log[log].path.push(first);
            return self.send_raw(k, from, first, msg);
        }
        self.km_submit(k, from, msg)
    }

    /// Next hop for a message held at `node`.
    fn next_hop(&self, node: NodeId, msg: &KmMessage) -> Result<Hop, String> {
        let to_km = |peer: NodeId| -> Result<Hop, String> {
            self.link_between(node, peer)
                .map(|l| Hop::Km(l, peer))
                .ok_or_else(|| format!("{node}->{peer} is not a key-management link"))
        };
        match &msg.route {
            Route::Source { path, pos } => {
                let peer = *path
                    .get(pos + 1)
                    .ok_or_else(|| format!("source route exhausted at {node}"))?;
                to_km(peer)
            }
            Route::Table => {
                let peer = self.kms[self.kms_index[&node]]
                    .table
                    .as_ref()
                    .and_then(|t| t.get(&msg.destination).copied())
                    .ok_or_else(|| format!("no table route from {node} to {}", msg.destination))?;
                to_km(peer)
            }
            Route::Control => {
                if msg.destination == self.controller {
                    let gw = self.gateway.ok_or("control route without a gateway")?;
                    if node == gw {
                        return Ok(Hop::Controller(self.controller));
                    }
                    to_km(self.routes.next_hop(node, gw).ok_or("gateway unreachable")?)
                } else {
                    to_km(
                        self.routes
                            .next_hop(node, msg.destination)
                            .ok_or_else(|| format!("{} unreachable from {node}", msg.destination))?,
                    )
                }
            }
        }
    }

    /// A message is now held by the KMS at `node` and must move on.
    fn km_submit(&mut self, k: &mut Kernel<Ev>, node: NodeId, msg: Box<KmMessage>) -> Result<(), String> {
        let hop = match self.next_hop(node, &msg) {
            Ok(h) => h,
            Err(e) => {
                if let Body::KeyTransport { transport, .. } = msg.body {
                    return self.fail_transport(k, transport);
                }
                return Err(e);
            }
        };
        self.adjust_held(node, k.now(), 1, msg.is_cm());
        match hop {
            Hop::Controller(_) => self.server_push(k, node, Job { msg, hop }),
            Hop::Km(l, _) => {
                let needs_key = match msg.body {
                    Body::KeyTransport { .. } | Body::Cm { .. } => true,
                    Body::TransportAck { .. } => self.cfg.kms.ack_consumes_key,
                };
                if !needs_key {
                    return self.server_push(k, node, Job { msg, hop });
                }
                let link = &mut self.links[l.0 as usize];
                let side = link.side(node);
                link.waiting[side].push_back(msg);
                self.pump(k, l, side)
            }
        }
    }

    /// Moves messages waiting on one direction of a link to the sender's
    /// processor while keys of the sender's parity last.
    pub(super) fn pump(&mut self, k: &mut Kernel<Ev>, l: LinkId, side: usize) -> Result<(), String> {
        let ratio = self.cfg.control.cm_packet_to_key_ratio;
        let bundled = self.cfg.kms.bundled;
        loop {
            let link = &mut self.links[l.0 as usize];
            let Some(front) = link.waiting[side].front() else {
                return Ok(());
            };
            let (need, fresh) = match front.body {
                Body::KeyTransport { bundle, .. } => (if bundled { 1 } else { u64::from(bundle) }, true),
                Body::TransportAck { .. } => (1, true),
                Body::Cm { .. } => {
                    let fresh = cm_needs_fresh_key(link.cm_sent[side], ratio);
                    (u64::from(fresh), fresh)
                }
            };
            let parity = link.encrypt_parity(side);
            if link.stores[side].available(parity) < need {
                return Ok(());
            }
            let mut msg = link.waiting[side].pop_front().expect("front exists");
            let ids: Vec<u64> = (0..need)
                .map(|_| link.stores[side].take(parity).map(|key| key.id))
                .collect::<Option<_>>()
                .ok_or("key vanished from store")?;
            match &msg.body {
                Body::KeyTransport { .. } => link.transport_keys += need,
                Body::TransportAck { .. } => link.ack_keys += need,
                Body::Cm { log, .. } => {
                    link.cm_keys += need;
                    link.cm_sent[side] += 1;
                    self.ctl.log[*log].keys += need;
                }
            }
            let node = link.ends[side];
            let peer = link.ends[1 - side];
            msg.hop_key = Some(HopKey { link: l, ids, fresh });
            self.server_push(k, node, Job { msg, hop: crate::km::Hop::Km(l, peer) })?;
        }
    }

    /// Queues a message at the node's serial encryption processor.
    fn server_push(&mut self, k: &mut Kernel<Ev>, node: NodeId, job: Job) -> Result<(), String> {
        if let Body::Cm { log, .. } = job.msg.body {
            let next = match job.hop {
                Hop::Km(_, p) | Hop::Controller(p) => p,
            };
            self.ctl.log[log].path.push(next);
        }
        let s = &mut self.kms[self.kms_index[&node]];
        s.server.push_back(job);
        if !s.busy {
            s.busy = true;
            sched(k, self.enc, ModuleId(node.0), Ev::ServiceDone(node))?;
        }
        Ok(())
    }

    pub(super) fn on_service_done(&mut self, k: &mut Kernel<Ev>, node: NodeId) -> Result<(), String> {
        let idx = self.kms_index[&node];
        let job = self.kms[idx].server.pop_front().ok_or("service completion with an empty queue")?;
        if self.kms[idx].server.is_empty() {
            self.kms[idx].busy = false;
        } else {
            sched(k, self.enc, ModuleId(node.0), Ev::ServiceDone(node))?;
        }
        self.adjust_held(node, k.now(), -1, job.msg.is_cm());
        let to = match job.hop {
            Hop::Km(l, peer) => {
                if let Body::KeyTransport { bundle, .. } = job.msg.body {
                    let link = &mut self.links[l.0 as usize];
                    link.relayed_keys += u64::from(bundle);
                    link.relayed_bundles += 1;
                }
                peer
            }
            Hop::Controller(c) => c,
        };
        self.send_raw(k, node, to, job.msg)
    }

    /// Puts a message on the classical channel; collisions and losses retry
    /// after a random backoff.
    pub(super) fn send_raw(&mut self, k: &mut Kernel<Ev>, from: NodeId, to: NodeId, msg: Box<KmMessage>) -> Result<(), String> {
        let chan = self
            .channel
            .between(from, to)
            .ok_or_else(|| format!("no classical channel {from}-{to}"))?;
        match self.channel.transmit(chan, from, k.now()) {
            Transmit::Deliver(at) => k
                .schedule_at(at, ModuleId(to.0), Ev::Arrive { to, msg })
                .map(|_| ())
                .map_err(|e| e.to_string()),
            Transmit::Collision | Transmit::Lost => {
                let wait = self.channel.backoff();
                sched(k, wait, CHANNEL_MODULE, Ev::Resend { from, to, msg })
            }
        }
    }

    pub(super) fn on_arrive(&mut self, k: &mut Kernel<Ev>, to: NodeId, mut msg: Box<KmMessage>) -> Result<(), String> {
        if let Some(hk) = msg.hop_key.take() {
            if hk.fresh {
                let link = &mut self.links[hk.link.0 as usize];
                let side = link.side(to);
                for id in hk.ids {
                    link.stores[side]
                        .take_id(id)
                        .ok_or_else(|| format!("key {id} of link {} missing at {to}", hk.link.0))?;
                }
            }
        }
        msg.hops += 1;
        if let Route::Source { pos, .. } = &mut msg.route {
            *pos += 1;
        }
        if to == self.controller {
            return self.controller_receive(k, *msg);
        }
        if msg.destination == to {
            return self.deliver(k, to, *msg);
        }
        if let Some(i) = self.kms_index.get(&to) {
            self.kms[*i].stats.messages_forwarded += 1;
        }
        self.km_submit(k, to, msg)
    }

    fn deliver(&mut self, k: &mut Kernel<Ev>, node: NodeId, msg: KmMessage) -> Result<(), String> {
        let now = k.now();
        match msg.body {
            Body::KeyTransport { transport, .. } => {
                let rec = &mut self.transports[transport.0 as usize];
                rec.delivered_at = Some(now);
                let route = match msg.route {
                    Route::Source { mut path, .. } => {
                        path.reverse();
                        Route::Source { path, pos: 0 }
                    }
                    other => other,
                };
                let ack = self.new_message(node, msg.origin, Body::TransportAck { transport }, route, now);
                self.km_submit(k, node, ack)
            }
            Body::TransportAck { transport } => {
                let rec = &mut self.transports[transport.0 as usize];
                rec.acked_at = Some(now);
                let (session, bundle) = (rec.session, rec.bundle);
                self.kms[self.kms_index[&node]].stats.transports_completed += 1;
                let step = self.sessions[session].install(u64::from(bundle), now);
                self.apply_ne_step(k, session, step)
            }
            Body::Cm { kind, log } => {
                self.ctl.log[log].delivered_at = Some(now);
                self.agent_receive(k, node, kind)
            }
        }
    }

    /// Control message delivered to a node's agent.
    fn agent_receive(&mut self, k: &mut Kernel<Ev>, node: NodeId, kind: CmKind) -> Result<(), String> {
        let now = k.now();
        let idx = self.kms_index[&node];
        match kind {
            CmKind::Init => {
                if self.cfg.protocol() == RoutingProtocolKind::Proactive {
                    let table = self.routes.table_for(node);
                    self.kms[idx].install_table(table, &self.neighbors[&node])?;
                }
                if self.kms[idx].configured_at.is_none() {
                    self.kms[idx].configured_at = Some(now);
                    if self.setup_done.is_none() && self.kms.iter().all(|s| s.configured_at.is_some()) {
                        self.on_setup_complete(k)?;
                    }
                }
                Ok(())
            }
            CmKind::TablePush => {
                self.kms[idx].stats.pushes_received += 1;
                if self.cfg.protocol() == RoutingProtocolKind::Proactive {
                    let table = self.routes.table_for(node);
                    self.kms[idx].install_table(table, &self.neighbors[&node])?;
                }
                Ok(())
            }
            CmKind::VectorReply { transport, path } => {
                self.adjust_held(node, now, -1, false);
                match path {
                    Some(path) => {
                        let rec = &self.transports[transport.0 as usize];
                        let (dst, bundle, at) = (rec.dst, rec.bundle, rec.requested_at);
                        let msg = self.new_message(
                            node,
                            dst,
                            Body::KeyTransport { transport, bundle },
                            Route::Source { path, pos: 0 },
                            at,
                        );
                        self.km_submit(k, node, msg)
                    }
                    None => self.fail_transport(k, transport),
                }
            }
            other => Err(format!("node {node} cannot handle control message {}", other.name())),
        }
    }

    fn controller_receive(&mut self, k: &mut Kernel<Ev>, msg: KmMessage) -> Result<(), String> {
        let now = k.now();
        let Body::Cm { kind, log } = msg.body else {
            return Err(format!("controller received a non-control message from {}", msg.origin));
        };
        self.ctl.log[log].delivered_at = Some(now);
        match kind {
            CmKind::Setup => {
                self.ctl.ready.entry(msg.origin).or_insert(now);
                if self.ctl.init_sent_at.is_none() && self.ctl.ready.len() == self.kms.len() {
                    self.ctl.init_sent_at = Some(now);
                    let nodes: Vec<NodeId> = self.kms.iter().map(|s| s.node).collect();
                    for n in nodes {
                        self.cm_send(k, self.controller, n, CmKind::Init)?;
                    }
                    if self.cfg.protocol() == RoutingProtocolKind::Proactive {
                        self.ctl.pushes += 1;
                        if let Some(p) = self.cfg.control.update_period() {
                            sched(k, p, ModuleId(self.controller.0), Ev::TablePush)?;
                        }
                    }
                }
                Ok(())
            }
            CmKind::LinkStatus { .. } => {
                self.ctl.status_received += 1;
                Ok(())
            }
            CmKind::VectorRequest { transport, dst } => {
                self.ctl.vectors_served += 1;
                let path = self.routes.path(msg.origin, dst);
                self.cm_send(k, self.controller, msg.origin, CmKind::VectorReply { transport, path })
            }
            other => Err(format!("controller cannot handle {}", other.name())),
        }
    }

    pub(super) fn apply_ne_step(&mut self, k: &mut Kernel<Ev>, i: usize, step: NeStep) -> Result<(), String> {
        if let Some(at) = step.wake_at {
            k.schedule_at(at, ModuleId(NE_MODULE_BASE + i as u32), Ev::NeWake(i))
                .map_err(|e| e.to_string())?;
        }
        if step.request {
            self.request_transport(k, i)?;
        }
        Ok(())
    }

    fn request_transport(&mut self, k: &mut Kernel<Ev>, session: usize) -> Result<(), String> {
        let now = k.now();
        let s = &self.sessions[session];
        let (src, dst, bundle) = (s.node, s.peer, s.bundle);
        let transport = TransportId(self.transports.len() as u64);
        self.transports.push(TransportRecord {
            session,
            src,
            dst,
            bundle,
            requested_at: now,
            delivered_at: None,
            acked_at: None,
        });
        let idx = self.kms_index[&src];
        self.kms[idx].stats.transports_started += 1;
        match self.cfg.protocol() {
            RoutingProtocolKind::Proactive => {
                let msg = self.new_message(src, dst, Body::KeyTransport { transport, bundle }, Route::Table, now);
                self.km_submit(k, src, msg)
            }
            RoutingProtocolKind::Reactive => {
                // the transport waits at the source until the vector comes back
                self.adjust_held(src, now, 1, false);
                self.kms[idx].stats.vectors_requested += 1;
                self.cm_send(k, src, self.controller, CmKind::VectorRequest { transport, dst })
            }
        }
    }

    fn fail_transport(&mut self, k: &mut Kernel<Ev>, transport: TransportId) -> Result<(), String> {
        let rec = &self.transports[transport.0 as usize];
        let (session, src) = (rec.session, rec.src);
        self.kms[self.kms_index[&src]].stats.transports_failed += 1;
        self.sessions[session].request_failed();
        let wait = SimTime::from_secs_f64(self.cfg.ne.retry_after_s);
        sched(k, wait, ModuleId(NE_MODULE_BASE + session as u32), Ev::NeRetry(session))
    }
}
