use std::collections::VecDeque;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::event::EventQueue;
use super::mac::{overlaps, MacParams};
use super::radio::{RadioParams, SPEED_OF_LIGHT};
use super::{Action, Agent, AppPacket, Ctx, Frame, FrameClass};
use crate::metrics::{DropReason, PacketLedger};
use crate::mobility::PositionTable;
use crate::NodeId;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineConfig {
    pub radio: RadioParams,
    pub mac: MacParams,
    pub end_time: f64,
    pub trace: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub t: f64,
    pub node: u16,
    pub event: &'static str,
    pub frame: &'static str,
    pub packet: Option<u32>,
    pub peer: Option<u16>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EngineStats {
    pub events: u64,
    pub transmissions: u64,
    pub collisions: u64,
    pub mac_failures: u64,
    pub queue_drops: u64,
}

pub struct RunOutput {
    pub ledger: PacketLedger,
    pub trace: Vec<TraceRecord>,
    pub stats: EngineStats,
}

enum Ev {
    Start(usize),
    App(AppPacket),
    Attempt { node: usize, epoch: u64 },
    TxEnd(u64),
    Rx { tx: u64, node: usize },
    Ack { node: usize, tx: u64, ok: bool },
    Timer { node: usize, token: u64 },
}

struct Tx<M> {
    sender: usize,
    start: f64,
    end: f64,
    frame: Frame<M>,
    /// Live nodes in range at the start, sorted, with propagation delays.
    reach: Vec<(u16, f64)>,
}

impl<M> Tx<M> {
    fn delay_to(&self, node: usize) -> Option<f64> {
        self.reach
            .binary_search_by_key(&(node as u16), |&(n, _)| n)
            .ok()
            .map(|i| self.reach[i].1)
    }
}

struct MacState<M> {
    queue: VecDeque<Frame<M>>,
    serving: bool,
    idle_from: f64,
    backoff: Option<u32>,
    cw: u32,
    retries: u32,
    epoch: u64,
    current_tx: Option<u64>,
}

impl<M> MacState<M> {
    fn new(cw: u32) -> Self {
        Self {
            queue: VecDeque::new(),
            serving: false,
            idle_from: 0.0,
            backoff: None,
            cw,
            retries: 0,
            epoch: 0,
            current_tx: None,
        }
    }
}

/// Runs a set of agents, one per node, over the shared channel.
pub struct Engine<A: Agent> {
    cfg: EngineConfig,
    range: f64,
    ack_timeout: f64,
    queue: EventQueue<Ev>,
    agents: Vec<A>,
    rngs: Vec<ChaCha8Rng>,
    macs: Vec<MacState<A::Msg>>,
    alive: Vec<bool>,
    positions: Arc<PositionTable>,
    log: VecDeque<Tx<A::Msg>>,
    first_tx: u64,
    ledger: PacketLedger,
    trace: Vec<TraceRecord>,
    stats: EngineStats,
}

impl<A: Agent> Engine<A> {
    /// `seed` drives the per-node backoff and jitter streams.
    pub fn new(
        cfg: EngineConfig,
        positions: Arc<PositionTable>,
        agents: Vec<A>,
        failed: &[NodeId],
        ledger: PacketLedger,
        packets: &[AppPacket],
        seed: u64,
    ) -> Self {
        let n = agents.len();
        assert_eq!(n, positions.node_count(), "one agent per tabulated node");
        let mut alive = vec![true; n];
        for f in failed {
            if let Some(a) = alive.get_mut(f.index()) {
                *a = false;
            }
        }
        let rngs = (0..n)
            .map(|i| {
                let mut r = ChaCha8Rng::seed_from_u64(seed);
                r.set_stream(i as u64 + 1);
                r
            })
            .collect();
        let range = cfg.radio.comm_range();
        let mut queue = EventQueue::new();
        for (i, &a) in alive.iter().enumerate() {
            if a {
                queue.schedule(0.0, Ev::Start(i)).expect("start at zero");
            }
        }
        for p in packets {
            queue.schedule(p.generated_at.max(0.0), Ev::App(*p)).expect("non-negative time");
        }
        Self {
            cfg,
            range,
            ack_timeout: 2.0 * range / SPEED_OF_LIGHT + 1e-6,
            queue,
            agents,
            rngs,
            macs: (0..n).map(|_| MacState::new(cfg.mac.cw_min)).collect(),
            alive,
            positions,
            log: VecDeque::new(),
            first_tx: 0,
            ledger,
            trace: Vec::new(),
            stats: EngineStats::default(),
        }
    }

    pub fn run(mut self) -> RunOutput {
        while let Some(t) = self.queue.peek_time() {
            if t > self.cfg.end_time {
                break;
            }
            let Some((_, ev)) = self.queue.pop() else { break };
            self.stats.events += 1;
            self.handle(ev);
        }
        self.ledger.finalize();
        RunOutput { ledger: self.ledger, trace: self.trace, stats: self.stats }
    }

    fn now(&self) -> f64 {
        self.queue.now()
    }

    fn schedule(&mut self, at: f64, ev: Ev) {
        let at = at.max(self.now());
        self.queue.schedule(at, ev).expect("clamped to the present");
    }

    fn note(&mut self, node: usize, event: &'static str, class: FrameClass, packet: Option<crate::PacketId>, peer: Option<NodeId>) {
        if self.cfg.trace {
            self.trace.push(TraceRecord {
                t: self.now(),
                node: node as u16,
                event,
                frame: class.label(),
                packet: packet.map(|p| p.0),
                peer: peer.map(|p| p.0),
            });
        }
    }

    fn handle(&mut self, ev: Ev) {
        match ev {
            Ev::Start(node) => self.with_agent(node, |a, ctx| a.on_start(ctx)),
            Ev::App(p) => {
                if self.alive[p.src.index()] {
                    self.with_agent(p.src.index(), |a, ctx| a.on_app_packet(ctx, p));
                } else {
                    self.ledger.mark_dropped(p.id, DropReason::Lost);
                }
            }
            Ev::Attempt { node, epoch } => self.attempt(node, epoch),
            Ev::TxEnd(id) => self.tx_end(id),
            Ev::Rx { tx, node } => self.receive(tx, node),
            Ev::Ack { node, tx, ok } => self.ack(node, tx, ok),
            Ev::Timer { node, token } => self.with_agent(node, |a, ctx| a.on_timer(ctx, token)),
        }
    }

    fn with_agent(&mut self, node: usize, f: impl FnOnce(&mut A, &mut Ctx<'_, A::Msg>)) {
        let now = self.now();
        let actions = {
            let mut ctx = Ctx::new(now, NodeId(node as u16), &mut self.rngs[node]);
            f(&mut self.agents[node], &mut ctx);
            ctx.actions
        };
        for action in actions {
            self.apply(node, action);
        }
    }

    fn apply(&mut self, node: usize, action: Action<A::Msg>) {
        match action {
            Action::Send(mut frame) => {
                frame.sender = NodeId(node as u16);
                if let FrameClass::Control(kind) = frame.class {
                    let now = self.now();
                    self.ledger.record_control(kind, frame.bytes + self.cfg.mac.header_bytes, now);
                }
                self.enqueue(node, frame);
            }
            Action::Timer { at, token } => self.schedule(at, Ev::Timer { node, token }),
            Action::Delivered(id) => {
                let now = self.now();
                self.ledger.mark_delivered(id, now);
                self.note(node, "deliver", FrameClass::Data, Some(id), None);
            }
            Action::Dropped(id, reason) => {
                self.ledger.mark_dropped(id, reason);
                let label = match reason {
                    DropReason::Proactive => "drop_proactive",
                    DropReason::Expired => "drop_expired",
                    DropReason::Lost => "drop_lost",
                };
                self.note(node, label, FrameClass::Data, Some(id), None);
            }
        }
    }

    fn enqueue(&mut self, node: usize, frame: Frame<A::Msg>) {
        if !self.alive[node] {
            return;
        }
        if self.macs[node].queue.len() >= self.cfg.mac.queue_capacity {
            self.stats.queue_drops += 1;
            if let Some(id) = frame.tag {
                self.ledger.mark_dropped(id, DropReason::Lost);
            }
            self.note(node, "queue_drop", frame.class, frame.tag, frame.next_hop);
            return;
        }
        self.macs[node].queue.push_back(frame);
        if !self.macs[node].serving {
            self.start_service(node, false);
        }
    }

    fn start_service(&mut self, node: usize, after_tx: bool) {
        let now = self.now();
        loop {
            let Some(front) = self.macs[node].queue.front() else {
                self.macs[node].serving = false;
                return;
            };
            let stale = match (front.class, front.tag) {
                (FrameClass::Data, Some(id)) => now > self.ledger.packet(id).expires_at,
                _ => false,
            };
            if !stale {
                break;
            }
            let f = self.macs[node].queue.pop_front().expect("front exists");
            if let Some(id) = f.tag {
                self.ledger.mark_dropped(id, DropReason::Expired);
            }
            self.note(node, "stale_drop", f.class, f.tag, f.next_hop);
        }
        let cw_min = self.cfg.mac.cw_min;
        let backoff = after_tx.then(|| self.rngs[node].gen_range(0..=cw_min));
        let at = now + self.cfg.mac.difs + backoff.unwrap_or(0) as f64 * self.cfg.mac.slot;
        let mac = &mut self.macs[node];
        mac.serving = true;
        mac.retries = 0;
        mac.cw = cw_min;
        mac.backoff = backoff;
        mac.idle_from = now;
        mac.current_tx = None;
        mac.epoch += 1;
        let epoch = mac.epoch;
        self.schedule(at, Ev::Attempt { node, epoch });
    }

    /// Carrier sense over `[from, to)`: earliest start and latest end of the
    /// activity heard there.
    fn sense(&self, node: usize, from: f64, to: f64) -> Option<(f64, f64)> {
        let cca = self.cfg.mac.cca_delay;
        let mut busy: Option<(f64, f64)> = None;
        for tx in &self.log {
            if tx.sender == node {
                continue;
            }
            let Some(d) = tx.delay_to(node) else { continue };
            let (s, e) = (tx.start + d + cca, tx.end + d);
            if s < e && overlaps(s, e, from, to) {
                busy = Some(match busy {
                    None => (s, e),
                    Some((a, b)) => (a.min(s), b.max(e)),
                });
            }
        }
        busy
    }

    fn attempt(&mut self, node: usize, epoch: u64) {
        let mac = &self.macs[node];
        if !mac.serving || mac.epoch != epoch || mac.current_tx.is_some() {
            return;
        }
        let now = self.now();
        let idle_from = mac.idle_from;
        match self.sense(node, idle_from, now) {
            None => self.transmit(node),
            Some((busy_start, busy_end)) => {
                let p = self.cfg.mac;
                let k = match self.macs[node].backoff {
                    None => {
                        let cw = self.macs[node].cw;
                        self.rngs[node].gen_range(0..=cw)
                    }
                    Some(k) => {
                        let counted = ((busy_start.max(idle_from) - idle_from - p.difs) / p.slot).floor();
                        k - (counted.max(0.0) as u32).min(k)
                    }
                };
                let mac = &mut self.macs[node];
                mac.backoff = Some(k);
                mac.idle_from = busy_end.max(idle_from);
                mac.epoch += 1;
                let (epoch, at) = (mac.epoch, mac.idle_from + p.difs + k as f64 * p.slot);
                self.schedule(at, Ev::Attempt { node, epoch });
            }
        }
    }

    fn transmit(&mut self, node: usize) {
        let now = self.now();
        let frame = self.macs[node].queue.front().expect("serving a frame").clone();
        let airtime = self.cfg.radio.airtime(frame.bytes + self.cfg.mac.header_bytes);
        let here = self.positions.position(NodeId(node as u16), now);
        let mut reach = Vec::new();
        for j in 0..self.alive.len() {
            if j == node || !self.alive[j] {
                continue;
            }
            let d = (self.positions.position(NodeId(j as u16), now) - here).norm();
            if d <= self.range {
                reach.push((j as u16, d / SPEED_OF_LIGHT));
            }
        }
        self.prune(now);
        let id = self.first_tx + self.log.len() as u64;
        let end = now + airtime;
        self.note(node, "tx", frame.class, frame.tag, frame.next_hop);
        self.stats.transmissions += 1;
        match frame.next_hop {
            Some(dst) => match reach.iter().find(|&&(j, _)| j == dst.0) {
                Some(&(_, d)) => self.schedule(end + d, Ev::Rx { tx: id, node: dst.index() }),
                None => self.schedule(end + self.ack_timeout, Ev::Ack { node, tx: id, ok: false }),
            },
            None => {
                for &(j, d) in &reach {
                    self.schedule(end + d, Ev::Rx { tx: id, node: j as usize });
                }
            }
        }
        self.schedule(end, Ev::TxEnd(id));
        let first = (self.macs[node].retries == 0).then(|| frame.clone());
        self.log.push_back(Tx { sender: node, start: now, end, frame, reach });
        let mac = &mut self.macs[node];
        mac.current_tx = Some(id);
        mac.backoff = None;
        if let Some(f) = first {
            self.with_agent(node, |a, ctx| a.on_transmit(ctx, &f));
        }
    }

    fn prune(&mut self, now: f64) {
        let keep = 2.0 * self.ack_timeout + 1e-3;
        while self.log.front().is_some_and(|tx| tx.end + keep < now) {
            self.log.pop_front();
            self.first_tx += 1;
        }
    }

    fn tx(&self, id: u64) -> Option<&Tx<A::Msg>> {
        id.checked_sub(self.first_tx).and_then(|i| self.log.get(i as usize))
    }

    fn tx_end(&mut self, id: u64) {
        let Some(tx) = self.tx(id) else { return };
        if tx.frame.next_hop.is_none() {
            let node = tx.sender;
            self.finish(node, id);
        }
    }

    fn finish(&mut self, node: usize, id: u64) {
        let mac = &mut self.macs[node];
        if mac.current_tx != Some(id) {
            return;
        }
        mac.queue.pop_front();
        mac.current_tx = None;
        self.start_service(node, true);
    }

    fn collided(&self, id: u64, node: usize, arrive: f64, leave: f64) -> bool {
        self.log.iter().enumerate().any(|(i, k)| {
            if self.first_tx + i as u64 == id {
                return false;
            }
            if k.sender == node {
                return overlaps(k.start, k.end, arrive, leave);
            }
            match k.delay_to(node) {
                Some(d) => overlaps(k.start + d, k.end + d, arrive, leave),
                None => false,
            }
        })
    }

    fn receive(&mut self, id: u64, node: usize) {
        let Some(tx) = self.tx(id) else { return };
        let d = tx.delay_to(node).unwrap_or(0.0);
        let (sender, end) = (tx.sender, tx.end);
        let ok = self.alive[node] && !self.collided(id, node, tx.start + d, tx.end + d);
        let frame = tx.frame.clone();
        let unicast = frame.next_hop.is_some();
        if ok {
            self.note(node, "rx", frame.class, frame.tag, Some(frame.sender));
            if unicast {
                let at = self.now() + d;
                self.schedule(at, Ev::Ack { node: sender, tx: id, ok: true });
            }
            self.with_agent(node, |a, ctx| a.on_frame(ctx, &frame));
        } else {
            self.stats.collisions += 1;
            self.note(node, "collision", frame.class, frame.tag, Some(frame.sender));
            if unicast {
                let at = end + self.ack_timeout;
                self.schedule(at, Ev::Ack { node: sender, tx: id, ok: false });
            }
        }
    }

    fn ack(&mut self, node: usize, id: u64, ok: bool) {
        if self.macs[node].current_tx != Some(id) {
            return;
        }
        if ok {
            self.finish(node, id);
            return;
        }
        let p = self.cfg.mac;
        self.macs[node].retries += 1;
        if self.macs[node].retries > p.max_retries {
            self.stats.mac_failures += 1;
            let mac = &mut self.macs[node];
            let frame = mac.queue.pop_front().expect("frame in service");
            mac.current_tx = None;
            mac.serving = false;
            self.note(node, "mac_fail", frame.class, frame.tag, frame.next_hop);
            self.with_agent(node, |a, ctx| a.on_mac_failure(ctx, frame));
            if !self.macs[node].serving {
                self.start_service(node, true);
            }
            return;
        }
        let now = self.now();
        let cw = p.next_cw(self.macs[node].cw);
        let k = self.rngs[node].gen_range(0..=cw);
        let mac = &mut self.macs[node];
        mac.cw = cw;
        mac.backoff = Some(k);
        mac.idle_from = now;
        mac.current_tx = None;
        mac.epoch += 1;
        let epoch = mac.epoch;
        self.schedule(now + p.difs + k as f64 * p.slot, Ev::Attempt { node, epoch });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::Vec3;
    use crate::metrics::Outcome;
    use crate::mobility::ScenarioPhases;
    use crate::PacketId;

    /// Sends every packet straight to its destination, which must be a
    /// neighbour; broadcasts a beacon when asked.
    struct Direct {
        beacon_at: Option<f64>,
        heard: Vec<NodeId>,
        failures: usize,
    }

    impl Agent for Direct {
        type Msg = ();

        fn on_start(&mut self, ctx: &mut Ctx<'_, ()>) {
            if let Some(t) = self.beacon_at {
                ctx.set_timer(t, 1);
            }
        }

        fn on_app_packet(&mut self, ctx: &mut Ctx<'_, ()>, p: AppPacket) {
            ctx.unicast(p.dst, p.payload_bytes, FrameClass::Data, Some(p.id), ());
        }

        fn on_frame(&mut self, ctx: &mut Ctx<'_, ()>, f: &Frame<()>) {
            self.heard.push(f.sender);
            if let Some(id) = f.tag {
                ctx.delivered(id);
            }
        }

        fn on_mac_failure(&mut self, ctx: &mut Ctx<'_, ()>, f: Frame<()>) {
            self.failures += 1;
            if let Some(id) = f.tag {
                ctx.dropped(id, DropReason::Lost);
            }
        }

        fn on_timer(&mut self, ctx: &mut Ctx<'_, ()>, _token: u64) {
            ctx.broadcast(20, FrameClass::Control(crate::metrics::ControlKind::Hello), ());
        }
    }

    fn agents(n: usize) -> Vec<Direct> {
        (0..n).map(|_| Direct { beacon_at: None, heard: vec![], failures: 0 }).collect()
    }

    fn table(points: &[Vec3]) -> Arc<PositionTable> {
        Arc::new(PositionTable::from_samples(0.1, vec![points.to_vec(); 101]))
    }

    fn cfg(trace: bool) -> EngineConfig {
        EngineConfig { radio: RadioParams::default(), mac: MacParams::default(), end_time: 10.0, trace }
    }

    fn packet(ledger: &mut PacketLedger, src: u16, dst: u16, t: f64) -> AppPacket {
        let id = ledger.register(NodeId(src), NodeId(dst), t, t + 30.0, 1000);
        AppPacket { id, src: NodeId(src), dst: NodeId(dst), generated_at: t, expires_at: t + 30.0, payload_bytes: 1000 }
    }

    #[test]
    fn single_hop_latency() {
        let pos = table(&[Vec3::zeros(), Vec3::new(1000.0, 0.0, 0.0)]);
        let mut ledger = PacketLedger::new(ScenarioPhases::default());
        let p = packet(&mut ledger, 0, 1, 1.0);
        let out = Engine::new(cfg(false), pos, agents(2), &[], ledger, &[p], 7).run();
        let rec = out.ledger.packet(PacketId(0));
        let expected = 50e-6 + 1034.0 * 8.0 / 11e6 + 1000.0 / SPEED_OF_LIGHT;
        assert!((rec.latency().unwrap() - expected).abs() < 1e-9, "{:?}", rec.latency());
    }

    #[test]
    fn out_of_range_unicast_fails_after_retries() {
        let pos = table(&[Vec3::zeros(), Vec3::new(5000.0, 0.0, 0.0)]);
        let mut ledger = PacketLedger::new(ScenarioPhases::default());
        let p = packet(&mut ledger, 0, 1, 1.0);
        let out = Engine::new(cfg(true), pos, agents(2), &[], ledger, &[p], 7).run();
        assert_eq!(out.ledger.packet(PacketId(0)).outcome, Some(Outcome::Lost));
        assert_eq!(out.stats.transmissions, 8);
        assert_eq!(out.stats.mac_failures, 1);
    }

    #[test]
    fn failed_receiver_never_receives() {
        let pos = table(&[Vec3::zeros(), Vec3::new(100.0, 0.0, 0.0)]);
        let mut ledger = PacketLedger::new(ScenarioPhases::default());
        let p = packet(&mut ledger, 0, 1, 1.0);
        let out = Engine::new(cfg(false), pos, agents(2), &[NodeId(1)], ledger, &[p], 7).run();
        assert_eq!(out.ledger.packet(PacketId(0)).outcome, Some(Outcome::Lost));
    }

    #[test]
    fn simultaneous_hidden_senders_collide() {
        // 0 and 2 cannot hear each other; both reach 1 at the same instant
        let pos = table(&[Vec3::zeros(), Vec3::new(3000.0, 0.0, 0.0), Vec3::new(6000.0, 0.0, 0.0)]);
        let mut ledger = PacketLedger::new(ScenarioPhases::default());
        let mut ag = agents(3);
        ag[0].beacon_at = Some(1.0);
        ag[2].beacon_at = Some(1.0);
        let out = Engine::new(cfg(true), pos, ag, &[], ledger.clone(), &[], 7).run();
        assert!(out.trace.iter().any(|r| r.event == "collision" && r.node == 1));
        assert!(!out.trace.iter().any(|r| r.event == "rx" && r.node == 1));
        ledger.finalize();
    }

    #[test]
    fn carrier_sense_serialises_neighbours() {
        // all within range: the second beacon defers instead of colliding
        let pos = table(&[Vec3::zeros(), Vec3::new(500.0, 0.0, 0.0), Vec3::new(1000.0, 0.0, 0.0)]);
        let mut ag = agents(3);
        ag[0].beacon_at = Some(1.0);
        ag[2].beacon_at = Some(1.0 + 30e-6);
        let ledger = PacketLedger::new(ScenarioPhases::default());
        let out = Engine::new(cfg(true), pos, ag, &[], ledger, &[], 7).run();
        assert_eq!(out.stats.collisions, 0);
        assert_eq!(out.trace.iter().filter(|r| r.event == "rx" && r.node == 1).count(), 2);
    }

    #[test]
    fn control_bytes_include_mac_header() {
        let pos = table(&[Vec3::zeros(), Vec3::new(500.0, 0.0, 0.0)]);
        let mut ag = agents(2);
        ag[0].beacon_at = Some(1.0);
        let ledger = PacketLedger::new(ScenarioPhases::default());
        let out = Engine::new(cfg(false), pos, ag, &[], ledger, &[], 7).run();
        assert_eq!(out.ledger.control_total().bytes, 54);
    }

    #[test]
    fn runs_are_deterministic() {
        let pos = table(&[Vec3::zeros(), Vec3::new(500.0, 0.0, 0.0), Vec3::new(900.0, 0.0, 0.0)]);
        let run = || {
            let mut ledger = PacketLedger::new(ScenarioPhases::default());
            let ps: Vec<_> = (0..50).map(|i| packet(&mut ledger, (i % 3) as u16, ((i + 1) % 3) as u16, 1.0 + i as f64 * 0.001)).collect();
            Engine::new(cfg(true), pos.clone(), agents(3), &[], ledger, &ps, 11).run().trace
        };
        assert_eq!(run(), run());
    }
}
