//! Reduced AODV: flooded route requests answered by the destination only,
//! hello beacons, route errors on link breakage.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::metrics::{ControlKind, DropReason};
use crate::netsim::{Agent, AppPacket, Ctx, Frame, FrameClass};
use crate::NodeId;

pub const RREQ_BYTES: usize = 24;
pub const RREP_BYTES: usize = 20;
pub const HELLO_BYTES: usize = 20;

pub fn rerr_bytes(entries: usize) -> usize {
    4 + 8 * entries.max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AodvParams {
    pub active_route_timeout: f64,
    /// Wait for a reply to the first request; doubled on each retry (s).
    pub net_traversal_time: f64,
    pub rreq_retries: u32,
    /// Beacon period; `None` disables beacons.
    pub hello_interval: Option<f64>,
    pub allowed_hello_loss: u32,
    /// Upper bound of the random delay before a rebroadcast (s).
    pub broadcast_jitter: f64,
    pub net_diameter: u8,
}

impl Default for AodvParams {
    fn default() -> Self {
        Self {
            active_route_timeout: 3.0,
            net_traversal_time: 2.8,
            rreq_retries: 2,
            hello_interval: Some(1.0),
            allowed_hello_loss: 2,
            broadcast_jitter: 0.01,
            net_diameter: 35,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AodvMsg {
    Rreq { id: u32, orig: NodeId, orig_seq: u32, dst: NodeId, dst_seq: Option<u32>, hops: u8 },
    Rrep { orig: NodeId, dst: NodeId, dst_seq: u32, hops: u8 },
    Rerr { unreachable: Vec<(NodeId, u32)> },
    Hello { seq: u32 },
    Data(AppPacket),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AodvRoute {
    pub next_hop: NodeId,
    pub hops: u8,
    pub seq: Option<u32>,
    pub valid: bool,
    pub expires: f64,
}

impl AodvRoute {
    fn usable(&self, now: f64) -> bool {
        self.valid && self.expires > now
    }
}

struct Discovery {
    attempt: u32,
    buffer: Vec<AppPacket>,
}

const KIND_DISCOVERY: u64 = 1;
const KIND_HELLO: u64 = 2;
const KIND_REBROADCAST: u64 = 3;

fn token(kind: u64, a: u64, b: u64) -> u64 {
    kind << 56 | a << 24 | b
}

pub struct AodvAgent {
    node: NodeId,
    params: AodvParams,
    routes: BTreeMap<NodeId, AodvRoute>,
    own_seq: u32,
    rreq_id: u32,
    seen: BTreeSet<(NodeId, u32)>,
    discoveries: BTreeMap<NodeId, Discovery>,
    rebroadcasts: BTreeMap<u64, AodvMsg>,
    next_key: u64,
}

impl AodvAgent {
    pub fn new(node: NodeId, params: AodvParams) -> Self {
        Self {
            node,
            params,
            routes: BTreeMap::new(),
            own_seq: 0,
            rreq_id: 0,
            seen: BTreeSet::new(),
            discoveries: BTreeMap::new(),
            rebroadcasts: BTreeMap::new(),
            next_key: 0,
        }
    }

    pub fn route(&self, dst: NodeId) -> Option<&AodvRoute> {
        self.routes.get(&dst)
    }

    fn usable_route(&self, dst: NodeId, now: f64) -> Option<AodvRoute> {
        self.routes.get(&dst).copied().filter(|r| r.usable(now))
    }

    fn refresh(&mut self, dst: NodeId, now: f64) {
        let t = now + self.params.active_route_timeout;
        if let Some(r) = self.routes.get_mut(&dst) {
            if r.valid {
                r.expires = r.expires.max(t);
            }
        }
    }

    fn update_route(&mut self, dst: NodeId, next_hop: NodeId, hops: u8, seq: Option<u32>, lifetime: f64, now: f64) {
        if dst == self.node {
            return;
        }
        let accept = match self.routes.get(&dst) {
            None => true,
            Some(cur) => {
                !cur.usable(now)
                    || match (seq, cur.seq) {
                        (Some(s), Some(c)) => s > c || (s == c && hops < cur.hops),
                        (Some(_), None) => true,
                        (None, _) => hops < cur.hops || (hops == cur.hops && next_hop == cur.next_hop),
                    }
            }
        };
        if accept {
            let seq = seq.or(self.routes.get(&dst).and_then(|r| r.seq));
            self.routes.insert(dst, AodvRoute { next_hop, hops, seq, valid: true, expires: now + lifetime });
        }
    }

    fn send_data(&mut self, ctx: &mut Ctx<'_, AodvMsg>, p: AppPacket, route: AodvRoute) {
        ctx.unicast(route.next_hop, p.payload_bytes, FrameClass::Data, Some(p.id), AodvMsg::Data(p));
        self.refresh(p.dst, ctx.now);
        self.refresh(route.next_hop, ctx.now);
    }

    fn start_discovery(&mut self, ctx: &mut Ctx<'_, AodvMsg>, dst: NodeId, attempt: u32) {
        self.own_seq += 1;
        self.rreq_id += 1;
        self.seen.insert((self.node, self.rreq_id));
        let dst_seq = self.routes.get(&dst).and_then(|r| r.seq);
        let msg = AodvMsg::Rreq { id: self.rreq_id, orig: self.node, orig_seq: self.own_seq, dst, dst_seq, hops: 0 };
        ctx.broadcast(RREQ_BYTES, FrameClass::Control(ControlKind::Rreq), msg);
        let wait = self.params.net_traversal_time * 2f64.powi(attempt as i32);
        ctx.set_timer(ctx.now + wait, token(KIND_DISCOVERY, attempt as u64, dst.0 as u64));
    }

    fn queue_for_discovery(&mut self, ctx: &mut Ctx<'_, AodvMsg>, p: AppPacket) {
        if let Some(d) = self.discoveries.get_mut(&p.dst) {
            d.buffer.push(p);
            return;
        }
        self.discoveries.insert(p.dst, Discovery { attempt: 0, buffer: vec![p] });
        self.start_discovery(ctx, p.dst, 0);
    }

    fn rebroadcast_later(&mut self, ctx: &mut Ctx<'_, AodvMsg>, msg: AodvMsg) {
        let key = self.next_key;
        self.next_key += 1;
        self.rebroadcasts.insert(key, msg);
        let delay = ctx.rng.gen_range(0.0..self.params.broadcast_jitter.max(1e-9));
        ctx.set_timer(ctx.now + delay, token(KIND_REBROADCAST, 0, key));
    }

    /// Invalidates routes through `hop` and announces them.
    fn link_broken(&mut self, ctx: &mut Ctx<'_, AodvMsg>, hop: NodeId) {
        let mut lost = Vec::new();
        for (&dst, r) in self.routes.iter_mut() {
            if r.valid && r.next_hop == hop {
                r.valid = false;
                let s = r.seq.map_or(0, |s| s + 1);
                r.seq = Some(s);
                lost.push((dst, s));
            }
        }
        if !lost.is_empty() {
            let bytes = rerr_bytes(lost.len());
            ctx.broadcast(bytes, FrameClass::Control(ControlKind::Rerr), AodvMsg::Rerr { unreachable: lost });
        }
    }

    fn neighbour_lifetime(&self) -> f64 {
        match self.params.hello_interval {
            Some(h) => h * self.params.allowed_hello_loss as f64,
            None => self.params.active_route_timeout,
        }
    }
}

impl Agent for AodvAgent {
    type Msg = AodvMsg;

    fn on_start(&mut self, ctx: &mut Ctx<'_, AodvMsg>) {
        if let Some(h) = self.params.hello_interval {
            let first = ctx.rng.gen_range(0.0..h);
            ctx.set_timer(first, token(KIND_HELLO, 0, 0));
        }
    }

    fn on_app_packet(&mut self, ctx: &mut Ctx<'_, AodvMsg>, p: AppPacket) {
        match self.usable_route(p.dst, ctx.now) {
            Some(r) => self.send_data(ctx, p, r),
            None => self.queue_for_discovery(ctx, p),
        }
    }

    fn on_frame(&mut self, ctx: &mut Ctx<'_, AodvMsg>, frame: &Frame<AodvMsg>) {
        let now = ctx.now;
        let from = frame.sender;
        let art = self.params.active_route_timeout;
        match &frame.msg {
            AodvMsg::Hello { seq } => {
                let life = self.neighbour_lifetime();
                self.update_route(from, from, 1, Some(*seq), life, now);
            }
            AodvMsg::Rreq { id, orig, orig_seq, dst, dst_seq, hops } => {
                if !self.seen.insert((*orig, *id)) {
                    return;
                }
                self.update_route(from, from, 1, None, art, now);
                self.update_route(*orig, from, hops + 1, Some(*orig_seq), art, now);
                if *dst == self.node {
                    self.own_seq = self.own_seq.max(dst_seq.unwrap_or(0)) + 1;
                    let msg = AodvMsg::Rrep { orig: *orig, dst: self.node, dst_seq: self.own_seq, hops: 0 };
                    ctx.unicast(from, RREP_BYTES, FrameClass::Control(ControlKind::Rrep), None, msg);
                } else if hops + 1 < self.params.net_diameter {
                    let msg = AodvMsg::Rreq { id: *id, orig: *orig, orig_seq: *orig_seq, dst: *dst, dst_seq: *dst_seq, hops: hops + 1 };
                    self.rebroadcast_later(ctx, msg);
                }
            }
            AodvMsg::Rrep { orig, dst, dst_seq, hops } => {
                self.update_route(from, from, 1, None, art, now);
                self.update_route(*dst, from, hops + 1, Some(*dst_seq), art, now);
                if *orig == self.node {
                    if let Some(d) = self.discoveries.remove(dst) {
                        for p in d.buffer {
                            match self.usable_route(p.dst, now) {
                                Some(r) => self.send_data(ctx, p, r),
                                None => ctx.dropped(p.id, DropReason::Lost),
                            }
                        }
                    }
                } else if let Some(r) = self.usable_route(*orig, now) {
                    let msg = AodvMsg::Rrep { orig: *orig, dst: *dst, dst_seq: *dst_seq, hops: hops + 1 };
                    ctx.unicast(r.next_hop, RREP_BYTES, FrameClass::Control(ControlKind::Rrep), None, msg);
                    self.refresh(*orig, now);
                }
            }
            AodvMsg::Rerr { unreachable } => {
                let mut lost = Vec::new();
                for &(dst, seq) in unreachable {
                    if let Some(r) = self.routes.get_mut(&dst) {
                        if r.valid && r.next_hop == from {
                            r.valid = false;
                            r.seq = Some(r.seq.map_or(seq, |s| s.max(seq)));
                            lost.push((dst, seq));
                        }
                    }
                }
                if !lost.is_empty() {
                    let bytes = rerr_bytes(lost.len());
                    ctx.broadcast(bytes, FrameClass::Control(ControlKind::Rerr), AodvMsg::Rerr { unreachable: lost });
                }
            }
            AodvMsg::Data(p) => {
                self.refresh(from, now);
                if p.dst == self.node {
                    ctx.delivered(p.id);
                    return;
                }
                match self.usable_route(p.dst, now) {
                    Some(r) => {
                        self.send_data(ctx, *p, r);
                        self.refresh(p.src, now);
                    }
                    None => ctx.dropped(p.id, DropReason::Lost),
                }
            }
        }
    }

    fn on_mac_failure(&mut self, ctx: &mut Ctx<'_, AodvMsg>, frame: Frame<AodvMsg>) {
        let Some(hop) = frame.next_hop else { return };
        self.link_broken(ctx, hop);
        if let AodvMsg::Data(p) = frame.msg {
            if p.src == self.node {
                self.queue_for_discovery(ctx, p);
            } else {
                ctx.dropped(p.id, DropReason::Lost);
            }
        }
    }

    fn on_timer(&mut self, ctx: &mut Ctx<'_, AodvMsg>, t: u64) {
        let kind = t >> 56;
        let a = (t >> 24) & 0xffff_ffff;
        let b = t & 0xff_ffff;
        match kind {
            KIND_HELLO => {
                if let Some(h) = self.params.hello_interval {
                    ctx.broadcast(HELLO_BYTES, FrameClass::Control(ControlKind::Hello), AodvMsg::Hello { seq: self.own_seq });
                    ctx.set_timer(ctx.now + h, token(KIND_HELLO, 0, 0));
                }
            }
            KIND_REBROADCAST => {
                if let Some(msg) = self.rebroadcasts.remove(&b) {
                    ctx.broadcast(RREQ_BYTES, FrameClass::Control(ControlKind::Rreq), msg);
                }
            }
            KIND_DISCOVERY => {
                let dst = NodeId(b as u16);
                let Some(d) = self.discoveries.get_mut(&dst) else { return };
                if d.attempt as u64 != a {
                    return;
                }
                if d.attempt < self.params.rreq_retries {
                    d.attempt += 1;
                    let attempt = d.attempt;
                    self.start_discovery(ctx, dst, attempt);
                } else if let Some(d) = self.discoveries.remove(&dst) {
                    for p in d.buffer {
                        ctx.dropped(p.id, DropReason::Lost);
                    }
                }
            }
            _ => {}
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netsim::Action;
    use crate::PacketId;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn frame(from: u16, to: Option<u16>, msg: AodvMsg) -> Frame<AodvMsg> {
        Frame { sender: NodeId(from), next_hop: to.map(NodeId), bytes: 20, class: FrameClass::Data, tag: None, msg }
    }

    fn packet(src: u16, dst: u16) -> AppPacket {
        AppPacket { id: PacketId(0), src: NodeId(src), dst: NodeId(dst), generated_at: 1.0, expires_at: 31.0, payload_bytes: 1000 }
    }

    #[test]
    fn unknown_destination_floods_request() {
        let mut a = AodvAgent::new(NodeId(0), AodvParams::default());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ctx = Ctx::new(1.0, NodeId(0), &mut rng);
        a.on_app_packet(&mut ctx, packet(0, 3));
        assert!(matches!(&ctx.actions[0], Action::Send(f) if f.next_hop.is_none() && f.class == FrameClass::Control(ControlKind::Rreq)));
        assert!(matches!(ctx.actions[1], Action::Timer { at, .. } if (at - 3.8).abs() < 1e-12));
    }

    #[test]
    fn destination_answers_request_once() {
        let mut a = AodvAgent::new(NodeId(3), AodvParams::default());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rreq = AodvMsg::Rreq { id: 1, orig: NodeId(0), orig_seq: 1, dst: NodeId(3), dst_seq: None, hops: 1 };
        let mut ctx = Ctx::new(1.0, NodeId(3), &mut rng);
        a.on_frame(&mut ctx, &frame(2, None, rreq.clone()));
        assert!(matches!(&ctx.actions[0], Action::Send(f) if f.next_hop == Some(NodeId(2))));
        assert_eq!(a.route(NodeId(0)).unwrap().hops, 2);
        let mut ctx = Ctx::new(1.0, NodeId(3), &mut rng);
        a.on_frame(&mut ctx, &frame(1, None, rreq));
        assert!(ctx.actions.is_empty());
    }

    #[test]
    fn reply_flushes_buffer() {
        let mut a = AodvAgent::new(NodeId(0), AodvParams::default());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ctx = Ctx::new(1.0, NodeId(0), &mut rng);
        a.on_app_packet(&mut ctx, packet(0, 3));
        let rrep = AodvMsg::Rrep { orig: NodeId(0), dst: NodeId(3), dst_seq: 1, hops: 2 };
        let mut ctx = Ctx::new(1.1, NodeId(0), &mut rng);
        a.on_frame(&mut ctx, &frame(1, Some(0), rrep));
        assert!(matches!(&ctx.actions[0], Action::Send(f) if f.class == FrameClass::Data && f.next_hop == Some(NodeId(1))));
        assert_eq!(a.route(NodeId(3)).unwrap().hops, 3);
    }

    #[test]
    fn fresher_sequence_wins() {
        let mut a = AodvAgent::new(NodeId(0), AodvParams::default());
        a.update_route(NodeId(5), NodeId(1), 2, Some(4), 3.0, 0.0);
        a.update_route(NodeId(5), NodeId(2), 4, Some(5), 3.0, 0.0);
        assert_eq!(a.route(NodeId(5)).unwrap().next_hop, NodeId(2));
        a.update_route(NodeId(5), NodeId(3), 3, Some(5), 3.0, 0.0);
        assert_eq!(a.route(NodeId(5)).unwrap().next_hop, NodeId(3));
        a.update_route(NodeId(5), NodeId(1), 1, Some(4), 3.0, 0.0);
        assert_eq!(a.route(NodeId(5)).unwrap().next_hop, NodeId(3));
    }

    #[test]
    fn link_failure_sends_route_error() {
        let mut a = AodvAgent::new(NodeId(1), AodvParams::default());
        a.update_route(NodeId(3), NodeId(2), 2, Some(1), 3.0, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ctx = Ctx::new(1.0, NodeId(1), &mut rng);
        let f = Frame { sender: NodeId(1), next_hop: Some(NodeId(2)), bytes: 1000, class: FrameClass::Data, tag: Some(PacketId(0)), msg: AodvMsg::Data(packet(0, 3)) };
        a.on_mac_failure(&mut ctx, f);
        assert!(matches!(&ctx.actions[0], Action::Send(f) if f.class == FrameClass::Control(ControlKind::Rerr)));
        assert_eq!(ctx.actions[1], Action::Dropped(PacketId(0), DropReason::Lost));
        assert!(!a.route(NodeId(3)).unwrap().valid);
    }
}
