//! Reduced DSDV: periodic full-table broadcasts, sequence-numbered
//! distance-vector merge, no triggered or incremental updates.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::metrics::{ControlKind, DropReason};
use crate::netsim::{Agent, AppPacket, Ctx, Frame, FrameClass};
use crate::NodeId;

pub const ENTRY_BYTES: usize = 12;
pub const INFINITE_METRIC: u16 = u16::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DsdvParams {
    pub update_interval: f64,
    /// Entries not refreshed for this many intervals are dropped.
    pub stale_intervals: f64,
}

impl Default for DsdvParams {
    fn default() -> Self {
        Self { update_interval: 1.0, stale_intervals: 3.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Advert {
    pub dst: NodeId,
    pub metric: u16,
    pub seq: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DsdvMsg {
    Update(Vec<Advert>),
    Data(AppPacket),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DsdvEntry {
    pub next_hop: NodeId,
    pub metric: u16,
    pub seq: u32,
    pub updated_at: f64,
}

impl DsdvEntry {
    pub fn reachable(&self) -> bool {
        self.metric != INFINITE_METRIC
    }
}

pub struct DsdvAgent {
    node: NodeId,
    params: DsdvParams,
    own_seq: u32,
    table: BTreeMap<NodeId, DsdvEntry>,
}

impl DsdvAgent {
    pub fn new(node: NodeId, params: DsdvParams) -> Self {
        Self { node, params, own_seq: 0, table: BTreeMap::new() }
    }

    pub fn table(&self) -> &BTreeMap<NodeId, DsdvEntry> {
        &self.table
    }

    fn merge(&mut self, from: NodeId, adverts: &[Advert], now: f64) {
        for a in adverts {
            if a.dst == self.node {
                continue;
            }
            let metric = if a.metric == INFINITE_METRIC { INFINITE_METRIC } else { a.metric.saturating_add(1).min(INFINITE_METRIC - 1) };
            let accept = match self.table.get(&a.dst) {
                None => metric != INFINITE_METRIC,
                Some(cur) => {
                    a.seq > cur.seq || (a.seq == cur.seq && metric < cur.metric) || (cur.next_hop == from && a.seq >= cur.seq)
                }
            };
            if accept {
                self.table.insert(a.dst, DsdvEntry { next_hop: from, metric, seq: a.seq, updated_at: now });
            }
        }
    }

    fn adverts(&self) -> Vec<Advert> {
        let mut out = vec![Advert { dst: self.node, metric: 0, seq: self.own_seq }];
        out.extend(self.table.iter().map(|(&dst, e)| Advert { dst, metric: e.metric, seq: e.seq }));
        out
    }
}

impl Agent for DsdvAgent {
    type Msg = DsdvMsg;

    fn on_start(&mut self, ctx: &mut Ctx<'_, DsdvMsg>) {
        let phase = ctx.rng.gen_range(0.0..self.params.update_interval);
        ctx.set_timer(phase, 0);
    }

    fn on_app_packet(&mut self, ctx: &mut Ctx<'_, DsdvMsg>, p: AppPacket) {
        match self.table.get(&p.dst).filter(|e| e.reachable()) {
            Some(e) => ctx.unicast(e.next_hop, p.payload_bytes, FrameClass::Data, Some(p.id), DsdvMsg::Data(p)),
            None => ctx.dropped(p.id, DropReason::Lost),
        }
    }

    fn on_frame(&mut self, ctx: &mut Ctx<'_, DsdvMsg>, frame: &Frame<DsdvMsg>) {
        match &frame.msg {
            DsdvMsg::Update(adverts) => self.merge(frame.sender, adverts, ctx.now),
            DsdvMsg::Data(p) if p.dst == self.node => ctx.delivered(p.id),
            DsdvMsg::Data(p) => self.on_app_packet(ctx, *p),
        }
    }

    fn on_mac_failure(&mut self, ctx: &mut Ctx<'_, DsdvMsg>, frame: Frame<DsdvMsg>) {
        if let Some(hop) = frame.next_hop {
            for e in self.table.values_mut() {
                if e.next_hop == hop && e.reachable() {
                    e.metric = INFINITE_METRIC;
                    e.seq += 1;
                }
            }
        }
        if let DsdvMsg::Data(p) = frame.msg {
            ctx.dropped(p.id, DropReason::Lost);
        }
    }

    fn on_timer(&mut self, ctx: &mut Ctx<'_, DsdvMsg>, _token: u64) {
        let now = ctx.now;
        self.own_seq += 2;
        let horizon = self.params.stale_intervals * self.params.update_interval;
        self.table.retain(|_, e| now - e.updated_at <= horizon);
        let adverts = self.adverts();
        let bytes = ENTRY_BYTES * adverts.len();
        ctx.broadcast(bytes, FrameClass::Control(ControlKind::TableUpdate), DsdvMsg::Update(adverts));
        ctx.set_timer(now + self.params.update_interval, 0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netsim::Action;
    use crate::PacketId;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn update(from: u16, adverts: Vec<Advert>) -> Frame<DsdvMsg> {
        Frame { sender: NodeId(from), next_hop: None, bytes: 0, class: FrameClass::Control(ControlKind::TableUpdate), tag: None, msg: DsdvMsg::Update(adverts) }
    }

    fn adv(dst: u16, metric: u16, seq: u32) -> Advert {
        Advert { dst: NodeId(dst), metric, seq }
    }

    #[test]
    fn merge_rules() {
        let mut a = DsdvAgent::new(NodeId(0), DsdvParams::default());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ctx = Ctx::new(0.0, NodeId(0), &mut rng);
        a.on_frame(&mut ctx, &update(1, vec![adv(1, 0, 2), adv(5, 3, 10)]));
        assert_eq!(a.table()[&NodeId(5)].metric, 4);
        // same seq, shorter path replaces
        a.on_frame(&mut ctx, &update(2, vec![adv(5, 1, 10)]));
        assert_eq!(a.table()[&NodeId(5)].next_hop, NodeId(2));
        // older seq ignored even if shorter
        a.on_frame(&mut ctx, &update(3, vec![adv(5, 0, 8)]));
        assert_eq!(a.table()[&NodeId(5)].next_hop, NodeId(2));
        // newer seq wins even if longer
        a.on_frame(&mut ctx, &update(4, vec![adv(5, 7, 12)]));
        assert_eq!(a.table()[&NodeId(5)].next_hop, NodeId(4));
        // own entry never stored
        a.on_frame(&mut ctx, &update(1, vec![adv(0, 1, 99)]));
        assert!(!a.table().contains_key(&NodeId(0)));
    }

    #[test]
    fn periodic_update_lists_table() {
        let mut a = DsdvAgent::new(NodeId(0), DsdvParams::default());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ctx = Ctx::new(0.0, NodeId(0), &mut rng);
        a.on_frame(&mut ctx, &update(1, vec![adv(1, 0, 2)]));
        let mut ctx = Ctx::new(0.5, NodeId(0), &mut rng);
        a.on_timer(&mut ctx, 0);
        match &ctx.actions[0] {
            Action::Send(f) => {
                assert_eq!(f.bytes, 24);
                assert!(f.next_hop.is_none());
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn no_route_drops() {
        let mut a = DsdvAgent::new(NodeId(0), DsdvParams::default());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ctx = Ctx::new(1.0, NodeId(0), &mut rng);
        let p = AppPacket { id: PacketId(2), src: NodeId(0), dst: NodeId(9), generated_at: 1.0, expires_at: 31.0, payload_bytes: 1000 };
        a.on_app_packet(&mut ctx, p);
        assert_eq!(ctx.actions, vec![Action::Dropped(PacketId(2), DropReason::Lost)]);
    }

    #[test]
    fn mac_failure_breaks_routes() {
        let mut a = DsdvAgent::new(NodeId(0), DsdvParams::default());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ctx = Ctx::new(0.0, NodeId(0), &mut rng);
        a.on_frame(&mut ctx, &update(1, vec![adv(1, 0, 2), adv(5, 1, 4)]));
        let p = AppPacket { id: PacketId(0), src: NodeId(0), dst: NodeId(5), generated_at: 1.0, expires_at: 31.0, payload_bytes: 1000 };
        let f = Frame { sender: NodeId(0), next_hop: Some(NodeId(1)), bytes: 1000, class: FrameClass::Data, tag: Some(p.id), msg: DsdvMsg::Data(p) };
        a.on_mac_failure(&mut ctx, f);
        assert!(!a.table()[&NodeId(5)].reachable());
        assert_eq!(a.table()[&NodeId(5)].seq, 5);
    }

    #[test]
    fn stale_entries_age_out() {
        let mut a = DsdvAgent::new(NodeId(0), DsdvParams::default());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ctx = Ctx::new(0.0, NodeId(0), &mut rng);
        a.on_frame(&mut ctx, &update(1, vec![adv(1, 0, 2)]));
        let mut ctx = Ctx::new(3.5, NodeId(0), &mut rng);
        a.on_timer(&mut ctx, 0);
        assert!(a.table().is_empty());
    }
}
