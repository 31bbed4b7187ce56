//! CPR-TD: source routing over connectivity predicted from the planned
//! trajectories. Routes are computed locally at the source, so the only
//! control traffic is route replies and route errors.

pub mod header;
pub mod route;

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::connectivity::ConnectivityTimeline;
use crate::metrics::{ControlKind, DropReason};
use crate::netsim::{Agent, AppPacket, Ctx, Frame, FrameClass};
use crate::NodeId;

pub use header::{HeaderError, PacketType, RouteHeader};
pub use route::{establish_route, shortest_path, RouteDecision};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CprTdParams {
    /// Reply budget per hop of the route (s).
    pub per_hop_timeout: f64,
    /// Reroutes allowed after the first attempt.
    pub max_route_retries: u32,
    /// Sequence numbers remembered per source for duplicate detection.
    pub duplicate_window: usize,
}

impl Default for CprTdParams {
    fn default() -> Self {
        Self { per_hop_timeout: 0.02, max_route_retries: 3, duplicate_window: 128 }
    }
}

const TIMER_DEADLINE: u64 = 0;
const TIMER_DEFERRED: u64 = 1;

fn token(key: u64, generation: u32, kind: u64) -> u64 {
    key << 32 | (generation as u64) << 1 | kind
}

fn untoken(t: u64) -> (u64, u32, u64) {
    (t >> 32, ((t & 0xffff_ffff) >> 1) as u32, t & 1)
}

#[derive(Debug, Clone)]
struct Pending {
    packet: AppPacket,
    seq: u8,
    route: Vec<NodeId>,
    excluded: Vec<bool>,
    reroutes: u32,
    generation: u32,
    /// Queued at the MAC; the reply deadline starts once it is on the air.
    awaiting_tx: bool,
}

pub struct CprTdAgent {
    node: NodeId,
    prior: Arc<ConnectivityTimeline>,
    params: CprTdParams,
    next_seq: BTreeMap<NodeId, u8>,
    pending: BTreeMap<u64, Pending>,
    next_key: u64,
    recent: BTreeMap<NodeId, VecDeque<u8>>,
    duplicates: u64,
}

impl CprTdAgent {
    pub fn new(node: NodeId, prior: Arc<ConnectivityTimeline>, params: CprTdParams) -> Self {
        Self {
            node,
            prior,
            params,
            next_seq: BTreeMap::new(),
            pending: BTreeMap::new(),
            next_key: 0,
            recent: BTreeMap::new(),
            duplicates: 0,
        }
    }

    /// Data copies received more than once at this destination.
    pub fn duplicates(&self) -> u64 {
        self.duplicates
    }

    pub fn pending_count(&self) -> usize {
        self.pending.len()
    }

    fn route_and_send(&mut self, ctx: &mut Ctx<'_, Vec<u8>>, key: u64) {
        let Some(e) = self.pending.get_mut(&key) else { return };
        e.generation += 1;
        let p = e.packet;
        if ctx.now > p.expires_at {
            ctx.dropped(p.id, DropReason::Expired);
            self.pending.remove(&key);
            return;
        }
        match establish_route(&self.prior, self.node, p.dst, ctx.now, p.expires_at, &e.excluded) {
            RouteDecision::SendNow(route) => {
                let header = RouteHeader::new(PacketType::Data, e.seq, route.clone());
                let bytes = header.encode().expect("route fits the header");
                ctx.unicast(route[1], bytes.len() + p.payload_bytes, FrameClass::Data, Some(p.id), bytes);
                e.route = route;
                e.awaiting_tx = true;
            }
            RouteDecision::SendLater { at, .. } => ctx.set_timer(at, token(key, e.generation, TIMER_DEFERRED)),
            RouteDecision::DropProactive => {
                ctx.dropped(p.id, DropReason::Proactive);
                self.pending.remove(&key);
            }
        }
    }

    /// Reroutes around `avoid`, or gives up when that is not possible.
    fn reroute(&mut self, ctx: &mut Ctx<'_, Vec<u8>>, key: u64, avoid: NodeId) {
        let Some(e) = self.pending.get_mut(&key) else { return };
        let id = e.packet.id;
        e.reroutes += 1;
        if avoid == e.packet.dst || avoid == self.node || e.reroutes > self.params.max_route_retries {
            ctx.dropped(id, DropReason::Lost);
            self.pending.remove(&key);
            return;
        }
        if let Some(x) = e.excluded.get_mut(avoid.index()) {
            *x = true;
        }
        self.route_and_send(ctx, key);
    }

    fn is_duplicate(&mut self, src: NodeId, seq: u8) -> bool {
        let window = self.params.duplicate_window;
        let seen = self.recent.entry(src).or_default();
        if seen.contains(&seq) {
            return true;
        }
        seen.push_back(seq);
        if seen.len() > window {
            seen.pop_front();
        }
        false
    }

    fn at_destination(&mut self, ctx: &mut Ctx<'_, Vec<u8>>, h: RouteHeader, frame: &Frame<Vec<u8>>) {
        match h.ptype {
            PacketType::Data => {
                if self.is_duplicate(h.addresses[0], h.seq) {
                    self.duplicates += 1;
                }
                if let Some(id) = frame.tag {
                    ctx.delivered(id);
                }
                let mut back = h.addresses;
                back.reverse();
                if back.len() < 2 {
                    return;
                }
                let reply = RouteHeader::new(PacketType::RouteReply, h.seq, back);
                let bytes = reply.encode().expect("reversed route fits");
                ctx.unicast(reply.addresses[1], bytes.len(), FrameClass::Control(ControlKind::Rrep), None, bytes);
            }
            PacketType::RouteReply => {
                let dst = h.addresses[0];
                let acked = self
                    .pending
                    .iter()
                    .find(|(_, e)| e.packet.dst == dst && e.seq == h.seq)
                    .map(|(&k, _)| k);
                if let Some(k) = acked {
                    self.pending.remove(&k);
                }
            }
            PacketType::RouteError => {
                if h.addresses.len() < 2 {
                    return;
                }
                let (failed, detector) = (h.addresses[0], h.addresses[1]);
                let hit = self
                    .pending
                    .iter()
                    .find(|(_, e)| e.seq == h.seq && e.route.windows(2).any(|w| w[0] == detector && w[1] == failed))
                    .map(|(&k, _)| k);
                if let Some(k) = hit {
                    self.reroute(ctx, k, failed);
                }
            }
        }
    }
}

impl Agent for CprTdAgent {
    type Msg = Vec<u8>;

    fn on_app_packet(&mut self, ctx: &mut Ctx<'_, Vec<u8>>, packet: AppPacket) {
        let seq = self.next_seq.entry(packet.dst).or_insert(0);
        let this = *seq;
        *seq = seq.wrapping_add(1);
        let key = self.next_key;
        self.next_key += 1;
        let n = self.prior.node_count();
        self.pending.insert(
            key,
            Pending { packet, seq: this, route: Vec::new(), excluded: vec![false; n], reroutes: 0, generation: 0, awaiting_tx: false },
        );
        self.route_and_send(ctx, key);
    }

    fn on_frame(&mut self, ctx: &mut Ctx<'_, Vec<u8>>, frame: &Frame<Vec<u8>>) {
        let Ok((h, _)) = RouteHeader::decode(&frame.msg) else { return };
        let Some(idx) = h.index_of(self.node) else { return };
        if idx + 1 == h.addresses.len() {
            self.at_destination(ctx, h, frame);
        } else {
            let next = h.addresses[idx + 1];
            ctx.unicast(next, frame.bytes, frame.class, frame.tag, frame.msg.clone());
        }
    }

    fn on_transmit(&mut self, ctx: &mut Ctx<'_, Vec<u8>>, frame: &Frame<Vec<u8>>) {
        let (FrameClass::Data, Some(id)) = (frame.class, frame.tag) else { return };
        let Some((&key, e)) = self.pending.iter_mut().find(|(_, e)| e.packet.id == id && e.awaiting_tx) else { return };
        if e.route.first() != Some(&self.node) {
            return;
        }
        e.awaiting_tx = false;
        let deadline = ctx.now + (e.route.len() - 1) as f64 * self.params.per_hop_timeout;
        ctx.set_timer(deadline, token(key, e.generation, TIMER_DEADLINE));
    }

    fn on_mac_failure(&mut self, ctx: &mut Ctx<'_, Vec<u8>>, frame: Frame<Vec<u8>>) {
        let Ok((h, _)) = RouteHeader::decode(&frame.msg) else { return };
        if h.ptype != PacketType::Data {
            return;
        }
        let (Some(idx), Some(failed)) = (h.index_of(self.node), frame.next_hop) else { return };
        // the source waits for its reply deadline instead
        if idx == 0 {
            return;
        }
        let mut addrs = vec![failed];
        addrs.extend(h.addresses[..=idx].iter().rev());
        let err = RouteHeader::new(PacketType::RouteError, h.seq, addrs);
        let bytes = err.encode().expect("error path fits");
        ctx.unicast(err.addresses[2], bytes.len(), FrameClass::Control(ControlKind::Rrer), None, bytes);
    }

    fn on_timer(&mut self, ctx: &mut Ctx<'_, Vec<u8>>, t: u64) {
        let (key, generation, kind) = untoken(t);
        let Some(e) = self.pending.get(&key) else { return };
        if e.generation != generation {
            return;
        }
        if kind == TIMER_DEFERRED {
            self.route_and_send(ctx, key);
        } else {
            let first_hop = e.route[1];
            self.reroute(ctx, key, first_hop);
        }
    }
}
