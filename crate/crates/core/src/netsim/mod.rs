//! Discrete-event network engine: event queue, radio, CSMA/CA MAC and the
//! interface routing agents implement.

mod engine;
pub mod event;
pub mod mac;
pub mod radio;

use rand_chacha::ChaCha8Rng;

pub use engine::{Engine, EngineConfig, EngineStats, RunOutput, TraceRecord};

use crate::metrics::{ControlKind, DropReason};
use crate::{NodeId, PacketId};

/// Application packet handed to the source agent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AppPacket {
    pub id: PacketId,
    pub src: NodeId,
    pub dst: NodeId,
    pub generated_at: f64,
    pub expires_at: f64,
    pub payload_bytes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameClass {
    Data,
    Control(ControlKind),
}

impl FrameClass {
    pub fn label(self) -> &'static str {
        match self {
            FrameClass::Data => "data",
            FrameClass::Control(k) => k.label(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame<M> {
    pub sender: NodeId,
    /// `None` for broadcast.
    pub next_hop: Option<NodeId>,
    /// Network-layer size; the MAC header is added on air.
    pub bytes: usize,
    pub class: FrameClass,
    /// Application packet carried, for accounting only.
    pub tag: Option<PacketId>,
    pub msg: M,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action<M> {
    Send(Frame<M>),
    Timer { at: f64, token: u64 },
    Delivered(PacketId),
    Dropped(PacketId, DropReason),
}

/// Handle passed to agent callbacks. Actions take effect after the
/// callback returns.
pub struct Ctx<'a, M> {
    pub now: f64,
    pub node: NodeId,
    pub rng: &'a mut ChaCha8Rng,
    pub actions: Vec<Action<M>>,
}

impl<'a, M> Ctx<'a, M> {
    pub fn new(now: f64, node: NodeId, rng: &'a mut ChaCha8Rng) -> Self {
        Self { now, node, rng, actions: Vec::new() }
    }

    pub fn unicast(&mut self, to: NodeId, bytes: usize, class: FrameClass, tag: Option<PacketId>, msg: M) {
        let sender = self.node;
        self.actions.push(Action::Send(Frame { sender, next_hop: Some(to), bytes, class, tag, msg }));
    }

    pub fn broadcast(&mut self, bytes: usize, class: FrameClass, msg: M) {
        let sender = self.node;
        self.actions.push(Action::Send(Frame { sender, next_hop: None, bytes, class, tag: None, msg }));
    }

    pub fn set_timer(&mut self, at: f64, token: u64) {
        self.actions.push(Action::Timer { at, token });
    }

    pub fn delivered(&mut self, id: PacketId) {
        self.actions.push(Action::Delivered(id));
    }

    pub fn dropped(&mut self, id: PacketId, reason: DropReason) {
        self.actions.push(Action::Dropped(id, reason));
    }
}

/// A routing agent running on one node.
pub trait Agent {
    type Msg: Clone;

    fn on_start(&mut self, _ctx: &mut Ctx<'_, Self::Msg>) {}

    fn on_app_packet(&mut self, ctx: &mut Ctx<'_, Self::Msg>, packet: AppPacket);

    fn on_frame(&mut self, ctx: &mut Ctx<'_, Self::Msg>, frame: &Frame<Self::Msg>);

    /// The MAC put a frame queued by this node on the air for the first time.
    fn on_transmit(&mut self, _ctx: &mut Ctx<'_, Self::Msg>, _frame: &Frame<Self::Msg>) {}

    /// A unicast frame exhausted its retries.
    fn on_mac_failure(&mut self, _ctx: &mut Ctx<'_, Self::Msg>, _frame: Frame<Self::Msg>) {}

    fn on_timer(&mut self, _ctx: &mut Ctx<'_, Self::Msg>, _token: u64) {}
}
