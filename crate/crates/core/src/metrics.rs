//! Per-packet outcome ledger and the delivery/overhead/latency metrics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mobility::{Phase, ScenarioPhases};
use crate::{NodeId, PacketId};

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum MetricsError {
    #[error("no packets were generated")]
    NoTraffic,
    #[error("no control bytes were sent")]
    ZeroOverhead,
    #[error("no packets were delivered")]
    NoDeliveries,
    #[error("at least two deliveries are needed")]
    InsufficientSamples,
}

/// Kinds of routing control packets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ControlKind {
    Rreq,
    Rrep,
    Rrer,
    Rerr,
    Hello,
    TableUpdate,
}

impl ControlKind {
    pub fn label(self) -> &'static str {
        match self {
            ControlKind::Rreq => "rreq",
            ControlKind::Rrep => "rrep",
            ControlKind::Rrer => "rrer",
            ControlKind::Rerr => "rerr",
            ControlKind::Hello => "hello",
            ControlKind::TableUpdate => "update",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropReason {
    Proactive,
    Expired,
    Lost,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Outcome {
    Delivered { at: f64 },
    ProactiveDrop,
    Expired,
    Lost,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PacketRecord {
    pub id: PacketId,
    pub src: NodeId,
    pub dst: NodeId,
    pub generated_at: f64,
    pub expires_at: f64,
    pub payload_bytes: usize,
    pub phase: Phase,
    pub outcome: Option<Outcome>,
    pub duplicates: u32,
}

impl PacketRecord {
    pub fn latency(&self) -> Option<f64> {
        match self.outcome {
            Some(Outcome::Delivered { at }) => Some(at - self.generated_at),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ControlTally {
    pub frames: u64,
    pub bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeliveryStatus {
    First,
    Duplicate,
    /// A copy arrived after the source had written the packet off; the
    /// earlier verdict is replaced.
    Late,
}

/// Outcome bookkeeping for one run. A drop verdict is final unless a copy
/// of the packet still reaches the destination; delivery always wins.
#[derive(Debug, Clone)]
pub struct PacketLedger {
    phases: ScenarioPhases,
    packets: Vec<PacketRecord>,
    control: BTreeMap<ControlKind, ControlTally>,
    control_by_phase: [ControlTally; 5],
}

impl PacketLedger {
    pub fn new(phases: ScenarioPhases) -> Self {
        Self { phases, packets: Vec::new(), control: BTreeMap::new(), control_by_phase: Default::default() }
    }

    pub fn register(&mut self, src: NodeId, dst: NodeId, generated_at: f64, expires_at: f64, payload_bytes: usize) -> PacketId {
        let id = PacketId(self.packets.len() as u32);
        self.packets.push(PacketRecord {
            id,
            src,
            dst,
            generated_at,
            expires_at,
            payload_bytes,
            phase: self.phases.phase_of(generated_at),
            outcome: None,
            duplicates: 0,
        });
        id
    }

    pub fn packet(&self, id: PacketId) -> &PacketRecord {
        &self.packets[id.0 as usize]
    }

    pub fn packets(&self) -> &[PacketRecord] {
        &self.packets
    }

    pub fn phases(&self) -> &ScenarioPhases {
        &self.phases
    }

    pub fn mark_delivered(&mut self, id: PacketId, at: f64) -> DeliveryStatus {
        let p = &mut self.packets[id.0 as usize];
        match p.outcome {
            None => {
                p.outcome = Some(Outcome::Delivered { at });
                DeliveryStatus::First
            }
            Some(Outcome::Delivered { .. }) => {
                p.duplicates += 1;
                DeliveryStatus::Duplicate
            }
            Some(_) => {
                p.outcome = Some(Outcome::Delivered { at });
                DeliveryStatus::Late
            }
        }
    }

    /// Returns false when the packet already had an outcome.
    pub fn mark_dropped(&mut self, id: PacketId, reason: DropReason) -> bool {
        let p = &mut self.packets[id.0 as usize];
        if p.outcome.is_some() {
            return false;
        }
        p.outcome = Some(match reason {
            DropReason::Proactive => Outcome::ProactiveDrop,
            DropReason::Expired => Outcome::Expired,
            DropReason::Lost => Outcome::Lost,
        });
        true
    }

    pub fn is_terminal(&self, id: PacketId) -> bool {
        self.packets[id.0 as usize].outcome.is_some()
    }

    /// Control bytes are attributed to the phase in which they were sent.
    pub fn record_control(&mut self, kind: ControlKind, bytes: usize, at: f64) {
        let tally = self.control.entry(kind).or_default();
        tally.frames += 1;
        tally.bytes += bytes as u64;
        let ph = &mut self.control_by_phase[self.phases.phase_of(at).index()];
        ph.frames += 1;
        ph.bytes += bytes as u64;
    }

    pub fn control(&self) -> &BTreeMap<ControlKind, ControlTally> {
        &self.control
    }

    pub fn control_total(&self) -> ControlTally {
        self.control.values().fold(ControlTally::default(), |a, t| ControlTally {
            frames: a.frames + t.frames,
            bytes: a.bytes + t.bytes,
        })
    }

    pub fn control_in_phase(&self, p: Phase) -> ControlTally {
        self.control_by_phase[p.index()]
    }

    /// Packets still pending at the end of the run count as expired.
    pub fn finalize(&mut self) {
        for p in &mut self.packets {
            if p.outcome.is_none() {
                p.outcome = Some(Outcome::Expired);
            }
        }
    }

    pub fn summary(&self) -> MetricSummary {
        MetricSummary::from_records(self.packets.iter(), self.control_total())
    }

    pub fn phase_summary(&self, phase: Phase) -> MetricSummary {
        MetricSummary::from_records(self.packets.iter().filter(|p| p.phase == phase), self.control_in_phase(phase))
    }
}

/// Delivered-over-generated ratio.
pub fn pdr(delivered: usize, generated: usize) -> Result<f64, MetricsError> {
    if generated == 0 {
        return Err(MetricsError::NoTraffic);
    }
    Ok(delivered as f64 / generated as f64)
}

/// Delivered payload bytes per control byte.
pub fn overhead_efficiency(payload_bytes: u64, control_bytes: u64) -> Result<f64, MetricsError> {
    if control_bytes == 0 {
        return Err(MetricsError::ZeroOverhead);
    }
    Ok(payload_bytes as f64 / control_bytes as f64)
}

pub fn mean(xs: &[f64]) -> Result<f64, MetricsError> {
    if xs.is_empty() {
        return Err(MetricsError::NoDeliveries);
    }
    Ok(xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Sample standard deviation of the latencies.
pub fn jitter(latencies: &[f64]) -> Result<f64, MetricsError> {
    if latencies.len() < 2 {
        return Err(MetricsError::InsufficientSamples);
    }
    let m = mean(latencies)?;
    let ss: f64 = latencies.iter().map(|x| (x - m).powi(2)).sum();
    Ok((ss / (latencies.len() - 1) as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MetricSummary {
    pub generated: usize,
    pub delivered: usize,
    pub proactive_drop: usize,
    pub expired: usize,
    pub lost: usize,
    pub pending: usize,
    pub duplicates: u64,
    pub payload_bytes: u64,
    pub control_bytes: u64,
    pub control_frames: u64,
    pub pdr: Option<f64>,
    pub oe: Option<f64>,
    pub latency: Option<f64>,
    pub jitter: Option<f64>,
}

impl MetricSummary {
    pub fn from_records<'a>(records: impl Iterator<Item = &'a PacketRecord>, control: ControlTally) -> Self {
        let mut s = MetricSummary { control_bytes: control.bytes, control_frames: control.frames, ..Default::default() };
        let mut lat = Vec::new();
        for r in records {
            s.generated += 1;
            s.duplicates += r.duplicates as u64;
            match r.outcome {
                Some(Outcome::Delivered { at }) => {
                    s.delivered += 1;
                    s.payload_bytes += r.payload_bytes as u64;
                    lat.push(at - r.generated_at);
                }
                Some(Outcome::ProactiveDrop) => s.proactive_drop += 1,
                Some(Outcome::Expired) => s.expired += 1,
                Some(Outcome::Lost) => s.lost += 1,
                None => s.pending += 1,
            }
        }
        s.pdr = pdr(s.delivered, s.generated).ok();
        s.oe = overhead_efficiency(s.payload_bytes, s.control_bytes).ok();
        s.latency = mean(&lat).ok();
        s.jitter = jitter(&lat).ok();
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ledger() -> PacketLedger {
        PacketLedger::new(ScenarioPhases::default())
    }

    #[test]
    fn pdr_values() {
        assert_eq!(pdr(990, 990).unwrap(), 1.0);
        assert_eq!(pdr(495, 990).unwrap(), 0.5);
        assert_eq!(pdr(0, 0), Err(MetricsError::NoTraffic));
    }

    #[test]
    fn oe_values() {
        assert_eq!(overhead_efficiency(10_000, 1000).unwrap(), 10.0);
        assert_eq!(overhead_efficiency(10, 0), Err(MetricsError::ZeroOverhead));
    }

    #[test]
    fn jitter_values() {
        assert!(jitter(&[0.1, 0.1, 0.1]).unwrap() < 1e-15);
        assert!((jitter(&[1.0, 3.0]).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(jitter(&[1.0]), Err(MetricsError::InsufficientSamples));
        assert_eq!(mean(&[]), Err(MetricsError::NoDeliveries));
    }

    #[test]
    fn delivery_overrides_drop() {
        let mut l = ledger();
        let id = l.register(NodeId(0), NodeId(1), 1.0, 31.0, 1000);
        assert!(l.mark_dropped(id, DropReason::Lost));
        assert!(!l.mark_dropped(id, DropReason::Proactive));
        assert_eq!(l.packet(id).outcome, Some(Outcome::Lost));
        assert_eq!(l.mark_delivered(id, 2.0), DeliveryStatus::Late);
        assert_eq!(l.packet(id).outcome, Some(Outcome::Delivered { at: 2.0 }));

        let id = l.register(NodeId(0), NodeId(1), 1.0, 31.0, 1000);
        assert_eq!(l.mark_delivered(id, 2.0), DeliveryStatus::First);
        assert_eq!(l.mark_delivered(id, 2.5), DeliveryStatus::Duplicate);
        assert!(!l.mark_dropped(id, DropReason::Expired));
        assert_eq!(l.packet(id).duplicates, 1);
    }

    #[test]
    fn finalize_marks_pending_expired() {
        let mut l = ledger();
        l.register(NodeId(0), NodeId(1), 99.0, 129.0, 1000);
        l.finalize();
        assert_eq!(l.summary().expired, 1);
    }

    #[test]
    fn summary_and_phases() {
        let mut l = ledger();
        let a = l.register(NodeId(0), NodeId(1), 1.0, 31.0, 1000);
        let b = l.register(NodeId(0), NodeId(2), 45.0, 75.0, 1000);
        l.mark_delivered(a, 1.1);
        l.mark_dropped(b, DropReason::Proactive);
        l.record_control(ControlKind::Rrep, 44, 1.1);
        let s = l.summary();
        assert_eq!((s.generated, s.delivered, s.proactive_drop), (2, 1, 1));
        assert_eq!(s.pdr, Some(0.5));
        assert!((s.oe.unwrap() - 1000.0 / 44.0).abs() < 1e-12);
        assert!((s.latency.unwrap() - 0.1).abs() < 1e-12);
        let p1 = l.phase_summary(Phase(1));
        let p3 = l.phase_summary(Phase(3));
        assert_eq!((p1.generated, p3.generated), (1, 1));
        assert_eq!(p3.oe, None);
    }
}
