//! Link adjacency and its evolution over the planned trajectories.

use std::collections::VecDeque;

use crate::kinematics::Vec3;
use crate::mobility::{FormationSpec, MobilityError};
use crate::netsim::radio::RadioParams;
use crate::NodeId;

const TIME_EPS: f64 = 1e-9;

/// Distance at which the Friis received power equals the loss threshold.
pub fn comm_range(radio: &RadioParams) -> f64 {
    radio.comm_range()
}

/// Symmetric boolean adjacency stored as one bitset row per node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdjacencyMatrix {
    n: usize,
    words: usize,
    bits: Vec<u64>,
}

impl AdjacencyMatrix {
    pub fn new(n: usize) -> Self {
        let words = n.div_ceil(64).max(1);
        Self { n, words, bits: vec![0; n * words] }
    }

    /// Disk model: nodes closer than `range` are linked unless failed.
    pub fn from_positions(positions: &[Vec3], range: f64, failed: &[bool]) -> Self {
        let n = positions.len();
        let mut m = Self::new(n);
        let r2 = range * range;
        for a in 0..n {
            if failed.get(a).copied().unwrap_or(false) {
                continue;
            }
            for b in a + 1..n {
                if failed.get(b).copied().unwrap_or(false) {
                    continue;
                }
                if (positions[a] - positions[b]).norm_squared() <= r2 {
                    m.set(a, b, true);
                }
            }
        }
        m
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut m = Self::new(n);
        for &(a, b) in edges {
            m.set(a, b, true);
        }
        m
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn linked(&self, a: usize, b: usize) -> bool {
        self.bits[a * self.words + b / 64] >> (b % 64) & 1 == 1
    }

    pub fn set(&mut self, a: usize, b: usize, on: bool) {
        if a == b {
            return;
        }
        for (x, y) in [(a, b), (b, a)] {
            let w = &mut self.bits[x * self.words + y / 64];
            if on {
                *w |= 1 << (y % 64);
            } else {
                *w &= !(1 << (y % 64));
            }
        }
    }

    /// Neighbours of `a` in increasing id order.
    pub fn neighbors(&self, a: usize) -> impl Iterator<Item = usize> + '_ {
        let row = &self.bits[a * self.words..(a + 1) * self.words];
        row.iter().enumerate().flat_map(|(wi, &w)| {
            let mut w = w;
            std::iter::from_fn(move || {
                if w == 0 {
                    return None;
                }
                let b = w.trailing_zeros() as usize;
                w &= w - 1;
                Some(wi * 64 + b)
            })
        })
    }

    pub fn degree(&self, a: usize) -> usize {
        self.bits[a * self.words..(a + 1) * self.words].iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn link_count(&self) -> usize {
        (0..self.n).map(|a| self.degree(a)).sum::<usize>() / 2
    }

    /// Component label per node; the label is the smallest node index in
    /// the component.
    pub fn component_labels(&self) -> Vec<u16> {
        let mut label = vec![u16::MAX; self.n];
        let mut queue = VecDeque::new();
        for s in 0..self.n {
            if label[s] != u16::MAX {
                continue;
            }
            label[s] = s as u16;
            queue.push_back(s);
            while let Some(a) = queue.pop_front() {
                for b in self.neighbors(a) {
                    if label[b] == u16::MAX {
                        label[b] = s as u16;
                        queue.push_back(b);
                    }
                }
            }
        }
        label
    }

    /// Number of connected components among the nodes not in `skip`.
    pub fn component_count(&self, skip: &[bool]) -> usize {
        let labels = self.component_labels();
        (0..self.n)
            .filter(|&i| !skip.get(i).copied().unwrap_or(false) && labels[i] as usize == i)
            .count()
    }

    /// Breadth-first reachability avoiding `excluded` nodes.
    pub fn reachable(&self, src: usize, dst: usize, excluded: &[bool]) -> bool {
        let blocked = |i: usize| excluded.get(i).copied().unwrap_or(false);
        if blocked(src) || blocked(dst) {
            return false;
        }
        if src == dst {
            return true;
        }
        let mut seen = vec![false; self.n];
        seen[src] = true;
        let mut queue = VecDeque::from([src]);
        while let Some(a) = queue.pop_front() {
            for b in self.neighbors(a) {
                if b == dst {
                    return true;
                }
                if !seen[b] && !blocked(b) {
                    seen[b] = true;
                    queue.push_back(b);
                }
            }
        }
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkChange {
    Up,
    Down,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkEvent {
    pub t: f64,
    pub a: NodeId,
    pub b: NodeId,
    pub change: LinkChange,
}

/// Sampled adjacency over the scenario plus the up/down event list.
#[derive(Debug, Clone)]
pub struct ConnectivityTimeline {
    pub interval: f64,
    samples: Vec<AdjacencyMatrix>,
    labels: Vec<Vec<u16>>,
    events: Vec<LinkEvent>,
}

pub fn adjacency_at(
    spec: &FormationSpec,
    t: f64,
    range: f64,
    failed: &[NodeId],
) -> Result<AdjacencyMatrix, MobilityError> {
    let positions = (0..spec.node_count())
        .map(|i| spec.position_of(NodeId(i as u16), t).map(|p| p.local))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(AdjacencyMatrix::from_positions(&positions, range, &failed_mask(spec.node_count(), failed)))
}

pub fn failed_mask(n: usize, failed: &[NodeId]) -> Vec<bool> {
    let mut mask = vec![false; n];
    for f in failed {
        if let Some(m) = mask.get_mut(f.index()) {
            *m = true;
        }
    }
    mask
}

/// Samples the adjacency on the formation's export grid.
pub fn build_timeline(spec: &FormationSpec, range: f64, failed: &[NodeId]) -> ConnectivityTimeline {
    let mask = failed_mask(spec.node_count(), failed);
    let samples = (0..spec.sample_count())
        .map(|i| AdjacencyMatrix::from_positions(&spec.positions_at_sample(i), range, &mask))
        .collect();
    ConnectivityTimeline::from_samples(spec.sample_interval, samples)
}

impl ConnectivityTimeline {
    pub fn from_samples(interval: f64, samples: Vec<AdjacencyMatrix>) -> Self {
        assert!(!samples.is_empty(), "timeline needs at least one sample");
        let labels = samples.iter().map(AdjacencyMatrix::component_labels).collect();
        let mut events = Vec::new();
        for (k, pair) in samples.windows(2).enumerate() {
            let t = (k + 1) as f64 * interval;
            let n = pair[0].node_count();
            for a in 0..n {
                for b in a + 1..n {
                    let (was, is) = (pair[0].linked(a, b), pair[1].linked(a, b));
                    if was != is {
                        let change = if is { LinkChange::Up } else { LinkChange::Down };
                        events.push(LinkEvent { t, a: NodeId(a as u16), b: NodeId(b as u16), change });
                    }
                }
            }
        }
        Self { interval, samples, labels, events }
    }

    pub fn node_count(&self) -> usize {
        self.samples[0].node_count()
    }

    pub fn sample_count(&self) -> usize {
        self.samples.len()
    }

    pub fn end_time(&self) -> f64 {
        (self.samples.len() - 1) as f64 * self.interval
    }

    pub fn sample_time(&self, index: usize) -> f64 {
        index as f64 * self.interval
    }

    /// Index of the sample in force at `t` (the latest one not after `t`).
    pub fn sample_index(&self, t: f64) -> usize {
        let i = (t / self.interval + TIME_EPS).floor().max(0.0) as usize;
        i.min(self.samples.len() - 1)
    }

    pub fn sample(&self, index: usize) -> &AdjacencyMatrix {
        &self.samples[index]
    }

    pub fn adjacency(&self, t: f64) -> &AdjacencyMatrix {
        &self.samples[self.sample_index(t)]
    }

    pub fn labels(&self, index: usize) -> &[u16] {
        &self.labels[index]
    }

    pub fn events(&self) -> &[LinkEvent] {
        &self.events
    }

    pub fn connected_at_sample(&self, index: usize, a: NodeId, b: NodeId) -> bool {
        let l = &self.labels[index];
        l[a.index()] == l[b.index()]
    }

    /// Rebuilds sample `index` from the first sample and the event list.
    pub fn replay(&self, index: usize) -> AdjacencyMatrix {
        let mut m = self.samples[0].clone();
        let until = self.sample_time(index) + TIME_EPS;
        for e in self.events.iter().take_while(|e| e.t <= until) {
            m.set(e.a.index(), e.b.index(), e.change == LinkChange::Up);
        }
        m
    }

    /// Earliest time ≥ `t_now` at which `dst` shares a component with
    /// `src`. The sample in force at `t_now` counts as "now".
    pub fn earliest_reachable(&self, src: NodeId, dst: NodeId, t_now: f64) -> Option<f64> {
        let first = self.sample_index(t_now);
        if self.connected_at_sample(first, src, dst) {
            return Some(t_now);
        }
        (first + 1..self.samples.len())
            .find(|&i| self.connected_at_sample(i, src, dst))
            .map(|i| self.sample_time(i))
    }
}
