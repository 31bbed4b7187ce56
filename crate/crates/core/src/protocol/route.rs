//! Shortest-path computation over predicted adjacency.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::connectivity::{AdjacencyMatrix, ConnectivityTimeline};
use crate::NodeId;

/// Minimum-hop path from `src` to `dst` that avoids `excluded` nodes.
/// Among equal-length paths the lexicographically smallest id sequence is
/// returned.
pub fn shortest_path(adj: &AdjacencyMatrix, src: NodeId, dst: NodeId, excluded: &[bool]) -> Option<Vec<NodeId>> {
    let n = adj.node_count();
    let (s, d) = (src.index(), dst.index());
    let blocked = |i: usize| excluded.get(i).copied().unwrap_or(false);
    if s >= n || d >= n || blocked(s) || blocked(d) {
        return None;
    }
    if s == d {
        return Some(vec![src]);
    }
    // unit-weight Dijkstra rooted at the destination
    let mut dist = vec![u32::MAX; n];
    dist[d] = 0;
    let mut heap = BinaryHeap::from([Reverse((0u32, d))]);
    while let Some(Reverse((du, u))) = heap.pop() {
        if du > dist[u] {
            continue;
        }
        for v in adj.neighbors(u) {
            if blocked(v) {
                continue;
            }
            if du + 1 < dist[v] {
                dist[v] = du + 1;
                heap.push(Reverse((du + 1, v)));
            }
        }
    }
    if dist[s] == u32::MAX {
        return None;
    }
    let mut path = vec![src];
    let mut cur = s;
    while cur != d {
        // neighbours come out in increasing id order
        cur = adj.neighbors(cur).find(|&v| !blocked(v) && dist[v] + 1 == dist[cur])?;
        path.push(NodeId(cur as u16));
    }
    Some(path)
}

#[derive(Debug, Clone, PartialEq)]
pub enum RouteDecision {
    SendNow(Vec<NodeId>),
    SendLater { at: f64, route: Vec<NodeId> },
    DropProactive,
}

/// Decides how to route a packet from predicted connectivity: now if the
/// destination is reachable in the sample in force, otherwise at the first
/// later sample before `expires_at`, otherwise never.
pub fn establish_route(
    timeline: &ConnectivityTimeline,
    src: NodeId,
    dst: NodeId,
    t_now: f64,
    expires_at: f64,
    excluded: &[bool],
) -> RouteDecision {
    let first = timeline.sample_index(t_now);
    if let Some(route) = path_at(timeline, first, src, dst, excluded) {
        return RouteDecision::SendNow(route);
    }
    let mut i = first + 1;
    while i < timeline.sample_count() && timeline.sample_time(i) <= expires_at + 1e-9 {
        if let Some(route) = path_at(timeline, i, src, dst, excluded) {
            return RouteDecision::SendLater { at: timeline.sample_time(i), route };
        }
        i += 1;
    }
    RouteDecision::DropProactive
}

fn path_at(tl: &ConnectivityTimeline, index: usize, src: NodeId, dst: NodeId, excluded: &[bool]) -> Option<Vec<NodeId>> {
    if !tl.connected_at_sample(index, src, dst) {
        return None;
    }
    shortest_path(tl.sample(index), src, dst, excluded)
}
