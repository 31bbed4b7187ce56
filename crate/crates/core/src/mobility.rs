//! Four-group diamond formation: flight plans, phases and node positions.
//!
//! Each group is a rigid k×k diamond around a leader reference point. The
//! groups start stacked around the formation centre (one above, one below,
//! one on each side), split apart at the start of the diversion phase and
//! swing back to rejoin before the final phase.

use std::f64::consts::SQRT_2;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::{radii_of_curvature, rotation_t_to_n, Attitude, EarthModel, GeoPosition, KinematicState, Vec3};
use crate::maneuvers::{generate_trajectory, FlightPlan, ManeuverError, ManeuverSegment, TrajectoryOptions};
use crate::NodeId;

pub const GROUP_COUNT: usize = 4;
const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MobilityError {
    #[error("node_count {0} is not 4·k² for an integer k ≥ 1")]
    InvalidNodeCount(usize),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("time {t} s is outside the scenario [0, {end}] s")]
    TimeOutOfRange { t: f64, end: f64 },
    #[error("invalid phase boundaries: {0}")]
    InvalidPhases(String),
    #[error("invalid formation parameter: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Maneuver(#[from] ManeuverError),
}

/// Phase number, 1 through 5.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Phase(pub u8);

impl Phase {
    pub const ALL: [Phase; 5] = [Phase(1), Phase(2), Phase(3), Phase(4), Phase(5)];

    pub fn index(self) -> usize {
        self.0 as usize - 1
    }
}

/// Boundaries of the five mission phases (s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioPhases {
    pub boundaries: [f64; 6],
}

impl Default for ScenarioPhases {
    fn default() -> Self {
        Self { boundaries: [0.0, 30.1, 37.7, 60.1, 62.8, 100.0] }
    }
}

impl ScenarioPhases {
    pub fn validate(&self) -> Result<(), MobilityError> {
        let b = &self.boundaries;
        if b[0] != 0.0 {
            return Err(MobilityError::InvalidPhases("first boundary must be 0".into()));
        }
        if b.windows(2).any(|w| !(w[1] > w[0]) || !w[1].is_finite()) {
            return Err(MobilityError::InvalidPhases("boundaries must be strictly increasing".into()));
        }
        Ok(())
    }

    pub fn end(&self) -> f64 {
        self.boundaries[5]
    }

    pub fn start_of(&self, p: Phase) -> f64 {
        self.boundaries[p.index()]
    }

    pub fn end_of(&self, p: Phase) -> f64 {
        self.boundaries[p.index() + 1]
    }

    /// Phase containing `t`; intervals are half-open, the last one closed.
    pub fn phase_of(&self, t: f64) -> Phase {
        for i in 1..5 {
            if t < self.boundaries[i] - TIME_EPS {
                return Phase(i as u8);
            }
        }
        Phase(5)
    }
}

/// Shape and timing of the split-and-rejoin manoeuvre.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiversionParams {
    /// Cruise speed (m/s).
    pub speed: f64,
    /// Distance between neighbouring diamond slots (m).
    pub spacing: f64,
    /// Distance between the nearest vertices of stacked groups (m).
    pub group_gap: f64,
    /// Course or pitch change of each split turn (rad).
    pub turn_angle: f64,
    /// Course or pitch rate during a turn (rad/s).
    pub turn_rate: f64,
    /// Time spent rolling in or out of a bank (s).
    pub bank_time: f64,
    /// Straight leg between the two halves of the split (s).
    pub split_hold: f64,
    /// Start of the rejoin turns (s).
    pub rejoin_start: f64,
    /// Straight leg between the two halves of the rejoin (s).
    pub rejoin_hold: f64,
    /// Latitude of the formation centre at t = 0 (rad).
    pub origin_latitude: f64,
    /// Longitude of the formation centre at t = 0 (rad).
    pub origin_longitude: f64,
    /// Altitude of the formation centre at t = 0 (m).
    pub origin_altitude: f64,
}

impl Default for DiversionParams {
    fn default() -> Self {
        Self {
            speed: 250.0,
            spacing: 300.0,
            group_gap: 3000.0,
            turn_angle: std::f64::consts::FRAC_PI_4,
            turn_rate: 0.5,
            bank_time: 1.0,
            split_hold: 1.5,
            rejoin_start: 57.8,
            rejoin_hold: 4.0,
            origin_latitude: 0.7,
            origin_longitude: 2.03,
            origin_altitude: 6000.0,
        }
    }
}

impl DiversionParams {
    pub fn validate(&self) -> Result<(), MobilityError> {
        let positive = [
            ("speed", self.speed),
            ("spacing", self.spacing),
            ("group_gap", self.group_gap),
            ("turn_angle", self.turn_angle),
            ("turn_rate", self.turn_rate),
            ("bank_time", self.bank_time),
            ("split_hold", self.split_hold),
            ("rejoin_hold", self.rejoin_hold),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(MobilityError::InvalidParams(format!("{name} must be positive")));
            }
        }
        if self.origin_latitude.cos().abs() < 1e-3 {
            return Err(MobilityError::InvalidParams("origin_latitude too close to a pole".into()));
        }
        Ok(())
    }

    fn turn_time(&self) -> f64 {
        self.turn_angle / self.turn_rate
    }

    /// Duration of one bank-turn-level or entry-hold-exit half.
    fn half_span(&self) -> f64 {
        2.0 * self.bank_time + self.turn_time()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GroupManeuver {
    Climb,
    Descend,
    TurnLeft,
    TurnRight,
}

impl GroupManeuver {
    pub const ORDER: [GroupManeuver; GROUP_COUNT] =
        [GroupManeuver::Climb, GroupManeuver::Descend, GroupManeuver::TurnLeft, GroupManeuver::TurnRight];

    fn sign(self) -> f64 {
        match self {
            GroupManeuver::Climb | GroupManeuver::TurnRight => 1.0,
            GroupManeuver::Descend | GroupManeuver::TurnLeft => -1.0,
        }
    }
}

/// Flat local frame (east, north, up) tangent at the formation origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalFrame {
    pub origin: GeoPosition,
    pub earth: EarthModel,
}

impl LocalFrame {
    pub fn to_local(&self, g: &GeoPosition) -> Vec3 {
        let (rn, rm) = radii_of_curvature(self.origin.beta, &self.earth);
        Vec3::new(
            (g.lambda - self.origin.lambda) * (rn + g.h) * self.origin.beta.cos(),
            (g.beta - self.origin.beta) * (rm + g.h),
            g.h - self.origin.h,
        )
    }

    pub fn to_geo(&self, p: &Vec3) -> GeoPosition {
        let (rn, rm) = radii_of_curvature(self.origin.beta, &self.earth);
        let h = self.origin.h + p.z;
        GeoPosition {
            beta: self.origin.beta + p.y / (rm + h),
            lambda: self.origin.lambda + p.x / ((rn + h) * self.origin.beta.cos()),
            h,
        }
    }
}

/// Leader reference state on the export grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeaderSample {
    pub t: f64,
    pub local: Vec3,
    pub attitude: Attitude,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    pub maneuver: GroupManeuver,
    pub plan: FlightPlan,
    /// Node ids; the first one sits at (or nearest to) the leader reference.
    pub nodes: Vec<NodeId>,
    /// Slot offsets in the trajectory frame, parallel to `nodes`.
    pub offsets: Vec<Vec3>,
    pub track: Vec<LeaderSample>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodePosition {
    pub local: Vec3,
    pub geo: GeoPosition,
    pub attitude: Attitude,
}

/// Planned formation: group layout, leader plans and sampled leader tracks.
#[derive(Debug, Clone, PartialEq)]
pub struct FormationSpec {
    pub side: usize,
    pub phases: ScenarioPhases,
    pub params: DiversionParams,
    pub frame: LocalFrame,
    pub sample_interval: f64,
    pub groups: Vec<Group>,
}

/// Side length k of the diamond for `node_count = 4·k²`.
pub fn diamond_side(node_count: usize) -> Result<usize, MobilityError> {
    if node_count == 0 || !node_count.is_multiple_of(GROUP_COUNT) {
        return Err(MobilityError::InvalidNodeCount(node_count));
    }
    let per = node_count / GROUP_COUNT;
    let k = (per as f64).sqrt().round() as usize;
    if k * k != per {
        return Err(MobilityError::InvalidNodeCount(node_count));
    }
    Ok(k)
}

/// Diamond slot offsets, central slot first and the rest in row-major order.
pub fn diamond_offsets(side: usize, spacing: f64) -> Vec<Vec3> {
    let half = (side as f64 - 1.0) / 2.0;
    let mut slots: Vec<(f64, f64)> = Vec::with_capacity(side * side);
    for i in 0..side {
        for j in 0..side {
            slots.push((i as f64 - half, j as f64 - half));
        }
    }
    let dist = |&(u, v): &(f64, f64)| u * u + v * v;
    let centre = (0..slots.len())
        .min_by(|&a, &b| dist(&slots[a]).total_cmp(&dist(&slots[b])))
        .unwrap_or(0);
    let c = slots.remove(centre);
    slots.insert(0, c);
    slots
        .into_iter()
        .map(|(u, v)| Vec3::new((u - v) * spacing / SQRT_2, (u + v) * spacing / SQRT_2, 0.0))
        .collect()
}

fn turn_plan(p: &DiversionParams, split_start: f64, end: f64, sign: f64) -> Vec<ManeuverSegment> {
    let rate = sign * p.turn_rate;
    let bank = (p.speed * p.turn_rate / 9.80665).atan();
    let roll = sign * bank / p.bank_time;
    let turn = |dir: f64| {
        [
            ManeuverSegment::bank(p.bank_time, dir * roll),
            ManeuverSegment::turn_hold(p.turn_time(), dir * rate, dir * sign * bank),
            ManeuverSegment::level(p.bank_time, dir * roll),
        ]
    };
    let mut segs = vec![ManeuverSegment::straight(split_start)];
    segs.extend(turn(1.0));
    segs.push(ManeuverSegment::straight(p.split_hold));
    segs.extend(turn(-1.0));
    let split_end = split_start + 2.0 * p.half_span() + p.split_hold;
    segs.push(ManeuverSegment::straight(p.rejoin_start - split_end));
    segs.extend(turn(-1.0));
    segs.push(ManeuverSegment::straight(p.rejoin_hold));
    segs.extend(turn(1.0));
    let rejoin_end = p.rejoin_start + 2.0 * p.half_span() + p.rejoin_hold;
    segs.push(ManeuverSegment::straight(end - rejoin_end));
    segs
}

fn climb_plan(p: &DiversionParams, split_start: f64, end: f64, sign: f64) -> Vec<ManeuverSegment> {
    let radius = p.speed / p.turn_rate;
    let rise = |dir: f64, hold: f64| {
        let rate = dir * sign * p.turn_rate;
        [
            ManeuverSegment::climb_entry(p.turn_time(), rate, radius),
            ManeuverSegment::climb_hold(hold),
            ManeuverSegment::climb_exit(p.turn_time(), rate, radius),
        ]
    };
    let mut segs = vec![ManeuverSegment::straight(split_start + p.bank_time)];
    segs.extend(rise(1.0, 2.0 * p.bank_time + p.split_hold));
    let split_end = split_start + 2.0 * p.half_span() + p.split_hold;
    segs.push(ManeuverSegment::straight(p.rejoin_start - split_end + 2.0 * p.bank_time));
    segs.extend(rise(-1.0, 2.0 * p.bank_time + p.rejoin_hold));
    let rejoin_end = p.rejoin_start + 2.0 * p.half_span() + p.rejoin_hold;
    segs.push(ManeuverSegment::straight(end - rejoin_end + p.bank_time));
    segs
}

fn group_centre(m: GroupManeuver, side: usize, p: &DiversionParams) -> Vec3 {
    let stack = p.group_gap / SQRT_2;
    let extent = (side as f64 - 1.0) * p.spacing / SQRT_2;
    let lateral = stack + 2.0 * extent;
    match m {
        GroupManeuver::Climb => Vec3::new(0.0, 0.0, stack),
        GroupManeuver::Descend => Vec3::new(0.0, 0.0, -stack),
        GroupManeuver::TurnLeft => Vec3::new(-lateral, 0.0, 0.0),
        GroupManeuver::TurnRight => Vec3::new(lateral, 0.0, 0.0),
    }
}

/// Builds the formation for `node_count = 4·k²` nodes.
pub fn build_scenario(
    node_count: usize,
    phases: &ScenarioPhases,
    params: &DiversionParams,
    earth: &EarthModel,
) -> Result<FormationSpec, MobilityError> {
    let side = diamond_side(node_count)?;
    phases.validate()?;
    params.validate()?;
    let split_start = phases.boundaries[1];
    let end = phases.end();
    let split_end = split_start + 2.0 * params.half_span() + params.split_hold;
    let rejoin_end = params.rejoin_start + 2.0 * params.half_span() + params.rejoin_hold;
    if params.rejoin_start < split_end || rejoin_end > end {
        return Err(MobilityError::InvalidParams(
            "split and rejoin manoeuvres overlap or exceed the scenario".into(),
        ));
    }

    let frame = LocalFrame {
        origin: GeoPosition::new(params.origin_latitude, params.origin_longitude, params.origin_altitude),
        earth: *earth,
    };
    let opts = TrajectoryOptions::default();
    let offsets = diamond_offsets(side, params.spacing);
    let per = side * side;

    let mut groups = Vec::with_capacity(GROUP_COUNT);
    for (g, &m) in GroupManeuver::ORDER.iter().enumerate() {
        let initial = KinematicState {
            attitude: Attitude::default(),
            v_n: Vec3::new(0.0, params.speed, 0.0),
            pos: frame.to_geo(&group_centre(m, side, params)),
            t: 0.0,
        };
        let segments = match m {
            GroupManeuver::Climb | GroupManeuver::Descend => climb_plan(params, split_start, end, m.sign()),
            GroupManeuver::TurnLeft | GroupManeuver::TurnRight => turn_plan(params, split_start, end, m.sign()),
        };
        let plan = FlightPlan::new(initial, segments)?;
        let track = generate_trajectory(&plan, earth, &opts, end)?
            .into_iter()
            .map(|s| LeaderSample { t: s.t, local: frame.to_local(&s.pos), attitude: s.attitude })
            .collect();
        let nodes = (0..per).map(|i| NodeId((g * per + i) as u16)).collect();
        groups.push(Group { maneuver: m, plan, nodes, offsets: offsets.clone(), track });
    }

    Ok(FormationSpec { side, phases: *phases, params: *params, frame, sample_interval: opts.export_interval, groups })
}

impl FormationSpec {
    pub fn node_count(&self) -> usize {
        GROUP_COUNT * self.side * self.side
    }

    pub fn group_size(&self) -> usize {
        self.side * self.side
    }

    /// `(group, slot)` of a node.
    pub fn locate(&self, node: NodeId) -> Result<(usize, usize), MobilityError> {
        let i = node.index();
        if i >= self.node_count() {
            return Err(MobilityError::UnknownNode(node));
        }
        Ok((i / self.group_size(), i % self.group_size()))
    }

    /// Node at the centre of each group.
    pub fn central_nodes(&self) -> Vec<NodeId> {
        self.groups.iter().map(|g| g.nodes[0]).collect()
    }

    pub fn sample_count(&self) -> usize {
        self.groups[0].track.len()
    }

    fn leader_at(&self, group: usize, t: f64) -> Result<(Vec3, Attitude), MobilityError> {
        let end = self.phases.end();
        if !(t >= -TIME_EPS && t <= end + TIME_EPS) {
            return Err(MobilityError::TimeOutOfRange { t, end });
        }
        let track = &self.groups[group].track;
        let x = (t / self.sample_interval).max(0.0);
        let i = ((x + TIME_EPS).floor() as usize).min(track.len() - 1);
        let frac = x - i as f64;
        if frac.abs() <= TIME_EPS || i + 1 >= track.len() {
            return Ok((track[i].local, track[i].attitude));
        }
        let (a, b) = (&track[i], &track[i + 1]);
        let lerp = |p: f64, q: f64| p + frac * (q - p);
        let dpsi = crate::kinematics::wrap_pi(b.attitude.psi - a.attitude.psi);
        let att = Attitude {
            psi: a.attitude.psi + frac * dpsi,
            theta: lerp(a.attitude.theta, b.attitude.theta),
            gamma: lerp(a.attitude.gamma, b.attitude.gamma),
        };
        Ok((a.local + frac * (b.local - a.local), att))
    }

    pub fn position_of(&self, node: NodeId, t: f64) -> Result<NodePosition, MobilityError> {
        let (g, slot) = self.locate(node)?;
        let (leader, att) = self.leader_at(g, t)?;
        let local = leader + rotation_t_to_n(&att) * self.groups[g].offsets[slot];
        Ok(NodePosition { local, geo: self.frame.to_geo(&local), attitude: att })
    }

    /// Local positions of all nodes at export sample `index`.
    pub fn positions_at_sample(&self, index: usize) -> Vec<Vec3> {
        let mut out = Vec::with_capacity(self.node_count());
        for g in &self.groups {
            let s = &g.track[index.min(g.track.len() - 1)];
            let rot = rotation_t_to_n(&s.attitude);
            out.extend(g.offsets.iter().map(|o| s.local + rot * o));
        }
        out
    }
}

/// Node positions tabulated on the export grid.
#[derive(Debug, Clone)]
pub struct PositionTable {
    pub interval: f64,
    samples: Vec<Vec<Vec3>>,
}

impl PositionTable {
    pub fn from_spec(spec: &FormationSpec) -> Self {
        let samples = (0..spec.sample_count()).map(|i| spec.positions_at_sample(i)).collect();
        Self { interval: spec.sample_interval, samples }
    }

    /// Builds a table directly; every sample must list the same nodes.
    pub fn from_samples(interval: f64, samples: Vec<Vec<Vec3>>) -> Self {
        Self { interval, samples }
    }

    pub fn node_count(&self) -> usize {
        self.samples.first().map_or(0, Vec::len)
    }

    pub fn sample(&self, index: usize) -> &[Vec3] {
        &self.samples[index.min(self.samples.len() - 1)]
    }

    pub fn sample_count(&self) -> usize {
        self.samples.len()
    }

    /// Linear interpolation between samples; clamps outside the table.
    pub fn position(&self, node: NodeId, t: f64) -> Vec3 {
        let x = (t / self.interval).max(0.0);
        let i = (x + TIME_EPS).floor() as usize;
        let last = self.samples.len() - 1;
        if i >= last {
            return self.samples[last][node.index()];
        }
        let frac = (x - i as f64).max(0.0);
        let a = self.samples[i][node.index()];
        let b = self.samples[i + 1][node.index()];
        a + frac * (b - a)
    }

    pub fn distance(&self, a: NodeId, b: NodeId, t: f64) -> f64 {
        (self.position(a, t) - self.position(b, t)).norm()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(n: usize) -> FormationSpec {
        build_scenario(n, &ScenarioPhases::default(), &DiversionParams::default(), &EarthModel::default()).unwrap()
    }

    #[test]
    fn node_count_validation() {
        assert_eq!(diamond_side(36).unwrap(), 3);
        assert_eq!(diamond_side(100).unwrap(), 5);
        assert_eq!(diamond_side(196).unwrap(), 7);
        for bad in [0, 35, 40, 8] {
            assert_eq!(diamond_side(bad), Err(MobilityError::InvalidNodeCount(bad)));
        }
    }

    #[test]
    fn phase_lookup() {
        let p = ScenarioPhases::default();
        assert_eq!(p.phase_of(0.0), Phase(1));
        assert_eq!(p.phase_of(30.0), Phase(1));
        assert_eq!(p.phase_of(30.1), Phase(2));
        assert_eq!(p.phase_of(45.0), Phase(3));
        assert_eq!(p.phase_of(60.1), Phase(4));
        assert_eq!(p.phase_of(62.8), Phase(5));
        assert_eq!(p.phase_of(100.0), Phase(5));
    }

    #[test]
    fn bad_phases_rejected() {
        let p = ScenarioPhases { boundaries: [0.0, 40.0, 37.7, 60.1, 62.8, 100.0] };
        assert!(p.validate().is_err());
    }

    #[test]
    fn diamond_slots() {
        let offs = diamond_offsets(3, 300.0);
        assert_eq!(offs.len(), 9);
        assert_eq!(offs[0], Vec3::zeros());
        let mut min_pair = f64::MAX;
        for i in 0..9 {
            for j in i + 1..9 {
                min_pair = min_pair.min((offs[i] - offs[j]).norm());
            }
        }
        assert!((min_pair - 300.0).abs() < 1e-9);
        // even side: first slot is one of the four nearest the centre
        let even = diamond_offsets(2, 300.0);
        assert!((even[0].norm() - 150.0 * SQRT_2).abs() < 1e-9);
    }

    #[test]
    fn leader_matches_track_on_grid() {
        let s = spec(36);
        let c = s.central_nodes()[2];
        let p = s.position_of(c, 45.0).unwrap();
        assert_eq!(p.local, s.groups[2].track[450].local);
    }

    #[test]
    fn groups_are_rigid() {
        let s = spec(36);
        for t in [0.0, 33.37, 45.0, 61.0, 99.95] {
            let a = s.position_of(NodeId(9), t).unwrap().local;
            let b = s.position_of(NodeId(17), t).unwrap().local;
            let a0 = s.position_of(NodeId(9), 0.0).unwrap().local;
            let b0 = s.position_of(NodeId(17), 0.0).unwrap().local;
            assert!(((a - b).norm() - (a0 - b0).norm()).abs() < 1e-6);
        }
    }

    #[test]
    fn headings_restored_after_rejoin() {
        let s = spec(36);
        for g in &s.groups {
            let last = g.track.last().unwrap();
            let psi = crate::kinematics::wrap_pi(last.attitude.psi);
            assert!(psi.abs() < 1e-9, "{psi}");
            assert!(last.attitude.theta.abs() < 1e-9);
            assert!(last.attitude.gamma.abs() < 1e-9);
        }
    }

    #[test]
    fn local_frame_round_trip() {
        let s = spec(36);
        let p = Vec3::new(1234.0, -5678.0, 900.0);
        let back = s.frame.to_local(&s.frame.to_geo(&p));
        assert!((back - p).norm() < 1e-6);
    }

    #[test]
    fn out_of_range_queries() {
        let s = spec(36);
        assert!(matches!(s.position_of(NodeId(36), 1.0), Err(MobilityError::UnknownNode(_))));
        assert!(matches!(s.position_of(NodeId(0), 100.5), Err(MobilityError::TimeOutOfRange { .. })));
    }

    #[test]
    fn table_interpolates_and_agrees_on_grid() {
        let s = spec(36);
        let table = PositionTable::from_spec(&s);
        assert_eq!(table.sample_count(), 1001);
        let exact = s.position_of(NodeId(5), 12.3).unwrap().local;
        assert!((table.position(NodeId(5), 12.3) - exact).norm() < 1e-6);
        let mid = table.position(NodeId(5), 12.35);
        assert!((mid - s.position_of(NodeId(5), 12.35).unwrap().local).norm() < 1.0);
    }
}
