//! Basic maneuvers, flight plans and trajectory generation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::{rk4_step, EarthModel, KinematicState, KinematicsError, Vec3};

/// Snap tolerance when comparing times on the export grid.
const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ManeuverError {
    #[error("segment {index}: {reason}")]
    InvalidSegment { index: usize, reason: String },
    #[error("time {t} s is outside the plan [{start}, {end}] s")]
    OutOfPlanRange { t: f64, start: f64, end: f64 },
    #[error("invalid trajectory options: {0}")]
    InvalidOptions(String),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ManeuverKind {
    UniformRectilinear,
    UniformAccel,
    CoordTurnBank,
    CoordTurnHold,
    CoordTurnLevel,
    ClimbEntry,
    ClimbHold,
    ClimbExit,
}

impl ManeuverKind {
    pub const ALL: [ManeuverKind; 8] = [
        ManeuverKind::UniformRectilinear,
        ManeuverKind::UniformAccel,
        ManeuverKind::CoordTurnBank,
        ManeuverKind::CoordTurnHold,
        ManeuverKind::CoordTurnLevel,
        ManeuverKind::ClimbEntry,
        ManeuverKind::ClimbHold,
        ManeuverKind::ClimbExit,
    ];
}

/// Parameters read by the maneuver kinds. Unused fields stay zero.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ManeuverParams {
    /// Forward acceleration (m/s²).
    pub accel: f64,
    /// Roll rate while banking or levelling (rad/s).
    pub roll_rate: f64,
    /// Course rate while holding a turn (rad/s).
    pub course_rate: f64,
    /// Bank angle held during a turn (rad).
    pub bank_angle: f64,
    /// Pitch rate while entering or leaving a climb (rad/s).
    pub pitch_rate: f64,
    /// Radius of the pull-up arc (m).
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ManeuverSegment {
    pub kind: ManeuverKind,
    pub duration: f64,
    pub params: ManeuverParams,
}

impl ManeuverSegment {
    fn with(kind: ManeuverKind, duration: f64, params: ManeuverParams) -> Self {
        Self { kind, duration, params }
    }

    pub fn straight(duration: f64) -> Self {
        Self::with(ManeuverKind::UniformRectilinear, duration, ManeuverParams::default())
    }

    pub fn accelerate(duration: f64, accel: f64) -> Self {
        Self::with(ManeuverKind::UniformAccel, duration, ManeuverParams { accel, ..Default::default() })
    }

    /// Rolls at `roll_rate`; negative rates bank to the left.
    pub fn bank(duration: f64, roll_rate: f64) -> Self {
        Self::with(ManeuverKind::CoordTurnBank, duration, ManeuverParams { roll_rate, ..Default::default() })
    }

    pub fn turn_hold(duration: f64, course_rate: f64, bank_angle: f64) -> Self {
        Self::with(
            ManeuverKind::CoordTurnHold,
            duration,
            ManeuverParams { course_rate, bank_angle, ..Default::default() },
        )
    }

    /// Undoes a bank made with the same `roll_rate`.
    pub fn level(duration: f64, roll_rate: f64) -> Self {
        Self::with(ManeuverKind::CoordTurnLevel, duration, ManeuverParams { roll_rate, ..Default::default() })
    }

    pub fn climb_entry(duration: f64, pitch_rate: f64, radius: f64) -> Self {
        Self::with(ManeuverKind::ClimbEntry, duration, ManeuverParams { pitch_rate, radius, ..Default::default() })
    }

    pub fn climb_hold(duration: f64) -> Self {
        Self::with(ManeuverKind::ClimbHold, duration, ManeuverParams::default())
    }

    /// Undoes a climb entry made with the same `pitch_rate` and `radius`.
    pub fn climb_exit(duration: f64, pitch_rate: f64, radius: f64) -> Self {
        Self::with(ManeuverKind::ClimbExit, duration, ManeuverParams { pitch_rate, radius, ..Default::default() })
    }

    pub fn validate(&self, index: usize) -> Result<(), ManeuverError> {
        let fail = |reason: &str| {
            Err(ManeuverError::InvalidSegment { index, reason: reason.to_string() })
        };
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return fail("duration must be positive and finite");
        }
        let p = &self.params;
        let all = [p.accel, p.roll_rate, p.course_rate, p.bank_angle, p.pitch_rate, p.radius];
        if all.iter().any(|v| !v.is_finite()) {
            return fail("non-finite parameter");
        }
        match self.kind {
            ManeuverKind::CoordTurnHold if p.bank_angle.abs() >= std::f64::consts::FRAC_PI_2 => {
                fail("bank angle must be inside (-90°, 90°)")
            }
            ManeuverKind::ClimbEntry | ManeuverKind::ClimbExit if p.radius <= 0.0 => {
                fail("pull-up radius must be positive")
            }
            _ => Ok(()),
        }
    }
}

/// Body angular rates `[θ̇, γ̇, ψ̇]` and trajectory-frame acceleration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Command {
    pub omega_b: Vec3,
    pub a_t: Vec3,
}

/// The command pair of a maneuver, as tabulated for the eight kinds.
pub fn command_for(seg: &ManeuverSegment, gravity: f64) -> Command {
    let p = &seg.params;
    let (omega_b, a_t) = match seg.kind {
        ManeuverKind::UniformRectilinear => (Vec3::zeros(), Vec3::zeros()),
        ManeuverKind::UniformAccel => (Vec3::zeros(), Vec3::new(0.0, p.accel, 0.0)),
        ManeuverKind::CoordTurnBank => (Vec3::new(0.0, p.roll_rate, 0.0), Vec3::zeros()),
        ManeuverKind::CoordTurnHold => (
            Vec3::new(0.0, 0.0, p.course_rate),
            Vec3::new(0.0, 0.0, gravity * p.bank_angle.tan()),
        ),
        ManeuverKind::CoordTurnLevel => (Vec3::new(0.0, -p.roll_rate, 0.0), Vec3::zeros()),
        ManeuverKind::ClimbEntry => (
            Vec3::new(p.pitch_rate, 0.0, 0.0),
            Vec3::new(0.0, 0.0, p.pitch_rate * p.pitch_rate * p.radius),
        ),
        ManeuverKind::ClimbHold => (Vec3::zeros(), Vec3::zeros()),
        ManeuverKind::ClimbExit => (
            Vec3::new(-p.pitch_rate, 0.0, 0.0),
            Vec3::new(0.0, 0.0, -p.pitch_rate * p.pitch_rate * p.radius),
        ),
    };
    Command { omega_b, a_t }
}

/// Acceleration actually fed to the integrator.
///
/// The tabulated turn-hold term `g·tanγ` is the lift component that bends
/// the path; it is applied along the horizontal-right axis so the course
/// change and the velocity rotation agree. Pull-up terms point toward the
/// centre of the commanded pitch change, so a negative pitch rate descends.
pub fn integration_accel(seg: &ManeuverSegment, cmd: &Command) -> Vec3 {
    match seg.kind {
        ManeuverKind::CoordTurnHold => Vec3::new(cmd.a_t.z, 0.0, 0.0),
        ManeuverKind::ClimbEntry | ManeuverKind::ClimbExit => {
            let sign = if cmd.omega_b.x < 0.0 { -1.0 } else { 1.0 };
            Vec3::new(0.0, 0.0, sign * cmd.a_t.z.abs())
        }
        _ => cmd.a_t,
    }
}

/// An initial state followed by back-to-back maneuver segments.
#[derive(Debug, Clone, PartialEq)]
pub struct FlightPlan {
    pub initial: KinematicState,
    pub segments: Vec<ManeuverSegment>,
}

impl FlightPlan {
    pub fn new(initial: KinematicState, segments: Vec<ManeuverSegment>) -> Result<Self, ManeuverError> {
        for (i, s) in segments.iter().enumerate() {
            s.validate(i)?;
        }
        Ok(Self { initial, segments })
    }

    pub fn start_time(&self) -> f64 {
        self.initial.t
    }

    pub fn end_time(&self) -> f64 {
        self.initial.t + self.segments.iter().map(|s| s.duration).sum::<f64>()
    }

    /// Start times of each segment.
    pub fn boundaries(&self) -> Vec<f64> {
        let mut t = self.initial.t;
        let mut out = Vec::with_capacity(self.segments.len() + 1);
        out.push(t);
        for s in &self.segments {
            t += s.duration;
            out.push(t);
        }
        out
    }

    /// Segment active at `t`; intervals are half-open except the last.
    pub fn segment_at(&self, t: f64) -> Result<(usize, &ManeuverSegment), ManeuverError> {
        let (start, end) = (self.start_time(), self.end_time());
        if self.segments.is_empty() || t < start || t > end || !t.is_finite() {
            return Err(ManeuverError::OutOfPlanRange { t, start, end });
        }
        let mut seg_end = start;
        for (i, s) in self.segments.iter().enumerate() {
            seg_end += s.duration;
            if t < seg_end {
                return Ok((i, s));
            }
        }
        let last = self.segments.len() - 1;
        Ok((last, &self.segments[last]))
    }
}

pub fn command_at(plan: &FlightPlan, t: f64, gravity: f64) -> Result<Command, ManeuverError> {
    let (_, seg) = plan.segment_at(t)?;
    Ok(command_for(seg, gravity))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryOptions {
    /// Largest integration step (s).
    pub max_step: f64,
    /// Spacing of exported samples (s).
    pub export_interval: f64,
}

impl Default for TrajectoryOptions {
    fn default() -> Self {
        Self { max_step: 0.01, export_interval: 0.1 }
    }
}

pub type TrajectorySample = KinematicState;

/// Integrates `plan` and returns samples at every multiple of the export
/// interval from the plan start up to `t_end`. Steps never straddle a
/// segment boundary.
pub fn generate_trajectory(
    plan: &FlightPlan,
    earth: &EarthModel,
    opts: &TrajectoryOptions,
    t_end: f64,
) -> Result<Vec<TrajectorySample>, ManeuverError> {
    if !(opts.max_step > 0.0 && opts.export_interval > 0.0) {
        return Err(ManeuverError::InvalidOptions("step and export interval must be positive".into()));
    }
    let start = plan.start_time();
    if t_end > plan.end_time() + TIME_EPS || t_end < start {
        return Err(ManeuverError::OutOfPlanRange { t: t_end, start, end: plan.end_time() });
    }
    let exports = ((t_end - start) / opts.export_interval + TIME_EPS).floor() as usize;
    let bounds = plan.boundaries();

    let mut state = plan.initial;
    let mut out = Vec::with_capacity(exports + 1);
    out.push(state);
    let mut seg_idx = 0usize;
    for k in 1..=exports {
        let target = start + k as f64 * opts.export_interval;
        while target - state.t > TIME_EPS {
            while seg_idx + 1 < plan.segments.len() && bounds[seg_idx + 1] - state.t <= TIME_EPS {
                seg_idx += 1;
            }
            let seg_end = bounds[seg_idx + 1];
            let mut stop = target.min(state.t + opts.max_step);
            if seg_end > state.t + TIME_EPS && seg_end < stop {
                stop = seg_end;
            }
            let seg = &plan.segments[seg_idx];
            let cmd = command_for(seg, earth.gravity);
            let a_t = integration_accel(seg, &cmd);
            state = rk4_step(&state, &cmd.omega_b, &a_t, earth, stop - state.t)?;
            state.t = stop;
        }
        state.t = target;
        out.push(state);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{Attitude, GeoPosition};

    const G: f64 = 9.80665;

    fn level_state(speed: f64) -> KinematicState {
        KinematicState {
            attitude: Attitude::default(),
            v_n: Vec3::new(0.0, speed, 0.0),
            pos: GeoPosition::new(0.0, 0.0, 1000.0),
            t: 0.0,
        }
    }

    fn flat_earth() -> EarthModel {
        EarthModel { equatorial_radius: 1e12, oblateness: 0.0, gravity: G, standard_radii: false }
    }

    #[test]
    fn commands_match_table() {
        let p = ManeuverParams {
            accel: 2.0,
            roll_rate: 0.1,
            course_rate: 0.05,
            bank_angle: 0.3,
            pitch_rate: 0.02,
            radius: 500.0,
        };
        let c = |kind| command_for(&ManeuverSegment { kind, duration: 1.0, params: p }, G);
        assert_eq!(c(ManeuverKind::UniformRectilinear).a_t, Vec3::zeros());
        assert_eq!(c(ManeuverKind::UniformAccel).a_t, Vec3::new(0.0, 2.0, 0.0));
        assert_eq!(c(ManeuverKind::CoordTurnBank).omega_b, Vec3::new(0.0, 0.1, 0.0));
        let hold = c(ManeuverKind::CoordTurnHold);
        assert_eq!(hold.omega_b, Vec3::new(0.0, 0.0, 0.05));
        assert_eq!(hold.a_t, Vec3::new(0.0, 0.0, G * 0.3f64.tan()));
        assert_eq!(c(ManeuverKind::CoordTurnLevel).omega_b, Vec3::new(0.0, -0.1, 0.0));
        let entry = c(ManeuverKind::ClimbEntry);
        assert_eq!(entry.omega_b, Vec3::new(0.02, 0.0, 0.0));
        assert_eq!(entry.a_t, Vec3::new(0.0, 0.0, 0.02 * 0.02 * 500.0));
        assert_eq!(c(ManeuverKind::ClimbHold).omega_b, Vec3::zeros());
        let exit = c(ManeuverKind::ClimbExit);
        assert_eq!(exit.omega_b, Vec3::new(-0.02, 0.0, 0.0));
        assert_eq!(exit.a_t, Vec3::new(0.0, 0.0, -0.02 * 0.02 * 500.0));
    }

    #[test]
    fn segment_lookup_half_open() {
        let plan = FlightPlan::new(
            level_state(100.0),
            vec![ManeuverSegment::straight(1.0), ManeuverSegment::accelerate(2.0, 1.0)],
        )
        .unwrap();
        assert_eq!(plan.segment_at(0.0).unwrap().0, 0);
        assert_eq!(plan.segment_at(1.0).unwrap().0, 1);
        assert_eq!(plan.segment_at(3.0).unwrap().0, 1);
        assert!(matches!(plan.segment_at(3.1), Err(ManeuverError::OutOfPlanRange { .. })));
        assert!(matches!(plan.segment_at(-0.1), Err(ManeuverError::OutOfPlanRange { .. })));
    }

    #[test]
    fn rejects_bad_segments() {
        let s = level_state(100.0);
        assert!(FlightPlan::new(s, vec![ManeuverSegment::straight(0.0)]).is_err());
        assert!(FlightPlan::new(s, vec![ManeuverSegment::turn_hold(1.0, 0.1, 1.6)]).is_err());
        assert!(FlightPlan::new(s, vec![ManeuverSegment::climb_entry(1.0, 0.1, 0.0)]).is_err());
    }

    #[test]
    fn straight_flight_keeps_speed_and_heading() {
        let plan = FlightPlan::new(level_state(250.0), vec![ManeuverSegment::straight(10.0)]).unwrap();
        let tr = generate_trajectory(&plan, &flat_earth(), &TrajectoryOptions::default(), 10.0).unwrap();
        assert_eq!(tr.len(), 101);
        let last = tr.last().unwrap();
        assert!((last.speed() - 250.0).abs() < 1e-12);
        assert!((last.pos.beta * (1e12 + 1000.0) - 2500.0).abs() < 1e-6);
    }

    #[test]
    fn bank_then_level_restores_roll() {
        let plan = FlightPlan::new(
            level_state(250.0),
            vec![ManeuverSegment::bank(1.0, 0.3), ManeuverSegment::level(1.0, 0.3)],
        )
        .unwrap();
        let tr = generate_trajectory(&plan, &flat_earth(), &TrajectoryOptions::default(), 2.0).unwrap();
        assert!((tr[10].attitude.gamma - 0.3).abs() < 1e-12);
        assert!(tr.last().unwrap().attitude.gamma.abs() < 1e-12);
    }

    #[test]
    fn climb_and_descent_return_level() {
        for rate in [0.1, -0.1] {
            let radius = 250.0 / 0.1;
            let plan = FlightPlan::new(
                level_state(250.0),
                vec![
                    ManeuverSegment::climb_entry(2.0, rate, radius),
                    ManeuverSegment::climb_hold(3.0),
                    ManeuverSegment::climb_exit(2.0, rate, radius),
                ],
            )
            .unwrap();
            let tr = generate_trajectory(&plan, &flat_earth(), &TrajectoryOptions::default(), 7.0).unwrap();
            let last = tr.last().unwrap();
            assert!(last.attitude.theta.abs() < 1e-12);
            assert!(last.v_n.z.abs() < 1e-6, "{}", last.v_n.z);
            assert!((last.speed() - 250.0).abs() < 1e-6);
            assert_eq!(last.pos.h > 1000.0, rate > 0.0);
        }
    }

    #[test]
    fn steps_respect_boundaries_off_grid() {
        // boundary at 0.37 s, between export samples
        let plan = FlightPlan::new(
            level_state(100.0),
            vec![ManeuverSegment::accelerate(0.37, 1.0), ManeuverSegment::straight(1.0)],
        )
        .unwrap();
        let tr = generate_trajectory(&plan, &flat_earth(), &TrajectoryOptions::default(), 1.0).unwrap();
        assert!((tr.last().unwrap().v_n.y - 100.37).abs() < 1e-9);
    }

    #[test]
    fn trajectory_end_beyond_plan_fails() {
        let plan = FlightPlan::new(level_state(100.0), vec![ManeuverSegment::straight(1.0)]).unwrap();
        let r = generate_trajectory(&plan, &flat_earth(), &TrajectoryOptions::default(), 2.0);
        assert!(matches!(r, Err(ManeuverError::OutOfPlanRange { .. })));
    }
}
