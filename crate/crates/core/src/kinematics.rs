//! Coordinate frames and fourth-order Runge–Kutta integration of the
//! kinematic state of one aircraft.
//!
//! Frames: the trajectory frame (t) has `x` to the horizontal right and `y`
//! along the velocity; the navigation frame (n) is east/north/up; the
//! terrestrial frame (e) is latitude/longitude/altitude.

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;

/// Smallest |cos β| accepted by the position equations.
pub const POLAR_COS_LIMIT: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KinematicsError {
    #[error("latitude {beta} rad is too close to a pole")]
    PolarSingularity { beta: f64 },
    #[error("integration step must be positive and finite, got {0}")]
    InvalidStep(f64),
}

/// Course (ψ), pitch (θ) and roll (γ) angles in radians.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Attitude {
    pub psi: f64,
    pub theta: f64,
    pub gamma: f64,
}

impl Attitude {
    pub fn new(psi: f64, theta: f64, gamma: f64) -> Self {
        Self { psi, theta, gamma }
    }

    /// Wraps ψ into `[0, 2π)` and γ into `(−π, π]`.
    pub fn normalized(self) -> Self {
        Self {
            psi: wrap_two_pi(self.psi),
            theta: self.theta,
            gamma: wrap_pi(self.gamma),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.psi.is_finite() && self.theta.is_finite() && self.gamma.is_finite()
    }
}

pub fn wrap_two_pi(a: f64) -> f64 {
    if (0.0..TAU).contains(&a) {
        return a;
    }
    let w = a.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if w >= TAU {
        0.0
    } else {
        w
    }
}

pub fn wrap_pi(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let w = PI - (PI - a).rem_euclid(TAU);
    if w <= -PI {
        w + TAU
    } else {
        w
    }
}

/// Latitude β, longitude λ (radians) and altitude h (metres).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GeoPosition {
    pub beta: f64,
    pub lambda: f64,
    pub h: f64,
}

impl GeoPosition {
    pub fn new(beta: f64, lambda: f64, h: f64) -> Self {
        Self { beta, lambda, h }
    }

    /// Wraps λ into `[−π, π)`.
    pub fn normalized(self) -> Self {
        if (-PI..PI).contains(&self.lambda) {
            return self;
        }
        let lambda = (self.lambda + PI).rem_euclid(TAU) - PI;
        Self { lambda, ..self }
    }
}

/// Earth constants used by the position equations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EarthModel {
    /// Equatorial radius R_e (m).
    pub equatorial_radius: f64,
    /// Oblateness e.
    pub oblateness: f64,
    /// Gravitational acceleration g (m/s²).
    pub gravity: f64,
    /// Use the textbook `sin²β` radii instead of the `sin 2β` forms.
    pub standard_radii: bool,
}

impl Default for EarthModel {
    fn default() -> Self {
        Self {
            equatorial_radius: 6_378_137.0,
            oblateness: 1.0 / 298.257,
            gravity: 9.806_65,
            standard_radii: false,
        }
    }
}

impl EarthModel {
    pub fn spherical(radius: f64) -> Self {
        Self {
            equatorial_radius: radius,
            oblateness: 0.0,
            ..Self::default()
        }
    }

    pub fn is_valid(&self) -> bool {
        self.equatorial_radius > 0.0
            && (0.0..1.0).contains(&self.oblateness)
            && self.gravity > 0.0
    }

    /// Length term added to the radii in the latitude/longitude rates.
    /// Taken as the altitude.
    pub fn length_term(&self, pos: &GeoPosition) -> f64 {
        pos.h
    }
}

/// Returns `(R_N, R_M)`: prime-vertical and meridian radii of curvature.
///
/// Default forms are `R_N = R_e(1 − 2e + 3e·sin 2β)` and
/// `R_M = R_e(1 + e·sin 2β)`. With `standard_radii` the usual first-order
/// ellipsoid forms `R_N = R_e(1 + e·sin²β)`, `R_M = R_e(1 − 2e + 3e·sin²β)`
/// are used instead.
pub fn radii_of_curvature(beta: f64, earth: &EarthModel) -> (f64, f64) {
    let re = earth.equatorial_radius;
    let e = earth.oblateness;
    if earth.standard_radii {
        let s2 = beta.sin().powi(2);
        (re * (1.0 + e * s2), re * (1.0 - 2.0 * e + 3.0 * e * s2))
    } else {
        let s = (2.0 * beta).sin();
        (re * (1.0 - 2.0 * e + 3.0 * e * s), re * (1.0 + e * s))
    }
}

/// Rotation from the trajectory frame to the navigation frame.
pub fn rotation_t_to_n(att: &Attitude) -> Matrix3<f64> {
    let (sp, cp) = att.psi.sin_cos();
    let (st, ct) = att.theta.sin_cos();
    Matrix3::new(
        cp,
        ct * sp,
        -st * sp, //
        -sp,
        ct * cp,
        -st * cp, //
        0.0,
        st,
        ct,
    )
}

pub fn accel_t_to_n(att: &Attitude, a_t: &Vec3) -> Vec3 {
    rotation_t_to_n(att) * a_t
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KinematicState {
    pub attitude: Attitude,
    /// Velocity in the navigation frame (east, north, up), m/s.
    pub v_n: Vec3,
    pub pos: GeoPosition,
    pub t: f64,
}

impl KinematicState {
    pub fn speed(&self) -> f64 {
        self.v_n.norm()
    }

    fn advanced(&self, d: &StateDerivative, h: f64) -> Self {
        Self {
            attitude: Attitude {
                theta: self.attitude.theta + h * d.omega_b.x,
                gamma: self.attitude.gamma + h * d.omega_b.y,
                psi: self.attitude.psi + h * d.omega_b.z,
            },
            v_n: self.v_n + h * d.a_n,
            pos: GeoPosition {
                beta: self.pos.beta + h * d.beta_dot,
                lambda: self.pos.lambda + h * d.lambda_dot,
                h: self.pos.h + h * d.h_dot,
            },
            t: self.t + h,
        }
    }
}

/// Time derivative of a [`KinematicState`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateDerivative {
    /// `[θ̇, γ̇, ψ̇]`.
    pub omega_b: Vec3,
    pub a_n: Vec3,
    pub beta_dot: f64,
    pub lambda_dot: f64,
    pub h_dot: f64,
}

/// `omega_b` is ordered `[θ̇, γ̇, ψ̇]`; `a_t` is the trajectory-frame
/// acceleration.
pub fn state_derivative(
    s: &KinematicState,
    omega_b: &Vec3,
    a_t: &Vec3,
    earth: &EarthModel,
) -> Result<StateDerivative, KinematicsError> {
    let cos_beta = s.pos.beta.cos();
    if cos_beta.abs() <= POLAR_COS_LIMIT {
        return Err(KinematicsError::PolarSingularity { beta: s.pos.beta });
    }
    let (r_n, r_m) = radii_of_curvature(s.pos.beta, earth);
    let l = earth.length_term(&s.pos);
    Ok(StateDerivative {
        omega_b: *omega_b,
        a_n: accel_t_to_n(&s.attitude, a_t),
        beta_dot: s.v_n.y / (r_m + l),
        lambda_dot: s.v_n.x / cos_beta / (r_n + l),
        h_dot: s.v_n.z,
    })
}

/// One classic four-stage Runge–Kutta step with commands held constant.
pub fn rk4_step(
    s: &KinematicState,
    omega_b: &Vec3,
    a_t: &Vec3,
    earth: &EarthModel,
    dt: f64,
) -> Result<KinematicState, KinematicsError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(KinematicsError::InvalidStep(dt));
    }
    let k1 = state_derivative(s, omega_b, a_t, earth)?;
    let k2 = state_derivative(&s.advanced(&k1, dt / 2.0), omega_b, a_t, earth)?;
    let k3 = state_derivative(&s.advanced(&k2, dt / 2.0), omega_b, a_t, earth)?;
    let k4 = state_derivative(&s.advanced(&k3, dt), omega_b, a_t, earth)?;

    let w = dt / 6.0;
    let combine = |f: fn(&StateDerivative) -> f64| {
        f(&k1) + 2.0 * f(&k2) + 2.0 * f(&k3) + f(&k4)
    };
    let omega = k1.omega_b + 2.0 * k2.omega_b + 2.0 * k3.omega_b + k4.omega_b;
    let a_n = k1.a_n + 2.0 * k2.a_n + 2.0 * k3.a_n + k4.a_n;

    let next = KinematicState {
        attitude: Attitude {
            theta: s.attitude.theta + w * omega.x,
            gamma: s.attitude.gamma + w * omega.y,
            psi: s.attitude.psi + w * omega.z,
        }
        .normalized(),
        v_n: s.v_n + w * a_n,
        pos: GeoPosition {
            beta: s.pos.beta + w * combine(|d| d.beta_dot),
            lambda: s.pos.lambda + w * combine(|d| d.lambda_dot),
            h: s.pos.h + w * combine(|d| d.h_dot),
        }
        .normalized(),
        t: s.t + dt,
    };
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn state_at(beta: f64, v: Vec3, att: Attitude) -> KinematicState {
        KinematicState {
            attitude: att,
            v_n: v,
            pos: GeoPosition::new(beta, 0.1, 5000.0),
            t: 0.0,
        }
    }

    #[test]
    fn rotation_identity_at_zero() {
        let m = rotation_t_to_n(&Attitude::default());
        assert_abs_diff_eq!(m, Matrix3::identity(), epsilon = 0.0);
    }

    #[test]
    fn rotation_quarter_turn() {
        let m = rotation_t_to_n(&Attitude::new(PI / 2.0, 0.0, 0.0));
        let expected = Matrix3::new(0.0, 1.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert_abs_diff_eq!(m, expected, epsilon = 1e-15);
    }

    #[test]
    fn rotation_is_orthonormal() {
        let m = rotation_t_to_n(&Attitude::new(0.3, 0.1, 0.7));
        let err = (m * m.transpose() - Matrix3::identity()).abs().max();
        assert!(err < 1e-12, "{err}");
    }

    #[test]
    fn forward_axis_points_along_course() {
        // y_t must map to (sinψ cosθ, cosψ cosθ, sinθ)
        let att = Attitude::new(0.9, 0.2, 0.0);
        let fwd = rotation_t_to_n(&att) * Vec3::new(0.0, 1.0, 0.0);
        let expected = Vec3::new(0.9f64.sin() * 0.2f64.cos(), 0.9f64.cos() * 0.2f64.cos(), 0.2f64.sin());
        assert_abs_diff_eq!(fwd, expected, epsilon = 1e-15);
    }

    #[test]
    fn accel_zero_and_identity() {
        let att = Attitude::new(0.3, 0.1, 0.0);
        assert_eq!(accel_t_to_n(&att, &Vec3::zeros()), Vec3::zeros());
        let a = accel_t_to_n(&Attitude::default(), &Vec3::new(0.0, 2.5, 0.0));
        assert_eq!(a, Vec3::new(0.0, 2.5, 0.0));
    }

    #[test]
    fn accel_lift_term_matches_hand_product() {
        let g = 9.80665;
        let gamma = 30f64.to_radians();
        let (psi, theta) = (0.3f64, 0.1f64);
        let az = g * gamma.tan();
        let a = accel_t_to_n(&Attitude::new(psi, theta, gamma), &Vec3::new(0.0, 0.0, az));
        // third column of the rotation times az
        let expected = Vec3::new(
            -theta.sin() * psi.sin() * az,
            -theta.sin() * psi.cos() * az,
            theta.cos() * az,
        );
        assert_abs_diff_eq!(a, expected, epsilon = 1e-14);
    }

    #[test]
    fn radii_at_equator_and_sphere() {
        let earth = EarthModel::default();
        let (rn, rm) = radii_of_curvature(0.0, &earth);
        assert_eq!(rn, earth.equatorial_radius * (1.0 - 2.0 * earth.oblateness));
        assert_eq!(rm, earth.equatorial_radius);

        let sphere = EarthModel::spherical(6_371_000.0);
        let (rn, rm) = radii_of_curvature(0.77, &sphere);
        assert_eq!(rn, 6_371_000.0);
        assert_eq!(rm, 6_371_000.0);
    }

    #[test]
    fn radii_at_45_degrees() {
        // sin(2·π/4) = 1: R_N = R_e(1 + e), R_M = R_e(1 + e)
        let earth = EarthModel {
            equatorial_radius: 6_378_137.0,
            oblateness: 1.0 / 298.257,
            ..EarthModel::default()
        };
        let (rn, rm) = radii_of_curvature(PI / 4.0, &earth);
        let expected = 6_378_137.0 * (1.0 + 1.0 / 298.257);
        assert!((rn - 6_399_521.8).abs() < 0.1, "{rn}");
        assert!((rn - expected).abs() < 1e-6);
        assert!((rm - expected).abs() < 1e-6);
    }

    #[test]
    fn standard_radii_switch() {
        let earth = EarthModel {
            standard_radii: true,
            ..EarthModel::default()
        };
        let beta: f64 = 0.6;
        let (rn, rm) = radii_of_curvature(beta, &earth);
        let (re, e, s2) = (earth.equatorial_radius, earth.oblateness, beta.sin().powi(2));
        assert_eq!(rn, re * (1.0 + e * s2));
        assert_eq!(rm, re * (1.0 - 2.0 * e + 3.0 * e * s2));
    }

    #[test]
    fn derivative_static_hover_is_zero() {
        let s = state_at(0.6, Vec3::zeros(), Attitude::default());
        let d = state_derivative(&s, &Vec3::zeros(), &Vec3::zeros(), &EarthModel::default()).unwrap();
        assert_eq!(d.omega_b, Vec3::zeros());
        assert_eq!(d.a_n, Vec3::zeros());
        assert_eq!((d.beta_dot, d.lambda_dot, d.h_dot), (0.0, 0.0, 0.0));
    }

    #[test]
    fn derivative_northward_flight() {
        let earth = EarthModel::default();
        let s = state_at(0.6, Vec3::new(0.0, 250.0, 0.0), Attitude::default());
        let d = state_derivative(&s, &Vec3::zeros(), &Vec3::zeros(), &earth).unwrap();
        let (_, rm) = radii_of_curvature(0.6, &earth);
        assert_eq!(d.beta_dot, 250.0 / (rm + 5000.0));
        assert_eq!(d.lambda_dot, 0.0);
    }

    #[test]
    fn derivative_copies_angular_rates() {
        let s = state_at(0.6, Vec3::zeros(), Attitude::default());
        let d = state_derivative(&s, &Vec3::new(0.01, 0.0, 0.0), &Vec3::zeros(), &EarthModel::default())
            .unwrap();
        assert_eq!(d.omega_b, Vec3::new(0.01, 0.0, 0.0));
    }

    #[test]
    fn polar_singularity_rejected() {
        let s = state_at(PI / 2.0, Vec3::zeros(), Attitude::default());
        let err = state_derivative(&s, &Vec3::zeros(), &Vec3::zeros(), &EarthModel::default());
        assert!(matches!(err, Err(KinematicsError::PolarSingularity { .. })));
    }

    #[test]
    fn rk4_zero_inputs_only_advance_time() {
        let s = state_at(0.6, Vec3::zeros(), Attitude::new(1.0, 0.1, 0.2));
        let n = rk4_step(&s, &Vec3::zeros(), &Vec3::zeros(), &EarthModel::default(), 0.01).unwrap();
        assert_eq!(n.attitude, s.attitude);
        assert_eq!(n.v_n, s.v_n);
        assert_eq!(n.pos, s.pos);
        assert_eq!(n.t, 0.01);
    }

    #[test]
    fn rk4_constant_acceleration_is_exact() {
        let earth = EarthModel::default();
        let mut s = state_at(0.0, Vec3::zeros(), Attitude::default());
        for _ in 0..100 {
            s = rk4_step(&s, &Vec3::zeros(), &Vec3::new(0.0, 1.0, 0.0), &earth, 0.01).unwrap();
        }
        assert!((s.v_n.y - 1.0).abs() < 1e-9, "{}", s.v_n.y);
    }

    #[test]
    fn rk4_rejects_bad_step() {
        let s = state_at(0.0, Vec3::zeros(), Attitude::default());
        for dt in [0.0, -0.1, f64::NAN] {
            assert!(matches!(
                rk4_step(&s, &Vec3::zeros(), &Vec3::zeros(), &EarthModel::default(), dt),
                Err(KinematicsError::InvalidStep(_))
            ));
        }
    }

    #[test]
    fn wrapping() {
        assert_eq!(wrap_two_pi(-0.5), TAU - 0.5);
        assert_eq!(wrap_two_pi(TAU), 0.0);
        assert!(wrap_two_pi(-1e-18) < TAU);
        assert_eq!(wrap_pi(PI), PI);
        assert!((wrap_pi(-PI) - PI).abs() < 1e-15);
        assert!((wrap_pi(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-15);
    }
}
