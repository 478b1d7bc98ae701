//! World/target frame bookkeeping and the cylindrical feedback transformation.
//!
//! A robot at world position `p` has cylindrical coordinates
//! `q = (rho, phi, z)` of `R_T^T (p - p_T)`: radius in the encirclement plane,
//! phase measured from the target frame's x axis, and height above the plane.
//! [`cartesian_command`] maps a desired `q_dot` back to a world-frame velocity
//! so that the closed loop in cylindrical coordinates is `q_dot = v`.

use std::f64::consts::TAU;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Radii below this are treated as lying on the target axis, where the phase
/// and the Jacobian inverse are undefined.
pub const SINGULAR_RADIUS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CylCoords {
    pub rho: f64,
    pub phi: f64,
    pub z: f64,
}

impl CylCoords {
    pub fn new(rho: f64, phi: f64, z: f64) -> Self {
        CylCoords { rho, phi, z }
    }

    /// Inverse map: Cartesian point in the target frame.
    pub fn to_local(&self) -> Vec3 {
        Vec3::new(self.rho * self.phi.cos(), self.rho * self.phi.sin(), self.z)
    }
}

/// Cylindrical velocity command `(rho_dot, phi_dot, z_dot)`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CylVelocity {
    pub rho: f64,
    pub phi: f64,
    pub z: f64,
}

impl CylVelocity {
    pub fn new(rho: f64, phi: f64, z: f64) -> Self {
        CylVelocity { rho, phi, z }
    }

    pub fn as_vec(&self) -> Vec3 {
        Vec3::new(self.rho, self.phi, self.z)
    }
}

/// Target point and encirclement-plane orientation.
///
/// `rotation` maps target-frame vectors to the world frame (its columns are
/// the target axes). The plane's angular velocity is stored in the world frame
/// and the rotation rate is derived from it, `R_dot = [w]x R`.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetFrame {
    pub position: Vec3,
    pub velocity: Vec3,
    pub rotation: Mat3,
    pub angular_velocity: Vec3,
}

impl Default for TargetFrame {
    fn default() -> Self {
        TargetFrame {
            position: Vec3::zeros(),
            velocity: Vec3::zeros(),
            rotation: Mat3::identity(),
            angular_velocity: Vec3::zeros(),
        }
    }
}

impl TargetFrame {
    pub fn rotation_rate(&self) -> Mat3 {
        skew(&self.angular_velocity) * self.rotation
    }

    /// Position relative to the target, expressed in the target frame.
    pub fn to_local(&self, p: &Vec3) -> Vec3 {
        self.rotation.transpose() * (p - self.position)
    }

    pub fn to_world(&self, local: &Vec3) -> Vec3 {
        self.position + self.rotation * local
    }

    pub fn advance(&self, dt: f64) -> TargetFrame {
        advance_frame(self, dt)
    }
}

pub fn skew(w: &Vec3) -> Mat3 {
    Mat3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Vector of the skew-symmetric part of `m`.
pub fn vee(m: &Mat3) -> Vec3 {
    Vec3::new(
        0.5 * (m[(2, 1)] - m[(1, 2)]),
        0.5 * (m[(0, 2)] - m[(2, 0)]),
        0.5 * (m[(1, 0)] - m[(0, 1)]),
    )
}

/// Rodrigues formula for `exp([w]x dt)`.
pub fn rotation_exp(w: &Vec3, dt: f64) -> Mat3 {
    let axis_angle = w * dt;
    let angle = axis_angle.norm();
    if angle < 1e-15 {
        return Mat3::identity() + skew(&axis_angle);
    }
    let k = skew(&(axis_angle / angle));
    Mat3::identity() + k * angle.sin() + k * k * (1.0 - angle.cos())
}

/// Gram-Schmidt on the columns; the third column is rebuilt as a cross
/// product so the result is a proper rotation. Returns `None` when the first
/// two columns are (nearly) dependent.
pub fn orthonormalize(m: &Mat3) -> Option<Mat3> {
    let c0: Vec3 = m.column(0).into();
    let c1: Vec3 = m.column(1).into();
    let e0 = c0.try_normalize(1e-12)?;
    let e1 = (c1 - e0 * e0.dot(&c1)).try_normalize(1e-12)?;
    let e2 = e0.cross(&e1);
    Some(Mat3::from_columns(&[e0, e1, e2]))
}

/// Rotation whose third column is `normal`; the first column is the world axis
/// least aligned with the normal, projected onto the plane.
pub fn plane_rotation(normal: &Vec3) -> Option<Mat3> {
    let ez = normal.try_normalize(1e-12)?;
    let seed = [Vec3::x(), Vec3::y(), Vec3::z()]
        .into_iter()
        .min_by(|a, b| a.dot(&ez).abs().total_cmp(&b.dot(&ez).abs()))
        .expect("three candidates");
    let ex = (seed - ez * ez.dot(&seed)).normalize();
    let ey = ez.cross(&ex);
    Some(Mat3::from_columns(&[ex, ey, ez]))
}

/// `atan2` shifted into `[0, 2*pi)`.
pub fn phase_of(y: f64, x: f64) -> f64 {
    let a = y.atan2(x);
    if a >= 0.0 {
        a
    } else {
        let shifted = a + TAU;
        if shifted >= TAU {
            0.0
        } else {
            shifted
        }
    }
}

/// Cylindrical coordinates of a target-frame point.
pub fn cylindrical(p_rel: &Vec3) -> Result<CylCoords> {
    let rho = p_rel.x.hypot(p_rel.y);
    if !(rho >= SINGULAR_RADIUS) {
        return Err(Error::SingularRadius { rho });
    }
    Ok(CylCoords {
        rho,
        phi: phase_of(p_rel.y, p_rel.x),
        z: p_rel.z,
    })
}

pub fn to_cylindrical(p: &Vec3, frame: &TargetFrame) -> Result<CylCoords> {
    cylindrical(&frame.to_local(p))
}

/// `dq/dp` at a target-frame point.
pub fn jacobian(p_rel: &Vec3) -> Result<Mat3> {
    let rho2 = p_rel.x * p_rel.x + p_rel.y * p_rel.y;
    let rho = rho2.sqrt();
    if !(rho >= SINGULAR_RADIUS) {
        return Err(Error::SingularRadius { rho });
    }
    Ok(Mat3::new(
        p_rel.x / rho,
        p_rel.y / rho,
        0.0,
        -p_rel.y / rho2,
        p_rel.x / rho2,
        0.0,
        0.0,
        0.0,
        1.0,
    ))
}

pub fn jacobian_inverse(q: &CylCoords) -> Result<Mat3> {
    if !(q.rho >= SINGULAR_RADIUS) {
        return Err(Error::SingularRadius { rho: q.rho });
    }
    let (s, c) = q.phi.sin_cos();
    Ok(Mat3::new(
        c,
        -q.rho * s,
        0.0,
        s,
        q.rho * c,
        0.0,
        0.0,
        0.0,
        1.0,
    ))
}

/// World-frame velocity `u = v_T + R_T (J^-1 v - R_T_dot^T (p - p_T))` that
/// realizes the cylindrical velocity `v`.
pub fn cartesian_command(p: &Vec3, frame: &TargetFrame, v: &CylVelocity) -> Result<Vec3> {
    let offset = p - frame.position;
    let q = cylindrical(&(frame.rotation.transpose() * offset))?;
    let j_inv = jacobian_inverse(&q)?;
    let drift = frame.rotation_rate().transpose() * offset;
    Ok(frame.velocity + frame.rotation * (j_inv * v.as_vec() - drift))
}

/// Constant-rate propagation of the target frame over `dt`: translation is
/// exact for constant velocity, rotation uses the exponential map followed by
/// re-orthonormalization.
pub fn advance_frame(frame: &TargetFrame, dt: f64) -> TargetFrame {
    let rotated = rotation_exp(&frame.angular_velocity, dt) * frame.rotation;
    TargetFrame {
        position: frame.position + frame.velocity * dt,
        velocity: frame.velocity,
        rotation: orthonormalize(&rotated).unwrap_or(rotated),
        angular_velocity: frame.angular_velocity,
    }
}

#[cfg(test)]
mod tests {
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    use approx::assert_relative_eq;
    use proptest::prelude::*;

    use super::*;

    fn wrap(a: f64) -> f64 {
        (a + PI).rem_euclid(TAU) - PI
    }

    fn rot_z(angle: f64) -> Mat3 {
        let (s, c) = angle.sin_cos();
        Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
    }

    fn frame_with(rotation: Mat3) -> TargetFrame {
        TargetFrame {
            rotation,
            ..TargetFrame::default()
        }
    }

    /// Central differences of `cylindrical`, with the phase row wrapped.
    fn fd_jacobian(p: &Vec3, h: f64) -> Mat3 {
        let mut m = Mat3::zeros();
        for k in 0..3 {
            let mut e = Vec3::zeros();
            e[k] = h;
            let a = cylindrical(&(p + e)).unwrap();
            let b = cylindrical(&(p - e)).unwrap();
            m[(0, k)] = (a.rho - b.rho) / (2.0 * h);
            m[(1, k)] = wrap(a.phi - b.phi) / (2.0 * h);
            m[(2, k)] = (a.z - b.z) / (2.0 * h);
        }
        m
    }

    #[test]
    fn axis_points() {
        let q = to_cylindrical(&Vec3::new(1.0, 0.0, 0.0), &TargetFrame::default()).unwrap();
        assert_eq!((q.rho, q.phi, q.z), (1.0, 0.0, 0.0));
        let q = to_cylindrical(&Vec3::new(0.0, 2.0, 3.0), &TargetFrame::default()).unwrap();
        assert_relative_eq!(q.rho, 2.0);
        assert_relative_eq!(q.phi, FRAC_PI_2);
        assert_relative_eq!(q.z, 3.0);
    }

    #[test]
    fn rotated_frame_matches_direct_composition() {
        let frame = frame_with(rot_z(FRAC_PI_2));
        let p = Vec3::new(1.0, 1.0, -1.0);
        // R^T for a quarter turn about z sends (x, y) to (y, -x).
        let (lx, ly, lz) = (p.y, -p.x, p.z);
        let q = to_cylindrical(&p, &frame).unwrap();
        assert_relative_eq!(q.rho, (lx * lx + ly * ly).sqrt(), epsilon = 1e-12);
        assert_relative_eq!(q.phi, 2.0 * PI - FRAC_PI_4, epsilon = 1e-12);
        assert_relative_eq!(q.z, lz);
    }

    #[test]
    fn singular_radius_is_an_error() {
        let err = to_cylindrical(&Vec3::new(0.0, 0.0, 2.0), &TargetFrame::default());
        assert!(matches!(err, Err(Error::SingularRadius { .. })));
        assert!(jacobian(&Vec3::new(1e-12, 0.0, 0.0)).is_err());
        assert!(jacobian_inverse(&CylCoords::new(0.0, 1.0, 0.0)).is_err());
    }

    #[test]
    fn phase_is_in_zero_two_pi() {
        assert_eq!(phase_of(-0.0, 1.0), 0.0);
        assert!(phase_of(-1e-300, 1.0) < TAU);
        assert_relative_eq!(phase_of(-1.0, 0.0), 1.5 * PI);
    }

    #[test]
    fn jacobian_examples() {
        assert_eq!(
            jacobian(&Vec3::new(1.0, 0.0, 0.0)).unwrap(),
            Mat3::identity()
        );
        let expected = Mat3::new(0.0, 1.0, 0.0, -0.5, 0.0, 0.0, 0.0, 0.0, 1.0);
        let p = Vec3::new(0.0, 2.0, 0.0);
        assert_relative_eq!(fd_jacobian(&p, 1e-6), expected, epsilon = 1e-6);
        assert_relative_eq!(jacobian(&p).unwrap(), expected, epsilon = 1e-15);
    }

    #[test]
    fn jacobian_inverse_examples() {
        assert_eq!(
            jacobian_inverse(&CylCoords::new(1.0, 0.0, 0.0)).unwrap(),
            Mat3::identity()
        );
        let q = CylCoords::new(2.0, FRAC_PI_2, 5.0);
        let inv = jacobian_inverse(&q).unwrap();
        let expected = Mat3::new(0.0, -2.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert_relative_eq!(inv, expected, epsilon = 1e-15);
        let j = jacobian(&q.to_local()).unwrap();
        assert_relative_eq!(j * inv, Mat3::identity(), epsilon = 1e-12);
    }

    #[test]
    fn command_examples() {
        let static_frame = TargetFrame::default();
        let u = cartesian_command(
            &Vec3::new(2.0, 0.0, 0.0),
            &static_frame,
            &CylVelocity::new(0.0, 0.8, 0.0),
        )
        .unwrap();
        assert_relative_eq!(u, Vec3::new(0.0, 1.6, 0.0), epsilon = 1e-15);

        let moving = TargetFrame {
            velocity: Vec3::new(0.5, 0.0, 0.0),
            ..TargetFrame::default()
        };
        let u =
            cartesian_command(&Vec3::new(1.0, 2.0, 3.0), &moving, &CylVelocity::default()).unwrap();
        assert_relative_eq!(u, Vec3::new(0.5, 0.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn zero_command_in_rotating_frame_keeps_q() {
        // One explicit RK4 step of p_dot = u(p, t) with the frame advancing
        // alongside; q must stay put up to the integrator's local error.
        let mut frame = TargetFrame {
            rotation: plane_rotation(&Vec3::new(0.3, 0.2, 1.0)).unwrap(),
            angular_velocity: Vec3::new(0.0, 0.15, 0.0),
            velocity: Vec3::new(0.1, -0.2, 0.05),
            ..TargetFrame::default()
        };
        let mut p = frame.to_world(&Vec3::new(1.5, -0.7, 0.4));
        let q0 = to_cylindrical(&p, &frame).unwrap();
        let dt = 1e-2;
        let zero = CylVelocity::default();
        for _ in 0..100 {
            let f = |p: &Vec3, tau: f64| {
                cartesian_command(p, &advance_frame(&frame, tau), &zero).unwrap()
            };
            let k1 = f(&p, 0.0);
            let k2 = f(&(p + k1 * (dt / 2.0)), dt / 2.0);
            let k3 = f(&(p + k2 * (dt / 2.0)), dt / 2.0);
            let k4 = f(&(p + k3 * dt), dt);
            p += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
            frame = advance_frame(&frame, dt);
        }
        let q1 = to_cylindrical(&p, &frame).unwrap();
        assert_relative_eq!(q1.rho, q0.rho, epsilon = 1e-9);
        assert_relative_eq!(wrap(q1.phi - q0.phi), 0.0, epsilon = 1e-9);
        assert_relative_eq!(q1.z, q0.z, epsilon = 1e-9);
    }

    #[test]
    fn advance_frame_examples() {
        let frame = TargetFrame {
            velocity: Vec3::new(0.0, 0.2, 0.2),
            ..TargetFrame::default()
        };
        let next = advance_frame(&frame, 1.0);
        assert_relative_eq!(next.position, Vec3::new(0.0, 0.2, 0.2), epsilon = 1e-15);
        assert_eq!(next.rotation, Mat3::identity());

        let spinning = TargetFrame {
            rotation: plane_rotation(&Vec3::new(0.0, 1.0, 1.0)).unwrap(),
            angular_velocity: Vec3::new(0.0, 0.15, 0.0),
            ..TargetFrame::default()
        };
        let back = advance_frame(&spinning, TAU / 0.15);
        assert_relative_eq!(back.rotation, spinning.rotation, epsilon = 1e-6);
    }

    #[test]
    fn rotation_stays_orthonormal_over_a_million_steps() {
        let mut frame = TargetFrame {
            angular_velocity: Vec3::new(0.1, 0.3, -0.2),
            ..TargetFrame::default()
        };
        for _ in 0..1_000_000 {
            frame = advance_frame(&frame, 1e-3);
        }
        let r = frame.rotation;
        assert_relative_eq!(r.transpose() * r, Mat3::identity(), epsilon = 1e-6);
        assert_relative_eq!(r.determinant(), 1.0, epsilon = 1e-6);
    }

    #[test]
    fn vee_inverts_skew() {
        let w = Vec3::new(0.3, -1.2, 2.0);
        assert_relative_eq!(vee(&skew(&w)), w);
    }

    fn non_singular_point() -> impl Strategy<Value = Vec3> {
        (0.05f64..10.0, -PI..PI, -5.0f64..5.0)
            .prop_map(|(rho, phi, z)| Vec3::new(rho * phi.cos(), rho * phi.sin(), z))
    }

    proptest! {
        #[test]
        fn jacobian_matches_finite_differences(p in non_singular_point()) {
            let err = (jacobian(&p).unwrap() - fd_jacobian(&p, 1e-6)).abs().max();
            prop_assert!(err < 1e-6, "error {err}");
        }

        #[test]
        fn jacobian_times_inverse_is_identity(p in non_singular_point()) {
            let q = cylindrical(&p).unwrap();
            let prod = jacobian(&p).unwrap() * jacobian_inverse(&q).unwrap();
            prop_assert!((prod - Mat3::identity()).abs().max() < 1e-9);
        }

        #[test]
        fn cylindrical_round_trip(rho in 1e-3f64..50.0, phi in 0.0..TAU, z in -10.0f64..10.0) {
            let q = cylindrical(&CylCoords::new(rho, phi, z).to_local()).unwrap();
            prop_assert!((q.rho - rho).abs() < 1e-9);
            prop_assert!(wrap(q.phi - phi).abs() < 1e-9);
            prop_assert!((q.z - z).abs() < 1e-9);
        }
    }
}
