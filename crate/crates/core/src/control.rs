//! Cylindrical velocity laws.
//!
//! Radius and height are driven exponentially to `rho*` and `0`. The phase law
//! is one of three ring-consensus variants: fixed angular speed (`V1`), fixed
//! escape window (`V2`), or agreement on a common speed from per-robot forcing
//! terms (`V3`). `V1Star` is `V1` with the radial law gated by the safety
//! bound, so robots only move inward once they are phase separated.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{cartesian_command, CylCoords, CylVelocity, TargetFrame, Vec3};
use crate::phase::RingView;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GainSet {
    pub k_rho: f64,
    pub k_z: f64,
    pub k_phi: f64,
    pub k_omega: f64,
    pub k_eta: f64,
}

impl GainSet {
    pub fn validate(&self) -> Result<()> {
        for (name, k) in [
            ("k_rho", self.k_rho),
            ("k_z", self.k_z),
            ("k_phi", self.k_phi),
            ("k_omega", self.k_omega),
            ("k_eta", self.k_eta),
        ] {
            if !(k >= 0.0 && k.is_finite()) {
                return Err(Error::Config(format!(
                    "gain {name} must be non-negative, got {k}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LambdaShape {
    Linear,
    #[default]
    Sinusoidal,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SafetyParams {
    pub r: f64,
    pub eps_r: f64,
    #[serde(default)]
    pub shape: LambdaShape,
}

impl SafetyParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.r >= 0.0 && self.eps_r > 0.0) {
            return Err(Error::Config(format!(
                "safety needs r >= 0 and eps_r > 0, got r={} eps_r={}",
                self.r, self.eps_r
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ControllerMode {
    V1 {
        omega_star: f64,
    },
    V2 {
        window: f64,
    },
    V3 {
        xi: f64,
    },
    V1Star {
        omega_star: f64,
        safety: SafetyParams,
    },
}

impl ControllerMode {
    pub fn safety(&self) -> Option<&SafetyParams> {
        match self {
            ControllerMode::V1Star { safety, .. } => Some(safety),
            _ => None,
        }
    }
}

pub fn radial_law(rho: f64, rho_star: f64, k_rho: f64) -> f64 {
    k_rho * (rho_star - rho)
}

pub fn height_law(z: f64, k_z: f64) -> f64 {
    -k_z * z
}

pub fn phase_law_v1(view: &RingView, omega_star: f64, k_phi: f64) -> f64 {
    omega_star + k_phi * view.phase_error()
}

pub fn phase_law_v2(view: &RingView, window: f64, k_phi: f64) -> Result<f64> {
    if !(window > 0.0) {
        return Err(Error::InvalidWindow { s: window });
    }
    Ok(view.half_span / window + k_phi * view.phase_error())
}

/// Returns `(phi_dot, omega_next)`; `omega` is integrated with explicit Euler
/// from the current error.
pub fn phase_law_v3(
    view: &RingView,
    omega: f64,
    xi: f64,
    k_phi: f64,
    k_omega: f64,
    dt: f64,
) -> (f64, f64) {
    let e = view.phase_error();
    (omega + k_phi * e + xi, omega + k_omega * e * dt)
}

/// Gate in `[0, 1]`: closed below `sigma + 2r`, open above
/// `sigma + 2r + eps_r`. Non-increasing in `sigma`; an infinite `sigma` keeps
/// it closed.
pub fn lambda_gate(rho: f64, sigma: f64, safety: &SafetyParams) -> f64 {
    let lo = sigma + 2.0 * safety.r;
    if rho < lo {
        return 0.0;
    }
    let x = rho - lo;
    if x > safety.eps_r {
        return 1.0;
    }
    let t = x / safety.eps_r;
    match safety.shape {
        LambdaShape::Linear => t,
        LambdaShape::Sinusoidal => 0.5 * (1.0 - (PI * t).cos()),
    }
}

pub fn radial_law_safe(
    rho: f64,
    rho_star: f64,
    k_rho: f64,
    sigma_hat: f64,
    safety: &SafetyParams,
) -> f64 {
    lambda_gate(rho, sigma_hat, safety) * radial_law(rho, rho_star, k_rho)
}

/// One robot's controller: mode, gains and the `V3` speed state.
#[derive(Clone, Debug)]
pub struct Controller {
    pub mode: ControllerMode,
    pub gains: GainSet,
    pub rho_star: f64,
    omega: f64,
}

impl Controller {
    pub fn new(mode: ControllerMode, gains: GainSet, rho_star: f64) -> Self {
        Controller {
            mode,
            gains,
            rho_star,
            omega: 0.0,
        }
    }

    /// Consensus speed state of `V3`; zero for the other modes.
    pub fn omega(&self) -> f64 {
        self.omega
    }

    /// Cylindrical command for one control period of length `dt`.
    pub fn command(
        &mut self,
        q: &CylCoords,
        view: &RingView,
        sigma_hat: f64,
        dt: f64,
    ) -> Result<CylVelocity> {
        let g = &self.gains;
        let mut rho_dot = radial_law(q.rho, self.rho_star, g.k_rho);
        let phi_dot = match &self.mode {
            ControllerMode::V1 { omega_star } => phase_law_v1(view, *omega_star, g.k_phi),
            ControllerMode::V2 { window } => phase_law_v2(view, *window, g.k_phi)?,
            ControllerMode::V3 { xi } => {
                let (phi_dot, next) = phase_law_v3(view, self.omega, *xi, g.k_phi, g.k_omega, dt);
                self.omega = next;
                phi_dot
            }
            ControllerMode::V1Star { omega_star, safety } => {
                rho_dot = radial_law_safe(q.rho, self.rho_star, g.k_rho, sigma_hat, safety);
                phase_law_v1(view, *omega_star, g.k_phi)
            }
        };
        Ok(CylVelocity::new(rho_dot, phi_dot, height_law(q.z, g.k_z)))
    }
}

/// Cylindrical command and its Cartesian realization at `p`.
pub fn control_step(
    controller: &mut Controller,
    p: &Vec3,
    frame: &TargetFrame,
    q: &CylCoords,
    view: &RingView,
    sigma_hat: f64,
    dt: f64,
) -> Result<(CylVelocity, Vec3)> {
    let v = controller.command(q, view, sigma_hat, dt)?;
    let u = cartesian_command(p, frame, &v)?;
    Ok((v, u))
}

#[cfg(test)]
mod tests {
    use std::f64::consts::TAU;

    use approx::assert_relative_eq;
    use proptest::prelude::*;

    use super::*;
    use crate::geometry::to_cylindrical;
    use crate::phase::{ring_views, RingSeam};

    fn gains() -> GainSet {
        GainSet {
            k_rho: 1.0,
            k_z: 1.5,
            k_phi: 2.0,
            k_omega: 3.0,
            k_eta: 20.0,
        }
    }

    fn splay(n: usize) -> Vec<f64> {
        (0..n).map(|k| TAU * k as f64 / n as f64).collect()
    }

    fn view_with_error(e: f64) -> RingView {
        RingView::new(RingSeam::default(), 1.0 - e, 0.5, 1.5)
    }

    #[test]
    fn radial_and_height() {
        assert_eq!(radial_law(2.0, 2.0, 1.0), 0.0);
        assert_eq!(radial_law(1.0, 2.0, 1.0), 1.0);
        assert_eq!(height_law(0.0, 1.5), 0.0);
        assert_eq!(height_law(2.0, 1.5), -3.0);
    }

    #[test]
    fn closed_loop_radius_is_exponential() {
        // RK4 on rho_dot = k (rho* - rho) against the analytic solution.
        let (k, rho_star, dt) = (1.0, 2.0, 1e-3);
        let mut rho = 0.5f64;
        let f = |r: f64| radial_law(r, rho_star, k);
        for step in 1..=5000 {
            let k1 = f(rho);
            let k2 = f(rho + 0.5 * dt * k1);
            let k3 = f(rho + 0.5 * dt * k2);
            let k4 = f(rho + dt * k3);
            rho += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            let exact = 1.5 * (-k * dt * step as f64).exp();
            assert!(((rho_star - rho) - exact).abs() <= 0.01 * exact);
        }
    }

    #[test]
    fn phase_laws() {
        let splayed = ring_views(&splay(10));
        for v in &splayed {
            assert_relative_eq!(phase_law_v1(v, 0.8, 2.0), 0.8, epsilon = 1e-12);
            assert_relative_eq!(
                phase_law_v2(v, 0.78, 2.0).unwrap(),
                TAU / (10.0 * 0.78),
                epsilon = 1e-12
            );
            assert!(phase_law_v3(v, 0.0, 0.0, 2.0, 3.0, 0.01).0.abs() < 1e-12);
        }
        assert_relative_eq!(
            phase_law_v1(&view_with_error(0.1), 0.0, 2.0),
            0.2,
            epsilon = 1e-12
        );
        let wide = RingView::new(RingSeam::default(), 0.0, -PI, PI);
        assert_relative_eq!(phase_law_v2(&wide, 1.0, 2.0).unwrap(), PI);
        assert!(matches!(
            phase_law_v2(&wide, 0.0, 2.0),
            Err(Error::InvalidWindow { .. })
        ));
    }

    #[test]
    fn v3_integrates_speed_state() {
        let (phi_dot, next) = phase_law_v3(&view_with_error(0.1), 0.5, 0.2, 2.0, 3.0, 0.01);
        assert_relative_eq!(phi_dot, 0.5 + 0.2 + 0.2, epsilon = 1e-12);
        assert_relative_eq!(next, 0.5 + 0.003, epsilon = 1e-12);
    }

    #[test]
    fn gate_values() {
        let linear = SafetyParams {
            r: 0.25,
            eps_r: 0.1,
            shape: LambdaShape::Linear,
        };
        assert_eq!(lambda_gate(0.9, 0.5, &linear), 0.0);
        assert_relative_eq!(lambda_gate(1.05, 0.5, &linear), 0.5, epsilon = 1e-12);
        assert_relative_eq!(
            radial_law_safe(1.05, 2.0, 1.0, 0.5, &linear),
            0.5 * 0.95,
            epsilon = 1e-12
        );
        assert_eq!(lambda_gate(1.2, 0.5, &linear), 1.0);
        assert_eq!(
            radial_law_safe(100.0, 2.0, 1.0, f64::INFINITY, &linear),
            0.0
        );

        let sine = SafetyParams {
            shape: LambdaShape::Sinusoidal,
            ..linear
        };
        assert_relative_eq!(lambda_gate(1.05, 0.5, &sine), 0.5, epsilon = 1e-12);
        assert_relative_eq!(
            lambda_gate(1.025, 0.5, &sine),
            0.5 * (1.0 - (PI / 4.0).cos()),
            epsilon = 1e-12
        );

        let zero_radius = SafetyParams { r: 0.0, ..sine };
        assert_eq!(lambda_gate(0.2, 0.0, &zero_radius), 1.0);
    }

    #[test]
    fn controller_v3_starts_at_zero_speed() {
        let mut c = Controller::new(ControllerMode::V3 { xi: 0.0 }, gains(), 2.0);
        assert_eq!(c.omega(), 0.0);
        let views = ring_views(&splay(4));
        let v = c
            .command(
                &CylCoords::new(2.0, 0.0, 0.0),
                &views[0],
                f64::INFINITY,
                0.01,
            )
            .unwrap();
        assert_eq!(v, CylVelocity::new(0.0, 0.0, 0.0));
        assert_eq!(c.omega(), 0.0);
    }

    #[test]
    fn steady_splay_speed_is_tangential() {
        let frame = TargetFrame::default();
        let phases = splay(6);
        let views = ring_views(&phases);
        for (phi, view) in phases.iter().zip(&views) {
            let q = CylCoords::new(2.0, *phi, 0.0);
            let p = q.to_local();
            let q_meas = to_cylindrical(&p, &frame).unwrap();
            let mut c = Controller::new(ControllerMode::V1 { omega_star: 0.8 }, gains(), 2.0);
            let (_, u) =
                control_step(&mut c, &p, &frame, &q_meas, view, f64::INFINITY, 0.01).unwrap();
            assert_relative_eq!(u.norm(), 1.6, epsilon = 1e-9);
        }
    }

    #[test]
    fn zero_command_gives_target_velocity() {
        let frame = TargetFrame {
            velocity: Vec3::new(0.5, -0.1, 0.3),
            ..TargetFrame::default()
        };
        let u =
            cartesian_command(&Vec3::new(1.0, 1.0, 0.0), &frame, &CylVelocity::default()).unwrap();
        assert_relative_eq!(u, frame.velocity, epsilon = 1e-15);
    }

    #[test]
    fn gain_validation() {
        assert!(gains().validate().is_ok());
        assert!(GainSet {
            k_phi: 0.0,
            ..gains()
        }
        .validate()
        .is_ok());
        assert!(GainSet {
            k_phi: -1.0,
            ..gains()
        }
        .validate()
        .is_err());
        assert!(GainSet {
            k_rho: f64::NAN,
            ..gains()
        }
        .validate()
        .is_err());
    }

    proptest! {
        #[test]
        fn gate_is_monotone(rho in 0.0f64..5.0, s1 in 0.0f64..3.0, ds in 0.0f64..1.0, linear: bool) {
            let safety = SafetyParams {
                r: 0.25,
                eps_r: 0.1,
                shape: if linear { LambdaShape::Linear } else { LambdaShape::Sinusoidal },
            };
            let a = lambda_gate(rho, s1, &safety);
            let b = lambda_gate(rho, s1 + ds, &safety);
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert!(b <= a);
            prop_assert!(lambda_gate(rho + ds, s1, &safety) >= a);
        }
    }
}
