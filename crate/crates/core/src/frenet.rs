//! Full kinematic state conversion between Cartesian and Frenet frames.
//!
//! Both directions carry position, velocity and acceleration information:
//! (x, y, θ, v, a, κ) ⟷ (s, ṡ, s̈, l, l′, l″, l̇, l̈). The acceleration `a`
//! is the longitudinal (along-velocity) component; the full acceleration
//! vector is reconstructed as a·τ⃗ + v²κ·n⃗ where needed.

use crate::reference_line::{ReferenceLine, ReferenceLineError, ReferencePoint};
use crate::wrap_angle;
use nalgebra::Vector2;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FrenetError {
    #[error("curvature singularity: |kappa_r * l| = {0:.3} (limit 0.9)")]
    CurvatureSingularity(f64),
    #[error("station {s:.3} outside line range [0, {len:.3}]")]
    OutOfRange { s: f64, len: f64 },
    #[error(transparent)]
    Projection(#[from] ReferenceLineError),
}

/// Vehicle state in the world frame. `theta` is the velocity direction,
/// `a` the longitudinal acceleration, `kappa` the path curvature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CartesianState {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
    pub a: f64,
    pub kappa: f64,
}

/// Decoupled state along a reference line: station, lateral offset, and
/// their time (`dot`) and arc-length (`prime`) derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrenetState {
    pub s: f64,
    pub s_dot: f64,
    pub s_ddot: f64,
    pub l: f64,
    pub l_prime: f64,
    pub l_pprime: f64,
    pub l_dot: f64,
    pub l_ddot: f64,
}

const LOW_SPEED: f64 = 1e-3;
const SINGULARITY: f64 = 0.9;

fn check_singularity(kappa_r: f64, l: f64) -> Result<(), FrenetError> {
    let ratio = (kappa_r * l).abs();
    if ratio >= SINGULARITY {
        return Err(FrenetError::CurvatureSingularity(ratio));
    }
    Ok(())
}

/// Convert a Cartesian state to the full Frenet state on `line`.
///
/// Below 1 mm/s the velocity-ratio expressions for l′/l″ are 0/0; the
/// heading and curvature relations replace them there.
pub fn cartesian_to_frenet(
    state: &CartesianState,
    line: &ReferenceLine,
    hint: Option<usize>,
) -> Result<FrenetState, FrenetError> {
    let (s, l, _idx) = line.project((state.x, state.y), hint)?;
    let rp = line.point_at(s);
    check_singularity(rp.kappa, l)?;

    let one_kl = 1.0 - rp.kappa * l;
    let tau_r = Vector2::new(rp.theta.cos(), rp.theta.sin());
    let n_r = Vector2::new(-rp.theta.sin(), rp.theta.cos());
    let tau_n = Vector2::new(state.theta.cos(), state.theta.sin());
    let n_n = Vector2::new(-state.theta.sin(), state.theta.cos());

    let vel = tau_n * state.v;
    let acc = tau_n * state.a + n_n * (state.v * state.v * state.kappa);

    let v_tau = vel.dot(&tau_r);
    let v_n = vel.dot(&n_r);
    let s_dot = v_tau / one_kl;
    let l_dot = v_n;

    let dtheta = wrap_angle(state.theta - rp.theta);
    let l_prime = if state.v.abs() < LOW_SPEED {
        dtheta.tan() * one_kl
    } else {
        one_kl * v_n / v_tau
    };

    // s̈ from the quotient rule on ṡ = (v⃗·τ⃗_r)/(1 − k_r l); see the
    // derivative-consistency tests for the finite-difference certificate.
    let kl_rate = rp.dkappa * l + rp.kappa * l_prime;
    let s_ddot = (acc.dot(&tau_r) + rp.kappa * s_dot * l_dot) / one_kl
        + s_dot * s_dot * kl_rate / one_kl;

    let l_ddot = acc.dot(&n_r) - rp.kappa * s_dot * v_tau;

    let l_pprime = if state.v.abs() < LOW_SPEED {
        // Geometric route: invert the curvature composition formula.
        let cos_dt = dtheta.cos();
        (state.kappa * one_kl / cos_dt - rp.kappa) * one_kl / (cos_dt * cos_dt)
            - kl_rate_low(rp, l, dtheta) * dtheta.tan()
    } else {
        (l_ddot - l_prime * s_ddot) / (s_dot * s_dot)
    };

    Ok(FrenetState { s, s_dot, s_ddot, l, l_prime, l_pprime, l_dot, l_ddot })
}

fn kl_rate_low(rp: ReferencePoint, l: f64, dtheta: f64) -> f64 {
    let l_prime = dtheta.tan() * (1.0 - rp.kappa * l);
    rp.dkappa * l + rp.kappa * l_prime
}

/// Convert a Frenet state back to the Cartesian frame.
pub fn frenet_to_cartesian(
    state: &FrenetState,
    line: &ReferenceLine,
) -> Result<CartesianState, FrenetError> {
    if !line.in_range(state.s) {
        return Err(FrenetError::OutOfRange { s: state.s, len: line.total_length() });
    }
    let rp = line.point_at(state.s);
    check_singularity(rp.kappa, state.l)?;
    let one_kl = 1.0 - rp.kappa * state.l;

    let x = rp.x - state.l * rp.theta.sin();
    let y = rp.y + state.l * rp.theta.cos();
    let dtheta = (state.l_prime / one_kl).atan();
    let theta = wrap_angle(dtheta + rp.theta);
    let v = ((state.s_dot * one_kl).powi(2) + (state.s_dot * state.l_prime).powi(2)).sqrt();

    let cos_dt = dtheta.cos();
    let kl_rate = rp.dkappa * state.l + rp.kappa * state.l_prime;
    let kappa = ((state.l_pprime + kl_rate * dtheta.tan()) * cos_dt * cos_dt / one_kl + rp.kappa)
        * cos_dt
        / one_kl;
    let a = state.s_ddot * one_kl / cos_dt
        + state.s_dot * state.s_dot / cos_dt
            * (state.l_prime * (kappa * one_kl / cos_dt - rp.kappa) - kl_rate);

    Ok(CartesianState { x, y, theta, v, a, kappa })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference_line::{smooth, RoutePolyline, SmootherWeights};
    use approx::assert_abs_diff_eq;

    fn straight_line() -> ReferenceLine {
        let route =
            RoutePolyline::new((0..=100).map(|i| (2.0 * i as f64, 0.0)).collect()).unwrap();
        smooth(&route, &SmootherWeights::default()).unwrap()
    }

    fn circle_line(radius: f64) -> ReferenceLine {
        use crate::reference_line::ReferencePoint;
        let ds = 0.5;
        let n = (std::f64::consts::PI * radius / ds) as usize;
        let samples = (0..=n)
            .map(|i| {
                let s = i as f64 * ds;
                let phi = s / radius;
                ReferencePoint {
                    s,
                    x: radius * phi.cos(),
                    y: radius * phi.sin(),
                    theta: wrap_angle(phi + std::f64::consts::FRAC_PI_2),
                    kappa: 1.0 / radius,
                    dkappa: 0.0,
                }
            })
            .collect();
        ReferenceLine::from_samples(samples).unwrap()
    }

    #[test]
    fn straight_line_offset_state() {
        let line = straight_line();
        let state = CartesianState { x: 10.0, y: 2.0, theta: 0.0, v: 5.0, a: 0.0, kappa: 0.0 };
        let f = cartesian_to_frenet(&state, &line, None).unwrap();
        assert_abs_diff_eq!(f.s, 10.0, epsilon = 1e-9);
        assert_abs_diff_eq!(f.s_dot, 5.0, epsilon = 1e-9);
        assert_abs_diff_eq!(f.s_ddot, 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(f.l, 2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(f.l_prime, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f.l_pprime, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f.l_dot, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f.l_ddot, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn tangential_motion_on_circle() {
        let r = 50.0;
        let line = circle_line(r);
        let phi: f64 = 0.6;
        let state = CartesianState {
            x: r * phi.cos(),
            y: r * phi.sin(),
            theta: wrap_angle(phi + std::f64::consts::FRAC_PI_2),
            v: 10.0,
            a: 1.5,
            kappa: 1.0 / r,
        };
        let f = cartesian_to_frenet(&state, &line, None).unwrap();
        assert_abs_diff_eq!(f.l, 0.0, epsilon = 1e-6);
        assert_abs_diff_eq!(f.s_dot, 10.0, epsilon = 1e-6);
        assert_abs_diff_eq!(f.l_dot, 0.0, epsilon = 1e-6);
        // On-line tangential motion: s̈ equals the longitudinal acceleration.
        assert_abs_diff_eq!(f.s_ddot, 1.5, epsilon = 1e-5);
    }

    #[test]
    fn on_line_identity() {
        let r = 50.0;
        let line = circle_line(r);
        let f = FrenetState {
            s: 20.0,
            s_dot: 8.0,
            s_ddot: 0.0,
            l: 0.0,
            l_prime: 0.0,
            l_pprime: 0.0,
            l_dot: 0.0,
            l_ddot: 0.0,
        };
        let c = frenet_to_cartesian(&f, &line).unwrap();
        let rp = line.point_at(20.0);
        assert_abs_diff_eq!(c.x, rp.x, epsilon = 1e-9);
        assert_abs_diff_eq!(c.y, rp.y, epsilon = 1e-9);
        assert_abs_diff_eq!(c.theta, rp.theta, epsilon = 1e-9);
        assert_abs_diff_eq!(c.v, 8.0, epsilon = 1e-9);
        assert_abs_diff_eq!(c.kappa, 1.0 / r, epsilon = 1e-9);
    }

    #[test]
    fn straight_line_offset_inverse() {
        let line = straight_line();
        let f = FrenetState {
            s: 40.0,
            s_dot: 5.0,
            s_ddot: 0.0,
            l: 2.0,
            l_prime: 0.0,
            l_pprime: 0.0,
            l_dot: 0.0,
            l_ddot: 0.0,
        };
        let c = frenet_to_cartesian(&f, &line).unwrap();
        assert_abs_diff_eq!(c.x, 40.0, epsilon = 1e-9);
        assert_abs_diff_eq!(c.y, 2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(c.v, 5.0, epsilon = 1e-9);
        assert_abs_diff_eq!(c.theta, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn transfer_identity_l_dot() {
        // l̇ = l′·ṡ holds exactly as computed away from the low-speed branch.
        let line = circle_line(80.0);
        let phi: f64 = 0.3;
        let state = CartesianState {
            x: 78.0 * phi.cos(),
            y: 78.0 * phi.sin(),
            theta: 2.0,
            v: 7.0,
            a: 0.4,
            kappa: 0.01,
        };
        let f = cartesian_to_frenet(&state, &line, None).unwrap();
        assert_abs_diff_eq!(f.l_dot, f.l_prime * f.s_dot, epsilon = 1e-9);
    }

    #[test]
    fn singularity_guard() {
        let line = circle_line(10.0); // kappa = 0.1
        let f = FrenetState {
            s: 10.0,
            s_dot: 1.0,
            s_ddot: 0.0,
            l: 9.5, // |kappa * l| = 0.95
            l_prime: 0.0,
            l_pprime: 0.0,
            l_dot: 0.0,
            l_ddot: 0.0,
        };
        assert!(matches!(
            frenet_to_cartesian(&f, &line),
            Err(FrenetError::CurvatureSingularity(_))
        ));
        let ok = FrenetState { l: 5.0, ..f };
        assert!(frenet_to_cartesian(&ok, &line).is_ok());
        let out = FrenetState { s: 1e6, l: 0.0, ..f };
        assert!(matches!(frenet_to_cartesian(&out, &line), Err(FrenetError::OutOfRange { .. })));
    }
}
