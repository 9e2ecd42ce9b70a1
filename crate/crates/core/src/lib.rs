//! Frenet-frame trajectory planning building blocks for on-road driving.
//!
//! The crate is organised around the classic decoupled path/speed pipeline:
//!
//! * [`reference_line`] — route windowing, QP smoothing, arc-length queries
//! * [`frenet`] — full-state Cartesian ⟷ Frenet conversions
//! * [`quintic`] — fifth-degree polynomial connectors (minimum-jerk edges)
//! * [`apf_sampling`] — lattice construction and potential-field adaptive
//!   node retention for the SL and ST graphs
//! * [`dp`] — dynamic programming over retained lattice nodes
//! * [`qp`] — a dense convex QP solver with KKT certificates
//! * [`refine`] — corridor construction and the path/speed QP stages
//! * [`vehicle`] — kinematic and dynamic bicycle models
//! * [`control`] — LQR lateral steering with curvature feedforward and a
//!   cascaded PID longitudinal loop

pub mod apf_sampling;
pub mod control;
pub mod dp;
pub mod frenet;
pub mod qp;
pub mod quintic;
pub mod reference_line;
pub mod refine;
pub mod vehicle;

/// Wrap an angle into `[-pi, pi]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let mut a = theta % (2.0 * std::f64::consts::PI);
    if a > std::f64::consts::PI {
        a -= 2.0 * std::f64::consts::PI;
    } else if a < -std::f64::consts::PI {
        a += 2.0 * std::f64::consts::PI;
    }
    a
}
