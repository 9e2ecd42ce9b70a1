//! QP refinement of the coarse DP profiles.
//!
//! The path QP optimises per-station triples (l, l′, l″) under Taylor
//! coupling equalities, vehicle-corner corridor inequalities and a pinned
//! start state. The speed QP does the same on (s, ṡ, s̈) triples over time
//! with monotonicity, blocked-band windows and dynamic limits. Both return
//! the KKT certificate of the underlying solve.

use crate::dp::{DpResult, StBlockedMap};
use crate::frenet::FrenetState;
use crate::qp::{solve_qp, KktReport, QpError, QpProblem};
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RefineError {
    #[error("empty corridor at station {station:.2}: lb {lb:.2} >= ub {ub:.2}")]
    EmptyCorridor { station: f64, lb: f64, ub: f64 },
    #[error("start lateral {l:.3} outside corridor [{lb:.3}, {ub:.3}]")]
    StartOutsideCorridor { l: f64, lb: f64, ub: f64 },
    #[error(transparent)]
    Qp(#[from] QpError),
}

/// Planar footprint: width plus centre-to-front and centre-to-rear corner
/// distances.
#[derive(Debug, Clone, Copy)]
pub struct VehicleFootprint {
    pub width: f64,
    pub d1: f64,
    pub d2: f64,
}

/// Per-station lateral feasible band, already windowed over the footprint
/// span.
#[derive(Debug, Clone)]
pub struct CorridorBounds {
    pub stations: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Lateral band obstacle as seen by the corridor builder.
#[derive(Debug, Clone, Copy)]
pub struct CorridorObstacle {
    pub s_range: (f64, f64),
    pub l_down: f64,
    pub l_up: f64,
}

/// Build the convex corridor around a DP path. The DP lateral decides the
/// pass side of each obstacle: passing left turns the obstacle top into a
/// lower bound, passing right turns its bottom into an upper bound. The
/// raw bounds are then windowed with min/max over `[s − d2, s + d1]`.
pub fn build_corridor(
    dp_path: &DpResult,
    ds: f64,
    obstacles: &[CorridorObstacle],
    road_bounds: (f64, f64),
    footprint: &VehicleFootprint,
) -> Result<CorridorBounds, RefineError> {
    let s_start = dp_path.states[0].a;
    let s_end = dp_path.states.last().unwrap().a;
    let n = ((s_end - s_start) / ds).round() as usize + 1;
    let stations: Vec<f64> = (0..n).map(|i| s_start + i as f64 * ds).collect();

    let dp_l = |s: f64| dp_lateral(dp_path, s);
    let mut raw_lower = vec![road_bounds.0; n];
    let mut raw_upper = vec![road_bounds.1; n];
    for (i, &s) in stations.iter().enumerate() {
        for obs in obstacles {
            if s < obs.s_range.0 || s > obs.s_range.1 {
                continue;
            }
            let mid = 0.5 * (obs.l_down + obs.l_up);
            if dp_l(s) > mid {
                raw_lower[i] = raw_lower[i].max(obs.l_up);
            } else {
                raw_upper[i] = raw_upper[i].min(obs.l_down);
            }
        }
    }

    let mut lower = vec![0.0; n];
    let mut upper = vec![0.0; n];
    for i in 0..n {
        let s_i = stations[i];
        let mut lb = f64::NEG_INFINITY;
        let mut ub = f64::INFINITY;
        for j in 0..n {
            let s_j = stations[j];
            if s_j >= s_i - footprint.d2 - 1e-9 && s_j <= s_i + footprint.d1 + 1e-9 {
                lb = lb.max(raw_lower[j]);
                ub = ub.min(raw_upper[j]);
            }
        }
        if lb >= ub {
            return Err(RefineError::EmptyCorridor { station: s_i, lb, ub });
        }
        lower[i] = lb;
        upper[i] = ub;
    }
    Ok(CorridorBounds { stations, lower, upper })
}

/// Lateral offset of a DP result at station `s`, evaluated on its quintic
/// edges (clamped to the profile ends).
pub fn dp_lateral(dp_path: &DpResult, s: f64) -> f64 {
    let states = &dp_path.states;
    if s <= states[0].a {
        return states[0].b;
    }
    for (k, w) in states.windows(2).enumerate() {
        if s <= w[1].a + 1e-9 {
            return dp_path.edge_polys[k].eval_unchecked((s - w[0].a).min(w[1].a - w[0].a), 0);
        }
    }
    states.last().unwrap().b
}

/// Station of a DP speed result at time `t` (same evaluation scheme).
pub fn dp_station(dp_speed: &DpResult, t: f64) -> f64 {
    let states = &dp_speed.states;
    if t <= states[0].a {
        return states[0].b;
    }
    for (k, w) in states.windows(2).enumerate() {
        if t <= w[1].a + 1e-9 {
            return dp_speed.edge_polys[k].eval_unchecked((t - w[0].a).min(w[1].a - w[0].a), 0);
        }
    }
    states.last().unwrap().b
}

#[derive(Debug, Clone, Copy)]
pub struct PathQpWeights {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub w4: f64,
    /// Box bound on |l″| (curvature-rate proxy); the paper's corner block
    /// leaves l″ free, this keeps it physical.
    pub kappa_max: f64,
}

impl Default for PathQpWeights {
    fn default() -> Self {
        Self { w1: 1.0, w2: 10.0, w3: 50.0, w4: 20.0, kappa_max: 0.2 }
    }
}

/// Smooth lateral profile per station.
#[derive(Debug, Clone)]
pub struct PathDecision {
    pub stations: Vec<f64>,
    pub l: Vec<f64>,
    pub l_prime: Vec<f64>,
    pub l_pprime: Vec<f64>,
    pub ds: f64,
    pub kkt: KktReport,
}

impl PathDecision {
    pub fn lateral_at(&self, s: f64) -> (f64, f64, f64) {
        let n = self.stations.len();
        let s0 = self.stations[0];
        let u = ((s - s0) / self.ds).clamp(0.0, (n - 1) as f64);
        let i = (u as usize).min(n - 2);
        let w = u - i as f64;
        (
            self.l[i] * (1.0 - w) + self.l[i + 1] * w,
            self.l_prime[i] * (1.0 - w) + self.l_prime[i + 1] * w,
            self.l_pprime[i] * (1.0 - w) + self.l_pprime[i + 1] * w,
        )
    }
}

/// The two Taylor coupling rows for one station pair, as a 2×6 block.
fn taylor_rows(ds: f64) -> [[f64; 6]; 2] {
    [
        [1.0, ds, ds * ds / 3.0, -1.0, 0.0, ds * ds / 6.0],
        [0.0, 1.0, ds / 2.0, 0.0, -1.0, ds / 2.0],
    ]
}

pub fn assemble_path_problem(
    reference: &[f64],
    corridor: &CorridorBounds,
    footprint: &VehicleFootprint,
    weights: &PathQpWeights,
    ds: f64,
    start: &FrenetState,
) -> QpProblem {
    let n = corridor.stations.len();
    let nv = 3 * n;
    let mut h = DMatrix::zeros(nv, nv);
    let mut g = DVector::zeros(nv);
    for i in 0..n {
        h[(3 * i + 1, 3 * i + 1)] += 2.0 * weights.w1 * ds;
        h[(3 * i + 2, 3 * i + 2)] += 2.0 * weights.w2 * ds;
        h[(3 * i, 3 * i)] += 2.0 * weights.w4 * ds;
        g[3 * i] -= 2.0 * weights.w4 * ds * reference[i];
    }
    for i in 0..n - 1 {
        // w3 ((l″_{i+1} − l″_i)/ds)² ds
        let c = 2.0 * weights.w3 / ds;
        h[(3 * i + 2, 3 * i + 2)] += c;
        h[(3 * i + 5, 3 * i + 5)] += c;
        h[(3 * i + 2, 3 * i + 5)] -= c;
        h[(3 * i + 5, 3 * i + 2)] -= c;
    }

    let mut a_eq = DMatrix::zeros(2 * (n - 1) + 3, nv);
    let mut b_eq = DVector::zeros(2 * (n - 1) + 3);
    for i in 0..n - 1 {
        for (r, row) in taylor_rows(ds).iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                a_eq[(2 * i + r, 3 * i + c)] = v;
            }
        }
    }
    let pin = 2 * (n - 1);
    a_eq[(pin, 0)] = 1.0;
    b_eq[pin] = start.l;
    a_eq[(pin + 1, 1)] = 1.0;
    b_eq[pin + 1] = start.l_prime;
    a_eq[(pin + 2, 2)] = 1.0;
    b_eq[pin + 2] = start.l_pprime;

    // Corner block per station (start excluded: it is pinned).
    let half_w = footprint.width * 0.5;
    let rows_per = 8;
    let mut a_in = DMatrix::zeros(rows_per * (n - 1), nv);
    let mut b_in = DVector::zeros(rows_per * (n - 1));
    let corner_rows = [
        (1.0, footprint.d1, -half_w, true),
        (1.0, footprint.d1, half_w, true),
        (1.0, -footprint.d2, -half_w, true),
        (1.0, -footprint.d2, half_w, true),
        (-1.0, -footprint.d1, half_w, false),
        (-1.0, -footprint.d1, -half_w, false),
        (-1.0, footprint.d2, half_w, false),
        (-1.0, footprint.d2, -half_w, false),
    ];
    for i in 1..n {
        let base = rows_per * (i - 1);
        for (r, &(cl, clp, off, upper)) in corner_rows.iter().enumerate() {
            a_in[(base + r, 3 * i)] = cl;
            a_in[(base + r, 3 * i + 1)] = clp;
            b_in[base + r] = if upper {
                corridor.upper[i] + off
            } else {
                -corridor.lower[i] + off
            };
        }
    }

    let mut lower = DVector::from_element(nv, f64::NEG_INFINITY);
    let mut upper = DVector::from_element(nv, f64::INFINITY);
    for i in 0..n {
        lower[3 * i + 2] = -weights.kappa_max;
        upper[3 * i + 2] = weights.kappa_max;
    }

    QpProblem::new(h, g)
        .with_equalities(a_eq, b_eq)
        .with_inequalities(a_in, b_in)
        .with_bounds(lower, upper)
}

const QP_TOL: f64 = 1e-6;
const QP_MAX_ITER: usize = 5000;
/// Corridor widening applied on the single infeasibility retry.
const RETRY_RELAX: f64 = 0.2;

/// Refine a DP path into a smooth lateral profile over the corridor.
pub fn path_qp(
    dp_path: &DpResult,
    corridor: &CorridorBounds,
    footprint: &VehicleFootprint,
    weights: &PathQpWeights,
    ds: f64,
    start: &FrenetState,
) -> Result<PathDecision, RefineError> {
    let n = corridor.stations.len();
    assert!(n >= 3, "need at least 3 stations");
    if start.l < corridor.lower[0] - QP_TOL || start.l > corridor.upper[0] + QP_TOL {
        return Err(RefineError::StartOutsideCorridor {
            l: start.l,
            lb: corridor.lower[0],
            ub: corridor.upper[0],
        });
    }
    let reference: Vec<f64> =
        corridor.stations.iter().map(|&s| dp_lateral(dp_path, s)).collect();

    let attempt = |cor: &CorridorBounds| -> Result<PathDecision, RefineError> {
        let problem = assemble_path_problem(&reference, cor, footprint, weights, ds, start);
        let sol = solve_qp(&problem, QP_TOL, QP_MAX_ITER)?;
        let mut l = Vec::with_capacity(n);
        let mut lp = Vec::with_capacity(n);
        let mut lpp = Vec::with_capacity(n);
        for i in 0..n {
            l.push(sol.x[3 * i]);
            lp.push(sol.x[3 * i + 1]);
            lpp.push(sol.x[3 * i + 2]);
        }
        Ok(PathDecision {
            stations: cor.stations.clone(),
            l,
            l_prime: lp,
            l_pprime: lpp,
            ds,
            kkt: sol.kkt,
        })
    };

    match attempt(corridor) {
        Ok(d) => Ok(d),
        Err(RefineError::Qp(_)) => {
            let relaxed = CorridorBounds {
                stations: corridor.stations.clone(),
                lower: corridor.lower.iter().map(|v| v - RETRY_RELAX).collect(),
                upper: corridor.upper.iter().map(|v| v + RETRY_RELAX).collect(),
            };
            attempt(&relaxed)
        }
        Err(e) => Err(e),
    }
}

/// Kinematic and actuation limits for the speed stage.
#[derive(Debug, Clone, Copy)]
pub struct SpeedLimits {
    pub v_upper: f64,
    pub a_min: f64,
    pub a_max: f64,
    pub j_min: f64,
    pub j_max: f64,
    /// Station cap: the path profile only extends this far.
    pub s_cap: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct SpeedQpWeights {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
}

impl Default for SpeedQpWeights {
    fn default() -> Self {
        Self { w1: 10.0, w2: 1.0, w3: 5.0 }
    }
}

/// Smooth speed profile per time layer.
#[derive(Debug, Clone)]
pub struct SpeedProfile {
    pub times: Vec<f64>,
    pub s: Vec<f64>,
    pub v: Vec<f64>,
    pub a: Vec<f64>,
    pub dt: f64,
    pub kkt: KktReport,
}

impl SpeedProfile {
    pub fn station_at(&self, t: f64) -> (f64, f64, f64) {
        let n = self.times.len();
        let u = ((t - self.times[0]) / self.dt).clamp(0.0, (n - 1) as f64);
        let i = (u as usize).min(n - 2);
        let w = u - i as f64;
        (
            self.s[i] * (1.0 - w) + self.s[i + 1] * w,
            self.v[i] * (1.0 - w) + self.v[i + 1] * w,
            self.a[i] * (1.0 - w) + self.a[i + 1] * w,
        )
    }
}

pub fn assemble_speed_problem(
    s_ref: &[f64],
    s_windows: &[(f64, f64)],
    limits: &SpeedLimits,
    weights: &SpeedQpWeights,
    dt: f64,
    start: (f64, f64, f64),
) -> QpProblem {
    let n = s_ref.len();
    let nv = 3 * n;
    let mut h = DMatrix::zeros(nv, nv);
    let mut g = DVector::zeros(nv);
    for i in 0..n {
        h[(3 * i, 3 * i)] += 2.0 * weights.w1 * dt;
        g[3 * i] -= 2.0 * weights.w1 * dt * s_ref[i];
        h[(3 * i + 2, 3 * i + 2)] += 2.0 * weights.w2 * dt;
    }
    for i in 0..n - 1 {
        let c = 2.0 * weights.w3 / dt;
        h[(3 * i + 2, 3 * i + 2)] += c;
        h[(3 * i + 5, 3 * i + 5)] += c;
        h[(3 * i + 2, 3 * i + 5)] -= c;
        h[(3 * i + 5, 3 * i + 2)] -= c;
    }

    let mut a_eq = DMatrix::zeros(2 * (n - 1) + 3, nv);
    let mut b_eq = DVector::zeros(2 * (n - 1) + 3);
    for i in 0..n - 1 {
        for (r, row) in taylor_rows(dt).iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                a_eq[(2 * i + r, 3 * i + c)] = v;
            }
        }
    }
    let pin = 2 * (n - 1);
    a_eq[(pin, 0)] = 1.0;
    b_eq[pin] = start.0;
    a_eq[(pin + 1, 1)] = 1.0;
    b_eq[pin + 1] = start.1;
    a_eq[(pin + 2, 2)] = 1.0;
    b_eq[pin + 2] = start.2;

    // Monotone station plus jerk rows.
    let mut a_in = DMatrix::zeros(3 * (n - 1), nv);
    let mut b_in = DVector::zeros(3 * (n - 1));
    for i in 0..n - 1 {
        a_in[(3 * i, 3 * i)] = 1.0;
        a_in[(3 * i, 3 * i + 3)] = -1.0; // s_i − s_{i+1} ≤ 0
        a_in[(3 * i + 1, 3 * i + 5)] = 1.0 / dt;
        a_in[(3 * i + 1, 3 * i + 2)] = -1.0 / dt;
        b_in[3 * i + 1] = limits.j_max;
        a_in[(3 * i + 2, 3 * i + 5)] = -1.0 / dt;
        a_in[(3 * i + 2, 3 * i + 2)] = 1.0 / dt;
        b_in[3 * i + 2] = -limits.j_min;
    }

    let mut lower = DVector::from_element(nv, f64::NEG_INFINITY);
    let mut upper = DVector::from_element(nv, f64::INFINITY);
    for i in 0..n {
        lower[3 * i] = s_windows[i].0.max(0.0);
        upper[3 * i] = s_windows[i].1.min(limits.s_cap);
        lower[3 * i + 1] = 0.0;
        upper[3 * i + 1] = limits.v_upper;
        lower[3 * i + 2] = limits.a_min;
        upper[3 * i + 2] = limits.a_max;
    }
    // The pinned start overrides its own boxes.
    lower[0] = f64::NEG_INFINITY;
    upper[0] = f64::INFINITY;
    lower[1] = f64::NEG_INFINITY;
    upper[1] = f64::INFINITY;
    lower[2] = f64::NEG_INFINITY;
    upper[2] = f64::INFINITY;

    QpProblem::new(h, g)
        .with_equalities(a_eq, b_eq)
        .with_inequalities(a_in, b_in)
        .with_bounds(lower, upper)
}

/// Refine a DP speed decision into a smooth monotone profile. Blocked
/// bands clamp each layer's station window on the side the DP result
/// chose.
pub fn speed_qp(
    dp_speed: &DpResult,
    blocked: &StBlockedMap,
    limits: &SpeedLimits,
    weights: &SpeedQpWeights,
    dt: f64,
    start: (f64, f64, f64),
) -> Result<SpeedProfile, RefineError> {
    let horizon = dp_speed.states.last().unwrap().a;
    let n = (horizon / dt).round() as usize + 1;
    let times: Vec<f64> = (0..n).map(|i| i as f64 * dt).collect();
    let s_ref: Vec<f64> = times.iter().map(|&t| dp_station(dp_speed, t)).collect();

    let mut windows = Vec::with_capacity(n);
    for (i, &t) in times.iter().enumerate() {
        let mut lo = f64::NEG_INFINITY;
        let mut hi = f64::INFINITY;
        if !blocked.layers.is_empty() {
            let li = ((t / blocked.dt).round() as usize).min(blocked.layers.len() - 1);
            for &(b_lo, b_hi) in &blocked.layers[li] {
                if s_ref[i] <= b_lo {
                    hi = hi.min(b_lo);
                } else if s_ref[i] >= b_hi {
                    lo = lo.max(b_hi);
                } else if s_ref[i] - b_lo < b_hi - s_ref[i] {
                    hi = hi.min(b_lo);
                } else {
                    lo = lo.max(b_hi);
                }
            }
        }
        windows.push((lo, hi));
    }

    let problem = assemble_speed_problem(&s_ref, &windows, limits, weights, dt, start);
    let sol = solve_qp(&problem, QP_TOL, QP_MAX_ITER).map_err(RefineError::from)?;
    let mut s = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    let mut a = Vec::with_capacity(n);
    for i in 0..n {
        s.push(sol.x[3 * i]);
        v.push(sol.x[3 * i + 1]);
        a.push(sol.x[3 * i + 2]);
    }
    Ok(SpeedProfile { times, s, v, a, dt, kkt: sol.kkt })
}
