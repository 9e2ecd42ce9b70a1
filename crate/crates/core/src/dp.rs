//! Dynamic programming over retained lattice nodes.
//!
//! `dp_search` runs forward value iteration layer by layer and backtraces
//! the cheapest layer-monotone path. Edge costs come from an
//! [`EdgeEvaluator`]; the SL evaluator fits a quintic per edge and
//! combines closed-form smoothness energies with Simpson-sampled obstacle
//! and reference terms, the ST evaluator uses finite-difference stencils
//! chained through the node states.
//!
//! The expansion counter tallies edge evaluations *between grid layers*
//! (the value-iteration work); connecting the single start state to the
//! first layer is initialisation and not counted, which keeps the
//! adaptive/average expansion ratio at exactly K²/M².

use crate::apf_sampling::{SampledGrid, SlObstacle};
use crate::quintic::{BoundaryConditions, QuinticPoly};
use crate::reference_line::ReferenceLine;
use std::time::{Duration, Instant};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DpError {
    #[error("no feasible path: layer {0} has no finite-cost node")]
    NoFeasiblePath(usize),
}

/// Cost weights shared by the SL and ST searches. `w1..w3` weight the
/// first/second/third derivative energies, `w4` the obstacle term,
/// `w_ref` the pull towards the reference (lateral zero in SL). `v_ref`
/// only matters for the ST velocity-keeping term.
#[derive(Debug, Clone, Copy)]
pub struct DpWeights {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub w4: f64,
    pub w_ref: f64,
    pub d_safety: f64,
    pub d_collision: f64,
    pub v_ref: f64,
}

impl Default for DpWeights {
    fn default() -> Self {
        Self {
            w1: 1.0,
            w2: 10.0,
            w3: 10.0,
            w4: 1.0,
            w_ref: 0.1,
            d_safety: 3.0,
            d_collision: 1.2,
            v_ref: 10.0,
        }
    }
}

/// State carried along a DP path: layer coordinate `a` (station or time),
/// in-layer coordinate `b` (lateral or station) and two derivative slots
/// (l′/l″ for SL, v/acceleration for ST).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeState {
    pub a: f64,
    pub b: f64,
    pub d1: f64,
    pub d2: f64,
}

pub trait EdgeEvaluator {
    fn edge_cost(&self, from: &NodeState, to: (f64, f64)) -> f64;
    fn advance(&self, from: &NodeState, to: (f64, f64)) -> NodeState;
}

#[derive(Debug, Clone)]
pub struct DpSearch {
    /// Chosen row per grid layer.
    pub rows: Vec<usize>,
    /// Node states along the path: start state first.
    pub states: Vec<NodeState>,
    pub total_cost: f64,
    /// Inter-layer edge evaluations.
    pub expansions: u64,
    pub elapsed: Duration,
}

/// Forward value iteration with deterministic tie-breaking: equal-cost
/// predecessors prefer the smaller row, and the final node ties resolve to
/// the smallest last-layer row.
pub fn dp_search<E: EdgeEvaluator>(
    grid: &SampledGrid,
    start: &NodeState,
    eval: &E,
) -> Result<DpSearch, DpError> {
    let t0 = Instant::now();
    struct Entry {
        row: usize,
        state: NodeState,
        cost: f64,
        back: usize,
    }
    let mut layers: Vec<Vec<Entry>> = Vec::with_capacity(grid.layers.len());
    let mut expansions: u64 = 0;

    for (li, layer) in grid.layers.iter().enumerate() {
        let retained: Vec<usize> = layer
            .iter()
            .enumerate()
            .filter(|(_, n)| n.retained)
            .map(|(j, _)| j)
            .collect();
        if retained.is_empty() {
            return Err(DpError::NoFeasiblePath(li));
        }
        let mut entries = Vec::with_capacity(retained.len());
        if li == 0 {
            for &row in &retained {
                let to = (layer[row].a, layer[row].b);
                let cost = eval.edge_cost(start, to);
                entries.push(Entry { row, state: eval.advance(start, to), cost, back: 0 });
            }
        } else {
            let prev = &layers[li - 1];
            for &row in &retained {
                let to = (layer[row].a, layer[row].b);
                let mut best_cost = f64::INFINITY;
                let mut best_back = 0;
                let mut best_state = *start;
                for (k, p) in prev.iter().enumerate() {
                    expansions += 1;
                    let c = p.cost + eval.edge_cost(&p.state, to);
                    if c < best_cost {
                        best_cost = c;
                        best_back = k;
                        best_state = eval.advance(&p.state, to);
                    }
                }
                entries.push(Entry { row, state: best_state, cost: best_cost, back: best_back });
            }
        }
        layers.push(entries);
    }

    let last = layers.last().unwrap();
    let (mut idx, mut best) = (usize::MAX, f64::INFINITY);
    for (k, e) in last.iter().enumerate() {
        if e.cost < best {
            best = e.cost;
            idx = k;
        }
    }
    if !best.is_finite() {
        return Err(DpError::NoFeasiblePath(grid.layers.len() - 1));
    }

    let mut rows = vec![0usize; layers.len()];
    let mut states = vec![*start; layers.len() + 1];
    let mut cursor = idx;
    for li in (0..layers.len()).rev() {
        rows[li] = layers[li][cursor].row;
        states[li + 1] = layers[li][cursor].state;
        cursor = layers[li][cursor].back;
    }
    Ok(DpSearch { rows, states, total_cost: best, expansions, elapsed: t0.elapsed() })
}

/// Search result augmented with the quintic edge connectors.
#[derive(Debug, Clone)]
pub struct DpResult {
    pub rows: Vec<usize>,
    pub states: Vec<NodeState>,
    pub edge_polys: Vec<QuinticPoly>,
    pub total_cost: f64,
    pub expansions: u64,
    pub elapsed: Duration,
}

// ---------------------------------------------------------------------
// SL graph
// ---------------------------------------------------------------------

const SIMPSON_PANELS: usize = 10;

fn simpson_edge(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let h = (b - a) / SIMPSON_PANELS as f64;
    let mut acc = f(a) + f(b);
    for i in 1..SIMPSON_PANELS {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

/// Three-branch obstacle cost on a clearance distance `d ≥ 0`.
fn clearance_cost(d: f64, w: &DpWeights) -> f64 {
    if d >= w.d_safety {
        0.0
    } else if d > w.d_collision {
        1.0 / ((d - w.d_collision) * (d - w.d_collision))
    } else {
        f64::INFINITY
    }
}

fn lateral_clearance(l: f64, obs: &SlObstacle) -> f64 {
    if l > obs.l_up {
        l - obs.l_up
    } else if l < obs.l_down {
        obs.l_down - l
    } else {
        0.0
    }
}

/// Cost of one SL edge: quintic in `s` between the node states, smoothness
/// energies in closed form, obstacle and reference terms by composite
/// Simpson over the edge samples.
pub fn sl_edge_cost(
    from: &NodeState,
    to: (f64, f64),
    weights: &DpWeights,
    obstacles: &[SlObstacle],
) -> f64 {
    debug_assert!(to.0 > from.a);
    let poly = match QuinticPoly::fit(&BoundaryConditions {
        p0: from.b,
        v0: from.d1,
        a0: from.d2,
        p1: to.1,
        v1: 0.0,
        a1: 0.0,
        span: to.0 - from.a,
    }) {
        Ok(p) => p,
        Err(_) => return f64::INFINITY,
    };
    let smooth = weights.w1 * poly.energy(1) + weights.w2 * poly.energy(2)
        + weights.w3 * poly.energy(3);

    let obs_term = if weights.w4 > 0.0 && !obstacles.is_empty() {
        simpson_edge(
            |u| {
                let s = from.a + u;
                let l = poly.eval_unchecked(u, 0);
                obstacles
                    .iter()
                    .filter(|o| o.covers(s))
                    .map(|o| clearance_cost(lateral_clearance(l, o), weights))
                    .sum::<f64>()
            },
            0.0,
            poly.duration,
        )
    } else {
        0.0
    };
    let ref_term = if weights.w_ref > 0.0 {
        simpson_edge(|u| poly.eval_unchecked(u, 0).powi(2), 0.0, poly.duration)
    } else {
        0.0
    };
    smooth + weights.w4 * obs_term + weights.w_ref * ref_term
}

struct SlEvaluator<'a> {
    weights: &'a DpWeights,
    obstacles: &'a [SlObstacle],
}

impl EdgeEvaluator for SlEvaluator<'_> {
    fn edge_cost(&self, from: &NodeState, to: (f64, f64)) -> f64 {
        sl_edge_cost(from, to, self.weights, self.obstacles)
    }

    // Interior lattice nodes carry zero lateral slope and curvature; only
    // the start node has live derivatives.
    fn advance(&self, _from: &NodeState, to: (f64, f64)) -> NodeState {
        NodeState { a: to.0, b: to.1, d1: 0.0, d2: 0.0 }
    }
}

/// Coarse path search over the retained SL grid. `start` carries the live
/// Frenet state at station 0 relative to the grid.
pub fn sl_dp(
    grid: &SampledGrid,
    start: &NodeState,
    weights: &DpWeights,
    obstacles: &[SlObstacle],
) -> Result<DpResult, DpError> {
    let eval = SlEvaluator { weights, obstacles };
    let search = dp_search(grid, start, &eval)?;
    let edge_polys = fit_edge_polys(&search.states);
    Ok(DpResult {
        rows: search.rows,
        states: search.states,
        edge_polys,
        total_cost: search.total_cost,
        expansions: search.expansions,
        elapsed: search.elapsed,
    })
}

fn fit_edge_polys(states: &[NodeState]) -> Vec<QuinticPoly> {
    states
        .windows(2)
        .map(|w| {
            QuinticPoly::fit(&BoundaryConditions {
                p0: w[0].b,
                v0: w[0].d1,
                a0: w[0].d2,
                p1: w[1].b,
                v1: w[1].d1,
                a1: w[1].d2,
                span: w[1].a - w[0].a,
            })
            .expect("edge span validated by the grid layout")
        })
        .collect()
}

// ---------------------------------------------------------------------
// ST graph
// ---------------------------------------------------------------------

/// Per-layer blocked station bands on the ST plane.
#[derive(Debug, Clone, Default)]
pub struct StBlockedMap {
    pub dt: f64,
    /// `layers[i]` holds the (s_lo, s_hi) bands at `t = i · dt`.
    pub layers: Vec<Vec<(f64, f64)>>,
}

impl StBlockedMap {
    fn bands_at(&self, t: f64) -> &[(f64, f64)] {
        if self.layers.is_empty() {
            return &[];
        }
        let i = (t / self.dt).round() as usize;
        self.layers.get(i).map(|v| v.as_slice()).unwrap_or(&[])
    }

    pub fn station_clearance(&self, t: f64, s: f64) -> f64 {
        self.bands_at(t)
            .iter()
            .map(|&(lo, hi)| {
                if s < lo {
                    lo - s
                } else if s > hi {
                    s - hi
                } else {
                    0.0
                }
            })
            .fold(f64::INFINITY, f64::min)
    }
}

/// Cost of one ST edge arriving at `to`; `from.d1`/`from.d2` are the
/// velocity and acceleration fixed when `from` was settled, so the
/// acceleration and jerk terms realise the second and third finite
/// differences over the partial path.
pub fn st_edge_cost(
    from: &NodeState,
    to: (f64, f64),
    weights: &DpWeights,
    blocked: &StBlockedMap,
) -> f64 {
    let dt = to.0 - from.a;
    debug_assert!(dt > 0.0);
    if to.1 < from.b - 1e-9 {
        return f64::INFINITY; // station must not reverse
    }
    let v = (to.1 - from.b) / dt;
    let acc = (v - from.d1) / dt;
    let jerk = (acc - from.d2) / dt;
    let mut cost = weights.w1 * (v - weights.v_ref).powi(2) * dt
        + weights.w2 * acc * acc * dt
        + weights.w3 * jerk * jerk * dt;
    if weights.w4 > 0.0 {
        let d = blocked.station_clearance(to.0, to.1);
        if d.is_finite() {
            cost += weights.w4 * clearance_cost(d, weights);
        }
    }
    cost
}

struct StEvaluator<'a> {
    weights: &'a DpWeights,
    blocked: &'a StBlockedMap,
}

impl EdgeEvaluator for StEvaluator<'_> {
    fn edge_cost(&self, from: &NodeState, to: (f64, f64)) -> f64 {
        st_edge_cost(from, to, self.weights, self.blocked)
    }

    fn advance(&self, from: &NodeState, to: (f64, f64)) -> NodeState {
        let dt = to.0 - from.a;
        let v = (to.1 - from.b) / dt;
        let acc = (v - from.d1) / dt;
        NodeState { a: to.0, b: to.1, d1: v, d2: acc }
    }
}

/// Coarse speed search. The grid comes from `st_constraint_prune`, whose
/// layer 0 is the trivial `t = 0` start layer; the search runs on the
/// remaining layers from the live start state.
pub fn st_dp(
    grid: &SampledGrid,
    start: &NodeState,
    weights: &DpWeights,
    blocked: &StBlockedMap,
) -> Result<DpResult, DpError> {
    let trimmed = SampledGrid { layers: grid.layers[1..].to_vec() };
    let eval = StEvaluator { weights, blocked };
    let search = dp_search(&trimmed, start, &eval)?;
    let edge_polys = fit_edge_polys(&search.states);
    Ok(DpResult {
        rows: search.rows,
        states: search.states,
        edge_polys,
        total_cost: search.total_cost,
        expansions: search.expansions,
        elapsed: search.elapsed,
    })
}

// ---------------------------------------------------------------------
// Dynamic obstacle projection
// ---------------------------------------------------------------------

/// Pose and constant-velocity motion of one dynamic obstacle.
#[derive(Debug, Clone, Copy)]
pub struct DynamicObstacle {
    pub x: f64,
    pub y: f64,
    pub speed: f64,
    pub heading: f64,
    pub length: f64,
    pub width: f64,
}

/// Ego footprint data used to inflate blocked bands.
#[derive(Debug, Clone, Copy)]
pub struct EgoShape {
    /// Centre to front bumper.
    pub front: f64,
    /// Centre to rear bumper.
    pub rear: f64,
    pub half_width: f64,
}

/// Advance every obstacle at constant velocity and mark the station bands
/// it blocks at each time layer. An obstacle blocks only while its lateral
/// offset overlaps the planned path corridor (path lateral ± the combined
/// half-widths plus `margin`). Stations are relative to `s_origin` on the
/// line; off-corridor poses produce no bands.
#[allow(clippy::too_many_arguments)]
pub fn project_dynamic_obstacles(
    obstacles: &[DynamicObstacle],
    line: &ReferenceLine,
    path_lateral: &dyn Fn(f64) -> f64,
    ego: &EgoShape,
    margin: f64,
    s_origin: f64,
    horizon: f64,
    dt: f64,
) -> StBlockedMap {
    let n_layers = (horizon / dt).round() as usize;
    let mut layers = Vec::with_capacity(n_layers + 1);
    for i in 0..=n_layers {
        let t = i as f64 * dt;
        let mut bands: Vec<(f64, f64)> = Vec::new();
        for obs in obstacles {
            let px = obs.x + obs.speed * obs.heading.cos() * t;
            let py = obs.y + obs.speed * obs.heading.sin() * t;
            let Ok((s_line, l_obs, _)) = line.project((px, py), None) else {
                continue;
            };
            // Discard projections that clamped to the line ends.
            if s_line <= 1e-9 || s_line >= line.total_length() - 1e-9 {
                continue;
            }
            let s_rel = s_line - s_origin;
            let gate = ego.half_width + obs.width * 0.5 + margin;
            if (l_obs - path_lateral(s_rel)).abs() > gate {
                continue;
            }
            let lo = s_rel - obs.length * 0.5 - ego.front;
            let hi = s_rel + obs.length * 0.5 + ego.rear;
            bands.push((lo, hi));
        }
        bands.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        layers.push(bands);
    }
    StBlockedMap { dt, layers }
}
