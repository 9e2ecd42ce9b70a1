//! Lattice construction and adaptive node retention.
//!
//! Uniform SL/ST grids are thinned before dynamic programming: each node
//! gets a potential-field cost (attraction to the previous cycle's path,
//! repulsion from obstacles and road boundaries) and only the K cheapest
//! nodes per layer survive. On the ST side the pruning criterion is
//! reachability under the velocity/acceleration envelope instead.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SamplingError {
    #[error("no finite-cost node left in layer {0}")]
    LayerBlocked(usize),
}

/// Uniform SL lattice layout: `n_layers` stations spaced `ds` apart,
/// `m_rows` lateral samples spanning `[l_min, l_max]`.
#[derive(Debug, Clone, Copy)]
pub struct SlGridSpec {
    pub n_layers: usize,
    pub m_rows: usize,
    pub ds: f64,
    pub l_min: f64,
    pub l_max: f64,
}

impl SlGridSpec {
    pub fn validate(&self) -> bool {
        self.n_layers >= 2 && self.m_rows >= 3 && self.ds > 0.0 && self.l_min < self.l_max
    }
}

/// Gains of the three potential fields plus the ±buffer inflation used by
/// the piecewise branches.
#[derive(Debug, Clone, Copy)]
pub struct ApfCoefficients {
    /// Obstacle repulsion gain.
    pub eta: f64,
    /// Boundary repulsion gain.
    pub gamma: f64,
    /// Attraction gain towards the previous cycle's path.
    pub alpha: f64,
    /// Inflation of obstacle and boundary bands, metres.
    pub buffer: f64,
}

impl Default for ApfCoefficients {
    fn default() -> Self {
        Self { eta: 1000.0, gamma: 20.0, alpha: 20.0, buffer: 1.0 }
    }
}

/// Static obstacle as a lateral band over a station range.
#[derive(Debug, Clone, Copy)]
pub struct SlObstacle {
    pub s_range: (f64, f64),
    pub l_down: f64,
    pub l_up: f64,
}

impl SlObstacle {
    pub fn covers(&self, s: f64) -> bool {
        (self.s_range.0..=self.s_range.1).contains(&s)
    }
}

/// A lattice node. `a` is the layer coordinate (station for SL, time for
/// ST), `b` the in-layer coordinate (lateral for SL, station for ST).
#[derive(Debug, Clone, Copy)]
pub struct GridNode {
    pub a: f64,
    pub b: f64,
    pub apf_cost: f64,
    pub retained: bool,
}

#[derive(Debug, Clone)]
pub struct SampledGrid {
    pub layers: Vec<Vec<GridNode>>,
}

impl SampledGrid {
    pub fn retained_counts(&self) -> Vec<usize> {
        self.layers
            .iter()
            .map(|l| l.iter().filter(|n| n.retained).count())
            .collect()
    }
}

/// Uniform SL lattice; layer `i` sits at `s = (i + 1) · ds`, all nodes
/// retained with unset (zero) cost.
pub fn uniform_sl_grid(spec: &SlGridSpec) -> SampledGrid {
    assert!(spec.validate(), "invalid grid spec: {spec:?}");
    let step = (spec.l_max - spec.l_min) / (spec.m_rows - 1) as f64;
    let layers = (0..spec.n_layers)
        .map(|i| {
            let s = (i + 1) as f64 * spec.ds;
            (0..spec.m_rows)
                .map(|j| GridNode {
                    a: s,
                    b: spec.l_min + j as f64 * step,
                    apf_cost: 0.0,
                    retained: true,
                })
                .collect()
        })
        .collect();
    SampledGrid { layers }
}

/// Potential-field cost of a candidate SL node.
///
/// * obstacle field: +inf inside the band inflated by `buffer`, otherwise
///   ½η/d² to the inflated edge (zero when no obstacle covers `s`),
/// * boundary field: +inf at or outside the inflated road edges, otherwise
///   ½γ(1/d²_up + 1/d²_down),
/// * attraction: ½α(l − prev_path(s))².
///
/// Distances are lateral-only. Band seams belong to the infinite branch.
pub fn sl_apf_cost(
    s: f64,
    l: f64,
    obstacles: &[SlObstacle],
    bounds: (f64, f64),
    prev_path: &dyn Fn(f64) -> f64,
    coeff: &ApfCoefficients,
) -> f64 {
    let (l_lbound, l_ubound) = bounds;
    debug_assert!(l_lbound < l_ubound);

    let up = l_ubound - coeff.buffer;
    let down = l_lbound + coeff.buffer;
    if l >= up || l <= down {
        return f64::INFINITY;
    }
    let d_up = up - l;
    let d_down = l - down;
    let mut cost = 0.5 * coeff.gamma * (1.0 / (d_up * d_up) + 1.0 / (d_down * d_down));

    for obs in obstacles.iter().filter(|o| o.covers(s)) {
        let hi = obs.l_up + coeff.buffer;
        let lo = obs.l_down - coeff.buffer;
        if (lo..=hi).contains(&l) {
            return f64::INFINITY;
        }
        let d = if l > hi { l - hi } else { lo - l };
        cost += 0.5 * coeff.eta / (d * d);
    }

    let dev = l - prev_path(s);
    cost += 0.5 * coeff.alpha * dev * dev;
    cost
}

/// Score every node with [`sl_apf_cost`] and keep the `k_retain` cheapest
/// finite nodes per layer. Ties prefer proximity to the previous path,
/// then the lower row index.
pub fn adapt_sl(
    grid: &SampledGrid,
    k_retain: usize,
    obstacles: &[SlObstacle],
    bounds: (f64, f64),
    prev_path: &dyn Fn(f64) -> f64,
    coeff: &ApfCoefficients,
) -> Result<SampledGrid, SamplingError> {
    assert!(k_retain >= 1);
    let mut out = grid.clone();
    for (li, layer) in out.layers.iter_mut().enumerate() {
        let mut order: Vec<usize> = Vec::with_capacity(layer.len());
        for (j, node) in layer.iter_mut().enumerate() {
            node.apf_cost = sl_apf_cost(node.a, node.b, obstacles, bounds, prev_path, coeff);
            node.retained = false;
            if node.apf_cost.is_finite() {
                order.push(j);
            }
        }
        if order.is_empty() {
            return Err(SamplingError::LayerBlocked(li));
        }
        order.sort_by(|&x, &y| {
            let nx = &layer[x];
            let ny = &layer[y];
            nx.apf_cost
                .partial_cmp(&ny.apf_cost)
                .unwrap()
                .then_with(|| {
                    let dx = (nx.b - prev_path(nx.a)).abs();
                    let dy = (ny.b - prev_path(ny.a)).abs();
                    dx.partial_cmp(&dy).unwrap()
                })
                .then(x.cmp(&y))
        });
        for &j in order.iter().take(k_retain) {
            layer[j].retained = true;
        }
    }
    Ok(out)
}

/// ST lattice layout and dynamic limits.
#[derive(Debug, Clone, Copy)]
pub struct StGridSpec {
    pub horizon: f64,
    pub dt: f64,
    pub s_max: f64,
    pub m_rows: usize,
    pub v_bounds: (f64, f64),
    pub a_bounds: (f64, f64),
    pub j_bounds: (f64, f64),
}

/// Closed-form bang-bang reachability envelope from `v0`: accelerate at the
/// limit until the velocity bound, then cruise.
pub fn reach_bounds(spec: &StGridSpec, v0: f64, t: f64) -> (f64, f64) {
    let one_sided = |a_lim: f64, v_lim: f64| -> f64 {
        let t_sat = (v_lim - v0) / a_lim; // time to hit the velocity bound
        if t <= t_sat {
            v0 * t + 0.5 * a_lim * t * t
        } else {
            v0 * t_sat + 0.5 * a_lim * t_sat * t_sat + v_lim * (t - t_sat)
        }
    };
    (
        one_sided(spec.a_bounds.0, spec.v_bounds.0),
        one_sided(spec.a_bounds.1, spec.v_bounds.1),
    )
}

/// Build the ST lattice (layer i at `t = i · dt`, rows spanning
/// `[0, s_max]`) and retain only nodes reachable under the bang-bang
/// envelope. Retained nodes carry a small velocity-deviation warm cost;
/// dynamic programming re-scores edges properly.
pub fn st_constraint_prune(spec: &StGridSpec, v0: f64, a0: f64) -> SampledGrid {
    let _ = a0; // the v/a envelope does not bind on initial acceleration
    debug_assert!(spec.horizon > 0.0 && spec.dt > 0.0);
    debug_assert!((spec.v_bounds.0..=spec.v_bounds.1).contains(&v0));
    let n_layers = (spec.horizon / spec.dt).round() as usize;
    let step = spec.s_max / (spec.m_rows - 1) as f64;
    let layers = (0..=n_layers)
        .map(|i| {
            let t = i as f64 * spec.dt;
            let (lo, hi) = reach_bounds(spec, v0, t);
            (0..spec.m_rows)
                .map(|j| {
                    let s = j as f64 * step;
                    let reachable = s >= lo - 1e-9 && s <= hi + 1e-9;
                    let warm = if t > 0.0 {
                        let v_straight = s / t;
                        (v_straight - v0).powi(2)
                    } else {
                        0.0
                    };
                    GridNode {
                        a: t,
                        b: s,
                        apf_cost: if reachable { warm } else { f64::INFINITY },
                        retained: reachable,
                    }
                })
                .collect()
        })
        .collect();
    SampledGrid { layers }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn centerline(_s: f64) -> f64 {
        0.0
    }

    #[test]
    fn uniform_grid_layout() {
        let g = uniform_sl_grid(&SlGridSpec {
            n_layers: 4,
            m_rows: 11,
            ds: 15.0,
            l_min: -5.0,
            l_max: 5.0,
        });
        assert_eq!(g.layers.len(), 4);
        assert_eq!(g.layers.iter().map(|l| l.len()).sum::<usize>(), 44);
        assert_abs_diff_eq!(g.layers[0][1].b - g.layers[0][0].b, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(g.layers[2][0].a, 45.0, epsilon = 1e-12);

        let small = uniform_sl_grid(&SlGridSpec {
            n_layers: 2,
            m_rows: 3,
            ds: 10.0,
            l_min: -4.0,
            l_max: 4.0,
        });
        let rows: Vec<f64> = small.layers[0].iter().map(|n| n.b).collect();
        assert_eq!(rows, vec![-4.0, 0.0, 4.0]);

        let nine = uniform_sl_grid(&SlGridSpec {
            n_layers: 9,
            m_rows: 9,
            ds: 10.0,
            l_min: -4.0,
            l_max: 4.0,
        });
        assert_abs_diff_eq!(nine.layers[0][1].b - nine.layers[0][0].b, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn boundary_field_hand_value() {
        // 10 m road, buffer 1: 4 m to each inflated edge from the centre.
        let coeff = ApfCoefficients { alpha: 20.0, ..Default::default() };
        let c = sl_apf_cost(10.0, 0.0, &[], (-5.0, 5.0), &centerline, &coeff);
        assert_abs_diff_eq!(c, 0.5 * 20.0 * (1.0 / 16.0 + 1.0 / 16.0), epsilon = 1e-12);
        assert_abs_diff_eq!(c, 1.25, epsilon = 1e-12);
    }

    #[test]
    fn obstacle_band_is_infinite() {
        let coeff = ApfCoefficients::default();
        let obs = [SlObstacle { s_range: (5.0, 15.0), l_down: -1.0, l_up: 2.0 }];
        // Inside the inflated band [-2, 3].
        assert!(sl_apf_cost(10.0, 0.5, &obs, (-8.0, 8.0), &centerline, &coeff).is_infinite());
        assert!(sl_apf_cost(10.0, 3.0, &obs, (-8.0, 8.0), &centerline, &coeff).is_infinite());
        // Outside the obstacle's station range the band is gone.
        assert!(sl_apf_cost(20.0, 0.5, &obs, (-8.0, 8.0), &centerline, &coeff).is_finite());
    }

    #[test]
    fn boundary_seam_is_infinite() {
        let coeff = ApfCoefficients::default();
        // l = l_ubound - buffer belongs to the infinite branch.
        assert!(sl_apf_cost(0.0, 4.0, &[], (-5.0, 5.0), &centerline, &coeff).is_infinite());
        assert!(sl_apf_cost(0.0, -4.0, &[], (-5.0, 5.0), &centerline, &coeff).is_infinite());
        assert!(sl_apf_cost(0.0, 3.999, &[], (-5.0, 5.0), &centerline, &coeff).is_finite());
    }

    #[test]
    fn field_continuity_towards_seams() {
        let coeff = ApfCoefficients::default();
        let obs = [SlObstacle { s_range: (0.0, 100.0), l_down: -1.0, l_up: 1.0 }];
        // Approaching the inflated obstacle edge from the finite side the
        // cost diverges; on the smooth interior it is locally continuous.
        let l_probe = 2.6;
        let c0 = sl_apf_cost(10.0, l_probe, &obs, (-8.0, 8.0), &centerline, &coeff);
        let c1 = sl_apf_cost(10.0, l_probe + 1e-6, &obs, (-8.0, 8.0), &centerline, &coeff);
        assert!((c1 - c0).abs() < 1e-3 * c0);
        let near = sl_apf_cost(10.0, 2.0 + 1e-4, &obs, (-8.0, 8.0), &centerline, &coeff);
        assert!(near > 1e6);
    }

    #[test]
    fn adaptive_retains_innermost_five() {
        let spec = SlGridSpec { n_layers: 4, m_rows: 11, ds: 15.0, l_min: -5.0, l_max: 5.0 };
        let grid = uniform_sl_grid(&spec);
        let coeff = ApfCoefficients::default();
        let adapted = adapt_sl(&grid, 5, &[], (-5.0, 5.0), &centerline, &coeff).unwrap();
        for layer in &adapted.layers {
            let retained: Vec<f64> =
                layer.iter().filter(|n| n.retained).map(|n| n.b).collect();
            assert_eq!(retained.len(), 5);
            // Brute-force rank oracle: retained = the 5 smallest costs.
            let mut costs: Vec<(f64, f64)> =
                layer.iter().map(|n| (n.apf_cost, n.b)).collect();
            costs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            let max_retained = layer
                .iter()
                .filter(|n| n.retained)
                .map(|n| n.apf_cost)
                .fold(0.0_f64, f64::max);
            let min_dropped = layer
                .iter()
                .filter(|n| !n.retained && n.apf_cost.is_finite())
                .map(|n| n.apf_cost)
                .fold(f64::INFINITY, f64::min);
            assert!(max_retained <= min_dropped);
            // Monotone fields from the centre: the innermost rows win.
            for b in retained {
                assert!(b.abs() <= 2.0 + 1e-9);
            }
        }
    }

    #[test]
    fn blocked_band_removes_rows() {
        let spec = SlGridSpec { n_layers: 3, m_rows: 11, ds: 10.0, l_min: -5.0, l_max: 5.0 };
        let grid = uniform_sl_grid(&spec);
        let coeff = ApfCoefficients::default();
        let obs = [SlObstacle { s_range: (15.0, 25.0), l_down: -1.0, l_up: 2.0 }];
        let adapted = adapt_sl(&grid, 5, &obs, (-5.0, 5.0), &centerline, &coeff).unwrap();
        // Layer 1 (s = 20) is covered: nothing retained in [-2, 3].
        for n in adapted.layers[1].iter().filter(|n| n.retained) {
            assert!(n.b < -2.0 || n.b > 3.0);
        }
    }

    #[test]
    fn narrow_road_blocks_layer() {
        let spec = SlGridSpec { n_layers: 2, m_rows: 5, ds: 10.0, l_min: -0.9, l_max: 0.9 };
        let grid = uniform_sl_grid(&spec);
        let coeff = ApfCoefficients::default();
        assert!(matches!(
            adapt_sl(&grid, 3, &[], (-0.9, 0.9), &centerline, &coeff),
            Err(SamplingError::LayerBlocked(0))
        ));
    }

    #[test]
    fn adaptive_is_subset_of_uniform() {
        let spec = SlGridSpec { n_layers: 5, m_rows: 9, ds: 12.0, l_min: -4.0, l_max: 4.0 };
        let grid = uniform_sl_grid(&spec);
        let coeff = ApfCoefficients::default();
        let obs = [SlObstacle { s_range: (20.0, 40.0), l_down: 1.0, l_up: 4.0 }];
        let adapted = adapt_sl(&grid, 4, &obs, (-4.0, 4.0), &|s| 0.01 * s, &coeff).unwrap();
        for (orig, new) in grid.layers.iter().zip(&adapted.layers) {
            assert_eq!(orig.len(), new.len());
            for (a, b) in orig.iter().zip(new) {
                assert_eq!(a.a, b.a);
                assert_eq!(a.b, b.b);
            }
        }
    }

    fn paper_st_spec() -> StGridSpec {
        StGridSpec {
            horizon: 8.0,
            dt: 1.0,
            s_max: 40.0,
            m_rows: 41,
            v_bounds: (-5.0, 5.0),
            a_bounds: (-2.0, 2.0),
            j_bounds: (-10.0, 10.0),
        }
    }

    #[test]
    fn reach_envelope_from_rest() {
        let spec = paper_st_spec();
        let (lo, hi) = reach_bounds(&spec, 0.0, 1.0);
        assert_abs_diff_eq!(hi, 1.0, epsilon = 1e-12); // ½·2·1²
        assert_abs_diff_eq!(lo, -1.0, epsilon = 1e-12);
        // At t = 8 the bound follows the accelerate-then-cruise envelope:
        // ½·2·2.5² + 5·5.5 = 33.75.
        let (lo8, hi8) = reach_bounds(&spec, 0.0, 8.0);
        assert_abs_diff_eq!(hi8, 33.75, epsilon = 1e-12);
        assert_abs_diff_eq!(lo8, -33.75, epsilon = 1e-12);
    }

    #[test]
    fn saturated_envelope_is_linear() {
        let spec = paper_st_spec();
        for t in [0.5, 2.0, 7.5] {
            let (_, hi) = reach_bounds(&spec, 5.0, t);
            assert_abs_diff_eq!(hi, 5.0 * t, epsilon = 1e-12);
        }
    }

    #[test]
    fn st_prune_soundness() {
        let spec = paper_st_spec();
        let grid = st_constraint_prune(&spec, 0.0, 0.0);
        assert_eq!(grid.layers.len(), 9);
        // t = 0: single reachable node at s = 0.
        let first: Vec<&GridNode> = grid.layers[0].iter().filter(|n| n.retained).collect();
        assert_eq!(first.len(), 1);
        assert_eq!(first[0].b, 0.0);
        // Every retained node reachable, every pruned node unreachable,
        // by the closed-form envelope oracle.
        for layer in &grid.layers {
            for n in layer {
                let (lo, hi) = reach_bounds(&spec, 0.0, n.a);
                let inside = n.b >= lo - 1e-9 && n.b <= hi + 1e-9;
                assert_eq!(n.retained, inside, "node at t={} s={}", n.a, n.b);
            }
        }
    }
}
