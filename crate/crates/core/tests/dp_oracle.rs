//! Exhaustive-enumeration certificates for the lattice search.

use frenet_lattice::apf_sampling::{GridNode, SampledGrid};
use frenet_lattice::dp::{dp_search, DpError, EdgeEvaluator, NodeState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct TableEvaluator {
    // costs[layer][to_row][from_row]; layer 0 uses from_row 0.
    costs: Vec<Vec<Vec<f64>>>,
}

impl EdgeEvaluator for TableEvaluator {
    fn edge_cost(&self, from: &NodeState, to: (f64, f64)) -> f64 {
        let layer = (to.0 - 1.0).round() as usize;
        let to_row = to.1.round() as usize;
        let from_row = if layer == 0 { 0 } else { from.b.round() as usize };
        self.costs[layer][to_row][from_row]
    }
    fn advance(&self, _from: &NodeState, to: (f64, f64)) -> NodeState {
        NodeState { a: to.0, b: to.1, d1: 0.0, d2: 0.0 }
    }
}

fn grid_with_masks(masks: &[Vec<bool>]) -> SampledGrid {
    SampledGrid {
        layers: masks
            .iter()
            .enumerate()
            .map(|(i, mask)| {
                mask.iter()
                    .enumerate()
                    .map(|(j, &retained)| GridNode {
                        a: (i + 1) as f64,
                        b: j as f64,
                        apf_cost: 0.0,
                        retained,
                    })
                    .collect()
            })
            .collect(),
    }
}

/// Enumerate every retained path with the same tie-break rule as the
/// search (prefer smaller rows on cost ties, scanned in row order).
fn enumerate_best(
    masks: &[Vec<bool>],
    eval: &TableEvaluator,
) -> Option<(Vec<usize>, f64)> {
    let retained: Vec<Vec<usize>> = masks
        .iter()
        .map(|m| {
            m.iter()
                .enumerate()
                .filter(|(_, &r)| r)
                .map(|(j, _)| j)
                .collect()
        })
        .collect();
    if retained.iter().any(|l| l.is_empty()) {
        return None;
    }
    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut path = vec![0usize; masks.len()];
    fn rec(
        layer: usize,
        cost: f64,
        retained: &[Vec<usize>],
        eval: &TableEvaluator,
        path: &mut Vec<usize>,
        best: &mut Option<(Vec<usize>, f64)>,
    ) {
        if layer == retained.len() {
            if cost.is_finite() {
                match best {
                    Some((_, c)) if *c <= cost => {}
                    _ => *best = Some((path.clone(), cost)),
                }
            }
            return;
        }
        for &row in &retained[layer] {
            let from = if layer == 0 {
                NodeState { a: 0.0, b: 0.0, d1: 0.0, d2: 0.0 }
            } else {
                NodeState { a: layer as f64, b: path[layer - 1] as f64, d1: 0.0, d2: 0.0 }
            };
            let c = eval.edge_cost(&from, ((layer + 1) as f64, row as f64));
            path[layer] = row;
            rec(layer + 1, cost + c, retained, eval, path, best);
        }
    }
    rec(0, 0.0, &retained, eval, &mut path, &mut best);
    best
}

#[test]
fn dp_matches_exhaustive_enumeration_on_200_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(314159);
    let start = NodeState { a: 0.0, b: 0.0, d1: 0.0, d2: 0.0 };
    for instance in 0..200 {
        let n_layers = rng.gen_range(1..=6);
        let m_rows = rng.gen_range(1..=6);
        let masks: Vec<Vec<bool>> = (0..n_layers)
            .map(|_| {
                let mut mask: Vec<bool> = (0..m_rows).map(|_| rng.gen_bool(0.8)).collect();
                if !mask.iter().any(|&b| b) {
                    mask[rng.gen_range(0..m_rows)] = true;
                }
                mask
            })
            .collect();
        let costs: Vec<Vec<Vec<f64>>> = (0..n_layers)
            .map(|layer| {
                let from_count = if layer == 0 { 1 } else { m_rows };
                (0..m_rows)
                    .map(|_| {
                        (0..from_count)
                            .map(|_| {
                                if rng.gen_bool(0.08) {
                                    f64::INFINITY
                                } else {
                                    rng.gen_range(0.0..10.0)
                                }
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let eval = TableEvaluator { costs };
        let grid = grid_with_masks(&masks);

        let oracle = enumerate_best(&masks, &eval);
        match dp_search(&grid, &start, &eval) {
            Ok(r) => {
                let (rows, cost) = oracle.expect("oracle agrees path exists");
                assert_eq!(r.rows, rows, "instance {instance}");
                assert_eq!(r.total_cost, cost, "instance {instance}");
            }
            Err(DpError::NoFeasiblePath(_)) => {
                assert!(oracle.is_none(), "instance {instance}: oracle found a path");
            }
        }
    }
}

#[test]
fn expansions_equal_sum_of_layer_products() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let start = NodeState { a: 0.0, b: 0.0, d1: 0.0, d2: 0.0 };
    for _ in 0..50 {
        let n_layers = rng.gen_range(2..=6);
        let m_rows = 6;
        let masks: Vec<Vec<bool>> = (0..n_layers)
            .map(|_| {
                let mut mask: Vec<bool> = (0..m_rows).map(|_| rng.gen_bool(0.7)).collect();
                if !mask.iter().any(|&b| b) {
                    mask[0] = true;
                }
                mask
            })
            .collect();
        let costs: Vec<Vec<Vec<f64>>> = (0..n_layers)
            .map(|layer| {
                let from_count = if layer == 0 { 1 } else { m_rows };
                (0..m_rows)
                    .map(|_| (0..from_count).map(|_| rng.gen_range(0.0..5.0)).collect())
                    .collect()
            })
            .collect();
        let grid = grid_with_masks(&masks);
        let r = dp_search(&grid, &start, &TableEvaluator { costs }).unwrap();
        let k: Vec<u64> = masks
            .iter()
            .map(|m| m.iter().filter(|&&b| b).count() as u64)
            .collect();
        let expected: u64 = k.windows(2).map(|w| w[0] * w[1]).sum();
        assert_eq!(r.expansions, expected);
    }
}

#[test]
fn complexity_ratio_is_exact_for_paper_configuration() {
    // N = 4 layers: K = 5 retained vs M = 11 uniform gives 3·25 vs 3·121
    // inter-layer expansions: the ratio is 25/121 exactly.
    let start = NodeState { a: 0.0, b: 0.0, d1: 0.0, d2: 0.0 };
    let run = |rows: usize| -> u64 {
        let masks = vec![vec![true; rows]; 4];
        let costs: Vec<Vec<Vec<f64>>> = (0..4)
            .map(|layer| {
                let from_count = if layer == 0 { 1 } else { rows };
                (0..rows).map(|j| vec![j as f64; from_count]).collect()
            })
            .collect();
        dp_search(&grid_with_masks(&masks), &start, &TableEvaluator { costs })
            .unwrap()
            .expansions
    };
    let adaptive = run(5);
    let average = run(11);
    assert_eq!(adaptive * 121, average * 25);
}
