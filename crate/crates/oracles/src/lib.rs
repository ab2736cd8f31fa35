//! Brute-force reference checks for the musicagent test suites.
//!
//! Everything here works on plain indices and edge lists so that it stays
//! independent of the engine's own graph and scheduling code. Graphs are
//! small (at most ~10 nodes); nothing here is meant to be fast.
//!
//! Edge `(a, b)` means "`a` must finish before `b`" (b depends on a).

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, RngExt};

fn successors(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let mut succ = vec![Vec::new(); n];
    for &(a, b) in edges {
        succ[a].push(b);
    }
    succ
}

/// True if some simple path leads from a node back to itself. Enumerates
/// every simple path from every start node.
pub fn has_cycle_by_path_enumeration(n: usize, edges: &[(usize, usize)]) -> bool {
    fn walk(node: usize, start: usize, succ: &[Vec<usize>], on_path: &mut Vec<bool>) -> bool {
        for &next in &succ[node] {
            if next == start {
                return true;
            }
            if !on_path[next] {
                on_path[next] = true;
                if walk(next, start, succ, on_path) {
                    return true;
                }
                on_path[next] = false;
            }
        }
        false
    }
    let succ = successors(n, edges);
    (0..n).any(|start| {
        let mut on_path = vec![false; n];
        on_path[start] = true;
        walk(start, start, &succ, &mut on_path)
    })
}

/// Every permutation of `0..n` consistent with the edges. Exponential.
pub fn all_topological_orders(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
    fn extend(
        n: usize,
        edges: &[(usize, usize)],
        order: &mut Vec<usize>,
        used: &mut Vec<bool>,
        out: &mut Vec<Vec<usize>>,
    ) {
        if order.len() == n {
            out.push(order.clone());
            return;
        }
        for v in 0..n {
            if used[v] {
                continue;
            }
            let blocked = edges.iter().any(|&(a, b)| b == v && !used[a]);
            if blocked {
                continue;
            }
            used[v] = true;
            order.push(v);
            extend(n, edges, order, used, out);
            order.pop();
            used[v] = false;
        }
    }
    let mut out = Vec::new();
    extend(n, edges, &mut Vec::new(), &mut vec![false; n], &mut out);
    out
}

/// Pairwise check: every node appears once and every edge points forward.
pub fn is_topological_order(n: usize, edges: &[(usize, usize)], order: &[usize]) -> bool {
    if order.len() != n {
        return false;
    }
    let mut position = vec![usize::MAX; n];
    for (i, &v) in order.iter().enumerate() {
        if v >= n || position[v] != usize::MAX {
            return false;
        }
        position[v] = i;
    }
    edges.iter().all(|&(a, b)| position[a] < position[b])
}

/// `reach[a][b]` is true iff a non-empty path leads from `a` to `b`.
/// Floyd-Warshall style closure over the adjacency matrix.
pub fn reachability(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<bool>> {
    let mut reach = vec![vec![false; n]; n];
    for &(a, b) in edges {
        reach[a][b] = true;
    }
    for k in 0..n {
        for i in 0..n {
            if reach[i][k] {
                for j in 0..n {
                    if reach[k][j] {
                        reach[i][j] = true;
                    }
                }
            }
        }
    }
    reach
}

/// Nodes reachable by a non-empty path from any failed node. A failed node
/// downstream of another failure is included.
pub fn transitive_dependents(n: usize, edges: &[(usize, usize)], failed: &[usize]) -> BTreeSet<usize> {
    let reach = reachability(n, edges);
    (0..n).filter(|v| failed.iter().any(|&f| reach[f][*v])).collect()
}

/// Indices attaining the maximum value.
pub fn argmax_all(values: &[f64]) -> Vec<usize> {
    let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    values
        .iter()
        .enumerate()
        .filter(|(_, &v)| v == best)
        .map(|(i, _)| i)
        .collect()
}

/// Frequency estimate from sign changes over the non-silent span.
pub fn zero_crossing_frequency(samples: &[i16], sample_rate: u32) -> f64 {
    let first = samples.iter().position(|&s| s != 0);
    let last = samples.iter().rposition(|&s| s != 0);
    let (first, last) = match (first, last) {
        (Some(f), Some(l)) if l > f => (f, l),
        _ => return 0.0,
    };
    let span = &samples[first..=last];
    let mut crossings = 0usize;
    let mut prev_sign = span[0].signum();
    for &s in &span[1..] {
        let sign = s.signum();
        if sign != 0 && prev_sign != 0 && sign != prev_sign {
            crossings += 1;
        }
        if sign != 0 {
            prev_sign = sign;
        }
    }
    let seconds = span.len() as f64 / sample_rate as f64;
    crossings as f64 / 2.0 / seconds
}

/// Random DAG on `n` nodes: edges only go from lower to higher index in a
/// random permutation, each present with the given probability.
pub fn random_dag<R: Rng + ?Sized>(rng: &mut R, n: usize, edge_percent: u32) -> Vec<(usize, usize)> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_ratio(edge_percent, 100) {
                edges.push((perm[i], perm[j]));
            }
        }
    }
    edges
}

#[cfg(test)]
mod tests {
    use rand::rngs::StdRng;
    use rand::{RngExt, SeedableRng};

    use super::*;

    #[test]
    fn diamond() {
        let edges = [(0, 1), (0, 2), (1, 3), (2, 3)];
        assert!(!has_cycle_by_path_enumeration(4, &edges));
        let orders = all_topological_orders(4, &edges);
        assert_eq!(orders, vec![vec![0, 1, 2, 3], vec![0, 2, 1, 3]]);
        assert!(is_topological_order(4, &edges, &[0, 2, 1, 3]));
        assert!(!is_topological_order(4, &edges, &[1, 0, 2, 3]));
        assert_eq!(transitive_dependents(4, &edges, &[1]), BTreeSet::from([3]));
        assert_eq!(transitive_dependents(4, &edges, &[0, 1]), BTreeSet::from([1, 2, 3]));
    }

    #[test]
    fn cycles() {
        assert!(has_cycle_by_path_enumeration(2, &[(0, 1), (1, 0)]));
        assert!(has_cycle_by_path_enumeration(1, &[(0, 0)]));
        assert!(has_cycle_by_path_enumeration(4, &[(0, 1), (1, 2), (2, 3), (3, 1)]));
        assert!(all_topological_orders(2, &[(0, 1), (1, 0)]).is_empty());
    }

    #[test]
    fn random_dags_are_acyclic() {
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..50 {
            let n = rng.random_range(1..=8);
            let edges = random_dag(&mut rng, n, 40);
            assert!(!has_cycle_by_path_enumeration(n, &edges));
        }
    }

    #[test]
    fn zero_crossings_of_square_wave() {
        // 100 Hz square wave at 16 kHz: 80 samples up, 80 down.
        let samples: Vec<i16> = (0..16_000).map(|i| if (i / 80) % 2 == 0 { 1000 } else { -1000 }).collect();
        let f = zero_crossing_frequency(&samples, 16_000);
        assert!((f - 100.0).abs() < 1.0, "{f}");
    }
}
