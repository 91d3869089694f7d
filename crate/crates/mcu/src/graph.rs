//! k-nearest-neighbor graph over samples. Edge squared distances become
//! the isometry equality constraints of the unfolding program.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::data::ResponseMatrix;
use crate::error::{McuError, Result};

/// How a directed nearest-neighbor relation is symmetrized into edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NeighborRule {
    /// Edge (i,j) exists if i is among j's k nearest OR j among i's.
    Union,
    /// Edge (i,j) exists only when both directions hold.
    Mutual,
}

#[derive(Debug, Clone)]
pub struct NeighborGraph {
    /// Unordered edges stored with i < j, mapped to squared distance.
    pub edges: BTreeMap<(usize, usize), f64>,
    pub k: usize,
    pub rule: NeighborRule,
    pub n: usize,
    /// Indices of duplicate row pairs found during construction.
    pub duplicate_rows: Vec<(usize, usize)>,
}

/// Exact O(N^2) neighbor search. Distance ties are broken by smaller index.
pub fn build_knn_graph(
    responses: &ResponseMatrix,
    k: usize,
    rule: NeighborRule,
) -> Result<NeighborGraph> {
    let n = responses.n();
    if k == 0 || k >= n {
        return Err(McuError::KTooLarge { k, n });
    }

    // all pairwise squared distances
    let mut d2 = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = responses.row_sq_dist(i, j);
            d2[i][j] = d;
            d2[j][i] = d;
        }
    }

    // k nearest of each node, ties by smaller index
    let mut neighbor_sets: Vec<Vec<usize>> = Vec::with_capacity(n);
    for i in 0..n {
        let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        others.sort_by(|&a, &b| {
            d2[i][a]
                .partial_cmp(&d2[i][b])
                .unwrap()
                .then(a.cmp(&b))
        });
        others.truncate(k);
        neighbor_sets.push(others);
    }

    let mut edges = BTreeMap::new();
    let mut duplicate_rows = Vec::new();
    for i in 0..n {
        for &j in &neighbor_sets[i] {
            let key = (i.min(j), i.max(j));
            let keep = match rule {
                NeighborRule::Union => true,
                NeighborRule::Mutual => neighbor_sets[j].contains(&i),
            };
            if keep {
                let d = d2[key.0][key.1];
                if d == 0.0 && !duplicate_rows.contains(&key) {
                    duplicate_rows.push(key);
                }
                edges.insert(key, d);
            }
        }
    }

    Ok(NeighborGraph {
        edges,
        k,
        rule,
        n,
        duplicate_rows,
    })
}

/// Connected components by breadth-first search, returned as sorted
/// index sets.
pub fn connected_components(graph: &NeighborGraph) -> Vec<Vec<usize>> {
    let n = graph.n;
    let mut adj = vec![Vec::new(); n];
    for &(i, j) in graph.edges.keys() {
        adj[i].push(j);
        adj[j].push(i);
    }
    let mut seen = vec![false; n];
    let mut components = Vec::new();
    for start in 0..n {
        if seen[start] {
            continue;
        }
        let mut comp = vec![start];
        seen[start] = true;
        let mut queue = std::collections::VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    comp.push(v);
                    queue.push_back(v);
                }
            }
        }
        comp.sort_unstable();
        components.push(comp);
    }
    components
}

impl NeighborGraph {
    /// Diagnostic dump: one `i,j,squared_distance` line per edge.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("i,j,squared_distance\n");
        for (&(i, j), &d) in &self.edges {
            out.push_str(&format!("{},{},{:?}\n", i, j, d));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::center_scale_responses;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};

    fn resp(values: DMatrix<f64>) -> ResponseMatrix {
        let m = values.ncols();
        ResponseMatrix {
            values,
            column_means: vec![0.0; m],
            global_scale: 1.0,
            points_per_cloud: m,
            ambient_dim: 1,
        }
    }

    #[test]
    fn union_vs_mutual_on_line() {
        // rows at 0, 1, 3 on a line
        let y = resp(DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 3.0]));
        let union = build_knn_graph(&y, 1, NeighborRule::Union).unwrap();
        let keys: Vec<_> = union.edges.keys().copied().collect();
        assert_eq!(keys, vec![(0, 1), (1, 2)]);
        let mutual = build_knn_graph(&y, 1, NeighborRule::Mutual).unwrap();
        let keys: Vec<_> = mutual.edges.keys().copied().collect();
        assert_eq!(keys, vec![(0, 1)]);
    }

    #[test]
    fn k_too_large() {
        let y = resp(DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 3.0]));
        assert!(matches!(
            build_knn_graph(&y, 3, NeighborRule::Union),
            Err(McuError::KTooLarge { k: 3, n: 3 })
        ));
    }

    #[test]
    fn matches_brute_force_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let raw = DMatrix::from_fn(20, 3, |_, _| rng.gen_range(-1.0..1.0));
        let y = center_scale_responses(&raw, 3, 1).unwrap();
        let k = 4;
        let g = build_knn_graph(&y, k, NeighborRule::Union).unwrap();

        // exhaustive distance-sort oracle
        let mut expect = std::collections::BTreeSet::new();
        for i in 0..20 {
            let mut ds: Vec<(f64, usize)> = (0..20)
                .filter(|&j| j != i)
                .map(|j| (y.row_sq_dist(i, j), j))
                .collect();
            ds.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for &(_, j) in ds.iter().take(k) {
                expect.insert((i.min(j), i.max(j)));
            }
        }
        let got: std::collections::BTreeSet<_> = g.edges.keys().copied().collect();
        assert_eq!(got, expect);

        // per-edge distances recomputed independently
        for (&(i, j), &d) in &g.edges {
            let mut acc = 0.0;
            for c in 0..3 {
                let diff = y.values[(i, c)] - y.values[(j, c)];
                acc += diff * diff;
            }
            assert!((d - acc).abs() <= 1e-10 * acc.max(1.0));
        }
    }

    #[test]
    fn union_contains_mutual() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let raw = DMatrix::from_fn(15, 2, |_, _| rng.gen_range(-1.0..1.0));
        let y = center_scale_responses(&raw, 2, 1).unwrap();
        let union = build_knn_graph(&y, 3, NeighborRule::Union).unwrap();
        let mutual = build_knn_graph(&y, 3, NeighborRule::Mutual).unwrap();
        for e in mutual.edges.keys() {
            assert!(union.edges.contains_key(e));
        }
        // every node has degree >= 1 under union
        let mut deg = vec![0; 15];
        for &(i, j) in union.edges.keys() {
            deg[i] += 1;
            deg[j] += 1;
        }
        assert!(deg.iter().all(|&d| d >= 1));
    }

    #[test]
    fn components_trivial_cases() {
        let y = resp(DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 3.0]));
        let g = build_knn_graph(&y, 1, NeighborRule::Union).unwrap();
        assert_eq!(connected_components(&g), vec![vec![0, 1, 2]]);

        let empty = NeighborGraph {
            edges: BTreeMap::new(),
            k: 1,
            rule: NeighborRule::Union,
            n: 2,
            duplicate_rows: vec![],
        };
        assert_eq!(connected_components(&empty), vec![vec![0], vec![1]]);
    }

    #[test]
    fn components_match_union_find_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let n = 30;
        let mut edges = BTreeMap::new();
        for _ in 0..25 {
            let i = rng.gen_range(0..n);
            let j = rng.gen_range(0..n);
            if i != j {
                edges.insert((i.min(j), i.max(j)), 1.0);
            }
        }
        let g = NeighborGraph {
            edges: edges.clone(),
            k: 1,
            rule: NeighborRule::Union,
            n,
            duplicate_rows: vec![],
        };

        // union-find oracle
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut Vec<usize>, x: usize) -> usize {
            if p[x] != x {
                let r = find(p, p[x]);
                p[x] = r;
            }
            p[x]
        }
        for &(i, j) in edges.keys() {
            let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
            parent[ri] = rj;
        }
        let mut expect: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for v in 0..n {
            let r = find(&mut parent, v);
            expect.entry(r).or_default().push(v);
        }
        let mut expected: Vec<Vec<usize>> = expect.into_values().collect();
        expected.sort();
        let mut got = connected_components(&g);
        got.sort();
        assert_eq!(got, expected);
    }

    #[test]
    fn permutation_invariance() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let raw = DMatrix::from_fn(12, 2, |_, _| rng.gen_range(-1.0..1.0));
        let y = center_scale_responses(&raw, 2, 1).unwrap();
        let g = build_knn_graph(&y, 3, NeighborRule::Union).unwrap();

        // reverse the row order and relabel
        let perm: Vec<usize> = (0..12).rev().collect();
        let permuted = DMatrix::from_fn(12, 2, |i, j| raw[(perm[i], j)]);
        let yp = center_scale_responses(&permuted, 2, 1).unwrap();
        let gp = build_knn_graph(&yp, 3, NeighborRule::Union).unwrap();

        let relabeled: std::collections::BTreeSet<(usize, usize)> = g
            .edges
            .keys()
            .map(|&(i, j)| {
                let (a, b) = (11 - i, 11 - j);
                (a.min(b), a.max(b))
            })
            .collect();
        let got: std::collections::BTreeSet<_> = gp.edges.keys().copied().collect();
        assert_eq!(got, relabeled);
    }
}
