//! Persistence-based mode clustering on a neighbourhood graph (ToMATo).
//!
//! Points are swept in decreasing weight. A point with no already-swept
//! neighbour founds a new peak; otherwise it joins the cluster of its
//! highest swept neighbour. When a point touches two clusters, the younger
//! one (lower peak) is merged into the older if its prominence, peak weight
//! minus the current weight, is below `tau_merge`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{contract, input, Result};
use crate::levelset::Labeling;
use crate::points::PointSet;
use crate::spatial::KdTree;
use crate::unionfind::UnionFind;

/// Directed k-nearest-neighbour lists. Each list is sorted by distance,
/// ties toward the smaller index, and never contains the point itself.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnnGraph {
    pub k: usize,
    pub adjacency: Vec<Vec<usize>>,
}

impl KnnGraph {
    pub fn len(&self) -> usize {
        self.adjacency.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adjacency.is_empty()
    }

    /// Undirected neighbour lists: `j ∈ N(i)` iff either lists the other.
    pub fn symmetrized(&self) -> Vec<Vec<usize>> {
        let mut adj = self.adjacency.clone();
        for (i, list) in self.adjacency.iter().enumerate() {
            for &j in list {
                adj[j].push(i);
            }
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        adj
    }
}

/// Exact Euclidean kNN graph, computed in parallel over query points.
pub fn knn_graph(points: &PointSet, k: usize) -> Result<KnnGraph> {
    let n = points.len();
    if k == 0 {
        return Err(contract("k must be at least 1"));
    }
    if n <= k {
        return Err(input(format!("{n} points cannot have {k} neighbours each")));
    }
    let tree = KdTree::new(points);
    let adjacency = (0..n)
        .into_par_iter()
        .map(|i| {
            tree.k_nearest(points.row(i), k, Some(i))
                .into_iter()
                .map(|(_, j)| j)
                .collect()
        })
        .collect();
    Ok(KnnGraph { k, adjacency })
}

/// `exp(logdens − max)` normalised to sum to one.
pub fn density_weights(logdens: &[f64]) -> Result<Vec<f64>> {
    if logdens.iter().any(|v| !v.is_finite()) {
        return Err(input("log-densities must be finite"));
    }
    let m = logdens.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = logdens.iter().map(|l| (l - m).exp()).collect();
    let total: f64 = w.iter().sum();
    for v in &mut w {
        *v = (*v / total).max(f64::MIN_POSITIVE);
    }
    Ok(w)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PersistencePair {
    /// Weight at the peak that dies.
    pub birth: f64,
    /// Weight at the point where it meets an older cluster.
    pub death: f64,
}

impl PersistencePair {
    pub fn prominence(&self) -> f64 {
        self.birth - self.death
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TomatoResult {
    pub labeling: Labeling,
    /// Every finite pair of the 0-dimensional diagram, in death order.
    pub diagram: Vec<PersistencePair>,
}

/// ToMATo on the symmetrised kNN graph.
pub fn tomato_cluster(graph: &KnnGraph, weights: &[f64], tau_merge: f64) -> Result<TomatoResult> {
    tomato_on_graph(&graph.symmetrized(), weights, tau_merge)
}

/// ToMATo on an arbitrary undirected graph given as neighbour lists.
pub fn tomato_on_graph(adj: &[Vec<usize>], weights: &[f64], tau_merge: f64) -> Result<TomatoResult> {
    if adj.len() != weights.len() {
        return Err(contract("graph and weights differ in length"));
    }
    if weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
        return Err(input("weights must be positive and finite"));
    }
    if tau_merge.is_nan() || tau_merge < 0.0 {
        return Err(contract("merge threshold must be non-negative"));
    }
    if adj.iter().flatten().any(|&j| j >= adj.len()) {
        return Err(contract("neighbour index out of range"));
    }
    let (labeling, _) = sweep(adj, weights, tau_merge);
    let (_, diagram) = sweep(adj, weights, f64::INFINITY);
    Ok(TomatoResult { labeling, diagram })
}

/// Sweep order: decreasing weight, ties toward the smaller index.
fn sweep_order(weights: &[f64]) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
    let mut rank = vec![0; weights.len()];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r;
    }
    (order, rank)
}

fn sweep(adj: &[Vec<usize>], w: &[f64], tau: f64) -> (Labeling, Vec<PersistencePair>) {
    let n = w.len();
    let (order, rank) = sweep_order(w);
    // roots are always the peak point of their cluster
    let mut uf = UnionFind::new(n);
    let mut pairs = Vec::new();
    for &i in &order {
        let swept = |j: &&usize| rank[**j] < rank[i];
        let Some(&g) = adj[i].iter().filter(swept).min_by_key(|&&j| rank[j]) else {
            continue;
        };
        let rg = uf.find(g);
        uf.attach(i, rg);
        for &j in adj[i].iter().filter(swept) {
            let (ri, rj) = (uf.find(i), uf.find(j));
            if ri == rj {
                continue;
            }
            let (young, old) = if rank[ri] < rank[rj] { (rj, ri) } else { (ri, rj) };
            if w[young] - w[i] < tau {
                pairs.push(PersistencePair {
                    birth: w[young],
                    death: w[i],
                });
                uf.attach(young, old);
            }
        }
    }
    let roots: Vec<usize> = (0..n).map(|i| uf.find(i)).collect();
    (Labeling::from_raw(&roots), pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path(n: usize) -> Vec<Vec<usize>> {
        (0..n)
            .map(|i| {
                let mut v = Vec::new();
                if i > 0 {
                    v.push(i - 1);
                }
                if i + 1 < n {
                    v.push(i + 1);
                }
                v
            })
            .collect()
    }

    #[test]
    fn collinear_knn_tie_goes_to_smaller_index() {
        let ps = PointSet::from_rows(&[[0.0], [1.0], [2.0]]).unwrap();
        let g = knn_graph(&ps, 1).unwrap();
        assert_eq!(g.adjacency, vec![vec![1], vec![0], vec![1]]);
    }

    #[test]
    fn full_k_gives_complete_graph() {
        let ps = PointSet::from_rows(&[[0.0, 1.0], [1.0, 0.3], [2.0, 2.0], [0.5, 0.5]]).unwrap();
        let g = knn_graph(&ps, 3).unwrap();
        for (i, list) in g.symmetrized().iter().enumerate() {
            let want: Vec<usize> = (0..4).filter(|&j| j != i).collect();
            assert_eq!(list, &want);
        }
        assert!(knn_graph(&ps, 4).is_err());
    }

    #[test]
    fn weights_normalise() {
        let w = density_weights(&[0.0, 3f64.ln()]).unwrap();
        assert!((w[0] - 0.25).abs() < 1e-15 && (w[1] - 0.75).abs() < 1e-15);
        let u = density_weights(&[2.0; 4]).unwrap();
        assert!(u.iter().all(|&v| v == 0.25));
        let a = density_weights(&[0.1, -2.0, 1.5]).unwrap();
        let b = density_weights(&[100.1, 98.0, 101.5]).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-14);
        }
        assert!(density_weights(&[0.0, -1e6]).unwrap()[1] > 0.0);
    }

    #[test]
    fn unimodal_path_is_one_cluster() {
        let w = [0.1, 0.3, 0.9, 0.6, 0.2];
        for tau in [0.0, 0.1, 10.0] {
            let out = tomato_on_graph(&path(5), &w, tau).unwrap();
            assert_eq!(out.labeling.k, 1);
        }
    }

    #[test]
    fn two_peaks_merge_below_threshold() {
        let w = [1.0, 0.5, 0.3, 0.5, 0.8];
        let merged = tomato_on_graph(&path(5), &w, 0.6).unwrap();
        assert_eq!(merged.labeling.k, 1);
        assert_eq!(merged.diagram, vec![PersistencePair { birth: 0.8, death: 0.3 }]);
        let kept = tomato_on_graph(&path(5), &w, 0.4).unwrap();
        assert_eq!(kept.labeling.k, 2);
        assert_eq!(kept.labeling.labels, vec![0, 0, 0, 1, 1]);
        assert_eq!(kept.diagram, merged.diagram);
    }

    #[test]
    fn infinite_threshold_one_cluster_per_component() {
        let mut adj = path(3);
        adj.extend(path(2).into_iter().map(|v| v.into_iter().map(|j| j + 3).collect::<Vec<_>>()));
        let w = [0.2, 0.1, 0.3, 0.5, 0.4];
        let out = tomato_on_graph(&adj, &w, f64::INFINITY).unwrap();
        assert_eq!(out.labeling.k, 2);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(tomato_on_graph(&path(2), &[0.0, 1.0], 0.1).is_err());
        assert!(tomato_on_graph(&path(2), &[1.0, 1.0], -0.1).is_err());
        assert!(tomato_on_graph(&path(2), &[1.0], 0.1).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn graph_and_weights() -> impl Strategy<Value = (Vec<Vec<usize>>, Vec<f64>)> {
            (8usize..40, 1usize..5).prop_flat_map(|(n, k)| {
                (
                    proptest::collection::vec(proptest::collection::vec(-3.0f64..3.0, 2), n),
                    proptest::collection::vec(1u32..50, n),
                    Just(k),
                )
                    .prop_map(|(rows, w, k)| {
                        let ps = PointSet::from_rows(&rows).unwrap();
                        let g = knn_graph(&ps, k).unwrap();
                        (g.symmetrized(), w.into_iter().map(|v| v as f64 / 50.0).collect())
                    })
            })
        }

        fn local_maxima(adj: &[Vec<usize>], w: &[f64]) -> usize {
            let (_, rank) = sweep_order(w);
            (0..w.len())
                .filter(|&i| adj[i].iter().all(|&j| rank[j] > rank[i]))
                .count()
        }

        fn components(adj: &[Vec<usize>]) -> usize {
            let mut uf = UnionFind::new(adj.len());
            for (i, l) in adj.iter().enumerate() {
                for &j in l {
                    uf.union(i, j);
                }
            }
            uf.labels().1
        }

        proptest! {
            #[test]
            fn count_monotone_in_tau((adj, w) in graph_and_weights()) {
                let mut prev = usize::MAX;
                for tau in [0.0, 0.05, 0.1, 0.2, 0.4, 0.8, f64::INFINITY] {
                    let k = tomato_on_graph(&adj, &w, tau).unwrap().labeling.k;
                    prop_assert!(k <= prev);
                    prev = k;
                }
            }

            #[test]
            fn extremes_match_oracles((adj, w) in graph_and_weights()) {
                let zero = tomato_on_graph(&adj, &w, 0.0).unwrap();
                prop_assert_eq!(zero.labeling.k, local_maxima(&adj, &w));
                let inf = tomato_on_graph(&adj, &w, f64::INFINITY).unwrap();
                prop_assert_eq!(inf.labeling.k, components(&adj));
                prop_assert_eq!(inf.diagram.len(), zero.labeling.k - inf.labeling.k);
                let top = w.iter().copied().fold(0.0, f64::max);
                for p in &inf.diagram {
                    prop_assert!(p.birth >= p.death && p.death > 0.0);
                    prop_assert!(p.birth <= top);
                }
            }

            #[test]
            fn relabel_invariant((adj, w) in graph_and_weights(), tau in 0.0f64..0.5) {
                let n = w.len();
                // reversing indices reverses tie-breaking, so use distinct weights
                let w: Vec<f64> = w.iter().enumerate().map(|(i, v)| v + i as f64 * 1e-9).collect();
                let perm: Vec<usize> = (0..n).rev().collect();
                let padj: Vec<Vec<usize>> = perm
                    .iter()
                    .map(|&old| adj[old].iter().map(|&j| n - 1 - j).collect())
                    .collect();
                let pw: Vec<f64> = perm.iter().map(|&old| w[old]).collect();
                let a = tomato_on_graph(&adj, &w, tau).unwrap().labeling;
                let b = tomato_on_graph(&padj, &pw, tau).unwrap().labeling;
                let back: Vec<u32> = (0..n).map(|i| b.labels[n - 1 - i]).collect();
                prop_assert_eq!(a, Labeling::from_raw(&back));
            }
        }
    }
}
