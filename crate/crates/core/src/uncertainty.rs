//! Posterior summaries over an ensemble of clusterings.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assignment::min_cost_assignment;
use crate::error::{contract, input, Result};
use crate::levelset::Labeling;

/// Integer co-clustering counts. Workers may accumulate disjoint subsets of
/// labelings and [`merge`](Self::merge) them; the result does not depend on
/// how the work was split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoClusterCounts {
    n: usize,
    t: usize,
    counts: Vec<u32>,
}

impl CoClusterCounts {
    pub fn new(n: usize) -> Self {
        CoClusterCounts {
            n,
            t: 0,
            counts: vec![0; n * n],
        }
    }

    pub fn add(&mut self, labeling: &Labeling) -> Result<()> {
        if labeling.len() != self.n {
            return Err(input(format!(
                "labeling has {} points, expected {}",
                labeling.len(),
                self.n
            )));
        }
        let l = &labeling.labels;
        self.counts
            .par_chunks_mut(self.n.max(1))
            .enumerate()
            .for_each(|(i, row)| {
                let li = l[i];
                for (c, &lj) in row.iter_mut().zip(l) {
                    *c += (li == lj) as u32;
                }
            });
        self.t += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &CoClusterCounts) -> Result<()> {
        if other.n != self.n {
            return Err(input("cannot merge counts over different point sets"));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.t += other.t;
        Ok(())
    }

    pub fn finish(&self) -> Result<CoClusterMatrix> {
        if self.t == 0 {
            return Err(input("no labelings accumulated"));
        }
        let t = self.t as f64;
        Ok(CoClusterMatrix {
            n: self.n,
            t: self.t,
            values: self.counts.iter().map(|&c| c as f64 / t).collect(),
        })
    }
}

/// `M(i, j)`: fraction of resamples placing `i` and `j` in the same cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct CoClusterMatrix {
    pub n: usize,
    pub t: usize,
    /// Row-major `n × n`.
    pub values: Vec<f64>,
}

impl CoClusterMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }
}

pub fn coclustering_matrix(labelings: &[Labeling]) -> Result<CoClusterMatrix> {
    let first = labelings.first().ok_or_else(|| input("no labelings"))?;
    let mut counts = CoClusterCounts::new(first.len());
    for l in labelings {
        counts.add(l)?;
    }
    counts.finish()
}

/// `S(i) = n⁻¹ Σ_j (M(i,j) − ½)²`, summing over every `j` including `i`.
pub fn certainty_scores(m: &CoClusterMatrix) -> Vec<f64> {
    (0..m.n)
        .into_par_iter()
        .map(|i| m.row(i).iter().map(|v| (v - 0.5) * (v - 0.5)).sum::<f64>() / m.n as f64)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterCountPosterior {
    pub resamples: usize,
    pub counts: BTreeMap<usize, usize>,
    pub frequencies: BTreeMap<usize, f64>,
}

impl ClusterCountPosterior {
    pub fn mode(&self) -> Option<usize> {
        // smallest k among ties
        self.counts
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
            .map(|(&k, _)| k)
    }

    pub fn mass_at(&self, k: usize) -> f64 {
        self.frequencies.get(&k).copied().unwrap_or(0.0)
    }
}

pub fn cluster_count_posterior(labelings: &[Labeling]) -> Result<ClusterCountPosterior> {
    cluster_count_posterior_from_counts(labelings.iter().map(|l| l.k))
}

pub fn cluster_count_posterior_from_counts<I: IntoIterator<Item = usize>>(ks: I) -> Result<ClusterCountPosterior> {
    let mut counts = BTreeMap::new();
    let mut t = 0;
    for k in ks {
        *counts.entry(k).or_insert(0) += 1;
        t += 1;
    }
    if t == 0 {
        return Err(input("no labelings"));
    }
    let frequencies = counts.iter().map(|(&k, &c)| (k, c as f64 / t as f64)).collect();
    Ok(ClusterCountPosterior {
        resamples: t,
        counts,
        frequencies,
    })
}

/// A family of disjoint clusters over a ground set of `n_elements` items,
/// each item carrying measure `unit` (1 for points, cell volume for grids).
/// Items outside every cluster are allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterFamily {
    pub labels: Vec<Option<u32>>,
    pub k: usize,
    pub unit: f64,
}

impl ClusterFamily {
    pub fn from_labeling(l: &Labeling) -> Self {
        ClusterFamily {
            labels: l.labels.iter().map(|&v| Some(v)).collect(),
            k: l.k,
            unit: 1.0,
        }
    }

    /// Grid clusters: `labels[node]` is the component of a node in the level
    /// set, `None` below it.
    pub fn from_partial(labels: Vec<Option<u32>>, unit: f64) -> Result<Self> {
        if !(unit > 0.0 && unit.is_finite()) {
            return Err(contract("element measure must be positive"));
        }
        let k = labels.iter().flatten().map(|&v| v as usize + 1).max().unwrap_or(0);
        Ok(ClusterFamily { labels, k, unit })
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &l in self.labels.iter().flatten() {
            s[l as usize] += 1;
        }
        s
    }
}

/// Optimal-matching symmetric-difference discrepancy between two cluster
/// families. With `pad`, the smaller family is extended by empty clusters.
pub fn clustering_distance(a: &ClusterFamily, b: &ClusterFamily, pad: bool) -> Result<f64> {
    if a.labels.len() != b.labels.len() {
        return Err(input("cluster families cover different ground sets"));
    }
    if a.unit != b.unit {
        return Err(input("cluster families use different measures"));
    }
    if a.k != b.k && !pad {
        return Err(input(format!("cluster counts differ ({} vs {}) and padding is off", a.k, b.k)));
    }
    let k = a.k.max(b.k);
    let mut inter = vec![0usize; k * k];
    for (la, lb) in a.labels.iter().zip(&b.labels) {
        if let (Some(i), Some(j)) = (la, lb) {
            inter[*i as usize * k + *j as usize] += 1;
        }
    }
    let (mut sa, mut sb) = (a.sizes(), b.sizes());
    sa.resize(k, 0);
    sb.resize(k, 0);
    let cost: Vec<f64> = (0..k * k)
        .map(|ij| {
            let (i, j) = (ij / k, ij % k);
            (sa[i] + sb[j] - 2 * inter[ij]) as f64
        })
        .collect();
    let (c, _) = min_cost_assignment(&cost, k)?;
    Ok(c * a.unit)
}
