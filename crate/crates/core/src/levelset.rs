//! Upper-level-set clustering on data points.
//!
//! Points whose log-density exceeds `tau` are core points. Core points are
//! joined whenever they lie within distance `r`, and the connected
//! components with at least `m` members become clusters. Core points in
//! smaller components and all non-core points then take the label of their
//! nearest clustered point, so every point ends up labelled.

use serde::{Deserialize, Serialize};

use crate::error::{contract, input, Flagged, Result, Warning};
use crate::points::PointSet;
use crate::spatial::KdTree;
use crate::unionfind::UnionFind;

/// Cluster assignment of every point, with labels `0..k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Labeling {
    pub labels: Vec<u32>,
    pub k: usize,
}

impl Labeling {
    /// Relabels arbitrary ids to `0..k` in order of first occurrence.
    pub fn from_raw<T: Copy + Eq + std::hash::Hash>(raw: &[T]) -> Self {
        let mut map = std::collections::HashMap::new();
        let labels = raw
            .iter()
            .map(|r| {
                let next = map.len() as u32;
                *map.entry(*r).or_insert(next)
            })
            .collect();
        Self { labels, k: map.len() }
    }

    /// Checks labels are contiguous from 0.
    pub fn new(labels: Vec<u32>) -> Result<Self> {
        let k = labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0);
        let mut seen = vec![false; k];
        for &l in &labels {
            seen[l as usize] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(input("labels are not contiguous from 0"));
        }
        Ok(Self { labels, k })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &l in &self.labels {
            s[l as usize] += 1;
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LevelSetParams {
    /// Log-density threshold; points strictly above it are core points.
    #[serde(with = "extended_f64")]
    pub tau: f64,
    /// Neighbourhood radius.
    pub r: f64,
    /// Minimum cluster size.
    pub m: usize,
    /// Percentile of training log-densities used to derive `tau`.
    pub tau_percentile: f64,
    /// Neighbour order for the adaptive radius.
    pub r_kth: usize,
    pub r_factor: f64,
}

/// JSON has no infinities; they travel as the strings `"-inf"` / `"inf"`.
mod extended_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        match *v {
            f64::NEG_INFINITY => s.serialize_str("-inf"),
            f64::INFINITY => s.serialize_str("inf"),
            v => s.serialize_f64(v),
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) => match s.as_str() {
                "-inf" => Ok(f64::NEG_INFINITY),
                "inf" => Ok(f64::INFINITY),
                other => other.parse().map_err(serde::de::Error::custom),
            },
        }
    }
}

impl Default for LevelSetParams {
    fn default() -> Self {
        Self {
            tau: f64::NEG_INFINITY,
            r: 0.0,
            m: 100,
            tau_percentile: 10.0,
            r_kth: 10,
            r_factor: 1.2,
        }
    }
}

impl LevelSetParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.r > 0.0) || !self.r.is_finite() {
            return Err(contract("radius must be positive and finite"));
        }
        if self.m == 0 {
            return Err(contract("minimum cluster size must be at least 1"));
        }
        if !(0.0..=100.0).contains(&self.tau_percentile) {
            return Err(contract("percentile must lie in [0, 100]"));
        }
        if self.tau.is_nan() {
            return Err(contract("threshold is NaN"));
        }
        Ok(())
    }

    /// Fills `tau` and `r` from training data under the trained density:
    /// `tau` is the `tau_percentile` nearest-rank percentile of `logdens` and
    /// `r` is `r_factor` times the mean `r_kth`-nearest-neighbour distance
    /// among points above `tau`.
    pub fn calibrate(mut self, points: &PointSet, logdens: &[f64]) -> Result<Flagged<Self>> {
        if points.len() != logdens.len() {
            return Err(contract("points and log-densities differ in length"));
        }
        self.tau = threshold_from_percentile(logdens, self.tau_percentile)?;
        let above: Vec<usize> = (0..points.len()).filter(|&i| logdens[i] > self.tau).collect();
        let radius = adaptive_radius(&points.select(&above), self.r_kth, self.r_factor)?;
        self.r = radius.value;
        Ok(Flagged {
            value: self,
            warnings: radius.warnings,
        })
    }
}

/// Nearest-rank percentile: the `⌈q·n/100⌉`-th smallest value (`q = 0`
/// gives the minimum).
pub fn threshold_from_percentile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(input("percentile of an empty vector"));
    }
    if !(0.0..=100.0).contains(&q) {
        return Err(contract("percentile must lie in [0, 100]"));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(input("NaN log-density"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let exact = q * n as f64 / 100.0;
    let rank = if (exact - exact.round()).abs() < 1e-9 {
        exact.round() as usize
    } else {
        exact.ceil() as usize
    };
    Ok(sorted[rank.clamp(1, n) - 1])
}

/// `factor` × mean distance from each point to its `kth` nearest other point.
pub fn adaptive_radius(points: &PointSet, kth: usize, factor: f64) -> Result<Flagged<f64>> {
    let n = points.len();
    if kth == 0 {
        return Err(contract("neighbour order must be at least 1"));
    }
    if n <= kth {
        return Err(input(format!("{n} points cannot have a {kth}-th neighbour")));
    }
    let tree = KdTree::new(points);
    let total: f64 = (0..n)
        .map(|i| {
            let nn = tree.k_nearest(points.row(i), kth, Some(i));
            nn[kth - 1].0.sqrt()
        })
        .sum();
    let mean = total / n as f64;
    let mut out = Flagged::clean(factor * mean);
    if mean == 0.0 {
        out.warnings.push(Warning::DegenerateRadius);
    }
    Ok(out)
}

/// Connected components of the graph joining points at distance `≤ r`.
pub fn radius_components(points: &PointSet, r: f64) -> Labeling {
    let idx: Vec<usize> = (0..points.len()).collect();
    let (mut uf, _) = components_over(points, &idx, r);
    let (labels, k) = uf.labels();
    Labeling { labels, k }
}

fn components_over<'a>(points: &'a PointSet, idx: &[usize], r: f64) -> (UnionFind, KdTree<'a>) {
    let mut uf = UnionFind::new(points.len());
    let tree = KdTree::over(points, idx.to_vec());
    let mut buf = Vec::new();
    for &i in idx {
        tree.within(points.row(i), r, &mut buf);
        for &j in &buf {
            if j > i {
                uf.union(i, j);
            }
        }
    }
    (uf, tree)
}

/// Clusters points from their log-densities under one density.
pub fn cluster_upper_level(points: &PointSet, logdens: &[f64], params: &LevelSetParams) -> Result<Flagged<Labeling>> {
    let n = points.len();
    if logdens.len() != n {
        return Err(contract("points and log-densities differ in length"));
    }
    params.validate()?;
    if logdens.iter().any(|v| v.is_nan()) {
        return Err(input("NaN log-density"));
    }
    if n == 0 {
        return Ok(Flagged::clean(Labeling { labels: vec![], k: 0 }));
    }

    let core: Vec<usize> = (0..n).filter(|&i| logdens[i] > params.tau).collect();
    if core.is_empty() {
        return Ok(Flagged {
            value: Labeling { labels: vec![0; n], k: 1 },
            warnings: vec![Warning::NoCorePoints],
        });
    }

    let (mut uf, core_tree) = components_over(points, &core, params.r);
    let mut size = vec![0usize; n];
    for &i in &core {
        let root = uf.find(i);
        size[root] += 1;
    }
    let mut warnings = Vec::new();
    let mut large: Vec<usize> = core
        .iter()
        .copied()
        .filter(|&i| size[uf.find(i)] >= params.m)
        .collect();
    if large.is_empty() {
        // the component reached first among the largest is the anchor
        let mut best = core[0];
        for &i in &core {
            if size[uf.find(i)] > size[uf.find(best)] {
                best = i;
            }
        }
        let anchor = uf.find(best);
        warnings.push(Warning::NoLargeComponent { largest: size[anchor] });
        large = core.iter().copied().filter(|&i| uf.find(i) == anchor).collect();
    }

    const UNSET: usize = usize::MAX;
    let mut label = vec![UNSET; n];
    let mut is_large = vec![false; n];
    for &i in &large {
        label[i] = uf.find(i);
        is_large[i] = true;
    }

    let large_tree = KdTree::over(points, large);
    for &i in &core {
        if !is_large[i] {
            let (_, j) = large_tree.nearest(points.row(i)).expect("anchor set is non-empty");
            label[i] = label[j];
        }
    }
    for i in 0..n {
        if label[i] == UNSET {
            let (_, j) = core_tree.nearest(points.row(i)).expect("core set is non-empty");
            label[i] = label[j];
        }
    }

    Ok(Flagged {
        value: Labeling::from_raw(&label),
        warnings,
    })
}
