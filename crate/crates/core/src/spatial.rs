//! Exact k-d tree over a subset of a [`PointSet`].
//!
//! All queries are exact. Distance ties are resolved toward the smaller
//! point index, so results match a linear scan that keeps the first minimum.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::points::{sq_dist, PointSet};

const LEAF_SIZE: usize = 16;

enum Node {
    Leaf { start: usize, end: usize },
    Split { dim: usize, value: f64, left: usize, right: usize },
}

pub struct KdTree<'a> {
    points: &'a PointSet,
    idx: Vec<usize>,
    nodes: Vec<Node>,
}

#[derive(Clone, Copy, PartialEq)]
struct Cand {
    d2: f64,
    idx: usize,
}

impl Eq for Cand {}

impl Ord for Cand {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d2
            .total_cmp(&other.d2)
            .then(self.idx.cmp(&other.idx))
    }
}

impl PartialOrd for Cand {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<'a> KdTree<'a> {
    /// Tree over every point.
    pub fn new(points: &'a PointSet) -> Self {
        Self::over(points, (0..points.len()).collect())
    }

    /// Tree over the given point indices only.
    pub fn over(points: &'a PointSet, mut idx: Vec<usize>) -> Self {
        let mut nodes = Vec::new();
        if !idx.is_empty() {
            let n = idx.len();
            build(points, &mut idx, 0, n, &mut nodes);
        }
        Self { points, idx, nodes }
    }

    pub fn len(&self) -> usize {
        self.idx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.idx.is_empty()
    }

    /// Nearest indexed point to `q`, as `(squared distance, index)`.
    pub fn nearest(&self, q: &[f64]) -> Option<(f64, usize)> {
        self.k_nearest(q, 1, None).into_iter().next()
    }

    /// The `k` nearest indexed points, ascending by `(distance, index)`,
    /// optionally skipping one index (the query point itself).
    pub fn k_nearest(&self, q: &[f64], k: usize, exclude: Option<usize>) -> Vec<(f64, usize)> {
        if self.nodes.is_empty() || k == 0 {
            return Vec::new();
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.knn_rec(0, q, k, exclude, &mut heap);
        let mut out: Vec<Cand> = heap.into_vec();
        out.sort();
        out.into_iter().map(|c| (c.d2, c.idx)).collect()
    }

    fn knn_rec(&self, node: usize, q: &[f64], k: usize, exclude: Option<usize>, heap: &mut BinaryHeap<Cand>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.idx[start..end] {
                    if Some(i) == exclude {
                        continue;
                    }
                    let c = Cand {
                        d2: sq_dist(q, self.points.row(i)),
                        idx: i,
                    };
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().unwrap() {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
            Node::Split { dim, value, left, right } => {
                let diff = q[dim] - value;
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.knn_rec(near, q, k, exclude, heap);
                if heap.len() < k || diff * diff <= heap.peek().unwrap().d2 {
                    self.knn_rec(far, q, k, exclude, heap);
                }
            }
        }
    }

    /// Every indexed point with `‖p − q‖² ≤ r²`, in unspecified order.
    pub fn within(&self, q: &[f64], r: f64, out: &mut Vec<usize>) {
        out.clear();
        if self.nodes.is_empty() {
            return;
        }
        self.within_rec(0, q, r * r, out);
    }

    fn within_rec(&self, node: usize, q: &[f64], r2: f64, out: &mut Vec<usize>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.idx[start..end] {
                    if sq_dist(q, self.points.row(i)) <= r2 {
                        out.push(i);
                    }
                }
            }
            Node::Split { dim, value, left, right } => {
                let diff = q[dim] - value;
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.within_rec(near, q, r2, out);
                if diff * diff <= r2 {
                    self.within_rec(far, q, r2, out);
                }
            }
        }
    }
}

fn build(points: &PointSet, idx: &mut [usize], start: usize, end: usize, nodes: &mut Vec<Node>) -> usize {
    let id = nodes.len();
    let slice = &mut idx[start..end];
    if slice.len() <= LEAF_SIZE {
        nodes.push(Node::Leaf { start, end });
        return id;
    }
    let p = points.dim();
    let mut best = (0, -1.0);
    for d in 0..p {
        let (lo, hi) = slice.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
            let v = points.row(i)[d];
            (lo.min(v), hi.max(v))
        });
        if hi - lo > best.1 {
            best = (d, hi - lo);
        }
    }
    let dim = best.0;
    if best.1 <= 0.0 {
        // all coincident
        nodes.push(Node::Leaf { start, end });
        return id;
    }
    let mid = slice.len() / 2;
    slice.select_nth_unstable_by(mid, |&a, &b| points.row(a)[dim].total_cmp(&points.row(b)[dim]));
    let value = points.row(slice[mid])[dim];
    // left holds coordinates ≤ value, right ≥ value
    nodes.push(Node::Leaf { start: 0, end: 0 });
    let left = build(points, idx, start, start + mid, nodes);
    let right = build(points, idx, start + mid, end, nodes);
    nodes[id] = Node::Split { dim, value, left, right };
    id
}
