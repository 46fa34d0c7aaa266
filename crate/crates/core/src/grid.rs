//! Densities tabulated on regular 1D/2D grids, and the geometric quantities
//! computed from them: sup and Hellinger distances, margin measure, saddle
//! heights and upper-level-set components.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{contract, input, Result};
use crate::model::{ModelHandle, ParamVector};
use crate::unionfind::UnionFind;

/// Axis-aligned box and node counts. Nodes sit on both ends of every axis;
/// the last axis varies fastest in the flat node index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub resolution: Vec<usize>,
}

impl GridSpec {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, resolution: Vec<usize>) -> Result<Self> {
        let g = GridSpec { lo, hi, resolution };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.lo.len();
        if !(1..=2).contains(&p) || self.hi.len() != p || self.resolution.len() != p {
            return Err(contract("grids must be 1D or 2D with matching box and resolution"));
        }
        for i in 0..p {
            if !(self.lo[i].is_finite() && self.hi[i].is_finite() && self.lo[i] < self.hi[i]) {
                return Err(contract(format!("invalid box on axis {i}")));
            }
            if self.resolution[i] < 2 {
                return Err(contract("resolution must be at least 2 per axis"));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.resolution.iter().product()
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        (self.hi[axis] - self.lo[axis]) / (self.resolution[axis] - 1) as f64
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim()).map(|a| self.spacing(a)).product()
    }

    pub fn node(&self, idx: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.node_into(idx, &mut out);
        out
    }

    fn node_into(&self, idx: usize, out: &mut [f64]) {
        let mut rest = idx;
        for a in (0..self.dim()).rev() {
            let i = rest % self.resolution[a];
            rest /= self.resolution[a];
            out[a] = self.lo[a] + i as f64 * self.spacing(a);
        }
    }

    /// Grid neighbours: 2 along a line, 4 in the plane.
    pub fn neighbors(&self, idx: usize, out: &mut Vec<usize>) {
        out.clear();
        let mut stride = 1;
        for a in (0..self.dim()).rev() {
            let r = self.resolution[a];
            let i = (idx / stride) % r;
            if i > 0 {
                out.push(idx - stride);
            }
            if i + 1 < r {
                out.push(idx + stride);
            }
            stride *= r;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridDensity {
    #[serde(flatten)]
    pub spec: GridSpec,
    pub values: Vec<f64>,
}

impl GridDensity {
    pub fn new(spec: GridSpec, values: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if values.len() != spec.n_nodes() {
            return Err(contract("value count does not match the grid"));
        }
        if values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(input("grid values must be finite and non-negative"));
        }
        Ok(GridDensity { spec, values })
    }

    pub fn from_fn<F: Fn(&[f64]) -> f64 + Sync>(spec: GridSpec, f: F) -> Result<Self> {
        spec.validate()?;
        let values = (0..spec.n_nodes())
            .into_par_iter()
            .map(|i| f(&spec.node(i)))
            .collect();
        Self::new(spec, values)
    }

    pub fn cell_volume(&self) -> f64 {
        self.spec.cell_volume()
    }

    /// Node-sum quadrature of the total mass.
    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_volume()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// `f_θ` evaluated at every node.
pub fn grid_density(model: &ModelHandle, theta: &ParamVector, spec: &GridSpec) -> Result<GridDensity> {
    spec.validate()?;
    if model.dim() != spec.dim() {
        return Err(contract(format!(
            "model dimension {} does not match {}D grid",
            model.dim(),
            spec.dim()
        )));
    }
    let bound = model.bind(theta)?;
    let values = (0..spec.n_nodes())
        .into_par_iter()
        .map_init(
            || vec![0.0; spec.dim()],
            |x, i| {
                spec.node_into(i, x);
                bound.log_density(x).exp()
            },
        )
        .collect();
    GridDensity::new(spec.clone(), values)
}

fn same_grid(a: &GridDensity, b: &GridDensity) -> Result<()> {
    if a.spec != b.spec {
        return Err(input("densities are tabulated on different grids"));
    }
    Ok(())
}

pub fn sup_distance(a: &GridDensity, b: &GridDensity) -> Result<f64> {
    same_grid(a, b)?;
    Ok(a.values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max))
}

/// `sqrt(½ Σ (√a − √b)² · cell volume)`.
pub fn hellinger_distance(a: &GridDensity, b: &GridDensity) -> Result<f64> {
    same_grid(a, b)?;
    let s: f64 = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| (x.sqrt() - y.sqrt()).powi(2))
        .sum();
    Ok((0.5 * s * a.cell_volume()).sqrt())
}

/// Measure of `{x : |g(x) − c| ≤ eps}` by node counting.
pub fn margin_measure(g: &GridDensity, c: f64, eps: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(contract("eps must be positive"));
    }
    let count = g.values.iter().filter(|v| (*v - c).abs() <= eps).count();
    Ok(count as f64 * g.cell_volume())
}

/// Nodes in decreasing value, ties toward the smaller index.
fn descending(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order
}

/// Highest level at which some grid path joins `a` to `b`: the largest
/// achievable minimum of `g` along a path.
pub fn saddle_height(g: &GridDensity, a: &[usize], b: &[usize]) -> Result<f64> {
    let n = g.values.len();
    if a.is_empty() || b.is_empty() {
        return Err(contract("node sets must be non-empty"));
    }
    if a.iter().chain(b).any(|&i| i >= n) {
        return Err(contract("node index out of range"));
    }
    let mut side = vec![0u8; n];
    for &i in a {
        side[i] |= 1;
    }
    for &i in b {
        side[i] |= 2;
    }
    if side.contains(&3) {
        return Err(input("node sets overlap"));
    }
    let mut uf = UnionFind::new(n);
    let mut active = vec![false; n];
    let mut nbrs = Vec::with_capacity(4);
    for v in descending(&g.values) {
        active[v] = true;
        g.spec.neighbors(v, &mut nbrs);
        let mut root = uf.find(v);
        for &u in &nbrs {
            if active[u] {
                let ru = uf.find(u);
                if ru != root {
                    let merged = side[ru] | side[root];
                    root = uf.union(ru, root);
                    side[root] = merged;
                }
            }
        }
        if side[root] == 3 {
            return Ok(g.values[v]);
        }
    }
    // the full grid is connected, so the sweep always meets both sets
    unreachable!("grid graph is connected")
}

/// Connected components of `{g ≥ c}` under grid adjacency. Labels are
/// numbered by first node; nodes below `c` get `None`.
pub fn level_set_components(g: &GridDensity, c: f64) -> (usize, Vec<Option<u32>>) {
    let n = g.values.len();
    let mut uf = UnionFind::new(n);
    let mut nbrs = Vec::with_capacity(4);
    for v in 0..n {
        if g.values[v] >= c {
            g.spec.neighbors(v, &mut nbrs);
            for &u in &nbrs {
                if u < v && g.values[u] >= c {
                    uf.union(u, v);
                }
            }
        }
    }
    let mut remap = vec![u32::MAX; n];
    let mut k = 0u32;
    let labels = (0..n)
        .map(|v| {
            if g.values[v] < c {
                return None;
            }
            let r = uf.find(v);
            if remap[r] == u32::MAX {
                remap[r] = k;
                k += 1;
            }
            Some(remap[r])
        })
        .collect();
    (k as usize, labels)
}
