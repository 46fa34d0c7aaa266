//! Synthetic datasets, standardisation and dataset files.
//!
//! A dataset file is a CSV with header `x1,…,xp` and an optional trailing
//! `label` column. Provenance goes to a JSON sidecar next to it
//! (`foo.csv` → `foo.provenance.json`).

use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{contract, input, Result};
use crate::model::{GmmSpec, ModelHandle, ParamVector};
use crate::points::PointSet;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub generator: String,
    pub params: serde_json::Value,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub points: PointSet,
    pub labels: Option<Vec<u32>>,
    pub provenance: Option<Provenance>,
}

impl Dataset {
    pub fn new(points: PointSet, labels: Option<Vec<u32>>) -> Result<Self> {
        if !points.all_finite() {
            return Err(input("dataset contains non-finite values"));
        }
        if let Some(l) = &labels {
            if l.len() != points.len() {
                return Err(input("label count does not match point count"));
            }
        }
        Ok(Dataset {
            points,
            labels,
            provenance: None,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CirclesParams {
    pub n: usize,
    pub noise_sd: f64,
    /// Inner radius; the outer radius is 1.
    pub factor: f64,
    pub outer_fraction: f64,
}

impl Default for CirclesParams {
    fn default() -> Self {
        CirclesParams {
            n: 5000,
            noise_sd: 0.15,
            factor: 0.25,
            outer_fraction: 0.8,
        }
    }
}

/// Two noisy concentric circles. The first `⌊outer_fraction·n⌋` points lie
/// on the outer ring (label 0), the rest on the inner ring (label 1).
pub fn gen_circles(params: &CirclesParams, seed: u64) -> Result<Dataset> {
    let CirclesParams {
        n,
        noise_sd,
        factor,
        outer_fraction,
    } = *params;
    if n < 2 {
        return Err(contract("need at least 2 points"));
    }
    if !(factor > 0.0 && factor < 1.0) || !(outer_fraction > 0.0 && outer_fraction < 1.0) {
        return Err(contract("factor and outer_fraction must lie in (0, 1)"));
    }
    if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
        return Err(contract("noise_sd must be non-negative"));
    }
    let n_outer = (outer_fraction * n as f64).floor() as usize;
    let mut rng = rng::stream(rng::derive_seed(seed, "circles"), 0);
    let mut points = PointSet::with_capacity(2, n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let (radius, label) = if i < n_outer { (1.0, 0) } else { (factor, 1) };
        let angle = rng.random::<f64>() * std::f64::consts::TAU;
        let ex: f64 = rng.sample(StandardNormal);
        let ey: f64 = rng.sample(StandardNormal);
        points.push(&[
            radius * angle.cos() + noise_sd * ex,
            radius * angle.sin() + noise_sd * ey,
        ]);
        labels.push(label);
    }
    let mut ds = Dataset::new(points, Some(labels))?;
    ds.provenance = Some(Provenance {
        generator: "circles".into(),
        params: serde_json::to_value(params)?,
        seed,
    });
    Ok(ds)
}

/// `n` draws from a Gaussian mixture, labelled by component.
pub fn gen_gmm(spec: &GmmSpec, theta: &ParamVector, n: usize, seed: u64) -> Result<Dataset> {
    let model = ModelHandle::Gmm(*spec);
    model.bind(theta)?;
    let params = spec.decode(theta);
    let mut rng = rng::stream(rng::derive_seed(seed, "gmm-data"), 0);
    let mut points = PointSet::with_capacity(spec.dim, n);
    let mut labels = Vec::with_capacity(n);
    let mut x = vec![0.0; spec.dim];
    for _ in 0..n {
        labels.push(params.sample_labeled(&mut rng, &mut x) as u32);
        points.push(&x);
    }
    let mut ds = Dataset::new(points, Some(labels))?;
    ds.provenance = Some(Provenance {
        generator: "gmm".into(),
        params: serde_json::json!({ "spec": spec, "theta": theta, "n": n }),
        seed,
    });
    Ok(ds)
}

/// Per-column affine map `x ↦ (x − mean) / sd`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Standardizer {
    /// Column means and population standard deviations.
    pub fn fit(points: &PointSet) -> Result<Self> {
        let (n, p) = (points.len(), points.dim());
        if n < 2 {
            return Err(input("standardisation needs at least 2 points"));
        }
        let mut mean = vec![0.0; p];
        for r in points.rows() {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; p];
        for r in points.rows() {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let sd: Vec<f64> = var.iter().map(|s| (s / n as f64).sqrt()).collect();
        if let Some(j) = sd.iter().position(|&s| !(s > 0.0)) {
            return Err(input(format!("column {} has zero variance", j + 1)));
        }
        Ok(Standardizer { mean, sd })
    }

    pub fn apply(&self, points: &PointSet) -> PointSet {
        self.map(points, |v, m, s| (v - m) / s)
    }

    pub fn invert(&self, points: &PointSet) -> PointSet {
        self.map(points, |v, m, s| v * s + m)
    }

    fn map(&self, points: &PointSet, f: impl Fn(f64, f64, f64) -> f64) -> PointSet {
        let mut out = points.clone();
        for i in 0..out.len() {
            for (j, v) in out.row_mut(i).iter_mut().enumerate() {
                *v = f(*v, self.mean[j], self.sd[j]);
            }
        }
        out
    }
}

pub fn standardize(data: &Dataset) -> Result<(Dataset, Standardizer)> {
    let t = Standardizer::fit(&data.points)?;
    let out = Dataset {
        points: t.apply(&data.points),
        labels: data.labels.clone(),
        provenance: data.provenance.clone(),
    };
    Ok((out, t))
}

pub fn provenance_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("provenance.json")
}

pub fn write_dataset(path: &Path, data: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let p = data.points.dim();
    let mut header: Vec<String> = (1..=p).map(|j| format!("x{j}")).collect();
    if data.labels.is_some() {
        header.push("label".into());
    }
    w.write_record(&header)?;
    for (i, r) in data.points.rows().enumerate() {
        let mut rec: Vec<String> = r.iter().map(|v| v.to_string()).collect();
        if let Some(l) = &data.labels {
            rec.push(l[i].to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    if let Some(prov) = &data.provenance {
        std::fs::write(provenance_path(path), serde_json::to_string_pretty(prov)?)?;
    }
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let has_label = header.iter().next_back() == Some("label");
    let p = header.len() - has_label as usize;
    for (j, h) in header.iter().take(p).enumerate() {
        if h != format!("x{}", j + 1) {
            return Err(input(format!("unexpected column `{h}` in {}", path.display())));
        }
    }
    if p == 0 {
        return Err(input("dataset has no coordinate columns"));
    }
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| input(format!("row {}: bad {what}", line + 2));
        for v in rec.iter().take(p) {
            data.push(v.trim().parse::<f64>().map_err(|_| bad("coordinate"))?);
        }
        if has_label {
            labels.push(rec[p].trim().parse::<u32>().map_err(|_| bad("label"))?);
        }
    }
    let mut ds = Dataset::new(PointSet::new(p, data)?, has_label.then_some(labels))?;
    let side = provenance_path(path);
    if side.exists() {
        ds.provenance = Some(serde_json::from_str(&std::fs::read_to_string(side)?)?);
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn circles_split_and_radii() {
        let ds = gen_circles(&CirclesParams::default(), 3).unwrap();
        let labels = ds.labels.as_ref().unwrap();
        assert_eq!(labels.iter().filter(|&&l| l == 0).count(), 4000);
        assert_eq!(labels.iter().filter(|&&l| l == 1).count(), 1000);
        let inner: Vec<f64> = ds
            .points
            .rows()
            .zip(labels)
            .filter(|(_, &l)| l == 1)
            .map(|(r, _)| r[0].hypot(r[1]))
            .collect();
        let mean = inner.iter().sum::<f64>() / inner.len() as f64;
        // radial noise has a positive bias of about σ²/(2r); allow for it
        let bias = 0.15f64.powi(2) / (2.0 * 0.25);
        assert!((mean - 0.25 - bias).abs() < 3.0 * 0.15 / (inner.len() as f64).sqrt() + 0.01, "{mean}");

        let params = CirclesParams {
            n: 101,
            noise_sd: 0.0,
            outer_fraction: 0.3,
            ..Default::default()
        };
        let exact = gen_circles(&params, 0).unwrap();
        let l = exact.labels.as_ref().unwrap();
        assert_eq!(l.iter().filter(|&&v| v == 0).count(), 30);
        for (r, &lab) in exact.points.rows().zip(l) {
            let want = if lab == 0 { 1.0 } else { 0.25 };
            assert!((r[0].hypot(r[1]) - want).abs() < 1e-12);
        }
        assert_eq!(gen_circles(&params, 0).unwrap(), exact);
        assert!(gen_circles(&CirclesParams { factor: 1.0, ..params.clone() }, 0).is_err());
    }

    #[test]
    fn gmm_frequencies() {
        let spec = GmmSpec::new(3, 1);
        let w = [0.2, 0.5, 0.3];
        let theta = spec.encode(&w, &[-3.0, 0.0, 3.0], &[1.0, 1.0, 1.0]);
        let n = 20_000;
        let ds = gen_gmm(&spec, &theta, n, 11).unwrap();
        let labels = ds.labels.as_ref().unwrap();
        for (k, wk) in w.iter().enumerate() {
            let f = labels.iter().filter(|&&l| l == k as u32).count() as f64 / n as f64;
            assert!((f - wk).abs() < 4.0 * (wk * (1.0 - wk) / n as f64).sqrt());
        }
        assert_eq!(gen_gmm(&spec, &theta, n, 11).unwrap(), ds);
        let one = GmmSpec::new(1, 2);
        let ds1 = gen_gmm(&one, &ParamVector::zeros(one.n_params()), 50, 0).unwrap();
        assert!(ds1.labels.unwrap().iter().all(|&l| l == 0));
    }

    #[test]
    fn standardize_roundtrip() {
        let ds = gen_circles(&CirclesParams { n: 500, ..Default::default() }, 1).unwrap();
        let (z, t) = standardize(&ds).unwrap();
        let s = Standardizer::fit(&z.points).unwrap();
        for j in 0..2 {
            assert!(s.mean[j].abs() < 1e-12 && (s.sd[j] - 1.0).abs() < 1e-12);
        }
        let (zz, _) = standardize(&z).unwrap();
        let back = t.invert(&z.points);
        for i in 0..ds.len() {
            for j in 0..2 {
                assert!((zz.points.row(i)[j] - z.points.row(i)[j]).abs() < 1e-12);
                assert!((back.row(i)[j] - ds.points.row(i)[j]).abs() < 1e-10);
            }
        }
        assert_eq!(t.apply(&ds.points), z.points);
        let flat = Dataset::new(PointSet::from_rows(&[[1.0, 2.0], [1.0, 3.0]]).unwrap(), None).unwrap();
        assert!(standardize(&flat).is_err());
    }

    #[test]
    fn csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let ds = gen_circles(&CirclesParams { n: 40, ..Default::default() }, 9).unwrap();
        write_dataset(&path, &ds).unwrap();
        assert!(dir.path().join("d.provenance.json").exists());
        assert_eq!(read_dataset(&path).unwrap(), ds);
        let bare = Dataset::new(ds.points.clone(), None).unwrap();
        let p2 = dir.path().join("bare.csv");
        write_dataset(&p2, &bare).unwrap();
        assert_eq!(read_dataset(&p2).unwrap(), bare);
        std::fs::write(&p2, "x1,y\n1,2\n").unwrap();
        assert!(read_dataset(&p2).is_err());
    }
}
