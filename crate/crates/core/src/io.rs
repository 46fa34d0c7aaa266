//! Artifact files.
//!
//! Matrices are raw little-endian `f64` in row-major order (`foo.bin`) with
//! a JSON header beside them (`foo.json`) giving the shape and whatever
//! metadata the writer attached. Tables are CSV with a header row; floats
//! use the shortest representation that parses back to the same value.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridDensity, GridSpec};
use crate::levelset::Labeling;
use crate::model::{ModelHandle, ParamVector};
use crate::resample::{ChainResult, ResampleConfig};
use crate::tomato::PersistencePair;
use crate::uncertainty::CoClusterMatrix;

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = BufReader::new(File::open(path)?);
    Ok(serde_json::from_reader(file)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixHeader {
    pub rows: usize,
    pub cols: usize,
    pub dtype: String,
    #[serde(default)]
    pub meta: serde_json::Value,
}

pub fn header_path(bin: &Path) -> PathBuf {
    bin.with_extension("json")
}

pub fn write_matrix(bin: &Path, rows: usize, cols: usize, values: &[f64], meta: serde_json::Value) -> Result<()> {
    if values.len() != rows * cols {
        return Err(format_err(format!("{} values for a {rows}×{cols} matrix", values.len())));
    }
    let mut w = BufWriter::new(File::create(bin)?);
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    let header = MatrixHeader {
        rows,
        cols,
        dtype: "f64le".into(),
        meta,
    };
    write_json(&header_path(bin), &header)
}

pub fn read_matrix(bin: &Path) -> Result<(MatrixHeader, Vec<f64>)> {
    let header: MatrixHeader = read_json(&header_path(bin))?;
    if header.dtype != "f64le" {
        return Err(format_err(format!("unsupported dtype `{}`", header.dtype)));
    }
    let mut bytes = Vec::new();
    BufReader::new(File::open(bin)?).read_to_end(&mut bytes)?;
    if bytes.len() != header.rows * header.cols * 8 {
        return Err(format_err(format!(
            "{} holds {} bytes, header declares {}×{}",
            bin.display(),
            bytes.len(),
            header.rows,
            header.cols
        )));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((header, values))
}

/// Header of an ensemble file: what was resampled and how.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMeta {
    pub model: ModelHandle,
    pub theta0: ParamVector,
    pub resample: ResampleConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainCounters {
    pub chain_index: usize,
    pub n_clipped: u64,
    pub n_nan_replaced: u64,
    pub displacement_sq: f64,
}

/// Writes `ensemble.bin`, `ensemble.json` and `counters.csv` into `dir`.
pub fn write_ensemble(dir: &Path, meta: &EnsembleMeta, chains: &[ChainResult]) -> Result<()> {
    let d = meta.model.n_params();
    let values: Vec<f64> = chains.iter().flat_map(|c| c.theta_final.iter().copied()).collect();
    write_matrix(&dir.join("ensemble.bin"), chains.len(), d, &values, serde_json::to_value(meta)?)?;
    let counters: Vec<ChainCounters> = chains
        .iter()
        .enumerate()
        .map(|(i, c)| ChainCounters {
            chain_index: i,
            n_clipped: c.n_clipped,
            n_nan_replaced: c.n_nan_replaced,
            displacement_sq: c.displacement_sq,
        })
        .collect();
    write_counters(&dir.join("counters.csv"), &counters)
}

pub fn read_ensemble(dir: &Path) -> Result<(EnsembleMeta, Vec<ParamVector>)> {
    let (header, values) = read_matrix(&dir.join("ensemble.bin"))?;
    let meta: EnsembleMeta = serde_json::from_value(header.meta)?;
    if header.cols != meta.model.n_params() {
        return Err(format_err("ensemble width does not match the model"));
    }
    let thetas = values
        .chunks(header.cols.max(1))
        .take(header.rows)
        .map(|c| ParamVector(c.to_vec()))
        .collect();
    Ok((meta, thetas))
}

pub fn write_counters(path: &Path, counters: &[ChainCounters]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for c in counters {
        w.serialize(c)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_counters(path: &Path) -> Result<Vec<ChainCounters>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// One row per resample; the header row is `n=<points>,T=<resamples>`.
pub fn write_labelings(path: &Path, labelings: &[Labeling]) -> Result<()> {
    let n = labelings.first().map_or(0, Labeling::len);
    if labelings.iter().any(|l| l.len() != n) {
        return Err(format_err("labelings differ in length"));
    }
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "n={n},T={}", labelings.len())?;
    let mut line = String::new();
    for l in labelings {
        line.clear();
        for (i, v) in l.labels.iter().enumerate() {
            if i > 0 {
                line.push(',');
            }
            line.push_str(&v.to_string());
        }
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_labelings(path: &Path) -> Result<Vec<Labeling>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| format_err("empty labels file"))?;
    let field = |name: &str| -> Result<usize> {
        header
            .split(',')
            .find_map(|f| f.trim().strip_prefix(name))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| format_err(format!("labels header lacks `{name}`")))
    };
    let (n, t) = (field("n=")?, field("T=")?);
    let out: Vec<Labeling> = lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let labels = l
                .split(',')
                .map(|v| v.trim().parse::<u32>().map_err(|_| format_err(format!("bad label `{v}`"))))
                .collect::<Result<Vec<_>>>()?;
            if labels.len() != n {
                return Err(format_err(format!("row has {} labels, header says {n}", labels.len())));
            }
            Labeling::new(labels)
        })
        .collect::<Result<_>>()?;
    if out.len() != t {
        return Err(format_err(format!("{} rows, header says T={t}", out.len())));
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct CertaintyRow {
    index: usize,
    score: f64,
}

pub fn write_certainty(path: &Path, scores: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for (index, &score) in scores.iter().enumerate() {
        w.serialize(CertaintyRow { index, score })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_certainty(path: &Path) -> Result<Vec<f64>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (i, row) in r.deserialize::<CertaintyRow>().enumerate() {
        let row = row?;
        if row.index != i {
            return Err(format_err(format!("certainty rows out of order at {i}")));
        }
        out.push(row.score);
    }
    Ok(out)
}

pub fn write_persistence(path: &Path, pairs: &[PersistencePair]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for p in pairs {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_persistence(path: &Path) -> Result<Vec<PersistencePair>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

pub fn write_cocluster(bin: &Path, m: &CoClusterMatrix) -> Result<()> {
    write_matrix(bin, m.n, m.n, &m.values, serde_json::json!({ "resamples": m.t }))
}

pub fn read_cocluster(bin: &Path) -> Result<CoClusterMatrix> {
    let (h, values) = read_matrix(bin)?;
    if h.rows != h.cols {
        return Err(format_err("co-clustering matrix must be square"));
    }
    let t = h.meta["resamples"]
        .as_u64()
        .ok_or_else(|| format_err("co-clustering header lacks `resamples`"))?;
    Ok(CoClusterMatrix {
        n: h.rows,
        t: t as usize,
        values,
    })
}

/// Grid nodes are stored with the last axis fastest; for 2D grids the
/// matrix shape is `resolution[0] × resolution[1]`.
pub fn write_grid(bin: &Path, g: &GridDensity) -> Result<()> {
    let (rows, cols) = match g.spec.resolution.as_slice() {
        [c] => (1, *c),
        [r, c] => (*r, *c),
        _ => return Err(format_err("only 1D and 2D grids are stored")),
    };
    write_matrix(bin, rows, cols, &g.values, serde_json::to_value(&g.spec)?)
}

pub fn read_grid(bin: &Path) -> Result<GridDensity> {
    let (h, values) = read_matrix(bin)?;
    let spec: GridSpec = serde_json::from_value(h.meta)?;
    GridDensity::new(spec, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::GmmSpec;
    use crate::resample::resample_ensemble;

    #[test]
    fn matrix_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.bin");
        let v = vec![0.1, -0.0, f64::MIN_POSITIVE, 1e300, 1.0 / 3.0, 7.0];
        write_matrix(&p, 2, 3, &v, serde_json::json!({"x": 1})).unwrap();
        assert_eq!(std::fs::metadata(&p).unwrap().len(), 48);
        let (h, back) = read_matrix(&p).unwrap();
        assert_eq!((h.rows, h.cols), (2, 3));
        assert!(back.iter().zip(&v).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(write_matrix(&p, 2, 2, &v, serde_json::Value::Null).is_err());
    }

    #[test]
    fn ensemble_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let model = ModelHandle::Gmm(GmmSpec::new(2, 1));
        let theta0 = GmmSpec::new(2, 1).encode(&[0.4, 0.6], &[-1.0, 1.0], &[1.0, 0.5]);
        let cfg = ResampleConfig {
            n: 50,
            horizon: 20,
            chains: 4,
            ..Default::default()
        };
        let chains = resample_ensemble(&model, &theta0, &cfg).unwrap();
        let meta = EnsembleMeta {
            model,
            theta0,
            resample: cfg,
        };
        write_ensemble(dir.path(), &meta, &chains).unwrap();
        let (m2, thetas) = read_ensemble(dir.path()).unwrap();
        assert_eq!(m2, meta);
        assert_eq!(thetas, chains.iter().map(|c| c.theta_final.clone()).collect::<Vec<_>>());
        let counters = read_counters(&dir.path().join("counters.csv")).unwrap();
        assert_eq!(counters.len(), 4);
        assert_eq!(counters[2].displacement_sq, chains[2].displacement_sq);
        let head = std::fs::read_to_string(dir.path().join("counters.csv")).unwrap();
        assert!(head.starts_with("chain_index,n_clipped,n_nan_replaced,displacement_sq\n"));
    }

    #[test]
    fn tables_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let ls = vec![Labeling::from_raw(&[0, 0, 1]), Labeling::from_raw(&[0, 1, 2])];
        let p = dir.path().join("labels.csv");
        write_labelings(&p, &ls).unwrap();
        assert!(std::fs::read_to_string(&p).unwrap().starts_with("n=3,T=2\n0,0,1\n"));
        assert_eq!(read_labelings(&p).unwrap(), ls);
        std::fs::write(&p, "n=3,T=2\n0,0,1\n").unwrap();
        assert!(read_labelings(&p).is_err());

        let c = dir.path().join("certainty.csv");
        let scores = vec![0.25, 0.1 + 0.2, 0.0];
        write_certainty(&c, &scores).unwrap();
        assert_eq!(read_certainty(&c).unwrap(), scores);

        let pd = dir.path().join("persistence.csv");
        let pairs = vec![PersistencePair { birth: 0.8, death: 0.3 }];
        write_persistence(&pd, &pairs).unwrap();
        assert!(std::fs::read_to_string(&pd).unwrap().starts_with("birth,death\n"));
        assert_eq!(read_persistence(&pd).unwrap(), pairs);
    }

    #[test]
    fn cocluster_and_grid_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let m = crate::uncertainty::coclustering_matrix(&[Labeling::from_raw(&[0, 0, 1]), Labeling::from_raw(&[0, 1, 1])]).unwrap();
        let p = dir.path().join("cocluster.bin");
        write_cocluster(&p, &m).unwrap();
        assert_eq!(read_cocluster(&p).unwrap(), m);

        let spec = GridSpec::new(vec![0.0, 1.0], vec![1.0, 2.0], vec![3, 5]).unwrap();
        let g = GridDensity::from_fn(spec, |x| x[0] * x[1]).unwrap();
        let gp = dir.path().join("grid.bin");
        write_grid(&gp, &g).unwrap();
        assert_eq!(read_grid(&gp).unwrap(), g);
    }
}
