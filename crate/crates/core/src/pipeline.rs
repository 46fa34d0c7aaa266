//! End-to-end run: data → fit → resample → cluster every resample →
//! uncertainty summaries → plots. Each stage is timed and recorded in
//! `manifest.json`, which is rewritten after every stage so a failed run
//! still says how far it got.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{self, CirclesParams, Dataset};
use crate::diagnostics::DiagnosticsConfig;
use crate::error::{contract, Error, Result, Warning};
use crate::io;
use crate::levelset::{cluster_upper_level, Labeling, LevelSetParams};
use crate::model::{CouplingFlowSpec, FitOptions, FittedModel, GmmSpec, ModelHandle, ParamVector};
use crate::plot;
use crate::points::PointSet;
use crate::resample::{resample_ensemble, ChainResult, ResampleConfig};
use crate::rng::derive_seed;
use crate::tomato::{density_weights, knn_graph, tomato_on_graph, PersistencePair};
use crate::uncertainty::{certainty_scores, cluster_count_posterior, coclustering_matrix, ClusterCountPosterior, CoClusterMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// n = 2000, T = 200, N = 1000.
    Desk,
    /// n = 5000, T = 1000, N = 3000.
    Paper,
}

impl std::str::FromStr for Profile {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            other => Err(format!("unknown profile `{other}` (expected desk or paper)")),
        }
    }
}

impl Profile {
    pub fn config(self) -> RunConfig {
        let (n, chains, horizon) = match self {
            Profile::Desk => (2000, 200, 1000),
            Profile::Paper => (5000, 1000, 3000),
        };
        let mut cfg = RunConfig::base();
        cfg.data.circles.n = n;
        cfg.data.gmm.n = n;
        cfg.resample.chains = chains;
        cfg.resample.horizon = horizon;
        cfg
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    #[default]
    Gmm,
    CouplingFlow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub family: Family,
    pub components: usize,
    pub flow_layers: usize,
    pub flow_hidden: usize,
    pub flow_scale_bound: f64,
    pub fit: FitOptions,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            family: Family::Gmm,
            components: 24,
            flow_layers: 8,
            flow_hidden: 32,
            flow_scale_bound: 3.0,
            fit: FitOptions::default(),
        }
    }
}

impl ModelConfig {
    pub fn handle(&self, dim: usize) -> ModelHandle {
        match self.family {
            Family::Gmm => ModelHandle::Gmm(GmmSpec::new(self.components, dim)),
            Family::CouplingFlow => ModelHandle::CouplingFlow(CouplingFlowSpec {
                scale_bound: self.flow_scale_bound,
                ..CouplingFlowSpec::new(dim, self.flow_layers, self.flow_hidden)
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    #[default]
    Circles,
    Gmm,
}

/// Diagonal Gaussian mixture for synthetic data. `means` and `sds` hold
/// `K × p` values, component by component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GmmDataConfig {
    pub n: usize,
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

impl Default for GmmDataConfig {
    fn default() -> Self {
        GmmDataConfig {
            n: 2000,
            weights: vec![0.5, 0.5],
            means: vec![-2.0, 0.0, 2.0, 0.0],
            sds: vec![1.0; 4],
        }
    }
}

impl GmmDataConfig {
    pub fn to_model(&self) -> Result<(GmmSpec, ParamVector)> {
        let k = self.weights.len();
        if k == 0 || !self.means.len().is_multiple_of(k) || self.means.is_empty() || self.sds.len() != self.means.len() {
            return Err(contract("gmm data: means and sds must hold K × p values"));
        }
        if self.weights.iter().any(|w| !(*w > 0.0)) || self.sds.iter().any(|s| !(*s > 0.0)) {
            return Err(contract("gmm data: weights and sds must be positive"));
        }
        let p = self.means.len() / k;
        let spec = GmmSpec::new(k, p);
        let total: f64 = self.weights.iter().sum();
        let w: Vec<f64> = self.weights.iter().map(|v| v / total).collect();
        let mut chols = vec![0.0; k * p * p];
        for c in 0..k {
            for i in 0..p {
                chols[c * p * p + i * p + i] = self.sds[c * p + i];
            }
        }
        Ok((spec, spec.encode(&w, &self.means, &chols)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub generator: Generator,
    pub circles: CirclesParams,
    pub gmm: GmmDataConfig,
    /// Centre and scale every column before fitting.
    pub standardize: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            generator: Generator::Circles,
            circles: CirclesParams::default(),
            gmm: GmmDataConfig::default(),
            standardize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsConfig {
    /// Input dataset CSV; generated from the `data` section when absent.
    pub data: Option<PathBuf>,
    /// Artifact directory.
    pub out: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            data: None,
            out: PathBuf::from("mdbc-out"),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    #[default]
    Levelset,
    Tomato,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TomatoParams {
    pub k: usize,
    /// Merge threshold on the normalised weight scale.
    pub tau_merge: f64,
}

impl Default for TomatoParams {
    fn default() -> Self {
        TomatoParams { k: 20, tau_merge: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusteringConfig {
    pub backend: Backend,
    pub levelset: LevelSetParams,
    pub tomato: TomatoParams,
    /// Derive `tau` and `r` from the trained density; otherwise use the
    /// configured values as they are.
    pub calibrate: bool,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        ClusteringConfig {
            backend: Backend::Levelset,
            levelset: LevelSetParams::default(),
            tomato: TomatoParams::default(),
            calibrate: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UncertaintyConfig {
    pub write_cocluster: bool,
    pub plots: bool,
}

impl Default for UncertaintyConfig {
    fn default() -> Self {
        UncertaintyConfig {
            write_cocluster: true,
            plots: true,
        }
    }
}

/// Everything a run depends on. Stage seeds are derived from `seed`; the
/// seed fields inside sub-sections are overwritten.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: PathsConfig,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub resample: ResampleConfig,
    pub clustering: ClusteringConfig,
    pub uncertainty: UncertaintyConfig,
    pub diagnostics: DiagnosticsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Profile::Desk.config()
    }
}

impl RunConfig {
    fn base() -> Self {
        RunConfig {
            seed: 0,
            paths: PathsConfig::default(),
            data: DataConfig::default(),
            model: ModelConfig::default(),
            resample: ResampleConfig::default(),
            clustering: ClusteringConfig::default(),
            uncertainty: UncertaintyConfig::default(),
            diagnostics: DiagnosticsConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(p) = &self.paths.data {
            if !p.exists() {
                return Err(contract(format!("data file {} does not exist", p.display())));
            }
        }
        // n is filled in from the data
        ResampleConfig {
            n: self.resample.n.max(2),
            ..self.resample.clone()
        }
        .validate()?;
        let lp = &self.clustering.levelset;
        if lp.m == 0 || !(0.0..=100.0).contains(&lp.tau_percentile) || lp.r_kth == 0 || !(lp.r_factor >= 0.0) {
            return Err(contract("invalid levelset parameters"));
        }
        if !self.clustering.calibrate {
            lp.validate()?;
        }
        let tp = &self.clustering.tomato;
        if tp.k == 0 || !(tp.tau_merge >= 0.0) {
            return Err(contract("invalid tomato parameters"));
        }
        if self.model.components == 0 || self.model.flow_layers == 0 || self.model.flow_hidden == 0 {
            return Err(contract("model sizes must be positive"));
        }
        Ok(())
    }

    /// SHA-256 of the configuration without the output directory, so two
    /// runs share a hash exactly when they compute the same thing.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serialises");
        if let Some(paths) = v.get_mut("paths").and_then(|p| p.as_object_mut()) {
            paths.remove("out");
        }
        let digest = Sha256::digest(v.to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub status: StageStatus,
    pub seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub n: usize,
    pub resamples: usize,
    pub trained_clusters: usize,
    pub cluster_counts: ClusterCountPosterior,
    pub mean_certainty: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config_hash: String,
    pub threads: usize,
    pub config: RunConfig,
    pub stages: Vec<StageRecord>,
    pub artifacts: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub summary: Option<RunSummary>,
}

/// A stage failure; the manifest on disk marks the stage as failed.
#[derive(Debug, thiserror::Error)]
#[error("stage `{stage}` failed: {source}")]
pub struct PipelineError {
    pub stage: String,
    #[source]
    pub source: Error,
}

#[derive(Debug, Clone)]
pub struct ClusterOutput {
    /// Clustering under the trained density.
    pub trained: Labeling,
    /// One clustering per resample.
    pub labelings: Vec<Labeling>,
    /// Level-set parameters actually used.
    pub levelset: Option<LevelSetParams>,
    /// ToMATo diagram under the trained density.
    pub persistence: Option<Vec<PersistencePair>>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub manifest: Manifest,
    pub data: Dataset,
    pub fitted: FittedModel,
    pub clusters: ClusterOutput,
    pub cocluster: CoClusterMatrix,
    pub certainty: Vec<f64>,
    pub posterior: ClusterCountPosterior,
}

/// Loads `paths.data` or generates data; standardises if configured.
pub fn prepare_data(cfg: &RunConfig) -> Result<Dataset> {
    let raw = match &cfg.paths.data {
        Some(p) => data::read_dataset(p)?,
        None => match cfg.data.generator {
            Generator::Circles => data::gen_circles(&cfg.data.circles, derive_seed(cfg.seed, "data"))?,
            Generator::Gmm => {
                let (spec, theta) = cfg.data.gmm.to_model()?;
                data::gen_gmm(&spec, &theta, cfg.data.gmm.n, derive_seed(cfg.seed, "data"))?
            }
        },
    };
    if cfg.data.standardize {
        Ok(data::standardize(&raw)?.0)
    } else {
        Ok(raw)
    }
}

pub fn fit_model(cfg: &RunConfig, points: &PointSet) -> Result<(FittedModel, Vec<Warning>)> {
    let model = cfg.model.handle(points.dim());
    let mut opts = cfg.model.fit.clone();
    opts.gmm.seed = derive_seed(cfg.seed, "fit");
    opts.flow.seed = derive_seed(cfg.seed, "fit");
    let fit = model.fit_mle(points, &opts)?;
    Ok((FittedModel::new(model, fit.value.theta)?, fit.warnings))
}

/// The resampling configuration a run uses for a dataset of size `n`.
pub fn resample_config(cfg: &RunConfig, n: usize) -> ResampleConfig {
    ResampleConfig {
        n,
        seed: derive_seed(cfg.seed, "resample"),
        ..cfg.resample.clone()
    }
}

/// Clusters `points` under the trained parameter and under each resample.
pub fn cluster_all(
    clustering: &ClusteringConfig,
    points: &PointSet,
    model: &ModelHandle,
    theta0: &ParamVector,
    thetas: &[ParamVector],
) -> Result<ClusterOutput> {
    let mut warnings = Vec::new();
    match clustering.backend {
        Backend::Levelset => {
            let logdens0 = model.log_density_batch(theta0, points)?;
            let params = if clustering.calibrate {
                let cal = clustering.levelset.clone().calibrate(points, &logdens0)?;
                warnings.extend(cal.warnings.iter().map(|w| format!("calibration: {w}")));
                cal.value
            } else {
                clustering.levelset.clone()
            };
            let trained = cluster_upper_level(points, &logdens0, &params)?;
            warnings.extend(trained.warnings.iter().map(|w| format!("trained: {w}")));
            let per: Vec<(Labeling, Vec<Warning>)> = thetas
                .par_iter()
                .map(|th| {
                    let l = cluster_upper_level(points, &model.log_density_batch(th, points)?, &params)?;
                    Ok((l.value, l.warnings))
                })
                .collect::<Result<_>>()?;
            let mut labelings = Vec::with_capacity(per.len());
            for (t, (l, w)) in per.into_iter().enumerate() {
                warnings.extend(w.iter().map(|w| format!("resample {t}: {w}")));
                labelings.push(l);
            }
            Ok(ClusterOutput {
                trained: trained.value,
                labelings,
                levelset: Some(params),
                persistence: None,
                warnings,
            })
        }
        Backend::Tomato => {
            let tp = &clustering.tomato;
            let adj = knn_graph(points, tp.k)?.symmetrized();
            let run = |th: &ParamVector| -> Result<_> {
                let w = density_weights(&model.log_density_batch(th, points)?)?;
                tomato_on_graph(&adj, &w, tp.tau_merge)
            };
            let trained = run(theta0)?;
            let labelings = thetas
                .par_iter()
                .map(|th| Ok(run(th)?.labeling))
                .collect::<Result<_>>()?;
            Ok(ClusterOutput {
                trained: trained.labeling,
                labelings,
                levelset: None,
                persistence: Some(trained.diagram),
                warnings,
            })
        }
    }
}

struct Recorder {
    out: PathBuf,
    manifest: Manifest,
}

impl Recorder {
    fn stage<T>(&mut self, name: &str, f: impl FnOnce(&mut Vec<String>) -> Result<T>) -> std::result::Result<T, PipelineError> {
        let start = Instant::now();
        let mut warnings = Vec::new();
        let res = f(&mut warnings);
        let seconds = start.elapsed().as_secs_f64();
        const MAX_WARNINGS: usize = 50;
        if warnings.len() > MAX_WARNINGS {
            let extra = warnings.len() - MAX_WARNINGS;
            warnings.truncate(MAX_WARNINGS);
            warnings.push(format!("… and {extra} more"));
        }
        let (status, error) = match &res {
            Ok(_) => (StageStatus::Ok, None),
            Err(e) => (StageStatus::Failed, Some(e.to_string())),
        };
        self.manifest.stages.push(StageRecord {
            name: name.into(),
            status,
            seconds,
            error,
            warnings,
        });
        // best effort: a manifest write failure must not mask the stage error
        let written = self.write();
        match res {
            Ok(v) => {
                written.map_err(|source| PipelineError {
                    stage: name.into(),
                    source,
                })?;
                Ok(v)
            }
            Err(source) => Err(PipelineError {
                stage: name.into(),
                source,
            }),
        }
    }

    fn artifact(&mut self, name: &str) -> PathBuf {
        self.manifest.artifacts.push(name.into());
        self.out.join(name)
    }

    fn write(&self) -> Result<()> {
        io::write_json(&self.out.join("manifest.json"), &self.manifest)
    }
}

/// Runs every stage, writing artifacts to `cfg.paths.out`.
pub fn run_pipeline(cfg: &RunConfig) -> std::result::Result<PipelineOutput, PipelineError> {
    let out = cfg.paths.out.clone();
    let setup = |source| PipelineError {
        stage: "setup".into(),
        source,
    };
    cfg.validate().map_err(setup)?;
    std::fs::create_dir_all(&out).map_err(|e| setup(e.into()))?;
    let mut rec = Recorder {
        out: out.clone(),
        manifest: Manifest {
            version: env!("CARGO_PKG_VERSION").into(),
            config_hash: cfg.hash(),
            threads: rayon::current_num_threads(),
            config: cfg.clone(),
            stages: Vec::new(),
            artifacts: Vec::new(),
            summary: None,
        },
    };

    let data_path = rec.artifact("data.csv");
    let ds = rec.stage("data", |_| {
        let ds = prepare_data(cfg)?;
        data::write_dataset(&data_path, &ds)?;
        Ok(ds)
    })?;
    let points = &ds.points;

    let model_path = rec.artifact("model.json");
    let fitted = rec.stage("fit", |w| {
        let (fitted, warns) = fit_model(cfg, points)?;
        w.extend(warns.iter().map(|x| x.to_string()));
        std::fs::write(&model_path, fitted.to_json()?)?;
        Ok(fitted)
    })?;

    rec.manifest.artifacts.extend(["ensemble.bin", "ensemble.json", "counters.csv"].map(String::from));
    let chains: Vec<ChainResult> = rec.stage("resample", |w| {
        let rcfg = resample_config(cfg, points.len());
        let chains = resample_ensemble(&fitted.model, &fitted.theta, &rcfg)?;
        let clipped: u64 = chains.iter().map(|c| c.n_clipped).sum();
        let nans: u64 = chains.iter().map(|c| c.n_nan_replaced).sum();
        if clipped + nans > 0 {
            w.push(format!("{clipped} clipped and {nans} NaN score coordinates"));
        }
        let meta = io::EnsembleMeta {
            model: fitted.model.clone(),
            theta0: fitted.theta.clone(),
            resample: rcfg,
        };
        io::write_ensemble(&out, &meta, &chains)?;
        Ok(chains)
    })?;

    let labels_path = rec.artifact("labels.csv");
    let trained_path = rec.artifact("labels_trained.csv");
    let clusters = rec.stage("cluster", |w| {
        let thetas: Vec<ParamVector> = chains.iter().map(|c| c.theta_final.clone()).collect();
        let co = cluster_all(&cfg.clustering, points, &fitted.model, &fitted.theta, &thetas)?;
        w.extend(co.warnings.iter().cloned());
        io::write_labelings(&labels_path, &co.labelings)?;
        io::write_labelings(&trained_path, std::slice::from_ref(&co.trained))?;
        if let Some(p) = &co.persistence {
            io::write_persistence(&out.join("persistence.csv"), p)?;
        }
        if let Some(p) = &co.levelset {
            io::write_json(&out.join("levelset_params.json"), p)?;
        }
        Ok(co)
    })?;
    if clusters.persistence.is_some() {
        rec.manifest.artifacts.push("persistence.csv".into());
    }
    if clusters.levelset.is_some() {
        rec.manifest.artifacts.push("levelset_params.json".into());
    }

    let mut names = vec!["certainty.csv", "cluster_counts.json"];
    if cfg.uncertainty.write_cocluster {
        names.push("cocluster.bin");
        names.push("cocluster.json");
    }
    rec.manifest.artifacts.extend(names.into_iter().map(String::from));
    let (cocluster, certainty, posterior) = rec.stage("uncertainty", |_| {
        let m = coclustering_matrix(&clusters.labelings)?;
        let s = certainty_scores(&m);
        let post = cluster_count_posterior(&clusters.labelings)?;
        io::write_certainty(&out.join("certainty.csv"), &s)?;
        io::write_json(&out.join("cluster_counts.json"), &post)?;
        if cfg.uncertainty.write_cocluster {
            io::write_cocluster(&out.join("cocluster.bin"), &m)?;
        }
        Ok((m, s, post))
    })?;

    if cfg.uncertainty.plots {
        let plotted = rec.stage("plots", |w| {
            if points.dim() != 2 {
                w.push(format!("plots skipped for {}-dimensional data", points.dim()));
                return Ok(false);
            }
            write_plots(&out, points, &clusters.trained, &certainty)?;
            Ok(true)
        })?;
        if plotted {
            rec.manifest
                .artifacts
                .extend(["clusters.svg", "certainty.svg"].map(String::from));
        }
    }

    rec.manifest.summary = Some(RunSummary {
        n: points.len(),
        resamples: clusters.labelings.len(),
        trained_clusters: clusters.trained.k,
        cluster_counts: posterior.clone(),
        mean_certainty: certainty.iter().sum::<f64>() / certainty.len().max(1) as f64,
    });
    rec.write().map_err(|source| PipelineError {
        stage: "manifest".into(),
        source,
    })?;

    Ok(PipelineOutput {
        manifest: rec.manifest,
        data: ds,
        fitted,
        clusters,
        cocluster,
        certainty,
        posterior,
    })
}

pub fn write_plots(out: &Path, points: &PointSet, trained: &Labeling, certainty: &[f64]) -> Result<()> {
    let colors: Vec<String> = trained.labels.iter().map(|&l| plot::label_color(l)).collect();
    std::fs::write(
        out.join("clusters.svg"),
        plot::scatter_svg(points, &colors, &format!("clusters under the trained density (k = {})", trained.k)),
    )?;
    let colors: Vec<String> = certainty.iter().map(|s| plot::ramp_color(s / 0.25)).collect();
    std::fs::write(
        out.join("certainty.svg"),
        plot::scatter_svg(points, &colors, "co-clustering certainty"),
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(out: &Path) -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.paths.out = out.to_path_buf();
        cfg.data.circles.n = 300;
        cfg.model.components = 6;
        cfg.resample.chains = 4;
        cfg.resample.horizon = 50;
        cfg.clustering.levelset.m = 20;
        cfg
    }

    #[test]
    fn profiles() {
        let d = Profile::Desk.config();
        assert_eq!((d.data.circles.n, d.resample.chains, d.resample.horizon), (2000, 200, 1000));
        let p: Profile = "paper".parse().unwrap();
        let c = p.config();
        assert_eq!((c.data.circles.n, c.resample.chains, c.resample.horizon), (5000, 1000, 3000));
        assert!("huge".parse::<Profile>().is_err());
        assert_eq!(RunConfig::default(), d);
    }

    #[test]
    fn config_json_roundtrip_and_hash() {
        let cfg = RunConfig::default();
        let json = serde_json::to_string(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        let mut moved = cfg.clone();
        moved.paths.out = "elsewhere".into();
        assert_eq!(moved.hash(), cfg.hash());
        let mut changed = cfg.clone();
        changed.resample.eta0 = 0.03;
        assert_ne!(changed.hash(), cfg.hash());
        let partial: RunConfig = serde_json::from_str(r#"{"seed": 4, "resample": {"T": 7}}"#).unwrap();
        assert_eq!((partial.seed, partial.resample.chains, partial.resample.horizon), (4, 7, 3000));
    }

    #[test]
    fn gmm_data_config() {
        let (spec, theta) = GmmDataConfig::default().to_model().unwrap();
        assert_eq!((spec.n_components, spec.dim), (2, 2));
        assert_eq!(theta.len(), spec.n_params());
        let bad = GmmDataConfig {
            sds: vec![1.0],
            ..Default::default()
        };
        assert!(bad.to_model().is_err());
    }

    #[test]
    fn small_run_writes_everything() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(dir.path());
        let out = run_pipeline(&cfg).unwrap();
        for a in &out.manifest.artifacts {
            assert!(dir.path().join(a).exists(), "{a}");
        }
        let m: Manifest = io::read_json(&dir.path().join("manifest.json")).unwrap();
        assert!(m.stages.iter().all(|s| s.status == StageStatus::Ok));
        assert_eq!(m.config_hash, cfg.hash());
        assert_eq!(io::read_labelings(&dir.path().join("labels.csv")).unwrap(), out.clusters.labelings);
        assert_eq!(io::read_cocluster(&dir.path().join("cocluster.bin")).unwrap(), out.cocluster);
        assert_eq!(io::read_certainty(&dir.path().join("certainty.csv")).unwrap(), out.certainty);
        let post: ClusterCountPosterior = io::read_json(&dir.path().join("cluster_counts.json")).unwrap();
        assert_eq!(post, out.posterior);
        let fitted = FittedModel::from_json(&std::fs::read_to_string(dir.path().join("model.json")).unwrap()).unwrap();
        assert_eq!(fitted, out.fitted);
        assert_eq!(data::read_dataset(&dir.path().join("data.csv")).unwrap(), out.data);
    }

    #[test]
    fn single_resample_certainty_is_degenerate() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small(dir.path());
        cfg.resample.chains = 1;
        let out = run_pipeline(&cfg).unwrap();
        let n = out.certainty.len() as f64;
        let sizes = out.clusters.labelings[0].sizes();
        // M ∈ {0, 1}, so every (M − ½)² is ¼
        for s in &out.certainty {
            assert!((s - 0.25).abs() < 1e-12, "{s} with n = {n}, sizes {sizes:?}");
        }
    }

    #[test]
    fn tomato_backend_runs() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small(dir.path());
        cfg.clustering.backend = Backend::Tomato;
        cfg.clustering.tomato.tau_merge = 1e-4;
        let out = run_pipeline(&cfg).unwrap();
        assert!(dir.path().join("persistence.csv").exists());
        assert_eq!(out.clusters.labelings.len(), 4);
    }

    #[test]
    fn failed_stage_is_recorded() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small(dir.path());
        cfg.model.components = 400;
        let err = run_pipeline(&cfg).unwrap_err();
        assert_eq!(err.stage, "fit");
        let m: Manifest = io::read_json(&dir.path().join("manifest.json")).unwrap();
        assert_eq!(m.stages.last().unwrap().status, StageStatus::Failed);
        assert!(dir.path().join("data.csv").exists());
    }
}
