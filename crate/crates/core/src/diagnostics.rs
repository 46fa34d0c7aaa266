//! Empirical checks of the resampling theory: the zero-mean score identity,
//! the martingale L² and Markov bounds, and posterior contraction of
//! densities and their level-set clusters as `n` grows.

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{contract, input, Result, Warning};
use crate::grid::{grid_density, level_set_components, saddle_height, sup_distance, GridDensity, GridSpec};
use crate::model::{Bound, FitOptions, FittedModel, GmmSpec, ModelHandle, ParamVector};
use crate::points::PointSet;
use crate::resample::{resample_chain_observed, resample_ensemble, ResampleConfig};
use crate::rng;
use crate::uncertainty::{clustering_distance, ClusterFamily};

const BLOCK: usize = 1024;

/// Monte Carlo estimate of `E_{Y~f_θ}[s(Y; θ)]` per coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreIdentity {
    pub n_mc: usize,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
}

impl ScoreIdentity {
    pub fn z_scores(&self) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.stderr)
            .map(|(m, s)| match (*m == 0.0, *s > 0.0) {
                (true, _) => 0.0,
                (false, true) => m.abs() / s,
                (false, false) => f64::INFINITY,
            })
            .collect()
    }

    pub fn max_z(&self) -> f64 {
        self.z_scores().into_iter().fold(0.0, f64::max)
    }

    pub fn passes(&self, z_max: f64) -> bool {
        self.max_z() <= z_max
    }
}

pub fn check_score_identity(model: &ModelHandle, theta: &ParamVector, n_mc: usize, seed: u64) -> Result<ScoreIdentity> {
    score_identity_with(model, theta, n_mc, seed, |b, x, out| {
        b.score_into(x, out);
    })
}

/// As [`check_score_identity`] with a caller-supplied score, e.g. a
/// deliberately wrong one for a negative control. Draws are split into
/// fixed blocks with their own streams, so the result is independent of
/// the thread count.
pub fn score_identity_with<F>(model: &ModelHandle, theta: &ParamVector, n_mc: usize, seed: u64, score: F) -> Result<ScoreIdentity>
where
    F: Fn(&Bound<'_>, &[f64], &mut [f64]) + Sync,
{
    if n_mc < 100 {
        return Err(contract("score identity needs at least 100 draws"));
    }
    let bound = model.bind(theta)?;
    let (p, d) = (model.dim(), model.n_params());
    let base = rng::derive_seed(seed, "score-identity");
    let blocks: Vec<(Vec<f64>, Vec<f64>)> = (0..n_mc.div_ceil(BLOCK))
        .into_par_iter()
        .map(|b| {
            let mut rng = rng::stream(base, b as u64);
            let (mut s1, mut s2) = (vec![0.0; d], vec![0.0; d]);
            let (mut x, mut s) = (vec![0.0; p], vec![0.0; d]);
            for _ in 0..BLOCK.min(n_mc - b * BLOCK) {
                bound.sample_into(&mut rng, &mut x);
                score(&bound, &x, &mut s);
                for j in 0..d {
                    s1[j] += s[j];
                    s2[j] += s[j] * s[j];
                }
            }
            (s1, s2)
        })
        .collect();
    let (mut s1, mut s2) = (vec![0.0; d], vec![0.0; d]);
    for (a, b) in &blocks {
        for j in 0..d {
            s1[j] += a[j];
            s2[j] += b[j];
        }
    }
    let n = n_mc as f64;
    let mean: Vec<f64> = s1.iter().map(|v| v / n).collect();
    let stderr = (0..d)
        .map(|j| {
            let var = ((s2[j] / n - mean[j] * mean[j]) * n / (n - 1.0)).max(0.0);
            (var / n).sqrt()
        })
        .collect();
    Ok(ScoreIdentity { n_mc, mean, stderr })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkovPoint {
    pub delta: f64,
    /// Fraction of chains with `‖θ_N − θ₀‖ > δ`.
    pub empirical: f64,
    /// `V̂ η₀² / ((n − 1) δ²)`.
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleReport {
    pub n: usize,
    pub horizon: usize,
    pub chains: usize,
    pub eta0: f64,
    /// Mean over chains of `‖θ_N − θ₀‖²`.
    pub mean_sq_displacement: f64,
    /// Largest per-step mean of the squared (clipped) score norm.
    pub v_hat: f64,
    pub sum_sq_steps: f64,
    /// `V̂ Σ η_k²`.
    pub bound_sum: f64,
    /// `V̂ η₀² / (n − 1)`.
    pub bound: f64,
    /// Mean of `‖θ_N − θ_{N/2}‖²`.
    pub tail_mean_sq: f64,
    /// `V̂ Σ_{k > N/2} η_k²`.
    pub tail_bound: f64,
    /// Largest |mean coordinate drift| in standard errors.
    pub max_drift_z: f64,
    pub markov: Vec<MarkovPoint>,
}

impl MartingaleReport {
    pub fn l2_holds(&self) -> bool {
        self.mean_sq_displacement <= self.bound && self.tail_mean_sq <= self.tail_bound
    }

    pub fn markov_holds(&self) -> bool {
        self.markov.iter().all(|m| m.empirical <= m.bound)
    }

    pub fn passes(&self, z_max: f64) -> bool {
        self.l2_holds() && self.markov_holds() && self.max_drift_z <= z_max
    }
}

struct ChainTrace {
    step_sq: Vec<f64>,
    mid: Vec<f64>,
    last: Vec<f64>,
}

/// Runs `cfg.chains` chains and compares their spread with the bounds
/// implied by orthogonal martingale increments.
pub fn martingale_check(model: &ModelHandle, theta0: &ParamVector, cfg: &ResampleConfig) -> Result<MartingaleReport> {
    cfg.validate()?;
    model.bind(theta0)?;
    let (big_n, t, d) = (cfg.horizon, cfg.chains, model.n_params());
    let half = big_n / 2;
    let mut step_sum = vec![0.0; big_n];
    let mut disp = Vec::with_capacity(t);
    let mut tail = Vec::with_capacity(t);
    let mut finals = Vec::with_capacity(t * d);
    // bounded memory: one batch of full traces at a time
    for batch in (0..t).collect::<Vec<_>>().chunks(32) {
        let traces: Vec<ChainTrace> = batch
            .par_iter()
            .map(|&c| {
                let mut prev = theta0.0.clone();
                let mut tr = ChainTrace {
                    step_sq: Vec::with_capacity(big_n),
                    mid: theta0.0.clone(),
                    last: theta0.0.clone(),
                };
                resample_chain_observed(model, theta0, cfg, c, |k, th| {
                    if k > 0 {
                        let eta = cfg.step_size(k);
                        let sq: f64 = th.iter().zip(&prev).map(|(a, b)| (a - b) * (a - b)).sum();
                        tr.step_sq.push(sq / (eta * eta));
                        prev.copy_from_slice(th);
                    }
                    if k == half {
                        tr.mid.copy_from_slice(th);
                    }
                })?;
                tr.last = prev;
                Ok(tr)
            })
            .collect::<Result<_>>()?;
        for tr in traces {
            for (acc, v) in step_sum.iter_mut().zip(&tr.step_sq) {
                *acc += v;
            }
            disp.push(sq_diff(&tr.last, theta0));
            tail.push(sq_diff(&tr.last, &tr.mid));
            finals.extend_from_slice(&tr.last);
        }
    }
    let tf = t as f64;
    let v_hat = step_sum.iter().map(|s| s / tf).fold(0.0, f64::max);
    let sum_sq_steps = cfg.sum_sq_steps();
    let tail_steps: f64 = (half + 1..=big_n).map(|k| cfg.step_size(k).powi(2)).sum();
    let bound = v_hat * cfg.eta0 * cfg.eta0 / (cfg.n - 1) as f64;
    let mean_sq_displacement = disp.iter().sum::<f64>() / tf;

    let mut max_drift_z: f64 = 0.0;
    if t >= 2 {
        for j in 0..d {
            let col = finals.iter().skip(j).step_by(d).map(|v| v - theta0[j]);
            let (s1, s2) = col.fold((0.0, 0.0), |(a, b), v| (a + v, b + v * v));
            let mean = s1 / tf;
            let se = (((s2 / tf - mean * mean) * tf / (tf - 1.0)).max(0.0) / tf).sqrt();
            let z = if mean == 0.0 { 0.0 } else if se > 0.0 { mean.abs() / se } else { f64::INFINITY };
            max_drift_z = max_drift_z.max(z);
        }
    }

    let markov = if bound > 0.0 {
        (0..10)
            .map(|j| {
                let delta = bound.sqrt() * 2f64.powf(j as f64 / 2.0 - 1.0);
                let far = disp.iter().filter(|&&s| s.sqrt() > delta).count();
                MarkovPoint {
                    delta,
                    empirical: far as f64 / tf,
                    bound: bound / (delta * delta),
                }
            })
            .collect()
    } else {
        Vec::new()
    };

    Ok(MartingaleReport {
        n: cfg.n,
        horizon: big_n,
        chains: t,
        eta0: cfg.eta0,
        mean_sq_displacement,
        v_hat,
        sum_sq_steps,
        bound_sum: v_hat * sum_sq_steps,
        bound,
        tail_mean_sq: tail.iter().sum::<f64>() / tf,
        tail_bound: v_hat * tail_steps,
        max_drift_z,
        markov,
    })
}

fn sq_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub n: usize,
    pub horizon: usize,
    pub mean_sq_displacement: f64,
    /// `(n − 1) · E‖θ_N − θ₀‖²`.
    pub normalized: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub points: Vec<ScalingPoint>,
    /// Largest over smallest normalised displacement.
    pub ratio: f64,
}

/// Mean squared displacement at several `n`, each run to a horizon of
/// `horizon_factor · n` steps so that the truncated tail of `Σ η_k²` is a
/// fixed fraction of the whole.
pub fn martingale_scaling(
    model: &ModelHandle,
    theta0: &ParamVector,
    base: &ResampleConfig,
    ns: &[usize],
    horizon_factor: usize,
) -> Result<ScalingReport> {
    if ns.len() < 2 {
        return Err(contract("scaling needs at least two sample sizes"));
    }
    let mut points = Vec::new();
    for &n in ns {
        let cfg = ResampleConfig {
            n,
            horizon: horizon_factor * n,
            seed: rng::derive_seed(base.seed, &format!("scaling-{n}")),
            ..base.clone()
        };
        let chains = resample_ensemble(model, theta0, &cfg)?;
        let m = chains.iter().map(|c| c.displacement_sq).sum::<f64>() / chains.len() as f64;
        points.push(ScalingPoint {
            n,
            horizon: cfg.horizon,
            mean_sq_displacement: m,
            normalized: (n - 1) as f64 * m,
        });
    }
    let hi = points.iter().map(|p| p.normalized).fold(0.0, f64::max);
    let lo = points.iter().map(|p| p.normalized).fold(f64::INFINITY, f64::min);
    Ok(ScalingReport {
        points,
        ratio: hi / lo,
    })
}

/// Default cluster level: halfway between the saddle joining the two highest
/// modes and the lower of those two peaks; half the maximum for unimodal
/// densities.
pub fn default_level(g: &GridDensity) -> f64 {
    let mut nb = Vec::new();
    let mut modes: Vec<usize> = (0..g.values.len())
        .filter(|&i| {
            g.spec.neighbors(i, &mut nb);
            nb.iter().all(|&j| g.values[j] < g.values[i] || (g.values[j] == g.values[i] && j > i))
        })
        .collect();
    modes.sort_by(|&a, &b| g.values[b].total_cmp(&g.values[a]));
    match modes.as_slice() {
        [a, b, ..] => {
            let valley = saddle_height(g, &[*a], &[*b]).expect("distinct modes");
            valley + 0.5 * (g.values[*b] - valley)
        }
        _ => 0.5 * g.max(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContractionConfig {
    pub levels: Vec<usize>,
    pub chains: usize,
    pub horizon: usize,
    pub eta0: f64,
    pub grid: GridSpec,
    /// Cluster level; `None` picks [`default_level`] on the true density.
    pub level: Option<f64>,
    /// `ε̃_n` as a multiple of the observed fit error.
    pub eps_multiple: f64,
    pub seed: u64,
}

impl Default for ContractionConfig {
    fn default() -> Self {
        ContractionConfig {
            levels: vec![200, 800, 3200],
            chains: 200,
            horizon: 1000,
            eta0: 0.02,
            grid: GridSpec {
                lo: vec![-6.0],
                hi: vec![6.0],
                resolution: vec![1201],
            },
            level: None,
            eps_multiple: 2.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionRecord {
    pub n: usize,
    /// Sup distance between the fitted and the true density.
    pub eps_hat: f64,
    pub eps_tilde: f64,
    /// Fraction of resamples with `d(f_θ, f_*) > ε̃_n`.
    pub frac_far: f64,
    /// Fraction of resamples whose cluster count differs from the truth's.
    pub frac_wrong_k: f64,
    /// Mean grid discrepancy to the true clusters over resamples with the
    /// right count; `None` if there are none.
    pub mean_discrepancy: Option<f64>,
    pub mean_sup_distance: f64,
    pub fit_warnings: Vec<Warning>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionReport {
    pub level: f64,
    pub k_true: usize,
    /// Whether the true cluster count is the same at `level ± 5%` of the
    /// density range, i.e. the level is not near a saddle or a peak.
    pub level_stable: bool,
    pub records: Vec<ContractionRecord>,
}

impl ContractionReport {
    /// Wrong-count fractions never increase with `n`, except for at most
    /// one increase of at most `inversion_tol`.
    pub fn wrong_k_trend_ok(&self, inversion_tol: f64) -> bool {
        let ups: Vec<f64> = self
            .records
            .windows(2)
            .map(|w| w[1].frac_wrong_k - w[0].frac_wrong_k)
            .filter(|&d| d > 0.0)
            .collect();
        ups.is_empty() || (ups.len() == 1 && ups[0] <= inversion_tol)
    }

    /// Relative drop in mean discrepancy from the first to the last level.
    pub fn discrepancy_drop(&self) -> Option<f64> {
        let first = self.records.first()?.mean_discrepancy?;
        let last = self.records.last()?.mean_discrepancy?;
        if first > 0.0 {
            Some(1.0 - last / first)
        } else {
            None
        }
    }
}

/// For each `n`: draw data from `truth`, fit `family`, resample, and compare
/// every resampled density and its level-set clusters with the truth.
pub fn contraction_experiment(
    truth: &FittedModel,
    family: &ModelHandle,
    fit: &FitOptions,
    resample: &ResampleConfig,
    cfg: &ContractionConfig,
) -> Result<ContractionReport> {
    cfg.grid.validate()?;
    if cfg.levels.is_empty() || cfg.levels.windows(2).any(|w| w[0] >= w[1]) || cfg.levels[0] < 2 {
        return Err(contract("levels of n must be increasing and at least 2"));
    }
    if family.dim() != truth.model.dim() {
        return Err(contract("fitted family and truth differ in dimension"));
    }
    let g_true = grid_density(&truth.model, &truth.theta, &cfg.grid)?;
    let level = cfg.level.unwrap_or_else(|| default_level(&g_true));
    let (k_true, true_labels) = level_set_components(&g_true, level);
    if k_true == 0 {
        return Err(input("the true density has no mass above the cluster level"));
    }
    let eta = 0.05 * (g_true.max() - g_true.min());
    let level_stable = level_set_components(&g_true, level - eta).0 == k_true
        && level_set_components(&g_true, level + eta).0 == k_true;
    let true_family = ClusterFamily::from_partial(true_labels, g_true.cell_volume())?;

    let records = cfg
        .levels
        .par_iter()
        .map(|&n| {
            let arm_seed = rng::derive_seed(cfg.seed, &format!("arm-{n}"));
            let data = sample_points(truth, n, arm_seed)?;
            let mut opts = fit.clone();
            opts.gmm.seed = arm_seed;
            opts.flow.seed = arm_seed;
            let fitted = family.fit_mle(&data, &opts)?;
            let theta0 = fitted.value.theta;
            let g0 = grid_density(family, &theta0, &cfg.grid)?;
            let eps_hat = sup_distance(&g0, &g_true)?;
            let eps_tilde = cfg.eps_multiple * eps_hat;
            let rcfg = ResampleConfig {
                n,
                horizon: cfg.horizon,
                chains: cfg.chains,
                eta0: cfg.eta0,
                seed: arm_seed,
                ..resample.clone()
            };
            let chains = resample_ensemble(family, &theta0, &rcfg)?;
            let per: Vec<(f64, bool, Option<f64>)> = chains
                .par_iter()
                .map(|c| {
                    let g = grid_density(family, &c.theta_final, &cfg.grid)?;
                    let d = sup_distance(&g, &g_true)?;
                    let (k, labels) = level_set_components(&g, level);
                    let disc = if k == k_true {
                        let fam = ClusterFamily::from_partial(labels, g.cell_volume())?;
                        Some(clustering_distance(&fam, &true_family, false)?)
                    } else {
                        None
                    };
                    Ok((d, k != k_true, disc))
                })
                .collect::<Result<_>>()?;
            let t = per.len() as f64;
            let discs: Vec<f64> = per.iter().filter_map(|p| p.2).collect();
            Ok(ContractionRecord {
                n,
                eps_hat,
                eps_tilde,
                frac_far: per.iter().filter(|p| p.0 > eps_tilde).count() as f64 / t,
                frac_wrong_k: per.iter().filter(|p| p.1).count() as f64 / t,
                mean_discrepancy: (!discs.is_empty()).then(|| discs.iter().sum::<f64>() / discs.len() as f64),
                mean_sup_distance: per.iter().map(|p| p.0).sum::<f64>() / t,
                fit_warnings: fitted.warnings,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(ContractionReport {
        level,
        k_true,
        level_stable,
        records,
    })
}

fn sample_points(model: &FittedModel, n: usize, seed: u64) -> Result<PointSet> {
    let bound = model.model.bind(&model.theta)?;
    let mut rng = rng::stream(rng::derive_seed(seed, "truth-sample"), 0);
    let mut out = PointSet::with_capacity(model.model.dim(), n);
    let mut x = vec![0.0; model.model.dim()];
    for _ in 0..n {
        bound.sample_into(&mut rng, &mut x);
        out.push(&x);
    }
    Ok(out)
}

/// One-dimensional Gaussian mixture used as ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TruthConfig {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

impl Default for TruthConfig {
    fn default() -> Self {
        TruthConfig {
            weights: vec![0.5, 0.5],
            means: vec![-2.0, 2.0],
            sds: vec![1.0, 1.0],
        }
    }
}

impl TruthConfig {
    pub fn to_model(&self) -> Result<FittedModel> {
        let k = self.weights.len();
        if k == 0 || self.means.len() != k || self.sds.len() != k {
            return Err(contract("truth weights, means and sds must have equal non-zero length"));
        }
        if self.weights.iter().any(|w| !(*w > 0.0)) || self.sds.iter().any(|s| !(*s > 0.0)) {
            return Err(contract("truth weights and sds must be positive"));
        }
        let spec = GmmSpec::new(k, 1);
        let total: f64 = self.weights.iter().sum();
        let w: Vec<f64> = self.weights.iter().map(|v| v / total).collect();
        FittedModel::new(ModelHandle::Gmm(spec), spec.encode(&w, &self.means, &self.sds))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreIdentityConfig {
    pub n_mc: usize,
    /// Parameter points checked: the truth plus `n_theta − 1` perturbations.
    pub n_theta: usize,
    pub perturb_sd: f64,
    /// Negative control: add 1 to every score coordinate.
    pub corrupt: bool,
    pub z_max: f64,
}

impl Default for ScoreIdentityConfig {
    fn default() -> Self {
        ScoreIdentityConfig {
            n_mc: 10_000,
            n_theta: 20,
            perturb_sd: 0.5,
            corrupt: false,
            z_max: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MartingaleConfig {
    pub n: usize,
    pub horizon: usize,
    pub chains: usize,
    pub eta0: f64,
    pub z_max: f64,
    pub scaling_n: Vec<usize>,
    pub scaling_horizon_factor: usize,
    pub scaling_chains: usize,
    /// Allowed ratio between normalised displacements across `scaling_n`.
    pub scaling_factor: f64,
}

impl Default for MartingaleConfig {
    fn default() -> Self {
        MartingaleConfig {
            n: 1000,
            horizon: 1000,
            chains: 500,
            eta0: 0.02,
            z_max: 5.0,
            scaling_n: vec![100, 10_000],
            scaling_horizon_factor: 10,
            scaling_chains: 200,
            scaling_factor: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContractionChecks {
    pub inversion_tol: f64,
    pub min_discrepancy_drop: f64,
}

impl Default for ContractionChecks {
    fn default() -> Self {
        ContractionChecks {
            inversion_tol: 0.05,
            min_discrepancy_drop: 0.3,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiagnosticsConfig {
    pub seed: u64,
    pub truth: TruthConfig,
    pub score_identity: ScoreIdentityConfig,
    pub martingale: MartingaleConfig,
    pub contraction: ContractionConfig,
    pub contraction_checks: ContractionChecks,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub checks: Vec<CheckOutcome>,
    pub score_identity: Vec<ScoreIdentity>,
    pub martingale: MartingaleReport,
    pub scaling: ScalingReport,
    pub contraction: ContractionReport,
}

impl DiagnosticsReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failed(&self) -> Vec<&str> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect()
    }
}

/// Score identity, martingale bounds and contraction on a 1D mixture truth.
pub fn run_diagnostics(cfg: &DiagnosticsConfig) -> Result<DiagnosticsReport> {
    let truth = cfg.truth.to_model()?;
    let model = &truth.model;
    let mut checks = Vec::new();

    let si = &cfg.score_identity;
    let noise = Normal::new(0.0, si.perturb_sd).map_err(|e| contract(e.to_string()))?;
    let mut prng = rng::stream(rng::derive_seed(cfg.seed, "perturb"), 0);
    let thetas: Vec<ParamVector> = (0..si.n_theta.max(1))
        .map(|i| {
            let mut t = truth.theta.clone();
            if i > 0 {
                t.0.iter_mut().for_each(|v| *v += noise.sample(&mut prng));
            }
            t
        })
        .collect();
    let offset = if si.corrupt { 1.0 } else { 0.0 };
    let score_identity = thetas
        .iter()
        .enumerate()
        .map(|(i, th)| {
            let seed = rng::derive_seed(cfg.seed, &format!("score-{i}"));
            score_identity_with(model, th, si.n_mc, seed, |b, x, out| {
                b.score_into(x, out);
                out.iter_mut().for_each(|v| *v += offset);
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let worst = score_identity.iter().map(ScoreIdentity::max_z).fold(0.0, f64::max);
    checks.push(CheckOutcome {
        name: "score_identity".into(),
        passed: worst <= si.z_max,
        detail: format!("max |mean|/stderr {worst:.3} over {} parameter points (limit {})", thetas.len(), si.z_max),
    });

    let mc = &cfg.martingale;
    let rcfg = ResampleConfig {
        n: mc.n,
        horizon: mc.horizon,
        chains: mc.chains,
        eta0: mc.eta0,
        seed: rng::derive_seed(cfg.seed, "martingale"),
        ..ResampleConfig::default()
    };
    let martingale = martingale_check(model, &truth.theta, &rcfg)?;
    checks.push(CheckOutcome {
        name: "martingale_l2".into(),
        passed: martingale.l2_holds(),
        detail: format!(
            "mean ‖θ_N − θ₀‖² {:.4e} vs bound {:.4e}; tail {:.4e} vs {:.4e}",
            martingale.mean_sq_displacement, martingale.bound, martingale.tail_mean_sq, martingale.tail_bound
        ),
    });
    checks.push(CheckOutcome {
        name: "markov".into(),
        passed: martingale.markov_holds(),
        detail: format!("{} radii checked", martingale.markov.len()),
    });
    checks.push(CheckOutcome {
        name: "martingale_drift".into(),
        passed: martingale.max_drift_z <= mc.z_max,
        detail: format!("max drift {:.3} stderr (limit {})", martingale.max_drift_z, mc.z_max),
    });
    let scaling = martingale_scaling(
        model,
        &truth.theta,
        &ResampleConfig {
            chains: mc.scaling_chains,
            ..rcfg.clone()
        },
        &mc.scaling_n,
        mc.scaling_horizon_factor,
    )?;
    checks.push(CheckOutcome {
        name: "martingale_scaling".into(),
        passed: scaling.ratio <= mc.scaling_factor,
        detail: format!("(n − 1)·E‖θ_N − θ₀‖² ratio {:.3} (limit {})", scaling.ratio, mc.scaling_factor),
    });

    let family = ModelHandle::Gmm(GmmSpec::new(cfg.truth.weights.len(), 1));
    let ccfg = ContractionConfig {
        seed: rng::derive_seed(cfg.seed, "contraction"),
        ..cfg.contraction.clone()
    };
    let contraction = contraction_experiment(&truth, &family, &FitOptions::default(), &rcfg, &ccfg)?;
    let cc = &cfg.contraction_checks;
    checks.push(CheckOutcome {
        name: "level_conditions".into(),
        passed: contraction.level_stable,
        detail: format!("level {:.4}, {} true clusters", contraction.level, contraction.k_true),
    });
    checks.push(CheckOutcome {
        name: "cluster_count_trend".into(),
        passed: contraction.wrong_k_trend_ok(cc.inversion_tol),
        detail: format!(
            "wrong-count fractions {:?}",
            contraction.records.iter().map(|r| r.frac_wrong_k).collect::<Vec<_>>()
        ),
    });
    let drop = contraction.discrepancy_drop();
    checks.push(CheckOutcome {
        name: "discrepancy_trend".into(),
        passed: drop.is_some_and(|d| d >= cc.min_discrepancy_drop),
        detail: format!("relative drop {drop:?} (minimum {})", cc.min_discrepancy_drop),
    });

    Ok(DiagnosticsReport {
        checks,
        score_identity,
        martingale,
        scaling,
        contraction,
    })
}
