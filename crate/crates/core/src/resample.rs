//! Score-based predictive resampling.
//!
//! Each chain starts at the trained parameter `θ₀` and repeats, for
//! `k = 1..=N`,
//!
//! ```text
//! Y_k ~ f_{θ_{k−1}}
//! θ_k = θ_{k−1} + η_k · clip(s(Y_k; θ_{k−1})),   η_k = η₀ / (n + k − o)
//! ```
//!
//! The score has zero mean under `f_θ`, so `θ_k` is a martingale whose
//! terminal value is one draw from the martingale posterior.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::model::{ModelHandle, ParamVector};
use crate::rng;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NanPolicy {
    #[default]
    ReplaceWithZero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ResampleConfig {
    /// Training sample size; drives the learning-rate schedule.
    pub n: usize,
    /// Number of update steps per chain.
    #[serde(alias = "N")]
    pub horizon: usize,
    /// Number of independent chains.
    #[serde(alias = "T")]
    pub chains: usize,
    pub eta0: f64,
    /// `o` in `η_k = η₀ / (n + k − o)`; either 0 or 1.
    pub schedule_offset: u32,
    /// Per-coordinate bound applied to the raw score before scaling by `η`.
    pub clip: f64,
    pub nan_policy: NanPolicy,
    pub seed: u64,
}

impl Default for ResampleConfig {
    fn default() -> Self {
        Self {
            n: 2,
            horizon: 3000,
            chains: 1000,
            eta0: 0.02,
            schedule_offset: 1,
            clip: 100.0,
            nan_policy: NanPolicy::ReplaceWithZero,
            seed: 0,
        }
    }
}

impl ResampleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(contract("resampling needs a training size n ≥ 2"));
        }
        if self.chains == 0 {
            return Err(contract("resampling needs at least one chain"));
        }
        if !(self.eta0 > 0.0 && self.eta0.is_finite()) {
            return Err(contract("eta0 must be positive and finite"));
        }
        if self.schedule_offset > 1 {
            return Err(contract("schedule offset must be 0 or 1"));
        }
        if !(self.clip >= 0.0) {
            return Err(contract("clip bound must be non-negative"));
        }
        Ok(())
    }

    /// Learning rate at step `k ≥ 1`.
    pub fn step_size(&self, k: usize) -> f64 {
        self.eta0 / (self.n as f64 + k as f64 - self.schedule_offset as f64)
    }

    /// `Σ_{k=1}^{N} η_k²`, the exact multiplier of the score second moment
    /// in the expected squared displacement.
    pub fn sum_sq_steps(&self) -> f64 {
        (1..=self.horizon).map(|k| self.step_size(k).powi(2)).sum()
    }

    fn chain_seed(&self) -> u64 {
        rng::derive_seed(self.seed, "resample")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainResult {
    pub theta_final: ParamVector,
    pub n_clipped: u64,
    pub n_nan_replaced: u64,
    /// `‖θ_N − θ₀‖²`.
    pub displacement_sq: f64,
}

/// Runs chain `chain_index`, calling `observe(k, θ_k)` after every step
/// (and once with `k = 0` before the first).
pub fn resample_chain_observed<F>(
    model: &ModelHandle,
    theta0: &ParamVector,
    cfg: &ResampleConfig,
    chain_index: usize,
    mut observe: F,
) -> Result<ChainResult>
where
    F: FnMut(usize, &[f64]),
{
    cfg.validate()?;
    model.bind(theta0)?;
    if chain_index >= cfg.chains {
        return Err(contract(format!(
            "chain index {chain_index} out of range for {} chains",
            cfg.chains
        )));
    }
    let d = model.n_params();
    let mut rng = rng::stream(cfg.chain_seed(), chain_index as u64);
    let mut theta = theta0.clone();
    let mut y = vec![0.0; model.dim()];
    let mut score = vec![0.0; d];
    let (mut n_clipped, mut n_nan) = (0u64, 0u64);
    observe(0, &theta);
    for k in 1..=cfg.horizon {
        {
            let bound = model.bind_unchecked(&theta);
            bound.sample_into(&mut rng, &mut y);
            bound.score_into(&y, &mut score);
        }
        let eta = cfg.step_size(k);
        for (t, s) in theta.iter_mut().zip(score.iter_mut()) {
            if s.is_nan() {
                *s = 0.0;
                n_nan += 1;
            } else if s.abs() > cfg.clip {
                *s = s.signum() * cfg.clip;
                n_clipped += 1;
            }
            *t += eta * *s;
        }
        if !theta.is_finite() {
            return Err(Error::Internal(format!(
                "non-finite parameter at step {k} of chain {chain_index}"
            )));
        }
        observe(k, &theta);
    }
    let displacement_sq = theta
        .iter()
        .zip(theta0.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(ChainResult {
        theta_final: theta,
        n_clipped,
        n_nan_replaced: n_nan,
        displacement_sq,
    })
}

/// One predictive-resampling chain; deterministic in `(cfg.seed, chain_index)`.
pub fn resample_chain(
    model: &ModelHandle,
    theta0: &ParamVector,
    cfg: &ResampleConfig,
    chain_index: usize,
) -> Result<ChainResult> {
    resample_chain_observed(model, theta0, cfg, chain_index, |_, _| {})
}

/// All `cfg.chains` chains on the current rayon pool, ordered by chain index.
/// Output does not depend on the pool size.
pub fn resample_ensemble(
    model: &ModelHandle,
    theta0: &ParamVector,
    cfg: &ResampleConfig,
) -> Result<Vec<ChainResult>> {
    cfg.validate()?;
    model.bind(theta0)?;
    (0..cfg.chains)
        .into_par_iter()
        .map(|t| resample_chain(model, theta0, cfg, t))
        .collect()
}

/// Final parameters of an ensemble as a row-major `T × d` matrix.
pub fn ensemble_matrix(chains: &[ChainResult]) -> Vec<f64> {
    chains
        .iter()
        .flat_map(|c| c.theta_final.iter().copied())
        .collect()
}
