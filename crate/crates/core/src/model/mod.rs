//! Differentiable density models.
//!
//! A model is a family `{f_θ}` over `ℝᵖ` with a flat unconstrained parameter
//! vector `θ ∈ ℝᵈ`. Each family exposes its log-density, the parameter score
//! `∇_θ log f_θ(x)`, an exact sampler and a maximum-likelihood fit.

mod flow;
mod gmm;

pub use flow::{CouplingFlowSpec, FlowFitOptions};
pub use gmm::{GmmFitOptions, GmmSpec};

use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

use crate::error::{contract, input, Flagged, Result};
use crate::points::PointSet;
use crate::rng::Stream;

/// Flat vector of unconstrained model parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn zeros(d: usize) -> Self {
        Self(vec![0.0; d])
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn sq_norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for ParamVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// A density family. The base distribution of the flow is always the
/// standard normal of dimension `dim()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ModelHandle {
    Gmm(GmmSpec),
    CouplingFlow(CouplingFlowSpec),
}

/// Options for [`ModelHandle::fit_mle`]; only the section matching the
/// family is used.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub gmm: GmmFitOptions,
    pub flow: FlowFitOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub theta: ParamVector,
    /// Mean log-likelihood after each iteration (EM) or epoch (flow).
    pub trace: Vec<f64>,
}

impl ModelHandle {
    /// Dimension `p` of the sample space.
    pub fn dim(&self) -> usize {
        match self {
            ModelHandle::Gmm(s) => s.dim,
            ModelHandle::CouplingFlow(s) => s.dim,
        }
    }

    /// Number of parameters `d`.
    pub fn n_params(&self) -> usize {
        match self {
            ModelHandle::Gmm(s) => s.n_params(),
            ModelHandle::CouplingFlow(s) => s.n_params(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelHandle::Gmm(s) => s.validate(),
            ModelHandle::CouplingFlow(s) => s.validate(),
        }
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.n_params() {
            return Err(contract(format!(
                "parameter vector has length {}, model expects {}",
                theta.len(),
                self.n_params()
            )));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(input("parameter vector has non-finite entries"));
        }
        Ok(())
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(contract(format!(
                "point has dimension {}, model expects {}",
                x.len(),
                self.dim()
            )));
        }
        if x.iter().any(|v| v.is_nan()) {
            return Err(input("point has NaN coordinates"));
        }
        Ok(())
    }

    /// Binds a parameter vector, decoding whatever the family needs once so
    /// repeated evaluations at the same `θ` are cheap.
    pub fn bind<'a>(&'a self, theta: &'a [f64]) -> Result<Bound<'a>> {
        self.validate()?;
        self.check_theta(theta)?;
        Ok(self.bind_unchecked(theta))
    }

    pub(crate) fn bind_unchecked<'a>(&'a self, theta: &'a [f64]) -> Bound<'a> {
        match self {
            ModelHandle::Gmm(s) => Bound::Gmm(s.decode(theta)),
            ModelHandle::CouplingFlow(s) => Bound::Flow(s, theta),
        }
    }

    /// `log f_θ(x)`.
    pub fn log_density(&self, theta: &ParamVector, x: &[f64]) -> Result<f64> {
        let bound = self.bind(theta)?;
        self.check_point(x)?;
        Ok(bound.log_density(x))
    }

    /// `∇_θ log f_θ(x)`.
    pub fn score(&self, theta: &ParamVector, x: &[f64]) -> Result<ParamVector> {
        let bound = self.bind(theta)?;
        self.check_point(x)?;
        let mut out = ParamVector::zeros(self.n_params());
        bound.score_into(x, &mut out);
        Ok(out)
    }

    /// One draw from `f_θ`.
    pub fn sample(&self, theta: &ParamVector, rng: &mut Stream) -> Result<Vec<f64>> {
        let bound = self.bind(theta)?;
        let mut x = vec![0.0; self.dim()];
        bound.sample_into(rng, &mut x);
        Ok(x)
    }

    /// Maximum-likelihood fit: EM for the mixture, mini-batch Adam for the flow.
    pub fn fit_mle(&self, data: &PointSet, opts: &FitOptions) -> Result<Flagged<FitResult>> {
        self.validate()?;
        if data.is_empty() {
            return Err(input("cannot fit on an empty dataset"));
        }
        if data.dim() != self.dim() {
            return Err(contract(format!(
                "data has dimension {}, model expects {}",
                data.dim(),
                self.dim()
            )));
        }
        if !data.all_finite() {
            return Err(input("data contains non-finite values"));
        }
        match self {
            ModelHandle::Gmm(s) => s.fit_em(data, &opts.gmm),
            ModelHandle::CouplingFlow(s) => s.fit_adam(data, &opts.flow),
        }
    }

    /// Log-density at every row of `data`.
    pub fn log_density_batch(&self, theta: &ParamVector, data: &PointSet) -> Result<Vec<f64>> {
        let bound = self.bind(theta)?;
        if data.dim() != self.dim() {
            return Err(contract("data dimension does not match model"));
        }
        Ok(data.rows().map(|x| bound.log_density(x)).collect())
    }
}

/// A model with a bound parameter vector.
pub enum Bound<'a> {
    Gmm(gmm::GmmParams),
    Flow(&'a CouplingFlowSpec, &'a [f64]),
}

impl Bound<'_> {
    pub fn log_density(&self, x: &[f64]) -> f64 {
        match self {
            Bound::Gmm(g) => g.log_density(x),
            Bound::Flow(spec, theta) => spec.log_density(theta, x),
        }
    }

    /// Writes the score into `out` (overwriting it) and returns `log f_θ(x)`.
    pub fn score_into(&self, x: &[f64], out: &mut [f64]) -> f64 {
        match self {
            Bound::Gmm(g) => g.score_into(x, out),
            Bound::Flow(spec, theta) => spec.score_into(theta, x, out),
        }
    }

    pub fn sample_into(&self, rng: &mut Stream, out: &mut [f64]) {
        match self {
            Bound::Gmm(g) => g.sample_into(rng, out),
            Bound::Flow(spec, theta) => spec.sample_into(theta, rng, out),
        }
    }
}

/// Model descriptor plus parameters; the on-disk form of a fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    #[serde(flatten)]
    pub model: ModelHandle,
    pub theta: ParamVector,
}

impl FittedModel {
    pub fn new(model: ModelHandle, theta: ParamVector) -> Result<Self> {
        model.validate()?;
        model.check_theta(&theta)?;
        Ok(Self { model, theta })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let fm: FittedModel = serde_json::from_str(s)?;
        Self::new(fm.model, fm.theta)
    }
}

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|a| (a - m).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_is_bit_exact() {
        let model = ModelHandle::Gmm(GmmSpec::new(2, 2));
        let theta: ParamVector = (0..model.n_params())
            .map(|i| (i as f64 * 0.1).sin() / 3.0 + 1e-17 * i as f64)
            .collect::<Vec<_>>()
            .into();
        let fm = FittedModel::new(model, theta).unwrap();
        let back = FittedModel::from_json(&fm.to_json().unwrap()).unwrap();
        assert_eq!(fm.model, back.model);
        for (a, b) in fm.theta.iter().zip(back.theta.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        let s = fm.to_json().unwrap();
        assert!(s.contains("\"family\": \"gmm\""));
    }

    #[test]
    fn dimension_mismatch_is_contract_error() {
        let model = ModelHandle::Gmm(GmmSpec::new(1, 2));
        let theta = ParamVector::zeros(model.n_params());
        assert!(matches!(
            model.log_density(&theta, &[0.0]),
            Err(crate::Error::Contract(_))
        ));
        assert!(matches!(
            model.log_density(&ParamVector::zeros(3), &[0.0, 0.0]),
            Err(crate::Error::Contract(_))
        ));
        assert!(matches!(
            model.log_density(&theta, &[f64::NAN, 0.0]),
            Err(crate::Error::Input(_))
        ));
    }

    #[test]
    fn log_sum_exp_handles_extremes() {
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]), f64::NEG_INFINITY);
        assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
    }
}
