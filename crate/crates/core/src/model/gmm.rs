//! Full-covariance Gaussian mixture in an unconstrained parameterisation.
//!
//! Layout of `θ` for `K` components in `p` dimensions:
//!
//! ```text
//! [ logits (K) | means (K·p) | per component: log-diag (p), strict lower (p(p−1)/2) ]
//! ```
//!
//! Mixture weights are `softmax(logits)` and each covariance is `L Lᵀ` with
//! `L` lower triangular, `L_ii = exp(log-diag_i)` and the strict lower
//! triangle stored row by row. Any finite `θ` yields a valid mixture.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{log_sum_exp, FitResult, ParamVector, LN_2PI};
use crate::error::{contract, input, Flagged, Result, Warning};
use crate::points::{sq_dist, PointSet};
use crate::rng::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GmmSpec {
    pub n_components: usize,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GmmFitOptions {
    pub max_iter: usize,
    /// Stop when the mean log-likelihood improves by less than this.
    pub tol: f64,
    /// Lower bound on every Cholesky diagonal entry.
    pub chol_floor: f64,
    pub seed: u64,
}

impl Default for GmmFitOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            tol: 1e-9,
            chol_floor: 1e-6,
            seed: 0,
        }
    }
}

impl GmmSpec {
    pub fn new(n_components: usize, dim: usize) -> Self {
        Self { n_components, dim }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_components == 0 || self.dim == 0 {
            return Err(contract("mixture needs at least one component and dimension"));
        }
        Ok(())
    }

    fn chol_block(&self) -> usize {
        self.dim + self.dim * (self.dim - 1) / 2
    }

    pub fn n_params(&self) -> usize {
        let (k, p) = (self.n_components, self.dim);
        k + k * p + k * self.chol_block()
    }

    fn mean_offset(&self, k: usize) -> usize {
        self.n_components + k * self.dim
    }

    fn chol_offset(&self, k: usize) -> usize {
        self.n_components + self.n_components * self.dim + k * self.chol_block()
    }

    /// Encodes weights, means and dense lower-triangular Cholesky factors.
    pub fn encode(&self, weights: &[f64], means: &[f64], chols: &[f64]) -> ParamVector {
        let (kk, p) = (self.n_components, self.dim);
        let mut theta = vec![0.0; self.n_params()];
        for k in 0..kk {
            theta[k] = weights[k].max(1e-300).ln();
            theta[self.mean_offset(k)..self.mean_offset(k) + p]
                .copy_from_slice(&means[k * p..(k + 1) * p]);
            let l = &chols[k * p * p..(k + 1) * p * p];
            let off = self.chol_offset(k);
            for i in 0..p {
                theta[off + i] = l[i * p + i].ln();
            }
            let mut pos = off + p;
            for i in 1..p {
                for j in 0..i {
                    theta[pos] = l[i * p + j];
                    pos += 1;
                }
            }
        }
        ParamVector(theta)
    }

    pub(crate) fn decode(&self, theta: &[f64]) -> GmmParams {
        let (kk, p) = (self.n_components, self.dim);
        let logits = &theta[..kk];
        let lse = log_sum_exp(logits);
        let log_weights: Vec<f64> = logits.iter().map(|w| w - lse).collect();
        let weights: Vec<f64> = log_weights.iter().map(|v| v.exp()).collect();
        let mut cum_weights = Vec::with_capacity(kk);
        let mut acc = 0.0;
        for w in &weights {
            acc += w;
            cum_weights.push(acc);
        }
        let means = theta[kk..kk + kk * p].to_vec();
        let mut chol = vec![0.0; kk * p * p];
        let mut log_det = vec![0.0; kk];
        for k in 0..kk {
            let off = self.chol_offset(k);
            let l = &mut chol[k * p * p..(k + 1) * p * p];
            for i in 0..p {
                l[i * p + i] = theta[off + i].exp();
                log_det[k] += theta[off + i];
            }
            let mut pos = off + p;
            for i in 1..p {
                for j in 0..i {
                    l[i * p + j] = theta[pos];
                    pos += 1;
                }
            }
        }
        GmmParams {
            spec: *self,
            log_weights,
            weights,
            cum_weights,
            means,
            chol,
            log_det,
        }
    }

    pub(crate) fn fit_em(&self, data: &PointSet, opts: &GmmFitOptions) -> Result<Flagged<FitResult>> {
        let (kk, p, n) = (self.n_components, self.dim, data.len());
        if n < kk {
            return Err(input(format!("{n} points cannot support {kk} components")));
        }
        if !(opts.chol_floor > 0.0) {
            return Err(contract("Cholesky floor must be positive"));
        }
        let mut floored = vec![false; kk];

        // k-means++ seeding for the means, pooled covariance everywhere
        let mut rng = rng::stream(rng::derive_seed(opts.seed, "gmm-init"), 0);
        let centers = kmeans_pp(data, kk, &mut rng);
        let pooled = weighted_cov(data, &vec![1.0; n], &column_means(data));
        let (pooled_chol, fl) = cholesky_floored(&pooled, p, opts.chol_floor);
        if fl {
            floored.iter_mut().for_each(|f| *f = true);
        }
        let mut chols = Vec::with_capacity(kk * p * p);
        for _ in 0..kk {
            chols.extend_from_slice(&pooled_chol);
        }
        let mut weights = vec![1.0 / kk as f64; kk];
        let mut means = centers;

        let mut theta = self.encode(&weights, &means, &chols);
        let mut trace = Vec::new();
        let mut resp = vec![0.0; n * kk];
        let mut buf = vec![0.0; kk];
        let mut converged = false;

        for iter in 0..opts.max_iter.max(1) {
            // E-step at the current θ
            let g = self.decode(&theta);
            let mut ll = 0.0;
            for (i, x) in data.rows().enumerate() {
                for (k, b) in buf.iter_mut().enumerate() {
                    *b = g.log_weights[k] + g.component_log_pdf(k, x);
                }
                let lse = log_sum_exp(&buf);
                ll += lse;
                for k in 0..kk {
                    resp[i * kk + k] = (buf[k] - lse).exp();
                }
            }
            let ll = ll / n as f64;
            let prev = trace.last().copied();
            trace.push(ll);
            if let Some(prev) = prev {
                if (ll - prev).abs() < opts.tol {
                    converged = true;
                    break;
                }
            }
            if iter + 1 == opts.max_iter.max(1) {
                break;
            }

            // M-step
            for k in 0..kk {
                let r: Vec<f64> = (0..n).map(|i| resp[i * kk + k]).collect();
                let nk: f64 = r.iter().sum();
                weights[k] = nk / n as f64;
                if nk < 1e-10 * n as f64 {
                    // empty component keeps its previous shape
                    continue;
                }
                let mut mu = vec![0.0; p];
                for (i, x) in data.rows().enumerate() {
                    for d in 0..p {
                        mu[d] += r[i] * x[d];
                    }
                }
                mu.iter_mut().for_each(|m| *m /= nk);
                let cov = weighted_cov(data, &r, &mu);
                let (l, fl) = cholesky_floored(&cov, p, opts.chol_floor);
                floored[k] |= fl;
                means[k * p..(k + 1) * p].copy_from_slice(&mu);
                chols[k * p * p..(k + 1) * p * p].copy_from_slice(&l);
            }
            theta = self.encode(&weights, &means, &chols);
        }

        let mut warnings: Vec<Warning> = floored
            .iter()
            .enumerate()
            .filter(|(_, &f)| f)
            .map(|(component, _)| Warning::CovarianceFloored { component })
            .collect();
        if !converged {
            warnings.push(Warning::NotConverged {
                iterations: trace.len(),
            });
        }
        Ok(Flagged {
            value: FitResult { theta, trace },
            warnings,
        })
    }
}

/// Decoded mixture parameters.
#[derive(Debug, Clone)]
pub struct GmmParams {
    spec: GmmSpec,
    log_weights: Vec<f64>,
    weights: Vec<f64>,
    cum_weights: Vec<f64>,
    means: Vec<f64>,
    chol: Vec<f64>,
    log_det: Vec<f64>,
}

impl GmmParams {
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mean(&self, k: usize) -> &[f64] {
        let p = self.spec.dim;
        &self.means[k * p..(k + 1) * p]
    }

    /// Dense row-major lower Cholesky factor of component `k`.
    pub fn chol(&self, k: usize) -> &[f64] {
        let p = self.spec.dim;
        &self.chol[k * p * p..(k + 1) * p * p]
    }

    /// Solves `L z = x − μ_k`; returns `‖z‖²`.
    fn whiten(&self, k: usize, x: &[f64], z: &mut [f64]) -> f64 {
        let p = self.spec.dim;
        let l = self.chol(k);
        let mu = self.mean(k);
        let mut q = 0.0;
        for i in 0..p {
            let mut s = x[i] - mu[i];
            for j in 0..i {
                s -= l[i * p + j] * z[j];
            }
            z[i] = s / l[i * p + i];
            q += z[i] * z[i];
        }
        q
    }

    fn component_log_pdf(&self, k: usize, x: &[f64]) -> f64 {
        let p = self.spec.dim;
        let mut z = [0.0; 8];
        let q = if p <= 8 {
            self.whiten(k, x, &mut z[..p])
        } else {
            self.whiten(k, x, &mut vec![0.0; p])
        };
        -0.5 * p as f64 * LN_2PI - self.log_det[k] - 0.5 * q
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let kk = self.spec.n_components;
        if kk == 1 {
            return self.component_log_pdf(0, x);
        }
        let terms: Vec<f64> = (0..kk)
            .map(|k| self.log_weights[k] + self.component_log_pdf(k, x))
            .collect();
        log_sum_exp(&terms)
    }

    pub fn score_into(&self, x: &[f64], out: &mut [f64]) -> f64 {
        let spec = self.spec;
        let (kk, p) = (spec.n_components, spec.dim);
        let mut z = vec![0.0; p];
        let mut u = vec![0.0; p];
        let mut terms = vec![0.0; kk];
        for (k, t) in terms.iter_mut().enumerate() {
            *t = self.log_weights[k] + self.component_log_pdf(k, x);
        }
        let lse = log_sum_exp(&terms);
        for k in 0..kk {
            let r = (terms[k] - lse).exp();
            out[k] = r - self.weights[k];

            self.whiten(k, x, &mut z);
            // u = L⁻ᵀ z = Σ⁻¹ (x − μ)
            let l = self.chol(k);
            for i in (0..p).rev() {
                let mut s = z[i];
                for j in i + 1..p {
                    s -= l[j * p + i] * u[j];
                }
                u[i] = s / l[i * p + i];
            }
            let mo = spec.mean_offset(k);
            for i in 0..p {
                out[mo + i] = r * u[i];
            }
            let co = spec.chol_offset(k);
            for i in 0..p {
                out[co + i] = r * (l[i * p + i] * u[i] * z[i] - 1.0);
            }
            let mut pos = co + p;
            for i in 1..p {
                for j in 0..i {
                    out[pos] = r * u[i] * z[j];
                    pos += 1;
                }
            }
        }
        lse
    }

    pub fn sample_into(&self, rng: &mut Stream, out: &mut [f64]) {
        self.sample_labeled(rng, out);
    }

    /// Draws a point and returns the component it came from.
    pub(crate) fn sample_labeled(&self, rng: &mut Stream, out: &mut [f64]) -> usize {
        let p = self.spec.dim;
        let total = *self.cum_weights.last().unwrap();
        let u: f64 = rng.random::<f64>() * total;
        let k = self
            .cum_weights
            .iter()
            .position(|&c| u < c)
            .unwrap_or(self.spec.n_components - 1);
        let l = self.chol(k);
        let mu = self.mean(k);
        let mut eps = [0.0; 8];
        let mut heap;
        let eps: &mut [f64] = if p <= 8 {
            &mut eps[..p]
        } else {
            heap = vec![0.0; p];
            &mut heap
        };
        for e in eps.iter_mut() {
            *e = rng.sample(StandardNormal);
        }
        for i in 0..p {
            let mut s = mu[i];
            for j in 0..=i {
                s += l[i * p + j] * eps[j];
            }
            out[i] = s;
        }
        k
    }
}

fn column_means(data: &PointSet) -> Vec<f64> {
    let p = data.dim();
    let mut m = vec![0.0; p];
    for x in data.rows() {
        for d in 0..p {
            m[d] += x[d];
        }
    }
    m.iter_mut().for_each(|v| *v /= data.len() as f64);
    m
}

fn weighted_cov(data: &PointSet, w: &[f64], mu: &[f64]) -> Vec<f64> {
    let p = data.dim();
    let mut cov = vec![0.0; p * p];
    let mut total = 0.0;
    for (x, &wi) in data.rows().zip(w) {
        total += wi;
        for a in 0..p {
            let da = x[a] - mu[a];
            for b in 0..=a {
                cov[a * p + b] += wi * da * (x[b] - mu[b]);
            }
        }
    }
    for a in 0..p {
        for b in 0..=a {
            let v = cov[a * p + b] / total;
            cov[a * p + b] = v;
            cov[b * p + a] = v;
        }
    }
    cov
}

/// Cholesky factor with every diagonal entry clamped to at least `floor`.
/// Returns whether the clamp fired.
pub(crate) fn cholesky_floored(cov: &[f64], p: usize, floor: f64) -> (Vec<f64>, bool) {
    let mut l = vec![0.0; p * p];
    let mut floored = false;
    for j in 0..p {
        let mut d = cov[j * p + j];
        for k in 0..j {
            d -= l[j * p + k] * l[j * p + k];
        }
        if !(d >= floor * floor) {
            d = floor * floor;
            floored = true;
        }
        let ljj = d.sqrt();
        l[j * p + j] = ljj;
        for i in j + 1..p {
            let mut s = cov[i * p + j];
            for k in 0..j {
                s -= l[i * p + k] * l[j * p + k];
            }
            l[i * p + j] = s / ljj;
        }
    }
    (l, floored)
}

fn kmeans_pp(data: &PointSet, k: usize, rng: &mut Stream) -> Vec<f64> {
    let n = data.len();
    let p = data.dim();
    let mut centers = Vec::with_capacity(k * p);
    let first = rng.random_range(0..n);
    centers.extend_from_slice(data.row(first));
    let mut d2: Vec<f64> = data.rows().map(|x| sq_dist(x, data.row(first))).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &v) in d2.iter().enumerate() {
                acc += v;
                if acc > target {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = data.row(pick).to_vec();
        for (i, x) in data.rows().enumerate() {
            d2[i] = d2[i].min(sq_dist(x, &c));
        }
        centers.extend_from_slice(&c);
    }
    centers
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FitOptions, ModelHandle};

    fn one_d(mu: f64, log_sigma: f64) -> (ModelHandle, ParamVector) {
        (
            ModelHandle::Gmm(GmmSpec::new(1, 1)),
            ParamVector(vec![0.0, mu, log_sigma]),
        )
    }

    #[test]
    fn parameter_count() {
        assert_eq!(GmmSpec::new(3, 2).n_params(), 3 + 6 + 3 * 3);
        assert_eq!(GmmSpec::new(24, 2).n_params(), 24 + 48 + 72);
        assert_eq!(GmmSpec::new(2, 4).n_params(), 2 + 8 + 2 * (4 + 6));
    }

    #[test]
    fn standard_normal_at_mode() {
        let m = ModelHandle::Gmm(GmmSpec::new(1, 2));
        let theta = ParamVector::zeros(m.n_params());
        let v = m.log_density(&theta, &[0.0, 0.0]).unwrap();
        assert!((v + (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);
        assert!((v + 1.837877).abs() < 1e-6);
    }

    #[test]
    fn univariate_closed_form() {
        let (m, theta) = one_d(0.0, 0.0);
        let v = m.log_density(&theta, &[1.0]).unwrap();
        assert!((v - (-0.5 * LN_2PI - 0.5)).abs() < 1e-12);
        assert!((v + 1.418939).abs() < 1e-6);
    }

    #[test]
    fn symmetric_pair_at_origin() {
        let m = ModelHandle::Gmm(GmmSpec::new(2, 1));
        let theta = ParamVector(vec![0.0, 0.0, -1.0, 1.0, 0.0, 0.0]);
        let v = m.log_density(&theta, &[0.0]).unwrap();
        // 0.5 φ(−1) + 0.5 φ(1) = φ(1)
        let phi1 = (-0.5f64).exp() / (2.0 * std::f64::consts::PI).sqrt();
        assert!((v - phi1.ln()).abs() < 1e-12);
        assert!((v + 1.418939).abs() < 1e-6);
    }

    #[test]
    fn score_of_mean_coordinate() {
        let (m, theta) = one_d(0.0, 0.0);
        let s0 = m.score(&theta, &[0.0]).unwrap();
        assert_eq!(s0[1], 0.0);
        let s2 = m.score(&theta, &[2.0]).unwrap();
        assert!((s2[1] - 2.0).abs() < 1e-12);
        // d/d log σ = z² − 1
        assert!((s2[2] - 3.0).abs() < 1e-12);
        // single component: logit score is identically zero
        assert_eq!(s2[0], 0.0);
    }

    #[test]
    fn sampling_is_deterministic() {
        let m = ModelHandle::Gmm(GmmSpec::new(3, 2));
        let theta: ParamVector = (0..m.n_params()).map(|i| (i as f64).cos() * 0.3).collect::<Vec<_>>().into();
        let a = m.sample(&theta, &mut rng::stream(5, 0)).unwrap();
        let b = m.sample(&theta, &mut rng::stream(5, 0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn saturated_logit_picks_component() {
        let spec = GmmSpec::new(3, 1);
        // component 1 at 100, others at −100 and 0
        let theta = ParamVector(vec![0.0, 50.0, 0.0, -100.0, 100.0, 0.0, 0.0, 0.0, 0.0]);
        let g = spec.decode(&theta);
        let mut r = rng::stream(1, 0);
        for _ in 0..200 {
            let mut x = [0.0];
            let k = g.sample_labeled(&mut r, &mut x);
            assert_eq!(k, 1);
            assert!((x[0] - 100.0).abs() < 10.0);
        }
    }

    #[test]
    fn sample_mean_within_clt_bound() {
        let (m, theta) = one_d(3.0, 0.0);
        let g = m.bind(&theta).unwrap();
        let mut r = rng::stream(11, 0);
        let n = 100_000;
        let mut x = [0.0];
        let mut s = 0.0;
        for _ in 0..n {
            g.sample_into(&mut r, &mut x);
            s += x[0];
        }
        let mean = s / n as f64;
        assert!((mean - 3.0).abs() < 4.0 / (n as f64).sqrt(), "mean {mean}");
    }

    #[test]
    fn single_component_fit_is_sample_mean() {
        let m = ModelHandle::Gmm(GmmSpec::new(1, 2));
        let data = PointSet::from_rows(&[[1.0, 2.0], [3.0, -1.0], [0.5, 0.25], [7.0, 1.5]]).unwrap();
        let fit = m.fit_mle(&data, &FitOptions::default()).unwrap().value;
        let mut mean = [0.0; 2];
        for x in data.rows() {
            mean[0] += x[0];
            mean[1] += x[1];
        }
        assert_eq!(fit.theta[1], mean[0] / 4.0);
        assert_eq!(fit.theta[2], mean[1] / 4.0);
    }

    #[test]
    fn em_fit_recovers_mean_and_is_monotone() {
        let (truth, theta) = one_d(2.0, 0.0);
        let g = truth.bind(&theta).unwrap();
        let mut r = rng::stream(3, 0);
        let mut data = PointSet::with_capacity(1, 500);
        let mut x = [0.0];
        for _ in 0..500 {
            g.sample_into(&mut r, &mut x);
            data.push(&x);
        }
        let fit = truth.fit_mle(&data, &FitOptions::default()).unwrap().value;
        assert!((fit.theta[1] - 2.0).abs() < 0.2);

        let m3 = ModelHandle::Gmm(GmmSpec::new(3, 1));
        let fit3 = m3.fit_mle(&data, &FitOptions::default()).unwrap();
        for w in fit3.value.trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-10, "trace decreased: {w:?}");
        }
    }

    #[test]
    fn degenerate_cluster_is_floored() {
        let m = ModelHandle::Gmm(GmmSpec::new(2, 1));
        let data = PointSet::from_rows(&[[0.0], [0.0], [0.0], [5.0], [5.0], [5.0]]).unwrap();
        let fit = m.fit_mle(&data, &FitOptions::default()).unwrap();
        assert!(fit
            .warnings
            .iter()
            .any(|w| matches!(w, Warning::CovarianceFloored { .. })));
        assert!(fit.value.theta.is_finite());
    }

    #[test]
    fn too_few_points_for_components() {
        let m = ModelHandle::Gmm(GmmSpec::new(3, 1));
        let data = PointSet::from_rows(&[[0.0], [1.0]]).unwrap();
        assert!(matches!(
            m.fit_mle(&data, &FitOptions::default()),
            Err(crate::Error::Input(_))
        ));
    }

    #[test]
    fn weights_sum_to_one() {
        let spec = GmmSpec::new(5, 2);
        let theta: Vec<f64> = (0..spec.n_params()).map(|i| (i as f64 * 1.7).sin() * 20.0).collect();
        let g = spec.decode(&theta);
        assert!((g.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
