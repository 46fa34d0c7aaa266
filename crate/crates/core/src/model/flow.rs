//! Affine coupling flow with hand-written parameter gradients.
//!
//! The flow maps data to latent space, `z = g_L ∘ … ∘ g_1 (x)`, with
//! `z ~ N(0, I)`. Layer `l` splits coordinates into a conditioning half
//! `x_c` and a transformed half `x_t` (halves alternate between layers) and
//! computes
//!
//! ```text
//! h   = tanh(W₁ x_c + b₁)
//! s   = B · tanh(W_s h + b_s)        (log-scale, bounded to [−B, B])
//! t   = W_t h + b_t
//! y_t = x_t ⊙ exp(s) + t,   y_c = x_c
//! ```
//!
//! so `log f(x) = Σ log φ(z_i) + Σ_layers Σ s`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{FitResult, ParamVector, LN_2PI};
use crate::error::{contract, Flagged, Result};
use crate::points::PointSet;
use crate::rng::{self, Stream};

fn default_scale_bound() -> f64 {
    3.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingFlowSpec {
    pub dim: usize,
    pub n_layers: usize,
    pub hidden: usize,
    #[serde(default = "default_scale_bound")]
    pub scale_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowFitOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Global gradient-norm clip applied to each mini-batch gradient.
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for FlowFitOptions {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 256,
            learning_rate: 5e-3,
            grad_clip: 10.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy)]
struct Layer {
    cond: (usize, usize),
    trans: (usize, usize),
    offset: usize,
}

impl Layer {
    fn nc(&self) -> usize {
        self.cond.1 - self.cond.0
    }
    fn nt(&self) -> usize {
        self.trans.1 - self.trans.0
    }
}

// Per-layer activations kept for the backward pass.
struct Tape {
    input: Vec<f64>,
    hidden: Vec<f64>,
    squash: Vec<f64>,
    scale: Vec<f64>,
}

impl CouplingFlowSpec {
    pub fn new(dim: usize, n_layers: usize, hidden: usize) -> Self {
        Self {
            dim,
            n_layers,
            hidden,
            scale_bound: default_scale_bound(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(contract("coupling flow needs dimension ≥ 2"));
        }
        if self.n_layers == 0 || self.hidden == 0 {
            return Err(contract("coupling flow needs at least one layer and hidden unit"));
        }
        if !(self.scale_bound > 0.0 && self.scale_bound.is_finite()) {
            return Err(contract("scale bound must be positive and finite"));
        }
        Ok(())
    }

    fn layer_params(&self, nc: usize, nt: usize) -> usize {
        let h = self.hidden;
        h * nc + h + 2 * (nt * h + nt)
    }

    fn layer(&self, l: usize) -> Layer {
        let half = self.dim / 2;
        let (cond, trans) = if l.is_multiple_of(2) {
            ((0, half), (half, self.dim))
        } else {
            ((half, self.dim), (0, half))
        };
        let offset = (0..l)
            .map(|j| {
                let (a, b) = if j % 2 == 0 {
                    (half, self.dim - half)
                } else {
                    (self.dim - half, half)
                };
                self.layer_params(a, b)
            })
            .sum();
        Layer {
            cond,
            trans,
            offset,
        }
    }

    pub fn n_params(&self) -> usize {
        let half = self.dim / 2;
        (0..self.n_layers)
            .map(|l| {
                if l.is_multiple_of(2) {
                    self.layer_params(half, self.dim - half)
                } else {
                    self.layer_params(self.dim - half, half)
                }
            })
            .sum()
    }

    /// Random initial parameters: unit-variance input weights, small output weights.
    pub fn init_theta(&self, seed: u64) -> ParamVector {
        let mut rng = rng::stream(rng::derive_seed(seed, "flow-init"), 0);
        let mut theta = vec![0.0; self.n_params()];
        let h = self.hidden;
        for l in 0..self.n_layers {
            let ly = self.layer(l);
            let (nc, nt) = (ly.nc(), ly.nt());
            let o = ly.offset;
            let scale_in = 1.0 / (nc as f64).sqrt();
            for v in &mut theta[o..o + h * nc] {
                *v = scale_in * rng.sample::<f64, _>(StandardNormal);
            }
            let ws = o + h * nc + h;
            for v in &mut theta[ws..ws + nt * h] {
                *v = 0.01 * rng.sample::<f64, _>(StandardNormal);
            }
            let wt = ws + nt * h + nt;
            for v in &mut theta[wt..wt + nt * h] {
                *v = 0.01 * rng.sample::<f64, _>(StandardNormal);
            }
        }
        ParamVector(theta)
    }

    /// Conditioner networks of layer `ly` at conditioning input `xc`.
    #[allow(clippy::too_many_arguments)]
    fn nets(&self, ly: &Layer, theta: &[f64], xc: &[f64], hidden: &mut [f64], squash: &mut [f64], s: &mut [f64], t: &mut [f64]) {
        let h = self.hidden;
        let (nc, nt) = (ly.nc(), ly.nt());
        let w1 = &theta[ly.offset..ly.offset + h * nc];
        let b1 = &theta[ly.offset + h * nc..ly.offset + h * nc + h];
        let ws_o = ly.offset + h * nc + h;
        let ws = &theta[ws_o..ws_o + nt * h];
        let bs = &theta[ws_o + nt * h..ws_o + nt * h + nt];
        let wt_o = ws_o + nt * h + nt;
        let wt = &theta[wt_o..wt_o + nt * h];
        let bt = &theta[wt_o + nt * h..wt_o + nt * h + nt];
        for j in 0..h {
            let mut a = b1[j];
            for i in 0..nc {
                a += w1[j * nc + i] * xc[i];
            }
            hidden[j] = a.tanh();
        }
        for k in 0..nt {
            let mut u = bs[k];
            let mut v = bt[k];
            for j in 0..h {
                u += ws[k * h + j] * hidden[j];
                v += wt[k * h + j] * hidden[j];
            }
            squash[k] = u.tanh();
            s[k] = self.scale_bound * squash[k];
            t[k] = v;
        }
    }

    pub(crate) fn log_density(&self, theta: &[f64], x: &[f64]) -> f64 {
        let (z, log_det) = self.forward(theta, x);
        let q: f64 = z.iter().map(|v| v * v).sum();
        -0.5 * self.dim as f64 * LN_2PI - 0.5 * q + log_det
    }

    pub(crate) fn score_into(&self, theta: &[f64], x: &[f64], out: &mut [f64]) -> f64 {
        let h = self.hidden;
        out.iter_mut().for_each(|g| *g = 0.0);
        let mut cur = x.to_vec();
        let mut tapes = Vec::with_capacity(self.n_layers);
        let mut t = vec![0.0; self.dim];
        let mut log_det = 0.0;
        for l in 0..self.n_layers {
            let ly = self.layer(l);
            let nt = ly.nt();
            let mut tape = Tape {
                input: cur.clone(),
                hidden: vec![0.0; h],
                squash: vec![0.0; nt],
                scale: vec![0.0; nt],
            };
            let (c0, c1) = ly.cond;
            self.nets(&ly, theta, &tape.input[c0..c1], &mut tape.hidden, &mut tape.squash, &mut tape.scale, &mut t[..nt]);
            for k in 0..nt {
                let i = ly.trans.0 + k;
                cur[i] = cur[i] * tape.scale[k].exp() + t[k];
                log_det += tape.scale[k];
            }
            tapes.push(tape);
        }
        let q: f64 = cur.iter().map(|z| z * z).sum();
        let logp = -0.5 * self.dim as f64 * LN_2PI - 0.5 * q + log_det;

        // gradient w.r.t. the current layer output
        let mut gy: Vec<f64> = cur.iter().map(|z| -z).collect();
        let mut g_hidden = vec![0.0; h];
        for l in (0..self.n_layers).rev() {
            let ly = self.layer(l);
            let tape = &tapes[l];
            let (nc, nt) = (ly.nc(), ly.nt());
            let o = ly.offset;
            let ws_o = o + h * nc + h;
            let bs_o = ws_o + nt * h;
            let wt_o = bs_o + nt;
            let bt_o = wt_o + nt * h;

            g_hidden.iter_mut().for_each(|g| *g = 0.0);
            for k in 0..nt {
                let i = ly.trans.0 + k;
                let e = tape.scale[k].exp();
                let g_out = gy[i];
                // ∂/∂s of (x e^s + t) plus the log-det term
                let g_s = g_out * tape.input[i] * e + 1.0;
                let g_t = g_out;
                gy[i] = g_out * e;
                let sq = tape.squash[k];
                let g_u = g_s * self.scale_bound * (1.0 - sq * sq);
                for j in 0..h {
                    out[ws_o + k * h + j] += g_u * tape.hidden[j];
                    out[wt_o + k * h + j] += g_t * tape.hidden[j];
                    g_hidden[j] += theta[ws_o + k * h + j] * g_u + theta[wt_o + k * h + j] * g_t;
                }
                out[bs_o + k] += g_u;
                out[bt_o + k] += g_t;
            }
            for j in 0..h {
                let hj = tape.hidden[j];
                let g_pre = g_hidden[j] * (1.0 - hj * hj);
                for c in 0..nc {
                    let ic = ly.cond.0 + c;
                    out[o + j * nc + c] += g_pre * tape.input[ic];
                    gy[ic] += theta[o + j * nc + c] * g_pre;
                }
                out[o + h * nc + j] += g_pre;
            }
        }
        logp
    }

    /// Inverse pass from a standard-normal latent draw.
    pub(crate) fn sample_into(&self, theta: &[f64], rng: &mut Stream, out: &mut [f64]) {
        let z: Vec<f64> = (0..self.dim).map(|_| rng.sample(StandardNormal)).collect();
        out.copy_from_slice(&self.inverse(theta, &z));
    }

    /// Latent image of `x` and the log-determinant of the Jacobian.
    pub fn forward(&self, theta: &[f64], x: &[f64]) -> (Vec<f64>, f64) {
        let mut cur = x.to_vec();
        let mut hidden = vec![0.0; self.hidden];
        let mut squash = vec![0.0; self.dim];
        let mut s = vec![0.0; self.dim];
        let mut t = vec![0.0; self.dim];
        let mut log_det = 0.0;
        for l in 0..self.n_layers {
            let ly = self.layer(l);
            let nt = ly.nt();
            let xc = cur[ly.cond.0..ly.cond.1].to_vec();
            self.nets(&ly, theta, &xc, &mut hidden, &mut squash[..nt], &mut s[..nt], &mut t[..nt]);
            for k in 0..nt {
                let i = ly.trans.0 + k;
                cur[i] = cur[i] * s[k].exp() + t[k];
                log_det += s[k];
            }
        }
        (cur, log_det)
    }

    /// Inverse of [`forward`](Self::forward).
    pub fn inverse(&self, theta: &[f64], z: &[f64]) -> Vec<f64> {
        let mut out = z.to_vec();
        let mut hidden = vec![0.0; self.hidden];
        let mut squash = vec![0.0; self.dim];
        let mut s = vec![0.0; self.dim];
        let mut t = vec![0.0; self.dim];
        for l in (0..self.n_layers).rev() {
            let ly = self.layer(l);
            let nt = ly.nt();
            let xc = out[ly.cond.0..ly.cond.1].to_vec();
            self.nets(&ly, theta, &xc, &mut hidden, &mut squash[..nt], &mut s[..nt], &mut t[..nt]);
            for k in 0..nt {
                let i = ly.trans.0 + k;
                out[i] = (out[i] - t[k]) * (-s[k]).exp();
            }
        }
        out
    }

    pub(crate) fn fit_adam(&self, data: &PointSet, opts: &FlowFitOptions) -> Result<Flagged<FitResult>> {
        if opts.batch_size == 0 || !(opts.learning_rate > 0.0) {
            return Err(contract("flow fit needs positive batch size and learning rate"));
        }
        let d = self.n_params();
        let n = data.len();
        let mut theta = self.init_theta(opts.seed).0;
        let mut m = vec![0.0; d];
        let mut v = vec![0.0; d];
        let (b1, b2, eps) = (0.9, 0.999, 1e-8);
        let mut step = 0i32;
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = rng::stream(rng::derive_seed(opts.seed, "flow-shuffle"), 0);
        let mut grad = vec![0.0; d];
        let mut sc = vec![0.0; d];
        let mean_ll = |theta: &[f64]| -> f64 {
            data.rows().map(|x| self.log_density(theta, x)).sum::<f64>() / n as f64
        };
        let mut trace = Vec::with_capacity(opts.epochs);
        let mut best = (mean_ll(&theta), theta.clone());
        for _ in 0..opts.epochs {
            // Fisher–Yates
            for i in (1..n).rev() {
                let j = rng.random_range(0..=i);
                order.swap(i, j);
            }
            for batch in order.chunks(opts.batch_size) {
                grad.iter_mut().for_each(|g| *g = 0.0);
                for &i in batch {
                    self.score_into(&theta, data.row(i), &mut sc);
                    for (g, s) in grad.iter_mut().zip(&sc) {
                        *g += s;
                    }
                }
                let inv = 1.0 / batch.len() as f64;
                grad.iter_mut().for_each(|g| *g *= inv);
                let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if norm > opts.grad_clip {
                    let f = opts.grad_clip / norm;
                    grad.iter_mut().for_each(|g| *g *= f);
                }
                step += 1;
                let c1 = 1.0 - f64::powi(b1, step);
                let c2 = 1.0 - f64::powi(b2, step);
                for k in 0..d {
                    m[k] = b1 * m[k] + (1.0 - b1) * grad[k];
                    v[k] = b2 * v[k] + (1.0 - b2) * grad[k] * grad[k];
                    // ascent on the log-likelihood
                    theta[k] += opts.learning_rate * (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
                }
            }
            let ll = mean_ll(&theta);
            trace.push(ll);
            if ll > best.0 {
                best = (ll, theta.clone());
            }
        }
        Ok(Flagged::clean(FitResult {
            theta: ParamVector(best.1),
            trace,
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelHandle;

    fn random_theta(spec: &CouplingFlowSpec, seed: u64, scale: f64) -> ParamVector {
        let mut r = rng::stream(seed, 0);
        (0..spec.n_params())
            .map(|_| scale * r.sample::<f64, _>(StandardNormal))
            .collect::<Vec<_>>()
            .into()
    }

    #[test]
    fn forward_inverse_round_trip() {
        let spec = CouplingFlowSpec::new(3, 4, 8);
        let theta = random_theta(&spec, 1, 0.7);
        let x = [0.3, -1.2, 2.0];
        let (z, _) = spec.forward(&theta, &x);
        let back = spec.inverse(&theta, &z);
        for (a, b) in x.iter().zip(&back) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn log_det_matches_numeric_jacobian() {
        let spec = CouplingFlowSpec::new(2, 3, 5);
        let theta = random_theta(&spec, 2, 0.8);
        let x = [0.4, -0.7];
        let (_, ld) = spec.forward(&theta, &x);
        let h = 1e-6;
        let mut jac = [[0.0; 2]; 2];
        for c in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[c] += h;
            xm[c] -= h;
            let (zp, _) = spec.forward(&theta, &xp);
            let (zm, _) = spec.forward(&theta, &xm);
            for r in 0..2 {
                jac[r][c] = (zp[r] - zm[r]) / (2.0 * h);
            }
        }
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        assert!((det.abs().ln() - ld).abs() < 1e-6);
    }

    #[test]
    fn scale_outputs_are_bounded() {
        let spec = CouplingFlowSpec::new(2, 2, 4);
        let theta = random_theta(&spec, 3, 50.0);
        let (_, ld) = spec.forward(&theta, &[10.0, -10.0]);
        assert!(ld.abs() <= 2.0 * spec.scale_bound + 1e-12);
    }

    #[test]
    fn rejects_one_dimensional_flow() {
        let m = ModelHandle::CouplingFlow(CouplingFlowSpec::new(1, 2, 4));
        assert!(m.validate().is_err());
    }

    #[test]
    fn adam_fit_improves_likelihood() {
        let spec = CouplingFlowSpec::new(2, 4, 16);
        let mut r = rng::stream(9, 0);
        let mut data = PointSet::with_capacity(2, 400);
        for _ in 0..400 {
            let a: f64 = r.sample(StandardNormal);
            let b: f64 = r.sample(StandardNormal);
            data.push(&[a, 0.5 * a + 0.3 * b]);
        }
        let m = ModelHandle::CouplingFlow(spec);
        let opts = crate::model::FitOptions {
            flow: FlowFitOptions {
                epochs: 40,
                ..Default::default()
            },
            ..Default::default()
        };
        let fit = m.fit_mle(&data, &opts).unwrap().value;
        assert!(fit.theta.is_finite());
        let first = fit.trace[0];
        let best = fit.trace.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(best > first);
        let ll0: f64 = data
            .rows()
            .map(|x| -LN_2PI - 0.5 * (x[0] * x[0] + x[1] * x[1]))
            .sum::<f64>()
            / 400.0;
        assert!(best > ll0, "best {best} vs isotropic {ll0}");
    }
}
