//! Forward diffusion toward `N(μ, Σ)`: closed-form sampling, a path-simulated
//! Euler–Maruyama reference, and exact scores.
//!
//! The forward SDE is
//!
//! ```text
//! dX_t = ½ Σ⁻¹ (μ − X_t) β_t dt + √β_t dW_t
//! ```
//!
//! and its conditional law given `X_0` is the diagonal Gaussian computed by
//! [`crate::schedule::marginal_params`].

use std::f64::consts::PI;
use std::io::Write;

use ndarray::{Array1, ArrayView1, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::rng::{seeded, standard_normal};
use crate::schedule::{marginal_params, DiffusionSpec};

fn require_positive_time(t: f64) -> Result<()> {
    if t <= 0.0 || t.is_nan() {
        return Err(Error::DegenerateVariance { t });
    }
    Ok(())
}

/// Draw `X_t | X_0` directly from the conditional Gaussian.
pub fn sample_conditional<R: Rng + ?Sized>(
    spec: &DiffusionSpec,
    x0: ArrayView1<f64>,
    mu: ArrayView1<f64>,
    t: f64,
    rng: &mut R,
) -> Result<Array1<f64>> {
    require_positive_time(t)?;
    let m = marginal_params(spec, x0, mu, t)?;
    let z: Array1<f64> = standard_normal(spec.dim(), rng);
    Ok(m.mean_rho + &(m.var_diag.mapv(f64::sqrt) * z))
}

/// A discretized forward trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionPath {
    pub times: Vec<f64>,
    pub states: Vec<Array1<f64>>,
    pub seed: u64,
}

impl DiffusionPath {
    /// State at the grid time closest to `t`.
    pub fn state_nearest(&self, t: f64) -> (f64, &Array1<f64>) {
        let idx = self
            .times
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))
            .map(|(i, _)| i)
            .unwrap_or(0);
        (self.times[idx], &self.states[idx])
    }

    /// CSV with header `t,x_1,...,x_n`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let n = self.states.first().map_or(0, |s| s.len());
        let header: Vec<String> = std::iter::once("t".to_string()).chain((1..=n).map(|i| format!("x_{i}"))).collect();
        writeln!(out, "{}", header.join(","))?;
        for (t, x) in self.times.iter().zip(&self.states) {
            let row: Vec<String> = std::iter::once(format!("{t}")).chain(x.iter().map(|v| format!("{v}"))).collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Euler–Maruyama simulation of the forward SDE on a uniform grid, rate taken at the left
/// endpoint of every step.
pub fn simulate_forward_em(
    spec: &DiffusionSpec,
    x0: ArrayView1<f64>,
    mu: ArrayView1<f64>,
    num_steps: usize,
    seed: u64,
) -> Result<DiffusionPath> {
    check_len("x0", spec.dim(), x0.len())?;
    check_len("mu", spec.dim(), mu.len())?;
    if num_steps == 0 {
        return Err(Error::domain("num_steps must be at least 1"));
    }
    let mut rng = seeded(seed);
    let horizon = spec.horizon();
    let h = horizon / num_steps as f64;
    let inv_sigma: Array1<f64> = spec.sigma_diag.iter().map(|s| 1.0 / s).collect();

    let mut times = Vec::with_capacity(num_steps + 1);
    let mut states = Vec::with_capacity(num_steps + 1);
    let mut x = x0.to_owned();
    times.push(0.0);
    states.push(x.clone());
    for k in 0..num_steps {
        let t = horizon * k as f64 / num_steps as f64;
        let beta = spec.schedule.beta_at(t)?;
        let noise_scale = (beta * h).sqrt();
        let z: Array1<f64> = standard_normal(spec.dim(), &mut rng);
        Zip::from(&mut x)
            .and(&mu)
            .and(&inv_sigma)
            .and(&z)
            .for_each(|xi, &m, &is, &zi| *xi += 0.5 * is * (m - *xi) * beta * h + noise_scale * zi);
        times.push(horizon * (k + 1) as f64 / num_steps as f64);
        states.push(x.clone());
    }
    Ok(DiffusionPath { times, states, seed })
}

/// `∇ log p_{0t}(x_t | x_0) = −λ(Σ,t)⁻¹ (x_t − ρ(x_0, Σ, μ, t))`.
pub fn conditional_score(
    spec: &DiffusionSpec,
    x_t: ArrayView1<f64>,
    x0: ArrayView1<f64>,
    mu: ArrayView1<f64>,
    t: f64,
) -> Result<Array1<f64>> {
    require_positive_time(t)?;
    check_len("x_t", spec.dim(), x_t.len())?;
    let m = marginal_params(spec, x0, mu, t)?;
    Ok(Zip::from(&x_t)
        .and(&m.mean_rho)
        .and(&m.var_diag)
        .map_collect(|&x, &r, &v| -(x - r) / v))
}

/// Finite Gaussian mixture with diagonal component covariances, used as an analytic
/// data distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixturePrior {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
}

/// One diffused component: log-weight, mean and diagonal variance at time `t`.
#[derive(Debug, Clone)]
pub struct DiffusedComponent {
    pub log_weight: f64,
    pub mean: Array1<f64>,
    pub var: Array1<f64>,
}

impl MixturePrior {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, variances: Vec<Vec<f64>>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::domain("mixture needs at least one component"));
        }
        if means.len() != weights.len() || variances.len() != weights.len() {
            return Err(Error::shape("weights, means and variances must have equal counts"));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::domain("mixture weights must be non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::domain(format!("mixture weights sum to {total}, expected 1")));
        }
        let n = means[0].len();
        if n == 0 {
            return Err(Error::shape("mixture components need at least one dimension"));
        }
        for (m, v) in means.iter().zip(&variances) {
            check_len("component mean", n, m.len())?;
            check_len("component variance", n, v.len())?;
            if v.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                return Err(Error::domain("component variances must be non-negative"));
            }
        }
        Ok(Self { weights, means, variances })
    }

    /// A single Gaussian (or a point mass when `variance` is zero).
    pub fn single(mean: Vec<f64>, variance: Vec<f64>) -> Result<Self> {
        Self::new(vec![1.0], vec![mean], vec![variance])
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn num_components(&self) -> usize {
        self.weights.len()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Array1<f64> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut k = self.weights.len() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                k = i;
                break;
            }
        }
        let z: Array1<f64> = standard_normal(self.dim(), rng);
        Array1::from_iter(
            self.means[k]
                .iter()
                .zip(&self.variances[k])
                .zip(z.iter())
                .map(|((m, v), z)| m + v.sqrt() * z),
        )
    }

    /// Components of `p_t`: each Gaussian pushed through the forward process.
    pub fn diffused(&self, spec: &DiffusionSpec, mu: ArrayView1<f64>, t: f64) -> Result<Vec<DiffusedComponent>> {
        check_len("mixture dimension", spec.dim(), self.dim())?;
        check_len("mu", spec.dim(), mu.len())?;
        let decay = spec.mean_decay(t)?;
        let lambda = spec.variance_diag(t)?;
        Ok(self
            .weights
            .iter()
            .zip(&self.means)
            .zip(&self.variances)
            .map(|((w, m), v)| DiffusedComponent {
                log_weight: w.ln(),
                mean: Array1::from_iter((0..m.len()).map(|i| decay[i] * m[i] + (1.0 - decay[i]) * mu[i])),
                var: Array1::from_iter((0..m.len()).map(|i| lambda[i] + decay[i] * decay[i] * v[i])),
            })
            .collect())
    }

    /// `log p_t(x)` of the diffused mixture.
    pub fn log_density(&self, spec: &DiffusionSpec, mu: ArrayView1<f64>, x: ArrayView1<f64>, t: f64) -> Result<f64> {
        check_len("x", spec.dim(), x.len())?;
        let comps = self.diffused(spec, mu, t)?;
        let logs: Vec<f64> = comps.iter().map(|c| c.log_weight + gaussian_log_density(x, &c.mean, &c.var)).collect();
        Ok(log_sum_exp(&logs))
    }
}

fn gaussian_log_density(x: ArrayView1<f64>, mean: &Array1<f64>, var: &Array1<f64>) -> f64 {
    Zip::from(&x)
        .and(mean)
        .and(var)
        .fold(0.0, |acc, &xi, &m, &v| acc - 0.5 * ((xi - m) * (xi - m) / v + (2.0 * PI * v).ln()))
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Exact `∇ log p_t(x)` when `Law(X_0)` is a [`MixturePrior`].
pub fn mixture_score(
    prior: &MixturePrior,
    spec: &DiffusionSpec,
    mu: ArrayView1<f64>,
    x: ArrayView1<f64>,
    t: f64,
) -> Result<Array1<f64>> {
    require_positive_time(t)?;
    check_len("x", spec.dim(), x.len())?;
    let comps = prior.diffused(spec, mu, t)?;
    if comps.iter().any(|c| c.var.iter().any(|&v| v <= 0.0)) {
        return Err(Error::DegenerateVariance { t });
    }
    let logs: Vec<f64> = comps.iter().map(|c| c.log_weight + gaussian_log_density(x, &c.mean, &c.var)).collect();
    let norm = log_sum_exp(&logs);
    let mut score = Array1::zeros(x.len());
    for (c, l) in comps.iter().zip(&logs) {
        let r = (l - norm).exp();
        if r == 0.0 {
            continue;
        }
        Zip::from(&mut score)
            .and(&x)
            .and(&c.mean)
            .and(&c.var)
            .for_each(|s, &xi, &m, &v| *s -= r * (xi - m) / v);
    }
    Ok(score)
}
