//! Exact score models for known data distributions.
//!
//! These stand in for a trained network when checking samplers and likelihoods: if the
//! data law is Gaussian (or a Gaussian mixture), every diffused marginal `p_t` is known in
//! closed form and so is its score.

use std::f64::consts::PI;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::diffusion::{mixture_score, MixturePrior};
use crate::error::{Error, Result};
use crate::sampler::ScoreModel;
use crate::schedule::DiffusionSpec;

/// Row-wise exact score of a diffused [`MixturePrior`].
#[derive(Debug, Clone)]
pub struct MixtureScore {
    pub prior: MixturePrior,
    pub spec: DiffusionSpec,
}

impl MixtureScore {
    pub fn new(prior: MixturePrior, spec: DiffusionSpec) -> Result<Self> {
        if prior.dim() != spec.dim() {
            return Err(Error::shape(format!("mixture has dimension {}, diffusion {}", prior.dim(), spec.dim())));
        }
        Ok(Self { prior, spec })
    }
}

impl ScoreModel for MixtureScore {
    fn score(&self, x_t: ArrayView2<f64>, mu: ArrayView2<f64>, t: f64) -> Result<Array2<f64>> {
        if x_t.shape() != mu.shape() || x_t.ncols() != self.spec.dim() {
            return Err(Error::shape(format!("x {:?}, mu {:?}", x_t.shape(), mu.shape())));
        }
        let mut out = Array2::zeros(x_t.raw_dim());
        for ((xr, mr), mut or) in x_t.rows().into_iter().zip(mu.rows()).zip(out.rows_mut()) {
            or.assign(&mixture_score(&self.prior, &self.spec, mr, xr, t)?);
        }
        Ok(out)
    }
}

/// Row-wise exact score when every row of the data is `N(mean, cov)` with a full covariance.
///
/// Unlike [`MixtureScore`] the Jacobian of this score is not diagonal, which makes it the
/// natural check for trace estimators.
#[derive(Debug, Clone)]
pub struct GaussianScore {
    pub mean: Array1<f64>,
    pub cov: Array2<f64>,
    pub spec: DiffusionSpec,
}

impl GaussianScore {
    pub fn new(mean: Array1<f64>, cov: Array2<f64>, spec: DiffusionSpec) -> Result<Self> {
        let n = spec.dim();
        if mean.len() != n || cov.shape() != [n, n] {
            return Err(Error::shape(format!("Gaussian of dimension {} vs diffusion {n}", mean.len())));
        }
        cholesky(cov.view()).ok_or_else(|| Error::domain("covariance is not positive definite"))?;
        Ok(Self { mean, cov, spec })
    }

    /// Mean and covariance of the diffused row law at time `t`.
    pub fn marginal(&self, mu: ArrayView1<f64>, t: f64) -> Result<(Array1<f64>, Array2<f64>)> {
        let decay = self.spec.mean_decay(t)?;
        let lambda = self.spec.variance_diag(t)?;
        let n = self.spec.dim();
        let mean = Array1::from_iter((0..n).map(|i| decay[i] * self.mean[i] + (1.0 - decay[i]) * mu[i]));
        let mut cov = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                cov[[i, j]] = decay[i] * decay[j] * self.cov[[i, j]];
            }
            cov[[i, i]] += lambda[i];
        }
        Ok((mean, cov))
    }

    /// `log p_t(x)` of one row.
    pub fn log_density(&self, x: ArrayView1<f64>, mu: ArrayView1<f64>, t: f64) -> Result<f64> {
        let (mean, cov) = self.marginal(mu, t)?;
        let l = cholesky(cov.view()).ok_or(Error::DegenerateVariance { t })?;
        let diff = &x - &mean;
        let w = forward_substitute(&l, diff.view());
        let log_det: f64 = (0..l.nrows()).map(|i| l[[i, i]].ln()).sum::<f64>() * 2.0;
        Ok(-0.5 * (w.dot(&w) + log_det + x.len() as f64 * (2.0 * PI).ln()))
    }
}

impl ScoreModel for GaussianScore {
    fn score(&self, x_t: ArrayView2<f64>, mu: ArrayView2<f64>, t: f64) -> Result<Array2<f64>> {
        if x_t.shape() != mu.shape() || x_t.ncols() != self.spec.dim() {
            return Err(Error::shape(format!("x {:?}, mu {:?}", x_t.shape(), mu.shape())));
        }
        // the covariance does not depend on the row, only the mean does
        let n = self.spec.dim();
        let (_, cov) = self.marginal(Array1::zeros(n).view(), t)?;
        let l = cholesky(cov.view()).ok_or(Error::DegenerateVariance { t })?;
        let decay = self.spec.mean_decay(t)?;
        let mut out = Array2::zeros(x_t.raw_dim());
        for ((xr, mr), mut or) in x_t.rows().into_iter().zip(mu.rows()).zip(out.rows_mut()) {
            let diff = Array1::from_iter((0..n).map(|i| xr[i] - decay[i] * self.mean[i] - (1.0 - decay[i]) * mr[i]));
            let w = forward_substitute(&l, diff.view());
            let sol = backward_substitute(&l, w.view());
            or.assign(&(-sol));
        }
        Ok(out)
    }
}

/// Lower Cholesky factor, `None` if the matrix is not positive definite.
fn cholesky(a: ArrayView2<f64>) -> Option<Array2<f64>> {
    let n = a.nrows();
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[[i, j]];
            for k in 0..j {
                sum -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if sum <= 0.0 || !sum.is_finite() {
                    return None;
                }
                l[[i, i]] = sum.sqrt();
            } else {
                l[[i, j]] = sum / l[[j, j]];
            }
        }
    }
    Some(l)
}

fn forward_substitute(l: &Array2<f64>, b: ArrayView1<f64>) -> Array1<f64> {
    let n = b.len();
    let mut y = Array1::zeros(n);
    for i in 0..n {
        let s: f64 = (0..i).map(|k| l[[i, k]] * y[k]).sum();
        y[i] = (b[i] - s) / l[[i, i]];
    }
    y
}

fn backward_substitute(l: &Array2<f64>, y: ArrayView1<f64>) -> Array1<f64> {
    let n = y.len();
    let mut x = Array1::zeros(n);
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| l[[k, i]] * x[k]).sum();
        x[i] = (y[i] - s) / l[[i, i]];
    }
    x
}
