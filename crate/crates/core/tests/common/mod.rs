//! Independent oracles shared by the integration tests. Nothing here calls the code under test
//! except for plain data accessors.
#![allow(dead_code)]

use std::f64::consts::PI;

use gradtts::diffusion::MixturePrior;
use gradtts::{DiffusionSpec, NoiseSchedule};
use ndarray::{Array1, Array2, ArrayView1};

pub fn gauss_log_pdf(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * ((x - mean).powi(2) / var + (2.0 * PI * var).ln())
}

/// Mean decay and variance of one coordinate of the forward process, from the linear schedule.
pub fn decay_and_var(schedule: &NoiseSchedule, sigma2: f64, t: f64) -> (f64, f64) {
    let b = schedule.beta0 * t + 0.5 * (schedule.beta1 - schedule.beta0) * t * t;
    ((-b / (2.0 * sigma2)).exp(), sigma2 * (1.0 - (-b / sigma2).exp()))
}

pub fn conditional_log_density(spec: &DiffusionSpec, x: ArrayView1<f64>, x0: &Array1<f64>, mu: &Array1<f64>, t: f64) -> f64 {
    (0..x.len())
        .map(|i| {
            let (a, v) = decay_and_var(&spec.schedule, spec.sigma_diag[i], t);
            gauss_log_pdf(x[i], a * x0[i] + (1.0 - a) * mu[i], v)
        })
        .sum()
}

pub fn mixture_log_density(prior: &MixturePrior, spec: &DiffusionSpec, x: ArrayView1<f64>, mu: &Array1<f64>, t: f64) -> f64 {
    let mut total = 0.0;
    for k in 0..prior.num_components() {
        let mut log_comp = prior.weights[k].ln();
        for i in 0..x.len() {
            let (a, lam) = decay_and_var(&spec.schedule, spec.sigma_diag[i], t);
            let mean = a * prior.means[k][i] + (1.0 - a) * mu[i];
            log_comp += gauss_log_pdf(x[i], mean, lam + a * a * prior.variances[k][i]);
        }
        total += log_comp.exp();
    }
    total.ln()
}

pub fn central_gradient(f: &dyn Fn(ArrayView1<f64>) -> f64, x: &Array1<f64>) -> Array1<f64> {
    let h = 1e-5 * (1.0 + x.iter().fold(0.0f64, |m, v| m.max(v.abs())));
    Array1::from_iter((0..x.len()).map(|i| {
        let mut p = x.clone();
        let mut m = x.clone();
        p[i] += h;
        m[i] -= h;
        (f(p.view()) - f(m.view())) / (2.0 * h)
    }))
}

/// Relative agreement with a small floor for coordinates near zero.
pub fn score_agrees(analytic: f64, numeric: f64) -> bool {
    (analytic - numeric).abs() <= 1e-4 * analytic.abs().max(numeric.abs()).max(1e-2)
}

/// Negative log-likelihood of an alignment without the constant, frame by frame.
pub fn alignment_cost(mu: &Array2<f64>, y: &Array2<f64>, durations: &[usize]) -> f64 {
    let mut frame = 0;
    let mut cost = 0.0;
    for (i, &d) in durations.iter().enumerate() {
        for _ in 0..d {
            cost += 0.5 * (&y.row(frame) - &mu.row(i)).mapv(|v| v * v).sum();
            frame += 1;
        }
    }
    cost
}

/// Every way to cut `frames` frames into `tokens` non-empty runs.
pub fn all_durations(tokens: usize, frames: usize) -> Vec<Vec<usize>> {
    if tokens == 1 {
        return vec![vec![frames]];
    }
    let mut out = Vec::new();
    for first in 1..=frames + 1 - tokens {
        for mut rest in all_durations(tokens - 1, frames - first) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}
