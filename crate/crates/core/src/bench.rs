//! Quality and wall-clock cost of reverse sampling as a function of the step count.

use std::io::Write;
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::analytic::MixtureScore;
use crate::diffusion::MixturePrior;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded, SeededRng};
use crate::sampler::{solve_reverse_ode, SamplerConfig};
use crate::schedule::DiffusionSpec;
use crate::tts::{deviation_w1, infer, CorpusPair, GradTtsModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub n_steps: usize,
    pub mean_error: f64,
    /// `None` with a single repetition.
    pub std_error: Option<f64>,
    /// Wall-clock milliseconds per generated sample.
    pub mean_ms: f64,
    pub std_ms: Option<f64>,
}

/// What one benchmark trial measured.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Trial {
    pub error: f64,
    pub samples: usize,
    /// Time spent generating, excluding the error evaluation.
    pub elapsed: Duration,
}

/// Run `trial` `repetitions` times for every step count.
pub fn bench_steps<F>(steps: &[usize], repetitions: usize, seed: u64, mut trial: F) -> Result<Vec<BenchRow>>
where
    F: FnMut(usize, &mut SeededRng) -> Result<Trial>,
{
    if steps.is_empty() || steps.contains(&0) {
        return Err(Error::Config("step list must be non-empty and positive".into()));
    }
    if repetitions == 0 {
        return Err(Error::Config("at least one repetition is needed".into()));
    }
    let mut rows = Vec::with_capacity(steps.len());
    for (i, &n) in steps.iter().enumerate() {
        let mut errors = Vec::with_capacity(repetitions);
        let mut times = Vec::with_capacity(repetitions);
        for r in 0..repetitions {
            let mut rng = seeded(derive_seed(derive_seed(seed, i as u64), r as u64));
            let t = trial(n, &mut rng)?;
            errors.push(t.error);
            times.push(t.elapsed.as_secs_f64() * 1e3 / t.samples.max(1) as f64);
        }
        let (mean_error, std_error) = mean_sd(&errors);
        let (mean_ms, std_ms) = mean_sd(&times);
        log::info!("N = {n}: error {mean_error:.5}, {mean_ms:.4} ms/sample");
        rows.push(BenchRow { n_steps: n, mean_error, std_error, mean_ms, std_ms });
    }
    Ok(rows)
}

fn mean_sd(v: &[f64]) -> (f64, Option<f64>) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, None);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, Some(var.sqrt()))
}

/// Header `n_steps,mean_error,std_error,mean_ms,std_ms`; missing deviations are empty cells.
pub fn write_bench_csv<W: Write>(rows: &[BenchRow], mut out: W) -> Result<()> {
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    writeln!(out, "n_steps,mean_error,std_error,mean_ms,std_ms")?;
    for r in rows {
        writeln!(out, "{},{},{},{},{}", r.n_steps, r.mean_error, cell(r.std_error), r.mean_ms, cell(r.std_ms))?;
    }
    Ok(())
}

/// Coefficient of determination of the least-squares line through `(x, y)`.
pub fn affine_r2(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if syy == 0.0 {
        return 1.0;
    }
    let slope = sxy / sxx;
    let resid: f64 = x.iter().zip(y).map(|(a, b)| (b - my - slope * (a - mx)).powi(2)).sum();
    1.0 - resid / syy
}

/// One-dimensional mixture target with an exact score.
///
/// A trial pushes `num_samples` stratified terminal draws through the probability-flow ODE
/// and reports the 1-D Wasserstein-1 distance between the outputs and the mixture, computed
/// by matching sorted outputs against the mixture's quantiles at the same levels. The exact
/// flow is monotone, so with exact integration the distance vanishes up to the terminal
/// residual of the schedule; what remains is discretization error.
#[derive(Debug, Clone)]
pub struct MixtureBench {
    pub score: MixtureScore,
    pub mu: f64,
    pub num_samples: usize,
}

impl MixtureBench {
    pub fn new(prior: MixturePrior, spec: DiffusionSpec, mu: f64, num_samples: usize) -> Result<Self> {
        if prior.dim() != 1 {
            return Err(Error::shape("the mixture benchmark is one-dimensional"));
        }
        if num_samples == 0 {
            return Err(Error::Config("num_samples must be positive".into()));
        }
        Ok(Self { score: MixtureScore::new(prior, spec)?, mu, num_samples })
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let p = &self.score.prior;
        (0..p.num_components())
            .map(|k| p.weights[k] * std_normal().cdf((x - p.means[k][0]) / p.variances[k][0].sqrt()))
            .sum()
    }

    pub fn pdf(&self, x: f64) -> f64 {
        let p = &self.score.prior;
        (0..p.num_components())
            .map(|k| {
                let s = p.variances[k][0].sqrt();
                p.weights[k] * std_normal().pdf((x - p.means[k][0]) / s) / s
            })
            .sum()
    }

    /// Bisection on the mixture CDF.
    pub fn quantile(&self, u: f64) -> f64 {
        let p = &self.score.prior;
        let spread = (0..p.num_components()).map(|k| p.means[k][0].abs() + 40.0 * p.variances[k][0].sqrt()).fold(0.0, f64::max);
        let (mut lo, mut hi) = (-spread, spread);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < u {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-14 * (1.0 + mid.abs()) {
                break;
            }
        }
        0.5 * (lo + hi)
    }

    pub fn trial<R: Rng + ?Sized>(&self, num_steps: usize, rng: &mut R) -> Result<Trial> {
        let m = self.num_samples;
        let shift: f64 = rng.random();
        let levels: Vec<f64> = (0..m).map(|k| (k as f64 + shift) / m as f64).collect();
        let levels: Vec<f64> = levels.into_iter().map(|u| u.clamp(1e-12, 1.0 - 1e-12)).collect();
        let x_t = Array2::from_shape_fn((m, 1), |(k, _)| self.mu + std_normal().inverse_cdf(levels[k]));
        let mu = Array2::from_elem((m, 1), self.mu);
        let cfg = SamplerConfig::ode(num_steps).with_temperature(1.0);
        let start = Instant::now();
        let out = solve_reverse_ode(&self.score, &self.score.spec, mu.view(), x_t.view(), &cfg)?;
        let elapsed = start.elapsed();
        let mut xs: Vec<f64> = out.iter().copied().collect();
        xs.sort_by(f64::total_cmp);
        let w1 = xs.iter().zip(&levels).map(|(x, &u)| (x - self.quantile(u)).abs()).sum::<f64>() / m as f64;
        Ok(Trial { error: w1, samples: m, elapsed })
    }
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// A trained pipeline synthesizing a fixed set of utterances; the error is [`deviation_w1`]
/// against the corpus noise level.
pub struct ModelBench<'a> {
    pub model: &'a GradTtsModel,
    pub pairs: &'a [CorpusPair],
    pub patterns: ndarray::ArrayView2<'a, f64>,
    pub noise: f64,
    pub temperature: f64,
}

impl ModelBench<'_> {
    pub fn trial<R: Rng + ?Sized>(&self, num_steps: usize, rng: &mut R) -> Result<Trial> {
        let cfg = SamplerConfig::ode(num_steps).with_temperature(self.temperature);
        let start = Instant::now();
        let outs = self
            .pairs
            .iter()
            .map(|p| infer(self.model, &p.tokens, &cfg, 1.0, rng))
            .collect::<Result<Vec<_>>>()?;
        let elapsed = start.elapsed();
        let views: Vec<_> = outs
            .iter()
            .zip(self.pairs)
            .map(|(o, p)| (o.features.view(), &p.tokens, o.durations.as_slice()))
            .collect();
        let error = deviation_w1(&views, self.patterns, self.noise)?;
        Ok(Trial { error, samples: self.pairs.len(), elapsed })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::NoiseSchedule;

    fn bench() -> MixtureBench {
        let prior = MixturePrior::new(vec![0.3, 0.7], vec![vec![-2.0], vec![2.0]], vec![vec![0.25], vec![0.25]]).unwrap();
        MixtureBench::new(prior, DiffusionSpec::identity(NoiseSchedule::default(), 1).unwrap(), 0.0, 200).unwrap()
    }

    #[test]
    fn quantile_inverts_cdf() {
        let b = bench();
        for u in [1e-6, 0.1, 0.3, 0.5, 0.9, 0.999999] {
            assert!((b.cdf(b.quantile(u)) - u).abs() < 1e-12);
        }
        let peak = 0.7 / (0.5 * (2.0 * std::f64::consts::PI).sqrt());
        assert!((b.pdf(2.0) - peak).abs() < 1e-12);
    }

    #[test]
    fn r2_of_exact_line_is_one() {
        assert!((affine_r2(&[1.0, 2.0, 3.0], &[3.0, 5.0, 7.0]) - 1.0).abs() < 1e-15);
        assert!(affine_r2(&[1.0, 2.0, 3.0], &[1.0, 3.0, 1.0]) < 0.1);
    }

    #[test]
    fn single_repetition_has_no_spread() {
        let rows = bench_steps(&[4, 10], 1, 0, |n, rng| bench().trial(n, rng)).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.std_error.is_none() && r.std_ms.is_none()));
        let mut buf = Vec::new();
        write_bench_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("n_steps,mean_error,std_error,mean_ms,std_ms\n4,"));
        assert!(text.lines().nth(1).unwrap().contains(",,"));
    }

    #[test]
    fn rejects_empty_inputs() {
        assert!(bench_steps(&[], 1, 0, |n, rng| bench().trial(n, rng)).is_err());
        assert!(bench_steps(&[4], 0, 0, |n, rng| bench().trial(n, rng)).is_err());
    }
}
