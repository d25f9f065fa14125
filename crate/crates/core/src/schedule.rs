//! Noise-schedule arithmetic.
//!
//! The forward process is driven by a linear rate `beta(t) = beta0 + (beta1 - beta0) t / T`
//! on `[0, T]`. Every quantity derived from it (integrals, accumulated variance, the
//! Gaussian conditional marginal of the forward process) is evaluated in closed form.

use ndarray::{Array1, ArrayView1, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Relative slack allowed when a time lands a rounding error outside `[0, T]`.
const TIME_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSchedule {
    pub beta0: f64,
    pub beta1: f64,
    pub horizon: f64,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self { beta0: 0.05, beta1: 20.0, horizon: 1.0 }
    }
}

impl NoiseSchedule {
    pub fn new(beta0: f64, beta1: f64, horizon: f64) -> Result<Self> {
        let schedule = Self { beta0, beta1, horizon };
        schedule.validate()?;
        Ok(schedule)
    }

    /// Constant-rate schedule; `constant(0.0, T)` freezes the dynamics.
    pub fn constant(beta: f64, horizon: f64) -> Result<Self> {
        Self::new(beta, beta, horizon)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta0.is_finite() && self.beta0 >= 0.0) {
            return Err(Error::domain(format!("beta0 must be finite and >= 0, got {}", self.beta0)));
        }
        if !(self.beta1.is_finite() && self.beta1 >= 0.0) {
            return Err(Error::domain(format!("beta1 must be finite and >= 0, got {}", self.beta1)));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::domain(format!("horizon must be finite and > 0, got {}", self.horizon)));
        }
        Ok(())
    }

    fn clamp_time(&self, t: f64) -> Result<f64> {
        let slack = TIME_SLACK * self.horizon;
        if !t.is_finite() || t < -slack || t > self.horizon + slack {
            return Err(Error::domain(format!("time {t} outside [0, {}]", self.horizon)));
        }
        Ok(t.clamp(0.0, self.horizon))
    }

    fn slope(&self) -> f64 {
        (self.beta1 - self.beta0) / self.horizon
    }

    pub fn beta_at(&self, t: f64) -> Result<f64> {
        let t = self.clamp_time(t)?;
        Ok(self.beta0 + self.slope() * t)
    }

    /// `∫_s^t beta(u) du`, exact for the linear rate.
    pub fn beta_integral(&self, s: f64, t: f64) -> Result<f64> {
        let s = self.clamp_time(s)?;
        let t = self.clamp_time(t)?;
        if s > t {
            return Err(Error::domain(format!("integral bounds reversed: s = {s} > t = {t}")));
        }
        Ok(self.beta0 * (t - s) + 0.5 * self.slope() * (t * t - s * s))
    }

    /// Accumulated noise variance `1 - exp(-∫_0^t beta)` for an identity terminal covariance.
    pub fn lambda_scalar(&self, t: f64) -> Result<f64> {
        Ok(-(-self.beta_integral(0.0, t)?).exp_m1())
    }

    /// `exp(-∫_0^T beta)`: the weight the data keeps at the horizon.
    pub fn terminal_residual(&self) -> f64 {
        (-(self.beta0 + self.beta1) * 0.5 * self.horizon).exp()
    }

    /// Whether the forward process forgets its starting point by `T` (residual below `1e-4`).
    pub fn reaches_terminal_noise(&self) -> bool {
        self.terminal_residual() < 1e-4
    }
}

/// Forward-process parameters: the schedule and the diagonal of the terminal covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSpec {
    pub schedule: NoiseSchedule,
    pub sigma_diag: Vec<f64>,
}

impl DiffusionSpec {
    pub fn new(schedule: NoiseSchedule, sigma_diag: Vec<f64>) -> Result<Self> {
        schedule.validate()?;
        if sigma_diag.is_empty() {
            return Err(Error::shape("terminal covariance needs at least one dimension"));
        }
        if let Some(bad) = sigma_diag.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::domain(format!("terminal covariance entries must be > 0, got {bad}")));
        }
        Ok(Self { schedule, sigma_diag })
    }

    /// `Σ = I` in `n` dimensions.
    pub fn identity(schedule: NoiseSchedule, n: usize) -> Result<Self> {
        Self::new(schedule, vec![1.0; n])
    }

    pub fn dim(&self) -> usize {
        self.sigma_diag.len()
    }

    pub fn horizon(&self) -> f64 {
        self.schedule.horizon
    }

    pub fn is_identity(&self) -> bool {
        self.sigma_diag.iter().all(|&s| s == 1.0)
    }

    /// Per-coordinate data weight `exp(-B(0,t) / (2 σ²))` of the conditional mean.
    pub fn mean_decay(&self, t: f64) -> Result<Array1<f64>> {
        let b = self.schedule.beta_integral(0.0, t)?;
        Ok(self.sigma_diag.iter().map(|&s| (-0.5 * b / s).exp()).collect())
    }

    /// Diagonal of the conditional covariance `Σ (I - exp(-B(0,t) Σ⁻¹))`.
    pub fn variance_diag(&self, t: f64) -> Result<Array1<f64>> {
        let b = self.schedule.beta_integral(0.0, t)?;
        Ok(self.sigma_diag.iter().map(|&s| -s * (-b / s).exp_m1()).collect())
    }

    pub fn marginal_params(&self, x0: ArrayView1<f64>, mu: ArrayView1<f64>, t: f64) -> Result<ConditionalMarginal> {
        marginal_params(self, x0, mu, t)
    }
}

/// Law of `X_t` given `X_0`: a diagonal Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalMarginal {
    pub mean_rho: Array1<f64>,
    pub var_diag: Array1<f64>,
}

pub fn marginal_params(
    spec: &DiffusionSpec,
    x0: ArrayView1<f64>,
    mu: ArrayView1<f64>,
    t: f64,
) -> Result<ConditionalMarginal> {
    check_len("x0", spec.dim(), x0.len())?;
    check_len("mu", spec.dim(), mu.len())?;
    let decay = spec.mean_decay(t)?;
    let mean_rho = Zip::from(&decay)
        .and(&x0)
        .and(&mu)
        .map_collect(|&a, &x, &m| a * x + (1.0 - a) * m);
    let var_diag = spec.variance_diag(t)?;
    Ok(ConditionalMarginal { mean_rho, var_diag })
}
