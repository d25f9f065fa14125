//! Trainable score network, the weighted denoising score-matching loss and Adam.
//!
//! The network is applied frame by frame with shared weights. Each frame's input is the
//! concatenation `[x_t frame, μ frame, time features]`. The stack's output is divided by
//! `√λ_t`, so the network regresses the scaled noise `−√λ_t s` and the score itself can grow
//! like `1/√λ_t` near `t = 0` without large weights.

use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::mlp::{put_columns, MlpLayout};
use crate::rng::standard_normal;
use crate::sampler::ScoreModel;
use crate::schedule::{DiffusionSpec, NoiseSchedule};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreNetArch {
    /// Feature dimension `n` of each frame.
    pub dim: usize,
    pub hidden: Vec<usize>,
    /// Number of sinusoidal time features (even).
    pub time_features: usize,
    /// Highest angular frequency of the time features.
    pub max_frequency: f64,
}

impl Default for ScoreNetArch {
    fn default() -> Self {
        Self { dim: 8, hidden: vec![64, 64], time_features: 16, max_frequency: 100.0 }
    }
}

impl ScoreNetArch {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("score network dimension must be positive".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden layer sizes must be positive".into()));
        }
        if self.time_features == 0 || !self.time_features.is_multiple_of(2) {
            return Err(Error::Config("time_features must be a positive even number".into()));
        }
        if !(self.max_frequency.is_finite() && self.max_frequency > 0.0) {
            return Err(Error::Config("max_frequency must be positive".into()));
        }
        Ok(())
    }

    pub fn layout(&self) -> MlpLayout {
        let mut sizes = vec![2 * self.dim + self.time_features];
        sizes.extend(&self.hidden);
        sizes.push(self.dim);
        MlpLayout::new(sizes)
    }

    pub fn num_params(&self) -> usize {
        self.layout().num_params()
    }

    /// `[sin(ω_k t)..., cos(ω_k t)...]` with `ω_k` geometric from 1 to `max_frequency`.
    pub fn time_embedding(&self, t: f64) -> Array1<f64> {
        let half = self.time_features / 2;
        let mut out = Array1::zeros(self.time_features);
        for k in 0..half {
            let frac = if half > 1 { k as f64 / (half - 1) as f64 } else { 0.0 };
            let w = self.max_frequency.powf(frac);
            out[k] = (w * t).sin();
            out[half + k] = (w * t).cos();
        }
        out
    }
}

/// Floor on `λ_t` in the output scaling, so that `t = 0` stays finite.
const LAMBDA_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyScoreNet {
    arch: ScoreNetArch,
    schedule: NoiseSchedule,
    layout: MlpLayout,
    pub params: Vec<f64>,
}

impl ToyScoreNet {
    /// Small uniform hidden weights and a zero output layer, so the initial score is zero.
    pub fn new<R: Rng + ?Sized>(arch: ScoreNetArch, schedule: NoiseSchedule, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        schedule.validate()?;
        let layout = arch.layout();
        let params = layout.init(rng, true);
        Ok(Self { arch, schedule, layout, params })
    }

    pub fn from_params(arch: ScoreNetArch, schedule: NoiseSchedule, params: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        schedule.validate()?;
        let layout = arch.layout();
        if params.len() != layout.num_params() {
            return Err(Error::shape(format!(
                "architecture needs {} parameters, got {}",
                layout.num_params(),
                params.len()
            )));
        }
        Ok(Self { arch, schedule, layout, params })
    }

    pub fn arch(&self) -> &ScoreNetArch {
        &self.arch
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    /// `1/√λ_t`, the factor applied to the stack's output.
    pub fn output_scale(&self, t: f64) -> Result<f64> {
        Ok(1.0 / self.schedule.lambda_scalar(t)?.max(LAMBDA_FLOOR).sqrt())
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// `(name, offset, len)` for every weight and bias block.
    pub fn param_blocks(&self) -> Vec<(String, usize, usize)> {
        self.layout
            .layer_offsets()
            .into_iter()
            .enumerate()
            .flat_map(|(l, (w, b, i, o))| [(format!("layer{l}.weight"), w, i * o), (format!("layer{l}.bias"), b, o)])
            .collect()
    }

    fn check_frames(&self, x_t: ArrayView2<f64>, mu: ArrayView2<f64>) -> Result<()> {
        if x_t.shape() != mu.shape() {
            return Err(Error::shape(format!("x_t {:?} vs mu {:?}", x_t.shape(), mu.shape())));
        }
        if x_t.ncols() != self.arch.dim {
            return Err(Error::shape(format!("{} feature columns, network expects {}", x_t.ncols(), self.arch.dim)));
        }
        Ok(())
    }

    fn assemble_input(&self, x_t: ArrayView2<f64>, mu: ArrayView2<f64>, t: f64, out: &mut Array2<f64>, row0: usize) {
        let n = self.arch.dim;
        let rows = x_t.nrows();
        let emb = self.time_embedding_row(t);
        let mut block = out.slice_mut(s![row0..row0 + rows, ..]).to_owned();
        put_columns(&mut block, 0, x_t);
        put_columns(&mut block, n, mu);
        for mut r in block.rows_mut() {
            r.slice_mut(s![2 * n..]).assign(&emb);
        }
        out.slice_mut(s![row0..row0 + rows, ..]).assign(&block);
    }

    fn time_embedding_row(&self, t: f64) -> Array1<f64> {
        self.arch.time_embedding(t)
    }

    /// `s_θ(x_t, μ, t)` for an `F × n` block of frames.
    pub fn forward(&self, x_t: ArrayView2<f64>, mu: ArrayView2<f64>, t: f64) -> Result<Array2<f64>> {
        self.check_frames(x_t, mu)?;
        let mut input = Array2::zeros((x_t.nrows(), self.layout.input_size()));
        self.assemble_input(x_t, mu, t, &mut input, 0);
        let scale = self.output_scale(t)?;
        Ok(self.layout.forward(&self.params, input.view()) * scale)
    }

    pub fn to_checkpoint(&self, ck: Checkpoint) -> Checkpoint {
        let hidden: Vec<String> = self.arch.hidden.iter().map(|h| h.to_string()).collect();
        ck.with_meta("scorenet.dim", self.arch.dim)
            .with_meta("scorenet.hidden", hidden.join(","))
            .with_meta("scorenet.time_features", self.arch.time_features)
            .with_meta("scorenet.max_frequency", self.arch.max_frequency)
            .with_meta("scorenet.params", self.params.len())
            .with_meta("scorenet.beta0", self.schedule.beta0)
            .with_meta("scorenet.beta1", self.schedule.beta1)
            .with_meta("scorenet.horizon", self.schedule.horizon)
            .with_section("scorenet", self.params.clone())
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let hidden = ck
            .meta("scorenet.hidden")?
            .split(',')
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<usize>().map_err(|_| Error::Format(format!("bad hidden size `{s}`"))))
            .collect::<Result<Vec<_>>>()?;
        let arch = ScoreNetArch {
            dim: ck.meta_parse("scorenet.dim")?,
            hidden,
            time_features: ck.meta_parse("scorenet.time_features")?,
            max_frequency: ck.meta_parse("scorenet.max_frequency")?,
        };
        let schedule = NoiseSchedule::new(
            ck.meta_parse("scorenet.beta0")?,
            ck.meta_parse("scorenet.beta1")?,
            ck.meta_parse("scorenet.horizon")?,
        )
        .map_err(|e| Error::Format(e.to_string()))?;
        let params = ck.section("scorenet")?.to_vec();
        let declared: usize = ck.meta_parse("scorenet.params")?;
        if declared != params.len() {
            return Err(Error::Format(format!("header declares {declared} parameters, section has {}", params.len())));
        }
        Self::from_params(arch, schedule, params).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint(Checkpoint::new().with_meta("kind", "scorenet")).save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

impl ScoreModel for ToyScoreNet {
    fn score(&self, x_t: ArrayView2<f64>, mu: ArrayView2<f64>, t: f64) -> Result<Array2<f64>> {
        self.forward(x_t, mu, t)
    }
}

/// Lowest training time: `1e-5 T`, keeping `1/√λ_t` finite.
pub fn default_t_min(schedule: &NoiseSchedule) -> f64 {
    1e-5 * schedule.horizon
}

/// One minibatch of the diffusion loss: clean segments, their aligned means, one time and
/// one standard-normal noise block per instance.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainBatch {
    pub x0: Vec<Array2<f64>>,
    pub mu: Vec<Array2<f64>>,
    pub t: Vec<f64>,
    pub xi: Vec<Array2<f64>>,
    pub t_min: f64,
}

impl TrainBatch {
    pub fn new(x0: Vec<Array2<f64>>, mu: Vec<Array2<f64>>, t: Vec<f64>, xi: Vec<Array2<f64>>, t_min: f64) -> Result<Self> {
        if x0.is_empty() {
            return Err(Error::shape("empty training batch"));
        }
        if mu.len() != x0.len() || t.len() != x0.len() || xi.len() != x0.len() {
            return Err(Error::shape("batch components have different instance counts"));
        }
        for ((a, b), c) in x0.iter().zip(&mu).zip(&xi) {
            if a.shape() != b.shape() || a.shape() != c.shape() {
                return Err(Error::shape(format!("instance shapes {:?} / {:?} / {:?}", a.shape(), b.shape(), c.shape())));
            }
        }
        if !(t_min > 0.0) {
            return Err(Error::domain("t_min must be positive"));
        }
        if let Some(bad) = t.iter().find(|&&ti| !(ti >= t_min)) {
            return Err(Error::domain(format!("time {bad} below the clamp {t_min}")));
        }
        Ok(Self { x0, mu, t, xi, t_min })
    }

    /// Draw `t ~ U[t_min, T]` and `ξ ~ N(0, I)` for every instance.
    pub fn sample<R: Rng + ?Sized>(
        x0: Vec<Array2<f64>>,
        mu: Vec<Array2<f64>>,
        schedule: &NoiseSchedule,
        t_min: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let t: Vec<f64> = x0.iter().map(|_| rng.random_range(t_min..=schedule.horizon)).collect();
        let xi: Vec<Array2<f64>> = x0.iter().map(|x| standard_normal(x.raw_dim(), rng)).collect();
        Self::new(x0, mu, t, xi, t_min)
    }

    pub fn num_frames(&self) -> usize {
        self.x0.iter().map(|x| x.nrows()).sum()
    }

    /// Noisy inputs `x_t = ρ(x_0, I, μ, t) + √λ_t ξ`.
    pub fn noisy(&self, spec: &DiffusionSpec) -> Result<Vec<Array2<f64>>> {
        let sched = &spec.schedule;
        self.x0
            .iter()
            .zip(&self.mu)
            .zip(&self.xi)
            .zip(&self.t)
            .map(|(((x0, mu), xi), &t)| {
                let a = (-0.5 * sched.beta_integral(0.0, t)?).exp();
                let lam = sched.lambda_scalar(t)?;
                Ok(x0 * a + mu * (1.0 - a) + xi * lam.sqrt())
            })
            .collect()
    }
}

fn require_identity(spec: &DiffusionSpec, net: &ToyScoreNet) -> Result<()> {
    if !spec.is_identity() {
        return Err(Error::domain("the diffusion loss assumes an identity terminal covariance"));
    }
    if spec.dim() != net.arch.dim {
        return Err(Error::shape(format!("diffusion dimension {} vs network {}", spec.dim(), net.arch.dim)));
    }
    if spec.schedule != net.schedule {
        return Err(Error::domain("the network was built for a different noise schedule"));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct LossGradients {
    pub loss: f64,
    /// Gradient w.r.t. the network parameters.
    pub params: Vec<f64>,
    /// Gradient w.r.t. each instance's `μ` (through both the network input and `x_t`).
    pub mu: Vec<Array2<f64>>,
}

/// Loss `mean_frames λ_t ‖s_θ(x_t, μ, t) + ξ/√λ_t‖²` and its exact gradients.
pub fn loss_and_gradients(net: &ToyScoreNet, batch: &TrainBatch, spec: &DiffusionSpec) -> Result<LossGradients> {
    require_identity(spec, net)?;
    let n = net.arch.dim;
    let x_t = batch.noisy(spec)?;
    let total = batch.num_frames();
    let mut input = Array2::zeros((total, net.layout.input_size()));
    let mut row = 0;
    for ((xt, mu), &t) in x_t.iter().zip(&batch.mu).zip(&batch.t) {
        if xt.ncols() != n {
            return Err(Error::shape(format!("{} feature columns, network expects {n}", xt.ncols())));
        }
        net.assemble_input(xt.view(), mu.view(), t, &mut input, row);
        row += xt.nrows();
    }
    let (raw, cache) = net.layout.forward_cached(&net.params, input.view());

    let norm = total as f64;
    let mut loss = 0.0;
    let mut d_out = Array2::zeros(raw.raw_dim());
    let mut row = 0;
    for (xi, &t) in batch.xi.iter().zip(&batch.t) {
        let lam = spec.schedule.lambda_scalar(t)?;
        let scale = net.output_scale(t)?;
        let rows = xi.nrows();
        let s_blk = &raw.slice(s![row..row + rows, ..]) * scale;
        let resid = s_blk + &(xi / lam.sqrt());
        loss += lam * resid.iter().map(|r| r * r).sum::<f64>();
        // d/draw of λ ‖scale·raw + ξ/√λ‖²
        d_out.slice_mut(s![row..row + rows, ..]).assign(&(resid * (2.0 * lam * scale / norm)));
        row += rows;
    }
    loss /= norm;

    let mut grads = vec![0.0; net.params.len()];
    let d_in = net.layout.backward(&net.params, &cache, d_out, &mut grads);

    let mut mu_grads = Vec::with_capacity(batch.mu.len());
    let mut row = 0;
    for (mu, &t) in batch.mu.iter().zip(&batch.t) {
        let rows = mu.nrows();
        let a = (-0.5 * spec.schedule.beta_integral(0.0, t)?).exp();
        let d_x = d_in.slice(s![row..row + rows, 0..n]);
        let d_mu = d_in.slice(s![row..row + rows, n..2 * n]);
        mu_grads.push(&d_mu + &(&d_x * (1.0 - a)));
        row += rows;
    }
    Ok(LossGradients { loss, params: grads, mu: mu_grads })
}

pub fn diffusion_loss(net: &ToyScoreNet, batch: &TrainBatch, spec: &DiffusionSpec) -> Result<f64> {
    require_identity(spec, net)?;
    let x_t = batch.noisy(spec)?;
    let mut loss = 0.0;
    for ((xt, mu), (xi, &t)) in x_t.iter().zip(&batch.mu).zip(batch.xi.iter().zip(&batch.t)) {
        let lam = spec.schedule.lambda_scalar(t)?;
        let s = net.forward(xt.view(), mu.view(), t)?;
        let resid = s + &(xi / lam.sqrt());
        loss += lam * resid.iter().map(|r| r * r).sum::<f64>();
    }
    Ok(loss / batch.num_frames() as f64)
}

pub fn score_gradients(net: &ToyScoreNet, batch: &TrainBatch, spec: &DiffusionSpec) -> Result<Vec<f64>> {
    Ok(loss_and_gradients(net, batch, spec)?.params)
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub const DEFAULT_LR: f64 = 1e-4;

    pub fn new(num_params: usize, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: vec![0.0; num_params], v: vec![0.0; num_params] }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape(format!(
                "optimizer tracks {} parameters, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powf(self.step as f64);
        let c2 = 1.0 - self.beta2.powf(self.step as f64);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

impl Default for AdamState {
    fn default() -> Self {
        Self::new(0, Self::DEFAULT_LR)
    }
}
