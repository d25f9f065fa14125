//! Toy text-to-feature pipeline: token encoder, duration predictor and diffusion decoder,
//! trained jointly on a synthetic corpus.
//!
//! Training alternates two steps. First the current parameters are frozen and monotonic
//! alignment search assigns every target frame to a token. Then one optimizer step is
//! taken on `w_enc L_enc + w_dp L_dp + w_diff L_diff` with that alignment held fixed:
//!
//! * `L_enc` is the Gaussian negative log-likelihood of the frames under their aligned
//!   encoder rows, per feature element.
//! * `L_dp` is the squared error of predicted log-durations. The predictor reads a
//!   detached copy of the encoder output, so no gradient flows back into the encoder.
//! * `L_diff` is the diffusion loss on fixed-length random segments of the aligned
//!   `(y, μ)` pairs; its gradient reaches the encoder through `μ`.

use std::fs;
use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::align::{
    durations_from_alignment, encoder_loss, expand_with, mas, scale_durations, Alignment, DurationPredictor,
    DurationPredictorArch,
};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::io::{feature_header, load_matrix, save_matrix};
use crate::mlp::{ForwardCache, MlpLayout};
use crate::rng::{derive_seed, seeded, standard_normal};
use crate::sampler::{sample_terminal, solve_reverse, SamplerConfig, ScoreModel, TracePoint};
use crate::schedule::{DiffusionSpec, NoiseSchedule};
use crate::scorenet::{default_t_min, loss_and_gradients, AdamState, ScoreNetArch, ToyScoreNet, TrainBatch};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    ids: Vec<usize>,
}

impl TokenSequence {
    pub fn new(ids: Vec<usize>, vocab: usize) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::domain("empty token sequence"));
        }
        if let Some(&id) = ids.iter().find(|&&id| id >= vocab) {
            return Err(Error::UnknownToken { id, vocab });
        }
        Ok(Self { ids })
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Embedding table followed by a shared affine map.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyEncoder {
    vocab: usize,
    dim: usize,
    transform: MlpLayout,
    /// `vocab × dim` embedding (row-major), then the transform's weight and bias.
    pub params: Vec<f64>,
}

impl ToyEncoder {
    pub fn new<R: Rng + ?Sized>(vocab: usize, dim: usize, rng: &mut R) -> Result<Self> {
        if vocab == 0 || dim == 0 {
            return Err(Error::Config("encoder vocabulary and dimension must be positive".into()));
        }
        let transform = MlpLayout::new(vec![dim, dim]);
        let mut params: Vec<f64> = standard_normal(vocab * dim, rng).into_iter().map(|v: f64| 0.5 * v).collect();
        params.extend(transform.init(rng, false));
        Ok(Self { vocab, dim, transform, params })
    }

    pub fn from_params(vocab: usize, dim: usize, params: Vec<f64>) -> Result<Self> {
        let transform = MlpLayout::new(vec![dim.max(1), dim.max(1)]);
        if vocab == 0 || dim == 0 || params.len() != vocab * dim + transform.num_params() {
            return Err(Error::shape(format!("encoder parameters do not fit vocab {vocab} × dim {dim}")));
        }
        Ok(Self { vocab, dim, transform, params })
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn split(&self) -> (&[f64], &[f64]) {
        self.params.split_at(self.vocab * self.dim)
    }

    fn embed(&self, tokens: &TokenSequence) -> Result<Array2<f64>> {
        let (table, _) = self.split();
        let mut rows = Array2::zeros((tokens.len(), self.dim));
        for (mut r, &id) in rows.rows_mut().into_iter().zip(tokens.ids()) {
            if id >= self.vocab {
                return Err(Error::UnknownToken { id, vocab: self.vocab });
            }
            r.assign(&ndarray::ArrayView1::from(&table[id * self.dim..(id + 1) * self.dim]));
        }
        Ok(rows)
    }

    /// `L × n` encoded rows `μ̃`.
    pub fn encode(&self, tokens: &TokenSequence) -> Result<Array2<f64>> {
        let (_, transform) = self.split();
        Ok(self.transform.forward(transform, self.embed(tokens)?.view()))
    }

    fn encode_cached(&self, tokens: &TokenSequence) -> Result<(Array2<f64>, ForwardCache)> {
        let (_, transform) = self.split();
        Ok(self.transform.forward_cached(transform, self.embed(tokens)?.view()))
    }

    /// Accumulate the parameter gradient for an upstream gradient on `μ̃`.
    fn backward(&self, tokens: &TokenSequence, cache: &ForwardCache, d_mu: Array2<f64>, grads: &mut [f64]) {
        let split = self.vocab * self.dim;
        let (g_table, g_transform) = grads.split_at_mut(split);
        let d_emb = self.transform.backward(&self.params[split..], cache, d_mu, g_transform);
        for (row, &id) in d_emb.rows().into_iter().zip(tokens.ids()) {
            for (g, d) in g_table[id * self.dim..(id + 1) * self.dim].iter_mut().zip(row) {
                *g += d;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelArch {
    pub vocab: usize,
    pub dim: usize,
    pub duration_hidden: usize,
    pub decoder_hidden: Vec<usize>,
    pub time_features: usize,
    pub max_frequency: f64,
}

impl Default for ModelArch {
    fn default() -> Self {
        let net = ScoreNetArch::default();
        Self {
            vocab: 12,
            dim: net.dim,
            duration_hidden: DurationPredictorArch::default().hidden,
            decoder_hidden: net.hidden,
            time_features: net.time_features,
            max_frequency: net.max_frequency,
        }
    }
}

impl ModelArch {
    pub fn scorenet(&self) -> ScoreNetArch {
        ScoreNetArch {
            dim: self.dim,
            hidden: self.decoder_hidden.clone(),
            time_features: self.time_features,
            max_frequency: self.max_frequency,
        }
    }

    pub fn duration(&self) -> DurationPredictorArch {
        DurationPredictorArch { dim: self.dim, hidden: self.duration_hidden }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradTtsModel {
    pub encoder: ToyEncoder,
    pub duration: DurationPredictor,
    pub decoder: ToyScoreNet,
    pub spec: DiffusionSpec,
}

impl GradTtsModel {
    pub fn new<R: Rng + ?Sized>(arch: &ModelArch, schedule: NoiseSchedule, rng: &mut R) -> Result<Self> {
        let encoder = ToyEncoder::new(arch.vocab, arch.dim, rng)?;
        let duration = DurationPredictor::new(arch.duration(), rng)?;
        let decoder = ToyScoreNet::new(arch.scorenet(), schedule, rng)?;
        let spec = DiffusionSpec::identity(schedule, arch.dim)?;
        Ok(Self { encoder, duration, decoder, spec })
    }

    pub fn dim(&self) -> usize {
        self.encoder.dim()
    }

    pub fn vocab(&self) -> usize {
        self.encoder.vocab()
    }

    pub fn tokens(&self, ids: Vec<usize>) -> Result<TokenSequence> {
        TokenSequence::new(ids, self.vocab())
    }

    pub fn encode(&self, tokens: &TokenSequence) -> Result<Array2<f64>> {
        self.encoder.encode(tokens)
    }

    /// `[encoder, duration predictor, decoder]` lengths.
    pub fn group_sizes(&self) -> [usize; 3] {
        [self.encoder.params.len(), self.duration.params.len(), self.decoder.params.len()]
    }

    pub fn num_params(&self) -> usize {
        self.group_sizes().iter().sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.num_params());
        p.extend(&self.encoder.params);
        p.extend(&self.duration.params);
        p.extend(&self.decoder.params);
        p
    }

    pub fn set_flat_params(&mut self, p: &[f64]) -> Result<()> {
        let [a, b, c] = self.group_sizes();
        if p.len() != a + b + c {
            return Err(Error::shape(format!("model has {} parameters, got {}", a + b + c, p.len())));
        }
        self.encoder.params.copy_from_slice(&p[..a]);
        self.duration.params.copy_from_slice(&p[a..a + b]);
        self.decoder.params.copy_from_slice(&p[a + b..]);
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let sched = &self.spec.schedule;
        let ck = Checkpoint::new()
            .with_meta("kind", "gradtts-model")
            .with_meta("vocab", self.vocab())
            .with_meta("dim", self.dim())
            .with_meta("duration.hidden", self.duration.arch().hidden)
            .with_meta("schedule.beta0", sched.beta0)
            .with_meta("schedule.beta1", sched.beta1)
            .with_meta("schedule.horizon", sched.horizon)
            .with_section("encoder", self.encoder.params.clone())
            .with_section("duration", self.duration.params.clone());
        self.decoder.to_checkpoint(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.meta("kind")? != "gradtts-model" {
            return Err(Error::Format("checkpoint does not hold a full model".into()));
        }
        let vocab: usize = ck.meta_parse("vocab")?;
        let dim: usize = ck.meta_parse("dim")?;
        let schedule = NoiseSchedule::new(
            ck.meta_parse("schedule.beta0")?,
            ck.meta_parse("schedule.beta1")?,
            ck.meta_parse("schedule.horizon")?,
        )?;
        let bad = |e: Error| Error::Format(e.to_string());
        let encoder = ToyEncoder::from_params(vocab, dim, ck.section("encoder")?.to_vec()).map_err(bad)?;
        let duration = DurationPredictor::from_params(
            DurationPredictorArch { dim, hidden: ck.meta_parse("duration.hidden")? },
            ck.section("duration")?.to_vec(),
        )
        .map_err(bad)?;
        let decoder = ToyScoreNet::from_checkpoint(ck)?;
        if decoder.arch().dim != dim {
            return Err(Error::Format("decoder dimension disagrees with the encoder".into()));
        }
        let spec = DiffusionSpec::identity(schedule, dim)?;
        Ok(Self { encoder, duration, decoder, spec })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub enc: f64,
    pub dp: f64,
    pub diff: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { enc: 1.0, dp: 1.0, diff: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    /// Frames per diffusion-loss segment; shorter utterances are used whole.
    pub segment_frames: usize,
    pub iterations: usize,
    pub weights: LossWeights,
    /// Lowest diffusion time; `None` means `1e-5 T`.
    pub t_min: Option<f64>,
    pub seed: u64,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: AdamState::DEFAULT_LR,
            batch_size: 16,
            segment_frames: 32,
            iterations: 5000,
            weights: LossWeights::default(),
            t_min: None,
            seed: 0,
            log_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 || self.segment_frames == 0 {
            return Err(Error::Config("batch size and segment length must be positive".into()));
        }
        let w = self.weights;
        if [w.enc, w.dp, w.diff].iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        if let Some(t) = self.t_min {
            if !(t > 0.0) {
                return Err(Error::Config("t_min must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn t_min_for(&self, schedule: &NoiseSchedule) -> f64 {
        self.t_min.unwrap_or_else(|| default_t_min(schedule))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub enc: f64,
    pub dp: f64,
    pub diff: f64,
    /// Weighted sum that the optimizer minimizes.
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreparedItem {
    pub tokens: TokenSequence,
    pub features: Array2<f64>,
    pub alignment: Alignment,
    pub segment_start: usize,
    pub segment_len: usize,
}

/// Everything random about one training step, fixed before the loss is evaluated.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedBatch {
    pub items: Vec<PreparedItem>,
    pub t: Vec<f64>,
    pub xi: Vec<Array2<f64>>,
    pub t_min: f64,
}

/// Align every pair with the current parameters and draw segments, times and noise.
pub fn prepare_batch<R: Rng + ?Sized>(
    model: &GradTtsModel,
    pairs: &[&CorpusPair],
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<PreparedBatch> {
    let t_min = cfg.t_min_for(&model.spec.schedule);
    let mut items = Vec::with_capacity(pairs.len());
    let mut t = Vec::with_capacity(pairs.len());
    let mut xi = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let mu_tilde = model.encode(&pair.tokens)?;
        let alignment = mas(mu_tilde.view(), pair.features.view())?;
        let frames = pair.features.nrows();
        let segment_len = cfg.segment_frames.min(frames);
        let segment_start = rng.random_range(0..=frames - segment_len);
        t.push(rng.random_range(t_min..=model.spec.horizon()));
        xi.push(standard_normal((segment_len, model.dim()), rng));
        items.push(PreparedItem {
            tokens: pair.tokens.clone(),
            features: pair.features.clone(),
            alignment,
            segment_start,
            segment_len,
        });
    }
    Ok(PreparedBatch { items, t, xi, t_min })
}

/// Losses and the gradient over [`GradTtsModel::flat_params`] for a prepared batch.
pub fn objective(model: &GradTtsModel, batch: &PreparedBatch, w: LossWeights) -> Result<(LossReport, Vec<f64>)> {
    let n = model.dim();
    let [n_enc, n_dp, _] = model.group_sizes();
    let mut grads = vec![0.0; model.num_params()];

    let mut encoded = Vec::with_capacity(batch.items.len());
    for item in &batch.items {
        encoded.push(model.encoder.encode_cached(&item.tokens)?);
    }

    // encoder likelihood, per element
    let elements: f64 = batch.items.iter().map(|it| (it.features.nrows() * n) as f64).sum();
    let mut l_enc = 0.0;
    let mut d_mu: Vec<Array2<f64>> = Vec::with_capacity(batch.items.len());
    for (item, (mu_tilde, _)) in batch.items.iter().zip(&encoded) {
        l_enc += encoder_loss(mu_tilde.view(), item.features.view(), &item.alignment)?;
        let mut d = Array2::<f64>::zeros(mu_tilde.raw_dim());
        for (&i, y) in item.alignment.frame_to_token().iter().zip(item.features.rows()) {
            let mut row = d.row_mut(i);
            row += &(&mu_tilde.row(i) - &y);
        }
        d_mu.push(d * (w.enc / elements));
    }
    l_enc /= elements;

    // duration loss on a detached copy of the encoder output
    let detached: Vec<ArrayView2<f64>> = encoded.iter().map(|(m, _)| m.view()).collect();
    let stacked = ndarray::concatenate(Axis(0), &detached).map_err(|e| Error::shape(e.to_string()))?;
    let targets: Array1<f64> =
        batch.items.iter().flat_map(|it| durations_from_alignment(&it.alignment).to_vec()).collect();
    let (l_dp, g_dp) = model.duration.loss_and_gradients(stacked.view(), targets.view())?;
    for (g, v) in grads[n_enc..n_enc + n_dp].iter_mut().zip(&g_dp) {
        *g += w.dp * v;
    }

    // diffusion loss on segments
    let mut x0 = Vec::with_capacity(batch.items.len());
    let mut mus = Vec::with_capacity(batch.items.len());
    for (item, (mu_tilde, _)) in batch.items.iter().zip(&encoded) {
        let rng = item.segment_start..item.segment_start + item.segment_len;
        x0.push(item.features.slice(s![rng.clone(), ..]).to_owned());
        mus.push(expand_with(mu_tilde.view(), &item.alignment).slice(s![rng, ..]).to_owned());
    }
    let tb = TrainBatch::new(x0, mus, batch.t.clone(), batch.xi.clone(), batch.t_min)?;
    let diff = loss_and_gradients(&model.decoder, &tb, &model.spec)?;
    for (g, v) in grads[n_enc + n_dp..].iter_mut().zip(&diff.params) {
        *g += w.diff * v;
    }
    for ((item, d), g_seg) in batch.items.iter().zip(d_mu.iter_mut()).zip(&diff.mu) {
        let owners = &item.alignment.frame_to_token()[item.segment_start..item.segment_start + item.segment_len];
        for (&i, g) in owners.iter().zip(g_seg.rows()) {
            let mut row = d.row_mut(i);
            row.scaled_add(w.diff, &g);
        }
    }

    for ((item, (_, cache)), d) in batch.items.iter().zip(&encoded).zip(d_mu) {
        model.encoder.backward(&item.tokens, cache, d, &mut grads[..n_enc]);
    }

    let report = LossReport { enc: l_enc, dp: l_dp, diff: diff.loss, total: w.enc * l_enc + w.dp * l_dp + w.diff * diff.loss };
    Ok((report, grads))
}

/// Align with frozen parameters, then take one optimizer step on the weighted loss.
pub fn train_step<R: Rng + ?Sized>(
    model: &mut GradTtsModel,
    adam: &mut AdamState,
    pairs: &[&CorpusPair],
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<LossReport> {
    let batch = prepare_batch(model, pairs, cfg, rng)?;
    let (report, grads) = objective(model, &batch, cfg.weights)?;
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NumericalFailure { t: 0.0, what: "non-finite training gradient".into() });
    }
    let mut params = model.flat_params();
    adam.step(&mut params, &grads)?;
    model.set_flat_params(&params)?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub report: LossReport,
}

/// Header `step,loss,enc,dp,diff`.
pub fn write_loss_csv<W: std::io::Write>(records: &[LossRecord], mut out: W) -> Result<()> {
    writeln!(out, "step,loss,enc,dp,diff")?;
    for r in records {
        let l = r.report;
        writeln!(out, "{},{},{},{},{}", r.step, l.total, l.enc, l.dp, l.diff)?;
    }
    Ok(())
}

/// Run the configured number of steps on batches drawn with replacement from the corpus.
pub fn train(model: &mut GradTtsModel, corpus: &ToyCorpus, cfg: &TrainConfig) -> Result<Vec<LossRecord>> {
    cfg.validate()?;
    if corpus.pairs.is_empty() {
        return Err(Error::Config("training corpus is empty".into()));
    }
    if corpus.recipe.dim != model.dim() || corpus.recipe.vocab > model.vocab() {
        return Err(Error::Config(format!(
            "corpus (vocab {}, dim {}) does not fit the model (vocab {}, dim {})",
            corpus.recipe.vocab,
            corpus.recipe.dim,
            model.vocab(),
            model.dim()
        )));
    }
    let mut rng = seeded(cfg.seed);
    let mut adam = AdamState::new(model.num_params(), cfg.lr);
    let mut records = Vec::with_capacity(cfg.iterations);
    for step in 1..=cfg.iterations {
        let pairs: Vec<&CorpusPair> = (0..cfg.batch_size).map(|_| corpus.pairs.choose(&mut rng).expect("non-empty")).collect();
        let report = train_step(model, &mut adam, &pairs, cfg, &mut rng)?;
        if cfg.log_every > 0 && (step % cfg.log_every == 0 || step == 1) {
            log::info!(
                "step {step}: loss {:.4} (enc {:.4}, dp {:.4}, diff {:.4})",
                report.total,
                report.enc,
                report.dp,
                report.diff
            );
        }
        records.push(LossRecord { step, report });
    }
    Ok(records)
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceOutput {
    pub features: Array2<f64>,
    pub durations: Vec<usize>,
    pub log_durations: Array1<f64>,
    /// Frame-level terminal mean.
    pub mu: Array2<f64>,
}

/// Encode, predict and scale durations, expand, draw terminal noise and run the reverse dynamics.
pub fn infer<R: Rng + ?Sized>(
    model: &GradTtsModel,
    tokens: &TokenSequence,
    cfg: &SamplerConfig,
    tempo: f64,
    rng: &mut R,
) -> Result<InferenceOutput> {
    infer_with(model, &model.decoder, tokens, cfg, tempo, rng, None)
}

/// [`infer`] with any score model in place of the decoder, optionally tracing the solve.
pub fn infer_with<S: ScoreModel + ?Sized, R: Rng + ?Sized>(
    model: &GradTtsModel,
    score: &S,
    tokens: &TokenSequence,
    cfg: &SamplerConfig,
    tempo: f64,
    rng: &mut R,
    trace: Option<&mut Vec<TracePoint>>,
) -> Result<InferenceOutput> {
    cfg.validate()?;
    let mu_tilde = model.encode(tokens)?;
    let log_durations = model.duration.predict(mu_tilde.view())?;
    let durations = scale_durations(log_durations.view(), tempo)?;
    let alignment = Alignment::from_durations(&durations)?;
    let mu = expand_with(mu_tilde.view(), &alignment);
    let x_terminal = sample_terminal(mu.view(), cfg.temperature, rng)?;
    let features = solve_reverse(score, &model.spec, mu.view(), x_terminal.view(), cfg, rng, trace)?;
    Ok(InferenceOutput { features, durations, log_durations, mu })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusRecipe {
    pub vocab: usize,
    pub dim: usize,
    pub min_duration: usize,
    pub max_duration: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
    /// Standard deviation of the observation noise added to every feature.
    pub noise: f64,
    /// Standard deviation of the pattern entries.
    pub pattern_scale: f64,
}

impl Default for CorpusRecipe {
    fn default() -> Self {
        Self {
            vocab: 12,
            dim: 8,
            min_duration: 2,
            max_duration: 6,
            min_tokens: 4,
            max_tokens: 10,
            noise: 0.1,
            pattern_scale: 1.0,
        }
    }
}

impl CorpusRecipe {
    pub fn validate(&self) -> Result<()> {
        if self.vocab < 2 {
            return Err(Error::Config("corpus vocabulary needs at least two symbols".into()));
        }
        if self.dim == 0 {
            return Err(Error::Config("feature dimension must be positive".into()));
        }
        if self.min_duration == 0 || self.min_duration > self.max_duration {
            return Err(Error::Config("durations need 1 ≤ min_duration ≤ max_duration".into()));
        }
        if self.min_tokens == 0 || self.min_tokens > self.max_tokens {
            return Err(Error::Config("lengths need 1 ≤ min_tokens ≤ max_tokens".into()));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) || !(self.pattern_scale.is_finite() && self.pattern_scale > 0.0) {
            return Err(Error::Config("noise must be ≥ 0 and pattern_scale > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusPair {
    pub tokens: TokenSequence,
    pub features: Array2<f64>,
    /// Ground-truth frames per token, for evaluation only.
    pub durations: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyCorpus {
    pub recipe: CorpusRecipe,
    pub seed: u64,
    /// `vocab × dim` target pattern of every symbol.
    pub patterns: Array2<f64>,
    /// Ground-truth duration of every symbol.
    pub symbol_durations: Vec<usize>,
    pub pairs: Vec<CorpusPair>,
}

const PATTERN_STREAM: u64 = u64::MAX;

/// Symbols get fixed patterns and durations; utterances are random symbol strings without
/// immediate repeats, rendered as repeated patterns plus Gaussian noise.
pub fn gen_corpus(recipe: &CorpusRecipe, size: usize, seed: u64) -> Result<ToyCorpus> {
    recipe.validate()?;
    let mut rng = seeded(derive_seed(seed, PATTERN_STREAM));
    let patterns = standard_normal((recipe.vocab, recipe.dim), &mut rng) * recipe.pattern_scale;
    let symbol_durations = (0..recipe.vocab).map(|_| rng.random_range(recipe.min_duration..=recipe.max_duration)).collect();
    let mut corpus = ToyCorpus { recipe: recipe.clone(), seed, patterns, symbol_durations, pairs: Vec::new() };
    corpus.pairs = corpus.sample_pairs(size, seed, recipe.noise);
    Ok(corpus)
}

impl ToyCorpus {
    /// Fresh utterances from the same symbol inventory; pair `k` uses its own stream.
    pub fn sample_pairs(&self, count: usize, seed: u64, noise: f64) -> Vec<CorpusPair> {
        (0..count)
            .map(|k| {
                let mut rng = seeded(derive_seed(seed, k as u64));
                let r = &self.recipe;
                let len = rng.random_range(r.min_tokens..=r.max_tokens);
                let mut ids = Vec::with_capacity(len);
                for _ in 0..len {
                    let id = match ids.last() {
                        None => rng.random_range(0..r.vocab),
                        Some(&prev) => {
                            let id = rng.random_range(0..r.vocab - 1);
                            if id >= prev {
                                id + 1
                            } else {
                                id
                            }
                        }
                    };
                    ids.push(id);
                }
                let tokens = TokenSequence::new(ids, r.vocab).expect("ids drawn from the vocabulary");
                let clean = self.render(&tokens);
                let features = if noise > 0.0 { &clean + &(standard_normal(clean.raw_dim(), &mut rng) * noise) } else { clean };
                let durations = tokens.ids().iter().map(|&i| self.symbol_durations[i]).collect();
                CorpusPair { tokens, features, durations }
            })
            .collect()
    }

    /// Noise-free features: each pattern repeated for its symbol's duration.
    pub fn render(&self, tokens: &TokenSequence) -> Array2<f64> {
        let rows: Vec<usize> =
            tokens.ids().iter().flat_map(|&i| std::iter::repeat_n(i, self.symbol_durations[i])).collect();
        self.patterns.select(Axis(0), &rows)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let header = feature_header(self.recipe.dim);
        let mut entries = Vec::with_capacity(self.pairs.len());
        for (k, pair) in self.pairs.iter().enumerate() {
            let file = format!("pair_{k:05}.csv");
            save_matrix(&dir.join(&file), &header, pair.features.view())?;
            entries.push(ManifestPair { tokens: pair.tokens.ids().to_vec(), durations: pair.durations.clone(), file });
        }
        let manifest = CorpusManifest {
            recipe: self.recipe.clone(),
            seed: self.seed,
            patterns: self.patterns.rows().into_iter().map(|r| r.to_vec()).collect(),
            symbol_durations: self.symbol_durations.clone(),
            pairs: entries,
        };
        fs::write(dir.join(CORPUS_MANIFEST), serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join(CORPUS_MANIFEST))?;
        let m: CorpusManifest = serde_json::from_str(&text)?;
        m.recipe.validate()?;
        let (v, n) = (m.recipe.vocab, m.recipe.dim);
        if m.patterns.len() != v || m.patterns.iter().any(|p| p.len() != n) || m.symbol_durations.len() != v {
            return Err(Error::Format("corpus manifest tables do not match the recipe".into()));
        }
        let patterns = Array2::from_shape_vec((v, n), m.patterns.concat()).expect("checked");
        let mut pairs = Vec::with_capacity(m.pairs.len());
        for entry in m.pairs {
            let (_, features) = load_matrix(&dir.join(&entry.file))?;
            let tokens = TokenSequence::new(entry.tokens, v)?;
            if features.ncols() != n
                || entry.durations.len() != tokens.len()
                || entry.durations.iter().sum::<usize>() != features.nrows()
            {
                return Err(Error::Format(format!("{} does not match its manifest entry", entry.file)));
            }
            pairs.push(CorpusPair { tokens, features, durations: entry.durations });
        }
        Ok(Self { recipe: m.recipe, seed: m.seed, patterns, symbol_durations: m.symbol_durations, pairs })
    }
}

pub const CORPUS_MANIFEST: &str = "manifest.json";

#[derive(Debug, Serialize, Deserialize)]
struct ManifestPair {
    tokens: Vec<usize>,
    durations: Vec<usize>,
    file: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct CorpusManifest {
    recipe: CorpusRecipe,
    seed: u64,
    patterns: Vec<Vec<f64>>,
    symbol_durations: Vec<usize>,
    pairs: Vec<ManifestPair>,
}

/// Fraction of tokens whose MAS duration under the model equals the ground truth.
pub fn mas_recovery(model: &GradTtsModel, pairs: &[CorpusPair]) -> Result<f64> {
    let mut hit = 0usize;
    let mut total = 0usize;
    for pair in pairs {
        let mu_tilde = model.encode(&pair.tokens)?;
        let found = mas(mu_tilde.view(), pair.features.view())?.durations();
        hit += found.iter().zip(&pair.durations).filter(|(a, b)| a == b).count();
        total += pair.durations.len();
    }
    Ok(hit as f64 / total.max(1) as f64)
}

/// Mean over symbols of `‖μ̃_symbol − pattern‖`.
pub fn pattern_distance(model: &GradTtsModel, corpus: &ToyCorpus) -> Result<f64> {
    let v = corpus.recipe.vocab;
    let tokens = TokenSequence::new((0..v).collect(), model.vocab())?;
    let mu = model.encode(&tokens)?;
    Ok((&mu - &corpus.patterns).rows().into_iter().map(|r| r.dot(&r).sqrt()).sum::<f64>() / v as f64)
}

/// Mean over frames of the per-element RMS distance to the pattern of the frame's token,
/// with frames assigned to tokens by `durations`.
pub fn frame_error(features: ArrayView2<f64>, tokens: &TokenSequence, durations: &[usize], patterns: ArrayView2<f64>) -> Result<f64> {
    let alignment = Alignment::from_durations(durations)?;
    if alignment.num_tokens() != tokens.len() || alignment.num_frames() != features.nrows() {
        return Err(Error::shape("durations do not cover the features"));
    }
    let n = features.ncols() as f64;
    let total: f64 = alignment
        .frame_to_token()
        .iter()
        .zip(features.rows())
        .map(|(&i, y)| {
            let d = &y - &patterns.row(tokens.ids()[i]);
            (d.dot(&d) / n).sqrt()
        })
        .sum();
    Ok(total / features.nrows() as f64)
}

/// 1-D Wasserstein-1 distance between the pooled elements of `y − pattern` and `N(0, noise²)`.
///
/// Unlike [`frame_error`] this penalizes outputs that are too concentrated as well as too
/// spread out: an exact sampler at unit temperature scores zero up to sampling error.
pub fn deviation_w1(outputs: &[(ArrayView2<f64>, &TokenSequence, &[usize])], patterns: ArrayView2<f64>, noise: f64) -> Result<f64> {
    let mut dev = Vec::new();
    for (features, tokens, durations) in outputs {
        let alignment = Alignment::from_durations(durations)?;
        if alignment.num_tokens() != tokens.len() || alignment.num_frames() != features.nrows() {
            return Err(Error::shape("durations do not cover the features"));
        }
        for (&i, y) in alignment.frame_to_token().iter().zip(features.rows()) {
            dev.extend((&y - &patterns.row(tokens.ids()[i])).iter());
        }
    }
    if dev.is_empty() {
        return Err(Error::shape("no frames to compare"));
    }
    dev.sort_by(f64::total_cmp);
    let m = dev.len() as f64;
    let reference = statrs::distribution::Normal::new(0.0, noise.max(f64::MIN_POSITIVE)).map_err(|e| Error::domain(e.to_string()))?;
    use statrs::distribution::ContinuousCDF;
    Ok(dev
        .iter()
        .enumerate()
        .map(|(k, v)| {
            let q = if noise > 0.0 { reference.inverse_cdf((k as f64 + 0.5) / m) } else { 0.0 };
            (v - q).abs()
        })
        .sum::<f64>()
        / m)
}
