//! The `gradtts` command-line tool.
//!
//! Every subcommand reads an optional JSON [`RunConfig`], applies flag overrides, validates
//! the result and writes its outputs under the output directory (flag `--out`, then the
//! config's `out_dir`, then `$GRADTTS_OUT`, then `./out`). Logs go to standard error.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 usage error, 3 invalid configuration or input,
//! 4 numerical failure.

use std::ffi::OsString;
use std::fs::{self, File};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::align::{encoder_loss, mas, Alignment};
use crate::analytic::GaussianScore;
use crate::bench::{bench_steps, write_bench_csv, MixtureBench, ModelBench};
use crate::diffusion::{simulate_forward_em, MixturePrior};
use crate::error::{Error, Result};
use crate::io::{feature_header, load_matrix, parse_list, save_matrix};
use crate::rng::{derive_seed, seeded};
use crate::sampler::{log_likelihood, write_trace_csv, SamplerConfig, SamplerMode};
use crate::schedule::{DiffusionSpec, NoiseSchedule};
use crate::tts::{gen_corpus, infer_with, train, write_loss_csv, CorpusRecipe, GradTtsModel, ModelArch, ToyCorpus, TrainConfig};

pub const OUT_ENV: &str = "GRADTTS_OUT";

pub const EXIT_IO: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSettings {
    pub num_steps: usize,
    pub mode: SamplerMode,
    pub temperature: f64,
}

impl Default for SamplerSettings {
    fn default() -> Self {
        let d = SamplerConfig::default();
        Self { num_steps: d.num_steps, mode: d.mode, temperature: d.temperature }
    }
}

impl SamplerSettings {
    pub fn to_config(self, seed: u64) -> SamplerConfig {
        SamplerConfig { num_steps: self.num_steps, mode: self.mode, temperature: self.temperature, seed }
    }
}

/// Full experiment configuration. Every field is optional in the JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    pub schedule: NoiseSchedule,
    pub sampler: SamplerSettings,
    pub model: ModelArch,
    pub train: TrainConfig,
    pub corpus: CorpusRecipe,
    pub corpus_size: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: None,
            schedule: NoiseSchedule::default(),
            sampler: SamplerSettings::default(),
            model: ModelArch::default(),
            train: TrainConfig::default(),
            corpus: CorpusRecipe::default(),
            corpus_size: 200,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config file {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |e: Error| match e {
            Error::Config(_) => e,
            other => Error::Config(other.to_string()),
        };
        self.schedule.validate().map_err(cfg)?;
        self.sampler.to_config(self.seed).validate().map_err(cfg)?;
        self.model.scorenet().validate()?;
        if self.model.vocab == 0 || self.model.duration_hidden == 0 {
            return Err(Error::Config("model vocabulary and duration predictor width must be positive".into()));
        }
        self.train.validate()?;
        self.corpus.validate()?;
        if self.corpus.dim != self.model.dim || self.corpus.vocab > self.model.vocab {
            return Err(Error::Config(format!(
                "corpus (vocab {}, dim {}) does not fit the model (vocab {}, dim {})",
                self.corpus.vocab, self.corpus.dim, self.model.vocab, self.model.dim
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Parser)]
#[command(name = "gradtts", version, about = "Score-based diffusion toolkit and toy text-to-feature pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus (manifest.json plus one CSV per utterance).
    GenCorpus {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        size: Option<usize>,
        #[arg(long)]
        vocab: Option<usize>,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Train the pipeline on a corpus; writes model.ckpt, loss.csv and run.json.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        enc_weight: Option<f64>,
    },
    /// Synthesize features for a token sequence; writes features.csv and durations.csv.
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        /// Comma-separated token ids.
        #[arg(long)]
        tokens: String,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, value_enum)]
        mode: Option<SamplerMode>,
        #[arg(long)]
        temperature: Option<f64>,
        /// Duration multiplier.
        #[arg(long, default_value_t = 1.0)]
        tempo: f64,
        /// Also write the per-step summary to trace.csv.
        #[arg(long)]
        trace: bool,
    },
    /// Monotonic alignment of a feature CSV to encoded tokens; writes alignment.csv.
    Align {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        features: PathBuf,
        /// Encoded token rows as CSV; alternative to --model with --tokens.
        #[arg(long, conflicts_with_all = ["model", "tokens"])]
        encoded: Option<PathBuf>,
        #[arg(long, requires = "tokens")]
        model: Option<PathBuf>,
        #[arg(long, requires = "model")]
        tokens: Option<String>,
    },
    /// Forward Euler–Maruyama path of one point; writes path.csv.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        x0: String,
        #[arg(long)]
        mu: String,
        /// Diagonal of the terminal covariance (default all ones).
        #[arg(long)]
        sigma: Option<String>,
        #[arg(long, default_value_t = 200)]
        steps: usize,
    },
    /// ODE log-likelihood of CSV rows under a Gaussian data law with the exact score;
    /// writes loglik.csv.
    Loglik {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        mean: String,
        /// Diagonal data variance.
        #[arg(long)]
        var: String,
        /// Terminal mean (default zero).
        #[arg(long)]
        mu: Option<String>,
        #[arg(long, default_value_t = 1000)]
        steps: usize,
        #[arg(long, default_value_t = 32)]
        probes: usize,
    },
    /// Error and wall-clock per step count; writes bench.csv.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "4,10,100,1000")]
        steps: String,
        #[arg(long, default_value_t = 3)]
        reps: usize,
        /// Samples per trial for the analytic target.
        #[arg(long, default_value_t = 2000)]
        samples: usize,
        /// Benchmark a trained model instead of the analytic mixture (needs --corpus).
        #[arg(long, requires = "corpus")]
        model: Option<PathBuf>,
        #[arg(long, requires = "model")]
        corpus: Option<PathBuf>,
        /// Utterances per trial for a trained model.
        #[arg(long, default_value_t = 20)]
        utterances: usize,
    },
}

/// Parse `argv` (including the program name), run, and return the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NumericalFailure { .. } | Error::DegenerateVariance { .. } => EXIT_NUMERICAL,
        Error::Io(_) => EXIT_IO,
        _ => EXIT_CONFIG,
    }
}

fn resolve(common: &Common) -> Result<(RunConfig, PathBuf)> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let out = common
        .out
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    Ok((cfg, out))
}

fn prepare_out(out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    Ok(())
}

fn list(text: &str, what: &str) -> Result<Vec<f64>> {
    let v = parse_list(text)?;
    if v.is_empty() {
        return Err(Error::Config(format!("--{what} is empty")));
    }
    Ok(v)
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::GenCorpus { common, size, vocab, dim, noise } => {
            let (mut cfg, out) = resolve(&common)?;
            if let Some(v) = size {
                cfg.corpus_size = v;
            }
            if let Some(v) = vocab {
                cfg.corpus.vocab = v;
                cfg.model.vocab = cfg.model.vocab.max(v);
            }
            if let Some(v) = dim {
                cfg.corpus.dim = v;
                cfg.model.dim = v;
            }
            if let Some(v) = noise {
                cfg.corpus.noise = v;
            }
            cfg.validate()?;
            prepare_out(&out)?;
            let corpus = gen_corpus(&cfg.corpus, cfg.corpus_size, cfg.seed)?;
            corpus.save(&out)?;
            log::info!("wrote {} utterances to {}", corpus.pairs.len(), out.display());
            Ok(())
        }
        Command::Train { common, corpus, iterations, lr, batch_size, enc_weight } => {
            let (mut cfg, out) = resolve(&common)?;
            if let Some(v) = iterations {
                cfg.train.iterations = v;
            }
            if let Some(v) = lr {
                cfg.train.lr = v;
            }
            if let Some(v) = batch_size {
                cfg.train.batch_size = v;
            }
            if let Some(v) = enc_weight {
                cfg.train.weights.enc = v;
            }
            cfg.train.seed = derive_seed(cfg.seed, 1);
            let data = ToyCorpus::load(&corpus)?;
            cfg.corpus = data.recipe.clone();
            cfg.model.dim = data.recipe.dim;
            cfg.model.vocab = cfg.model.vocab.max(data.recipe.vocab);
            cfg.validate()?;
            prepare_out(&out)?;
            let mut model = GradTtsModel::new(&cfg.model, cfg.schedule, &mut seeded(derive_seed(cfg.seed, 0)))?;
            let records = train(&mut model, &data, &cfg.train)?;
            model.save(&out.join("model.ckpt"))?;
            write_loss_csv(&records, File::create(out.join("loss.csv"))?)?;
            let manifest = RunManifest {
                tool: "gradtts".into(),
                version: env!("CARGO_PKG_VERSION").into(),
                seed: cfg.seed,
                corpus: corpus.display().to_string(),
                config: cfg,
            };
            fs::write(out.join("run.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
            Ok(())
        }
        Command::Infer { common, model, tokens, steps, mode, temperature, tempo, trace } => {
            let (mut cfg, out) = resolve(&common)?;
            if let Some(v) = steps {
                cfg.sampler.num_steps = v;
            }
            if let Some(v) = mode {
                cfg.sampler.mode = v;
            }
            if let Some(v) = temperature {
                cfg.sampler.temperature = v;
            }
            let sampler = cfg.sampler.to_config(cfg.seed);
            sampler.validate().map_err(|e| Error::Config(e.to_string()))?;
            let model = GradTtsModel::load(&model)?;
            let ids: Vec<usize> = parse_list(&tokens)?;
            let tokens = model.tokens(ids)?;
            prepare_out(&out)?;
            let mut rng = seeded(cfg.seed);
            let mut points = Vec::new();
            let result = infer_with(&model, &model.decoder, &tokens, &sampler, tempo, &mut rng, trace.then_some(&mut points))?;
            save_matrix(&out.join("features.csv"), &feature_header(model.dim()), result.features.view())?;
            Alignment::from_durations(&result.durations)?.write_csv(File::create(out.join("durations.csv"))?)?;
            if trace {
                write_trace_csv(&points, File::create(out.join("trace.csv"))?)?;
            }
            Ok(())
        }
        Command::Align { common, features, encoded, model, tokens } => {
            let (_, out) = resolve(&common)?;
            let (_, y) = load_matrix(&features)?;
            let mu_tilde = match (encoded, model, tokens) {
                (Some(path), _, _) => load_matrix(&path)?.1,
                (None, Some(model), Some(tokens)) => {
                    let model = GradTtsModel::load(&model)?;
                    let t = model.tokens(parse_list(&tokens)?)?;
                    model.encode(&t)?
                }
                _ => return Err(Error::Config("align needs --encoded or --model with --tokens".into())),
            };
            let alignment = mas(mu_tilde.view(), y.view())?;
            prepare_out(&out)?;
            alignment.write_csv(File::create(out.join("alignment.csv"))?)?;
            log::info!(
                "aligned {} frames to {} tokens, encoder loss {:.4}",
                y.nrows(),
                mu_tilde.nrows(),
                encoder_loss(mu_tilde.view(), y.view(), &alignment)?
            );
            Ok(())
        }
        Command::Simulate { common, x0, mu, sigma, steps } => {
            let (cfg, out) = resolve(&common)?;
            let x0 = Array1::from(list(&x0, "x0")?);
            let mu = Array1::from(list(&mu, "mu")?);
            let sigma = match sigma {
                Some(s) => list(&s, "sigma")?,
                None => vec![1.0; x0.len()],
            };
            let spec = DiffusionSpec::new(cfg.schedule, sigma).map_err(|e| Error::Config(e.to_string()))?;
            let path = simulate_forward_em(&spec, x0.view(), mu.view(), steps, cfg.seed)?;
            prepare_out(&out)?;
            path.write_csv(File::create(out.join("path.csv"))?)?;
            Ok(())
        }
        Command::Loglik { common, data, mean, var, mu, steps, probes } => {
            let (cfg, out) = resolve(&common)?;
            let (_, x) = load_matrix(&data)?;
            let n = x.ncols();
            let mean = Array1::from(list(&mean, "mean")?);
            let var = list(&var, "var")?;
            let mu = match mu {
                Some(m) => Array1::from(list(&m, "mu")?),
                None => Array1::zeros(n),
            };
            if mean.len() != n || var.len() != n || mu.len() != n {
                return Err(Error::Config(format!("--mean, --var and --mu need {n} entries")));
            }
            let spec = DiffusionSpec::identity(cfg.schedule, n)?;
            let cov = Array2::from_diag(&Array1::from(var.clone()));
            let score = GaussianScore::new(mean.clone(), cov, spec.clone())?;
            let prior = MixturePrior::single(mean.to_vec(), var)?;
            prepare_out(&out)?;
            let mut rows = String::from("row,loglik,std_error,exact\n");
            for (k, row) in x.rows().into_iter().enumerate() {
                let xr = row.to_owned().insert_axis(ndarray::Axis(0));
                let mr = mu.clone().insert_axis(ndarray::Axis(0));
                let mut rng = seeded(derive_seed(cfg.seed, k as u64));
                let est = log_likelihood(&score, &spec, mr.view(), xr.view(), steps, probes, &mut rng)?;
                let exact = prior.log_density(&spec, mu.view(), row, 0.0)?;
                rows.push_str(&format!("{},{},{},{}\n", k + 1, est.value, est.std_error, exact));
            }
            fs::write(out.join("loglik.csv"), rows)?;
            Ok(())
        }
        Command::Bench { common, steps, reps, samples, model, corpus, utterances } => {
            let (cfg, out) = resolve(&common)?;
            let steps: Vec<usize> = parse_list(&steps)?;
            let rows = match (model, corpus) {
                (Some(model), Some(corpus)) => {
                    let model = GradTtsModel::load(&model)?;
                    let corpus = ToyCorpus::load(&corpus)?;
                    let pairs = corpus.sample_pairs(utterances, derive_seed(cfg.seed, 3), 0.0);
                    let target = ModelBench {
                        model: &model,
                        pairs: &pairs,
                        patterns: corpus.patterns.view(),
                        noise: corpus.recipe.noise,
                        temperature: cfg.sampler.temperature,
                    };
                    bench_steps(&steps, reps, cfg.seed, |n, rng| target.trial(n, rng))?
                }
                _ => {
                    let target = MixtureBench::new(default_bench_mixture()?, DiffusionSpec::identity(cfg.schedule, 1)?, 0.0, samples)?;
                    bench_steps(&steps, reps, cfg.seed, |n, rng| target.trial(n, rng))?
                }
            };
            prepare_out(&out)?;
            write_bench_csv(&rows, File::create(out.join("bench.csv"))?)?;
            Ok(())
        }
    }
}

/// Two well-separated components with unequal weights.
pub fn default_bench_mixture() -> Result<MixturePrior> {
    MixturePrior::new(vec![0.3, 0.7], vec![vec![-2.0], vec![2.0]], vec![vec![0.25], vec![0.25]])
}

#[derive(Debug, Serialize, Deserialize)]
struct RunManifest {
    tool: String,
    version: String,
    seed: u64,
    corpus: String,
    config: RunConfig,
}
