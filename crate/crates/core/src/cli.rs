//! Command-line driver.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::baselines::Baseline;
use crate::forecast::Pipeline;
use crate::io::workflow::{self, STAGE_TEST_DATA, STAGE_TRAIN_DATA};
use crate::io::{
    evaluate, load_sequences, save_dataset, write_svg, Bundle, DatasetRecord, ExperimentConfig, IoError, Method, ModelKind,
    PredictionRecord,
};
use crate::pose::LocomotionSequence;
use crate::synth::Split;

#[derive(Debug, Parser)]
#[command(name = "locoforecast", version, about = "Pedestrian locomotion forecasting on synthetic egocentric data")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

/// Config sources, applied in order: defaults, `--config`, `--set`, then the
/// named flags.
#[derive(Debug, Args)]
pub struct Common {
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Any config key as `dotted.key=value` (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    #[arg(long, global = true)]
    pub alpha_c: Option<f64>,
    #[arg(long, global = true)]
    pub d_ae: Option<usize>,
    #[arg(long, global = true)]
    pub t_p: Option<usize>,
    #[arg(long, global = true)]
    pub t_f: Option<usize>,
    #[arg(long, global = true)]
    pub n_local: Option<usize>,
    #[arg(long, global = true)]
    pub n_global: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub kde_norm: Option<NormArg>,
    #[arg(long, global = true, value_enum)]
    pub residual_mode: Option<ResidualArg>,
    #[arg(long, global = true, value_enum)]
    pub pooling_mode: Option<PoolingArg>,
    #[arg(long, global = true)]
    pub use_completion: Option<bool>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum NormArg {
    L2,
    L1,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ResidualArg {
    Consecutive,
    FromFirst,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum PoolingArg {
    Sequence,
    Mean,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Pipeline,
    Entangled,
    ZeroVelocity,
    ConstantVelocity,
    LastObservedVelocity,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SplitArg {
    Default,
    CameraMotion,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset (noisy detections plus ground truth).
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Number of sequences (defaults to data.train or data.test).
        #[arg(long)]
        count: Option<usize>,
        /// Draw the held-out split (own seed stream, default size data.test).
        #[arg(long)]
        test: bool,
        #[arg(long, value_enum)]
        split: Option<SplitArg>,
        /// Future frames per sequence (defaults to t_f).
        #[arg(long)]
        future: Option<usize>,
    },
    /// Train the pose-completion autoencoder on confident poses.
    TrainCompletion(TrainArgs),
    /// Train the local codec and latent forecaster (needs completion).
    TrainLocal(TrainArgs),
    /// Train the egomotion-aware global forecaster (needs completion).
    TrainGlobal(TrainArgs),
    /// Train the single-stream baseline on whole poses.
    TrainEntangled(TrainArgs),
    /// Write forecasts for every record.
    Forecast {
        #[command(flatten)]
        src: Source,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a method against ground truth.
    Evaluate {
        #[command(flatten)]
        src: Source,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw one record's history, forecast and true future.
    Plot {
        #[command(flatten)]
        src: Source,
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub bundle: PathBuf,
}

#[derive(Debug, Args)]
pub struct Source {
    #[arg(long)]
    pub data: PathBuf,
    /// Ground truth; defaults to the inputs themselves.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Required for learned methods and for completed-pose baselines.
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "pipeline")]
    pub method: MethodArg,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("{0}")]
    Usage(String),
}

impl From<crate::forecast::ForecastError> for CliError {
    fn from(e: crate::forecast::ForecastError) -> Self {
        CliError::Io(e.into())
    }
}

impl Common {
    pub fn resolve(&self) -> Result<ExperimentConfig, CliError> {
        let base = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        let mut sets = self.sets.clone();
        let mut push = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                sets.push(format!("{k}={v}"));
            }
        };
        push("seed", self.seed.map(|v| v.to_string()));
        push("alpha_c", self.alpha_c.map(|v| format!("{v:?}")));
        push("d_ae", self.d_ae.map(|v| v.to_string()));
        push("t_p", self.t_p.map(|v| v.to_string()));
        push("t_f", self.t_f.map(|v| v.to_string()));
        push("local.layers", self.n_local.map(|v| v.to_string()));
        push("global.layers", self.n_global.map(|v| v.to_string()));
        push("use_completion", self.use_completion.map(|v| v.to_string()));
        push(
            "kde_norm",
            self.kde_norm.map(|v| match v {
                NormArg::L2 => "\"l2\"".into(),
                NormArg::L1 => "\"l1\"".into(),
            }),
        );
        push(
            "global.residual_mode",
            self.residual_mode.map(|v| match v {
                ResidualArg::Consecutive => "\"consecutive\"".into(),
                ResidualArg::FromFirst => "\"from-first\"".into(),
            }),
        );
        push(
            "global.pooling_mode",
            self.pooling_mode.map(|v| match v {
                PoolingArg::Sequence => "\"sequence\"".into(),
                PoolingArg::Mean => "\"mean\"".into(),
            }),
        );
        Ok(base.with_overrides(&sets)?)
    }
}

fn load(path: &Path) -> Result<(Vec<String>, Vec<LocomotionSequence>), CliError> {
    let (ids, seqs) = load_sequences(path)?;
    if seqs.is_empty() {
        return Err(CliError::Usage(format!("{} holds no records", path.display())));
    }
    Ok((ids, seqs))
}

fn open_for_training(args: &TrainArgs, cfg: &ExperimentConfig) -> Result<(Vec<LocomotionSequence>, Bundle), CliError> {
    let (_, seqs) = load(&args.data)?;
    let bundle = Bundle::open_or_create(&args.bundle, cfg, seqs[0].frame_size)?;
    Ok((seqs, bundle))
}

fn train(kind: ModelKind, args: &TrainArgs, cfg: &ExperimentConfig) -> Result<String, CliError> {
    let (seqs, mut bundle) = open_for_training(args, cfg)?;
    let needs_completion = match kind {
        ModelKind::Completion => false,
        ModelKind::Entangled => cfg.entangled.use_completion,
        ModelKind::Local | ModelKind::Global => cfg.use_completion,
    };
    let completion = if needs_completion {
        if !bundle.has(ModelKind::Completion) {
            return Err(CliError::Usage("train-completion must run first (or set use_completion = false)".into()));
        }
        Some(bundle.completion()?)
    } else {
        None
    };
    let (params, log) = match kind {
        ModelKind::Completion => {
            let (m, log) = workflow::fit_completion(cfg, &seqs)?;
            (m.ae.params, log)
        }
        ModelKind::Local => {
            let set = workflow::prepare(cfg, &seqs, completion.as_ref())?;
            let (m, log) = workflow::fit_local(cfg, &set)?;
            (m.all_params(), log)
        }
        ModelKind::Global => {
            let set = workflow::prepare(cfg, &seqs, completion.as_ref())?;
            let (m, log) = workflow::fit_global(cfg, &set)?;
            (m.params, log)
        }
        ModelKind::Entangled => {
            let set = workflow::prepare(cfg, &seqs, completion.as_ref())?;
            let (m, log) = workflow::fit_entangled(cfg, &set)?;
            (m.params, log)
        }
    };
    bundle.store(kind, &params, cfg)?;
    Ok(format!(
        "trained {} on {} sequences: {} steps, final loss {:.6}\n",
        kind.name(),
        seqs.len(),
        log.steps,
        log.final_loss().unwrap_or(f64::NAN)
    ))
}

/// Models loaded for one evaluation run; `method()` borrows from it.
struct Loaded {
    completion: Option<crate::completion::CompletionModel>,
    local: Option<crate::forecast::LocalForecaster>,
    global: Option<crate::forecast::GlobalForecaster>,
    entangled: Option<crate::forecast::EntangledForecaster>,
    kind: MethodArg,
    t_p: usize,
}

impl Loaded {
    fn new(src: &Source, cfg: &ExperimentConfig) -> Result<Self, CliError> {
        let bundle = src.bundle.as_deref().map(Bundle::open).transpose()?;
        let need = |what: &str| CliError::Usage(format!("--bundle is required for {what}"));
        let mut out = Loaded {
            completion: None,
            local: None,
            global: None,
            entangled: None,
            kind: src.method,
            t_p: cfg.t_p,
        };
        match src.method {
            MethodArg::Pipeline => {
                let b = bundle.ok_or_else(|| need("the pipeline"))?;
                if b.manifest.use_completion {
                    out.completion = Some(b.completion()?);
                }
                out.local = Some(b.local()?);
                out.global = Some(b.global()?);
                out.t_p = b.manifest.t_p;
            }
            MethodArg::Entangled => {
                let b = bundle.ok_or_else(|| need("the entangled model"))?;
                if b.config_of(ModelKind::Entangled)?.entangled.use_completion {
                    out.completion = Some(b.completion()?);
                }
                out.entangled = Some(b.entangled()?);
                out.t_p = b.manifest.t_p;
            }
            _ if cfg.baselines_on_completed => {
                let b = bundle.ok_or_else(|| need("baselines on completed poses"))?;
                out.completion = Some(b.completion()?);
            }
            _ => {}
        }
        Ok(out)
    }

    fn method(&self) -> Method<'_> {
        let baseline = |b| Method::Baseline {
            baseline: b,
            completion: self.completion.as_ref(),
            t_p: self.t_p,
        };
        match self.kind {
            MethodArg::Pipeline => Method::Pipeline(Pipeline {
                completion: self.completion.as_ref(),
                local: self.local.as_ref().expect("loaded"),
                global: self.global.as_ref().expect("loaded"),
                t_p: self.t_p,
            }),
            MethodArg::Entangled => Method::Entangled {
                model: self.entangled.as_ref().expect("loaded"),
                completion: self.completion.as_ref(),
            },
            MethodArg::ZeroVelocity => baseline(Baseline::ZeroVelocity),
            MethodArg::ConstantVelocity => baseline(Baseline::ConstantVelocity),
            MethodArg::LastObservedVelocity => baseline(Baseline::LastObservedVelocity),
        }
    }

    fn name(&self) -> String {
        self.kind.to_possible_value().expect("no skipped variants").get_name().to_string()
    }
}

fn truth_for(src: &Source, ids: &[String], noisy: &[LocomotionSequence]) -> Result<Vec<LocomotionSequence>, CliError> {
    let Some(path) = &src.truth else {
        return Ok(noisy.to_vec());
    };
    let (tids, truth) = load(path)?;
    if tids != ids {
        return Err(CliError::Usage(format!("{} does not list the same ids as {}", path.display(), src.data.display())));
    }
    Ok(truth)
}

/// Runs one command; returns the text meant for standard output.
pub fn run(cli: &Cli) -> Result<String, CliError> {
    let mut cfg = cli.common.resolve()?;
    match &cli.command {
        Command::Generate {
            out,
            truth,
            count,
            test,
            split,
            future,
        } => {
            if let Some(s) = split {
                cfg.data.split = match s {
                    SplitArg::Default => Split::Default,
                    SplitArg::CameraMotion => Split::CameraMotion,
                };
            }
            let (n, stage) = if *test {
                (count.unwrap_or(cfg.data.test), STAGE_TEST_DATA)
            } else {
                (count.unwrap_or(cfg.data.train), STAGE_TRAIN_DATA)
            };
            let samples = workflow::synth_split(&cfg, n, future.unwrap_or(cfg.t_f), stage)?;
            let noisy: Vec<DatasetRecord> = samples.iter().map(|s| DatasetRecord::from_sequence(&s.id, &s.noisy)).collect();
            save_dataset(out, &noisy)?;
            if let Some(t) = truth {
                let recs: Vec<DatasetRecord> = samples.iter().map(|s| DatasetRecord::from_sequence(&s.id, &s.truth)).collect();
                save_dataset(t, &recs)?;
            }
            Ok(format!("wrote {n} sequences to {}\n", out.display()))
        }
        Command::TrainCompletion(a) => train(ModelKind::Completion, a, &cfg),
        Command::TrainLocal(a) => train(ModelKind::Local, a, &cfg),
        Command::TrainGlobal(a) => train(ModelKind::Global, a, &cfg),
        Command::TrainEntangled(a) => train(ModelKind::Entangled, a, &cfg),
        Command::Forecast { src, out } => {
            let (ids, seqs) = load(&src.data)?;
            let loaded = Loaded::new(src, &cfg)?;
            let preds = loaded.method().forecast(&seqs, cfg.t_f)?;
            let name = loaded.name();
            let lines: Vec<String> = ids
                .iter()
                .zip(&preds)
                .map(|(id, p)| serde_json::to_string(&PredictionRecord::new(id, &name, loaded.t_p, p)).expect("serializable"))
                .collect();
            std::fs::write(out, lines.join("\n") + "\n").map_err(|e| IoError::Io {
                path: out.display().to_string(),
                source: e,
            })?;
            Ok(format!("wrote {} forecasts to {}\n", preds.len(), out.display()))
        }
        Command::Evaluate { src, out } => {
            let (ids, seqs) = load(&src.data)?;
            let truth = truth_for(src, &ids, &seqs)?;
            let loaded = Loaded::new(src, &cfg)?;
            let report = evaluate(&ids, &seqs, &truth, &loaded.method(), &loaded.name(), &cfg)?;
            if let Some(p) = out {
                std::fs::write(p, report.to_json()).map_err(|e| IoError::Io {
                    path: p.display().to_string(),
                    source: e,
                })?;
            }
            Ok(report.to_text())
        }
        Command::Plot { src, index, out } => {
            let (ids, seqs) = load(&src.data)?;
            let truth = truth_for(src, &ids, &seqs)?;
            let s = seqs
                .get(*index)
                .ok_or_else(|| CliError::Usage(format!("index {index} out of range ({} records)", seqs.len())))?;
            let loaded = Loaded::new(src, &cfg)?;
            let t_p = loaded.t_p;
            let horizon = cfg.t_f.min(s.len().saturating_sub(t_p)).min(truth[*index].len().saturating_sub(t_p));
            let pred = loaded.method().forecast(std::slice::from_ref(s), horizon)?.remove(0);
            let fut = &truth[*index].frames[t_p..t_p + horizon];
            write_svg(out, &s.frames[..t_p.min(s.len())], &pred, fut, s.frame_size)?;
            Ok(format!("wrote {}\n", out.display()))
        }
    }
}
