//! Command-line front end: `gen-synth`, `run` and `path`.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::classify::ClassifierConfig;
use crate::dataset::{self, FeatureStore, StoreFormat, SynthSpec};
use crate::engine::{GridParams, Strategy};
use crate::episodes::{
    self, EpisodeData, EpisodeSpec, EvalOptions, Execution, FeatureSpace, IciPipeline, Method, PipelineConfig,
    Setting,
};
use crate::error::{IciError, Result};

/// Environment variable consulted when `--threads` is absent.
pub const THREADS_ENV: &str = "ICI_THREADS";

const EXIT_RUNTIME: i32 = 1;
const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "ici", version, about = "Few-shot classification with instance credibility inference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic Gaussian-cluster feature store.
    GenSynth(GenSynthArgs),
    /// Evaluate a pipeline over many episodes and write a JSON report.
    Run(RunArgs),
    /// Dump the regularization path of one episode's first ranking.
    Path(PathArgs),
}

#[derive(Debug, Args)]
struct GenSynthArgs {
    #[arg(long, default_value_t = 5)]
    classes: usize,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    #[arg(long, default_value_t = 50)]
    per_class: usize,
    #[arg(long, default_value_t = 8.0)]
    sep: f64,
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Output format; inferred from the extension when omitted.
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Icif,
    Csv,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SettingArg {
    Inductive,
    Transductive,
    Semi,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ClassifierArg {
    Lr,
    Svm,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StrategyArg {
    Ici,
    Random,
    Confidence,
    Nn,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SpaceArg {
    Full,
    Reduced,
}

/// Dataset, episode shape and model knobs shared by `run` and `path`.
#[derive(Debug, Args)]
struct EpisodeArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    #[arg(long, value_enum, default_value = "transductive")]
    setting: SettingArg,
    #[arg(long, default_value_t = 5)]
    ways: usize,
    #[arg(long, default_value_t = 1)]
    shots: usize,
    #[arg(long, default_value_t = 15)]
    queries: usize,
    /// Unlabeled instances per class (semi setting only; default 15).
    #[arg(long)]
    unlabeled: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Reduced dimension used by the credibility regression.
    #[arg(long, default_value_t = 5)]
    dim: usize,
    /// Instances absorbed per class per iteration.
    #[arg(long, default_value_t = 5)]
    quota: usize,
    #[arg(long, value_enum, default_value = "lr")]
    classifier: ClassifierArg,
    /// Logistic regression L2 strength.
    #[arg(long, default_value_t = 1.0)]
    l2: f64,
    /// SVM hinge weight.
    #[arg(long, default_value_t = 1.0)]
    c: f64,
    #[arg(long, value_enum, default_value = "ici")]
    strategy: StrategyArg,
    #[arg(long, default_value_t = 100)]
    grid_points: usize,
    #[arg(long, default_value_t = 0.01)]
    eps: f64,
    /// Feature space the classifier is trained in.
    #[arg(long, value_enum, default_value = "full")]
    classifier_space: SpaceArg,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    episode: EpisodeArgs,
    #[arg(long, default_value_t = 600)]
    episodes: usize,
    /// Train on the support set only, without self-training.
    #[arg(long)]
    baseline: bool,
    /// Worker threads; falls back to ICI_THREADS, then to all cores.
    #[arg(long)]
    threads: Option<usize>,
    /// Run episodes on the calling thread.
    #[arg(long)]
    sequential: bool,
    /// Include per-iteration traces in the report.
    #[arg(long)]
    trace: bool,
    /// Record elapsed wall time in the report (makes it non-reproducible).
    #[arg(long)]
    wall_time: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PathArgs {
    #[command(flatten)]
    episode: EpisodeArgs,
    /// Which episode of the seeded sequence to dump.
    #[arg(long, default_value_t = 0)]
    episode_index: usize,
    /// Path table: `lambda,instance_index,gamma_norm`.
    #[arg(long)]
    out: PathBuf,
    /// Per-instance table with labels, correctness and vanish lambda.
    #[arg(long)]
    instances: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Runtime(IciError),
}

impl From<IciError> for Failure {
    fn from(e: IciError) -> Self {
        Failure::Runtime(e)
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.command {
        Command::GenSynth(a) => cmd_gen_synth(&a),
        Command::Run(a) => cmd_run(&a),
        Command::Path(a) => cmd_path(&a),
    };
    match outcome {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {}", error_chain(&e));
            EXIT_RUNTIME
        }
    }
}

fn error_chain(e: &dyn std::error::Error) -> String {
    let mut msg = e.to_string();
    let mut cur = e.source();
    while let Some(s) = cur {
        msg.push_str(": ");
        msg.push_str(&s.to_string());
        cur = s.source();
    }
    msg
}

fn resolve_format(flag: Option<FormatArg>, path: &Path) -> StoreFormat {
    match flag {
        Some(FormatArg::Icif) => StoreFormat::Icif,
        Some(FormatArg::Csv) => StoreFormat::Csv,
        None => StoreFormat::from_path(path),
    }
}

fn cmd_gen_synth(a: &GenSynthArgs) -> CliResult<()> {
    let spec = SynthSpec {
        num_classes: a.classes,
        dim: a.dim,
        per_class: a.per_class,
        cluster_separation: a.sep,
        noise_scale: a.noise,
        seed: a.seed,
    };
    let store = dataset::generate_synthetic(&spec)?;
    dataset::save_store(&store, &a.out, resolve_format(a.format, &a.out))?;
    println!(
        "wrote {} instances ({} classes, dim {}) to {}",
        store.total_instances(),
        store.num_classes(),
        store.dim(),
        a.out.display()
    );
    Ok(())
}

impl EpisodeArgs {
    fn spec(&self) -> CliResult<EpisodeSpec> {
        let setting = match self.setting {
            SettingArg::Inductive => Setting::Inductive,
            SettingArg::Transductive => Setting::Transductive,
            SettingArg::Semi => Setting::Semi,
        };
        let unlabeled = match (setting, self.unlabeled) {
            (Setting::Semi, u) => u.unwrap_or(15),
            (_, None) => 0,
            (s, Some(_)) => {
                return Err(Failure::Usage(format!(
                    "--unlabeled cannot be combined with --setting {}",
                    match s {
                        Setting::Transductive => "transductive",
                        _ => "inductive",
                    }
                )))
            }
        };
        let spec = EpisodeSpec {
            ways: self.ways,
            shots: self.shots,
            queries: self.queries,
            unlabeled,
            setting,
            seed: self.seed,
        };
        spec.validate().map_err(|e| Failure::Usage(e.to_string()))?;
        Ok(spec)
    }

    fn pipeline(&self, method: Method, setting: Setting) -> CliResult<PipelineConfig> {
        if self.quota == 0 || self.dim == 0 || self.grid_points == 0 {
            return Err(Failure::Usage("--quota, --dim and --grid-points must be >= 1".into()));
        }
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(Failure::Usage(format!("--eps must lie in (0, 1), got {}", self.eps)));
        }
        let classifier = match self.classifier {
            ClassifierArg::Lr => ClassifierConfig::Logistic { l2: self.l2 },
            ClassifierArg::Svm => ClassifierConfig::Svm { c: self.c },
        };
        let strategy = match self.strategy {
            StrategyArg::Ici => Strategy::Ici,
            StrategyArg::Random => Strategy::Random,
            StrategyArg::Confidence => Strategy::Confidence,
            StrategyArg::Nn => Strategy::NearestNeighbor,
        };
        let mut cfg = PipelineConfig {
            method,
            reduced_dim: self.dim,
            classifier_space: match self.classifier_space {
                SpaceArg::Full => FeatureSpace::Full,
                SpaceArg::Reduced => FeatureSpace::Reduced,
            },
            ..PipelineConfig::default()
        };
        cfg.loop_config.classifier = classifier;
        cfg.loop_config.strategy = strategy;
        cfg.loop_config.quota = self.quota;
        cfg.loop_config.grid = GridParams {
            points: self.grid_points,
            eps: self.eps,
        };
        Ok(cfg.for_setting(setting))
    }

    fn load(&self) -> Result<FeatureStore> {
        dataset::load_store(&self.dataset, resolve_format(self.format, &self.dataset))
    }
}

fn thread_count(flag: Option<usize>) -> CliResult<Option<usize>> {
    let threads = match flag {
        Some(t) => Some(t),
        None => match std::env::var(THREADS_ENV) {
            Ok(v) if !v.trim().is_empty() => Some(
                v.trim()
                    .parse()
                    .map_err(|_| Failure::Usage(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?,
            ),
            _ => None,
        },
    };
    if threads == Some(0) {
        return Err(Failure::Usage("thread count must be >= 1".into()));
    }
    Ok(threads)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| IciError::io(path, e))
}

fn cmd_run(a: &RunArgs) -> CliResult<()> {
    let spec = a.episode.spec()?;
    let method = if a.baseline { Method::Baseline } else { Method::SelfTraining };
    let pipeline = IciPipeline::new(a.episode.pipeline(method, spec.setting)?);
    if a.episodes == 0 {
        return Err(Failure::Usage("--episodes must be >= 1".into()));
    }
    let opts = EvalOptions {
        episodes: a.episodes,
        execution: if a.sequential { Execution::Sequential } else { Execution::Parallel },
        threads: thread_count(a.threads)?,
        keep_trace: a.trace,
    };
    let store = a.episode.load()?;
    let started = Instant::now();
    let mut report = episodes::evaluate(&store, &spec, &pipeline, &opts)?;
    if a.wall_time {
        report.wall_time_seconds = Some(started.elapsed().as_secs_f64());
    }
    let clamped = report.episodes.iter().filter(|e| e.clamped).count();
    if clamped > 0 {
        eprintln!("warning: {clamped} episode(s) had their unlabeled pool clamped");
    }

    let mut out = create(&a.out)?;
    let text = serde_json::to_string_pretty(&report).map_err(|e| IciError::invalid(e.to_string()))?;
    writeln!(out, "{text}")
        .and_then(|_| out.flush())
        .map_err(|e| IciError::io(&a.out, e))?;
    println!("{:.2} ± {:.2}", report.mean * 100.0, report.ci95 * 100.0);
    Ok(())
}

fn cmd_path(a: &PathArgs) -> CliResult<()> {
    let spec = a.episode.spec()?;
    if spec.setting == Setting::Inductive {
        return Err(Failure::Usage("path needs an unlabeled pool; use --setting semi or transductive".into()));
    }
    let pipeline = IciPipeline::new(a.episode.pipeline(Method::SelfTraining, spec.setting)?);
    let store = a.episode.load()?;
    let episode = episodes::sample_episode(&store, &spec, a.episode_index)?;
    let data = EpisodeData::materialize(&store, episode, spec.setting)?;
    let (inputs, ranked) = pipeline.first_ranking(&data, false)?;

    let mut out = create(&a.out)?;
    ranked
        .path
        .write_table(&mut out)
        .and_then(|_| out.flush())
        .map_err(|e| IciError::io(&a.out, e))?;

    if let Some(path) = &a.instances {
        let mut out = create(path)?;
        write_instances(&mut out, &data, &inputs, &ranked.vanish.vanish_lambda)
            .and_then(|_| out.flush())
            .map_err(|e| IciError::io(path, e))?;
    }
    let flagged = ranked.ranking.is_degenerate();
    println!(
        "lambda_max {:e}, {} grid points x {} instances{}",
        ranked.lambda_max,
        ranked.path.lambda_grid().len(),
        inputs.problem.n(),
        if flagged { " (degenerate)" } else { "" }
    );
    Ok(())
}

fn write_instances<W: Write>(
    out: &mut W,
    data: &EpisodeData,
    inputs: &crate::engine::RegressionInputs,
    vanish: &[f64],
) -> std::io::Result<()> {
    writeln!(out, "instance_index,episode_row,role,true_label,assigned_label,correct,vanish_lambda")?;
    let support = data.support.len();
    for (i, &row) in inputs.row_instances.iter().enumerate() {
        let (role, assigned) = if i < support {
            ("support", data.support[i].1)
        } else {
            ("pseudo", inputs.candidates[i - support].pseudo_label)
        };
        let truth = data.true_label(row);
        let (truth_s, correct) = match truth {
            Some(t) => (t.to_string(), (t == assigned).to_string()),
            None => (String::new(), String::new()),
        };
        writeln!(out, "{i},{row},{role},{truth_s},{assigned},{correct},{:e}", vanish[i])?;
    }
    Ok(())
}
