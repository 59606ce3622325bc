//! Episode sampling and multi-episode evaluation.
//!
//! Every episode draws from its own RNG, derived from the master seed and the
//! episode index, so episodes are independent of each other and of the order
//! in which workers finish them. Aggregation is always by episode index.

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classify::{self, LinearModel};
use crate::dataset::FeatureStore;
use crate::dimred;
use crate::engine::{self, IciRanking, IterationRecord, LoopConfig, LoopInputs, RegressionInputs};
use crate::error::{IciError, Result};
use crate::linalg::DenseMatrix;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setting {
    Inductive,
    Transductive,
    Semi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub ways: usize,
    pub shots: usize,
    pub queries: usize,
    /// Unlabeled instances per class; only used by the semi setting.
    pub unlabeled: usize,
    pub setting: Setting,
    pub seed: u64,
}

impl EpisodeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.ways < 2 {
            return Err(IciError::invalid("ways must be >= 2"));
        }
        if self.shots == 0 || self.queries == 0 {
            return Err(IciError::invalid("shots and queries must be >= 1"));
        }
        Ok(())
    }

    fn unlabeled_wanted(&self) -> usize {
        match self.setting {
            Setting::Semi => self.unlabeled,
            Setting::Inductive | Setting::Transductive => 0,
        }
    }
}

/// One sampled task. Index lists point into the store's per-class lists.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Episode {
    pub index: usize,
    pub class_ids: Vec<usize>,
    pub support: Vec<Vec<usize>>,
    pub query: Vec<Vec<usize>>,
    pub unlabeled: Vec<Vec<usize>>,
    /// Set when some class had fewer than `unlabeled` spare instances.
    pub clamped: bool,
}

/// splitmix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// RNG for one episode, a pure function of `(master_seed, episode_index)`.
pub fn episode_rng(master_seed: u64, episode_index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(master_seed ^ mix(episode_index as u64)))
}

pub fn sample_episode(store: &FeatureStore, spec: &EpisodeSpec, episode_index: usize) -> Result<Episode> {
    let mut rng = episode_rng(spec.seed, episode_index);
    sample_with(store, spec, episode_index, &mut rng)
}

fn sample_with(
    store: &FeatureStore,
    spec: &EpisodeSpec,
    episode_index: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Episode> {
    spec.validate()?;
    if store.num_classes() < spec.ways {
        return Err(IciError::invalid(format!(
            "{}-way episodes need {} classes, store has {}",
            spec.ways,
            spec.ways,
            store.num_classes()
        )));
    }
    let class_ids = index::sample(rng, store.num_classes(), spec.ways).into_vec();
    let labeled = spec.shots + spec.queries;
    let want_u = spec.unlabeled_wanted();
    let mut episode = Episode {
        index: episode_index,
        class_ids: class_ids.clone(),
        support: Vec::with_capacity(spec.ways),
        query: Vec::with_capacity(spec.ways),
        unlabeled: Vec::with_capacity(spec.ways),
        clamped: false,
    };
    for &c in &class_ids {
        let size = store.class_size(c);
        if size < labeled {
            return Err(IciError::invalid(format!(
                "class {c} has {size} instances, needs at least {labeled} for {} shots + {} queries",
                spec.shots, spec.queries
            )));
        }
        let mut idx: Vec<usize> = (0..size).collect();
        idx.shuffle(rng);
        let u = want_u.min(size - labeled);
        episode.clamped |= u < want_u;
        episode.support.push(idx[..spec.shots].to_vec());
        episode.query.push(idx[spec.shots..labeled].to_vec());
        episode.unlabeled.push(idx[labeled..labeled + u].to_vec());
    }
    Ok(episode)
}

/// An episode laid out as one feature table.
///
/// Rows are support, then query, then unlabeled, each grouped by class.
/// Labels are episode class positions `0..ways`.
#[derive(Debug, Clone)]
pub struct EpisodeData {
    pub episode: Episode,
    pub setting: Setting,
    /// Raw features widened to f64.
    pub features: DenseMatrix,
    pub support: Vec<(usize, usize)>,
    pub query_rows: Vec<usize>,
    pub query_labels: Vec<usize>,
    pub unlabeled_rows: Vec<usize>,
    /// Ground truth for the unlabeled rows; diagnostics only.
    pub unlabeled_labels: Vec<usize>,
}

impl EpisodeData {
    pub fn materialize(store: &FeatureStore, episode: Episode, setting: Setting) -> Result<Self> {
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut take = |lists: &[Vec<usize>]| -> (Vec<usize>, Vec<usize>) {
            let mut out_rows = Vec::new();
            let mut labels = Vec::new();
            for (label, list) in lists.iter().enumerate() {
                for &i in list {
                    out_rows.push(rows.len());
                    labels.push(label);
                    rows.push(store.feature_f64(episode.class_ids[label], i));
                }
            }
            (out_rows, labels)
        };
        let (s_rows, s_labels) = take(&episode.support);
        let (query_rows, query_labels) = take(&episode.query);
        let (unlabeled_rows, unlabeled_labels) = take(&episode.unlabeled);
        Ok(EpisodeData {
            features: DenseMatrix::from_rows(&rows)?,
            support: s_rows.into_iter().zip(s_labels).collect(),
            query_rows,
            query_labels,
            unlabeled_rows,
            unlabeled_labels,
            setting,
            episode,
        })
    }

    pub fn ways(&self) -> usize {
        self.episode.class_ids.len()
    }

    /// The unlabeled pool the loop may draw from in this setting.
    pub fn pool(&self) -> &[usize] {
        match self.setting {
            Setting::Semi => &self.unlabeled_rows,
            Setting::Transductive => &self.query_rows,
            Setting::Inductive => &[],
        }
    }

    /// Ground-truth label of any row.
    pub fn true_label(&self, row: usize) -> Option<usize> {
        self.support
            .iter()
            .find(|(r, _)| *r == row)
            .map(|&(_, l)| l)
            .or_else(|| self.query_rows.iter().position(|&r| r == row).map(|k| self.query_labels[k]))
            .or_else(|| {
                self.unlabeled_rows
                    .iter()
                    .position(|&r| r == row)
                    .map(|k| self.unlabeled_labels[k])
            })
    }
}

/// What a pipeline produces for one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeOutcome {
    /// Predicted label for each query row, in `query_rows` order.
    pub query_predictions: Vec<usize>,
    pub iterations: usize,
    pub absorbed: usize,
    pub initial_accuracy: Option<f64>,
    pub trace: Vec<IterationRecord>,
}

/// Anything that maps an episode to query predictions.
pub trait EpisodePipeline: Sync {
    fn run(&self, data: &EpisodeData, rng: &mut ChaCha8Rng) -> Result<EpisodeOutcome>;

    /// Knobs that identify this pipeline in the run fingerprint.
    fn describe(&self) -> serde_json::Value;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSpace {
    Full,
    Reduced,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Train on the support set only.
    Baseline,
    /// Self-taught expansion with the configured selection strategy.
    SelfTraining,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub method: Method,
    pub reduced_dim: usize,
    pub classifier_space: FeatureSpace,
    pub loop_config: LoopConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            method: Method::SelfTraining,
            reduced_dim: 5,
            classifier_space: FeatureSpace::Full,
            loop_config: LoopConfig::default(),
        }
    }
}

/// Per-class absorption limit in the transductive setting.
pub const TRANSDUCTIVE_ABSORB_CAP: usize = 15;

impl PipelineConfig {
    /// Applies the termination rule of `setting`: transductive runs absorb
    /// up to [`TRANSDUCTIVE_ABSORB_CAP`] instances per class and leave nothing out.
    pub fn for_setting(mut self, setting: Setting) -> Self {
        if setting == Setting::Transductive {
            self.loop_config.leave_out_per_class = 0;
            self.loop_config.absorb_cap_per_class = Some(TRANSDUCTIVE_ABSORB_CAP);
        }
        self
    }
}

/// Normalized and reduced views of an episode.
pub struct PreparedEpisode {
    pub normalized: DenseMatrix,
    pub reduced: Option<DenseMatrix>,
}

impl PreparedEpisode {
    pub fn classifier_features(&self, space: FeatureSpace) -> &DenseMatrix {
        match space {
            FeatureSpace::Full => &self.normalized,
            FeatureSpace::Reduced => self.reduced.as_ref().expect("reduced features prepared"),
        }
    }
}

/// The standard pipeline: L2 normalization, per-episode PCA and the
/// self-taught loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IciPipeline {
    pub config: PipelineConfig,
}

impl IciPipeline {
    pub fn new(config: PipelineConfig) -> Self {
        IciPipeline { config }
    }

    fn wants_loop(&self, data: &EpisodeData) -> bool {
        self.config.method == Method::SelfTraining && !data.pool().is_empty()
    }

    /// L2-normalizes every row and, when needed, fits PCA on support ∪ pool.
    pub fn prepare(&self, data: &EpisodeData) -> Result<PreparedEpisode> {
        let normalized = dimred::l2_normalize_rows(&data.features);
        let need_reduced = self.config.classifier_space == FeatureSpace::Reduced
            || (self.wants_loop(data) && self.config.loop_config.strategy == engine::Strategy::Ici);
        let reduced = if need_reduced {
            let fit_rows: Vec<usize> = data
                .support
                .iter()
                .map(|&(r, _)| r)
                .chain(data.pool().iter().copied())
                .collect();
            let fit = normalized.select_rows(&fit_rows);
            let d = self
                .config
                .reduced_dim
                .min(fit.rows().saturating_sub(1))
                .min(fit.cols());
            let model = dimred::pca_fit(&fit, d)?;
            Some(dimred::pca_transform(&model, &normalized)?)
        } else {
            None
        };
        Ok(PreparedEpisode { normalized, reduced })
    }

    fn loop_inputs<'a>(&self, data: &'a EpisodeData, prep: &'a PreparedEpisode) -> LoopInputs<'a> {
        let classifier_features = prep.classifier_features(self.config.classifier_space);
        LoopInputs {
            classifier_features,
            regression_features: prep.reduced.as_ref().unwrap_or(classifier_features),
            support: &data.support,
            unlabeled: data.pool(),
            num_classes: data.ways(),
        }
    }

    /// The regression and ranking that the first loop iteration would compute.
    pub fn first_ranking(&self, data: &EpisodeData, keep_full_path: bool) -> Result<(RegressionInputs, IciRanking)> {
        if data.pool().is_empty() {
            return Err(IciError::invalid("episode has no unlabeled pool to rank"));
        }
        let cfg = IciPipeline::new(PipelineConfig {
            method: Method::SelfTraining,
            loop_config: LoopConfig {
                strategy: engine::Strategy::Ici,
                ..self.config.loop_config
            },
            ..self.config
        });
        let prep = cfg.prepare(data)?;
        let inputs = cfg.loop_inputs(data, &prep);
        let classes: Vec<usize> = (0..data.ways()).collect();
        let rows: Vec<usize> = data.support.iter().map(|&(r, _)| r).collect();
        let labels: Vec<usize> = data.support.iter().map(|&(_, l)| l).collect();
        let model = classify::train(
            &cfg.config.loop_config.classifier,
            &inputs.classifier_features.select_rows(&rows),
            &labels,
            &classes,
        )?;
        let mut pool = data.pool().to_vec();
        pool.sort_unstable();
        let pred = classify::predict(&model, &inputs.classifier_features.select_rows(&pool))?;
        let confidence = pred.confidence();
        let candidates: Vec<engine::Candidate> = pool
            .iter()
            .enumerate()
            .map(|(k, &idx)| engine::Candidate {
                instance_index: idx,
                pseudo_label: pred.labels[k],
                vanish_lambda: f64::INFINITY,
                score: confidence[k],
            })
            .collect();
        let reduced = prep.reduced.as_ref().expect("ICI strategy prepares reduced features");
        let reg = engine::build_regression_inputs(reduced, &data.support, &candidates, data.ways())?;
        let ranked = engine::rank_by_ici(
            &reg,
            &cfg.config.loop_config.grid,
            &cfg.config.loop_config.solver,
            keep_full_path,
        )?;
        Ok((reg, ranked))
    }
}

fn accuracy(predicted: &[usize], truth: &[usize]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let correct = predicted.iter().zip(truth).filter(|(a, b)| a == b).count();
    correct as f64 / truth.len() as f64
}

impl EpisodePipeline for IciPipeline {
    fn run(&self, data: &EpisodeData, rng: &mut ChaCha8Rng) -> Result<EpisodeOutcome> {
        let prep = self.prepare(data)?;
        let inputs = self.loop_inputs(data, &prep);
        let query = inputs.classifier_features.select_rows(&data.query_rows);
        let probe = |m: &LinearModel| {
            classify::predict(m, &query)
                .map(|p| accuracy(&p.labels, &data.query_labels))
                .unwrap_or(f64::NAN)
        };
        let pool: &[usize] = if self.wants_loop(data) { inputs.unlabeled } else { &[] };
        let outcome = engine::run_ici_loop(
            &LoopInputs { unlabeled: pool, ..inputs },
            &self.config.loop_config,
            rng,
            Some(&probe),
        )?;
        let pred = classify::predict(&outcome.model, &query)?;
        let initial_accuracy = match outcome.trace.first() {
            Some(rec) => rec.model_accuracy,
            None => Some(accuracy(&pred.labels, &data.query_labels)),
        };
        Ok(EpisodeOutcome {
            query_predictions: pred.labels,
            iterations: outcome.state.iteration,
            absorbed: outcome.state.expanded_support.len() - data.support.len(),
            initial_accuracy,
            trace: outcome.trace,
        })
    }

    fn describe(&self) -> serde_json::Value {
        serde_json::to_value(self.config).expect("config serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Execution {
    Parallel,
    Sequential,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalOptions {
    pub episodes: usize,
    pub execution: Execution,
    /// Worker count for parallel execution; `None` uses the global pool.
    pub threads: Option<usize>,
    pub keep_trace: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            episodes: 600,
            execution: Execution::Parallel,
            threads: None,
            keep_trace: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub index: usize,
    pub accuracy: f64,
    pub initial_accuracy: Option<f64>,
    pub iterations: usize,
    pub absorbed: usize,
    pub pool_size: usize,
    pub clamped: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<IterationRecord>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub fingerprint: String,
    pub config: serde_json::Value,
    pub accuracies: Vec<f64>,
    pub mean: f64,
    pub ci95: f64,
    pub wall_time_seconds: Option<f64>,
    pub episodes: Vec<EpisodeResult>,
}

/// Mean and `1.96 * s / sqrt(E)` with the sample standard deviation; zero for `E = 1`.
pub fn mean_ci95(values: &[f64]) -> (f64, f64) {
    let e = values.len();
    if e == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / e as f64;
    if e == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (e - 1) as f64;
    (mean, 1.96 * var.sqrt() / (e as f64).sqrt())
}

fn run_episode<P: EpisodePipeline + ?Sized>(
    store: &FeatureStore,
    spec: &EpisodeSpec,
    pipeline: &P,
    episode_index: usize,
    keep_trace: bool,
) -> Result<EpisodeResult> {
    let wrap = |e| IciError::Episode {
        episode: episode_index,
        source: Box::new(e),
    };
    let mut rng = episode_rng(spec.seed, episode_index);
    let episode = sample_with(store, spec, episode_index, &mut rng).map_err(wrap)?;
    let clamped = episode.clamped;
    let data = EpisodeData::materialize(store, episode, spec.setting).map_err(wrap)?;
    let out = pipeline.run(&data, &mut rng).map_err(wrap)?;
    if out.query_predictions.len() != data.query_labels.len() {
        return Err(wrap(IciError::DimensionMismatch {
            expected: data.query_labels.len(),
            actual: out.query_predictions.len(),
        }));
    }
    Ok(EpisodeResult {
        index: episode_index,
        accuracy: accuracy(&out.query_predictions, &data.query_labels),
        initial_accuracy: out.initial_accuracy,
        iterations: out.iterations,
        absorbed: out.absorbed,
        pool_size: data.pool().len(),
        clamped,
        trace: keep_trace.then_some(out.trace),
    })
}

fn run_all<P: EpisodePipeline + ?Sized>(
    store: &FeatureStore,
    spec: &EpisodeSpec,
    pipeline: &P,
    opts: &EvalOptions,
) -> Result<Vec<EpisodeResult>> {
    let one = |i| run_episode(store, spec, pipeline, i, opts.keep_trace);
    match opts.execution {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            let go = || (0..opts.episodes).into_par_iter().map(one).collect();
            match opts.threads {
                Some(t) => rayon::ThreadPoolBuilder::new()
                    .num_threads(t)
                    .build()
                    .map_err(|e| IciError::invalid(format!("thread pool: {e}")))?
                    .install(go),
                None => go(),
            }
        }
        _ => (0..opts.episodes).map(one).collect(),
    }
}

fn fingerprint(store: &FeatureStore, spec: &EpisodeSpec, episodes: usize, pipeline: &serde_json::Value) -> String {
    let desc = serde_json::json!({
        "store": {
            "classes": store.num_classes(),
            "dim": store.dim(),
            "instances": store.total_instances(),
        },
        "spec": spec,
        "episodes": episodes,
        "pipeline": pipeline,
    });
    let digest = Sha256::digest(desc.to_string().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Runs `opts.episodes` episodes and aggregates them in index order.
pub fn evaluate<P: EpisodePipeline + ?Sized>(
    store: &FeatureStore,
    spec: &EpisodeSpec,
    pipeline: &P,
    opts: &EvalOptions,
) -> Result<RunReport> {
    spec.validate()?;
    if opts.episodes == 0 {
        return Err(IciError::invalid("episode count must be >= 1"));
    }
    let episodes = run_all(store, spec, pipeline, opts)?;
    let accuracies: Vec<f64> = episodes.iter().map(|e| e.accuracy).collect();
    let (mean, ci95) = mean_ci95(&accuracies);
    let described = pipeline.describe();
    Ok(RunReport {
        schema_version: REPORT_SCHEMA_VERSION,
        fingerprint: fingerprint(store, spec, opts.episodes, &described),
        config: serde_json::json!({ "spec": spec, "episodes": opts.episodes, "pipeline": described }),
        accuracies,
        mean,
        ci95,
        wall_time_seconds: None,
        episodes,
    })
}
