//! Credibility ranking and the self-taught expansion loop.
//!
//! Each iteration trains the base classifier on the expanded support,
//! pseudo-labels what is left of the unlabeled pool, ranks the pseudo-labeled
//! instances and moves the top of each class into the support. Instances keep
//! the pseudo-label they were absorbed with; the remaining pool is relabeled
//! every iteration.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::classify::{self, ClassifierConfig, LinearModel};
use crate::error::{IciError, Result};
use crate::glasso::{self, IncidentalPath, PathProblem, SolverSettings, VanishTable};
use crate::linalg::DenseMatrix;

/// A pseudo-labeled instance competing for selection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    /// Row in the episode feature table.
    pub instance_index: usize,
    pub pseudo_label: usize,
    /// Vanish point on the path; `INFINITY` when never zero or not ranked by ICI.
    pub vanish_lambda: f64,
    /// Classifier score for the pseudo-label.
    pub score: f64,
}

/// Per-class candidate lists, most credible first.
#[derive(Debug, Clone, PartialEq)]
pub struct CredibilityRanking {
    per_class: Vec<Vec<Candidate>>,
    /// Set when `lambda_max = 0` and order comes from tie-breakers alone.
    degenerate: bool,
}

impl CredibilityRanking {
    pub fn per_class(&self) -> &[Vec<Candidate>] {
        &self.per_class
    }

    pub fn class(&self, label: usize) -> &[Candidate] {
        &self.per_class[label]
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    pub fn len(&self) -> usize {
        self.per_class.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridParams {
    pub points: usize,
    pub eps: f64,
}

impl Default for GridParams {
    fn default() -> Self {
        GridParams {
            points: 100,
            eps: 0.01,
        }
    }
}

/// Regression assembled from support rows followed by pseudo-labeled rows.
#[derive(Debug, Clone)]
pub struct RegressionInputs {
    pub problem: PathProblem,
    /// Episode instance index for each regression row.
    pub row_instances: Vec<usize>,
    /// Regression rows that may be ranked (the pseudo-labeled ones).
    pub rankable: Vec<usize>,
    /// Candidates aligned with `rankable`.
    pub candidates: Vec<Candidate>,
    pub num_classes: usize,
}

/// Stacks support rows (ground-truth one-hot) and pseudo rows into `X`, `Y`
/// and builds `X~ = I - H`, `Y~ = X~ Y`. Pseudo rows are ordered by instance
/// index, so the result does not depend on the order of `pseudo`.
pub fn build_regression_inputs(
    features_reduced: &DenseMatrix,
    support: &[(usize, usize)],
    pseudo: &[Candidate],
    num_classes: usize,
) -> Result<RegressionInputs> {
    let n = support.len() + pseudo.len();
    let d = features_reduced.cols();
    if d >= n {
        return Err(IciError::invalid(format!(
            "reduced dimension {d} must be below the instance count {n}"
        )));
    }
    let mut pseudo = pseudo.to_vec();
    pseudo.sort_by_key(|c| c.instance_index);
    let mut row_instances = Vec::with_capacity(n);
    let mut y = DMatrix::zeros(n, num_classes);
    let labeled = support
        .iter()
        .copied()
        .chain(pseudo.iter().map(|c| (c.instance_index, c.pseudo_label)));
    for (row, (idx, label)) in labeled.enumerate() {
        if idx >= features_reduced.rows() {
            return Err(IciError::invalid(format!("instance {idx} is out of range")));
        }
        if label >= num_classes {
            return Err(IciError::invalid(format!("label {label} is not an episode class")));
        }
        y[(row, label)] = 1.0;
        row_instances.push(idx);
    }
    let x = features_reduced.select_rows(&row_instances);
    let problem = PathProblem::from_design(&x, &DenseMatrix::from_matrix(y)?)?;
    Ok(RegressionInputs {
        problem,
        row_instances,
        rankable: (support.len()..n).collect(),
        candidates: pseudo,
        num_classes,
    })
}

/// `lambda_max` values at or below this are treated as exactly zero.
pub const DEGENERATE_LAMBDA_MAX: f64 = 1e-12;

/// Path, vanish table and resulting ranking for one regression.
#[derive(Debug, Clone)]
pub struct IciRanking {
    pub ranking: CredibilityRanking,
    pub path: IncidentalPath,
    pub vanish: VanishTable,
    pub lambda_max: f64,
}

/// Ranks the pseudo-labeled rows by ascending vanish lambda.
///
/// Ties fall back to the residual row norm at the smallest grid lambda, then
/// to the instance index. Residuals below `zero_tol` count as zero.
pub fn rank_by_ici(
    inputs: &RegressionInputs,
    grid: &GridParams,
    settings: &SolverSettings,
    keep_full_path: bool,
) -> Result<IciRanking> {
    let mut lmax = glasso::lambda_max(&inputs.problem);
    if lmax <= DEGENERATE_LAMBDA_MAX {
        // Y~ is zero up to rounding
        lmax = 0.0;
    }
    let lambda_grid = glasso::lambda_grid(lmax, grid.points, grid.eps)?;
    let path = glasso::solve_path(&inputs.problem, &lambda_grid, settings, keep_full_path)?;
    let vanish = glasso::vanish_lambdas(&path, settings.zero_tol);

    let mut keyed: Vec<(Candidate, f64)> = inputs
        .rankable
        .iter()
        .zip(&inputs.candidates)
        .map(|(&row, c)| {
            let mut c = *c;
            c.vanish_lambda = vanish.vanish_lambda[row];
            // residuals within the zero tolerance are rounding noise
            let r = path.residual_norms()[row];
            (c, if r <= settings.zero_tol { 0.0 } else { r })
        })
        .collect();
    keyed.sort_by(|(a, ra), (b, rb)| {
        a.vanish_lambda
            .total_cmp(&b.vanish_lambda)
            .then(ra.total_cmp(rb))
            .then(a.instance_index.cmp(&b.instance_index))
    });

    let mut per_class = vec![Vec::new(); inputs.num_classes];
    for (c, _) in keyed {
        per_class[c.pseudo_label].push(c);
    }
    Ok(IciRanking {
        ranking: CredibilityRanking {
            per_class,
            degenerate: lambda_grid.is_trivial(),
        },
        path,
        vanish,
        lambda_max: lmax,
    })
}

/// Takes up to `quota` top candidates from every class.
pub fn select_stratified(ranking: &CredibilityRanking, quota: usize) -> Vec<Candidate> {
    let limits = vec![quota; ranking.per_class.len()];
    select_stratified_limited(ranking, &limits)
}

/// Per-class limits variant of [`select_stratified`]. No cross-class backfill.
pub fn select_stratified_limited(ranking: &CredibilityRanking, limits: &[usize]) -> Vec<Candidate> {
    ranking
        .per_class
        .iter()
        .zip(limits)
        .flat_map(|(list, &k)| list.iter().take(k).copied())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Ici,
    Random,
    Confidence,
    NearestNeighbor,
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Ici => "ici",
            Strategy::Random => "random",
            Strategy::Confidence => "confidence",
            Strategy::NearestNeighbor => "nn",
        }
    }
}

fn group_by_label(candidates: &[Candidate], num_classes: usize) -> Vec<Vec<Candidate>> {
    let mut groups = vec![Vec::new(); num_classes];
    for c in candidates {
        groups[c.pseudo_label].push(*c);
    }
    for g in &mut groups {
        g.sort_by_key(|c| c.instance_index);
    }
    groups
}

fn class_means(features: &DenseMatrix, support: &[(usize, usize)], num_classes: usize) -> Vec<Option<DVector<f64>>> {
    let mut sums = vec![DVector::zeros(features.cols()); num_classes];
    let mut counts = vec![0usize; num_classes];
    for &(idx, label) in support {
        sums[label] += features.as_matrix().row(idx).transpose();
        counts[label] += 1;
    }
    sums.into_iter()
        .zip(counts)
        .map(|(s, n)| (n > 0).then(|| s / n as f64))
        .collect()
}

/// Selection by one of the non-ICI strategies, per class with the given limits.
///
/// `features` is the space used for nearest-neighbor distances; `support`
/// supplies the class means.
pub fn select_baseline<R: Rng + ?Sized>(
    strategy: Strategy,
    candidates: &[Candidate],
    features: &DenseMatrix,
    support: &[(usize, usize)],
    limits: &[usize],
    rng: &mut R,
) -> Result<Vec<Candidate>> {
    let num_classes = limits.len();
    if let Some(c) = candidates.iter().find(|c| c.pseudo_label >= num_classes) {
        return Err(IciError::invalid(format!("pseudo-label {} out of range", c.pseudo_label)));
    }
    let mut groups = group_by_label(candidates, num_classes);
    match strategy {
        Strategy::Ici => {
            return Err(IciError::invalid("ICI selection needs a credibility ranking"));
        }
        Strategy::Random => {
            for g in &mut groups {
                g.shuffle(rng);
            }
        }
        Strategy::Confidence => {
            for g in &mut groups {
                g.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.instance_index.cmp(&b.instance_index)));
            }
        }
        Strategy::NearestNeighbor => {
            let means = class_means(features, support, num_classes);
            for (label, g) in groups.iter_mut().enumerate() {
                let Some(mean) = &means[label] else { continue };
                let dist = |c: &Candidate| (features.as_matrix().row(c.instance_index).transpose() - mean).norm();
                g.sort_by(|a, b| {
                    dist(a)
                        .partial_cmp(&dist(b))
                        .unwrap_or(Ordering::Equal)
                        .then(a.instance_index.cmp(&b.instance_index))
                });
            }
        }
    }
    Ok(groups
        .into_iter()
        .zip(limits)
        .flat_map(|(g, &k)| g.into_iter().take(k))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoopConfig {
    pub classifier: ClassifierConfig,
    pub strategy: Strategy,
    /// Instances absorbed per class per iteration.
    pub quota: usize,
    /// Stop once at most this many instances per class remain unabsorbed.
    pub leave_out_per_class: usize,
    /// Upper bound on instances absorbed per class over the whole loop.
    pub absorb_cap_per_class: Option<usize>,
    pub max_iterations: usize,
    pub grid: GridParams,
    pub solver: SolverSettings,
}

impl Default for LoopConfig {
    fn default() -> Self {
        LoopConfig {
            classifier: ClassifierConfig::default(),
            strategy: Strategy::Ici,
            quota: 5,
            leave_out_per_class: 5,
            absorb_cap_per_class: None,
            max_iterations: 100,
            grid: GridParams::default(),
            solver: SolverSettings::default(),
        }
    }
}

impl LoopConfig {
    fn validate(&self) -> Result<()> {
        if self.quota == 0 {
            return Err(IciError::invalid("quota must be >= 1"));
        }
        if self.max_iterations == 0 {
            return Err(IciError::invalid("max_iterations must be >= 1"));
        }
        Ok(())
    }

    /// Selection iterations needed to bring a pool of `pool` down to the
    /// leave-out level when every class fills its quota.
    pub fn iteration_budget(&self, pool: usize, num_classes: usize) -> usize {
        let keep = self.leave_out_per_class * num_classes;
        pool.saturating_sub(keep).div_ceil(self.quota * num_classes)
    }
}

/// Features and labels for one loop run. Row indices refer to both matrices.
#[derive(Debug, Clone, Copy)]
pub struct LoopInputs<'a> {
    pub classifier_features: &'a DenseMatrix,
    pub regression_features: &'a DenseMatrix,
    /// `(instance, label)` pairs; labels are episode class positions.
    pub support: &'a [(usize, usize)],
    pub unlabeled: &'a [usize],
    pub num_classes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopState {
    pub expanded_support: Vec<(usize, usize)>,
    pub remaining_unlabeled: Vec<usize>,
    pub iteration: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub selected: Vec<usize>,
    pub pseudo_labels: Vec<usize>,
    /// `None` for infinite or unranked entries.
    pub vanish_lambdas: Vec<Option<f64>>,
    pub degenerate: bool,
    /// Probe value for the classifier that produced this iteration's pseudo-labels.
    pub model_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct LoopOutcome {
    pub model: LinearModel,
    pub state: LoopState,
    pub trace: Vec<IterationRecord>,
}

fn train_on(
    config: &ClassifierConfig,
    features: &DenseMatrix,
    support: &[(usize, usize)],
    classes: &[usize],
) -> Result<LinearModel> {
    let rows: Vec<usize> = support.iter().map(|&(i, _)| i).collect();
    let labels: Vec<usize> = support.iter().map(|&(_, l)| l).collect();
    classify::train(config, &features.select_rows(&rows), &labels, classes)
}

/// Runs the self-taught loop and trains the final classifier on the expanded support.
///
/// `probe`, when given, is evaluated on every classifier that pseudo-labels
/// the pool, and its value stored in the trace.
pub fn run_ici_loop<R: Rng + ?Sized>(
    inputs: &LoopInputs<'_>,
    config: &LoopConfig,
    rng: &mut R,
    probe: Option<&dyn Fn(&LinearModel) -> f64>,
) -> Result<LoopOutcome> {
    config.validate()?;
    let n_cls = inputs.num_classes;
    let classes: Vec<usize> = (0..n_cls).collect();
    let mut remaining: Vec<usize> = inputs.unlabeled.to_vec();
    remaining.sort_unstable();
    remaining.dedup();
    if remaining.len() != inputs.unlabeled.len() {
        return Err(IciError::invalid("unlabeled pool contains duplicates"));
    }
    if let Some(&(i, _)) = inputs.support.iter().find(|(i, _)| remaining.binary_search(i).is_ok()) {
        return Err(IciError::invalid(format!("instance {i} is both support and unlabeled")));
    }

    let mut expanded: Vec<(usize, usize)> = inputs.support.to_vec();
    let mut absorbed = vec![0usize; n_cls];
    let budget = config.iteration_budget(remaining.len(), n_cls);
    let mut model = train_on(&config.classifier, inputs.classifier_features, &expanded, &classes)?;
    let mut trace = Vec::new();
    let mut iteration = 0;
    let mut converged = true;

    loop {
        if remaining.is_empty()
            || remaining.len() <= config.leave_out_per_class * n_cls
            || iteration >= budget
        {
            break;
        }
        if iteration >= config.max_iterations {
            converged = false;
            break;
        }
        let limits: Vec<usize> = absorbed
            .iter()
            .map(|&a| match config.absorb_cap_per_class {
                Some(cap) => config.quota.min(cap.saturating_sub(a)),
                None => config.quota,
            })
            .collect();
        if limits.iter().all(|&l| l == 0) {
            break;
        }

        let pred = classify::predict(&model, &inputs.classifier_features.select_rows(&remaining))?;
        let confidence = pred.confidence();
        let candidates: Vec<Candidate> = remaining
            .iter()
            .enumerate()
            .map(|(k, &idx)| Candidate {
                instance_index: idx,
                pseudo_label: pred.labels[k],
                vanish_lambda: f64::INFINITY,
                score: confidence[k],
            })
            .collect();

        let (selected, degenerate) = match config.strategy {
            Strategy::Ici => {
                let reg = build_regression_inputs(
                    inputs.regression_features,
                    &expanded,
                    &candidates,
                    n_cls,
                )?;
                let ranked = rank_by_ici(&reg, &config.grid, &config.solver, false)?;
                (
                    select_stratified_limited(&ranked.ranking, &limits),
                    ranked.ranking.is_degenerate(),
                )
            }
            other => (
                select_baseline(
                    other,
                    &candidates,
                    inputs.classifier_features,
                    &expanded,
                    &limits,
                    rng,
                )?,
                false,
            ),
        };
        if selected.is_empty() {
            break;
        }

        for c in &selected {
            expanded.push((c.instance_index, c.pseudo_label));
            absorbed[c.pseudo_label] += 1;
        }
        remaining.retain(|i| !selected.iter().any(|c| c.instance_index == *i));
        iteration += 1;
        trace.push(IterationRecord {
            iteration,
            selected: selected.iter().map(|c| c.instance_index).collect(),
            pseudo_labels: selected.iter().map(|c| c.pseudo_label).collect(),
            vanish_lambdas: selected
                .iter()
                .map(|c| c.vanish_lambda.is_finite().then_some(c.vanish_lambda))
                .collect(),
            degenerate,
            model_accuracy: probe.map(|p| p(&model)),
        });
        model = train_on(&config.classifier, inputs.classifier_features, &expanded, &classes)?;
    }

    Ok(LoopOutcome {
        model,
        state: LoopState {
            expanded_support: expanded,
            remaining_unlabeled: remaining,
            iteration,
            converged,
        },
        trace,
    })
}
