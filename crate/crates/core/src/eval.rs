//! Experiment runner and metrics: seeded student sampling, per-target
//! prediction through the cognition chain, baseline evaluation on identical
//! targets, aggregation with dispersion bands, and result persistence.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::bkt::{self, BktParams, FitOptions};
use crate::cognition::{self, GenProfile, PipelineError};
use crate::ingest::{split_student, IngestError, SplitSpec};
use crate::interpret::{assemble_student_report, explain_prediction, StudentReport};
use crate::llm::Provider;
use crate::model::{
    project_mode, Dataset, DatasetMode, Explanation, ModeError, PredictionSource,
    PredictionTarget, Shot, StudentId,
};
use crate::prompt::{Prompter, TemplateSet};
use crate::select::{select_indices, SelectionError, SelectionStrategy};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("predictions and labels differ in length: {predictions} vs {labels}")]
    LengthMismatch { predictions: usize, labels: usize },
    #[error("cannot compute metrics over zero predictions")]
    Empty,
    #[error("requested {requested} students but the dataset has {available}")]
    NotEnoughStudents { requested: usize, available: usize },
    #[error("repeat {repeat} produced no predictions (all students skipped)")]
    NoPredictions { repeat: usize },
    #[error("need at least two results to compare, got {0}")]
    NeedTwoRuns(usize),
    #[error(transparent)]
    Mode(#[from] ModeError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("failed to serialize results: {0}")]
    Serialize(String),
}

/// Stable seed derivation: the base seed mixed with a list of string tags.
/// Platform-independent, so seeded runs reproduce everywhere.
pub fn derive_seed(base: u64, tags: &[&str]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(base.to_le_bytes());
    for tag in tags {
        hasher.update([0xff]);
        hasher.update(tag.as_bytes());
    }
    let out = hasher.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("sha256 yields 32 bytes"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetFormat {
    Frcsub,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectKind {
    First,
    Random,
}

/// Provider settings carried in the experiment config (the provider itself is
/// constructed by the caller).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub kind: String,
    pub model_id: String,
    pub max_tokens: u32,
    pub narrative_temperature: f64,
    pub budget_tokens: Option<u64>,
    /// Bound on in-flight provider requests (worker threads per repeat).
    pub concurrency: usize,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            kind: "mock".into(),
            model_id: "default".into(),
            max_tokens: 1024,
            narrative_temperature: 0.7,
            budget_tokens: None,
            concurrency: 4,
        }
    }
}

/// Full experiment protocol configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub dataset_path: PathBuf,
    pub q_matrix_path: Option<PathBuf>,
    pub format: DatasetFormat,
    pub mode: DatasetMode,
    pub select: SelectKind,
    pub shots: usize,
    pub n_students: usize,
    pub repeats: usize,
    pub test_fraction: f64,
    pub seed: u64,
    pub explain: bool,
    pub max_context_shots: Option<usize>,
    pub templates_dir: Option<PathBuf>,
    pub provider: ProviderConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset_path: PathBuf::new(),
            q_matrix_path: None,
            format: DatasetFormat::Log,
            mode: DatasetMode::Scant,
            select: SelectKind::First,
            shots: 4,
            n_students: 50,
            repeats: 3,
            test_fraction: 0.2,
            seed: 0,
            explain: false,
            max_context_shots: None,
            templates_dir: None,
            provider: ProviderConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            test_fraction: self.test_fraction,
            seed: self.seed,
        }
    }

    pub fn gen_profile(&self) -> GenProfile {
        GenProfile::for_model(
            &self.provider.model_id,
            self.provider.max_tokens,
            self.provider.narrative_temperature,
        )
    }

    pub fn prompter(&self) -> Result<Prompter, crate::prompt::PromptError> {
        let templates = match &self.templates_dir {
            Some(dir) => TemplateSet::from_dir(dir)?,
            None => TemplateSet::default(),
        };
        Ok(Prompter::new(templates, self.max_context_shots))
    }

    fn strategy_for(&self, repeat: usize, student: &StudentId) -> SelectionStrategy {
        match self.select {
            SelectKind::First => SelectionStrategy::FirstK { k: self.shots },
            SelectKind::Random => SelectionStrategy::RandomK {
                k: self.shots,
                seed: derive_seed(self.seed, &["select", &repeat.to_string(), student.as_str()]),
            },
        }
    }

    fn fallback_seed(&self, repeat: usize, student: &StudentId, position: usize) -> u64 {
        derive_seed(
            self.seed,
            &[
                "fallback",
                &repeat.to_string(),
                student.as_str(),
                &position.to_string(),
            ],
        )
    }
}

/// Binary classification metrics with the positive class = answered correctly.
/// Zero-denominator precision, recall and F1 are defined as 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub fallback_rate: f64,
}

/// Computes metrics over parallel prediction/label sequences.
pub fn compute_metrics(predictions: &[bool], labels: &[bool]) -> Result<Metrics, EvalError> {
    if predictions.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            predictions: predictions.len(),
            labels: labels.len(),
        });
    }
    if predictions.is_empty() {
        return Err(EvalError::Empty);
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0u64, 0u64, 0u64, 0u64);
    for (&p, &l) in predictions.iter().zip(labels) {
        match (p, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let total = (tp + fp + tn + fn_) as f64;
    let precision = if tp + fp > 0 {
        tp as f64 / (tp + fp) as f64
    } else {
        0.0
    };
    let recall = if tp + fn_ > 0 {
        tp as f64 / (tp + fn_) as f64
    } else {
        0.0
    };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(Metrics {
        accuracy: (tp + tn) as f64 / total,
        precision,
        recall,
        f1,
        tp,
        fp,
        tn,
        fn_,
        fallback_rate: 0.0,
    })
}

/// One scored prediction, the auditable unit everything aggregates from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub repeat: usize,
    pub student: String,
    pub position: usize,
    pub exercise: String,
    pub label: u8,
    pub predicted: u8,
    pub source: PredictionSource,
    /// Completions issued for this target (2 * shots + 1 plus any retries).
    pub calls: u64,
    /// Shots whose mastery labels were carried forward for this target.
    pub carried_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedStudent {
    pub repeat: usize,
    pub student: String,
    pub reason: String,
}

/// Mean, population standard deviation and the 2-sigma band of one metric
/// across repeats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricStat {
    pub mean: f64,
    pub std: f64,
    pub lo2: f64,
    pub hi2: f64,
}

impl MetricStat {
    fn from_values(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        Self {
            mean,
            std,
            lo2: mean - 2.0 * std,
            hi2: mean + 2.0 * std,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub accuracy: MetricStat,
    pub precision: MetricStat,
    pub recall: MetricStat,
    pub f1: MetricStat,
    pub fallback_rate: MetricStat,
}

impl Aggregate {
    fn from_repeats(per_repeat: &[Metrics]) -> Self {
        let pick = |f: fn(&Metrics) -> f64| {
            MetricStat::from_values(&per_repeat.iter().map(f).collect::<Vec<_>>())
        };
        Self {
            accuracy: pick(|m| m.accuracy),
            precision: pick(|m| m.precision),
            recall: pick(|m| m.recall),
            f1: pick(|m| m.f1),
            fallback_rate: pick(|m| m.fallback_rate),
        }
    }
}

/// Everything a run produces, recomputable from `records`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub method: String,
    pub per_repeat: Vec<Metrics>,
    /// Mean of per-student accuracies, one value per repeat (prediction-level
    /// metrics live in `per_repeat`).
    pub student_mean_accuracy: Vec<f64>,
    pub aggregate: Aggregate,
    pub records: Vec<PredictionRecord>,
    pub skipped: Vec<SkippedStudent>,
}

/// A run's result plus per-student reports (reports are persisted separately).
#[derive(Debug, Clone)]
pub struct ExperimentRun {
    pub result: ExperimentResult,
    pub reports: Vec<StudentReport>,
}

/// Per-student plan: the shot pool, the selected shots and the held-out
/// targets. Shared between LLM runs and baselines so both score identical
/// targets.
#[derive(Debug, Clone)]
pub struct StudentPlan {
    pub student: StudentId,
    pub pool: Vec<crate::model::InteractionRecord>,
    pub shots: Vec<Shot>,
    pub targets: Vec<PredictionTarget>,
}

#[derive(Debug, Clone)]
pub struct RepeatPlan {
    pub repeat: usize,
    pub students: Vec<StudentPlan>,
    pub skipped: Vec<SkippedStudent>,
}

fn sample_without_replacement(
    candidates: &[StudentId],
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<StudentId> {
    let mut indices: Vec<usize> = (0..candidates.len()).collect();
    let take = n.min(candidates.len());
    for i in 0..take {
        let j = i + (rng.next_u64() % (candidates.len() - i) as u64) as usize;
        indices.swap(i, j);
    }
    indices[..take]
        .iter()
        .map(|&i| candidates[i].clone())
        .collect()
}

/// Builds the per-repeat sampling and split plan.
///
/// Repeat r samples `n_students` with seed `base + r`, without replacement,
/// and avoids students used by earlier repeats while the pool permits.
/// Students with fewer than two records are skipped and reported.
pub fn plan_experiment(
    dataset: &Dataset,
    config: &ExperimentConfig,
) -> Result<Vec<RepeatPlan>, EvalError> {
    let all: Vec<StudentId> = dataset.histories.keys().cloned().collect();
    if config.n_students > all.len() {
        return Err(EvalError::NotEnoughStudents {
            requested: config.n_students,
            available: all.len(),
        });
    }
    let split_spec = config.split_spec();
    let mut used: BTreeSet<StudentId> = BTreeSet::new();
    let mut plans = Vec::with_capacity(config.repeats);
    for repeat in 0..config.repeats {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(repeat as u64));
        let fresh: Vec<StudentId> = all.iter().filter(|s| !used.contains(*s)).cloned().collect();
        let candidates = if fresh.len() >= config.n_students {
            fresh
        } else {
            all.clone()
        };
        let sampled = sample_without_replacement(&candidates, config.n_students, &mut rng);
        used.extend(sampled.iter().cloned());

        let mut students = Vec::new();
        let mut skipped = Vec::new();
        for student in sampled {
            let history = &dataset.histories[&student];
            let split = match split_student(history, &split_spec) {
                Ok(split) => split,
                Err(IngestError::HistoryTooShort { len }) => {
                    skipped.push(SkippedStudent {
                        repeat,
                        student: student.to_string(),
                        reason: format!("history too short ({len} records)"),
                    });
                    continue;
                }
                Err(other) => return Err(other.into()),
            };
            let strategy = config.strategy_for(repeat, &student);
            let indices = select_indices(split.shots_pool.len(), &strategy)?;
            let shots: Vec<Shot> = indices
                .into_iter()
                .map(|i| Shot {
                    position: i + 1,
                    record: split.shots_pool[i].clone(),
                })
                .collect();
            let pool_len = split.shots_pool.len();
            let targets: Vec<PredictionTarget> = split
                .test_records
                .iter()
                .enumerate()
                .map(|(i, rec)| PredictionTarget::new(rec.clone(), pool_len + i + 1))
                .collect();
            students.push(StudentPlan {
                student,
                pool: split.shots_pool,
                shots,
                targets,
            });
        }
        plans.push(RepeatPlan {
            repeat,
            students,
            skipped,
        });
    }
    Ok(plans)
}

struct StudentOutcome {
    records: Vec<PredictionRecord>,
    report: StudentReport,
}

fn run_student(
    plan: &StudentPlan,
    repeat: usize,
    provider: &dyn Provider,
    prompter: &Prompter,
    profile: &GenProfile,
    config: &ExperimentConfig,
    view: &crate::model::ModeView<'_>,
) -> Result<StudentOutcome, EvalError> {
    let mut records = Vec::with_capacity(plan.targets.len());
    let mut predictions = Vec::new();
    let mut explanations: Vec<Explanation> = Vec::new();
    let mut last_trace = None;
    for target in &plan.targets {
        let seed = config.fallback_seed(repeat, &plan.student, target.position());
        let (mut trace, prediction) = cognition::trace_and_predict(
            provider,
            prompter,
            &plan.shots,
            target,
            view,
            profile,
            seed,
        )?;
        if config.explain {
            let explanation = explain_prediction(
                provider, prompter, &plan.shots, &mut trace, target, &prediction, view, profile,
            )?;
            explanations.push(explanation);
        }
        records.push(PredictionRecord {
            repeat,
            student: plan.student.to_string(),
            position: target.position(),
            exercise: target.exercise().to_string(),
            label: target.ground_truth() as u8,
            predicted: prediction.value_bit(),
            source: prediction.source,
            calls: trace.calls,
            carried_steps: trace.carried_count(),
        });
        predictions.push(prediction);
        last_trace = Some(trace);
    }
    let trace = last_trace.unwrap_or_default();
    let report = assemble_student_report(
        &plan.student,
        &plan.shots,
        &trace,
        &plan.targets,
        &predictions,
        &explanations,
    );
    Ok(StudentOutcome { records, report })
}

fn repeat_metrics(records: &[PredictionRecord], repeat: usize) -> Result<Metrics, EvalError> {
    let in_repeat: Vec<&PredictionRecord> =
        records.iter().filter(|r| r.repeat == repeat).collect();
    if in_repeat.is_empty() {
        return Err(EvalError::NoPredictions { repeat });
    }
    let preds: Vec<bool> = in_repeat.iter().map(|r| r.predicted == 1).collect();
    let labels: Vec<bool> = in_repeat.iter().map(|r| r.label == 1).collect();
    let mut metrics = compute_metrics(&preds, &labels)?;
    let fallbacks = in_repeat
        .iter()
        .filter(|r| r.source == PredictionSource::Fallback)
        .count();
    metrics.fallback_rate = fallbacks as f64 / in_repeat.len() as f64;
    Ok(metrics)
}

fn student_mean_accuracy(records: &[PredictionRecord], repeat: usize) -> f64 {
    let mut per_student: BTreeMap<&str, (u64, u64)> = BTreeMap::new();
    for r in records.iter().filter(|r| r.repeat == repeat) {
        let entry = per_student.entry(&r.student).or_insert((0, 0));
        entry.0 += (r.predicted == r.label) as u64;
        entry.1 += 1;
    }
    if per_student.is_empty() {
        return 0.0;
    }
    per_student
        .values()
        .map(|(hit, n)| *hit as f64 / *n as f64)
        .sum::<f64>()
        / per_student.len() as f64
}

fn assemble_result(
    method: String,
    repeats: usize,
    records: Vec<PredictionRecord>,
    skipped: Vec<SkippedStudent>,
) -> Result<ExperimentResult, EvalError> {
    let per_repeat = (0..repeats)
        .map(|r| repeat_metrics(&records, r))
        .collect::<Result<Vec<_>, _>>()?;
    let student_means = (0..repeats)
        .map(|r| student_mean_accuracy(&records, r))
        .collect();
    let aggregate = Aggregate::from_repeats(&per_repeat);
    Ok(ExperimentResult {
        method,
        per_repeat,
        student_mean_accuracy: student_means,
        aggregate,
        records,
        skipped,
    })
}

/// Runs the full protocol against a provider: per repeat, sample students,
/// split, select shots, and predict every held-out target through the
/// cognition chain. Students inside a repeat run concurrently, bounded by
/// `provider.concurrency`; repeats run sequentially.
pub fn run_experiment(
    dataset: &Dataset,
    config: &ExperimentConfig,
    provider: &dyn Provider,
) -> Result<ExperimentRun, EvalError> {
    let view = project_mode(dataset, config.mode)?;
    let prompter = config.prompter().map_err(PipelineError::Prompt)?;
    let profile = config.gen_profile();
    let plans = plan_experiment(dataset, config)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.provider.concurrency.max(1))
        .build()
        .map_err(|e| EvalError::Serialize(format!("thread pool: {e}")))?;

    let mut records = Vec::new();
    let mut skipped = Vec::new();
    let mut reports = Vec::new();
    for plan in &plans {
        skipped.extend(plan.skipped.clone());
        let outcomes: Result<Vec<StudentOutcome>, EvalError> = pool.install(|| {
            plan.students
                .par_iter()
                .map(|sp| {
                    run_student(sp, plan.repeat, provider, &prompter, &profile, config, &view)
                })
                .collect()
        });
        for outcome in outcomes? {
            records.extend(outcome.records);
            reports.push(outcome.report);
        }
    }
    let method = format!("llm-{}", provider.id());
    let result = assemble_result(method, config.repeats, records, skipped)?;
    Ok(ExperimentRun { result, reports })
}

/// Classical baselines evaluated on exactly the targets an LLM run with the
/// same config would score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMethod {
    /// BKT fitted on every student's shot pool (full training set); predicts
    /// from each student's full pool.
    BktFull,
    /// BKT fitted on the sampled students' selected shots only; predicts from
    /// those shots (the information the LLM sees).
    BktShots,
    /// Global majority label over the full training pool.
    Majority,
}

impl BaselineMethod {
    pub fn label(&self) -> &'static str {
        match self {
            BaselineMethod::BktFull => "bkt_full",
            BaselineMethod::BktShots => "bkt_shots",
            BaselineMethod::Majority => "majority",
        }
    }
}

#[derive(Debug, Clone)]
pub struct BaselineRun {
    pub result: ExperimentResult,
    /// Fitted per-concept parameters (the full-train fit, or the last
    /// repeat's shot fit); absent for the majority baseline.
    pub fitted_params: Option<BTreeMap<crate::model::ConceptId, BktParams>>,
}

fn full_train_sequences(
    dataset: &Dataset,
    split_spec: &SplitSpec,
) -> BTreeMap<crate::model::ConceptId, Vec<Vec<bool>>> {
    bkt::sequences_by_concept(dataset, |history| {
        match split_student(history, split_spec) {
            Ok(split) => split.shots_pool,
            Err(_) => Vec::new(), // too short to split; excluded from training
        }
    })
}

fn shot_sequences(
    dataset: &Dataset,
    plans: &[StudentPlan],
) -> BTreeMap<crate::model::ConceptId, Vec<Vec<bool>>> {
    let mut out: BTreeMap<crate::model::ConceptId, Vec<Vec<bool>>> = BTreeMap::new();
    for concept in &dataset.concepts {
        out.insert(concept.clone(), Vec::new());
    }
    for plan in plans {
        let mut per_concept: BTreeMap<crate::model::ConceptId, Vec<bool>> = BTreeMap::new();
        for shot in &plan.shots {
            if let Some(ex) = dataset.exercises.get(&shot.record.exercise) {
                for c in &ex.concept_ids {
                    per_concept
                        .entry(c.clone())
                        .or_default()
                        .push(shot.record.correct);
                }
            }
        }
        for (concept, seq) in per_concept {
            out.entry(concept).or_default().push(seq);
        }
    }
    out
}

/// Runs one baseline over the shared plan.
pub fn run_baseline(
    dataset: &Dataset,
    config: &ExperimentConfig,
    method: BaselineMethod,
) -> Result<BaselineRun, EvalError> {
    let plans = plan_experiment(dataset, config)?;
    let split_spec = config.split_spec();
    let fit_options = FitOptions {
        seed: derive_seed(config.seed, &["bkt-fit"]),
        ..FitOptions::default()
    };

    // Training data that does not depend on the sampled students is fitted
    // once and reused across repeats.
    let full_fit = match method {
        BaselineMethod::BktFull => {
            let seqs = full_train_sequences(dataset, &split_spec);
            Some(
                bkt::fit_bkt(&seqs, &fit_options)
                    .into_iter()
                    .map(|(c, f)| (c, f.params))
                    .collect::<BTreeMap<_, _>>(),
            )
        }
        _ => None,
    };
    let majority_label = match method {
        BaselineMethod::Majority => {
            let labels: Vec<bool> = dataset
                .histories
                .values()
                .filter_map(|h| split_student(h, &split_spec).ok())
                .flat_map(|s| s.shots_pool.into_iter().map(|r| r.correct))
                .collect();
            Some(bkt::majority_predict(&labels).map_err(|_| EvalError::Empty)?)
        }
        _ => None,
    };

    let mut records = Vec::new();
    let mut skipped = Vec::new();
    let mut last_params: Option<BTreeMap<crate::model::ConceptId, BktParams>> = full_fit.clone();
    for plan in &plans {
        skipped.extend(plan.skipped.clone());
        let repeat_params = match method {
            BaselineMethod::BktFull => full_fit.clone(),
            BaselineMethod::BktShots => {
                let seqs = shot_sequences(dataset, &plan.students);
                let fitted = bkt::fit_bkt(
                    &seqs,
                    &FitOptions {
                        seed: derive_seed(
                            config.seed,
                            &["bkt-fit-shots", &plan.repeat.to_string()],
                        ),
                        ..FitOptions::default()
                    },
                );
                Some(
                    fitted
                        .into_iter()
                        .map(|(c, f)| (c, f.params))
                        .collect::<BTreeMap<_, _>>(),
                )
            }
            BaselineMethod::Majority => None,
        };
        if repeat_params.is_some() {
            last_params = repeat_params.clone();
        }
        for sp in &plan.students {
            // BktShots predicts from only the selected shots, the same
            // information the LLM sees; BktFull uses the whole pool.
            let shot_records: Vec<crate::model::InteractionRecord> =
                sp.shots.iter().map(|s| s.record.clone()).collect();
            for target in &sp.targets {
                let predicted = match method {
                    BaselineMethod::Majority => majority_label.expect("computed above"),
                    BaselineMethod::BktFull | BaselineMethod::BktShots => {
                        let params = repeat_params.as_ref().expect("fitted above");
                        let prefix: &[crate::model::InteractionRecord] =
                            if method == BaselineMethod::BktFull {
                                &sp.pool
                            } else {
                                &shot_records
                            };
                        bkt::bkt_predict(params, prefix, target.exercise(), dataset)
                            .map_err(|e| EvalError::Serialize(e.to_string()))?
                            .value
                    }
                };
                records.push(PredictionRecord {
                    repeat: plan.repeat,
                    student: sp.student.to_string(),
                    position: target.position(),
                    exercise: target.exercise().to_string(),
                    label: target.ground_truth() as u8,
                    predicted: predicted as u8,
                    source: PredictionSource::Parsed,
                    calls: 0,
                    carried_steps: 0,
                });
            }
        }
    }
    let result = assemble_result(method.label().to_string(), config.repeats, records, skipped)?;
    Ok(BaselineRun {
        result,
        fitted_params: last_params,
    })
}

/// One row of a cross-method comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: String,
    pub accuracy: MetricStat,
    pub precision: MetricStat,
    pub recall: MetricStat,
    pub f1: MetricStat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

/// Ranks results by mean accuracy (descending), ties broken by method name.
pub fn compare_runs(results: &[ExperimentResult]) -> Result<ComparisonTable, EvalError> {
    if results.len() < 2 {
        return Err(EvalError::NeedTwoRuns(results.len()));
    }
    let mut rows: Vec<ComparisonRow> = results
        .iter()
        .map(|r| ComparisonRow {
            method: r.method.clone(),
            accuracy: r.aggregate.accuracy.clone(),
            precision: r.aggregate.precision.clone(),
            recall: r.aggregate.recall.clone(),
            f1: r.aggregate.f1.clone(),
        })
        .collect();
    rows.sort_by(|a, b| {
        b.accuracy
            .mean
            .partial_cmp(&a.accuracy.mean)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.method.cmp(&b.method))
    });
    Ok(ComparisonTable { rows })
}

impl ComparisonTable {
    pub fn to_markdown(&self) -> String {
        let mut md = String::new();
        md.push_str("| method | accuracy | precision | recall | f1 |\n");
        md.push_str("|---|---|---|---|---|\n");
        for row in &self.rows {
            let cell = |s: &MetricStat| format!("{:.4} ± {:.4}", s.mean, 2.0 * s.std);
            md.push_str(&format!(
                "| {} | {} | {} | {} | {} |\n",
                row.method,
                cell(&row.accuracy),
                cell(&row.precision),
                cell(&row.recall),
                cell(&row.f1)
            ));
        }
        md
    }
}

/// Outcome of an ordinal-trend check over runs listed worst-to-best.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrendReport {
    pub labels: Vec<String>,
    pub means: Vec<f64>,
    pub bands2: Vec<f64>,
    /// Strictly increasing mean accuracy in list order.
    pub strictly_increasing: bool,
    /// Non-decreasing mean accuracy in list order.
    pub non_decreasing: bool,
}

/// Checks the ordinal accuracy trend across runs (for example 4, 8, 16 shots,
/// or scant, sparse, moderate modes).
pub fn accuracy_trend(runs: &[(&str, &ExperimentResult)]) -> TrendReport {
    let means: Vec<f64> = runs.iter().map(|(_, r)| r.aggregate.accuracy.mean).collect();
    TrendReport {
        labels: runs.iter().map(|(l, _)| l.to_string()).collect(),
        bands2: runs
            .iter()
            .map(|(_, r)| 2.0 * r.aggregate.accuracy.std)
            .collect(),
        strictly_increasing: means.windows(2).all(|w| w[1] > w[0]),
        non_decreasing: means.windows(2).all(|w| w[1] >= w[0]),
        means,
    }
}

/// Writes the run's artifacts into a results directory: the effective config,
/// the machine-readable result, a flat CSV of per-prediction rows, a Markdown
/// summary, and per-student reports.
pub fn write_results_dir(
    dir: &Path,
    config: &ExperimentConfig,
    result: &ExperimentResult,
    reports: &[StudentReport],
) -> Result<(), EvalError> {
    std::fs::create_dir_all(dir)?;
    let config_json = serde_json::to_string_pretty(config)
        .map_err(|e| EvalError::Serialize(e.to_string()))?;
    std::fs::write(dir.join("config.json"), config_json + "\n")?;

    let results_json = serde_json::to_string_pretty(result)
        .map_err(|e| EvalError::Serialize(e.to_string()))?;
    std::fs::write(dir.join("results.json"), results_json + "\n")?;

    let mut writer = csv::Writer::from_path(dir.join("predictions.csv"))
        .map_err(|e| EvalError::Serialize(e.to_string()))?;
    writer
        .write_record([
            "repeat",
            "student",
            "position",
            "exercise",
            "label",
            "predicted",
            "source",
            "calls",
            "carried_steps",
        ])
        .map_err(|e| EvalError::Serialize(e.to_string()))?;
    for r in &result.records {
        let source = match r.source {
            PredictionSource::Parsed => "parsed",
            PredictionSource::Fallback => "fallback",
        };
        writer
            .write_record([
                r.repeat.to_string(),
                r.student.clone(),
                r.position.to_string(),
                r.exercise.clone(),
                r.label.to_string(),
                r.predicted.to_string(),
                source.to_string(),
                r.calls.to_string(),
                r.carried_steps.to_string(),
            ])
            .map_err(|e| EvalError::Serialize(e.to_string()))?;
    }
    writer.flush()?;

    std::fs::write(dir.join("summary.md"), summary_markdown(result))?;

    if !reports.is_empty() {
        let reports_dir = dir.join("reports");
        std::fs::create_dir_all(&reports_dir)?;
        for report in reports {
            let json = serde_json::to_string_pretty(report)
                .map_err(|e| EvalError::Serialize(e.to_string()))?;
            std::fs::write(reports_dir.join(format!("{}.json", report.student)), json + "\n")?;
            std::fs::write(
                reports_dir.join(format!("{}.md", report.student)),
                report.to_markdown(),
            )?;
        }
    }
    Ok(())
}

/// Loads a previously written results document.
pub fn load_result(dir: &Path) -> Result<ExperimentResult, EvalError> {
    let text = std::fs::read_to_string(dir.join("results.json"))?;
    serde_json::from_str(&text).map_err(|e| EvalError::Serialize(e.to_string()))
}

/// Loads the effective config echoed into a results directory.
pub fn load_config(dir: &Path) -> Result<ExperimentConfig, EvalError> {
    let text = std::fs::read_to_string(dir.join("config.json"))?;
    serde_json::from_str(&text).map_err(|e| EvalError::Serialize(e.to_string()))
}

fn summary_markdown(result: &ExperimentResult) -> String {
    let mut md = format!("# Run summary: {}\n\n", result.method);
    md.push_str("| repeat | accuracy | precision | recall | f1 | fallback rate |\n");
    md.push_str("|---|---|---|---|---|---|\n");
    for (i, m) in result.per_repeat.iter().enumerate() {
        md.push_str(&format!(
            "| {} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} |\n",
            i, m.accuracy, m.precision, m.recall, m.f1, m.fallback_rate
        ));
    }
    let a = &result.aggregate;
    md.push_str(&format!(
        "\naggregate accuracy {:.4} ± {:.4} (2σ), precision {:.4} ± {:.4}, recall {:.4} ± {:.4}, f1 {:.4} ± {:.4}\n",
        a.accuracy.mean,
        2.0 * a.accuracy.std,
        a.precision.mean,
        2.0 * a.precision.std,
        a.recall.mean,
        2.0 * a.recall.std,
        a.f1.mean,
        2.0 * a.f1.std,
    ));
    md.push_str(&format!(
        "\npredictions: {}; students skipped: {}\n",
        result.records.len(),
        result.skipped.len()
    ));
    md
}

/// Recomputes a repeat's metrics straight from the stored records (the audit
/// route used to validate aggregates).
pub fn audit_metrics(result: &ExperimentResult, repeat: usize) -> Result<Metrics, EvalError> {
    repeat_metrics(&result.records, repeat)
}
