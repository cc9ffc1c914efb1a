//! Core domain types shared by every other module: students, exercises,
//! concepts, interaction records, dataset views, knowledge states and
//! prediction artifacts.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

macro_rules! id_type {
    ($(#[$doc:meta])* $name:ident) => {
        $(#[$doc])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }

            pub fn is_empty(&self) -> bool {
                self.0.is_empty()
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self::new(s)
            }
        }
    };
}

id_type!(
    /// Identifier of a knowledge concept (skill).
    ConceptId
);
id_type!(
    /// Identifier of an exercise (question).
    ExerciseId
);
id_type!(
    /// Identifier of a student.
    StudentId
);

/// An exercise together with its concept mapping and optional side information.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Exercise {
    pub id: ExerciseId,
    /// Concepts tested by this exercise, in a stable order. Must be non-empty.
    pub concept_ids: Vec<ConceptId>,
    /// Textual description of the exercise, when the source dataset has one.
    pub text: Option<String>,
    /// Human-readable concept names. Keys must be a subset of `concept_ids`.
    pub concept_names: BTreeMap<ConceptId, String>,
}

impl Exercise {
    pub fn new(id: ExerciseId, concept_ids: Vec<ConceptId>) -> Self {
        Self {
            id,
            concept_ids,
            text: None,
            concept_names: BTreeMap::new(),
        }
    }
}

/// One student-exercise attempt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionRecord {
    pub student: StudentId,
    pub exercise: ExerciseId,
    /// Whether the attempt was answered correctly. Rendered and serialized as 0/1.
    pub correct: bool,
    /// Epoch seconds. Either all records of a student carry one or none do.
    pub timestamp: Option<i64>,
    /// Time spent on the attempt, in seconds.
    pub duration: Option<u64>,
}

impl InteractionRecord {
    pub fn correct_bit(&self) -> u8 {
        self.correct as u8
    }
}

/// A student's full interaction sequence, in time order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StudentHistory {
    pub student: StudentId,
    pub records: Vec<InteractionRecord>,
}

impl StudentHistory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// A record paired with its 1-based position in the owning student's history.
///
/// Positions survive shot selection, so prompts and reports can state where
/// in the trajectory a record sits even when shots were sampled.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shot {
    pub position: usize,
    pub record: InteractionRecord,
}

/// In-memory dataset: exercises, the concept universe, and per-student histories.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Dataset {
    pub exercises: BTreeMap<ExerciseId, Exercise>,
    pub concepts: BTreeSet<ConceptId>,
    pub histories: BTreeMap<StudentId, StudentHistory>,
}

/// Summary statistics of a dataset, one value per column of the usual
/// dataset-description tables.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetStats {
    pub students: usize,
    pub exercises: usize,
    pub skills: usize,
    pub records: usize,
    pub has_timestamps: bool,
    pub avg_skills_per_exercise: f64,
    pub avg_records_per_student: f64,
}

impl Dataset {
    pub fn stats(&self) -> DatasetStats {
        let records: usize = self.histories.values().map(|h| h.records.len()).sum();
        let concept_refs: usize = self.exercises.values().map(|e| e.concept_ids.len()).sum();
        let has_timestamps = self
            .histories
            .values()
            .any(|h| h.records.iter().any(|r| r.timestamp.is_some()));
        DatasetStats {
            students: self.histories.len(),
            exercises: self.exercises.len(),
            skills: self.concepts.len(),
            records,
            has_timestamps,
            avg_skills_per_exercise: if self.exercises.is_empty() {
                0.0
            } else {
                concept_refs as f64 / self.exercises.len() as f64
            },
            avg_records_per_student: if self.histories.is_empty() {
                0.0
            } else {
                records as f64 / self.histories.len() as f64
            },
        }
    }

    /// True when at least one exercise carries a textual description.
    pub fn has_exercise_text(&self) -> bool {
        self.exercises.values().any(|e| e.text.is_some())
    }
}

/// Information tier a dataset is projected to before prompting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetMode {
    /// IDs and correctness only.
    Scant,
    /// Adds concept names.
    Sparse,
    /// Adds exercise texts and timing fields.
    Moderate,
}

impl DatasetMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            DatasetMode::Scant => "scant",
            DatasetMode::Sparse => "sparse",
            DatasetMode::Moderate => "moderate",
        }
    }
}

impl fmt::Display for DatasetMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for DatasetMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "scant" => Ok(DatasetMode::Scant),
            "sparse" => Ok(DatasetMode::Sparse),
            "moderate" => Ok(DatasetMode::Moderate),
            other => Err(format!("unknown dataset mode `{other}`")),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModeError {
    #[error("mode `{mode}` unavailable: no exercise in the dataset has a textual description")]
    ModeUnavailable { mode: DatasetMode },
}

/// A read-only projection of a dataset to one information tier.
///
/// The view never copies or mutates the underlying data; it only gates which
/// fields the prompting layer may render.
#[derive(Debug, Clone, Copy)]
pub struct ModeView<'a> {
    dataset: &'a Dataset,
    mode: DatasetMode,
}

/// Projects a dataset to `mode`, checking the tier's precondition.
pub fn project_mode(dataset: &Dataset, mode: DatasetMode) -> Result<ModeView<'_>, ModeError> {
    if mode == DatasetMode::Moderate && !dataset.has_exercise_text() {
        return Err(ModeError::ModeUnavailable { mode });
    }
    Ok(ModeView { dataset, mode })
}

impl<'a> ModeView<'a> {
    pub fn mode(&self) -> DatasetMode {
        self.mode
    }

    pub fn dataset(&self) -> &'a Dataset {
        self.dataset
    }

    pub fn exercise(&self, id: &ExerciseId) -> Option<&'a Exercise> {
        self.dataset.exercises.get(id)
    }

    pub fn shows_concept_names(&self) -> bool {
        self.mode >= DatasetMode::Sparse
    }

    pub fn shows_text(&self) -> bool {
        self.mode >= DatasetMode::Moderate
    }

    /// Timestamps and durations are behavioral detail, exposed at the richest
    /// tier only.
    pub fn shows_timing(&self) -> bool {
        self.mode >= DatasetMode::Moderate
    }
}

/// A violation found by [`validate_dataset`]. Violations are data, not errors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    /// A record references an exercise missing from the exercise table.
    DanglingExercise { student: StudentId, exercise: ExerciseId },
    /// An exercise references a concept missing from the concept universe.
    DanglingConcept { exercise: ExerciseId, concept: ConceptId },
    /// An exercise tests no concepts.
    EmptyConceptSet { exercise: ExerciseId },
    /// An identifier is the empty string.
    EmptyId { context: String },
    /// A concept-name key is not one of the exercise's concepts.
    StrayConceptName { exercise: ExerciseId, concept: ConceptId },
    /// A history contains a record belonging to a different student.
    ForeignRecord { history: StudentId, record: StudentId },
    /// A student has some records with timestamps and some without.
    MixedTimestamps { student: StudentId },
    /// Timestamped records out of chronological order.
    UnsortedHistory { student: StudentId },
}

/// Checks every referential invariant of [`Dataset`]; returns all violations found.
pub fn validate_dataset(dataset: &Dataset) -> Vec<Violation> {
    let mut out = Vec::new();
    for (id, ex) in &dataset.exercises {
        if id.is_empty() {
            out.push(Violation::EmptyId {
                context: "exercise id".into(),
            });
        }
        if ex.concept_ids.is_empty() {
            out.push(Violation::EmptyConceptSet {
                exercise: id.clone(),
            });
        }
        for c in &ex.concept_ids {
            if c.is_empty() {
                out.push(Violation::EmptyId {
                    context: format!("concept id in exercise {id}"),
                });
            }
            if !dataset.concepts.contains(c) {
                out.push(Violation::DanglingConcept {
                    exercise: id.clone(),
                    concept: c.clone(),
                });
            }
        }
        for named in ex.concept_names.keys() {
            if !ex.concept_ids.contains(named) {
                out.push(Violation::StrayConceptName {
                    exercise: id.clone(),
                    concept: named.clone(),
                });
            }
        }
    }
    for (sid, hist) in &dataset.histories {
        if sid.is_empty() {
            out.push(Violation::EmptyId {
                context: "student id".into(),
            });
        }
        let with_ts = hist.records.iter().filter(|r| r.timestamp.is_some()).count();
        if with_ts != 0 && with_ts != hist.records.len() {
            out.push(Violation::MixedTimestamps {
                student: sid.clone(),
            });
        }
        let sorted = hist
            .records
            .windows(2)
            .all(|w| match (w[0].timestamp, w[1].timestamp) {
                (Some(a), Some(b)) => a <= b,
                _ => true,
            });
        if !sorted {
            out.push(Violation::UnsortedHistory {
                student: sid.clone(),
            });
        }
        for rec in &hist.records {
            if rec.student != *sid {
                out.push(Violation::ForeignRecord {
                    history: sid.clone(),
                    record: rec.student.clone(),
                });
            }
            if !dataset.exercises.contains_key(&rec.exercise) {
                out.push(Violation::DanglingExercise {
                    student: sid.clone(),
                    exercise: rec.exercise.clone(),
                });
            }
        }
    }
    out
}

/// Ternary mastery estimate for one concept.
///
/// Ordered `Fail < Fair < Good` so mastery comparisons read naturally.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MasteryLevel {
    Fail,
    Fair,
    Good,
}

impl MasteryLevel {
    pub fn as_str(&self) -> &'static str {
        match self {
            MasteryLevel::Good => "good",
            MasteryLevel::Fair => "fair",
            MasteryLevel::Fail => "fail",
        }
    }

    /// Case-insensitive parse of the ternary label.
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "good" => Some(MasteryLevel::Good),
            "fair" => Some(MasteryLevel::Fair),
            "fail" => Some(MasteryLevel::Fail),
            _ => None,
        }
    }
}

impl fmt::Display for MasteryLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Per-concept mastery estimates accumulated over a trajectory.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeState {
    pub per_concept: BTreeMap<ConceptId, MasteryLevel>,
}

impl KnowledgeState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, concept: &ConceptId) -> Option<MasteryLevel> {
        self.per_concept.get(concept).copied()
    }

    pub fn set(&mut self, concept: ConceptId, level: MasteryLevel) {
        self.per_concept.insert(concept, level);
    }

    pub fn is_empty(&self) -> bool {
        self.per_concept.is_empty()
    }

    /// One-line rendering `c1: good, c2: fail` in concept order.
    pub fn summary(&self) -> String {
        self.per_concept
            .iter()
            .map(|(c, m)| format!("{c}: {m}"))
            .collect::<Vec<_>>()
            .join(", ")
    }
}

/// Natural-language account of one practice record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interpretation {
    /// 1-based position of the interpreted record in the student's history.
    pub record_index: usize,
    pub text: String,
}

/// How a binary prediction was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictionSource {
    /// Parsed from a model completion.
    Parsed,
    /// Seeded random bit emitted after two unparseable completions.
    Fallback,
}

/// Binary performance prediction for one target exercise.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub value: bool,
    pub source: PredictionSource,
    /// The completion text the value was parsed from (last attempt on fallback).
    pub raw_text: String,
}

impl Prediction {
    pub fn value_bit(&self) -> u8 {
        self.value as u8
    }
}

/// Natural-language justification of a prediction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Explanation {
    pub text: String,
    /// Set when the provider returned empty completions and a placeholder was used.
    pub degraded: bool,
}

/// A held-out record to predict. The ground-truth label is kept for scoring
/// and deliberately unreachable from the prompt-rendering path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredictionTarget {
    record: InteractionRecord,
    position: usize,
}

impl PredictionTarget {
    pub fn new(record: InteractionRecord, position: usize) -> Self {
        Self { record, position }
    }

    /// 1-based position of the target record in the student's history.
    pub fn position(&self) -> usize {
        self.position
    }

    pub fn student(&self) -> &StudentId {
        &self.record.student
    }

    pub fn exercise(&self) -> &ExerciseId {
        &self.record.exercise
    }

    pub fn timestamp(&self) -> Option<i64> {
        self.record.timestamp
    }

    pub fn duration(&self) -> Option<u64> {
        self.record.duration
    }

    /// The held-out label. For scoring only; never rendered into prompts.
    pub fn ground_truth(&self) -> bool {
        self.record.correct
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_dataset(with_text: bool) -> Dataset {
        let mut ds = Dataset::default();
        ds.concepts.insert(ConceptId::new("c1"));
        ds.concepts.insert(ConceptId::new("c2"));
        let mut e1 = Exercise::new(
            ExerciseId::new("e1"),
            vec![ConceptId::new("c1"), ConceptId::new("c2")],
        );
        e1.concept_names
            .insert(ConceptId::new("c1"), "Carrying".into());
        if with_text {
            e1.text = Some("Compute 3 1/2 - 2 3/4.".into());
        }
        ds.exercises.insert(e1.id.clone(), e1);
        let records = vec![
            InteractionRecord {
                student: StudentId::new("s1"),
                exercise: ExerciseId::new("e1"),
                correct: true,
                timestamp: None,
                duration: None,
            },
            InteractionRecord {
                student: StudentId::new("s1"),
                exercise: ExerciseId::new("e1"),
                correct: false,
                timestamp: None,
                duration: None,
            },
        ];
        ds.histories.insert(
            StudentId::new("s1"),
            StudentHistory {
                student: StudentId::new("s1"),
                records,
            },
        );
        ds
    }

    #[test]
    fn scant_projection_always_available() {
        let ds = tiny_dataset(false);
        let view = project_mode(&ds, DatasetMode::Scant).unwrap();
        assert!(!view.shows_concept_names());
        assert!(!view.shows_text());
        assert!(!view.shows_timing());
    }

    #[test]
    fn moderate_requires_text() {
        let ds = tiny_dataset(false);
        let err = project_mode(&ds, DatasetMode::Moderate).unwrap_err();
        assert_eq!(
            err,
            ModeError::ModeUnavailable {
                mode: DatasetMode::Moderate
            }
        );
        let ds = tiny_dataset(true);
        assert!(project_mode(&ds, DatasetMode::Moderate).is_ok());
    }

    #[test]
    fn sparse_exposes_names_not_texts() {
        let ds = tiny_dataset(true);
        let view = project_mode(&ds, DatasetMode::Sparse).unwrap();
        assert!(view.shows_concept_names());
        assert!(!view.shows_text());
    }

    #[test]
    fn projection_is_idempotent_and_read_only() {
        let ds = tiny_dataset(true);
        let before = ds.clone();
        for _ in 0..3 {
            let view = project_mode(&ds, DatasetMode::Sparse).unwrap();
            assert_eq!(view.mode(), DatasetMode::Sparse);
        }
        assert_eq!(ds, before);
    }

    #[test]
    fn well_formed_dataset_has_no_violations() {
        assert!(validate_dataset(&tiny_dataset(true)).is_empty());
    }

    #[test]
    fn dangling_exercise_reported() {
        let mut ds = tiny_dataset(false);
        ds.histories
            .get_mut(&StudentId::new("s1"))
            .unwrap()
            .records
            .push(InteractionRecord {
                student: StudentId::new("s1"),
                exercise: ExerciseId::new("ghost"),
                correct: true,
                timestamp: None,
                duration: None,
            });
        let violations = validate_dataset(&ds);
        assert_eq!(
            violations,
            vec![Violation::DanglingExercise {
                student: StudentId::new("s1"),
                exercise: ExerciseId::new("ghost"),
            }]
        );
    }

    #[test]
    fn empty_concept_set_reported() {
        let mut ds = tiny_dataset(false);
        ds.exercises
            .insert(ExerciseId::new("e9"), Exercise::new(ExerciseId::new("e9"), vec![]));
        let violations = validate_dataset(&ds);
        assert!(violations.contains(&Violation::EmptyConceptSet {
            exercise: ExerciseId::new("e9")
        }));
    }

    #[test]
    fn mastery_total_order() {
        assert!(MasteryLevel::Good > MasteryLevel::Fair);
        assert!(MasteryLevel::Fair > MasteryLevel::Fail);
        assert_eq!(MasteryLevel::parse("GOOD"), Some(MasteryLevel::Good));
        assert_eq!(MasteryLevel::parse("great"), None);
    }

    #[test]
    fn target_hides_label_from_accessors_used_in_rendering() {
        let rec = InteractionRecord {
            student: StudentId::new("s1"),
            exercise: ExerciseId::new("e1"),
            correct: true,
            timestamp: Some(100),
            duration: Some(42),
        };
        let t = PredictionTarget::new(rec, 7);
        assert_eq!(t.position(), 7);
        assert_eq!(t.exercise(), &ExerciseId::new("e1"));
        assert!(t.ground_truth());
    }
}
