//! Dataset loaders and the train/test split.
//!
//! Two on-disk formats are supported:
//! - response-matrix pairs (FrcSub style): a students x exercises binary
//!   matrix plus an exercises x concepts Q-matrix, both whitespace-separated;
//! - interaction logs: newline-delimited JSON records carrying their own
//!   exercise metadata.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::model::{
    ConceptId, Dataset, Exercise, ExerciseId, InteractionRecord, StudentHistory, StudentId,
};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("malformed matrix in {path} line {line}: {reason}")]
    MalformedMatrix {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("dimension mismatch: response matrix has {response_exercises} exercise columns but Q-matrix has {q_exercises} rows")]
    DimensionMismatch {
        response_exercises: usize,
        q_exercises: usize,
    },
    #[error("malformed record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("student {student} mixes timestamped and untimestamped records")]
    InconsistentTimestamps { student: StudentId },
    #[error("history too short: {len} record(s), need at least 2")]
    HistoryTooShort { len: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// How a student history is split into a shot pool and held-out test records.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SplitSpec {
    /// Fraction of each history held out as the test tail, in (0, 1).
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            test_fraction: 0.2,
            seed: 0,
        }
    }
}

/// Result of splitting one history: earlier records form the candidate shot
/// pool, the time-ordered tail is held out for prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct StudentSplit {
    pub shots_pool: Vec<InteractionRecord>,
    pub test_records: Vec<InteractionRecord>,
}

/// Splits a history so the last `ceil(test_fraction * n)` records are held out.
///
/// Purely positional: no randomness is consumed regardless of `spec.seed`.
pub fn split_student(history: &StudentHistory, spec: &SplitSpec) -> Result<StudentSplit, IngestError> {
    let n = history.records.len();
    if n < 2 {
        return Err(IngestError::HistoryTooShort { len: n });
    }
    let test_len = ((spec.test_fraction * n as f64).ceil() as usize).clamp(1, n - 1);
    let cut = n - test_len;
    Ok(StudentSplit {
        shots_pool: history.records[..cut].to_vec(),
        test_records: history.records[cut..].to_vec(),
    })
}

fn parse_binary_matrix(path: &Path) -> Result<Vec<Vec<bool>>, IngestError> {
    let text = fs::read_to_string(path)?;
    let display = path.display().to_string();
    let mut rows: Vec<Vec<bool>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for tok in line.split_whitespace() {
            match tok {
                "0" => row.push(false),
                "1" => row.push(true),
                other => {
                    return Err(IngestError::MalformedMatrix {
                        path: display,
                        line: i + 1,
                        reason: format!("non-binary cell `{other}`"),
                    })
                }
            }
        }
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(IngestError::MalformedMatrix {
                    path: display,
                    line: i + 1,
                    reason: format!("ragged row: {} cells, expected {}", row.len(), first.len()),
                });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(IngestError::MalformedMatrix {
            path: display,
            line: 0,
            reason: "empty matrix".into(),
        });
    }
    Ok(rows)
}

/// Loads a response-matrix dataset (FrcSub format).
///
/// The response matrix is students x exercises over {0,1}; the Q-matrix is
/// exercises x concepts over {0,1}. Students are named `s1..sS` in row order,
/// exercises `e1..eE` in column order, concepts `c1..cC` in Q-column order.
/// Records carry no timestamps; column order stands in for time order.
pub fn load_frcsub(response_matrix_path: &Path, q_matrix_path: &Path) -> Result<Dataset, IngestError> {
    let responses = parse_binary_matrix(response_matrix_path)?;
    let q = parse_binary_matrix(q_matrix_path)?;
    let n_exercises = responses[0].len();
    if q.len() != n_exercises {
        return Err(IngestError::DimensionMismatch {
            response_exercises: n_exercises,
            q_exercises: q.len(),
        });
    }
    let n_concepts = q[0].len();

    let mut ds = Dataset::default();
    for c in 1..=n_concepts {
        ds.concepts.insert(ConceptId::new(format!("c{c}")));
    }
    for (e, q_row) in q.iter().enumerate() {
        let id = ExerciseId::new(format!("e{}", e + 1));
        let concept_ids: Vec<ConceptId> = q_row
            .iter()
            .enumerate()
            .filter(|(_, &bit)| bit)
            .map(|(c, _)| ConceptId::new(format!("c{}", c + 1)))
            .collect();
        ds.exercises.insert(id.clone(), Exercise::new(id, concept_ids));
    }
    for (s, resp_row) in responses.iter().enumerate() {
        let student = StudentId::new(format!("s{}", s + 1));
        let records = resp_row
            .iter()
            .enumerate()
            .map(|(e, &correct)| InteractionRecord {
                student: student.clone(),
                exercise: ExerciseId::new(format!("e{}", e + 1)),
                correct,
                timestamp: None,
                duration: None,
            })
            .collect();
        ds.histories.insert(
            student.clone(),
            StudentHistory { student, records },
        );
    }
    Ok(ds)
}

#[derive(Deserialize)]
struct RawLogRecord {
    student_id: String,
    exercise_id: String,
    correct: u64,
    concept_ids: Vec<String>,
    #[serde(default)]
    timestamp: Option<i64>,
    #[serde(default)]
    duration: Option<u64>,
    #[serde(default)]
    exercise_text: Option<String>,
    #[serde(default)]
    concept_names: Option<BTreeMap<String, String>>,
}

/// Loads a newline-delimited JSON interaction log.
///
/// Each line is one record with keys `student_id`, `exercise_id`, `correct`
/// (0/1), `concept_ids`, and optional `timestamp`, `duration`,
/// `exercise_text`, `concept_names`. Exercise metadata is denormalized per
/// record; all records of one exercise must agree on it.
pub fn load_interaction_log(path: &Path) -> Result<Dataset, IngestError> {
    let text = fs::read_to_string(path)?;
    let mut ds = Dataset::default();

    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawLogRecord =
            serde_json::from_str(line).map_err(|e| IngestError::MalformedRecord {
                line: lineno,
                reason: e.to_string(),
            })?;
        if raw.correct > 1 {
            return Err(IngestError::MalformedRecord {
                line: lineno,
                reason: format!("`correct` must be 0 or 1, got {}", raw.correct),
            });
        }
        if raw.concept_ids.is_empty() {
            return Err(IngestError::MalformedRecord {
                line: lineno,
                reason: "`concept_ids` must be non-empty".into(),
            });
        }

        let exercise_id = ExerciseId::new(raw.exercise_id);
        let concept_ids: Vec<ConceptId> =
            raw.concept_ids.into_iter().map(ConceptId::new).collect();
        for c in &concept_ids {
            ds.concepts.insert(c.clone());
        }
        let names: BTreeMap<ConceptId, String> = raw
            .concept_names
            .unwrap_or_default()
            .into_iter()
            .map(|(k, v)| (ConceptId::new(k), v))
            .collect();

        match ds.exercises.get_mut(&exercise_id) {
            None => {
                let mut ex = Exercise::new(exercise_id.clone(), concept_ids);
                ex.text = raw.exercise_text;
                ex.concept_names = names;
                ds.exercises.insert(exercise_id.clone(), ex);
            }
            Some(ex) => {
                if ex.concept_ids != concept_ids {
                    return Err(IngestError::MalformedRecord {
                        line: lineno,
                        reason: format!(
                            "exercise {exercise_id} redefined with different concept_ids"
                        ),
                    });
                }
                match (&ex.text, &raw.exercise_text) {
                    (Some(a), Some(b)) if a != b => {
                        return Err(IngestError::MalformedRecord {
                            line: lineno,
                            reason: format!(
                                "exercise {exercise_id} redefined with different exercise_text"
                            ),
                        });
                    }
                    (None, Some(b)) => ex.text = Some(b.clone()),
                    _ => {}
                }
                for (k, v) in names {
                    match ex.concept_names.get(&k) {
                        Some(old) if *old != v => {
                            return Err(IngestError::MalformedRecord {
                                line: lineno,
                                reason: format!(
                                    "exercise {exercise_id} redefined name of concept {k}"
                                ),
                            });
                        }
                        _ => {
                            ex.concept_names.insert(k, v);
                        }
                    }
                }
            }
        }

        let student = StudentId::new(raw.student_id);
        let record = InteractionRecord {
            student: student.clone(),
            exercise: exercise_id,
            correct: raw.correct == 1,
            timestamp: raw.timestamp,
            duration: raw.duration,
        };
        ds.histories
            .entry(student.clone())
            .or_insert_with(|| StudentHistory {
                student,
                records: Vec::new(),
            })
            .records
            .push(record);
    }

    for (sid, hist) in &mut ds.histories {
        let with_ts = hist.records.iter().filter(|r| r.timestamp.is_some()).count();
        if with_ts != 0 && with_ts != hist.records.len() {
            return Err(IngestError::InconsistentTimestamps {
                student: sid.clone(),
            });
        }
        // Stable sort keeps input order among equal timestamps.
        hist.records.sort_by_key(|r| r.timestamp);
    }
    Ok(ds)
}

/// Writes a dataset back to the interaction-log format.
///
/// Exercise metadata is emitted on every record, so reloading the file
/// reproduces the dataset exactly.
pub fn write_interaction_log(dataset: &Dataset, path: &Path) -> Result<(), IngestError> {
    let mut out = fs::File::create(path)?;
    for hist in dataset.histories.values() {
        for rec in &hist.records {
            let ex = dataset.exercises.get(&rec.exercise);
            let mut obj = serde_json::Map::new();
            obj.insert("student_id".into(), rec.student.as_str().into());
            obj.insert("exercise_id".into(), rec.exercise.as_str().into());
            obj.insert("correct".into(), (rec.correct_bit() as u64).into());
            let concepts: Vec<serde_json::Value> = ex
                .map(|e| e.concept_ids.iter().map(|c| c.as_str().into()).collect())
                .unwrap_or_default();
            obj.insert("concept_ids".into(), concepts.into());
            if let Some(ts) = rec.timestamp {
                obj.insert("timestamp".into(), ts.into());
            }
            if let Some(d) = rec.duration {
                obj.insert("duration".into(), d.into());
            }
            if let Some(text) = ex.and_then(|e| e.text.as_ref()) {
                obj.insert("exercise_text".into(), text.as_str().into());
            }
            if let Some(e) = ex {
                if !e.concept_names.is_empty() {
                    let names: serde_json::Map<String, serde_json::Value> = e
                        .concept_names
                        .iter()
                        .map(|(k, v)| (k.as_str().to_string(), v.as_str().into()))
                        .collect();
                    obj.insert("concept_names".into(), names.into());
                }
            }
            writeln!(out, "{}", serde_json::Value::Object(obj))?;
        }
    }
    Ok(())
}
