//! Deterministic providers used for testing and offline runs.

use std::collections::VecDeque;
use std::sync::Arc;
use std::sync::Mutex;

use crate::model::{Dataset, MasteryLevel, StudentId};
use crate::prompt::TemplateId;

use super::{GenerationOutput, GenerationRequest, Provider, ProviderError};

/// Scripted provider: pops queued responses in order, then falls back to a
/// default response if one is set, otherwise errors.
pub struct MockProvider {
    script: Mutex<VecDeque<String>>,
    default: Option<String>,
    served: Mutex<usize>,
}

impl MockProvider {
    pub fn scripted(responses: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self {
            script: Mutex::new(responses.into_iter().map(Into::into).collect()),
            default: None,
            served: Mutex::new(0),
        }
    }

    /// Responds to every request with the same text.
    pub fn always(text: impl Into<String>) -> Self {
        Self {
            script: Mutex::new(VecDeque::new()),
            default: Some(text.into()),
            served: Mutex::new(0),
        }
    }

    /// Scripted responses first, then `default` forever.
    pub fn scripted_then(
        responses: impl IntoIterator<Item = impl Into<String>>,
        default: impl Into<String>,
    ) -> Self {
        Self {
            script: Mutex::new(responses.into_iter().map(Into::into).collect()),
            default: Some(default.into()),
            served: Mutex::new(0),
        }
    }
}

impl Provider for MockProvider {
    fn complete(&self, _request: &GenerationRequest) -> Result<GenerationOutput, ProviderError> {
        let mut served = self.served.lock().unwrap();
        let next = self.script.lock().unwrap().pop_front();
        match next.or_else(|| self.default.clone()) {
            Some(text) => {
                *served += 1;
                Ok(GenerationOutput::text(text, self.id()))
            }
            None => Err(ProviderError::ScriptExhausted { served: *served }),
        }
    }

    fn id(&self) -> &str {
        "mock"
    }
}

fn parse_line_after<'a>(text: &'a str, marker: &str) -> Option<&'a str> {
    text.lines()
        .find_map(|l| l.trim().strip_prefix(marker))
        .map(str::trim)
}

/// Record blocks found in a prompt: position, concept list, correctness.
struct ParsedBlock {
    position: usize,
    concepts: Vec<String>,
    correct: Option<bool>,
}

fn parse_blocks(text: &str) -> Vec<ParsedBlock> {
    let mut blocks: Vec<ParsedBlock> = Vec::new();
    for line in text.lines() {
        let t = line.trim();
        if let Some(rest) = t.strip_prefix("record ") {
            if let Some(num) = rest.strip_suffix(':') {
                if let Ok(position) = num.trim().parse::<usize>() {
                    blocks.push(ParsedBlock {
                        position,
                        concepts: Vec::new(),
                        correct: None,
                    });
                    continue;
                }
            }
        }
        if let Some(block) = blocks.last_mut() {
            if let Some(cs) = t.strip_prefix("concepts:") {
                block.concepts = cs.split(',').map(|c| c.trim().to_string()).collect();
            } else if let Some(c) = t.strip_prefix("correct:") {
                block.correct = match c.trim() {
                    "1" => Some(true),
                    "0" => Some(false),
                    _ => None,
                };
            }
        }
    }
    blocks
}

/// Format-correct canned provider for offline runs: labels every requested
/// concept `fair`, predicts `1`, and answers interpretation and explanation
/// prompts with fixed boilerplate. Never sees ground truth.
pub struct FormatMockProvider;

impl Provider for FormatMockProvider {
    fn complete(&self, request: &GenerationRequest) -> Result<GenerationOutput, ProviderError> {
        let text = &request.prompt.text;
        let answer = match request.prompt.template_id {
            TemplateId::Ksa => {
                let concepts = parse_line_after(text, "Concepts to assess:").unwrap_or("");
                concepts
                    .split(',')
                    .map(|c| format!("{}: fair", c.trim()))
                    .collect::<Vec<_>>()
                    .join("\n")
            }
            TemplateId::Pp => "1".to_string(),
            TemplateId::Lti => "The student is practicing steadily; nothing unusual stands out.".to_string(),
            TemplateId::Lpe => {
                "The predicted outcome follows the overall trend of the practice records.".to_string()
            }
        };
        Ok(GenerationOutput::text(answer, self.id()))
    }

    fn id(&self) -> &str {
        "format-mock"
    }
}

/// Test double that answers from ground truth, for validating pipeline
/// plumbing end to end:
///
/// - PP prompts: the target's true label, looked up by the student id and the
///   target's record position;
/// - KSA prompts: per-concept labels from the running correctness ratio over
///   the records embedded in the prompt (good at >= 2/3, fail at <= 1/3,
///   fair in between);
/// - LTI/LPE prompts: fixed boilerplate.
///
/// Assumes the default prompt templates; custom templates that drop the
/// `student:` / `record N:` / `Concepts to assess:` markers break it.
pub struct OracleProvider {
    dataset: Arc<Dataset>,
    invert: bool,
}

impl OracleProvider {
    pub fn new(dataset: Arc<Dataset>) -> Self {
        Self {
            dataset,
            invert: false,
        }
    }

    /// Anti-oracle: answers prediction prompts with the negated true label.
    pub fn inverted(dataset: Arc<Dataset>) -> Self {
        Self {
            dataset,
            invert: true,
        }
    }

    fn true_label(&self, text: &str) -> Result<bool, ProviderError> {
        let student = parse_line_after(text, "student:")
            .ok_or_else(|| ProviderError::MalformedResponse("prompt lacks student line".into()))?;
        let target_section = text.split("Exercise to predict:").nth(1).ok_or_else(|| {
            ProviderError::MalformedResponse("prompt lacks target section".into())
        })?;
        let position = parse_blocks(target_section)
            .first()
            .map(|b| b.position)
            .ok_or_else(|| {
                ProviderError::MalformedResponse("target section lacks record block".into())
            })?;
        let history = self
            .dataset
            .histories
            .get(&StudentId::new(student))
            .ok_or_else(|| {
                ProviderError::MalformedResponse(format!("unknown student {student}"))
            })?;
        let record = history.records.get(position - 1).ok_or_else(|| {
            ProviderError::MalformedResponse(format!(
                "student {student} has no record at position {position}"
            ))
        })?;
        Ok(record.correct)
    }

    fn mastery_labels(text: &str) -> String {
        let expected: Vec<String> = parse_line_after(text, "Concepts to assess:")
            .unwrap_or("")
            .split(',')
            .map(|c| c.trim().to_string())
            .filter(|c| !c.is_empty())
            .collect();
        let blocks = parse_blocks(text);
        expected
            .iter()
            .map(|concept| {
                let (mut correct, mut total) = (0usize, 0usize);
                for b in &blocks {
                    if b.concepts.iter().any(|c| c == concept) {
                        if let Some(ok) = b.correct {
                            total += 1;
                            correct += ok as usize;
                        }
                    }
                }
                let level = if total == 0 {
                    MasteryLevel::Fair
                } else {
                    let ratio = correct as f64 / total as f64;
                    if ratio >= 2.0 / 3.0 {
                        MasteryLevel::Good
                    } else if ratio <= 1.0 / 3.0 {
                        MasteryLevel::Fail
                    } else {
                        MasteryLevel::Fair
                    }
                };
                format!("{concept}: {level}")
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Mastery label the oracle assigns for a given correct/total ratio.
    pub fn ratio_label(correct: usize, total: usize) -> MasteryLevel {
        if total == 0 {
            return MasteryLevel::Fair;
        }
        let ratio = correct as f64 / total as f64;
        if ratio >= 2.0 / 3.0 {
            MasteryLevel::Good
        } else if ratio <= 1.0 / 3.0 {
            MasteryLevel::Fail
        } else {
            MasteryLevel::Fair
        }
    }
}

impl Provider for OracleProvider {
    fn complete(&self, request: &GenerationRequest) -> Result<GenerationOutput, ProviderError> {
        let text = &request.prompt.text;
        let answer = match request.prompt.template_id {
            TemplateId::Pp => {
                let label = self.true_label(text)? ^ self.invert;
                (label as u8).to_string()
            }
            TemplateId::Ksa => Self::mastery_labels(text),
            TemplateId::Lti => "Consistent with the estimated knowledge state.".to_string(),
            TemplateId::Lpe => "The prediction follows from the mastery trajectory.".to_string(),
        };
        Ok(GenerationOutput::text(answer, self.id()))
    }

    fn id(&self) -> &str {
        if self.invert {
            "anti-oracle"
        } else {
            "oracle"
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::GenParams;
    use crate::model::{ConceptId, Exercise, ExerciseId, InteractionRecord, StudentHistory};
    use crate::prompt::RenderedPrompt;

    fn req(id: TemplateId, text: &str) -> GenerationRequest {
        GenerationRequest::new(RenderedPrompt::new(id, text.to_string()), GenParams::default())
    }

    #[test]
    fn scripted_mock_pops_in_order() {
        let p = MockProvider::scripted(["0", "1"]);
        assert_eq!(p.complete(&req(TemplateId::Pp, "q")).unwrap().text, "0");
        assert_eq!(p.complete(&req(TemplateId::Pp, "q")).unwrap().text, "1");
        assert!(matches!(
            p.complete(&req(TemplateId::Pp, "q")),
            Err(ProviderError::ScriptExhausted { served: 2 })
        ));
    }

    fn oracle_dataset() -> Arc<Dataset> {
        let mut ds = Dataset::default();
        ds.concepts.insert(ConceptId::new("c1"));
        ds.exercises.insert(
            ExerciseId::new("e1"),
            Exercise::new(ExerciseId::new("e1"), vec![ConceptId::new("c1")]),
        );
        let student = StudentId::new("s1");
        let records = vec![true, false, true]
            .into_iter()
            .map(|correct| InteractionRecord {
                student: student.clone(),
                exercise: ExerciseId::new("e1"),
                correct,
                timestamp: None,
                duration: None,
            })
            .collect();
        ds.histories.insert(
            student.clone(),
            StudentHistory { student, records },
        );
        Arc::new(ds)
    }

    #[test]
    fn oracle_answers_pp_with_true_label() {
        let oracle = OracleProvider::new(oracle_dataset());
        let prompt = "student: s1\n\nExercise to predict:\n\nrecord 2:\n  exercise: e1\n";
        let out = oracle.complete(&req(TemplateId::Pp, prompt)).unwrap();
        assert_eq!(out.text, "0"); // record 2 of s1 is incorrect
        let anti = OracleProvider::inverted(oracle_dataset());
        assert_eq!(anti.complete(&req(TemplateId::Pp, prompt)).unwrap().text, "1");
    }

    #[test]
    fn oracle_ksa_ratio_thresholds() {
        // 3/3 correct -> good.
        let prompt = "student: s1\nrecord 1:\n  concepts: c1\n  correct: 1\nrecord 2:\n  concepts: c1\n  correct: 1\nrecord 3:\n  concepts: c1\n  correct: 1\nConcepts to assess: c1\n";
        let oracle = OracleProvider::new(oracle_dataset());
        assert_eq!(
            oracle.complete(&req(TemplateId::Ksa, prompt)).unwrap().text,
            "c1: good"
        );
        // 1/2 correct has ratio 0.5, between the thresholds -> fair.
        let prompt = "record 1:\n  concepts: c1\n  correct: 1\nrecord 2:\n  concepts: c1\n  correct: 0\nConcepts to assess: c1\n";
        assert_eq!(
            oracle.complete(&req(TemplateId::Ksa, prompt)).unwrap().text,
            "c1: fair"
        );
        assert_eq!(OracleProvider::ratio_label(1, 2), MasteryLevel::Fair);
        assert_eq!(OracleProvider::ratio_label(1, 3), MasteryLevel::Fail);
        assert_eq!(OracleProvider::ratio_label(2, 3), MasteryLevel::Good);
    }

    #[test]
    fn format_mock_labels_every_concept() {
        let prompt = "stuff\nConcepts to assess: c1, c2\n";
        let out = FormatMockProvider
            .complete(&req(TemplateId::Ksa, prompt))
            .unwrap();
        assert_eq!(out.text, "c1: fair\nc2: fair");
        let out = FormatMockProvider.complete(&req(TemplateId::Pp, "q")).unwrap();
        assert_eq!(out.text, "1");
    }
}
