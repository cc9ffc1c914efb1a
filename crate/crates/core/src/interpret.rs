//! Learner proficiency explanation and the per-student report document.

use serde::{Deserialize, Serialize};

use crate::cognition::{GenProfile, PipelineError, TraceState};
use crate::llm::{GenerationRequest, Provider};
use crate::model::{
    ConceptId, Explanation, MasteryLevel, ModeView, Prediction, PredictionSource,
    PredictionTarget, Shot, StudentId,
};
use crate::prompt::Prompter;

const DEGRADED_PLACEHOLDER: &str =
    "(explanation unavailable: the provider returned empty completions)";

/// Requests an explanation of the prediction grounded in the trace.
///
/// An empty completion is retried once; a second empty completion yields a
/// placeholder explanation flagged degraded. The run never aborts over a
/// missing explanation.
#[allow(clippy::too_many_arguments)]
pub fn explain_prediction(
    provider: &dyn Provider,
    prompter: &Prompter,
    shots: &[Shot],
    trace: &mut TraceState,
    target: &PredictionTarget,
    prediction: &Prediction,
    view: &ModeView<'_>,
    profile: &GenProfile,
) -> Result<Explanation, PipelineError> {
    let prompt =
        prompter.build_lpe_prompt(shots, &trace.states, &trace.interps, target, prediction, view)?;
    let mut attempt = prompt.clone();
    for retry in 0..2 {
        trace.calls += 1;
        trace.transcripts.push(attempt.digest.clone());
        let out = provider.complete(&GenerationRequest::new(
            attempt.clone(),
            profile.narrative.clone(),
        ))?;
        if !out.text.trim().is_empty() {
            return Ok(Explanation {
                text: out.text.trim().to_string(),
                degraded: false,
            });
        }
        if retry == 0 {
            attempt = prompt.with_reminder("Reminder: output a short explanatory paragraph.");
        }
    }
    Ok(Explanation {
        text: DEGRADED_PLACEHOLDER.to_string(),
        degraded: true,
    })
}

/// One shot row of a report: the record, its interpretation, and whether its
/// mastery labels had to be carried forward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotRow {
    pub position: usize,
    pub exercise: String,
    pub correct: u8,
    pub interpretation: String,
    pub mastery_carried_forward: bool,
}

/// One prediction row: outcome, provenance and ground truth side by side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub position: usize,
    pub exercise: String,
    pub predicted: u8,
    pub source: PredictionSource,
    pub ground_truth: u8,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub explanation: Option<Explanation>,
}

/// Human-readable summary of one student's run: interpreted shots, the final
/// mastery table, and every prediction with its explanation and ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentReport {
    pub student: String,
    pub shots: Vec<ShotRow>,
    pub final_state: std::collections::BTreeMap<ConceptId, MasteryLevel>,
    pub predictions: Vec<PredictionRow>,
}

/// Packs a student's shots, trace, predictions and optional explanations into
/// a report. `explanations` is either empty (explanations disabled) or has one
/// entry per prediction.
pub fn assemble_student_report(
    student: &StudentId,
    shots: &[Shot],
    trace: &TraceState,
    targets: &[PredictionTarget],
    predictions: &[Prediction],
    explanations: &[Explanation],
) -> StudentReport {
    debug_assert_eq!(targets.len(), predictions.len());
    debug_assert!(explanations.is_empty() || explanations.len() == predictions.len());
    let shot_rows = shots
        .iter()
        .enumerate()
        .map(|(i, shot)| ShotRow {
            position: shot.position,
            exercise: shot.record.exercise.to_string(),
            correct: shot.record.correct_bit(),
            interpretation: trace
                .interps
                .get(i)
                .map(|it| it.text.clone())
                .unwrap_or_default(),
            mastery_carried_forward: trace.carried.get(i).copied().unwrap_or(false),
        })
        .collect();
    let prediction_rows = targets
        .iter()
        .zip(predictions)
        .enumerate()
        .map(|(i, (target, prediction))| PredictionRow {
            position: target.position(),
            exercise: target.exercise().to_string(),
            predicted: prediction.value_bit(),
            source: prediction.source,
            ground_truth: target.ground_truth() as u8,
            explanation: explanations.get(i).cloned(),
        })
        .collect();
    StudentReport {
        student: student.to_string(),
        shots: shot_rows,
        final_state: trace.final_state().per_concept,
        predictions: prediction_rows,
    }
}

impl StudentReport {
    /// Markdown rendering, one table per section. The explanation column is
    /// omitted entirely when explanations were disabled.
    pub fn to_markdown(&self) -> String {
        let mut md = String::new();
        md.push_str(&format!("# Student {}\n\n", self.student));

        md.push_str("## Shots\n\n");
        md.push_str("| record | exercise | correct | carried | interpretation |\n");
        md.push_str("|---|---|---|---|---|\n");
        for s in &self.shots {
            md.push_str(&format!(
                "| {} | {} | {} | {} | {} |\n",
                s.position,
                s.exercise,
                s.correct,
                if s.mastery_carried_forward { "yes" } else { "" },
                s.interpretation.replace('\n', " ")
            ));
        }

        md.push_str("\n## Final knowledge state\n\n");
        md.push_str("| concept | mastery |\n|---|---|\n");
        for (c, m) in &self.final_state {
            md.push_str(&format!("| {c} | {m} |\n"));
        }

        let with_explanations = self.predictions.iter().any(|p| p.explanation.is_some());
        md.push_str("\n## Predictions\n\n");
        if with_explanations {
            md.push_str("| record | exercise | predicted | source | truth | explanation |\n");
            md.push_str("|---|---|---|---|---|---|\n");
        } else {
            md.push_str("| record | exercise | predicted | source | truth |\n");
            md.push_str("|---|---|---|---|---|\n");
        }
        for p in &self.predictions {
            let source = match p.source {
                PredictionSource::Parsed => "parsed",
                PredictionSource::Fallback => "fallback",
            };
            if with_explanations {
                let expl = p
                    .explanation
                    .as_ref()
                    .map(|e| {
                        let mut text = e.text.replace('\n', " ");
                        if e.degraded {
                            text.push_str(" [degraded]");
                        }
                        text
                    })
                    .unwrap_or_default();
                md.push_str(&format!(
                    "| {} | {} | {} | {} | {} | {} |\n",
                    p.position, p.exercise, p.predicted, source, p.ground_truth, expl
                ));
            } else {
                md.push_str(&format!(
                    "| {} | {} | {} | {} | {} |\n",
                    p.position, p.exercise, p.predicted, source, p.ground_truth
                ));
            }
        }
        md
    }
}
