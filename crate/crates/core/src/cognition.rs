//! The cognition loop: sequential knowledge state analysis over the selected
//! shots (interleaved with trajectory interpretation), then performance
//! prediction on the target with a retry-then-seeded-random fallback.
//!
//! Per shot j the engine issues a KSA completion, parses ternary mastery
//! labels for the shot's concepts, then issues an LTI completion whose output
//! feeds later prompts. Earlier states and interpretations are embedded in
//! later prompts, so the loop is strictly sequential within one student.

use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use thiserror::Error;

use crate::llm::{GenParams, GenerationRequest, Provider, ProviderError};
use crate::model::{
    ConceptId, Interpretation, KnowledgeState, MasteryLevel, ModeView, Prediction,
    PredictionSource, PredictionTarget, Shot, StudentId,
};
use crate::prompt::{PromptError, Prompter, RenderedPrompt};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("cannot run cognition without shots")]
    NoShots,
}

/// Decoding parameter pair: deterministic analysis calls (KSA, PP) versus
/// narrative calls (LTI, LPE) where some temperature is acceptable.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GenProfile {
    pub analysis: GenParams,
    pub narrative: GenParams,
}

impl Default for GenProfile {
    fn default() -> Self {
        Self {
            analysis: GenParams {
                temperature: 0.0,
                ..GenParams::default()
            },
            narrative: GenParams {
                temperature: 0.7,
                ..GenParams::default()
            },
        }
    }
}

impl GenProfile {
    pub fn for_model(model_id: &str, max_tokens: u32, narrative_temperature: f64) -> Self {
        Self {
            analysis: GenParams {
                model_id: model_id.to_string(),
                temperature: 0.0,
                max_tokens,
            },
            narrative: GenParams {
                model_id: model_id.to_string(),
                temperature: narrative_temperature,
                max_tokens,
            },
        }
    }
}

/// Accumulated per-student trace: one cumulative knowledge state and one
/// interpretation per processed shot, plus transcript digests and the number
/// of completions issued.
#[derive(Debug, Clone, Default)]
pub struct TraceState {
    pub states: Vec<KnowledgeState>,
    pub interps: Vec<Interpretation>,
    /// True at position j when the mastery labels for shot j failed to parse
    /// twice and the previous state was carried forward.
    pub carried: Vec<bool>,
    /// Digests of every prompt issued, in order.
    pub transcripts: Vec<String>,
    /// Completions requested so far (including retries).
    pub calls: u64,
}

impl TraceState {
    pub fn final_state(&self) -> KnowledgeState {
        self.states.last().cloned().unwrap_or_default()
    }

    pub fn carried_count(&self) -> usize {
        self.carried.iter().filter(|&&c| c).count()
    }
}

/// Structured mastery-parse failure listing the concepts that could not be
/// matched to exactly one label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MasteryParseFailure {
    pub unmatched: Vec<ConceptId>,
}

/// Parses per-concept ternary labels out of a completion.
///
/// Accepts one `concept: level` assignment per line, matching concepts
/// case-insensitively and tolerating bullets and trailing punctuation. Every
/// expected concept must resolve to exactly one distinct level.
pub fn parse_mastery(
    text: &str,
    expected_concepts: &[ConceptId],
) -> Result<KnowledgeState, MasteryParseFailure> {
    let mut seen: BTreeMap<String, Vec<MasteryLevel>> = BTreeMap::new();
    for line in text.lines() {
        let line = line.trim().trim_start_matches(['-', '*', '>']).trim();
        let Some((lhs, rhs)) = line.split_once(':') else {
            continue;
        };
        let concept = lhs.trim().trim_matches('`').to_ascii_lowercase();
        let mut labels: Vec<MasteryLevel> = Vec::new();
        for word in rhs.split(|c: char| !c.is_ascii_alphanumeric()) {
            if let Some(level) = MasteryLevel::parse(word) {
                labels.push(level);
            }
        }
        labels.dedup();
        if labels.len() == 1 {
            seen.entry(concept).or_default().push(labels[0]);
        }
    }

    let mut state = KnowledgeState::new();
    let mut unmatched = Vec::new();
    for concept in expected_concepts {
        let labels = seen.get(&concept.as_str().to_ascii_lowercase());
        match labels {
            Some(ls) => {
                let mut distinct = ls.clone();
                distinct.sort_unstable();
                distinct.dedup();
                if distinct.len() == 1 {
                    state.set(concept.clone(), distinct[0]);
                } else {
                    unmatched.push(concept.clone());
                }
            }
            None => unmatched.push(concept.clone()),
        }
    }
    if unmatched.is_empty() {
        Ok(state)
    } else {
        Err(MasteryParseFailure { unmatched })
    }
}

/// Parses a binary prediction: succeeds iff exactly one standalone `0` or `1`
/// token occurs in the text. Digits embedded in larger numbers, words, or
/// decimals do not count; two binary tokens are ambiguous.
pub fn parse_binary(text: &str) -> Option<bool> {
    let bytes = text.as_bytes();
    let mut found: Option<bool> = None;
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i].is_ascii_alphanumeric() {
            let start = i;
            while i < bytes.len() && bytes[i].is_ascii_alphanumeric() {
                i += 1;
            }
            let token = &text[start..i];
            if token == "0" || token == "1" {
                let fractional_part = start >= 2
                    && bytes[start - 1] == b'.'
                    && bytes[start - 2].is_ascii_digit();
                let integer_of_decimal =
                    i + 1 < bytes.len() && bytes[i] == b'.' && bytes[i + 1].is_ascii_digit();
                if !fractional_part && !integer_of_decimal {
                    if found.is_some() {
                        return None;
                    }
                    found = Some(token == "1");
                }
            }
        } else {
            i += 1;
        }
    }
    found
}

fn mastery_reminder(concepts: &[ConceptId]) -> String {
    let list = concepts
        .iter()
        .map(|c| c.as_str())
        .collect::<Vec<_>>()
        .join(", ");
    format!(
        "Reminder: answer with exactly one line per concept, in the format `<concept>: <level>`, \
         where <level> is one of good, fair, fail. Concepts: {list}. Output only these lines."
    )
}

const BINARY_REMINDER: &str =
    "Reminder: respond with exactly one number, 0 or 1, and nothing else.";

const INTERPRETATION_PLACEHOLDER: &str = "(no interpretation provided)";

fn issue(
    provider: &dyn Provider,
    trace: &mut TraceState,
    prompt: &RenderedPrompt,
    params: &GenParams,
) -> Result<String, PipelineError> {
    trace.calls += 1;
    trace.transcripts.push(prompt.digest.clone());
    let out = provider.complete(&GenerationRequest::new(prompt.clone(), params.clone()))?;
    Ok(out.text)
}

/// Runs the KSA -> LTI chain over all shots, in order.
///
/// Mastery parses get one re-request with a format reminder; after that the
/// previous state is carried forward and the step is flagged. Interpretation
/// completions that come back empty get one re-request, then a placeholder.
pub fn analyze_shots(
    provider: &dyn Provider,
    prompter: &Prompter,
    shots: &[Shot],
    view: &ModeView<'_>,
    profile: &GenProfile,
) -> Result<TraceState, PipelineError> {
    if shots.is_empty() {
        return Err(PipelineError::NoShots);
    }
    let student = shots[0].record.student.clone();
    let mut trace = TraceState::default();

    for j in 0..shots.len() {
        let prefix = &shots[..=j];
        let shot = &shots[j];
        let expected = view
            .exercise(&shot.record.exercise)
            .ok_or_else(|| PromptError::UnknownExercise(shot.record.exercise.clone()))?
            .concept_ids
            .clone();

        let prompt =
            prompter.build_ksa_prompt(prefix, &trace.states, &trace.interps, view, &student)?;
        let text = issue(provider, &mut trace, &prompt, &profile.analysis)?;
        let (parsed, carried) = match parse_mastery(&text, &expected) {
            Ok(state) => (state, false),
            Err(_) => {
                let retry = prompt.with_reminder(&mastery_reminder(&expected));
                let text = issue(provider, &mut trace, &retry, &profile.analysis)?;
                match parse_mastery(&text, &expected) {
                    Ok(state) => (state, false),
                    Err(_) => (KnowledgeState::new(), true),
                }
            }
        };
        let mut state = trace.states.last().cloned().unwrap_or_default();
        for (concept, level) in parsed.per_concept {
            state.set(concept, level);
        }
        trace.states.push(state);
        trace.carried.push(carried);

        let lti = prompter.build_lti_prompt(
            shot,
            trace.states.last().unwrap(),
            &trace.interps,
            view,
            &student,
        )?;
        let mut interp_text = issue(provider, &mut trace, &lti, &profile.narrative)?;
        if interp_text.trim().is_empty() {
            let retry = lti.with_reminder("Reminder: output one or two sentences of interpretation.");
            interp_text = issue(provider, &mut trace, &retry, &profile.narrative)?;
        }
        let interp_text = if interp_text.trim().is_empty() {
            INTERPRETATION_PLACEHOLDER.to_string()
        } else {
            interp_text.trim().to_string()
        };
        trace.interps.push(Interpretation {
            record_index: shot.position,
            text: interp_text,
        });
    }
    Ok(trace)
}

/// Predicts the target given a completed trace.
///
/// Parse failure triggers one re-request with a format reminder; a second
/// failure yields a seeded uniform random bit flagged as fallback.
#[allow(clippy::too_many_arguments)]
pub fn predict_performance(
    provider: &dyn Provider,
    prompter: &Prompter,
    trace: &mut TraceState,
    shots: &[Shot],
    target: &PredictionTarget,
    view: &ModeView<'_>,
    profile: &GenProfile,
    rng_seed: u64,
) -> Result<Prediction, PipelineError> {
    let prompt = prompter.build_pp_prompt(shots, &trace.states, &trace.interps, target, view)?;
    let text = issue(provider, trace, &prompt, &profile.analysis)?;
    if let Some(value) = parse_binary(&text) {
        return Ok(Prediction {
            value,
            source: PredictionSource::Parsed,
            raw_text: text,
        });
    }
    let retry = prompt.with_reminder(BINARY_REMINDER);
    let text = issue(provider, trace, &retry, &profile.analysis)?;
    if let Some(value) = parse_binary(&text) {
        return Ok(Prediction {
            value,
            source: PredictionSource::Parsed,
            raw_text: text,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    Ok(Prediction {
        value: rng.next_u32() & 1 == 1,
        source: PredictionSource::Fallback,
        raw_text: text,
    })
}

/// Full per-target chain: trace the shots, then predict the target.
/// With a well-behaved provider this issues exactly `2 * shots + 1`
/// completions.
#[allow(clippy::too_many_arguments)]
pub fn trace_and_predict(
    provider: &dyn Provider,
    prompter: &Prompter,
    shots: &[Shot],
    target: &PredictionTarget,
    view: &ModeView<'_>,
    profile: &GenProfile,
    rng_seed: u64,
) -> Result<(TraceState, Prediction), PipelineError> {
    let mut trace = analyze_shots(provider, prompter, shots, view, profile)?;
    let prediction = predict_performance(
        provider, prompter, &mut trace, shots, target, view, profile, rng_seed,
    )?;
    Ok((trace, prediction))
}

/// Convenience used by the engine and by the oracle-based tests.
pub fn student_of(shots: &[Shot]) -> Option<&StudentId> {
    shots.first().map(|s| &s.record.student)
}
