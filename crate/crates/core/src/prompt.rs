//! Record serialization under a mode view and assembly of the four prompt
//! families: knowledge state analysis (KSA), performance prediction (PP),
//! learning trajectory interpretation (LTI) and learner proficiency
//! explanation (LPE).
//!
//! Templates use `{{slot}}` placeholders and can be overridden per family by
//! dropping `ksa.txt` / `pp.txt` / `lti.txt` / `lpe.txt` into a directory.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{
    DatasetMode, ExerciseId, InteractionRecord, Interpretation, KnowledgeState, ModeView,
    Prediction, PredictionTarget, Shot, StudentId,
};

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("exercise {0} not present in the dataset view")]
    UnknownExercise(ExerciseId),
    #[error("target ground-truth label would be rendered into the prompt")]
    LeakedLabel,
    #[error("template `{template}` has unfilled slot {{{{{slot}}}}}")]
    UnfilledSlot { template: String, slot: String },
    #[error("failed to read template override {path}: {source}")]
    TemplateRead {
        path: String,
        source: std::io::Error,
    },
}

/// Which prompt family a template or rendered prompt belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum TemplateId {
    Ksa,
    Pp,
    Lti,
    Lpe,
}

impl TemplateId {
    pub fn file_name(&self) -> &'static str {
        match self {
            TemplateId::Ksa => "ksa.txt",
            TemplateId::Pp => "pp.txt",
            TemplateId::Lti => "lti.txt",
            TemplateId::Lpe => "lpe.txt",
        }
    }
}

/// A parameterized prompt body for one family under one dataset mode.
#[derive(Debug, Clone)]
pub struct PromptTemplate {
    pub id: TemplateId,
    pub mode: DatasetMode,
    pub body: String,
}

/// A fully rendered prompt. The digest is the cache identity of the text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub template_id: TemplateId,
    pub text: String,
    pub digest: String,
}

impl RenderedPrompt {
    pub fn new(template_id: TemplateId, text: String) -> Self {
        let digest = digest_of(&text);
        Self {
            template_id,
            text,
            digest,
        }
    }

    /// A derived prompt with a format reminder appended, used for the single
    /// re-request after an unparseable completion. The digest changes, so a
    /// cached retry is a distinct entry rather than a replay of the failure.
    pub fn with_reminder(&self, reminder: &str) -> Self {
        Self::new(self.template_id, format!("{}\n\n{}", self.text, reminder))
    }
}

/// Hex-encoded SHA-256 of the prompt text.
pub fn digest_of(text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    let out = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for b in out {
        write!(hex, "{b:02x}").unwrap();
    }
    hex
}

const DEFAULT_KSA: &str = include_str!("../templates/ksa.txt");
const DEFAULT_PP: &str = include_str!("../templates/pp.txt");
const DEFAULT_LTI: &str = include_str!("../templates/lti.txt");
const DEFAULT_LPE: &str = include_str!("../templates/lpe.txt");

/// The four template bodies in use for a run.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    ksa: String,
    pp: String,
    lti: String,
    lpe: String,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self {
            ksa: DEFAULT_KSA.to_string(),
            pp: DEFAULT_PP.to_string(),
            lti: DEFAULT_LTI.to_string(),
            lpe: DEFAULT_LPE.to_string(),
        }
    }
}

impl TemplateSet {
    /// Defaults with per-family overrides from `dir` where present.
    pub fn from_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut set = Self::default();
        for (id, slot) in [
            (TemplateId::Ksa, &mut set.ksa),
            (TemplateId::Pp, &mut set.pp),
            (TemplateId::Lti, &mut set.lti),
            (TemplateId::Lpe, &mut set.lpe),
        ] {
            let path = dir.join(id.file_name());
            if path.exists() {
                *slot = std::fs::read_to_string(&path).map_err(|source| {
                    PromptError::TemplateRead {
                        path: path.display().to_string(),
                        source,
                    }
                })?;
            }
        }
        Ok(set)
    }

    fn body(&self, id: TemplateId) -> &str {
        match id {
            TemplateId::Ksa => &self.ksa,
            TemplateId::Pp => &self.pp,
            TemplateId::Lti => &self.lti,
            TemplateId::Lpe => &self.lpe,
        }
    }

    pub fn template(&self, id: TemplateId, mode: DatasetMode) -> PromptTemplate {
        PromptTemplate {
            id,
            mode,
            body: self.body(id).to_string(),
        }
    }
}

fn fill(id: TemplateId, body: &str, slots: &[(&str, &str)]) -> Result<String, PromptError> {
    let mut text = body.to_string();
    for (name, value) in slots {
        text = text.replace(&format!("{{{{{name}}}}}"), value);
    }
    if let Some(start) = text.find("{{") {
        let rest = &text[start + 2..];
        let slot = rest.split("}}").next().unwrap_or("").to_string();
        return Err(PromptError::UnfilledSlot {
            template: id.file_name().to_string(),
            slot,
        });
    }
    Ok(text)
}

/// Builds prompts for one run: a template set plus the context-window knob.
#[derive(Debug, Clone, Default)]
pub struct Prompter {
    pub templates: TemplateSet,
    /// When set, prompts embed only the most recent N shots (and their states
    /// and interpretations). Unlimited by default.
    pub max_context_shots: Option<usize>,
}

impl Prompter {
    pub fn new(templates: TemplateSet, max_context_shots: Option<usize>) -> Self {
        Self {
            templates,
            max_context_shots,
        }
    }

    fn window_start(&self, len: usize) -> usize {
        match self.max_context_shots {
            Some(w) if w < len => len - w,
            _ => 0,
        }
    }

    /// Renders one record as an indented field block, exposing exactly the
    /// fields the view's mode permits. Field order is fixed: index, exercise,
    /// concepts, concept names, text, correctness, timestamp, duration.
    pub fn render_record(
        &self,
        record: &InteractionRecord,
        view: &ModeView<'_>,
        index: usize,
    ) -> Result<String, PromptError> {
        self.render_fields(
            &record.exercise,
            view,
            index,
            Some(record.correct),
            record.timestamp,
            record.duration,
        )
    }

    /// Renders the target block: same field layout, correctness omitted.
    pub fn render_target(
        &self,
        target: &PredictionTarget,
        view: &ModeView<'_>,
    ) -> Result<String, PromptError> {
        let block = self.render_fields(
            target.exercise(),
            view,
            target.position(),
            None,
            target.timestamp(),
            target.duration(),
        )?;
        ensure_no_label_leak(&block)?;
        Ok(block)
    }

    fn render_fields(
        &self,
        exercise_id: &ExerciseId,
        view: &ModeView<'_>,
        index: usize,
        correct: Option<bool>,
        timestamp: Option<i64>,
        duration: Option<u64>,
    ) -> Result<String, PromptError> {
        let exercise = view
            .exercise(exercise_id)
            .ok_or_else(|| PromptError::UnknownExercise(exercise_id.clone()))?;
        let mut block = String::new();
        writeln!(block, "record {index}:").unwrap();
        writeln!(block, "  exercise: {exercise_id}").unwrap();
        let concepts = exercise
            .concept_ids
            .iter()
            .map(|c| c.as_str())
            .collect::<Vec<_>>()
            .join(", ");
        writeln!(block, "  concepts: {concepts}").unwrap();
        if view.shows_concept_names() && !exercise.concept_names.is_empty() {
            let names = exercise
                .concept_ids
                .iter()
                .filter_map(|c| exercise.concept_names.get(c).map(|n| format!("{c} = {n}")))
                .collect::<Vec<_>>()
                .join("; ");
            if !names.is_empty() {
                writeln!(block, "  concept names: {names}").unwrap();
            }
        }
        if view.shows_text() {
            if let Some(text) = &exercise.text {
                writeln!(block, "  text: {text}").unwrap();
            }
        }
        if let Some(c) = correct {
            writeln!(block, "  correct: {}", c as u8).unwrap();
        }
        if view.shows_timing() {
            if let Some(ts) = timestamp {
                writeln!(block, "  timestamp: {ts}").unwrap();
            }
            if let Some(d) = duration {
                writeln!(block, "  duration: {d}").unwrap();
            }
        }
        Ok(block)
    }

    fn shot_blocks(&self, shots: &[Shot], view: &ModeView<'_>) -> Result<String, PromptError> {
        let blocks = shots
            .iter()
            .map(|s| self.render_record(&s.record, view, s.position))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(blocks.join("\n"))
    }

    fn state_blocks(shots: &[Shot], states: &[KnowledgeState]) -> String {
        shots
            .iter()
            .zip(states)
            .map(|(s, k)| format!("after record {}: {}", s.position, k.summary()))
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn interp_blocks(interps: &[Interpretation]) -> String {
        interps
            .iter()
            .map(|i| format!("record {}: {}", i.record_index, i.text))
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Knowledge state analysis prompt for the latest shot in `shots_prefix`.
    ///
    /// `prior_states[i]` and `prior_interps[i]` belong to `shots_prefix[i]`;
    /// both must have exactly one entry fewer than the prefix.
    pub fn build_ksa_prompt(
        &self,
        shots_prefix: &[Shot],
        prior_states: &[KnowledgeState],
        prior_interps: &[Interpretation],
        view: &ModeView<'_>,
        student: &StudentId,
    ) -> Result<RenderedPrompt, PromptError> {
        debug_assert_eq!(shots_prefix.len(), prior_states.len() + 1);
        debug_assert_eq!(prior_states.len(), prior_interps.len());
        let current = shots_prefix
            .last()
            .expect("KSA prompt requires at least one shot");
        let start = self.window_start(shots_prefix.len());
        let visible = &shots_prefix[start..];
        let visible_prior_states = &prior_states[start.min(prior_states.len())..];
        let visible_prior_interps = &prior_interps[start.min(prior_interps.len())..];

        let mut prior_section = String::new();
        if !visible_prior_states.is_empty() {
            prior_section.push_str("Knowledge state estimates after each earlier record:\n\n");
            prior_section.push_str(&Self::state_blocks(
                &visible[..visible.len() - 1],
                visible_prior_states,
            ));
            prior_section.push_str("\n\nInterpretations of each earlier record:\n\n");
            prior_section.push_str(&Self::interp_blocks(visible_prior_interps));
            prior_section.push_str("\n\n");
        }

        let exercise = view
            .exercise(&current.record.exercise)
            .ok_or_else(|| PromptError::UnknownExercise(current.record.exercise.clone()))?;
        let concepts = exercise
            .concept_ids
            .iter()
            .map(|c| c.as_str())
            .collect::<Vec<_>>()
            .join(", ");

        let text = fill(
            TemplateId::Ksa,
            self.templates.body(TemplateId::Ksa),
            &[
                ("student", student.as_str()),
                ("shot_blocks", &self.shot_blocks(visible, view)?),
                ("prior_section", &prior_section),
                ("index", &current.position.to_string()),
                ("concepts", &concepts),
            ],
        )?;
        Ok(RenderedPrompt::new(TemplateId::Ksa, text))
    }

    /// Performance prediction prompt. The target's ground-truth label is never
    /// rendered; this is enforced by a scan of the target block.
    pub fn build_pp_prompt(
        &self,
        shots: &[Shot],
        states: &[KnowledgeState],
        interps: &[Interpretation],
        target: &PredictionTarget,
        view: &ModeView<'_>,
    ) -> Result<RenderedPrompt, PromptError> {
        debug_assert_eq!(shots.len(), states.len());
        debug_assert_eq!(shots.len(), interps.len());
        let start = self.window_start(shots.len());
        let visible = &shots[start..];
        let text = fill(
            TemplateId::Pp,
            self.templates.body(TemplateId::Pp),
            &[
                ("student", target.student().as_str()),
                ("shot_blocks", &self.shot_blocks(visible, view)?),
                ("state_blocks", &Self::state_blocks(visible, &states[start..])),
                ("interp_blocks", &Self::interp_blocks(&interps[start..])),
                ("target_block", &self.render_target(target, view)?),
            ],
        )?;
        Ok(RenderedPrompt::new(TemplateId::Pp, text))
    }

    /// Trajectory interpretation prompt for one shot whose state was just
    /// estimated.
    pub fn build_lti_prompt(
        &self,
        shot: &Shot,
        state: &KnowledgeState,
        prior_interps: &[Interpretation],
        view: &ModeView<'_>,
        student: &StudentId,
    ) -> Result<RenderedPrompt, PromptError> {
        let start = self.window_start(prior_interps.len() + 1);
        let visible_interps = &prior_interps[start.min(prior_interps.len())..];
        let mut prior_section = String::new();
        if !visible_interps.is_empty() {
            prior_section.push_str("Interpretations of earlier records:\n\n");
            prior_section.push_str(&Self::interp_blocks(visible_interps));
            prior_section.push_str("\n\n");
        }
        let state_block = format!("after record {}: {}", shot.position, state.summary());
        let text = fill(
            TemplateId::Lti,
            self.templates.body(TemplateId::Lti),
            &[
                ("student", student.as_str()),
                ("shot_block", &self.render_record(&shot.record, view, shot.position)?),
                ("state_block", &state_block),
                ("prior_section", &prior_section),
            ],
        )?;
        Ok(RenderedPrompt::new(TemplateId::Lti, text))
    }

    /// Proficiency explanation prompt. Embeds the predicted value only; the
    /// prediction's source (parsed vs fallback) is deliberately not leaked.
    pub fn build_lpe_prompt(
        &self,
        shots: &[Shot],
        states: &[KnowledgeState],
        interps: &[Interpretation],
        target: &PredictionTarget,
        prediction: &Prediction,
        view: &ModeView<'_>,
    ) -> Result<RenderedPrompt, PromptError> {
        let start = self.window_start(shots.len());
        let visible = &shots[start..];
        let text = fill(
            TemplateId::Lpe,
            self.templates.body(TemplateId::Lpe),
            &[
                ("student", target.student().as_str()),
                ("shot_blocks", &self.shot_blocks(visible, view)?),
                ("state_blocks", &Self::state_blocks(visible, &states[start..])),
                ("interp_blocks", &Self::interp_blocks(&interps[start..])),
                ("target_block", &self.render_target(target, view)?),
                ("prediction", &prediction.value_bit().to_string()),
            ],
        )?;
        Ok(RenderedPrompt::new(TemplateId::Lpe, text))
    }
}

/// Guards the target block against accidental inclusion of the held-out
/// label: any `correct:` field in it is a leak.
pub fn ensure_no_label_leak(target_block: &str) -> Result<(), PromptError> {
    if target_block
        .lines()
        .any(|l| l.trim_start().starts_with("correct:"))
    {
        return Err(PromptError::LeakedLabel);
    }
    Ok(())
}
