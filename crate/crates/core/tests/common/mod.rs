//! Shared fixtures for the integration suites.

use std::path::PathBuf;
use std::sync::Arc;

use fskt_core::cognition::{analyze_shots, GenProfile, TraceState};
use fskt_core::ingest::load_frcsub;
use fskt_core::llm::OracleProvider;
use fskt_core::model::{
    project_mode, ConceptId, Dataset, DatasetMode, Exercise, ExerciseId, InteractionRecord,
    Prediction, PredictionSource, PredictionTarget, Shot, StudentHistory, StudentId,
};
use fskt_core::prompt::Prompter;

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

pub fn load_frcsub_sample() -> Dataset {
    let dir = data_dir().join("frcsub");
    load_frcsub(&dir.join("data.txt"), &dir.join("q.txt")).expect("bundled sample data loads")
}

/// Small richly-annotated log-style dataset (texts, names, timestamps).
pub fn synthlog_dataset() -> Dataset {
    let mut ds = Dataset::default();
    let concepts = [
        ("k_frac", "Fraction arithmetic"),
        ("k_dec", "Decimal conversion"),
        ("k_ratio", "Ratios and proportions"),
    ];
    for (c, _) in concepts {
        ds.concepts.insert(ConceptId::new(c));
    }
    let exercises = [
        ("q1", vec!["k_frac"], "Compute 3/4 - 1/2."),
        ("q2", vec!["k_frac", "k_dec"], "Write 5/8 as a decimal."),
        ("q3", vec!["k_ratio"], "A recipe uses 2 cups flour for 3 cups milk. How much flour for 9 cups milk?"),
        ("q4", vec!["k_dec", "k_ratio"], "Express the ratio 0.25 : 1 as a fraction."),
    ];
    for (id, cs, text) in exercises {
        let mut ex = Exercise::new(
            ExerciseId::new(id),
            cs.iter().map(|c| ConceptId::new(*c)).collect(),
        );
        ex.text = Some(text.to_string());
        for c in cs {
            let name = concepts.iter().find(|(k, _)| k == &c).unwrap().1;
            ex.concept_names.insert(ConceptId::new(c), name.to_string());
        }
        ds.exercises.insert(ex.id.clone(), ex);
    }
    let student = StudentId::new("u42");
    let attempts = [
        ("q1", true, 1_700_000_000, 35),
        ("q2", false, 1_700_000_600, 88),
        ("q1", true, 1_700_001_200, 21),
        ("q3", true, 1_700_001_900, 47),
        ("q2", true, 1_700_002_500, 62),
        ("q4", false, 1_700_003_100, 95),
    ];
    let records = attempts
        .iter()
        .map(|(e, correct, ts, dur)| InteractionRecord {
            student: student.clone(),
            exercise: ExerciseId::new(*e),
            correct: *correct,
            timestamp: Some(*ts),
            duration: Some(*dur),
        })
        .collect();
    ds.histories
        .insert(student.clone(), StudentHistory { student, records });
    ds
}

pub fn shots_from_history(ds: &Dataset, student: &str, k: usize) -> Vec<Shot> {
    let history = &ds.histories[&StudentId::new(student)];
    history.records[..k]
        .iter()
        .enumerate()
        .map(|(i, r)| Shot {
            position: i + 1,
            record: r.clone(),
        })
        .collect()
}

pub fn oracle_trace(ds: &Dataset, shots: &[Shot], mode: DatasetMode) -> TraceState {
    let view = project_mode(ds, mode).unwrap();
    let provider = OracleProvider::new(Arc::new(ds.clone()));
    analyze_shots(
        &provider,
        &Prompter::default(),
        shots,
        &view,
        &GenProfile::default(),
    )
    .unwrap()
}

/// The frozen prompt fixtures: (file name, rendered text), all built
/// deterministically from the bundled sample data and the synthetic log.
pub fn golden_prompts() -> Vec<(&'static str, String)> {
    let prompter = Prompter::default();
    let mut out = Vec::new();

    // FrcSub sample, scant mode, first-4 shots for student s1.
    let frcsub = load_frcsub_sample();
    let view = project_mode(&frcsub, DatasetMode::Scant).unwrap();
    let shots = shots_from_history(&frcsub, "s1", 4);
    let student = StudentId::new("s1");
    let trace = oracle_trace(&frcsub, &shots, DatasetMode::Scant);

    let ksa_j2 = prompter
        .build_ksa_prompt(
            &shots[..2],
            &trace.states[..1],
            &trace.interps[..1],
            &view,
            &student,
        )
        .unwrap();
    out.push(("ksa_frcsub_scant_j2.txt", ksa_j2.text));

    let history = &frcsub.histories[&student];
    let target = PredictionTarget::new(history.records[16].clone(), 17);
    let pp = prompter
        .build_pp_prompt(&shots, &trace.states, &trace.interps, &target, &view)
        .unwrap();
    out.push(("pp_frcsub_scant.txt", pp.text));

    let lti_j4 = prompter
        .build_lti_prompt(&shots[3], &trace.states[3], &trace.interps[..3], &view, &student)
        .unwrap();
    out.push(("lti_frcsub_scant_j4.txt", lti_j4.text));

    let prediction = Prediction {
        value: true,
        source: PredictionSource::Parsed,
        raw_text: "1".into(),
    };
    let lpe = prompter
        .build_lpe_prompt(&shots, &trace.states, &trace.interps, &target, &prediction, &view)
        .unwrap();
    out.push(("lpe_frcsub_scant.txt", lpe.text));

    // Synthetic log, sparse and moderate modes.
    let log = synthlog_dataset();
    let log_shots = shots_from_history(&log, "u42", 4);
    let log_history = &log.histories[&StudentId::new("u42")];
    let log_target = PredictionTarget::new(log_history.records[5].clone(), 6);
    for (mode, name) in [
        (DatasetMode::Sparse, "pp_synthlog_sparse.txt"),
        (DatasetMode::Moderate, "pp_synthlog_moderate.txt"),
    ] {
        let view = project_mode(&log, mode).unwrap();
        let trace = oracle_trace(&log, &log_shots, mode);
        let pp = prompter
            .build_pp_prompt(&log_shots, &trace.states, &trace.interps, &log_target, &view)
            .unwrap();
        out.push((name, pp.text));
    }
    out
}
