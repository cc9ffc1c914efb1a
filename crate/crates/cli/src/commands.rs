use std::fmt::Write as _;
use std::sync::Arc;

use anyhow::{anyhow, Context};
use fskt_core::eval::{
    self, BaselineMethod, DatasetFormat, ExperimentConfig, ExperimentResult, SelectKind,
};
use fskt_core::ingest;
use fskt_core::llm::{
    BudgetedProvider, CachedProvider, FormatMockProvider, HttpProvider, MockProvider,
    OracleProvider, Provider, TranscriptCache,
};
use fskt_core::model::{validate_dataset, Dataset, DatasetMode};
use fskt_core::select::list_strategies;

use crate::{BaselineArgs, IngestArgs, ProtocolArgs, ReportArgs, RunArgs};
use crate::{EXIT_BAD_INPUT, EXIT_PROVIDER};

/// Error with the process exit code it should map to.
pub struct CliError {
    source: anyhow::Error,
    code: u8,
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        self.code
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.source)
    }
}

trait IntoCli<T> {
    fn bad_input(self) -> Result<T, CliError>;
    fn provider_failure(self) -> Result<T, CliError>;
}

impl<T, E: Into<anyhow::Error>> IntoCli<T> for Result<T, E> {
    fn bad_input(self) -> Result<T, CliError> {
        self.map_err(|e| CliError {
            source: e.into(),
            code: EXIT_BAD_INPUT,
        })
    }

    fn provider_failure(self) -> Result<T, CliError> {
        self.map_err(|e| CliError {
            source: e.into(),
            code: EXIT_PROVIDER,
        })
    }
}

fn eval_error_code(e: &eval::EvalError) -> u8 {
    match e {
        eval::EvalError::Pipeline(fskt_core::cognition::PipelineError::Provider(_)) => {
            EXIT_PROVIDER
        }
        _ => EXIT_BAD_INPUT,
    }
}

fn load_dataset(config: &ExperimentConfig) -> Result<Dataset, CliError> {
    match config.format {
        DatasetFormat::Frcsub => {
            let q = config
                .q_matrix_path
                .as_ref()
                .ok_or_else(|| anyhow!("frcsub format requires --q-matrix"))
                .bad_input()?;
            ingest::load_frcsub(&config.dataset_path, q)
                .with_context(|| format!("loading {}", config.dataset_path.display()))
                .bad_input()
        }
        DatasetFormat::Log => ingest::load_interaction_log(&config.dataset_path)
            .with_context(|| format!("loading {}", config.dataset_path.display()))
            .bad_input(),
    }
}

fn parse_mode(s: &str) -> Result<DatasetMode, CliError> {
    s.parse::<DatasetMode>().map_err(|e| anyhow!(e)).bad_input()
}

/// Builds the effective config: `base`, then config-file values, then flags.
fn effective_config(
    base: ExperimentConfig,
    args: &ProtocolArgs,
    allow_config_file: bool,
) -> Result<ExperimentConfig, CliError> {
    let mut cfg = base;
    if let Some(path) = &args.config {
        if !allow_config_file {
            return Err(anyhow!("--config cannot be combined with --reference"))
                .bad_input();
        }
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))
            .bad_input()?;
        cfg = toml::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))
            .bad_input()?;
    }
    if let Some(p) = &args.dataset {
        cfg.dataset_path = p.clone();
    }
    if let Some(p) = &args.q_matrix {
        cfg.q_matrix_path = Some(p.clone());
    }
    if let Some(f) = &args.format {
        cfg.format = match f.as_str() {
            "frcsub" => DatasetFormat::Frcsub,
            _ => DatasetFormat::Log,
        };
    }
    if let Some(m) = &args.mode {
        cfg.mode = parse_mode(m)?;
    }
    if let Some(s) = &args.select {
        cfg.select = match s.as_str() {
            "random" => SelectKind::Random,
            _ => SelectKind::First,
        };
    }
    if let Some(k) = args.shots {
        cfg.shots = k;
    }
    if let Some(n) = args.students {
        cfg.n_students = n;
    }
    if let Some(r) = args.repeats {
        cfg.repeats = r;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(f) = args.test_fraction {
        if !(0.0..1.0).contains(&f) || f <= 0.0 {
            return Err(anyhow!("--test-fraction must be in (0, 1)")).bad_input();
        }
        cfg.test_fraction = f;
    }
    Ok(cfg)
}

pub fn ingest(args: IngestArgs) -> Result<(), CliError> {
    let config = ExperimentConfig {
        dataset_path: args.dataset,
        q_matrix_path: args.q_matrix,
        format: if args.format == "frcsub" {
            DatasetFormat::Frcsub
        } else {
            DatasetFormat::Log
        },
        ..ExperimentConfig::default()
    };
    let dataset = load_dataset(&config)?;
    let stats = dataset.stats();
    println!(
        "{} students / {} exercises / {} skills / {} records / avg skills {} / avg records {}",
        stats.students,
        stats.exercises,
        stats.skills,
        stats.records,
        stats.avg_skills_per_exercise,
        stats.avg_records_per_student
    );
    println!(
        "timestamps: {}",
        if stats.has_timestamps { "yes" } else { "no" }
    );
    let violations = validate_dataset(&dataset);
    if violations.is_empty() {
        println!("validation: ok");
        Ok(())
    } else {
        for v in &violations {
            eprintln!("violation: {v:?}");
        }
        Err(anyhow!("{} validation violation(s)", violations.len())).bad_input()
    }
}

fn build_inner_provider(
    kind: &str,
    dataset: &Arc<Dataset>,
) -> Result<Box<dyn Provider>, CliError> {
    match kind {
        "mock" => Ok(Box::new(FormatMockProvider)),
        "oracle" => Ok(Box::new(OracleProvider::new(Arc::clone(dataset)))),
        "http" => {
            let provider = HttpProvider::from_env().provider_failure()?;
            Ok(Box::new(provider))
        }
        other => Err(anyhow!("unknown provider kind `{other}`")).bad_input(),
    }
}

pub fn run(args: RunArgs) -> Result<(), CliError> {
    let mut config = effective_config(ExperimentConfig::default(), &args.protocol, true)?;
    if let Some(kind) = &args.provider {
        config.provider.kind = kind.clone();
    }
    if let Some(model) = &args.model {
        config.provider.model_id = model.clone();
    }
    if let Some(budget) = args.budget_tokens {
        config.provider.budget_tokens = Some(budget);
    }
    if let Some(c) = args.concurrency {
        config.provider.concurrency = c;
    }
    config.explain = args.explain;
    if let Some(dir) = &args.templates {
        config.templates_dir = Some(dir.clone());
    }
    if let Some(w) = args.max_context_shots {
        config.max_context_shots = Some(w);
    }

    let dataset = Arc::new(load_dataset(&config)?);
    let out = &args.protocol.out;
    std::fs::create_dir_all(out).bad_input()?;

    let provider: Box<dyn Provider> = match &args.replay {
        Some(replay_dir) => {
            let cache_path = replay_dir.join("transcripts.jsonl");
            let cache = TranscriptCache::open_replay(&cache_path)
                .with_context(|| format!("opening replay cache {}", cache_path.display()))
                .bad_input()?;
            config.provider.kind = "replay".into();
            Box::new(CachedProvider::<MockProvider>::replay(Arc::new(cache)))
        }
        None => {
            let inner = build_inner_provider(&config.provider.kind, &dataset)?;
            let inner: Box<dyn Provider> = match config.provider.budget_tokens {
                Some(budget) => Box::new(BudgetedProvider::new(inner, budget)),
                None => inner,
            };
            let cache = TranscriptCache::open(&out.join("transcripts.jsonl")).bad_input()?;
            Box::new(CachedProvider::new(Arc::new(cache), inner))
        }
    };

    let run = eval::run_experiment(&dataset, &config, provider.as_ref()).map_err(|e| {
        let code = eval_error_code(&e);
        if code == EXIT_PROVIDER && args.replay.is_none() {
            // Completed transcripts are already on disk; rerunning with the
            // same flags resumes from the cache instead of re-spending tokens.
            eprintln!(
                "note: transcripts so far are preserved in {}; rerun with the same flags to resume from cache",
                out.join("transcripts.jsonl").display()
            );
        }
        CliError {
            code,
            source: e.into(),
        }
    })?;
    eval::write_results_dir(out, &config, &run.result, &run.reports).bad_input()?;
    if args.replay.is_none() {
        // Index the transcript file for random access by external tools.
        if let Ok(cache) = TranscriptCache::open(&out.join("transcripts.jsonl")) {
            let _ = cache.write_index();
        }
    }
    print_result(&run.result);
    println!("results written to {}", out.display());
    Ok(())
}

pub fn baseline(args: BaselineArgs) -> Result<(), CliError> {
    let (base, reference_seed) = match &args.reference {
        Some(dir) => {
            let ref_cfg = eval::load_config(dir)
                .map_err(|e| anyhow!("reading reference run {}: {e}", dir.display()))
                .bad_input()?;
            let seed = ref_cfg.seed;
            (ref_cfg, Some(seed))
        }
        None => (ExperimentConfig::default(), None),
    };
    let config = effective_config(base, &args.protocol, args.reference.is_none())?;
    if let Some(ref_seed) = reference_seed {
        if config.seed != ref_seed {
            return Err(anyhow!(
                "seed mismatch: reference run used seed {ref_seed}, this invocation uses {}; \
                 baselines must share the split seed to score the same targets",
                config.seed
            ))
            .bad_input();
        }
    }
    let method = match args.method.as_str() {
        "bkt" => BaselineMethod::BktFull,
        "bkt-shots" => BaselineMethod::BktShots,
        "majority" => BaselineMethod::Majority,
        other => return Err(anyhow!("unknown baseline method `{other}`")).bad_input(),
    };

    let dataset = load_dataset(&config)?;
    let out = &args.protocol.out;
    let run = eval::run_baseline(&dataset, &config, method).map_err(|e| CliError {
        code: eval_error_code(&e),
        source: e.into(),
    })?;
    eval::write_results_dir(out, &config, &run.result, &[]).bad_input()?;
    if let Some(params) = &run.fitted_params {
        fskt_core::bkt::save_params(&out.join("params.json"), params).bad_input()?;
    }
    print_result(&run.result);
    println!("results written to {}", out.display());
    Ok(())
}

pub fn report(args: ReportArgs) -> Result<(), CliError> {
    if args.dirs.len() < 2 {
        return Err(anyhow!(
            "need at least two results directories, got {}",
            args.dirs.len()
        ))
        .bad_input();
    }
    let mut results: Vec<ExperimentResult> = Vec::new();
    for dir in &args.dirs {
        let result = eval::load_result(dir)
            .map_err(|e| anyhow!("reading results from {}: {e}", dir.display()))
            .bad_input()?;
        results.push(result);
    }
    let table = eval::compare_runs(&results).bad_input()?;
    let md = table.to_markdown();
    match &args.out {
        Some(path) => std::fs::write(path, &md).bad_input()?,
        None => print!("{md}"),
    }
    Ok(())
}

pub fn strategies() -> Result<(), CliError> {
    for d in list_strategies() {
        println!(
            "{:<10} params: {:<10} {} — {}",
            d.id,
            d.params.join(","),
            if d.implemented { "implemented" } else { "reserved" },
            d.summary
        );
    }
    Ok(())
}

fn print_result(result: &ExperimentResult) {
    let mut line = String::new();
    let a = &result.aggregate;
    let _ = write!(
        line,
        "{}: accuracy {:.4} ± {:.4} | precision {:.4} | recall {:.4} | f1 {:.4}",
        result.method,
        a.accuracy.mean,
        2.0 * a.accuracy.std,
        a.precision.mean,
        a.recall.mean,
        a.f1.mean
    );
    if a.fallback_rate.mean > 0.0 {
        let _ = write!(line, " | fallback rate {:.4}", a.fallback_rate.mean);
    }
    println!("{line}");
    println!(
        "predictions: {}; students skipped: {}",
        result.records.len(),
        result.skipped.len()
    );
}
