//! Backend orchestration: run a corpus through the selected backends,
//! score against gold when present, and write run artifacts.

use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Serialize;
use thiserror::Error;

use crate::corpus::CorpusFile;
use crate::domain::ClinicalNarrative;
use crate::eval::{score_all, MetricReport};
use crate::llm::client::{CompletionRequest, LiveClient, LlmBackend, LlmError};
use crate::llm::parse::{parse_response, ValidationMode};
use crate::llm::prompt::{build_prompt, PromptTemplate, BASELINE_VARIANT};
use crate::llm::replay::ReplayStore;
use crate::outcome::ExtractionOutcome;
use crate::rules::{extract_with_set, PatternProfile, PatternSet};

/// A backend selected for a run. Labels are stable and appear in outcome
/// files and reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendChoice {
    RuleFaithful,
    RuleExtended,
    LlmLive,
    LlmReplay,
}

impl BackendChoice {
    pub fn label(self) -> &'static str {
        match self {
            BackendChoice::RuleFaithful => "rule-faithful",
            BackendChoice::RuleExtended => "rule-extended",
            BackendChoice::LlmLive => "llm-live",
            BackendChoice::LlmReplay => "llm-replay",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "rule-faithful" => Some(BackendChoice::RuleFaithful),
            "rule-extended" => Some(BackendChoice::RuleExtended),
            "llm-live" => Some(BackendChoice::LlmLive),
            "llm-replay" => Some(BackendChoice::LlmReplay),
            _ => None,
        }
    }

    fn is_llm(self) -> bool {
        matches!(self, BackendChoice::LlmLive | BackendChoice::LlmReplay)
    }
}

/// Where the live client points.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EndpointConfig {
    pub base_url: String,
    pub api_key: String,
    pub model: String,
}

/// One run's full configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub backends: Vec<BackendChoice>,
    pub validation: ValidationMode,
    pub prompt_variant: String,
    pub concurrency: usize,
    pub seed: u64,
    pub fixtures_dir: Option<PathBuf>,
    pub endpoint: Option<EndpointConfig>,
    /// Optional pattern-set override applied to rule backends.
    pub pattern_file: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn new(backends: Vec<BackendChoice>) -> Self {
        RunConfig {
            backends,
            validation: ValidationMode::Permissive,
            prompt_variant: BASELINE_VARIANT.to_string(),
            concurrency: 4,
            seed: 0,
            fixtures_dir: None,
            endpoint: None,
            pattern_file: None,
            out_dir: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("transport error on narrative {narrative_id:?}: {message}")]
    Transport {
        narrative_id: String,
        message: String,
    },
    #[error("failed to write {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl PipelineError {
    /// Process exit code: 1 data, 2 transport, 3 config.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 3,
            PipelineError::Data(_) | PipelineError::Io { .. } => 1,
            PipelineError::Transport { .. } => 2,
        }
    }
}

#[derive(Debug)]
pub struct PipelineOutput {
    pub outcomes: Vec<ExtractionOutcome>,
    pub report: Option<MetricReport>,
}

#[derive(Serialize)]
struct AbortManifest<'a> {
    status: &'a str,
    backend: &'a str,
    failed_narrative_id: &'a str,
    error: String,
    completed_ids: Vec<String>,
}

struct LlmAbort {
    narrative_id: String,
    error: LlmError,
    completed: Vec<String>,
}

fn validate_config(config: &RunConfig) -> Result<(), PipelineError> {
    if config.backends.is_empty() {
        return Err(PipelineError::Config(
            "at least one backend must be enabled".to_string(),
        ));
    }
    for (i, a) in config.backends.iter().enumerate() {
        if config.backends[i + 1..].contains(a) {
            return Err(PipelineError::Config(format!(
                "backend {:?} selected more than once",
                a.label()
            )));
        }
    }
    if config.concurrency == 0 {
        return Err(PipelineError::Config("concurrency must be at least 1".to_string()));
    }
    if config.backends.contains(&BackendChoice::LlmReplay) && config.fixtures_dir.is_none() {
        return Err(PipelineError::Config(
            "llm-replay requires a fixtures directory".to_string(),
        ));
    }
    if config.backends.contains(&BackendChoice::LlmLive) && config.endpoint.is_none() {
        return Err(PipelineError::Config(
            "llm-live requires an endpoint (base URL and credential)".to_string(),
        ));
    }
    Ok(())
}

fn llm_template(config: &RunConfig) -> Result<PromptTemplate, PipelineError> {
    let template = PromptTemplate::builtin(&config.prompt_variant)
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    template
        .validate()
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    Ok(template)
}

fn llm_outcomes(
    narratives: &[&ClinicalNarrative],
    backend: &LlmBackend,
    template: &PromptTemplate,
    model: &str,
    mode: ValidationMode,
    concurrency: usize,
    label: &str,
) -> Result<Vec<ExtractionOutcome>, Box<LlmAbort>> {
    let run_one = |narrative: &ClinicalNarrative| -> Result<ExtractionOutcome, LlmError> {
        let prompt = build_prompt(template, narrative).expect("template validated before run");
        let request = CompletionRequest::single_user(model, prompt);
        let response = backend.complete(&narrative.id, &template.variant_name, &request)?;
        Ok(parse_response(
            &narrative.id,
            label,
            &response.raw_text,
            &narrative.text,
            mode,
        ))
    };

    let sequential = matches!(backend, LlmBackend::Replay(_)) || concurrency <= 1;
    if sequential {
        let mut outcomes = Vec::with_capacity(narratives.len());
        for narrative in narratives {
            match run_one(narrative) {
                Ok(outcome) => outcomes.push(outcome),
                Err(error) => {
                    return Err(Box::new(LlmAbort {
                        narrative_id: narrative.id.clone(),
                        error,
                        completed: outcomes.into_iter().map(|o| o.narrative_id).collect(),
                    }))
                }
            }
        }
        return Ok(outcomes);
    }

    // Bounded fan-out; results re-ordered by input position afterwards so
    // output order never depends on scheduling.
    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let slots: Mutex<Vec<Option<Result<ExtractionOutcome, LlmError>>>> =
        Mutex::new((0..narratives.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..concurrency.min(narratives.len()) {
            scope.spawn(|| loop {
                let index = next.fetch_add(1, Ordering::SeqCst);
                if index >= narratives.len() || stop.load(Ordering::SeqCst) {
                    break;
                }
                let result = run_one(narratives[index]);
                if result.is_err() {
                    stop.store(true, Ordering::SeqCst);
                }
                slots.lock().expect("no panics hold this lock")[index] = Some(result);
            });
        }
    });

    let slots = slots.into_inner().expect("threads joined");
    let mut outcomes = Vec::with_capacity(narratives.len());
    let mut failure: Option<(String, LlmError)> = None;
    for (index, slot) in slots.into_iter().enumerate() {
        match slot {
            Some(Ok(outcome)) => outcomes.push(outcome),
            Some(Err(error)) => {
                if failure.is_none() {
                    failure = Some((narratives[index].id.clone(), error));
                }
            }
            None => {}
        }
    }
    match failure {
        None => Ok(outcomes),
        Some((narrative_id, error)) => Err(Box::new(LlmAbort {
            narrative_id,
            error,
            completed: outcomes.into_iter().map(|o| o.narrative_id).collect(),
        })),
    }
}

fn write_text(path: &Path, content: &str) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|source| PipelineError::Io {
            path: path.display().to_string(),
            source,
        })?;
    }
    fs::write(path, content).map_err(|source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Serialize outcomes as JSONL, one object per line.
pub fn outcomes_to_jsonl(outcomes: &[ExtractionOutcome]) -> String {
    let mut out = String::new();
    for outcome in outcomes {
        out.push_str(&serde_json::to_string(outcome).expect("outcome serializes"));
        out.push('\n');
    }
    out
}

/// Read outcomes back from a JSONL file, re-checking invariants.
pub fn read_outcomes_jsonl(path: &Path) -> Result<Vec<ExtractionOutcome>, PipelineError> {
    let file = fs::File::open(path).map_err(|source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut outcomes = Vec::new();
    for (idx, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| PipelineError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let outcome: ExtractionOutcome = serde_json::from_str(&line)
            .map_err(|e| PipelineError::Data(format!("line {}: {e}", idx + 1)))?;
        outcome
            .validate()
            .map_err(|e| PipelineError::Data(format!("line {}: {e}", idx + 1)))?;
        outcomes.push(outcome);
    }
    Ok(outcomes)
}

fn abort(
    config: &RunConfig,
    backend_label: &str,
    abort: LlmAbort,
) -> PipelineError {
    let mut completed = abort.completed;
    completed.sort();
    if let Some(out_dir) = &config.out_dir {
        let manifest = AbortManifest {
            status: "aborted",
            backend: backend_label,
            failed_narrative_id: &abort.narrative_id,
            error: abort.error.to_string(),
            completed_ids: completed,
        };
        let body = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        // Best effort: the abort error below is the primary signal.
        let _ = write_text(&out_dir.join("manifest.json"), &(body + "\n"));
    }
    match abort.error {
        LlmError::FixtureMissing { .. } => PipelineError::Data(abort.error.to_string()),
        other => PipelineError::Transport {
            narrative_id: abort.narrative_id,
            message: other.to_string(),
        },
    }
}

/// Run every enabled backend over the corpus.
///
/// Each narrative yields exactly one outcome per backend. When the corpus
/// carries gold labels a metric report is produced. With an output
/// directory configured, outcomes (JSONL) and the report (JSON + CSV) are
/// written there; an aborted run leaves a manifest naming the completed
/// ids and the failure.
pub fn run_pipeline(
    corpus: &CorpusFile,
    config: &RunConfig,
) -> Result<PipelineOutput, PipelineError> {
    validate_config(config)?;
    let custom_patterns = match &config.pattern_file {
        Some(path) => {
            Some(PatternSet::from_file(path).map_err(|e| PipelineError::Data(e.to_string()))?)
        }
        None => None,
    };

    let narratives: Vec<&ClinicalNarrative> =
        corpus.records.iter().map(|r| &r.narrative).collect();
    let mut outcomes: Vec<ExtractionOutcome> = Vec::new();

    for choice in &config.backends {
        let label = choice.label();
        match choice {
            BackendChoice::RuleFaithful | BackendChoice::RuleExtended => {
                let builtin = match choice {
                    BackendChoice::RuleFaithful => PatternProfile::Faithful.pattern_set(),
                    _ => PatternProfile::Extended.pattern_set(),
                };
                let set = custom_patterns.as_ref().unwrap_or(builtin);
                for narrative in &narratives {
                    let matches = extract_with_set(&narrative.text, set);
                    outcomes.push(ExtractionOutcome::rule(&narrative.id, label, &matches));
                }
            }
            BackendChoice::LlmReplay | BackendChoice::LlmLive => {
                let template = llm_template(config)?;
                let (backend, model) = match choice {
                    BackendChoice::LlmReplay => {
                        let dir = config.fixtures_dir.as_ref().expect("validated");
                        let store = ReplayStore::load_dir(dir)
                            .map_err(|e| PipelineError::Data(e.to_string()))?;
                        (LlmBackend::Replay(store), crate::llm::DEFAULT_MODEL.to_string())
                    }
                    _ => {
                        let endpoint = config.endpoint.as_ref().expect("validated");
                        (
                            LlmBackend::Live(LiveClient::new(
                                endpoint.base_url.clone(),
                                endpoint.api_key.clone(),
                            )),
                            endpoint.model.clone(),
                        )
                    }
                };
                let result = llm_outcomes(
                    &narratives,
                    &backend,
                    &template,
                    &model,
                    config.validation,
                    config.concurrency,
                    label,
                );
                match result {
                    Ok(mut batch) => outcomes.append(&mut batch),
                    Err(failure) => return Err(abort(config, label, *failure)),
                }
            }
        }
    }

    outcomes.sort_by(|a, b| {
        (a.narrative_id.as_str(), a.backend_label.as_str())
            .cmp(&(b.narrative_id.as_str(), b.backend_label.as_str()))
    });

    let report = match corpus.gold_labels() {
        Some(gold) if corpus.has_gold() => {
            Some(score_all(&outcomes, &gold).map_err(|e| PipelineError::Data(e.to_string()))?)
        }
        _ => None,
    };

    if let Some(out_dir) = &config.out_dir {
        write_text(&out_dir.join("outcomes.jsonl"), &outcomes_to_jsonl(&outcomes))?;
        if let Some(report) = &report {
            write_text(&out_dir.join("report.json"), &report.to_json())?;
            write_text(&out_dir.join("report.csv"), &report.to_csv())?;
        }
    }

    Ok(PipelineOutput { outcomes, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{CorpusFormat, CorpusRecord};
    use crate::domain::GoldLabel;
    use crate::llm::replay::{write_fixtures, FixtureEntry};

    fn corpus(records: Vec<(&str, &str, bool)>) -> CorpusFile {
        CorpusFile {
            format: CorpusFormat::Csv,
            records: records
                .into_iter()
                .map(|(id, text, has)| CorpusRecord {
                    narrative: ClinicalNarrative::new(id, text).unwrap(),
                    gold: Some(GoldLabel {
                        narrative_id: id.to_string(),
                        has_overweight_bcs: has,
                        vet_described_overweight: false,
                        reference_score: None,
                    }),
                })
                .collect(),
        }
    }

    #[test]
    fn rule_only_run_produces_one_outcome_per_backend_per_record() {
        let corpus = corpus(vec![
            ("n1", "BCS 7/9", true),
            ("n2", "BCS: 6/9", true),
            ("n3", "healthy", false),
        ]);
        let config = RunConfig::new(vec![
            BackendChoice::RuleFaithful,
            BackendChoice::RuleExtended,
        ]);
        let output = run_pipeline(&corpus, &config).unwrap();
        assert_eq!(output.outcomes.len(), 6);
        let report = output.report.unwrap();
        let faithful = &report.backends[0];
        let extended = &report.backends[1];
        assert_eq!(faithful.backend, "rule-extended");
        // BTreeSet ordering: rule-extended sorts before rule-faithful.
        assert_eq!(extended.backend, "rule-faithful");
    }

    #[test]
    fn replay_run_aborts_on_missing_fixture_with_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let fixtures_dir = dir.path().join("fixtures");
        write_fixtures(
            &fixtures_dir.join("responses.jsonl"),
            &[FixtureEntry {
                narrative_id: "n1".into(),
                variant: BASELINE_VARIANT.into(),
                response: "BCS 7/9. BCS overweight.".into(),
            }],
        )
        .unwrap();
        let corpus = corpus(vec![("n1", "BCS 7/9", true), ("n2", "healthy", false)]);
        let mut config = RunConfig::new(vec![BackendChoice::LlmReplay]);
        config.fixtures_dir = Some(fixtures_dir);
        config.out_dir = Some(dir.path().join("out"));
        let err = run_pipeline(&corpus, &config).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        let manifest = fs::read_to_string(dir.path().join("out/manifest.json")).unwrap();
        assert!(manifest.contains("\"failed_narrative_id\": \"n2\""));
        assert!(manifest.contains("n1"));
    }

    #[test]
    fn empty_backend_list_is_a_config_error() {
        let corpus = corpus(vec![("n1", "x", false)]);
        let err = run_pipeline(&corpus, &RunConfig::new(vec![])).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn replay_without_fixtures_dir_is_a_config_error() {
        let corpus = corpus(vec![("n1", "x", false)]);
        let err = run_pipeline(&corpus, &RunConfig::new(vec![BackendChoice::LlmReplay])).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn unknown_prompt_variant_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        write_fixtures(
            &dir.path().join("responses.jsonl"),
            &[FixtureEntry {
                narrative_id: "n1".into(),
                variant: "x".into(),
                response: "y".into(),
            }],
        )
        .unwrap();
        let corpus = corpus(vec![("n1", "x", false)]);
        let mut config = RunConfig::new(vec![BackendChoice::LlmReplay]);
        config.fixtures_dir = Some(dir.path().to_path_buf());
        config.prompt_variant = "no-such-variant".into();
        let err = run_pipeline(&corpus, &config).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn outcomes_jsonl_round_trips() {
        let corpus = corpus(vec![("n1", "BCS 7/9", true)]);
        let config = RunConfig::new(vec![BackendChoice::RuleExtended]);
        let output = run_pipeline(&corpus, &config).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("outcomes.jsonl");
        fs::write(&path, outcomes_to_jsonl(&output.outcomes)).unwrap();
        let back = read_outcomes_jsonl(&path).unwrap();
        assert_eq!(back, output.outcomes);
    }
}
