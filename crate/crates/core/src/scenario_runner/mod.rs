//! Runs the ablation matrix over a dataset and persists one record per
//! (respondent, experiment, scenario, repeat) cell.

mod store;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::llm_gateway::{BackendConfig, Gateway};
use crate::prompt_forge::{test_scenario, FactorFilter, PromptError, PromptForge};
use crate::response_codec::{parse_response_with, KeywordTable, ResponseStatus, SimResponse};
use crate::survey_data::{dataset_digest, Dataset, ExperimentId};

pub use store::{read_manifest, read_records, RunStore, MANIFEST_FILE, PROMPTS_DIR, RECORDS_FILE};

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error("manifest mismatch: {0}")]
    ManifestMismatch(String),
    #[error("no backend registered as '{0}'")]
    MissingBackend(String),
    #[error("dataset hash {found} does not match manifest {expected}")]
    DatasetMismatch { expected: String, found: String },
    #[error("prompt for respondent '{respondent}' {experiment} scenario {scenario}: {source}")]
    Prompt {
        respondent: String,
        experiment: ExperimentId,
        scenario: u8,
        #[source]
        source: PromptError,
    },
    #[error("store error: {0}")]
    Store(String),
    #[error("store write failed after {persisted} new record(s): {message}")]
    Aborted { persisted: usize, message: String },
    #[error("aggregation: {0}")]
    Aggregate(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InvalidPolicy {
    /// Invalid after all content retries: dropped from metric denominators.
    #[default]
    RetryThenExclude,
    /// Invalid after all content retries: scored as a wrong prediction.
    RetryThenWrong,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendSummary {
    pub base_url: String,
    pub model_name: String,
    pub temperature: f64,
    pub top_p: f64,
    pub max_output_tokens: u32,
}

impl From<&BackendConfig> for BackendSummary {
    fn from(c: &BackendConfig) -> Self {
        BackendSummary {
            base_url: c.base_url.clone(),
            model_name: c.model_name.clone(),
            temperature: c.temperature,
            top_p: c.top_p,
            max_output_tokens: c.max_output_tokens,
        }
    }
}

fn default_content_retries() -> u32 {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub dataset_hash: String,
    pub scenario_ids: Vec<u8>,
    pub experiments: Vec<ExperimentId>,
    pub repeats: u32,
    /// Per-scenario repeat counts overriding `repeats`.
    #[serde(default)]
    pub repeat_overrides: BTreeMap<u8, u32>,
    #[serde(default)]
    pub backends: BTreeMap<String, BackendSummary>,
    pub created_at: DateTime<Utc>,
    #[serde(default)]
    pub invalid_policy: InvalidPolicy,
    #[serde(default = "default_content_retries")]
    pub content_retries: u32,
    #[serde(default)]
    pub seed: u64,
    /// Retained prompt items for scenario 10, per experiment.
    #[serde(default)]
    pub factor_filters: Option<BTreeMap<ExperimentId, BTreeSet<String>>>,
}

impl RunManifest {
    /// Defaults: five repeats, one for scenario 12, retry-then-exclude with
    /// two content retries.
    pub fn new(run_id: &str, dataset: &Dataset, scenario_ids: Vec<u8>, experiments: Vec<ExperimentId>) -> Self {
        RunManifest {
            run_id: run_id.to_string(),
            dataset_hash: dataset_digest(dataset),
            scenario_ids,
            experiments,
            repeats: 5,
            repeat_overrides: [(12, 1)].into_iter().collect(),
            backends: BTreeMap::new(),
            created_at: Utc::now(),
            invalid_policy: InvalidPolicy::default(),
            content_retries: default_content_retries(),
            seed: 0,
            factor_filters: None,
        }
    }

    pub fn repeats_for(&self, scenario: u8) -> u32 {
        self.repeat_overrides.get(&scenario).copied().unwrap_or(self.repeats)
    }

    pub fn validate(&self) -> Result<(), RunnerError> {
        let bad = |m: String| Err(RunnerError::Manifest(m));
        if self.run_id.is_empty() {
            return bad("empty run_id".into());
        }
        if self.repeats < 1 || self.repeat_overrides.values().any(|r| *r < 1) {
            return bad("repeats must be at least 1".into());
        }
        if self.scenario_ids.is_empty() || self.experiments.is_empty() {
            return bad("no scenarios or experiments selected".into());
        }
        let mut seen = BTreeSet::new();
        for id in &self.scenario_ids {
            if !(1..=12).contains(id) {
                return bad(format!("scenario {id} is not an LLM scenario (1..12)"));
            }
            if !seen.insert(*id) {
                return bad(format!("scenario {id} listed twice"));
            }
        }
        if self.experiments.iter().collect::<BTreeSet<_>>().len() != self.experiments.len() {
            return bad("experiment listed twice".into());
        }
        if self.scenario_ids.contains(&10) {
            let Some(filters) = &self.factor_filters else {
                return bad("scenario 10 needs factor_filters".into());
            };
            if let Some(e) = self.experiments.iter().find(|e| !filters.contains_key(e)) {
                return bad(format!("scenario 10 has no factor filter for {e}"));
            }
        }
        Ok(())
    }

    /// Same run apart from the creation timestamp.
    pub fn same_run(&self, other: &RunManifest) -> bool {
        RunManifest {
            created_at: other.created_at,
            ..self.clone()
        } == *other
    }
}

/// (respondent, experiment, scenario, repeat)
pub type CellKey = (String, ExperimentId, u8, u32);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationRecord {
    pub run_id: String,
    pub respondent_id: String,
    pub experiment_id: ExperimentId,
    pub scenario_id: u8,
    pub repeat_index: u32,
    pub response: SimResponse,
    /// Recorded choice of scenario 6.
    pub truth: u8,
    pub prompt_digest: String,
    pub backend_id: String,
    /// Transport attempts summed over content attempts.
    pub attempts: u32,
    pub content_attempts: u32,
    pub latency_ms: u64,
    /// Removed from metric denominators (retry-then-exclude).
    #[serde(default)]
    pub excluded: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl SimulationRecord {
    pub fn key(&self) -> CellKey {
        (self.respondent_id.clone(), self.experiment_id, self.scenario_id, self.repeat_index)
    }

    /// Prediction used for scoring: `None` when excluded, `Some(0)` for an
    /// invalid response scored as wrong.
    pub fn scored_prediction(&self) -> Option<u8> {
        if self.excluded {
            None
        } else {
            Some(self.response.choice.unwrap_or(0))
        }
    }
}

/// Deterministic per-sample key for scripted backends.
pub fn sample_key(seed: u64, key: &CellKey, content_attempt: u32) -> u64 {
    let mut h = Sha256::new();
    h.update(format!("{seed}|{}|{}|{}|{}|{content_attempt}", key.0, key.1, key.2, key.3).as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads; defaults to the largest backend concurrency.
    pub workers: Option<usize>,
    /// Stop after this many new records (simulated interruption).
    pub stop_after: Option<usize>,
    pub dump_prompts: bool,
    pub keyword_table: Option<KeywordTable>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub total_cells: usize,
    pub already_done: usize,
    pub new_records: usize,
    pub backend_calls: usize,
    pub complete: bool,
    pub status_counts: BTreeMap<String, usize>,
    pub excluded: usize,
    /// Respondents without data or a recorded scenario-6 choice for an experiment.
    pub skipped: Vec<String>,
}

struct Cell {
    key: CellKey,
    respondent: usize,
    truth: u8,
}

/// The backend registry handed to a run, keyed by backend id.
pub type Backends = BTreeMap<String, Gateway>;

/// Executes every missing cell of `manifest` and persists it in `store`.
pub fn run(
    dataset: &Dataset,
    manifest: &RunManifest,
    backends: &Backends,
    store: &RunStore,
    options: &RunOptions,
) -> Result<RunSummary, RunnerError> {
    manifest.validate()?;
    let hash = dataset_digest(dataset);
    if hash != manifest.dataset_hash {
        return Err(RunnerError::DatasetMismatch {
            expected: manifest.dataset_hash.clone(),
            found: hash,
        });
    }
    let forge = PromptForge::default();
    let table = options.keyword_table.clone().unwrap_or_default();

    let mut configs = BTreeMap::new();
    for sid in &manifest.scenario_ids {
        let mut cfg = test_scenario(*sid).expect("validated scenario id");
        if let (Some(FactorFilter::ChoiceModel), Some(f)) = (&cfg.factor_filter, &manifest.factor_filters) {
            cfg = cfg.with_resolved_filter(f.clone());
        }
        if !backends.contains_key(&cfg.backend_id) {
            return Err(RunnerError::MissingBackend(cfg.backend_id));
        }
        configs.insert(*sid, cfg);
    }

    let mut cells = Vec::new();
    let mut skipped = Vec::new();
    for exp in &manifest.experiments {
        for (ri, r) in dataset.respondents.iter().enumerate() {
            let Some(truth) = r.target_choice(*exp) else {
                skipped.push(format!("{}:{exp}", r.id));
                continue;
            };
            for sid in &manifest.scenario_ids {
                for rep in 0..manifest.repeats_for(*sid) {
                    cells.push(Cell {
                        key: (r.id.clone(), *exp, *sid, rep),
                        respondent: ri,
                        truth,
                    });
                }
            }
        }
    }
    let total_cells = cells.len();
    let done: BTreeSet<CellKey> = store.load_records()?.iter().map(|r| r.key()).collect();
    let pending: Vec<&Cell> = cells.iter().filter(|c| !done.contains(&c.key)).collect();
    let already_done = total_cells - pending.len();

    let workers = options
        .workers
        .unwrap_or_else(|| backends.values().map(|g| g.config().max_concurrency).max().unwrap_or(1))
        .max(1)
        .min(pending.len().max(1));
    let limit = options.stop_after.unwrap_or(usize::MAX);
    let next = AtomicUsize::new(0);
    let persisted = AtomicUsize::new(0);
    let calls = AtomicUsize::new(0);
    let failed = AtomicBool::new(false);
    let first_error: Mutex<Option<RunnerError>> = Mutex::new(None);

    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                if failed.load(Ordering::SeqCst) {
                    return;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= pending.len() || i >= limit {
                    return;
                }
                let cell = pending[i];
                let result = execute_cell(dataset, manifest, &forge, &table, &configs, backends, store, options, cell, &calls)
                    .and_then(|rec| store.append(&rec).map_err(|e| match e {
                        RunnerError::Store(message) => RunnerError::Aborted {
                            persisted: persisted.load(Ordering::SeqCst),
                            message,
                        },
                        other => other,
                    }));
                match result {
                    Ok(()) => {
                        persisted.fetch_add(1, Ordering::SeqCst);
                    }
                    Err(e) => {
                        failed.store(true, Ordering::SeqCst);
                        first_error.lock().unwrap().get_or_insert(e);
                        return;
                    }
                }
            });
        }
    });
    if let Some(e) = first_error.into_inner().unwrap() {
        return Err(e);
    }

    let records = store.load_records()?;
    let present: BTreeSet<CellKey> = records.iter().map(|r| r.key()).collect();
    let complete = cells.iter().all(|c| present.contains(&c.key));
    if complete {
        store.compact()?;
    }
    let mut status_counts: BTreeMap<String, usize> =
        ResponseStatus::ALL.iter().map(|s| (s.to_string(), 0)).collect();
    for r in &records {
        *status_counts.entry(r.response.status.to_string()).or_default() += 1;
    }
    Ok(RunSummary {
        run_id: manifest.run_id.clone(),
        total_cells,
        already_done,
        new_records: persisted.into_inner(),
        backend_calls: calls.into_inner(),
        complete,
        status_counts,
        excluded: records.iter().filter(|r| r.excluded).count(),
        skipped,
    })
}

#[allow(clippy::too_many_arguments)]
fn execute_cell(
    dataset: &Dataset,
    manifest: &RunManifest,
    forge: &PromptForge,
    table: &KeywordTable,
    configs: &BTreeMap<u8, crate::prompt_forge::TestScenarioConfig>,
    backends: &Backends,
    store: &RunStore,
    options: &RunOptions,
    cell: &Cell,
    calls: &AtomicUsize,
) -> Result<SimulationRecord, RunnerError> {
    let (rid, exp, sid, rep) = &cell.key;
    let respondent = &dataset.respondents[cell.respondent];
    let cfg = &configs[sid];
    let design = dataset.design(*exp).ok_or_else(|| RunnerError::Manifest(format!("dataset has no {exp} design")))?;
    let bundle = forge.assemble_prompt(respondent, design, cfg).map_err(|source| RunnerError::Prompt {
        respondent: rid.clone(),
        experiment: *exp,
        scenario: *sid,
        source,
    })?;
    let digest = bundle.digest();
    if options.dump_prompts {
        store.dump_prompt(&digest, &bundle)?;
    }
    let gateway = &backends[&cfg.backend_id];

    let mut attempts = 0;
    let mut latency_ms = 0;
    let mut content_attempts = 0;
    let mut error = None;
    let mut response;
    loop {
        content_attempts += 1;
        calls.fetch_add(1, Ordering::SeqCst);
        match gateway.complete(&bundle, sample_key(manifest.seed, &cell.key, content_attempts - 1)) {
            Ok(c) => {
                attempts += c.attempt_count;
                latency_ms += c.latency_ms;
                response = parse_response_with(&c.raw_text, cfg.require_explanation, table);
            }
            Err(e) => {
                attempts += e.attempts();
                response = parse_response_with("", cfg.require_explanation, table);
                error = Some(e.to_string());
                break;
            }
        }
        if response.is_valid() || content_attempts > manifest.content_retries {
            break;
        }
    }
    let excluded = !response.is_valid() && manifest.invalid_policy == InvalidPolicy::RetryThenExclude;
    Ok(SimulationRecord {
        run_id: manifest.run_id.clone(),
        respondent_id: rid.clone(),
        experiment_id: *exp,
        scenario_id: *sid,
        repeat_index: *rep,
        response,
        truth: cell.truth,
        prompt_digest: digest,
        backend_id: cfg.backend_id.clone(),
        attempts,
        content_attempts,
        latency_ms,
        excluded,
        error,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatAggregate {
    /// Indexed by repeat; `None` where the repeat had no usable records.
    pub per_repeat: Vec<Option<f64>>,
    pub mean: Option<f64>,
}

/// Applies `metric` per repeat over non-excluded records and averages the
/// defined values.
pub fn aggregate_repeats<F>(records: &[SimulationRecord], metric: F) -> Result<RepeatAggregate, RunnerError>
where
    F: Fn(&[&SimulationRecord]) -> Option<f64>,
{
    let Some(first) = records.first() else {
        return Ok(RepeatAggregate {
            per_repeat: vec![],
            mean: None,
        });
    };
    if records
        .iter()
        .any(|r| r.scenario_id != first.scenario_id || r.experiment_id != first.experiment_id)
    {
        return Err(RunnerError::Aggregate("records span several (scenario, experiment) pairs".into()));
    }
    let n_repeats = records.iter().map(|r| r.repeat_index).max().unwrap_or(0) as usize + 1;
    let mut groups: Vec<Vec<&SimulationRecord>> = vec![Vec::new(); n_repeats];
    for r in records.iter().filter(|r| !r.excluded) {
        groups[r.repeat_index as usize].push(r);
    }
    let per_repeat: Vec<Option<f64>> = groups
        .iter()
        .map(|g| if g.is_empty() { None } else { metric(g) })
        .collect();
    let defined: Vec<f64> = per_repeat.iter().flatten().copied().collect();
    let mean = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    Ok(RepeatAggregate { per_repeat, mean })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::response_codec::parse_response;

    fn record(rep: u32, choice: u8, truth: u8) -> SimulationRecord {
        SimulationRecord {
            run_id: "r".into(),
            respondent_id: format!("p{rep}-{choice}-{truth}"),
            experiment_id: ExperimentId::SP1,
            scenario_id: 2,
            repeat_index: rep,
            response: parse_response(&crate::llm_gateway::scripted::valid_reply(choice), true),
            truth,
            prompt_digest: String::new(),
            backend_id: "local".into(),
            attempts: 1,
            content_attempts: 1,
            latency_ms: 0,
            excluded: false,
            error: None,
        }
    }

    fn acc(recs: &[&SimulationRecord]) -> Option<f64> {
        let hits = recs.iter().filter(|r| r.scored_prediction() == Some(r.truth)).count();
        Some(hits as f64 / recs.len() as f64)
    }

    #[test]
    fn mean_of_per_repeat_values() {
        // Ten records per repeat with 4, 5, 6, 5, 5 hits.
        let mut recs = Vec::new();
        for (rep, hits) in [4, 5, 6, 5, 5].into_iter().enumerate() {
            for i in 0..10 {
                recs.push(record(rep as u32, 1, if i < hits { 1 } else { 2 }));
            }
        }
        let agg = aggregate_repeats(&recs, acc).unwrap();
        assert_eq!(agg.per_repeat, vec![Some(0.4), Some(0.5), Some(0.6), Some(0.5), Some(0.5)]);
        assert!((agg.mean.unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn single_repeat_and_empty_repeat() {
        let agg = aggregate_repeats(&[record(0, 1, 1)], acc).unwrap();
        assert_eq!(agg.mean, Some(1.0));
        let mut a = record(0, 1, 1);
        a.excluded = true;
        let agg = aggregate_repeats(&[a, record(1, 2, 1)], acc).unwrap();
        assert_eq!(agg.per_repeat, vec![None, Some(0.0)]);
        assert_eq!(agg.mean, Some(0.0));
    }

    #[test]
    fn mixed_cells_are_rejected() {
        let mut b = record(0, 1, 1);
        b.scenario_id = 3;
        assert!(aggregate_repeats(&[record(0, 1, 1), b], acc).is_err());
    }

    #[test]
    fn manifest_rules() {
        let d = Dataset {
            respondents: vec![],
            designs: Default::default(),
        };
        let mut m = RunManifest::new("r", &d, vec![2, 8], vec![ExperimentId::SP1]);
        assert!(m.validate().is_ok());
        assert_eq!((m.repeats_for(2), m.repeats_for(12)), (5, 1));
        m.scenario_ids = vec![13];
        assert!(m.validate().is_err());
        m.scenario_ids = vec![10];
        assert!(m.validate().is_err());
        m.factor_filters = Some([(ExperimentId::SP1, BTreeSet::new())].into_iter().collect());
        assert!(m.validate().is_ok());
        m.repeats = 0;
        assert!(m.validate().is_err());
    }

    #[test]
    fn sample_keys_differ_per_cell_and_attempt() {
        let k = ("a".to_string(), ExperimentId::SP1, 2, 0);
        assert_eq!(sample_key(1, &k, 0), sample_key(1, &k, 0));
        assert_ne!(sample_key(1, &k, 0), sample_key(1, &k, 1));
        assert_ne!(sample_key(1, &k, 0), sample_key(2, &k, 0));
    }

    #[test]
    fn wrong_policy_scores_invalid_as_zero() {
        let mut r = record(0, 1, 1);
        r.response = parse_response("garbage", true);
        assert_eq!(r.scored_prediction(), Some(0));
        r.excluded = true;
        assert_eq!(r.scored_prediction(), None);
    }
}
