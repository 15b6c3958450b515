//! Stage orchestration over a corpus of decompiled apps.
//!
//! Layout of an output directory:
//! `results/<app_id>.json`, `manifest.json`, `report/*`, `lint.json`, `status.jsonl`.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::{assemble_key_configs, compute_stats, emit_report, lint_config, AnalyticsError, CorpusStats, KeyConfig, LintFinding, StatsInput};
use crate::callgraph::{backward_reachability, build_call_graph};
use crate::config::Config;
use crate::corpus::{
    app_input, build_manifest, discover_apps, load_all_results, party_map, persist_result, write_manifest, AppInput,
    AppResult, CorpusError, CorpusManifest, PackageIndex, ScanStatus,
};
use crate::fsutil::{to_json_bytes, write_atomic};
use crate::labels::{ingest_labels, CategoryTable, LabelError};
use crate::sigdb::{find_call_sites, keyword_prefilter, PrefilterReport, SigDbError, SignatureDb};
use crate::slicer::resolve_args;
use crate::smali::parse_app_dir;

pub const RESULTS_DIR: &str = "results";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const REPORT_DIR: &str = "report";
pub const LINT_FILE: &str = "lint.json";
pub const STATUS_FILE: &str = "status.jsonl";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
    #[error(transparent)]
    Labels(#[from] LabelError),
    #[error(transparent)]
    SignatureDb(#[from] SigDbError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot start worker pool: {0}")]
    Workers(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Prefilter,
    Scan,
    Slice,
    Graph,
    Reach,
    Done,
    Timeout,
    Error,
}

impl Stage {
    pub fn is_terminal(self) -> bool {
        matches!(self, Stage::Done | Stage::Timeout | Stage::Error)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageStatus {
    pub app_id: String,
    pub stage: Stage,
    pub duration_seconds: f64,
    pub message: String,
}

/// Cooperative per-app time budget, checked between stages and call sites.
#[derive(Debug, Clone, Copy)]
pub struct Deadline {
    start: Instant,
    budget: Duration,
}

impl Deadline {
    pub fn new(budget: Duration) -> Self {
        Deadline { start: Instant::now(), budget }
    }

    pub fn expired(&self) -> bool {
        self.start.elapsed() >= self.budget
    }

    pub fn remaining(&self) -> Duration {
        self.budget.saturating_sub(self.start.elapsed())
    }
}

struct StageLog {
    app_id: String,
    last: Instant,
    entries: Vec<StageStatus>,
}

impl StageLog {
    fn new(app_id: &str) -> Self {
        StageLog { app_id: app_id.to_string(), last: Instant::now(), entries: Vec::new() }
    }

    fn mark(&mut self, stage: Stage, message: impl Into<String>) {
        let now = Instant::now();
        self.entries.push(StageStatus {
            app_id: self.app_id.clone(),
            stage,
            duration_seconds: (now - self.last).as_secs_f64(),
            message: message.into(),
        });
        self.last = now;
    }
}

/// RFC 3339 stamp taken from `SOURCE_DATE_EPOCH`, so repeated runs stay byte-identical.
pub fn scanned_at_stamp() -> Option<String> {
    let secs: i64 = std::env::var("SOURCE_DATE_EPOCH").ok()?.trim().parse().ok()?;
    chrono::DateTime::from_timestamp(secs, 0).map(|t| t.to_rfc3339_opts(chrono::SecondsFormat::Secs, true))
}

pub fn load_signature_db(cfg: &Config) -> Result<SignatureDb, SigDbError> {
    match &cfg.signature_db_path {
        Some(p) => SignatureDb::load(p),
        None => Ok(SignatureDb::builtin()),
    }
}

fn with_pool<T: Send>(cfg: &Config, f: impl FnOnce() -> T + Send) -> Result<T, PipelineError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| PipelineError::Workers(e.to_string()))?;
    Ok(pool.install(f))
}

pub struct ScanOutcome {
    pub result: AppResult,
    pub statuses: Vec<StageStatus>,
    pub elapsed: Duration,
}

/// Prefilter, parse, detect and slice one app. Reachability is a separate
/// stage because it needs the party map of the whole corpus.
pub fn scan_app(input: &AppInput, cfg: &Config, db: &SignatureDb, finish: bool) -> ScanOutcome {
    let deadline = Deadline::new(cfg.timeout());
    let mut log = StageLog::new(&input.app_id);
    let mut result = AppResult::new(&input.app_id, &input.meta);
    result.scanned_at = scanned_at_stamp();

    result.prefilter = keyword_prefilter(&input.dir, &cfg.needle_set);
    log.mark(Stage::Prefilter, format!("{} hits", result.prefilter.hits.len()));
    if !result.prefilter.matched {
        log.mark(Stage::Done, "no keyword match");
        return ScanOutcome { result, statuses: log.entries, elapsed: deadline.start.elapsed() };
    }
    let timed_out = |result: &mut AppResult, log: &mut StageLog| {
        result.status = ScanStatus::Timeout;
        result.warnings.push("per-app time budget exhausted".into());
        log.mark(Stage::Timeout, "time budget exhausted");
    };
    if deadline.expired() {
        timed_out(&mut result, &mut log);
        return ScanOutcome { result, statuses: log.entries, elapsed: deadline.start.elapsed() };
    }
    let app = match parse_app_dir(&input.dir) {
        Ok(a) => a,
        Err(e) => {
            result.status = ScanStatus::Error;
            result.warnings.push(e.to_string());
            log.mark(Stage::Error, e.to_string());
            return ScanOutcome { result, statuses: log.entries, elapsed: deadline.start.elapsed() };
        }
    };
    result.warnings.extend(app.warnings.iter().cloned());
    result.packages = app.packages().into_iter().collect();
    let mut sites = find_call_sites(&app, db);
    for s in &mut sites {
        s.app_id = input.app_id.clone();
    }
    log.mark(Stage::Scan, format!("{} classes, {} call sites", app.classes.len(), sites.len()));
    if deadline.expired() {
        timed_out(&mut result, &mut log);
        return ScanOutcome { result, statuses: log.entries, elapsed: deadline.start.elapsed() };
    }
    let mut sliced = Vec::with_capacity(sites.len());
    for s in sites {
        if deadline.expired() {
            timed_out(&mut result, &mut log);
            result.call_sites = sliced;
            return ScanOutcome { result, statuses: log.entries, elapsed: deadline.start.elapsed() };
        }
        sliced.push(match (app.find_method(&s.caller), db.get(&s.callee)) {
            (Some(m), Some(e)) => resolve_args(m, &s, e),
            _ => s,
        });
    }
    result.call_sites = sliced;
    log.mark(Stage::Slice, format!("{} sites sliced", result.call_sites.len()));
    if finish {
        log.mark(Stage::Done, "");
    }
    ScanOutcome { result, statuses: log.entries, elapsed: deadline.start.elapsed() }
}

/// Builds the call graph and answers one reachability query per call site.
pub fn reach_app(
    input: &AppInput,
    result: &mut AppResult,
    party: &PackageIndex,
    cfg: &Config,
    budget: Duration,
) -> Vec<StageStatus> {
    let deadline = Deadline::new(budget);
    let mut log = StageLog::new(&input.app_id);
    if result.status != ScanStatus::Done || result.call_sites.is_empty() {
        return log.entries;
    }
    let app = match parse_app_dir(&input.dir) {
        Ok(a) => a,
        Err(e) => {
            result.status = ScanStatus::Error;
            result.warnings.push(e.to_string());
            log.mark(Stage::Error, e.to_string());
            return log.entries;
        }
    };
    let graph = build_call_graph(&app, cfg.cha_enabled);
    log.mark(Stage::Graph, format!("{} nodes, {} edges", graph.node_count(), graph.edge_count()));
    let first = |pkg: &str| party.is_first_party(pkg);
    let mut out = Vec::with_capacity(result.call_sites.len());
    for s in &result.call_sites {
        if deadline.expired() {
            result.status = ScanStatus::Timeout;
            result.warnings.push("per-app time budget exhausted".into());
            log.mark(Stage::Timeout, "time budget exhausted");
            result.reachability = out;
            return log.entries;
        }
        match backward_reachability(&graph, &s.caller, first, cfg.bfs_node_limit) {
            Ok(mut r) => {
                r.callsite_id = s.callsite_id.clone();
                out.push(r);
            }
            Err(e) => result.warnings.push(format!("{}: {e}", s.callsite_id)),
        }
    }
    result.reachability = out;
    log.mark(Stage::Reach, format!("{} queries", result.reachability.len()));
    log.mark(Stage::Done, "");
    log.entries
}

pub fn results_dir(out_dir: &Path) -> PathBuf {
    out_dir.join(RESULTS_DIR)
}

pub fn append_statuses(out_dir: &Path, statuses: &[StageStatus]) -> Result<(), PipelineError> {
    let path = out_dir.join(STATUS_FILE);
    let io = |source| PipelineError::Io { path: path.clone(), source };
    fs::create_dir_all(out_dir).map_err(io)?;
    let mut f = OpenOptions::new().create(true).append(true).open(&path).map_err(io)?;
    for s in statuses {
        let line = serde_json::to_string(s).expect("status serializes");
        writeln!(f, "{line}").map_err(io)?;
    }
    Ok(())
}

/// Phase one over the given apps: one result file per app.
pub fn scan_inputs(
    inputs: &[AppInput],
    out_dir: &Path,
    cfg: &Config,
    db: &SignatureDb,
    finish: bool,
) -> Result<Vec<StageStatus>, PipelineError> {
    let outcomes: Vec<ScanOutcome> =
        with_pool(cfg, || inputs.par_iter().map(|a| scan_app(a, cfg, db, finish)).collect())?;
    let dir = results_dir(out_dir);
    let mut statuses = Vec::new();
    for o in outcomes {
        persist_result(&dir, &o.result)?;
        statuses.extend(o.statuses);
    }
    Ok(statuses)
}

fn listed_apps(corpus_dir: &Path, cfg: &Config) -> Result<Vec<AppInput>, PipelineError> {
    let listing = discover_apps(corpus_dir, cfg.min_installs_filter)?;
    for (id, why) in &listing.skipped {
        log::info!("skipping {id}: {why}");
    }
    Ok(listing.apps)
}

pub fn scan_corpus(corpus_dir: &Path, out_dir: &Path, cfg: &Config, db: &SignatureDb) -> Result<Vec<StageStatus>, PipelineError> {
    scan_inputs(&listed_apps(corpus_dir, cfg)?, out_dir, cfg, db, true)
}

/// Keyword prefilter only, for every listed app.
pub fn prefilter_corpus(corpus_dir: &Path, cfg: &Config) -> Result<Vec<(String, PrefilterReport)>, PipelineError> {
    let apps = listed_apps(corpus_dir, cfg)?;
    with_pool(cfg, || {
        apps.par_iter().map(|a| (a.app_id.clone(), keyword_prefilter(&a.dir, &cfg.needle_set))).collect()
    })
}

/// Phase two: party map from every stored result, then reachability per app.
pub fn reach_corpus(corpus_dir: &Path, out_dir: &Path, cfg: &Config) -> Result<Vec<StageStatus>, PipelineError> {
    let dir = results_dir(out_dir);
    let mut results = load_all_results(&dir)?;
    let party = party_map(&results, cfg.obfuscation_min_component);
    let statuses: Vec<Vec<StageStatus>> = with_pool(cfg, || {
        results
            .par_iter_mut()
            .map(|r| {
                let input = match app_input(&corpus_dir.join(&r.app_id)) {
                    Ok(i) if i.dir.is_dir() => i,
                    _ => match find_app_dir(corpus_dir, &r.app_id) {
                        Some(i) => i,
                        None => {
                            r.warnings.push("app directory not found for reachability".into());
                            return Vec::new();
                        }
                    },
                };
                reach_app(&input, r, &party, cfg, cfg.timeout())
            })
            .collect()
    })?;
    for r in &results {
        persist_result(&dir, r)?;
    }
    Ok(statuses.into_iter().flatten().collect())
}

fn find_app_dir(corpus_dir: &Path, app_id: &str) -> Option<AppInput> {
    discover_apps(corpus_dir, 0).ok()?.apps.into_iter().find(|a| a.app_id == app_id)
}

pub fn classify_corpus(out_dir: &Path, cfg: &Config, db: &SignatureDb) -> Result<CorpusManifest, PipelineError> {
    let results = load_all_results(&results_dir(out_dir))?;
    let manifest = build_manifest(&results, db, cfg.snapshot(), cfg.obfuscation_min_component)?;
    write_manifest(&out_dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

pub fn stats_corpus(
    out_dir: &Path,
    cfg: &Config,
    db: &SignatureDb,
    labels_path: Option<&Path>,
) -> Result<CorpusStats, PipelineError> {
    let results = load_all_results(&results_dir(out_dir))?;
    let manifest = build_manifest(&results, db, cfg.snapshot(), cfg.obfuscation_min_component)?;
    let table = CategoryTable::builtin();
    let labels = match labels_path {
        Some(p) => {
            let ingested = ingest_labels(p, &table)?;
            for w in &ingested.warnings {
                log::warn!("{w}");
            }
            Some(ingested.labels)
        }
        None => None,
    };
    let stats = compute_stats(&StatsInput {
        results: &results,
        manifest: &manifest,
        db,
        labels: labels.as_deref(),
        categories: &table,
        top_n: cfg.top_n_packages,
    })?;
    emit_report(&stats, &out_dir.join(REPORT_DIR))?;
    Ok(stats)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LintReport {
    pub key_configs: Vec<KeyConfig>,
    pub findings: Vec<LintFinding>,
}

pub fn lint_results(results: &[AppResult], db: &SignatureDb) -> LintReport {
    let mut report = LintReport { key_configs: Vec::new(), findings: Vec::new() };
    for r in results.iter().filter(|r| r.status == ScanStatus::Done) {
        let assembly = assemble_key_configs(&r.app_id, &r.call_sites, &r.reachability, db);
        for cfg in assembly.configs {
            report.findings.extend(lint_config(&cfg));
            report.key_configs.push(cfg);
        }
    }
    report
}

pub fn lint_corpus(out_dir: &Path, db: &SignatureDb) -> Result<LintReport, PipelineError> {
    let results = load_all_results(&results_dir(out_dir))?;
    let report = lint_results(&results, db);
    let path = out_dir.join(LINT_FILE);
    let bytes = to_json_bytes(&report).expect("lint report serializes");
    write_atomic(&path, &bytes).map_err(|source| PipelineError::Io { path, source })?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub statuses: Vec<StageStatus>,
    pub stats: CorpusStats,
    pub findings: usize,
}

impl RunSummary {
    pub fn exit_code(&self) -> i32 {
        batch_exit_code(&self.statuses)
    }
}

/// 2 when some apps ended in timeout or error while others finished, else 0.
pub fn batch_exit_code(statuses: &[StageStatus]) -> i32 {
    let mut last: BTreeMap<&str, Stage> = BTreeMap::new();
    for s in statuses.iter().filter(|s| s.stage.is_terminal()) {
        last.insert(&s.app_id, s.stage);
    }
    let done = last.values().filter(|s| **s == Stage::Done).count();
    if done > 0 && done < last.len() {
        2
    } else {
        0
    }
}

/// Every stage in order: scan, reach, classify, stats, lint.
pub fn run_pipeline(
    corpus_dir: &Path,
    out_dir: &Path,
    cfg: &Config,
    labels_path: Option<&Path>,
) -> Result<RunSummary, PipelineError> {
    let db = load_signature_db(cfg)?;
    let status_path = out_dir.join(STATUS_FILE);
    if status_path.exists() {
        fs::remove_file(&status_path).map_err(|source| PipelineError::Io { path: status_path.clone(), source })?;
    }
    let res_dir = results_dir(out_dir);
    if res_dir.exists() {
        fs::remove_dir_all(&res_dir).map_err(|source| PipelineError::Io { path: res_dir.clone(), source })?;
    }
    let mut statuses = scan_inputs(&listed_apps(corpus_dir, cfg)?, out_dir, cfg, &db, false)?;
    statuses.extend(reach_corpus(corpus_dir, out_dir, cfg)?);
    // apps that had nothing to reach are finished here
    let results = load_all_results(&res_dir)?;
    for r in &results {
        let finished = statuses.iter().any(|s| s.app_id == r.app_id && s.stage.is_terminal());
        if !finished {
            statuses.push(StageStatus {
                app_id: r.app_id.clone(),
                stage: Stage::Done,
                duration_seconds: 0.0,
                message: String::new(),
            });
        }
    }
    statuses.sort_by(|a, b| a.app_id.cmp(&b.app_id).then(a.stage.cmp(&b.stage)));
    classify_corpus(out_dir, cfg, &db)?;
    let stats = stats_corpus(out_dir, cfg, &db, labels_path)?;
    let findings = lint_corpus(out_dir, &db)?.findings.len();
    append_statuses(out_dir, &statuses)?;
    Ok(RunSummary { statuses, stats, findings })
}
