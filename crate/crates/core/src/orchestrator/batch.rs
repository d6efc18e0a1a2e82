//! Batch runs: load a folder, run every valid specification, and persist
//! the artifact tree and the trace under `<output_root>/runs/<run_id>/`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{
    run_spec, ContinuationDecision, IterationRecord, LoopDeps, RetrievedRef, RunConfig, SpecRunResult, StopReason,
    SuiteCounts,
};
use crate::clock::Clock;
use crate::evaluator::{Thresholds, Verdict};
use crate::exec_harness::{ApiRegistry, CiExecutor};
use crate::generator::GenerationBackend;
use crate::reporting::{engineer_report, manager_report};
use crate::retrieval::CorpusIndex;
use crate::spec_model::{has_errors, load_spec_batch, validate_spec, InputFolderError, Level, SkippedFile, SpecDocument};

#[derive(Debug, thiserror::Error)]
pub enum BatchError {
    #[error(transparent)]
    Input(#[from] InputFolderError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("run directory {0} already exists")]
    RunExists(PathBuf),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("trace line {line}: {message}")]
    Trace { line: usize, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BatchError + '_ {
    move |source| BatchError::Io { path: path.to_path_buf(), source }
}

pub struct BatchDeps<'a> {
    pub index: &'a CorpusIndex,
    pub backend: &'a dyn GenerationBackend,
    pub executor: &'a dyn CiExecutor,
    pub registry: &'a ApiRegistry,
    pub clock: &'a dyn Clock,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub run_id: String,
    pub seed: u64,
    /// Ordered by spec key.
    pub results: Vec<SpecRunResult>,
    pub skipped: Vec<SkippedFile>,
    pub suite: Option<SuiteCounts>,
}

impl RunSummary {
    /// Final-verdict counts for every verdict, zeros included.
    pub fn totals(&self) -> IndexMap<Verdict, usize> {
        let mut totals: IndexMap<Verdict, usize> = Verdict::ALL.iter().map(|v| (*v, 0)).collect();
        for r in &self.results {
            totals[&r.final_verdict()] += 1;
        }
        totals
    }

    pub fn pass_count(&self) -> usize {
        self.totals()[&Verdict::Pass]
    }
}

/// The run-shaping part of the configuration, as recorded in the trace.
/// Output location and parallelism are left out because they never change
/// results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceConfig {
    pub max_iterations: u32,
    pub retrieve_k: usize,
    pub thresholds: Thresholds,
    pub backend: super::BackendKind,
    pub suite: Option<SuiteCounts>,
}

/// One line of `trace.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    RunStarted { run_id: String, seed: u64, config: TraceConfig },
    SpecSkipped { file: String, reason: String },
    SpecStarted { spec_key: String, spec: Value, retrieved: Vec<RetrievedRef> },
    Iteration { spec_key: String, record: IterationRecord },
    Decision { spec_key: String, iteration: u32, decision: String, reason: Option<StopReason> },
    SpecFinished { spec_key: String, final_iteration: u32, final_verdict: Verdict, stop_reason: StopReason },
    RunFinished { totals: IndexMap<Verdict, usize> },
}

pub fn run_id(clock: &dyn Clock, seed: u64) -> String {
    format!("{}-s{seed}", clock.now().format("%Y%m%dT%H%M%SZ"))
}

fn validation_reason(doc: &SpecDocument) -> Option<String> {
    let findings = validate_spec(doc);
    if !has_errors(&findings) {
        return None;
    }
    let errors: Vec<String> = findings
        .iter()
        .filter(|f| f.level == Level::Error)
        .map(|f| format!("{} at {}", f.code, f.location))
        .collect();
    Some(format!("validation failed: {}", errors.join("; ")))
}

/// Runs every valid document of `input`. Invalid files are recorded as
/// skipped; nothing about one specification can abort the others.
pub fn run_batch(input: &Path, config: &RunConfig, deps: &BatchDeps<'_>) -> Result<RunSummary, BatchError> {
    config.validate().map_err(BatchError::Config)?;
    let batch = load_spec_batch(input)?;
    let run_id = run_id(deps.clock, config.seed);
    let run_dir = config.output_root.join("runs").join(&run_id);
    if run_dir.exists() {
        return Err(BatchError::RunExists(run_dir));
    }

    let mut skipped = batch.skipped;
    let mut runnable = Vec::new();
    for doc in batch.docs {
        match validation_reason(&doc) {
            Some(reason) => {
                let file = batch.sources.get(&doc.key).cloned().unwrap_or_else(|| doc.key.clone());
                skipped.push(SkippedFile { file, reason });
            }
            None => runnable.push(doc),
        }
    }
    skipped.sort_by(|a, b| a.file.cmp(&b.file));

    let loop_deps =
        LoopDeps { index: deps.index, backend: deps.backend, executor: deps.executor, registry: deps.registry };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs)
        .build()
        .map_err(|e| BatchError::Config(e.to_string()))?;
    let results: Vec<SpecRunResult> =
        pool.install(|| runnable.par_iter().map(|spec| run_spec(spec, config, loop_deps)).collect());

    let summary = RunSummary { run_id, seed: config.seed, results, skipped, suite: config.suite };
    write_run(&run_dir, &summary, config)?;
    Ok(summary)
}

fn write_file(path: &Path, contents: &str) -> Result<(), BatchError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, contents).map_err(io_err(path))
}

fn trace_events(summary: &RunSummary, config: &RunConfig) -> Vec<TraceEvent> {
    let mut events = vec![TraceEvent::RunStarted {
        run_id: summary.run_id.clone(),
        seed: summary.seed,
        config: TraceConfig {
            max_iterations: config.max_iterations,
            retrieve_k: config.retrieve_k,
            thresholds: config.thresholds,
            backend: config.backend,
            suite: config.suite,
        },
    }];
    for s in &summary.skipped {
        events.push(TraceEvent::SpecSkipped { file: s.file.clone(), reason: s.reason.clone() });
    }
    for r in &summary.results {
        let key = r.spec_key().to_owned();
        events.push(TraceEvent::SpecStarted { spec_key: key.clone(), spec: r.spec.to_json(), retrieved: r.retrieved.clone() });
        let last = r.iterations.len();
        for (i, rec) in r.iterations.iter().enumerate() {
            events.push(TraceEvent::Iteration { spec_key: key.clone(), record: rec.clone() });
            let decision = if i + 1 == last {
                ContinuationDecision::Stop(r.stop_reason)
            } else {
                ContinuationDecision::Continue
            };
            let (decision, reason) = match decision {
                ContinuationDecision::Continue => ("continue", None),
                ContinuationDecision::Stop(reason) => ("stop", Some(reason)),
            };
            events.push(TraceEvent::Decision {
                spec_key: key.clone(),
                iteration: rec.iteration,
                decision: decision.into(),
                reason,
            });
        }
        events.push(TraceEvent::SpecFinished {
            spec_key: key,
            final_iteration: r.final_iteration,
            final_verdict: r.final_verdict(),
            stop_reason: r.stop_reason,
        });
    }
    events.push(TraceEvent::RunFinished { totals: summary.totals() });
    events
}

fn spec_files(run_dir: &Path, r: &SpecRunResult) -> Result<(), BatchError> {
    let dir = run_dir.join(r.spec_key());
    for rec in &r.iterations {
        let it = dir.join(format!("iteration_{}", rec.iteration));
        write_file(&it.join("script.ats"), &rec.script)?;
        if let Some(log) = &rec.log {
            write_file(&it.join("execution.log.jsonl"), &log.to_jsonl())?;
        }
        write_file(&it.join("evaluation.json"), &rec.matrix.to_json_string())?;
    }
    write_file(&dir.join("final").join("script.ats"), r.final_script())?;
    Ok(())
}

/// (Re)writes both report kinds for a run.
pub fn write_reports(run_dir: &Path, summary: &RunSummary) -> Result<(), BatchError> {
    for r in &summary.results {
        write_file(&run_dir.join(r.spec_key()).join("report_engineer.md"), &engineer_report(r, None))?;
    }
    write_file(&run_dir.join("report_manager.md"), &manager_report(summary))
}

fn write_run(run_dir: &Path, summary: &RunSummary, config: &RunConfig) -> Result<(), BatchError> {
    fs::create_dir_all(run_dir).map_err(io_err(run_dir))?;
    let trace_path = run_dir.join("trace.jsonl");
    let mut trace = fs::File::create(&trace_path).map_err(io_err(&trace_path))?;
    for event in trace_events(summary, config) {
        let line = serde_json::to_string(&event).expect("trace events serialize");
        writeln!(trace, "{line}").map_err(io_err(&trace_path))?;
    }
    for r in &summary.results {
        spec_files(run_dir, r)?;
    }
    write_reports(run_dir, summary)
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceEvent>, BatchError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| BatchError::Trace { line: i + 1, message: e.to_string() })
        })
        .collect()
}

/// Rebuilds the run summary recorded in a trace.
pub fn replay_trace(events: &[TraceEvent]) -> Result<RunSummary, BatchError> {
    let bad = |line: usize, message: &str| BatchError::Trace { line, message: message.to_owned() };
    let mut summary: Option<RunSummary> = None;
    let mut current: Option<SpecRunResult> = None;
    for (i, event) in events.iter().enumerate() {
        let line = i + 1;
        match event {
            TraceEvent::RunStarted { run_id, seed, config } => {
                summary = Some(RunSummary {
                    run_id: run_id.clone(),
                    seed: *seed,
                    results: Vec::new(),
                    skipped: Vec::new(),
                    suite: config.suite,
                });
            }
            TraceEvent::SpecSkipped { file, reason } => summary
                .as_mut()
                .ok_or_else(|| bad(line, "event before run_started"))?
                .skipped
                .push(SkippedFile { file: file.clone(), reason: reason.clone() }),
            TraceEvent::SpecStarted { spec, retrieved, .. } => {
                let spec = SpecDocument::from_json(spec).map_err(|e| bad(line, &e.to_string()))?;
                current = Some(SpecRunResult {
                    spec,
                    retrieved: retrieved.clone(),
                    iterations: Vec::new(),
                    stop_reason: StopReason::IterationLimit,
                    final_iteration: 1,
                });
            }
            TraceEvent::Iteration { record, .. } => {
                current.as_mut().ok_or_else(|| bad(line, "iteration outside a spec"))?.iterations.push(record.clone())
            }
            TraceEvent::Decision { .. } => {}
            TraceEvent::SpecFinished { final_iteration, stop_reason, .. } => {
                let mut r = current.take().ok_or_else(|| bad(line, "spec_finished outside a spec"))?;
                if *final_iteration < 1 || *final_iteration as usize > r.iterations.len() {
                    return Err(bad(line, "final_iteration out of range"));
                }
                r.final_iteration = *final_iteration;
                r.stop_reason = *stop_reason;
                summary.as_mut().ok_or_else(|| bad(line, "event before run_started"))?.results.push(r);
            }
            TraceEvent::RunFinished { .. } => {}
        }
    }
    summary.ok_or_else(|| bad(0, "no run_started event"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::FixedClock;
    use crate::exec_harness::{default_registry, LocalExecutor};
    use crate::generator::TemplateBackend;
    use crate::retrieval::build_index;
    use crate::spec_model::generate_corpus;
    use std::sync::Arc;

    fn setup(count: usize) -> (tempfile::TempDir, CorpusIndex) {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in");
        fs::create_dir_all(&input).unwrap();
        let (specs, pairs) = generate_corpus(42, count, 6).unwrap();
        for s in &specs {
            fs::write(input.join(format!("{}.json", s.key)), s.to_json_string()).unwrap();
        }
        (dir, build_index(pairs).unwrap())
    }

    fn run(dir: &Path, index: &CorpusIndex, out: &str, jobs: usize) -> RunSummary {
        let clock = Arc::new(FixedClock::parse("2026-03-01T10:00:00Z").unwrap());
        let registry = default_registry();
        let backend = TemplateBackend { registry: registry.clone() };
        let executor = LocalExecutor::new(registry.clone(), clock.clone());
        let deps = BatchDeps { index, backend: &backend, executor: &executor, registry: &registry, clock: clock.as_ref() };
        let config = RunConfig { seed: 42, output_root: dir.join(out), jobs, ..RunConfig::default() };
        run_batch(&dir.join("in"), &config, &deps).unwrap()
    }

    #[test]
    fn serial_and_parallel_runs_agree_and_trace_replays() {
        let (dir, index) = setup(12);
        fs::write(dir.path().join("in").join("notes.txt"), "x").unwrap();
        let a = run(dir.path(), &index, "a", 1);
        let b = run(dir.path(), &index, "b", 4);
        assert_eq!(a, b);
        assert_eq!(a.run_id, "20260301T100000Z-s42");
        assert_eq!(a.results.len(), 12);
        assert_eq!(a.skipped.len(), 1);
        let run_dir = dir.path().join("a/runs").join(&a.run_id);
        let events = read_trace(&run_dir.join("trace.jsonl")).unwrap();
        assert_eq!(replay_trace(&events).unwrap(), a);
        for r in &a.results {
            let spec_dir = run_dir.join(r.spec_key());
            assert!(spec_dir.join("final/script.ats").is_file());
            assert!(spec_dir.join("report_engineer.md").is_file());
            for rec in &r.iterations {
                let it = spec_dir.join(format!("iteration_{}", rec.iteration));
                assert_eq!(it.join("execution.log.jsonl").exists(), rec.log.is_some());
            }
        }
        assert!(run_dir.join("report_manager.md").is_file());
    }

    #[test]
    fn existing_run_dir_is_not_overwritten() {
        let (dir, index) = setup(2);
        run(dir.path(), &index, "a", 1);
        let clock = FixedClock::parse("2026-03-01T10:00:00Z").unwrap();
        let registry = default_registry();
        let backend = TemplateBackend { registry: registry.clone() };
        let executor = LocalExecutor::new(registry.clone(), Arc::new(clock));
        let deps = BatchDeps { index: &index, backend: &backend, executor: &executor, registry: &registry, clock: &clock };
        let config = RunConfig { seed: 42, output_root: dir.path().join("a"), ..RunConfig::default() };
        assert!(matches!(run_batch(&dir.path().join("in"), &config, &deps), Err(BatchError::RunExists(_))));
    }

    #[test]
    fn empty_folder_still_writes_manager_report() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("in")).unwrap();
        let s = run(dir.path(), &CorpusIndex::empty(), "o", 1);
        assert!(s.results.is_empty());
        assert!(dir.path().join("o/runs").join(&s.run_id).join("report_manager.md").is_file());
    }
}
