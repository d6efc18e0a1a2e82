//! The bounded generate, execute and evaluate loop for one specification,
//! plus batch runs over an input folder (see [`batch`]).

mod batch;

use serde::{Deserialize, Serialize};

use crate::evaluator::{evaluate, EvaluationMatrix, Finding, Thresholds, Verdict};
use crate::exec_harness::{ApiRegistry, Availability, CiExecutor, ExecutionLog};
use crate::generator::{repair, GenerationBackend, GenerationRequest};
use crate::retrieval::{retrieve, CorpusIndex};
use crate::script_dsl::{parse_script, render_script};
use crate::spec_model::SpecDocument;

pub use batch::{
    read_trace, replay_trace, run_batch, run_id, write_reports, BatchDeps, BatchError, RunSummary, TraceConfig, TraceEvent,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Template,
    Remote,
}

/// Existing suite size used for the automation-gap section of the manager
/// report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuiteCounts {
    pub manual: u64,
    pub automated: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub max_iterations: u32,
    pub retrieve_k: usize,
    pub thresholds: Thresholds,
    pub backend: BackendKind,
    pub seed: u64,
    pub output_root: std::path::PathBuf,
    pub jobs: usize,
    pub suite: Option<SuiteCounts>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            max_iterations: 3,
            retrieve_k: 3,
            thresholds: Thresholds::default(),
            backend: BackendKind::Template,
            seed: 0,
            output_root: "out".into(),
            jobs: 1,
            suite: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_iterations < 1 {
            return Err("max_iterations must be at least 1".into());
        }
        if self.retrieve_k < 1 {
            return Err("retrieve_k must be at least 1".into());
        }
        if self.jobs < 1 {
            return Err("jobs must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    AcceptedCandidate,
    IterationLimit,
    CiUnavailable,
    /// The generation backend failed; the iteration holds an empty script.
    BackendError,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::AcceptedCandidate => "accepted_candidate",
            StopReason::IterationLimit => "iteration_limit",
            StopReason::CiUnavailable => "ci_unavailable",
            StopReason::BackendError => "backend_error",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContinuationDecision {
    Continue,
    Stop(StopReason),
}

pub fn decide_continue(iteration: u32, max_iterations: u32, ci_available: bool, verdict: Verdict) -> ContinuationDecision {
    if verdict == Verdict::Pass {
        ContinuationDecision::Stop(StopReason::AcceptedCandidate)
    } else if !ci_available {
        ContinuationDecision::Stop(StopReason::CiUnavailable)
    } else if iteration >= max_iterations {
        ContinuationDecision::Stop(StopReason::IterationLimit)
    } else {
        ContinuationDecision::Continue
    }
}

/// How an iteration's script came about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptSource {
    Backend,
    Repair,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: u32,
    pub source: ScriptSource,
    pub script: String,
    pub log: Option<ExecutionLog>,
    pub matrix: EvaluationMatrix,
    /// Backend or executor failure text.
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedRef {
    pub key: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpecRunResult {
    pub spec: SpecDocument,
    pub retrieved: Vec<RetrievedRef>,
    pub iterations: Vec<IterationRecord>,
    pub stop_reason: StopReason,
    pub final_iteration: u32,
}

impl SpecRunResult {
    pub fn spec_key(&self) -> &str {
        &self.spec.key
    }

    pub fn final_record(&self) -> &IterationRecord {
        &self.iterations[self.final_iteration as usize - 1]
    }

    pub fn final_verdict(&self) -> Verdict {
        self.final_record().matrix.verdict
    }

    pub fn final_script(&self) -> &str {
        &self.final_record().script
    }
}

/// Best iteration: a pass first, then semantic, then coverage; the earliest
/// wins ties. Returns a 1-based iteration number.
pub fn best_iteration(iterations: &[IterationRecord]) -> u32 {
    let key = |r: &IterationRecord| (r.matrix.verdict == Verdict::Pass, r.matrix.semantic, r.matrix.coverage);
    let mut best = 0;
    for (i, r) in iterations.iter().enumerate().skip(1) {
        if key(r).partial_cmp(&key(&iterations[best])) == Some(std::cmp::Ordering::Greater) {
            best = i;
        }
    }
    best as u32 + 1
}

/// Shared, read-only collaborators of a run.
#[derive(Clone, Copy)]
pub struct LoopDeps<'a> {
    pub index: &'a CorpusIndex,
    pub backend: &'a dyn GenerationBackend,
    pub executor: &'a dyn CiExecutor,
    pub registry: &'a ApiRegistry,
}

/// Runs the loop for one specification. Retrieval happens once, before
/// iteration 1. Later iterations repair the previous script from its
/// findings and fall back to the backend when repair changes nothing.
pub fn run_spec(spec: &SpecDocument, config: &RunConfig, deps: LoopDeps<'_>) -> SpecRunResult {
    let hits = retrieve(deps.index, spec, config.retrieve_k);
    let retrieved = hits.iter().map(|h| RetrievedRef { key: h.pair.key().to_owned(), score: h.score }).collect();
    let max = config.max_iterations.max(1);
    let mut iterations: Vec<IterationRecord> = Vec::new();
    let mut stop = StopReason::IterationLimit;

    for iteration in 1..=max {
        let prior_findings: &[Finding] = iterations.last().map(|r| r.matrix.findings.as_slice()).unwrap_or(&[]);
        let repaired = iterations.last().and_then(|prev| {
            let script = parse_script(&prev.script).ok()?;
            let fixed = repair(&script, prior_findings, deps.registry);
            (fixed != script).then(|| render_script(&fixed))
        });
        let generated = match repaired {
            Some(text) => Ok((text, ScriptSource::Repair)),
            None => {
                let request = GenerationRequest { spec, retrieved: &hits, prior_findings, iteration };
                deps.backend.generate(&request).map(|t| (t, ScriptSource::Backend))
            }
        };
        let (script, source) = match generated {
            Ok(g) => g,
            Err(e) => {
                let matrix = evaluate(spec, "", None, deps.registry, &config.thresholds);
                iterations.push(IterationRecord {
                    iteration,
                    source: ScriptSource::Backend,
                    script: String::new(),
                    log: None,
                    matrix,
                    note: Some(e.to_string()),
                });
                stop = StopReason::BackendError;
                break;
            }
        };

        let mut note = None;
        let mut ci_available = deps.executor.availability() == Availability::Available;
        let log = if ci_available && parse_script(&script).is_ok() {
            match deps.executor.execute(&script, &spec.ci_config) {
                Ok(log) => Some(log),
                Err(e) => {
                    ci_available = false;
                    note = Some(e.to_string());
                    None
                }
            }
        } else {
            None
        };
        let matrix = evaluate(spec, &script, log.as_ref(), deps.registry, &config.thresholds);
        let verdict = matrix.verdict;
        iterations.push(IterationRecord { iteration, source, script, log, matrix, note });
        match decide_continue(iteration, max, ci_available, verdict) {
            ContinuationDecision::Continue => {}
            ContinuationDecision::Stop(reason) => {
                stop = reason;
                break;
            }
        }
    }

    let final_iteration = best_iteration(&iterations);
    SpecRunResult { spec: spec.clone(), retrieved, iterations, stop_reason: stop, final_iteration }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::FixedClock;
    use crate::exec_harness::{default_registry, LocalExecutor, RemoteCiExecutor};
    use crate::generator::{BackendError, TemplateBackend};
    use crate::retrieval::build_index;
    use crate::spec_model::generate_corpus;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn clock() -> Arc<FixedClock> {
        Arc::new(FixedClock::parse("2026-03-01T10:00:00Z").unwrap())
    }

    #[test]
    fn continuation_examples() {
        use ContinuationDecision::*;
        assert_eq!(decide_continue(1, 3, true, Verdict::Revise), Continue);
        assert_eq!(decide_continue(2, 3, true, Verdict::Pass), Stop(StopReason::AcceptedCandidate));
        assert_eq!(decide_continue(3, 3, true, Verdict::Revise), Stop(StopReason::IterationLimit));
        assert_eq!(decide_continue(1, 3, false, Verdict::NotExecuted), Stop(StopReason::CiUnavailable));
    }

    proptest! {
        #[test]
        fn continuation_never_exceeds_limit(it in 1u32..10, max in 1u32..10, ci: bool, v in 0usize..4) {
            let verdict = Verdict::ALL[v];
            let d = decide_continue(it, max, ci, verdict);
            if it >= max {
                prop_assert_ne!(d, ContinuationDecision::Continue);
            }
            if d == ContinuationDecision::Continue {
                prop_assert!(ci && verdict != Verdict::Pass);
            }
        }
    }

    fn record(verdict: Verdict, semantic: f64, coverage: f64) -> IterationRecord {
        IterationRecord {
            iteration: 0,
            source: ScriptSource::Backend,
            script: String::new(),
            log: None,
            matrix: EvaluationMatrix {
                syntax: 1,
                executability: 1.0,
                coverage,
                semantic,
                improvement: 1.0,
                verdict,
                findings: vec![],
            },
            note: None,
        }
    }

    #[test]
    fn best_iteration_ordering() {
        let r = [record(Verdict::Revise, 0.9, 0.9), record(Verdict::Pass, 0.8, 0.8)];
        assert_eq!(best_iteration(&r), 2);
        let r = [record(Verdict::Revise, 0.5, 0.9), record(Verdict::Revise, 0.5, 0.9)];
        assert_eq!(best_iteration(&r), 1);
        let r = [record(Verdict::Revise, 0.5, 0.4), record(Verdict::Revise, 0.5, 0.6), record(Verdict::Revise, 0.7, 0.1)];
        assert_eq!(best_iteration(&r), 3);
    }

    fn corpus() -> (Vec<SpecDocument>, CorpusIndex) {
        let (specs, pairs) = generate_corpus(42, 61, 6).unwrap();
        (specs, build_index(pairs).unwrap())
    }

    #[test]
    fn runs_respect_limits_and_ci_availability() {
        let (specs, index) = corpus();
        let registry = default_registry();
        let backend = TemplateBackend { registry: registry.clone() };
        let local = LocalExecutor::new(registry.clone(), clock());
        let remote = RemoteCiExecutor::default();
        for max in 1..=3 {
            let config = RunConfig { max_iterations: max, ..RunConfig::default() };
            for spec in specs.iter().take(20) {
                let deps = LoopDeps { index: &index, backend: &backend, executor: &local, registry: &registry };
                let r = run_spec(spec, &config, deps);
                assert!(!r.iterations.is_empty() && r.iterations.len() <= max as usize);
                let deps = LoopDeps { executor: &remote, ..deps };
                let r = run_spec(spec, &config, deps);
                assert_eq!(r.iterations.len(), 1);
                assert_eq!(r.final_verdict(), Verdict::NotExecuted);
                assert_eq!(r.stop_reason, StopReason::CiUnavailable);
                assert!(r.iterations[0].log.is_none());
            }
        }
    }

    struct Failing;
    impl GenerationBackend for Failing {
        fn name(&self) -> &'static str {
            "failing"
        }
        fn generate(&self, _: &GenerationRequest<'_>) -> Result<String, BackendError> {
            Err(BackendError::Transport("connection refused".into()))
        }
    }

    #[test]
    fn backend_failure_stops_with_note() {
        let (specs, index) = corpus();
        let registry = default_registry();
        let local = LocalExecutor::new(registry.clone(), clock());
        let deps = LoopDeps { index: &index, backend: &Failing, executor: &local, registry: &registry };
        let r = run_spec(&specs[0], &RunConfig::default(), deps);
        assert_eq!(r.iterations.len(), 1);
        assert_eq!(r.stop_reason, StopReason::BackendError);
        assert_eq!(r.final_verdict(), Verdict::FailSyntax);
        assert!(r.iterations[0].note.as_deref().unwrap().contains("connection refused"));
    }
}
