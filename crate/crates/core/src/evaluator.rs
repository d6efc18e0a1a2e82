//! Rule-based scoring of a candidate script on five dimensions: syntax,
//! executability, step coverage, semantic correctness and improvement
//! potential.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::exec_harness::{check_api_names, ApiProblem, ApiRegistry, ExecutionLog, Outcome};
use crate::generator::nearest_api;
use crate::retrieval::tokenize;
use crate::script_dsl::{parse_script, Arg, BlockKind, Literal, Statement, TestScript};
use crate::spec_model::SpecDocument;

/// Minimum action/step similarity for a spec step to count as covered.
pub const MATCH_THRESHOLD: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FindingCode {
    #[serde(rename = "L1-HARDCODED")]
    L1Hardcoded,
    #[serde(rename = "L2-NO-ASSERT")]
    L2NoAssert,
    #[serde(rename = "L3-NO-TEARDOWN")]
    L3NoTeardown,
    #[serde(rename = "L4-UNKNOWN-API")]
    L4UnknownApi,
    #[serde(rename = "L5-DUPLICATE-STMT")]
    L5DuplicateStmt,
    #[serde(rename = "COV-MISSED-STEP")]
    CovMissedStep,
    #[serde(rename = "SEM-FAILED-STEP")]
    SemFailedStep,
    #[serde(rename = "SYN-PARSE-ERROR")]
    SynParseError,
}

impl FindingCode {
    pub fn as_str(self) -> &'static str {
        match self {
            FindingCode::L1Hardcoded => "L1-HARDCODED",
            FindingCode::L2NoAssert => "L2-NO-ASSERT",
            FindingCode::L3NoTeardown => "L3-NO-TEARDOWN",
            FindingCode::L4UnknownApi => "L4-UNKNOWN-API",
            FindingCode::L5DuplicateStmt => "L5-DUPLICATE-STMT",
            FindingCode::CovMissedStep => "COV-MISSED-STEP",
            FindingCode::SemFailedStep => "SEM-FAILED-STEP",
            FindingCode::SynParseError => "SYN-PARSE-ERROR",
        }
    }
}

impl fmt::Display for FindingCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Info,
    Warn,
}

/// Where a finding points: a script block (optionally a statement in it), a
/// specification step with no script counterpart, or a source line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    Block { block: BlockKind, stmt: Option<usize> },
    SpecStep(u32),
    Line(usize),
}

impl Location {
    pub fn block(block: BlockKind) -> Self {
        Location::Block { block, stmt: None }
    }

    pub fn stmt(block: BlockKind, stmt: usize) -> Self {
        Location::Block { block, stmt: Some(stmt) }
    }

    fn sort_key(&self) -> (u8, u64) {
        match *self {
            Location::Line(l) => (0, l as u64),
            Location::Block { block, .. } => (1, block.rank()),
            Location::SpecStep(n) => (2, u64::from(n)),
        }
    }
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::Block { block, stmt: None } => write!(f, "{block}"),
            Location::Block { block, stmt: Some(s) } => write!(f, "{block}:{s}"),
            Location::SpecStep(n) => write!(f, "spec step {n}"),
            Location::Line(l) => write!(f, "line {l}"),
        }
    }
}

impl FromStr for Location {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(n) = s.strip_prefix("spec step ") {
            return n.parse().map(Location::SpecStep).map_err(|e| e.to_string());
        }
        if let Some(n) = s.strip_prefix("line ") {
            return n.parse().map(Location::Line).map_err(|e| e.to_string());
        }
        match s.rsplit_once(':') {
            Some((block, stmt)) => Ok(Location::Block {
                block: block.parse()?,
                stmt: Some(stmt.parse().map_err(|e: std::num::ParseIntError| e.to_string())?),
            }),
            None => Ok(Location::Block { block: s.parse()?, stmt: None }),
        }
    }
}

impl Serialize for Location {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Location {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        String::deserialize(deserializer)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub code: FindingCode,
    pub severity: Severity,
    pub location: Location,
    pub message: String,
}

impl Finding {
    fn new(code: FindingCode, location: Location, message: String) -> Self {
        let severity = match code {
            FindingCode::L1Hardcoded | FindingCode::L5DuplicateStmt => Severity::Info,
            _ => Severity::Warn,
        };
        Finding { code, severity, location, message }
    }
}

/// Block order, then code, then statement, then message.
pub fn sort_findings(findings: &mut [Finding]) {
    findings.sort_by(|a, b| {
        let stmt = |f: &Finding| match f.location {
            Location::Block { stmt, .. } => stmt.unwrap_or(0),
            _ => 0,
        };
        a.location
            .sort_key()
            .cmp(&b.location.sort_key())
            .then(a.code.cmp(&b.code))
            .then(stmt(a).cmp(&stmt(b)))
            .then_with(|| a.message.cmp(&b.message))
    });
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Revise,
    FailSyntax,
    NotExecuted,
}

impl Verdict {
    pub const ALL: [Verdict; 4] = [Verdict::Pass, Verdict::Revise, Verdict::FailSyntax, Verdict::NotExecuted];

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Revise => "revise",
            Verdict::FailSyntax => "fail_syntax",
            Verdict::NotExecuted => "not_executed",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub coverage: f64,
    pub semantic: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds { coverage: 0.8, semantic: 0.8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationMatrix {
    pub syntax: u8,
    pub executability: f64,
    pub coverage: f64,
    pub semantic: f64,
    pub improvement: f64,
    pub verdict: Verdict,
    pub findings: Vec<Finding>,
}

impl EvaluationMatrix {
    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("matrix serializes");
        s.push('\n');
        s
    }
}

fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

fn step_terms(script: &TestScript, number: u32) -> BTreeSet<String> {
    let step = script.step(number).expect("step exists");
    let mut terms: BTreeSet<String> = tokenize(&step.title).into_iter().collect();
    for call in step.statements.iter().filter_map(Statement::call) {
        terms.extend(tokenize(&call.name));
    }
    terms
}

/// Greedy spec-step to script-step matching. Entry `i` holds the script step
/// number matched to spec step `i + 1`.
pub fn match_steps(spec: &SpecDocument, script: &TestScript) -> Vec<Option<u32>> {
    let candidates: Vec<(u32, BTreeSet<String>)> =
        script.steps.iter().map(|s| (s.number, step_terms(script, s.number))).collect();
    let mut used = vec![false; candidates.len()];
    spec.steps
        .iter()
        .map(|step| {
            let action: BTreeSet<String> = tokenize(&step.action).into_iter().collect();
            let mut best: Option<(usize, f64)> = None;
            for (i, (_, terms)) in candidates.iter().enumerate() {
                if used[i] {
                    continue;
                }
                let sim = jaccard(&action, terms);
                if sim >= MATCH_THRESHOLD && best.is_none_or(|(_, b)| sim > b) {
                    best = Some((i, sim));
                }
            }
            best.map(|(i, _)| {
                used[i] = true;
                candidates[i].0
            })
        })
        .collect()
}

pub fn eval_coverage(spec: &SpecDocument, script: &TestScript) -> (f64, Vec<Finding>) {
    let matches = match_steps(spec, script);
    let findings: Vec<Finding> = spec
        .steps
        .iter()
        .zip(&matches)
        .filter(|(_, m)| m.is_none())
        .map(|(s, _)| {
            Finding::new(
                FindingCode::CovMissedStep,
                Location::SpecStep(s.index),
                format!("spec step {} (\"{}\") has no matching script step", s.index, s.action),
            )
        })
        .collect();
    let matched = matches.iter().filter(|m| m.is_some()).count();
    (matched as f64 / spec.steps.len() as f64, findings)
}

pub fn eval_semantic(spec: &SpecDocument, script: &TestScript, log: &ExecutionLog) -> (f64, Vec<Finding>) {
    let matches = match_steps(spec, script);
    let mut satisfied = 0usize;
    let mut findings = Vec::new();
    for (spec_step, m) in spec.steps.iter().zip(&matches) {
        let Some(number) = *m else { continue };
        let block = BlockKind::Step(number);
        let step = script.step(number).expect("matched step exists");
        let asserts: Vec<usize> =
            step.statements.iter().enumerate().filter(|(_, s)| s.is_assert()).map(|(i, _)| i + 1).collect();
        let problem = if asserts.is_empty() {
            Some("has no assertion".to_owned())
        } else {
            let mut bad = None;
            for pos in &asserts {
                match log.block_entries(block).find(|e| e.stmt == *pos) {
                    Some(e) if e.outcome == Outcome::Ok => {}
                    Some(e) => {
                        bad = Some(format!("assertion at statement {pos} ended {}: {}", e.outcome.as_str(), e.detail));
                        break;
                    }
                    None => {
                        bad = Some(format!("assertion at statement {pos} was not executed"));
                        break;
                    }
                }
            }
            bad
        };
        match problem {
            None => satisfied += 1,
            Some(p) => findings.push(Finding::new(
                FindingCode::SemFailedStep,
                Location::block(block),
                format!("spec step {} matched to {block} {p}", spec_step.index),
            )),
        }
    }
    (satisfied as f64 / spec.steps.len() as f64, findings)
}

pub fn eval_improvement(script: &TestScript, registry: &ApiRegistry) -> (f64, Vec<Finding>) {
    let mut findings = Vec::new();
    let data_values: Vec<&Literal> = script.data.iter().map(|b| &b.value).collect();
    for step in &script.steps {
        let block = BlockKind::Step(step.number);
        for (i, stmt) in step.statements.iter().enumerate() {
            let Some(call) = stmt.call() else { continue };
            for arg in &call.args {
                if let Arg::Lit(lit @ (Literal::Str(_) | Literal::Int(_))) = arg {
                    if !data_values.contains(&lit) {
                        findings.push(Finding::new(
                            FindingCode::L1Hardcoded,
                            Location::stmt(block, i + 1),
                            format!("hard-coded literal {lit} in call to `{}`", call.name),
                        ));
                    }
                }
            }
        }
        if !step.statements.iter().any(Statement::is_assert) {
            findings.push(Finding::new(
                FindingCode::L2NoAssert,
                Location::block(block),
                format!("{block} has no assertion"),
            ));
        }
    }
    if script.teardown.is_empty() {
        findings.push(Finding::new(
            FindingCode::L3NoTeardown,
            Location::block(BlockKind::Teardown),
            "script has no teardown block".into(),
        ));
    }
    for api in check_api_names(script, registry) {
        let message = match api.problem {
            ApiProblem::UnknownName => match nearest_api(&api.name, registry) {
                Some((near, d)) => format!("unknown API `{}` (nearest: `{near}`, distance {d})", api.name),
                None => format!("unknown API `{}` (no registry API within distance 2)", api.name),
            },
            ApiProblem::ArityMismatch { expected, found } => {
                format!("`{}` takes {expected} arguments, called with {found}", api.name)
            }
        };
        findings.push(Finding::new(FindingCode::L4UnknownApi, Location::stmt(api.block, api.stmt), message));
    }
    for (block, stmts) in script.statement_blocks() {
        let code: Vec<(usize, &Statement)> =
            stmts.iter().enumerate().filter(|(_, s)| !s.is_comment()).collect();
        for w in code.windows(2) {
            if w[0].1 == w[1].1 && w[1].0 == w[0].0 + 1 {
                findings.push(Finding::new(
                    FindingCode::L5DuplicateStmt,
                    Location::stmt(block, w[1].0 + 1),
                    format!("statement {} repeats the previous statement", w[1].0 + 1),
                ));
            }
        }
    }
    let penalized = findings.len().min(5) as f64;
    ((5.0 - penalized) / 5.0, findings)
}

/// Share of blocks that ran every statement without a runtime error.
pub fn eval_executability(script: &TestScript, log: &ExecutionLog) -> f64 {
    let total = script.block_count();
    let mut complete = 0usize;
    let mut check = |block: BlockKind, len: usize| {
        let entries: Vec<_> = log.block_entries(block).collect();
        if entries.len() == len && entries.iter().all(|e| e.outcome != Outcome::RuntimeError) {
            complete += 1;
        }
    };
    if !script.data.is_empty() {
        check(BlockKind::Data, script.data.len());
    }
    for (block, stmts) in script.statement_blocks() {
        check(block, stmts.len());
    }
    complete as f64 / total as f64
}

/// Scores one candidate. `log` is `None` when the script was not executed.
pub fn evaluate(
    spec: &SpecDocument,
    script_text: &str,
    log: Option<&ExecutionLog>,
    registry: &ApiRegistry,
    thresholds: &Thresholds,
) -> EvaluationMatrix {
    let script = match parse_script(script_text) {
        Ok(s) => s,
        Err(e) => {
            return EvaluationMatrix {
                syntax: 0,
                executability: 0.0,
                coverage: 0.0,
                semantic: 0.0,
                improvement: 0.0,
                verdict: Verdict::FailSyntax,
                findings: vec![Finding::new(
                    FindingCode::SynParseError,
                    Location::Line(e.line),
                    format!("parse error at line {}: {}", e.line, e.message),
                )],
            }
        }
    };
    let (coverage, mut findings) = eval_coverage(spec, &script);
    let (improvement, lint) = eval_improvement(&script, registry);
    findings.extend(lint);
    let (executability, semantic, verdict) = match log {
        None => (0.0, 0.0, Verdict::NotExecuted),
        Some(log) => {
            let executability = eval_executability(&script, log);
            let (semantic, sem) = eval_semantic(spec, &script, log);
            findings.extend(sem);
            let pass = executability == 1.0 && coverage >= thresholds.coverage && semantic >= thresholds.semantic;
            (executability, semantic, if pass { Verdict::Pass } else { Verdict::Revise })
        }
    };
    sort_findings(&mut findings);
    EvaluationMatrix { syntax: 1, executability, coverage, semantic, improvement, verdict, findings }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::FixedClock;
    use crate::exec_harness::{default_registry, execute_script};
    use crate::spec_model::{CiConfig, Clarity, SpecStep};

    fn spec(actions: &[&str]) -> SpecDocument {
        SpecDocument {
            key: "HAC-1".into(),
            summary: "s".into(),
            functional_area: "timetable".into(),
            story_points: 3,
            clarity: Clarity::A,
            ci_config: CiConfig { job: "systest".into(), timeout_s: 60 },
            test_data: Default::default(),
            steps: actions
                .iter()
                .enumerate()
                .map(|(i, a)| SpecStep { index: i as u32 + 1, action: (*a).into(), expected: "ok".into() })
                .collect(),
            extra: Default::default(),
        }
    }

    fn log_of(script: &TestScript) -> ExecutionLog {
        execute_script(script, &default_registry(), &FixedClock::parse("2026-01-01T00:00:00Z").unwrap())
    }

    #[test]
    fn jaccard_example() {
        let a: BTreeSet<String> = tokenize("query connection from origin to dest").into_iter().collect();
        let b: BTreeSet<String> = tokenize("query connection").into_iter().collect();
        assert_eq!(jaccard(&a, &b), 2.0 / 6.0);
        let s = spec(&["query connection from origin to dest"]);
        let script = parse_script("script \"HAC-1\"\nstep 1 \"query connection\"\n  # nothing\n").unwrap();
        assert_eq!(eval_coverage(&s, &script).0, 1.0);
    }

    #[test]
    fn partial_coverage() {
        let s = spec(&["reset the system", "add train ICE1", "cancel train ICE1"]);
        let script = parse_script(
            "script \"HAC-1\"\nstep 1 \"reset the system\"\n  call reset_system()\nstep 2 \"add train ICE1\"\n  call reset_system()\n",
        )
        .unwrap();
        let (score, findings) = eval_coverage(&s, &script);
        assert_eq!(score, 2.0 / 3.0);
        assert_eq!(findings.len(), 1);
        assert_eq!(findings[0].location, Location::SpecStep(3));
    }

    #[test]
    fn semantic_rules() {
        let s = spec(&["reset the system", "query connection HNV BER", "reset system again"]);
        let script = parse_script(
            r#"script "HAC-1"
step 1 "reset the system"
  let r = call reset_system()
  assert r.status == "OK"
step 2 "query connection HNV BER"
  let q = call query_connection("HNV", "BER")
  assert q.count >= 1
step 3 "reset system again"
  call reset_system()
"#,
        )
        .unwrap();
        let (score, findings) = eval_semantic(&s, &script, &log_of(&script));
        assert_eq!(score, 1.0 / 3.0);
        assert_eq!(findings.len(), 2);
        assert!(findings[0].message.contains("assert_fail"));
        assert!(findings[1].message.contains("no assertion"));
    }

    #[test]
    fn improvement_lints() {
        let r = default_registry();
        let clean = parse_script(
            "script \"HAC-1\"\ndata\n  let o = \"HNV\"\nstep 1 \"a\"\n  let q = call query_connection(o, \"HNV\")\n  assert q.count == 0\nteardown\n  call reset_system()\n",
        )
        .unwrap();
        assert_eq!(eval_improvement(&clean, &r), (1.0, vec![]));

        let two = parse_script("script \"HAC-1\"\nstep 1 \"a\"\n  call reset_system()\n").unwrap();
        let (score, f) = eval_improvement(&two, &r);
        assert_eq!(score, 0.6);
        assert_eq!(f.iter().map(|f| f.code).collect::<Vec<_>>(), [FindingCode::L2NoAssert, FindingCode::L3NoTeardown]);

        let many = parse_script(
            "script \"HAC-1\"\nstep 1 \"a\"\n  call add_tain(\"A\", 1)\n  call add_tain(\"A\", 1)\n",
        )
        .unwrap();
        let (score, f) = eval_improvement(&many, &r);
        assert!(f.len() >= 6, "{f:?}");
        assert_eq!(score, 0.0);
        assert!(f.iter().any(|f| f.message.contains("nearest: `add_train`")));
    }

    #[test]
    fn verdicts() {
        let r = default_registry();
        let t = Thresholds::default();
        let s = spec(&["reset the system"]);
        let text = "script \"HAC-1\"\nstep 1 \"reset the system\"\n  let r = call reset_system()\n  assert r.status == \"OK\"\nteardown\n  call reset_system()\n";
        let log = log_of(&parse_script(text).unwrap());
        let m = evaluate(&s, text, Some(&log), &r, &t);
        assert_eq!(
            (m.syntax, m.executability, m.coverage, m.semantic, m.improvement, m.verdict),
            (1, 1.0, 1.0, 1.0, 1.0, Verdict::Pass)
        );

        let m = evaluate(&s, text, None, &r, &t);
        assert_eq!((m.executability, m.semantic, m.coverage, m.verdict), (0.0, 0.0, 1.0, Verdict::NotExecuted));

        let m = evaluate(&s, "script \"HAC-1\"\nstep 1 \"x\"\n  oops\n", Some(&log), &r, &t);
        assert_eq!(m.verdict, Verdict::FailSyntax);
        assert_eq!((m.syntax, m.coverage, m.improvement), (0, 0.0, 0.0));
        assert!(m.findings[0].message.contains("line 3"));
    }

    #[test]
    fn location_text_round_trip() {
        for loc in [
            Location::block(BlockKind::Teardown),
            Location::stmt(BlockKind::Step(3), 2),
            Location::SpecStep(4),
            Location::Line(9),
        ] {
            assert_eq!(loc.to_string().parse::<Location>().unwrap(), loc);
        }
    }
}
