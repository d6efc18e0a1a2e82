//! Sandboxed script execution against a simulated system under test, and
//! the executor contract a remote CI system would also satisfy.
//!
//! Assert failures are logged and execution continues within the block. A
//! runtime error (unknown API, unbound variable, missing field, type
//! mismatch) aborts the rest of its block; the next block still runs.

mod registry;
mod sut;

use std::collections::HashMap;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::clock::Clock;
use crate::script_dsl::{
    parse_script, render_statement, Arg, BlockKind, CmpOp, Comparison, Literal, Operand, ParseError,
    Statement, TestScript,
};
use crate::spec_model::CiConfig;

pub use registry::{check_api_names, default_registry, ApiDef, ApiProblem, ApiRegistry, UnknownApi};
pub use sut::{Record, SutState, Train};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Ok,
    AssertFail,
    RuntimeError,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Ok => "ok",
            Outcome::AssertFail => "assert_fail",
            Outcome::RuntimeError => "runtime_error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub block: BlockKind,
    /// 1-based position inside the block.
    pub stmt: usize,
    pub text: String,
    pub outcome: Outcome,
    pub detail: String,
    pub values: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionLog {
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
    pub entries: Vec<LogEntry>,
}

impl ExecutionLog {
    /// One JSON object per entry and line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("log entries serialize"));
            out.push('\n');
        }
        out
    }

    pub fn entries_from_jsonl(text: &str) -> Result<Vec<LogEntry>, serde_json::Error> {
        text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect()
    }

    pub fn block_entries(&self, block: BlockKind) -> impl Iterator<Item = &LogEntry> {
        self.entries.iter().filter(move |e| e.block == block)
    }

    pub fn has_runtime_errors(&self) -> bool {
        self.entries.iter().any(|e| e.outcome == Outcome::RuntimeError)
    }
}

#[derive(Debug, Clone)]
enum RtValue {
    Lit(Literal),
    Record(Record),
}

fn literal_json(l: &Literal) -> Value {
    match l {
        Literal::Bool(b) => json!(b),
        Literal::Int(i) => json!(i),
        Literal::Str(s) => json!(s),
    }
}

fn record_json(r: &Record) -> Value {
    Value::Object(r.iter().map(|(k, v)| (k.clone(), literal_json(v))).collect())
}

struct Interpreter<'a> {
    registry: &'a ApiRegistry,
    sut: SutState,
    env: HashMap<String, RtValue>,
}

enum StepResult {
    Ok(String, Value),
    AssertFail(String, Value),
    RuntimeError(String),
}

impl Interpreter<'_> {
    fn arg(&self, a: &Arg) -> Result<Literal, String> {
        match a {
            Arg::Lit(l) => Ok(l.clone()),
            Arg::Var(v) => match self.env.get(v) {
                Some(RtValue::Lit(l)) => Ok(l.clone()),
                Some(RtValue::Record(_)) => Err(format!("`{v}` holds a call result, not a literal")),
                None => Err(format!("unbound variable `{v}`")),
            },
        }
    }

    fn operand(&self, o: &Operand) -> Result<Literal, String> {
        match o {
            Operand::Lit(l) => Ok(l.clone()),
            Operand::Var(v) => match self.env.get(v) {
                Some(RtValue::Lit(l)) => Ok(l.clone()),
                Some(RtValue::Record(_)) => Err(format!("type mismatch: `{v}` is a record")),
                None => Err(format!("unbound variable `{v}`")),
            },
            Operand::Field(v, f) => match self.env.get(v) {
                Some(RtValue::Record(r)) => {
                    r.get(f).cloned().ok_or_else(|| format!("missing field `{v}.{f}`"))
                }
                Some(RtValue::Lit(_)) => Err(format!("type mismatch: `{v}` has no fields")),
                None => Err(format!("unbound variable `{v}`")),
            },
        }
    }

    fn compare(&self, cmp: &Comparison) -> StepResult {
        let (lhs, rhs) = match (self.operand(&cmp.lhs), self.operand(&cmp.rhs)) {
            (Ok(l), Ok(r)) => (l, r),
            (Err(e), _) | (_, Err(e)) => return StepResult::RuntimeError(e),
        };
        let ordering = match (&lhs, &rhs) {
            (Literal::Int(a), Literal::Int(b)) => a.cmp(b),
            (Literal::Str(a), Literal::Str(b)) => a.cmp(b),
            (Literal::Bool(a), Literal::Bool(b)) if cmp.op.is_equality() => a.cmp(b),
            (Literal::Bool(_), Literal::Bool(_)) => {
                return StepResult::RuntimeError(format!("operator `{}` is not defined for bool", cmp.op.as_str()))
            }
            _ => {
                return StepResult::RuntimeError(format!(
                    "type mismatch in comparison: {} {} {}",
                    lhs.type_name(),
                    cmp.op.as_str(),
                    rhs.type_name()
                ))
            }
        };
        use std::cmp::Ordering::*;
        let holds = match cmp.op {
            CmpOp::Eq => ordering == Equal,
            CmpOp::Ne => ordering != Equal,
            CmpOp::Lt => ordering == Less,
            CmpOp::Le => ordering != Greater,
            CmpOp::Gt => ordering == Greater,
            CmpOp::Ge => ordering != Less,
        };
        let values = json!({ "lhs": literal_json(&lhs), "rhs": literal_json(&rhs) });
        let detail = format!("{lhs} {} {rhs}", cmp.op.as_str());
        if holds {
            StepResult::Ok(detail, values)
        } else {
            StepResult::AssertFail(format!("assertion failed: {detail}"), values)
        }
    }

    fn run(&mut self, stmt: &Statement) -> StepResult {
        match stmt {
            Statement::Comment(_) => StepResult::Ok("comment".into(), Value::Object(Map::new())),
            Statement::Assert(cmp) => self.compare(cmp),
            Statement::Let(_, call) | Statement::Call(call) => {
                let Some(def) = self.registry.get(&call.name) else {
                    return StepResult::RuntimeError(format!("unknown API `{}`", call.name));
                };
                if def.arity() != call.args.len() {
                    return StepResult::RuntimeError(format!(
                        "`{}` takes {} arguments, got {}",
                        call.name,
                        def.arity(),
                        call.args.len()
                    ));
                }
                let args = match call.args.iter().map(|a| self.arg(a)).collect::<Result<Vec<_>, _>>() {
                    Ok(a) => a,
                    Err(e) => return StepResult::RuntimeError(e),
                };
                let record = match self.sut.invoke(&call.name, &args) {
                    Ok(r) => r,
                    Err(e) => return StepResult::RuntimeError(e),
                };
                let status = record.get("status").map(ToString::to_string).unwrap_or_default();
                let values = record_json(&record);
                if let Statement::Let(name, _) = stmt {
                    self.env.insert(name.clone(), RtValue::Record(record));
                }
                StepResult::Ok(format!("{} returned status {status}", call.name), values)
            }
        }
    }
}

/// Runs `script` on a fresh SUT. Never fails: problems become log entries.
pub fn execute_script(script: &TestScript, registry: &ApiRegistry, clock: &dyn Clock) -> ExecutionLog {
    let started_at = clock.now();
    let mut interp = Interpreter { registry, sut: SutState::default(), env: HashMap::new() };
    let mut entries = Vec::new();

    for (i, b) in script.data.iter().enumerate() {
        interp.env.insert(b.name.clone(), RtValue::Lit(b.value.clone()));
        entries.push(LogEntry {
            block: BlockKind::Data,
            stmt: i + 1,
            text: format!("let {} = {}", b.name, b.value),
            outcome: Outcome::Ok,
            detail: "bound".into(),
            values: json!({ b.name.clone(): literal_json(&b.value) }),
        });
    }

    for (block, stmts) in script.statement_blocks() {
        for (i, stmt) in stmts.iter().enumerate() {
            let (outcome, detail, values, abort) = match interp.run(stmt) {
                StepResult::Ok(d, v) => (Outcome::Ok, d, v, false),
                StepResult::AssertFail(d, v) => (Outcome::AssertFail, d, v, false),
                StepResult::RuntimeError(d) => (Outcome::RuntimeError, d, Value::Object(Map::new()), true),
            };
            entries.push(LogEntry { block, stmt: i + 1, text: render_statement(stmt), outcome, detail, values });
            if abort {
                break;
            }
        }
    }

    ExecutionLog { started_at, finished_at: clock.now(), entries }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Availability {
    Available,
    Unavailable,
}

#[derive(Debug, thiserror::Error)]
pub enum ExecutorError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("script rejected: {0}")]
    Rejected(ParseError),
}

/// Where candidate scripts run. The orchestrator checks `availability` once
/// per iteration and never calls `execute` after an `Unavailable` answer.
pub trait CiExecutor: Send + Sync {
    fn availability(&self) -> Availability;
    fn execute(&self, script_text: &str, ci: &CiConfig) -> Result<ExecutionLog, ExecutorError>;
}

/// In-process sandbox executor.
pub struct LocalExecutor {
    registry: ApiRegistry,
    clock: Arc<dyn Clock>,
}

impl LocalExecutor {
    pub fn new(registry: ApiRegistry, clock: Arc<dyn Clock>) -> Self {
        LocalExecutor { registry, clock }
    }
}

impl CiExecutor for LocalExecutor {
    fn availability(&self) -> Availability {
        Availability::Available
    }

    fn execute(&self, script_text: &str, _ci: &CiConfig) -> Result<ExecutionLog, ExecutorError> {
        let script = parse_script(script_text).map_err(ExecutorError::Rejected)?;
        Ok(execute_script(&script, &self.registry, self.clock.as_ref()))
    }
}

/// Placeholder for a remote CI job runner (`CiConfig::job` on a build
/// server). It reports itself unavailable, so runs using it stop after one
/// unexecuted iteration per spec.
#[derive(Debug, Clone, Default)]
pub struct RemoteCiExecutor {
    pub endpoint: Option<String>,
}

impl CiExecutor for RemoteCiExecutor {
    fn availability(&self) -> Availability {
        Availability::Unavailable
    }

    fn execute(&self, _script_text: &str, ci: &CiConfig) -> Result<ExecutionLog, ExecutorError> {
        Err(ExecutorError::Transport(format!(
            "no remote CI client for job `{}` at {}",
            ci.job,
            self.endpoint.as_deref().unwrap_or("<unset>")
        )))
    }
}
