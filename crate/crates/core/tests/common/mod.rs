#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use proptest::prelude::*;
use specpilot::clock::FixedClock;
use specpilot::exec_harness::{default_registry, LocalExecutor};
use specpilot::generator::TemplateBackend;
use specpilot::orchestrator::{run_batch, BatchDeps, RunConfig, RunSummary};
use specpilot::retrieval::{build_index, CorpusIndex, HistoricalPair};
use specpilot::script_dsl::{
    Arg, Binding, CallExpr, CmpOp, Comparison, Literal, Operand, Statement, StepBlock, TestScript, KEYWORDS,
};
use specpilot::spec_model::{generate_corpus, SpecDocument};

pub const CLOCK: &str = "2026-05-01T12:00:00Z";

pub fn clock() -> Arc<FixedClock> {
    Arc::new(FixedClock::parse(CLOCK).unwrap())
}

// ---- random scripts ----

fn name() -> impl Strategy<Value = String> {
    "[a-z_][a-z0-9_]{0,7}".prop_filter("keywords are reserved", |s| !KEYWORDS.contains(&s.as_str()))
}

fn text() -> impl Strategy<Value = String> {
    proptest::collection::vec(
        prop_oneof![
            8 => proptest::char::range('a', 'z'),
            2 => Just(' '),
            1 => Just('"'),
            1 => Just('\\'),
            1 => Just('\n'),
            1 => Just('\t'),
            1 => Just('#'),
            1 => Just('é'),
        ],
        0..12,
    )
    .prop_map(|cs| cs.into_iter().collect())
}

fn literal() -> impl Strategy<Value = Literal> {
    prop_oneof![any::<bool>().prop_map(Literal::Bool), any::<i64>().prop_map(Literal::Int), text().prop_map(Literal::Str)]
}

fn call() -> impl Strategy<Value = CallExpr> {
    (name(), proptest::collection::vec(prop_oneof![literal().prop_map(Arg::Lit), name().prop_map(Arg::Var)], 0..4))
        .prop_map(|(name, args)| CallExpr { name, args })
}

fn operand() -> impl Strategy<Value = Operand> {
    prop_oneof![
        literal().prop_map(Operand::Lit),
        name().prop_map(Operand::Var),
        (name(), name()).prop_map(|(v, f)| Operand::Field(v, f)),
    ]
}

fn comment() -> impl Strategy<Value = String> {
    "([a-z0-9#]{1,6}( [a-z0-9#]{1,6}){0,3})?"
}

fn statement() -> impl Strategy<Value = Statement> {
    prop_oneof![
        3 => (name(), call()).prop_map(|(n, c)| Statement::Let(n, c)),
        2 => call().prop_map(Statement::Call),
        3 => (operand(), 0usize..6, operand())
            .prop_map(|(lhs, op, rhs)| Statement::Assert(Comparison { lhs, op: CmpOp::ALL[op], rhs })),
        1 => comment().prop_map(Statement::Comment),
    ]
}

fn block() -> impl Strategy<Value = Vec<Statement>> {
    proptest::collection::vec(statement(), 1..5)
}

fn maybe_block() -> impl Strategy<Value = Vec<Statement>> {
    prop_oneof![Just(Vec::new()), block()]
}

pub fn script_strategy() -> impl Strategy<Value = TestScript> {
    (
        "[A-Z]{1,4}-[0-9]{1,4}",
        proptest::collection::vec((name(), literal()).prop_map(|(name, value)| Binding { name, value }), 0..4),
        maybe_block(),
        proptest::collection::vec((text().prop_filter("titles are non-empty", |t| !t.trim().is_empty()), block()), 1..5),
        maybe_block(),
    )
        .prop_map(|(header_key, data, setup, steps, teardown)| TestScript {
            header_key,
            data,
            setup,
            steps: steps
                .into_iter()
                .enumerate()
                .map(|(i, (title, statements))| StepBlock { number: i as u32 + 1, title, statements })
                .collect(),
            teardown,
        })
}

/// Applies mutation `kind` (mod 9) to canonical script text. Returns the
/// invalid text and the line the parser must report.
pub fn break_script(text: &str, kind: usize) -> (String, usize) {
    let mut lines: Vec<String> = text.lines().map(str::to_owned).collect();
    let step = lines.iter().position(|l| l.starts_with("step ")).expect("scripts have a step");
    let n = lines.len();
    let line = match kind % 9 {
        0 => {
            lines[0] = lines[0].replacen("script", "scrip", 1);
            1
        }
        1 => {
            lines.insert(step + 1, "  frobnicate x".into());
            step + 2
        }
        2 => {
            lines[step] = lines[step].replacen("step 1 ", "step 0 ", 1);
            step + 1
        }
        3 => {
            lines[0] = lines[0].trim_end_matches('"').to_owned();
            1
        }
        4 => {
            lines.insert(1, "# stray".into());
            2
        }
        5 => {
            lines.insert(step + 1, "  let = call f()".into());
            step + 2
        }
        6 => {
            lines.insert(step + 1, "  assert x ! y".into());
            step + 2
        }
        7 => {
            lines.push("data".into());
            lines.push("  let q = 1".into());
            n + 1
        }
        _ => {
            lines.push(format!("step {} \"late\"", n + 100));
            n + 1
        }
    };
    (lines.join("\n") + "\n", line)
}

// ---- corpus and runs ----

pub struct Workspace {
    pub dir: tempfile::TempDir,
    pub specs: Vec<SpecDocument>,
    pub pairs: Vec<HistoricalPair>,
}

impl Workspace {
    pub fn new(seed: u64, count: usize) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let (specs, pairs) = generate_corpus(seed, count, 6).unwrap();
        let input = dir.path().join("specs");
        fs::create_dir_all(&input).unwrap();
        for s in &specs {
            fs::write(input.join(format!("{}.json", s.key)), s.to_json_string()).unwrap();
        }
        Workspace { dir, specs, pairs }
    }

    pub fn input(&self) -> PathBuf {
        self.dir.path().join("specs")
    }

    pub fn index(&self) -> CorpusIndex {
        build_index(self.pairs.clone()).unwrap()
    }

    pub fn run(&self, out: &str, config: RunConfig) -> RunSummary {
        let clock = clock();
        let registry = default_registry();
        let backend = TemplateBackend { registry: registry.clone() };
        let executor = LocalExecutor::new(registry.clone(), clock.clone());
        let index = self.index();
        let deps = BatchDeps { index: &index, backend: &backend, executor: &executor, registry: &registry, clock: clock.as_ref() };
        let config = RunConfig { output_root: self.dir.path().join(out), ..config };
        run_batch(&self.input(), &config, &deps).unwrap()
    }
}

/// Every file below `root` with its bytes, by relative path.
pub fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(PathBuf, Vec<u8>)>) {
        let Ok(entries) = fs::read_dir(dir) else { return };
        for e in entries {
            let path = e.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.push((path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, &mut out);
    out.sort();
    out
}
