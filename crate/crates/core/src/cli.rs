//! Command-line entry point. `dispatch` is the whole program minus process
//! exit, so tests can drive it with in-memory streams.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use crate::clock::{Clock, FixedClock, SystemClock};
use crate::exec_harness::{default_registry, CiExecutor, LocalExecutor, RemoteCiExecutor};
use crate::generator::{GenerationBackend, RemoteBackend, TemplateBackend};
use crate::orchestrator::{
    read_trace, replay_trace, run_batch, write_reports, BackendKind, BatchDeps, RunConfig, SuiteCounts,
};
use crate::retrieval::{build_index, load_corpus, write_corpus, CorpusIndex};
use crate::review::{
    approve, diff_blocks, render_diff, Decision, RegressionRegistry, ReviewDecision,
};
use crate::script_dsl::parse_script;
use crate::spec_model::generate_corpus;

pub const REMOTE_URL_ENV: &str = "SPECPILOT_REMOTE_URL";

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ExecutorKind {
    Local,
    Remote,
}

/// Config file contents: every run setting plus the locations and clock the
/// CLI wires up. Flags override what the file says.
#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct CliConfig {
    #[serde(flatten)]
    pub run: RunConfig,
    pub corpus_dir: Option<PathBuf>,
    pub regression_dir: PathBuf,
    /// RFC 3339 instant used instead of the system clock.
    pub fixed_clock: Option<String>,
    pub executor: ExecutorKind,
    pub remote_timeout_s: u64,
}

impl Default for CliConfig {
    fn default() -> Self {
        CliConfig {
            run: RunConfig::default(),
            corpus_dir: None,
            regression_dir: "regression".into(),
            fixed_clock: None,
            executor: ExecutorKind::Local,
            remote_timeout_s: 60,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "specpilot", version, about = "Generate, evaluate and review test scripts from test specifications")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a batch over a folder of specification files.
    Generate(GenerateArgs),
    /// Write a synthetic corpus: specifications plus historical pairs.
    Corpus(CorpusArgs),
    /// Compare scripts or record a review decision.
    #[command(subcommand)]
    Review(ReviewCommand),
    /// Re-render the reports of a recorded run from its trace.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Args)]
struct Common {
    /// JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory that holds `runs/`.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    regression_dir: Option<PathBuf>,
    /// Use this RFC 3339 instant as the clock.
    #[arg(long)]
    fixed_clock: Option<String>,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    backend: Option<BackendArg>,
    #[arg(long, value_enum)]
    executor: Option<ExecutorKind>,
    /// Folder of historical pairs used for retrieval.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    max_iterations: Option<u32>,
    #[arg(long)]
    retrieve_k: Option<usize>,
    /// Specifications processed in parallel.
    #[arg(long)]
    jobs: Option<usize>,
    /// Manual tests in the existing suite, for the manager report.
    #[arg(long, requires = "suite_automated")]
    suite_manual: Option<u64>,
    #[arg(long, requires = "suite_manual")]
    suite_automated: Option<u64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BackendArg {
    Template,
    Remote,
}

#[derive(Debug, Args)]
struct CorpusArgs {
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 61)]
    count: usize,
    #[arg(long, default_value_t = 6)]
    areas: usize,
}

#[derive(Debug, Subcommand)]
enum ReviewCommand {
    /// Semantic-block diff and unchanged fraction.
    Diff {
        #[arg(long)]
        generated: PathBuf,
        #[arg(long)]
        refactored: PathBuf,
    },
    /// Promote the run's final script into the regression suite.
    Accept(DecisionArgs),
    /// Promote an engineer-refactored script (`--script`, default: the final script).
    Refactor(DecisionArgs),
    /// Record that the script will be rewritten by hand; nothing is promoted.
    Rewrite(DecisionArgs),
}

#[derive(Debug, Args)]
struct DecisionArgs {
    #[arg(long)]
    spec: String,
    #[arg(long)]
    run: String,
    #[arg(long)]
    reviewer: String,
    /// Script to promote instead of the run's final script (refactor only).
    #[arg(long)]
    script: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long)]
    run: String,
    #[command(flatten)]
    common: Common,
}

struct Failure(i32, String);

fn fail(msg: impl ToString) -> Failure {
    Failure(EXIT_FAILURE, msg.to_string())
}

fn load_config(common: &Common) -> Result<CliConfig, Failure> {
    let mut config = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure(EXIT_USAGE, format!("cannot read config {}: {e}", path.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| Failure(EXIT_USAGE, format!("invalid config {}: {e}", path.display())))?
        }
        None => CliConfig::default(),
    };
    if let Some(o) = &common.output {
        config.run.output_root = o.clone();
    }
    if let Some(r) = &common.regression_dir {
        config.regression_dir = r.clone();
    }
    if let Some(c) = &common.fixed_clock {
        config.fixed_clock = Some(c.clone());
    }
    Ok(config)
}

fn make_clock(config: &CliConfig) -> Result<Arc<dyn Clock>, Failure> {
    match &config.fixed_clock {
        Some(s) => FixedClock::parse(s)
            .map(|c| Arc::new(c) as Arc<dyn Clock>)
            .map_err(|e| Failure(EXIT_USAGE, format!("invalid fixed clock `{s}`: {e}"))),
        None => Ok(Arc::new(SystemClock)),
    }
}

fn generate(args: GenerateArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let mut config = load_config(&args.common)?;
    let run = &mut config.run;
    if let Some(s) = args.seed {
        run.seed = s;
    }
    if let Some(b) = args.backend {
        run.backend = match b {
            BackendArg::Template => BackendKind::Template,
            BackendArg::Remote => BackendKind::Remote,
        };
    }
    if let Some(n) = args.max_iterations {
        run.max_iterations = n;
    }
    if let Some(k) = args.retrieve_k {
        run.retrieve_k = k;
    }
    if let Some(j) = args.jobs {
        run.jobs = j;
    }
    if let (Some(manual), Some(automated)) = (args.suite_manual, args.suite_automated) {
        run.suite = Some(SuiteCounts { manual, automated });
    }
    if let Some(e) = args.executor {
        config.executor = e;
    }
    if let Some(c) = args.corpus {
        config.corpus_dir = Some(c);
    }
    config.run.validate().map_err(|e| Failure(EXIT_USAGE, e))?;

    let clock = make_clock(&config)?;
    let registry = default_registry();
    let index = match &config.corpus_dir {
        Some(dir) => build_index(load_corpus(dir).map_err(fail)?).map_err(fail)?,
        None => CorpusIndex::empty(),
    };
    let backend: Box<dyn GenerationBackend> = match config.run.backend {
        BackendKind::Template => Box::new(TemplateBackend { registry: registry.clone() }),
        BackendKind::Remote => {
            let url = std::env::var(REMOTE_URL_ENV)
                .map_err(|_| fail(format!("the remote backend needs {REMOTE_URL_ENV}")))?;
            Box::new(RemoteBackend::new(url, Duration::from_secs(config.remote_timeout_s)))
        }
    };
    let executor: Box<dyn CiExecutor> = match config.executor {
        ExecutorKind::Local => Box::new(LocalExecutor::new(registry.clone(), clock.clone())),
        ExecutorKind::Remote => Box::new(RemoteCiExecutor::default()),
    };
    let deps = BatchDeps {
        index: &index,
        backend: backend.as_ref(),
        executor: executor.as_ref(),
        registry: &registry,
        clock: clock.as_ref(),
    };
    let summary = run_batch(&args.input, &config.run, &deps).map_err(fail)?;
    let run_dir = config.run.output_root.join("runs").join(&summary.run_id);
    if summary.results.is_empty() {
        return Err(fail(format!("no specifications found in {}", args.input.display())));
    }
    let totals: Vec<String> = summary.totals().iter().map(|(v, n)| format!("{} {n}", v.as_str())).collect();
    let _ = writeln!(out, "run {}: {} specifications ({})", summary.run_id, summary.results.len(), totals.join(", "));
    if !summary.skipped.is_empty() {
        let _ = writeln!(out, "skipped {} input files", summary.skipped.len());
    }
    let _ = writeln!(out, "artifacts: {}", run_dir.display());
    Ok(())
}

fn corpus(args: CorpusArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let (specs, pairs) = generate_corpus(args.seed, args.count, args.areas).map_err(|e| Failure(EXIT_USAGE, e.to_string()))?;
    let spec_dir = args.out.join("specs");
    let hist_dir = args.out.join("history");
    std::fs::create_dir_all(&spec_dir).map_err(fail)?;
    for s in &specs {
        std::fs::write(spec_dir.join(format!("{}.json", s.key)), s.to_json_string()).map_err(fail)?;
    }
    write_corpus(&hist_dir, &pairs).map_err(fail)?;
    let _ = writeln!(out, "wrote {} specifications to {}", specs.len(), spec_dir.display());
    let _ = writeln!(out, "wrote {} historical pairs to {}", pairs.len(), hist_dir.display());
    Ok(())
}

fn read_script(path: &Path) -> Result<crate::script_dsl::TestScript, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| fail(format!("{}: {e}", path.display())))?;
    parse_script(&text).map_err(|e| fail(format!("{}: {e}", path.display())))
}

fn review(cmd: ReviewCommand, out: &mut dyn Write) -> Result<(), Failure> {
    let (decision, args) = match cmd {
        ReviewCommand::Diff { generated, refactored } => {
            let diff = diff_blocks(&read_script(&generated)?, &read_script(&refactored)?);
            let _ = write!(out, "{}", render_diff(&diff));
            return Ok(());
        }
        ReviewCommand::Accept(a) => (Decision::Accept, a),
        ReviewCommand::Refactor(a) => (Decision::Refactor, a),
        ReviewCommand::Rewrite(a) => (Decision::Rewrite, a),
    };
    if args.script.is_some() && decision != Decision::Refactor {
        return Err(Failure(EXIT_USAGE, "--script is only accepted by `review refactor`".into()));
    }
    let config = load_config(&args.common)?;
    let clock = make_clock(&config)?;
    let spec_dir = config.run.output_root.join("runs").join(&args.run).join(&args.spec);
    if !spec_dir.join("final").join("script.ats").is_file() {
        return Err(fail(format!("artifact not found: no final script for {} in run {}", args.spec, args.run)));
    }
    let script_path = args.script.unwrap_or_else(|| spec_dir.join("final").join("script.ats"));
    let registry = RegressionRegistry::new(&config.regression_dir);
    let review = ReviewDecision { decision, reviewer: args.reviewer, timestamp: clock.now() };
    let entry = approve(&registry, &args.spec, &args.run, &review, &script_path).map_err(fail)?;
    let _ = write!(out, "recorded {} for {} in run {} by {}", decision.as_str(), entry.spec_key, entry.run_id, entry.reviewer);
    if entry.promoted {
        let _ = writeln!(out, "; promoted to {}", registry.script_path(&entry.spec_key).display());
    } else {
        let _ = writeln!(out, "; nothing promoted");
    }
    Ok(())
}

fn report(args: ReportArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let config = load_config(&args.common)?;
    let run_dir = config.run.output_root.join("runs").join(&args.run);
    let trace = run_dir.join("trace.jsonl");
    if !trace.is_file() {
        return Err(fail(format!("artifact not found: {}", trace.display())));
    }
    let summary = replay_trace(&read_trace(&trace).map_err(fail)?).map_err(fail)?;
    write_reports(&run_dir, &summary).map_err(fail)?;
    let _ = writeln!(
        out,
        "re-rendered report_manager.md and {} engineer reports in {}",
        summary.results.len(),
        run_dir.display()
    );
    Ok(())
}

/// Parses `argv` (program name first) and runs the command. Returns the
/// process exit code: 0 success, 1 domain failure, 2 usage error.
pub fn dispatch<I, S>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{e}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{}", e.render());
                    EXIT_USAGE
                }
            };
        }
    };
    let result = match cli.command {
        Command::Generate(a) => generate(a, out),
        Command::Corpus(a) => corpus(a, out),
        Command::Review(c) => review(c, out),
        Command::Report(a) => report(a, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(Failure(code, msg)) => {
            let _ = writeln!(err, "error: {msg}");
            code
        }
    }
}
