//! Automation-gap arithmetic and the two Markdown reports: one per
//! specification for the test engineer, one per run for the test manager.

use std::collections::BTreeMap;
use std::fmt::Write;

use crate::evaluator::{match_steps, Finding, FindingCode, Verdict};
use crate::orchestrator::{RunSummary, SpecRunResult, SuiteCounts};
use crate::review::{unchanged_fraction, BlockDiff, DiffStatus};
use crate::script_dsl::parse_script;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapSnapshot {
    pub manual_count: u64,
    pub automated_count: u64,
    pub coverage_pct: f64,
    pub manual_pct: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GapError {
    #[error("the suite is empty")]
    EmptySuite,
    #[error("invalid projection: {0}")]
    InvalidProjection(String),
}

pub fn gap_metrics(manual_count: u64, automated_count: u64) -> Result<GapSnapshot, GapError> {
    let total = manual_count + automated_count;
    if total == 0 {
        return Err(GapError::EmptySuite);
    }
    let coverage_pct = 100.0 * automated_count as f64 / total as f64;
    Ok(GapSnapshot { manual_count, automated_count, coverage_pct, manual_pct: 100.0 - coverage_pct })
}

/// Per release: manual grows by `manual_growth_rate` (rounded to a whole
/// test) and loses `conversions_per_release` tests to automation.
pub fn project_gap(
    manual_count: u64,
    automated_count: u64,
    manual_growth_rate: f64,
    conversions_per_release: u64,
    releases: u32,
) -> Result<Vec<GapSnapshot>, GapError> {
    if !(manual_growth_rate >= 0.0 && manual_growth_rate.is_finite()) {
        return Err(GapError::InvalidProjection("growth rate must be a non-negative number".into()));
    }
    if releases < 1 {
        return Err(GapError::InvalidProjection("at least one release is required".into()));
    }
    let (mut manual, mut automated) = (manual_count, automated_count);
    (0..releases)
        .map(|_| {
            let grown = (manual as f64 * (1.0 + manual_growth_rate)).round() as u64;
            manual = grown.saturating_sub(conversions_per_release);
            automated += conversions_per_release;
            gap_metrics(manual, automated)
        })
        .collect()
}

fn pct(x: f64) -> String {
    format!("{x:.1}%")
}

fn suggestion(f: &Finding) -> String {
    match f.code {
        FindingCode::L1Hardcoded => "bind the literal in the data block and pass the name".into(),
        FindingCode::L2NoAssert => "add an assertion on the step's result record".into(),
        FindingCode::L3NoTeardown => "add a teardown block that calls reset_system()".into(),
        FindingCode::L4UnknownApi => match f.message.split("nearest: `").nth(1).and_then(|s| s.split('`').next()) {
            Some(near) => format!("rename the call to `{near}`"),
            None if f.message.contains("arguments") => "fix the argument list to match the API".into(),
            None => "replace the call with a registry API or remove it".into(),
        },
        FindingCode::L5DuplicateStmt => "remove the repeated statement".into(),
        FindingCode::CovMissedStep => "add a script step that implements this spec step".into(),
        FindingCode::SemFailedStep => "check the expected value against the spec and the execution log".into(),
        FindingCode::SynParseError => "fix the syntax at the reported line".into(),
    }
}

/// Paths of a spec's artifacts, relative to the run directory.
pub fn artifact_paths(result: &SpecRunResult) -> Vec<String> {
    let key = result.spec_key();
    let mut paths = Vec::new();
    for rec in &result.iterations {
        let it = format!("{key}/iteration_{}", rec.iteration);
        paths.push(format!("{it}/script.ats"));
        if rec.log.is_some() {
            paths.push(format!("{it}/execution.log.jsonl"));
        }
        paths.push(format!("{it}/evaluation.json"));
    }
    paths.push(format!("{key}/final/script.ats"));
    paths.push(format!("{key}/report_engineer.md"));
    paths
}

pub fn engineer_report(result: &SpecRunResult, diff: Option<&BlockDiff>) -> String {
    let spec = &result.spec;
    let mut out = String::new();
    let _ = writeln!(out, "# Engineer report: {}\n", spec.key);

    out.push_str("## Summary\n\n");
    let _ = writeln!(out, "- Specification: {} ({})", spec.key, spec.summary);
    let _ = writeln!(out, "- Functional area: {}; clarity: {}", spec.functional_area, spec.clarity);
    let _ = writeln!(out, "- Verdict: {}", result.final_verdict().as_str());
    let _ = writeln!(
        out,
        "- Iterations: {} (final script from iteration {}; stopped: {})",
        result.iterations.len(),
        result.final_iteration,
        result.stop_reason.as_str()
    );
    if result.retrieved.is_empty() {
        out.push_str("- Retrieved examples: none\n");
    } else {
        let refs: Vec<String> = result.retrieved.iter().map(|r| format!("{} ({:.4})", r.key, r.score)).collect();
        let _ = writeln!(out, "- Retrieved examples: {}", refs.join(", "));
    }
    for rec in result.iterations.iter().filter(|r| r.note.is_some()) {
        let _ = writeln!(out, "- Note (iteration {}): {}", rec.iteration, rec.note.as_deref().unwrap_or_default());
    }

    out.push_str("\n## Scores\n\n");
    out.push_str("| Iteration | Syntax | Executability | Coverage | Semantic | Improvement | Verdict |\n");
    out.push_str("|---|---|---|---|---|---|---|\n");
    for rec in &result.iterations {
        let m = &rec.matrix;
        let marker = if rec.iteration == result.final_iteration { " (final)" } else { "" };
        let _ = writeln!(
            out,
            "| {}{marker} | {} | {:.3} | {:.3} | {:.3} | {:.3} | {} |",
            rec.iteration,
            m.syntax,
            m.executability,
            m.coverage,
            m.semantic,
            m.improvement,
            m.verdict.as_str()
        );
    }

    out.push_str("\n## Findings\n\n");
    let mut any = false;
    for rec in &result.iterations {
        for f in &rec.matrix.findings {
            any = true;
            let _ = writeln!(
                out,
                "- iteration {}: `{}` at {}: {}. Suggested action: {}.",
                rec.iteration,
                f.code,
                f.location,
                f.message,
                suggestion(f)
            );
        }
    }
    if !any {
        out.push_str("none\n");
    }

    out.push_str("\n## Step Coverage Map\n\n");
    out.push_str("| Spec step | Action | Script step |\n|---|---|---|\n");
    let matches = match parse_script(result.final_script()) {
        Ok(script) => match_steps(spec, &script),
        Err(_) => vec![None; spec.steps.len()],
    };
    for (step, m) in spec.steps.iter().zip(&matches) {
        let target = m.map(|n| format!("step {n}")).unwrap_or_else(|| "MISSED".into());
        let _ = writeln!(out, "| {} | {} | {target} |", step.index, step.action.replace('|', "\\|"));
    }

    out.push_str("\n## Unchanged Fraction\n\n");
    match diff {
        Some(d) => {
            let _ = writeln!(
                out,
                "{:.3}: {} of {} generated semantic blocks unchanged ({} modified, {} removed, {} added). \
Blocks are data, setup, each step and teardown; comments and layout are ignored.",
                unchanged_fraction(d),
                d.count(DiffStatus::Unchanged),
                d.generated_blocks(),
                d.count(DiffStatus::Modified),
                d.count(DiffStatus::Removed),
                d.count(DiffStatus::Added)
            );
        }
        None => out.push_str("not measured: no refactored script supplied.\n"),
    }

    out.push_str("\n## Artifacts\n\n");
    for p in artifact_paths(result) {
        let _ = writeln!(out, "- {p}");
    }
    out
}

pub fn manager_report(summary: &RunSummary) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# Manager report: run {}\n", summary.run_id);

    out.push_str("## Run Overview\n\n");
    let _ = writeln!(out, "- Run: {} (seed {})", summary.run_id, summary.seed);
    let _ = writeln!(out, "- Specifications processed: {}", summary.results.len());
    let _ = writeln!(out, "- Inputs skipped: {}\n", summary.skipped.len());
    out.push_str("| Verdict | Count |\n|---|---|\n");
    let totals = summary.totals();
    for (v, n) in &totals {
        let _ = writeln!(out, "| {} | {n} |", v.as_str());
    }
    let processed = summary.results.len();
    if processed == 0 {
        out.push_str("\nPass rate: no data\n");
    } else {
        let pass = totals[&Verdict::Pass];
        let _ = writeln!(out, "\nPass rate: {} ({pass} of {processed})", pct(100.0 * pass as f64 / processed as f64));
    }

    out.push_str("\n## Automation Gap\n\n");
    match (summary.suite, processed) {
        (Some(SuiteCounts { manual, automated }), p) if p > 0 => match gap_metrics(manual, automated) {
            Ok(before) => {
                let candidates = (totals[&Verdict::Pass] as u64).min(manual);
                let after = gap_metrics(manual - candidates, automated + candidates).expect("same non-empty total");
                out.push_str("| | Manual | Automated | Coverage | Manual share |\n|---|---|---|---|---|\n");
                for (label, s) in [("Before", before), ("After", after)] {
                    let _ = writeln!(
                        out,
                        "| {label} | {} | {} | {} | {} |",
                        s.manual_count,
                        s.automated_count,
                        pct(s.coverage_pct),
                        pct(s.manual_pct)
                    );
                }
                let _ = writeln!(
                    out,
                    "\n\"After\" counts this run's {candidates} passing scripts as conversion candidates, pending review."
                );
            }
            Err(_) => out.push_str("no data\n"),
        },
        _ => out.push_str("no data\n"),
    }

    out.push_str("\n## Per-Area Breakdown\n\n");
    if processed == 0 {
        out.push_str("no data\n");
    } else {
        let mut areas: BTreeMap<&str, [usize; 4]> = BTreeMap::new();
        for r in &summary.results {
            let slot = Verdict::ALL.iter().position(|v| *v == r.final_verdict()).expect("known verdict");
            areas.entry(r.spec.functional_area.as_str()).or_default()[slot] += 1;
        }
        out.push_str("| Area | Total | pass | revise | fail_syntax | not_executed |\n|---|---|---|---|---|---|\n");
        for (area, c) in &areas {
            let area = if area.is_empty() { "(none)" } else { area };
            let _ = writeln!(out, "| {area} | {} | {} | {} | {} | {} |", c.iter().sum::<usize>(), c[0], c[1], c[2], c[3]);
        }
    }

    out.push_str("\n## Skipped Inputs\n\n");
    if summary.skipped.is_empty() {
        out.push_str("no data\n");
    } else {
        for s in &summary.skipped {
            let _ = writeln!(out, "- {}: {}", s.file, s.reason);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn gap_examples() {
        let g = gap_metrics(850, 150).unwrap();
        assert_eq!((g.coverage_pct, g.manual_pct), (15.0, 85.0));
        assert_eq!(gap_metrics(0, 100).unwrap().coverage_pct, 100.0);
        assert_eq!(gap_metrics(100, 0).unwrap().coverage_pct, 0.0);
        assert_eq!(gap_metrics(0, 0), Err(GapError::EmptySuite));
    }

    #[test]
    fn projection_example() {
        let p = project_gap(800, 140, 0.10, 30, 1).unwrap();
        assert_eq!((p[0].manual_count, p[0].automated_count), (850, 170));
        // 170 / 1020 and 140 / 940, by hand.
        assert!((p[0].coverage_pct - 16.666_666).abs() < 1e-4);
        let gain = p[0].coverage_pct - gap_metrics(800, 140).unwrap().coverage_pct;
        assert!((gain - 1.773_050).abs() < 1e-4);
        assert!(project_gap(800, 140, -0.1, 30, 1).is_err());
        assert!(project_gap(800, 140, 0.1, 30, 0).is_err());
    }

    proptest! {
        #[test]
        fn gap_identities(m in 0u64..1_000_000, a in 0u64..1_000_000) {
            prop_assume!(m + a > 0);
            let g = gap_metrics(m, a).unwrap();
            prop_assert!((g.coverage_pct + g.manual_pct - 100.0).abs() < 1e-9);
            prop_assert!((g.coverage_pct - 100.0 * a as f64 / (m + a) as f64).abs() < 1e-9);
        }

        #[test]
        fn projection_monotonicity(m in 1u64..100_000, a in 1u64..100_000, g in 0.01f64..0.5, c in 1u64..100, r in 1u32..6) {
            let before = gap_metrics(m, a).unwrap().coverage_pct;
            let no_conv = project_gap(m, a, g, 0, r).unwrap();
            // Growth of a whole test needs m * g >= 0.5.
            if m as f64 * g >= 0.5 {
                prop_assert!(no_conv[0].coverage_pct < before);
            }
            let no_growth = project_gap(m, a, 0.0, c, r).unwrap();
            prop_assert!(no_growth[0].coverage_pct > before);
            for (i, s) in no_growth.iter().enumerate() {
                prop_assert_eq!(s.automated_count, a + c * (i as u64 + 1));
            }
        }
    }
}
