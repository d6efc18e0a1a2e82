use std::fmt::Write;

use super::GenerationRequest;
use crate::script_dsl::GRAMMAR_EBNF;

pub const INSTRUCTION: &str = "Write exactly one complete test script in the grammar above that implements every step of the SPECIFICATION, binds its test data in the data block, asserts each expected result, and ends with a teardown. Reply with the script text only.";

fn section(out: &mut String, name: &str) {
    let _ = writeln!(out, "===== {name} =====");
}

/// Builds the text prompt sent to a remote generation backend. The result
/// depends only on the request.
pub fn assemble_prompt(request: &GenerationRequest<'_>) -> String {
    let mut out = String::new();
    section(&mut out, "SPECIFICATION");
    out.push_str(&request.spec.to_json_string());
    out.push('\n');

    section(&mut out, "EXAMPLES");
    if request.retrieved.is_empty() {
        out.push_str("(none)\n");
    }
    for (i, hit) in request.retrieved.iter().enumerate() {
        let _ = writeln!(out, "--- EXAMPLE {} (key {}, score {:.4}) ---", i + 1, hit.pair.key(), hit.score);
        out.push_str("SPEC:\n");
        out.push_str(&hit.pair.spec.to_json_string());
        out.push_str("SCRIPT:\n");
        out.push_str(&hit.pair.script_text);
        if !hit.pair.script_text.ends_with('\n') {
            out.push('\n');
        }
    }
    out.push('\n');

    section(&mut out, "GRAMMAR");
    out.push_str(GRAMMAR_EBNF);
    out.push_str("\n\n");

    if request.iteration > 1 && !request.prior_findings.is_empty() {
        section(&mut out, "FINDINGS");
        for f in request.prior_findings {
            let _ = writeln!(out, "- {} at {}: {}", f.code, f.location, f.message);
        }
        out.push('\n');
    }

    section(&mut out, "INSTRUCTION");
    out.push_str(INSTRUCTION);
    out.push('\n');
    out
}
