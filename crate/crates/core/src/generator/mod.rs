//! Candidate script generation: the deterministic retrieval-template
//! backend, the prompt assembled for a remote text-generation backend, and
//! the finding-driven repair pass.

mod prompt;
mod remote;
mod repair;
mod template;

use crate::evaluator::Finding;
use crate::exec_harness::ApiRegistry;
use crate::retrieval::Hit;
use crate::spec_model::SpecDocument;

pub use prompt::assemble_prompt;
pub use remote::RemoteBackend;
pub use repair::{repair, GAP_NOTE};
pub use template::generate_template;

/// Everything a backend sees for one generation call.
#[derive(Debug, Clone)]
pub struct GenerationRequest<'a> {
    pub spec: &'a SpecDocument,
    /// Ranked by descending score.
    pub retrieved: &'a [Hit<'a>],
    /// Findings of the previous iteration; empty on iteration 1.
    pub prior_findings: &'a [Finding],
    pub iteration: u32,
}

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("backend transport failed: {0}")]
    Transport(String),
}

/// Produces script source text. Acceptance is decided by the orchestrator.
pub trait GenerationBackend: Send + Sync {
    fn name(&self) -> &'static str;
    fn generate(&self, request: &GenerationRequest<'_>) -> Result<String, BackendError>;
}

/// Adapts the top retrieved script to the specification.
#[derive(Debug, Clone)]
pub struct TemplateBackend {
    pub registry: ApiRegistry,
}

impl GenerationBackend for TemplateBackend {
    fn name(&self) -> &'static str {
        "template"
    }

    fn generate(&self, request: &GenerationRequest<'_>) -> Result<String, BackendError> {
        Ok(generate_template(request, &self.registry))
    }
}

pub const MAX_API_DISTANCE: usize = 2;

/// Levenshtein distance over chars.
pub fn edit_distance(a: &str, b: &str) -> usize {
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.chars().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != *cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Closest registry API by edit distance, ties broken lexicographically.
/// `None` when even the closest is more than two edits away.
pub fn nearest_api(name: &str, registry: &ApiRegistry) -> Option<(String, usize)> {
    let mut best: Option<(&str, usize)> = None;
    for candidate in registry.names() {
        let d = edit_distance(name, candidate);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((candidate, d));
        }
    }
    best.filter(|&(_, d)| d <= MAX_API_DISTANCE).map(|(n, d)| (n.to_owned(), d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec_harness::default_registry;

    /// Top-down recursive definition with memoization.
    fn brute_distance(a: &[char], b: &[char], memo: &mut std::collections::HashMap<(usize, usize), usize>) -> usize {
        if let Some(&d) = memo.get(&(a.len(), b.len())) {
            return d;
        }
        let d = match (a.split_first(), b.split_first()) {
            (None, _) => b.len(),
            (_, None) => a.len(),
            (Some((x, ra)), Some((y, rb))) => {
                let sub = brute_distance(ra, rb, memo) + usize::from(x != y);
                sub.min(brute_distance(ra, b, memo) + 1).min(brute_distance(a, rb, memo) + 1)
            }
        };
        memo.insert((a.len(), b.len()), d);
        d
    }

    fn brute(a: &str, b: &str) -> usize {
        let (a, b): (Vec<char>, Vec<char>) = (a.chars().collect(), b.chars().collect());
        brute_distance(&a, &b, &mut Default::default())
    }

    #[test]
    fn distances_match_brute_force() {
        let words = ["add_tain", "zzz", "add_train", "get_trains", "cancel_trian", "", "reset", "qc"];
        let registry = default_registry();
        for w in words {
            for api in registry.names() {
                assert_eq!(edit_distance(w, api), brute(w, api), "{w} vs {api}");
            }
        }
        assert_eq!(brute("add_tain", "add_train"), 1);
        assert!(registry.names().all(|n| brute("zzz", n) > 2));
    }

    #[test]
    fn nearest_examples() {
        let r = default_registry();
        assert_eq!(nearest_api("add_tain", &r), Some(("add_train".into(), 1)));
        assert_eq!(nearest_api("zzz", &r), None);
        assert_eq!(nearest_api("add_train", &r), Some(("add_train".into(), 0)));
        assert_eq!(nearest_api("cancel_trian", &r), Some(("cancel_train".into(), 2)));
    }

    proptest::proptest! {
        #[test]
        fn dp_agrees_with_recursion(a in "[a-c_]{0,6}", b in "[a-c_]{0,6}") {
            proptest::prop_assert_eq!(edit_distance(&a, &b), brute(&a, &b));
        }
    }
}
