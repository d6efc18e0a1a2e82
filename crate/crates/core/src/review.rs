//! Human review tooling: semantic-block diff between a generated and a
//! refactored script, the unchanged fraction, and the approval gate that is
//! the only way into the regression suite.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clock::format_timestamp;
use crate::script_dsl::{is_spec_key, parse_script, semantic_blocks, BlockKind, ParseError, SemanticBlock, TestScript};

/// Minimum token Jaccard for two residual blocks to count as one modified block.
pub const MODIFIED_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiffStatus {
    Unchanged,
    Modified,
    Removed,
    Added,
}

impl DiffStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            DiffStatus::Unchanged => "unchanged",
            DiffStatus::Modified => "modified",
            DiffStatus::Removed => "removed",
            DiffStatus::Added => "added",
        }
    }
}

/// A block by position in its script's block list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockRef {
    pub index: usize,
    pub kind: BlockKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffEntry {
    pub generated: Option<BlockRef>,
    pub refactored: Option<BlockRef>,
    pub status: DiffStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockDiff {
    pub entries: Vec<DiffEntry>,
}

impl BlockDiff {
    pub fn count(&self, status: DiffStatus) -> usize {
        self.entries.iter().filter(|e| e.status == status).count()
    }

    pub fn generated_blocks(&self) -> usize {
        self.entries.iter().filter(|e| e.generated.is_some()).count()
    }
}

fn same_block(a: &SemanticBlock, b: &SemanticBlock) -> bool {
    a.kind.same_kind(b.kind) && a.normalized_tokens == b.normalized_tokens
}

fn token_jaccard(a: &SemanticBlock, b: &SemanticBlock) -> f64 {
    let x: BTreeSet<&str> = a.normalized_tokens.iter().map(String::as_str).collect();
    let y: BTreeSet<&str> = b.normalized_tokens.iter().map(String::as_str).collect();
    let union = x.union(&y).count();
    if union == 0 {
        return 1.0;
    }
    x.intersection(&y).count() as f64 / union as f64
}

/// Longest common subsequence of equal blocks, as index pairs.
fn lcs(a: &[SemanticBlock], b: &[SemanticBlock]) -> Vec<(usize, usize)> {
    let (n, m) = (a.len(), b.len());
    let mut table = vec![vec![0usize; m + 1]; n + 1];
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            table[i][j] = if same_block(&a[i], &b[j]) {
                table[i + 1][j + 1] + 1
            } else {
                table[i + 1][j].max(table[i][j + 1])
            };
        }
    }
    let (mut i, mut j, mut out) = (0, 0, Vec::new());
    while i < n && j < m {
        if same_block(&a[i], &b[j]) {
            out.push((i, j));
            i += 1;
            j += 1;
        } else if table[i + 1][j] >= table[i][j + 1] {
            i += 1;
        } else {
            j += 1;
        }
    }
    out
}

/// Aligns equal blocks by LCS (unchanged). Between two aligned anchors,
/// leftover blocks of the same kind are paired in order when their token
/// Jaccard reaches [`MODIFIED_THRESHOLD`] (modified); the rest are removed
/// or added.
pub fn diff_blocks(generated: &TestScript, refactored: &TestScript) -> BlockDiff {
    let a = semantic_blocks(generated);
    let b = semantic_blocks(refactored);
    let anchors = lcs(&a, &b);
    let gref = |i: usize| Some(BlockRef { index: i, kind: a[i].kind });
    let rref = |j: usize| Some(BlockRef { index: j, kind: b[j].kind });

    let mut entries = Vec::new();
    let (mut gi, mut rj) = (0, 0);
    let ends = anchors.iter().copied().map(Some).chain([None]);
    for anchor in ends {
        let (g_end, r_end) = anchor.unwrap_or((a.len(), b.len()));
        let mut next_r = rj;
        let mut used = vec![false; r_end - rj];
        #[allow(clippy::needless_range_loop)]
        for i in gi..g_end {
            let partner = (next_r..r_end)
                .find(|&j| a[i].kind.same_kind(b[j].kind) && token_jaccard(&a[i], &b[j]) >= MODIFIED_THRESHOLD);
            match partner {
                Some(j) => {
                    for k in next_r..j {
                        if !used[k - rj] {
                            used[k - rj] = true;
                            entries.push(DiffEntry { generated: None, refactored: rref(k), status: DiffStatus::Added });
                        }
                    }
                    used[j - rj] = true;
                    next_r = j + 1;
                    entries.push(DiffEntry { generated: gref(i), refactored: rref(j), status: DiffStatus::Modified });
                }
                None => entries.push(DiffEntry { generated: gref(i), refactored: None, status: DiffStatus::Removed }),
            }
        }
        for k in rj..r_end {
            if !used[k - rj] {
                entries.push(DiffEntry { generated: None, refactored: rref(k), status: DiffStatus::Added });
            }
        }
        if let Some((i, j)) = anchor {
            entries.push(DiffEntry { generated: gref(i), refactored: rref(j), status: DiffStatus::Unchanged });
            gi = i + 1;
            rj = j + 1;
        }
    }
    BlockDiff { entries }
}

/// Unchanged generated blocks over all generated blocks; 0 for a diff
/// without generated blocks.
pub fn unchanged_fraction(diff: &BlockDiff) -> f64 {
    let total = diff.generated_blocks();
    if total == 0 {
        return 0.0;
    }
    diff.count(DiffStatus::Unchanged) as f64 / total as f64
}

/// Plain-text listing used by `review diff`.
pub fn render_diff(diff: &BlockDiff) -> String {
    let side = |r: Option<BlockRef>| r.map(|r| r.kind.to_string()).unwrap_or_else(|| "-".into());
    let mut out = String::new();
    for e in &diff.entries {
        out.push_str(&format!("{:<10} {:<14} {}\n", e.status.as_str(), side(e.generated), side(e.refactored)));
    }
    out.push_str(&format!(
        "unchanged fraction: {:.3} ({} of {} generated blocks)\n",
        unchanged_fraction(diff),
        diff.count(DiffStatus::Unchanged),
        diff.generated_blocks()
    ));
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Accept,
    Refactor,
    Rewrite,
}

impl Decision {
    pub fn as_str(self) -> &'static str {
        match self {
            Decision::Accept => "accept",
            Decision::Refactor => "refactor",
            Decision::Rewrite => "rewrite",
        }
    }

    fn promotes(self) -> bool {
        self != Decision::Rewrite
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReviewDecision {
    pub decision: Decision,
    pub reviewer: String,
    pub timestamp: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistryEntry {
    pub spec_key: String,
    pub run_id: String,
    pub decision: Decision,
    pub reviewer: String,
    /// SHA-256 of the reviewed script.
    pub script_digest: String,
    pub promoted: bool,
    pub timestamp: String,
}

#[derive(Debug, thiserror::Error)]
pub enum ReviewError {
    #[error("artifact not found: {0}")]
    ArtifactNotFound(PathBuf),
    #[error("{spec_key} in run {run_id} already has a decision ({decision})")]
    AlreadyDecided { spec_key: String, run_id: String, decision: String },
    #[error("a reviewer name is required")]
    EmptyReviewer,
    #[error("invalid spec key or run id: {0}")]
    InvalidIdentifier(String),
    #[error("script does not parse: {0}")]
    InvalidScript(ParseError),
    #[error("registry line {line} is corrupt: {message}")]
    Corrupt { line: usize, message: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// The regression suite directory: promoted `<KEY>.ats` scripts plus the
/// append-only `registry.jsonl`.
#[derive(Debug, Clone)]
pub struct RegressionRegistry {
    dir: PathBuf,
}

impl RegressionRegistry {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        RegressionRegistry { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn registry_path(&self) -> PathBuf {
        self.dir.join("registry.jsonl")
    }

    pub fn script_path(&self, spec_key: &str) -> PathBuf {
        self.dir.join(format!("{spec_key}.ats"))
    }

    pub fn entries(&self) -> Result<Vec<RegistryEntry>, ReviewError> {
        let path = self.registry_path();
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(source) => return Err(ReviewError::Io { path, source }),
        };
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| ReviewError::Corrupt { line: i + 1, message: e.to_string() })
            })
            .collect()
    }
}

fn is_run_id(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Records a human decision for one spec of one run. Accept and refactor
/// copy `script_path` into the regression suite; rewrite only records.
/// Nothing in the pipeline calls this.
pub fn approve(
    registry: &RegressionRegistry,
    spec_key: &str,
    run_id: &str,
    decision: &ReviewDecision,
    script_path: &Path,
) -> Result<RegistryEntry, ReviewError> {
    if decision.reviewer.trim().is_empty() {
        return Err(ReviewError::EmptyReviewer);
    }
    if !is_spec_key(spec_key) {
        return Err(ReviewError::InvalidIdentifier(spec_key.to_owned()));
    }
    if !is_run_id(run_id) {
        return Err(ReviewError::InvalidIdentifier(run_id.to_owned()));
    }
    let script = fs::read_to_string(script_path).map_err(|_| ReviewError::ArtifactNotFound(script_path.to_path_buf()))?;
    if let Some(prev) = registry.entries()?.into_iter().find(|e| e.spec_key == spec_key && e.run_id == run_id) {
        return Err(ReviewError::AlreadyDecided {
            spec_key: spec_key.to_owned(),
            run_id: run_id.to_owned(),
            decision: prev.decision.as_str().to_owned(),
        });
    }
    let promoted = decision.decision.promotes();
    if promoted {
        parse_script(&script).map_err(ReviewError::InvalidScript)?;
    }

    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| ReviewError::Io { path, source }
    };
    fs::create_dir_all(&registry.dir).map_err(io(&registry.dir))?;
    if promoted {
        let target = registry.script_path(spec_key);
        fs::write(&target, &script).map_err(io(&target))?;
    }
    let entry = RegistryEntry {
        spec_key: spec_key.to_owned(),
        run_id: run_id.to_owned(),
        decision: decision.decision,
        reviewer: decision.reviewer.trim().to_owned(),
        script_digest: sha256_hex(script.as_bytes()),
        promoted,
        timestamp: format_timestamp(decision.timestamp),
    };
    let path = registry.registry_path();
    let mut file = fs::OpenOptions::new().create(true).append(true).open(&path).map_err(io(&path))?;
    writeln!(file, "{}", serde_json::to_string(&entry).expect("registry entries serialize")).map_err(io(&path))?;
    Ok(entry)
}
