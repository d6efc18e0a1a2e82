//! BM25 retrieval over historical specification–script pairs.
//!
//! Only the specification side of a pair is indexed (summary, step actions
//! and expected results); scripts are carried along as payload.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::script_dsl::{parse_script, ParseError};
use crate::spec_model::{parse_spec, SpecDocument, SpecError};

pub const K1: f64 = 1.2;
pub const B: f64 = 0.75;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OutcomeTag {
    #[default]
    Accepted,
    Refactored,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoricalPair {
    pub spec: SpecDocument,
    pub script_text: String,
    pub outcome_tag: OutcomeTag,
}

impl HistoricalPair {
    /// Builds a pair, rejecting scripts that do not parse.
    pub fn new(spec: SpecDocument, script_text: String, outcome_tag: OutcomeTag) -> Result<Self, ParseError> {
        parse_script(&script_text)?;
        Ok(HistoricalPair { spec, script_text, outcome_tag })
    }

    pub fn key(&self) -> &str {
        &self.spec.key
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error("duplicate spec key `{0}` in corpus")]
    DuplicateKey(String),
    #[error("document {0} is not in the index")]
    DocNotFound(usize),
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusLoadError {
    #[error("cannot read corpus {}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("corpus spec {file}: {source}")]
    Spec { file: String, source: SpecError },
    #[error("corpus script {file}: {source}")]
    Script { file: String, source: ParseError },
    #[error("corpus spec {file} has no matching .ats script")]
    MissingScript { file: String },
    #[error("corpus meta {file}: {message}")]
    Meta { file: String, message: String },
    #[error("corpus file {file} holds key {key}")]
    KeyMismatch { file: String, key: String },
}

/// Lowercases, splits on every non-alphanumeric character and drops tokens
/// shorter than two characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.chars().count() >= 2)
        .map(str::to_lowercase)
        .collect()
}

/// Text that represents a specification for retrieval.
pub fn indexable_text(spec: &SpecDocument) -> String {
    let mut text = spec.summary.clone();
    for step in &spec.steps {
        text.push(' ');
        text.push_str(&step.action);
    }
    for step in &spec.steps {
        text.push(' ');
        text.push_str(&step.expected);
    }
    text
}

#[derive(Debug, Clone)]
struct IndexedDoc {
    term_freq: HashMap<String, u32>,
    len: usize,
}

/// Immutable BM25 index. Documents are ordered by spec key.
#[derive(Debug, Clone)]
pub struct CorpusIndex {
    pairs: Vec<HistoricalPair>,
    docs: Vec<IndexedDoc>,
    doc_freq: HashMap<String, u32>,
    avgdl: f64,
}

/// A retrieved pair with its BM25 score.
#[derive(Debug, Clone, Copy)]
pub struct Hit<'a> {
    pub pair: &'a HistoricalPair,
    pub score: f64,
}

pub fn build_index(pairs: Vec<HistoricalPair>) -> Result<CorpusIndex, RetrievalError> {
    let mut pairs = pairs;
    pairs.sort_by(|a, b| a.spec.key.cmp(&b.spec.key));
    if let Some(w) = pairs.windows(2).find(|w| w[0].spec.key == w[1].spec.key) {
        return Err(RetrievalError::DuplicateKey(w[0].spec.key.clone()));
    }
    let mut doc_freq: HashMap<String, u32> = HashMap::new();
    let docs: Vec<IndexedDoc> = pairs
        .iter()
        .map(|p| {
            let tokens = tokenize(&indexable_text(&p.spec));
            let mut term_freq = HashMap::new();
            for t in &tokens {
                *term_freq.entry(t.clone()).or_insert(0) += 1;
            }
            for t in term_freq.keys() {
                *doc_freq.entry(t.clone()).or_insert(0) += 1;
            }
            IndexedDoc { term_freq, len: tokens.len() }
        })
        .collect();
    let avgdl = if docs.is_empty() {
        0.0
    } else {
        docs.iter().map(|d| d.len as f64).sum::<f64>() / docs.len() as f64
    };
    Ok(CorpusIndex { pairs, docs, doc_freq, avgdl })
}

impl CorpusIndex {
    pub fn empty() -> Self {
        build_index(Vec::new()).expect("empty corpus has no duplicates")
    }

    pub fn doc_count(&self) -> usize {
        self.docs.len()
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    pub fn doc_freq(&self, token: &str) -> u32 {
        self.doc_freq.get(token).copied().unwrap_or(0)
    }

    pub fn doc_len(&self, doc_id: usize) -> Option<usize> {
        self.docs.get(doc_id).map(|d| d.len)
    }

    pub fn pair(&self, doc_id: usize) -> Option<&HistoricalPair> {
        self.pairs.get(doc_id)
    }

    pub fn pairs(&self) -> &[HistoricalPair] {
        &self.pairs
    }

    pub fn doc_id(&self, key: &str) -> Option<usize> {
        self.pairs.binary_search_by(|p| p.spec.key.as_str().cmp(key)).ok()
    }

    fn idf(&self, token: &str) -> f64 {
        let n = self.docs.len() as f64;
        let df = f64::from(self.doc_freq(token));
        ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
    }
}

/// Okapi BM25 with k1 = 1.2, b = 0.75 and the `+1` idf variant, which keeps
/// every term weight positive.
pub fn bm25_score(index: &CorpusIndex, query_tokens: &[String], doc_id: usize) -> Result<f64, RetrievalError> {
    let doc = index.docs.get(doc_id).ok_or(RetrievalError::DocNotFound(doc_id))?;
    let norm = 1.0 - B + B * doc.len as f64 / index.avgdl;
    let score = query_tokens
        .iter()
        .filter_map(|t| doc.term_freq.get(t).map(|&tf| (t, f64::from(tf))))
        .map(|(t, tf)| index.idf(t) * tf * (K1 + 1.0) / (tf + K1 * norm))
        .sum();
    Ok(score)
}

/// Scores every document against a token query; zero-score documents are
/// left out. Ordered by score descending, then spec key ascending.
pub fn retrieve_tokens<'a>(index: &'a CorpusIndex, query: &[String], k: usize) -> Vec<Hit<'a>> {
    let mut hits: Vec<Hit<'a>> = (0..index.doc_count())
        .map(|id| Hit { pair: &index.pairs[id], score: bm25_score(index, query, id).expect("id in range") })
        .filter(|h| h.score > 0.0)
        .collect();
    hits.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.pair.key().cmp(b.pair.key())));
    hits.truncate(k);
    hits
}

/// Top-`k` historical pairs most similar to `spec`.
pub fn retrieve<'a>(index: &'a CorpusIndex, spec: &SpecDocument, k: usize) -> Vec<Hit<'a>> {
    retrieve_tokens(index, &tokenize(&indexable_text(spec)), k)
}

#[derive(Debug, Serialize, Deserialize)]
struct PairMeta {
    outcome_tag: OutcomeTag,
}

/// Reads `<KEY>.json` + `<KEY>.ats` (+ optional `<KEY>.meta`) triples.
pub fn load_corpus(dir: &Path) -> Result<Vec<HistoricalPair>, CorpusLoadError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| CorpusLoadError::Io { path, source }
    };
    let mut specs: BTreeMap<String, PathBuf> = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(io(dir))? {
        let path = entry.map_err(io(dir))?.path();
        if path.extension().and_then(|e| e.to_str()) == Some("json") {
            let stem = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            specs.insert(stem, path);
        }
    }
    let mut pairs = Vec::with_capacity(specs.len());
    for (stem, spec_path) in specs {
        let file = format!("{stem}.json");
        let spec = parse_spec(&fs::read_to_string(&spec_path).map_err(io(&spec_path))?)
            .map_err(|source| CorpusLoadError::Spec { file: file.clone(), source })?;
        if spec.key != stem {
            return Err(CorpusLoadError::KeyMismatch { file, key: spec.key });
        }
        let script_path = dir.join(format!("{stem}.ats"));
        if !script_path.exists() {
            return Err(CorpusLoadError::MissingScript { file });
        }
        let script_text = fs::read_to_string(&script_path).map_err(io(&script_path))?;
        let meta_path = dir.join(format!("{stem}.meta"));
        let outcome_tag = if meta_path.exists() {
            let text = fs::read_to_string(&meta_path).map_err(io(&meta_path))?;
            serde_json::from_str::<PairMeta>(&text)
                .map_err(|e| CorpusLoadError::Meta { file: format!("{stem}.meta"), message: e.to_string() })?
                .outcome_tag
        } else {
            OutcomeTag::Accepted
        };
        let pair = HistoricalPair::new(spec, script_text, outcome_tag)
            .map_err(|source| CorpusLoadError::Script { file: format!("{stem}.ats"), source })?;
        pairs.push(pair);
    }
    Ok(pairs)
}

/// Writes pairs in the layout read by [`load_corpus`]. A `.meta` file is
/// only written for non-default outcome tags.
pub fn write_corpus(dir: &Path, pairs: &[HistoricalPair]) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    for pair in pairs {
        fs::write(dir.join(format!("{}.json", pair.key())), pair.spec.to_json_string())?;
        fs::write(dir.join(format!("{}.ats", pair.key())), &pair.script_text)?;
        if pair.outcome_tag != OutcomeTag::Accepted {
            let meta = serde_json::to_string(&PairMeta { outcome_tag: pair.outcome_tag })
                .expect("meta serializes");
            fs::write(dir.join(format!("{}.meta", pair.key())), meta + "\n")?;
        }
    }
    Ok(())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::spec_model::{CiConfig, Clarity, SpecStep};

    pub(crate) fn spec_with_summary(key: &str, summary: &str) -> SpecDocument {
        SpecDocument {
            key: key.into(),
            summary: summary.into(),
            functional_area: "timetable".into(),
            story_points: 3,
            clarity: Clarity::A,
            ci_config: CiConfig { job: "systest".into(), timeout_s: 60 },
            test_data: Default::default(),
            steps: vec![SpecStep { index: 1, action: String::new(), expected: String::new() }],
            extra: Default::default(),
        }
    }

    fn pair(key: &str, summary: &str) -> HistoricalPair {
        let script = format!("script \"{key}\"\nstep 1 \"x\"\n  call reset_system()\n");
        HistoricalPair::new(spec_with_summary(key, summary), script, OutcomeTag::Accepted).unwrap()
    }

    /// d1=[query,connection,origin,dest], d2=[add,train,timetable], d3=[cancel,train]
    pub(crate) fn toy_index() -> CorpusIndex {
        build_index(vec![
            pair("DOC-3", "cancel train"),
            pair("DOC-1", "query connection origin dest"),
            pair("DOC-2", "add train timetable"),
        ])
        .unwrap()
    }

    /// Term-at-a-time BM25 written out for the toy corpus only.
    fn hand_bm25(tf: f64, df: f64, n: f64, dl: f64, avgdl: f64) -> f64 {
        let idf = ((n - df + 0.5) / (df + 0.5) + 1.0).ln();
        idf * tf * 2.2 / (tf + 1.2 * (0.25 + 0.75 * dl / avgdl))
    }

    #[test]
    fn tokenizer_rules() {
        assert_eq!(tokenize("Query connection from HNV!"), ["query", "connection", "from", "hnv"]);
        assert_eq!(tokenize("a b2"), ["b2"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("add_train(ICE1)"), ["add", "train", "ice1"]);
    }

    #[test]
    fn toy_corpus_statistics() {
        let idx = toy_index();
        assert_eq!(idx.doc_count(), 3);
        assert_eq!(idx.avgdl(), 3.0);
        assert_eq!(idx.doc_freq("train"), 2);
        assert_eq!(idx.doc_id("DOC-1"), Some(0));
    }

    #[test]
    fn toy_corpus_scores() {
        let idx = toy_index();
        let q = vec!["train".to_owned()];
        let d2 = bm25_score(&idx, &q, idx.doc_id("DOC-2").unwrap()).unwrap();
        let d3 = bm25_score(&idx, &q, idx.doc_id("DOC-3").unwrap()).unwrap();
        let d1 = bm25_score(&idx, &q, idx.doc_id("DOC-1").unwrap()).unwrap();
        assert!((d2 - hand_bm25(1.0, 2.0, 3.0, 3.0, 3.0)).abs() < 1e-12);
        assert!((d3 - hand_bm25(1.0, 2.0, 3.0, 2.0, 3.0)).abs() < 1e-12);
        assert!((d2 - 0.470).abs() < 1e-3, "{d2}");
        assert!((d3 - 0.544).abs() < 1e-3, "{d3}");
        assert_eq!(d1, 0.0);
        assert!(matches!(bm25_score(&idx, &q, 3), Err(RetrievalError::DocNotFound(3))));
    }

    #[test]
    fn retrieval_order_and_ties() {
        let idx = toy_index();
        let hits = retrieve_tokens(&idx, &["train".to_owned()], 2);
        let keys: Vec<_> = hits.iter().map(|h| h.pair.key()).collect();
        assert_eq!(keys, ["DOC-3", "DOC-2"]);

        assert!(retrieve_tokens(&CorpusIndex::empty(), &["train".to_owned()], 3).is_empty());

        let tied = build_index(vec![pair("ZZ-1", "alpha beta"), pair("AA-1", "alpha gamma")]).unwrap();
        let keys: Vec<_> = retrieve_tokens(&tied, &["alpha".to_owned()], 5).iter().map(|h| h.pair.key()).collect();
        assert_eq!(keys, ["AA-1", "ZZ-1"]);
    }

    #[test]
    fn duplicate_keys_rejected() {
        let err = build_index(vec![pair("A-1", "x y"), pair("A-1", "z w")]).unwrap_err();
        assert!(matches!(err, RetrievalError::DuplicateKey(k) if k == "A-1"));
    }

    #[test]
    fn corpus_directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut pairs = vec![pair("DOC-1", "query connection"), pair("DOC-2", "add train")];
        pairs[1].outcome_tag = OutcomeTag::Refactored;
        write_corpus(dir.path(), &pairs).unwrap();
        assert!(!dir.path().join("DOC-1.meta").exists());
        let loaded = load_corpus(dir.path()).unwrap();
        assert_eq!(loaded, pairs);

        fs::remove_file(dir.path().join("DOC-2.ats")).unwrap();
        assert!(matches!(load_corpus(dir.path()), Err(CorpusLoadError::MissingScript { .. })));
    }
}
