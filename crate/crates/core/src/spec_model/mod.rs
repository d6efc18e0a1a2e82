//! Test specifications: the Xray-style JSON input format, validation rules,
//! batch loading from an input folder and a seeded synthetic corpus.

mod corpus;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize, Serializer};
use serde_json::{Map, Value};

use crate::script_dsl::{is_spec_key, Literal};

pub use corpus::{generate_corpus, CorpusError, FUNCTIONAL_AREAS};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SpecError {
    #[error("malformed JSON at line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("specification must be a JSON object")]
    NotAnObject,
    #[error("missing required field `{0}`")]
    MissingField(String),
    #[error("invalid clarity `{0}` (expected A, B, C or D)")]
    InvalidClarity(String),
    #[error("step indices must be 1..n in order: {0}")]
    BadStepIndices(String),
    #[error("invalid value for `{field}`: {message}")]
    InvalidValue { field: String, message: String },
}

#[derive(Debug, thiserror::Error)]
#[error("cannot read input folder {}: {source}", path.display())]
pub struct InputFolderError {
    pub path: PathBuf,
    #[source]
    pub source: std::io::Error,
}

/// Pre-rated input clarity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Clarity {
    A,
    B,
    C,
    D,
}

impl Clarity {
    pub const ALL: [Clarity; 4] = [Clarity::A, Clarity::B, Clarity::C, Clarity::D];

    pub fn meaning(self) -> &'static str {
        match self {
            Clarity::A => "clear & complete",
            Clarity::B => "minor gaps",
            Clarity::C => "vague expectations",
            Clarity::D => "unclear or mixed actions",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Clarity::A => "A",
            Clarity::B => "B",
            Clarity::C => "C",
            Clarity::D => "D",
        }
    }

    pub fn parse(s: &str) -> Result<Self, SpecError> {
        match s {
            "A" => Ok(Clarity::A),
            "B" => Ok(Clarity::B),
            "C" => Ok(Clarity::C),
            "D" => Ok(Clarity::D),
            other => Err(SpecError::InvalidClarity(other.to_owned())),
        }
    }
}

impl fmt::Display for Clarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CiConfig {
    pub job: String,
    pub timeout_s: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpecStep {
    pub index: u32,
    pub action: String,
    pub expected: String,
}

/// A validated test specification. Unknown top-level JSON keys are kept in
/// `extra` and written back on serialization.
#[derive(Debug, Clone, PartialEq)]
pub struct SpecDocument {
    pub key: String,
    pub summary: String,
    pub functional_area: String,
    pub story_points: u32,
    pub clarity: Clarity,
    pub ci_config: CiConfig,
    pub test_data: IndexMap<String, Literal>,
    pub steps: Vec<SpecStep>,
    pub extra: Map<String, Value>,
}

const KNOWN_KEYS: &[&str] = &[
    "key",
    "summary",
    "functional_area",
    "story_points",
    "clarity",
    "ci_config",
    "test_data",
    "steps",
];

fn field<'a>(obj: &'a Map<String, Value>, name: &str) -> Result<&'a Value, SpecError> {
    obj.get(name).ok_or_else(|| SpecError::MissingField(name.to_owned()))
}

fn invalid(field: &str, message: impl Into<String>) -> SpecError {
    SpecError::InvalidValue { field: field.to_owned(), message: message.into() }
}

fn string_field(obj: &Map<String, Value>, name: &str, path: &str) -> Result<String, SpecError> {
    match field(obj, name)? {
        Value::String(s) => Ok(s.clone()),
        _ => Err(invalid(path, "expected a string")),
    }
}

fn uint_field(obj: &Map<String, Value>, name: &str, path: &str) -> Result<u64, SpecError> {
    field(obj, name)?
        .as_u64()
        .ok_or_else(|| invalid(path, "expected a non-negative integer"))
}

fn literal_from_json(value: &Value, path: &str) -> Result<Literal, SpecError> {
    match value {
        Value::String(s) => Ok(Literal::Str(s.clone())),
        Value::Bool(b) => Ok(Literal::Bool(*b)),
        Value::Number(n) => n
            .as_i64()
            .map(Literal::Int)
            .ok_or_else(|| invalid(path, "numbers must be 64-bit integers")),
        _ => Err(invalid(path, "expected a string, integer or boolean")),
    }
}

fn literal_to_json(lit: &Literal) -> Value {
    match lit {
        Literal::Str(s) => Value::String(s.clone()),
        Literal::Int(i) => Value::from(*i),
        Literal::Bool(b) => Value::Bool(*b),
    }
}

/// Parses one specification document.
pub fn parse_spec(json_text: &str) -> Result<SpecDocument, SpecError> {
    let value: Value = serde_json::from_str(json_text).map_err(|e| SpecError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    SpecDocument::from_json(&value)
}

impl SpecDocument {
    pub fn from_json(value: &Value) -> Result<Self, SpecError> {
        let obj = value.as_object().ok_or(SpecError::NotAnObject)?;
        let key = string_field(obj, "key", "key")?;
        let summary = string_field(obj, "summary", "summary")?;
        let functional_area = string_field(obj, "functional_area", "functional_area")?;
        let story_points = u32::try_from(uint_field(obj, "story_points", "story_points")?)
            .map_err(|_| invalid("story_points", "out of range"))?;
        let clarity = match field(obj, "clarity")? {
            Value::String(s) => Clarity::parse(s)?,
            other => return Err(SpecError::InvalidClarity(other.to_string())),
        };
        let ci = field(obj, "ci_config")?
            .as_object()
            .ok_or_else(|| invalid("ci_config", "expected an object"))?;
        let ci_config = CiConfig {
            job: string_field(ci, "job", "ci_config.job")
                .map_err(|e| prefix_missing(e, "ci_config."))?,
            timeout_s: uint_field(ci, "timeout_s", "ci_config.timeout_s")
                .map_err(|e| prefix_missing(e, "ci_config."))?,
        };

        let mut test_data = IndexMap::new();
        match obj.get("test_data") {
            None | Some(Value::Null) => {}
            Some(Value::Object(map)) => {
                for (name, v) in map {
                    test_data.insert(name.clone(), literal_from_json(v, &format!("test_data.{name}"))?);
                }
            }
            Some(_) => return Err(invalid("test_data", "expected an object")),
        }

        let raw_steps = field(obj, "steps")?
            .as_array()
            .ok_or_else(|| invalid("steps", "expected an array"))?;
        if raw_steps.is_empty() {
            return Err(SpecError::BadStepIndices("no steps".to_owned()));
        }
        let mut steps = Vec::with_capacity(raw_steps.len());
        for (pos, raw) in raw_steps.iter().enumerate() {
            let path = format!("steps[{pos}]");
            let step = raw.as_object().ok_or_else(|| invalid(&path, "expected an object"))?;
            let index = step
                .get("index")
                .ok_or_else(|| SpecError::MissingField(format!("{path}.index")))?
                .as_u64()
                .ok_or_else(|| invalid(&format!("{path}.index"), "expected a positive integer"))?;
            let expected_index = pos as u64 + 1;
            if index != expected_index {
                return Err(SpecError::BadStepIndices(format!(
                    "position {expected_index} has index {index}"
                )));
            }
            let action = match step.get("action") {
                Some(Value::String(s)) => s.clone(),
                Some(_) => return Err(invalid(&format!("{path}.action"), "expected a string")),
                None => return Err(SpecError::MissingField(format!("{path}.action"))),
            };
            let expected = match step.get("expected") {
                None | Some(Value::Null) => String::new(),
                Some(Value::String(s)) => s.clone(),
                Some(_) => return Err(invalid(&format!("{path}.expected"), "expected a string")),
            };
            steps.push(SpecStep { index: index as u32, action, expected });
        }

        let extra = obj
            .iter()
            .filter(|(k, _)| !KNOWN_KEYS.contains(&k.as_str()))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();

        Ok(SpecDocument {
            key,
            summary,
            functional_area,
            story_points,
            clarity,
            ci_config,
            test_data,
            steps,
            extra,
        })
    }

    pub fn to_json(&self) -> Value {
        let mut obj = Map::new();
        obj.insert("key".into(), Value::String(self.key.clone()));
        obj.insert("summary".into(), Value::String(self.summary.clone()));
        obj.insert("functional_area".into(), Value::String(self.functional_area.clone()));
        obj.insert("story_points".into(), Value::from(self.story_points));
        obj.insert("clarity".into(), Value::String(self.clarity.to_string()));
        let mut ci = Map::new();
        ci.insert("job".into(), Value::String(self.ci_config.job.clone()));
        ci.insert("timeout_s".into(), Value::from(self.ci_config.timeout_s));
        obj.insert("ci_config".into(), Value::Object(ci));
        let data = self
            .test_data
            .iter()
            .map(|(k, v)| (k.clone(), literal_to_json(v)))
            .collect();
        obj.insert("test_data".into(), Value::Object(data));
        let steps = self
            .steps
            .iter()
            .map(|s| {
                let mut m = Map::new();
                m.insert("index".into(), Value::from(s.index));
                m.insert("action".into(), Value::String(s.action.clone()));
                m.insert("expected".into(), Value::String(s.expected.clone()));
                Value::Object(m)
            })
            .collect();
        obj.insert("steps".into(), Value::Array(steps));
        for (k, v) in &self.extra {
            obj.insert(k.clone(), v.clone());
        }
        Value::Object(obj)
    }

    /// Canonical pretty-printed JSON with a trailing newline.
    pub fn to_json_string(&self) -> String {
        let mut text = serde_json::to_string_pretty(&self.to_json()).expect("JSON values serialize");
        text.push('\n');
        text
    }
}

fn prefix_missing(e: SpecError, prefix: &str) -> SpecError {
    match e {
        SpecError::MissingField(name) => SpecError::MissingField(format!("{prefix}{name}")),
        other => other,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Warning,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum PathSegment {
    Field(String),
    Index(usize),
}

/// Location of a finding inside a document, e.g. `steps[2].expected`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Default)]
pub struct FieldPath(pub Vec<PathSegment>);

impl FieldPath {
    pub fn field(name: &str) -> Self {
        FieldPath(vec![PathSegment::Field(name.to_owned())])
    }

    pub fn step(pos: usize, name: &str) -> Self {
        FieldPath(vec![
            PathSegment::Field("steps".to_owned()),
            PathSegment::Index(pos),
            PathSegment::Field(name.to_owned()),
        ])
    }

    pub fn nested(parent: &str, name: &str) -> Self {
        FieldPath(vec![PathSegment::Field(parent.to_owned()), PathSegment::Field(name.to_owned())])
    }
}

impl fmt::Display for FieldPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, seg) in self.0.iter().enumerate() {
            match seg {
                PathSegment::Field(name) if i == 0 => f.write_str(name)?,
                PathSegment::Field(name) => write!(f, ".{name}")?,
                PathSegment::Index(idx) => write!(f, "[{idx}]")?,
            }
        }
        Ok(())
    }
}

impl Serialize for FieldPath {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationFinding {
    pub level: Level,
    pub code: &'static str,
    pub message: String,
    pub location: FieldPath,
}

impl fmt::Display for ValidationFinding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let level = match self.level {
            Level::Warning => "warning",
            Level::Error => "error",
        };
        write!(f, "{level} {} at {}: {}", self.code, self.location, self.message)
    }
}

pub const STORY_POINT_RANGE: std::ops::RangeInclusive<u32> = 3..=8;

fn is_data_name(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_lowercase())
        && chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
        && !crate::script_dsl::KEYWORDS.contains(&name)
}

/// Checks a parsed document. Error-level findings keep the document out of
/// the pipeline; warnings are informational. Output is sorted by field
/// path, then code.
pub fn validate_spec(doc: &SpecDocument) -> Vec<ValidationFinding> {
    let mut out = Vec::new();
    let mut push = |level, code, location, message: String| {
        out.push(ValidationFinding { level, code, message, location })
    };
    if !is_spec_key(&doc.key) {
        push(
            Level::Error,
            "E-KEY-PATTERN",
            FieldPath::field("key"),
            format!("key `{}` does not match [A-Z]+-[0-9]+", doc.key),
        );
    }
    if doc.summary.trim().is_empty() {
        push(Level::Warning, "W-NO-SUMMARY", FieldPath::field("summary"), "summary is empty".into());
    }
    if doc.functional_area.trim().is_empty() {
        push(
            Level::Warning,
            "W-NO-AREA",
            FieldPath::field("functional_area"),
            "functional area is empty".into(),
        );
    }
    if !STORY_POINT_RANGE.contains(&doc.story_points) {
        push(
            Level::Warning,
            "W-SP-RANGE",
            FieldPath::field("story_points"),
            format!("{} story points is outside the nominal range 3-8", doc.story_points),
        );
    }
    if doc.ci_config.job.trim().is_empty() {
        push(Level::Error, "E-CI-JOB", FieldPath::nested("ci_config", "job"), "CI job name is empty".into());
    }
    if doc.ci_config.timeout_s == 0 {
        push(
            Level::Error,
            "E-CI-TIMEOUT",
            FieldPath::nested("ci_config", "timeout_s"),
            "CI timeout must be at least 1 second".into(),
        );
    }
    for name in doc.test_data.keys() {
        if !is_data_name(name) {
            push(
                Level::Error,
                "E-DATA-NAME",
                FieldPath::nested("test_data", name),
                format!("test data name `{name}` does not match [a-z][a-z0-9_]*"),
            );
        }
    }
    for (pos, step) in doc.steps.iter().enumerate() {
        if step.action.trim().is_empty() {
            push(
                Level::Error,
                "E-EMPTY-ACTION",
                FieldPath::step(pos, "action"),
                format!("step {} has no action", step.index),
            );
        }
        if step.expected.trim().is_empty() {
            push(
                Level::Warning,
                "W-NO-EXPECTED",
                FieldPath::step(pos, "expected"),
                format!("step {} has no expected result", step.index),
            );
        }
    }
    out.sort_by(|a, b| a.location.cmp(&b.location).then(a.code.cmp(b.code)));
    out
}

pub fn has_errors(findings: &[ValidationFinding]) -> bool {
    findings.iter().any(|f| f.level == Level::Error)
}

/// A file in the input folder that did not yield a document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedFile {
    pub file: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct SpecBatch {
    pub docs: Vec<SpecDocument>,
    pub skipped: Vec<SkippedFile>,
    /// File name each loaded document came from, by key.
    pub sources: BTreeMap<String, String>,
}

/// Loads every `*.json` file of `folder`. A bad file is recorded and the
/// rest of the batch still loads. Subdirectories are ignored.
pub fn load_spec_batch(folder: &Path) -> Result<SpecBatch, InputFolderError> {
    let wrap = |source| InputFolderError { path: folder.to_path_buf(), source };
    let mut entries: Vec<PathBuf> = fs::read_dir(folder)
        .map_err(wrap)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .map_err(wrap)?;
    entries.sort();

    let mut batch = SpecBatch::default();
    for path in entries.into_iter().filter(|p| !p.is_dir()) {
        let file = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        if path.extension().and_then(|e| e.to_str()) != Some("json") {
            batch.skipped.push(SkippedFile { file, reason: "not a .json file".into() });
            continue;
        }
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) => {
                batch.skipped.push(SkippedFile { file, reason: format!("unreadable: {e}") });
                continue;
            }
        };
        match parse_spec(&text) {
            Ok(doc) if batch.docs.iter().any(|d: &SpecDocument| d.key == doc.key) => {
                batch.skipped.push(SkippedFile { file, reason: format!("duplicate key {}", doc.key) });
            }
            Ok(doc) => {
                batch.sources.insert(doc.key.clone(), file);
                batch.docs.push(doc);
            }
            Err(e) => batch.skipped.push(SkippedFile { file, reason: e.to_string() }),
        }
    }
    batch.docs.sort_by(|a, b| a.key.cmp(&b.key));
    Ok(batch)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> String {
        r#"{ "key": "HAC-101", "summary": "Direct connection", "functional_area": "timetable",
  "story_points": 3, "clarity": "A",
  "ci_config": {"job": "systest", "timeout_s": 60},
  "test_data": {"origin": "HNV", "dest": "BER"},
  "steps": [
    {"index": 1, "action": "reset the system", "expected": "system is empty"},
    {"index": 2, "action": "add train", "expected": "stored"},
    {"index": 3, "action": "query connection from HNV to BER", "expected": "one connection"}
  ],
  "xray_labels": ["smoke"] }"#
            .to_owned()
    }

    fn with(mutate: impl FnOnce(&mut Map<String, Value>)) -> String {
        let mut v: Value = serde_json::from_str(&sample()).unwrap();
        mutate(v.as_object_mut().unwrap());
        v.to_string()
    }

    #[test]
    fn parses_valid_document() {
        let doc = parse_spec(&sample()).unwrap();
        assert_eq!(doc.key, "HAC-101");
        assert_eq!(doc.steps.iter().map(|s| s.index).collect::<Vec<_>>(), vec![1, 2, 3]);
        assert_eq!(doc.test_data["origin"], Literal::Str("HNV".into()));
        assert_eq!(doc.extra["xray_labels"], serde_json::json!(["smoke"]));
    }

    #[test]
    fn round_trips_with_unknown_keys() {
        let doc = parse_spec(&sample()).unwrap();
        let again = parse_spec(&doc.to_json_string()).unwrap();
        assert_eq!(doc, again);
        assert!(doc.to_json_string().contains("xray_labels"));
    }

    #[test]
    fn parse_errors() {
        assert_eq!(
            parse_spec(&with(|m| {
                m.remove("steps");
            })),
            Err(SpecError::MissingField("steps".into()))
        );
        assert_eq!(
            parse_spec(&with(|m| {
                m.insert("clarity".into(), "E".into());
            })),
            Err(SpecError::InvalidClarity("E".into()))
        );
        let gap = with(|m| {
            m["steps"][2]["index"] = 5.into();
        });
        assert!(matches!(parse_spec(&gap), Err(SpecError::BadStepIndices(_))));
        let empty = with(|m| {
            m.insert("steps".into(), Value::Array(vec![]));
        });
        assert!(matches!(parse_spec(&empty), Err(SpecError::BadStepIndices(_))));
        assert!(matches!(parse_spec("{\"key\": "), Err(SpecError::Syntax { line: 1, .. })));
        assert_eq!(parse_spec("[1]"), Err(SpecError::NotAnObject));
        let nested = with(|m| {
            m["ci_config"].as_object_mut().unwrap().remove("job");
        });
        assert_eq!(parse_spec(&nested), Err(SpecError::MissingField("ci_config.job".into())));
        let float = with(|m| {
            m["test_data"]["origin"] = serde_json::json!(1.5);
        });
        assert!(matches!(parse_spec(&float), Err(SpecError::InvalidValue { .. })));
    }

    #[test]
    fn validation_rules() {
        let clean = parse_spec(&sample()).unwrap();
        assert_eq!(validate_spec(&clean), vec![]);

        let mut doc = clean.clone();
        doc.story_points = 9;
        let f = validate_spec(&doc);
        assert_eq!(f.len(), 1);
        assert_eq!((f[0].level, f[0].code), (Level::Warning, "W-SP-RANGE"));

        let mut doc = clean.clone();
        doc.steps[1].expected.clear();
        let f = validate_spec(&doc);
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].code, "W-NO-EXPECTED");
        assert_eq!(f[0].location.to_string(), "steps[1].expected");
        assert!(!has_errors(&f));

        let mut doc = clean;
        doc.key = "hac_1".into();
        doc.test_data.insert("Bad".into(), Literal::Int(1));
        doc.steps[0].action = "  ".into();
        doc.ci_config.timeout_s = 0;
        let codes: Vec<_> = validate_spec(&doc).iter().map(|f| f.code).collect();
        assert_eq!(codes, vec!["E-CI-TIMEOUT", "E-KEY-PATTERN", "E-EMPTY-ACTION", "E-DATA-NAME"]);
        assert!(has_errors(&validate_spec(&doc)));
    }

    #[test]
    fn findings_sort_by_numeric_step_position() {
        let mut doc = parse_spec(&sample()).unwrap();
        for i in 4..=11 {
            doc.steps.push(SpecStep { index: i, action: "x".into(), expected: String::new() });
        }
        let positions: Vec<_> = validate_spec(&doc).iter().map(|f| f.location.to_string()).collect();
        assert_eq!(positions.first().unwrap(), "steps[3].expected");
        assert_eq!(positions.last().unwrap(), "steps[10].expected");
    }

    #[test]
    fn batch_loading() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(load_spec_batch(dir.path()).unwrap().docs.len(), 0);

        fs::write(dir.path().join("b.json"), sample()).unwrap();
        fs::write(dir.path().join("a.json"), with(|m| {
            m.insert("key".into(), "HAC-100".into());
        }))
        .unwrap();
        fs::write(dir.path().join("notes.txt"), "hello").unwrap();
        fs::create_dir(dir.path().join("nested")).unwrap();
        let batch = load_spec_batch(dir.path()).unwrap();
        assert_eq!(batch.docs.iter().map(|d| d.key.as_str()).collect::<Vec<_>>(), ["HAC-100", "HAC-101"]);
        assert_eq!(batch.skipped.len(), 1);
        assert_eq!(batch.skipped[0].file, "notes.txt");

        let bad = tempfile::tempdir().unwrap();
        fs::write(bad.path().join("x.json"), "{ nope").unwrap();
        let batch = load_spec_batch(bad.path()).unwrap();
        assert!(batch.docs.is_empty());
        assert!(batch.skipped[0].reason.starts_with("malformed JSON"));

        assert!(load_spec_batch(&dir.path().join("missing")).is_err());
    }
}
