use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::lexer::{lex_line, Token};
use super::render::{quote, render_statement};
use super::{Statement, TestScript};

/// Structural section of a script.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BlockKind {
    Data,
    Setup,
    Step(u32),
    Teardown,
}

impl BlockKind {
    /// Position in canonical source order.
    pub fn rank(self) -> u64 {
        match self {
            BlockKind::Data => 0,
            BlockKind::Setup => 1,
            BlockKind::Step(n) => 2 + u64::from(n),
            BlockKind::Teardown => u64::MAX,
        }
    }

    /// Same kind ignoring the step number.
    pub fn same_kind(self, other: BlockKind) -> bool {
        std::mem::discriminant(&self) == std::mem::discriminant(&other)
    }
}

impl PartialOrd for BlockKind {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for BlockKind {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.rank().cmp(&other.rank())
    }
}

impl fmt::Display for BlockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BlockKind::Data => f.write_str("data"),
            BlockKind::Setup => f.write_str("setup"),
            BlockKind::Step(n) => write!(f, "step {n}"),
            BlockKind::Teardown => f.write_str("teardown"),
        }
    }
}

impl FromStr for BlockKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "data" => Ok(BlockKind::Data),
            "setup" => Ok(BlockKind::Setup),
            "teardown" => Ok(BlockKind::Teardown),
            _ => s
                .strip_prefix("step ")
                .and_then(|n| n.parse().ok())
                .map(BlockKind::Step)
                .ok_or_else(|| format!("unknown block `{s}`")),
        }
    }
}

impl Serialize for BlockKind {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BlockKind {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A normalized structural unit of a script: the unit of review and diffing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SemanticBlock {
    pub kind: BlockKind,
    pub normalized_tokens: Vec<String>,
}

const STATEMENT_SEPARATOR: &str = ";";

fn token_text(t: &Token) -> String {
    match t {
        Token::Ident(s) => s.clone(),
        Token::Int(i) => i.to_string(),
        Token::Str(s) => quote(s),
        Token::LParen => "(".into(),
        Token::RParen => ")".into(),
        Token::Comma => ",".into(),
        Token::Assign => "=".into(),
        Token::Dot => ".".into(),
        Token::Op(op) => op.as_str().into(),
    }
}

fn push_line(tokens: &mut Vec<String>, line: &str) {
    if !tokens.is_empty() {
        tokens.push(STATEMENT_SEPARATOR.to_owned());
    }
    let lexed = lex_line(line).expect("rendered statements always lex");
    tokens.extend(lexed.iter().map(token_text));
}

fn statement_tokens(stmts: &[Statement], tokens: &mut Vec<String>) {
    for stmt in stmts.iter().filter(|s| !s.is_comment()) {
        push_line(tokens, &render_statement(stmt));
    }
}

/// Splits a script into data, setup, step and teardown blocks. Comments are
/// dropped and whitespace canonicalized, so two scripts that differ only in
/// comments or layout yield identical token sequences. Step numbers are not
/// part of the tokens; step titles are.
pub fn semantic_blocks(script: &TestScript) -> Vec<SemanticBlock> {
    let mut blocks = Vec::with_capacity(script.block_count());
    if !script.data.is_empty() {
        let mut tokens = Vec::new();
        for b in &script.data {
            push_line(&mut tokens, &format!("let {} = {}", b.name, b.value));
        }
        blocks.push(SemanticBlock { kind: BlockKind::Data, normalized_tokens: tokens });
    }
    if !script.setup.is_empty() {
        let mut tokens = Vec::new();
        statement_tokens(&script.setup, &mut tokens);
        blocks.push(SemanticBlock { kind: BlockKind::Setup, normalized_tokens: tokens });
    }
    for step in &script.steps {
        let mut tokens = vec![quote(&step.title)];
        statement_tokens(&step.statements, &mut tokens);
        blocks.push(SemanticBlock { kind: BlockKind::Step(step.number), normalized_tokens: tokens });
    }
    if !script.teardown.is_empty() {
        let mut tokens = Vec::new();
        statement_tokens(&script.teardown, &mut tokens);
        blocks.push(SemanticBlock { kind: BlockKind::Teardown, normalized_tokens: tokens });
    }
    blocks
}
