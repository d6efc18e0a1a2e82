//! The test-script language.
//!
//! Scripts are line oriented. A header names the specification key, an
//! optional `data` block binds literals, then come an optional `setup`
//! block, one or more numbered `step` blocks and an optional `teardown`.
//!
//! ```text
//! script "HAC-101"
//! data
//!   let origin = "HNV"
//! step 1 "query connection from HNV"
//!   let r1 = call query_connection(origin, "BER")
//!   assert r1.count >= 1
//! teardown
//!   call reset_system()
//! ```

mod blocks;
mod lexer;
mod parser;
mod render;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use blocks::{semantic_blocks, BlockKind, SemanticBlock};
pub use parser::{parse_script, ParseError};
pub use render::{render_script, render_statement};

/// Keywords that can never be used as a binding or field name.
pub const KEYWORDS: &[&str] = &[
    "script", "data", "setup", "step", "teardown", "let", "call", "assert", "true", "false",
];

/// Grammar sketch shipped with generation prompts.
pub const GRAMMAR_EBNF: &str = r#"script   := 'script' STRING NL [data] [setup] step+ [teardown]
data     := 'data' NL (INDENT 'let' NAME '=' literal NL)+
setup    := 'setup' NL stmt+
step     := 'step' INT STRING NL stmt+
teardown := 'teardown' NL stmt+
stmt     := INDENT ('let' NAME '=' call | call | 'assert' cmp | '#' TEXT) NL
call     := 'call' NAME '(' [arg (',' arg)*] ')'
arg      := literal | NAME
cmp      := operand OP operand        OP := '=='|'!='|'<'|'<='|'>'|'>='
operand  := literal | NAME | NAME '.' NAME
literal  := STRING | INT | 'true' | 'false'"#;

/// A literal value, shared by scripts and specification test data.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Literal {
    Bool(bool),
    Int(i64),
    Str(String),
}

impl Literal {
    pub fn type_name(&self) -> &'static str {
        match self {
            Literal::Bool(_) => "bool",
            Literal::Int(_) => "int",
            Literal::Str(_) => "string",
        }
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Bool(b) => write!(f, "{b}"),
            Literal::Int(i) => write!(f, "{i}"),
            Literal::Str(s) => f.write_str(&render::quote(s)),
        }
    }
}

impl From<&str> for Literal {
    fn from(s: &str) -> Self {
        Literal::Str(s.to_owned())
    }
}

impl From<i64> for Literal {
    fn from(i: i64) -> Self {
        Literal::Int(i)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Binding {
    pub name: String,
    pub value: Literal,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Arg {
    Lit(Literal),
    Var(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CallExpr {
    pub name: String,
    pub args: Vec<Arg>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub const ALL: [CmpOp; 6] = [CmpOp::Eq, CmpOp::Ne, CmpOp::Lt, CmpOp::Le, CmpOp::Gt, CmpOp::Ge];

    pub fn as_str(self) -> &'static str {
        match self {
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }

    pub fn is_equality(self) -> bool {
        matches!(self, CmpOp::Eq | CmpOp::Ne)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Operand {
    Lit(Literal),
    Var(String),
    Field(String, String),
}

impl Operand {
    /// Variable the operand reads, if any.
    pub fn var(&self) -> Option<&str> {
        match self {
            Operand::Lit(_) => None,
            Operand::Var(v) | Operand::Field(v, _) => Some(v),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Comparison {
    pub lhs: Operand,
    pub op: CmpOp,
    pub rhs: Operand,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Statement {
    Let(String, CallExpr),
    Call(CallExpr),
    Assert(Comparison),
    Comment(String),
}

impl Statement {
    pub fn call(&self) -> Option<&CallExpr> {
        match self {
            Statement::Let(_, c) | Statement::Call(c) => Some(c),
            _ => None,
        }
    }

    pub fn is_assert(&self) -> bool {
        matches!(self, Statement::Assert(_))
    }

    pub fn is_comment(&self) -> bool {
        matches!(self, Statement::Comment(_))
    }

    /// Variables read by this statement.
    pub fn reads(&self) -> Vec<&str> {
        match self {
            Statement::Let(_, c) | Statement::Call(c) => c
                .args
                .iter()
                .filter_map(|a| match a {
                    Arg::Var(v) => Some(v.as_str()),
                    Arg::Lit(_) => None,
                })
                .collect(),
            Statement::Assert(cmp) => [cmp.lhs.var(), cmp.rhs.var()].into_iter().flatten().collect(),
            Statement::Comment(_) => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepBlock {
    pub number: u32,
    pub title: String,
    pub statements: Vec<Statement>,
}

/// Parsed script. Empty `data`, `setup` and `teardown` mean the block is absent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TestScript {
    pub header_key: String,
    pub data: Vec<Binding>,
    pub setup: Vec<Statement>,
    pub steps: Vec<StepBlock>,
    pub teardown: Vec<Statement>,
}

impl TestScript {
    /// Iterates `(block, statements)` for every statement block present,
    /// in source order. The data block is not included.
    pub fn statement_blocks(&self) -> impl Iterator<Item = (BlockKind, &[Statement])> {
        let setup = (!self.setup.is_empty()).then_some((BlockKind::Setup, self.setup.as_slice()));
        let teardown =
            (!self.teardown.is_empty()).then_some((BlockKind::Teardown, self.teardown.as_slice()));
        setup
            .into_iter()
            .chain(self.steps.iter().map(|s| (BlockKind::Step(s.number), s.statements.as_slice())))
            .chain(teardown)
    }

    pub fn step(&self, number: u32) -> Option<&StepBlock> {
        self.steps.iter().find(|s| s.number == number)
    }

    pub fn block_count(&self) -> usize {
        usize::from(!self.data.is_empty())
            + usize::from(!self.setup.is_empty())
            + self.steps.len()
            + usize::from(!self.teardown.is_empty())
    }

    pub fn data_value(&self, name: &str) -> Option<&Literal> {
        self.data.iter().find(|b| b.name == name).map(|b| &b.value)
    }
}

/// True when `key` has the `ABC-123` shape used for specification keys.
pub fn is_spec_key(key: &str) -> bool {
    let Some((prefix, digits)) = key.split_once('-') else {
        return false;
    };
    !prefix.is_empty()
        && prefix.bytes().all(|b| b.is_ascii_uppercase())
        && !digits.is_empty()
        && digits.bytes().all(|b| b.is_ascii_digit())
}

pub fn is_name(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
        && !KEYWORDS.contains(&s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_key_shape() {
        assert!(is_spec_key("HAC-101"));
        assert!(!is_spec_key("hac-101"));
        assert!(!is_spec_key("HAC-"));
        assert!(!is_spec_key("HAC101"));
        assert!(!is_spec_key("HAC-1-2"));
    }

    #[test]
    fn keywords_are_not_names() {
        assert!(is_name("r1"));
        assert!(is_name("_tmp"));
        assert!(!is_name("step"));
        assert!(!is_name("1r"));
    }
}
