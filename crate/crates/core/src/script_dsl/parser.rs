use std::fmt;

use super::lexer::{lex_line, Token};
use super::{
    is_name, is_spec_key, Arg, Binding, CallExpr, Comparison, Literal, Operand, Statement,
    StepBlock, TestScript,
};

/// First error found while parsing, with a 1-based line number.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

fn err<T>(line: usize, message: impl Into<String>) -> Result<T, ParseError> {
    Err(ParseError { line, message: message.into() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Section {
    Header,
    Data,
    Setup,
    Step,
    Teardown,
}

impl Section {
    fn name(self) -> &'static str {
        match self {
            Section::Header => "script",
            Section::Data => "data",
            Section::Setup => "setup",
            Section::Step => "step",
            Section::Teardown => "teardown",
        }
    }
}

struct Parser {
    script: TestScript,
    section: Section,
    section_line: usize,
    section_len: usize,
}

/// Parses script source into an AST. Comments inside statement blocks are
/// kept as [`Statement::Comment`]; blank lines are ignored.
pub fn parse_script(text: &str) -> Result<TestScript, ParseError> {
    let mut lines = text
        .split('\n')
        .map(|l| l.strip_suffix('\r').unwrap_or(l))
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty());

    let Some((first_no, first)) = lines.next() else {
        return err(1, "expected script header");
    };
    let header_key = parse_header(first_no, first)?;
    let mut parser = Parser {
        script: TestScript {
            header_key,
            data: Vec::new(),
            setup: Vec::new(),
            steps: Vec::new(),
            teardown: Vec::new(),
        },
        section: Section::Header,
        section_line: first_no,
        section_len: 0,
    };
    let mut last_line = first_no;
    for (no, line) in lines {
        last_line = no;
        if line.starts_with([' ', '\t']) {
            parser.statement_line(no, line.trim())?;
        } else {
            parser.section_line(no, line.trim_end())?;
        }
    }
    parser.close_section()?;
    if parser.script.steps.is_empty() {
        return err(last_line, "expected at least one step block");
    }
    Ok(parser.script)
}

fn parse_header(no: usize, line: &str) -> Result<String, ParseError> {
    if line.starts_with([' ', '\t']) {
        return err(no, "expected script header");
    }
    let tokens = lex_line(line).map_err(|m| ParseError { line: no, message: m })?;
    match tokens.as_slice() {
        [Token::Ident(kw), Token::Str(key)] if kw == "script" => {
            if is_spec_key(key) {
                Ok(key.clone())
            } else {
                err(no, format!("invalid script key `{key}`"))
            }
        }
        _ => err(no, "expected script header"),
    }
}

impl Parser {
    fn close_section(&mut self) -> Result<(), ParseError> {
        if self.section != Section::Header && self.section_len == 0 {
            return err(
                self.section_line,
                format!("`{}` block has no statements", self.section.name()),
            );
        }
        Ok(())
    }

    fn open(&mut self, no: usize, next: Section) -> Result<(), ParseError> {
        self.close_section()?;
        let allowed = match next {
            Section::Step => self.section <= Section::Step,
            Section::Teardown => self.section == Section::Step,
            other => self.section < other,
        };
        if !allowed {
            return err(no, format!("unexpected `{}` block here", next.name()));
        }
        self.section = next;
        self.section_line = no;
        self.section_len = 0;
        Ok(())
    }

    fn section_line(&mut self, no: usize, line: &str) -> Result<(), ParseError> {
        if line.starts_with('#') {
            return err(no, "comments must be indented inside a block");
        }
        let tokens = lex_line(line).map_err(|m| ParseError { line: no, message: m })?;
        let keyword = match tokens.first() {
            Some(Token::Ident(k)) => k.as_str(),
            Some(t) => return err(no, format!("unexpected {}", t.describe())),
            None => return err(no, "empty line"),
        };
        let simple = |s: Section| -> Result<Section, ParseError> {
            if tokens.len() > 1 {
                return err(no, format!("unexpected {} after `{}`", tokens[1].describe(), s.name()));
            }
            Ok(s)
        };
        match keyword {
            "data" => self.open(no, simple(Section::Data)?),
            "setup" => self.open(no, simple(Section::Setup)?),
            "teardown" => self.open(no, simple(Section::Teardown)?),
            "step" => {
                let expected = self.script.steps.len() as u32 + 1;
                let (number, title) = match tokens.as_slice() {
                    [_, Token::Int(n), Token::Str(t)] => (*n, t.clone()),
                    _ => return err(no, "expected `step <number> \"<title>\"`"),
                };
                if number != i64::from(expected) {
                    return err(
                        no,
                        format!("out-of-order step number: expected {expected}, found {number}"),
                    );
                }
                if title.trim().is_empty() {
                    return err(no, "step title must not be empty");
                }
                self.open(no, Section::Step)?;
                self.script.steps.push(StepBlock { number: expected, title, statements: Vec::new() });
                Ok(())
            }
            "script" => err(no, "duplicate script header"),
            other => err(no, format!("unknown keyword `{other}`")),
        }
    }

    fn statement_line(&mut self, no: usize, line: &str) -> Result<(), ParseError> {
        if self.section == Section::Header {
            return err(no, "statement outside of a block");
        }
        self.section_len += 1;
        if self.section == Section::Data {
            let binding = parse_binding(no, line)?;
            self.script.data.push(binding);
            return Ok(());
        }
        let stmt = parse_statement(no, line)?;
        match self.section {
            Section::Setup => self.script.setup.push(stmt),
            Section::Teardown => self.script.teardown.push(stmt),
            _ => self
                .script
                .steps
                .last_mut()
                .expect("step section has a step")
                .statements
                .push(stmt),
        }
        Ok(())
    }
}

fn lex(no: usize, line: &str) -> Result<Vec<Token>, ParseError> {
    lex_line(line).map_err(|message| ParseError { line: no, message })
}

fn parse_binding(no: usize, line: &str) -> Result<Binding, ParseError> {
    let tokens = lex(no, line)?;
    let mut cur = Cursor { tokens: &tokens, pos: 0, line: no };
    cur.keyword("let", "data block accepts only `let` bindings")?;
    let name = cur.name()?;
    cur.expect(&Token::Assign, "`=`")?;
    let value = match cur.next() {
        Some(t) => literal_of(t).ok_or_else(|| ParseError {
            line: no,
            message: format!("expected literal, found {}", t.describe()),
        })?,
        None => return err(no, "expected literal"),
    };
    cur.end()?;
    Ok(Binding { name, value })
}

fn parse_statement(no: usize, line: &str) -> Result<Statement, ParseError> {
    if let Some(rest) = line.strip_prefix('#') {
        return Ok(Statement::Comment(rest.trim().to_owned()));
    }
    let tokens = lex(no, line)?;
    let mut cur = Cursor { tokens: &tokens, pos: 0, line: no };
    let stmt = match cur.peek() {
        Some(Token::Ident(k)) if k == "let" => {
            cur.next();
            let name = cur.name()?;
            cur.expect(&Token::Assign, "`=`")?;
            Statement::Let(name, cur.call()?)
        }
        Some(Token::Ident(k)) if k == "call" => Statement::Call(cur.call()?),
        Some(Token::Ident(k)) if k == "assert" => {
            cur.next();
            let lhs = cur.operand()?;
            let op = match cur.next() {
                Some(Token::Op(op)) => *op,
                Some(t) => return err(no, format!("expected comparison operator, found {}", t.describe())),
                None => return err(no, "expected comparison operator"),
            };
            let rhs = cur.operand()?;
            Statement::Assert(Comparison { lhs, op, rhs })
        }
        Some(Token::Ident(k)) => return err(no, format!("unknown keyword `{k}`")),
        Some(t) => return err(no, format!("unexpected {}", t.describe())),
        None => return err(no, "empty statement"),
    };
    cur.end()?;
    Ok(stmt)
}

fn literal_of(t: &Token) -> Option<Literal> {
    match t {
        Token::Int(i) => Some(Literal::Int(*i)),
        Token::Str(s) => Some(Literal::Str(s.clone())),
        Token::Ident(k) if k == "true" => Some(Literal::Bool(true)),
        Token::Ident(k) if k == "false" => Some(Literal::Bool(false)),
        _ => None,
    }
}

struct Cursor<'a> {
    tokens: &'a [Token],
    pos: usize,
    line: usize,
}

impl<'a> Cursor<'a> {
    fn peek(&self) -> Option<&'a Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<&'a Token> {
        let t = self.tokens.get(self.pos);
        self.pos += 1;
        t
    }

    fn fail<T>(&self, what: &str) -> Result<T, ParseError> {
        match self.tokens.get(self.pos.saturating_sub(1)) {
            Some(t) if self.pos <= self.tokens.len() => {
                err(self.line, format!("expected {what}, found {}", t.describe()))
            }
            _ => err(self.line, format!("expected {what}, found end of line")),
        }
    }

    fn keyword(&mut self, kw: &str, message: &str) -> Result<(), ParseError> {
        match self.next() {
            Some(Token::Ident(k)) if k == kw => Ok(()),
            _ => err(self.line, message),
        }
    }

    fn expect(&mut self, want: &Token, what: &str) -> Result<(), ParseError> {
        match self.next() {
            Some(t) if t == want => Ok(()),
            _ => self.fail(what),
        }
    }

    fn name(&mut self) -> Result<String, ParseError> {
        match self.next() {
            Some(Token::Ident(n)) if is_name(n) => Ok(n.clone()),
            Some(Token::Ident(n)) => err(self.line, format!("keyword `{n}` cannot be used as a name")),
            _ => self.fail("name"),
        }
    }

    fn call(&mut self) -> Result<CallExpr, ParseError> {
        self.keyword("call", "expected `call`")?;
        let name = self.name()?;
        self.expect(&Token::LParen, "`(`")?;
        let mut args = Vec::new();
        if self.peek() == Some(&Token::RParen) {
            self.next();
            return Ok(CallExpr { name, args });
        }
        loop {
            let arg = match self.next() {
                Some(t) => match literal_of(t) {
                    Some(lit) => Arg::Lit(lit),
                    None => match t {
                        Token::Ident(n) if is_name(n) => Arg::Var(n.clone()),
                        _ => return self.fail("argument"),
                    },
                },
                None => return self.fail("argument"),
            };
            args.push(arg);
            match self.next() {
                Some(Token::Comma) => continue,
                Some(Token::RParen) => break,
                _ => return self.fail("`,` or `)`"),
            }
        }
        Ok(CallExpr { name, args })
    }

    fn operand(&mut self) -> Result<Operand, ParseError> {
        let t = match self.next() {
            Some(t) => t,
            None => return self.fail("operand"),
        };
        if let Some(lit) = literal_of(t) {
            return Ok(Operand::Lit(lit));
        }
        let var = match t {
            Token::Ident(n) if is_name(n) => n.clone(),
            _ => return self.fail("operand"),
        };
        if self.peek() == Some(&Token::Dot) {
            self.next();
            let field = self.name()?;
            return Ok(Operand::Field(var, field));
        }
        Ok(Operand::Var(var))
    }

    fn end(&mut self) -> Result<(), ParseError> {
        match self.next() {
            None => Ok(()),
            Some(t) => err(self.line, format!("unexpected {} at end of statement", t.describe())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::script_dsl::CmpOp;

    const FULL: &str = r#"script "HAC-7"
data
  let origin = "HNV"
  let dep = 10
setup
  call reset_system()
step 1 "add a train"
  let r1 = call add_train("ICE1", origin, "BER", dep, 80)
  assert r1.status == "OK"
step 2 "query"
  # look it up
  let r2 = call query_connection(origin, "BER")
  assert r2.count >= 1
teardown
  call reset_system()
"#;

    #[test]
    fn parses_full_script() {
        let s = parse_script(FULL).unwrap();
        assert_eq!(s.header_key, "HAC-7");
        assert_eq!(s.data.len(), 2);
        assert_eq!(s.data[1].value, Literal::Int(10));
        assert_eq!(s.setup.len(), 1);
        assert_eq!(s.steps.len(), 2);
        assert_eq!(s.steps[1].statements[0], Statement::Comment("look it up".into()));
        match &s.steps[1].statements[2] {
            Statement::Assert(c) => {
                assert_eq!(c.op, CmpOp::Ge);
                assert_eq!(c.lhs, Operand::Field("r2".into(), "count".into()));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(s.teardown.len(), 1);
    }

    #[test]
    fn minimal_script() {
        let s = parse_script("script \"HAC-1\"\nstep 1 \"reset\"\n  call reset_system()\n").unwrap();
        assert_eq!(s.steps.len(), 1);
        assert!(s.data.is_empty() && s.setup.is_empty() && s.teardown.is_empty());
    }

    #[test]
    fn missing_header_is_line_one() {
        let e = parse_script("step 1 \"x\"\n  call reset_system()\n").unwrap_err();
        assert_eq!(e, ParseError { line: 1, message: "expected script header".into() });
        assert_eq!(parse_script("").unwrap_err().line, 1);
    }

    #[test]
    fn out_of_order_steps() {
        let src = "script \"HAC-1\"\nstep 2 \"b\"\n  call reset_system()\nstep 1 \"a\"\n  call reset_system()\n";
        let e = parse_script(src).unwrap_err();
        assert_eq!(e.line, 2);
        assert!(e.message.contains("out-of-order"));
    }

    #[test]
    fn reports_offending_line() {
        let cases = [
            ("script \"HAC-1\"\nstep 1 \"a\"\n  frob x\n", 3, "unknown keyword `frob`"),
            ("script \"HAC-1\"\nstep 1 \"a\"\n  call f(\n", 3, "expected argument"),
            ("script \"HAC-1\"\nstep 1 \"a\"\n", 2, "no statements"),
            ("script \"HAC-1\"\n", 1, "at least one step"),
            ("script \"hac\"\n", 1, "invalid script key"),
            ("script \"HAC-1\"\nstep 1 \"a\"\n  call f()\ndata\n  let x = 1\n", 4, "unexpected `data`"),
            ("script \"HAC-1\"\nwidget\n", 2, "unknown keyword"),
            ("script \"HAC-1\"\n  call f()\n", 2, "outside of a block"),
            ("script \"HAC-1\"\ndata\n  let x = y\nstep 1 \"a\"\n  call f()\n", 3, "expected literal"),
            ("script \"HAC-1\"\nstep 1 \"a\"\n  assert r.x\n", 3, "comparison operator"),
            ("script \"HAC-1\"\nstep 1 \"a\"\n  let step = call f()\n", 3, "keyword"),
            ("script \"HAC-1\"\nstep 1 \"  \"\n  call f()\n", 2, "title"),
            ("script \"HAC-1\"\nteardown\n  call f()\n", 2, "unexpected `teardown`"),
        ];
        for (src, line, msg) in cases {
            let e = parse_script(src).unwrap_err();
            assert_eq!(e.line, line, "{src:?} -> {e}");
            assert!(e.message.contains(msg), "{src:?} -> {e}");
        }
    }

    #[test]
    fn blank_lines_and_crlf() {
        let src = "script \"HAC-1\"\r\n\r\nstep 1 \"a\"\r\n\r\n  call reset_system()\r\n";
        assert_eq!(parse_script(src).unwrap().steps[0].statements.len(), 1);
    }
}
