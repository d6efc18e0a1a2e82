use std::fmt::Write;

use super::{Arg, CallExpr, Comparison, Operand, Statement, TestScript};

pub(crate) fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

fn call(c: &CallExpr) -> String {
    let args: Vec<String> = c
        .args
        .iter()
        .map(|a| match a {
            Arg::Lit(l) => l.to_string(),
            Arg::Var(v) => v.clone(),
        })
        .collect();
    format!("call {}({})", c.name, args.join(", "))
}

fn operand(o: &Operand) -> String {
    match o {
        Operand::Lit(l) => l.to_string(),
        Operand::Var(v) => v.clone(),
        Operand::Field(v, f) => format!("{v}.{f}"),
    }
}

fn comparison(c: &Comparison) -> String {
    format!("{} {} {}", operand(&c.lhs), c.op.as_str(), operand(&c.rhs))
}

/// Canonical single-line form of a statement, without indentation.
pub fn render_statement(stmt: &Statement) -> String {
    match stmt {
        Statement::Let(name, c) => format!("let {name} = {}", call(c)),
        Statement::Call(c) => call(c),
        Statement::Assert(cmp) => format!("assert {}", comparison(cmp)),
        Statement::Comment(text) if text.is_empty() => "#".to_owned(),
        Statement::Comment(text) => format!("# {}", text.replace(['\n', '\r'], " ")),
    }
}

/// Canonical text: two-space indentation, one statement per line, absent
/// blocks omitted, trailing newline.
pub fn render_script(script: &TestScript) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "script {}", quote(&script.header_key));
    if !script.data.is_empty() {
        out.push_str("data\n");
        for b in &script.data {
            let _ = writeln!(out, "  let {} = {}", b.name, b.value);
        }
    }
    let block = |out: &mut String, header: String, stmts: &[Statement]| {
        out.push_str(&header);
        out.push('\n');
        for s in stmts {
            let _ = writeln!(out, "  {}", render_statement(s));
        }
    };
    if !script.setup.is_empty() {
        block(&mut out, "setup".to_owned(), &script.setup);
    }
    for step in &script.steps {
        block(&mut out, format!("step {} {}", step.number, quote(&step.title)), &step.statements);
    }
    if !script.teardown.is_empty() {
        block(&mut out, "teardown".to_owned(), &script.teardown);
    }
    out
}
