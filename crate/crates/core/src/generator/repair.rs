use std::collections::HashSet;

use super::nearest_api;
use crate::evaluator::{Finding, FindingCode, Location};
use crate::exec_harness::ApiRegistry;
use crate::script_dsl::{
    render_statement, BlockKind, CallExpr, CmpOp, Comparison, Literal, Operand, Statement, TestScript,
};

/// Comment appended to a step that has nothing to assert on.
pub const GAP_NOTE: &str = "no assertion: expected result of this step is not checked";

fn block_mut(script: &mut TestScript, block: BlockKind) -> Option<&mut Vec<Statement>> {
    match block {
        BlockKind::Data => None,
        BlockKind::Setup => Some(&mut script.setup),
        BlockKind::Teardown => Some(&mut script.teardown),
        BlockKind::Step(n) => script.steps.iter_mut().find(|s| s.number == n).map(|s| &mut s.statements),
    }
}

fn comment_out(stmt: &Statement) -> Statement {
    Statement::Comment(render_statement(stmt))
}

/// Comments out every statement after `(block, pos)` that reads a binding
/// which no longer exists, following the chain through later blocks.
fn comment_out_dependents(script: &mut TestScript, block: BlockKind, pos: usize, dead: String) {
    let mut dead: HashSet<String> = HashSet::from([dead]);
    let order: Vec<BlockKind> = script.statement_blocks().map(|(b, _)| b).collect();
    for b in order.into_iter().filter(|b| *b >= block) {
        let stmts = block_mut(script, b).expect("statement block");
        let start = if b == block { pos + 1 } else { 0 };
        for stmt in stmts.iter_mut().skip(start) {
            if stmt.reads().iter().any(|v| dead.contains(*v)) {
                if let Statement::Let(name, _) = stmt {
                    dead.insert(name.clone());
                }
                *stmt = comment_out(stmt);
            } else if let Statement::Let(name, _) = stmt {
                dead.remove(name);
            }
        }
    }
}

fn fix_api(script: &mut TestScript, block: BlockKind, pos: usize, registry: &ApiRegistry) {
    let Some(stmts) = block_mut(script, block) else { return };
    let Some(stmt) = stmts.get_mut(pos) else { return };
    let Some(call) = stmt.call() else { return };
    let fits = |name: &str, call: &CallExpr| registry.get(name).is_some_and(|d| d.arity() == call.args.len());
    if fits(&call.name, call) {
        return;
    }
    if !registry.contains(&call.name) {
        if let Some((near, _)) = nearest_api(&call.name, registry) {
            if fits(&near, call) {
                match stmt {
                    Statement::Let(_, c) | Statement::Call(c) => c.name = near,
                    _ => unreachable!(),
                }
                return;
            }
        }
    }
    let bound = match stmt {
        Statement::Let(name, _) => Some(name.clone()),
        _ => None,
    };
    *stmt = comment_out(stmt);
    if let Some(name) = bound {
        comment_out_dependents(script, block, pos, name);
    }
}

fn fix_missing_assert(script: &mut TestScript, number: u32, registry: &ApiRegistry) {
    let Some(step) = script.steps.iter_mut().find(|s| s.number == number) else { return };
    if step.statements.iter().any(Statement::is_assert) {
        return;
    }
    let last_bound = step.statements.iter().rev().find_map(|s| match s {
        Statement::Let(name, call) if registry.contains(&call.name) => Some(name.clone()),
        _ => None,
    });
    match last_bound {
        Some(var) => step.statements.push(Statement::Assert(Comparison {
            lhs: Operand::Field(var, "status".into()),
            op: CmpOp::Eq,
            rhs: Operand::Lit(Literal::Str("OK".into())),
        })),
        None => {
            let note = Statement::Comment(GAP_NOTE.into());
            if step.statements.last() != Some(&note) {
                step.statements.push(note);
            }
        }
    }
}

/// Applies the mechanical fixes the evaluator findings point at:
///
/// * unknown API: rename to the nearest registry API (at most two edits
///   away, same arity), otherwise comment the call out together with the
///   statements that depend on its result;
/// * step without assert: check the status of the step's last call result,
///   or leave a note when there is none;
/// * missing teardown: add one that resets the system.
///
/// Other findings are left for a human. Repairing an already repaired
/// script with the same findings changes nothing.
pub fn repair(script: &TestScript, findings: &[Finding], registry: &ApiRegistry) -> TestScript {
    let mut out = script.clone();
    for f in findings.iter().filter(|f| f.code == FindingCode::L4UnknownApi) {
        if let Location::Block { block, stmt: Some(pos) } = f.location {
            fix_api(&mut out, block, pos - 1, registry);
        }
    }
    for f in findings.iter().filter(|f| f.code == FindingCode::L2NoAssert) {
        if let Location::Block { block: BlockKind::Step(n), .. } = f.location {
            fix_missing_assert(&mut out, n, registry);
        }
    }
    if findings.iter().any(|f| f.code == FindingCode::L3NoTeardown) && out.teardown.is_empty() {
        out.teardown.push(Statement::Call(CallExpr { name: "reset_system".into(), args: vec![] }));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluator::eval_improvement;
    use crate::exec_harness::default_registry;
    use crate::script_dsl::{parse_script, render_script};

    fn fixed(src: &str) -> (TestScript, TestScript) {
        let r = default_registry();
        let s = parse_script(src).unwrap();
        let (_, findings) = eval_improvement(&s, &r);
        let once = repair(&s, &findings, &r);
        (s, once)
    }

    #[test]
    fn renames_close_api() {
        let (_, out) = fixed("script \"HAC-1\"\nstep 1 \"a\"\n  let r = call add_tain(\"A\", \"B\", \"C\", 1, 2)\n  assert r.status == \"OK\"\nteardown\n  call reset_system()\n");
        assert_eq!(out.steps[0].statements[0].call().unwrap().name, "add_train");
        assert_eq!(out.steps[0].statements.len(), 2);
    }

    #[test]
    fn comments_out_far_api_and_dependents() {
        let (_, out) = fixed(
            "script \"HAC-1\"\nstep 1 \"a\"\n  let snap = call fetch_timetable_snapshot(\"HNV\")\n  assert snap.count == 1\n  call reset_system()\nstep 2 \"b\"\n  assert snap.status == \"OK\"\n  let snap = call reset_system()\n  assert snap.status == \"OK\"\nteardown\n  call reset_system()\n",
        );
        let text = render_script(&out);
        assert!(text.contains("  # let snap = call fetch_timetable_snapshot(\"HNV\")\n"));
        assert!(text.contains("  # assert snap.count == 1\n"));
        assert!(text.contains("step 2 \"b\"\n  # assert snap.status == \"OK\"\n  let snap = call reset_system()\n  assert snap.status == \"OK\"\n"));
        assert_eq!(out.steps.len(), 2);
    }

    #[test]
    fn arity_mismatch_is_commented_out() {
        let (_, out) = fixed("script \"HAC-1\"\nstep 1 \"a\"\n  call add_train(\"A\")\n  call reset_system()\nteardown\n  call reset_system()\n");
        assert!(out.steps[0].statements[0].is_comment());
    }

    #[test]
    fn adds_assert_and_teardown() {
        let (_, out) = fixed("script \"HAC-1\"\nstep 1 \"a\"\n  let q = call query_connection(\"A\", \"B\")\nstep 2 \"b\"\n  # nothing to call\n");
        let text = render_script(&out);
        assert!(text.contains("  let q = call query_connection(\"A\", \"B\")\n  assert q.status == \"OK\"\n"));
        assert!(text.contains(&format!("  # nothing to call\n  # {GAP_NOTE}\n")));
        assert!(text.ends_with("teardown\n  call reset_system()\n"));
    }

    #[test]
    fn idempotent() {
        let r = default_registry();
        let (s, once) = fixed("script \"HAC-1\"\nstep 1 \"a\"\n  let q = call query_conection(\"A\", \"B\")\nstep 2 \"b\"\n  call zzz()\n");
        let (_, findings) = eval_improvement(&s, &r);
        assert_eq!(repair(&once, &findings, &r), once);
        let (_, after) = eval_improvement(&once, &r);
        assert_eq!(repair(&repair(&once, &after, &r), &after, &r), repair(&once, &after, &r));
    }
}
