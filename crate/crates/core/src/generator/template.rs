use std::collections::HashSet;

use super::GenerationRequest;
use crate::exec_harness::ApiRegistry;
use crate::retrieval::tokenize;
use crate::script_dsl::{
    parse_script, render_script, Arg, Binding, CallExpr, CmpOp, Comparison, Literal, Operand,
    Statement, StepBlock, TestScript,
};
use crate::spec_model::{SpecDocument, SpecStep};

fn title_of(step: &SpecStep) -> String {
    let t = step.action.split_whitespace().collect::<Vec<_>>().join(" ");
    if t.is_empty() {
        format!("step {}", step.index)
    } else {
        t
    }
}

/// Registry API whose name tokens all occur in the action. The API with the
/// most name tokens wins; ties go to the lexicographically smaller name.
fn api_for_action(action: &str, registry: &ApiRegistry) -> Option<String> {
    let words: HashSet<String> = tokenize(action).into_iter().collect();
    let mut best: Option<(&str, usize)> = None;
    for name in registry.names() {
        let parts: Vec<&str> = name.split('_').collect();
        if parts.iter().all(|p| words.contains(*p)) && best.is_none_or(|(_, n)| parts.len() > n) {
            best = Some((name, parts.len()));
        }
    }
    best.map(|(n, _)| n.to_owned())
}

/// Integers, upper-case codes (`HNV`, `ICE12`) and quoted strings, in order
/// of appearance.
fn literals_in(action: &str) -> Vec<Literal> {
    let mut out = Vec::new();
    let mut rest = action;
    while !rest.is_empty() {
        if let Some(after) = rest.strip_prefix('"') {
            if let Some(end) = after.find('"') {
                out.push(Literal::Str(after[..end].to_owned()));
                rest = &after[end + 1..];
                continue;
            }
        }
        let end = rest.find([' ', '\t', '\n', '"']).unwrap_or(rest.len()).max(1);
        let word = rest[..end].trim_matches(|c: char| !c.is_alphanumeric() && c != '-');
        if let Ok(i) = word.parse::<i64>() {
            out.push(Literal::Int(i));
        } else if word.len() >= 2
            && word.starts_with(|c: char| c.is_ascii_uppercase())
            && word.chars().all(|c| c.is_ascii_uppercase() || c.is_ascii_digit())
        {
            out.push(Literal::Str(word.to_owned()));
        }
        rest = &rest[end..];
    }
    out
}

/// Stub for a spec step with no counterpart in the retrieved script.
fn stub_statements(step: &SpecStep, data: &[Binding], registry: &ApiRegistry) -> Vec<Statement> {
    let Some(api) = api_for_action(&step.action, registry) else {
        return vec![Statement::Comment(title_of(step))];
    };
    let def = registry.get(&api).expect("api from registry");
    let mut args: Vec<Arg> = literals_in(&step.action)
        .into_iter()
        .map(|lit| match data.iter().find(|b| b.value == lit) {
            Some(b) => Arg::Var(b.name.clone()),
            None => Arg::Lit(lit),
        })
        .collect();
    args.truncate(def.arity());
    for param in &def.params[args.len()..] {
        args.push(match data.iter().find(|b| b.name == *param) {
            Some(b) => Arg::Var(b.name.clone()),
            None => Arg::Lit(Literal::Str(String::new())),
        });
    }
    let var = format!("r{}", step.index);
    vec![
        Statement::Let(var.clone(), CallExpr { name: api, args }),
        Statement::Assert(Comparison {
            lhs: Operand::Field(var, "status".into()),
            op: CmpOp::Eq,
            rhs: Operand::Lit(Literal::Str("OK".into())),
        }),
    ]
}

fn referenced(script: &TestScript, name: &str) -> bool {
    script.statement_blocks().any(|(_, stmts)| stmts.iter().any(|s| s.reads().contains(&name)))
}

fn adapt(spec: &SpecDocument, base: Option<TestScript>, registry: &ApiRegistry) -> TestScript {
    let spec_names: HashSet<&str> = spec.test_data.keys().map(String::as_str).collect();
    let mut script = base.unwrap_or_else(|| TestScript {
        header_key: String::new(),
        data: Vec::new(),
        setup: Vec::new(),
        steps: Vec::new(),
        teardown: Vec::new(),
    });
    script.header_key = spec.key.clone();

    for (name, value) in &spec.test_data {
        match script.data.iter_mut().find(|b| &b.name == name) {
            Some(b) => b.value = value.clone(),
            None => script.data.push(Binding { name: name.clone(), value: value.clone() }),
        }
    }

    let mut old_steps = std::mem::take(&mut script.steps).into_iter();
    for spec_step in &spec.steps {
        let statements = match old_steps.next() {
            Some(aligned) => aligned.statements,
            None => stub_statements(spec_step, &script.data, registry),
        };
        script.steps.push(StepBlock { number: spec_step.index, title: title_of(spec_step), statements });
    }

    let keep: Vec<bool> = script
        .data
        .iter()
        .map(|b| spec_names.contains(b.name.as_str()) || referenced(&script, &b.name))
        .collect();
    let mut keep = keep.into_iter();
    script.data.retain(|_| keep.next().unwrap_or(true));
    script
}

/// Deterministic retrieval-template generation: copy the top-ranked
/// historical script, rebind its data to the spec's test data, align steps
/// by index, stub missing steps and retitle everything to the spec actions.
/// Without retrieved pairs the result is a skeleton of stub steps.
pub fn generate_template(request: &GenerationRequest<'_>, registry: &ApiRegistry) -> String {
    let base = request
        .retrieved
        .first()
        .map(|hit| parse_script(&hit.pair.script_text).expect("historical scripts parse"));
    render_script(&adapt(request.spec, base, registry))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec_harness::default_registry;
    use crate::retrieval::{build_index, retrieve, HistoricalPair, OutcomeTag};
    use crate::spec_model::parse_spec;

    fn spec(key: &str, data: &str, steps: &[&str]) -> SpecDocument {
        let steps: Vec<String> = steps
            .iter()
            .enumerate()
            .map(|(i, a)| format!(r#"{{"index": {}, "action": "{a}", "expected": "ok"}}"#, i + 1))
            .collect();
        parse_spec(&format!(
            r#"{{"key": "{key}", "summary": "s", "functional_area": "timetable", "story_points": 3,
               "clarity": "A", "ci_config": {{"job": "j", "timeout_s": 5}}, "test_data": {{{data}}},
               "steps": [{}]}}"#,
            steps.join(",")
        ))
        .unwrap()
    }

    fn generate(spec: &SpecDocument, pairs: Vec<HistoricalPair>) -> TestScript {
        let index = build_index(pairs).unwrap();
        let hits = retrieve(&index, spec, 3);
        let req = GenerationRequest { spec, retrieved: &hits, prior_findings: &[], iteration: 1 };
        parse_script(&generate_template(&req, &default_registry())).unwrap()
    }

    #[test]
    fn skeleton_without_retrieval() {
        let s = spec("HAC-5", r#""origin": "HNV""#, &["reset the system", "look around", "query connection from HNV to BER"]);
        let script = generate(&s, vec![]);
        assert_eq!(script.header_key, "HAC-5");
        assert_eq!(script.steps.len(), 3);
        assert_eq!(
            script.steps[0].statements[0],
            Statement::Let("r1".into(), CallExpr { name: "reset_system".into(), args: vec![] })
        );
        assert_eq!(script.steps[1].statements, vec![Statement::Comment("look around".into())]);
        assert_eq!(
            script.steps[2].statements[0],
            Statement::Let(
                "r3".into(),
                CallExpr {
                    name: "query_connection".into(),
                    args: vec![Arg::Var("origin".into()), Arg::Lit(Literal::Str("BER".into()))]
                }
            )
        );
    }

    #[test]
    fn adapts_top_pair() {
        let hist_spec = spec("HIST-1", r#""origin": "AAA", "old": 1, "unused": 2"#, &["reset the system", "add train ICE1"]);
        let hist_script = r#"script "HIST-1"
data
  let origin = "AAA"
  let old = 1
  let unused = 2
step 1 "reset"
  call reset_system()
step 2 "add"
  let r = call add_train("ICE1", origin, "BER", old, 90)
  assert r.status == "OK"
teardown
  call reset_system()
"#;
        let pair = HistoricalPair::new(hist_spec, hist_script.into(), OutcomeTag::Accepted).unwrap();
        let s = spec("HAC-9", r#""origin": "HNV", "dest": "BER""#, &["reset the system", "add train ICE1", "cancel train ICE1"]);
        let script = generate(&s, vec![pair]);
        assert_eq!(script.header_key, "HAC-9");
        let data: Vec<_> = script.data.iter().map(|b| (b.name.as_str(), b.value.clone())).collect();
        assert_eq!(
            data,
            [("origin", Literal::from("HNV")), ("old", Literal::Int(1)), ("dest", Literal::from("BER"))]
        );
        let titles: Vec<_> = script.steps.iter().map(|s| s.title.as_str()).collect();
        assert_eq!(titles, ["reset the system", "add train ICE1", "cancel train ICE1"]);
        assert_eq!(script.steps[2].statements[0].call().unwrap().name, "cancel_train");
        assert_eq!(script.steps[2].statements[0].call().unwrap().args, [Arg::Lit("ICE1".into())]);
        assert_eq!(script.teardown.len(), 1);
    }

    #[test]
    fn api_matching_rules() {
        let r = default_registry();
        assert_eq!(api_for_action("reset the system", &r).as_deref(), Some("reset_system"));
        assert_eq!(api_for_action("get train ICE1 details", &r).as_deref(), Some("get_train"));
        assert_eq!(api_for_action("verify the result", &r), None);
        assert_eq!(
            literals_in(r#"add train ICE7 from HNV to "Berlin Hbf" at 10, arriving 80."#),
            [
                Literal::from("ICE7"),
                Literal::from("HNV"),
                Literal::from("Berlin Hbf"),
                Literal::Int(10),
                Literal::Int(80)
            ]
        );
    }
}
