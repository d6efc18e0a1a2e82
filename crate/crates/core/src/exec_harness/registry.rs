use std::collections::BTreeMap;

use serde::Serialize;

use crate::script_dsl::{BlockKind, TestScript};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiDef {
    pub params: Vec<&'static str>,
    pub results: Vec<&'static str>,
}

impl ApiDef {
    pub fn arity(&self) -> usize {
        self.params.len()
    }
}

/// Known SUT APIs. Anything a script calls outside this set is hallucinated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiRegistry {
    apis: BTreeMap<String, ApiDef>,
}

impl ApiRegistry {
    pub fn get(&self, name: &str) -> Option<&ApiDef> {
        self.apis.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.apis.contains_key(name)
    }

    /// Names in lexicographic order.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.apis.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ApiDef)> {
        self.apis.iter().map(|(k, v)| (k.as_str(), v))
    }
}

pub fn default_registry() -> ApiRegistry {
    let api = |params: &[&'static str], results: &[&'static str]| ApiDef {
        params: params.to_vec(),
        results: results.to_vec(),
    };
    let apis = [
        ("reset_system", api(&[], &["status"])),
        ("add_train", api(&["id", "origin", "dest", "dep_min", "arr_min"], &["status"])),
        ("cancel_train", api(&["id"], &["status"])),
        ("get_train", api(&["id"], &["status", "origin", "dest", "dep_min", "arr_min"])),
        ("query_connection", api(&["origin", "dest"], &["status", "count", "earliest_dep", "latest_arr"])),
    ];
    ApiRegistry { apis: apis.into_iter().map(|(n, d)| (n.to_owned(), d)).collect() }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ApiProblem {
    UnknownName,
    ArityMismatch { expected: usize, found: usize },
}

/// A call site that does not match the registry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownApi {
    pub block: BlockKind,
    /// 1-based statement position inside the block.
    pub stmt: usize,
    pub name: String,
    pub problem: ApiProblem,
}

pub fn check_api_names(script: &TestScript, registry: &ApiRegistry) -> Vec<UnknownApi> {
    let mut out = Vec::new();
    for (block, stmts) in script.statement_blocks() {
        for (i, stmt) in stmts.iter().enumerate() {
            let Some(call) = stmt.call() else { continue };
            let problem = match registry.get(&call.name) {
                None => ApiProblem::UnknownName,
                Some(def) if def.arity() != call.args.len() => {
                    ApiProblem::ArityMismatch { expected: def.arity(), found: call.args.len() }
                }
                Some(_) => continue,
            };
            out.push(UnknownApi { block, stmt: i + 1, name: call.name.clone(), problem });
        }
    }
    out
}
