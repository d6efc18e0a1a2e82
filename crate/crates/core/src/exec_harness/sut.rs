use std::collections::BTreeMap;

use indexmap::IndexMap;

use crate::script_dsl::Literal;

pub type Record = IndexMap<String, Literal>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Train {
    pub origin: String,
    pub dest: String,
    pub dep_min: i64,
    pub arr_min: i64,
    pub cancelled: bool,
}

/// Simulated journey-planning service. Direct connections only.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SutState {
    pub trains: BTreeMap<String, Train>,
}

fn status(s: &str) -> Record {
    let mut r = Record::new();
    r.insert("status".into(), Literal::Str(s.into()));
    r
}

fn str_arg<'a>(args: &'a [Literal], i: usize, param: &str) -> Result<&'a str, String> {
    match &args[i] {
        Literal::Str(s) => Ok(s),
        other => Err(format!("type mismatch: `{param}` expects string, got {}", other.type_name())),
    }
}

fn int_arg(args: &[Literal], i: usize, param: &str) -> Result<i64, String> {
    match &args[i] {
        Literal::Int(v) => Ok(*v),
        other => Err(format!("type mismatch: `{param}` expects int, got {}", other.type_name())),
    }
}

impl SutState {
    /// Invokes an API whose name and arity were already checked against the
    /// registry. Argument type errors come back as `Err`.
    pub fn invoke(&mut self, api: &str, args: &[Literal]) -> Result<Record, String> {
        match api {
            "reset_system" => {
                self.trains.clear();
                Ok(status("OK"))
            }
            "add_train" => {
                let id = str_arg(args, 0, "id")?;
                let origin = str_arg(args, 1, "origin")?;
                let dest = str_arg(args, 2, "dest")?;
                let dep_min = int_arg(args, 3, "dep_min")?;
                let arr_min = int_arg(args, 4, "arr_min")?;
                if dep_min >= arr_min || self.trains.contains_key(id) {
                    return Ok(status("ERR"));
                }
                self.trains.insert(
                    id.to_owned(),
                    Train { origin: origin.into(), dest: dest.into(), dep_min, arr_min, cancelled: false },
                );
                Ok(status("OK"))
            }
            "cancel_train" => {
                let id = str_arg(args, 0, "id")?;
                Ok(match self.trains.get_mut(id) {
                    Some(t) => {
                        t.cancelled = true;
                        status("OK")
                    }
                    None => status("NOT_FOUND"),
                })
            }
            "get_train" => {
                let id = str_arg(args, 0, "id")?;
                let (st, origin, dest, dep, arr) = match self.trains.get(id) {
                    Some(t) => ("OK", t.origin.clone(), t.dest.clone(), t.dep_min, t.arr_min),
                    None => ("NOT_FOUND", String::new(), String::new(), 0, 0),
                };
                let mut r = status(st);
                r.insert("origin".into(), Literal::Str(origin));
                r.insert("dest".into(), Literal::Str(dest));
                r.insert("dep_min".into(), Literal::Int(dep));
                r.insert("arr_min".into(), Literal::Int(arr));
                Ok(r)
            }
            "query_connection" => {
                let origin = str_arg(args, 0, "origin")?;
                let dest = str_arg(args, 1, "dest")?;
                let matching: Vec<&Train> = self
                    .trains
                    .values()
                    .filter(|t| !t.cancelled && t.origin == origin && t.dest == dest)
                    .collect();
                let mut r = status("OK");
                r.insert("count".into(), Literal::Int(matching.len() as i64));
                r.insert("earliest_dep".into(), Literal::Int(matching.iter().map(|t| t.dep_min).min().unwrap_or(0)));
                r.insert("latest_arr".into(), Literal::Int(matching.iter().map(|t| t.arr_min).max().unwrap_or(0)));
                Ok(r)
            }
            other => Err(format!("unknown API `{other}`")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &str) -> Literal {
        Literal::Str(v.into())
    }

    #[test]
    fn train_lifecycle() {
        let mut sut = SutState::default();
        let add = |sut: &mut SutState, id: &str, dep, arr| {
            sut.invoke("add_train", &[s(id), s("HNV"), s("BER"), Literal::Int(dep), Literal::Int(arr)]).unwrap()
        };
        assert_eq!(add(&mut sut, "ICE1", 10, 80)["status"], s("OK"));
        assert_eq!(add(&mut sut, "ICE2", 90, 90)["status"], s("ERR"));
        assert_eq!(add(&mut sut, "ICE1", 20, 30)["status"], s("ERR"));
        assert_eq!(add(&mut sut, "ICE3", 5, 200)["status"], s("OK"));

        let q = sut.invoke("query_connection", &[s("HNV"), s("BER")]).unwrap();
        assert_eq!(q["count"], Literal::Int(2));
        assert_eq!(q["earliest_dep"], Literal::Int(5));
        assert_eq!(q["latest_arr"], Literal::Int(200));

        assert_eq!(sut.invoke("cancel_train", &[s("ICE3")]).unwrap()["status"], s("OK"));
        assert_eq!(sut.invoke("cancel_train", &[s("X")]).unwrap()["status"], s("NOT_FOUND"));
        let q = sut.invoke("query_connection", &[s("HNV"), s("BER")]).unwrap();
        assert_eq!(q["count"], Literal::Int(1));
        assert_eq!(sut.invoke("get_train", &[s("nope")]).unwrap()["status"], s("NOT_FOUND"));
        assert_eq!(sut.invoke("get_train", &[s("ICE1")]).unwrap()["arr_min"], Literal::Int(80));

        let empty = sut.invoke("query_connection", &[s("BER"), s("HNV")]).unwrap();
        assert_eq!((empty["count"].clone(), empty["earliest_dep"].clone()), (Literal::Int(0), Literal::Int(0)));

        sut.invoke("reset_system", &[]).unwrap();
        assert!(sut.trains.is_empty());
    }

    #[test]
    fn argument_types_checked() {
        let mut sut = SutState::default();
        let err = sut
            .invoke("add_train", &[s("A"), s("B"), s("C"), s("10"), Literal::Int(2)])
            .unwrap_err();
        assert!(err.contains("dep_min"));
    }
}
