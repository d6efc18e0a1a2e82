//! Seeded synthetic corpus: specifications plus historical
//! specification–script pairs.
//!
//! Every specification is rendered from a scenario (a sequence of SUT
//! operations over a few trains). Clarity grades shape the text and the
//! historical pair that comes with it:
//!
//! * A: a near-duplicate pair with the same structure and shifted literals,
//!   so template adaptation of the top hit yields a passing script;
//! * B: a sibling pair whose script misspells one API name;
//! * C: vague expected results and actions, with a pair covering only the
//!   first half of the steps;
//! * D: mixed-up actions and no pair.
//!
//! A few archive pairs for unrelated scenarios are added on top.

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map};

use super::{CiConfig, Clarity, SpecDocument, SpecStep};
use crate::retrieval::{HistoricalPair, OutcomeTag};
use crate::script_dsl::{
    render_script, Arg, Binding, CallExpr, CmpOp, Comparison, Literal, Operand, Statement, StepBlock,
    TestScript,
};

pub const FUNCTIONAL_AREAS: [&str; 6] =
    ["timetable", "connections", "disruptions", "rolling_stock", "capacity", "network_planning"];

const STATIONS: [&str; 12] = ["HNV", "BER", "HH", "MUC", "FFM", "KOE", "STR", "LEI", "DRE", "NUE", "BRE", "DUS"];
const TRAIN_PREFIXES: [&str; 5] = ["ICE", "IC", "RE", "RB", "EC"];
const MAX_TRAINS: usize = 6;

/// Step-count weights for 2..=18 steps.
const STEP_WEIGHTS: [u32; 17] = [4, 8, 12, 14, 14, 12, 9, 7, 5, 4, 3, 2, 2, 1, 1, 1, 1];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CorpusError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Reset,
    Add(usize),
    AddInvalid(usize),
    Query { alt: bool },
    Get(usize),
    Cancel(usize),
}

#[derive(Debug, Clone)]
struct TrainLit {
    id: String,
    dep: i64,
    arr: i64,
    alt: bool,
}

#[derive(Debug, Clone)]
struct Scenario {
    area: String,
    feature: String,
    origin: String,
    dest: String,
    alt_dest: String,
    trains: Vec<TrainLit>,
    kinds: Vec<Kind>,
}

fn pick<'a, T>(rng: &mut ChaCha8Rng, items: &'a [T]) -> &'a T {
    &items[rng.gen_range(0..items.len() as u32) as usize]
}

fn weighted(rng: &mut ChaCha8Rng, weights: &[u32]) -> usize {
    let total: u32 = weights.iter().sum();
    let mut roll = rng.gen_range(0..total);
    for (i, w) in weights.iter().enumerate() {
        if roll < *w {
            return i;
        }
        roll -= w;
    }
    unreachable!("roll below total weight")
}

fn step_counts(rng: &mut ChaCha8Rng, count: usize) -> Vec<u32> {
    let mut counts: Vec<u32> = (0..count).map(|_| 2 + weighted(rng, &STEP_WEIGHTS) as u32).collect();
    let mut pinned = Vec::new();
    if count >= 4 {
        let lo = rng.gen_range(0..count as u32) as usize;
        let mut hi = rng.gen_range(0..count as u32 - 1) as usize;
        if hi >= lo {
            hi += 1;
        }
        counts[lo] = 2;
        counts[hi] = 18;
        pinned = vec![lo, hi];
    }
    let n = count as u32;
    loop {
        let sum: u32 = counts.iter().sum();
        let free = (0..count).filter(|i| !pinned.contains(i));
        if sum > 7 * n {
            match free.filter(|&i| counts[i] > 2).max_by_key(|&i| (counts[i], std::cmp::Reverse(i))) {
                Some(i) => counts[i] -= 1,
                None => break,
            }
        } else if sum < 5 * n {
            match free.filter(|&i| counts[i] < 18).min_by_key(|&i| (counts[i], i)) {
                Some(i) => counts[i] += 1,
                None => break,
            }
        } else {
            break;
        }
    }
    counts
}

#[derive(Debug, Clone, Copy, Default)]
struct TrainState {
    stored: bool,
    cancelled: bool,
}

fn plan_kinds(rng: &mut ChaCha8Rng, steps: u32, trains: &mut Vec<TrainLit>) -> Vec<Kind> {
    let mut kinds = vec![Kind::Reset];
    let mut state: Vec<TrainState> = Vec::new();
    let mut invalid_used = false;
    while kinds.len() < steps as usize {
        let stored: Vec<usize> = (0..state.len()).filter(|&k| state[k].stored).collect();
        let active: Vec<usize> = stored.iter().copied().filter(|&k| !state[k].cancelled).collect();
        let can_add = trains.len() < MAX_TRAINS;
        let weights = [
            if can_add { 5 } else { 0 },
            if can_add && !invalid_used && !stored.is_empty() { 1 } else { 0 },
            3,
            if stored.is_empty() { 0 } else { 2 },
            if active.is_empty() { 0 } else { 2 },
            if kinds.len() > 3 { 1 } else { 0 },
        ];
        let kind = match weighted(rng, &weights) {
            0 | 1 => {
                let k = trains.len();
                let dep = i64::from(rng.gen_range(30..120u32)) * 10;
                let invalid = weighted(rng, &weights[..2]) == 1;
                let arr = if invalid {
                    dep - i64::from(rng.gen_range(0..6u32)) * 10
                } else {
                    dep + i64::from(rng.gen_range(3..30u32)) * 10
                };
                trains.push(TrainLit { id: String::new(), dep, arr, alt: rng.gen_ratio(1, 4) });
                state.push(TrainState::default());
                if invalid {
                    invalid_used = true;
                    Kind::AddInvalid(k)
                } else {
                    state[k].stored = true;
                    Kind::Add(k)
                }
            }
            2 => Kind::Query { alt: rng.gen_ratio(1, 4) },
            3 => Kind::Get(*pick(rng, &stored)),
            4 => {
                let k = *pick(rng, &active);
                state[k].cancelled = true;
                Kind::Cancel(k)
            }
            _ => {
                for s in &mut state {
                    *s = TrainState::default();
                }
                Kind::Reset
            }
        };
        kinds.push(kind);
    }
    kinds
}

fn new_scenario(rng: &mut ChaCha8Rng, area: &str, feature: String, steps: u32) -> Scenario {
    let mut stations = STATIONS.to_vec();
    stations.shuffle(rng);
    let mut trains = Vec::new();
    let kinds = plan_kinds(rng, steps, &mut trains);
    let mut numbers: Vec<u32> = Vec::new();
    for t in &mut trains {
        let mut number = rng.gen_range(100..1000u32);
        while numbers.contains(&number) {
            number = rng.gen_range(100..1000u32);
        }
        numbers.push(number);
        t.id = format!("{}{number}", pick(rng, &TRAIN_PREFIXES));
    }
    Scenario {
        area: area.to_owned(),
        feature,
        origin: stations[0].to_owned(),
        dest: stations[1].to_owned(),
        alt_dest: stations[2].to_owned(),
        trains,
        kinds,
    }
}

/// Same structure, stations and trains with uniformly shifted times, so
/// every ordering between times is preserved.
fn near_duplicate(rng: &mut ChaCha8Rng, base: &Scenario) -> Scenario {
    let mut twin = base.clone();
    let shift = i64::from(rng.gen_range(1..7u32)) * 5;
    for t in &mut twin.trains {
        t.dep += shift;
        t.arr += shift;
    }
    twin
}

impl Scenario {
    fn route_dest(&self, alt: bool) -> &str {
        if alt {
            &self.alt_dest
        } else {
            &self.dest
        }
    }

    fn route_var(alt: bool) -> &'static str {
        if alt {
            "alt_dest"
        } else {
            "dest"
        }
    }

    fn uses_alt(&self) -> bool {
        self.kinds.iter().any(|k| match *k {
            Kind::Query { alt } => alt,
            Kind::Add(t) | Kind::AddInvalid(t) => self.trains[t].alt,
            _ => false,
        })
    }

    fn test_data(&self) -> IndexMap<String, Literal> {
        let mut data = IndexMap::new();
        data.insert("origin".to_owned(), Literal::Str(self.origin.clone()));
        data.insert("dest".to_owned(), Literal::Str(self.dest.clone()));
        if self.uses_alt() {
            data.insert("alt_dest".to_owned(), Literal::Str(self.alt_dest.clone()));
        }
        for (k, t) in self.trains.iter().enumerate() {
            data.insert(format!("train_{}", k + 1), Literal::Str(t.id.clone()));
            data.insert(format!("dep_{}", k + 1), Literal::Int(t.dep));
            data.insert(format!("arr_{}", k + 1), Literal::Int(t.arr));
        }
        data
    }

    /// Result of each query step: (count, train index with earliest departure).
    fn query_results(&self) -> Vec<Option<(i64, Option<usize>)>> {
        let mut state = vec![TrainState::default(); self.trains.len()];
        self.kinds
            .iter()
            .map(|kind| match *kind {
                Kind::Reset => {
                    state.iter_mut().for_each(|s| *s = TrainState::default());
                    None
                }
                Kind::Add(t) => {
                    state[t].stored = true;
                    None
                }
                Kind::Cancel(t) => {
                    state[t].cancelled = true;
                    None
                }
                Kind::Query { alt } => {
                    let hits: Vec<usize> = (0..self.trains.len())
                        .filter(|&t| state[t].stored && !state[t].cancelled && self.trains[t].alt == alt)
                        .collect();
                    let earliest = hits.iter().copied().min_by_key(|&t| (self.trains[t].dep, t));
                    Some((hits.len() as i64, earliest))
                }
                _ => None,
            })
            .collect()
    }

    fn action(&self, kind: Kind) -> String {
        match kind {
            Kind::Reset => "reset the system".to_owned(),
            Kind::Add(t) | Kind::AddInvalid(t) => {
                let tr = &self.trains[t];
                format!(
                    "add train {} from {} to {} departing at {} arriving at {}",
                    tr.id,
                    self.origin,
                    self.route_dest(tr.alt),
                    tr.dep,
                    tr.arr
                )
            }
            Kind::Query { alt } => format!("query connection from {} to {}", self.origin, self.route_dest(alt)),
            Kind::Get(t) => format!("get train {} details", self.trains[t].id),
            Kind::Cancel(t) => format!("cancel train {}", self.trains[t].id),
        }
    }

    fn expected(&self, kind: Kind, query: Option<(i64, Option<usize>)>) -> String {
        match kind {
            Kind::Reset => "the system holds no trains".to_owned(),
            Kind::Add(t) => format!("train {} is stored", self.trains[t].id),
            Kind::AddInvalid(_) => "the request is rejected because departure is not before arrival".to_owned(),
            Kind::Query { .. } => match query {
                Some((0, _)) | None => "no connection is found".to_owned(),
                Some((1, _)) => "exactly one connection is found".to_owned(),
                Some((n, _)) => format!("{n} connections are found"),
            },
            Kind::Get(t) => {
                let tr = &self.trains[t];
                format!("train {} runs from {} to {}", tr.id, self.origin, self.route_dest(tr.alt))
            }
            Kind::Cancel(t) => format!("train {} is cancelled", self.trains[t].id),
        }
    }

    fn summary(&self) -> String {
        let mut topics: Vec<&str> = Vec::new();
        for kind in &self.kinds {
            let topic = match kind {
                Kind::Reset => continue,
                Kind::Add(_) => "train registration",
                Kind::AddInvalid(_) => "input rejection",
                Kind::Query { .. } => "connection search",
                Kind::Get(_) => "train lookup",
                Kind::Cancel(_) => "cancellation",
            };
            if !topics.contains(&topic) {
                topics.push(topic);
            }
        }
        format!(
            "{} regression {}: {} between {} and {}",
            self.area.replace('_', " "),
            self.feature,
            topics.join(", "),
            self.origin,
            self.dest
        )
    }

    fn spec(&self, key: &str, clarity: Clarity, story_points: u32, timeout_s: u64) -> SpecDocument {
        let queries = self.query_results();
        let steps = self
            .kinds
            .iter()
            .zip(&queries)
            .enumerate()
            .map(|(i, (kind, q))| SpecStep {
                index: i as u32 + 1,
                action: self.action(*kind),
                expected: self.expected(*kind, *q),
            })
            .collect();
        let mut extra = Map::new();
        extra.insert("labels".into(), json!(["regression", self.area]));
        SpecDocument {
            key: key.to_owned(),
            summary: self.summary(),
            functional_area: self.area.clone(),
            story_points,
            clarity,
            ci_config: CiConfig { job: format!("systest-{}", self.area.replace('_', "-")), timeout_s },
            test_data: self.test_data(),
            steps,
            extra,
        }
    }

    /// Reference implementation of the scenario. `upto` limits the steps.
    fn script(&self, key: &str, upto: usize) -> TestScript {
        let queries = self.query_results();
        let var = |name: &str| Arg::Var(name.to_owned());
        let ok = |v: &str| {
            Statement::Assert(Comparison {
                lhs: Operand::Field(v.to_owned(), "status".into()),
                op: CmpOp::Eq,
                rhs: Operand::Lit(Literal::Str("OK".into())),
            })
        };
        let steps = self
            .kinds
            .iter()
            .zip(&queries)
            .take(upto)
            .enumerate()
            .map(|(i, (kind, q))| {
                let r = format!("r{}", i + 1);
                let bind = |api: &str, args: Vec<Arg>| {
                    Statement::Let(r.clone(), CallExpr { name: api.to_owned(), args })
                };
                let statements = match *kind {
                    Kind::Reset => vec![bind("reset_system", vec![]), ok(&r)],
                    Kind::Add(t) | Kind::AddInvalid(t) => {
                        let n = t + 1;
                        let call = bind(
                            "add_train",
                            vec![
                                var(&format!("train_{n}")),
                                var("origin"),
                                var(Scenario::route_var(self.trains[t].alt)),
                                var(&format!("dep_{n}")),
                                var(&format!("arr_{n}")),
                            ],
                        );
                        let expect = if matches!(kind, Kind::Add(_)) { "OK" } else { "ERR" };
                        vec![
                            call,
                            Statement::Assert(Comparison {
                                lhs: Operand::Field(r.clone(), "status".into()),
                                op: CmpOp::Eq,
                                rhs: Operand::Lit(Literal::Str(expect.into())),
                            }),
                        ]
                    }
                    Kind::Query { alt } => {
                        let (count, earliest) = q.expect("query step has a result");
                        let mut v = vec![
                            bind("query_connection", vec![var("origin"), var(Scenario::route_var(alt))]),
                            Statement::Assert(Comparison {
                                lhs: Operand::Field(r.clone(), "count".into()),
                                op: CmpOp::Eq,
                                rhs: Operand::Lit(Literal::Int(count)),
                            }),
                        ];
                        if let Some(t) = earliest {
                            v.push(Statement::Assert(Comparison {
                                lhs: Operand::Field(r.clone(), "earliest_dep".into()),
                                op: CmpOp::Eq,
                                rhs: Operand::Var(format!("dep_{}", t + 1)),
                            }));
                        }
                        v
                    }
                    Kind::Get(t) => vec![
                        bind("get_train", vec![var(&format!("train_{}", t + 1))]),
                        ok(&r),
                        Statement::Assert(Comparison {
                            lhs: Operand::Field(r.clone(), "dest".into()),
                            op: CmpOp::Eq,
                            rhs: Operand::Var(Scenario::route_var(self.trains[t].alt).into()),
                        }),
                    ],
                    Kind::Cancel(t) => vec![bind("cancel_train", vec![var(&format!("train_{}", t + 1))]), ok(&r)],
                };
                StepBlock { number: i as u32 + 1, title: self.action(*kind), statements }
            })
            .collect();
        TestScript {
            header_key: key.to_owned(),
            data: self.test_data().into_iter().map(|(name, value)| Binding { name, value }).collect(),
            setup: Vec::new(),
            steps,
            teardown: vec![Statement::Call(CallExpr { name: "reset_system".into(), args: vec![] })],
        }
    }
}

fn misspell(api: &str) -> &'static str {
    match api {
        "add_train" => "add_trian",
        "query_connection" => "query_conection",
        "get_train" => "get_trains",
        "cancel_train" => "cancle_train",
        _ => "reset_sytem",
    }
}

const VAGUE_ACTIONS: [&str; 4] = [
    "check the result",
    "verify the planning data looks right",
    "make sure the schedule is consistent",
    "confirm nothing unexpected happened",
];
const VAGUE_EXPECTED: [&str; 3] = ["", "as expected", "works"];

fn blur(rng: &mut ChaCha8Rng, spec: &mut SpecDocument) {
    match spec.clarity {
        Clarity::A => {}
        Clarity::B => {
            let i = rng.gen_range(0..spec.steps.len() as u32) as usize;
            spec.steps[i].expected.clear();
        }
        Clarity::C => {
            for step in spec.steps.iter_mut() {
                step.expected = pick(rng, &VAGUE_EXPECTED).to_string();
            }
            for step in spec.steps.iter_mut().skip(1) {
                if rng.gen_ratio(1, 3) {
                    step.action = pick(rng, &VAGUE_ACTIONS).to_string();
                }
            }
        }
        Clarity::D => {
            let n = spec.steps.len();
            for i in 1..n {
                if rng.gen_ratio(1, 3) {
                    let next = if i + 1 < n { spec.steps[i + 1].action.clone() } else { "tidy up".into() };
                    spec.steps[i].action = format!("{} and then maybe {next}", spec.steps[i].action);
                }
            }
        }
    }
}

fn area_name(i: usize) -> String {
    FUNCTIONAL_AREAS.get(i).map(|s| (*s).to_owned()).unwrap_or_else(|| format!("area_{}", i + 1))
}

/// Deterministic corpus for `seed`. Specs are keyed `HAC-101..`, pairs
/// `HIST-…`. Step counts stay within 2..=18 with a mean between 5 and 7,
/// story points within 3..=8, and all clarity grades occur once there are
/// at least four specs.
pub fn generate_corpus(
    seed: u64,
    spec_count: usize,
    area_count: usize,
) -> Result<(Vec<SpecDocument>, Vec<HistoricalPair>), CorpusError> {
    if spec_count < 1 {
        return Err(CorpusError::InvalidArgument("spec_count must be at least 1".into()));
    }
    if area_count < 1 {
        return Err(CorpusError::InvalidArgument("area_count must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let counts = step_counts(&mut rng, spec_count);

    let mut clarities: Vec<Clarity> =
        (0..spec_count).map(|_| Clarity::ALL[weighted(&mut rng, &[40, 25, 20, 15])]).collect();
    if spec_count >= 4 {
        let mut slots: Vec<usize> = (0..spec_count).collect();
        slots.shuffle(&mut rng);
        for (slot, grade) in slots.into_iter().zip(Clarity::ALL) {
            clarities[slot] = grade;
        }
    }

    let mut specs = Vec::with_capacity(spec_count);
    let mut pairs = Vec::new();
    for i in 0..spec_count {
        let area = area_name(i % area_count);
        let scenario = new_scenario(&mut rng, &area, format!("FT{}", 101 + i), counts[i]);
        let key = format!("HAC-{}", 101 + i);
        let clarity = clarities[i];
        let story_points = rng.gen_range(3..=8u32);
        let timeout = u64::from(rng.gen_range(1..=10u32)) * 60;
        let mut spec = scenario.spec(&key, clarity, story_points, timeout);
        blur(&mut rng, &mut spec);
        specs.push(spec);

        let pair_key = format!("HIST-{}", 1001 + i);
        let twin = near_duplicate(&mut rng, &scenario);
        let pair = match clarity {
            Clarity::A => Some((twin.spec(&pair_key, Clarity::A, story_points, timeout), twin.script(&pair_key, usize::MAX), OutcomeTag::Accepted)),
            Clarity::B => {
                let mut script = twin.script(&pair_key, usize::MAX);
                let calls: Vec<(usize, usize)> = script
                    .steps
                    .iter()
                    .enumerate()
                    .flat_map(|(s, st)| {
                        st.statements.iter().enumerate().filter(|(_, x)| x.call().is_some()).map(move |(j, _)| (s, j))
                    })
                    .collect();
                let (s, j) = *pick(&mut rng, &calls);
                if let Statement::Let(_, c) | Statement::Call(c) = &mut script.steps[s].statements[j] {
                    c.name = misspell(&c.name).to_owned();
                }
                Some((twin.spec(&pair_key, Clarity::B, story_points, timeout), script, OutcomeTag::Refactored))
            }
            Clarity::C => {
                let half = twin.kinds.len().div_ceil(2);
                let mut partial = twin.clone();
                partial.kinds.truncate(half);
                Some((partial.spec(&pair_key, Clarity::B, story_points, timeout), twin.script(&pair_key, half), OutcomeTag::Refactored))
            }
            Clarity::D => None,
        };
        if let Some((pair_spec, script, tag)) = pair {
            pairs.push(
                HistoricalPair::new(pair_spec, render_script(&script), tag).expect("generated scripts parse"),
            );
        }
    }

    let archive = (spec_count / 4).max(2);
    for j in 0..archive {
        let area = area_name(rng.gen_range(0..area_count as u32) as usize);
        let steps = 2 + weighted(&mut rng, &STEP_WEIGHTS) as u32;
        let scenario = new_scenario(&mut rng, &area, format!("AR{}", 1 + j), steps);
        let key = format!("HIST-{}", 5001 + j);
        let tag = if rng.gen_ratio(1, 2) { OutcomeTag::Accepted } else { OutcomeTag::Refactored };
        let spec = scenario.spec(&key, Clarity::A, rng.gen_range(3..=8u32), 300);
        let script = render_script(&scenario.script(&key, usize::MAX));
        pairs.push(HistoricalPair::new(spec, script, tag).expect("generated scripts parse"));
    }
    Ok((specs, pairs))
}
