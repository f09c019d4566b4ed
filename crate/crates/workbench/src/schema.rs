//! JSON forms of models, strategies and results.
//!
//! Serialization is canonical: fixed key order, pretty-printed, shortest
//! round-trip float formatting. Parsing a canonical document and writing it
//! back reproduces it byte for byte.

use std::path::Path;

use recourse_core::diversity::DiverseSet;
use recourse_core::solver::{Status, SynthesisResult};
use recourse_core::{validate_strategy, ActionId, Distribution, Mdp, MdpBuilder, StateId, Strategy};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Labeled {
    pub id: usize,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Successor {
    pub state: usize,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Transition {
    pub from: usize,
    pub action: usize,
    pub to: Vec<Successor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdpJson {
    pub states: Vec<Labeled>,
    pub actions: Vec<Labeled>,
    pub initial: usize,
    pub transitions: Vec<Transition>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub controllable: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionProb {
    pub action: usize,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateChoice {
    pub state: usize,
    pub actions: Vec<ActionProb>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyJson {
    pub choices: Vec<StateChoice>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistanceJson {
    pub d0: usize,
    pub d1: f64,
    pub dinf: f64,
    pub combined: f64,
}

/// One synthesis outcome. `wall_time_s` is null when timing is suppressed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultJson {
    pub status: String,
    pub gamma: f64,
    pub target: String,
    pub reach_before: f64,
    pub reach_after: Option<f64>,
    pub distance: Option<DistanceJson>,
    pub strategy: Option<StrategyJson>,
    pub wall_time_s: Option<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiverseJson {
    pub members: Vec<ResultJson>,
    pub pairwise: Vec<Vec<f64>>,
    pub l1: Vec<Vec<f64>>,
    pub determinant_trace: Vec<f64>,
    pub novel_fractions: Vec<f64>,
}

fn parse_json<T: for<'de> Deserialize<'de>>(text: &str, source: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Json {
        file: source.to_string(),
        line: e.line(),
        column: e.column(),
        msg: e.to_string(),
    })
}

pub fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.display().to_string(), source: e })
}

pub fn to_canonical<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("plain data serializes");
    s.push('\n');
    s
}

fn schema(source: &str, msg: String) -> Error {
    Error::Schema { file: source.to_string(), msg }
}

/// Ids of a labeled list must be a permutation of `0..n`; returns labels in
/// id order.
fn ordered_labels(items: &[Labeled], what: &str, source: &str) -> Result<Vec<String>> {
    let mut labels: Vec<Option<String>> = vec![None; items.len()];
    for it in items {
        match labels.get_mut(it.id) {
            Some(slot @ None) => *slot = Some(it.label.clone()),
            Some(Some(_)) => return Err(schema(source, format!("{what} id {} appears twice", it.id))),
            None => {
                return Err(schema(
                    source,
                    format!("{what} id {} out of range; ids must be 0..{}", it.id, items.len()),
                ))
            }
        }
    }
    let labels: Vec<String> = labels.into_iter().map(|l| l.expect("every id filled")).collect();
    let mut sorted = labels.clone();
    sorted.sort();
    if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
        return Err(schema(source, format!("{what} label `{}` is used twice", w[0])));
    }
    Ok(labels)
}

impl MdpJson {
    pub fn from_mdp(m: &Mdp) -> Self {
        let labeled = |labels: &[String]| {
            labels.iter().enumerate().map(|(id, l)| Labeled { id, label: l.clone() }).collect()
        };
        let transitions = m
            .states()
            .flat_map(|s| {
                m.choices(s).iter().map(move |c| Transition {
                    from: s.0,
                    action: c.action.0,
                    to: c.successors.iter().map(|(t, p)| Successor { state: t.0, prob: p }).collect(),
                })
            })
            .collect();
        let controllable = m
            .controllable_mask()
            .map(|mask| mask.iter().enumerate().filter(|e| *e.1).map(|e| e.0).collect());
        MdpJson {
            states: labeled(m.state_labels()),
            actions: labeled(m.action_labels()),
            initial: m.initial().0,
            transitions,
            controllable,
        }
    }

    pub fn to_mdp(&self, source: &str) -> Result<Mdp> {
        let states = ordered_labels(&self.states, "state", source)?;
        let actions = ordered_labels(&self.actions, "action", source)?;
        let mut b = MdpBuilder::new();
        for l in states {
            b.state(l);
        }
        for l in actions {
            b.action(l);
        }
        b.initial(StateId(self.initial));
        for t in &self.transitions {
            let to: Vec<(StateId, f64)> = t.to.iter().map(|e| (StateId(e.state), e.prob)).collect();
            b.transition(StateId(t.from), ActionId(t.action), &to);
        }
        if let Some(c) = &self.controllable {
            b.controllable(&c.iter().map(|&s| StateId(s)).collect::<Vec<_>>());
        }
        b.build().map_err(|e| schema(source, e.to_string()))
    }
}

pub fn parse_mdp(text: &str, source: &str) -> Result<Mdp> {
    parse_json::<MdpJson>(text, source)?.to_mdp(source)
}

pub fn load_mdp(path: &Path) -> Result<Mdp> {
    parse_mdp(&read_file(path)?, &path.display().to_string())
}

pub fn mdp_to_string(m: &Mdp) -> String {
    to_canonical(&MdpJson::from_mdp(m))
}

impl StrategyJson {
    /// Every state with its full row, zero entries omitted.
    pub fn from_strategy(sigma: &Strategy) -> Self {
        let choices = sigma
            .rows()
            .iter()
            .enumerate()
            .map(|(s, row)| StateChoice {
                state: s,
                actions: row.iter().map(|(a, p)| ActionProb { action: a.0, prob: p }).collect(),
            })
            .collect();
        StrategyJson { choices }
    }

    /// States without an entry must have a single enabled action, which is
    /// then played with certainty.
    pub fn to_strategy(&self, m: &Mdp, source: &str) -> Result<Strategy> {
        let mut rows: Vec<Option<Distribution<ActionId>>> = vec![None; m.num_states()];
        for c in &self.choices {
            let slot = rows
                .get_mut(c.state)
                .ok_or_else(|| schema(source, format!("unknown state id {}", c.state)))?;
            if slot.is_some() {
                return Err(schema(source, format!("state {} has two entries", c.state)));
            }
            *slot = Some(Distribution::unchecked(c.actions.iter().map(|e| (ActionId(e.action), e.prob))));
        }
        let mut full = Vec::with_capacity(rows.len());
        for (s, row) in rows.into_iter().enumerate() {
            let s = StateId(s);
            match row {
                Some(r) => full.push(r),
                None if m.choices(s).len() == 1 => full.push(Distribution::point(m.choices(s)[0].action)),
                None => {
                    return Err(schema(
                        source,
                        format!("decision state `{}` (id {}) has no entry", m.state_label(s), s.0),
                    ))
                }
            }
        }
        let sigma = Strategy::from_distributions(full);
        let violations = validate_strategy(m, &sigma);
        if let Some(v) = violations.first() {
            return Err(schema(source, format!("{v} ({} violation(s) in total)", violations.len())));
        }
        Ok(sigma)
    }
}

pub fn parse_strategy(text: &str, m: &Mdp, source: &str) -> Result<Strategy> {
    parse_json::<StrategyJson>(text, source)?.to_strategy(m, source)
}

pub fn load_strategy(path: &Path, m: &Mdp) -> Result<Strategy> {
    parse_strategy(&read_file(path)?, m, &path.display().to_string())
}

pub fn strategy_to_string(sigma: &Strategy) -> String {
    to_canonical(&StrategyJson::from_strategy(sigma))
}

pub fn parse_status(s: &str) -> Option<Status> {
    [Status::Optimal, Status::SubOptimal, Status::Infeasible, Status::Timeout, Status::Trivial]
        .into_iter()
        .find(|st| st.as_str() == s)
}

impl ResultJson {
    pub fn new(r: &SynthesisResult, gamma: f64, target: &str, seed: u64, timing: bool) -> Self {
        ResultJson {
            status: r.status.as_str().to_string(),
            gamma,
            target: target.to_string(),
            reach_before: r.reach_before,
            reach_after: r.reach_value,
            distance: r.distance.as_ref().map(|d| DistanceJson {
                d0: d.d0,
                d1: d.d1,
                dinf: d.dinf,
                combined: d.combined,
            }),
            strategy: r.strategy.as_ref().map(StrategyJson::from_strategy),
            wall_time_s: timing.then_some(r.wall_time),
            seed,
        }
    }
}

pub fn parse_result(text: &str, source: &str) -> Result<ResultJson> {
    let r: ResultJson = parse_json(text, source)?;
    if parse_status(&r.status).is_none() {
        return Err(schema(source, format!("unknown status `{}`", r.status)));
    }
    Ok(r)
}

impl DiverseJson {
    pub fn new(set: &DiverseSet, gamma: f64, target: &str, seed: u64, timing: bool) -> Self {
        DiverseJson {
            members: set.members.iter().map(|r| ResultJson::new(r, gamma, target, seed, timing)).collect(),
            pairwise: set.pairwise.clone(),
            l1: set.l1.clone(),
            determinant_trace: set.determinant_trace.clone(),
            novel_fractions: set.novel_fractions.clone(),
        }
    }
}
