//! Event logs and a frequency-estimation learner.
//!
//! States are the last `k` events seen (plus `start`); the action taken in a
//! state is the next event. When a trace ends, the user takes the action
//! `end`, which leads to the absorbing `negative` state for traces shorter
//! than the threshold and to `positive` otherwise.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use recourse_core::{ActionId, Mdp, MdpBuilder, StateId};

use crate::{Error, Result};

pub const START: &str = "start";
pub const END: &str = "end";
pub const NEGATIVE: &str = "negative";
pub const POSITIVE: &str = "positive";
pub const DEFAULT_THRESHOLD: usize = 15;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceLog {
    traces: Vec<Vec<String>>,
}

impl TraceLog {
    pub fn new(traces: Vec<Vec<String>>) -> Result<Self> {
        if traces.is_empty() {
            return Err(Error::Trace { line: 0, msg: "log has no traces".into() });
        }
        for (i, t) in traces.iter().enumerate() {
            if t.is_empty() {
                return Err(Error::Trace { line: 0, msg: format!("trace {i} is empty") });
            }
            if let Some(l) = t.iter().find(|l| l.is_empty() || reserved(l)) {
                return Err(Error::Trace { line: 0, msg: format!("trace {i}: invalid event label `{l}`") });
            }
        }
        Ok(TraceLog { traces })
    }

    /// One trace per line, comma-separated labels; `#` starts a comment and
    /// blank lines are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut traces = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let events: Vec<String> = line.split(',').map(|e| e.trim().to_string()).collect();
            if let Some(bad) = events.iter().find(|e| e.is_empty() || reserved(e)) {
                let msg = if bad.is_empty() {
                    "empty event label".to_string()
                } else {
                    format!("event label `{bad}` is reserved")
                };
                return Err(Error::Trace { line: i + 1, msg });
            }
            traces.push(events);
        }
        if traces.is_empty() {
            return Err(Error::Trace { line: 0, msg: "log has no traces".into() });
        }
        Ok(TraceLog { traces })
    }

    pub fn traces(&self) -> &[Vec<String>] {
        &self.traces
    }

    pub fn alphabet(&self) -> BTreeSet<&str> {
        self.traces.iter().flatten().map(String::as_str).collect()
    }
}

fn reserved(label: &str) -> bool {
    [START, END, NEGATIVE, POSITIVE].contains(&label)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearnConfig {
    /// Events remembered per state.
    pub history: usize,
    /// Added to the count of every observed successor.
    pub smoothing: f64,
    /// Traces with fewer events end in `negative`.
    pub threshold: usize,
}

impl Default for LearnConfig {
    fn default() -> Self {
        LearnConfig { history: 1, smoothing: 0.0, threshold: DEFAULT_THRESHOLD }
    }
}

type History = Vec<usize>;

pub fn learn_mdp(log: &TraceLog, cfg: &LearnConfig) -> Result<Mdp> {
    if cfg.history == 0 {
        return Err(Error::Config("history must be at least 1".into()));
    }
    if !(cfg.smoothing >= 0.0) || !cfg.smoothing.is_finite() {
        return Err(Error::Config("smoothing must be finite and >= 0".into()));
    }
    // Event ids in order of first appearance keep the output independent
    // of hashing.
    let mut event_ids: HashMap<&str, usize> = HashMap::new();
    let mut events: Vec<&str> = Vec::new();
    for e in log.traces.iter().flatten() {
        event_ids.entry(e).or_insert_with(|| {
            events.push(e);
            events.len() - 1
        });
    }
    let end = events.len();

    // States in order of first visit; index 0 is the empty history.
    let mut state_ids: HashMap<History, usize> = HashMap::new();
    let mut histories: Vec<History> = Vec::new();
    let mut intern = |h: History, histories: &mut Vec<History>| -> usize {
        *state_ids.entry(h.clone()).or_insert_with(|| {
            histories.push(h);
            histories.len() - 1
        })
    };
    intern(Vec::new(), &mut histories);
    const NEG: usize = usize::MAX - 1;
    const POS: usize = usize::MAX;
    // (state, action) -> successor -> count
    let mut counts: BTreeMap<(usize, usize), BTreeMap<usize, u64>> = BTreeMap::new();
    for trace in &log.traces {
        let mut h: History = Vec::new();
        let mut s = 0;
        for e in trace {
            let a = event_ids[e.as_str()];
            h.push(a);
            if h.len() > cfg.history {
                h.remove(0);
            }
            let next = intern(h.clone(), &mut histories);
            *counts.entry((s, a)).or_default().entry(next).or_default() += 1;
            s = next;
        }
        let terminal = if trace.len() < cfg.threshold { NEG } else { POS };
        *counts.entry((s, end)).or_default().entry(terminal).or_default() += 1;
    }

    let mut b = MdpBuilder::new();
    for h in &histories {
        let label = if h.is_empty() {
            START.to_string()
        } else {
            h.iter().map(|&a| events[a]).collect::<Vec<_>>().join(",")
        };
        b.state(label);
    }
    let used = |t: usize| counts.values().any(|succ| succ.contains_key(&t));
    let neg = used(NEG).then(|| b.state(NEGATIVE).0);
    let pos = used(POS).then(|| b.state(POSITIVE).0);
    for e in &events {
        b.action(*e);
    }
    let end_action = b.action(END);
    let resolve = |t: usize| match t {
        NEG => neg.expect("negative terminal is used"),
        POS => pos.expect("positive terminal is used"),
        t => t,
    };
    for (&(s, a), succ) in &counts {
        let total: f64 = succ.values().map(|&c| c as f64 + cfg.smoothing).sum();
        let to: Vec<(StateId, f64)> = succ
            .iter()
            .map(|(&t, &c)| (StateId(resolve(t)), (c as f64 + cfg.smoothing) / total))
            .collect();
        b.transition(StateId(s), ActionId(a), &to);
    }
    for t in [neg, pos].into_iter().flatten() {
        b.transition(StateId(t), end_action, &[(StateId(t), 1.0)]);
    }
    b.initial(StateId(0));
    Ok(b.build()?)
}
