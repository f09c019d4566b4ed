//! Recourse instructions in plain text.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write;

use crate::error::{Error, Result};
use crate::mdp::{decision_states, tv_distance, Mdp, StateId, Strategy, CHANGE_TOL};
use crate::solver::SynthesisResult;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Increase,
    Decrease,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Increase => "increase",
            Direction::Decrease => "decrease",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionEdit {
    pub action: String,
    pub direction: Direction,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateEdit {
    pub state: String,
    pub actions: Vec<ActionEdit>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Explanation {
    pub target_label: String,
    pub before: f64,
    pub after: f64,
    /// Changed states in ascending id order; increases precede decreases.
    pub edits: Vec<StateEdit>,
}

/// Two decimals, except that an exact zero prints as `0.0`.
pub fn format_probability(p: f64) -> String {
    if p == 0.0 {
        "0.0".to_string()
    } else {
        format!("{p:.2}")
    }
}

impl Explanation {
    pub fn new(m: &Mdp, sigma: &Strategy, result: &SynthesisResult, t: StateId) -> Result<Self> {
        let after_strategy = result.strategy.as_ref().ok_or(Error::MissingStrategy)?;
        if !m.contains_state(t) {
            return Err(Error::UnknownState(t.0));
        }
        let mut edits = Vec::new();
        for s in decision_states(m) {
            if tv_distance(sigma.row(s), after_strategy.row(s)) <= CHANGE_TOL {
                continue;
            }
            let mut up = Vec::new();
            let mut down = Vec::new();
            for a in m.enabled(s) {
                let (p0, p1) = (sigma.prob(s, a), after_strategy.prob(s, a));
                if (p1 - p0).abs() <= CHANGE_TOL {
                    continue;
                }
                let direction = if p1 > p0 { Direction::Increase } else { Direction::Decrease };
                let edit = ActionEdit { action: m.action_label(a).to_string(), direction, probability: p1 };
                if p1 > p0 { up.push(edit) } else { down.push(edit) }
            }
            up.extend(down);
            edits.push(StateEdit { state: m.state_label(s).to_string(), actions: up });
        }
        Ok(Explanation {
            target_label: m.state_label(t).to_string(),
            before: result.reach_before,
            after: result.reach_value.unwrap_or(result.reach_before),
            edits,
        })
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let t = &self.target_label;
        let _ = writeln!(out, "State `{t}' is reached with probability {}.", format_probability(self.before));
        if self.edits.is_empty() {
            out.push_str("No changes required.\n");
            return out;
        }
        let _ = writeln!(out, "You can reach `{t}' with probability {} as follows:", format_probability(self.after));
        for e in &self.edits {
            let _ = writeln!(out, " In state `{}'", e.state);
            for a in &e.actions {
                let _ = writeln!(
                    out,
                    "  {} probability of action `{}' to {}",
                    a.direction.as_str(),
                    a.action,
                    format_probability(a.probability)
                );
            }
        }
        out
    }
}

/// Renders the changes from `sigma` to the result's strategy.
pub fn render(m: &Mdp, sigma: &Strategy, result: &SynthesisResult, t: StateId) -> Result<String> {
    Ok(Explanation::new(m, sigma, result, t)?.render())
}
