//! MDPs, distributions, memoryless strategies, induced DTMCs and the
//! strategy distance measures.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};

/// A decision state counts as changed iff its total variation distance
/// exceeds this value.
pub const CHANGE_TOL: f64 = 1e-6;

/// Rows whose sum is within this of 1 are renormalized; larger deviations
/// are rejected.
pub const NORMALIZE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StateId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ActionId(pub usize);

impl StateId {
    #[inline]
    pub fn index(self) -> usize {
        self.0
    }
}

impl ActionId {
    #[inline]
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}", self.0)
    }
}

impl fmt::Display for ActionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "a{}", self.0)
    }
}

/// Items a [`Distribution`] ranges over.
pub trait Item: Copy + Ord + fmt::Debug {
    fn index(self) -> usize;
}

impl Item for StateId {
    fn index(self) -> usize {
        self.0
    }
}

impl Item for ActionId {
    fn index(self) -> usize {
        self.0
    }
}

/// A finite discrete distribution, stored as a support list sorted by item.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution<T> {
    support: Vec<(T, f64)>,
}

impl<T: Item> Distribution<T> {
    /// Checked constructor. Rejects negative or non-finite entries, repeated
    /// items and sums off by more than [`NORMALIZE_TOL`]; smaller deviations
    /// are renormalized away. Zero entries are dropped.
    pub fn new(entries: impl IntoIterator<Item = (T, f64)>) -> Result<Self> {
        let mut support: Vec<(T, f64)> = entries.into_iter().collect();
        support.sort_by(|a, b| a.0.cmp(&b.0));
        for w in support.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::DuplicateItem(w[0].0.index()));
            }
        }
        for &(item, p) in &support {
            if !(p >= 0.0) || !p.is_finite() {
                return Err(Error::NegativeProbability { item: item.index(), prob: p });
            }
        }
        let sum: f64 = support.iter().map(|e| e.1).sum();
        if (sum - 1.0).abs() > NORMALIZE_TOL {
            return Err(Error::NotNormalized(sum));
        }
        support.retain(|e| e.1 > 0.0);
        if sum != 1.0 {
            for e in &mut support {
                e.1 /= sum;
            }
        }
        Ok(Distribution { support })
    }

    /// Sorts but does not validate. Used for strategies read from outside,
    /// which are validated separately so that every violation can be reported.
    pub fn unchecked(entries: impl IntoIterator<Item = (T, f64)>) -> Self {
        let mut support: Vec<(T, f64)> = entries.into_iter().collect();
        support.sort_by(|a, b| a.0.cmp(&b.0));
        Distribution { support }
    }

    pub fn point(item: T) -> Self {
        Distribution { support: vec![(item, 1.0)] }
    }

    pub fn prob(&self, item: T) -> f64 {
        match self.support.binary_search_by(|e| e.0.cmp(&item)) {
            Ok(i) => self.support[i].1,
            Err(_) => 0.0,
        }
    }

    pub fn support(&self) -> &[(T, f64)] {
        &self.support
    }

    pub fn iter(&self) -> impl Iterator<Item = (T, f64)> + '_ {
        self.support.iter().copied()
    }

    pub fn sum(&self) -> f64 {
        self.support.iter().map(|e| e.1).sum()
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }
}

/// Total variation distance `1/2 * sum |mu1(x) - mu2(x)|`; items missing from
/// a support count as probability 0.
pub fn tv_distance<T: Item>(mu1: &Distribution<T>, mu2: &Distribution<T>) -> f64 {
    let (a, b) = (mu1.support(), mu2.support());
    let (mut i, mut j) = (0, 0);
    let mut acc = 0.0;
    while i < a.len() || j < b.len() {
        if j == b.len() || (i < a.len() && a[i].0 < b[j].0) {
            acc += a[i].1.abs();
            i += 1;
        } else if i == a.len() || b[j].0 < a[i].0 {
            acc += b[j].1.abs();
            j += 1;
        } else {
            acc += (a[i].1 - b[j].1).abs();
            i += 1;
            j += 1;
        }
    }
    0.5 * acc
}

/// One enabled action of a state together with its successor distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct Choice {
    pub action: ActionId,
    pub successors: Distribution<StateId>,
}

/// Finite MDP with a partial transition function. Choices of each state are
/// sorted by action id.
#[derive(Debug, Clone, PartialEq)]
pub struct Mdp {
    state_labels: Vec<String>,
    action_labels: Vec<String>,
    initial: StateId,
    choices: Vec<Vec<Choice>>,
    controllable: Option<Vec<bool>>,
}

impl Mdp {
    pub fn num_states(&self) -> usize {
        self.state_labels.len()
    }

    pub fn num_actions(&self) -> usize {
        self.action_labels.len()
    }

    pub fn initial(&self) -> StateId {
        self.initial
    }

    pub fn states(&self) -> impl Iterator<Item = StateId> {
        (0..self.num_states()).map(StateId)
    }

    pub fn state_label(&self, s: StateId) -> &str {
        &self.state_labels[s.0]
    }

    pub fn action_label(&self, a: ActionId) -> &str {
        &self.action_labels[a.0]
    }

    pub fn state_labels(&self) -> &[String] {
        &self.state_labels
    }

    pub fn action_labels(&self) -> &[String] {
        &self.action_labels
    }

    pub fn find_state(&self, label: &str) -> Option<StateId> {
        self.state_labels.iter().position(|l| l == label).map(StateId)
    }

    pub fn find_action(&self, label: &str) -> Option<ActionId> {
        self.action_labels.iter().position(|l| l == label).map(ActionId)
    }

    pub fn contains_state(&self, s: StateId) -> bool {
        s.0 < self.num_states()
    }

    pub fn choices(&self, s: StateId) -> &[Choice] {
        &self.choices[s.0]
    }

    pub fn enabled(&self, s: StateId) -> impl Iterator<Item = ActionId> + '_ {
        self.choices[s.0].iter().map(|c| c.action)
    }

    pub fn is_enabled(&self, s: StateId, a: ActionId) -> bool {
        self.choice_index(s, a).is_some()
    }

    pub fn choice_index(&self, s: StateId, a: ActionId) -> Option<usize> {
        self.choices[s.0].binary_search_by(|c| c.action.cmp(&a)).ok()
    }

    /// `T(s, a, s')`, zero for disabled actions.
    pub fn transition(&self, s: StateId, a: ActionId, succ: StateId) -> f64 {
        self.choice_index(s, a)
            .map(|i| self.choices[s.0][i].successors.prob(succ))
            .unwrap_or(0.0)
    }

    pub fn is_decision(&self, s: StateId) -> bool {
        self.choices[s.0].len() >= 2
    }

    /// Declared controllable mask, if any.
    pub fn controllable_mask(&self) -> Option<&[bool]> {
        self.controllable.as_deref()
    }

    /// Whether the strategy may be changed at `s`: a decision state that is
    /// not excluded by the controllable mask.
    pub fn is_free(&self, s: StateId) -> bool {
        self.is_decision(s) && self.controllable.as_ref().map_or(true, |m| m[s.0])
    }

    pub fn num_transitions(&self) -> usize {
        self.choices.iter().flatten().map(|c| c.successors.len()).sum()
    }

    /// Stable 64-bit FNV-1a digest of the model content.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv::default();
        for l in &self.state_labels {
            h.bytes(l.as_bytes());
            h.bytes(&[0xff]);
        }
        for l in &self.action_labels {
            h.bytes(l.as_bytes());
            h.bytes(&[0xfe]);
        }
        h.u64(self.initial.0 as u64);
        for (s, cs) in self.choices.iter().enumerate() {
            for c in cs {
                h.u64(s as u64);
                h.u64(c.action.0 as u64);
                for (t, p) in c.successors.iter() {
                    h.u64(t.0 as u64);
                    h.u64(p.to_bits());
                }
            }
        }
        if let Some(mask) = &self.controllable {
            for &b in mask {
                h.bytes(&[b as u8]);
            }
        }
        h.0
    }
}

struct Fnv(u64);

impl Default for Fnv {
    fn default() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }
}

impl Fnv {
    fn bytes(&mut self, bs: &[u8]) {
        for &b in bs {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
    }

    fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }
}

/// Incremental [`Mdp`] construction; all checks happen in [`MdpBuilder::build`].
#[derive(Debug, Clone, Default)]
pub struct MdpBuilder {
    state_labels: Vec<String>,
    action_labels: Vec<String>,
    initial: Option<usize>,
    transitions: Vec<(usize, usize, Vec<(usize, f64)>)>,
    controllable: Option<Vec<usize>>,
}

impl MdpBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn state(&mut self, label: impl Into<String>) -> StateId {
        self.state_labels.push(label.into());
        StateId(self.state_labels.len() - 1)
    }

    pub fn action(&mut self, label: impl Into<String>) -> ActionId {
        self.action_labels.push(label.into());
        ActionId(self.action_labels.len() - 1)
    }

    pub fn initial(&mut self, s: StateId) -> &mut Self {
        self.initial = Some(s.0);
        self
    }

    pub fn transition(&mut self, s: StateId, a: ActionId, to: &[(StateId, f64)]) -> &mut Self {
        self.transitions
            .push((s.0, a.0, to.iter().map(|&(t, p)| (t.0, p)).collect()));
        self
    }

    /// Restricts strategy changes to the listed states.
    pub fn controllable(&mut self, states: &[StateId]) -> &mut Self {
        self.controllable = Some(states.iter().map(|s| s.0).collect());
        self
    }

    pub fn build(&self) -> Result<Mdp> {
        let n = self.state_labels.len();
        let na = self.action_labels.len();
        let initial = self.initial.unwrap_or(0);
        if initial >= n {
            return Err(Error::UnknownState(initial));
        }
        let mut choices: Vec<Vec<Choice>> = vec![Vec::new(); n];
        for (s, a, to) in &self.transitions {
            if *s >= n {
                return Err(Error::UnknownState(*s));
            }
            if *a >= na {
                return Err(Error::UnknownAction(*a));
            }
            if let Some(&(t, _)) = to.iter().find(|e| e.0 >= n) {
                return Err(Error::UnknownState(t));
            }
            if choices[*s].iter().any(|c| c.action.0 == *a) {
                return Err(Error::DuplicateTransition { state: *s, action: *a });
            }
            let successors = Distribution::new(to.iter().map(|&(t, p)| (StateId(t), p)))?;
            choices[*s].push(Choice { action: ActionId(*a), successors });
        }
        for (s, cs) in choices.iter_mut().enumerate() {
            if cs.is_empty() {
                return Err(Error::NoEnabledAction(s));
            }
            cs.sort_by_key(|c| c.action);
        }
        let controllable = match &self.controllable {
            None => None,
            Some(list) => {
                let mut mask = vec![false; n];
                for &s in list {
                    if s >= n {
                        return Err(Error::UnknownState(s));
                    }
                    mask[s] = true;
                }
                Some(mask)
            }
        };
        Ok(Mdp {
            state_labels: self.state_labels.clone(),
            action_labels: self.action_labels.clone(),
            initial: StateId(initial),
            choices,
            controllable,
        })
    }
}

/// Memoryless strategy: one distribution over actions per state.
#[derive(Debug, Clone, PartialEq)]
pub struct Strategy {
    rows: Vec<Distribution<ActionId>>,
}

impl Strategy {
    /// Lenient constructor: rows within [`NORMALIZE_TOL`] of summing to one
    /// are renormalized, everything else is kept verbatim for
    /// [`validate_strategy`] to report.
    pub fn from_rows(rows: Vec<Vec<(ActionId, f64)>>) -> Self {
        let rows = rows
            .into_iter()
            .map(|r| {
                let sum: f64 = r.iter().map(|e| e.1).sum();
                let ok = r.iter().all(|e| e.1 >= 0.0);
                if ok && sum != 1.0 && (sum - 1.0).abs() <= NORMALIZE_TOL {
                    Distribution::unchecked(r.into_iter().map(|(a, p)| (a, p / sum)))
                } else {
                    Distribution::unchecked(r)
                }
            })
            .collect();
        Strategy { rows }
    }

    /// Rows taken verbatim, without renormalization.
    pub fn from_distributions(rows: Vec<Distribution<ActionId>>) -> Self {
        Strategy { rows }
    }

    /// Checked constructor.
    pub fn new(m: &Mdp, rows: Vec<Vec<(ActionId, f64)>>) -> Result<Self> {
        let s = Self::from_rows(rows);
        s.ensure_valid(m)?;
        Ok(s)
    }

    /// Picks one action per state.
    pub fn deterministic(picks: &[ActionId]) -> Self {
        Strategy { rows: picks.iter().map(|&a| Distribution::point(a)).collect() }
    }

    pub fn uniform(m: &Mdp) -> Self {
        let rows = m
            .states()
            .map(|s| {
                let k = m.choices(s).len() as f64;
                Distribution::unchecked(m.enabled(s).map(|a| (a, 1.0 / k)))
            })
            .collect();
        Strategy { rows }
    }

    pub fn num_states(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, s: StateId) -> &Distribution<ActionId> {
        &self.rows[s.0]
    }

    pub fn prob(&self, s: StateId, a: ActionId) -> f64 {
        self.rows[s.0].prob(a)
    }

    pub fn rows(&self) -> &[Distribution<ActionId>] {
        &self.rows
    }

    pub fn with_row(mut self, s: StateId, row: Distribution<ActionId>) -> Self {
        self.rows[s.0] = row;
        self
    }

    pub fn ensure_valid(&self, m: &Mdp) -> Result<()> {
        let v = validate_strategy(m, self);
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidStrategy(v))
        }
    }

    /// Probabilities aligned with `m.choices(s)` for every state.
    pub fn to_table(&self, m: &Mdp) -> Vec<Vec<f64>> {
        m.states()
            .map(|s| m.enabled(s).map(|a| self.prob(s, a)).collect())
            .collect()
    }

    /// Inverse of [`Strategy::to_table`]; zero entries are dropped.
    pub fn from_table(m: &Mdp, table: &[Vec<f64>]) -> Self {
        let rows = m
            .states()
            .map(|s| {
                let row = &table[s.0];
                let sum: f64 = row.iter().map(|p| p.max(0.0)).sum();
                Distribution::unchecked(
                    m.enabled(s)
                        .zip(row.iter())
                        .filter(|(_, &p)| p > 0.0)
                        .map(|(a, &p)| (a, p / sum)),
                )
            })
            .collect();
        Strategy { rows }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ViolationKind {
    StateCount { expected: usize, found: usize },
    DisabledAction { action: ActionId, prob: f64 },
    NegativeProbability { action: ActionId, prob: f64 },
    DuplicateAction { action: ActionId },
    NotNormalized { sum: f64 },
}

/// A broken strategy rule, located at a state where applicable.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub state: Option<StateId>,
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(s) = self.state {
            write!(f, "state {}: ", s.0)?;
        }
        match &self.kind {
            ViolationKind::StateCount { expected, found } => {
                write!(f, "strategy covers {found} states, model has {expected}")
            }
            ViolationKind::DisabledAction { action, prob } => {
                write!(f, "disabled action {} has probability {prob}", action.0)
            }
            ViolationKind::NegativeProbability { action, prob } => {
                write!(f, "action {} has negative probability {prob}", action.0)
            }
            ViolationKind::DuplicateAction { action } => {
                write!(f, "action {} listed twice", action.0)
            }
            ViolationKind::NotNormalized { sum } => write!(f, "probabilities sum to {sum}"),
        }
    }
}

/// Lists every way in which `sigma` fails to be a strategy of `m`.
pub fn validate_strategy(m: &Mdp, sigma: &Strategy) -> Vec<Violation> {
    let mut out = Vec::new();
    if sigma.num_states() != m.num_states() {
        out.push(Violation {
            state: None,
            kind: ViolationKind::StateCount { expected: m.num_states(), found: sigma.num_states() },
        });
        return out;
    }
    for s in m.states() {
        let row = sigma.row(s);
        let at = Some(s);
        for w in row.support().windows(2) {
            if w[0].0 == w[1].0 {
                out.push(Violation { state: at, kind: ViolationKind::DuplicateAction { action: w[0].0 } });
            }
        }
        for &(a, p) in row.support() {
            if !(p >= 0.0) {
                out.push(Violation { state: at, kind: ViolationKind::NegativeProbability { action: a, prob: p } });
            } else if p > 0.0 && !m.is_enabled(s, a) {
                out.push(Violation { state: at, kind: ViolationKind::DisabledAction { action: a, prob: p } });
            }
        }
        let sum = row.sum();
        if !((sum - 1.0).abs() <= NORMALIZE_TOL) {
            out.push(Violation { state: at, kind: ViolationKind::NotNormalized { sum } });
        }
    }
    out
}

/// States with at least two enabled actions, ascending.
pub fn decision_states(m: &Mdp) -> Vec<StateId> {
    m.states().filter(|&s| m.is_decision(s)).collect()
}

/// Per-decision-state total variation distances between two strategies.
pub fn distance_vector(m: &Mdp, s1: &Strategy, s2: &Strategy) -> Result<Vec<f64>> {
    s1.ensure_valid(m)?;
    s2.ensure_valid(m)?;
    Ok(decision_states(m)
        .into_iter()
        .map(|s| tv_distance(s1.row(s), s2.row(s)))
        .collect())
}

/// Coefficients of the combined distance `r0*d0 + r1*d1 + rinf*dinf`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceConfig {
    pub r0: f64,
    pub r1: f64,
    pub rinf: f64,
}

impl DistanceConfig {
    pub fn new(r0: f64, r1: f64, rinf: f64) -> Result<Self> {
        let c = DistanceConfig { r0, r1, rinf };
        c.check()?;
        Ok(c)
    }

    pub fn unit() -> Self {
        DistanceConfig { r0: 1.0, r1: 1.0, rinf: 1.0 }
    }

    pub fn check(&self) -> Result<()> {
        let all = [self.r0, self.r1, self.rinf];
        if all.iter().any(|r| !(*r >= 0.0) || !r.is_finite()) {
            return Err(Error::InvalidConfig("distance coefficients must be finite and >= 0".into()));
        }
        if all.iter().all(|r| *r == 0.0) {
            return Err(Error::InvalidConfig("at least one distance coefficient must be positive".into()));
        }
        Ok(())
    }

    pub fn combine(&self, d0: f64, d1: f64, dinf: f64) -> f64 {
        self.r0 * d0 + self.r1 * d1 + self.rinf * dinf
    }

    pub fn total(&self) -> f64 {
        self.r0 + self.r1 + self.rinf
    }
}

impl Default for DistanceConfig {
    fn default() -> Self {
        Self::unit()
    }
}

/// The three norms of a distance vector and their weighted combination.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceBreakdown {
    pub per_state: Vec<f64>,
    pub d0: usize,
    pub d1: f64,
    pub dinf: f64,
    pub combined: f64,
}

impl DistanceBreakdown {
    /// `d1` averages over the vector length, i.e. the decision states.
    pub fn from_vector(per_state: Vec<f64>, cfg: &DistanceConfig) -> Self {
        let d0 = per_state.iter().filter(|&&d| d > CHANGE_TOL).count();
        let d1 = if per_state.is_empty() {
            0.0
        } else {
            per_state.iter().sum::<f64>() / per_state.len() as f64
        };
        let dinf = per_state.iter().copied().fold(0.0, f64::max);
        let combined = cfg.combine(d0 as f64, d1, dinf);
        DistanceBreakdown { per_state, d0, d1, dinf, combined }
    }

    pub fn zero(m: &Mdp) -> Self {
        let n = decision_states(m).len();
        DistanceBreakdown { per_state: vec![0.0; n], d0: 0, d1: 0.0, dinf: 0.0, combined: 0.0 }
    }
}

pub fn strategy_distance(
    m: &Mdp,
    s1: &Strategy,
    s2: &Strategy,
    cfg: &DistanceConfig,
) -> Result<DistanceBreakdown> {
    Ok(DistanceBreakdown::from_vector(distance_vector(m, s1, s2)?, cfg))
}

/// DTMC as sparse rows; no explicit zeros are stored.
#[derive(Debug, Clone, PartialEq)]
pub struct Dtmc {
    initial: StateId,
    rows: Vec<Vec<(StateId, f64)>>,
}

impl Dtmc {
    pub fn new(initial: StateId, rows: Vec<Vec<(StateId, f64)>>) -> Result<Self> {
        let n = rows.len();
        if initial.0 >= n {
            return Err(Error::UnknownState(initial.0));
        }
        let mut clean = Vec::with_capacity(n);
        for row in rows {
            let d = Distribution::new(row)?;
            if let Some(&(t, _)) = d.support().iter().find(|e| e.0 .0 >= n) {
                return Err(Error::UnknownState(t.0));
            }
            clean.push(d.support().to_vec());
        }
        Ok(Dtmc { initial, rows: clean })
    }

    pub fn num_states(&self) -> usize {
        self.rows.len()
    }

    pub fn initial(&self) -> StateId {
        self.initial
    }

    pub fn row(&self, s: StateId) -> &[(StateId, f64)] {
        &self.rows[s.0]
    }

    pub fn prob(&self, s: StateId, t: StateId) -> f64 {
        self.rows[s.0]
            .binary_search_by(|e| e.0.cmp(&t))
            .map(|i| self.rows[s.0][i].1)
            .unwrap_or(0.0)
    }

    pub(crate) fn raw_rows(&self) -> Vec<Vec<(usize, f64)>> {
        self.rows
            .iter()
            .map(|r| r.iter().map(|&(t, p)| (t.0, p)).collect())
            .collect()
    }
}

/// `T^sigma(s, s') = sum_a sigma(s)(a) * T(s, a, s')`.
pub fn induce_dtmc(m: &Mdp, sigma: &Strategy) -> Result<Dtmc> {
    sigma.ensure_valid(m)?;
    let rows = combine_rows(m, &sigma.to_table(m))
        .into_iter()
        .map(|r| r.into_iter().map(|(t, p)| (StateId(t), p)).collect())
        .collect();
    Ok(Dtmc { initial: m.initial(), rows })
}

/// Mixes successor distributions with per-choice weights (weights aligned
/// with `m.choices(s)`); rows are sorted with zeros dropped. Weights need not
/// be normalized.
pub(crate) fn combine_rows(m: &Mdp, table: &[Vec<f64>]) -> Vec<Vec<(usize, f64)>> {
    let mut acc = vec![0.0; m.num_states()];
    let mut touched: Vec<usize> = Vec::new();
    m.states()
        .map(|s| {
            for (c, &w) in m.choices(s).iter().zip(&table[s.0]) {
                if w == 0.0 {
                    continue;
                }
                for (t, p) in c.successors.iter() {
                    if acc[t.0] == 0.0 {
                        touched.push(t.0);
                    }
                    acc[t.0] += w * p;
                }
            }
            touched.sort_unstable();
            touched.dedup();
            let row: Vec<(usize, f64)> = touched
                .iter()
                .filter(|&&t| acc[t] != 0.0)
                .map(|&t| (t, acc[t]))
                .collect();
            for &t in &touched {
                acc[t] = 0.0;
            }
            touched.clear();
            row
        })
        .collect()
}
