//! The counterfactual synthesis problem as an explicit mixed-integer
//! quadratically constrained program: variables, linear and bilinear
//! constraints and the distance objective. The program can be inspected,
//! exported to a line-oriented text format, parsed back, and used to check
//! candidate assignments.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::{self, Write};

use crate::error::{Error, Result};
use crate::linalg::symmetric_eigenvalues;
use crate::mdp::{
    decision_states, induce_dtmc, strategy_distance, ActionId, DistanceBreakdown, DistanceConfig,
    Mdp, StateId, Strategy, CHANGE_TOL,
};
use crate::reach::{reach_probability, reach_set, ReachAnalysis};

/// Tolerance for linear, quadratic and bound checks of an assignment.
pub const CHECK_TOL: f64 = 1e-7;

/// What a variable stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum VarRef {
    /// `p_sa`: probability of choosing `a` in `s`.
    ChoiceProb(StateId, ActionId),
    /// `p_s`: probability of reaching the target from `s`.
    ReachProb(StateId),
    /// `Delta_s`: total variation distance at `s`.
    StateDelta(StateId),
    /// `i_s`: 1 iff the strategy changed at `s`.
    ChangeIndicator(StateId),
    D0,
    D1,
    DInf,
    /// Upper bound on `|sigma(s)(a) - p_sa|`.
    AbsSplit(StateId, ActionId),
}

impl VarRef {
    pub fn name(&self) -> String {
        match *self {
            VarRef::ChoiceProb(s, a) => format!("p_s{}_a{}", s.0, a.0),
            VarRef::ReachProb(s) => format!("p_s{}", s.0),
            VarRef::StateDelta(s) => format!("delta_s{}", s.0),
            VarRef::ChangeIndicator(s) => format!("i_s{}", s.0),
            VarRef::D0 => "D0".to_string(),
            VarRef::D1 => "D1".to_string(),
            VarRef::DInf => "Dinf".to_string(),
            VarRef::AbsSplit(s, a) => format!("dsa_s{}_a{}", s.0, a.0),
        }
    }

    pub fn parse(name: &str) -> Option<VarRef> {
        fn state_action(rest: &str) -> Option<(StateId, ActionId)> {
            let rest = rest.strip_prefix('s')?;
            let (s, a) = rest.split_once("_a")?;
            Some((StateId(s.parse().ok()?), ActionId(a.parse().ok()?)))
        }
        fn state(rest: &str) -> Option<StateId> {
            Some(StateId(rest.strip_prefix('s')?.parse().ok()?))
        }
        match name {
            "D0" => return Some(VarRef::D0),
            "D1" => return Some(VarRef::D1),
            "Dinf" => return Some(VarRef::DInf),
            _ => {}
        }
        if let Some(rest) = name.strip_prefix("dsa_") {
            let (s, a) = state_action(rest)?;
            return Some(VarRef::AbsSplit(s, a));
        }
        if let Some(rest) = name.strip_prefix("delta_") {
            return state(rest).map(VarRef::StateDelta);
        }
        if let Some(rest) = name.strip_prefix("i_") {
            return state(rest).map(VarRef::ChangeIndicator);
        }
        if let Some(rest) = name.strip_prefix("p_") {
            if rest.contains("_a") {
                let (s, a) = state_action(rest)?;
                return Some(VarRef::ChoiceProb(s, a));
            }
            return state(rest).map(VarRef::ReachProb);
        }
        None
    }
}

impl fmt::Display for VarRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Domain {
    Real { lo: f64, hi: f64 },
    Integer { lo: i64, hi: i64 },
}

impl Domain {
    pub fn bounds(&self) -> (f64, f64) {
        match *self {
            Domain::Real { lo, hi } => (lo, hi),
            Domain::Integer { lo, hi } => (lo as f64, hi as f64),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub var: VarRef,
    pub domain: Domain,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
}

impl Relation {
    fn symbol(self) -> &'static str {
        match self {
            Relation::Le => "<=",
            Relation::Eq => "=",
        }
    }

    /// Amount by which `lhs rel rhs` is violated (0 when satisfied).
    pub fn excess(self, lhs: f64, rhs: f64) -> f64 {
        match self {
            Relation::Le => (lhs - rhs).max(0.0),
            Relation::Eq => (lhs - rhs).abs(),
        }
    }
}

/// `sum terms  rel  rhs`; terms are sorted by variable index.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraint {
    pub terms: Vec<(usize, f64)>,
    pub rel: Relation,
    pub rhs: f64,
}

/// `sum c_ij x_i x_j + sum c_k x_k  rel  rhs`; bilinear terms have `i <= j`
/// and are sorted, linear terms are sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticConstraint {
    pub bilinear: Vec<(usize, usize, f64)>,
    pub linear: Vec<(usize, f64)>,
    pub rel: Relation,
    pub rhs: f64,
}

/// Marker for the diversity extension of the objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiversityTerm {
    pub lambda: f64,
    pub perturbation: f64,
    /// Number of previously generated strategies held fixed.
    pub fixed_members: usize,
}

/// The bare optimization program. Variables are sorted by name, which keeps
/// indices stable across export and parse.
#[derive(Debug, Clone, PartialEq)]
pub struct Program {
    pub variables: Vec<Variable>,
    pub objective: Vec<(usize, f64)>,
    pub diversity: Option<DiversityTerm>,
    pub linear: Vec<LinearConstraint>,
    pub quadratic: Vec<QuadraticConstraint>,
}

impl Program {
    pub fn index_of(&self, v: VarRef) -> Option<usize> {
        self.variables.iter().position(|x| x.var == v)
    }
}

/// Origin of a linear constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinearKind {
    Simplex(StateId),
    AbsUpper(StateId, ActionId),
    AbsLower(StateId, ActionId),
    DeltaDef(StateId),
    Indicator(StateId),
    DInfBound(StateId),
    D0Def,
    D1Def,
    Threshold,
    Budget,
}

/// A validated synthesis request.
#[derive(Debug, Clone)]
pub struct SynthesisQuery {
    pub mdp: Mdp,
    pub initial: Strategy,
    pub target: StateId,
    pub gamma: f64,
    pub distances: DistanceConfig,
    pub epsilon: Option<f64>,
    reach_before: f64,
}

impl SynthesisQuery {
    pub fn new(
        mdp: Mdp,
        initial: Strategy,
        target: StateId,
        gamma: f64,
        distances: DistanceConfig,
    ) -> Result<Self> {
        if !mdp.contains_state(target) {
            return Err(Error::UnknownState(target.0));
        }
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::InvalidConfig(format!("gamma {gamma} outside [0, 1]")));
        }
        distances.check()?;
        let d = induce_dtmc(&mdp, &initial)?;
        let reach_before = reach_probability(&d, target)?.at(mdp.initial());
        Ok(SynthesisQuery { mdp, initial, target, gamma, distances, epsilon: None, reach_before })
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::InvalidConfig(format!("epsilon {epsilon} must be positive")));
        }
        self.epsilon = Some(epsilon);
        Ok(self)
    }

    pub fn with_gamma(mut self, gamma: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::InvalidConfig(format!("gamma {gamma} outside [0, 1]")));
        }
        self.gamma = gamma;
        Ok(self)
    }

    /// `Pr(s0 -> t)` under the initial strategy.
    pub fn reach_before(&self) -> f64 {
        self.reach_before
    }

    /// Whether the initial strategy violates the limit, i.e. a counterfactual
    /// is actually needed.
    pub fn premise_holds(&self) -> bool {
        self.reach_before > self.gamma
    }
}

/// A materialized synthesis problem together with the bookkeeping needed to
/// interpret its constraints.
#[derive(Debug, Clone)]
pub struct SynthesisProblem {
    pub program: Program,
    pub linear_kinds: Vec<LinearKind>,
    /// State whose Bellman equation each quadratic constraint encodes.
    pub quadratic_states: Vec<StateId>,
    /// Variables of each quadratic form in structural order (choice, then
    /// successors), as used by [`constraint_matrix`].
    participants: Vec<Vec<usize>>,
    pub query: SynthesisQuery,
    pub reach: ReachAnalysis,
    pub fingerprint: u64,
}

/// Counts of constraints by origin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Census {
    pub simplex: usize,
    pub abs_splits: usize,
    pub delta_defs: usize,
    pub indicators: usize,
    pub dinf_bounds: usize,
    pub quadratic: usize,
    pub threshold: usize,
    pub budget: usize,
}

impl SynthesisProblem {
    pub fn census(&self) -> Census {
        let mut c = Census { quadratic: self.program.quadratic.len(), ..Census::default() };
        for k in &self.linear_kinds {
            match k {
                LinearKind::Simplex(_) => c.simplex += 1,
                LinearKind::AbsUpper(..) | LinearKind::AbsLower(..) => c.abs_splits += 1,
                LinearKind::DeltaDef(_) => c.delta_defs += 1,
                LinearKind::Indicator(_) => c.indicators += 1,
                LinearKind::DInfBound(_) => c.dinf_bounds += 1,
                LinearKind::Threshold => c.threshold += 1,
                LinearKind::Budget => c.budget += 1,
                LinearKind::D0Def | LinearKind::D1Def => {}
            }
        }
        c
    }

    pub fn index_of(&self, v: VarRef) -> Option<usize> {
        self.program.index_of(v)
    }

    /// Adds the diversity marker to the objective.
    pub fn with_diversity(mut self, term: DiversityTerm) -> Self {
        self.program.diversity = Some(term);
        self
    }
}

struct ProgramBuilder {
    vars: Vec<Variable>,
    linear: Vec<(LinearKind, Vec<(VarRef, f64)>, Relation, f64)>,
    quadratic: Vec<(StateId, Vec<(VarRef, VarRef, f64)>, Vec<(VarRef, f64)>, f64, Vec<VarRef>)>,
}

fn real01() -> Domain {
    Domain::Real { lo: 0.0, hi: 1.0 }
}

/// Builds the program whose feasible points are exactly the strategies that
/// keep `Pr(s0 -> t)` at or below `gamma`. Only free decision states carry
/// choice variables; all other states keep the initial strategy.
pub fn build_problem(q: &SynthesisQuery) -> Result<SynthesisProblem> {
    let m = &q.mdp;
    let t = q.target;
    let s0 = m.initial();
    if s0 == t && q.gamma < 1.0 {
        return Err(Error::TargetIsInitial { gamma: q.gamma });
    }
    let reach = reach_set(m, t)?;
    let decision = decision_states(m);
    let free: Vec<StateId> = decision.iter().copied().filter(|&s| m.is_free(s)).collect();
    let is_free = |s: StateId| m.is_free(s);
    let has_p = |s: StateId| s != t && reach.contains(s);

    let mut b = ProgramBuilder { vars: Vec::new(), linear: Vec::new(), quadratic: Vec::new() };
    for &s in &free {
        for a in m.enabled(s) {
            b.vars.push(Variable { var: VarRef::ChoiceProb(s, a), domain: real01() });
            b.vars.push(Variable { var: VarRef::AbsSplit(s, a), domain: real01() });
        }
        b.vars.push(Variable { var: VarRef::StateDelta(s), domain: real01() });
        b.vars.push(Variable { var: VarRef::ChangeIndicator(s), domain: Domain::Integer { lo: 0, hi: 1 } });
    }
    for s in m.states().filter(|&s| has_p(s)) {
        b.vars.push(Variable { var: VarRef::ReachProb(s), domain: real01() });
    }
    b.vars.push(Variable { var: VarRef::D0, domain: Domain::Real { lo: 0.0, hi: decision.len() as f64 } });
    b.vars.push(Variable { var: VarRef::D1, domain: real01() });
    b.vars.push(Variable { var: VarRef::DInf, domain: real01() });

    // Per free decision state: simplex, absolute-value splits, delta,
    // indicator link and the D_inf bound.
    for &s in &free {
        let sigma = q.initial.row(s);
        b.linear.push((
            LinearKind::Simplex(s),
            m.enabled(s).map(|a| (VarRef::ChoiceProb(s, a), 1.0)).collect(),
            Relation::Eq,
            1.0,
        ));
        for a in m.enabled(s) {
            let w = sigma.prob(a);
            b.linear.push((
                LinearKind::AbsUpper(s, a),
                vec![(VarRef::ChoiceProb(s, a), 1.0), (VarRef::AbsSplit(s, a), -1.0)],
                Relation::Le,
                w,
            ));
            b.linear.push((
                LinearKind::AbsLower(s, a),
                vec![(VarRef::ChoiceProb(s, a), -1.0), (VarRef::AbsSplit(s, a), -1.0)],
                Relation::Le,
                0.0 - w,
            ));
        }
        let mut def = vec![(VarRef::StateDelta(s), 1.0)];
        def.extend(m.enabled(s).map(|a| (VarRef::AbsSplit(s, a), -0.5)));
        b.linear.push((LinearKind::DeltaDef(s), def, Relation::Eq, 0.0));
        b.linear.push((
            LinearKind::Indicator(s),
            vec![(VarRef::StateDelta(s), 1.0), (VarRef::ChangeIndicator(s), -1.0)],
            Relation::Le,
            0.0,
        ));
        b.linear.push((
            LinearKind::DInfBound(s),
            vec![(VarRef::StateDelta(s), 1.0), (VarRef::DInf, -1.0)],
            Relation::Le,
            0.0,
        ));
    }
    let mut d0 = vec![(VarRef::D0, 1.0)];
    d0.extend(free.iter().map(|&s| (VarRef::ChangeIndicator(s), -1.0)));
    b.linear.push((LinearKind::D0Def, d0, Relation::Eq, 0.0));
    let mut d1 = vec![(VarRef::D1, 1.0)];
    if !decision.is_empty() {
        let w = 1.0 / decision.len() as f64;
        d1.extend(free.iter().map(|&s| (VarRef::StateDelta(s), -w)));
    }
    b.linear.push((LinearKind::D1Def, d1, Relation::Eq, 0.0));
    if has_p(s0) {
        b.linear.push((LinearKind::Threshold, vec![(VarRef::ReachProb(s0), 1.0)], Relation::Le, q.gamma));
    }
    if let Some(eps) = q.epsilon {
        let c = &q.distances;
        b.linear.push((
            LinearKind::Budget,
            vec![(VarRef::D0, c.r0), (VarRef::D1, c.r1), (VarRef::DInf, c.rinf)],
            Relation::Le,
            eps,
        ));
    }

    // Bellman equations: p_s = sum_a p_sa * sum_s' T(s,a,s') * p_s'.
    for s in m.states().filter(|&s| has_p(s)) {
        let mut bil: Vec<(VarRef, VarRef, f64)> = Vec::new();
        let mut lin: Vec<(VarRef, f64)> = vec![(VarRef::ReachProb(s), -1.0)];
        let mut constant = 0.0;
        let mut part: Vec<VarRef> = Vec::new();
        let note = |v: VarRef, part: &mut Vec<VarRef>| {
            if !part.contains(&v) {
                part.push(v);
            }
        };
        for c in m.choices(s) {
            let a = c.action;
            let weight = if is_free(s) { None } else { Some(q.initial.prob(s, a)) };
            if weight.is_none() {
                note(VarRef::ChoiceProb(s, a), &mut part);
            }
            for (succ, p) in c.successors.iter() {
                match (weight, succ == t, has_p(succ)) {
                    (None, true, _) => lin.push((VarRef::ChoiceProb(s, a), p)),
                    (Some(w), true, _) => constant += w * p,
                    (None, false, true) => {
                        note(VarRef::ReachProb(succ), &mut part);
                        bil.push((VarRef::ChoiceProb(s, a), VarRef::ReachProb(succ), p));
                    }
                    (Some(w), false, true) => {
                        if w != 0.0 {
                            note(VarRef::ReachProb(succ), &mut part);
                            lin.push((VarRef::ReachProb(succ), w * p));
                        }
                    }
                    (_, false, false) => {}
                }
            }
        }
        b.quadratic.push((s, bil, lin, 0.0 - constant, part));
    }
    Ok(b.finish(q, reach))
}

impl ProgramBuilder {
    fn finish(mut self, q: &SynthesisQuery, reach: ReachAnalysis) -> SynthesisProblem {
        self.vars.sort_by_cached_key(|v| v.var.name());
        let index: BTreeMap<VarRef, usize> =
            self.vars.iter().enumerate().map(|(i, v)| (v.var, i)).collect();
        let idx = |v: &VarRef| index[v];
        let merge_lin = |terms: &[(VarRef, f64)]| -> Vec<(usize, f64)> {
            let mut out: Vec<(usize, f64)> = terms.iter().map(|(v, c)| (idx(v), *c)).collect();
            out.sort_by_key(|e| e.0);
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(out.len());
            for (i, c) in out {
                match merged.last_mut() {
                    Some(last) if last.0 == i => last.1 += c,
                    _ => merged.push((i, c)),
                }
            }
            merged.retain(|e| e.1 != 0.0);
            merged
        };
        let c = &q.distances;
        let objective = if q.epsilon.is_some() {
            Vec::new()
        } else {
            merge_lin(&[(VarRef::D0, c.r0), (VarRef::D1, c.r1), (VarRef::DInf, c.rinf)])
        };
        let mut linear = Vec::new();
        let mut linear_kinds = Vec::new();
        for (kind, terms, rel, rhs) in &self.linear {
            linear_kinds.push(*kind);
            linear.push(LinearConstraint { terms: merge_lin(terms), rel: *rel, rhs: *rhs });
        }
        let mut quadratic = Vec::new();
        let mut quadratic_states = Vec::new();
        let mut participants = Vec::new();
        for (s, bil, lin, rhs, part) in &self.quadratic {
            let mut bilinear: Vec<(usize, usize, f64)> = bil
                .iter()
                .map(|(x, y, c)| {
                    let (i, j) = (idx(x), idx(y));
                    (i.min(j), i.max(j), *c)
                })
                .collect();
            bilinear.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
            quadratic.push(QuadraticConstraint {
                bilinear,
                linear: merge_lin(lin),
                rel: Relation::Eq,
                rhs: *rhs,
            });
            quadratic_states.push(*s);
            participants.push(part.iter().map(&idx).collect());
        }
        SynthesisProblem {
            program: Program { variables: self.vars, objective, diversity: None, linear, quadratic },
            linear_kinds,
            quadratic_states,
            participants,
            fingerprint: q.mdp.fingerprint(),
            query: q.clone(),
            reach,
        }
    }
}

/// Symmetric matrix of a quadratic form over named variables.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticForm {
    pub vars: Vec<VarRef>,
    /// Row-major `n x n`.
    pub q: Vec<f64>,
}

impl QuadraticForm {
    pub fn dim(&self) -> usize {
        self.vars.len()
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.q[i * self.dim() + j]
    }
}

/// The symmetric `Q` with `x^T Q x` equal to the bilinear part of the
/// Bellman constraint of `s`.
pub fn constraint_matrix(p: &SynthesisProblem, s: StateId) -> Result<QuadraticForm> {
    let k = p
        .quadratic_states
        .iter()
        .position(|&x| x == s)
        .ok_or(Error::NoQuadraticConstraint(s.0))?;
    let part = &p.participants[k];
    let n = part.len();
    let mut q = vec![0.0; n * n];
    for &(i, j, c) in &p.program.quadratic[k].bilinear {
        let a = part.iter().position(|&x| x == i).expect("participant");
        let b = part.iter().position(|&x| x == j).expect("participant");
        if a == b {
            q[a * n + a] += c;
        } else {
            q[a * n + b] += 0.5 * c;
            q[b * n + a] += 0.5 * c;
        }
    }
    let vars = part.iter().map(|&i| p.program.variables[i].var).collect();
    Ok(QuadraticForm { vars, q })
}

#[derive(Debug, Clone, PartialEq)]
pub struct NonconvexityEntry {
    pub state: StateId,
    /// Eigenvalues of the Hessian `2Q`, ascending.
    pub eigenvalues: Vec<f64>,
    /// A negative eigenvalue below `-1e-9` was found.
    pub nonconvex: bool,
}

/// Hessian spectra of every Bellman constraint; a negative eigenvalue
/// witnesses that the constraint set is not convex.
pub fn nonconvexity_report(p: &SynthesisProblem) -> Vec<NonconvexityEntry> {
    p.quadratic_states
        .iter()
        .map(|&s| {
            let form = constraint_matrix(p, s).expect("state has a constraint");
            let doubled: Vec<f64> = form.q.iter().map(|v| 2.0 * v).collect();
            let eigenvalues = symmetric_eigenvalues(form.dim(), &doubled);
            let nonconvex = eigenvalues.iter().any(|&e| e < -1e-9);
            NonconvexityEntry { state: s, eigenvalues, nonconvex }
        })
        .collect()
}

pub type Assignment = BTreeMap<VarRef, f64>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConstraintRef {
    Linear(usize, LinearKind),
    Quadratic(StateId),
    Bound(VarRef),
    Integrality(VarRef),
    Missing(VarRef),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintViolation {
    pub constraint: ConstraintRef,
    /// Amount by which the constraint is violated.
    pub excess: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolutionReport {
    pub violations: Vec<ConstraintViolation>,
    /// Strategy read off the choice variables, if they form one.
    pub strategy: Option<Strategy>,
    /// Distances of that strategy, via the strategy distance functions.
    pub recomputed: Option<DistanceBreakdown>,
    /// Objective at the assignment as given.
    pub objective_assigned: f64,
    /// Distance objective after replacing the auxiliary variables by their
    /// tight values, computed from the choice variables within the encoding.
    pub objective_tight: Option<f64>,
    /// Largest gap between the assigned and recomputed delta/D variables.
    pub auxiliary_gap: Option<f64>,
    pub reach_assigned: Option<f64>,
    pub reach_recomputed: Option<f64>,
}

impl SolutionReport {
    pub fn is_feasible(&self) -> bool {
        self.violations.is_empty()
    }

    /// The tightened objective equals the strategy distance (within 1e-6).
    pub fn objective_consistent(&self) -> bool {
        match (self.objective_tight, &self.recomputed) {
            (Some(o), Some(r)) => (o - r.combined).abs() <= 1e-6,
            _ => false,
        }
    }

    /// The assigned `p_s0` equals the exact reachability (within 1e-7).
    pub fn reach_consistent(&self) -> bool {
        match (self.reach_assigned, self.reach_recomputed) {
            (Some(a), Some(r)) => (a - r).abs() <= 1e-7,
            (None, Some(_)) => true,
            _ => false,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.is_feasible() && self.objective_consistent() && self.reach_consistent()
    }
}

/// Checks an assignment against every constraint and cross-checks the
/// distance and reachability variables against independent recomputation.
pub fn validate_solution(p: &SynthesisProblem, assignment: &Assignment) -> SolutionReport {
    let prog = &p.program;
    let q = &p.query;
    let m = &q.mdp;
    let mut violations = Vec::new();
    let mut x = vec![0.0; prog.variables.len()];
    for (i, v) in prog.variables.iter().enumerate() {
        match assignment.get(&v.var) {
            Some(&val) => {
                x[i] = val;
                let (lo, hi) = v.domain.bounds();
                let ex = (lo - val).max(val - hi).max(0.0);
                if ex > CHECK_TOL || !val.is_finite() {
                    violations.push(ConstraintViolation { constraint: ConstraintRef::Bound(v.var), excess: ex });
                }
                if let Domain::Integer { .. } = v.domain {
                    let ex = (val - libm::round(val)).abs();
                    if ex > CHECK_TOL {
                        violations.push(ConstraintViolation {
                            constraint: ConstraintRef::Integrality(v.var),
                            excess: ex,
                        });
                    }
                }
            }
            None => violations.push(ConstraintViolation {
                constraint: ConstraintRef::Missing(v.var),
                excess: f64::INFINITY,
            }),
        }
    }
    for (k, c) in prog.linear.iter().enumerate() {
        let lhs: f64 = c.terms.iter().map(|&(i, w)| w * x[i]).sum();
        let ex = c.rel.excess(lhs, c.rhs);
        let tol = match p.linear_kinds[k] {
            LinearKind::Indicator(_) => CHANGE_TOL,
            _ => CHECK_TOL,
        };
        if ex > tol {
            violations.push(ConstraintViolation {
                constraint: ConstraintRef::Linear(k, p.linear_kinds[k]),
                excess: ex,
            });
        }
    }
    for (k, c) in prog.quadratic.iter().enumerate() {
        let lhs: f64 = c.bilinear.iter().map(|&(i, j, w)| w * x[i] * x[j]).sum::<f64>()
            + c.linear.iter().map(|&(i, w)| w * x[i]).sum::<f64>();
        let ex = c.rel.excess(lhs, c.rhs);
        if ex > CHECK_TOL {
            violations.push(ConstraintViolation {
                constraint: ConstraintRef::Quadratic(p.quadratic_states[k]),
                excess: ex,
            });
        }
    }
    let objective_assigned: f64 = prog.objective.iter().map(|&(i, w)| w * x[i]).sum();
    let get = |v: VarRef| assignment.get(&v).copied();

    // Strategy from the choice variables; fixed states keep the initial row.
    let rows: Vec<Vec<(ActionId, f64)>> = m
        .states()
        .map(|s| {
            if m.is_free(s) {
                m.enabled(s).map(|a| (a, get(VarRef::ChoiceProb(s, a)).unwrap_or(0.0))).collect()
            } else {
                q.initial.row(s).iter().collect()
            }
        })
        .collect();
    let sigma = Strategy::from_rows(rows);
    let strategy = sigma.ensure_valid(m).ok().map(|_| sigma);

    let mut report = SolutionReport {
        violations,
        strategy: None,
        recomputed: None,
        objective_assigned,
        objective_tight: None,
        auxiliary_gap: None,
        reach_assigned: get(VarRef::ReachProb(m.initial())),
        reach_recomputed: None,
    };
    let Some(sigma) = strategy else {
        return report;
    };

    // Tight auxiliaries computed from the choice variables directly.
    let decision = decision_states(m);
    let mut gap: f64 = 0.0;
    let mut deltas = Vec::with_capacity(decision.len());
    for &s in &decision {
        let delta = if m.is_free(s) {
            0.5 * m
                .enabled(s)
                .map(|a| (q.initial.prob(s, a) - get(VarRef::ChoiceProb(s, a)).unwrap_or(0.0)).abs())
                .sum::<f64>()
        } else {
            0.0
        };
        if let Some(d) = get(VarRef::StateDelta(s)) {
            gap = gap.max((d - delta).abs());
        }
        deltas.push(delta);
    }
    let d0 = deltas.iter().filter(|&&d| d > CHANGE_TOL).count() as f64;
    let d1 = if deltas.is_empty() { 0.0 } else { deltas.iter().sum::<f64>() / deltas.len() as f64 };
    let dinf = deltas.iter().copied().fold(0.0, f64::max);
    for (v, tight) in [(VarRef::D0, d0), (VarRef::D1, d1), (VarRef::DInf, dinf)] {
        if let Some(a) = get(v) {
            gap = gap.max((a - tight).abs());
        }
    }
    report.objective_tight = Some(q.distances.combine(d0, d1, dinf));
    report.auxiliary_gap = Some(gap);
    report.recomputed = strategy_distance(m, &q.initial, &sigma, &q.distances).ok();
    report.reach_recomputed = induce_dtmc(m, &sigma)
        .and_then(|d| reach_probability(&d, q.target))
        .ok()
        .map(|r| r.at(m.initial()));
    report.strategy = Some(sigma);
    report
}

/// The assignment a strategy induces: choice variables, tight auxiliaries
/// and exact reachability values.
pub fn assignment_from_strategy(p: &SynthesisProblem, sigma: &Strategy) -> Result<Assignment> {
    let q = &p.query;
    let m = &q.mdp;
    sigma.ensure_valid(m)?;
    let values = reach_probability(&induce_dtmc(m, sigma)?, q.target)?;
    let decision = decision_states(m);
    let mut out = Assignment::new();
    let mut d0 = 0.0;
    let mut sum = 0.0;
    let mut dinf: f64 = 0.0;
    for &s in &decision {
        if !m.is_free(s) {
            continue;
        }
        let mut delta = 0.0;
        for a in m.enabled(s) {
            let pa = sigma.prob(s, a);
            let diff = (q.initial.prob(s, a) - pa).abs();
            out.insert(VarRef::ChoiceProb(s, a), pa);
            out.insert(VarRef::AbsSplit(s, a), diff);
            delta += 0.5 * diff;
        }
        let changed = delta > CHANGE_TOL;
        out.insert(VarRef::StateDelta(s), delta);
        out.insert(VarRef::ChangeIndicator(s), if changed { 1.0 } else { 0.0 });
        d0 += if changed { 1.0 } else { 0.0 };
        sum += delta;
        dinf = dinf.max(delta);
    }
    out.insert(VarRef::D0, d0);
    out.insert(VarRef::D1, if decision.is_empty() { 0.0 } else { sum / decision.len() as f64 });
    out.insert(VarRef::DInf, dinf);
    for v in &p.program.variables {
        if let VarRef::ReachProb(s) = v.var {
            out.insert(v.var, values.at(s));
        }
    }
    Ok(out)
}

fn real(x: f64) -> String {
    format!("{x:.16e}")
}

fn term(c: f64) -> String {
    format!("{c:+.16e}")
}

/// Deterministic text rendering of the problem. Line 1 is `miqcqp 1`,
/// followed by metadata comments, variables sorted by name, the objective,
/// and the constraints.
pub fn export_problem(p: &SynthesisProblem) -> String {
    let prog = &p.program;
    let q = &p.query;
    let mut out = String::new();
    let name = |i: usize| prog.variables[i].var.name();
    out.push_str("miqcqp 1\n");
    let _ = writeln!(out, "# fingerprint {:016x}", p.fingerprint);
    let _ = writeln!(out, "# target s{} gamma {}", q.target.0, real(q.gamma));
    let _ = writeln!(
        out,
        "# distances r0 {} r1 {} rinf {}",
        real(q.distances.r0),
        real(q.distances.r1),
        real(q.distances.rinf)
    );
    if let Some(eps) = q.epsilon {
        let _ = writeln!(out, "# epsilon {}", real(eps));
    }
    out.push_str(&render_program(prog, &name));
    out
}

fn render_program(prog: &Program, name: &dyn Fn(usize) -> String) -> String {
    let mut out = String::new();
    for v in &prog.variables {
        let (kind, lo, hi) = match v.domain {
            Domain::Real { lo, hi } => ("real", real(lo), real(hi)),
            Domain::Integer { lo, hi } => ("int", format!("{lo}"), format!("{hi}")),
        };
        let _ = writeln!(out, "var {} {kind} {lo} {hi}", v.var.name());
    }
    out.push_str("min");
    for &(i, c) in &prog.objective {
        let _ = write!(out, " {}*{}", term(c), name(i));
    }
    out.push('\n');
    if let Some(d) = prog.diversity {
        let _ = writeln!(out, "div {} {} {}", real(d.lambda), real(d.perturbation), d.fixed_members);
    }
    for c in &prog.linear {
        let _ = write!(out, "lin {} {} :", c.rel.symbol(), real(c.rhs));
        for &(i, w) in &c.terms {
            let _ = write!(out, " {}*{}", term(w), name(i));
        }
        out.push('\n');
    }
    for c in &prog.quadratic {
        let _ = write!(out, "quad {} {} :", c.rel.symbol(), real(c.rhs));
        for &(i, j, w) in &c.bilinear {
            let _ = write!(out, " {}*{}*{}", term(w), name(i), name(j));
        }
        out.push_str(" |");
        for &(i, w) in &c.linear {
            let _ = write!(out, " {}*{}", term(w), name(i));
        }
        out.push('\n');
    }
    out
}

/// Parses the output of [`export_problem`] back into a [`Program`].
pub fn parse_problem(text: &str) -> Result<Program> {
    let err = |line: usize, msg: &str| Error::Parse { line, msg: msg.to_string() };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, "miqcqp 1")) => {}
        _ => return Err(err(1, "expected header `miqcqp 1`")),
    }
    let mut variables = Vec::new();
    let mut index: BTreeMap<String, usize> = BTreeMap::new();
    let mut objective = Vec::new();
    let mut diversity = None;
    let mut linear = Vec::new();
    let mut quadratic = Vec::new();
    let num = |line: usize, s: &str| s.parse::<f64>().map_err(|_| err(line, "bad number"));
    for (ln, raw) in lines {
        let l = raw.trim();
        if l.is_empty() || l.starts_with('#') {
            continue;
        }
        let mut tok = l.split_whitespace();
        let head = tok.next().unwrap_or_default();
        let var_idx = |name: &str, index: &BTreeMap<String, usize>| {
            index.get(name).copied().ok_or_else(|| err(ln, "unknown variable"))
        };
        let parse_lin = |t: &str, index: &BTreeMap<String, usize>| -> Result<(usize, f64)> {
            let (c, n) = t.split_once('*').ok_or_else(|| err(ln, "expected <coef>*<name>"))?;
            Ok((var_idx(n, index)?, num(ln, c)?))
        };
        match head {
            "var" => {
                let parts: Vec<&str> = tok.collect();
                if parts.len() != 4 {
                    return Err(err(ln, "expected `var <name> <real|int> <lo> <hi>`"));
                }
                let var = VarRef::parse(parts[0]).ok_or_else(|| err(ln, "bad variable name"))?;
                let domain = match parts[1] {
                    "real" => Domain::Real { lo: num(ln, parts[2])?, hi: num(ln, parts[3])? },
                    "int" => Domain::Integer {
                        lo: parts[2].parse().map_err(|_| err(ln, "bad integer bound"))?,
                        hi: parts[3].parse().map_err(|_| err(ln, "bad integer bound"))?,
                    },
                    _ => return Err(err(ln, "domain must be real or int")),
                };
                index.insert(parts[0].to_string(), variables.len());
                variables.push(Variable { var, domain });
            }
            "min" => {
                for t in tok {
                    objective.push(parse_lin(t, &index)?);
                }
            }
            "div" => {
                let parts: Vec<&str> = tok.collect();
                if parts.len() != 3 {
                    return Err(err(ln, "expected `div <lambda> <perturbation> <members>`"));
                }
                diversity = Some(DiversityTerm {
                    lambda: num(ln, parts[0])?,
                    perturbation: num(ln, parts[1])?,
                    fixed_members: parts[2].parse().map_err(|_| err(ln, "bad member count"))?,
                });
            }
            "lin" | "quad" => {
                let rel = match tok.next() {
                    Some("<=") => Relation::Le,
                    Some("=") => Relation::Eq,
                    _ => return Err(err(ln, "relation must be <= or =")),
                };
                let rhs = num(ln, tok.next().ok_or_else(|| err(ln, "missing rhs"))?)?;
                if tok.next() != Some(":") {
                    return Err(err(ln, "expected `:`"));
                }
                if head == "lin" {
                    let terms = tok.map(|t| parse_lin(t, &index)).collect::<Result<Vec<_>>>()?;
                    linear.push(LinearConstraint { terms, rel, rhs });
                } else {
                    let mut bilinear = Vec::new();
                    let mut lin = Vec::new();
                    let mut after_bar = false;
                    for t in tok {
                        if t == "|" {
                            after_bar = true;
                        } else if after_bar {
                            lin.push(parse_lin(t, &index)?);
                        } else {
                            let mut it = t.splitn(3, '*');
                            let (c, a, b) = match (it.next(), it.next(), it.next()) {
                                (Some(c), Some(a), Some(b)) => (c, a, b),
                                _ => return Err(err(ln, "expected <coef>*<name>*<name>")),
                            };
                            bilinear.push((var_idx(a, &index)?, var_idx(b, &index)?, num(ln, c)?));
                        }
                    }
                    quadratic.push(QuadraticConstraint { bilinear, linear: lin, rel, rhs });
                }
            }
            _ => return Err(err(ln, "unknown line kind")),
        }
    }
    Ok(Program { variables, objective, diversity, linear, quadratic })
}
