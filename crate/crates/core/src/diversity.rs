//! Collections of diverse counterfactuals. Members are generated one at a
//! time; each new member trades distance to the initial strategy against the
//! determinant of the matrix of inverse pairwise distances to the members
//! already found.

use alloc::vec;
use alloc::vec::Vec;

use crate::encoding::SynthesisQuery;
use crate::error::{Error, Result};
use crate::linalg::det;
use crate::mdp::{tv_distance, ActionId, DistanceConfig, StateId, Strategy, CHANGE_TOL};
use crate::solver::local::DiversityObjective;
use crate::solver::{solve_inner, Clock, SolverConfig, Status, SynthesisResult};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiversityConfig {
    pub count: usize,
    pub lambda: f64,
    /// Added to the diagonal of the diversity matrix.
    pub perturbation: f64,
    /// Distance coefficients of the base objective.
    pub base: DistanceConfig,
}

impl Default for DiversityConfig {
    fn default() -> Self {
        DiversityConfig { count: 3, lambda: 2.0, perturbation: 1e-4, base: DistanceConfig::unit() }
    }
}

impl DiversityConfig {
    pub fn check(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::InvalidConfig("count must be at least 1".into()));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidConfig("lambda must be finite and >= 0".into()));
        }
        if !(self.perturbation > 0.0) {
            return Err(Error::InvalidConfig("perturbation must be positive".into()));
        }
        self.base.check()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiverseSet {
    /// In generation order; never rewritten once stored.
    pub members: Vec<SynthesisResult>,
    /// `D_ij = 1 / (1 + l1_ij)` with `1 + perturbation` on the diagonal.
    pub pairwise: Vec<Vec<f64>>,
    /// Unaveraged sums of per-state total variation between members.
    pub l1: Vec<Vec<f64>>,
    /// `det` of the leading `k x k` block after each member was added.
    pub determinant_trace: Vec<f64>,
    pub novel_fractions: Vec<f64>,
    /// Result of the first solve when it produced no strategy.
    pub unsolved: Option<SynthesisResult>,
}

impl DiverseSet {
    pub fn strategies(&self) -> Vec<&Strategy> {
        self.members.iter().filter_map(|r| r.strategy.as_ref()).collect()
    }
}

/// Sum over states of the total variation distance; unlike `d1` this is not
/// averaged.
pub fn l1_distance(a: &Strategy, b: &Strategy) -> f64 {
    a.rows().iter().zip(b.rows()).map(|(x, y)| tv_distance(x, y)).sum()
}

pub fn pairwise_matrix(members: &[Strategy], perturbation: f64) -> Vec<Vec<f64>> {
    let k = members.len();
    let mut d = vec![vec![0.0; k]; k];
    for i in 0..k {
        d[i][i] = 1.0 + perturbation;
        for j in (i + 1)..k {
            let v = 1.0 / (1.0 + l1_distance(&members[i], &members[j]));
            d[i][j] = v;
            d[j][i] = v;
        }
    }
    d
}

pub fn diversity_determinant(members: &[Strategy], perturbation: f64) -> f64 {
    let d = pairwise_matrix(members, perturbation);
    let flat: Vec<f64> = d.iter().flatten().copied().collect();
    det(members.len(), &flat)
}

fn changed_pairs(sigma0: &Strategy, s: &Strategy) -> Vec<(StateId, ActionId)> {
    let mut out = Vec::new();
    for (i, (r0, r1)) in sigma0.rows().iter().zip(s.rows()).enumerate() {
        let mut actions: Vec<ActionId> = r0.support().iter().chain(r1.support()).map(|e| e.0).collect();
        actions.sort();
        actions.dedup();
        for a in actions {
            if (r0.prob(a) - r1.prob(a)).abs() > CHANGE_TOL {
                out.push((StateId(i), a));
            }
        }
    }
    out
}

/// Share of the state-action pairs changed by `candidate` (relative to
/// `sigma0`) that no previous strategy changed. Zero when nothing changed.
pub fn novel_fraction(sigma0: &Strategy, candidate: &Strategy, previous: &[Strategy]) -> f64 {
    let cand = changed_pairs(sigma0, candidate);
    if cand.is_empty() {
        return 0.0;
    }
    let mut seen: Vec<(StateId, ActionId)> = previous.iter().flat_map(|p| changed_pairs(sigma0, p)).collect();
    seen.sort();
    seen.dedup();
    let novel = cand.iter().filter(|p| seen.binary_search(p).is_err()).count();
    novel as f64 / cand.len() as f64
}

#[cfg(feature = "std")]
pub fn diverse_synthesize(q: &SynthesisQuery, dcfg: &DiversityConfig, scfg: &SolverConfig) -> Result<DiverseSet> {
    diverse_synthesize_with_clock(q, dcfg, scfg, &crate::solver::WallClock::start())
}

pub fn diverse_synthesize_with_clock(
    q: &SynthesisQuery,
    dcfg: &DiversityConfig,
    scfg: &SolverConfig,
    clock: &dyn Clock,
) -> Result<DiverseSet> {
    dcfg.check()?;
    let mut q = q.clone();
    q.distances = dcfg.base;
    let m = &q.mdp;
    let first = solve_inner(&q, scfg, clock, None)?;
    let mut set = DiverseSet {
        members: Vec::new(),
        pairwise: Vec::new(),
        l1: Vec::new(),
        determinant_trace: Vec::new(),
        novel_fractions: Vec::new(),
        unsolved: None,
    };
    if first.strategy.is_none() {
        set.unsolved = Some(first);
        return Ok(set);
    }
    let mut strategies: Vec<Strategy> = Vec::new();
    let push = |set: &mut DiverseSet, r: SynthesisResult, strategies: &mut Vec<Strategy>| {
        let s = r.strategy.clone().expect("member has a strategy");
        set.novel_fractions.push(novel_fraction(&q.initial, &s, strategies));
        strategies.push(s);
        set.determinant_trace.push(diversity_determinant(strategies, dcfg.perturbation));
        set.members.push(r);
    };
    push(&mut set, first, &mut strategies);
    for _ in 1..dcfg.count {
        if clock.elapsed() > scfg.time_limit {
            break;
        }
        let diversity = (dcfg.lambda > 0.0).then(|| DiversityObjective {
            lambda: dcfg.lambda,
            perturbation: dcfg.perturbation,
            members: strategies.iter().map(|s| s.to_table(m)).collect(),
        });
        let mut r = solve_inner(&q, scfg, clock, diversity)?;
        if r.strategy.is_none() {
            break;
        }
        if r.status == Status::Optimal && dcfg.lambda > 0.0 {
            r.status = Status::SubOptimal;
        }
        push(&mut set, r, &mut strategies);
    }
    set.pairwise = pairwise_matrix(&strategies, dcfg.perturbation);
    set.l1 = (0..strategies.len())
        .map(|i| (0..strategies.len()).map(|j| l1_distance(&strategies[i], &strategies[j])).collect())
        .collect();
    Ok(set)
}
