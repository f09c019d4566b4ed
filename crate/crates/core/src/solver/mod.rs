//! Synthesis of counterfactual strategies.
//!
//! [`solve`] first settles the easy cases: an initial strategy that already
//! meets the limit is returned as is, and a minimum reachability above the
//! limit proves infeasibility. Otherwise a deterministic multi-start local
//! search runs over the choice probabilities of the free decision states.
//! Reachability is always computed exactly, so the Bellman equations never
//! appear as constraints; the limit enters as a growing squared-hinge
//! penalty and is enforced exactly at the end.

mod grid;
pub(crate) mod local;

use alloc::format;
use alloc::vec::Vec;

pub use grid::{grid_oracle, grid_oracle_with, GridConfig, GridMode, GridOutcome, GRID_BUDGET};
use local::{feasibility_limit, Candidate, DiversityObjective, Landscape, FEAS_TOL};

use crate::encoding::{build_problem, SynthesisQuery};
use crate::error::{Error, Result};
use crate::mdp::{induce_dtmc, strategy_distance, DistanceBreakdown, DistanceConfig, Strategy};
use crate::reach::reach_probability;

/// Free decision states up to which the grid certificate is attempted.
const CERTIFY_MAX_FREE: usize = 6;
const CERTIFY_STEP: f64 = 0.01;
const CERTIFY_BUDGET: u64 = 200_000;
/// Free decision states up to which single-state moves are tried.
const SINGLE_STATE_MAX_FREE: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Seconds.
    pub time_limit: f64,
    pub starts: usize,
    pub seed: u64,
    pub penalty_init: f64,
    pub penalty_growth: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub step_tol: f64,
    pub constraint_tol: f64,
    pub sparsify: bool,
    /// Try to certify optimality with a bounded grid search on small
    /// instances.
    pub certify: bool,
    /// Worker threads for the starts (only with the `std` feature).
    pub threads: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            time_limit: 1800.0,
            starts: 16,
            seed: 0,
            penalty_init: 10.0,
            penalty_growth: 5.0,
            max_outer: 12,
            max_inner: 200,
            step_tol: 1e-9,
            constraint_tol: 1e-7,
            sparsify: true,
            certify: true,
            threads: 1,
        }
    }
}

impl SolverConfig {
    pub fn check(&self) -> Result<()> {
        let pos = [self.time_limit, self.penalty_init, self.step_tol, self.constraint_tol];
        if pos.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidConfig("time limit, penalty and tolerances must be positive".into()));
        }
        if !(self.penalty_growth > 1.0) {
            return Err(Error::InvalidConfig(format!("penalty growth {} must exceed 1", self.penalty_growth)));
        }
        if self.starts == 0 || self.max_outer == 0 || self.max_inner == 0 || self.threads == 0 {
            return Err(Error::InvalidConfig("counts must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Status {
    Optimal,
    SubOptimal,
    Infeasible,
    Timeout,
    Trivial,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Optimal => "Optimal",
            Status::SubOptimal => "SubOptimal",
            Status::Infeasible => "Infeasible",
            Status::Timeout => "Timeout",
            Status::Trivial => "Trivial",
        }
    }

    pub fn has_strategy(self) -> bool {
        matches!(self, Status::Optimal | Status::SubOptimal | Status::Trivial)
    }
}

/// Evidence behind a status.
#[derive(Debug, Clone, PartialEq)]
pub enum Certificate {
    /// Minimum reachability over all strategies exceeds the limit.
    MinReach { value: f64, residual: f64 },
    /// The initial strategy already meets the limit.
    InitialFeasible,
    /// The distance is zero.
    ZeroDistance,
    /// No grid point at `step` improves on the result by more than `slack`.
    Grid { step: f64, slack: f64, evaluations: u64 },
    /// No strategy within the distance budget meets the limit, shown by a
    /// relaxation over the whole budget.
    BudgetRelaxation,
    /// No grid point at `step` within the distance budget meets the limit.
    GridExhausted { step: f64, evaluations: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisResult {
    pub status: Status,
    pub strategy: Option<Strategy>,
    pub distance: Option<DistanceBreakdown>,
    /// `Pr(s0 -> t)` under the returned strategy.
    pub reach_value: Option<f64>,
    pub reach_before: f64,
    pub min_reach: f64,
    /// Seconds, as measured by the clock passed in.
    pub wall_time: f64,
    pub starts_used: usize,
    pub certificate: Option<Certificate>,
}

/// Source of elapsed time, so the solver stays usable without `std`.
pub trait Clock: Sync {
    /// Seconds since the solve began.
    fn elapsed(&self) -> f64;
}

/// A clock that never advances: no time limit applies.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoClock;

impl Clock for NoClock {
    fn elapsed(&self) -> f64 {
        0.0
    }
}

#[cfg(feature = "std")]
#[derive(Debug, Clone, Copy)]
pub struct WallClock(std::time::Instant);

#[cfg(feature = "std")]
impl WallClock {
    pub fn start() -> Self {
        WallClock(std::time::Instant::now())
    }
}

#[cfg(feature = "std")]
impl Clock for WallClock {
    fn elapsed(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

/// Solves with the wall clock when `std` is enabled, otherwise without a
/// time limit.
pub fn solve(q: &SynthesisQuery, cfg: &SolverConfig) -> Result<SynthesisResult> {
    #[cfg(feature = "std")]
    let clock = WallClock::start();
    #[cfg(not(feature = "std"))]
    let clock = NoClock;
    solve_with_clock(q, cfg, &clock)
}

pub fn solve_with_clock(q: &SynthesisQuery, cfg: &SolverConfig, clock: &dyn Clock) -> Result<SynthesisResult> {
    solve_inner(q, cfg, clock, None)
}

fn empty_result(q: &SynthesisQuery, status: Status, min_reach: f64, clock: &dyn Clock) -> SynthesisResult {
    SynthesisResult {
        status,
        strategy: None,
        distance: None,
        reach_value: None,
        reach_before: q.reach_before(),
        min_reach,
        wall_time: clock.elapsed(),
        starts_used: 0,
        certificate: None,
    }
}

pub(crate) fn solve_inner(
    q: &SynthesisQuery,
    cfg: &SolverConfig,
    clock: &dyn Clock,
    diversity: Option<DiversityObjective>,
) -> Result<SynthesisResult> {
    cfg.check()?;
    // rejects the target-is-initial case
    build_problem(q)?;
    let m = &q.mdp;
    let land = Landscape::new(m, &q.initial, q.target, q.gamma, q.distances, diversity)?;
    let min_reach = land.min_reach.value;
    if !q.premise_holds() && land.diversity.is_none() {
        return Ok(SynthesisResult {
            status: Status::Trivial,
            strategy: Some(q.initial.clone()),
            distance: Some(strategy_distance(m, &q.initial, &q.initial, &q.distances)?),
            reach_value: Some(q.reach_before()),
            certificate: Some(Certificate::InitialFeasible),
            ..empty_result(q, Status::Trivial, min_reach, clock)
        });
    }
    if min_reach > feasibility_limit(q.gamma) {
        return Ok(SynthesisResult {
            certificate: Some(Certificate::MinReach { value: min_reach, residual: land.min_reach.residual }),
            ..empty_result(q, Status::Infeasible, min_reach, clock)
        });
    }
    if clock.elapsed() > cfg.time_limit {
        return Ok(empty_result(q, Status::Timeout, min_reach, clock));
    }

    // Jobs: random starts, then the single-state and witness heuristics.
    let jobs = cfg.starts + 2;
    let run = |k: usize| -> Result<Option<Candidate>> {
        if clock.elapsed() > cfg.time_limit && k < cfg.starts {
            return Ok(None);
        }
        if k < cfg.starts {
            land.run_start(k, cfg, clock)
        } else if k == cfg.starts {
            if land.free.len() <= SINGLE_STATE_MAX_FREE {
                land.single_state_candidate(cfg, clock)
            } else {
                Ok(None)
            }
        } else {
            land.witness_candidate(cfg, clock)
        }
    };
    let outcomes = run_jobs(jobs, cfg.threads, &run);
    let mut best: Option<(usize, Candidate)> = None;
    let mut starts_used = 0;
    for (k, out) in outcomes.into_iter().enumerate() {
        let Some(c) = out? else { continue };
        if k < cfg.starts {
            starts_used += 1;
        }
        if best.as_ref().map_or(true, |(_, b)| c.objective < b.objective) {
            best = Some((k, c));
        }
    }
    let Some((_, mut cand)) = best else {
        return Ok(empty_result(q, Status::Timeout, min_reach, clock));
    };

    let mut certificate = None;
    let mut status = Status::SubOptimal;
    if land.base_objective(&cand.table) == 0.0 && land.diversity.is_none() {
        status = Status::Optimal;
        certificate = Some(Certificate::ZeroDistance);
    } else if cfg.certify && land.diversity.is_none() && land.free.len() <= CERTIFY_MAX_FREE {
        let slack = 0.05 * q.distances.total();
        let gcfg = GridConfig { step: CERTIFY_STEP, budget: CERTIFY_BUDGET, mode: GridMode::Minimize };
        if let Ok(out) = grid::search(&land, &gcfg, Some(cand.objective - slack)) {
            if out.complete {
                match out.best {
                    None => {
                        status = Status::Optimal;
                        certificate = Some(Certificate::Grid { step: CERTIFY_STEP, slack, evaluations: out.nodes });
                    }
                    Some((table, _)) => {
                        // A markedly better grid point exists; finish the grid
                        // minimization from there and adopt its optimum.
                        let full = grid::search(&land, &gcfg, None);
                        let table = match full {
                            Ok(o) if o.complete => o.best.map(|b| b.0).unwrap_or(table),
                            _ => table,
                        };
                        let objective = land.objective(&table);
                        if objective < cand.objective {
                            cand = Candidate { objective, table };
                            status = Status::Optimal;
                            certificate =
                                Some(Certificate::Grid { step: CERTIFY_STEP, slack: 0.0, evaluations: out.nodes });
                        }
                    }
                }
            }
        }
    }

    let strategy = Strategy::from_table(m, &cand.table);
    let distance = strategy_distance(m, &q.initial, &strategy, &q.distances)?;
    let reach_value = reach_probability(&induce_dtmc(m, &strategy)?, q.target)?.at(m.initial());
    debug_assert!(reach_value <= q.gamma + 1e-7, "reach {reach_value} above {}", q.gamma);
    Ok(SynthesisResult {
        status,
        strategy: Some(strategy),
        distance: Some(distance),
        reach_value: Some(reach_value),
        reach_before: q.reach_before(),
        min_reach,
        wall_time: clock.elapsed(),
        starts_used,
        certificate,
    })
}

#[cfg(feature = "std")]
fn run_jobs<T: Send>(n: usize, threads: usize, f: &(dyn Fn(usize) -> T + Sync)) -> Vec<T> {
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Mutex;
    if threads <= 1 || n <= 1 {
        return (0..n).map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<T>>> = Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..threads.min(n) {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                if k >= n {
                    break;
                }
                let out = f(k);
                slots.lock().expect("no worker panicked")[k] = Some(out);
            });
        }
    });
    slots
        .into_inner()
        .expect("no worker panicked")
        .into_iter()
        .map(|o| o.expect("every job ran"))
        .collect()
}

#[cfg(not(feature = "std"))]
fn run_jobs<T>(n: usize, _threads: usize, f: &dyn Fn(usize) -> T) -> Vec<T> {
    (0..n).map(f).collect()
}

/// Status of a solve result, given optionally the grid-oracle optimum.
/// Results without a strategy keep their status; a zero distance is always
/// optimal; otherwise optimality needs the oracle within
/// `0.05 * (r0 + r1 + rinf)`.
pub fn classify_status(result: &SynthesisResult, oracle: Option<f64>, distances: &DistanceConfig) -> Status {
    match result.status {
        Status::Infeasible | Status::Timeout | Status::Trivial => return result.status,
        Status::Optimal | Status::SubOptimal => {}
    }
    let Some(d) = &result.distance else { return result.status };
    if d.combined == 0.0 {
        return Status::Optimal;
    }
    match oracle {
        Some(o) if d.combined <= o + 0.05 * distances.total() => Status::Optimal,
        _ => Status::SubOptimal,
    }
}

/// Finds any strategy within the distance budget `q.epsilon` that meets the
/// limit. Local search is tried first; if it overshoots the budget, a grid
/// search within the budget decides.
pub fn solve_epsilon(q: &SynthesisQuery, cfg: &SolverConfig) -> Result<SynthesisResult> {
    #[cfg(feature = "std")]
    let clock = WallClock::start();
    #[cfg(not(feature = "std"))]
    let clock = NoClock;
    solve_epsilon_with_clock(q, cfg, &clock)
}

/// Grid step used when local search alone cannot meet the budget.
pub const EPSILON_GRID_STEP: f64 = 0.01;

pub fn solve_epsilon_with_clock(q: &SynthesisQuery, cfg: &SolverConfig, clock: &dyn Clock) -> Result<SynthesisResult> {
    let eps = q
        .epsilon
        .ok_or_else(|| Error::InvalidConfig("epsilon mode needs a distance budget".into()))?;
    let mut cfg = cfg.clone();
    cfg.certify = false;
    let mut r = solve_with_clock(q, &cfg, clock)?;
    match r.status {
        Status::Trivial | Status::Infeasible | Status::Timeout => return Ok(r),
        _ => {}
    }
    if r.distance.as_ref().is_some_and(|d| d.combined <= eps + FEAS_TOL) {
        r.status = Status::SubOptimal;
        r.certificate = None;
        return Ok(r);
    }
    let land = Landscape::new(&q.mdp, &q.initial, q.target, q.gamma, q.distances, None)?;
    let gcfg = GridConfig { step: EPSILON_GRID_STEP, budget: GRID_BUDGET, mode: GridMode::Within(eps) };
    let out = grid::search(&land, &gcfg, None)?;
    let base = SynthesisResult { wall_time: clock.elapsed(), ..empty_result(q, Status::Timeout, r.min_reach, clock) };
    match out.best {
        Some((table, _)) => {
            let strategy = Strategy::from_table(&q.mdp, &table);
            let distance = strategy_distance(&q.mdp, &q.initial, &strategy, &q.distances)?;
            let reach_value = reach_probability(&induce_dtmc(&q.mdp, &strategy)?, q.target)?.at(q.mdp.initial());
            Ok(SynthesisResult {
                status: Status::SubOptimal,
                strategy: Some(strategy),
                distance: Some(distance),
                reach_value: Some(reach_value),
                starts_used: r.starts_used,
                ..base
            })
        }
        None if out.root_pruned => Ok(SynthesisResult {
            status: Status::Infeasible,
            certificate: Some(Certificate::BudgetRelaxation),
            ..base
        }),
        None if out.complete => Ok(SynthesisResult {
            status: Status::Infeasible,
            certificate: Some(Certificate::GridExhausted { step: EPSILON_GRID_STEP, evaluations: out.nodes }),
            ..base
        }),
        None => Ok(base),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::{assignment_from_strategy, validate_solution};
    use crate::fixtures::loan_application;
    use crate::mdp::StateId;

    fn query(gamma: f64, d: DistanceConfig) -> SynthesisQuery {
        let ex = loan_application();
        SynthesisQuery::new(ex.mdp, ex.impatient, ex.rejected, gamma, d).unwrap()
    }

    fn quick() -> SolverConfig {
        SolverConfig { starts: 4, ..SolverConfig::default() }
    }

    #[test]
    fn running_example_counterfactual() {
        let q = query(0.2, DistanceConfig::unit());
        let r = solve_with_clock(&q, &quick(), &NoClock).unwrap();
        assert!(r.status == Status::Optimal || r.status == Status::SubOptimal, "{:?}", r.status);
        let d = r.distance.as_ref().unwrap();
        assert!(d.combined <= 1.70 + 1e-3, "{}", d.combined);
        assert!(r.reach_value.unwrap() <= 0.2 + 1e-7);
        let p = build_problem(&q).unwrap();
        let a = assignment_from_strategy(&p, r.strategy.as_ref().unwrap()).unwrap();
        assert!(validate_solution(&p, &a).is_valid());
        let rework = StateId(5);
        let changed: Vec<usize> = (0..d.per_state.len()).filter(|&i| d.per_state[i] > 1e-6).collect();
        assert_eq!(changed.len(), 1);
        let delta = d.per_state[changed[0]];
        assert!((0.51..=0.56).contains(&delta), "{delta}");
        assert!(r.strategy.unwrap().prob(rework, crate::mdp::ActionId(2)) < 0.7);
    }

    #[test]
    fn trivial_and_infeasible() {
        let r = solve_with_clock(&query(0.45, DistanceConfig::unit()), &quick(), &NoClock).unwrap();
        assert_eq!(r.status, Status::Trivial);
        assert_eq!(r.distance.unwrap().combined, 0.0);
        let r = solve_with_clock(&query(0.0001, DistanceConfig::unit()), &quick(), &NoClock).unwrap();
        assert_eq!(r.status, Status::Infeasible);
        assert!(matches!(r.certificate, Some(Certificate::MinReach { value, .. }) if (value - 0.02).abs() < 1e-12));
    }

    #[test]
    fn grid_oracle_on_running_example() {
        let q = query(0.2, DistanceConfig::unit());
        let out = grid_oracle(&q, 0.01).unwrap();
        let d = out.distance().unwrap();
        assert!((1.645..=1.70 + 1e-9).contains(&d), "{d}");
        let out = grid_oracle(&query(1.0, DistanceConfig::unit()), 0.05).unwrap();
        assert_eq!(out.distance(), Some(0.0));
        let out = grid_oracle(&query(0.01, DistanceConfig::unit()), 0.05).unwrap();
        assert!(!out.is_feasible());
    }

    #[test]
    fn config_checks() {
        assert!(SolverConfig { penalty_growth: 1.0, ..SolverConfig::default() }.check().is_err());
        assert!(SolverConfig { starts: 0, ..SolverConfig::default() }.check().is_err());
        assert!(SolverConfig::default().check().is_ok());
    }
}
