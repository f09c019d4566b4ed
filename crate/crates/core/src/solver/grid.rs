//! Exhaustive search over strategies whose free rows lie on a probability
//! grid. Branches are cut by the partial distance and by a relaxation that
//! lets every unassigned state move anywhere within its remaining distance
//! budget.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::local::{feasibility_limit, Landscape, Table};
use crate::encoding::SynthesisQuery;
use crate::error::{Error, Result};
use crate::mdp::{strategy_distance, DistanceBreakdown, Strategy, CHANGE_TOL};
use crate::reach::reach_set;

/// Default cap on explored nodes.
pub const GRID_BUDGET: u64 = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GridMode {
    /// Smallest distance over the grid.
    Minimize,
    /// Any grid point within the given distance.
    Within(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridConfig {
    pub step: f64,
    pub budget: u64,
    pub mode: GridMode,
}

impl GridConfig {
    pub fn new(step: f64) -> Self {
        GridConfig { step, budget: GRID_BUDGET, mode: GridMode::Minimize }
    }

    fn divisions(&self) -> Result<usize> {
        let n = libm::round(1.0 / self.step);
        if !(self.step > 0.0 && self.step <= 1.0) || (n * self.step - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!("grid step {} must divide 1", self.step)));
        }
        Ok(n as usize)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GridOutcome {
    Feasible {
        strategy: Strategy,
        distance: DistanceBreakdown,
        reach_value: f64,
        evaluations: u64,
    },
    Infeasible {
        evaluations: u64,
        /// The root relaxation alone rules out every strategy, not only grid
        /// points.
        continuous: bool,
    },
}

impl GridOutcome {
    pub fn distance(&self) -> Option<f64> {
        match self {
            GridOutcome::Feasible { distance, .. } => Some(distance.combined),
            GridOutcome::Infeasible { .. } => None,
        }
    }

    pub fn is_feasible(&self) -> bool {
        matches!(self, GridOutcome::Feasible { .. })
    }
}

/// Minimum-distance grid point satisfying the reachability limit.
pub fn grid_oracle(q: &SynthesisQuery, step: f64) -> Result<GridOutcome> {
    grid_oracle_with(q, &GridConfig::new(step))
}

pub fn grid_oracle_with(q: &SynthesisQuery, cfg: &GridConfig) -> Result<GridOutcome> {
    let land = Landscape::new(&q.mdp, &q.initial, q.target, q.gamma, q.distances, None)?;
    let out = search(&land, cfg, None)?;
    if !out.complete {
        return Err(Error::GridTooLarge(format!(
            "more than {} nodes at step {}",
            cfg.budget, cfg.step
        )));
    }
    match out.best {
        Some((table, _)) => {
            let strategy = Strategy::from_table(&q.mdp, &table);
            let distance = strategy_distance(&q.mdp, &q.initial, &strategy, &q.distances)?;
            let reach_value = land.reach(&table);
            Ok(GridOutcome::Feasible { strategy, distance, reach_value, evaluations: out.nodes })
        }
        None => Ok(GridOutcome::Infeasible { evaluations: out.nodes, continuous: out.root_pruned }),
    }
}

pub(crate) struct SearchOutcome {
    pub best: Option<(Table, f64)>,
    /// The whole tree was explored (within budget).
    pub complete: bool,
    pub nodes: u64,
    pub root_pruned: bool,
}

struct Row {
    probs: Vec<f64>,
    delta: f64,
}

fn compositions(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(left: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k == 1 {
            cur.push(left);
            out.push(cur.clone());
            cur.pop();
            return;
        }
        for c in 0..=left {
            cur.push(c);
            rec(left - c, k - 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(n, k, &mut Vec::new(), &mut out);
    out
}

fn binomial(n: u64, k: u64) -> u64 {
    let mut r: u64 = 1;
    for i in 0..k {
        r = r.saturating_mul(n - i) / (i + 1);
    }
    r
}

struct Search<'l, 'a> {
    land: &'l Landscape<'a>,
    rows: Vec<Vec<Row>>,
    in_reach: Vec<bool>,
    bound_slack: f64,
    mode: GridMode,
    budget: u64,
    nodes: u64,
    best: Option<(Table, f64)>,
    exhausted: bool,
    x: Table,
}

/// Depth-first search. `incumbent` seeds the bound in minimize mode: only
/// points strictly better are reported.
pub(crate) fn search(land: &Landscape<'_>, cfg: &GridConfig, incumbent: Option<f64>) -> Result<SearchOutcome> {
    let n = cfg.divisions()?;
    let mut rows = Vec::with_capacity(land.free.len());
    for &s in &land.free {
        let k = land.sigma[s].len();
        if binomial((n + k - 1) as u64, (k - 1) as u64) > cfg.budget {
            return Err(Error::GridTooLarge(format!(
                "state {s} alone has more than {} grid rows at step {}",
                cfg.budget, cfg.step
            )));
        }
        let sigma = &land.sigma[s];
        let tv = |p: &[f64]| 0.5 * p.iter().zip(sigma).map(|(a, b)| (a - b).abs()).sum::<f64>();
        let mut cand: Vec<Row> = compositions(n, k)
            .into_iter()
            .map(|c| {
                let probs: Vec<f64> = c.iter().map(|&v| v as f64 / n as f64).collect();
                Row { delta: tv(&probs), probs }
            })
            .collect();
        if !cand.iter().any(|r| r.delta <= 1e-12) {
            cand.push(Row { probs: sigma.clone(), delta: 0.0 });
        }
        cand.sort_by(|a, b| a.delta.total_cmp(&b.delta));
        rows.push(cand);
    }
    let reach = reach_set(land.m, land.t)?;
    let mut s = Search {
        land,
        rows,
        in_reach: reach.in_reach.clone(),
        bound_slack: 1e-9,
        mode: cfg.mode,
        budget: cfg.budget,
        nodes: 0,
        best: None,
        exhausted: false,
        x: land.sigma.clone(),
    };
    if let (GridMode::Minimize, Some(inc)) = (cfg.mode, incumbent) {
        s.best = Some((Vec::new(), inc));
    }
    let root_pruned = !s.relaxation_allows(0, 0.0, 0.0, 0.0);
    if !root_pruned {
        s.dfs(0, 0.0, 0.0, 0.0)?;
    }
    let best = match s.best {
        Some((t, v)) if !t.is_empty() => Some((t, v)),
        _ => None,
    };
    Ok(SearchOutcome { best, complete: !s.exhausted, nodes: s.nodes, root_pruned })
}

impl Search<'_, '_> {
    fn r1n(&self) -> f64 {
        if self.land.n_dec == 0 { 0.0 } else { self.land.dist.r1 / self.land.n_dec as f64 }
    }

    fn objective(&self, count: f64, sum: f64, max: f64) -> f64 {
        let d = &self.land.dist;
        d.r0 * count + self.r1n() * sum + d.rinf * max
    }

    /// Objective values allowed: strictly below the incumbent, or within
    /// epsilon.
    fn admits(&self, obj: f64) -> bool {
        match self.mode {
            GridMode::Within(eps) => obj <= eps + self.bound_slack,
            GridMode::Minimize => match &self.best {
                Some((_, b)) => obj < *b - 1e-12,
                None => true,
            },
        }
    }

    fn bound(&self) -> f64 {
        match self.mode {
            GridMode::Within(eps) => eps + self.bound_slack,
            GridMode::Minimize => self.best.as_ref().map_or(f64::INFINITY, |b| b.1 - 1e-12),
        }
    }

    /// Largest change an unassigned state may still afford.
    fn radius(&self, count: f64, sum: f64, max: f64) -> f64 {
        let b = self.bound();
        if !b.is_finite() {
            return 1.0;
        }
        let d = &self.land.dist;
        let r1n = self.r1n();
        let base = self.objective(count + 1.0, sum, max);
        let rho = if base > b {
            0.0
        } else {
            let slack = b - base;
            if r1n == 0.0 && d.rinf == 0.0 {
                1.0
            } else if r1n * max >= slack {
                slack / r1n
            } else {
                max + (slack - r1n * max) / (r1n + d.rinf)
            }
        };
        rho.clamp(CHANGE_TOL, 1.0)
    }

    /// Lower bound on the reachability of any completion of the current
    /// partial assignment; `false` if it already exceeds the limit.
    fn relaxation_allows(&mut self, depth: usize, count: f64, sum: f64, max: f64) -> bool {
        self.nodes += 1;
        let land = self.land;
        let m = land.m;
        let rho = self.radius(count, sum, max);
        let mut radius = vec![0.0; m.num_states()];
        for &s in &land.free[depth..] {
            radius[s] = rho;
        }
        let t = land.t.0;
        let s0 = m.initial().0;
        let limit = feasibility_limit(land.gamma);
        let mut v = vec![0.0; m.num_states()];
        v[t] = 1.0;
        let mut q: Vec<f64> = Vec::new();
        for _ in 0..10_000 {
            let mut change: f64 = 0.0;
            for s in m.states() {
                let s = s.0;
                if s == t || !self.in_reach[s] {
                    continue;
                }
                let row = &self.x[s];
                q.clear();
                q.extend(
                    m.choices(crate::mdp::StateId(s))
                        .iter()
                        .map(|c| c.successors.iter().map(|(n, p)| p * v[n.0]).sum::<f64>()),
                );
                let mut val: f64 = row.iter().zip(&q).map(|(w, qa)| w * qa).sum();
                if radius[s] > 0.0 {
                    // move up to `radius` of mass from the worst actions to the best
                    let qmin = q.iter().copied().fold(f64::INFINITY, f64::min);
                    let mut order: Vec<usize> = (0..q.len()).collect();
                    order.sort_by(|&a, &b| q[b].total_cmp(&q[a]));
                    let mut left = radius[s];
                    for a in order {
                        if left <= 0.0 {
                            break;
                        }
                        let take = land.sigma[s][a].min(left);
                        val -= take * (q[a] - qmin);
                        left -= take;
                    }
                }
                let val = val.max(v[s]);
                change = change.max(val - v[s]);
                v[s] = val;
            }
            if v[s0] > limit {
                return false;
            }
            if change <= 1e-12 {
                break;
            }
        }
        true
    }

    fn dfs(&mut self, depth: usize, count: f64, sum: f64, max: f64) -> Result<()> {
        if self.exhausted {
            return Ok(());
        }
        if self.nodes >= self.budget {
            self.exhausted = true;
            return Ok(());
        }
        let land = self.land;
        if depth == land.free.len() {
            self.nodes += 1;
            let obj = self.objective(count, sum, max);
            if self.admits(obj) && land.feasible(land.reach(&self.x)) {
                self.best = Some((self.x.clone(), obj));
            }
            return Ok(());
        }
        let s = land.free[depth];
        for i in 0..self.rows[depth].len() {
            let delta = self.rows[depth][i].delta;
            let changed = if delta > CHANGE_TOL { 1.0 } else { 0.0 };
            let (c2, s2, m2) = (count + changed, sum + delta, max.max(delta));
            if !self.admits(self.objective(c2, s2, m2)) {
                // rows are sorted by delta and the objective is monotone in it
                break;
            }
            self.x[s].clone_from(&self.rows[depth][i].probs);
            let deeper = depth + 1 < land.free.len();
            if !deeper || self.relaxation_allows(depth + 1, c2, s2, m2) {
                self.dfs(depth + 1, c2, s2, m2)?;
            }
            if self.exhausted {
                break;
            }
            if let GridMode::Within(_) = self.mode {
                if self.best.is_some() {
                    break;
                }
            }
        }
        self.x[s].clone_from(&land.sigma[s]);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compositions_count() {
        assert_eq!(compositions(4, 2).len(), 5);
        assert_eq!(compositions(20, 3).len(), binomial(22, 2) as usize);
        assert_eq!(binomial(102, 2), 5151);
    }
}
