//! Reachability: backward graph analysis, exact probabilities of induced
//! chains, value iteration, minimum reachability over all strategies and
//! adjoint sensitivities of the reachability probability.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::Lu;
use crate::mdp::{combine_rows, ActionId, Dtmc, Mdp, StateId, Strategy};

/// `Reach(t)`: states with a finite positive-probability path to `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReachAnalysis {
    pub target: StateId,
    pub reach_set: Vec<StateId>,
    pub zero_set: Vec<StateId>,
    pub(crate) in_reach: Vec<bool>,
}

impl ReachAnalysis {
    pub fn contains(&self, s: StateId) -> bool {
        self.in_reach[s.0]
    }
}

pub fn reach_set(m: &Mdp, t: StateId) -> Result<ReachAnalysis> {
    if !m.contains_state(t) {
        return Err(Error::UnknownState(t.0));
    }
    let n = m.num_states();
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
    for s in m.states() {
        for c in m.choices(s) {
            for (succ, p) in c.successors.iter() {
                if p > 0.0 {
                    preds[succ.0].push(s.0);
                }
            }
        }
    }
    let in_reach = backward_closure(&preds, t.0);
    let (reach_set, zero_set) = partition(&in_reach);
    Ok(ReachAnalysis { target: t, reach_set, zero_set, in_reach })
}

fn partition(flags: &[bool]) -> (Vec<StateId>, Vec<StateId>) {
    let mut yes = Vec::new();
    let mut no = Vec::new();
    for (i, &f) in flags.iter().enumerate() {
        if f {
            yes.push(StateId(i));
        } else {
            no.push(StateId(i));
        }
    }
    (yes, no)
}

pub(crate) fn backward_closure(preds: &[Vec<usize>], t: usize) -> Vec<bool> {
    let mut seen = vec![false; preds.len()];
    let mut stack = vec![t];
    seen[t] = true;
    while let Some(s) = stack.pop() {
        for &p in &preds[s] {
            if !seen[p] {
                seen[p] = true;
                stack.push(p);
            }
        }
    }
    seen
}

fn preds_of_rows(rows: &[Vec<(usize, f64)>]) -> Vec<Vec<usize>> {
    let mut preds = vec![Vec::new(); rows.len()];
    for (s, row) in rows.iter().enumerate() {
        for &(t, p) in row {
            if p > 0.0 {
                preds[t].push(s);
            }
        }
    }
    preds
}

/// Reachability probabilities of every state plus the Bellman residual of
/// the solution.
#[derive(Debug, Clone, PartialEq)]
pub struct ReachValues {
    pub values: Vec<f64>,
    pub residual: f64,
}

impl ReachValues {
    pub fn at(&self, s: StateId) -> f64 {
        self.values[s.0]
    }
}

/// Exact solve of a chain's reachability system. `transient` lists the
/// unknowns (states that reach `t`, other than `t`), `pos` maps states to
/// their row in the factorization.
pub(crate) struct ChainSolve {
    pub values: Vec<f64>,
    pub transient: Vec<usize>,
    pub pos: Vec<usize>,
    pub lu: Lu,
}

const NONE: usize = usize::MAX;

pub(crate) fn solve_chain(rows: &[Vec<(usize, f64)>], t: usize) -> Result<ChainSolve> {
    let n = rows.len();
    let can = backward_closure(&preds_of_rows(rows), t);
    let transient: Vec<usize> = (0..n).filter(|&s| can[s] && s != t).collect();
    let mut pos = vec![NONE; n];
    for (i, &s) in transient.iter().enumerate() {
        pos[s] = i;
    }
    let k = transient.len();
    let mut a = vec![0.0; k * k];
    let mut b = vec![0.0; k];
    for (i, &s) in transient.iter().enumerate() {
        a[i * k + i] += 1.0;
        for &(succ, p) in &rows[s] {
            if succ == t {
                b[i] += p;
            } else if pos[succ] != NONE {
                a[i * k + pos[succ]] -= p;
            }
        }
    }
    let lu = Lu::factor(k, a);
    let x = lu.solve(&b).ok_or(Error::SingularSystem)?;
    let mut values = vec![0.0; n];
    values[t] = 1.0;
    for (i, &s) in transient.iter().enumerate() {
        values[s] = x[i].clamp(0.0, 1.0);
    }
    Ok(ChainSolve { values, transient, pos, lu })
}

fn bellman_residual(rows: &[Vec<(usize, f64)>], t: usize, values: &[f64]) -> f64 {
    rows.iter()
        .enumerate()
        .filter(|&(s, _)| s != t)
        .map(|(s, row)| {
            let rhs: f64 = row.iter().map(|&(succ, p)| p * values[succ]).sum();
            (values[s] - rhs).abs()
        })
        .fold(0.0, f64::max)
}

/// Probability of eventually visiting `t` from every state, by a direct
/// solve of the Bellman system after eliminating states that cannot reach
/// `t`.
pub fn reach_probability(d: &Dtmc, t: StateId) -> Result<ReachValues> {
    if t.0 >= d.num_states() {
        return Err(Error::UnknownState(t.0));
    }
    let rows = d.raw_rows();
    let cs = solve_chain(&rows, t.0)?;
    let residual = bellman_residual(&rows, t.0, &cs.values);
    Ok(ReachValues { values: cs.values, residual })
}

/// Jacobi value iteration from below; stops when no value moves by more
/// than `tol` or after `max_sweeps`.
pub fn reach_probability_iterative(
    d: &Dtmc,
    t: StateId,
    tol: f64,
    max_sweeps: usize,
) -> Result<ReachValues> {
    if t.0 >= d.num_states() {
        return Err(Error::UnknownState(t.0));
    }
    let rows = d.raw_rows();
    let n = rows.len();
    let mut v = vec![0.0; n];
    v[t.0] = 1.0;
    let mut next = v.clone();
    for _ in 0..max_sweeps {
        let mut delta: f64 = 0.0;
        for s in 0..n {
            if s == t.0 {
                continue;
            }
            let x: f64 = rows[s].iter().map(|&(succ, p)| p * v[succ]).sum();
            delta = delta.max((x - v[s]).abs());
            next[s] = x;
        }
        core::mem::swap(&mut v, &mut next);
        if delta <= tol {
            break;
        }
    }
    let residual = bellman_residual(&rows, t.0, &v);
    Ok(ReachValues { values: v, residual })
}

/// Probability of reaching `t` from the initial state under a (not
/// necessarily normalized) table of choice weights aligned with
/// `m.choices(s)`.
pub fn reach_from_table(m: &Mdp, table: &[Vec<f64>], t: StateId) -> Result<f64> {
    let rows = combine_rows(m, table);
    Ok(solve_chain(&rows, t.0)?.values[m.initial().0])
}

/// Reachability value at the initial state together with its partial
/// derivatives with respect to every choice weight.
#[derive(Debug, Clone, PartialEq)]
pub struct Sensitivity {
    pub value: f64,
    pub values: Vec<f64>,
    /// Aligned with `m.choices(s)`.
    pub gradient: Vec<Vec<f64>>,
}

/// Adjoint sensitivities: with `A = I - T_RR` over the transient states,
/// `d p_s0 / d w_sa = lambda_s * sum_s' T(s,a,s') p_s'` where
/// `A^T lambda = e_s0`. One factorization serves both solves.
pub fn reach_gradient(m: &Mdp, table: &[Vec<f64>], t: StateId) -> Result<Sensitivity> {
    if !m.contains_state(t) {
        return Err(Error::UnknownState(t.0));
    }
    let rows = combine_rows(m, table);
    let cs = solve_chain(&rows, t.0)?;
    let mut gradient: Vec<Vec<f64>> = m.states().map(|s| vec![0.0; m.choices(s).len()]).collect();
    let s0 = m.initial().0;
    let value = cs.values[s0];
    if cs.pos[s0] != NONE {
        let mut e = vec![0.0; cs.transient.len()];
        e[cs.pos[s0]] = 1.0;
        let lambda = cs.lu.solve_transpose(&e).ok_or(Error::SingularSystem)?;
        for (i, &s) in cs.transient.iter().enumerate() {
            if lambda[i] == 0.0 {
                continue;
            }
            for (g, c) in gradient[s].iter_mut().zip(m.choices(StateId(s))) {
                let q: f64 = c.successors.iter().map(|(succ, p)| p * cs.values[succ.0]).sum();
                *g = lambda[i] * q;
            }
        }
    }
    Ok(Sensitivity { value, values: cs.values, gradient })
}

/// Minimum reachability probability together with a deterministic witness.
#[derive(Debug, Clone, PartialEq)]
pub struct MinReach {
    pub value: f64,
    pub strategy: Strategy,
    pub values: Vec<f64>,
    pub residual: f64,
}

/// `min over sigma of Pr(s0 -> t)` over all memoryless strategies, which is
/// attained by a deterministic one. Ties pick the lowest action id.
pub fn min_reach_probability(m: &Mdp, t: StateId) -> Result<MinReach> {
    min_reach_frozen(m, t, None)
}

/// As [`min_reach_probability`], but states flagged in `frozen` keep the
/// row of `sigma`.
pub fn min_reach_frozen(m: &Mdp, t: StateId, frozen: Option<(&Strategy, &[bool])>) -> Result<MinReach> {
    if !m.contains_state(t) {
        return Err(Error::UnknownState(t.0));
    }
    // Candidate rows per state: one per enabled action, or the frozen mix.
    let mut cands: Vec<Vec<Vec<(usize, f64)>>> = Vec::with_capacity(m.num_states());
    let mut labels: Vec<Vec<Option<ActionId>>> = Vec::with_capacity(m.num_states());
    for s in m.states() {
        match frozen {
            Some((sigma, mask)) if mask[s.0] => {
                let mut row: Vec<(usize, f64)> = Vec::new();
                for (a, w) in sigma.row(s).iter() {
                    let i = m.choice_index(s, a).ok_or(Error::UnknownAction(a.0))?;
                    for (succ, p) in m.choices(s)[i].successors.iter() {
                        row.push((succ.0, w * p));
                    }
                }
                row.sort_by_key(|e| e.0);
                let mut merged: Vec<(usize, f64)> = Vec::new();
                for (succ, p) in row {
                    match merged.last_mut() {
                        Some(last) if last.0 == succ => last.1 += p,
                        _ => merged.push((succ, p)),
                    }
                }
                cands.push(vec![merged]);
                labels.push(vec![None]);
            }
            _ => {
                cands.push(
                    m.choices(s)
                        .iter()
                        .map(|c| c.successors.iter().map(|(succ, p)| (succ.0, p)).collect())
                        .collect(),
                );
                labels.push(m.enabled(s).map(Some).collect());
            }
        }
    }
    let (picks, values, residual) = min_reach_rows(&cands, t.0)?;
    let rows = m
        .states()
        .map(|s| match labels[s.0][picks[s.0]] {
            Some(a) => vec![(a, 1.0)],
            None => frozen.unwrap().0.row(s).iter().collect(),
        })
        .collect();
    Ok(MinReach { value: values[m.initial().0], strategy: Strategy::from_rows(rows), values, residual })
}

const TIE_TOL: f64 = 1e-12;

fn q_value(row: &[(usize, f64)], v: &[f64]) -> f64 {
    row.iter().map(|&(s, p)| p * v[s]).sum()
}

/// Min-reachability over candidate rows: avoid-set elimination, value
/// iteration, then policy iteration to an exact fixed point.
pub(crate) fn min_reach_rows(
    cands: &[Vec<Vec<(usize, f64)>>],
    t: usize,
) -> Result<(Vec<usize>, Vec<f64>, f64)> {
    let n = cands.len();
    // States that can stay away from t forever.
    let mut avoid: Vec<bool> = (0..n).map(|s| s != t).collect();
    loop {
        let mut changed = false;
        for s in 0..n {
            if avoid[s] && !cands[s].iter().any(|r| r.iter().all(|&(x, p)| p == 0.0 || avoid[x])) {
                avoid[s] = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let mut picks = vec![0usize; n];
    for s in 0..n {
        if avoid[s] {
            picks[s] = cands[s]
                .iter()
                .position(|r| r.iter().all(|&(x, p)| p == 0.0 || avoid[x]))
                .unwrap_or(0);
        }
    }
    let mut v = vec![0.0; n];
    v[t] = 1.0;
    for _sweep in 0..100_000 {
        let mut delta: f64 = 0.0;
        for s in 0..n {
            if s == t || avoid[s] {
                continue;
            }
            let best = cands[s].iter().map(|r| q_value(r, &v)).fold(f64::INFINITY, f64::min);
            delta = delta.max((best - v[s]).abs());
            v[s] = best;
        }
        if delta <= 1e-13 {
            break;
        }
    }
    for s in 0..n {
        if s == t || avoid[s] {
            continue;
        }
        let qs: Vec<f64> = cands[s].iter().map(|r| q_value(r, &v)).collect();
        let best = qs.iter().copied().fold(f64::INFINITY, f64::min);
        picks[s] = qs.iter().position(|&q| q <= best + TIE_TOL).unwrap_or(0);
    }
    // Policy iteration from the extracted policy.
    let mut values = Vec::new();
    for _round in 0..1000 {
        let rows: Vec<Vec<(usize, f64)>> = (0..n).map(|s| cands[s][picks[s]].clone()).collect();
        values = solve_chain(&rows, t)?.values;
        let mut switched = false;
        for s in 0..n {
            if s == t || avoid[s] {
                continue;
            }
            let qs: Vec<f64> = cands[s].iter().map(|r| q_value(r, &values)).collect();
            let best = qs.iter().copied().fold(f64::INFINITY, f64::min);
            if best < qs[picks[s]] - TIE_TOL {
                picks[s] = qs.iter().position(|&q| q <= best + TIE_TOL).unwrap_or(0);
                switched = true;
            }
        }
        if !switched {
            break;
        }
    }
    let residual = (0..n)
        .filter(|&s| s != t)
        .map(|s| {
            let best = cands[s].iter().map(|r| q_value(r, &values)).fold(f64::INFINITY, f64::min);
            (values[s] - best).abs()
        })
        .fold(0.0, f64::max);
    Ok((picks, values, residual))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::loan_application;
    use crate::mdp::{induce_dtmc, MdpBuilder};

    #[test]
    fn reach_set_of_rejected_excludes_granted() {
        let ex = loan_application();
        let r = reach_set(&ex.mdp, ex.rejected).unwrap();
        let granted = ex.mdp.find_state("Granted").unwrap();
        assert_eq!(r.zero_set, [granted]);
        assert_eq!(r.reach_set.len(), 8);
        assert!(r.contains(ex.rejected));
    }

    #[test]
    fn reach_set_trivial_cases() {
        let mut b = MdpBuilder::new();
        let s0 = b.state("s0");
        let t = b.state("t");
        let a = b.action("a");
        b.transition(s0, a, &[(s0, 1.0)]).transition(t, a, &[(s0, 1.0)]);
        let m = b.build().unwrap();
        assert_eq!(reach_set(&m, t).unwrap().reach_set, [t]);
        let mut b = MdpBuilder::new();
        let x = b.state("x");
        let y = b.state("y");
        let a = b.action("a");
        b.transition(x, a, &[(x, 0.5), (y, 0.5)]).transition(y, a, &[(x, 0.5), (y, 0.5)]);
        let m = b.build().unwrap();
        assert_eq!(reach_set(&m, y).unwrap().reach_set, [x, y]);
        assert!(matches!(reach_set(&m, StateId(9)), Err(Error::UnknownState(9))));
    }

    #[test]
    fn running_example_reach_probabilities() {
        let ex = loan_application();
        let d = induce_dtmc(&ex.mdp, &ex.impatient).unwrap();
        let r = reach_probability(&d, ex.rejected).unwrap();
        assert!((r.at(ex.mdp.initial()) - 0.411).abs() < 1e-12);
        assert!(r.residual <= 1e-12);
        let vi = reach_probability_iterative(&d, ex.rejected, 1e-12, 1_000_000).unwrap();
        assert!((vi.at(ex.mdp.initial()) - 0.411).abs() < 1e-9);
        let d = induce_dtmc(&ex.mdp, &ex.counterfactual).unwrap();
        let r = reach_probability(&d, ex.rejected).unwrap();
        assert!((r.at(ex.mdp.initial()) - 0.1982).abs() < 1e-12);
        assert_eq!(r.at(ex.mdp.find_state("Granted").unwrap()), 0.0);
        assert_eq!(r.at(ex.rejected), 1.0);
    }

    #[test]
    fn certain_target_has_probability_one() {
        let mut b = MdpBuilder::new();
        let s0 = b.state("s0");
        let mid = b.state("mid");
        let t = b.state("t");
        let a = b.action("a");
        b.transition(s0, a, &[(mid, 0.3), (t, 0.7)])
            .transition(mid, a, &[(t, 1.0)])
            .transition(t, a, &[(t, 1.0)]);
        let m = b.build().unwrap();
        let d = induce_dtmc(&m, &Strategy::uniform(&m)).unwrap();
        assert!((reach_probability(&d, t).unwrap().at(s0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn min_reach_on_running_example() {
        let ex = loan_application();
        let mr = min_reach_probability(&ex.mdp, ex.rejected).unwrap();
        assert!((mr.value - 0.02).abs() < 1e-12);
        assert!(mr.residual <= 1e-10);
        let label = |s: &str, a: &str| {
            let s = ex.mdp.find_state(s).unwrap();
            let a = ex.mdp.find_action(a).unwrap();
            mr.strategy.prob(s, a)
        };
        assert_eq!(label("s0", "Consult"), 1.0);
        assert_eq!(label("Consultation", "Apply"), 1.0);
        assert_eq!(label("Rework", "Submit"), 1.0);
    }

    #[test]
    fn min_reach_trivial_cases() {
        let ex = loan_application();
        let mr = min_reach_probability(&ex.mdp, ex.mdp.initial()).unwrap();
        assert_eq!(mr.value, 1.0);
        let granted = ex.mdp.find_state("Granted").unwrap();
        // Granted is reachable, and Consult+Quit avoids it entirely.
        let mr = min_reach_probability(&ex.mdp, granted).unwrap();
        assert_eq!(mr.value, 0.0);
        let mut b = MdpBuilder::new();
        let s0 = b.state("s0");
        let t = b.state("t");
        let a = b.action("a");
        b.transition(s0, a, &[(s0, 1.0)]).transition(t, a, &[(t, 1.0)]);
        let m = b.build().unwrap();
        assert_eq!(min_reach_probability(&m, t).unwrap().value, 0.0);
    }

    #[test]
    fn min_reach_ties_pick_lowest_action() {
        let mut b = MdpBuilder::new();
        let s0 = b.state("s0");
        let t = b.state("t");
        let a = b.action("a");
        let c = b.action("c");
        b.transition(s0, c, &[(t, 0.5), (s0, 0.5)])
            .transition(s0, a, &[(t, 1.0)])
            .transition(t, a, &[(t, 1.0)]);
        let m = b.build().unwrap();
        let mr = min_reach_probability(&m, t).unwrap();
        assert_eq!(mr.value, 1.0);
        assert_eq!(mr.strategy.prob(s0, a), 1.0);
    }

    #[test]
    fn gradient_matches_hand_derivative_at_rework() {
        let ex = loan_application();
        let table = ex.impatient.to_table(&ex.mdp);
        let g = reach_gradient(&ex.mdp, &table, ex.rejected).unwrap();
        assert!((g.value - 0.411).abs() < 1e-12);
        let rework = ex.mdp.find_state("Rework").unwrap();
        // lambda_Rework = 0.95 * 0.5; q_Submit = 0.2, q_Quit = 1
        let quit = ex.mdp.choice_index(rework, ex.mdp.find_action("Quit").unwrap()).unwrap();
        let submit = ex.mdp.choice_index(rework, ex.mdp.find_action("Submit").unwrap()).unwrap();
        assert!((g.gradient[rework.0][quit] - 0.475).abs() < 1e-12);
        assert!((g.gradient[rework.0][submit] - 0.095).abs() < 1e-12);
    }
}
