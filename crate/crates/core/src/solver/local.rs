//! Continuous local search over the per-state simplices of the free decision
//! states, followed by feasibility repair, sparsification and tightening.

use alloc::vec;
use alloc::vec::Vec;

use super::{Clock, SolverConfig};
use crate::error::Result;
use crate::linalg::det;
use crate::mdp::{decision_states, DistanceConfig, Mdp, StateId, Strategy, CHANGE_TOL};
use crate::reach::{min_reach_frozen, reach_from_table, reach_gradient, MinReach};
use crate::rng::{dirichlet1, stream};

pub(crate) type Table = Vec<Vec<f64>>;

/// Slack on `p_s0 <= gamma` accepted as feasible.
pub(crate) const FEAS_TOL: f64 = 1e-9;
/// Covers rounding in `gamma + FEAS_TOL` so a limit sitting exactly on the
/// tolerance edge is not rejected by the last bit.
const ROUNDING: f64 = 1e-15;

/// Largest `p_s0` accepted for threshold `gamma`.
pub(crate) fn feasibility_limit(gamma: f64) -> f64 {
    gamma + FEAS_TOL + ROUNDING
}
const BISECT_STEPS: usize = 52;
const ARMIJO: f64 = 1e-4;

/// Diversity extension: previously generated members are held fixed.
#[derive(Debug, Clone)]
pub(crate) struct DiversityObjective {
    pub lambda: f64,
    pub perturbation: f64,
    pub members: Vec<Table>,
}

/// Everything a start needs: the model, the initial table, the free states
/// and the objective.
pub(crate) struct Landscape<'a> {
    pub m: &'a Mdp,
    pub t: StateId,
    pub gamma: f64,
    pub dist: DistanceConfig,
    pub sigma: Table,
    /// Free decision states, ascending.
    pub free: Vec<usize>,
    pub n_dec: usize,
    pub diversity: Option<DiversityObjective>,
    /// Minimum reachability with non-free states held at `sigma`.
    pub min_reach: MinReach,
    pub witness: Table,
    /// Largest accepted `p_s0`: the limit itself unless only the slack
    /// makes the problem feasible.
    accept_level: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct Candidate {
    pub table: Table,
    pub objective: f64,
}

struct Smoothing {
    mu: f64,
    eta: f64,
    rho: f64,
    use_d0: bool,
}

fn smooth_abs(u: f64, eta: f64) -> (f64, f64) {
    let r = libm::sqrt(u * u + eta * eta);
    (r - eta, u / r)
}

/// Drops weights too small to matter but large enough to make the
/// reachability system nearly singular, then renormalizes.
fn clean_row(row: &mut [f64]) {
    let mut sum = 0.0;
    for v in row.iter_mut() {
        if *v < 1e-13 {
            *v = 0.0;
        }
        sum += *v;
    }
    if sum != 1.0 {
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// The table as the strategy it will become: cleaned, normalized rows.
fn normalized(x: &Table) -> Table {
    let mut y = x.clone();
    for row in y.iter_mut() {
        clean_row(row);
    }
    y
}

/// Euclidean projection onto the probability simplex.
pub(crate) fn project_simplex(v: &mut [f64]) {
    let mut u: Vec<f64> = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, &x) in u.iter().enumerate() {
        cum += x;
        let th = (cum - 1.0) / (i + 1) as f64;
        if x - th > 0.0 {
            theta = th;
        }
    }
    for x in v.iter_mut() {
        *x = (*x - theta).max(0.0);
    }
}

/// `det` of the diversity matrix and its cofactors along the candidate row.
fn diversity_matrix(perturbation: f64, members: &[Table], cand: &[f64], pair: impl Fn(usize, usize) -> f64) -> Vec<f64> {
    let k = members.len() + 1;
    let mut d = vec![0.0; k * k];
    for i in 0..k {
        d[i * k + i] = 1.0 + perturbation;
    }
    for i in 0..members.len() {
        for j in (i + 1)..members.len() {
            let v = 1.0 / (1.0 + pair(i, j));
            d[i * k + j] = v;
            d[j * k + i] = v;
        }
        let v = 1.0 / (1.0 + cand[i]);
        d[i * k + k - 1] = v;
        d[(k - 1) * k + i] = v;
    }
    d
}

fn minor(k: usize, d: &[f64], row: usize, col: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity((k - 1) * (k - 1));
    for i in (0..k).filter(|&i| i != row) {
        for j in (0..k).filter(|&j| j != col) {
            out.push(d[i * k + j]);
        }
    }
    out
}

impl<'a> Landscape<'a> {
    pub fn new(
        m: &'a Mdp,
        sigma: &Strategy,
        t: StateId,
        gamma: f64,
        dist: DistanceConfig,
        diversity: Option<DiversityObjective>,
    ) -> Result<Self> {
        let decision = decision_states(m);
        let free: Vec<usize> = decision.iter().filter(|&&s| m.is_free(s)).map(|s| s.0).collect();
        let frozen: Vec<bool> = m.states().map(|s| !m.is_free(s)).collect();
        let min_reach = min_reach_frozen(m, t, Some((sigma, &frozen)))?;
        let witness = min_reach.strategy.to_table(m);
        let accept_level = if min_reach.value <= gamma { gamma } else { feasibility_limit(gamma) };
        Ok(Landscape {
            m,
            t,
            gamma,
            dist,
            sigma: sigma.to_table(m),
            free,
            n_dec: decision.len(),
            diversity,
            min_reach,
            witness,
            accept_level,
        })
    }

    /// `p_s0` at `x`; points whose system cannot be solved count as
    /// infeasible.
    pub fn reach(&self, x: &Table) -> f64 {
        // Rows that leak mass can hide an exit from a cycle; evaluate the
        // strategy exactly as it will be returned.
        reach_from_table(self.m, &normalized(x), self.t).unwrap_or(f64::INFINITY)
    }

    pub fn feasible(&self, p: f64) -> bool {
        p <= self.accept_level
    }

    fn delta(&self, x: &Table, s: usize) -> f64 {
        0.5 * x[s].iter().zip(&self.sigma[s]).map(|(a, b)| (a - b).abs()).sum::<f64>()
    }

    pub fn deltas(&self, x: &Table) -> Vec<f64> {
        self.free.iter().map(|&s| self.delta(x, s)).collect()
    }

    pub fn base_objective(&self, x: &Table) -> f64 {
        let d = self.deltas(x);
        let d0 = d.iter().filter(|&&v| v > CHANGE_TOL).count() as f64;
        let d1 = if self.n_dec == 0 { 0.0 } else { d.iter().sum::<f64>() / self.n_dec as f64 };
        let dinf = d.iter().copied().fold(0.0, f64::max);
        self.dist.combine(d0, d1, dinf)
    }

    fn l1(&self, x: &Table, y: &Table) -> f64 {
        self.free
            .iter()
            .map(|&s| 0.5 * x[s].iter().zip(&y[s]).map(|(a, b)| (a - b).abs()).sum::<f64>())
            .sum()
    }

    pub fn objective(&self, x: &Table) -> f64 {
        let base = self.base_objective(x);
        match &self.diversity {
            None => base,
            Some(div) => {
                let cand: Vec<f64> = div.members.iter().map(|mt| self.l1(x, mt)).collect();
                let k = div.members.len() + 1;
                let d = diversity_matrix(div.perturbation, &div.members, &cand, |i, j| {
                    self.l1(&div.members[i], &div.members[j])
                });
                base - div.lambda * det(k, &d)
            }
        }
    }

    /// Smoothed objective plus penalty, and its gradient over the rows of the
    /// free states (indexed like `self.free`).
    fn smoothed(&self, x: &Table, sm: &Smoothing, want_grad: bool) -> Result<(f64, Vec<Vec<f64>>)> {
        let nf = self.free.len();
        let mut f = 0.0;
        let mut grad: Vec<Vec<f64>> =
            if want_grad { self.free.iter().map(|&s| vec![0.0; x[s].len()]).collect() } else { Vec::new() };
        // per-state smoothed TV and its partials
        let mut dl = vec![0.0; nf];
        let mut parts: Vec<Vec<f64>> = Vec::with_capacity(nf);
        for (i, &s) in self.free.iter().enumerate() {
            let mut row = Vec::with_capacity(x[s].len());
            for (a, &v) in x[s].iter().enumerate() {
                let (val, d) = smooth_abs(v - self.sigma[s][a], sm.eta);
                dl[i] += 0.5 * val;
                row.push(0.5 * d);
            }
            parts.push(row);
        }
        let r1n = if self.n_dec == 0 { 0.0 } else { self.dist.r1 / self.n_dec as f64 };
        let mut coef = vec![0.0; nf];
        if nf > 0 {
            let tau = sm.mu;
            let mx = dl.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = dl.iter().map(|&d| libm::exp((d - mx) / tau)).collect();
            let sw: f64 = w.iter().sum();
            f += self.dist.rinf * (mx + tau * libm::log(sw));
            for i in 0..nf {
                let d = dl[i];
                f += r1n * d;
                coef[i] = r1n + self.dist.rinf * w[i] / sw;
                if sm.use_d0 {
                    f += self.dist.r0 * d / (d + sm.mu);
                    coef[i] += self.dist.r0 * sm.mu / ((d + sm.mu) * (d + sm.mu));
                }
            }
        }
        if want_grad {
            for i in 0..nf {
                for (g, p) in grad[i].iter_mut().zip(&parts[i]) {
                    *g = coef[i] * p;
                }
            }
        }
        if let Some(div) = &self.diversity {
            let k = div.members.len() + 1;
            let mut cand = vec![0.0; div.members.len()];
            let mut cparts: Vec<Vec<Vec<f64>>> = Vec::new();
            for (j, mt) in div.members.iter().enumerate() {
                let mut pj = Vec::with_capacity(nf);
                for &s in &self.free {
                    let mut row = Vec::with_capacity(x[s].len());
                    for (a, &v) in x[s].iter().enumerate() {
                        let (val, d) = smooth_abs(v - mt[s][a], sm.eta);
                        cand[j] += 0.5 * val;
                        row.push(0.5 * d);
                    }
                    pj.push(row);
                }
                cparts.push(pj);
            }
            let d = diversity_matrix(div.perturbation, &div.members, &cand, |i, j| {
                self.l1(&div.members[i], &div.members[j])
            });
            f -= div.lambda * det(k, &d);
            if want_grad {
                let last = k - 1;
                for j in 0..div.members.len() {
                    let sign = if (last + j) % 2 == 0 { 1.0 } else { -1.0 };
                    let cof = sign * det(k - 1, &minor(k, &d, last, j));
                    // both symmetric entries move with the candidate
                    let dd = -1.0 / ((1.0 + cand[j]) * (1.0 + cand[j]));
                    let c = -div.lambda * 2.0 * cof * dd;
                    for i in 0..nf {
                        for (g, p) in grad[i].iter_mut().zip(&cparts[j][i]) {
                            *g += c * p;
                        }
                    }
                }
            }
        }
        // squared hinge on the reachability limit
        if want_grad {
            let Ok(sens) = reach_gradient(self.m, x, self.t) else {
                return Ok((f64::INFINITY, grad));
            };
            let v = sens.value - self.gamma;
            if v > 0.0 {
                f += sm.rho * v * v;
                for (i, &s) in self.free.iter().enumerate() {
                    for (g, ds) in grad[i].iter_mut().zip(&sens.gradient[s]) {
                        *g += 2.0 * sm.rho * v * ds;
                    }
                }
            }
        } else {
            let v = self.reach(x) - self.gamma;
            if v > 0.0 {
                f += sm.rho * v * v;
            }
        }
        Ok((f, grad))
    }

    /// Projected gradient with Armijo backtracking and continuation in the
    /// smoothing and penalty parameters. Only `active` free states move.
    fn optimize(
        &self,
        mut x: Table,
        active: &[bool],
        use_d0: bool,
        cfg: &SolverConfig,
        clock: &dyn Clock,
    ) -> Result<Table> {
        let stages = cfg.max_outer.max(1);
        let mut rho = cfg.penalty_init;
        for k in 0..stages {
            let frac = if stages == 1 { 1.0 } else { k as f64 / (stages - 1) as f64 };
            let mu = 0.1 * libm::pow(1e-3, frac);
            let sm = Smoothing { mu, eta: mu * 0.1, rho, use_d0 };
            let (mut fx, mut g) = self.smoothed(&x, &sm, true)?;
            let mut alpha = 1.0;
            for _ in 0..cfg.max_inner {
                if clock.elapsed() > cfg.time_limit {
                    return Ok(x);
                }
                let mut accepted = None;
                for _ in 0..40 {
                    let mut y = x.clone();
                    let mut dec = 0.0;
                    let mut moved: f64 = 0.0;
                    for (i, &s) in self.free.iter().enumerate() {
                        if !active[i] {
                            continue;
                        }
                        for (v, gi) in y[s].iter_mut().zip(&g[i]) {
                            *v -= alpha * gi;
                        }
                        project_simplex(&mut y[s]);
                        for (a, v) in y[s].iter().enumerate() {
                            let d = v - x[s][a];
                            dec += g[i][a] * d;
                            moved = moved.max(d.abs());
                        }
                    }
                    if moved < cfg.step_tol {
                        break;
                    }
                    let (fy, _) = self.smoothed(&y, &sm, false)?;
                    if fy <= fx + ARMIJO * dec {
                        accepted = Some((y, moved));
                        break;
                    }
                    alpha *= 0.5;
                }
                let Some((y, moved)) = accepted else { break };
                x = y;
                let (f2, g2) = self.smoothed(&x, &sm, true)?;
                fx = f2;
                g = g2;
                alpha = (alpha * 2.0).min(1e6);
                if moved < cfg.step_tol {
                    break;
                }
            }
            let p = self.reach(&x);
            if p > self.gamma + cfg.constraint_tol {
                rho *= cfg.penalty_growth;
            }
        }
        Ok(x)
    }

    /// `sigma + theta * (x - sigma)` on the rows in `rows` (all free rows if
    /// `None`).
    fn scale(&self, x: &Table, theta: f64, rows: Option<usize>) -> Table {
        let mut y = x.clone();
        for &s in &self.free {
            if rows.is_some_and(|r| r != s) {
                continue;
            }
            for (a, v) in y[s].iter_mut().enumerate() {
                *v = (self.sigma[s][a] + theta * (x[s][a] - self.sigma[s][a])).max(0.0);
            }
            clean_row(&mut y[s]);
        }
        y
    }

    fn blend(x: &Table, target: &Table, theta: f64, rows: &[usize]) -> Table {
        let mut y = x.clone();
        for &s in rows {
            for (a, v) in y[s].iter_mut().enumerate() {
                *v = (1.0 - theta) * x[s][a] + theta * target[s][a];
            }
            clean_row(&mut y[s]);
        }
        y
    }

    /// Smallest `theta` in `[lo, hi]` with `path(theta)` feasible, given that
    /// `path(hi)` is. Returns the point at the final feasible `theta`.
    fn bisect(&self, lo: f64, hi: f64, path: impl Fn(f64) -> Table) -> Result<Table> {
        let (mut lo, mut hi) = (lo, hi);
        let mut best = path(hi);
        for _ in 0..BISECT_STEPS {
            let mid = 0.5 * (lo + hi);
            let y = path(mid);
            if self.feasible(self.reach(&y)) {
                hi = mid;
                best = y;
            } else {
                lo = mid;
            }
        }
        Ok(best)
    }

    /// Largest extrapolation factor along `x - sigma` keeping every row
    /// nonnegative.
    fn max_extrapolation(&self, x: &Table) -> f64 {
        let mut t = f64::INFINITY;
        for &s in &self.free {
            for (a, &v) in x[s].iter().enumerate() {
                let d = v - self.sigma[s][a];
                if d < 0.0 {
                    t = t.min(self.sigma[s][a] / -d);
                }
            }
        }
        if t.is_finite() { t } else { 1.0 }
    }

    fn changed(&self, x: &Table) -> Vec<usize> {
        self.free.iter().copied().filter(|&s| self.delta(x, s) > CHANGE_TOL).collect()
    }

    /// Moves an infeasible point onto the feasible side: first by extending
    /// its own change, then towards the minimizing witness on the changed
    /// rows, finally on all free rows.
    fn repair(&self, x: Table) -> Result<Option<Table>> {
        if self.feasible(self.reach(&x)) {
            return Ok(Some(x));
        }
        let tmax = self.max_extrapolation(&x);
        if tmax > 1.0 {
            let far = self.scale(&x, tmax, None);
            if self.feasible(self.reach(&far)) {
                return Ok(Some(self.bisect(1.0, tmax, |th| self.scale(&x, th, None))?));
            }
        }
        let changed = self.changed(&x);
        for rows in [changed, self.free.clone()] {
            if rows.is_empty() {
                continue;
            }
            let end = Self::blend(&x, &self.witness, 1.0, &rows);
            if self.feasible(self.reach(&end)) {
                return Ok(Some(self.bisect(0.0, 1.0, |th| Self::blend(&x, &self.witness, th, &rows))?));
            }
        }
        Ok(None)
    }

    fn accept(&self, cur: &mut Table, cand: Table) -> Result<bool> {
        if self.feasible(self.reach(&cand)) && self.objective(&cand) <= self.objective(cur) {
            *cur = cand;
            return Ok(true);
        }
        Ok(false)
    }

    /// Resets changed states to `sigma`, smallest change first, while
    /// feasibility holds.
    fn sparsify(&self, mut x: Table) -> Result<Table> {
        let mut order: Vec<(f64, usize)> = self.changed(&x).into_iter().map(|s| (self.delta(&x, s), s)).collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for (_, s) in order {
            let mut y = x.clone();
            y[s] = self.sigma[s].clone();
            self.accept(&mut x, y)?;
        }
        Ok(x)
    }

    /// Resets rows whose change is below the change tolerance.
    fn snap(&self, mut x: Table) -> Result<Table> {
        for &s in &self.free {
            let d = self.delta(&x, s);
            if d > 0.0 && d <= CHANGE_TOL {
                let mut y = x.clone();
                y[s] = self.sigma[s].clone();
                self.accept(&mut x, y)?;
            }
        }
        Ok(x)
    }

    /// Shrinks the change towards `sigma` jointly, then state by state.
    fn tighten(&self, mut x: Table) -> Result<Table> {
        let y = self.bisect(0.0, 1.0, |th| self.scale(&x, th, None))?;
        self.accept(&mut x, y)?;
        for s in self.changed(&x) {
            let y = self.bisect(0.0, 1.0, |th| self.scale(&x, th, Some(s)))?;
            self.accept(&mut x, y)?;
        }
        Ok(x)
    }

    fn finish(&self, x: Table, cfg: &SolverConfig, clock: &dyn Clock) -> Result<Option<Candidate>> {
        let Some(mut x) = self.repair(x)? else { return Ok(None) };
        x = self.snap(x)?;
        if cfg.sparsify {
            x = self.sparsify(x)?;
        }
        x = self.tighten(x)?;
        // Re-optimize the surviving support with the count fixed.
        let support = self.changed(&x);
        if !support.is_empty() && clock.elapsed() <= cfg.time_limit {
            let active: Vec<bool> = self.free.iter().map(|s| support.contains(s)).collect();
            let y = self.optimize(x.clone(), &active, false, cfg, clock)?;
            if let Some(y) = self.repair(y)? {
                let y = self.tighten(y)?;
                self.accept(&mut x, y)?;
            }
        }
        let x = normalized(&self.snap(x)?);
        Ok(Some(Candidate { objective: self.objective(&x), table: x }))
    }

    /// Start `k`: `sigma` for `k == 0`, otherwise a Dirichlet(1) draw per free
    /// state.
    pub fn start_point(&self, seed: u64, k: usize) -> Table {
        let mut x = self.sigma.clone();
        if k > 0 {
            for &s in &self.free {
                let mut rng = stream(&[seed, k as u64, s as u64]);
                x[s] = dirichlet1(&mut rng, x[s].len());
            }
        }
        x
    }

    pub fn run_start(&self, k: usize, cfg: &SolverConfig, clock: &dyn Clock) -> Result<Option<Candidate>> {
        let active = vec![true; self.free.len()];
        let x = self.optimize(self.start_point(cfg.seed, k), &active, true, cfg, clock)?;
        self.finish(x, cfg, clock)
    }

    /// Best single-state change: each free state alone moves from `sigma`
    /// towards its most helpful action.
    pub fn single_state_candidate(&self, cfg: &SolverConfig, clock: &dyn Clock) -> Result<Option<Candidate>> {
        let mut best: Option<Table> = None;
        for &s in &self.free {
            if clock.elapsed() > cfg.time_limit {
                break;
            }
            let mut pick: Option<(f64, Table)> = None;
            for a in 0..self.sigma[s].len() {
                let mut y = self.sigma.clone();
                y[s] = vec![0.0; y[s].len()];
                y[s][a] = 1.0;
                let p = self.reach(&y);
                if pick.as_ref().map_or(true, |(q, _)| p < *q) {
                    pick = Some((p, y));
                }
            }
            let Some((p, end)) = pick else { continue };
            if !self.feasible(p) {
                continue;
            }
            let y = self.bisect(0.0, 1.0, |th| Self::blend(&self.sigma, &end, th, &[s]))?;
            if best.as_ref().map_or(true, |b| self.objective(&y) < self.objective(b)) {
                best = Some(y);
            }
        }
        match best {
            Some(x) => self.finish(x, cfg, clock),
            None => Ok(None),
        }
    }

    /// The point where the segment from `sigma` to the witness first becomes
    /// feasible; exists whenever the minimum reachability meets the limit.
    pub fn witness_candidate(&self, cfg: &SolverConfig, clock: &dyn Clock) -> Result<Option<Candidate>> {
        if !self.feasible(self.reach(&self.witness)) {
            return Ok(None);
        }
        let y = self.bisect(0.0, 1.0, |th| Self::blend(&self.sigma, &self.witness, th, &self.free))?;
        self.finish(y, cfg, clock)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simplex_projection() {
        let mut v = [0.5, 0.5];
        project_simplex(&mut v);
        assert_eq!(v, [0.5, 0.5]);
        let mut v = [2.0, 0.0, -1.0];
        project_simplex(&mut v);
        assert_eq!(v, [1.0, 0.0, 0.0]);
        let mut v = [0.6, 0.6, 0.1];
        project_simplex(&mut v);
        assert!((v[0] - 0.5).abs() < 1e-12 && (v[1] - 0.5).abs() < 1e-12 && v[2].abs() < 1e-12);
    }
}
