//! Acceptance suite: one PASS/FAIL line per criterion. Exits non-zero when
//! any criterion fails.

use std::time::{Duration, Instant};

use recourse_core::diversity::{diverse_synthesize, DiversityConfig};
use recourse_core::encoding::{
    assignment_from_strategy, build_problem, nonconvexity_report, validate_solution, SynthesisQuery,
};
use recourse_core::explain::render;
use recourse_core::fixtures::{loan_application, LoanExample};
use recourse_core::reach::{
    min_reach_probability, reach_from_table, reach_gradient, reach_probability, reach_probability_iterative,
};
use recourse_core::rng::{below, dirichlet1, open01, random_mdp, random_strategy, stream, RandomMdpSpec};
use recourse_core::solver::{
    grid_oracle, grid_oracle_with, solve, GridConfig, GridMode, SolverConfig, Status, SynthesisResult, GRID_BUDGET,
};
use recourse_core::{
    decision_states, induce_dtmc, strategy_distance, ActionId, DistanceConfig, Mdp, MdpBuilder, StateId,
};

const GAMMAS: [f64; 11] = [0.0001, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond { Ok(()) } else { Err(msg()) }
}

fn query(ex: &LoanExample, gamma: f64, d: DistanceConfig) -> SynthesisQuery {
    SynthesisQuery::new(ex.mdp.clone(), ex.impatient.clone(), ex.rejected, gamma, d).unwrap()
}

fn solver(starts: usize) -> SolverConfig {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    SolverConfig { starts, threads, ..SolverConfig::default() }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn c1() -> Outcome {
    let ex = loan_application();
    let d = induce_dtmc(&ex.mdp, &ex.impatient).map_err(err)?;
    let start = Instant::now();
    let direct = reach_probability(&d, ex.rejected).map_err(err)?.at(ex.mdp.initial());
    let took = start.elapsed();
    let iter = reach_probability_iterative(&d, ex.rejected, 1e-12, 100_000).map_err(err)?.at(ex.mdp.initial());
    ensure((direct - 0.411).abs() <= 1e-9, || format!("linear solve gives {direct}"))?;
    ensure((iter - 0.411).abs() <= 1e-7, || format!("value iteration gives {iter}"))?;
    ensure(took < Duration::from_millis(1), || format!("linear solve took {took:?}"))?;
    Ok(format!("Pr = {direct:.12} (linear, {took:?}), {iter:.12} (iterative)"))
}

fn c2() -> Outcome {
    let ex = loan_application();
    let d = strategy_distance(&ex.mdp, &ex.impatient, &ex.counterfactual, &DistanceConfig::unit()).map_err(err)?;
    ensure(d.d0 == 1, || format!("d0 = {}", d.d0))?;
    ensure((d.d1 - 0.14).abs() <= 1e-9, || format!("d1 = {}", d.d1))?;
    ensure((d.dinf - 0.56).abs() <= 1e-9, || format!("dinf = {}", d.dinf))?;
    Ok(format!("d0 = {}, d1 = {}, dinf = {}", d.d0, d.d1, d.dinf))
}

fn c3() -> Outcome {
    let ex = loan_application();
    let q = query(&ex, 0.2, DistanceConfig::unit());
    let start = Instant::now();
    let r = solve(&q, &solver(16)).map_err(err)?;
    let took = start.elapsed();
    let d = r.distance.as_ref().ok_or("no strategy")?.combined;
    let p = r.reach_value.ok_or("no reach value")?;
    ensure(p <= 0.2 + 1e-7, || format!("reach {p}"))?;
    ensure(d <= 1.70 + 1e-3, || format!("distance {d}"))?;
    ensure(took < Duration::from_secs(30), || format!("solve took {took:?}"))?;
    let oracle = grid_oracle(&q, 0.01).map_err(err)?.distance().ok_or("grid oracle found nothing")?;
    ensure((1.60..=1.70 + 1e-9).contains(&oracle), || format!("grid optimum {oracle}"))?;
    Ok(format!("{} distance {d:.6}, reach {p:.6}, grid optimum {oracle:.4}, {took:?}", r.status.as_str()))
}

fn c4() -> Outcome {
    let ex = loan_application();
    let q = query(&ex, 0.2, DistanceConfig::new(0.0, 0.0, 1.0).map_err(err)?);
    let start = Instant::now();
    let within = |eps| GridConfig { step: 0.01, budget: GRID_BUDGET, mode: GridMode::Within(eps) };
    let below = grid_oracle_with(&q, &within(0.50)).map_err(err)?;
    let above = grid_oracle_with(&q, &within(0.56)).map_err(err)?;
    let took = start.elapsed();
    ensure(!below.is_feasible(), || "a strategy with dinf <= 0.50 exists".into())?;
    ensure(above.is_feasible(), || "no strategy with dinf <= 0.56".into())?;
    ensure(took < Duration::from_secs(60), || format!("took {took:?}"))?;
    let best = grid_oracle(&q, 0.01).map_err(err)?.distance().unwrap_or(f64::NAN);
    Ok(format!("none within 0.50, one within 0.56, grid optimum dinf {best:.2}, {took:?}"))
}

fn c5() -> Outcome {
    let ex = loan_application();
    let p = build_problem(&query(&ex, 0.2, DistanceConfig::unit())).map_err(err)?;
    let report = nonconvexity_report(&p);
    let e = report.iter().find(|e| e.state == ex.mdp.initial()).ok_or("no entry for s0")?;
    let r = 362f64.sqrt() / 20.0;
    let mut want = [-1.0, -r, 0.0, r, 1.0];
    want.sort_by(f64::total_cmp);
    let mut got = e.eigenvalues.clone();
    got.sort_by(f64::total_cmp);
    ensure(got.len() == 5, || format!("{} eigenvalues", got.len()))?;
    let gap = got.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    ensure(gap <= 1e-9, || format!("eigenvalues {got:?}"))?;
    ensure(e.nonconvex, || "not flagged".into())?;
    Ok(format!("eigenvalues {got:.9?}, max error {gap:.1e}, flagged"))
}

fn c6() -> Outcome {
    let ex = loan_application();
    let cfg = solver(4);
    let status = |g: f64| solve(&query(&ex, g, DistanceConfig::unit()), &cfg).map(|r| r.status).map_err(err);
    let edge = [(0.02 - 2e-9, true), (0.02 - 1e-9, false), (0.02, false), (0.019, true)];
    for (g, infeasible) in edge {
        let s = status(g)?;
        ensure((s == Status::Infeasible) == infeasible, || format!("gamma {g}: {s:?}"))?;
    }
    let mut infeasible = Vec::new();
    for g in GAMMAS {
        if status(g)? == Status::Infeasible {
            infeasible.push(g);
        }
    }
    ensure(infeasible == [0.0001], || format!("infeasible at {infeasible:?}"))?;
    Ok("infeasible below 0.02 - 1e-9 and feasible from there; on the grid only at 0.0001".into())
}

/// Small models with arbitrary cycles; the last state is the absorbing
/// target.
fn small_mdp(seed: u64) -> (Mdp, StateId) {
    let mut rng = stream(&[0xacc, seed]);
    let n = 2 + below(&mut rng, 3);
    let mut b = MdpBuilder::new();
    let states: Vec<StateId> = (0..n).map(|i| b.state(format!("s{i}"))).collect();
    let actions: Vec<ActionId> = (0..3).map(|i| b.action(format!("a{i}"))).collect();
    let t = states[n - 1];
    for &s in &states[..n - 1] {
        for &a in &actions[..1 + below(&mut rng, 3)] {
            let mut succ: Vec<usize> = (0..1 + below(&mut rng, n)).map(|_| below(&mut rng, n)).collect();
            if open01(&mut rng) < 0.3 {
                succ.push(n - 1);
            }
            succ.sort_unstable();
            succ.dedup();
            let w = dirichlet1(&mut rng, succ.len());
            let to: Vec<(StateId, f64)> = succ.iter().zip(w).map(|(&s, p)| (StateId(s), p)).collect();
            b.transition(s, a, &to);
        }
    }
    b.transition(t, actions[0], &[(t, 1.0)]);
    (b.build().unwrap(), t)
}

struct Solved {
    query: SynthesisQuery,
    result: SynthesisResult,
}

fn c7(solved: &mut Vec<Solved>) -> Outcome {
    let cfg = SolverConfig { starts: 2, ..SolverConfig::default() };
    let mut counts = [0usize; 2];
    for seed in 0..200u64 {
        let (m, t) = small_mdp(seed);
        ensure(decision_states(&m).len() <= 3, || format!("seed {seed}: too many decision states"))?;
        let sigma = random_strategy(&m, seed);
        let min = min_reach_probability(&m, t).map_err(err)?.value;
        let mut gamma = open01(&mut stream(&[seed, 7]));
        if (gamma - min).abs() < 1e-6 {
            gamma = (min + 0.01).min(1.0);
        }
        let q = SynthesisQuery::new(m, sigma, t, gamma, DistanceConfig::unit()).map_err(err)?;
        let r = solve(&q, &cfg).map_err(err)?;
        let by_solver = match r.status {
            Status::Infeasible => false,
            Status::Timeout => return Err(format!("seed {seed}: timeout")),
            _ => true,
        };
        let by_grid = grid_oracle(&q, 0.05).map_err(err)?.is_feasible();
        let exact = min <= gamma;
        ensure(by_solver == exact && by_grid == exact, || {
            format!("seed {seed}: solver {by_solver}, grid {by_grid}, min reach {min} vs gamma {gamma}")
        })?;
        counts[usize::from(exact)] += 1;
        solved.push(Solved { query: q, result: r });
    }
    Ok(format!("200 instances agree ({} feasible, {} infeasible)", counts[1], counts[0]))
}

fn c8(solved: &[Solved]) -> Outcome {
    let ex = loan_application();
    let mut extra = Vec::new();
    for g in [0.1, 0.2, 0.3] {
        for d in [DistanceConfig::unit(), DistanceConfig::new(2.0, 0.5, 1.0).unwrap()] {
            let q = query(&ex, g, d);
            let result = solve(&q, &solver(4)).map_err(err)?;
            extra.push(Solved { query: q, result });
        }
    }
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    for s in solved.iter().chain(&extra) {
        let Some(strategy) = &s.result.strategy else { continue };
        let p = build_problem(&s.query).map_err(err)?;
        let report = validate_solution(&p, &assignment_from_strategy(&p, strategy).map_err(err)?);
        ensure(report.is_feasible(), || format!("violations {:?}", report.violations))?;
        let obj = report.objective_tight.ok_or("no objective")?;
        let gap = (obj - s.result.distance.as_ref().ok_or("no distance")?.combined).abs();
        worst = worst.max(gap);
        ensure(gap <= 1e-6, || format!("objective {obj} differs by {gap}"))?;
        checked += 1;
    }
    Ok(format!("{checked} feasible outputs, largest gap {worst:.1e}"))
}

fn c9() -> Outcome {
    let h = 1e-6;
    let mut probes = 0;
    let mut worst: f64 = 0.0;
    for seed in 0..50u64 {
        let states = 5 + (seed as usize * 7) % 46;
        let r = random_mdp(&RandomMdpSpec { states, max_actions: 3, decision_ratio: 0.5, extra_successors: 2, seed });
        let m = &r.mdp;
        let table = random_strategy(m, seed).to_table(m);
        let g = reach_gradient(m, &table, r.target).map_err(err)?;
        for s in m.states() {
            for c in 1..table[s.0].len() {
                // move mass from choice c-1 to choice c
                let shift = |d: f64| {
                    let mut x = table.clone();
                    x[s.0][c] += d;
                    x[s.0][c - 1] -= d;
                    reach_from_table(m, &x, r.target)
                };
                let fd = (shift(h).map_err(err)? - shift(-h).map_err(err)?) / (2.0 * h);
                let an = g.gradient[s.0][c] - g.gradient[s.0][c - 1];
                let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-5);
                worst = worst.max(rel);
                ensure(rel <= 1e-4, || format!("seed {seed}, state {s}: adjoint {an}, difference {fd}"))?;
                probes += 1;
            }
        }
    }
    Ok(format!("{probes} directional derivatives, largest relative error {worst:.1e}"))
}

fn c10() -> Outcome {
    let ex = loan_application();
    let q = query(&ex, 0.2, DistanceConfig::unit());
    let dcfg = DiversityConfig { count: 3, lambda: 2.0, ..DiversityConfig::default() };
    let set = diverse_synthesize(&q, &dcfg, &solver(4)).map_err(err)?;
    ensure(set.members.len() == 3, || format!("{} members", set.members.len()))?;
    for (i, m) in set.members.iter().enumerate() {
        let p = m.reach_value.ok_or("member without strategy")?;
        ensure(p <= 0.2 + 1e-7, || format!("member {i} reaches {p}"))?;
    }
    ensure(set.novel_fractions[0] == 1.0, || format!("novel fraction {}", set.novel_fractions[0]))?;
    ensure(set.determinant_trace.iter().all(|d| d.is_finite()), || "non-finite determinant".into())?;
    for (i, row) in set.pairwise.iter().enumerate() {
        ensure(row[i] == 1.0 + dcfg.perturbation, || "diagonal".into())?;
        for (j, v) in row.iter().enumerate() {
            ensure(*v == set.pairwise[j][i], || "asymmetric".into())?;
            ensure(i == j || (*v > 0.0 && *v <= 1.0), || format!("entry {v}"))?;
        }
    }
    let same = diverse_synthesize(&q, &DiversityConfig { lambda: 0.0, ..dcfg }, &solver(4)).map_err(err)?;
    let spread = same.l1.iter().flatten().copied().fold(0.0, f64::max);
    ensure(spread <= 1e-5, || format!("lambda 0 members differ by {spread}"))?;
    Ok(format!(
        "det trace {:?}, novel {:?}, lambda 0 spread {spread:.1e}",
        set.determinant_trace, set.novel_fractions
    ))
}

fn c11() -> Outcome {
    let ex = loan_application();
    let want = "State `Rejected' is reached with probability 0.41.\n\
                You can reach `Rejected' with probability 0.20 as follows:\n \
                In state `Rework'\n  \
                increase probability of action `Submit' to 0.86\n  \
                decrease probability of action `Quit' to 0.14\n";
    let q = query(&ex, 0.2, DistanceConfig::unit());
    let d = strategy_distance(&ex.mdp, &ex.impatient, &ex.counterfactual, &q.distances).map_err(err)?;
    let after = reach_probability(&induce_dtmc(&ex.mdp, &ex.counterfactual).map_err(err)?, ex.rejected)
        .map_err(err)?
        .at(ex.mdp.initial());
    let given = SynthesisResult {
        status: Status::SubOptimal,
        strategy: Some(ex.counterfactual.clone()),
        distance: Some(d),
        reach_value: Some(after),
        reach_before: q.reach_before(),
        min_reach: 0.02,
        wall_time: 0.0,
        starts_used: 0,
        certificate: None,
    };
    let text = render(&ex.mdp, &ex.impatient, &given, ex.rejected).map_err(err)?;
    ensure(text == want, || format!("rendered {text:?}"))?;
    let solved = solve(&q, &solver(4)).map_err(err)?;
    let text = render(&ex.mdp, &ex.impatient, &solved, ex.rejected).map_err(err)?;
    ensure(text == want, || format!("solver result renders {text:?}"))?;
    Ok("documented and synthesized counterfactuals render the template".into())
}

fn c12() -> Outcome {
    let r = random_mdp(&RandomMdpSpec { states: 130, max_actions: 2, decision_ratio: 0.45, extra_successors: 1, seed: 22 });
    let sigma = random_strategy(&r.mdp, 0);
    let cfg = solver(4);
    let mut times = Vec::new();
    let mut statuses = Vec::new();
    for g in GAMMAS {
        let q = SynthesisQuery::new(r.mdp.clone(), sigma.clone(), r.target, g, DistanceConfig::unit()).map_err(err)?;
        let res = solve(&q, &cfg).map_err(err)?;
        ensure(res.status != Status::Timeout, || format!("gamma {g}: timeout"))?;
        ensure(res.wall_time <= cfg.time_limit, || format!("gamma {g}: {}s", res.wall_time))?;
        if let Some(p) = res.reach_value {
            ensure(p <= g + 1e-7, || format!("gamma {g}: reach {p}"))?;
        }
        times.push(res.wall_time);
        statuses.push(res.status.as_str());
    }
    let max = times.iter().copied().fold(0.0, f64::max);
    Ok(format!(
        "{} states, {} transitions; statuses {statuses:?}; max {max:.1}s",
        r.mdp.num_states(),
        r.mdp.num_transitions()
    ))
}

fn main() {
    let mut solved = Vec::new();
    let mut failed = 0;
    let mut report = |n: usize, name: &str, out: Outcome| {
        match out {
            Ok(detail) => println!("criterion {n:>2} PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("criterion {n:>2} FAIL  {name}: {why}");
            }
        }
    };
    report(1, "running-example reachability", c1());
    report(2, "distance goldens", c2());
    report(3, "synthesis golden", c3());
    report(4, "dinf budget bound", c4());
    report(5, "nonconvexity witness", c5());
    report(6, "feasibility classifier", c6());
    let out = c7(&mut solved);
    report(7, "feasibility verdicts on small models", out);
    report(8, "objective consistency", c8(&solved));
    report(9, "gradient check", c9());
    report(10, "diversity properties", c10());
    report(11, "explanation golden", c11());
    report(12, "scale smoke test", c12());
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
