mod common;

use proptest::prelude::*;
use recourse_core::encoding::{assignment_from_strategy, build_problem, validate_solution, SynthesisQuery};
use recourse_core::fixtures::loan_application;
use recourse_core::reach::{reach_from_table, reach_gradient, reach_probability, reach_probability_iterative};
use recourse_core::rng::{random_mdp, random_strategy, RandomMdpSpec};
use recourse_core::solver::{solve_with_clock, NoClock, SolverConfig};
use recourse_core::{induce_dtmc, strategy_distance, tv_distance, ActionId, DistanceConfig, Distribution};

fn dist(ws: &[f64]) -> Distribution<ActionId> {
    let total: f64 = ws.iter().sum();
    Distribution::unchecked(ws.iter().enumerate().map(|(i, w)| (ActionId(i), w / total)))
}

proptest! {
    #[test]
    fn tv_is_a_metric(a in prop::collection::vec(0.01f64..1.0, 4),
                      b in prop::collection::vec(0.01f64..1.0, 4),
                      c in prop::collection::vec(0.01f64..1.0, 4)) {
        let (a, b, c) = (dist(&a), dist(&b), dist(&c));
        let ab = tv_distance(&a, &b);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&ab));
        prop_assert_eq!(tv_distance(&a, &a), 0.0);
        prop_assert!((ab - tv_distance(&b, &a)).abs() < 1e-15);
        prop_assert!(tv_distance(&a, &c) <= ab + tv_distance(&b, &c) + 1e-12);
    }

    #[test]
    fn induced_rows_sum_to_one(seed in 0u64..500, sseed in 0u64..50) {
        let r = random_mdp(&RandomMdpSpec { states: 20, max_actions: 3, decision_ratio: 0.5, extra_successors: 2, seed });
        let d = induce_dtmc(&r.mdp, &random_strategy(&r.mdp, sseed)).unwrap();
        for s in r.mdp.states() {
            let sum: f64 = d.row(s).iter().map(|e| e.1).sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn direct_and_iterative_reach_agree(seed in 0u64..500) {
        let r = random_mdp(&RandomMdpSpec { states: 15, max_actions: 2, decision_ratio: 0.5, extra_successors: 1, seed });
        let d = induce_dtmc(&r.mdp, &random_strategy(&r.mdp, seed)).unwrap();
        let direct = reach_probability(&d, r.target).unwrap();
        let iter = reach_probability_iterative(&d, r.target, 1e-13, 1_000_000).unwrap();
        for s in r.mdp.states() {
            prop_assert!((0.0..=1.0).contains(&direct.at(s)));
            prop_assert!((direct.at(s) - iter.at(s)).abs() < 1e-7);
        }
    }

    /// Moving probability from an action to one that reaches the target with
    /// certainty never lowers the reachability probability.
    #[test]
    fn reach_is_monotone_in_a_certain_action(shift in 0.0f64..0.7) {
        let ex = loan_application();
        let m = &ex.mdp;
        let base = ex.impatient.to_table(m);
        let mut moved = base.clone();
        // at Rework (5), Quit (choice 0) reaches Rejected with certainty
        moved[5][1] -= shift * moved[5][1];
        moved[5][0] = 1.0 - moved[5][1];
        let before = reach_from_table(m, &base, ex.rejected).unwrap();
        let after = reach_from_table(m, &moved, ex.rejected).unwrap();
        prop_assert!(after >= before - 1e-12);
    }
}

/// Directional derivatives along mass transfers between two actions of a
/// state, so every probed point is still a strategy.
#[test]
fn gradient_matches_central_differences() {
    let h = 1e-6;
    let mut probes = 0;
    for seed in 0..50u64 {
        let states = 5 + (seed as usize * 7) % 46;
        let r = random_mdp(&RandomMdpSpec { states, max_actions: 3, decision_ratio: 0.5, extra_successors: 2, seed });
        let m = &r.mdp;
        let table = random_strategy(m, seed).to_table(m);
        let g = reach_gradient(m, &table, r.target).unwrap();
        for s in m.states() {
            for c in 1..table[s.0].len() {
                let shift = |d: f64| {
                    let mut x = table.clone();
                    x[s.0][c] += d;
                    x[s.0][c - 1] -= d;
                    reach_from_table(m, &x, r.target).unwrap()
                };
                let fd = (shift(h) - shift(-h)) / (2.0 * h);
                let an = g.gradient[s.0][c] - g.gradient[s.0][c - 1];
                // below 1e-5 the bound is absolute (1e-9), above round-off of order 1e-10
                let scale = an.abs().max(fd.abs()).max(1e-5);
                assert!((an - fd).abs() / scale <= 1e-4, "seed {seed} state {s} choice {c}: {an} vs {fd}");
                probes += 1;
            }
        }
    }
    assert!(probes > 200, "{probes}");
}

#[test]
fn solver_objective_matches_encoding() {
    let cfg = SolverConfig { starts: 3, ..SolverConfig::default() };
    let mut checked = 0;
    for seed in 0..80u64 {
        let (m, t) = common::small_mdp(seed, 5, 3);
        let sigma = random_strategy(&m, seed);
        let gamma = 0.5 * reach_probability(&induce_dtmc(&m, &sigma).unwrap(), t).unwrap().at(m.initial());
        let q = SynthesisQuery::new(m, sigma, t, gamma, DistanceConfig::new(1.0, 2.0, 0.5).unwrap()).unwrap();
        let r = solve_with_clock(&q, &cfg, &NoClock).unwrap();
        let Some(strategy) = &r.strategy else { continue };
        let p = build_problem(&q).unwrap();
        let report = validate_solution(&p, &assignment_from_strategy(&p, strategy).unwrap());
        assert!(report.is_valid(), "seed {seed}: {:?}", report.violations);
        let reported = r.distance.as_ref().unwrap().combined;
        assert!((report.objective_tight.unwrap() - reported).abs() <= 1e-6, "seed {seed}");
        let again = strategy_distance(&q.mdp, &q.initial, strategy, &q.distances).unwrap();
        assert_eq!(again.combined, reported);
        checked += 1;
    }
    assert!(checked >= 20, "only {checked} feasible instances");
}

#[test]
fn solve_is_deterministic() {
    let ex = loan_application();
    let q = SynthesisQuery::new(ex.mdp, ex.impatient, ex.rejected, 0.2, DistanceConfig::unit()).unwrap();
    let cfg = SolverConfig { starts: 4, seed: 9, ..SolverConfig::default() };
    let a = solve_with_clock(&q, &cfg, &NoClock).unwrap();
    let b = solve_with_clock(&q, &cfg, &NoClock).unwrap();
    assert_eq!(a.strategy, b.strategy);
    assert_eq!(a.status, b.status);
    #[cfg(feature = "std")]
    {
        let c = solve_with_clock(&q, &SolverConfig { threads: 4, ..cfg }, &NoClock).unwrap();
        assert_eq!(a.strategy, c.strategy);
        assert_eq!(a.distance, c.distance);
    }
}
