use recourse_core::diversity::{diverse_synthesize_with_clock, DiversityConfig};
use recourse_core::encoding::SynthesisQuery;
use recourse_core::explain::render;
use recourse_core::fixtures::loan_application;
use recourse_core::solver::{
    grid_oracle_with, solve_epsilon_with_clock, solve_with_clock, Certificate, GridConfig, GridMode, NoClock,
    SolverConfig, Status, SynthesisResult,
};
use recourse_core::{strategy_distance, DistanceConfig};

const GAMMAS: [f64; 11] = [0.0001, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];

fn query(gamma: f64, d: DistanceConfig) -> SynthesisQuery {
    let ex = loan_application();
    SynthesisQuery::new(ex.mdp, ex.impatient, ex.rejected, gamma, d).unwrap()
}

fn cfg() -> SolverConfig {
    SolverConfig { starts: 4, ..SolverConfig::default() }
}

#[test]
fn explanation_of_the_documented_counterfactual() {
    let ex = loan_application();
    let q = query(0.2, DistanceConfig::unit());
    let d = strategy_distance(&ex.mdp, &ex.impatient, &ex.counterfactual, &q.distances).unwrap();
    let result = SynthesisResult {
        status: Status::SubOptimal,
        strategy: Some(ex.counterfactual.clone()),
        distance: Some(d),
        reach_value: Some(0.1982),
        reach_before: 0.411,
        min_reach: 0.02,
        wall_time: 0.0,
        starts_used: 1,
        certificate: None,
    };
    let text = render(&ex.mdp, &ex.impatient, &result, ex.rejected).unwrap();
    assert_eq!(
        text,
        "State `Rejected' is reached with probability 0.41.\n\
         You can reach `Rejected' with probability 0.20 as follows:\n \
         In state `Rework'\n  \
         increase probability of action `Submit' to 0.86\n  \
         decrease probability of action `Quit' to 0.14\n"
    );
}

#[test]
fn trivial_result_needs_no_changes() {
    let ex = loan_application();
    let r = solve_with_clock(&query(0.5, DistanceConfig::unit()), &cfg(), &NoClock).unwrap();
    assert_eq!(r.status, Status::Trivial);
    let text = render(&ex.mdp, &ex.impatient, &r, ex.rejected).unwrap();
    assert_eq!(text, "State `Rejected' is reached with probability 0.41.\nNo changes required.\n");
}

#[test]
fn infeasible_only_below_min_reach() {
    for gamma in GAMMAS {
        let r = solve_with_clock(&query(gamma, DistanceConfig::unit()), &cfg(), &NoClock).unwrap();
        assert_eq!(r.status == Status::Infeasible, gamma == 0.0001, "gamma {gamma}: {:?}", r.status);
        if let Some(p) = r.reach_value {
            assert!(p <= gamma + 1e-7);
        }
    }
    let just_below = solve_with_clock(&query(0.02 - 2e-9, DistanceConfig::unit()), &cfg(), &NoClock).unwrap();
    assert_eq!(just_below.status, Status::Infeasible);
    let edge = solve_with_clock(&query(0.02 - 1e-9, DistanceConfig::unit()), &cfg(), &NoClock).unwrap();
    assert!(edge.status.has_strategy(), "{:?}", edge.status);
    let at = solve_with_clock(&query(0.02, DistanceConfig::unit()), &cfg(), &NoClock).unwrap();
    assert!(at.reach_value.unwrap() <= 0.02 + 1e-7);
}

#[test]
fn dinf_budget_below_half_is_infeasible() {
    let d = DistanceConfig::new(0.0, 0.0, 1.0).unwrap();
    let q = query(0.2, d);
    let within = |eps: f64| GridConfig { step: 0.01, budget: 10_000_000, mode: GridMode::Within(eps) };
    assert!(!grid_oracle_with(&q, &within(0.50)).unwrap().is_feasible());
    assert!(grid_oracle_with(&q, &within(0.56)).unwrap().is_feasible());

    let r = solve_epsilon_with_clock(&q.clone().with_epsilon(0.50).unwrap(), &cfg(), &NoClock).unwrap();
    assert_eq!(r.status, Status::Infeasible);
    assert_eq!(r.certificate, Some(Certificate::BudgetRelaxation));
    let r = solve_epsilon_with_clock(&q.with_epsilon(0.56).unwrap(), &cfg(), &NoClock).unwrap();
    assert!(r.distance.unwrap().dinf <= 0.56 + 1e-9);
}

#[test]
fn diverse_members() {
    let q = query(0.2, DistanceConfig::unit());
    let dcfg = DiversityConfig::default();
    let set = diverse_synthesize_with_clock(&q, &dcfg, &cfg(), &NoClock).unwrap();
    assert_eq!(set.members.len(), 3);
    for m in &set.members {
        assert!(m.reach_value.unwrap() <= 0.2 + 1e-7);
    }
    assert_eq!(set.novel_fractions[0], 1.0);
    assert!(set.determinant_trace.iter().all(|d| d.is_finite()));
    for (i, row) in set.pairwise.iter().enumerate() {
        assert_eq!(row[i], 1.0 + dcfg.perturbation);
        for (j, v) in row.iter().enumerate() {
            assert_eq!(*v, set.pairwise[j][i]);
            if i != j {
                assert!(*v > 0.0 && *v <= 1.0);
            }
        }
    }

    let same = diverse_synthesize_with_clock(&q, &DiversityConfig { lambda: 0.0, ..dcfg }, &cfg(), &NoClock).unwrap();
    assert_eq!(same.members.len(), 3);
    assert!(same.l1.iter().flatten().all(|&v| v <= 1e-5));
}
