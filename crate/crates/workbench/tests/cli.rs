use std::path::PathBuf;
use std::process::{Command, Output};

use recourse::schema::{parse_mdp, parse_result, to_canonical};

fn models() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("models")
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_recourse")).current_dir(models()).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

const Q: [&str; 8] =
    ["--model", "loan.json", "--strategy", "impatient.json", "--target", "Rejected", "--gamma", "0.2"];

fn with(cmd: &str, extra: &[&str]) -> Vec<String> {
    let mut v = vec![cmd.to_string()];
    v.extend(Q.iter().map(|s| s.to_string()));
    v.extend(extra.iter().map(|s| s.to_string()));
    v
}

fn run_v(args: &[String]) -> Output {
    run(&args.iter().map(String::as_str).collect::<Vec<_>>())
}

#[test]
fn check_prints_the_reach_probability() {
    let o = run(&["check", "--model", "loan.json", "--strategy", "impatient.json", "--target", "Rejected"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), "0.411\n");
    // numeric ids work too
    let o = run(&["check", "--model", "loan.json", "--strategy", "counterfactual.json", "--target", "8"]);
    assert_eq!(stdout(&o), "0.1982\n");
}

#[test]
fn feasible_exit_codes() {
    let o = run(&["feasible", "--model", "loan.json", "--target", "Rejected", "--gamma", "0.0001"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["feasible", "--model", "loan.json", "--target", "Rejected", "--gamma", "0.02"]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn synth_is_reproducible_and_round_trips() {
    let args = with("synth", &["--starts", "1", "--no-timing"]);
    let a = run_v(&args);
    let b = run_v(&args);
    assert_eq!(a.status.code(), Some(0), "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
    let text = stdout(&a);
    let r = parse_result(&text, "stdout").unwrap();
    assert!(r.reach_after.unwrap() <= 0.2 + 1e-7);
    assert!(r.distance.as_ref().unwrap().combined <= 1.70 + 1e-3);
    assert_eq!(to_canonical(&r), text);
    let keys: Vec<&str> = text
        .lines()
        .filter(|l| l.starts_with("  \"") && !l.starts_with("   "))
        .map(|l| l.trim().split('"').nth(1).unwrap())
        .collect();
    assert_eq!(
        keys,
        ["status", "gamma", "target", "reach_before", "reach_after", "distance", "strategy", "wall_time_s", "seed"]
    );
}

#[test]
fn status_exit_codes() {
    let o = run_v(&with("synth", &["--starts", "1"]).into_iter().map(|s| if s == "0.2" { "0.01".into() } else { s }).collect::<Vec<_>>());
    assert_eq!(o.status.code(), Some(2));
    let o = run_v(&with("epsilon", &["--r0", "0", "--r1", "0", "--epsilon", "0.5", "--starts", "2"]));
    assert_eq!(o.status.code(), Some(2));
    let o = run_v(&with("epsilon", &["--r0", "0", "--r1", "0", "--epsilon", "0.56", "--starts", "2"]));
    assert_eq!(o.status.code(), Some(0));
    let o = run_v(&with("synth", &["--time-limit", "1e-9"]));
    assert_eq!(o.status.code(), Some(3));
    let o = run_v(&with("synth", &["--starts", "1"]).into_iter().map(|s| if s == "0.2" { "0.5".into() } else { s }).collect::<Vec<_>>());
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("\"Trivial\""));
}

#[test]
fn explain_from_a_saved_result() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.json");
    let o = run_v(&with("synth", &["--starts", "2", "--out", path.to_str().unwrap()]));
    assert_eq!(o.status.code(), Some(0));
    let o = run(&[
        "explain", "--model", "loan.json", "--strategy", "impatient.json", "--target", "Rejected", "--result",
        path.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.starts_with("State `Rejected' is reached with probability 0.41.\n"));
    assert!(text.contains(" In state `Rework'\n"));
    assert!(text.contains("  decrease probability of action `Quit' to 0.14\n"), "{text}");
}

#[test]
fn diverse_oracle_export_and_nonconvexity() {
    let o = run_v(&with("diverse", &["--starts", "2", "--count", "2", "--no-timing"]));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["members"].as_array().unwrap().len(), 2);
    assert_eq!(v["novel_fractions"][0], 1.0);

    let o = run_v(&with("oracle", &["--step", "0.05"]));
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["feasible"], true);

    let o = run_v(&with("export", &[]));
    assert!(stdout(&o).starts_with("miqcqp 1\n"));
    assert_eq!(o.stdout, run_v(&with("export", &[])).stdout);

    let o = run_v(&with("nonconvexity", &[]));
    assert!(stdout(&o).lines().next().unwrap().starts_with("s0: [-1, -0.9513148795, 0, 0.9513148795, 1] nonconvex"));
}

#[test]
fn learn_writes_a_loadable_model() {
    let dir = tempfile::tempdir().unwrap();
    let traces = dir.path().join("log.txt");
    std::fs::write(&traces, "# sessions\nplay,skip,play\nplay,play\nskip\n").unwrap();
    let model = dir.path().join("m.json");
    let strategy = dir.path().join("s.json");
    let o = run(&[
        "learn", "--traces", traces.to_str().unwrap(), "--out", model.to_str().unwrap(), "--strategy-out",
        strategy.to_str().unwrap(), "--threshold", "3",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let m = parse_mdp(&std::fs::read_to_string(&model).unwrap(), "m").unwrap();
    assert!(m.find_state("negative").is_some());
    let o = run(&[
        "check", "--model", model.to_str().unwrap(), "--strategy", strategy.to_str().unwrap(), "--target", "negative",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}

#[test]
fn bench_output_does_not_depend_on_jobs() {
    let base = [
        "bench", "--model", "loan.json", "--target", "Rejected", "--count", "2", "--gamma", "0.0001,0.2,1",
        "--starts", "1", "--no-timing", "--format", "csv",
    ];
    let one = run(&[&base[..], &["--jobs", "1"]].concat());
    let three = run(&[&base[..], &["--jobs", "3"]].concat());
    assert_eq!(one.status.code(), Some(0), "{}", stderr(&one));
    assert_eq!(one.stdout, three.stdout);
    let text = stdout(&one);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "model,gamma,strategy_seed,status,wall_time_s,distance_combined,reach_after");
    assert_eq!(lines.len(), 7);
    assert!(lines[1].starts_with("loan,0.0001,0,Infeasible,0,,"));
    assert!(lines[3].starts_with("loan,1,0,Trivial,0,0,"));
}

#[test]
fn errors_carry_context() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\n  \"states\": [\n    {\"id\": 0, \"label\": \"a\"},\n  ]\n}\n").unwrap();
    let o = run(&["feasible", "--model", bad.to_str().unwrap(), "--target", "a", "--gamma", "0.5"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("bad.json:4:"), "{}", stderr(&o));

    let o = run(&["check", "--model", "loan.json", "--strategy", "missing.json", "--target", "Rejected"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("missing.json"));

    let o = run_v(&with("synth", &["--format", "csv"]));
    assert_eq!(o.status.code(), Some(1));
    let o = run_v(&with("synth", &["--r0", "-1"]));
    assert_eq!(o.status.code(), Some(1));
    let o = run(&["explain", "--model", "loan.json", "--strategy", "impatient.json", "--target", "Rejected"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--result or --gamma"));
    let o = run(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
}

