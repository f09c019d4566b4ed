//! Command line front end. Exit codes: 0 success (including trivial
//! results), 1 usage or input error, 2 infeasible, 3 timeout.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use recourse_core::diversity::{diverse_synthesize, DiversityConfig};
use recourse_core::encoding::{build_problem, export_problem, nonconvexity_report, SynthesisQuery};
use recourse_core::explain::render;
use recourse_core::reach::{min_reach_probability, reach_probability};
use recourse_core::solver::{
    grid_oracle_with, solve, solve_epsilon, GridConfig, GridMode, GridOutcome, SolverConfig, Status,
    SynthesisResult, GRID_BUDGET,
};
use recourse_core::{induce_dtmc, DistanceBreakdown, DistanceConfig, Mdp, StateId, Strategy};
use serde::Serialize;

use crate::bench::{gamma_sweep, BenchReport, SweepConfig, DEFAULT_GAMMAS};
use crate::schema::{
    self, load_mdp, load_strategy, mdp_to_string, parse_status, strategy_to_string, to_canonical, DiverseJson,
    DistanceJson, ResultJson, StrategyJson,
};
use crate::traces::{learn_mdp, LearnConfig, TraceLog, DEFAULT_THRESHOLD};
use crate::random_strategy;

#[derive(Debug, Parser)]
#[command(name = "recourse", version, about = "Counterfactual strategies for Markov decision processes")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Text,
    Csv,
}

#[derive(Debug, Args)]
struct ModelArgs {
    #[arg(long)]
    model: PathBuf,
    /// State label, or numeric id when no label matches.
    #[arg(long)]
    target: String,
}

#[derive(Debug, Args)]
struct DistArgs {
    #[arg(long, default_value_t = 1.0)]
    r0: f64,
    #[arg(long, default_value_t = 1.0)]
    r1: f64,
    #[arg(long, default_value_t = 1.0)]
    rinf: f64,
}

#[derive(Debug, Args)]
struct QueryArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    strategy: PathBuf,
    #[arg(long)]
    gamma: f64,
    #[command(flatten)]
    dist: DistArgs,
}

#[derive(Debug, Args)]
struct SolveArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Seconds.
    #[arg(long, default_value_t = 1800.0)]
    time_limit: f64,
    #[arg(long, default_value_t = 16)]
    starts: usize,
    /// Solver threads for the starts.
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Debug, Args)]
struct OutArgs {
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Write null/zero instead of wall-clock times, for reproducible output.
    #[arg(long)]
    no_timing: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Probability of reaching the target under a strategy.
    Check {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        strategy: PathBuf,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Minimum reachability probability over all strategies.
    Feasible {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        gamma: f64,
        #[command(flatten)]
        out: OutArgs,
    },
    /// One counterfactual strategy.
    Synth {
        #[command(flatten)]
        query: QueryArgs,
        #[command(flatten)]
        solve: SolveArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Any strategy within a distance budget.
    Epsilon {
        #[command(flatten)]
        query: QueryArgs,
        #[arg(long)]
        epsilon: f64,
        #[command(flatten)]
        solve: SolveArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// A diverse collection of counterfactuals.
    Diverse {
        #[command(flatten)]
        query: QueryArgs,
        #[arg(long, default_value_t = 2.0)]
        lambda: f64,
        #[arg(long, default_value_t = 3)]
        count: usize,
        #[arg(long, default_value_t = 1e-4)]
        perturbation: f64,
        #[command(flatten)]
        solve: SolveArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Exhaustive search over a probability grid.
    Oracle {
        #[command(flatten)]
        query: QueryArgs,
        #[arg(long, default_value_t = 0.05)]
        step: f64,
        /// Stop at the first grid point within this distance.
        #[arg(long)]
        epsilon: Option<f64>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Learn a model from event traces.
    Learn {
        #[arg(long)]
        traces: PathBuf,
        #[arg(long, default_value_t = 1)]
        history: usize,
        #[arg(long, default_value_t = 0.0)]
        smoothing: f64,
        /// Traces with fewer events end in `negative`.
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: usize,
        /// Also write a random initial strategy for the learned model.
        #[arg(long)]
        strategy_out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the optimization problem in text form.
    Export {
        #[command(flatten)]
        query: QueryArgs,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render recourse instructions for a result (or a fresh solve).
    Explain {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        strategy: PathBuf,
        /// Result JSON written by `synth`.
        #[arg(long, conflicts_with = "gamma")]
        result: Option<PathBuf>,
        #[arg(long)]
        gamma: Option<f64>,
        #[command(flatten)]
        dist: DistArgs,
        #[command(flatten)]
        solve: SolveArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Gamma sweep over random initial strategies.
    Bench {
        #[arg(long, required = true)]
        model: Vec<PathBuf>,
        #[arg(long)]
        target: String,
        /// Thresholds; the default is 0.0001, 0.1, ..., 1.
        #[arg(long, value_delimiter = ',')]
        gamma: Vec<f64>,
        /// Random initial strategies per model.
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[command(flatten)]
        dist: DistArgs,
        #[command(flatten)]
        solve: SolveArgs,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// CSV of all runs, written in addition to the main output.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Eigenvalues of the bilinear constraint forms.
    Nonconvexity {
        #[command(flatten)]
        query: QueryArgs,
        #[command(flatten)]
        out: OutArgs,
    },
}

/// Parses and runs; returns the process exit code.
pub fn main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn exit_code(status: Status) -> i32 {
    match status {
        Status::Infeasible => 2,
        Status::Timeout => 3,
        _ => 0,
    }
}

fn resolve_target(m: &Mdp, target: &str) -> anyhow::Result<StateId> {
    if let Some(s) = m.find_state(target) {
        return Ok(s);
    }
    match target.parse::<usize>() {
        Ok(id) if id < m.num_states() => Ok(StateId(id)),
        _ => bail!("--target: no state labeled `{target}` and no state with that id"),
    }
}

fn distances(d: &DistArgs) -> anyhow::Result<DistanceConfig> {
    DistanceConfig::new(d.r0, d.r1, d.rinf).context("--r0/--r1/--rinf")
}

fn solver_config(a: &SolveArgs) -> SolverConfig {
    SolverConfig {
        time_limit: a.time_limit,
        starts: a.starts,
        seed: a.seed,
        threads: a.threads,
        ..SolverConfig::default()
    }
}

fn format(out: &OutArgs, default: Format, allowed: &[Format]) -> anyhow::Result<Format> {
    let f = out.format.unwrap_or(default);
    if !allowed.contains(&f) {
        bail!("--format {:?} is not available for this command", f);
    }
    Ok(f)
}

fn emit(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Shortest decimal with at most ten places.
fn num(v: f64) -> String {
    let s = format!("{v:.10}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}

struct Loaded {
    m: Mdp,
    sigma: Strategy,
    target: StateId,
}

fn load(model: &ModelArgs, strategy: &Path) -> anyhow::Result<Loaded> {
    let m = load_mdp(&model.model)?;
    let sigma = load_strategy(strategy, &m)?;
    let target = resolve_target(&m, &model.target)?;
    Ok(Loaded { m, sigma, target })
}

fn query(q: &QueryArgs) -> anyhow::Result<(Loaded, SynthesisQuery)> {
    let l = load(&q.model, &q.strategy)?;
    let sq = SynthesisQuery::new(l.m.clone(), l.sigma.clone(), l.target, q.gamma, distances(&q.dist)?)?;
    Ok((l, sq))
}

fn distance_line(d: &DistanceBreakdown) -> String {
    format!("distance: d0={} d1={} dinf={} combined={}\n", d.d0, num(d.d1), num(d.dinf), num(d.combined))
}

fn result_text(l: &Loaded, r: &SynthesisResult) -> anyhow::Result<String> {
    let mut s = format!("status: {}\n", r.status.as_str());
    let _ = writeln!(s, "min reach: {}", num(r.min_reach));
    if let Some(d) = &r.distance {
        s.push_str(&distance_line(d));
    }
    if r.strategy.is_some() {
        s.push_str(&render(&l.m, &l.sigma, r, l.target)?);
    }
    Ok(s)
}

fn run(cmd: Command) -> anyhow::Result<i32> {
    match cmd {
        Command::Check { model, strategy, out } => {
            let l = load(&model, &strategy)?;
            let p = reach_probability(&induce_dtmc(&l.m, &l.sigma)?, l.target)?.at(l.m.initial());
            let text = match format(&out, Format::Text, &[Format::Text, Format::Json])? {
                Format::Json => to_canonical(&CheckJson { target: model.target.clone(), reach: p }),
                _ => format!("{}\n", num(p)),
            };
            emit(out.out.as_deref(), &text)?;
            Ok(0)
        }
        Command::Feasible { model, gamma, out } => {
            let m = load_mdp(&model.model)?;
            let t = resolve_target(&m, &model.target)?;
            let min = min_reach_probability(&m, t)?;
            let feasible = min.value <= gamma + 1e-9;
            let text = match format(&out, Format::Text, &[Format::Text, Format::Json])? {
                Format::Json => to_canonical(&FeasibleJson {
                    target: model.target.clone(),
                    gamma,
                    min_reach: min.value,
                    feasible,
                    witness: StrategyJson::from_strategy(&min.strategy),
                }),
                _ => format!(
                    "min reach: {}\n{}\n",
                    num(min.value),
                    if feasible { "feasible" } else { "infeasible" }
                ),
            };
            emit(out.out.as_deref(), &text)?;
            Ok(if feasible { 0 } else { 2 })
        }
        Command::Synth { query: qa, solve: sa, out } => {
            let (l, q) = query(&qa)?;
            let r = solve(&q, &solver_config(&sa))?;
            write_result(&l, &q, &r, &qa, sa.seed, &out)?;
            Ok(exit_code(r.status))
        }
        Command::Epsilon { query: qa, epsilon, solve: sa, out } => {
            let (l, q) = query(&qa)?;
            let q = q.with_epsilon(epsilon)?;
            let r = solve_epsilon(&q, &solver_config(&sa))?;
            write_result(&l, &q, &r, &qa, sa.seed, &out)?;
            Ok(exit_code(r.status))
        }
        Command::Diverse { query: qa, lambda, count, perturbation, solve: sa, out } => {
            let (l, q) = query(&qa)?;
            let dcfg = DiversityConfig { count, lambda, perturbation, base: q.distances };
            let set = diverse_synthesize(&q, &dcfg, &solver_config(&sa))?;
            if let Some(r) = &set.unsolved {
                write_result(&l, &q, r, &qa, sa.seed, &out)?;
                return Ok(exit_code(r.status));
            }
            let text = match format(&out, Format::Json, &[Format::Json, Format::Text])? {
                Format::Json => {
                    to_canonical(&DiverseJson::new(&set, q.gamma, &qa.model.target, sa.seed, !out.no_timing))
                }
                _ => {
                    let mut s = String::new();
                    for (i, r) in set.members.iter().enumerate() {
                        let _ = writeln!(s, "member {} (novel fraction {}):", i + 1, num(set.novel_fractions[i]));
                        s.push_str(&result_text(&l, r)?);
                    }
                    let trace: Vec<String> = set.determinant_trace.iter().map(|d| num(*d)).collect();
                    let _ = writeln!(s, "determinant trace: {}", trace.join(" "));
                    s
                }
            };
            emit(out.out.as_deref(), &text)?;
            Ok(0)
        }
        Command::Oracle { query: qa, step, epsilon, out } => {
            let (_, q) = query(&qa)?;
            let mode = epsilon.map_or(GridMode::Minimize, GridMode::Within);
            let o = grid_oracle_with(&q, &GridConfig { step, budget: GRID_BUDGET, mode })?;
            let json = OracleJson::new(&o, step);
            let text = match format(&out, Format::Json, &[Format::Json, Format::Text])? {
                Format::Json => to_canonical(&json),
                _ => match &o {
                    GridOutcome::Feasible { distance, reach_value, evaluations, .. } => format!(
                        "feasible at step {}: reach {}\n{}evaluations: {evaluations}\n",
                        num(step),
                        num(*reach_value),
                        distance_line(distance)
                    ),
                    GridOutcome::Infeasible { evaluations, .. } => {
                        format!("no grid point at step {} meets the limit\nevaluations: {evaluations}\n", num(step))
                    }
                },
            };
            emit(out.out.as_deref(), &text)?;
            Ok(if o.is_feasible() { 0 } else { 2 })
        }
        Command::Learn { traces, history, smoothing, threshold, strategy_out, seed, out } => {
            let text = schema::read_file(&traces)?;
            let log = TraceLog::parse(&text).with_context(|| traces.display().to_string())?;
            let m = learn_mdp(&log, &LearnConfig { history, smoothing, threshold })?;
            if let Some(p) = strategy_out {
                let s = strategy_to_string(&random_strategy(&m, seed));
                std::fs::write(&p, s).with_context(|| format!("writing {}", p.display()))?;
            }
            emit(out.as_deref(), &mdp_to_string(&m))?;
            Ok(0)
        }
        Command::Export { query: qa, epsilon, out } => {
            let (_, mut q) = query(&qa)?;
            if let Some(e) = epsilon {
                q = q.with_epsilon(e)?;
            }
            emit(out.as_deref(), &export_problem(&build_problem(&q)?))?;
            Ok(0)
        }
        Command::Explain { model, strategy, result, gamma, dist, solve: sa, out } => {
            let l = load(&model, &strategy)?;
            let r = match (result, gamma) {
                (Some(path), _) => {
                    let source = path.display().to_string();
                    let rj = schema::parse_result(&schema::read_file(&path)?, &source)?;
                    result_from_json(&l.m, &rj, &source)?
                }
                (None, Some(g)) => {
                    let q = SynthesisQuery::new(l.m.clone(), l.sigma.clone(), l.target, g, distances(&dist)?)?;
                    solve(&q, &solver_config(&sa))?
                }
                (None, None) => bail!("explain needs --result or --gamma"),
            };
            if r.strategy.is_none() {
                bail!("result has status {} and no strategy to explain", r.status.as_str());
            }
            emit(out.as_deref(), &render(&l.m, &l.sigma, &r, l.target)?)?;
            Ok(exit_code(r.status))
        }
        Command::Bench { model, target, gamma, count, dist, solve: sa, jobs, csv, out } => {
            let cfg = SweepConfig {
                gammas: if gamma.is_empty() { DEFAULT_GAMMAS.to_vec() } else { gamma },
                distances: distances(&dist)?,
                solver: solver_config(&sa),
                jobs,
                timing: !out.no_timing,
            };
            let mut rows = Vec::new();
            for path in &model {
                let m = load_mdp(path)?;
                let t = resolve_target(&m, &target).with_context(|| path.display().to_string())?;
                let name = path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into());
                let strategies: Vec<(u64, Strategy)> =
                    (0..count as u64).map(|i| (sa.seed + i, random_strategy(&m, sa.seed + i))).collect();
                rows.extend(gamma_sweep(&name, &m, t, &strategies, &cfg)?);
            }
            let report = BenchReport::from_rows(rows);
            if let Some(p) = csv {
                std::fs::write(&p, report.to_csv()).with_context(|| format!("writing {}", p.display()))?;
            }
            let text = match format(&out, Format::Text, &[Format::Text, Format::Csv])? {
                Format::Csv => report.to_csv(),
                _ => report.to_table(),
            };
            emit(out.out.as_deref(), &text)?;
            Ok(0)
        }
        Command::Nonconvexity { query: qa, out } => {
            let (l, q) = query(&qa)?;
            let entries = nonconvexity_report(&build_problem(&q)?);
            let text = match format(&out, Format::Text, &[Format::Text, Format::Json])? {
                Format::Json => to_canonical(
                    &entries
                        .iter()
                        .map(|e| NonconvexJson {
                            state: l.m.state_label(e.state).to_string(),
                            eigenvalues: e.eigenvalues.clone(),
                            nonconvex: e.nonconvex,
                        })
                        .collect::<Vec<_>>(),
                ),
                _ => {
                    let mut s = String::new();
                    for e in &entries {
                        let ev: Vec<String> = e.eigenvalues.iter().map(|v| num(*v)).collect();
                        let _ = writeln!(
                            s,
                            "{}: [{}]{}",
                            l.m.state_label(e.state),
                            ev.join(", "),
                            if e.nonconvex { " nonconvex" } else { "" }
                        );
                    }
                    s
                }
            };
            emit(out.out.as_deref(), &text)?;
            Ok(0)
        }
    }
}

fn write_result(
    l: &Loaded,
    q: &SynthesisQuery,
    r: &SynthesisResult,
    qa: &QueryArgs,
    seed: u64,
    out: &OutArgs,
) -> anyhow::Result<()> {
    let text = match format(out, Format::Json, &[Format::Json, Format::Text])? {
        Format::Json => to_canonical(&ResultJson::new(r, q.gamma, &qa.model.target, seed, !out.no_timing)),
        _ => result_text(l, r)?,
    };
    emit(out.out.as_deref(), &text)
}

/// Enough of a result to render it: status, strategy and the two
/// reachability values.
fn result_from_json(m: &Mdp, r: &ResultJson, source: &str) -> anyhow::Result<SynthesisResult> {
    let status = parse_status(&r.status).ok_or_else(|| anyhow!("{source}: unknown status"))?;
    let strategy = r.strategy.as_ref().map(|s| s.to_strategy(m, source)).transpose()?;
    Ok(SynthesisResult {
        status,
        strategy,
        distance: None,
        reach_value: r.reach_after,
        reach_before: r.reach_before,
        min_reach: 0.0,
        wall_time: r.wall_time_s.unwrap_or(0.0),
        starts_used: 0,
        certificate: None,
    })
}

#[derive(Serialize)]
struct CheckJson {
    target: String,
    reach: f64,
}

#[derive(Serialize)]
struct FeasibleJson {
    target: String,
    gamma: f64,
    min_reach: f64,
    feasible: bool,
    witness: StrategyJson,
}

#[derive(Serialize)]
struct OracleJson {
    step: f64,
    feasible: bool,
    evaluations: u64,
    reach_after: Option<f64>,
    distance: Option<DistanceJson>,
    strategy: Option<StrategyJson>,
}

impl OracleJson {
    fn new(o: &GridOutcome, step: f64) -> Self {
        match o {
            GridOutcome::Feasible { strategy, distance, reach_value, evaluations } => OracleJson {
                step,
                feasible: true,
                evaluations: *evaluations,
                reach_after: Some(*reach_value),
                distance: Some(DistanceJson {
                    d0: distance.d0,
                    d1: distance.d1,
                    dinf: distance.dinf,
                    combined: distance.combined,
                }),
                strategy: Some(StrategyJson::from_strategy(strategy)),
            },
            GridOutcome::Infeasible { evaluations, .. } => OracleJson {
                step,
                feasible: false,
                evaluations: *evaluations,
                reach_after: None,
                distance: None,
                strategy: None,
            },
        }
    }
}

#[derive(Serialize)]
struct NonconvexJson {
    state: String,
    eigenvalues: Vec<f64>,
    nonconvex: bool,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_print_short() {
        assert_eq!(num(0.41100000000000003), "0.411");
        assert_eq!(num(1.0), "1");
        assert_eq!(num(0.0), "0");
        assert_eq!(num(-1e-12), "0");
    }

    #[test]
    fn format_is_checked_per_command() {
        let out = OutArgs { out: None, format: Some(Format::Csv), no_timing: false };
        assert!(format(&out, Format::Json, &[Format::Json]).is_err());
        assert_eq!(format(&out, Format::Text, &[Format::Csv]).unwrap(), Format::Csv);
    }
}
