//! The gamma sweep: every initial strategy against every threshold, with
//! per-model aggregates in the layout of the usual runtime tables.

use std::fmt::Write as _;

use rayon::prelude::*;
use recourse_core::encoding::SynthesisQuery;
use recourse_core::solver::{solve, SolverConfig, Status};
use recourse_core::{DistanceConfig, Mdp, StateId, Strategy};

use crate::{Error, Result};

pub const DEFAULT_GAMMAS: [f64; 11] = [0.0001, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub gammas: Vec<f64>,
    pub distances: DistanceConfig,
    pub solver: SolverConfig,
    /// Concurrent runs; each run uses a single solver thread.
    pub jobs: usize,
    pub timing: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            gammas: DEFAULT_GAMMAS.to_vec(),
            distances: DistanceConfig::unit(),
            solver: SolverConfig::default(),
            jobs: 1,
            timing: true,
        }
    }
}

/// Outcome of one run. Runs that fail with an error carry the message and
/// no status.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub model: String,
    pub gamma: f64,
    pub strategy_seed: u64,
    pub status: Option<Status>,
    pub error: Option<String>,
    pub wall_time: f64,
    pub distance_combined: Option<f64>,
    pub reach_after: Option<f64>,
}

impl BenchRow {
    pub fn status_str(&self) -> &str {
        self.status.map_or("Error", Status::as_str)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub model: String,
    pub runs: usize,
    pub mean_t: f64,
    pub std_t: f64,
    pub min_t: f64,
    pub max_t: f64,
    /// Optimal and Trivial runs.
    pub optimal: usize,
    pub infeasible: usize,
    /// Timeouts and failed runs.
    pub timeout: usize,
    pub suboptimal: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub aggregates: Vec<Aggregate>,
}

/// Sweeps one model. `strategies` pairs each initial strategy with the seed
/// it was drawn from. Rows come out in (strategy, gamma) order whatever the
/// number of jobs.
pub fn gamma_sweep(
    model: &str,
    m: &Mdp,
    t: StateId,
    strategies: &[(u64, Strategy)],
    cfg: &SweepConfig,
) -> Result<Vec<BenchRow>> {
    if cfg.jobs == 0 {
        return Err(Error::Config("jobs must be at least 1".into()));
    }
    let solver = SolverConfig { threads: 1, ..cfg.solver.clone() };
    let runs: Vec<(u64, &Strategy, f64)> = strategies
        .iter()
        .flat_map(|(seed, s)| cfg.gammas.iter().map(move |&g| (*seed, s, g)))
        .collect();
    let one = |&(seed, sigma, gamma): &(u64, &Strategy, f64)| -> BenchRow {
        let mut row = BenchRow {
            model: model.to_string(),
            gamma,
            strategy_seed: seed,
            status: None,
            error: None,
            wall_time: 0.0,
            distance_combined: None,
            reach_after: None,
        };
        let out = SynthesisQuery::new(m.clone(), sigma.clone(), t, gamma, cfg.distances)
            .and_then(|q| solve(&q, &solver));
        match out {
            Ok(r) => {
                row.status = Some(r.status);
                row.wall_time = if cfg.timing { r.wall_time } else { 0.0 };
                row.distance_combined = r.distance.map(|d| d.combined);
                row.reach_after = r.reach_value;
            }
            Err(e) => row.error = Some(e.to_string()),
        }
        row
    };
    if cfg.jobs == 1 {
        return Ok(runs.iter().map(one).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    Ok(pool.install(|| runs.par_iter().map(one).collect()))
}

fn aggregate(model: &str, rows: &[&BenchRow]) -> Aggregate {
    let n = rows.len();
    let times: Vec<f64> = rows.iter().map(|r| r.wall_time).collect();
    let mean = if n == 0 { 0.0 } else { times.iter().sum::<f64>() / n as f64 };
    let var = if n < 2 { 0.0 } else { times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1) as f64 };
    let count = |f: &dyn Fn(Option<Status>) -> bool| rows.iter().filter(|r| f(r.status)).count();
    Aggregate {
        model: model.to_string(),
        runs: n,
        mean_t: mean,
        std_t: var.sqrt(),
        min_t: if n == 0 { 0.0 } else { times.iter().copied().fold(f64::INFINITY, f64::min) },
        max_t: times.iter().copied().fold(0.0, f64::max),
        optimal: count(&|s| matches!(s, Some(Status::Optimal | Status::Trivial))),
        infeasible: count(&|s| s == Some(Status::Infeasible)),
        timeout: count(&|s| matches!(s, Some(Status::Timeout) | None)),
        suboptimal: count(&|s| s == Some(Status::SubOptimal)),
    }
}

impl BenchReport {
    /// Aggregates per model, in order of first appearance.
    pub fn from_rows(rows: Vec<BenchRow>) -> Self {
        let mut models: Vec<&str> = Vec::new();
        for r in &rows {
            if !models.contains(&r.model.as_str()) {
                models.push(&r.model);
            }
        }
        let aggregates = models
            .iter()
            .map(|m| aggregate(m, &rows.iter().filter(|r| r.model == *m).collect::<Vec<_>>()))
            .collect();
        BenchReport { rows, aggregates }
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["model", "gamma", "strategy_seed", "status", "wall_time_s", "distance_combined", "reach_after"])
            .expect("in-memory write");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                r.model.clone(),
                r.gamma.to_string(),
                r.strategy_seed.to_string(),
                r.status_str().to_string(),
                r.wall_time.to_string(),
                opt(r.distance_combined),
                opt(r.reach_after),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
    }

    pub fn to_table(&self) -> String {
        let width = self.aggregates.iter().map(|a| a.model.len()).max().unwrap_or(0).max(5);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<width$} {:>5} {:>9} {:>9} {:>9} {:>9} {:>5} {:>5} {:>5} {:>6}",
            "model", "runs", "mean(t)", "std(t)", "min(t)", "max(t)", "Opt.", "Inf.", "T.O.", "Sub.O."
        );
        for a in &self.aggregates {
            let _ = writeln!(
                out,
                "{:<width$} {:>5} {:>9.3} {:>9.3} {:>9.3} {:>9.3} {:>5} {:>5} {:>5} {:>6}",
                a.model, a.runs, a.mean_t, a.std_t, a.min_t, a.max_t, a.optimal, a.infeasible, a.timeout, a.suboptimal
            );
        }
        out
    }
}
