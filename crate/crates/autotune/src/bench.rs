//! Paired Bayesian-vs-random comparison harness.
//!
//! Two labeled protocol variants run side by side over a seed panel: the
//! asymmetric "paper" comparison (Bayesian at 50 evaluations against random
//! search at 100) and the budget-matched comparison (both at the Bayesian
//! budget). The Bayesian runs are shared between the variants. Seeds run
//! concurrently with per-seed generators; output order is deterministic.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::eval::Evaluator;
use crate::optimizer::{Budget, OptimizerError, RunLogWriter, Strategy, TuningRun};
use crate::space::{Configuration, SearchSpace};

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub repeats: usize,
    pub base_seed: u64,
    /// Budget for the Bayesian runs (seeds m0, total N).
    pub bo_budget: Budget,
    /// Evaluations for the paper-protocol random-search runs.
    pub rs_paper_evals: usize,
    pub pool_size: usize,
    pub epochs: usize,
    /// When set, each run's log is written to this directory.
    pub log_dir: Option<PathBuf>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            repeats: 10,
            base_seed: 0,
            bo_budget: Budget::bayes_default(),
            rs_paper_evals: Budget::random_default().n_total,
            pool_size: crate::acquisition::DEFAULT_POOL_SIZE,
            epochs: crate::eval::DEFAULT_EPOCHS,
            log_dir: None,
        }
    }
}

/// Outcome of one run of the panel.
#[derive(Debug, Clone, Serialize)]
pub struct BenchRun {
    pub strategy: Strategy,
    pub n_evaluations: usize,
    pub seed: u64,
    pub best_value: f64,
    pub best_config: Configuration,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log_path: Option<String>,
}

/// Distribution summary of final incumbent values for one (protocol,
/// strategy) cell.
#[derive(Debug, Clone, Serialize)]
pub struct BenchSummary {
    pub protocol: String,
    pub strategy: Strategy,
    pub n_evaluations: usize,
    pub runs: usize,
    pub median: f64,
    pub best: f64,
    pub q1: f64,
    pub q3: f64,
}

#[derive(Debug)]
pub struct BenchReport {
    pub runs: Vec<BenchRun>,
    pub summaries: Vec<BenchSummary>,
}

/// Sample median: mean of the two middle order statistics.
pub fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let n = sorted.len();
    assert!(n > 0, "median of an empty sample");
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Linear-interpolation quantile of the order statistics (the common
/// `h = (n - 1) p` rule).
pub fn quantile(values: &[f64], p: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let n = sorted.len();
    assert!(n > 0, "quantile of an empty sample");
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = lo.min(n - 1).max(0);
    if lo + 1 >= n {
        return sorted[hi];
    }
    sorted[lo] + (h - lo as f64) * (sorted[lo + 1] - sorted[lo])
}

fn run_one(
    space: &SearchSpace,
    evaluator: &dyn Evaluator,
    strategy: Strategy,
    budget: Budget,
    seed: u64,
    cfg: &BenchConfig,
) -> Result<BenchRun, OptimizerError> {
    let mut run = TuningRun::init(space.clone(), budget, strategy, seed)?
        .with_pool_size(cfg.pool_size)
        .with_epochs(cfg.epochs)
        .with_run_id(format!("{}-n{}-seed{}", strategy.name(), budget.n_total, seed));
    run.run_to_completion(evaluator)?;
    let incumbent = run
        .incumbent()
        .expect("completed run has at least one observation")
        .clone();

    let log_path = match &cfg.log_dir {
        Some(dir) => {
            let path = dir.join(format!(
                "{}-n{}-seed{}.jsonl",
                strategy.name(),
                budget.n_total,
                seed
            ));
            RunLogWriter::create(&path, &run)?;
            Some(path.to_string_lossy().into_owned())
        }
        None => None,
    };

    Ok(BenchRun {
        strategy,
        n_evaluations: budget.n_total,
        seed,
        best_value: incumbent.value,
        best_config: incumbent.config,
        log_path,
    })
}

/// Run the full panel and summarize both protocol variants.
pub fn run_bench(
    space: &SearchSpace,
    evaluator: &dyn Evaluator,
    cfg: &BenchConfig,
) -> Result<BenchReport, OptimizerError> {
    if cfg.repeats == 0 {
        return Err(OptimizerError::InvalidRepeats);
    }
    let bo = cfg.bo_budget;
    let rs_matched = Budget::new(bo.m0.min(bo.n_total - 1), bo.n_total)?;
    let rs_paper = Budget::new(bo.m0.min(cfg.rs_paper_evals - 1), cfg.rs_paper_evals)?;

    let mut jobs: Vec<(Strategy, Budget, u64)> = Vec::new();
    for i in 0..cfg.repeats {
        let seed = cfg.base_seed + i as u64;
        jobs.push((Strategy::BayesOpt, bo, seed));
        jobs.push((Strategy::RandomSearch, rs_paper, seed));
        if rs_matched.n_total != rs_paper.n_total {
            jobs.push((Strategy::RandomSearch, rs_matched, seed));
        }
    }

    let mut runs = jobs
        .par_iter()
        .map(|(strategy, budget, seed)| run_one(space, evaluator, *strategy, *budget, *seed, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    runs.sort_by_key(|r| (r.strategy.name(), r.n_evaluations, r.seed));

    let cell = |strategy: Strategy, n: usize| -> Vec<f64> {
        runs.iter()
            .filter(|r| r.strategy == strategy && r.n_evaluations == n)
            .map(|r| r.best_value)
            .collect()
    };
    let summarize = |protocol: &str, strategy: Strategy, n: usize| -> BenchSummary {
        let values = cell(strategy, n);
        BenchSummary {
            protocol: protocol.to_string(),
            strategy,
            n_evaluations: n,
            runs: values.len(),
            median: median(&values),
            best: values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            q1: quantile(&values, 0.25),
            q3: quantile(&values, 0.75),
        }
    };

    let summaries = vec![
        summarize("paper", Strategy::BayesOpt, bo.n_total),
        summarize("paper", Strategy::RandomSearch, rs_paper.n_total),
        summarize("matched", Strategy::BayesOpt, bo.n_total),
        summarize("matched", Strategy::RandomSearch, rs_matched.n_total),
    ];

    Ok(BenchReport { runs, summaries })
}

/// Recompute a summary cell from persisted run logs; the independent check
/// that the emitted summaries derive from the logs.
pub fn summarize_logs(paths: &[&Path]) -> Result<(f64, f64, f64, f64), OptimizerError> {
    let mut bests = Vec::new();
    for path in paths {
        let content = std::fs::read_to_string(path)?;
        let parsed = crate::optimizer::parse_log(&content)?;
        let best = parsed
            .records
            .iter()
            .map(|r| r.value)
            .fold(f64::NEG_INFINITY, f64::max);
        bests.push(best);
    }
    Ok((
        median(&bests),
        bests.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        quantile(&bests, 0.25),
        quantile(&bests, 0.75),
    ))
}
