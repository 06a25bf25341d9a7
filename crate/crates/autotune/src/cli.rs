//! Command-line surface: `tune`, `random-search`, `bench`, `report`,
//! `shapes`.
//!
//! Exit codes: 0 success, 1 usage error, 2 evaluator abort or unreadable
//! log, 3 shape mismatch. Every command is deterministic given its flags and
//! seed; `--format jsonl` selects line-delimited machine-readable output.
//! The default log directory is `$AUTOTUNE_LOG_DIR` or `./autotune_logs`.

use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::arch::ArchitectureSpec;
use crate::bench::{run_bench, BenchConfig};
use crate::builtin;
use crate::eval::{
    Evaluator, ExternalEvaluator, SyntheticEvaluator, SyntheticFn, TailSurgeryEvaluator,
    ToyTrainerEvaluator, DEFAULT_EPOCHS,
};
use crate::optimizer::{
    parse_log, resume_from_path, Budget, OptimizerError, Phase, RunLogWriter, RunStatus, Strategy,
    TuningRun,
};
use crate::space::{Configuration, SearchSpace};

#[derive(Parser)]
#[command(
    name = "autotune",
    version,
    about = "Bayesian-optimization tuning of layered-network tails"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Bayesian-optimization tuning run to completion
    Tune(TuneArgs),
    /// Run the random-search baseline
    RandomSearch(TuneArgs),
    /// Paired comparison: Bayesian (N) vs random search (paper and matched budgets)
    Bench(BenchArgs),
    /// Summarize a run log: incumbent trace, phase counts, best configuration
    Report(ReportArgs),
    /// Shape trace and parameter/FLOP accounting for an architecture
    Shapes(ShapesArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OutputFormat {
    Human,
    Jsonl,
}

#[derive(Args)]
struct EvaluatorArgs {
    /// Objective backend: toy | branin | hartmann3 | mixed-quadratic | external
    #[arg(long, default_value = "toy")]
    evaluator: String,
    /// Command line for the external evaluator (required with
    /// `--evaluator external`)
    #[arg(long)]
    evaluator_cmd: Option<String>,
    /// Per-evaluation timeout in seconds for external evaluators
    #[arg(long, default_value_t = 60.0)]
    timeout: f64,
    /// Base seed of the toy trainer (fixes the objective landscape)
    #[arg(long, default_value_t = 0)]
    trainer_seed: u64,
    /// Epochs forwarded in each evaluation request
    #[arg(long, default_value_t = DEFAULT_EPOCHS)]
    epochs: usize,
}

#[derive(Args)]
struct TuneArgs {
    /// Search-space file, or a bundled name (table1, branin, hartmann3,
    /// mixed-quadratic). Optional when --arch derives the tail space.
    #[arg(long)]
    space: Option<String>,
    /// Base architecture for tail surgery (file or bundled name); each
    /// evaluation request then carries the tuned architecture
    #[arg(long)]
    arch: Option<String>,
    /// Tail depth bound when deriving the space from --arch
    #[arg(long, default_value_t = 3)]
    k_max: usize,
    #[command(flatten)]
    evaluator: EvaluatorArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Uniform seed evaluations (default 20)
    #[arg(long)]
    m0: Option<usize>,
    /// Total evaluations (default 50 for tune, 100 for random-search)
    #[arg(long)]
    n_total: Option<usize>,
    #[arg(long, default_value_t = 2048)]
    pool_size: usize,
    /// Run-log path (default: <log dir>/<strategy>-<seed>.jsonl)
    #[arg(long)]
    log: Option<PathBuf>,
    /// Resume an interrupted run from its log
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = OutputFormat::Human)]
    format: OutputFormat,
}

#[derive(Args)]
struct BenchArgs {
    /// Search-space file or bundled name
    #[arg(long)]
    space: String,
    #[command(flatten)]
    evaluator: EvaluatorArgs,
    /// Seed-panel size
    #[arg(long, default_value_t = 10)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    m0: Option<usize>,
    /// Bayesian budget (total evaluations)
    #[arg(long)]
    n_total: Option<usize>,
    /// Random-search evaluations for the paper protocol
    #[arg(long, default_value_t = 100)]
    rs_evals: usize,
    #[arg(long, default_value_t = 2048)]
    pool_size: usize,
    /// Directory for per-run logs (default: the log dir)
    #[arg(long)]
    log_dir: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = OutputFormat::Human)]
    format: OutputFormat,
}

#[derive(Args)]
struct ReportArgs {
    /// Run log to summarize
    log: PathBuf,
    #[arg(long, value_enum, default_value_t = OutputFormat::Human)]
    format: OutputFormat,
}

#[derive(Args)]
struct ShapesArgs {
    /// Architecture file or bundled name (vgg16_like, resnet50_like,
    /// densenet121_like)
    arch: String,
    #[arg(long, value_enum, default_value_t = OutputFormat::Human)]
    format: OutputFormat,
}

/// Parse `std::env::args` and dispatch. Returns the process exit code.
pub fn run_cli() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match cli.command {
        Command::Tune(args) => cmd_tune(Strategy::BayesOpt, args),
        Command::RandomSearch(args) => cmd_tune(Strategy::RandomSearch, args),
        Command::Bench(args) => cmd_bench(args),
        Command::Report(args) => cmd_report(args),
        Command::Shapes(args) => cmd_shapes(args),
    }
}

fn usage_error(message: &str) -> i32 {
    eprintln!("error: {message}");
    eprintln!("Run with --help for usage.");
    1
}

fn default_log_dir() -> PathBuf {
    std::env::var_os("AUTOTUNE_LOG_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("autotune_logs"))
}

fn resolve_space(spec: &str) -> Result<SearchSpace, String> {
    let path = Path::new(spec);
    if path.exists() {
        let content =
            std::fs::read_to_string(path).map_err(|e| format!("cannot read {spec}: {e}"))?;
        return SearchSpace::from_json_str(&content).map_err(|e| format!("{spec}: {e}"));
    }
    builtin::space_by_name(spec)
        .ok_or_else(|| format!("`{spec}` is neither a readable file nor a bundled space name"))
}

fn resolve_arch(spec: &str) -> Result<ArchitectureSpec, String> {
    let path = Path::new(spec);
    if path.exists() {
        let content =
            std::fs::read_to_string(path).map_err(|e| format!("cannot read {spec}: {e}"))?;
        return ArchitectureSpec::from_json_str(&content).map_err(|e| format!("{spec}: {e}"));
    }
    builtin::arch_by_name(spec)
        .ok_or_else(|| format!("`{spec}` is neither a readable file nor a bundled architecture"))
}

fn resolve_evaluator(args: &EvaluatorArgs) -> Result<Box<dyn Evaluator>, String> {
    match args.evaluator.as_str() {
        "toy" => Ok(Box::new(ToyTrainerEvaluator::new(
            "spirals",
            args.trainer_seed,
        ))),
        "external" => {
            let cmd = args
                .evaluator_cmd
                .as_deref()
                .ok_or("--evaluator external requires --evaluator-cmd")?;
            let timeout = Duration::from_secs_f64(args.timeout.max(0.01));
            ExternalEvaluator::from_command_line(cmd, timeout)
                .map(|e| Box::new(e) as Box<dyn Evaluator>)
                .ok_or_else(|| "empty --evaluator-cmd".to_string())
        }
        name => SyntheticFn::from_name(name)
            .map(|f| Box::new(SyntheticEvaluator::new(f)) as Box<dyn Evaluator>)
            .ok_or_else(|| format!("unknown evaluator `{name}`")),
    }
}

/// Table-3-style rows for a configuration: (layer, parameter, value), where
/// the layer is split off names like `fc1_neurons` or `conv2_filter_size`.
fn config_rows(config: &Configuration) -> Vec<(String, String, String)> {
    config
        .iter()
        .map(|(name, value)| {
            let layer = name.split_once('_').and_then(|(prefix, rest)| {
                let has_digits = prefix.chars().any(|c| c.is_ascii_digit());
                let well_formed = !rest.is_empty()
                    && prefix.chars().all(|c| c.is_ascii_alphanumeric())
                    && prefix.chars().next().is_some_and(|c| c.is_ascii_alphabetic());
                (has_digits && well_formed).then(|| (prefix.to_string(), rest.to_string()))
            });
            match layer {
                Some((layer, param)) => (layer, param, value.to_string()),
                None => ("-".to_string(), name.clone(), value.to_string()),
            }
        })
        .collect()
}

fn print_config_table(config: &Configuration) {
    println!("  {:<10} {:<14} {}", "layer", "parameter", "value");
    for (layer, param, value) in config_rows(config) {
        println!("  {layer:<10} {param:<14} {value}");
    }
}

fn cmd_tune(strategy: Strategy, args: TuneArgs) -> i32 {
    let space = match (&args.space, &args.arch) {
        (Some(spec), _) => match resolve_space(spec) {
            Ok(s) => s,
            Err(e) => return usage_error(&e),
        },
        (None, Some(arch_spec)) => {
            let arch = match resolve_arch(arch_spec) {
                Ok(a) => a,
                Err(e) => return usage_error(&e),
            };
            match crate::arch::build_space_for_tail(&arch, args.k_max) {
                Ok(s) => s,
                Err(e) => return usage_error(&e.to_string()),
            }
        }
        (None, None) => return usage_error("--space (or --arch) is required"),
    };

    let mut evaluator = match resolve_evaluator(&args.evaluator) {
        Ok(e) => e,
        Err(e) => return usage_error(&e),
    };
    if let Some(arch_spec) = &args.arch {
        let arch = match resolve_arch(arch_spec) {
            Ok(a) => a,
            Err(e) => return usage_error(&e),
        };
        evaluator = Box::new(TailSurgeryEvaluator::new(arch, evaluator));
    }

    let defaults = match strategy {
        Strategy::BayesOpt => Budget::bayes_default(),
        Strategy::RandomSearch => Budget::random_default(),
    };
    let budget = match Budget::new(
        args.m0.unwrap_or(defaults.m0),
        args.n_total.unwrap_or(defaults.n_total),
    ) {
        Ok(b) => b,
        Err(e) => return usage_error(&e.to_string()),
    };

    let (mut run, mut writer, log_path) = if let Some(resume_path) = &args.resume {
        match resume_from_path(space, budget, strategy, args.seed, resume_path) {
            Ok((run, valid_bytes)) => {
                if valid_bytes == 0 {
                    match RunLogWriter::create(resume_path, &run) {
                        Ok(w) => (run, w, resume_path.clone()),
                        Err(e) => {
                            eprintln!("error: {e}");
                            return 2;
                        }
                    }
                } else {
                    match RunLogWriter::reopen(resume_path, valid_bytes) {
                        Ok(w) => (run, w, resume_path.clone()),
                        Err(e) => {
                            eprintln!("error: {e}");
                            return 2;
                        }
                    }
                }
            }
            Err(e) => {
                eprintln!("error: {e}");
                return 2;
            }
        }
    } else {
        let run = match TuningRun::init(space, budget, strategy, args.seed) {
            Ok(r) => r,
            Err(e) => return usage_error(&e.to_string()),
        };
        let path = args
            .log
            .clone()
            .unwrap_or_else(|| default_log_dir().join(format!("{}-{}.jsonl", strategy.name(), args.seed)));
        match RunLogWriter::create(&path, &run) {
            Ok(w) => (run, w, path),
            Err(e) => {
                eprintln!("error: {e}");
                return 2;
            }
        }
    };
    run = run
        .with_pool_size(args.pool_size)
        .with_epochs(args.evaluator.epochs);

    if args.format == OutputFormat::Human && !run.observations().is_empty() {
        println!(
            "resuming at observation {} of {}",
            run.observations().len(),
            budget.n_total
        );
    }

    while run.status() == RunStatus::Running {
        let stepped = match run.step(&*evaluator) {
            Ok(Some(obs)) => {
                if let Err(e) = writer.append(obs) {
                    eprintln!("error: {e}");
                    return 2;
                }
                Some((obs.index, obs.phase, obs.value))
            }
            Ok(None) => break,
            Err(e @ OptimizerError::EvaluatorFailed { .. }) => {
                eprintln!("error: {e} (partial log at {})", log_path.display());
                return 2;
            }
            Err(e) => {
                eprintln!("error: {e}");
                return 2;
            }
        };
        if let Some((index, phase, value)) = stepped {
            if args.format == OutputFormat::Human {
                println!(
                    "[{:>3}/{}] {:<6} value={:+.6} best={:+.6}",
                    index,
                    budget.n_total,
                    format!("{phase:?}").to_lowercase(),
                    value,
                    run.incumbent().map(|i| i.value).unwrap_or(f64::NAN),
                );
            }
        }
    }

    let incumbent = run.incumbent().cloned();
    match args.format {
        OutputFormat::Human => {
            match run.status() {
                RunStatus::Complete => println!("run complete: {} evaluations", run.observations().len()),
                RunStatus::Exhausted => println!(
                    "search space exhausted after {} evaluations",
                    run.observations().len()
                ),
                RunStatus::Running => {}
            }
            if let Some(inc) = &incumbent {
                println!("best value: {:+.6}", inc.value);
                println!("best configuration:");
                print_config_table(&inc.config);
            }
            println!("log: {}", log_path.display());
        }
        OutputFormat::Jsonl => {
            let result = serde_json::json!({
                "type": "result",
                "strategy": strategy.name(),
                "seed": args.seed,
                "evaluations": run.observations().len(),
                "exhausted": run.status() == RunStatus::Exhausted,
                "best_value": incumbent.as_ref().map(|i| i.value),
                "best_config": incumbent.as_ref().map(|i| &i.config),
                "log": log_path.to_string_lossy(),
            });
            println!("{result}");
        }
    }
    0
}

fn cmd_bench(args: BenchArgs) -> i32 {
    if args.repeats == 0 {
        return usage_error("--repeats must be at least 1");
    }
    let space = match resolve_space(&args.space) {
        Ok(s) => s,
        Err(e) => return usage_error(&e),
    };
    let evaluator = match resolve_evaluator(&args.evaluator) {
        Ok(e) => e,
        Err(e) => return usage_error(&e),
    };
    let bo_budget = match Budget::new(args.m0.unwrap_or(20), args.n_total.unwrap_or(50)) {
        Ok(b) => b,
        Err(e) => return usage_error(&e.to_string()),
    };
    if args.rs_evals <= bo_budget.m0.min(args.rs_evals.saturating_sub(1)) || args.rs_evals < 2 {
        return usage_error("--rs-evals must exceed 1");
    }
    let cfg = BenchConfig {
        repeats: args.repeats,
        base_seed: args.seed,
        bo_budget,
        rs_paper_evals: args.rs_evals,
        pool_size: args.pool_size,
        epochs: args.evaluator.epochs,
        log_dir: Some(args.log_dir.clone().unwrap_or_else(default_log_dir)),
    };
    let report = match run_bench(&space, &*evaluator, &cfg) {
        Ok(r) => r,
        Err(e @ OptimizerError::EvaluatorFailed { .. }) => {
            eprintln!("error: {e}");
            return 2;
        }
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };

    match args.format {
        OutputFormat::Human => {
            println!(
                "{:<9} {:<14} {:>4} {:>5} {:>12} {:>12} {:>12} {:>12}",
                "protocol", "strategy", "N", "runs", "median", "best", "q1", "q3"
            );
            for s in &report.summaries {
                println!(
                    "{:<9} {:<14} {:>4} {:>5} {:>12.6} {:>12.6} {:>12.6} {:>12.6}",
                    s.protocol, s.strategy.name(), s.n_evaluations, s.runs,
                    s.median, s.best, s.q1, s.q3
                );
            }
            println!();
            for r in &report.runs {
                println!(
                    "  {:<14} N={:<4} seed={:<4} best={:+.6}  {}",
                    r.strategy.name(),
                    r.n_evaluations,
                    r.seed,
                    r.best_value,
                    r.log_path.as_deref().unwrap_or("-"),
                );
            }
        }
        OutputFormat::Jsonl => {
            for r in &report.runs {
                let mut line = serde_json::to_value(r).expect("run serializes");
                line["type"] = "bench_run".into();
                println!("{line}");
            }
            for s in &report.summaries {
                let mut line = serde_json::to_value(s).expect("summary serializes");
                line["type"] = "bench_summary".into();
                println!("{line}");
            }
        }
    }
    0
}

fn cmd_report(args: ReportArgs) -> i32 {
    let content = match std::fs::read_to_string(&args.log) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", args.log.display());
            return 2;
        }
    };
    let parsed = match parse_log(&content) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };

    let mut trace: Vec<f64> = Vec::with_capacity(parsed.records.len());
    let mut best: Option<&crate::optimizer::LogRecord> = None;
    let mut counts = [0usize; 3];
    for record in &parsed.records {
        if best.is_none_or(|b| record.value > b.value) {
            best = Some(record);
        }
        trace.push(best.expect("just set").value);
        counts[match record.phase {
            Phase::Seed => 0,
            Phase::Bayes => 1,
            Phase::Random => 2,
        }] += 1;
    }

    match args.format {
        OutputFormat::Human => {
            println!(
                "run {} seed {} (m0 = {}, N = {}), {} observations",
                parsed.header.strategy.name(),
                parsed.header.seed,
                parsed.header.m0,
                parsed.header.n,
                parsed.records.len()
            );
            println!(
                "phases: seed {} / bayes {} / random {}",
                counts[0], counts[1], counts[2]
            );
            println!("incumbent trace:");
            for (record, best_so_far) in parsed.records.iter().zip(&trace) {
                println!(
                    "  [{:>3}] {:<6} value={:+.6} best={:+.6}",
                    record.index,
                    format!("{:?}", record.phase).to_lowercase(),
                    record.value,
                    best_so_far
                );
            }
            if let Some(b) = best {
                println!("best value: {:+.6} (observation {})", b.value, b.index);
                println!("best configuration:");
                print_config_table(&b.config);
            }
        }
        OutputFormat::Jsonl => {
            let line = serde_json::json!({
                "type": "report",
                "strategy": parsed.header.strategy.name(),
                "seed": parsed.header.seed,
                "m0": parsed.header.m0,
                "N": parsed.header.n,
                "observations": parsed.records.len(),
                "phase_counts": {
                    "seed": counts[0],
                    "bayes": counts[1],
                    "random": counts[2],
                },
                "incumbent_trace": trace,
                "best_value": best.map(|b| b.value),
                "best_index": best.map(|b| b.index),
                "best_config": best.map(|b| &b.config),
            });
            println!("{line}");
        }
    }
    0
}

fn cmd_shapes(args: ShapesArgs) -> i32 {
    let arch = match resolve_arch(&args.arch) {
        Ok(a) => a,
        Err(e) => return usage_error(&e),
    };
    let accounting = match arch.account() {
        Ok(a) => a,
        Err(mismatch) => {
            match args.format {
                OutputFormat::Human => eprintln!("shape mismatch: {mismatch}"),
                OutputFormat::Jsonl => {
                    let line = serde_json::json!({
                        "type": "mismatch",
                        "arch": arch.name,
                        "position": mismatch.position,
                        "detail": mismatch.detail,
                    });
                    println!("{line}");
                }
            }
            return 3;
        }
    };

    match args.format {
        OutputFormat::Human => {
            println!("{} (input {:?}, {} classes)", arch.name, arch.input_shape, arch.class_count);
            println!(
                "{:<4} {:<26} {:<16} {:>14} {:>16} {:>7}",
                "#", "layer", "output", "params", "flops", "frozen"
            );
            for l in &accounting.layers {
                println!(
                    "{:<4} {:<26} {:<16} {:>14} {:>16} {:>7}",
                    l.index,
                    l.label,
                    l.output.to_string(),
                    l.params,
                    l.flops,
                    l.frozen
                );
            }
            for a in &accounting.adapters {
                println!(
                    "  adapter on edge {} (merge at layer {}): {} ({} params, {} flops)",
                    a.edge, a.to, a.label, a.params, a.flops
                );
            }
            println!(
                "params: {} frozen + {} trainable = {}",
                accounting.params_frozen,
                accounting.params_trainable,
                accounting.params_total()
            );
            println!(
                "flops: {} total / {} in learned layers",
                accounting.flops_total, accounting.flops_learned
            );
        }
        OutputFormat::Jsonl => {
            let layers: Vec<serde_json::Value> = accounting
                .layers
                .iter()
                .map(|l| {
                    serde_json::json!({
                        "index": l.index,
                        "layer": l.label,
                        "output": [l.output.h, l.output.w, l.output.c],
                        "params": l.params,
                        "flops": l.flops,
                        "frozen": l.frozen,
                    })
                })
                .collect();
            let adapters: Vec<serde_json::Value> = accounting
                .adapters
                .iter()
                .map(|a| {
                    serde_json::json!({
                        "edge": a.edge,
                        "to": a.to,
                        "adapter": a.label,
                        "params": a.params,
                        "flops": a.flops,
                    })
                })
                .collect();
            let line = serde_json::json!({
                "type": "shapes",
                "arch": arch.name,
                "layers": layers,
                "adapters": adapters,
                "params_frozen": accounting.params_frozen,
                "params_trainable": accounting.params_trainable,
                "flops_total": accounting.flops_total,
                "flops_learned": accounting.flops_learned,
            });
            println!("{line}");
        }
    }
    0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_rows_split_layer_prefixes() {
        let cfg = Configuration::new()
            .with("fc1_neurons", 256.0)
            .with("conv2_filter_size", 3.0)
            .with("n_fc", 2i64)
            .with("depth", 1i64);
        let rows = config_rows(&cfg);
        let find = |p: &str| rows.iter().find(|(_, param, _)| param == p).unwrap().clone();
        assert_eq!(find("neurons").0, "fc1");
        assert_eq!(find("filter_size").0, "conv2");
        assert_eq!(find("n_fc").0, "-");
        assert_eq!(find("depth").0, "-");
    }
}
