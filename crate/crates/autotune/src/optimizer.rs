//! The sequential tuning loop and its append-only run log.
//!
//! A run evaluates `m0` uniform seed points, then (under the Bayesian
//! strategy) refits the kernel hyperparameters after every observation, fits
//! the surrogate on everything seen so far, and evaluates the Expected
//! Improvement proposal. The random-search baseline draws uniformly
//! (duplicate-suppressed) for the whole budget.
//!
//! Determinism and resume share one mechanism: the random draws for
//! observation `k` come from a dedicated stream of the run's seeded
//! generator, so reconstructing observations 1..k from the log and
//! continuing is indistinguishable from never having stopped. The log is one
//! JSON object per line: a header
//! `{space_hash, strategy, seed, m0, N, version}` followed by one record
//! `{index, phase, config, value, wall_time, meta}` per observation.

use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acquisition::{propose_next, AcquisitionError, Incumbent, DEFAULT_POOL_SIZE};
use crate::eval::{EvalRequest, Evaluator, DEFAULT_EPOCHS};
use crate::gp::{optimize_hyperparams, GpError, GpModel};
use crate::space::{Configuration, EncodedPoint, SearchSpace, SpaceError};

/// Log format version.
pub const LOG_VERSION: u32 = 1;
/// Resample budget when a uniform draw collides with an evaluated point.
const DUPLICATE_RESAMPLE_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    BayesOpt,
    RandomSearch,
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::BayesOpt => "bayes_opt",
            Strategy::RandomSearch => "random_search",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Seed,
    Bayes,
    Random,
}

/// Evaluation budget: `m0` uniform seed evaluations out of `n_total` total.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Budget {
    pub m0: usize,
    pub n_total: usize,
}

impl Budget {
    pub fn new(m0: usize, n_total: usize) -> Result<Self, OptimizerError> {
        let b = Budget { m0, n_total };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), OptimizerError> {
        if self.m0 >= 1 && self.m0 < self.n_total {
            Ok(())
        } else {
            Err(OptimizerError::InvalidBudget {
                m0: self.m0,
                n_total: self.n_total,
            })
        }
    }

    /// Default Bayesian budget: 20 seed points, 50 evaluations total.
    pub fn bayes_default() -> Self {
        Budget { m0: 20, n_total: 50 }
    }

    /// Default random-search budget: 100 evaluations.
    pub fn random_default() -> Self {
        Budget { m0: 20, n_total: 100 }
    }
}

/// One evaluated point of a run.
#[derive(Debug, Clone)]
pub struct Observation {
    pub index: usize,
    pub phase: Phase,
    pub config: Configuration,
    pub encoded: EncodedPoint,
    pub value: f64,
    pub wall_time: f64,
    pub meta: serde_json::Map<String, serde_json::Value>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Running,
    Complete,
    Exhausted,
}

#[derive(Debug, Error)]
pub enum OptimizerError {
    #[error("invalid budget: require 1 <= m0 < N, got m0 = {m0}, N = {n_total}")]
    InvalidBudget { m0: usize, n_total: usize },
    #[error("bench repeat count must be at least 1")]
    InvalidRepeats,
    #[error("search space has defects: {0}")]
    SpaceInvalid(String),
    #[error("run is not in the running state")]
    NotRunning,
    #[error("evaluator error at index {index} after retry: {reason}")]
    EvaluatorFailed { index: usize, reason: String },
    #[error("resume error after index {last_valid}: {detail}")]
    Resume { last_valid: usize, detail: String },
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Acquisition(#[from] AcquisitionError),
    #[error("log i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Sequential optimization state over one search space.
#[derive(Debug, Clone)]
pub struct TuningRun {
    space: SearchSpace,
    budget: Budget,
    strategy: Strategy,
    seed: u64,
    run_id: String,
    epochs: usize,
    pool_size: usize,
    observations: Vec<Observation>,
    evaluated: HashSet<Configuration>,
    incumbent: Option<Incumbent>,
    status: RunStatus,
}

impl TuningRun {
    /// Start an empty run. The space must validate and the budget must be
    /// coherent; the per-observation generator streams derive from `seed`.
    pub fn init(
        space: SearchSpace,
        budget: Budget,
        strategy: Strategy,
        seed: u64,
    ) -> Result<Self, OptimizerError> {
        budget.validate()?;
        let defects = space.validate();
        if !defects.is_empty() {
            let listing = defects
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join("; ");
            return Err(OptimizerError::SpaceInvalid(listing));
        }
        let run_id = format!("{}-{}", strategy.name(), seed);
        Ok(TuningRun {
            space,
            budget,
            strategy,
            seed,
            run_id,
            epochs: DEFAULT_EPOCHS,
            pool_size: DEFAULT_POOL_SIZE,
            observations: Vec::new(),
            evaluated: HashSet::new(),
            incumbent: None,
            status: RunStatus::Running,
        })
    }

    /// Candidate-pool size for proposals on large spaces. Not persisted in
    /// the log; resumed runs must be configured consistently.
    pub fn with_pool_size(mut self, pool_size: usize) -> Self {
        self.pool_size = pool_size.max(1);
        self
    }

    /// Epochs forwarded to the evaluator in each request.
    pub fn with_epochs(mut self, epochs: usize) -> Self {
        self.epochs = epochs;
        self
    }

    pub fn with_run_id(mut self, run_id: impl Into<String>) -> Self {
        self.run_id = run_id.into();
        self
    }

    pub fn space(&self) -> &SearchSpace {
        &self.space
    }

    pub fn budget(&self) -> Budget {
        self.budget
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn status(&self) -> RunStatus {
        self.status
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn incumbent(&self) -> Option<&Incumbent> {
        self.incumbent.as_ref()
    }

    /// Generator stream for observation `index`; depends only on the run
    /// seed and the index, never on wall-clock history.
    fn step_rng(&self, index: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64);
        rng
    }

    fn draw_unique(&self, rng: &mut ChaCha8Rng) -> Option<Configuration> {
        for _ in 0..DUPLICATE_RESAMPLE_ATTEMPTS {
            let c = self.space.sample_uniform(rng);
            if !self.evaluated.contains(&c) {
                return Some(c);
            }
        }
        None
    }

    fn next_config(&mut self, index: usize) -> Result<Option<(Configuration, Phase)>, OptimizerError> {
        let mut rng = self.step_rng(index);
        match self.strategy {
            Strategy::RandomSearch => Ok(self
                .draw_unique(&mut rng)
                .map(|c| (c, Phase::Random))
                .or_else(|| {
                    self.status = RunStatus::Exhausted;
                    None
                })),
            Strategy::BayesOpt if index <= self.budget.m0 => Ok(self
                .draw_unique(&mut rng)
                .map(|c| (c, Phase::Seed))
                .or_else(|| {
                    self.status = RunStatus::Exhausted;
                    None
                })),
            Strategy::BayesOpt => {
                let inputs: Vec<EncodedPoint> =
                    self.observations.iter().map(|o| o.encoded.clone()).collect();
                let targets: Vec<f64> = self.observations.iter().map(|o| o.value).collect();
                let params = optimize_hyperparams(&inputs, &targets);
                let prior_mean = targets.iter().sum::<f64>() / targets.len() as f64;
                let model = GpModel::fit(&inputs, &targets, prior_mean, params)?;
                let incumbent = self
                    .incumbent
                    .clone()
                    .expect("incumbent exists after the seed phase");
                match propose_next(
                    &model,
                    &self.space,
                    &incumbent,
                    &self.evaluated,
                    &mut rng,
                    self.pool_size,
                ) {
                    Ok(c) => Ok(Some((c, Phase::Bayes))),
                    Err(AcquisitionError::Exhausted) => {
                        self.status = RunStatus::Exhausted;
                        Ok(None)
                    }
                    Err(e) => Err(e.into()),
                }
            }
        }
    }

    /// Run one iteration: pick the next configuration (uniform during the
    /// seed phase, EI proposal afterwards; always uniform for random
    /// search), evaluate it with one retry on failure, append the
    /// observation and update the incumbent. Returns `None` when the space
    /// was exhausted instead.
    pub fn step<E: Evaluator + ?Sized>(
        &mut self,
        evaluator: &E,
    ) -> Result<Option<&Observation>, OptimizerError> {
        if self.status != RunStatus::Running {
            return Err(OptimizerError::NotRunning);
        }
        let index = self.observations.len() + 1;
        let Some((config, phase)) = self.next_config(index)? else {
            return Ok(None);
        };
        let config = self.space.canonicalize_config(&config)?;
        let encoded = self.space.encode(&config)?;

        let request = EvalRequest {
            run_id: self.run_id.clone(),
            index,
            config: config.clone(),
            epochs: self.epochs,
            architecture: None,
        };
        let mut evaluation = evaluator.evaluate(&request);
        let mut retried = false;
        if !(evaluation.response.is_ok() && evaluation.response.value.is_finite()) {
            retried = true;
            evaluation = evaluator.evaluate(&request);
        }
        if !(evaluation.response.is_ok() && evaluation.response.value.is_finite()) {
            let reason = evaluation
                .response
                .meta
                .get("error")
                .and_then(|v| v.as_str())
                .unwrap_or("evaluation failed")
                .to_string();
            return Err(OptimizerError::EvaluatorFailed { index, reason });
        }

        let mut meta = evaluation.response.meta;
        if retried {
            meta.insert("retried".into(), true.into());
        }
        let observation = Observation {
            index,
            phase,
            config: config.clone(),
            encoded,
            value: evaluation.response.value,
            wall_time: evaluation.wall_time,
            meta,
        };
        self.push_observation(observation);
        Ok(self.observations.last())
    }

    fn push_observation(&mut self, observation: Observation) {
        self.evaluated.insert(observation.config.clone());
        let better = self
            .incumbent
            .as_ref()
            .map_or(true, |inc| observation.value > inc.value);
        if better {
            self.incumbent = Some(Incumbent {
                config: observation.config.clone(),
                value: observation.value,
            });
        }
        self.observations.push(observation);
        if self.observations.len() >= self.budget.n_total {
            self.status = RunStatus::Complete;
        }
    }

    /// Step until the budget is spent or the space is exhausted.
    pub fn run_to_completion<E: Evaluator + ?Sized>(
        &mut self,
        evaluator: &E,
    ) -> Result<RunStatus, OptimizerError> {
        while self.status == RunStatus::Running {
            self.step(evaluator)?;
        }
        Ok(self.status)
    }

    // --- Persistence -------------------------------------------------------

    fn header(&self) -> LogHeader {
        LogHeader {
            space_hash: self.space.content_hash(),
            strategy: self.strategy,
            seed: self.seed,
            m0: self.budget.m0,
            n: self.budget.n_total,
            version: LOG_VERSION,
        }
    }

    pub fn header_line(&self) -> String {
        serde_json::to_string(&self.header()).expect("header serializes")
    }

    pub fn observation_line(observation: &Observation) -> String {
        serde_json::to_string(&LogRecord::from(observation)).expect("record serializes")
    }

    /// Write the whole log (header plus one line per observation).
    pub fn persist<W: Write>(&self, mut sink: W) -> Result<(), OptimizerError> {
        writeln!(sink, "{}", self.header_line())?;
        for obs in &self.observations {
            writeln!(sink, "{}", Self::observation_line(obs))?;
        }
        sink.flush()?;
        Ok(())
    }

    /// Reconstruct a run from log content. An empty source yields a fresh
    /// run with the given parameters; a populated one must match them (and
    /// the space hash). A truncated final line is dropped; corruption
    /// earlier in the log is an error naming the last valid index. Returns
    /// the run and the byte length of the valid log prefix.
    pub fn resume_from_str(
        space: SearchSpace,
        budget: Budget,
        strategy: Strategy,
        seed: u64,
        content: &str,
    ) -> Result<(Self, usize), OptimizerError> {
        if content.trim().is_empty() {
            let run = Self::init(space, budget, strategy, seed)?;
            return Ok((run, 0));
        }
        let mut run = Self::init(space, budget, strategy, seed)?;
        let parsed = parse_log(content)?;
        if parsed.header != run.header() {
            return Err(OptimizerError::Resume {
                last_valid: 0,
                detail: format!(
                    "header mismatch: log has {}, expected {}",
                    serde_json::to_string(&parsed.header).unwrap_or_default(),
                    run.header_line()
                ),
            });
        }

        for record in parsed.records {
            let last_valid = run.observations.len();
            if record.index != last_valid + 1 {
                return Err(OptimizerError::Resume {
                    last_valid,
                    detail: format!("non-consecutive index {} after {last_valid}", record.index),
                });
            }
            if run.observations.len() >= budget.n_total {
                return Err(OptimizerError::Resume {
                    last_valid,
                    detail: "more records than the budget allows".into(),
                });
            }
            let config = run.space.canonicalize_config(&record.config).map_err(|e| {
                OptimizerError::Resume {
                    last_valid,
                    detail: format!("record {}: {e}", record.index),
                }
            })?;
            let encoded = run.space.encode(&config).map_err(|e| OptimizerError::Resume {
                last_valid,
                detail: format!("record {}: {e}", record.index),
            })?;
            run.push_observation(Observation {
                index: record.index,
                phase: record.phase,
                config,
                encoded,
                value: record.value,
                wall_time: record.wall_time,
                meta: record.meta,
            });
        }
        Ok((run, parsed.valid_bytes))
    }
}

#[derive(Debug, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub space_hash: String,
    pub strategy: Strategy,
    pub seed: u64,
    pub m0: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub version: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogRecord {
    pub index: usize,
    pub phase: Phase,
    pub config: Configuration,
    pub value: f64,
    pub wall_time: f64,
    #[serde(default)]
    pub meta: serde_json::Map<String, serde_json::Value>,
}

impl From<&Observation> for LogRecord {
    fn from(o: &Observation) -> Self {
        LogRecord {
            index: o.index,
            phase: o.phase,
            config: o.config.clone(),
            value: o.value,
            wall_time: o.wall_time,
            meta: o.meta.clone(),
        }
    }
}

/// A parsed run log: the header, every complete record, and the byte length
/// of the valid prefix (a truncated final line is excluded).
#[derive(Debug)]
pub struct ParsedLog {
    pub header: LogHeader,
    pub records: Vec<LogRecord>,
    pub valid_bytes: usize,
}

/// Parse run-log content without a search space (configurations stay as
/// recorded). A truncated final line is tolerated and dropped; unreadable
/// content anywhere else is an error naming the last valid record index.
pub fn parse_log(content: &str) -> Result<ParsedLog, OptimizerError> {
    let mut lines: Vec<(usize, &str, bool)> = Vec::new(); // (offset, line, complete)
    let mut offset = 0;
    for piece in content.split_inclusive('\n') {
        let complete = piece.ends_with('\n');
        lines.push((offset, piece.trim_end_matches('\n'), complete));
        offset += piece.len();
    }
    if lines.is_empty() {
        return Err(OptimizerError::Resume {
            last_valid: 0,
            detail: "empty log".into(),
        });
    }

    let (_, header_text, header_complete) = lines[0];
    if !header_complete {
        return Err(OptimizerError::Resume {
            last_valid: 0,
            detail: "truncated header line".into(),
        });
    }
    let header: LogHeader =
        serde_json::from_str(header_text).map_err(|e| OptimizerError::Resume {
            last_valid: 0,
            detail: format!("unreadable header: {e}"),
        })?;

    let mut records = Vec::new();
    let mut valid_bytes = header_text.len() + 1;
    for (i, (line_offset, text, complete)) in lines.iter().enumerate().skip(1) {
        if text.trim().is_empty() {
            break;
        }
        let parsed: Result<LogRecord, _> = serde_json::from_str(text);
        let record = match parsed {
            Ok(r) if *complete => r,
            Ok(_) | Err(_) if i == lines.len() - 1 => break, // truncated tail
            Ok(_) => unreachable!("incomplete line can only be last"),
            Err(e) => {
                return Err(OptimizerError::Resume {
                    last_valid: records.len(),
                    detail: format!("unreadable record: {e}"),
                })
            }
        };
        records.push(record);
        valid_bytes = line_offset + text.len() + 1;
    }
    Ok(ParsedLog {
        header,
        records,
        valid_bytes,
    })
}

/// Incremental log writer: header on creation, one flushed line per
/// observation. Appending through a crash leaves at worst one truncated
/// final line, which resume drops.
pub struct RunLogWriter {
    sink: BufWriter<File>,
}

impl RunLogWriter {
    /// Create (or overwrite) a log at `path` and write the run's header and
    /// any observations it already holds.
    pub fn create(path: &Path, run: &TuningRun) -> Result<Self, OptimizerError> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir)?;
            }
        }
        let file = File::create(path)?;
        let mut writer = RunLogWriter {
            sink: BufWriter::new(file),
        };
        writeln!(writer.sink, "{}", run.header_line())?;
        for obs in run.observations() {
            writer.append(obs)?;
        }
        writer.sink.flush()?;
        Ok(writer)
    }

    /// Reopen a resumed log for appending, discarding any truncated tail
    /// beyond `valid_bytes`.
    pub fn reopen(path: &Path, valid_bytes: usize) -> Result<Self, OptimizerError> {
        let file = OpenOptions::new().read(true).write(true).open(path)?;
        file.set_len(valid_bytes as u64)?;
        let mut file = OpenOptions::new().append(true).open(path)?;
        file.flush()?;
        Ok(RunLogWriter {
            sink: BufWriter::new(file),
        })
    }

    pub fn append(&mut self, observation: &Observation) -> Result<(), OptimizerError> {
        writeln!(self.sink, "{}", TuningRun::observation_line(observation))?;
        self.sink.flush()?;
        Ok(())
    }
}

/// Load a run from a log file. See [`TuningRun::resume_from_str`].
pub fn resume_from_path(
    space: SearchSpace,
    budget: Budget,
    strategy: Strategy,
    seed: u64,
    path: &Path,
) -> Result<(TuningRun, usize), OptimizerError> {
    let mut content = String::new();
    match File::open(path) {
        Ok(mut f) => {
            f.read_to_string(&mut content)?;
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
        Err(e) => return Err(e.into()),
    }
    TuningRun::resume_from_str(space, budget, strategy, seed, &content)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{EvalResponse, Evaluation, SyntheticEvaluator, SyntheticFn};
    use crate::space::{ParamDomain, ParamSpec};
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn mq_space() -> SearchSpace {
        crate::builtin::mixed_quadratic_space()
    }

    fn mq_eval() -> SyntheticEvaluator {
        SyntheticEvaluator::new(SyntheticFn::MixedQuadratic)
    }

    fn tiny_space(n: i64) -> SearchSpace {
        SearchSpace::new(vec![ParamSpec::new(
            "x",
            ParamDomain::IntegerRange { lo: 1, hi: n },
        )])
    }

    /// Deterministic objective for tiny spaces.
    struct TinyEval;
    impl Evaluator for TinyEval {
        fn evaluate(&self, request: &EvalRequest) -> Evaluation {
            let x = request.config.get("x").unwrap().as_f64().unwrap();
            Evaluation::instant(EvalResponse::ok((x * 0.817).sin()))
        }
    }

    #[test]
    fn paper_default_budgets() {
        assert_eq!(Budget::bayes_default(), Budget { m0: 20, n_total: 50 });
        assert_eq!(Budget::random_default().n_total, 100);
    }

    #[test]
    fn zero_seed_budget_is_rejected() {
        assert!(matches!(
            Budget::new(0, 50),
            Err(OptimizerError::InvalidBudget { .. })
        ));
        assert!(matches!(
            Budget::new(50, 50),
            Err(OptimizerError::InvalidBudget { .. })
        ));
    }

    #[test]
    fn invalid_space_is_rejected_at_init() {
        let bad = SearchSpace::new(vec![
            ParamSpec::new("a", ParamDomain::IntegerRange { lo: 0, hi: 1 }),
            ParamSpec::new("a", ParamDomain::IntegerRange { lo: 0, hi: 1 }),
        ]);
        assert!(matches!(
            TuningRun::init(bad, Budget::bayes_default(), Strategy::BayesOpt, 0),
            Err(OptimizerError::SpaceInvalid(_))
        ));
    }

    #[test]
    fn first_step_is_a_uniform_seed_draw() {
        let mut run = TuningRun::init(
            mq_space(),
            Budget::new(2, 4).unwrap(),
            Strategy::BayesOpt,
            1,
        )
        .unwrap();
        let obs = run.step(&mq_eval()).unwrap().unwrap();
        assert_eq!(obs.phase, Phase::Seed);
        assert_eq!(obs.index, 1);
    }

    #[test]
    fn minimal_bayes_budget_runs_exactly_one_proposal() {
        let mut run = TuningRun::init(
            mq_space(),
            Budget::new(1, 2).unwrap(),
            Strategy::BayesOpt,
            3,
        )
        .unwrap();
        run.run_to_completion(&mq_eval()).unwrap();
        assert_eq!(run.status(), RunStatus::Complete);
        let phases: Vec<Phase> = run.observations().iter().map(|o| o.phase).collect();
        assert_eq!(phases, vec![Phase::Seed, Phase::Bayes]);
    }

    #[test]
    fn completed_run_has_exact_budget_and_seed_phase_cardinality() {
        let budget = Budget::new(5, 12).unwrap();
        let mut run = TuningRun::init(mq_space(), budget, Strategy::BayesOpt, 7).unwrap();
        run.run_to_completion(&mq_eval()).unwrap();
        assert_eq!(run.observations().len(), 12);
        let seeds = run
            .observations()
            .iter()
            .filter(|o| o.phase == Phase::Seed)
            .count();
        assert_eq!(seeds, 5);
        assert!(run
            .observations()
            .iter()
            .all(|o| o.phase != Phase::Random));
    }

    #[test]
    fn incumbent_is_a_non_decreasing_running_maximum() {
        for strategy in [Strategy::BayesOpt, Strategy::RandomSearch] {
            let mut run = TuningRun::init(
                mq_space(),
                Budget::new(4, 15).unwrap(),
                strategy,
                11,
            )
            .unwrap();
            let eval = mq_eval();
            let mut best = f64::NEG_INFINITY;
            while run.status() == RunStatus::Running {
                run.step(&eval).unwrap();
                let inc = run.incumbent().unwrap().value;
                assert!(inc >= best);
                best = inc;
                let running_max = run
                    .observations()
                    .iter()
                    .map(|o| o.value)
                    .fold(f64::NEG_INFINITY, f64::max);
                assert_eq!(inc, running_max);
            }
        }
    }

    #[test]
    fn same_seed_gives_bit_identical_observation_sequences() {
        let run_once = || {
            let mut run = TuningRun::init(
                mq_space(),
                Budget::new(5, 14).unwrap(),
                Strategy::BayesOpt,
                42,
            )
            .unwrap();
            run.run_to_completion(&mq_eval()).unwrap();
            let mut log = Vec::new();
            run.persist(&mut log).unwrap();
            String::from_utf8(log).unwrap()
        };
        assert_eq!(run_once(), run_once());
    }

    #[test]
    fn no_duplicate_configurations_within_a_run() {
        for strategy in [Strategy::BayesOpt, Strategy::RandomSearch] {
            let mut run = TuningRun::init(
                mq_space(),
                Budget::new(6, 25).unwrap(),
                strategy,
                5,
            )
            .unwrap();
            run.run_to_completion(&mq_eval()).unwrap();
            let set: HashSet<&Configuration> =
                run.observations().iter().map(|o| &o.config).collect();
            assert_eq!(set.len(), run.observations().len());
        }
    }

    #[test]
    fn tiny_space_exhausts_cleanly_under_random_search() {
        let mut run = TuningRun::init(
            tiny_space(6),
            Budget::new(1, 10).unwrap(),
            Strategy::RandomSearch,
            2,
        )
        .unwrap();
        run.run_to_completion(&TinyEval).unwrap();
        assert_eq!(run.status(), RunStatus::Exhausted);
        assert_eq!(run.observations().len(), 6);
    }

    #[test]
    fn tiny_space_exhausts_cleanly_under_bayes() {
        let mut run = TuningRun::init(
            tiny_space(6),
            Budget::new(2, 10).unwrap(),
            Strategy::BayesOpt,
            2,
        )
        .unwrap();
        run.run_to_completion(&TinyEval).unwrap();
        assert_eq!(run.status(), RunStatus::Exhausted);
        assert_eq!(run.observations().len(), 6);
    }

    /// Fails the first `failures` evaluations, then succeeds.
    struct FlakyEval {
        failures: usize,
        calls: AtomicUsize,
    }

    impl Evaluator for FlakyEval {
        fn evaluate(&self, _request: &EvalRequest) -> Evaluation {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.failures {
                Evaluation::instant(EvalResponse::failed("transient"))
            } else {
                Evaluation::instant(EvalResponse::ok(0.5))
            }
        }
    }

    #[test]
    fn single_failure_is_retried_and_recorded() {
        let eval = FlakyEval {
            failures: 1,
            calls: AtomicUsize::new(0),
        };
        let mut run = TuningRun::init(
            tiny_space(50),
            Budget::new(1, 3).unwrap(),
            Strategy::RandomSearch,
            1,
        )
        .unwrap();
        let obs = run.step(&eval).unwrap().unwrap();
        assert_eq!(obs.meta.get("retried"), Some(&true.into()));
        assert_eq!(obs.value, 0.5);
    }

    #[test]
    fn double_failure_aborts_preserving_observations() {
        let eval = FlakyEval {
            failures: 3,
            calls: AtomicUsize::new(0),
        };
        let mut run = TuningRun::init(
            tiny_space(50),
            Budget::new(1, 3).unwrap(),
            Strategy::RandomSearch,
            1,
        )
        .unwrap();
        match run.step(&eval) {
            Err(OptimizerError::EvaluatorFailed { index: 1, reason }) => {
                assert_eq!(reason, "transient");
            }
            other => panic!("expected EvaluatorFailed, got {other:?}"),
        }
        assert!(run.observations().is_empty());
        // The run can still be persisted (the log is preserved).
        let mut log = Vec::new();
        run.persist(&mut log).unwrap();
        assert!(!log.is_empty());
    }

    #[test]
    fn record_line_format_is_exact() {
        let space = tiny_space(9);
        let mut run = TuningRun::init(
            space,
            Budget::new(1, 3).unwrap(),
            Strategy::RandomSearch,
            0,
        )
        .unwrap();
        run.step(&TinyEval).unwrap();
        let obs = &run.observations()[0];
        let line = TuningRun::observation_line(obs);
        let expected = format!(
            r#"{{"index":1,"phase":"random","config":{{"x":{}}},"value":{},"wall_time":0.0,"meta":{{}}}}"#,
            obs.config.get("x").unwrap(),
            serde_json::to_string(&obs.value).unwrap(),
        );
        assert_eq!(line, expected);
        let header: serde_json::Value = serde_json::from_str(&run.header_line()).unwrap();
        assert_eq!(header["strategy"], "random_search");
        assert_eq!(header["m0"], 1);
        assert_eq!(header["N"], 3);
        assert_eq!(header["version"], 1);
    }

    #[test]
    fn persist_resume_complete_round_trip() {
        let mut run = TuningRun::init(
            mq_space(),
            Budget::new(3, 8).unwrap(),
            Strategy::BayesOpt,
            13,
        )
        .unwrap();
        run.run_to_completion(&mq_eval()).unwrap();
        let mut log = Vec::new();
        run.persist(&mut log).unwrap();
        let content = String::from_utf8(log).unwrap();

        let (resumed, valid) = TuningRun::resume_from_str(
            mq_space(),
            Budget::new(3, 8).unwrap(),
            Strategy::BayesOpt,
            13,
            &content,
        )
        .unwrap();
        assert_eq!(valid, content.len());
        assert_eq!(resumed.status(), RunStatus::Complete);
        assert_eq!(resumed.observations().len(), 8);
        assert_eq!(
            resumed.incumbent().unwrap().config,
            run.incumbent().unwrap().config
        );
        let mut replay = Vec::new();
        resumed.persist(&mut replay).unwrap();
        assert_eq!(String::from_utf8(replay).unwrap(), content);
    }

    #[test]
    fn interrupted_resume_continues_identically() {
        let budget = Budget::new(4, 12).unwrap();
        let eval = mq_eval();

        let mut uninterrupted =
            TuningRun::init(mq_space(), budget, Strategy::BayesOpt, 99).unwrap();
        uninterrupted.run_to_completion(&eval).unwrap();
        let mut full_log = Vec::new();
        uninterrupted.persist(&mut full_log).unwrap();

        for cut in [1usize, 5, 9] {
            let mut partial = TuningRun::init(mq_space(), budget, Strategy::BayesOpt, 99).unwrap();
            for _ in 0..cut {
                partial.step(&eval).unwrap();
            }
            let mut partial_log = Vec::new();
            partial.persist(&mut partial_log).unwrap();

            let (mut resumed, _) = TuningRun::resume_from_str(
                mq_space(),
                budget,
                Strategy::BayesOpt,
                99,
                &String::from_utf8(partial_log).unwrap(),
            )
            .unwrap();
            resumed.run_to_completion(&eval).unwrap();
            let mut resumed_log = Vec::new();
            resumed.persist(&mut resumed_log).unwrap();
            assert_eq!(resumed_log, full_log, "cut at {cut}");
        }
    }

    #[test]
    fn truncated_final_line_is_dropped() {
        let mut run = TuningRun::init(
            tiny_space(30),
            Budget::new(1, 5).unwrap(),
            Strategy::RandomSearch,
            4,
        )
        .unwrap();
        run.run_to_completion(&TinyEval).unwrap();
        let mut log = Vec::new();
        run.persist(&mut log).unwrap();
        let content = String::from_utf8(log).unwrap();
        let cut = content.len() - 7;
        let (resumed, valid) = TuningRun::resume_from_str(
            tiny_space(30),
            Budget::new(1, 5).unwrap(),
            Strategy::RandomSearch,
            4,
            &content[..cut],
        )
        .unwrap();
        assert_eq!(resumed.observations().len(), 4);
        assert!(valid <= cut);
        assert!(content[..valid].ends_with('\n'));
    }

    #[test]
    fn corrupt_middle_line_reports_last_valid_index() {
        let mut run = TuningRun::init(
            tiny_space(30),
            Budget::new(1, 4).unwrap(),
            Strategy::RandomSearch,
            4,
        )
        .unwrap();
        run.run_to_completion(&TinyEval).unwrap();
        let mut log = Vec::new();
        run.persist(&mut log).unwrap();
        let content = String::from_utf8(log).unwrap();
        let mut lines: Vec<&str> = content.lines().collect();
        lines[2] = "{broken json";
        let mangled = lines.join("\n") + "\n";
        match TuningRun::resume_from_str(
            tiny_space(30),
            Budget::new(1, 4).unwrap(),
            Strategy::RandomSearch,
            4,
            &mangled,
        ) {
            Err(OptimizerError::Resume { last_valid, .. }) => assert_eq!(last_valid, 1),
            other => panic!("expected resume error, got {other:?}"),
        }
    }

    #[test]
    fn empty_log_is_a_fresh_run() {
        let (run, valid) = TuningRun::resume_from_str(
            tiny_space(5),
            Budget::new(1, 3).unwrap(),
            Strategy::RandomSearch,
            0,
            "",
        )
        .unwrap();
        assert_eq!(valid, 0);
        assert!(run.observations().is_empty());
        assert_eq!(run.status(), RunStatus::Running);
    }

    #[test]
    fn mismatched_header_is_a_resume_error() {
        let mut run = TuningRun::init(
            tiny_space(5),
            Budget::new(1, 3).unwrap(),
            Strategy::RandomSearch,
            0,
        )
        .unwrap();
        run.run_to_completion(&TinyEval).unwrap();
        let mut log = Vec::new();
        run.persist(&mut log).unwrap();
        let content = String::from_utf8(log).unwrap();
        // Different space: hash mismatch.
        let err = TuningRun::resume_from_str(
            tiny_space(6),
            Budget::new(1, 3).unwrap(),
            Strategy::RandomSearch,
            0,
            &content,
        )
        .unwrap_err();
        assert!(matches!(err, OptimizerError::Resume { .. }));
    }
}
