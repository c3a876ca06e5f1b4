//! Run orchestration: turns a [`RunConfig`] into a populated run directory,
//! replays runs for landscape probing, and drives the grouping solvers over
//! matrix files.
//!
//! Artifact layout of a run directory:
//! - `config.toml` — canonical config, written before anything else
//! - `params.bin` / `params.json` — final parameter checkpoint
//! - `steps.csv` — per-step candidate scores and selections
//! - `losses.csv` — per-epoch mean task losses
//! - `summary.json` — run summary including the config hash
//! - `transference_run.csv` (+ sidecar), `transference_epoch_NNN.csv` —
//!   measure mode only
//!
//! All writes are atomic (temp file + rename).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{DatasetSection, RunConfig};
use crate::datasets::{self, container, Dataset, TaskKind, TrainBatcher};
use crate::error::{Error, Result};
use crate::grouping::{
    solve_branch_and_bound_with_stats, solve_exhaustive_with_stats, GroupingPlan, SolveStats,
};
use crate::io_util;
use crate::it_mtl::{self, mechanism_rng, RunMode, StepLog, TrainConfig, TrainRun};
use crate::landscape::{self, LandscapeMeta};
use crate::linalg;
use crate::mechanisms::GradientCandidate;
use crate::net::{
    Batch, BatchProvider, DenseNet, Layout, LossKind, MultiTaskModel, OptimizerState, ParamSet,
    QuadraticModel, TaskGradient,
};
use crate::seed::{derive_seed, SALT_DATA, SALT_INIT, SALT_LANDSCAPE, SALT_MECHANISM};
use crate::transference::{self, matrix_io, normalize};

/// The two engine backends a run can use.
#[derive(Debug, Clone)]
pub enum ModelKind {
    Dense(DenseNet),
    Quadratic(QuadraticModel),
}

impl MultiTaskModel for ModelKind {
    fn num_tasks(&self) -> usize {
        match self {
            ModelKind::Dense(m) => m.num_tasks(),
            ModelKind::Quadratic(m) => m.num_tasks(),
        }
    }
    fn layout(&self) -> Layout {
        match self {
            ModelKind::Dense(m) => m.layout(),
            ModelKind::Quadratic(m) => m.layout(),
        }
    }
    fn forward_losses(&self, params: &ParamSet, batch: &Batch) -> Result<Vec<f64>> {
        match self {
            ModelKind::Dense(m) => m.forward_losses(params, batch),
            ModelKind::Quadratic(m) => m.forward_losses(params, batch),
        }
    }
    fn task_gradients(&self, params: &ParamSet, batch: &Batch) -> Result<Vec<TaskGradient>> {
        match self {
            ModelKind::Dense(m) => m.task_gradients(params, batch),
            ModelKind::Quadratic(m) => m.task_gradients(params, batch),
        }
    }
}

/// A validated, fully materialized run: dataset loaded or generated, model
/// built, parameters initialized, candidates parsed.
pub struct PreparedRun {
    pub config: RunConfig,
    pub hash: String,
    pub dataset: Dataset,
    pub model: ModelKind,
    pub params: ParamSet,
    pub optimizer: OptimizerState,
    pub candidates: Vec<GradientCandidate>,
}

pub fn prepare(config: &RunConfig) -> Result<PreparedRun> {
    config.validate()?;
    let dataset = match &config.dataset {
        DatasetSection::Path { path } => container::read(path)?,
        DatasetSection::Inline(spec) => datasets::generate(spec)?,
    };
    let model = build_model(config, &dataset)?;
    let layout = model.layout();
    let params = ParamSet::init_uniform(layout.clone(), derive_seed(config.run.seed, SALT_INIT));
    let optimizer = OptimizerState::new(&config.optimizer, &layout)?;
    let candidates = config.parsed_candidates()?;
    for candidate in &candidates {
        candidate.check_tasks(model.num_tasks())?;
    }
    Ok(PreparedRun {
        config: config.clone(),
        hash: config.content_hash()?,
        dataset,
        model,
        params,
        optimizer,
        candidates,
    })
}

fn build_model(config: &RunConfig, dataset: &Dataset) -> Result<ModelKind> {
    if dataset.quadratic.is_some() {
        if config.model.is_some() {
            return Err(Error::Config(
                "random-quadratic runs use closed-form losses; drop the [model] section".into(),
            ));
        }
        return Ok(ModelKind::Quadratic(datasets::quadratic::model_from(dataset)?));
    }
    let spec = config
        .model
        .clone()
        .ok_or_else(|| Error::Config("tabular datasets need a [model] section".into()))?;
    if spec.input_dim != dataset.input_dim {
        return Err(Error::Config(format!(
            "model input_dim {} does not match dataset input_dim {}",
            spec.input_dim, dataset.input_dim
        )));
    }
    if spec.tasks.len() != dataset.num_tasks() {
        return Err(Error::Config(format!(
            "model has {} tasks, dataset has {}",
            spec.tasks.len(),
            dataset.num_tasks()
        )));
    }
    let net = DenseNet::new(spec)?;
    for (i, (task_kind, out_dim)) in dataset.task_kinds.iter().zip(net.out_dims()).enumerate() {
        match task_kind {
            TaskKind::Classification { classes } => {
                if net.spec().tasks[i].loss != LossKind::CrossEntropy || out_dim != classes {
                    return Err(Error::Config(format!(
                        "task {i} is {classes}-way classification; its head must end at width \
                         {classes} with cross_entropy loss"
                    )));
                }
            }
            TaskKind::Regression { dim } => {
                if net.spec().tasks[i].loss != LossKind::Mse || out_dim != dim {
                    return Err(Error::Config(format!(
                        "task {i} is {dim}-dim regression; its head must end at width {dim} with \
                         mse loss"
                    )));
                }
            }
        }
    }
    Ok(ModelKind::Dense(net))
}

/// Summary written to `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub mode: RunMode,
    pub dataset_kind: String,
    pub tasks: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub total_steps: usize,
    /// Mean per-task losses of the final epoch (empty for zero-epoch runs).
    pub final_epoch_losses: Vec<f64>,
    /// Candidate id -> times chosen, id-sorted.
    pub chosen_histogram: Vec<(String, usize)>,
    pub config_sha256: String,
}

fn ensure_fresh_dir(dir: &Path) -> Result<()> {
    if dir.exists() {
        let mut entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        if entries.next().is_some() {
            return Err(Error::Config(format!(
                "output directory {} already exists and is not empty",
                dir.display()
            )));
        }
    } else {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

fn train_config(prepared: &PreparedRun, record_snapshots: bool) -> TrainConfig {
    TrainConfig {
        mode: prepared.config.run.mode,
        epochs: prepared.config.run.epochs,
        candidates: prepared.candidates.clone(),
        mech_seed: derive_seed(prepared.config.run.seed, SALT_MECHANISM),
        record_snapshots,
    }
}

fn batcher<'a>(prepared: &'a PreparedRun) -> Result<TrainBatcher<'a>> {
    TrainBatcher::new(
        &prepared.dataset,
        prepared.config.run.batch_size,
        derive_seed(prepared.config.run.seed, SALT_DATA),
    )
}

/// Executes the configured run and writes all artifacts into `out_dir`.
pub fn execute_train(config: &RunConfig, out_dir: &Path) -> Result<TrainSummary> {
    let prepared = prepare(config)?;
    ensure_fresh_dir(out_dir)?;
    // The config lands on disk before the run starts.
    let canonical = prepared.config.canonical_toml()?;
    io_util::write_atomic(&out_dir.join("config.toml"), canonical.as_bytes())?;

    let provider = batcher(&prepared)?;
    let run = it_mtl::train(
        &prepared.model,
        &provider,
        prepared.params.clone(),
        prepared.optimizer.clone(),
        &train_config(&prepared, false),
    )?;
    write_artifacts(&prepared, &run, out_dir)
}

fn write_artifacts(prepared: &PreparedRun, run: &TrainRun, out_dir: &Path) -> Result<TrainSummary> {
    let hash = &prepared.hash;
    run.params.save(
        &out_dir.join("params.bin"),
        &out_dir.join("params.json"),
        Some(hash),
    )?;
    it_mtl::write_step_logs(&out_dir.join("steps.csv"), &run.step_logs)?;
    write_loss_curves(&out_dir.join("losses.csv"), &run.epoch_losses)?;

    if !run.records.is_empty() {
        let m = prepared.model.num_tasks();
        let (epochs, run_matrix) = transference::aggregate(&run.records, m, run.steps_per_epoch)?;
        let meta = |kind: &str, epoch: Option<usize>| matrix_io::MatrixMeta {
            kind: kind.into(),
            epoch,
            seed: prepared.config.run.seed,
            learning_rate: prepared.config.optimizer.learning_rate,
            steps: run.step_logs.len(),
            config_sha256: Some(hash.clone()),
        };
        matrix_io::write_matrix(
            &out_dir.join("transference_run.csv"),
            &run_matrix.scores,
            Some(&meta("run", None)),
        )?;
        for epoch_matrix in &epochs {
            matrix_io::write_matrix(
                &out_dir.join(format!("transference_epoch_{:03}.csv", epoch_matrix.epoch)),
                &epoch_matrix.scores,
                Some(&meta("epoch", Some(epoch_matrix.epoch))),
            )?;
        }
    }

    let mut histogram: BTreeMap<String, usize> = BTreeMap::new();
    for log in &run.step_logs {
        *histogram.entry(log.chosen_id().to_string()).or_default() += 1;
    }
    let summary = TrainSummary {
        mode: prepared.config.run.mode,
        dataset_kind: prepared.dataset.spec.kind().to_string(),
        tasks: prepared.model.num_tasks(),
        seed: prepared.config.run.seed,
        learning_rate: prepared.config.optimizer.learning_rate,
        epochs: prepared.config.run.epochs,
        steps_per_epoch: run.steps_per_epoch,
        total_steps: run.step_logs.len(),
        final_epoch_losses: run.epoch_losses.last().cloned().unwrap_or_default(),
        chosen_histogram: histogram.into_iter().collect(),
        config_sha256: hash.clone(),
    };
    let json = serde_json::to_string_pretty(&summary)
        .map_err(|e| Error::Config(format!("summary serialization failed: {e}")))?;
    io_util::write_atomic(&out_dir.join("summary.json"), json.as_bytes())?;
    Ok(summary)
}

fn write_loss_curves(path: &Path, epoch_losses: &[Vec<f64>]) -> Result<()> {
    let mut writer = csv::WriterBuilder::new().from_writer(Vec::new());
    let tasks = epoch_losses.first().map_or(0, Vec::len);
    let mut header = vec!["epoch".to_string()];
    header.extend((0..tasks).map(|t| format!("task_{t}")));
    writer.write_record(&header).map_err(|e| Error::parse(path, e.to_string()))?;
    for (epoch, losses) in epoch_losses.iter().enumerate() {
        let mut row = vec![epoch.to_string()];
        row.extend(losses.iter().map(|l| format!("{l:.16e}")));
        writer.write_record(&row).map_err(|e| Error::parse(path, e.to_string()))?;
    }
    let bytes = writer.into_inner().map_err(|e| Error::parse(path, e.to_string()))?;
    io_util::write_atomic(path, &bytes)
}

/// Generates a dataset spec into an `.mtds` container. Idempotent: the same
/// spec always writes the same bytes.
pub fn execute_gen(spec: &crate::datasets::DatasetSpec, out_path: &Path) -> Result<()> {
    let dataset = datasets::generate(spec)?;
    container::write(&dataset, out_path)
}

/// When a landscape replay halts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Trigger {
    /// Probe the state entering this step (0 = initial state).
    Step(usize),
    /// First step where some single-task candidate's exact total
    /// transference exceeds the combined candidate's.
    SingleBeatsCombined,
}

impl Trigger {
    pub fn parse(text: &str) -> Result<Self> {
        let text = text.trim();
        if text == "single-beats-combined" {
            return Ok(Trigger::SingleBeatsCombined);
        }
        if let Some(raw) = text.strip_prefix("step=") {
            let step = raw
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("bad step in trigger '{text}'")))?;
            return Ok(Trigger::Step(step));
        }
        Err(Error::Config(format!(
            "unknown trigger '{text}'; expected 'step=N' or 'single-beats-combined'"
        )))
    }
}

/// Landscape probe request.
#[derive(Debug, Clone)]
pub enum ProbeKind {
    OneD { candidate: Option<String>, samples: usize, extent: f64 },
    TwoD { samples: usize, range: f64, seed: Option<u64> },
}

struct ReplayHalt {
    params: ParamSet,
    optimizer: OptimizerState,
    batch: Batch,
    step: usize,
    best_single: Option<String>,
}

fn single_vs_combined(log: &StepLog) -> Option<(f64, f64, String)> {
    let mut best_single: Option<(f64, String)> = None;
    let mut combined: Option<f64> = None;
    for score in &log.scores {
        if score.id == "combined" {
            combined = Some(score.score);
        } else if score.id.starts_with("subset:{") && !score.id.contains(',') {
            if best_single.as_ref().map_or(true, |(s, _)| score.score > *s) {
                best_single = Some((score.score, score.id.clone()));
            }
        }
    }
    match (best_single, combined) {
        (Some((s, id)), Some(c)) => Some((s, c, id)),
        _ => None,
    }
}

/// Replays a prepared run until the trigger fires, returning the pre-step
/// state of the triggering step.
fn replay_until(prepared: &PreparedRun, trigger: &Trigger) -> Result<ReplayHalt> {
    let cfg = train_config(prepared, false);
    if matches!(trigger, Trigger::SingleBeatsCombined)
        && !matches!(cfg.mode, RunMode::Measure | RunMode::ItMtlExact)
    {
        return Err(Error::Config(
            "trigger single-beats-combined needs exact candidate scores; run in measure or \
             it-mtl-exact mode"
                .into(),
        ));
    }
    let provider = batcher(prepared)?;
    let mut params = prepared.params.clone();
    let mut opt = prepared.optimizer.clone();
    let mut step = 0usize;
    let mut best_margin: Option<(f64, usize)> = None;
    // Probing the initial state works even for zero-epoch runs.
    if matches!(trigger, Trigger::Step(0)) {
        let batch = provider
            .batches(0)
            .into_iter()
            .next()
            .ok_or_else(|| Error::Config("batch provider produced an empty epoch".into()))?;
        return Ok(ReplayHalt { params, optimizer: opt, batch, step: 0, best_single: None });
    }
    for epoch in 0..cfg.epochs {
        for batch in provider.batches(epoch) {
            if let Trigger::Step(n) = trigger {
                if step == *n {
                    return Ok(ReplayHalt {
                        params,
                        optimizer: opt,
                        batch,
                        step,
                        best_single: None,
                    });
                }
            }
            let pre_params = params.clone();
            let pre_opt = opt.clone();
            let (log, _) = it_mtl::run_step(&prepared.model, &mut params, &mut opt, &batch, &cfg, step)?;
            if matches!(trigger, Trigger::SingleBeatsCombined) {
                match single_vs_combined(&log) {
                    Some((single, combined, id)) => {
                        let margin = single - combined;
                        if best_margin.map_or(true, |(m, _)| margin > m) {
                            best_margin = Some((margin, step));
                        }
                        if single > combined {
                            return Ok(ReplayHalt {
                                params: pre_params,
                                optimizer: pre_opt,
                                batch,
                                step,
                                best_single: Some(id),
                            });
                        }
                    }
                    None => {
                        return Err(Error::Config(
                            "run's candidate set lacks single-task and combined scores needed by \
                             the trigger"
                                .into(),
                        ))
                    }
                }
            }
            step += 1;
        }
    }
    match trigger {
        Trigger::Step(n) => Err(Error::TriggerNotFired(format!(
            "run has only {step} steps, trigger wanted step {n}"
        ))),
        Trigger::SingleBeatsCombined => {
            let detail = match best_margin {
                Some((margin, at)) => {
                    format!("scanned {step} steps; best single-minus-combined margin {margin:.3e} at step {at}")
                }
                None => format!("scanned {step} steps"),
            };
            Err(Error::TriggerNotFired(detail))
        }
    }
}

/// Replays the run stored in `run_dir` to the trigger and probes the loss
/// landscape there. Grid CSVs land in `out_dir`.
pub fn execute_landscape(
    run_dir: &Path,
    trigger: &Trigger,
    kind: &ProbeKind,
    out_dir: &Path,
) -> Result<LandscapeMeta> {
    let config = RunConfig::from_path(&run_dir.join("config.toml"))?;
    let prepared = prepare(&config)?;
    let halt = replay_until(&prepared, trigger)?;
    ensure_fresh_dir(out_dir)?;
    let mech_seed = derive_seed(prepared.config.run.seed, SALT_MECHANISM);

    let meta = match kind {
        ProbeKind::OneD { candidate, samples, extent } => {
            let id = candidate
                .clone()
                .or(halt.best_single.clone())
                .unwrap_or_else(|| "combined".to_string());
            let parsed = GradientCandidate::parse(&id)?;
            parsed.check_tasks(prepared.model.num_tasks())?;
            let grads: Vec<Vec<f64>> = prepared
                .model
                .task_gradients(&halt.params, &halt.batch)?
                .into_iter()
                .map(|g| g.shared)
                .collect();
            // PCGrad probes replay the run's own shuffle when the candidate
            // is part of the configured set.
            let rng_index = prepared
                .candidates
                .iter()
                .position(|c| c.id() == parsed.id())
                .unwrap_or(1_000_003);
            let grad = parsed.produce(&grads, &mut mechanism_rng(mech_seed, halt.step, rng_index))?;
            let grid = landscape::probe_1d(
                &prepared.model,
                &halt.params,
                &halt.batch,
                &halt.optimizer,
                &grad,
                *samples,
                *extent,
            )?;
            let unit_index = match &grid.axes {
                landscape::LandscapeAxes::OneD { unit_index, .. } => *unit_index,
                landscape::LandscapeAxes::TwoD { .. } => None,
            };
            let meta = LandscapeMeta {
                kind: "1d".into(),
                step: halt.step,
                learning_rate: prepared.config.optimizer.learning_rate,
                candidate: Some(id),
                direction_seed: None,
                direction_norms: vec![linalg::norm(&grad)],
                unit_alpha_index: unit_index,
                argmin: None,
                config_sha256: Some(prepared.hash.clone()),
            };
            landscape::write_grid(&out_dir.join("landscape_1d.csv"), &grid, Some(&meta))?;
            meta
        }
        ProbeKind::TwoD { samples, range, seed } => {
            let direction_seed =
                seed.unwrap_or_else(|| derive_seed(prepared.config.run.seed, SALT_LANDSCAPE));
            let grid = landscape::probe_2d(
                &prepared.model,
                &halt.params,
                &halt.batch,
                direction_seed,
                *samples,
                *range,
            )?;
            let norms = match &grid.axes {
                landscape::LandscapeAxes::TwoD { d1, d2, .. } => {
                    vec![linalg::norm(d1), linalg::norm(d2)]
                }
                landscape::LandscapeAxes::OneD { .. } => vec![],
            };
            let meta = LandscapeMeta {
                kind: "2d".into(),
                step: halt.step,
                learning_rate: prepared.config.optimizer.learning_rate,
                candidate: None,
                direction_seed: Some(direction_seed),
                direction_norms: norms,
                unit_alpha_index: None,
                argmin: grid.argmin_total_2d(),
                config_sha256: Some(prepared.hash.clone()),
            };
            landscape::write_grid(&out_dir.join("landscape_2d.csv"), &grid, Some(&meta))?;
            meta
        }
    };
    Ok(meta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverChoice {
    Exhaustive,
    BranchAndBound,
    Both,
}

impl SolverChoice {
    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "exhaustive" => Ok(SolverChoice::Exhaustive),
            "bnb" | "branch-and-bound" => Ok(SolverChoice::BranchAndBound),
            "both" => Ok(SolverChoice::Both),
            other => Err(Error::Config(format!(
                "unknown solver '{other}'; expected exhaustive, bnb, or both"
            ))),
        }
    }
}

/// Grouping outcome persisted as `plan.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanDocument {
    pub solver: String,
    pub budget: usize,
    pub objective: f64,
    pub groups: Vec<Vec<usize>>,
    pub serving: Vec<usize>,
    pub nodes: u64,
    pub pruned: u64,
    pub source_matrix: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub matrix_config_sha256: Option<String>,
}

/// Loads a run-matrix CSV, normalizes it, solves under the budget, and
/// writes `plan.json` plus a human-readable `plan.txt` into `out_dir`.
/// `--solver both` cross-checks the two solvers and fails on any objective
/// mismatch.
pub fn execute_group(
    matrix_path: &Path,
    budget: usize,
    solver: SolverChoice,
    out_dir: &Path,
) -> Result<PlanDocument> {
    let raw = matrix_io::read_matrix(matrix_path)?;
    let meta = matrix_io::read_meta(matrix_path)?;
    let normalized = normalize(&transference::TransferenceMatrix { scores: raw, step_count: 0 });
    let (plan, stats, label): (GroupingPlan, SolveStats, &str) = match solver {
        SolverChoice::Exhaustive => {
            let (plan, stats) = solve_exhaustive_with_stats(&normalized, budget)?;
            (plan, stats, "exhaustive")
        }
        SolverChoice::BranchAndBound => {
            let (plan, stats) = solve_branch_and_bound_with_stats(&normalized, budget)?;
            (plan, stats, "branch-and-bound")
        }
        SolverChoice::Both => {
            let (exhaustive, _) = solve_exhaustive_with_stats(&normalized, budget)?;
            let (bnb, stats) = solve_branch_and_bound_with_stats(&normalized, budget)?;
            if exhaustive.objective != bnb.objective {
                return Err(Error::SolverMismatch(format!(
                    "exhaustive objective {:.17e} != branch-and-bound objective {:.17e}",
                    exhaustive.objective, bnb.objective
                )));
            }
            (exhaustive, stats, "both")
        }
    };
    ensure_fresh_dir(out_dir)?;
    let document = PlanDocument {
        solver: label.to_string(),
        budget,
        objective: plan.objective,
        groups: plan.groups.clone(),
        serving: plan.serving.clone(),
        nodes: stats.nodes,
        pruned: stats.pruned,
        source_matrix: matrix_path.to_path_buf(),
        matrix_config_sha256: meta.and_then(|m| m.config_sha256),
    };
    let json = serde_json::to_string_pretty(&document)
        .map_err(|e| Error::Config(format!("plan serialization failed: {e}")))?;
    io_util::write_atomic(&out_dir.join("plan.json"), json.as_bytes())?;
    let table = crate::report::render_plan(&plan);
    io_util::write_atomic(&out_dir.join("plan.txt"), table.as_bytes())?;
    Ok(document)
}
