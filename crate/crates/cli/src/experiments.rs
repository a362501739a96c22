//! Named experiments: ablation and scaling studies over the desk-scale
//! pipeline. Each cell (variant × seed) generates its datasets, trains a
//! model, and evaluates tracking on the benchmark command grid plus
//! prediction error on a fixed held-out set. Cells are pure functions of
//! their spec, so results are reproducible and shareable across experiments.

use std::collections::BTreeMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use trajlm_core::{
    eval, init_params, prediction_error, rollout_collect, sample_commands, train, Checkpoint,
    CollectionOptions, Controller, EnvConfig, ModelConfig, Regime, RolloutStart, TokenLayout,
    TrainConfig, TrainingSet, Trajectory, ACT_DIM, CHECKPOINT_VERSION, OBS_DIM,
};

/// Exploration noise applied to executed actions during data collection.
pub const COLLECT_ACTION_NOISE: f64 = 0.5;

// Seed tags keep dataset, held-out, and training streams disjoint.
const EXPERT_DATA_TAG: u64 = 0x0001_0000;
const ACTIONFREE_DATA_TAG: u64 = 0x0002_0000;
const HELDOUT_SEED: u64 = 0x00ff_0000;
const HELDOUT_COUNT: usize = 50;

/// Desk-scale model defaults: small enough that a full ablation suite runs
/// on a couple of laptop cores, large enough to track commands well.
pub fn desk_model() -> ModelConfig {
    ModelConfig {
        d: 48,
        layers: 1,
        heads: 4,
        context: 16,
        layout: TokenLayout::Concat,
        aligned: true,
        m: OBS_DIM,
        n: ACT_DIM,
        dual_norm: false,
    }
}

pub fn desk_train(seed: u64) -> TrainConfig {
    TrainConfig {
        batch_size: 16,
        window: 16,
        steps: 5000,
        seed,
        log_every: 100,
        ..TrainConfig::default()
    }
}

/// Scale-model grid: small/base/large.
pub fn model_scale(name: &str) -> Option<ModelConfig> {
    let (d, heads, layers) = match name {
        "small" => (96, 4, 4),
        "base" => (192, 4, 4),
        "large" => (384, 12, 6),
        _ => return None,
    };
    Some(ModelConfig {
        d,
        layers,
        heads,
        ..desk_model()
    })
}

/// Dataset composition for one cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub expert: usize,
    pub actionfree: usize,
    /// Base seed for the generated data (shared across cells so variants see
    /// identical trajectories).
    pub data_seed: u64,
    /// Exploration noise used at collection time.
    pub collect_noise: f64,
}

impl DatasetSpec {
    pub fn expert_only(count: usize, data_seed: u64, collect_noise: f64) -> Self {
        DatasetSpec {
            expert: count,
            actionfree: 0,
            data_seed,
            collect_noise,
        }
    }
}

/// Everything that defines one training cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSpec {
    pub variant: String,
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub dataset: DatasetSpec,
}

#[derive(Debug, Clone, Serialize)]
pub struct CellResult {
    pub variant: String,
    pub seed: u64,
    pub tracking_error: f64,
    pub prediction_error: f64,
    pub fall_count: usize,
    /// Retained for follow-up probes (unseen commands, correlation points).
    #[serde(skip)]
    pub checkpoint: Checkpoint,
}

/// Generate the expert trajectories for a dataset spec (shared stream).
pub fn expert_trajectories_with_noise(
    count: usize,
    data_seed: u64,
    env: &EnvConfig,
    noise: f64,
) -> Vec<Trajectory> {
    let commands = sample_commands(
        count,
        &trajlm_core::CommandRanges::expert(),
        data_seed ^ EXPERT_DATA_TAG,
    );
    let opts = CollectionOptions {
        start: RolloutStart::Randomized,
        action_noise_std: noise,
    };
    commands
        .iter()
        .enumerate()
        .map(|(i, c)| {
            rollout_collect(
                Controller::Expert,
                c,
                10.0,
                env,
                data_seed ^ EXPERT_DATA_TAG ^ (i as u64).wrapping_mul(0x9e37),
                &opts,
            )
            .expect("expert rollout")
        })
        .collect()
}

pub fn expert_trajectories(count: usize, data_seed: u64, env: &EnvConfig) -> Vec<Trajectory> {
    expert_trajectories_with_noise(count, data_seed, env, COLLECT_ACTION_NOISE)
}

pub fn actionfree_trajectories_with_noise(
    count: usize,
    data_seed: u64,
    env: &EnvConfig,
    noise: f64,
) -> Vec<Trajectory> {
    let commands = sample_commands(
        count,
        &trajlm_core::CommandRanges::variant(),
        data_seed ^ ACTIONFREE_DATA_TAG,
    );
    let opts = CollectionOptions {
        start: RolloutStart::Randomized,
        action_noise_std: noise,
    };
    commands
        .iter()
        .enumerate()
        .map(|(i, c)| {
            rollout_collect(
                Controller::Variant,
                c,
                10.0,
                env,
                data_seed ^ ACTIONFREE_DATA_TAG ^ (i as u64).wrapping_mul(0x9e37),
                &opts,
            )
            .expect("variant rollout")
        })
        .collect()
}

pub fn actionfree_trajectories(count: usize, data_seed: u64, env: &EnvConfig) -> Vec<Trajectory> {
    actionfree_trajectories_with_noise(count, data_seed, env, COLLECT_ACTION_NOISE)
}

/// Held-out expert set for prediction error: rest starts, no exploration
/// noise, a command stream disjoint from every training dataset.
pub fn heldout_trajectories(env: &EnvConfig) -> Vec<Trajectory> {
    let commands = sample_commands(HELDOUT_COUNT, &trajlm_core::CommandRanges::expert(), HELDOUT_SEED);
    commands
        .iter()
        .enumerate()
        .map(|(i, c)| {
            trajlm_core::rollout(
                Controller::Expert,
                c,
                10.0,
                env,
                HELDOUT_SEED ^ (i as u64).wrapping_mul(0x9e37),
            )
            .expect("heldout rollout")
        })
        .collect()
}

/// Run one cell end to end.
pub fn run_cell(spec: &CellSpec, env: &EnvConfig) -> trajlm_core::Result<CellResult> {
    let mut trajs = expert_trajectories_with_noise(
        spec.dataset.expert,
        spec.dataset.data_seed,
        env,
        spec.dataset.collect_noise,
    );
    trajs.extend(actionfree_trajectories_with_noise(
        spec.dataset.actionfree,
        spec.dataset.data_seed,
        env,
        spec.dataset.collect_noise,
    ));
    let set = TrainingSet::prepare(&trajs)?;
    let params = init_params(&spec.model, spec.seed)?;
    let out = train(params, &spec.model, &set, &spec.train)?;
    let checkpoint = Checkpoint {
        version: CHECKPOINT_VERSION,
        config: spec.model,
        normalization: set.normalization.clone(),
        params: out.params,
        step: out.steps_done as u64,
        optimizer: Some(out.optimizer),
        train_seed: spec.train.seed,
    };
    let tracking = eval::evaluate_tracking(&checkpoint, env)?;
    let heldout = heldout_trajectories(env);
    let pe = prediction_error(&checkpoint, &heldout)?;
    Ok(CellResult {
        variant: spec.variant.clone(),
        seed: spec.seed,
        tracking_error: tracking.mean_tracking_error,
        prediction_error: pe.total,
        fall_count: tracking.fall_count,
        checkpoint,
    })
}

/// Process-wide memoization of finished cells, keyed by the full cell spec.
/// Experiments share identical cells (the expert-500 baseline appears in the
/// data-scaling, context-scaling, and competence studies).
static CELL_CACHE: Mutex<BTreeMap<String, CellResult>> = Mutex::new(BTreeMap::new());

pub fn run_cell_cached(spec: &CellSpec, env: &EnvConfig) -> trajlm_core::Result<CellResult> {
    let key = serde_json::to_string(&(spec, env)).expect("cell key");
    if let Some(hit) = CELL_CACHE.lock().unwrap().get(&key) {
        return Ok(hit.clone());
    }
    let result = run_cell(spec, env)?;
    CELL_CACHE.lock().unwrap().insert(key, result.clone());
    Ok(result)
}

/// Run independent cells on a small thread pool (each cell is single-
/// threaded and deterministic); results come back in input order.
pub fn run_cells_parallel(
    specs: &[CellSpec],
    env: &EnvConfig,
    jobs: usize,
) -> Vec<trajlm_core::Result<CellResult>> {
    let jobs = jobs.max(1);
    let next = std::sync::atomic::AtomicUsize::new(0);
    let results: Vec<Mutex<Option<trajlm_core::Result<CellResult>>>> =
        specs.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..jobs.min(specs.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if i >= specs.len() {
                    break;
                }
                let out = run_cell_cached(&specs[i], env);
                *results[i].lock().unwrap() = Some(out);
            });
        }
    });
    results
        .into_iter()
        .map(|m| m.into_inner().unwrap().expect("cell executed"))
        .collect()
}

/// The named experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Experiment {
    TokenLayoutAblation,
    AlignmentAblation,
    RegimeAblation,
    LossTargetAblation,
    DataScaling,
    ContextScaling,
    ModelScaling,
    ActionFreeGain,
}

impl Experiment {
    pub fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "ablate-token-layout" => Experiment::TokenLayoutAblation,
            "ablate-alignment" => Experiment::AlignmentAblation,
            "ablate-regime" => Experiment::RegimeAblation,
            "ablate-loss-target" => Experiment::LossTargetAblation,
            "scale-data" => Experiment::DataScaling,
            "scale-context" => Experiment::ContextScaling,
            "scale-model" => Experiment::ModelScaling,
            "actionfree-gain" => Experiment::ActionFreeGain,
            _ => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Experiment::TokenLayoutAblation => "ablate-token-layout",
            Experiment::AlignmentAblation => "ablate-alignment",
            Experiment::RegimeAblation => "ablate-regime",
            Experiment::LossTargetAblation => "ablate-loss-target",
            Experiment::DataScaling => "scale-data",
            Experiment::ContextScaling => "scale-context",
            Experiment::ModelScaling => "scale-model",
            Experiment::ActionFreeGain => "actionfree-gain",
        }
    }

    pub const ALL: [Experiment; 8] = [
        Experiment::TokenLayoutAblation,
        Experiment::AlignmentAblation,
        Experiment::RegimeAblation,
        Experiment::LossTargetAblation,
        Experiment::DataScaling,
        Experiment::ContextScaling,
        Experiment::ModelScaling,
        Experiment::ActionFreeGain,
    ];
}

/// Shared experiment parameters with the desk defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub experiment: Experiment,
    pub seeds: Vec<u64>,
    pub expert_count: usize,
    pub actionfree_count: usize,
    pub steps: usize,
    pub data_seed: u64,
    pub jobs: usize,
    /// Exploration noise for collected actions.
    pub collect_noise: f64,
    /// Fraction of each joint-regime batch drawn from action-free sources
    /// (balanced sampling rather than count-proportional).
    pub af_batch_fraction: f64,
}

impl ExperimentSpec {
    pub fn desk(experiment: Experiment) -> Self {
        ExperimentSpec {
            experiment,
            seeds: vec![0, 1, 2],
            expert_count: 500,
            actionfree_count: 500,
            steps: 5000,
            data_seed: 7,
            jobs: std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1),
            collect_noise: COLLECT_ACTION_NOISE,
            af_batch_fraction: 0.3,
        }
    }

    fn base_cell(&self, variant: &str, seed: u64) -> CellSpec {
        let mut train = desk_train(seed);
        train.steps = self.steps;
        CellSpec {
            variant: variant.to_string(),
            seed,
            model: desk_model(),
            train,
            dataset: DatasetSpec::expert_only(self.expert_count, self.data_seed, self.collect_noise),
        }
    }

    /// Balanced source sampling for cells that mix expert and action-free
    /// data: a fixed fraction of each batch comes from action-free sources
    /// instead of letting counts dominate.
    fn mixed_weights(&self) -> Option<[f64; 3]> {
        (self.af_batch_fraction > 0.0)
            .then(|| [1.0 - self.af_batch_fraction, self.af_batch_fraction, 0.0])
    }

    /// The cell grid for this experiment.
    pub fn cells(&self) -> Vec<CellSpec> {
        let mut cells = Vec::new();
        for &seed in &self.seeds {
            match self.experiment {
                Experiment::TokenLayoutAblation => {
                    cells.push(self.base_cell("concat", seed));
                    let mut sep = self.base_cell("separate-aligned", seed);
                    sep.model.layout = TokenLayout::Separate;
                    sep.model.aligned = true;
                    cells.push(sep);
                }
                Experiment::AlignmentAblation => {
                    let mut aligned = self.base_cell("aligned", seed);
                    aligned.model.layout = TokenLayout::Separate;
                    aligned.model.aligned = true;
                    cells.push(aligned);
                    let mut non = self.base_cell("non-aligned", seed);
                    non.model.layout = TokenLayout::Separate;
                    non.model.aligned = false;
                    cells.push(non);
                }
                Experiment::RegimeAblation => {
                    let mut joint = self.base_cell("joint", seed);
                    joint.dataset.actionfree = self.actionfree_count;
                    joint.train.regime = Regime::Joint;
                    joint.train.source_weights = self.mixed_weights();
                    cells.push(joint);
                    let mut staged = self.base_cell("staged", seed);
                    staged.dataset.actionfree = self.actionfree_count;
                    staged.train.regime = Regime::Staged;
                    staged.train.source_weights = self.mixed_weights();
                    cells.push(staged);
                }
                Experiment::LossTargetAblation => {
                    cells.push(self.base_cell("state-action", seed));
                    let mut action_only = self.base_cell("action-only", seed);
                    action_only.train.regime = Regime::ActionOnlyLoss;
                    cells.push(action_only);
                }
                Experiment::DataScaling => {
                    for frac in [8usize, 4, 2, 1] {
                        let count = self.expert_count / frac;
                        let mut cell = self.base_cell(&format!("n{count}"), seed);
                        cell.dataset.expert = count;
                        cells.push(cell);
                    }
                }
                Experiment::ContextScaling => {
                    for ctx in [8usize, 16, 32] {
                        let mut cell = self.base_cell(&format!("ctx{ctx}"), seed);
                        cell.model.context = ctx;
                        cell.train.window = ctx;
                        cells.push(cell);
                    }
                }
                Experiment::ModelScaling => {
                    for name in ["small", "base", "large"] {
                        let mut cell = self.base_cell(name, seed);
                        cell.model = model_scale(name).expect("scale name");
                        cells.push(cell);
                    }
                }
                Experiment::ActionFreeGain => {
                    let mut complete = self.base_cell("complete-100", seed);
                    complete.dataset.expert = 100;
                    cells.push(complete);
                    let mut mixed = self.base_cell("complete-100+af-500", seed);
                    mixed.dataset.expert = 100;
                    mixed.dataset.actionfree = self.actionfree_count;
                    mixed.train.regime = Regime::Joint;
                    mixed.train.source_weights = self.mixed_weights();
                    cells.push(mixed);
                }
            }
        }
        cells
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentResults {
    pub experiment: String,
    pub rows: Vec<CellRow>,
    pub summaries: Vec<SummaryRow>,
    pub failures: Vec<CellFailure>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CellRow {
    pub variant: String,
    pub seed: u64,
    pub tracking_error: f64,
    pub prediction_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SummaryRow {
    pub variant: String,
    pub mean_tracking_error: f64,
    pub mean_prediction_error: f64,
    pub seeds: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct CellFailure {
    pub variant: String,
    pub seed: u64,
    pub error: String,
}

/// Run every cell of the experiment; failures are recorded per cell and the
/// experiment continues.
pub fn run_experiment(spec: &ExperimentSpec, env: &EnvConfig) -> ExperimentResults {
    let cells = spec.cells();
    let outcomes = run_cells_parallel(&cells, env, spec.jobs);
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (cell, outcome) in cells.iter().zip(outcomes) {
        match outcome {
            Ok(res) => rows.push(CellRow {
                variant: res.variant,
                seed: res.seed,
                tracking_error: res.tracking_error,
                prediction_error: res.prediction_error,
            }),
            Err(e) => failures.push(CellFailure {
                variant: cell.variant.clone(),
                seed: cell.seed,
                error: e.to_string(),
            }),
        }
    }

    // per-variant means in first-appearance order
    let mut order: Vec<String> = Vec::new();
    for row in &rows {
        if !order.contains(&row.variant) {
            order.push(row.variant.clone());
        }
    }
    let summaries = order
        .iter()
        .map(|variant| {
            let group: Vec<&CellRow> = rows.iter().filter(|r| &r.variant == variant).collect();
            SummaryRow {
                variant: variant.clone(),
                mean_tracking_error: group.iter().map(|r| r.tracking_error).sum::<f64>()
                    / group.len() as f64,
                mean_prediction_error: group.iter().map(|r| r.prediction_error).sum::<f64>()
                    / group.len() as f64,
                seeds: group.len(),
            }
        })
        .collect();

    ExperimentResults {
        experiment: spec.experiment.name().to_string(),
        rows,
        summaries,
        failures,
    }
}

/// CSV with one row per (variant, seed) and a `mean` row per variant.
pub fn results_to_csv(results: &ExperimentResults) -> String {
    let mut out = String::from("variant,seed,tracking_error,prediction_error\n");
    for row in &results.rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            row.variant, row.seed, row.tracking_error, row.prediction_error
        ));
    }
    for s in &results.summaries {
        out.push_str(&format!(
            "{},mean,{},{}\n",
            s.variant, s.mean_tracking_error, s.mean_prediction_error
        ));
    }
    out
}
