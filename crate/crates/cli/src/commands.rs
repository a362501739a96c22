//! Subcommand implementations. Every command is a pure function of its flags,
//! config files, and seeds to output files: reruns are byte-identical.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, ValueEnum};

use trajlm_core::{
    eval, load_checkpoint, load_dataset, phase_portrait, prediction_error, read_keypoint_csv,
    rollout_collect, sample_commands, save_checkpoint, save_dataset, synthesize_keypoints,
    write_keypoint_csv, Checkpoint, CollectionOptions, CommandRanges, Controller, EnvConfig,
    IkWeights, KeypointSynthesis, KinematicChain, ModelConfig, Regime, RolloutStart, SolverConfig,
    TokenLayout, TrainConfig, TrainingSet, Trajectory, CHECKPOINT_VERSION,
};

use crate::experiments::{self, Experiment, ExperimentSpec};
use crate::plot::{render_svg, PlotKind, Series};

/// Environment variable naming the root that relative `--out` paths are
/// joined under.
pub const OUT_ROOT_ENV: &str = "TRAJLM_OUT";

pub fn resolve_out(path: &Path) -> PathBuf {
    if path.is_absolute() {
        return path.to_path_buf();
    }
    match std::env::var_os(OUT_ROOT_ENV) {
        Some(root) => PathBuf::from(root).join(path),
        None => path.to_path_buf(),
    }
}

fn load_env_config(path: Option<&Path>) -> Result<EnvConfig> {
    let cfg = match path {
        None => EnvConfig::default(),
        Some(p) => {
            let body = fs::read_to_string(p)
                .with_context(|| format!("reading environment config {}", p.display()))?;
            serde_json::from_str(&body)
                .with_context(|| format!("parsing environment config {}", p.display()))?
        }
    };
    cfg.validate()?;
    Ok(cfg)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)?)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

// ---- gen -------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GenKind {
    Expert,
    Actionfree,
    Keypoints,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// What to generate.
    #[arg(long, value_enum)]
    pub kind: GenKind,
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Trajectory duration in seconds.
    #[arg(long, default_value_t = 10.0)]
    pub duration: f64,
    /// JSON file overriding the environment constants.
    #[arg(long)]
    pub env_config: Option<PathBuf>,
    /// Initial-state policy for rollouts.
    #[arg(long, value_enum, default_value_t = StartArg::Randomized)]
    pub start: StartArg,
    /// Exploration noise on executed actions during collection.
    #[arg(long, default_value_t = experiments::COLLECT_ACTION_NOISE)]
    pub action_noise: f64,
    /// Keypoints only: additive position noise (m).
    #[arg(long, default_value_t = 0.0)]
    pub noise_std: f64,
    /// Keypoints only: base drift velocity (m/s) along x.
    #[arg(long, default_value_t = 0.0)]
    pub drift_x: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StartArg {
    Rest,
    Randomized,
}

impl From<StartArg> for RolloutStart {
    fn from(value: StartArg) -> Self {
        match value {
            StartArg::Rest => RolloutStart::Rest,
            StartArg::Randomized => RolloutStart::Randomized,
        }
    }
}

pub fn cmd_gen(args: &GenArgs) -> Result<()> {
    if args.count == 0 {
        bail!("--count must be at least 1");
    }
    let out = resolve_out(&args.out);
    let env = load_env_config(args.env_config.as_deref())?;
    match args.kind {
        GenKind::Expert | GenKind::Actionfree => {
            let (controller, ranges) = match args.kind {
                GenKind::Expert => (Controller::Expert, CommandRanges::expert()),
                _ => (Controller::Variant, CommandRanges::variant()),
            };
            let commands = sample_commands(args.count, &ranges, args.seed);
            let opts = CollectionOptions {
                start: args.start.into(),
                action_noise_std: args.action_noise,
            };
            let trajs: Vec<Trajectory> = commands
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    rollout_collect(
                        controller,
                        c,
                        args.duration,
                        &env,
                        args.seed ^ (i as u64).wrapping_mul(0x9e37),
                        &opts,
                    )
                })
                .collect::<trajlm_core::Result<_>>()?;
            let manifest = save_dataset(&out, &trajs)?;
            println!(
                "wrote {} trajectories ({} steps each) to {}",
                trajs.len(),
                trajs[0].steps(),
                out.display()
            );
            println!(
                "counts: expert {} actionfree {} retargeted {}",
                manifest.counts.expert, manifest.counts.actionfree, manifest.counts.retargeted
            );
        }
        GenKind::Keypoints => {
            let chain = KinematicChain::human_like();
            fs::create_dir_all(&out)?;
            let frames = (args.duration / 0.05).round() as usize;
            for i in 0..args.count {
                let spec = KeypointSynthesis {
                    frames,
                    dt: 0.05,
                    noise_std: args.noise_std,
                    drift: [args.drift_x, 0.0],
                };
                let keypts = synthesize_keypoints(&chain, &spec, args.seed ^ (i as u64) << 8)?;
                let path = out.join(format!("kp_{i:04}.csv"));
                write_keypoint_csv(&path, &keypts, args.noise_std > 0.0)?;
            }
            println!("wrote {} keypoint CSVs to {}", args.count, out.display());
        }
    }
    Ok(())
}

// ---- retarget ---------------------------------------------------------------

#[derive(Debug, Args)]
pub struct RetargetArgs {
    /// Directory of keypoint CSV files.
    #[arg(long)]
    pub keypoints: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Residual threshold (m) above which a retargeted trajectory is dropped.
    #[arg(long, default_value_t = 0.05)]
    pub threshold: f64,
    /// JSON file describing the source chain.
    #[arg(long)]
    pub source_chain: Option<PathBuf>,
    /// JSON file describing the robot chain.
    #[arg(long)]
    pub robot_chain: Option<PathBuf>,
}

fn load_chain(path: Option<&Path>, default: KinematicChain) -> Result<KinematicChain> {
    match path {
        None => Ok(default),
        Some(p) => {
            let body = fs::read_to_string(p)
                .with_context(|| format!("reading chain config {}", p.display()))?;
            let chain: KinematicChain = serde_json::from_str(&body)
                .with_context(|| format!("parsing chain config {}", p.display()))?;
            chain.validate()?;
            Ok(chain)
        }
    }
}

#[derive(serde::Serialize)]
struct RetargetReport {
    files: usize,
    kept: usize,
    dropped: usize,
    threshold: f64,
    residuals: Vec<f64>,
}

pub fn cmd_retarget(args: &RetargetArgs) -> Result<()> {
    let out = resolve_out(&args.out);
    let source = load_chain(args.source_chain.as_deref(), KinematicChain::human_like())?;
    let robot = load_chain(args.robot_chain.as_deref(), KinematicChain::surrogate_robot())?;

    let mut files: Vec<PathBuf> = fs::read_dir(&args.keypoints)
        .with_context(|| format!("reading {}", args.keypoints.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no keypoint CSVs in {}", args.keypoints.display());
    }

    let weights = IkWeights::default();
    let solver = SolverConfig::default();
    let mut outputs = Vec::new();
    for path in &files {
        let keypts = read_keypoint_csv(path)?;
        outputs.push(trajlm_core::retarget(&source, &robot, &keypts, &weights, &solver)?);
    }
    let residuals: Vec<f64> = outputs.iter().map(|o| o.residual).collect();
    let kept = trajlm_core::filter_by_residual(outputs, args.threshold)?;
    let report = RetargetReport {
        files: files.len(),
        kept: kept.len(),
        dropped: files.len() - kept.len(),
        threshold: args.threshold,
        residuals,
    };
    if kept.is_empty() {
        write_json(&out.join("retarget_report.json"), &report)?;
        bail!("all {} trajectories exceeded the residual threshold", files.len());
    }
    let trajs: Vec<Trajectory> = kept.into_iter().map(|o| o.trajectory).collect();
    save_dataset(&out, &trajs)?;
    write_json(&out.join("retarget_report.json"), &report)?;
    println!(
        "retargeted {} files -> kept {} (threshold {} m) in {}",
        report.files,
        report.kept,
        report.threshold,
        out.display()
    );
    Ok(())
}

// ---- train -------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directories (repeatable); trajectories are pooled.
    #[arg(long, required = true)]
    pub data: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// JSON file with the full model configuration.
    #[arg(long)]
    pub model_config: Option<PathBuf>,
    /// JSON file with the full training configuration.
    #[arg(long)]
    pub train_config: Option<PathBuf>,
    /// Resume from an existing checkpoint (same data and configs).
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Also write a checkpoint every N steps.
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long, value_enum)]
    pub regime: Option<RegimeArg>,
    #[arg(long, value_enum)]
    pub layout: Option<LayoutArg>,
    #[arg(long)]
    pub aligned: Option<bool>,
    #[arg(long)]
    pub context: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RegimeArg {
    Joint,
    Staged,
    CompleteOnly,
    ActionOnlyLoss,
}

impl From<RegimeArg> for Regime {
    fn from(value: RegimeArg) -> Self {
        match value {
            RegimeArg::Joint => Regime::Joint,
            RegimeArg::Staged => Regime::Staged,
            RegimeArg::CompleteOnly => Regime::CompleteOnly,
            RegimeArg::ActionOnlyLoss => Regime::ActionOnlyLoss,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LayoutArg {
    Concat,
    Separate,
}

pub fn load_datasets(dirs: &[PathBuf]) -> Result<Vec<Trajectory>> {
    let mut all = Vec::new();
    let mut dims: Option<(usize, usize)> = None;
    for dir in dirs {
        let (manifest, trajs) = load_dataset(dir)?;
        match dims {
            None => dims = Some((manifest.m, manifest.n)),
            Some((m, n)) if m == manifest.m && n == manifest.n => {}
            Some((m, n)) => bail!(
                "{}: dimensions (m={}, n={}) conflict with earlier datasets (m={m}, n={n})",
                dir.display(),
                manifest.m,
                manifest.n
            ),
        }
        all.extend(trajs);
    }
    if all.is_empty() {
        bail!("no trajectories loaded");
    }
    Ok(all)
}

fn train_log_csv(log: &trajlm_core::TrainLog) -> String {
    let mut out = String::from("step,total,obs_part,act_part,lr\n");
    for r in &log.records {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.step, r.total, r.obs_part, r.act_part, r.lr
        ));
    }
    out
}

pub fn cmd_train(args: &TrainArgs) -> Result<PathBuf> {
    let out = resolve_out(&args.out);
    let trajs = load_datasets(&args.data)?;
    let set = TrainingSet::prepare(&trajs)?;

    let mut model_cfg: ModelConfig = match &args.model_config {
        None => experiments::desk_model(),
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?)
            .with_context(|| format!("parsing model config {}", p.display()))?,
    };
    let mut train_cfg: TrainConfig = match &args.train_config {
        None => experiments::desk_train(0),
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?)
            .with_context(|| format!("parsing train config {}", p.display()))?,
    };
    if let Some(v) = args.steps {
        train_cfg.steps = v;
    }
    if let Some(v) = args.seed {
        train_cfg.seed = v;
    }
    if let Some(v) = args.batch_size {
        train_cfg.batch_size = v;
    }
    if let Some(v) = args.window {
        train_cfg.window = v;
    }
    if let Some(v) = args.regime {
        train_cfg.regime = v.into();
    }
    if let Some(v) = args.layout {
        model_cfg.layout = match v {
            LayoutArg::Concat => TokenLayout::Concat,
            LayoutArg::Separate => TokenLayout::Separate,
        };
    }
    if let Some(v) = args.aligned {
        model_cfg.aligned = v;
    }
    if let Some(v) = args.context {
        model_cfg.context = v;
    }
    if let Some(v) = args.width {
        model_cfg.d = v;
    }
    if let Some(v) = args.layers {
        model_cfg.layers = v;
    }
    if let Some(v) = args.heads {
        model_cfg.heads = v;
    }

    let first = trajs.first().expect("nonempty");
    if first.obs_dim() != model_cfg.m || first.act_dim() != model_cfg.n {
        bail!(
            "dataset dimensions (m={}, n={}) do not match the model config (m={}, n={})",
            first.obs_dim(),
            first.act_dim(),
            model_cfg.m,
            model_cfg.n
        );
    }

    let ckpt_path = out.join("checkpoint.json");
    fs::create_dir_all(&out)?;

    let outcome = match &args.resume {
        Some(resume_path) => {
            let ckpt = load_checkpoint(resume_path)?;
            if ckpt.config != model_cfg {
                bail!("--resume checkpoint was trained with a different model config");
            }
            train_cfg.seed = ckpt.train_seed;
            trajlm_core::resume(
                ckpt.params,
                ckpt.optimizer,
                ckpt.step as usize,
                &model_cfg,
                &TrainingSet::prepare_with(&trajs, ckpt.normalization.clone())?,
                &train_cfg,
            )?
        }
        None => {
            let params = trajlm_core::init_params(&model_cfg, train_cfg.seed)?;
            match args.checkpoint_every {
                None => trajlm_core::train(params, &model_cfg, &set, &train_cfg)?,
                Some(every) if train_cfg.regime != Regime::Staged => {
                    // piecewise runs so intermediate checkpoints hit the disk
                    let mut params = params;
                    let mut optimizer = None;
                    let mut done = 0usize;
                    let mut merged_log = trajlm_core::TrainLog::default();
                    let mut last = None;
                    while done < train_cfg.steps {
                        let upto = (done + every.max(1)).min(train_cfg.steps);
                        let mut span_cfg = train_cfg;
                        span_cfg.steps = upto;
                        let outcome = trajlm_core::resume(
                            params,
                            optimizer,
                            done,
                            &model_cfg,
                            &set,
                            &span_cfg,
                        )?;
                        merged_log.records.extend(outcome.log.records.iter().copied());
                        merged_log.empty_loss_steps += outcome.log.empty_loss_steps;
                        params = outcome.params.clone();
                        optimizer = Some(outcome.optimizer.clone());
                        done = upto;
                        if done < train_cfg.steps {
                            let intermediate = Checkpoint {
                                version: CHECKPOINT_VERSION,
                                config: model_cfg,
                                normalization: set.normalization.clone(),
                                params: params.clone(),
                                step: done as u64,
                                optimizer: optimizer.clone(),
                                train_seed: train_cfg.seed,
                            };
                            save_checkpoint(&out.join(format!("checkpoint_step{done}.json")), &intermediate)?;
                        }
                        last = Some(outcome);
                    }
                    let mut outcome = last.expect("at least one span");
                    outcome.log = merged_log;
                    outcome
                }
                Some(_) => trajlm_core::train(params, &model_cfg, &set, &train_cfg)?,
            }
        }
    };

    let checkpoint = Checkpoint {
        version: CHECKPOINT_VERSION,
        config: model_cfg,
        normalization: set.normalization.clone(),
        params: outcome.params,
        step: outcome.steps_done as u64,
        optimizer: Some(outcome.optimizer),
        train_seed: train_cfg.seed,
    };
    save_checkpoint(&ckpt_path, &checkpoint)?;
    fs::write(out.join("train_log.csv"), train_log_csv(&outcome.log))?;
    println!(
        "trained {} steps; final loss {:.6}; checkpoint at {}",
        outcome.steps_done,
        outcome.log.records.last().map(|r| r.total).unwrap_or(f64::NAN),
        ckpt_path.display()
    );
    Ok(ckpt_path)
}

// ---- eval --------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalSuite {
    Tracking,
    Prediction,
    Portrait,
    Unseen,
    Correlation,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Additional checkpoints (correlation suite).
    #[arg(long)]
    pub checkpoints: Vec<PathBuf>,
    #[arg(long, value_enum)]
    pub suite: EvalSuite,
    #[arg(long)]
    pub out: PathBuf,
    /// Held-out dataset directory (prediction and correlation suites).
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub env_config: Option<PathBuf>,
}

fn heldout_from(args: &EvalArgs) -> Result<Vec<Trajectory>> {
    let dir = args
        .data
        .as_ref()
        .ok_or_else(|| anyhow!("this suite needs --data with a held-out expert dataset"))?;
    let (_, trajs) = load_dataset(dir)?;
    Ok(trajs)
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let out = resolve_out(&args.out);
    fs::create_dir_all(&out)?;
    let env = load_env_config(args.env_config.as_deref())?;
    let need_single = !matches!(args.suite, EvalSuite::Correlation);
    let ckpt = if need_single {
        let path = args
            .checkpoint
            .as_ref()
            .ok_or_else(|| anyhow!("--checkpoint is required for this suite"))?;
        Some(load_checkpoint(path)?)
    } else {
        None
    };

    match args.suite {
        EvalSuite::Tracking => {
            let ckpt = ckpt.expect("checked");
            let report = eval::evaluate_tracking(&ckpt, &env)?;
            let baseline = eval::expert_tracking_baseline(&env)?;
            write_json(&out.join("tracking.json"), &report)?;
            let mut csv = String::from("v_x,v_y,omega,tracking_error,fell,expert_error\n");
            for (c, b) in report.per_command.iter().zip(&baseline.per_command) {
                csv.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    c.command[0], c.command[1], c.command[2], c.tracking_error, c.fell, b.tracking_error
                ));
            }
            fs::write(out.join("tracking.csv"), csv)?;
            println!(
                "mean tracking error {:.4} m over {} commands ({} falls); expert baseline {:.4} m",
                report.mean_tracking_error,
                report.per_command.len(),
                report.fall_count,
                baseline.mean_tracking_error
            );
        }
        EvalSuite::Prediction => {
            let ckpt = ckpt.expect("checked");
            let heldout = heldout_from(args)?;
            let pe = prediction_error(&ckpt, &heldout)?;
            write_json(&out.join("prediction.json"), &pe)?;
            println!(
                "prediction error: state {:.6} + action {:.6} = {:.6}",
                pe.state, pe.action, pe.total
            );
        }
        EvalSuite::Portrait => {
            let ckpt = ckpt.expect("checked");
            let cmd = trajlm_core::Command::new(0.5, 0.0, 0.0);
            let dep = eval::deploy(&ckpt, &cmd, eval::EPISODE_DURATION, &env)?;
            let series = phase_portrait(&dep.trajectory)?;
            let mut csv = String::from("q1,q1dot\n");
            for (q, qd) in &series {
                csv.push_str(&format!("{q},{qd}\n"));
            }
            fs::write(out.join("portrait.csv"), csv)?;
            let svg = render_svg(
                "left gait joint phase portrait (0.5 m/s)",
                "q1 (rad)",
                "q1dot (rad/s)",
                &[Series {
                    name: "policy".into(),
                    points: series,
                }],
                PlotKind::Line,
            );
            fs::write(out.join("portrait.svg"), svg)?;
            println!("portrait written ({} points), tracking error {:.4} m", dep.trajectory.steps() - 1, dep.tracking_error);
        }
        EvalSuite::Unseen => {
            let ckpt = ckpt.expect("checked");
            let report = eval::unseen_command_test(&ckpt, &env)?;
            write_json(&out.join("unseen.json"), &report)?;
            for b in &report.backward {
                println!(
                    "backward {:+.1} m/s: error {:.3} m, final x {:.2} m, fell {}",
                    b.command[0], b.tracking_error, b.final_x, b.fell
                );
            }
            println!("backward/forward error ratio {:.2}", report.error_ratio);
        }
        EvalSuite::Correlation => {
            let mut paths = args.checkpoints.clone();
            if let Some(single) = &args.checkpoint {
                paths.insert(0, single.clone());
            }
            if paths.len() < 2 {
                bail!("correlation needs at least two --checkpoints");
            }
            let heldout = heldout_from(args)?;
            let mut points = Vec::new();
            let mut csv = String::from("checkpoint,prediction_error,tracking_error\n");
            for path in &paths {
                let ckpt = load_checkpoint(path)?;
                let pe = prediction_error(&ckpt, &heldout)?;
                let tr = eval::evaluate_tracking(&ckpt, &env)?;
                points.push((pe.total, tr.mean_tracking_error));
                csv.push_str(&format!(
                    "{},{},{}\n",
                    path.display(),
                    pe.total,
                    tr.mean_tracking_error
                ));
            }
            let r = trajlm_core::correlation_from_points(&points)?;
            fs::write(out.join("correlation.csv"), csv)?;
            write_json(
                &out.join("correlation.json"),
                &serde_json::json!({ "points": points, "pearson_r": r }),
            )?;
            let svg = render_svg(
                "prediction vs tracking error",
                "prediction error",
                "tracking error (m)",
                &[Series {
                    name: "models".into(),
                    points: points.clone(),
                }],
                PlotKind::Scatter,
            );
            fs::write(out.join("correlation.svg"), svg)?;
            match r {
                Some(r) => println!("pearson r = {r:.3} over {} models", points.len()),
                None => println!("degenerate point set (zero variance); r undefined"),
            }
        }
    }
    Ok(())
}

// ---- ablate ------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// One of: ablate-token-layout, ablate-alignment, ablate-regime,
    /// ablate-loss-target, scale-data, scale-context, scale-model,
    /// actionfree-gain.
    #[arg(long)]
    pub experiment: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub seeds: usize,
    #[arg(long, default_value_t = 500)]
    pub expert_count: usize,
    #[arg(long, default_value_t = 500)]
    pub actionfree_count: usize,
    #[arg(long, default_value_t = 5000)]
    pub steps: usize,
    #[arg(long, default_value_t = 7)]
    pub data_seed: u64,
    /// Exploration noise on executed actions at collection time.
    #[arg(long)]
    pub collect_noise: Option<f64>,
    /// Fraction of each mixed-regime batch drawn from action-free data.
    #[arg(long)]
    pub af_weight: Option<f64>,
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub env_config: Option<PathBuf>,
}

pub fn cmd_ablate(args: &AblateArgs) -> Result<()> {
    let out = resolve_out(&args.out);
    fs::create_dir_all(&out)?;
    let env = load_env_config(args.env_config.as_deref())?;
    let experiment = Experiment::parse(&args.experiment)
        .ok_or_else(|| anyhow!("unknown experiment '{}'", args.experiment))?;
    let mut spec = ExperimentSpec::desk(experiment);
    spec.seeds = (0..args.seeds as u64).collect();
    spec.expert_count = args.expert_count;
    spec.actionfree_count = args.actionfree_count;
    spec.steps = args.steps;
    spec.data_seed = args.data_seed;
    if let Some(v) = args.collect_noise {
        spec.collect_noise = v;
    }
    if let Some(v) = args.af_weight {
        spec.af_batch_fraction = v;
    }
    if let Some(jobs) = args.jobs {
        spec.jobs = jobs;
    }

    let results = experiments::run_experiment(&spec, &env);
    let csv = experiments::results_to_csv(&results);
    fs::write(out.join(format!("{}.csv", experiment.name())), &csv)?;
    write_json(&out.join(format!("{}.json", experiment.name())), &results)?;
    for s in &results.summaries {
        println!(
            "{:<24} mean tracking {:.4} m, mean prediction {:.5} ({} seeds)",
            s.variant, s.mean_tracking_error, s.mean_prediction_error, s.seeds
        );
    }
    if !results.failures.is_empty() {
        for f in &results.failures {
            eprintln!("cell failed: {} seed {}: {}", f.variant, f.seed, f.error);
        }
        bail!("{} of {} cells failed", results.failures.len(), spec.cells().len());
    }
    Ok(())
}

// ---- plot --------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// CSV input with a header row.
    #[arg(long)]
    pub input: PathBuf,
    /// SVG output.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, value_enum, default_value_t = PlotKindArg::Line)]
    pub kind: PlotKindArg,
    /// Zero-based x column.
    #[arg(long, default_value_t = 0)]
    pub x_col: usize,
    /// Zero-based y column.
    #[arg(long, default_value_t = 1)]
    pub y_col: usize,
    #[arg(long, default_value = "")]
    pub title: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlotKindArg {
    Line,
    Scatter,
    Portrait,
}

pub fn cmd_plot(args: &PlotArgs) -> Result<()> {
    let body = fs::read_to_string(&args.input)
        .with_context(|| format!("reading {}", args.input.display()))?;
    let mut lines = body.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| anyhow!("empty CSV"))?
        .split(',')
        .map(|s| s.trim().to_string())
        .collect();
    let get = |idx: usize| -> Result<String> {
        header
            .get(idx)
            .cloned()
            .ok_or_else(|| anyhow!("column {idx} out of range ({} columns)", header.len()))
    };
    let x_name = get(args.x_col)?;
    let y_name = get(args.y_col)?;
    let mut points = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let parse = |i: usize| fields.get(i).and_then(|s| s.trim().parse::<f64>().ok());
        if let (Some(x), Some(y)) = (parse(args.x_col), parse(args.y_col)) {
            points.push((x, y));
        }
    }
    if points.is_empty() {
        bail!("no numeric rows in columns {} and {}", args.x_col, args.y_col);
    }
    let kind = match args.kind {
        PlotKindArg::Scatter => PlotKind::Scatter,
        _ => PlotKind::Line,
    };
    let title = if args.title.is_empty() {
        format!("{y_name} vs {x_name}")
    } else {
        args.title.clone()
    };
    let svg = render_svg(
        &title,
        &x_name,
        &y_name,
        &[Series {
            name: y_name.clone(),
            points,
        }],
        kind,
    );
    let out = resolve_out(&args.output);
    if let Some(parent) = out.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(&out, svg)?;
    println!("wrote {}", out.display());
    Ok(())
}
