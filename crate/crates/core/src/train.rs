//! Next-token regression training: masked MSE over token windows, Adam-style
//! updates with warmup + cosine decay, joint and staged regimes over
//! mixed-quality data sources.

use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::data::{
    compute_normalization, normalize, tokenize, MaskPolicy, Normalization, Source, TokenSequence,
    Trajectory,
};
use crate::error::{CoreError, Result};
use crate::model::{forward, ModelConfig, ModelParams, OptimizerState, ParamVars, Predictions};
use crate::rng::Rng;
use crate::tensor::Array;

/// Which data is sampled and which loss terms are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    /// All sources mixed in one run; masked action targets contribute
    /// nothing.
    Joint,
    /// State-prediction pre-training on everything, then full loss on
    /// complete sources ([`train_staged`]).
    Staged,
    /// Complete (expert) trajectories only.
    CompleteOnly,
    /// Joint sampling, but only action targets contribute to the loss.
    ActionOnlyLoss,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Window length in timesteps.
    pub window: usize,
    pub steps: usize,
    pub lr_peak: f64,
    pub warmup_steps: usize,
    /// Cosine decays to this fraction of the peak.
    pub lr_floor_frac: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub grad_clip: f64,
    pub seed: u64,
    pub regime: Regime,
    /// Per-source sampling weights (expert, actionfree, retargeted);
    /// `None` draws trajectories uniformly, i.e. proportionally to counts.
    pub source_weights: Option<[f64; 3]>,
    /// Decay of the exponential moving average of parameters used for the
    /// exported model (0 disables). The averaged iterate strips the residual
    /// optimizer noise of the last steps, which otherwise dominates
    /// closed-loop behavior on large datasets where late batches are always
    /// fresh.
    pub param_ema_decay: f64,
    /// Probability of masking the first action token of a training window.
    /// Deployment windows begin with an unknown (masked) action at the
    /// episode start; this keeps that pattern in-distribution and gives the
    /// mask token gradient signal even on expert-only data.
    pub mask_first_prob: f64,
    /// Keep every k-th step record (1 = all).
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            window: 16,
            steps: 5000,
            lr_peak: 3e-4,
            warmup_steps: 100,
            lr_floor_frac: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            grad_clip: 1.0,
            seed: 0,
            regime: Regime::Joint,
            source_weights: None,
            param_ema_decay: 0.999,
            mask_first_prob: 0.25,
            log_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, model: &ModelConfig) -> Result<()> {
        if self.batch_size == 0 || self.steps == 0 {
            return Err(CoreError::Config("batch size and steps must be positive".into()));
        }
        if self.window < 2 {
            return Err(CoreError::Config("window must be at least 2 timesteps".into()));
        }
        if self.window > model.context {
            return Err(CoreError::Config(format!(
                "window ({}) exceeds model context ({})",
                self.window, model.context
            )));
        }
        if self.log_every == 0 {
            return Err(CoreError::Config("log_every must be positive".into()));
        }
        Ok(())
    }
}

/// Warmup then cosine decay to `lr_floor_frac · lr_peak`.
pub fn learning_rate(cfg: &TrainConfig, step: usize) -> f64 {
    if step < cfg.warmup_steps {
        return cfg.lr_peak * (step + 1) as f64 / cfg.warmup_steps as f64;
    }
    let floor = cfg.lr_floor_frac * cfg.lr_peak;
    let span = cfg.steps.saturating_sub(cfg.warmup_steps).max(1);
    let progress = (step - cfg.warmup_steps) as f64 / span as f64;
    floor + 0.5 * (cfg.lr_peak - floor) * (1.0 + (std::f64::consts::PI * progress.min(1.0)).cos())
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub total: f64,
    pub obs_part: f64,
    pub act_part: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct TrainLog {
    pub records: Vec<StepRecord>,
    /// Step index where staged training switched to stage two.
    pub stage_boundary: Option<usize>,
    /// Steps whose batch had an empty loss mask (loss defined as 0).
    pub empty_loss_steps: usize,
}

/// Masked mean-squared error over both prediction planes: the mean of squared
/// errors over elements whose loss mask is 1. An all-zero mask yields a zero
/// loss (flagged), not NaN.
pub struct LossParts {
    pub total: Var,
    pub total_value: f64,
    pub obs_part: f64,
    pub act_part: f64,
    pub live_elements: usize,
    pub empty: bool,
}

pub fn masked_mse(
    preds: &Predictions,
    target_obs: &Array,
    target_act: &Array,
    mask_obs: &Array,
    mask_act: &Array,
) -> Result<LossParts> {
    let diff_obs = preds.obs.add_const(&negated(target_obs))?.mul_const(mask_obs)?;
    let diff_act = preds.act.add_const(&negated(target_act))?.mul_const(mask_act)?;
    let sse_obs = diff_obs.mul(&diff_obs)?.sum();
    let sse_act = diff_act.mul(&diff_act)?.sum();
    let count_obs = mask_obs.data().iter().filter(|v| **v != 0.0).count();
    let count_act = mask_act.data().iter().filter(|v| **v != 0.0).count();
    let live = count_obs + count_act;
    let scale = if live == 0 { 0.0 } else { 1.0 / live as f64 };
    let total = sse_obs.add(&sse_act)?.scale(scale);
    let total_value = total.scalar_value()?;
    Ok(LossParts {
        total,
        total_value,
        obs_part: sse_obs.scalar_value()? * scale,
        act_part: sse_act.scalar_value()? * scale,
        live_elements: live,
        empty: live == 0,
    })
}

fn negated(a: &Array) -> Array {
    let data = a.data().iter().map(|v| -v).collect();
    Array::new(a.shape().to_vec(), data).expect("shape")
}

/// Normalized trajectories ready for window sampling.
pub struct TrainingSet {
    pub normalization: Normalization,
    trajectories: Vec<Trajectory>,
}

impl TrainingSet {
    /// Compute normalization over the union of trajectories and freeze
    /// normalized copies for sampling.
    pub fn prepare(raw: &[Trajectory]) -> Result<Self> {
        let normalization = compute_normalization(raw)?;
        let trajectories = raw
            .iter()
            .map(|t| normalize(t, &normalization))
            .collect::<Result<Vec<_>>>()?;
        Ok(TrainingSet {
            normalization,
            trajectories,
        })
    }

    /// Use a pre-computed normalization (e.g. a dataset manifest's).
    pub fn prepare_with(raw: &[Trajectory], normalization: Normalization) -> Result<Self> {
        normalization.validate()?;
        let trajectories = raw
            .iter()
            .map(|t| normalize(t, &normalization))
            .collect::<Result<Vec<_>>>()?;
        Ok(TrainingSet {
            normalization,
            trajectories,
        })
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn count(&self, source: Source) -> usize {
        self.trajectories.iter().filter(|t| t.source == source).count()
    }

    fn eligible(&self, window: usize, complete_only: bool) -> Vec<usize> {
        self.trajectories
            .iter()
            .enumerate()
            .filter(|(_, t)| t.steps() >= window)
            .filter(|(_, t)| !complete_only || t.source == Source::Expert)
            .map(|(i, _)| i)
            .collect()
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum LossTarget {
    Full,
    ObsOnly,
    ActOnly,
}

struct SamplerPlan {
    /// Eligible trajectory indices, grouped by source for weighted draws.
    by_source: Vec<(Source, Vec<usize>)>,
    flat: Vec<usize>,
    weights: Option<[f64; 3]>,
}

impl SamplerPlan {
    fn build(set: &TrainingSet, cfg: &TrainConfig, complete_only: bool) -> Result<Self> {
        let flat = set.eligible(cfg.window, complete_only);
        if flat.is_empty() {
            return Err(CoreError::Config(format!(
                "no eligible trajectories (window {}, complete_only {})",
                cfg.window, complete_only
            )));
        }
        let mut by_source = Vec::new();
        for source in Source::ALL {
            let idx: Vec<usize> = flat
                .iter()
                .copied()
                .filter(|i| set.trajectories[*i].source == source)
                .collect();
            if !idx.is_empty() {
                by_source.push((source, idx));
            }
        }
        Ok(SamplerPlan {
            by_source,
            flat,
            weights: cfg.source_weights,
        })
    }

    fn draw(&self, rng: &mut Rng) -> usize {
        match self.weights {
            None => self.flat[rng.uniform_usize(self.flat.len())],
            Some(w) => {
                let active: Vec<(f64, &Vec<usize>)> = self
                    .by_source
                    .iter()
                    .map(|(s, idx)| {
                        let wi = match s {
                            Source::Expert => w[0],
                            Source::ActionFree => w[1],
                            Source::Retargeted => w[2],
                        };
                        (wi, idx)
                    })
                    .filter(|(wi, _)| *wi > 0.0)
                    .collect();
                let total: f64 = active.iter().map(|(wi, _)| wi).sum();
                let mut pick = rng.uniform() * total;
                for (wi, idx) in &active {
                    pick -= wi;
                    if pick <= 0.0 {
                        return idx[rng.uniform_usize(idx.len())];
                    }
                }
                active.last().expect("nonempty")
                    .1[rng.uniform_usize(active.last().unwrap().1.len())]
            }
        }
    }
}

fn sample_batch(
    set: &TrainingSet,
    plan: &SamplerPlan,
    model: &ModelConfig,
    cfg: &TrainConfig,
    step: usize,
) -> Result<Vec<TokenSequence>> {
    let mut rng = Rng::derived(cfg.seed, 0x7361_6d70_0000_0000 | step as u64);
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for _ in 0..cfg.batch_size {
        let ti = plan.draw(&mut rng);
        let traj = &set.trajectories[ti];
        let max_start = traj.steps() - cfg.window;
        let start = if max_start == 0 {
            0
        } else {
            rng.uniform_usize(max_start + 1)
        };
        let mut seq = tokenize(
            traj,
            start,
            cfg.window,
            model.layout,
            model.aligned,
            MaskPolicy::FromPresence,
        )?;
        if cfg.mask_first_prob > 0.0 && rng.uniform() < cfg.mask_first_prob {
            seq.act_masked[0] = true;
            let n = seq.act_dim();
            seq.act.data_mut()[..n].fill(0.0);
        }
        batch.push(seq);
    }
    Ok(batch)
}

fn stack_plane(batch: &[TokenSequence], pick: impl Fn(&TokenSequence) -> &Array) -> Array {
    let first = pick(&batch[0]);
    let cols = first.ncols();
    let rows: usize = batch.iter().map(|s| pick(s).nrows()).sum();
    let mut data = Vec::with_capacity(rows * cols);
    for seq in batch {
        data.extend_from_slice(pick(seq).data());
    }
    Array::new(vec![rows, cols], data).expect("shape")
}

struct Adam {
    m: Vec<Array>,
    v: Vec<Array>,
    step: u64,
    ema: Option<Vec<Array>>,
}

impl Adam {
    fn fresh(params: &ModelParams, cfg: &TrainConfig) -> Self {
        let zeros: Vec<Array> = params.tensors().iter().map(|t| Array::zeros(t.shape())).collect();
        let ema = (cfg.param_ema_decay > 0.0)
            .then(|| params.tensors().iter().map(|t| (*t).clone()).collect());
        Adam {
            m: zeros.clone(),
            v: zeros,
            step: 0,
            ema,
        }
    }

    fn from_state(state: OptimizerState) -> Self {
        Adam {
            m: state.m,
            v: state.v,
            step: state.step,
            ema: state.ema,
        }
    }

    fn into_state(self, raw_params: Option<ModelParams>) -> OptimizerState {
        OptimizerState {
            m: self.m,
            v: self.v,
            step: self.step,
            raw_params,
            ema: self.ema,
        }
    }

    /// Parameters with the running average substituted in, when enabled.
    fn averaged(&self, raw: &ModelParams) -> ModelParams {
        match &self.ema {
            None => raw.clone(),
            Some(ema) => {
                let mut out = raw.clone();
                for (tensor, avg) in out.tensors_mut().into_iter().zip(ema) {
                    tensor.data_mut().copy_from_slice(avg.data());
                }
                out
            }
        }
    }

    fn apply(&mut self, params: &mut ModelParams, grads: &[Array], lr: f64, cfg: &TrainConfig) {
        self.step += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.step as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.step as i32);
        for ((tensor, grad), (m, v)) in params
            .tensors_mut()
            .into_iter()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let td = tensor.data_mut();
            let md = m.data_mut();
            let vd = v.data_mut();
            for i in 0..td.len() {
                let g = grad.data()[i];
                md[i] = cfg.beta1 * md[i] + (1.0 - cfg.beta1) * g;
                vd[i] = cfg.beta2 * vd[i] + (1.0 - cfg.beta2) * g * g;
                let mhat = md[i] / bc1;
                let vhat = vd[i] / bc2;
                td[i] -= lr * mhat / (vhat.sqrt() + cfg.eps);
            }
        }
        if let Some(ema) = &mut self.ema {
            let decay = cfg.param_ema_decay;
            for (avg, tensor) in ema.iter_mut().zip(params.tensors()) {
                for (a, t) in avg.data_mut().iter_mut().zip(tensor.data()) {
                    *a = decay * *a + (1.0 - decay) * t;
                }
            }
        }
    }
}

fn clip_grads(grads: &mut [Array], max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let total: f64 = grads
        .iter()
        .map(|g| g.data().iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if total > max_norm {
        let scale = max_norm / total;
        for g in grads {
            for v in g.data_mut() {
                *v *= scale;
            }
        }
    }
}

fn apply_loss_target(mask_obs: &mut Array, mask_act: &mut Array, target: LossTarget) {
    match target {
        LossTarget::Full => {}
        LossTarget::ObsOnly => mask_act.data_mut().fill(0.0),
        LossTarget::ActOnly => mask_obs.data_mut().fill(0.0),
    }
}

#[allow(clippy::too_many_arguments)]
fn train_span(
    params: &mut ModelParams,
    adam: &mut Adam,
    model: &ModelConfig,
    set: &TrainingSet,
    cfg: &TrainConfig,
    steps: std::ops::Range<usize>,
    loss_target: LossTarget,
    complete_only: bool,
    log: &mut TrainLog,
) -> Result<()> {
    let plan = SamplerPlan::build(set, cfg, complete_only)?;
    for step in steps {
        let batch = sample_batch(set, &plan, model, cfg, step)?;
        let refs: Vec<&TokenSequence> = batch.iter().collect();
        let pv = ParamVars::from_params(params);
        let preds = forward(&pv, model, &refs)?;

        let target_obs = stack_plane(&batch, |s| &s.target_obs);
        let target_act = stack_plane(&batch, |s| &s.target_act);
        let mut mask_obs = stack_plane(&batch, |s| &s.loss_mask_obs);
        let mut mask_act = stack_plane(&batch, |s| &s.loss_mask_act);
        apply_loss_target(&mut mask_obs, &mut mask_act, loss_target);

        let loss = masked_mse(&preds, &target_obs, &target_act, &mask_obs, &mask_act)?;
        if !loss.total_value.is_finite() {
            return Err(CoreError::NanLoss { step });
        }
        if loss.empty {
            log.empty_loss_steps += 1;
        }
        loss.total.backward()?;

        let mut grads: Vec<Array> = pv.leaves().iter().map(|l| l.grad_or_zeros()).collect();
        clip_grads(&mut grads, cfg.grad_clip);
        let lr = learning_rate(cfg, step);
        adam.apply(params, &grads, lr, cfg);

        if step % cfg.log_every == 0 || step + 1 == cfg.steps {
            log.records.push(StepRecord {
                step,
                total: loss.total_value,
                obs_part: loss.obs_part,
                act_part: loss.act_part,
                lr,
            });
        }
    }
    Ok(())
}

/// Outcome of a training run: final parameters, optimizer state for exact
/// resumption, and the loss log.
pub struct TrainOutcome {
    pub params: ModelParams,
    pub optimizer: OptimizerState,
    pub log: TrainLog,
    pub steps_done: usize,
}

/// Run `cfg.steps` optimizer updates under the configured regime.
/// Deterministic for a given seed: per-step sampling streams are keyed by
/// (seed, step), so a resumed run reproduces the original continued run.
pub fn train(
    init: ModelParams,
    model: &ModelConfig,
    set: &TrainingSet,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if cfg.regime == Regime::Staged {
        return train_staged(init, model, set, cfg);
    }
    cfg.validate(model)?;
    resume(init, None, 0, model, set, cfg)
}

/// Continue a run from `start_step` with existing optimizer state.
pub fn resume(
    mut params: ModelParams,
    optimizer: Option<OptimizerState>,
    start_step: usize,
    model: &ModelConfig,
    set: &TrainingSet,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate(model)?;
    if cfg.regime == Regime::Staged {
        return Err(CoreError::Config(
            "staged training does not support mid-run resumption; rerun train_staged".into(),
        ));
    }
    let (loss_target, complete_only) = match cfg.regime {
        Regime::Joint => (LossTarget::Full, false),
        Regime::CompleteOnly => (LossTarget::Full, true),
        Regime::ActionOnlyLoss => (LossTarget::ActOnly, false),
        Regime::Staged => unreachable!(),
    };
    let mut adam = match optimizer {
        Some(mut state) => {
            if let Some(raw) = state.raw_params.take() {
                params = raw;
            }
            Adam::from_state(state)
        }
        None => Adam::fresh(&params, cfg),
    };
    let mut log = TrainLog::default();
    train_span(
        &mut params,
        &mut adam,
        model,
        set,
        cfg,
        start_step..cfg.steps,
        loss_target,
        complete_only,
        &mut log,
    )?;
    let exported = adam.averaged(&params);
    let raw = (cfg.param_ema_decay > 0.0).then_some(params);
    Ok(TrainOutcome {
        params: exported,
        optimizer: adam.into_state(raw),
        log,
        steps_done: cfg.steps,
    })
}

/// Stage one pre-trains on state prediction over every source; stage two
/// fine-tunes with the full loss on complete sources. The step budget is
/// split 50/50 and the optimizer restarts fresh for the fine-tuning stage.
pub fn train_staged(
    mut params: ModelParams,
    model: &ModelConfig,
    set: &TrainingSet,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate(model)?;
    if set.count(Source::Expert) == 0 {
        return Err(CoreError::Config("staged training requires complete trajectories".into()));
    }
    if set.count(Source::ActionFree) + set.count(Source::Retargeted) == 0 {
        return Err(CoreError::Config("staged training requires incomplete trajectories".into()));
    }
    let boundary = cfg.steps / 2;
    let mut log = TrainLog {
        stage_boundary: Some(boundary),
        ..TrainLog::default()
    };

    let mut adam = Adam::fresh(&params, cfg);
    train_span(
        &mut params,
        &mut adam,
        model,
        set,
        cfg,
        0..boundary,
        LossTarget::ObsOnly,
        false,
        &mut log,
    )?;
    // fine-tuning starts from the averaged pre-training iterate
    params = adam.averaged(&params);

    let mut adam2 = Adam::fresh(&params, cfg);
    train_span(
        &mut params,
        &mut adam2,
        model,
        set,
        cfg,
        boundary..cfg.steps,
        LossTarget::Full,
        true,
        &mut log,
    )?;
    let exported = adam2.averaged(&params);
    let raw = (cfg.param_ema_decay > 0.0).then_some(params);
    Ok(TrainOutcome {
        params: exported,
        optimizer: adam2.into_state(raw),
        log,
        steps_done: cfg.steps,
    })
}
