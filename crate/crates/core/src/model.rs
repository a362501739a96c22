//! Causal transformer over sensorimotor token sequences.
//!
//! Observations and actions are embedded with separate linear projections
//! (their concatenation realizes the single-matrix embedding of the concat
//! layout), missing actions are replaced by a learned mask token, learned
//! positional embeddings encode time, and predictions come from per-modality
//! linear heads. The default block applies one LayerNorm at the block start
//! and adds the MLP residual onto the post-attention tensor without
//! re-normalization; `dual_norm` switches to the conventional pre-LN block
//! with a second LayerNorm before the MLP.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::data::{Normalization, TokenLayout, TokenSequence};
use crate::error::{CoreError, Result};
use crate::rng::Rng;
use crate::tensor::Array;

pub const LAYER_NORM_EPS: f64 = 1e-5;
const CAUSAL_MASK_NEG: f64 = -1e30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Embedding width.
    pub d: usize,
    /// Transformer blocks.
    pub layers: usize,
    /// Attention heads (must divide `d`).
    pub heads: usize,
    /// Maximum timesteps kept in the rolling context.
    pub context: usize,
    pub layout: TokenLayout,
    /// Separate layout: predict the next token of the same modality (true)
    /// or the next interleaved token (false).
    pub aligned: bool,
    /// Observation dimension.
    pub m: usize,
    /// Action dimension.
    pub n: usize,
    /// Conventional pre-LN block with a second LayerNorm before the MLP.
    #[serde(default)]
    pub dual_norm: bool,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.layers == 0 || self.heads == 0 || self.m == 0 || self.n == 0 {
            return Err(CoreError::Config("model dimensions must be positive".into()));
        }
        if self.d % self.heads != 0 {
            return Err(CoreError::Config(format!(
                "embedding width {} not divisible by {} heads",
                self.d, self.heads
            )));
        }
        if self.context < 2 {
            return Err(CoreError::Config("context must be at least 2 timesteps".into()));
        }
        Ok(())
    }

    /// Tokens per timestep under this layout.
    pub fn tokens_per_step(&self) -> usize {
        match self.layout {
            TokenLayout::Concat => 1,
            TokenLayout::Separate => 2,
        }
    }

    /// Positional table length.
    pub fn pos_len(&self) -> usize {
        self.context * self.tokens_per_step()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockParams {
    pub ln_gain: Array,
    pub ln_bias: Array,
    /// Present only in the dual-norm variant.
    pub ln2_gain: Option<Array>,
    pub ln2_bias: Option<Array>,
    pub wq: Array,
    pub bq: Array,
    pub wk: Array,
    pub bk: Array,
    pub wv: Array,
    pub bv: Array,
    pub wo: Array,
    pub bo: Array,
    pub w_mlp_in: Array,
    pub b_mlp_in: Array,
    pub w_mlp_out: Array,
    pub b_mlp_out: Array,
}

/// All learnable tensors. Weight matrices are stored input-major (`x · W`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// m×d observation embedding.
    pub w_embed_obs: Array,
    /// n×d action embedding.
    pub w_embed_act: Array,
    /// 1×n learned token substituted for missing actions.
    pub mask_token: Array,
    /// pos_len×d learned positional embeddings.
    pub pos: Array,
    pub blocks: Vec<BlockParams>,
    /// d×m observation head.
    pub w_head_obs: Array,
    /// d×n action head.
    pub w_head_act: Array,
}

impl ModelParams {
    /// Flat view of every tensor, in a fixed order shared with
    /// [`ParamVars::leaves`].
    pub fn tensors(&self) -> Vec<&Array> {
        let mut out: Vec<&Array> = vec![
            &self.w_embed_obs,
            &self.w_embed_act,
            &self.mask_token,
            &self.pos,
        ];
        for b in &self.blocks {
            out.push(&b.ln_gain);
            out.push(&b.ln_bias);
            if let (Some(g), Some(bi)) = (&b.ln2_gain, &b.ln2_bias) {
                out.push(g);
                out.push(bi);
            }
            out.extend([
                &b.wq, &b.bq, &b.wk, &b.bk, &b.wv, &b.bv, &b.wo, &b.bo, &b.w_mlp_in, &b.b_mlp_in,
                &b.w_mlp_out, &b.b_mlp_out,
            ]);
        }
        out.push(&self.w_head_obs);
        out.push(&self.w_head_act);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Array> {
        let mut out: Vec<&mut Array> = vec![
            &mut self.w_embed_obs,
            &mut self.w_embed_act,
            &mut self.mask_token,
            &mut self.pos,
        ];
        for b in &mut self.blocks {
            out.push(&mut b.ln_gain);
            out.push(&mut b.ln_bias);
            if let (Some(g), Some(bi)) = (&mut b.ln2_gain, &mut b.ln2_bias) {
                out.push(g);
                out.push(bi);
            }
            out.push(&mut b.wq);
            out.push(&mut b.bq);
            out.push(&mut b.wk);
            out.push(&mut b.bk);
            out.push(&mut b.wv);
            out.push(&mut b.bv);
            out.push(&mut b.wo);
            out.push(&mut b.bo);
            out.push(&mut b.w_mlp_in);
            out.push(&mut b.b_mlp_in);
            out.push(&mut b.w_mlp_out);
            out.push(&mut b.b_mlp_out);
        }
        out.push(&mut self.w_head_obs);
        out.push(&mut self.w_head_act);
        out
    }

    pub fn count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.all_finite())
    }
}

const INIT_STD: f64 = 0.02;

/// Seeded Gaussian initialization (std 0.02) for weights, zeros for biases,
/// ones for LayerNorm gains; the mask token is drawn like a weight and
/// learned end-to-end.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ModelParams> {
    cfg.validate()?;
    let mut rng = Rng::derived(seed, 0x696e_6974);
    let mut gauss = |shape: &[usize]| {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| INIT_STD * rng.normal()).collect();
        Array::new(shape.to_vec(), data).expect("shape")
    };
    let d = cfg.d;
    let hidden = 4 * d;
    let mut blocks = Vec::with_capacity(cfg.layers);
    let w_embed_obs = gauss(&[cfg.m, d]);
    let w_embed_act = gauss(&[cfg.n, d]);
    let mask_token = gauss(&[1, cfg.n]);
    let pos = gauss(&[cfg.pos_len(), d]);
    for _ in 0..cfg.layers {
        blocks.push(BlockParams {
            ln_gain: Array::ones(&[d]),
            ln_bias: Array::zeros(&[d]),
            ln2_gain: cfg.dual_norm.then(|| Array::ones(&[d])),
            ln2_bias: cfg.dual_norm.then(|| Array::zeros(&[d])),
            wq: gauss(&[d, d]),
            bq: Array::zeros(&[d]),
            wk: gauss(&[d, d]),
            bk: Array::zeros(&[d]),
            wv: gauss(&[d, d]),
            bv: Array::zeros(&[d]),
            wo: gauss(&[d, d]),
            bo: Array::zeros(&[d]),
            w_mlp_in: gauss(&[d, hidden]),
            b_mlp_in: Array::zeros(&[hidden]),
            w_mlp_out: gauss(&[hidden, d]),
            b_mlp_out: Array::zeros(&[d]),
        });
    }
    Ok(ModelParams {
        w_embed_obs,
        w_embed_act,
        mask_token,
        pos,
        blocks,
        w_head_obs: gauss(&[d, cfg.m]),
        w_head_act: gauss(&[d, cfg.n]),
    })
}

/// Closed-form parameter count for a config (oracle for `init_params`).
pub fn param_count(cfg: &ModelConfig) -> usize {
    let d = cfg.d;
    let per_block =
        2 * d + if cfg.dual_norm { 2 * d } else { 0 } + 4 * (d * d + d) + (d * 4 * d + 4 * d) + (4 * d * d + d);
    cfg.m * d + cfg.n * d + cfg.n + cfg.pos_len() * d + cfg.layers * per_block + d * cfg.m + d * cfg.n
}

struct BlockVars {
    ln_gain: Var,
    ln_bias: Var,
    ln2: Option<(Var, Var)>,
    wq: Var,
    bq: Var,
    wk: Var,
    bk: Var,
    wv: Var,
    bv: Var,
    wo: Var,
    bo: Var,
    w_mlp_in: Var,
    b_mlp_in: Var,
    w_mlp_out: Var,
    b_mlp_out: Var,
}

/// Gradient-tracked leaves over a parameter set; one forward/backward pass
/// per instantiation.
pub struct ParamVars {
    pub w_embed_obs: Var,
    pub w_embed_act: Var,
    pub mask_token: Var,
    pub pos: Var,
    blocks: Vec<BlockVars>,
    pub w_head_obs: Var,
    pub w_head_act: Var,
}

impl ParamVars {
    pub fn from_params(params: &ModelParams) -> Self {
        ParamVars {
            w_embed_obs: Var::leaf(params.w_embed_obs.clone()),
            w_embed_act: Var::leaf(params.w_embed_act.clone()),
            mask_token: Var::leaf(params.mask_token.clone()),
            pos: Var::leaf(params.pos.clone()),
            blocks: params
                .blocks
                .iter()
                .map(|b| BlockVars {
                    ln_gain: Var::leaf(b.ln_gain.clone()),
                    ln_bias: Var::leaf(b.ln_bias.clone()),
                    ln2: match (&b.ln2_gain, &b.ln2_bias) {
                        (Some(g), Some(bi)) => {
                            Some((Var::leaf(g.clone()), Var::leaf(bi.clone())))
                        }
                        _ => None,
                    },
                    wq: Var::leaf(b.wq.clone()),
                    bq: Var::leaf(b.bq.clone()),
                    wk: Var::leaf(b.wk.clone()),
                    bk: Var::leaf(b.bk.clone()),
                    wv: Var::leaf(b.wv.clone()),
                    bv: Var::leaf(b.bv.clone()),
                    wo: Var::leaf(b.wo.clone()),
                    bo: Var::leaf(b.bo.clone()),
                    w_mlp_in: Var::leaf(b.w_mlp_in.clone()),
                    b_mlp_in: Var::leaf(b.b_mlp_in.clone()),
                    w_mlp_out: Var::leaf(b.w_mlp_out.clone()),
                    b_mlp_out: Var::leaf(b.b_mlp_out.clone()),
                })
                .collect(),
            w_head_obs: Var::leaf(params.w_head_obs.clone()),
            w_head_act: Var::leaf(params.w_head_act.clone()),
        }
    }

    /// Leaves in the same order as [`ModelParams::tensors`].
    pub fn leaves(&self) -> Vec<Var> {
        let mut out = vec![
            self.w_embed_obs.clone(),
            self.w_embed_act.clone(),
            self.mask_token.clone(),
            self.pos.clone(),
        ];
        for b in &self.blocks {
            out.push(b.ln_gain.clone());
            out.push(b.ln_bias.clone());
            if let Some((g, bi)) = &b.ln2 {
                out.push(g.clone());
                out.push(bi.clone());
            }
            out.extend([
                b.wq.clone(),
                b.bq.clone(),
                b.wk.clone(),
                b.bk.clone(),
                b.wv.clone(),
                b.bv.clone(),
                b.wo.clone(),
                b.bo.clone(),
                b.w_mlp_in.clone(),
                b.b_mlp_in.clone(),
                b.w_mlp_out.clone(),
                b.b_mlp_out.clone(),
            ]);
        }
        out.push(self.w_head_obs.clone());
        out.push(self.w_head_act.clone());
        out
    }
}

/// Per-step prediction planes, stacked over the batch in sequence order.
/// `obs` row `b·K+i` / `act` row `b·K+i` hold the observation/action
/// prediction the model emits for step `i` of batch element `b`, matching
/// the target planes of [`TokenSequence`].
pub struct Predictions {
    pub obs: Var,
    pub act: Var,
}

fn causal_mask(tokens: usize) -> Array {
    let mut data = vec![0.0; tokens * tokens];
    for i in 0..tokens {
        for j in (i + 1)..tokens {
            data[i * tokens + j] = CAUSAL_MASK_NEG;
        }
    }
    Array::new(vec![tokens, tokens], data).expect("shape")
}

/// Forward pass over a batch of equally-shaped token sequences.
pub fn forward(pv: &ParamVars, cfg: &ModelConfig, batch: &[&TokenSequence]) -> Result<Predictions> {
    cfg.validate()?;
    let first = batch.first().ok_or_else(|| CoreError::Contract {
        op: "forward",
        detail: "empty batch".into(),
    })?;
    let steps = first.steps;
    if steps > cfg.context {
        return Err(CoreError::Contract {
            op: "forward",
            detail: format!("sequence of {} steps exceeds context {}", steps, cfg.context),
        });
    }
    for seq in batch {
        if seq.steps != steps || seq.layout != cfg.layout || seq.obs_dim() != cfg.m || seq.act_dim() != cfg.n {
            return Err(CoreError::Contract {
                op: "forward",
                detail: "batch sequences must share steps, layout, and dimensions".into(),
            });
        }
    }
    let b = batch.len();

    // Stack planes batch-major: row b·steps + i. Masked action slots are
    // forced to zero here, so stored placeholder values can never leak into
    // the embedding; the mask-token embedding is scattered in below.
    let mut obs_rows = Vec::with_capacity(b * steps * cfg.m);
    let mut act_rows = Vec::with_capacity(b * steps * cfg.n);
    let mut mask_flags = Vec::with_capacity(b * steps);
    for seq in batch {
        obs_rows.extend_from_slice(seq.obs.data());
        for (i, masked) in seq.act_masked.iter().enumerate() {
            if *masked {
                act_rows.extend(std::iter::repeat(0.0).take(cfg.n));
            } else {
                act_rows.extend_from_slice(seq.act.row(i));
            }
            mask_flags.push(if *masked { 1.0 } else { 0.0 });
        }
    }
    let obs_mat = Var::leaf(Array::new(vec![b * steps, cfg.m], obs_rows)?);
    let act_mat = Var::leaf(Array::new(vec![b * steps, cfg.n], act_rows)?);
    let mask_col = Var::leaf(Array::new(vec![b * steps, 1], mask_flags)?);

    // Embeddings. Masked action slots hold zero placeholders, so their
    // contribution through w_embed_act vanishes and the mask-token embedding
    // is scattered in instead; the stored placeholder values never matter.
    let h_obs = obs_mat.matmul(&pv.w_embed_obs)?;
    let mask_emb = pv.mask_token.matmul(&pv.w_embed_act)?;
    let h_act = act_mat
        .matmul(&pv.w_embed_act)?
        .add(&mask_col.matmul(&mask_emb)?)?;

    let tps = cfg.tokens_per_step();
    let tokens = steps * tps;
    let mut h = match cfg.layout {
        TokenLayout::Concat => h_obs.add(&h_act)?,
        TokenLayout::Separate => {
            // Interleave (o_i, a_i) per sequence: global rows are
            // [b·2K + 2i] = obs, [b·2K + 2i + 1] = act.
            let stacked = Var::concat_rows(&[h_obs, h_act])?;
            let mut idx = Vec::with_capacity(b * tokens);
            for bi in 0..b {
                for i in 0..steps {
                    idx.push(bi * steps + i);
                    idx.push(b * steps + bi * steps + i);
                }
            }
            stacked.gather_rows(&idx)?
        }
    };

    let pos_window = pv.pos.slice_rows(0, tokens)?;
    h = h.add(&pos_window.tile_rows(b)?)?;

    let dh = cfg.d / cfg.heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mask = causal_mask(tokens);

    for block in &pv.blocks {
        let normed = h.layer_norm(&block.ln_gain, &block.ln_bias, LAYER_NORM_EPS)?;

        let q = normed.matmul(&block.wq)?.add_row_broadcast(&block.bq)?;
        let k = normed.matmul(&block.wk)?.add_row_broadcast(&block.bk)?;
        let v = normed.matmul(&block.wv)?.add_row_broadcast(&block.bv)?;

        let mut seq_outputs = Vec::with_capacity(b);
        for bi in 0..b {
            let qs = q.slice_rows(bi * tokens, tokens)?;
            let ks = k.slice_rows(bi * tokens, tokens)?;
            let vs = v.slice_rows(bi * tokens, tokens)?;
            let mut head_outputs = Vec::with_capacity(cfg.heads);
            for hi in 0..cfg.heads {
                let qh = qs.slice_cols(hi * dh, dh)?;
                let kh = ks.slice_cols(hi * dh, dh)?;
                let vh = vs.slice_cols(hi * dh, dh)?;
                let scores = qh
                    .matmul(&kh.transpose()?)?
                    .scale(scale)
                    .add_const(&mask)?;
                let probs = scores.softmax_lastdim();
                head_outputs.push(probs.matmul(&vh)?);
            }
            seq_outputs.push(Var::concat_cols(&head_outputs)?);
        }
        let ctx = Var::concat_rows(&seq_outputs)?;
        let attn = ctx.matmul(&block.wo)?.add_row_broadcast(&block.bo)?;

        if let Some((g2, b2)) = &block.ln2 {
            // conventional pre-LN: x = x + attn(LN1 x); x = x + mlp(LN2 x)
            let after_attn = h.add(&attn)?;
            let normed2 = after_attn.layer_norm(g2, b2, LAYER_NORM_EPS)?;
            let mlp = normed2
                .matmul(&block.w_mlp_in)?
                .add_row_broadcast(&block.b_mlp_in)?
                .relu()
                .matmul(&block.w_mlp_out)?
                .add_row_broadcast(&block.b_mlp_out)?;
            h = after_attn.add(&mlp)?;
        } else {
            // single norm at the block start; the MLP residual adds onto the
            // post-attention tensor without re-normalization
            let mid = normed.add(&attn)?;
            let mlp = mid
                .matmul(&block.w_mlp_in)?
                .add_row_broadcast(&block.b_mlp_in)?
                .relu()
                .matmul(&block.w_mlp_out)?
                .add_row_broadcast(&block.b_mlp_out)?;
            h = mid.add(&mlp)?;
        }
    }

    let (obs_positions, act_positions) = match cfg.layout {
        TokenLayout::Concat => (None, None),
        TokenLayout::Separate => {
            // rows of h that emit observation/action predictions
            let mut obs_idx = Vec::with_capacity(b * steps);
            let mut act_idx = Vec::with_capacity(b * steps);
            for bi in 0..b {
                for i in 0..steps {
                    let o_pos = bi * tokens + 2 * i;
                    let a_pos = o_pos + 1;
                    if cfg.aligned {
                        obs_idx.push(o_pos);
                        act_idx.push(a_pos);
                    } else {
                        // next interleaved token: o-positions predict the
                        // action of their own step, a-positions the next
                        // observation
                        obs_idx.push(a_pos);
                        act_idx.push(o_pos);
                    }
                }
            }
            (Some(obs_idx), Some(act_idx))
        }
    };

    let (pred_obs, pred_act) = match cfg.layout {
        TokenLayout::Concat => (
            h.matmul(&pv.w_head_obs)?,
            h.matmul(&pv.w_head_act)?,
        ),
        TokenLayout::Separate => {
            let obs_h = h.gather_rows(obs_positions.as_ref().unwrap())?;
            let act_h = h.gather_rows(act_positions.as_ref().unwrap())?;
            (obs_h.matmul(&pv.w_head_obs)?, act_h.matmul(&pv.w_head_act)?)
        }
    };

    Ok(Predictions {
        obs: pred_obs,
        act: pred_act,
    })
}

/// Inference-only forward: plain arrays out.
pub fn forward_values(
    params: &ModelParams,
    cfg: &ModelConfig,
    batch: &[&TokenSequence],
) -> Result<(Array, Array)> {
    let pv = ParamVars::from_params(params);
    let preds = forward(&pv, cfg, batch)?;
    Ok((preds.obs.value(), preds.act.value()))
}

/// One buffered timestep: the observation as taken from the environment and
/// the action that was executed, if one is known. `None` embeds as the
/// learned mask token.
#[derive(Debug, Clone)]
pub struct ContextStep {
    pub obs: Vec<f64>,
    pub act: Option<Vec<f64>>,
}

/// Rolling inference buffer; keeps at most `cap` most recent steps.
#[derive(Debug, Clone)]
pub struct RollingContext {
    cap: usize,
    steps: VecDeque<ContextStep>,
}

impl RollingContext {
    pub fn new(cap: usize) -> Self {
        RollingContext {
            cap,
            steps: VecDeque::new(),
        }
    }

    pub fn push(&mut self, step: ContextStep) {
        self.steps.push_back(step);
        while self.steps.len() > self.cap {
            self.steps.pop_front();
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ContextStep> {
        self.steps.iter()
    }
}

fn context_to_sequence(
    ctx_steps: &[(&[f64], Option<&[f64]>)],
    cfg: &ModelConfig,
    norm: &Normalization,
    extra_obs_normalized: Option<&[f64]>,
) -> Result<TokenSequence> {
    let s = ctx_steps.len() + usize::from(extra_obs_normalized.is_some());
    let mut obs = Vec::with_capacity(s * cfg.m);
    let mut act = Vec::with_capacity(s * cfg.n);
    let mut masked = Vec::with_capacity(s);
    for (o, a) in ctx_steps {
        obs.extend(norm.normalize_obs_row(o));
        match a {
            Some(a) => {
                act.extend(norm.normalize_act_row(a));
                masked.push(false);
            }
            None => {
                act.extend(std::iter::repeat(0.0).take(cfg.n));
                masked.push(true);
            }
        }
    }
    if let Some(o) = extra_obs_normalized {
        obs.extend_from_slice(o);
        act.extend(std::iter::repeat(0.0).take(cfg.n));
        masked.push(true);
    }
    Ok(TokenSequence {
        layout: cfg.layout,
        aligned: cfg.aligned,
        steps: s,
        obs: Array::new(vec![s, cfg.m], obs)?,
        act: Array::new(vec![s, cfg.n], act)?,
        act_masked: masked,
        target_obs: Array::zeros(&[s, cfg.m]),
        target_act: Array::zeros(&[s, cfg.n]),
        loss_mask_obs: Array::zeros(&[s, cfg.m]),
        loss_mask_act: Array::zeros(&[s, cfg.n]),
    })
}

/// Predict the action to execute for the step following the buffered history.
///
/// The action is conditioned on completed steps only, matching training-time
/// causality. In the non-aligned separate layout the model first predicts the
/// upcoming observation and feeds that estimate as a transient input token to
/// query the action; the estimate is never retained in the buffer.
pub fn predict_next_action(
    params: &ModelParams,
    cfg: &ModelConfig,
    norm: &Normalization,
    history: &RollingContext,
) -> Result<Vec<f64>> {
    if history.is_empty() {
        return Err(CoreError::Contract {
            op: "predict_next_action",
            detail: "history is empty".into(),
        });
    }
    let steps: Vec<(&[f64], Option<&[f64]>)> = history
        .iter()
        .map(|s| (s.obs.as_slice(), s.act.as_deref()))
        .collect();

    let nonaligned_separate = cfg.layout == TokenLayout::Separate && !cfg.aligned;
    let normalized_act = if nonaligned_separate {
        // pass 1: estimate the next observation at the last action position
        let seq = context_to_sequence(&steps, cfg, norm, None)?;
        let s = seq.steps;
        let (pred_obs, _) = forward_values(params, cfg, &[&seq])?;
        let next_obs = pred_obs.row(s - 1).to_vec();
        // pass 2: append the estimate and query the action at its position
        let keep = steps.len().min(cfg.context - 1);
        let trimmed = &steps[steps.len() - keep..];
        let seq2 = context_to_sequence(trimmed, cfg, norm, Some(&next_obs))?;
        let (_, pred_act) = forward_values(params, cfg, &[&seq2])?;
        pred_act.row(seq2.steps - 1).to_vec()
    } else {
        let seq = context_to_sequence(&steps, cfg, norm, None)?;
        let (_, pred_act) = forward_values(params, cfg, &[&seq])?;
        pred_act.row(seq.steps - 1).to_vec()
    };
    Ok(norm.denormalize_act_row(&normalized_act))
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Optimizer moments (and the parameter running average, when enabled),
/// kept alongside the parameters so training can resume and reproduce the
/// exact continued run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub m: Vec<Array>,
    pub v: Vec<Array>,
    pub step: u64,
    /// Raw (non-averaged) parameters; present when the checkpointed params
    /// are an exponential moving average.
    #[serde(default)]
    pub raw_params: Option<ModelParams>,
    #[serde(default)]
    pub ema: Option<Vec<Array>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: ModelConfig,
    pub normalization: Normalization,
    pub params: ModelParams,
    /// Training steps already taken.
    pub step: u64,
    pub optimizer: Option<OptimizerState>,
    /// Seed of the training run that produced this checkpoint.
    pub train_seed: u64,
}

pub fn save_checkpoint(path: &std::path::Path, ckpt: &Checkpoint) -> Result<()> {
    let body = serde_json::to_string(ckpt)
        .map_err(|e| CoreError::Checkpoint(format!("serialization: {e}")))?;
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| CoreError::io(parent.display().to_string(), e))?;
    }
    std::fs::write(path, body).map_err(|e| CoreError::io(path.display().to_string(), e))
}

pub fn load_checkpoint(path: &std::path::Path) -> Result<Checkpoint> {
    let body =
        std::fs::read_to_string(path).map_err(|e| CoreError::io(path.display().to_string(), e))?;
    let ckpt: Checkpoint = serde_json::from_str(&body).map_err(|e| CoreError::Parse {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    if ckpt.version != CHECKPOINT_VERSION {
        return Err(CoreError::Checkpoint(format!(
            "unsupported checkpoint version {} (expected {})",
            ckpt.version, CHECKPOINT_VERSION
        )));
    }
    ckpt.config.validate()?;
    if !ckpt.params.all_finite() {
        return Err(CoreError::Checkpoint("non-finite parameters".into()));
    }
    Ok(ckpt)
}
