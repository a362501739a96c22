//! Windowing a trajectory into a model-ready token sequence.
//!
//! A window of `len` timesteps yields, per step, an observation token and an
//! action token (kept as separate planes; the model interleaves or
//! concatenates them according to its layout). Targets are stored per step
//! with one convention across layouts: `target_obs[i]` / `target_act[i]` is
//! the regression target for the observation/action prediction the model
//! emits for step `i`, and the loss masks are zero wherever that target does
//! not exist or corresponds to an absent action.

use crate::error::{CoreError, Result};
use crate::tensor::Array;

use super::Trajectory;

/// How observation/action pairs are presented to the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenLayout {
    /// One token per step: concat(o_i, a_i).
    Concat,
    /// Two tokens per step: o_i then a_i.
    Separate,
}

/// Which action slots are flagged for mask-token substitution at embed time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskPolicy {
    /// Mask exactly the steps whose action is absent.
    FromPresence,
    /// Mask every action slot (treat the window as action-free).
    MaskAll,
}

/// Model-ready window: token planes, per-step mask flags, aligned targets and
/// loss masks. Values are whatever the source trajectory holds (normalized
/// upstream for training).
#[derive(Debug, Clone)]
pub struct TokenSequence {
    pub layout: TokenLayout,
    /// In the separate layout: predict the next token of the same modality
    /// (true) or the next interleaved token (false). Ignored for concat.
    pub aligned: bool,
    /// Timesteps in the window.
    pub steps: usize,
    /// steps×m observation tokens.
    pub obs: Array,
    /// steps×n action tokens; zeros where masked.
    pub act: Array,
    /// Per step: substitute the learned mask token for this action slot.
    pub act_masked: Vec<bool>,
    /// steps×m regression targets for observation predictions.
    pub target_obs: Array,
    /// steps×n regression targets for action predictions.
    pub target_act: Array,
    /// 0/1 loss masks, same shapes as the targets.
    pub loss_mask_obs: Array,
    pub loss_mask_act: Array,
}

impl TokenSequence {
    /// Number of tokens the model sees.
    pub fn token_count(&self) -> usize {
        match self.layout {
            TokenLayout::Concat => self.steps,
            TokenLayout::Separate => 2 * self.steps,
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.obs.shape()[1]
    }

    pub fn act_dim(&self) -> usize {
        self.act.shape()[1]
    }
}

/// Cut `[start, start+len)` out of a trajectory and prepare it for the model.
pub fn tokenize(
    traj: &Trajectory,
    start: usize,
    len: usize,
    layout: TokenLayout,
    aligned: bool,
    policy: MaskPolicy,
) -> Result<TokenSequence> {
    if len < 2 {
        return Err(CoreError::Contract {
            op: "tokenize",
            detail: format!("window length must be >= 2, got {len}"),
        });
    }
    if start + len > traj.steps() {
        return Err(CoreError::WindowOutOfBounds {
            start,
            len,
            total: traj.steps(),
        });
    }
    let m = traj.obs_dim();
    let n = traj.act_dim();

    let mut obs = Vec::with_capacity(len * m);
    let mut act = Vec::with_capacity(len * n);
    let mut act_masked = Vec::with_capacity(len);
    for i in 0..len {
        let t = start + i;
        obs.extend_from_slice(traj.obs.row(t));
        let masked = match policy {
            MaskPolicy::FromPresence => !traj.act_present[t],
            MaskPolicy::MaskAll => true,
        };
        if masked {
            act.extend(std::iter::repeat(0.0).take(n));
        } else {
            act.extend_from_slice(traj.act.row(t));
        }
        act_masked.push(masked);
    }

    // Targets. Observation predictions for step i always regress o_{i+1}.
    // Action predictions regress a_{i+1} when the next token of the same
    // modality is predicted, and a_i when the next interleaved token is
    // (the action token follows its own step's observation token).
    let mut target_obs = vec![0.0; len * m];
    let mut target_act = vec![0.0; len * n];
    let mut mask_obs = vec![0.0; len * m];
    let mut mask_act = vec![0.0; len * n];
    let act_target_is_next = match layout {
        TokenLayout::Concat => true,
        TokenLayout::Separate => aligned,
    };
    for i in 0..len {
        let t = start + i;
        if i + 1 < len {
            target_obs[i * m..(i + 1) * m].copy_from_slice(traj.obs.row(t + 1));
            mask_obs[i * m..(i + 1) * m].fill(1.0);
        }
        let act_target_step = if act_target_is_next {
            if i + 1 < len {
                Some(t + 1)
            } else {
                None
            }
        } else {
            Some(t)
        };
        if let Some(ts) = act_target_step {
            if traj.act_present[ts] {
                target_act[i * n..(i + 1) * n].copy_from_slice(traj.act.row(ts));
                mask_act[i * n..(i + 1) * n].fill(1.0);
            }
        }
    }

    Ok(TokenSequence {
        layout,
        aligned,
        steps: len,
        obs: Array::new(vec![len, m], obs)?,
        act: Array::new(vec![len, n], act)?,
        act_masked,
        target_obs: Array::new(vec![len, m], target_obs)?,
        target_act: Array::new(vec![len, n], target_act)?,
        loss_mask_obs: Array::new(vec![len, m], mask_obs)?,
        loss_mask_act: Array::new(vec![len, n], mask_act)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Source;

    fn expert_traj(t: usize, m: usize, n: usize) -> Trajectory {
        let obs: Vec<f64> = (0..t * m).map(|i| i as f64).collect();
        let act: Vec<f64> = (0..t * n).map(|i| 100.0 + i as f64).collect();
        Trajectory {
            dt: 0.05,
            command: [0.0; 3],
            obs: Array::new(vec![t, m], obs).unwrap(),
            act: Array::new(vec![t, n], act).unwrap(),
            act_present: vec![true; t],
            source: Source::Expert,
        }
    }

    fn actionfree_traj(t: usize, m: usize, n: usize) -> Trajectory {
        let mut traj = expert_traj(t, m, n);
        traj.act = Array::zeros(&[t, n]);
        traj.act_present = vec![false; t];
        traj.source = Source::ActionFree;
        traj
    }

    #[test]
    fn concat_expert_masks() {
        let traj = expert_traj(3, 2, 1);
        let seq = tokenize(&traj, 0, 3, TokenLayout::Concat, true, MaskPolicy::FromPresence).unwrap();
        assert_eq!(seq.token_count(), 3);
        // all targets live except the final step's
        assert_eq!(seq.loss_mask_obs.row(0), &[1.0, 1.0]);
        assert_eq!(seq.loss_mask_obs.row(1), &[1.0, 1.0]);
        assert_eq!(seq.loss_mask_obs.row(2), &[0.0, 0.0]);
        assert_eq!(seq.loss_mask_act.row(2), &[0.0]);
        assert!(seq.act_masked.iter().all(|x| !x));
    }

    #[test]
    fn concat_first_token_is_concatenation() {
        // m=2, n=1, o1=(1,2), a1=(3)
        let mut traj = expert_traj(2, 2, 1);
        let obs = Array::new(vec![2, 2], vec![1.0, 2.0, 9.0, 9.0]).unwrap();
        let act = Array::new(vec![2, 1], vec![3.0, 9.0]).unwrap();
        traj.obs = obs;
        traj.act = act;
        let seq = tokenize(&traj, 0, 2, TokenLayout::Concat, true, MaskPolicy::FromPresence).unwrap();
        assert_eq!(seq.obs.row(0), &[1.0, 2.0]);
        assert_eq!(seq.act.row(0), &[3.0]);
    }

    #[test]
    fn actionfree_masks_all_action_loss() {
        let traj = actionfree_traj(3, 2, 1);
        let seq = tokenize(&traj, 0, 3, TokenLayout::Concat, true, MaskPolicy::FromPresence).unwrap();
        assert!(seq.act_masked.iter().all(|x| *x));
        assert!(seq.loss_mask_act.data().iter().all(|v| *v == 0.0));
        // observation targets still trained
        assert_eq!(seq.loss_mask_obs.row(0), &[1.0, 1.0]);
    }

    #[test]
    fn aligned_targets_are_next_same_modality() {
        let traj = expert_traj(4, 2, 1);
        let seq = tokenize(&traj, 0, 4, TokenLayout::Separate, true, MaskPolicy::FromPresence).unwrap();
        for i in 0..3 {
            assert_eq!(seq.target_obs.row(i), traj.obs.row(i + 1));
            assert_eq!(seq.target_act.row(i), traj.act.row(i + 1));
        }
        assert_eq!(seq.loss_mask_obs.row(3), &[0.0, 0.0]);
        assert_eq!(seq.loss_mask_act.row(3), &[0.0]);
    }

    #[test]
    fn nonaligned_action_target_is_same_step() {
        let traj = expert_traj(4, 2, 1);
        let seq = tokenize(&traj, 1, 3, TokenLayout::Separate, false, MaskPolicy::FromPresence).unwrap();
        for i in 0..3 {
            // o-token of step i predicts that step's action
            assert_eq!(seq.target_act.row(i), traj.act.row(1 + i));
            assert_eq!(seq.loss_mask_act.row(i), &[1.0]);
        }
        // a-token of the last step has no following observation in-window
        assert_eq!(seq.loss_mask_obs.row(2), &[0.0, 0.0]);
    }

    #[test]
    fn window_bounds_checked() {
        let traj = expert_traj(5, 2, 1);
        assert!(tokenize(&traj, 4, 2, TokenLayout::Concat, true, MaskPolicy::FromPresence).is_err());
        assert!(tokenize(&traj, 0, 6, TokenLayout::Concat, true, MaskPolicy::FromPresence).is_err());
        assert!(tokenize(&traj, 3, 2, TokenLayout::Concat, true, MaskPolicy::FromPresence).is_ok());
    }

    #[test]
    fn mask_all_policy_flags_everything() {
        let traj = expert_traj(3, 2, 1);
        let seq = tokenize(&traj, 0, 3, TokenLayout::Concat, true, MaskPolicy::MaskAll).unwrap();
        assert!(seq.act_masked.iter().all(|x| *x));
        // placeholder zeros in the input plane
        assert!(seq.act.data().iter().all(|v| *v == 0.0));
        // targets remain real; masking inputs does not hide supervision
        assert_eq!(seq.loss_mask_act.row(0), &[1.0]);
    }

    #[test]
    fn no_true_loss_mask_on_absent_target() {
        // mixed presence: step 2's action absent
        let mut traj = expert_traj(4, 2, 1);
        traj.act_present[2] = false;
        let mut act = traj.act.data().to_vec();
        act[2] = 0.0;
        traj.act = Array::new(vec![4, 1], act).unwrap();
        traj.source = Source::Expert; // would fail validate(); fine for tokenize-level test
        let seq = tokenize(&traj, 0, 4, TokenLayout::Concat, true, MaskPolicy::FromPresence).unwrap();
        // position 1 targets step 2's action -> masked out
        assert_eq!(seq.loss_mask_act.row(1), &[0.0]);
        assert_eq!(seq.loss_mask_act.row(0), &[1.0]);
        assert_eq!(seq.loss_mask_act.row(2), &[1.0]);
    }
}
