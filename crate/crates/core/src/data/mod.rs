//! Trajectory data model: time-indexed observation/action records with
//! per-step action presence, feature normalization, tokenization into
//! model-ready sequences, and the on-disk dataset format.

mod store;
mod tokenize;

pub use store::{load_dataset, save_dataset};
pub use tokenize::{tokenize, MaskPolicy, TokenLayout, TokenSequence};

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::tensor::Array;

/// Where a trajectory came from. Expert trajectories carry actions;
/// action-free and retargeted ones carry observations only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Expert,
    #[serde(rename = "actionfree")]
    ActionFree,
    Retargeted,
}

impl Source {
    pub const ALL: [Source; 3] = [Source::Expert, Source::ActionFree, Source::Retargeted];

    pub fn file_name(&self) -> &'static str {
        match self {
            Source::Expert => "expert.jsonl",
            Source::ActionFree => "actionfree.jsonl",
            Source::Retargeted => "retargeted.jsonl",
        }
    }
}

/// A sensorimotor trajectory: `T` steps of observations and actions sampled
/// every `dt` seconds under a constant velocity command.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    /// (v_x m/s, v_y m/s, ω rad/s) held constant over the trajectory.
    pub command: [f64; 3],
    /// T×m observations.
    pub obs: Array,
    /// T×n actions; rows where `act_present` is false are all-zero
    /// placeholders, never magic values.
    pub act: Array,
    pub act_present: Vec<bool>,
    pub source: Source,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.obs.shape()[0]
    }

    pub fn obs_dim(&self) -> usize {
        self.obs.shape()[1]
    }

    pub fn act_dim(&self) -> usize {
        self.act.shape()[1]
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.steps();
        if t < 2 {
            return Err(CoreError::Dataset(format!(
                "trajectory must have at least 2 steps, got {}",
                t
            )));
        }
        if self.act.shape()[0] != t || self.act_present.len() != t {
            return Err(CoreError::Dataset(format!(
                "inconsistent lengths: obs {} act {} act_present {}",
                t,
                self.act.shape()[0],
                self.act_present.len()
            )));
        }
        if !self.obs.all_finite() {
            return Err(CoreError::Dataset("observations contain non-finite values".into()));
        }
        let n = self.act_dim();
        for (i, present) in self.act_present.iter().enumerate() {
            if !present && self.act.row(i).iter().any(|v| *v != 0.0) {
                return Err(CoreError::Dataset(format!(
                    "absent action at step {} is not an all-zero placeholder",
                    i
                )));
            }
            if *present && self.act.row(i).len() != n {
                unreachable!();
            }
        }
        match self.source {
            Source::Expert => {
                if !self.act_present.iter().all(|p| *p) {
                    return Err(CoreError::Dataset(
                        "expert trajectory must have all actions present".into(),
                    ));
                }
            }
            Source::ActionFree | Source::Retargeted => {
                if self.act_present.iter().any(|p| *p) {
                    return Err(CoreError::Dataset(
                        "action-free trajectory must have no actions present".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Per-feature z-scoring statistics, frozen at dataset save time. A frozen
/// affine is deterministic at inference, unlike batch statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub obs_mean: Vec<f64>,
    pub obs_std: Vec<f64>,
    pub act_mean: Vec<f64>,
    pub act_std: Vec<f64>,
}

pub const STD_FLOOR: f64 = 1e-6;

impl Normalization {
    /// Identity normalization (mean 0, std 1).
    pub fn identity(m: usize, n: usize) -> Self {
        Normalization {
            obs_mean: vec![0.0; m],
            obs_std: vec![1.0; m],
            act_mean: vec![0.0; n],
            act_std: vec![1.0; n],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.obs_std.iter().chain(&self.act_std).any(|s| *s < STD_FLOOR) {
            return Err(CoreError::Config(format!(
                "normalization std below floor {STD_FLOOR}"
            )));
        }
        Ok(())
    }

    pub fn normalize_obs_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.obs_mean.iter().zip(&self.obs_std))
            .map(|(x, (mu, sd))| (x - mu) / sd)
            .collect()
    }

    pub fn denormalize_obs_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.obs_mean.iter().zip(&self.obs_std))
            .map(|(z, (mu, sd))| z * sd + mu)
            .collect()
    }

    pub fn normalize_act_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.act_mean.iter().zip(&self.act_std))
            .map(|(x, (mu, sd))| (x - mu) / sd)
            .collect()
    }

    pub fn denormalize_act_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.act_mean.iter().zip(&self.act_std))
            .map(|(z, (mu, sd))| z * sd + mu)
            .collect()
    }
}

/// Compute z-scoring statistics over a set of trajectories. Action features
/// are estimated only from steps where the action is present; if none are,
/// actions keep identity statistics.
pub fn compute_normalization(trajectories: &[Trajectory]) -> Result<Normalization> {
    let first = trajectories
        .first()
        .ok_or_else(|| CoreError::Dataset("cannot compute statistics of an empty dataset".into()))?;
    let m = first.obs_dim();
    let n = first.act_dim();

    let mut obs_sum = vec![0.0; m];
    let mut obs_sq = vec![0.0; m];
    let mut obs_count = 0usize;
    let mut act_sum = vec![0.0; n];
    let mut act_sq = vec![0.0; n];
    let mut act_count = 0usize;

    for traj in trajectories {
        for t in 0..traj.steps() {
            let row = traj.obs.row(t);
            for j in 0..m {
                obs_sum[j] += row[j];
                obs_sq[j] += row[j] * row[j];
            }
            obs_count += 1;
            if traj.act_present[t] {
                let arow = traj.act.row(t);
                for j in 0..n {
                    act_sum[j] += arow[j];
                    act_sq[j] += arow[j] * arow[j];
                }
                act_count += 1;
            }
        }
    }

    let finalize = |sum: Vec<f64>, sq: Vec<f64>, count: usize| -> (Vec<f64>, Vec<f64>) {
        if count == 0 {
            let d = sum.len();
            return (vec![0.0; d], vec![1.0; d]);
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        let std: Vec<f64> = sq
            .iter()
            .zip(&mean)
            .map(|(s, mu)| ((s / count as f64 - mu * mu).max(0.0)).sqrt().max(STD_FLOOR))
            .collect();
        (mean, std)
    };

    let (obs_mean, obs_std) = finalize(obs_sum, obs_sq, obs_count);
    let (act_mean, act_std) = finalize(act_sum, act_sq, act_count);
    Ok(Normalization {
        obs_mean,
        obs_std,
        act_mean,
        act_std,
    })
}

/// Dataset-level metadata persisted as `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub m: usize,
    pub n: usize,
    pub dt: f64,
    pub counts: SourceCounts,
    pub normalization: Normalization,
}

pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceCounts {
    pub expert: usize,
    pub actionfree: usize,
    pub retargeted: usize,
}

impl SourceCounts {
    pub fn get(&self, source: Source) -> usize {
        match source {
            Source::Expert => self.expert,
            Source::ActionFree => self.actionfree,
            Source::Retargeted => self.retargeted,
        }
    }

    pub fn total(&self) -> usize {
        self.expert + self.actionfree + self.retargeted
    }
}

/// Z-score a trajectory's features. Absent action rows stay all-zero
/// placeholders; they are never read downstream.
pub fn normalize(traj: &Trajectory, norm: &Normalization) -> Result<Trajectory> {
    if traj.obs_dim() != norm.obs_mean.len() || traj.act_dim() != norm.act_mean.len() {
        return Err(CoreError::ShapeMismatch {
            op: "normalize",
            lhs: vec![traj.obs_dim(), traj.act_dim()],
            rhs: vec![norm.obs_mean.len(), norm.act_mean.len()],
        });
    }
    let t = traj.steps();
    let mut obs = Vec::with_capacity(t * traj.obs_dim());
    let mut act = Vec::with_capacity(t * traj.act_dim());
    for i in 0..t {
        obs.extend(norm.normalize_obs_row(traj.obs.row(i)));
        if traj.act_present[i] {
            act.extend(norm.normalize_act_row(traj.act.row(i)));
        } else {
            act.extend(std::iter::repeat(0.0).take(traj.act_dim()));
        }
    }
    Ok(Trajectory {
        dt: traj.dt,
        command: traj.command,
        obs: Array::new(vec![t, traj.obs_dim()], obs)?,
        act: Array::new(vec![t, traj.act_dim()], act)?,
        act_present: traj.act_present.clone(),
        source: traj.source,
    })
}

/// Inverse of [`normalize`].
pub fn denormalize(traj: &Trajectory, norm: &Normalization) -> Result<Trajectory> {
    let t = traj.steps();
    let mut obs = Vec::with_capacity(t * traj.obs_dim());
    let mut act = Vec::with_capacity(t * traj.act_dim());
    for i in 0..t {
        obs.extend(norm.denormalize_obs_row(traj.obs.row(i)));
        if traj.act_present[i] {
            act.extend(norm.denormalize_act_row(traj.act.row(i)));
        } else {
            act.extend(std::iter::repeat(0.0).take(traj.act_dim()));
        }
    }
    Ok(Trajectory {
        dt: traj.dt,
        command: traj.command,
        obs: Array::new(vec![t, traj.obs_dim()], obs)?,
        act: Array::new(vec![t, traj.act_dim()], act)?,
        act_present: traj.act_present.clone(),
        source: traj.source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_traj(source: Source, t: usize, m: usize, n: usize) -> Trajectory {
        let present = matches!(source, Source::Expert);
        let obs: Vec<f64> = (0..t * m).map(|i| (i as f64) * 0.1 - 1.0).collect();
        let act: Vec<f64> = if present {
            (0..t * n).map(|i| (i as f64) * 0.2 - 2.0).collect()
        } else {
            vec![0.0; t * n]
        };
        Trajectory {
            dt: 0.05,
            command: [0.5, 0.0, 0.1],
            obs: Array::new(vec![t, m], obs).unwrap(),
            act: Array::new(vec![t, n], act).unwrap(),
            act_present: vec![present; t],
            source,
        }
    }

    #[test]
    fn identity_normalization_is_identity() {
        let traj = toy_traj(Source::Expert, 5, 3, 2);
        let norm = Normalization::identity(3, 2);
        let out = normalize(&traj, &norm).unwrap();
        assert_eq!(out, traj);
    }

    #[test]
    fn zscore_hand_case() {
        // value 3, mean 1, std 2 -> 1
        let norm = Normalization {
            obs_mean: vec![1.0],
            obs_std: vec![2.0],
            act_mean: vec![0.0],
            act_std: vec![1.0],
        };
        assert_eq!(norm.normalize_obs_row(&[3.0]), vec![1.0]);
    }

    #[test]
    fn normalize_roundtrip_tight() {
        let traj = toy_traj(Source::Expert, 20, 4, 3);
        let norm = compute_normalization(std::slice::from_ref(&traj)).unwrap();
        let fwd = normalize(&traj, &norm).unwrap();
        let back = denormalize(&fwd, &norm).unwrap();
        assert!(back.obs.max_abs_diff(&traj.obs) < 1e-12);
        assert!(back.act.max_abs_diff(&traj.act) < 1e-12);
    }

    #[test]
    fn absent_actions_stay_zero_after_normalize() {
        let traj = toy_traj(Source::ActionFree, 6, 3, 2);
        let norm = Normalization {
            obs_mean: vec![0.0; 3],
            obs_std: vec![1.0; 3],
            act_mean: vec![5.0, 5.0],
            act_std: vec![2.0, 2.0],
        };
        let out = normalize(&traj, &norm).unwrap();
        assert!(out.act.data().iter().all(|v| *v == 0.0));
        out.validate().unwrap();
    }

    #[test]
    fn validate_rejects_bad_source_mask_combo() {
        let mut traj = toy_traj(Source::Expert, 4, 2, 1);
        traj.act_present[2] = false;
        assert!(traj.validate().is_err());
    }

    #[test]
    fn std_floor_applied() {
        // constant feature -> floored std, zero z-score
        let mut traj = toy_traj(Source::Expert, 8, 2, 1);
        let t = traj.steps();
        let mut obs = traj.obs.data().to_vec();
        for i in 0..t {
            obs[i * 2] = 3.0;
        }
        traj.obs = Array::new(vec![t, 2], obs).unwrap();
        let norm = compute_normalization(std::slice::from_ref(&traj)).unwrap();
        assert!(norm.obs_std[0] >= STD_FLOOR);
        let z = norm.normalize_obs_row(&[3.0, 0.0]);
        assert_eq!(z[0], 0.0);
    }
}
