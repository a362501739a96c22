//! On-disk dataset format: `manifest.json` plus one JSON-Lines file per
//! source, one trajectory object per line. Floats are serialized with
//! shortest-round-trip decimal encoding, so save/load is bit-exact.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::tensor::Array;

use super::{
    compute_normalization, DatasetManifest, Source, SourceCounts, Trajectory, DATASET_VERSION,
};

#[derive(Serialize, Deserialize)]
struct TrajectoryRecord {
    dt: f64,
    command: [f64; 3],
    obs: Vec<Vec<f64>>,
    act: Vec<Vec<f64>>,
    act_present: Vec<bool>,
    source: Source,
}

impl TrajectoryRecord {
    fn from_trajectory(traj: &Trajectory) -> Self {
        let rows = |a: &Array| (0..a.shape()[0]).map(|i| a.row(i).to_vec()).collect();
        TrajectoryRecord {
            dt: traj.dt,
            command: traj.command,
            obs: rows(&traj.obs),
            act: rows(&traj.act),
            act_present: traj.act_present.clone(),
            source: traj.source,
        }
    }

    fn into_trajectory(self) -> Result<Trajectory> {
        let obs = Array::from_rows(&self.obs)?;
        let act = Array::from_rows(&self.act)?;
        let traj = Trajectory {
            dt: self.dt,
            command: self.command,
            obs,
            act,
            act_present: self.act_present,
            source: self.source,
        };
        traj.validate()?;
        Ok(traj)
    }
}

/// Write a dataset directory. The manifest carries dimensions, per-source
/// counts, and normalization statistics computed over the given trajectories.
pub fn save_dataset(dir: &Path, trajectories: &[Trajectory]) -> Result<DatasetManifest> {
    let first = trajectories
        .first()
        .ok_or_else(|| CoreError::Dataset("refusing to save an empty dataset".into()))?;
    let (m, n, dt) = (first.obs_dim(), first.act_dim(), first.dt);
    let mut counts = SourceCounts::default();
    for (i, traj) in trajectories.iter().enumerate() {
        traj.validate()
            .map_err(|e| CoreError::Dataset(format!("trajectory {i}: {e}")))?;
        if traj.obs_dim() != m || traj.act_dim() != n || traj.dt != dt {
            return Err(CoreError::Dataset(format!(
                "trajectory {i} has (m={}, n={}, dt={}) but the dataset started with (m={m}, n={n}, dt={dt})",
                traj.obs_dim(),
                traj.act_dim(),
                traj.dt
            )));
        }
        match traj.source {
            Source::Expert => counts.expert += 1,
            Source::ActionFree => counts.actionfree += 1,
            Source::Retargeted => counts.retargeted += 1,
        }
    }

    let manifest = DatasetManifest {
        version: DATASET_VERSION,
        m,
        n,
        dt,
        counts,
        normalization: compute_normalization(trajectories)?,
    };

    fs::create_dir_all(dir).map_err(|e| CoreError::io(dir.display().to_string(), e))?;
    let manifest_path = dir.join("manifest.json");
    let body = serde_json::to_string_pretty(&manifest)
        .map_err(|e| CoreError::Dataset(format!("manifest serialization: {e}")))?;
    fs::write(&manifest_path, body)
        .map_err(|e| CoreError::io(manifest_path.display().to_string(), e))?;

    for source in Source::ALL {
        if counts.get(source) == 0 {
            continue;
        }
        let path = dir.join(source.file_name());
        let file =
            fs::File::create(&path).map_err(|e| CoreError::io(path.display().to_string(), e))?;
        let mut writer = BufWriter::new(file);
        for traj in trajectories.iter().filter(|t| t.source == source) {
            let record = TrajectoryRecord::from_trajectory(traj);
            let line = serde_json::to_string(&record)
                .map_err(|e| CoreError::Dataset(format!("record serialization: {e}")))?;
            writeln!(writer, "{line}").map_err(|e| CoreError::io(path.display().to_string(), e))?;
        }
        writer
            .flush()
            .map_err(|e| CoreError::io(path.display().to_string(), e))?;
    }
    Ok(manifest)
}

/// Load a dataset directory written by [`save_dataset`]. Trajectories come
/// back grouped by source in a fixed order (expert, actionfree, retargeted),
/// each group in file order.
pub fn load_dataset(dir: &Path) -> Result<(DatasetManifest, Vec<Trajectory>)> {
    let manifest_path = dir.join("manifest.json");
    let body = fs::read_to_string(&manifest_path)
        .map_err(|e| CoreError::io(manifest_path.display().to_string(), e))?;
    let manifest: DatasetManifest = serde_json::from_str(&body).map_err(|e| CoreError::Parse {
        path: manifest_path.display().to_string(),
        detail: e.to_string(),
    })?;
    if manifest.version != DATASET_VERSION {
        return Err(CoreError::Dataset(format!(
            "unsupported dataset version {} (expected {})",
            manifest.version, DATASET_VERSION
        )));
    }
    manifest.normalization.validate()?;

    let mut trajectories = Vec::new();
    for source in Source::ALL {
        let expected = manifest.counts.get(source);
        let path = dir.join(source.file_name());
        if expected == 0 {
            continue;
        }
        let file =
            fs::File::open(&path).map_err(|e| CoreError::io(path.display().to_string(), e))?;
        let reader = BufReader::new(file);
        let mut loaded = 0usize;
        for (lineno, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| CoreError::io(path.display().to_string(), e))?;
            if line.trim().is_empty() {
                continue;
            }
            let record: TrajectoryRecord =
                serde_json::from_str(&line).map_err(|e| CoreError::Parse {
                    path: path.display().to_string(),
                    detail: format!("line {}: {e}", lineno + 1),
                })?;
            let traj = record.into_trajectory().map_err(|e| {
                CoreError::Dataset(format!("{}, record {}: {e}", path.display(), lineno + 1))
            })?;
            if traj.obs_dim() != manifest.m || traj.act_dim() != manifest.n {
                return Err(CoreError::Dataset(format!(
                    "{}, record {}: dimensions (m={}, n={}) do not match manifest (m={}, n={})",
                    path.display(),
                    lineno + 1,
                    traj.obs_dim(),
                    traj.act_dim(),
                    manifest.m,
                    manifest.n
                )));
            }
            if traj.source != source {
                return Err(CoreError::Dataset(format!(
                    "{}, record {}: source tag {:?} does not match file",
                    path.display(),
                    lineno + 1,
                    traj.source
                )));
            }
            trajectories.push(traj);
            loaded += 1;
        }
        if loaded != expected {
            return Err(CoreError::Dataset(format!(
                "{}: expected {} records per manifest, found {}",
                path.display(),
                expected,
                loaded
            )));
        }
    }
    Ok((manifest, trajectories))
}
