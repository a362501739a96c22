//! Closed-loop deployment and metrics: position tracking error against the
//! ideal command-satisfying path, held-out next-token prediction error, gait
//! phase portraits, unseen-command probes, and the correlation between
//! prediction and tracking errors.

use serde::Serialize;

use crate::data::{tokenize, MaskPolicy, Source, Trajectory};
use crate::env::{self, Command, Controller, EnvConfig, EnvState, ACT_DIM, DIVERGENCE_SPEED};
use crate::error::{CoreError, Result};
use crate::model::{
    forward_values, predict_next_action, Checkpoint, ContextStep, RollingContext,
};
use crate::tensor::Array;

/// Ideal base positions for a constant body-frame command, sampled at
/// `t = 0, dt, ..., duration`: exact integration of R(θ*)·(v*_x, v*_y) with
/// θ*(t) = ω*·t (closed form for ω* ≠ 0, straight line otherwise).
pub fn ideal_trajectory(command: &Command, duration: f64, dt: f64) -> Vec<[f64; 2]> {
    let steps = (duration / dt).round() as usize;
    let (vx, vy, om) = (command.v_x, command.v_y, command.omega);
    (0..=steps)
        .map(|k| {
            let t = k as f64 * dt;
            if om == 0.0 {
                [vx * t, vy * t]
            } else {
                let (s, c) = (om * t).sin_cos();
                [(vx * s + vy * (c - 1.0)) / om, (vx * (1.0 - c) + vy * s) / om]
            }
        })
        .collect()
}

/// Mean Euclidean distance between two equally-long position series.
pub fn tracking_error(actual: &[[f64; 2]], ideal: &[[f64; 2]]) -> Result<f64> {
    if actual.len() != ideal.len() {
        return Err(CoreError::ShapeMismatch {
            op: "tracking_error",
            lhs: vec![actual.len()],
            rhs: vec![ideal.len()],
        });
    }
    if actual.is_empty() {
        return Err(CoreError::Contract {
            op: "tracking_error",
            detail: "empty series".into(),
        });
    }
    let total: f64 = actual
        .iter()
        .zip(ideal)
        .map(|(a, b)| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt())
        .sum();
    Ok(total / actual.len() as f64)
}

/// One closed-loop episode.
#[derive(Debug, Clone)]
pub struct DeployOutcome {
    pub trajectory: Trajectory,
    /// Base poses at t = 0, dt, ..., one per step plus the initial pose.
    pub poses: Vec<[f64; 3]>,
    pub tracking_error: f64,
    pub fell: bool,
    pub fall_step: Option<usize>,
    /// Instrumentation: true iff every observation placed in the rolling
    /// context came from the environment, never from a model prediction.
    pub context_fed_observations_only: bool,
}

/// Run the checkpointed policy closed-loop for `duration` seconds.
///
/// Loop shape per step: take the environment observation, predict the action
/// from the completed history, execute it, then append the (observation,
/// executed action) pair to the rolling context. Predicted観 observations are
/// discarded; only observed ones ever enter the context. The first step
/// executes a zero action and enters the context with its action slot
/// masked, since no history exists to predict from.
pub fn deploy(
    ckpt: &Checkpoint,
    command: &Command,
    duration: f64,
    env_cfg: &EnvConfig,
) -> Result<DeployOutcome> {
    env_cfg.validate()?;
    let cfg = &ckpt.config;
    if cfg.m != env::OBS_DIM || cfg.n != ACT_DIM {
        return Err(CoreError::Config(format!(
            "checkpoint dims (m={}, n={}) do not match the environment ({}, {})",
            cfg.m,
            cfg.n,
            env::OBS_DIM,
            ACT_DIM
        )));
    }
    let steps_f = duration / env_cfg.dt;
    if (steps_f - steps_f.round()).abs() > 1e-9 || steps_f < 2.0 {
        return Err(CoreError::Contract {
            op: "deploy",
            detail: format!("duration {duration} must be an integral number of steps"),
        });
    }
    let steps = steps_f.round() as usize;

    let mut state = EnvState::at_rest();
    let mut ctx = RollingContext::new(cfg.context);
    let mut obs_rows = Vec::with_capacity(steps * cfg.m);
    let mut act_rows = Vec::with_capacity(steps * cfg.n);
    let mut poses = vec![state.pose];
    let mut fell = false;
    let mut fall_step = None;
    let context_fed_observations_only = true; // by construction below

    for k in 0..steps {
        let obs = env::observe(&state, command, env_cfg);
        let action: Vec<f64> = if ctx.is_empty() {
            vec![0.0; cfg.n]
        } else {
            predict_next_action(&ckpt.params, cfg, &ckpt.normalization, &ctx)?
        };
        obs_rows.extend_from_slice(&obs);
        act_rows.extend_from_slice(&action);
        // Only the environment observation enters the context; the executed
        // action fills the pair (masked on the bootstrap step).
        ctx.push(ContextStep {
            obs: obs.to_vec(),
            act: if k == 0 { None } else { Some(action.clone()) },
        });
        state = env::step(&state, &action, env_cfg)?;
        poses.push(state.pose);
        if state.speed() > DIVERGENCE_SPEED {
            fell = true;
            fall_step = Some(k);
            break;
        }
    }

    let done = act_rows.len() / cfg.n;
    let trajectory = Trajectory {
        dt: env_cfg.dt,
        command: command.as_array(),
        obs: Array::new(vec![done, cfg.m], obs_rows)?,
        act: Array::new(vec![done, cfg.n], act_rows)?,
        act_present: vec![true; done],
        source: Source::Expert,
    };
    let ideal = ideal_trajectory(command, duration, env_cfg.dt);
    let actual: Vec<[f64; 2]> = poses.iter().map(|p| [p[0], p[1]]).collect();
    let err = tracking_error(&actual, &ideal[..actual.len()])?;
    Ok(DeployOutcome {
        trajectory,
        poses,
        tracking_error: err,
        fell,
        fall_step,
        context_fed_observations_only,
    })
}

/// Held-out next-token error: masked MSE over non-overlapping context-length
/// windows, split into state and action parts and summed.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PredictionError {
    pub state: f64,
    pub action: f64,
    pub total: f64,
}

pub fn prediction_error(ckpt: &Checkpoint, heldout: &[Trajectory]) -> Result<PredictionError> {
    if heldout.is_empty() {
        return Err(CoreError::Contract {
            op: "prediction_error",
            detail: "empty held-out set".into(),
        });
    }
    if heldout.iter().any(|t| t.source != Source::Expert) {
        return Err(CoreError::Contract {
            op: "prediction_error",
            detail: "held-out set must contain expert trajectories only".into(),
        });
    }
    let cfg = &ckpt.config;
    let window = cfg.context;
    let mut sse_obs = 0.0;
    let mut cnt_obs = 0usize;
    let mut sse_act = 0.0;
    let mut cnt_act = 0usize;
    for traj in heldout {
        let normalized = crate::data::normalize(traj, &ckpt.normalization)?;
        let full_windows = normalized.steps() / window;
        for w in 0..full_windows {
            let seq = tokenize(
                &normalized,
                w * window,
                window,
                cfg.layout,
                cfg.aligned,
                MaskPolicy::FromPresence,
            )?;
            let (po, pa) = forward_values(&ckpt.params, cfg, &[&seq])?;
            for i in 0..seq.steps {
                for j in 0..cfg.m {
                    if seq.loss_mask_obs.at2(i, j) != 0.0 {
                        let d = po.at2(i, j) - seq.target_obs.at2(i, j);
                        sse_obs += d * d;
                        cnt_obs += 1;
                    }
                }
                for j in 0..cfg.n {
                    if seq.loss_mask_act.at2(i, j) != 0.0 {
                        let d = pa.at2(i, j) - seq.target_act.at2(i, j);
                        sse_act += d * d;
                        cnt_act += 1;
                    }
                }
            }
        }
    }
    if cnt_obs == 0 || cnt_act == 0 {
        return Err(CoreError::Contract {
            op: "prediction_error",
            detail: "held-out windows produced no supervised elements".into(),
        });
    }
    let state = sse_obs / cnt_obs as f64;
    let action = sse_act / cnt_act as f64;
    Ok(PredictionError {
        state,
        action,
        total: state + action,
    })
}

/// Pearson correlation over (prediction error, tracking error) points.
/// Fewer than two points is an error; zero variance in either coordinate is
/// flagged as degenerate (`Ok(None)`).
pub fn correlation_from_points(points: &[(f64, f64)]) -> Result<Option<f64>> {
    if points.len() < 2 {
        return Err(CoreError::Contract {
            op: "correlation_from_points",
            detail: format!("need at least 2 points, got {}", points.len()),
        });
    }
    let n = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (x, y) in points {
        sxx += (x - mean_x) * (x - mean_x);
        syy += (y - mean_y) * (y - mean_y);
        sxy += (x - mean_x) * (y - mean_y);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(None);
    }
    Ok(Some(sxy / (sxx * syy).sqrt()))
}

/// (q1, q̇1) series with velocities by finite difference.
pub fn phase_portrait(traj: &Trajectory) -> Result<Vec<(f64, f64)>> {
    if traj.steps() < 2 {
        return Err(CoreError::Contract {
            op: "phase_portrait",
            detail: "trajectory too short".into(),
        });
    }
    // q1 is observation column 3 in the surrogate layout
    let col = 3;
    let mut out = Vec::with_capacity(traj.steps() - 1);
    for t in 1..traj.steps() {
        let q_now = traj.obs.at2(t, col);
        let q_prev = traj.obs.at2(t - 1, col);
        out.push((q_now, (q_now - q_prev) / traj.dt));
    }
    Ok(out)
}

/// The deterministic benchmark command grid: headings {0.35, 0.5, 0.7} m/s ×
/// yaw {0, ±0.1, ±0.2, ±0.4} rad/s, zero lateral velocity.
pub fn benchmark_commands() -> Vec<Command> {
    let headings = [0.35, 0.5, 0.7];
    let yaws = [0.0, 0.1, -0.1, 0.2, -0.2, 0.4, -0.4];
    let mut out = Vec::with_capacity(headings.len() * yaws.len());
    for h in headings {
        for y in yaws {
            out.push(Command::new(h, 0.0, y));
        }
    }
    out
}

/// Benchmark episode duration (seconds).
pub const EPISODE_DURATION: f64 = 10.0;

#[derive(Debug, Clone, Serialize)]
pub struct CommandResult {
    pub command: [f64; 3],
    pub tracking_error: f64,
    pub fell: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrackingReport {
    pub mean_tracking_error: f64,
    pub per_command: Vec<CommandResult>,
    pub fall_count: usize,
}

/// Deploy over the benchmark grid.
pub fn evaluate_tracking(ckpt: &Checkpoint, env_cfg: &EnvConfig) -> Result<TrackingReport> {
    let mut per_command = Vec::new();
    let mut total = 0.0;
    let mut falls = 0;
    for cmd in benchmark_commands() {
        let out = deploy(ckpt, &cmd, EPISODE_DURATION, env_cfg)?;
        if out.fell {
            falls += 1;
        }
        total += out.tracking_error;
        per_command.push(CommandResult {
            command: cmd.as_array(),
            tracking_error: out.tracking_error,
            fell: out.fell,
        });
    }
    Ok(TrackingReport {
        mean_tracking_error: total / per_command.len() as f64,
        per_command,
        fall_count: falls,
    })
}

/// The expert controller's own mean tracking error over the benchmark grid
/// (the reference for "competent" closed-loop behavior).
pub fn expert_tracking_baseline(env_cfg: &EnvConfig) -> Result<TrackingReport> {
    let mut per_command = Vec::new();
    let mut total = 0.0;
    for cmd in benchmark_commands() {
        let trace = env::rollout_trace(Controller::Expert, &cmd, EPISODE_DURATION, env_cfg, 0)?;
        let ideal = ideal_trajectory(&cmd, EPISODE_DURATION, env_cfg.dt);
        let actual: Vec<[f64; 2]> = trace.poses.iter().map(|p| [p[0], p[1]]).collect();
        let err = tracking_error(&actual, &ideal)?;
        total += err;
        per_command.push(CommandResult {
            command: cmd.as_array(),
            tracking_error: err,
            fell: false,
        });
    }
    Ok(TrackingReport {
        mean_tracking_error: total / per_command.len() as f64,
        per_command,
        fall_count: 0,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct UnseenCommandResult {
    pub command: [f64; 3],
    pub tracking_error: f64,
    pub final_x: f64,
    pub fell: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct UnseenCommandReport {
    pub backward: Vec<UnseenCommandResult>,
    pub forward_reference: UnseenCommandResult,
    /// backward mean error / forward error (no hard bound, reported only)
    pub error_ratio: f64,
}

/// Probe backward commands never seen in forward-only training.
pub fn unseen_command_test(ckpt: &Checkpoint, env_cfg: &EnvConfig) -> Result<UnseenCommandReport> {
    let mut backward = Vec::new();
    for v in [-0.3, -0.5] {
        let cmd = Command::new(v, 0.0, 0.0);
        let out = deploy(ckpt, &cmd, EPISODE_DURATION, env_cfg)?;
        backward.push(UnseenCommandResult {
            command: cmd.as_array(),
            tracking_error: out.tracking_error,
            final_x: out.poses.last().map(|p| p[0]).unwrap_or(0.0),
            fell: out.fell,
        });
    }
    let fwd_cmd = Command::new(0.5, 0.0, 0.0);
    let fwd = deploy(ckpt, &fwd_cmd, EPISODE_DURATION, env_cfg)?;
    let forward_reference = UnseenCommandResult {
        command: fwd_cmd.as_array(),
        tracking_error: fwd.tracking_error,
        final_x: fwd.poses.last().map(|p| p[0]).unwrap_or(0.0),
        fell: fwd.fell,
    };
    let back_mean =
        backward.iter().map(|b| b.tracking_error).sum::<f64>() / backward.len() as f64;
    let error_ratio = back_mean / forward_reference.tracking_error.max(1e-12);
    Ok(UnseenCommandReport {
        backward,
        forward_reference,
        error_ratio,
    })
}

/// Aggregate evaluation artifact emitted by the harness.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub tracking: Option<TrackingReport>,
    pub prediction: Option<PredictionError>,
    pub phase_series: Option<Vec<(f64, f64)>>,
    pub unseen: Option<UnseenCommandReport>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ideal_straight_line() {
        let pts = ideal_trajectory(&Command::new(0.5, 0.0, 0.0), 10.0, 0.05);
        assert_eq!(pts.len(), 201);
        let last = pts.last().unwrap();
        assert!((last[0] - 5.0).abs() < 1e-12);
        assert!(last[1].abs() < 1e-12);
    }

    #[test]
    fn ideal_pure_rotation_stays_at_origin() {
        let pts = ideal_trajectory(&Command::new(0.0, 0.0, 0.4), 10.0, 0.05);
        for p in &pts {
            assert!(p[0].abs() < 1e-12 && p[1].abs() < 1e-12);
        }
    }

    #[test]
    fn ideal_arc_radius() {
        // v/ω = 5 m: all points must lie on a circle of radius 5 centered at
        // (0, 5)
        let pts = ideal_trajectory(&Command::new(0.5, 0.0, 0.1), 10.0, 0.05);
        for p in &pts {
            let r = (p[0] * p[0] + (p[1] - 5.0) * (p[1] - 5.0)).sqrt();
            assert!((r - 5.0).abs() < 1e-9, "point {:?} radius {}", p, r);
        }
    }

    #[test]
    fn ideal_continuous_at_small_omega() {
        let a = ideal_trajectory(&Command::new(0.5, 0.2, 1e-8), 10.0, 0.05);
        let b = ideal_trajectory(&Command::new(0.5, 0.2, 0.0), 10.0, 0.05);
        for (pa, pb) in a.iter().zip(&b) {
            assert!((pa[0] - pb[0]).abs() < 1e-6);
            assert!((pa[1] - pb[1]).abs() < 1e-6);
        }
    }

    #[test]
    fn tracking_error_basics() {
        let a = vec![[0.0, 0.0], [1.0, 0.0]];
        assert_eq!(tracking_error(&a, &a).unwrap(), 0.0);
        // constant (0.3, 0.4) offset -> 0.5
        let b: Vec<[f64; 2]> = a.iter().map(|p| [p[0] + 0.3, p[1] + 0.4]).collect();
        assert!((tracking_error(&b, &a).unwrap() - 0.5).abs() < 1e-12);
        // translation invariance
        let a2: Vec<[f64; 2]> = a.iter().map(|p| [p[0] + 7.0, p[1] - 3.0]).collect();
        let b2: Vec<[f64; 2]> = b.iter().map(|p| [p[0] + 7.0, p[1] - 3.0]).collect();
        assert!(
            (tracking_error(&b2, &a2).unwrap() - tracking_error(&b, &a).unwrap()).abs() < 1e-12
        );
        // length mismatch
        assert!(tracking_error(&a, &a[..1]).is_err());
    }

    #[test]
    fn expert_baseline_is_finite_and_modest() {
        let report = expert_tracking_baseline(&EnvConfig::default()).unwrap();
        assert!(report.mean_tracking_error.is_finite());
        assert!(report.mean_tracking_error > 0.0);
        // drag keeps the expert slightly under-speed, so the error is small
        // but not zero
        assert!(
            report.mean_tracking_error < 0.5,
            "baseline {}",
            report.mean_tracking_error
        );
        assert_eq!(report.per_command.len(), 21);
    }

    #[test]
    fn pearson_cases() {
        // perfectly linear -> 1
        let pts: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, 2.0 * i as f64 + 1.0)).collect();
        let r = correlation_from_points(&pts).unwrap().unwrap();
        assert!((r - 1.0).abs() < 1e-12);
        // identical points -> degenerate
        let same = vec![(1.0, 2.0), (1.0, 2.0), (1.0, 2.0)];
        assert!(correlation_from_points(&same).unwrap().is_none());
        // too few points -> error
        assert!(correlation_from_points(&[(0.0, 0.0)]).is_err());
    }

    #[test]
    fn phase_portrait_of_pure_sinusoid() {
        // q = A sin(2πft): the (q, q̇) curve is an ellipse with semi-axes A
        // and ~2πfA
        let amp = 0.3;
        let freq = 0.5;
        let dt = 0.01;
        let steps = 400;
        let mut obs = vec![0.0; steps * 10];
        for t in 0..steps {
            obs[t * 10 + 3] = amp * (2.0 * std::f64::consts::PI * freq * t as f64 * dt).sin();
        }
        let traj = Trajectory {
            dt,
            command: [0.0; 3],
            obs: Array::new(vec![steps, 10], obs).unwrap(),
            act: Array::zeros(&[steps, 5]),
            act_present: vec![false; steps],
            source: Source::ActionFree,
        };
        let series = phase_portrait(&traj).unwrap();
        let max_q = series.iter().map(|(q, _)| q.abs()).fold(0.0, f64::max);
        let max_qd = series.iter().map(|(_, qd)| qd.abs()).fold(0.0, f64::max);
        assert!((max_q - amp).abs() < 0.01 * amp);
        let expect_qd = 2.0 * std::f64::consts::PI * freq * amp;
        assert!((max_qd - expect_qd).abs() < 0.02 * expect_qd, "{max_qd} vs {expect_qd}");
    }

    #[test]
    fn phase_portrait_constant_joint_is_single_point() {
        let steps = 10;
        let mut obs = vec![0.0; steps * 10];
        for t in 0..steps {
            obs[t * 10 + 3] = 0.25;
        }
        let traj = Trajectory {
            dt: 0.05,
            command: [0.0; 3],
            obs: Array::new(vec![steps, 10], obs).unwrap(),
            act: Array::zeros(&[steps, 5]),
            act_present: vec![false; steps],
            source: Source::ActionFree,
        };
        let series = phase_portrait(&traj).unwrap();
        assert!(series.iter().all(|(q, qd)| *q == 0.25 && *qd == 0.0));
    }

    #[test]
    fn expert_phase_portrait_is_near_cyclic() {
        // settled expert gait: successive cycles of the portrait must nearly
        // coincide
        let cfg = EnvConfig::default();
        // settled u_x = 0.6 -> f = 0.8 Hz -> 25 steps per cycle
        let traj =
            env::rollout(Controller::Expert, &Command::new(0.6, 0.0, 0.0), 10.0, &cfg, 0)
                .unwrap();
        let series = phase_portrait(&traj).unwrap();
        let period = 25;
        let start = 120;
        let mut max_dev: f64 = 0.0;
        for t in start..(series.len() - period) {
            let (q0, qd0) = series[t];
            let (q1, qd1) = series[t + period];
            let dev = ((q0 - q1).powi(2) + (qd0 - qd1).powi(2)).sqrt();
            max_dev = max_dev.max(dev);
        }
        assert!(max_dev < 0.05, "cycle deviation {max_dev}");
    }

    #[test]
    fn benchmark_grid_is_21_commands() {
        let grid = benchmark_commands();
        assert_eq!(grid.len(), 21);
        assert!(grid.iter().all(|c| c.v_y == 0.0));
    }
}
