//! Deterministic planar surrogate environment: an omnidirectional base with
//! first-order velocity dynamics plus two gait joints tracking sinusoidal
//! targets. Two scripted controllers generate data: an expert whose actions
//! are recorded, and a variant whose rollouts are recorded action-free under
//! per-rollout randomized drag.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::data::{Source, Trajectory};
use crate::error::{CoreError, Result};
use crate::rng::Rng;
use crate::tensor::Array;

pub const OBS_DIM: usize = 10;
pub const ACT_DIM: usize = 5;

/// Body-frame velocity command.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Command {
    pub v_x: f64,
    pub v_y: f64,
    pub omega: f64,
}

impl Command {
    pub fn new(v_x: f64, v_y: f64, omega: f64) -> Self {
        Command { v_x, v_y, omega }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.v_x, self.v_y, self.omega]
    }
}

/// Full environment state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvState {
    /// (x m, y m, θ rad) in the world frame; θ wrapped to (−π, π].
    pub pose: [f64; 3],
    /// Body-frame velocity (u_x m/s, u_y m/s, ω rad/s).
    pub u: [f64; 3],
    /// Gait joint angles (rad).
    pub q: [f64; 2],
    /// Previous joint angles, for finite-difference joint velocities.
    pub q_prev: [f64; 2],
    /// Elapsed seconds.
    pub t: f64,
}

impl EnvState {
    pub fn at_rest() -> Self {
        EnvState {
            pose: [0.0; 3],
            u: [0.0; 3],
            q: [0.0; 2],
            q_prev: [0.0; 2],
            t: 0.0,
        }
    }

    pub fn speed(&self) -> f64 {
        (self.u[0] * self.u[0] + self.u[1] * self.u[1] + self.u[2] * self.u[2]).sqrt()
    }
}

/// Environment and controller constants. Defaults are fixed so the hand
/// derivations in the tests hold; a config file can override any field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    /// Seconds per control step.
    pub dt: f64,
    /// Velocity drag γ (1/s).
    pub drag: f64,
    /// Acceleration limits per velocity component.
    pub accel_max: [f64; 3],
    /// Joint first-order time constant τ (s).
    pub joint_tau: f64,
    /// Gait amplitude A (rad).
    pub gait_amp: f64,
    /// Gait base frequency f₀ (Hz).
    pub gait_freq0: f64,
    /// Speed-to-frequency gain k_f (Hz per m/s).
    pub speed_freq_gain: f64,
    /// Expert proportional gain k_p (1/s).
    pub expert_gain: f64,
    /// Expert integral gain k_i (1/s²) on the velocity error. The integral
    /// channel is internal controller state, invisible in the observation
    /// vector, so imitating the expert is genuinely history-dependent.
    pub integral_gain: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            dt: 0.05,
            drag: 0.2,
            accel_max: [1.0, 1.0, 2.0],
            joint_tau: 0.1,
            gait_amp: 0.3,
            gait_freq0: 0.5,
            speed_freq_gain: 0.5,
            expert_gain: 5.0,
            integral_gain: 4.0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.dt,
            self.drag,
            self.accel_max[0],
            self.accel_max[1],
            self.accel_max[2],
            self.joint_tau,
            self.gait_amp,
            self.gait_freq0,
            self.speed_freq_gain,
            self.expert_gain,
            self.integral_gain,
        ];
        if positive.iter().any(|v| !(*v > 0.0)) {
            return Err(CoreError::Config("all environment constants must be positive".into()));
        }
        if self.dt >= self.joint_tau {
            return Err(CoreError::Config(format!(
                "dt ({}) must be smaller than the joint time constant ({})",
                self.dt, self.joint_tau
            )));
        }
        Ok(())
    }
}

/// Speed limit beyond which a rollout is flagged as diverged.
pub const DIVERGENCE_SPEED: f64 = 10.0;

fn wrap_angle(theta: f64) -> f64 {
    let mut w = theta.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

/// Advance the environment by one step.
/// Action layout: (a_x, a_y, a_ω, q1_target, q2_target).
pub fn step(state: &EnvState, action: &[f64], cfg: &EnvConfig) -> Result<EnvState> {
    if action.len() != ACT_DIM {
        return Err(CoreError::Dimension {
            op: "env::step",
            detail: format!("action must have {} entries, got {}", ACT_DIM, action.len()),
        });
    }
    if action.iter().any(|a| !a.is_finite()) {
        return Err(CoreError::NonFinite {
            op: "env::step",
            step: (state.t / cfg.dt).round() as usize,
        });
    }
    let dt = cfg.dt;
    let mut u = [0.0; 3];
    for i in 0..3 {
        let a = action[i].clamp(-cfg.accel_max[i], cfg.accel_max[i]);
        u[i] = (1.0 - cfg.drag * dt) * state.u[i] + a * dt;
    }
    let theta = state.pose[2];
    let (s, c) = theta.sin_cos();
    let pose = [
        state.pose[0] + (c * u[0] - s * u[1]) * dt,
        state.pose[1] + (s * u[0] + c * u[1]) * dt,
        wrap_angle(theta + u[2] * dt),
    ];
    let alpha = dt / cfg.joint_tau;
    let q = [
        state.q[0] + (action[3] - state.q[0]) * alpha,
        state.q[1] + (action[4] - state.q[1]) * alpha,
    ];
    Ok(EnvState {
        pose,
        u,
        q,
        q_prev: state.q,
        t: state.t + dt,
    })
}

/// Observation vector:
/// (u_x, u_y, ω, q1, q2, q̇1, q̇2, v*_x, v*_y, ω*), joint velocities by
/// finite difference over the last step.
pub fn observe(state: &EnvState, command: &Command, cfg: &EnvConfig) -> [f64; OBS_DIM] {
    [
        state.u[0],
        state.u[1],
        state.u[2],
        state.q[0],
        state.q[1],
        (state.q[0] - state.q_prev[0]) / cfg.dt,
        (state.q[1] - state.q_prev[1]) / cfg.dt,
        command.v_x,
        command.v_y,
        command.omega,
    ]
}

fn gait_targets(t: f64, u_x: f64, amp: f64, phase: f64, cfg: &EnvConfig) -> (f64, f64) {
    let f = cfg.gait_freq0 + cfg.speed_freq_gain * u_x.abs();
    let arg = 2.0 * PI * f * t + phase;
    (amp * arg.sin(), amp * (arg + PI).sin())
}

/// Proportional velocity tracking plus sinusoidal joint targets.
pub fn expert_action(state: &EnvState, command: &Command, cfg: &EnvConfig) -> [f64; ACT_DIM] {
    let cmd = command.as_array();
    let (q1, q2) = gait_targets(state.t, state.u[0], cfg.gait_amp, 0.0, cfg);
    [
        cfg.expert_gain * (cmd[0] - state.u[0]),
        cfg.expert_gain * (cmd[1] - state.u[1]),
        cfg.expert_gain * (cmd[2] - state.u[2]),
        q1,
        q2,
    ]
}

const VARIANT_GAIN: f64 = 3.0;
const VARIANT_AMP: f64 = 0.4;
const VARIANT_PHASE: f64 = PI / 4.0;

/// Softer-gain controller with a different gait; its rollouts are recorded
/// without actions.
pub fn variant_action(state: &EnvState, command: &Command, cfg: &EnvConfig) -> [f64; ACT_DIM] {
    let cmd = command.as_array();
    let (q1, q2) = gait_targets(state.t, state.u[0], VARIANT_AMP, VARIANT_PHASE, cfg);
    [
        VARIANT_GAIN * (cmd[0] - state.u[0]),
        VARIANT_GAIN * (cmd[1] - state.u[1]),
        VARIANT_GAIN * (cmd[2] - state.u[2]),
        q1,
        q2,
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Controller {
    Expert,
    Variant,
}

/// Clamp on each accumulated velocity-error component (anti-windup).
pub const INTEGRAL_CLAMP: f64 = 1.0;

const VARIANT_INTEGRAL_GAIN_FRACTION: f64 = 0.6;

/// Internal controller memory: the integrated velocity error. Starts at
/// zero each rollout and never appears in observations.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ControllerState {
    pub error_integral: [f64; 3],
}

impl Controller {
    /// Proportional + gait component only (memoryless).
    pub fn action(&self, state: &EnvState, command: &Command, cfg: &EnvConfig) -> [f64; ACT_DIM] {
        match self {
            Controller::Expert => expert_action(state, command, cfg),
            Controller::Variant => variant_action(state, command, cfg),
        }
    }

    /// Full control law: the proportional core plus an integral channel
    /// accumulated across the rollout. The integral removes the drag-induced
    /// steady-state velocity error, so the settled velocity equals the
    /// command exactly.
    pub fn action_stateful(
        &self,
        ctl: &mut ControllerState,
        state: &EnvState,
        command: &Command,
        cfg: &EnvConfig,
    ) -> [f64; ACT_DIM] {
        let cmd = command.as_array();
        let ki = match self {
            Controller::Expert => cfg.integral_gain,
            Controller::Variant => cfg.integral_gain * VARIANT_INTEGRAL_GAIN_FRACTION,
        };
        let mut action = self.action(state, command, cfg);
        for i in 0..3 {
            let e = cmd[i] - state.u[i];
            // conditional integration: freeze the channel while the combined
            // command saturates, so the integrator never winds up
            let candidate =
                (ctl.error_integral[i] + e * cfg.dt).clamp(-INTEGRAL_CLAMP, INTEGRAL_CLAMP);
            if (action[i] + ki * candidate).abs() <= cfg.accel_max[i] {
                ctl.error_integral[i] = candidate;
            }
            action[i] += ki * ctl.error_integral[i];
        }
        action
    }

    pub fn source(&self) -> Source {
        match self {
            Controller::Expert => Source::Expert,
            Controller::Variant => Source::ActionFree,
        }
    }
}

/// Drag randomization range for variant rollouts.
pub const VARIANT_DRAG_RANGE: (f64, f64) = (0.15, 0.25);

/// Initial condition for a rollout.
///
/// Data-collection rollouts randomize the starting velocity and joint pose:
/// trajectories that always begin at rest only ever visit the controller's
/// settled manifold, and a policy cloned from them never sees corrective
/// actions for perturbed states. Evaluation always starts from rest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RolloutStart {
    Rest,
    Randomized,
}

fn randomized_start(seed: u64, amp: f64) -> EnvState {
    let mut rng = Rng::derived(seed, 0x7374_6172_74);
    let q = [rng.uniform_in(-amp, amp), rng.uniform_in(-amp, amp)];
    EnvState {
        pose: [0.0, 0.0, 0.0],
        u: [
            rng.uniform_in(-0.5, 1.5),
            rng.uniform_in(-1.0, 1.0),
            rng.uniform_in(-1.0, 1.0),
        ],
        q,
        q_prev: q,
        t: 0.0,
    }
}

/// A rollout plus the base pose series needed for tracking metrics
/// (`poses[t]` is the pose at time `t·dt`; length `T+1`).
#[derive(Debug, Clone)]
pub struct RolloutTrace {
    pub trajectory: Trajectory,
    pub poses: Vec<[f64; 3]>,
}

/// Roll the given controller out for `duration` seconds under a constant
/// command, starting from rest. Expert rollouts record actions; variant
/// rollouts record only observations and draw their drag coefficient from
/// the seed.
pub fn rollout(
    controller: Controller,
    command: &Command,
    duration: f64,
    cfg: &EnvConfig,
    seed: u64,
) -> Result<Trajectory> {
    rollout_trace(controller, command, duration, cfg, seed).map(|t| t.trajectory)
}

pub fn rollout_trace(
    controller: Controller,
    command: &Command,
    duration: f64,
    cfg: &EnvConfig,
    seed: u64,
) -> Result<RolloutTrace> {
    rollout_trace_from(controller, command, duration, cfg, seed, RolloutStart::Rest)
}

/// [`rollout`] with an explicit initial-condition policy.
pub fn rollout_from(
    controller: Controller,
    command: &Command,
    duration: f64,
    cfg: &EnvConfig,
    seed: u64,
    start: RolloutStart,
) -> Result<Trajectory> {
    rollout_trace_from(controller, command, duration, cfg, seed, start).map(|t| t.trajectory)
}

pub fn rollout_trace_from(
    controller: Controller,
    command: &Command,
    duration: f64,
    cfg: &EnvConfig,
    seed: u64,
    start: RolloutStart,
) -> Result<RolloutTrace> {
    rollout_trace_collect(
        controller,
        command,
        duration,
        cfg,
        seed,
        &CollectionOptions {
            start,
            action_noise_std: 0.0,
        },
    )
}

/// Data-collection knobs. Exploration noise is added to the *executed*
/// actions (and recorded as executed), so the dynamics stay consistent and
/// the noise-free controller remains the regression optimum; a policy cannot
/// reach the data's loss floor by copying its own previous action.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollectionOptions {
    pub start: RolloutStart,
    /// Std of iid Gaussian noise added to every executed action component.
    pub action_noise_std: f64,
}

impl Default for CollectionOptions {
    fn default() -> Self {
        CollectionOptions {
            start: RolloutStart::Rest,
            action_noise_std: 0.0,
        }
    }
}

/// Joint-target noise is scaled down relative to acceleration noise to
/// match the joint targets' smaller (~0.3 rad) range.
pub const JOINT_NOISE_FRACTION: f64 = 0.3;

pub fn rollout_collect(
    controller: Controller,
    command: &Command,
    duration: f64,
    cfg: &EnvConfig,
    seed: u64,
    opts: &CollectionOptions,
) -> Result<Trajectory> {
    rollout_trace_collect(controller, command, duration, cfg, seed, opts).map(|t| t.trajectory)
}

pub fn rollout_trace_collect(
    controller: Controller,
    command: &Command,
    duration: f64,
    cfg: &EnvConfig,
    seed: u64,
    opts: &CollectionOptions,
) -> Result<RolloutTrace> {
    cfg.validate()?;
    let steps_f = duration / cfg.dt;
    if (steps_f - steps_f.round()).abs() > 1e-9 || steps_f < 2.0 {
        return Err(CoreError::Contract {
            op: "rollout",
            detail: format!("duration {duration} must be an integral (>=2) number of dt={} steps", cfg.dt),
        });
    }
    let steps = steps_f.round() as usize;

    let mut cfg = *cfg;
    if controller == Controller::Variant {
        let mut rng = Rng::derived(seed, 0x6472_6167); // per-rollout drag draw
        cfg.drag = rng.uniform_in(VARIANT_DRAG_RANGE.0, VARIANT_DRAG_RANGE.1);
    }

    let record_actions = controller == Controller::Expert;
    let mut state = match opts.start {
        RolloutStart::Rest => EnvState::at_rest(),
        RolloutStart::Randomized => randomized_start(seed, cfg.gait_amp),
    };
    let mut noise_rng = Rng::derived(seed, 0x6e6f_6973_65);
    let mut ctl = ControllerState::default();
    let mut obs = Vec::with_capacity(steps * OBS_DIM);
    let mut act = Vec::with_capacity(steps * ACT_DIM);
    let mut poses = Vec::with_capacity(steps + 1);
    poses.push(state.pose);
    for k in 0..steps {
        obs.extend_from_slice(&observe(&state, command, &cfg));
        let mut action = controller.action_stateful(&mut ctl, &state, command, &cfg);
        if opts.action_noise_std > 0.0 {
            for (i, a) in action.iter_mut().enumerate() {
                let scale = if i < 3 { 1.0 } else { JOINT_NOISE_FRACTION };
                *a += opts.action_noise_std * scale * noise_rng.normal();
            }
        }
        if record_actions {
            act.extend_from_slice(&action);
        } else {
            act.extend(std::iter::repeat(0.0).take(ACT_DIM));
        }
        state = step(&state, &action, &cfg)?;
        poses.push(state.pose);
        if state.speed() > DIVERGENCE_SPEED {
            return Err(CoreError::Diverged {
                speed: state.speed(),
                limit: DIVERGENCE_SPEED,
                step: k,
            });
        }
    }

    let trajectory = Trajectory {
        dt: cfg.dt,
        command: command.as_array(),
        obs: Array::new(vec![steps, OBS_DIM], obs)?,
        act: Array::new(vec![steps, ACT_DIM], act)?,
        act_present: vec![record_actions; steps],
        source: controller.source(),
    };
    Ok(RolloutTrace { trajectory, poses })
}

/// Per-component sampling ranges for velocity commands.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommandRanges {
    pub v_x: (f64, f64),
    pub v_y: (f64, f64),
    pub omega: (f64, f64),
}

impl CommandRanges {
    /// Ranges used for expert data: forward-only heading.
    pub fn expert() -> Self {
        CommandRanges {
            v_x: (0.0, 1.0),
            v_y: (-0.5, 0.5),
            omega: (-0.5, 0.5),
        }
    }

    /// Wider ranges used for action-free data.
    pub fn variant() -> Self {
        CommandRanges {
            v_x: (-1.0, 1.0),
            v_y: (-1.0, 1.0),
            omega: (-1.0, 1.0),
        }
    }
}

/// Draw `k` commands, each component from a normal centered mid-range with
/// σ = range/4, clipped to the range.
pub fn sample_commands(k: usize, ranges: &CommandRanges, seed: u64) -> Vec<Command> {
    let mut rng = Rng::seeded(seed);
    let mut draw = |(lo, hi): (f64, f64)| {
        let mid = 0.5 * (lo + hi);
        let sigma = (hi - lo) / 4.0;
        rng.clipped_normal(mid, sigma, lo, hi)
    };
    (0..k)
        .map(|_| {
            let v_x = draw(ranges.v_x);
            let v_y = draw(ranges.v_y);
            let omega = draw(ranges.omega);
            Command { v_x, v_y, omega }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_state_zero_action_is_fixed_point() {
        let cfg = EnvConfig::default();
        let s0 = EnvState::at_rest();
        let s1 = step(&s0, &[0.0; 5], &cfg).unwrap();
        assert_eq!(s1.pose, [0.0; 3]);
        assert_eq!(s1.u, [0.0; 3]);
        assert_eq!(s1.q, [0.0; 2]);
        assert_eq!(s1.t, cfg.dt);
    }

    #[test]
    fn drag_decay_hand_value() {
        let cfg = EnvConfig::default();
        let mut s = EnvState::at_rest();
        s.u = [1.0, 0.0, 0.0];
        let s1 = step(&s, &[0.0; 5], &cfg).unwrap();
        assert!((s1.u[0] - 0.99).abs() < 1e-15); // (1 − 0.2·0.05)·1
    }

    #[test]
    fn joint_first_order_hand_value() {
        let cfg = EnvConfig::default();
        let s = EnvState::at_rest();
        let s1 = step(&s, &[0.0, 0.0, 0.0, 0.3, 0.0], &cfg).unwrap();
        assert!((s1.q[0] - 0.15).abs() < 1e-15); // 0 + 0.3·(0.05/0.1)
        assert_eq!(s1.q[1], 0.0);
    }

    #[test]
    fn nan_action_rejected() {
        let cfg = EnvConfig::default();
        let s = EnvState::at_rest();
        assert!(step(&s, &[f64::NAN, 0.0, 0.0, 0.0, 0.0], &cfg).is_err());
    }

    #[test]
    fn observe_zero_and_passthrough() {
        let cfg = EnvConfig::default();
        let s = EnvState::at_rest();
        let zero = observe(&s, &Command::new(0.0, 0.0, 0.0), &cfg);
        assert_eq!(zero, [0.0; OBS_DIM]);
        let o = observe(&s, &Command::new(0.5, 0.0, 0.1), &cfg);
        assert_eq!(&o[7..], &[0.5, 0.0, 0.1]);
        assert!(o[..7].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn observe_joint_velocity_finite_difference() {
        let cfg = EnvConfig::default();
        let mut s = EnvState::at_rest();
        s.q = [0.1, 0.0];
        s.q_prev = [0.0, 0.0];
        let o = observe(&s, &Command::new(0.0, 0.0, 0.0), &cfg);
        assert!((o[5] - 2.0).abs() < 1e-12); // 0.1 / 0.05
    }

    #[test]
    fn expert_zero_error_gives_zero_accel() {
        let cfg = EnvConfig::default();
        let mut s = EnvState::at_rest();
        s.u = [0.3, -0.1, 0.2];
        let a = expert_action(&s, &Command::new(0.3, -0.1, 0.2), &cfg);
        assert!(a[..3].iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn expert_proportional_hand_value() {
        let cfg = EnvConfig::default();
        let s = EnvState::at_rest();
        let a = expert_action(&s, &Command::new(0.5, 0.0, 0.0), &cfg);
        assert!((a[0] - 2.5).abs() < 1e-15); // 5 · 0.5
    }

    #[test]
    fn expert_gait_targets_at_t0() {
        let cfg = EnvConfig::default();
        let s = EnvState::at_rest();
        let a = expert_action(&s, &Command::new(0.0, 0.0, 0.0), &cfg);
        assert!(a[3].abs() < 1e-12); // sin(0)
        assert!(a[4].abs() < 1e-12); // 0.3·sin(π)
    }

    #[test]
    fn variant_gait_target_at_t0() {
        let cfg = EnvConfig::default();
        let s = EnvState::at_rest();
        let a = variant_action(&s, &Command::new(0.0, 0.0, 0.0), &cfg);
        assert!((a[3] - 0.4 * (PI / 4.0).sin()).abs() < 1e-12); // ≈ 0.2828
    }

    #[test]
    fn variant_zero_error_gives_zero_accel() {
        let cfg = EnvConfig::default();
        let mut s = EnvState::at_rest();
        s.u = [0.2, 0.0, -0.3];
        let a = variant_action(&s, &Command::new(0.2, 0.0, -0.3), &cfg);
        assert!(a[..3].iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn rollout_step_count_and_sources() {
        let cfg = EnvConfig::default();
        let cmd = Command::new(0.5, 0.0, 0.0);
        let expert = rollout(Controller::Expert, &cmd, 10.0, &cfg, 1).unwrap();
        assert_eq!(expert.steps(), 200);
        assert!(expert.act_present.iter().all(|p| *p));

        let variant = rollout(Controller::Variant, &cmd, 10.0, &cfg, 1).unwrap();
        assert!(variant.act_present.iter().all(|p| !*p));
        assert!(variant.act.data().iter().all(|v| *v == 0.0));
        variant.validate().unwrap();
    }

    #[test]
    fn rollout_rejects_non_integral_duration() {
        let cfg = EnvConfig::default();
        let cmd = Command::new(0.0, 0.0, 0.0);
        assert!(rollout(Controller::Expert, &cmd, 0.512, &cfg, 0).is_err());
    }

    #[test]
    fn expert_converges_to_commanded_velocity() {
        // the integral channel cancels the drag offset: u -> cmd exactly
        let cfg = EnvConfig::default();
        let cmd = Command::new(0.5, 0.0, 0.0);
        let traj = rollout(Controller::Expert, &cmd, 10.0, &cfg, 0).unwrap();
        let last = traj.obs.row(traj.steps() - 1);
        assert!(
            (last[0] - 0.5).abs() < 1e-3,
            "terminal u_x {} vs command 0.5",
            last[0]
        );
    }

    #[test]
    fn proportional_core_alone_settles_below_command() {
        // without the integral channel the drag leaves a steady-state error
        // at k_p·c/(k_p+γ); the stateful law differs from the memoryless one
        let cfg = EnvConfig::default();
        let cmd = Command::new(0.5, 0.0, 0.0);
        let mut state = EnvState::at_rest();
        for _ in 0..200 {
            let action = expert_action(&state, &cmd, &cfg);
            state = step(&state, &action, &cfg).unwrap();
        }
        let u_star = cfg.expert_gain * 0.5 / (cfg.expert_gain + cfg.drag);
        assert!((state.u[0] - u_star).abs() < 1e-3);
    }

    #[test]
    fn rollout_deterministic_for_seed() {
        let cfg = EnvConfig::default();
        let cmd = Command::new(0.4, 0.1, -0.2);
        let a = rollout(Controller::Variant, &cmd, 5.0, &cfg, 33).unwrap();
        let b = rollout(Controller::Variant, &cmd, 5.0, &cfg, 33).unwrap();
        assert_eq!(a, b);
        let c = rollout(Controller::Variant, &cmd, 5.0, &cfg, 34).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn velocity_error_decays_monotonically() {
        let cfg = EnvConfig::default();
        let cmd = Command::new(0.5, -0.2, 0.3);
        let traj = rollout(Controller::Expert, &cmd, 10.0, &cfg, 0).unwrap();
        let err_at = |t: usize| {
            let o = traj.obs.row(t);
            ((o[0] - cmd.v_x).powi(2) + (o[1] - cmd.v_y).powi(2) + (o[2] - cmd.omega).powi(2))
                .sqrt()
        };
        let start = (1.0 / cfg.dt) as usize;
        for t in start..traj.steps() - 1 {
            assert!(
                err_at(t + 1) <= err_at(t) + 1e-9,
                "velocity error rose at step {t}"
            );
        }
    }

    #[test]
    fn settled_gait_is_periodic() {
        // command chosen so the settled u_x gives f = 0.8 Hz, an integral
        // number (25) of steps per gait period
        let cfg = EnvConfig::default();
        let traj = rollout(Controller::Expert, &Command::new(0.6, 0.0, 0.0), 20.0, &cfg, 0).unwrap();
        let period_steps = 25;
        // the slow integral mode needs ~15 s to die below the tolerance
        for t in 320..(traj.steps() - period_steps) {
            let q1_now = traj.obs.row(t)[3];
            let q1_next = traj.obs.row(t + period_steps)[3];
            assert!(
                (q1_now - q1_next).abs() < 1e-6,
                "gait not periodic at step {t}: {q1_now} vs {q1_next}"
            );
        }
    }

    #[test]
    fn sampled_commands_respect_ranges_and_seed() {
        let ranges = CommandRanges::expert();
        let a = sample_commands(100, &ranges, 5);
        let b = sample_commands(100, &ranges, 5);
        assert_eq!(a, b);
        for c in &a {
            assert!(c.v_x >= 0.0 && c.v_x <= 1.0);
            assert!(c.v_y >= -0.5 && c.v_y <= 0.5);
            assert!(c.omega >= -0.5 && c.omega <= 0.5);
        }
    }

    #[test]
    fn sampled_command_mean_near_mid_range() {
        let ranges = CommandRanges::expert();
        let cmds = sample_commands(1000, &ranges, 11);
        let mean = cmds.iter().map(|c| c.v_x).sum::<f64>() / cmds.len() as f64;
        assert!(mean > 0.4 && mean < 0.6, "mean v_x {mean}");
    }
}
