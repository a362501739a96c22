//! Planar kinematic chains, forward kinematics, and trajectory-level inverse
//! kinematics: recover joint trajectories that track keypoint series under
//! joint/velocity limits, with velocity-minimization and smoothness
//! regularizers. Retargeting maps keypoints recorded on one chain onto the
//! surrogate robot's gait joints and assembles action-free trajectories.
//!
//! The decision variables are the initial posture and the joint velocity
//! series; postures are eliminated exactly through trapezoidal integration,
//! so the integration identity holds by construction rather than by penalty.
//! Velocity box constraints are enforced by projection after each step;
//! posture boxes by a quadratic penalty (projecting postures directly would
//! break the integration identity).

use std::f64::consts::PI;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::data::{Source, Trajectory};
use crate::env::{ACT_DIM, OBS_DIM};
use crate::error::{CoreError, Result};
use crate::rng::Rng;
use crate::tensor::Array;

/// Planar link chain with cumulative joint angles, anchored at `base`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KinematicChain {
    pub link_lengths: Vec<f64>,
    pub joint_lower: Vec<f64>,
    pub joint_upper: Vec<f64>,
    /// Per-joint velocity limit (rad/s), symmetric.
    pub vel_limit: Vec<f64>,
    pub base: [f64; 2],
}

impl KinematicChain {
    pub fn joints(&self) -> usize {
        self.link_lengths.len()
    }

    pub fn total_length(&self) -> f64 {
        self.link_lengths.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        let j = self.joints();
        if j == 0 {
            return Err(CoreError::Config("chain needs at least one link".into()));
        }
        if self.joint_lower.len() != j || self.joint_upper.len() != j || self.vel_limit.len() != j {
            return Err(CoreError::Config("chain field lengths disagree".into()));
        }
        if self.link_lengths.iter().any(|l| !(*l > 0.0)) {
            return Err(CoreError::Config("link lengths must be positive".into()));
        }
        for i in 0..j {
            if !(self.joint_lower[i] < self.joint_upper[i]) {
                return Err(CoreError::Config(format!(
                    "joint {i} limits infeasible: [{}, {}]",
                    self.joint_lower[i], self.joint_upper[i]
                )));
            }
            if !(self.vel_limit[i] > 0.0) {
                return Err(CoreError::Config(format!("joint {i} velocity limit must be positive")));
            }
        }
        Ok(())
    }

    /// The surrogate robot's two gait joints.
    pub fn surrogate_robot() -> Self {
        KinematicChain {
            link_lengths: vec![0.5, 0.5],
            joint_lower: vec![-1.5, -1.5],
            joint_upper: vec![1.5, 1.5],
            vel_limit: vec![6.0, 6.0],
            base: [0.0, 0.0],
        }
    }

    /// A longer-limbed source chain standing in for human keypoint data.
    pub fn human_like() -> Self {
        KinematicChain {
            link_lengths: vec![0.8, 0.7],
            joint_lower: vec![-1.8, -1.8],
            joint_upper: vec![1.8, 1.8],
            vel_limit: vec![8.0, 8.0],
            base: [0.0, 0.0],
        }
    }
}

/// Forward kinematics: one 2-D point per link end; joint angles accumulate
/// along the chain.
pub fn fk(chain: &KinematicChain, q: &[f64]) -> Result<Vec<[f64; 2]>> {
    if q.len() != chain.joints() {
        return Err(CoreError::Dimension {
            op: "fk",
            detail: format!("expected {} joint angles, got {}", chain.joints(), q.len()),
        });
    }
    let mut points = Vec::with_capacity(chain.joints());
    let mut angle = 0.0;
    let mut pos = chain.base;
    for (l, qi) in chain.link_lengths.iter().zip(q) {
        angle += qi;
        pos = [pos[0] + l * angle.cos(), pos[1] + l * angle.sin()];
        points.push(pos);
    }
    Ok(points)
}

/// Keypoint series: N frames × K points in world coordinates with per-point
/// confidence in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointTrajectory {
    pub dt: f64,
    /// N×K×2.
    pub points: Vec<Vec<[f64; 2]>>,
    /// N×K.
    pub confidence: Vec<Vec<f64>>,
}

impl KeypointTrajectory {
    pub fn frames(&self) -> usize {
        self.points.len()
    }

    pub fn keypoints(&self) -> usize {
        self.points.first().map(|f| f.len()).unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames() < 2 {
            return Err(CoreError::Contract {
                op: "KeypointTrajectory",
                detail: "need at least 2 frames".into(),
            });
        }
        if !(self.dt > 0.0) {
            return Err(CoreError::Config("keypoint dt must be positive".into()));
        }
        let k = self.keypoints();
        if self.confidence.len() != self.frames() {
            return Err(CoreError::Config("confidence frame count mismatch".into()));
        }
        for (f, (pts, conf)) in self.points.iter().zip(&self.confidence).enumerate() {
            if pts.len() != k || conf.len() != k {
                return Err(CoreError::Config(format!("frame {f} keypoint count mismatch")));
            }
            if pts.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
                return Err(CoreError::Config(format!("frame {f} has non-finite keypoints")));
            }
            if conf.iter().any(|c| !(0.0..=1.0).contains(c)) {
                return Err(CoreError::Config(format!("frame {f} confidence outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Cost weights: confidence-weighted keypoint tracking plus velocity and
/// smoothness regularizers, with a quadratic posture-box penalty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IkWeights {
    pub velocity: f64,
    pub smoothness: f64,
    pub posture_penalty: f64,
}

impl Default for IkWeights {
    fn default() -> Self {
        // Calibrated so noiseless self-consistency recovers the source motion
        // to sub-millimeter residual: larger velocity weights bias the
        // solution visibly away from the keypoints.
        IkWeights {
            velocity: 1e-4,
            smoothness: 1e-3,
            posture_penalty: 100.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub max_iterations: usize,
    pub initial_step: f64,
    /// Stop when the relative cost decrease of an accepted step falls below
    /// this.
    pub rel_tolerance: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iterations: 2000,
            initial_step: 0.1,
            rel_tolerance: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IkResult {
    /// N×d_q joint angles.
    pub q: Array,
    /// N×d_q joint velocities; `q` is exactly their trapezoidal integral.
    pub qdot: Array,
    /// Final objective value.
    pub cost: f64,
    /// Mean keypoint error (m), unweighted.
    pub residual: f64,
    pub converged: bool,
    pub iterations: usize,
}

struct CostGraph {
    cost: Var,
    q0: Var,
    qdot: Var,
    q: Var,
}

fn build_cost(
    chain: &KinematicChain,
    keypts: &KeypointTrajectory,
    weights: &IkWeights,
    q0_value: &Array,
    qdot_value: &Array,
) -> Result<CostGraph> {
    let n = keypts.frames();
    let dq = chain.joints();
    let q0 = Var::leaf(q0_value.clone());
    let qdot = Var::leaf(qdot_value.clone());
    let q = qdot.trapezoid_integrate(&q0, keypts.dt)?;

    // cumulative joint angles per column
    let mut phis: Vec<Var> = Vec::with_capacity(dq);
    let mut running: Option<Var> = None;
    for j in 0..dq {
        let col = q.slice_cols(j, 1)?;
        let phi = match &running {
            None => col,
            Some(prev) => prev.add(&col)?,
        };
        running = Some(phi.clone());
        phis.push(phi);
    }

    // keypoint positions per link end, accumulated along the chain
    let mut cost_terms: Vec<Var> = Vec::new();
    let mut acc_x: Option<Var> = None;
    let mut acc_y: Option<Var> = None;
    for (j, phi) in phis.iter().enumerate() {
        let l = chain.link_lengths[j];
        let cx = phi.cos().scale(l);
        let cy = phi.sin().scale(l);
        acc_x = Some(match acc_x {
            None => cx,
            Some(prev) => prev.add(&cx)?,
        });
        acc_y = Some(match acc_y {
            None => cy,
            Some(prev) => prev.add(&cy)?,
        });
        let kx = acc_x.as_ref().unwrap();
        let ky = acc_y.as_ref().unwrap();

        // targets relative to the chain base, confidence-weighted
        let mut tx = Vec::with_capacity(n);
        let mut ty = Vec::with_capacity(n);
        let mut conf = Vec::with_capacity(n);
        for f in 0..n {
            tx.push(-(keypts.points[f][j][0] - chain.base[0]));
            ty.push(-(keypts.points[f][j][1] - chain.base[1]));
            conf.push(keypts.confidence[f][j]);
        }
        let tx = Array::new(vec![n, 1], tx)?;
        let ty = Array::new(vec![n, 1], ty)?;
        let conf = Array::new(vec![n, 1], conf)?;
        let ex = kx.add_const(&tx)?;
        let ey = ky.add_const(&ty)?;
        let sq = ex.mul(&ex)?.add(&ey.mul(&ey)?)?;
        cost_terms.push(sq.mul_const(&conf)?.sum());
    }

    // velocity and smoothness regularizers
    let v_sq = qdot.mul(&qdot)?.sum().scale(weights.velocity);
    cost_terms.push(v_sq);
    if n >= 2 {
        let head = qdot.slice_rows(1, n - 1)?;
        let tail = qdot.slice_rows(0, n - 1)?;
        let dv = head.sub(&tail)?;
        cost_terms.push(dv.mul(&dv)?.sum().scale(weights.smoothness));
    }

    // posture box penalty
    let upper = tile_const(&chain.joint_upper, n);
    let lower = tile_const(&chain.joint_lower, n);
    let over = q.add_const(&negated(&upper))?.relu();
    let under = q.scale(-1.0).add_const(&lower)?.relu();
    cost_terms.push(
        over.mul(&over)?
            .sum()
            .add(&under.mul(&under)?.sum())?
            .scale(weights.posture_penalty),
    );

    let mut total = cost_terms[0].clone();
    for term in &cost_terms[1..] {
        total = total.add(term)?;
    }
    Ok(CostGraph {
        cost: total,
        q0,
        qdot,
        q,
    })
}

fn tile_const(row: &[f64], n: usize) -> Array {
    let mut data = Vec::with_capacity(n * row.len());
    for _ in 0..n {
        data.extend_from_slice(row);
    }
    Array::new(vec![n, row.len()], data).expect("shape")
}

fn negated(a: &Array) -> Array {
    Array::new(a.shape().to_vec(), a.data().iter().map(|v| -v).collect()).expect("shape")
}

fn project_velocity(qdot: &mut Array, limits: &[f64]) {
    let dq = limits.len();
    let data = qdot.data_mut();
    for (i, v) in data.iter_mut().enumerate() {
        let lim = limits[i % dq];
        *v = v.clamp(-lim, lim);
    }
}

fn mean_keypoint_error(chain: &KinematicChain, keypts: &KeypointTrajectory, q: &Array) -> f64 {
    let n = keypts.frames();
    let mut total = 0.0;
    let mut count = 0usize;
    for f in 0..n {
        let points = fk(chain, q.row(f)).expect("dims");
        for (j, p) in points.iter().enumerate() {
            let kp = keypts.points[f][j];
            total += ((p[0] - kp[0]).powi(2) + (p[1] - kp[1]).powi(2)).sqrt();
            count += 1;
        }
    }
    total / count as f64
}

/// Closed-form per-frame initialization: joint angles from the directions
/// between consecutive keypoints (exact when keypoints lie on the chain).
fn analytic_init(chain: &KinematicChain, keypts: &KeypointTrajectory) -> (Array, Array) {
    let n = keypts.frames();
    let dq = chain.joints();
    let mut q = vec![0.0; n * dq];
    for f in 0..n {
        let mut prev_point = chain.base;
        let mut prev_angle = 0.0;
        for j in 0..dq {
            let p = keypts.points[f][j];
            let angle = (p[1] - prev_point[1]).atan2(p[0] - prev_point[0]);
            let rel = wrap_pi(angle - prev_angle);
            q[f * dq + j] = rel.clamp(chain.joint_lower[j], chain.joint_upper[j]);
            prev_angle += q[f * dq + j];
            prev_point = p;
        }
    }
    // central-difference velocities, clamped to limits
    let mut qdot = vec![0.0; n * dq];
    let dt = keypts.dt;
    for j in 0..dq {
        for f in 0..n {
            let v = if f == 0 {
                (q[dq + j] - q[j]) / dt
            } else if f == n - 1 {
                (q[f * dq + j] - q[(f - 1) * dq + j]) / dt
            } else {
                (q[(f + 1) * dq + j] - q[(f - 1) * dq + j]) / (2.0 * dt)
            };
            qdot[f * dq + j] = v.clamp(-chain.vel_limit[j], chain.vel_limit[j]);
        }
    }
    let q0 = Array::from_vec(q[..dq].to_vec());
    (q0, Array::new(vec![n, dq], qdot).expect("shape"))
}

fn wrap_pi(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

/// Projected gradient descent with step halving over (initial posture,
/// velocity series); the posture series is eliminated exactly through
/// trapezoidal integration. The accepted-cost sequence is non-increasing.
pub fn solve_ik(
    chain: &KinematicChain,
    keypts: &KeypointTrajectory,
    weights: &IkWeights,
    solver: &SolverConfig,
) -> Result<IkResult> {
    chain.validate()?;
    keypts.validate()?;
    if keypts.keypoints() != chain.joints() {
        return Err(CoreError::Dimension {
            op: "solve_ik",
            detail: format!(
                "keypoint count {} must match chain link count {}",
                keypts.keypoints(),
                chain.joints()
            ),
        });
    }
    if weights.velocity < 0.0 || weights.smoothness < 0.0 || weights.posture_penalty < 0.0 {
        return Err(CoreError::Config("IK weights must be non-negative".into()));
    }

    let (mut q0, mut qdot) = analytic_init(chain, keypts);
    project_velocity(&mut qdot, &chain.vel_limit);

    let mut graph = build_cost(chain, keypts, weights, &q0, &qdot)?;
    let mut cost = graph.cost.scalar_value()?;
    let mut step = solver.initial_step;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < solver.max_iterations {
        iterations += 1;
        graph.cost.backward()?;
        let g0 = graph.q0.grad_or_zeros();
        let gv = graph.qdot.grad_or_zeros();

        // halve the step until the projected point decreases the cost
        let mut accepted = false;
        while step > 1e-16 {
            let mut q0_new = q0.clone();
            for (x, g) in q0_new.data_mut().iter_mut().zip(g0.data()) {
                *x -= step * g;
            }
            let mut qdot_new = qdot.clone();
            for (x, g) in qdot_new.data_mut().iter_mut().zip(gv.data()) {
                *x -= step * g;
            }
            project_velocity(&mut qdot_new, &chain.vel_limit);
            let candidate = build_cost(chain, keypts, weights, &q0_new, &qdot_new)?;
            let c_new = candidate.cost.scalar_value()?;
            if c_new <= cost {
                let improvement = (cost - c_new) / cost.abs().max(1e-30);
                q0 = q0_new;
                qdot = qdot_new;
                graph = candidate;
                let done = improvement < solver.rel_tolerance;
                cost = c_new;
                accepted = true;
                if done {
                    converged = true;
                }
                break;
            }
            step *= 0.5;
        }
        if !accepted || converged {
            converged = converged || !accepted && step <= 1e-16 && cost.is_finite();
            break;
        }
    }

    let q = graph.q.value();
    let residual = mean_keypoint_error(chain, keypts, &q);
    Ok(IkResult {
        q,
        qdot,
        cost,
        residual,
        converged,
        iterations,
    })
}

/// A retargeted trajectory with its IK quality metadata.
#[derive(Debug, Clone)]
pub struct RetargetOutput {
    pub trajectory: Trajectory,
    pub residual: f64,
    pub cost: f64,
    pub converged: bool,
}

/// Map a keypoint trajectory recorded on `source_chain` onto
/// `robot_chain` (the surrogate's two gait joints): scale keypoints by the
/// limb-length ratio, remove a linear root-path estimate fitted to the first
/// keypoint, solve the trajectory IK, and assemble an action-free trajectory.
/// Base-velocity observation slots come from finite differences of the first
/// keypoint's displacement; command slots from their mean.
pub fn retarget(
    source_chain: &KinematicChain,
    robot_chain: &KinematicChain,
    keypts: &KeypointTrajectory,
    weights: &IkWeights,
    solver: &SolverConfig,
) -> Result<RetargetOutput> {
    source_chain.validate()?;
    robot_chain.validate()?;
    keypts.validate()?;
    if robot_chain.joints() != 2 {
        return Err(CoreError::Contract {
            op: "retarget",
            detail: format!("robot chain must have 2 joints, got {}", robot_chain.joints()),
        });
    }
    if keypts.keypoints() != robot_chain.joints() {
        return Err(CoreError::Dimension {
            op: "retarget",
            detail: format!(
                "expected {} keypoints per frame, got {}",
                robot_chain.joints(),
                keypts.keypoints()
            ),
        });
    }
    let n = keypts.frames();
    let dt = keypts.dt;
    let scale = robot_chain.total_length() / source_chain.total_length();

    // Base drift estimate: least-squares slope of the first keypoint's path,
    // kept only when the implied displacement dominates the gait oscillation
    // (a slope fitted to a stationary gait is rectification noise, and
    // subtracting it would tilt the targets off the reachable workspace).
    let drift = {
        let mut slope = [0.0; 2];
        let tmean = (n as f64 - 1.0) / 2.0;
        let mut denom = 0.0;
        for f in 0..n {
            denom += (f as f64 - tmean) * (f as f64 - tmean);
        }
        let mut means = [0.0; 2];
        for (c, bc) in slope.iter_mut().enumerate() {
            let mean: f64 = keypts.points.iter().map(|fr| fr[0][c]).sum::<f64>() / n as f64;
            means[c] = mean;
            let mut num = 0.0;
            for (f, fr) in keypts.points.iter().enumerate() {
                num += (f as f64 - tmean) * (fr[0][c] - mean);
            }
            *bc = if denom > 0.0 { num / denom } else { 0.0 };
        }
        let mut osc_sq = 0.0;
        for (f, fr) in keypts.points.iter().enumerate() {
            for c in 0..2 {
                let detrended = fr[0][c] - means[c] - slope[c] * (f as f64 - tmean);
                osc_sq += detrended * detrended;
            }
        }
        let osc_rms = (osc_sq / n as f64).sqrt();
        let span = ((slope[0] * slope[0] + slope[1] * slope[1]).sqrt()) * (n as f64 - 1.0);
        if span < 2.0 * osc_rms {
            [0.0, 0.0]
        } else {
            slope
        }
    };

    // chain-frame targets: de-drift, then scale about the source base and
    // re-anchor at the robot base (uniform limb scaling preserves angles)
    let mut frames = Vec::with_capacity(n);
    for (f, fr) in keypts.points.iter().enumerate() {
        let pts: Vec<[f64; 2]> = fr
            .iter()
            .map(|p| {
                [
                    (p[0] - drift[0] * f as f64 - source_chain.base[0]) * scale
                        + robot_chain.base[0],
                    (p[1] - drift[1] * f as f64 - source_chain.base[1]) * scale
                        + robot_chain.base[1],
                ]
            })
            .collect();
        frames.push(pts);
    }
    let chain_frame = KeypointTrajectory {
        dt,
        points: frames,
        confidence: keypts.confidence.clone(),
    };
    let ik = solve_ik(robot_chain, &chain_frame, weights, solver)?;

    // base velocity from raw first-keypoint displacement, in robot scale
    let mut u = vec![[0.0; 2]; n];
    for f in 1..n {
        u[f] = [
            (keypts.points[f][0][0] - keypts.points[f - 1][0][0]) * scale / dt,
            (keypts.points[f][0][1] - keypts.points[f - 1][0][1]) * scale / dt,
        ];
    }
    let mean_u = [
        u.iter().map(|v| v[0]).sum::<f64>() / n as f64,
        u.iter().map(|v| v[1]).sum::<f64>() / n as f64,
    ];
    let command = [mean_u[0], mean_u[1], 0.0];

    let mut obs = vec![0.0; n * OBS_DIM];
    for f in 0..n {
        let row = &mut obs[f * OBS_DIM..(f + 1) * OBS_DIM];
        row[0] = u[f][0];
        row[1] = u[f][1];
        row[2] = 0.0;
        row[3] = ik.q.at2(f, 0);
        row[4] = ik.q.at2(f, 1);
        if f > 0 {
            row[5] = (ik.q.at2(f, 0) - ik.q.at2(f - 1, 0)) / dt;
            row[6] = (ik.q.at2(f, 1) - ik.q.at2(f - 1, 1)) / dt;
        }
        row[7] = command[0];
        row[8] = command[1];
        row[9] = command[2];
    }
    let trajectory = Trajectory {
        dt,
        command,
        obs: Array::new(vec![n, OBS_DIM], obs)?,
        act: Array::zeros(&[n, ACT_DIM]),
        act_present: vec![false; n],
        source: Source::Retargeted,
    };
    trajectory.validate()?;
    Ok(RetargetOutput {
        trajectory,
        residual: ik.residual,
        cost: ik.cost,
        converged: ik.converged,
    })
}

/// Keep outputs whose residual is at or below the threshold, preserving
/// order.
pub fn filter_by_residual(outputs: Vec<RetargetOutput>, threshold: f64) -> Result<Vec<RetargetOutput>> {
    if !(threshold > 0.0) {
        return Err(CoreError::Contract {
            op: "filter_by_residual",
            detail: format!("threshold must be positive, got {threshold}"),
        });
    }
    Ok(outputs.into_iter().filter(|o| o.residual <= threshold).collect())
}

// ---- keypoint CSV ----------------------------------------------------------
//
// Header: t,p1x,p1y,...,pKx,pKy[,c1,...,cK], one row per frame.

pub fn write_keypoint_csv(path: &Path, keypts: &KeypointTrajectory, with_confidence: bool) -> Result<()> {
    keypts.validate()?;
    let k = keypts.keypoints();
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CoreError::io(parent.display().to_string(), e))?;
    }
    let mut file =
        fs::File::create(path).map_err(|e| CoreError::io(path.display().to_string(), e))?;
    let mut header = String::from("t");
    for j in 1..=k {
        header.push_str(&format!(",p{j}x,p{j}y"));
    }
    if with_confidence {
        for j in 1..=k {
            header.push_str(&format!(",c{j}"));
        }
    }
    writeln!(file, "{header}").map_err(|e| CoreError::io(path.display().to_string(), e))?;
    for (f, frame) in keypts.points.iter().enumerate() {
        let mut row = format!("{}", f as f64 * keypts.dt);
        for p in frame {
            row.push_str(&format!(",{},{}", p[0], p[1]));
        }
        if with_confidence {
            for c in &keypts.confidence[f] {
                row.push_str(&format!(",{c}"));
            }
        }
        writeln!(file, "{row}").map_err(|e| CoreError::io(path.display().to_string(), e))?;
    }
    Ok(())
}

pub fn read_keypoint_csv(path: &Path) -> Result<KeypointTrajectory> {
    let body =
        fs::read_to_string(path).map_err(|e| CoreError::io(path.display().to_string(), e))?;
    let mut lines = body.lines();
    let header = lines.next().ok_or_else(|| CoreError::Parse {
        path: path.display().to_string(),
        detail: "empty file".into(),
    })?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.first() != Some(&"t") {
        return Err(CoreError::Parse {
            path: path.display().to_string(),
            detail: "header must start with 't'".into(),
        });
    }
    let point_cols = cols.iter().filter(|c| c.starts_with('p')).count();
    if point_cols == 0 || point_cols % 2 != 0 {
        return Err(CoreError::Parse {
            path: path.display().to_string(),
            detail: "expected paired pKx,pKy columns".into(),
        });
    }
    let k = point_cols / 2;
    let has_conf = cols.len() == 1 + point_cols + k;
    if !has_conf && cols.len() != 1 + point_cols {
        return Err(CoreError::Parse {
            path: path.display().to_string(),
            detail: format!("unexpected column count {}", cols.len()),
        });
    }

    let mut times = Vec::new();
    let mut points = Vec::new();
    let mut confidence = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != cols.len() {
            return Err(CoreError::Parse {
                path: path.display().to_string(),
                detail: format!("row {}: expected {} fields, got {}", lineno + 2, cols.len(), fields.len()),
            });
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse::<f64>().map_err(|e| CoreError::Parse {
                path: path.display().to_string(),
                detail: format!("row {}: {e}", lineno + 2),
            })
        };
        times.push(parse(fields[0])?);
        let mut frame = Vec::with_capacity(k);
        for j in 0..k {
            frame.push([parse(fields[1 + 2 * j])?, parse(fields[2 + 2 * j])?]);
        }
        points.push(frame);
        if has_conf {
            let mut conf = Vec::with_capacity(k);
            for j in 0..k {
                conf.push(parse(fields[1 + point_cols + j])?);
            }
            confidence.push(conf);
        } else {
            confidence.push(vec![1.0; k]);
        }
    }
    if times.len() < 2 {
        return Err(CoreError::Parse {
            path: path.display().to_string(),
            detail: "need at least 2 frames".into(),
        });
    }
    let dt = times[1] - times[0];
    for w in times.windows(2) {
        if ((w[1] - w[0]) - dt).abs() > 1e-9 {
            return Err(CoreError::Parse {
                path: path.display().to_string(),
                detail: "time column must be uniformly spaced".into(),
            });
        }
    }
    let keypts = KeypointTrajectory {
        dt,
        points,
        confidence,
    };
    keypts.validate()?;
    Ok(keypts)
}

/// Parameters for synthesized keypoint data: smooth per-joint sinusoids on a
/// source chain, optional base drift, and additive position noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KeypointSynthesis {
    pub frames: usize,
    pub dt: f64,
    /// Gaussian noise σ (m) added to every keypoint coordinate.
    pub noise_std: f64,
    /// Constant base drift velocity (m/s) applied to all keypoints.
    pub drift: [f64; 2],
}

impl Default for KeypointSynthesis {
    fn default() -> Self {
        KeypointSynthesis {
            frames: 200,
            dt: 0.05,
            noise_std: 0.0,
            drift: [0.0, 0.0],
        }
    }
}

/// Generate a keypoint trajectory by running smooth joint sinusoids through
/// the chain's forward kinematics.
pub fn synthesize_keypoints(
    chain: &KinematicChain,
    spec: &KeypointSynthesis,
    seed: u64,
) -> Result<KeypointTrajectory> {
    chain.validate()?;
    if spec.frames < 2 || !(spec.dt > 0.0) {
        return Err(CoreError::Config("synthesis needs frames >= 2 and positive dt".into()));
    }
    let mut rng = Rng::derived(seed, 0x6b70_7473);
    let dq = chain.joints();
    let mut amp = Vec::with_capacity(dq);
    let mut freq = Vec::with_capacity(dq);
    let mut phase = Vec::with_capacity(dq);
    let mut center = Vec::with_capacity(dq);
    for j in 0..dq {
        let half_range = 0.5 * (chain.joint_upper[j] - chain.joint_lower[j]);
        let mid = 0.5 * (chain.joint_upper[j] + chain.joint_lower[j]);
        amp.push(rng.uniform_in(0.1, 0.4) * half_range);
        freq.push(rng.uniform_in(0.25, 0.6));
        phase.push(rng.uniform_in(0.0, 2.0 * PI));
        center.push(mid);
    }
    let mut points = Vec::with_capacity(spec.frames);
    let mut confidence = Vec::with_capacity(spec.frames);
    for f in 0..spec.frames {
        let t = f as f64 * spec.dt;
        let q: Vec<f64> = (0..dq)
            .map(|j| center[j] + amp[j] * (2.0 * PI * freq[j] * t + phase[j]).sin())
            .collect();
        let mut frame = fk(chain, &q)?;
        for p in &mut frame {
            p[0] += spec.drift[0] * t + spec.noise_std * rng.normal();
            p[1] += spec.drift[1] * t + spec.noise_std * rng.normal();
        }
        points.push(frame);
        confidence.push(vec![1.0; dq]);
    }
    Ok(KeypointTrajectory {
        dt: spec.dt,
        points,
        confidence,
    })
}
