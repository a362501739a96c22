//! Locomotion control as next-token prediction over sensorimotor
//! trajectories, at desk scale: a deterministic planar surrogate environment
//! generates mixed-quality trajectory datasets (complete, action-free, and
//! IK-retargeted), a causal transformer is trained with modality-aligned
//! prediction and learnable mask tokens, and the resulting policy is
//! evaluated closed-loop against ideal command-satisfying paths.

pub mod autodiff;
pub mod data;
pub mod env;
pub mod error;
pub mod eval;
pub mod ik;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod train;

pub use autodiff::Var;
pub use data::{
    compute_normalization, denormalize, load_dataset, normalize, save_dataset, tokenize,
    DatasetManifest, MaskPolicy, Normalization, Source, SourceCounts, TokenLayout, TokenSequence,
    Trajectory,
};
pub use env::{
    expert_action, observe, rollout, rollout_collect, rollout_from, rollout_trace,
    rollout_trace_collect, rollout_trace_from, sample_commands, step, variant_action,
    CollectionOptions, Command, CommandRanges, Controller, ControllerState, EnvConfig,
    EnvState, RolloutStart,
    ACT_DIM, OBS_DIM,
};
pub use error::{CoreError, Result};
pub use eval::{
    benchmark_commands, correlation_from_points, deploy, expert_tracking_baseline,
    ideal_trajectory, phase_portrait, prediction_error, tracking_error, unseen_command_test,
    DeployOutcome, EvalReport, PredictionError, TrackingReport, UnseenCommandReport,
    EPISODE_DURATION,
};
pub use ik::{
    fk, filter_by_residual, read_keypoint_csv, retarget, solve_ik, synthesize_keypoints,
    write_keypoint_csv, IkResult, IkWeights, KeypointSynthesis, KeypointTrajectory,
    KinematicChain, RetargetOutput, SolverConfig,
};
pub use model::{
    forward, forward_values, init_params, load_checkpoint, param_count, predict_next_action,
    save_checkpoint, Checkpoint, ContextStep, ModelConfig, ModelParams, OptimizerState,
    ParamVars, Predictions, RollingContext, CHECKPOINT_VERSION,
};
pub use tensor::{matmul_value, Array};
pub use train::{
    learning_rate, masked_mse, resume, train, train_staged, Regime, TrainConfig, TrainLog,
    TrainOutcome, TrainingSet,
};
