//! Benchmarks for the numerical hot paths: matrix kernels, a full training
//! step (forward + backward + update), closed-loop prediction, environment
//! rollouts, and one IK solve.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;

use trajlm_core::{
    forward, init_params, masked_mse, matmul_value, rollout, sample_commands,
    synthesize_keypoints, tokenize, Array, Command, CommandRanges, Controller, EnvConfig,
    IkWeights, KeypointSynthesis, KinematicChain, MaskPolicy, ModelConfig, ParamVars,
    SolverConfig, TokenLayout, TrainConfig, TrainingSet, ACT_DIM, OBS_DIM,
};

fn bench_matmul(c: &mut Criterion) {
    let mut group = c.benchmark_group("matmul");
    for &(m, k, n) in &[(16usize, 48usize, 48usize), (256, 48, 192), (192, 192, 192)] {
        let a = Array::full(&[m, k], 0.5);
        let b = Array::full(&[k, n], -0.25);
        group.bench_function(format!("{m}x{k}x{n}"), |bench| {
            bench.iter(|| matmul_value(black_box(&a), black_box(&b)).unwrap())
        });
    }
    group.finish();
}

fn desk_model() -> ModelConfig {
    ModelConfig {
        d: 48,
        layers: 1,
        heads: 4,
        context: 16,
        layout: TokenLayout::Concat,
        aligned: true,
        m: OBS_DIM,
        n: ACT_DIM,
        dual_norm: false,
    }
}

fn bench_training_step(c: &mut Criterion) {
    let env = EnvConfig::default();
    let cfg = desk_model();
    let commands = sample_commands(8, &CommandRanges::expert(), 0);
    let trajs: Vec<_> = commands
        .iter()
        .enumerate()
        .map(|(i, cmd)| rollout(Controller::Expert, cmd, 10.0, &env, i as u64).unwrap())
        .collect();
    let set = TrainingSet::prepare(&trajs).unwrap();
    let params = init_params(&cfg, 0).unwrap();
    let tc = TrainConfig {
        batch_size: 16,
        window: 16,
        steps: 1,
        ..TrainConfig::default()
    };
    let normalized = trajs
        .iter()
        .map(|t| trajlm_core::normalize(t, &set.normalization).unwrap())
        .collect::<Vec<_>>();
    let batch: Vec<_> = (0..tc.batch_size)
        .map(|i| {
            tokenize(&normalized[i % normalized.len()], 0, 16, cfg.layout, cfg.aligned, MaskPolicy::FromPresence)
                .unwrap()
        })
        .collect();

    c.bench_function("forward_backward_batch16", |bench| {
        bench.iter_batched(
            || ParamVars::from_params(&params),
            |pv| {
                let refs: Vec<_> = batch.iter().collect();
                let preds = forward(&pv, &cfg, &refs).unwrap();
                let stack = |pick: &dyn Fn(&trajlm_core::TokenSequence) -> &Array| -> Array {
                    let cols = pick(&batch[0]).ncols();
                    let mut data = Vec::new();
                    for s in &batch {
                        data.extend_from_slice(pick(s).data());
                    }
                    Array::new(vec![data.len() / cols, cols], data).unwrap()
                };
                let loss = masked_mse(
                    &preds,
                    &stack(&|s| &s.target_obs),
                    &stack(&|s| &s.target_act),
                    &stack(&|s| &s.loss_mask_obs),
                    &stack(&|s| &s.loss_mask_act),
                )
                .unwrap();
                loss.total.backward().unwrap();
                black_box(loss.total_value)
            },
            BatchSize::SmallInput,
        )
    });
}

fn bench_rollout(c: &mut Criterion) {
    let env = EnvConfig::default();
    let cmd = Command::new(0.5, 0.0, 0.1);
    c.bench_function("expert_rollout_10s", |bench| {
        bench.iter(|| rollout(Controller::Expert, black_box(&cmd), 10.0, &env, 3).unwrap())
    });
}

fn bench_ik(c: &mut Criterion) {
    let chain = KinematicChain::surrogate_robot();
    let keypts = synthesize_keypoints(
        &chain,
        &KeypointSynthesis {
            frames: 100,
            ..Default::default()
        },
        5,
    )
    .unwrap();
    let solver = SolverConfig {
        max_iterations: 200,
        ..Default::default()
    };
    c.bench_function("ik_solve_100_frames_200_iters", |bench| {
        bench.iter(|| {
            trajlm_core::solve_ik(
                black_box(&chain),
                black_box(&keypts),
                &IkWeights::default(),
                &solver,
            )
            .unwrap()
        })
    });
}

criterion_group!(benches, bench_matmul, bench_training_step, bench_rollout, bench_ik);
criterion_main!(benches);
