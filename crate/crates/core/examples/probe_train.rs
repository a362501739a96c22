use std::time::Instant;
use trajlm_core::*;

fn main() {
    let env_cfg = EnvConfig::default();
    let noise: f64 = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(0.2);
    let d: usize = std::env::args().nth(3).and_then(|a| a.parse().ok()).unwrap_or(32);
    let batch: usize = std::env::args().nth(4).and_then(|a| a.parse().ok()).unwrap_or(16);
    let layers: usize = std::env::args().nth(5).and_then(|a| a.parse().ok()).unwrap_or(2);
    let steps: usize = std::env::args().nth(2).and_then(|a| a.parse().ok()).unwrap_or(5000);
    let opts = CollectionOptions { start: RolloutStart::Randomized, action_noise_std: noise };
    println!("noise={noise} steps={steps}");
    let t0 = Instant::now();
    let commands = sample_commands(500, &CommandRanges::expert(), 1000);
    let trajs: Vec<Trajectory> = commands
        .iter()
        .enumerate()
        .map(|(i, c)| rollout_collect(Controller::Expert, c, 10.0, &env_cfg, 2000 + i as u64, &opts).unwrap())
        .collect();
    println!("data gen: {:.2?} ({} trajs)", t0.elapsed(), trajs.len());

    let set = TrainingSet::prepare(&trajs).unwrap();
    let model_cfg = ModelConfig {
        d, layers, heads: 4, context: 16,
        layout: TokenLayout::Concat, aligned: true, m: OBS_DIM, n: ACT_DIM, dual_norm: false,
    };
    let train_cfg = TrainConfig { batch_size: batch, window: 16, steps, seed: 0, log_every: 500, ..TrainConfig::default() };
    let params = init_params(&model_cfg, 0).unwrap();
    println!("params: {}", params.count());

    let t1 = Instant::now();
    let out = train(params, &model_cfg, &set, &train_cfg).unwrap();
    println!("train 5000 steps: {:.2?}", t1.elapsed());
    for r in &out.log.records {
        println!("  step {:>5}: total={:.5} obs={:.5} act={:.5}", r.step, r.total, r.obs_part, r.act_part);
    }

    let ckpt = Checkpoint {
        version: CHECKPOINT_VERSION, config: model_cfg, normalization: set.normalization.clone(),
        params: out.params, step: 5000, optimizer: None, train_seed: 0,
    };
    let t2 = Instant::now();
    let baseline = expert_tracking_baseline(&env_cfg).unwrap();
    let report = eval::evaluate_tracking(&ckpt, &env_cfg).unwrap();
    println!("eval: {:.2?}", t2.elapsed());
    println!("expert baseline: {:.4} m", baseline.mean_tracking_error);
    println!("model tracking:  {:.4} m (falls {})", report.mean_tracking_error, report.fall_count);
    println!("ratio: {:.3}", report.mean_tracking_error / baseline.mean_tracking_error);
    let mut worst: Vec<(f64, [f64;3])> = report.per_command.iter().map(|c| (c.tracking_error, c.command)).collect();
    worst.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    for (e, c) in worst.iter().take(4) { println!("  worst cmd {:?}: {:.3}", c, e); }
    let mut base_map = std::collections::HashMap::new();
    for c in &baseline.per_command { base_map.insert(format!("{:?}", c.command), c.tracking_error); }
    

    // prediction error on fresh heldout
    let held_cmds = sample_commands(50, &CommandRanges::expert(), 777);
    let held: Vec<Trajectory> = held_cmds
        .iter()
        .enumerate()
        .map(|(i, c)| rollout(Controller::Expert, c, 10.0, &env_cfg, 90_000 + i as u64).unwrap())
        .collect();
    let pe = prediction_error(&ckpt, &held).unwrap();
    println!("prediction error: state={:.5} action={:.5} total={:.5}", pe.state, pe.action, pe.total);

    // unseen backward command
    let unseen = unseen_command_test(&ckpt, &env_cfg).unwrap();
    for b in &unseen.backward {
        println!("backward {:?}: err={:.3} final_x={:.3} fell={}", b.command, b.tracking_error, b.final_x, b.fell);
    }
}
