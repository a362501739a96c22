use trajlm_core::*;

fn main() {
    let env_cfg = EnvConfig::default();
    let commands = sample_commands(500, &CommandRanges::expert(), 1000);
    let trajs: Vec<Trajectory> = commands
        .iter()
        .enumerate()
        .map(|(i, c)| rollout(Controller::Expert, c, 10.0, &env_cfg, 2000 + i as u64).unwrap())
        .collect();
    let set = TrainingSet::prepare(&trajs).unwrap();
    let model_cfg = ModelConfig {
        d: 32, layers: 2, heads: 4, context: 16,
        layout: TokenLayout::Concat, aligned: true, m: OBS_DIM, n: ACT_DIM, dual_norm: false,
    };
    let train_cfg = TrainConfig { batch_size: 16, window: 16, steps: 2000, seed: 0, log_every: 2000, ..TrainConfig::default() };
    let out = train(init_params(&model_cfg, 0).unwrap(), &model_cfg, &set, &train_cfg).unwrap();
    let ckpt = Checkpoint {
        version: CHECKPOINT_VERSION, config: model_cfg, normalization: set.normalization.clone(),
        params: out.params, step: 2000, optimizer: None, train_seed: 0,
    };

    let cmd = Command::new(0.5, 0.0, 0.0);
    let dep = deploy(&ckpt, &cmd, 10.0, &env_cfg).unwrap();
    println!("straight 0.5: err={:.3} fell={}", dep.tracking_error, dep.fell);
    for k in [0usize, 1, 2, 3, 5, 10, 20, 50, 100, 150, 199] {
        let o = dep.trajectory.obs.row(k);
        let a = dep.trajectory.act.row(k);
        // expert action at the same state
        println!(
            "k={k:>3} u=({:+.3},{:+.3},{:+.3}) q=({:+.2},{:+.2}) a=({:+.3},{:+.3},{:+.3},{:+.2},{:+.2}) expert_a_x={:+.3}",
            o[0], o[1], o[2], o[3], o[4], a[0], a[1], a[2], a[3], a[4],
            5.0 * (0.5 - o[0])
        );
    }
    let p = dep.poses.last().unwrap();
    println!("final pose: ({:.3}, {:.3}, {:.3})", p[0], p[1], p[2]);

    let cmd2 = Command::new(0.5, 0.0, 0.4);
    let dep2 = deploy(&ckpt, &cmd2, 10.0, &env_cfg).unwrap();
    println!("turn 0.4: err={:.3}", dep2.tracking_error);
    for k in [1usize, 10, 50, 100, 199] {
        let o = dep2.trajectory.obs.row(k);
        println!("k={k:>3} u=({:+.3},{:+.3},{:+.3}) expert would a_om={:+.3}", o[0], o[1], o[2], 5.0 * (0.4 - o[2]));
    }
}
