use trajlm_cli::experiments::*;
use trajlm_core::{eval, unseen_command_test, EnvConfig};

fn mean(rows: &[(u64, f64)]) -> f64 {
    rows.iter().map(|r| r.1).sum::<f64>() / rows.len() as f64
}

fn main() {
    let env = EnvConfig::default();
    let noise: f64 = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(0.5);
    let jobs = 2;
    println!("collect noise {noise}");

    let baseline = eval::expert_tracking_baseline(&env).unwrap().mean_tracking_error;
    println!("expert baseline: {baseline:.4}");

    let mut spec = ExperimentSpec::desk(Experiment::DataScaling);
    spec.collect_noise = noise;
    spec.jobs = jobs;

    // run every experiment through the shared cache
    let mut all: Vec<(String, String, u64, f64, f64)> = Vec::new();
    for exp in [
        Experiment::DataScaling,
        Experiment::ContextScaling,
        Experiment::AlignmentAblation,
        Experiment::LossTargetAblation,
        Experiment::ActionFreeGain,
        Experiment::RegimeAblation,
    ] {
        let mut s = spec.clone();
        s.experiment = exp;
        let cells = s.cells();
        let t0 = std::time::Instant::now();
        let outs = run_cells_parallel(&cells, &env, jobs);
        println!("{} done in {:.0?}", exp.name(), t0.elapsed());
        for (cell, out) in cells.iter().zip(outs) {
            match out {
                Ok(r) => {
                    println!(
                        "  {:<22} seed {}: track {:.4} pred {:.5} falls {}",
                        r.variant, r.seed, r.tracking_error, r.prediction_error, r.fall_count
                    );
                    all.push((exp.name().into(), r.variant, r.seed, r.tracking_error, r.prediction_error));
                }
                Err(e) => println!("  {:<22} seed {}: FAILED {e}", cell.variant, cell.seed),
            }
        }
    }

    let grab = |exp: &str, var: &str| -> Vec<(u64, f64)> {
        all.iter()
            .filter(|r| r.0 == exp && r.1 == var)
            .map(|r| (r.2, r.3))
            .collect()
    };

    println!("\n==== criterion verdicts ====");
    let base500 = grab("scale-data", "n500");
    println!("C5 competence: n500 mean {:.4} vs 2x baseline {:.4} -> {}", mean(&base500), 2.0 * baseline, if mean(&base500) <= 2.0 * baseline { "PASS" } else { "FAIL" });
    for (s, t) in &base500 { println!("   seed {s}: ratio {:.3}", t / baseline); }

    let al = mean(&grab("ablate-alignment", "aligned"));
    let nal = mean(&grab("ablate-alignment", "non-aligned"));
    println!("C6 alignment: {al:.4} <= {nal:.4} -> {}", if al <= nal { "PASS" } else { "FAIL" });

    let sa = mean(&grab("ablate-loss-target", "state-action"));
    let ao = mean(&grab("ablate-loss-target", "action-only"));
    println!("C7 loss target: {sa:.4} <= {ao:.4} -> {}", if sa <= ao { "PASS" } else { "FAIL" });

    let c100 = mean(&grab("actionfree-gain", "complete-100"));
    let c100af = mean(&grab("actionfree-gain", "complete-100+af-500"));
    println!("C8 af gain: {c100af:.4} < {c100:.4} -> {}", if c100af < c100 { "PASS" } else { "FAIL" });

    let joint = mean(&grab("ablate-regime", "joint"));
    let staged = mean(&grab("ablate-regime", "staged"));
    println!("C9 regime: |{joint:.4} - {staged:.4}| / joint = {:.3} <= 0.15 -> {}", (joint - staged).abs() / joint, if (joint - staged).abs() <= 0.15 * joint { "PASS" } else { "FAIL" });

    let sizes = [62usize, 125, 250, 500];
    let means: Vec<f64> = sizes.iter().map(|n| mean(&grab("scale-data", &format!("n{n}")))).collect();
    let mut inversions = 0;
    let mut worst: f64 = 0.0;
    for w in means.windows(2) {
        if w[1] > w[0] {
            inversions += 1;
            worst = worst.max((w[1] - w[0]) / w[0]);
        }
    }
    println!("C10 data scaling {means:?}: {inversions} inversions worst {:.3} -> {}", worst, if inversions == 0 || (inversions == 1 && worst <= 0.05) { "PASS" } else { "FAIL" });

    let ctx8 = mean(&grab("scale-context", "ctx8"));
    let ctx32 = mean(&grab("scale-context", "ctx32"));
    println!("C11 context: ctx32 {ctx32:.4} <= ctx8 {ctx8:.4} -> {}", if ctx32 <= ctx8 { "PASS" } else { "FAIL" });

    // C12: backward probes on the n500 cells
    let mut spec12 = spec.clone();
    spec12.experiment = Experiment::DataScaling;
    let mut ok = 0;
    for seed in [0u64, 1, 2] {
        let cell = spec12.cells().into_iter().find(|c| c.variant == "n500" && c.seed == seed).unwrap();
        let r = run_cell_cached(&cell, &env).unwrap();
        let unseen = unseen_command_test(&r.checkpoint, &env).unwrap();
        let b = &unseen.backward[1];
        let pass = b.final_x <= -1.0 && !b.fell;
        if pass { ok += 1; }
        println!("   seed {seed}: backward -0.5 final_x {:.2} fell {}", b.final_x, b.fell);
    }
    println!("C12 unseen: {ok}/3 -> {}", if ok >= 2 { "PASS" } else { "FAIL" });

    // C13: correlation across variant means
    let mut points: Vec<(f64, f64)> = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for r in &all {
        let key = (r.0.clone(), r.1.clone());
        if seen.insert(key.clone()) {
            let group: Vec<&(String, String, u64, f64, f64)> = all.iter().filter(|x| x.0 == r.0 && x.1 == r.1).collect();
            let pe = group.iter().map(|x| x.4).sum::<f64>() / group.len() as f64;
            let te = group.iter().map(|x| x.3).sum::<f64>() / group.len() as f64;
            points.push((pe, te));
        }
    }
    let r = trajlm_core::correlation_from_points(&points).unwrap();
    println!("C13 correlation over {} variants: r = {:?} -> {}", points.len(), r, if r.map(|v| v > 0.5).unwrap_or(false) { "PASS" } else { "FAIL" });
}
