//! Loss-masking contract: masked elements — placeholder action inputs and
//! masked-out targets — can hold arbitrary values without changing the loss
//! or any parameter gradient, bit for bit.

use trajlm_core::rng::Rng;
use trajlm_core::{
    forward, init_params, masked_mse, Array, ModelConfig, ParamVars, TokenLayout, TokenSequence,
};

fn config(layout: TokenLayout) -> ModelConfig {
    ModelConfig {
        d: 16,
        layers: 2,
        heads: 2,
        context: 12,
        layout,
        aligned: true,
        m: 5,
        n: 3,
        dual_norm: false,
    }
}

fn sequence_with_masks(cfg: &ModelConfig, steps: usize, seed: u64) -> TokenSequence {
    let mut rng = Rng::seeded(seed);
    let obs: Vec<f64> = (0..steps * cfg.m).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
    let mut act = vec![0.0; steps * cfg.n];
    let mut act_masked = vec![false; steps];
    for i in 0..steps {
        if i % 3 == 1 {
            act_masked[i] = true; // zero placeholder stays
        } else {
            for j in 0..cfg.n {
                act[i * cfg.n + j] = rng.uniform_in(-1.0, 1.0);
            }
        }
    }
    let t_obs: Vec<f64> = (0..steps * cfg.m).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
    let t_act: Vec<f64> = (0..steps * cfg.n).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
    let mut mask_obs = vec![1.0; steps * cfg.m];
    let mut mask_act = vec![1.0; steps * cfg.n];
    for i in 0..steps {
        // last step untargeted; masked steps' action targets ignored
        if i == steps - 1 {
            for j in 0..cfg.m {
                mask_obs[i * cfg.m + j] = 0.0;
            }
        }
        if act_masked[i] || i == steps - 1 {
            for j in 0..cfg.n {
                mask_act[i * cfg.n + j] = 0.0;
            }
        }
    }
    TokenSequence {
        layout: cfg.layout,
        aligned: cfg.aligned,
        steps,
        obs: Array::new(vec![steps, cfg.m], obs).unwrap(),
        act: Array::new(vec![steps, cfg.n], act).unwrap(),
        act_masked,
        target_obs: Array::new(vec![steps, cfg.m], t_obs).unwrap(),
        target_act: Array::new(vec![steps, cfg.n], t_act).unwrap(),
        loss_mask_obs: Array::new(vec![steps, cfg.m], mask_obs).unwrap(),
        loss_mask_act: Array::new(vec![steps, cfg.n], mask_act).unwrap(),
    }
}

fn garble_masked_elements(seq: &TokenSequence, fill: f64) -> TokenSequence {
    let mut out = seq.clone();
    for i in 0..seq.steps {
        if seq.act_masked[i] {
            for j in 0..seq.act_dim() {
                out.act.data_mut()[i * seq.act_dim() + j] = fill;
            }
        }
        for j in 0..seq.act_dim() {
            if seq.loss_mask_act.at2(i, j) == 0.0 {
                out.target_act.data_mut()[i * seq.act_dim() + j] = -fill;
            }
        }
        for j in 0..seq.obs_dim() {
            if seq.loss_mask_obs.at2(i, j) == 0.0 {
                out.target_obs.data_mut()[i * seq.obs_dim() + j] = fill * 0.5;
            }
        }
    }
    out
}

fn loss_and_grads(cfg: &ModelConfig, seqs: &[TokenSequence], seed: u64) -> (f64, Vec<Array>) {
    let params = init_params(cfg, seed).unwrap();
    let pv = ParamVars::from_params(&params);
    let refs: Vec<&TokenSequence> = seqs.iter().collect();
    let preds = forward(&pv, cfg, &refs).unwrap();
    let stack = |pick: &dyn Fn(&TokenSequence) -> &Array| -> Array {
        let cols = pick(&seqs[0]).ncols();
        let mut data = Vec::new();
        for s in seqs {
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
    let grads = pv.leaves().iter().map(|l| l.grad_or_zeros()).collect();
    (loss.total_value, grads)
}

#[test]
fn masked_elements_are_bit_inert() {
    for layout in [TokenLayout::Concat, TokenLayout::Separate] {
        let cfg = config(layout);
        let base: Vec<TokenSequence> =
            (0..3).map(|k| sequence_with_masks(&cfg, 8, 100 + k)).collect();
        let (loss0, grads0) = loss_and_grads(&cfg, &base, 7);

        for fill in [1e6, -42.0, 3.14159] {
            let garbled: Vec<TokenSequence> =
                base.iter().map(|s| garble_masked_elements(s, fill)).collect();
            let (loss1, grads1) = loss_and_grads(&cfg, &garbled, 7);
            assert_eq!(
                loss0.to_bits(),
                loss1.to_bits(),
                "{layout:?} fill {fill}: loss changed"
            );
            assert_eq!(grads0.len(), grads1.len());
            for (k, (a, b)) in grads0.iter().zip(&grads1).enumerate() {
                assert_eq!(a, b, "{layout:?} fill {fill}: gradient tensor {k} changed");
            }
        }
    }
}

/// Unmasked garbling must change things — the inertness above is about the
/// mask, not an artifact of a constant function.
#[test]
fn unmasked_elements_do_matter() {
    let cfg = config(TokenLayout::Concat);
    let base = vec![sequence_with_masks(&cfg, 8, 55)];
    let (loss0, _) = loss_and_grads(&cfg, &base, 7);
    let mut changed = base.clone();
    changed[0].target_obs.data_mut()[0] += 1.0;
    let (loss1, _) = loss_and_grads(&cfg, &changed, 7);
    assert_ne!(loss0.to_bits(), loss1.to_bits());
}
