use copylab::model::{
    forward, generate_greedy, loss, loss_and_grads, ModelConfig, ModelWeights, Mode, TokenBatch,
};
use copylab::numeric::{grad_check_at, Rng, Tensor};

fn tiny(dropout: f64) -> ModelConfig {
    ModelConfig {
        n_layers: 2,
        n_heads: 2,
        d_model: 8,
        d_ff: 12,
        vocab_size: 11,
        ctx_len: 16,
        rope_theta: 10_000.0,
        attn_dropout: dropout,
        norm_eps: 1e-5,
    }
}

/// Weights with larger-than-init entries so every path carries signal.
fn lively(cfg: &ModelConfig, seed: u64) -> ModelWeights<f64> {
    let mut rng = Rng::new(seed);
    let mut w = ModelWeights::<f64>::init(cfg, &mut rng).unwrap();
    for (name, t) in w.named_mut() {
        for v in t.data_mut() {
            *v = if name.ends_with("norm") {
                1.0 + 0.3 * rng.normal()
            } else {
                0.5 * rng.normal()
            };
        }
    }
    w
}

fn batch(cfg: &ModelConfig, rows: usize, len: usize, seed: u64) -> TokenBatch {
    let mut rng = Rng::new(seed);
    let tokens = (0..rows * len).map(|_| rng.below(cfg.vocab_size) as u32).collect();
    TokenBatch::new(rows, len, tokens).unwrap()
}

/// Replaces the named tensor and evaluates the loss.
fn loss_with(w: &ModelWeights<f64>, name: &str, value: &Tensor<f64>, b: &TokenBatch) -> f64 {
    let mut probe = w.clone();
    for (n, t) in probe.named_mut() {
        if n == name {
            *t = value.clone();
        }
    }
    loss(&probe, b).unwrap()
}

#[test]
fn gradients_match_central_differences_for_every_tensor() {
    let cfg = tiny(0.0);
    let w = lively(&cfg, 1);
    let b = batch(&cfg, 3, 9, 2);
    let (_, grads) = loss_and_grads(&w, &b, None).unwrap();
    for ((name, param), (_, grad)) in w.named().into_iter().zip(grads.named()) {
        let coords: Vec<usize> = (0..param.len()).collect();
        let err = grad_check_at(|p| loss_with(&w, &name, p, &b), grad, param, 1e-5, &coords);
        assert!(err < 1e-4, "{name}: relative error {err}");
    }
}

#[test]
fn dropout_gradients_match_with_a_fixed_mask() {
    let cfg = tiny(0.3);
    let w = lively(&cfg, 3);
    let b = batch(&cfg, 2, 7, 4);
    let (_, grads) = loss_and_grads(&w, &b, Some(&mut Rng::new(77))).unwrap();
    let train_loss = |p: &ModelWeights<f64>| loss_and_grads(p, &b, Some(&mut Rng::new(77))).unwrap().0;
    for ((name, param), (_, grad)) in w.named().into_iter().zip(grads.named()) {
        let coords: Vec<usize> = (0..param.len()).step_by(3).collect();
        let err = grad_check_at(
            |p| {
                let mut probe = w.clone();
                for (n, t) in probe.named_mut() {
                    if n == name {
                        *t = p.clone();
                    }
                }
                train_loss(&probe)
            },
            grad,
            param,
            1e-5,
            &coords,
        );
        assert!(err < 1e-4, "{name}: relative error {err}");
    }
}

#[test]
fn uniform_logits_give_log_vocab_loss() {
    let cfg = tiny(0.0);
    let mut w = lively(&cfg, 5);
    w.unembed.data_mut().fill(0.0);
    let l = loss(&w, &batch(&cfg, 2, 10, 6)).unwrap();
    assert!((l - (cfg.vocab_size as f64).ln()).abs() < 1e-12);
}

#[test]
fn duplicated_rows_keep_the_mean() {
    let cfg = tiny(0.0);
    let w = lively(&cfg, 7);
    let single = batch(&cfg, 1, 10, 8);
    let double = TokenBatch::from_rows(&[single.tokens.clone(), single.tokens.clone()]).unwrap();
    let a = loss(&w, &single).unwrap();
    let b = loss(&w, &double).unwrap();
    assert!((a - b).abs() < 1e-12);
}

#[test]
fn causal_logits_ignore_future_tokens() {
    let cfg = tiny(0.0);
    let w = lively(&cfg, 9);
    let tokens: Vec<u32> = vec![3, 1, 4, 1, 5, 9, 2, 6];
    let base = forward(&w, &tokens, Mode::Eval, &mut Rng::new(0), false).unwrap();
    for pos in 1..tokens.len() {
        let mut changed = tokens.clone();
        changed[pos] = (changed[pos] + 1) % cfg.vocab_size as u32;
        let out = forward(&w, &changed, Mode::Eval, &mut Rng::new(0), false).unwrap();
        for t in 0..pos {
            assert_eq!(base.logits.row(t), out.logits.row(t), "position {t} saw token {pos}");
        }
        assert_ne!(base.logits.row(pos), out.logits.row(pos));
    }
}

#[test]
fn eval_is_deterministic_and_train_without_dropout_matches() {
    let cfg = tiny(0.0);
    let w = lively(&cfg, 10).cast::<f32>();
    let tokens: Vec<u32> = (0..12).map(|i| (i * 7 % 11) as u32).collect();
    let a = forward(&w, &tokens, Mode::Eval, &mut Rng::new(1), true).unwrap();
    let b = forward(&w, &tokens, Mode::Eval, &mut Rng::new(2), true).unwrap();
    let c = forward(&w, &tokens, Mode::Train, &mut Rng::new(3), true).unwrap();
    assert_eq!(a.logits, b.logits);
    assert_eq!(a.logits, c.logits);
    assert_eq!(a.attention, c.attention);
}

#[test]
fn attention_rows_are_causal_distributions() {
    let cfg = tiny(0.0);
    let w = lively(&cfg, 12).cast::<f32>();
    let tokens: Vec<u32> = (0..16).map(|i| (i * 5 % 11) as u32).collect();
    let trace = forward(&w, &tokens, Mode::Eval, &mut Rng::new(0), true).unwrap();
    assert_eq!(trace.attention.len(), 2);
    for layer in &trace.attention {
        assert_eq!(layer.len(), 2);
        for att in layer {
            for i in 0..16 {
                let row = att.row(i);
                let sum: f32 = row.iter().sum();
                assert!((sum - 1.0).abs() < 1e-5);
                assert!(row[i + 1..].iter().all(|&v| v == 0.0));
            }
        }
    }
}

#[test]
fn input_errors() {
    let cfg = tiny(0.0);
    let w = lively(&cfg, 13);
    let mut rng = Rng::new(0);
    assert!(forward(&w, &[11], Mode::Eval, &mut rng, false).is_err());
    assert!(forward(&w, &[0; 17], Mode::Eval, &mut rng, false).is_err());
    assert!(generate_greedy(&w, &[1; 10], 7).is_err());
    assert!(loss(&w, &TokenBatch::new(1, 1, vec![0]).unwrap()).is_err());
}

#[test]
fn greedy_generation_basics() {
    let cfg = tiny(0.0);
    let mut w = lively(&cfg, 14);
    assert_eq!(generate_greedy(&w, &[4, 2], 0).unwrap(), vec![4, 2]);
    w.unembed.data_mut().fill(0.0);
    assert_eq!(generate_greedy(&w, &[4, 2], 3).unwrap(), vec![4, 2, 0, 0, 0]);
}
