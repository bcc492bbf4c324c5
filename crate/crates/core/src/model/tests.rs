use std::sync::Arc;

use super::*;
use crate::config::BuilderKind;

fn tiny() -> TransformerModel {
    TransformerModel::new(ModelConfig {
        d_model: 16,
        n_heads: 2,
        d_ff: 24,
        max_seq: 16,
        vocab_size: 16,
        ..ModelConfig::default()
    })
    .unwrap()
}

fn prompt() -> Vec<usize> {
    vocab::encode("3+4=").unwrap()
}

#[test]
fn config_validation() {
    assert!(ModelConfig::default().validate().is_ok());
    let bad = ModelConfig {
        d_model: 10,
        n_heads: 4,
        ..ModelConfig::default()
    };
    assert!(TransformerModel::new(bad).is_err());
    let bad = ModelConfig {
        vocab_size: 5,
        ..ModelConfig::default()
    };
    assert!(bad.validate().is_err());
}

#[test]
fn init_is_seeded() {
    let a = tiny();
    let b = tiny();
    assert_eq!(a.weights_checksum(), b.weights_checksum());
    let c = TransformerModel::new(ModelConfig { seed: 9, ..a.config().clone() }).unwrap();
    assert_ne!(a.weights_checksum(), c.weights_checksum());
}

#[test]
fn attention_is_causal_and_normalised() {
    let mut m = tiny();
    let (_, trace) = m.forward_traced(&prompt()).unwrap();
    assert_eq!(trace.attention.len(), 2);
    for layer in &trace.attention {
        assert_eq!(layer.len(), 2);
        for p in layer {
            for i in 0..p.rows() {
                let row = p.row(i);
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(row[i + 1..].iter().all(|&v| v == 0.0));
            }
        }
    }
}

#[test]
fn prefix_logits_do_not_depend_on_later_tokens() {
    let mut m = tiny();
    let full = m.forward_logits(&vocab::encode("3+4=7").unwrap()).unwrap();
    let prefix = m.forward_logits(&vocab::encode("3+4").unwrap()).unwrap();
    for i in 0..prefix.rows() {
        for j in 0..prefix.cols() {
            assert!((full.get(i, j) - prefix.get(i, j)).abs() < 1e-12);
        }
    }
}

#[test]
fn patch_is_idempotent_and_counts() {
    let mut m = tiny();
    let cfg = Arc::new(VpsConfig::default());
    assert_eq!(m.patch(&["q_proj", "k_proj"], Arc::clone(&cfg)), 4);
    assert_eq!(m.patch(&["q_proj", "k_proj"], Arc::clone(&cfg)), 0);
    assert_eq!(m.patch(&["layers.1.up_proj", "nothing"], cfg), 1);
    let names: Vec<_> = m.vps_layers().map(|l| l.name().to_string()).collect();
    assert_eq!(
        names,
        ["layers.0.q_proj", "layers.0.k_proj", "layers.1.q_proj", "layers.1.k_proj", "layers.1.up_proj"]
    );
    assert!(m.is_patched());
}

#[test]
fn disabled_patch_reproduces_base_logits() {
    let mut base = tiny();
    let mut patched = base.clone();
    patched.patch(&PROJ_NAMES, Arc::new(VpsConfig::disabled()));
    patched.couple_qk();
    let a = base.forward_logits(&prompt()).unwrap();
    let b = patched.forward_logits(&prompt()).unwrap();
    assert_eq!(a, b);
    assert!(patched.vps_layers().all(|l| l.last_selectors().is_some()));
    assert_eq!(base.weights_checksum(), patched.weights_checksum());
}

#[test]
fn patched_forward_changes_logits_but_not_weights() {
    let mut m = tiny();
    let before = m.weights_checksum();
    let clean = m.forward_logits(&prompt()).unwrap();
    m.patch(&["v_proj", "o_proj"], Arc::new(VpsConfig::default()));
    let pert = m.forward_logits(&prompt()).unwrap();
    assert!(clean.max_abs_diff(&pert) > 0.0);
    assert_eq!(m.weights_checksum(), before);
}

#[test]
fn coupled_pairs_share_input_indices() {
    let mut m = tiny();
    let cfg = Arc::new(VpsConfig {
        builder: BuilderKind::Sk,
        topk_bounds: (4, 8),
        ..VpsConfig::default()
    });
    m.patch(&["q_proj", "k_proj"], cfg);
    assert_eq!(m.couple_qk(), 2);
    assert_eq!(m.vps_layer("layers.0.q_proj").unwrap().peer(), Some("layers.0.k_proj"));
    m.forward_logits(&prompt()).unwrap();
    for b in 0..2 {
        let q = m.vps_layer(&TransformerModel::layer_name(b, "q_proj")).unwrap();
        let k = m.vps_layer(&TransformerModel::layer_name(b, "k_proj")).unwrap();
        assert_eq!(q.last_selectors().unwrap().in_indices, k.last_selectors().unwrap().in_indices);
    }
}

#[test]
fn coupling_respects_config_flag() {
    let mut m = tiny();
    m.patch(&["q_proj", "k_proj"], Arc::new(VpsConfig { qk_coupling: false, ..VpsConfig::default() }));
    assert_eq!(m.couple_qk(), 0);
    assert!(m.vps_layers().all(|l| l.peer().is_none()));
}

#[test]
fn hooks_record_each_wrapped_layer_per_forward() {
    let mut m = tiny();
    m.patch(&["q_proj", "k_proj", "down_proj"], Arc::new(VpsConfig::default()));
    m.couple_qk();
    m.attach_hooks();
    m.forward_logits(&prompt()).unwrap();
    m.forward_logits(&prompt()).unwrap();
    let hooks = m.hooks().unwrap();
    assert_eq!(hooks.len(), 12);
    assert_eq!(hooks.step(1).count(), 6);
    let rec = &hooks.records()[0];
    assert_eq!(rec.layer, "layers.0.q_proj");
    assert_eq!(rec.input.shape(), (4, 16));
    let base = base_forward(&rec.input, m.blocks()[0].projs[0].base()).unwrap();
    assert_eq!(rec.output, base);
    m.hooks_mut().unwrap().clear();
    assert!(m.hooks().unwrap().is_empty());
}

#[test]
fn greedy_generation_is_deterministic_and_bounded() {
    let mut m = tiny();
    let mut rng = SeededRng::new(1);
    let a = m.generate(&prompt(), 5, DecodeMode::Greedy, &mut rng).unwrap();
    let b = m.generate(&prompt(), 5, DecodeMode::Greedy, &mut rng).unwrap();
    assert_eq!(a, b);
    assert!(a.len() <= 5 && !a.contains(&vocab::EOS));
    assert!(m.generate(&prompt(), 13, DecodeMode::Greedy, &mut rng).is_err());
    assert!(m.generate(&prompt(), 2, DecodeMode::Temperature(0.0), &mut rng).is_err());
}

#[test]
fn temperature_sampling_follows_rng() {
    let mut m = tiny();
    let run = |m: &mut TransformerModel, seed| {
        m.generate(&prompt(), 6, DecodeMode::Temperature(5.0), &mut SeededRng::new(seed)).unwrap()
    };
    assert_eq!(run(&mut m, 3), run(&mut m, 3));
    let distinct: std::collections::HashSet<_> = (0..10).map(|s| run(&mut m, s)).collect();
    assert!(distinct.len() > 1);
}

#[test]
fn sample_respects_cumulative_mass() {
    let mut rng = SeededRng::new(0);
    let mut counts = [0usize; 3];
    for _ in 0..3000 {
        counts[sample(&[0.2, 0.0, 0.8], &mut rng)] += 1;
    }
    assert_eq!(counts[1], 0);
    assert!((counts[0] as f64 / 3000.0 - 0.2).abs() < 0.03);
}

#[test]
fn state_broadcasts_reach_every_layer() {
    let mut m = tiny();
    m.patch(&["v_proj"], Arc::new(VpsConfig::default()));
    m.set_entropy(Some(1.5));
    m.record_improvement(true);
    m.set_grad_signal(GradSignal::present(Some(2.0)));
    for l in m.vps_layers() {
        assert_eq!(l.policy.last_entropy, Some(1.5));
        assert_eq!(l.policy.improvement_rate(), Some(1.0));
        assert!(l.grad.present);
    }
    m.reset_vps_state();
    for l in m.vps_layers() {
        assert_eq!(l.policy.last_entropy, None);
        assert_eq!(l.policy.improvement_rate(), None);
        assert!(!l.grad.present);
    }
}

#[test]
fn entropy_and_margin_are_sane() {
    let mut m = tiny();
    let h = m.next_token_entropy(&prompt()).unwrap();
    assert!(h > 0.0 && h <= (16f64).ln() + 1e-12);
    assert!(m.confidence_margin(&prompt()).unwrap() >= 0.0);
}
