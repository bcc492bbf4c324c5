use std::sync::Arc;

use vps::linalg::{entropy, softmax, SeededRng};
use vps::model::{vocab, DecodeMode, PROJ_NAMES};
use vps::{ModelConfig, TransformerModel, VpsConfig};

fn patched() -> TransformerModel {
    let mut m = TransformerModel::new(ModelConfig::default()).unwrap();
    assert_eq!(m.patch(&PROJ_NAMES, Arc::new(VpsConfig::default())), 14);
    m.couple_qk();
    m
}

#[test]
fn every_wrapped_layer_is_hooked_once_per_forward() {
    let mut m = patched();
    m.attach_hooks();
    let toks = vocab::encode("1+2").unwrap();
    m.forward_logits(&toks).unwrap();
    m.forward_logits(&toks).unwrap();
    let log = m.hooks().unwrap();
    assert_eq!(log.len(), 28);
    for step in 0..2 {
        let names: Vec<_> = log.step(step).map(|r| r.layer.clone()).collect();
        assert_eq!(names.len(), 14);
        for b in 0..2 {
            for p in PROJ_NAMES {
                assert!(names.contains(&TransformerModel::layer_name(b, p)));
            }
        }
        assert!(log.step(step).all(|r| r.input.rows() == 3));
    }
}

#[test]
fn query_hook_input_is_the_attention_norm_output() {
    let mut m = patched();
    m.attach_hooks();
    let toks = vocab::encode("12+7=").unwrap();
    let (_, trace) = m.forward_traced(&toks).unwrap();
    let log = m.hooks().unwrap();
    for b in 0..2 {
        let name = TransformerModel::layer_name(b, "q_proj");
        let rec = log.records().iter().find(|r| r.layer == name).unwrap();
        assert!(rec.input.max_abs_diff(&trace.attn_inputs[b]) <= 1e-12);
    }
}

#[test]
fn near_zero_temperature_matches_greedy() {
    let mut m = TransformerModel::new(ModelConfig::default()).unwrap();
    let mut rng = SeededRng::new(3);
    for p in ["1+1=", "9+9=", "4+0=", "3+8="] {
        let toks = vocab::encode(p).unwrap();
        let g = m.generate(&toks, 5, DecodeMode::Greedy, &mut rng).unwrap();
        let t = m.generate(&toks, 5, DecodeMode::Temperature(1e-4), &mut rng).unwrap();
        assert_eq!(g, t, "prompt {p}");
    }
}

#[test]
fn changing_a_token_leaves_earlier_positions_untouched() {
    // Selectors pool over every position, so only the unpatched model is
    // strictly causal.
    let mut base = TransformerModel::new(ModelConfig::default()).unwrap();
    let mut rng = SeededRng::new(8);
    for _ in 0..10 {
        let toks: Vec<usize> = (0..12).map(|_| rng.index(14)).collect();
        let t = 1 + rng.index(11);
        let mut alt = toks.clone();
        alt[t] = (alt[t] + 1) % 14;
        let a = base.forward_logits(&toks).unwrap();
        let b = base.forward_logits(&alt).unwrap();
        for i in 0..t {
            let gap = a.row(i).iter().zip(b.row(i)).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            assert!(gap <= 1e-12, "position {i} moved by {gap} after editing {t}");
        }
        assert!(a.row(t) != b.row(t));
    }
}

#[test]
fn entropy_broadcast_matches_the_next_token_distribution() {
    let mut m = patched();
    let toks = vocab::encode("5+6=").unwrap();
    let h = m.next_token_entropy(&toks).unwrap();
    let logits = m.forward_logits(&toks).unwrap();
    let oracle = entropy(&softmax(logits.row(logits.rows() - 1)));
    assert!((h - oracle).abs() <= 1e-12);
    m.set_entropy(Some(h));
    assert!(m.vps_layers().all(|l| (l.policy.last_entropy.unwrap() - h).abs() <= 1e-12));
}

#[test]
fn peers_are_symmetric() {
    let m = patched();
    let mut pairs = 0;
    for l in m.vps_layers() {
        if let Some(p) = l.peer() {
            pairs += 1;
            assert_eq!(m.vps_layer(p).unwrap().peer(), Some(l.name()));
        }
    }
    assert_eq!(pairs, 4);
}

#[test]
fn patching_the_same_model_twice_counts_once() {
    let mut m = patched();
    assert_eq!(m.patch(&PROJ_NAMES, Arc::new(VpsConfig::default())), 0);
    assert_eq!(m.vps_layers().count(), 14);
}
