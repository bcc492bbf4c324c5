//! Train the toy transformer on single-digit addition, generate answers,
//! then patch it with VPS layers and watch the hooks fire.
//!
//! cargo run --example toy_model -- [steps] [lr]

use std::sync::Arc;

use vps::linalg::SeededRng;
use vps::model::{addition_corpus, train_tiny, vocab, DecodeMode, PROJ_NAMES};
use vps::{ModelConfig, TransformerModel, VpsConfig};

fn main() -> vps::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(300);
    let lr: f64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0.5);

    let mut model = TransformerModel::new(ModelConfig::default())?;
    let corpus = addition_corpus();
    let losses = train_tiny(&mut model, &corpus, steps, lr)?;
    for (i, l) in losses.iter().enumerate().step_by((steps / 10).max(1)) {
        println!("step {i:>4}  loss {l:.4}");
    }
    println!("final loss {:.4}", losses.last().unwrap());

    let mut rng = SeededRng::new(0);
    let mut correct = 0;
    for ex in &corpus {
        let out = model.generate(&vocab::encode(&ex.prompt)?, 3, DecodeMode::Greedy, &mut rng)?;
        correct += usize::from(vocab::decode(&out) == ex.answer);
    }
    println!("greedy exact match {correct}/{}", corpus.len());

    let checksum = model.weights_checksum();
    let patched = model.patch(&PROJ_NAMES, Arc::new(VpsConfig::default()));
    let pairs = model.couple_qk();
    model.attach_hooks();
    let prompt = vocab::encode("3+4=")?;
    let out = model.generate(&prompt, 3, DecodeMode::Greedy, &mut rng)?;
    println!(
        "patched {patched} layers, coupled {pairs} q/k pairs; 3+4= -> {:?}",
        vocab::decode(&out)
    );
    let hooks = model.hooks().unwrap();
    println!("hook records: {} over {} forwards", hooks.len(), out.len() + 1);
    for l in model.vps_layers().take(3) {
        let p = l.last_policy().unwrap();
        println!("  {:<18} sigma {:.3} r {} k {} gamma {:.3}", l.name(), p.sigma, p.r, p.k, p.gamma);
    }
    assert_eq!(model.weights_checksum(), checksum, "generation must not touch weights");
    Ok(())
}
