//! One prompt through the refinement loop, printing the trace.

use vps::harness::experiment::{build_model, patch_for};
use vps::harness::{refine, CompositeVerifier, ExperimentConfig, RefineOptions};
use vps::linalg::SeededRng;

fn main() -> vps::Result<()> {
    let cfg = ExperimentConfig {
        train_steps: 150,
        ..ExperimentConfig::default()
    };
    let (base, loss) = build_model(&cfg)?;
    println!("trained to loss {:.4}", loss.unwrap());
    let mut model = patch_for(&base, &cfg);
    let mut verifier = CompositeVerifier::new(cfg.vps.weights);
    let mut rng = SeededRng::new(cfg.seed);
    let opts = RefineOptions::default();

    for (prompt, truth) in [("6+7=", "13"), ("2+2=", "4")] {
        let out = refine(&mut model, prompt, Some(truth), 4, &opts, &mut verifier, &mut rng)
            .map_err(|f| f.error)?;
        println!("{prompt} baseline {:?}", out.baseline);
        for r in &out.trace {
            println!(
                "  t={} pred {:?} loss {} improved {} entropy {:.3} sigma {:.3}",
                r.iteration, r.prediction, r.verification.total, r.improved, r.entropy, r.policy.sigma
            );
        }
        println!("  answer {:?}", out.answer);
    }
    let none = refine(&mut model, "1+1=", None, 4, &opts, &mut verifier, &mut rng).map_err(|f| f.error)?;
    println!("no reference: answer {:?}, {} iterations", none.answer, none.trace.len());
    println!("verifier calls: {}", verifier.calls());
    Ok(())
}
