//! Verification-driven iterative refinement over a patched model.

use std::time::{Duration, Instant};

use serde::Serialize;
use thiserror::Error;

use crate::error::VpsError;
use crate::linalg::SeededRng;
use crate::model::{vocab, DecodeMode, TransformerModel};
use crate::selector::GradSignal;
use crate::verify::{composite_loss, VerificationReport, Weights};

/// Anything that scores a prediction against a reference.
pub trait Verifier {
    fn verify(&mut self, pred: &str, truth: &str, samples: Option<&[String]>) -> VerificationReport;
}

/// The composite verifier, counting how often it runs.
#[derive(Debug, Clone)]
pub struct CompositeVerifier {
    pub weights: Weights,
    calls: usize,
}

impl CompositeVerifier {
    pub fn new(weights: Weights) -> Self {
        Self { weights, calls: 0 }
    }

    pub fn calls(&self) -> usize {
        self.calls
    }
}

impl Verifier for CompositeVerifier {
    fn verify(&mut self, pred: &str, truth: &str, samples: Option<&[String]>) -> VerificationReport {
        self.calls += 1;
        composite_loss(pred, truth, samples, &self.weights)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineOptions {
    pub max_new_tokens: usize,
    pub decode: DecodeMode,
    /// Temperature samples drawn per iteration for self-consistency.
    pub sc_samples: usize,
    pub sc_temperature: f64,
}

impl Default for RefineOptions {
    fn default() -> Self {
        Self {
            max_new_tokens: 3,
            decode: DecodeMode::Greedy,
            sc_samples: 0,
            sc_temperature: 0.7,
        }
    }
}

/// Means over the wrapped layers of the policy used in the last forward.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct PolicySummary {
    pub layers: usize,
    pub sigma: f64,
    pub rank: f64,
    pub gamma: f64,
    pub topk: f64,
}

impl PolicySummary {
    pub fn of(model: &TransformerModel) -> Self {
        let pols: Vec<_> = model.vps_layers().filter_map(|l| l.last_policy().copied()).collect();
        if pols.is_empty() {
            return Self::default();
        }
        let n = pols.len() as f64;
        let mean = |f: &dyn Fn(&crate::policy::LayerPolicy) -> f64| pols.iter().map(f).sum::<f64>() / n;
        Self {
            layers: pols.len(),
            sigma: mean(&|p| p.sigma),
            rank: mean(&|p| p.r as f64),
            gamma: mean(&|p| p.gamma),
            topk: mean(&|p| p.k as f64),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub prediction: String,
    pub verification: VerificationReport,
    /// Loss strictly below the previous iteration's (the first iteration
    /// compares against infinity).
    pub improved: bool,
    pub entropy: f64,
    pub policy: PolicySummary,
    #[serde(skip)]
    pub wall_time: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineOutcome {
    pub answer: String,
    pub baseline: String,
    pub trace: Vec<IterationRecord>,
}

#[derive(Debug, Error)]
#[error("refinement stopped after {} iteration(s): {error}", trace.len())]
pub struct RefineFailure {
    #[source]
    pub error: VpsError,
    pub baseline: Option<String>,
    pub trace: Vec<IterationRecord>,
}

impl From<VpsError> for RefineFailure {
    fn from(error: VpsError) -> Self {
        Self {
            error,
            baseline: None,
            trace: Vec::new(),
        }
    }
}

fn generate_text(
    model: &mut TransformerModel,
    prompt: &[usize],
    opts: &RefineOptions,
    mode: DecodeMode,
    rng: &mut SeededRng,
) -> crate::Result<String> {
    Ok(vocab::decode(&model.generate(prompt, opts.max_new_tokens, mode, rng)?))
}

/// Baseline generation, then `iterations - 1` verified passes. Without a
/// reference or with fewer than two iterations only the baseline runs and
/// the verifier is never called. VPS state is reset first.
pub fn refine<V: Verifier>(
    model: &mut TransformerModel,
    prompt: &str,
    truth: Option<&str>,
    iterations: usize,
    opts: &RefineOptions,
    verifier: &mut V,
    rng: &mut SeededRng,
) -> Result<RefineOutcome, RefineFailure> {
    if iterations == 0 {
        return Err(VpsError::Argument("iterations must be >= 1".into()).into());
    }
    let tokens = vocab::encode(prompt)?;
    model.reset_vps_state();
    let baseline = generate_text(model, &tokens, opts, opts.decode, rng)?;
    let Some(truth) = truth.filter(|_| iterations >= 2) else {
        return Ok(RefineOutcome {
            answer: baseline.clone(),
            baseline,
            trace: Vec::new(),
        });
    };

    let mut trace: Vec<IterationRecord> = Vec::with_capacity(iterations - 1);
    let mut prev = f64::INFINITY;
    for t in 1..iterations {
        let clock = Instant::now();
        let step = (|| -> crate::Result<(f64, String, Option<Vec<String>>)> {
            if let Some(h) = model.hooks_mut() {
                h.clear();
            }
            let entropy = model.next_token_entropy(&tokens)?;
            model.set_entropy(Some(entropy));
            let pred = generate_text(model, &tokens, opts, opts.decode, rng)?;
            let samples = if opts.sc_samples > 0 {
                let mode = DecodeMode::Temperature(opts.sc_temperature);
                let s = (0..opts.sc_samples)
                    .map(|_| generate_text(model, &tokens, opts, mode, rng))
                    .collect::<crate::Result<Vec<_>>>()?;
                Some(s)
            } else {
                None
            };
            Ok((entropy, pred, samples))
        })();
        let (entropy, prediction, samples) = match step {
            Ok(v) => v,
            Err(error) => {
                return Err(RefineFailure {
                    error,
                    baseline: Some(baseline),
                    trace,
                })
            }
        };
        let policy = PolicySummary::of(model);
        let verification = verifier.verify(&prediction, truth, samples.as_deref());
        let improved = verification.total < prev;
        prev = verification.total;
        model.record_improvement(improved);
        model.set_grad_signal(GradSignal::present(Some(verification.total)));
        trace.push(IterationRecord {
            iteration: t,
            prediction,
            verification,
            improved,
            entropy,
            policy,
            wall_time: clock.elapsed(),
        });
    }
    let answer = trace.last().map(|r| r.prediction.clone()).unwrap_or_else(|| baseline.clone());
    Ok(RefineOutcome {
        answer,
        baseline,
        trace,
    })
}
