//! End-to-end experiment: train the toy model, patch it, refine every task,
//! and write one row per (prompt, iteration) plus a summary row.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;
use serde_json::json;

use super::config::ExperimentConfig;
use super::refine::{refine, CompositeVerifier, PolicySummary, RefineOptions, Verifier};
use crate::error::{Result, VpsError};
use crate::linalg::SeededRng;
use crate::model::{addition_corpus, train_tiny, vocab, TransformerModel};
use crate::verify::{Objective, VerificationReport};

/// Mixes a seed and an index into an RNG stream id.
pub fn stream_id(seed: u64, index: u64) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    splitmix(seed ^ splitmix(index))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Task {
    pub prompt: String,
    pub truth: String,
}

/// Up to 100 distinct single-digit addition tasks, shuffled by `seed`.
pub fn task_pool(n: usize, seed: u64) -> Result<Vec<Task>> {
    let mut all = addition_corpus();
    if n > all.len() {
        return Err(VpsError::Argument(format!("at most {} distinct tasks exist, asked for {n}", all.len())));
    }
    let mut rng = SeededRng::with_stream(seed, stream_id(seed, u64::MAX));
    for i in (1..all.len()).rev() {
        all.swap(i, rng.index(i + 1));
    }
    Ok(all
        .into_iter()
        .take(n)
        .map(|e| Task {
            prompt: e.prompt,
            truth: e.answer,
        })
        .collect())
}

/// Keeps the `n` tasks with the smallest top-2 logit margin under `model`;
/// ties keep pool order.
pub fn filter_by_confidence(model: &mut TransformerModel, pool: Vec<Task>, n: usize) -> Result<Vec<Task>> {
    let mut scored = Vec::with_capacity(pool.len());
    for (i, t) in pool.into_iter().enumerate() {
        let margin = model.confidence_margin(&vocab::encode(&t.prompt)?)?;
        scored.push((margin, i, t));
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    scored.truncate(n);
    scored.sort_by_key(|s| s.1);
    Ok(scored.into_iter().map(|s| s.2).collect())
}

/// The task list an experiment runs: the first `num_prompts` of the pool,
/// or with the confidence filter the least confident `num_prompts` out of
/// `num_prompts / filter_fraction`.
pub fn select_tasks(base: &mut TransformerModel, cfg: &ExperimentConfig) -> Result<Vec<Task>> {
    if !cfg.confidence_filter {
        return task_pool(cfg.num_prompts, cfg.seed);
    }
    let pool_size = ((cfg.num_prompts as f64 / cfg.filter_fraction).ceil() as usize).min(100);
    let pool = task_pool(pool_size.max(cfg.num_prompts), cfg.seed)?;
    filter_by_confidence(base, pool, cfg.num_prompts)
}

/// Seeded init plus optional training. Returns the final training loss.
pub fn build_model(cfg: &ExperimentConfig) -> Result<(TransformerModel, Option<f64>)> {
    let mut model = TransformerModel::new(cfg.model.clone())?;
    let loss = if cfg.train_steps > 0 {
        let losses = train_tiny(&mut model, &addition_corpus(), cfg.train_steps, cfg.train_lr)?;
        losses.last().copied()
    } else {
        None
    };
    Ok((model, loss))
}

/// A patched (and, if configured, Q/K-coupled) copy of `base`.
pub fn patch_for(base: &TransformerModel, cfg: &ExperimentConfig) -> TransformerModel {
    let mut model = base.clone();
    let patterns: Vec<&str> = cfg.target_layers.iter().map(String::as_str).collect();
    model.patch(&patterns, Arc::new(cfg.vps.clone()));
    if cfg.vps.qk_coupling {
        model.couple_qk();
    }
    model
}

pub fn refine_options(cfg: &ExperimentConfig) -> RefineOptions {
    RefineOptions {
        max_new_tokens: cfg.max_new_tokens,
        decode: cfg.decode,
        sc_samples: cfg.sc_samples,
        sc_temperature: cfg.sc_temperature,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub prompt_id: usize,
    pub prompt: String,
    pub truth: String,
    pub iteration: usize,
    pub prediction: String,
    pub verification: VerificationReport,
    /// Total loss without the self-consistency term, comparable across
    /// iterations whether or not samples were drawn.
    pub comparable_loss: f64,
    pub improved: Option<bool>,
    pub entropy: Option<f64>,
    pub policy: PolicySummary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PromptResult {
    pub rows: Vec<Row>,
    pub baseline_loss: f64,
    pub final_loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub prompts: usize,
    pub mean_baseline_loss: f64,
    pub mean_final_loss: f64,
    /// Fraction of prompts whose final loss is below their baseline loss.
    pub improvement_rate: f64,
    pub mean_sigma: f64,
    pub mean_rank: f64,
    pub mean_gamma: f64,
}

fn comparable(r: &VerificationReport) -> f64 {
    let sc = r.loss(Objective::SelfConsistency).unwrap_or(0.0) * r.weights.self_consistency;
    r.total - sc
}

/// Refines every task on `model`. Each prompt draws from its own RNG stream.
pub fn run_tasks(model: &mut TransformerModel, tasks: &[Task], cfg: &ExperimentConfig, stream: u64) -> Result<Vec<PromptResult>> {
    let opts = refine_options(cfg);
    let mut out = Vec::with_capacity(tasks.len());
    for (pid, task) in tasks.iter().enumerate() {
        let mut rng = SeededRng::with_stream(cfg.seed, stream_id(stream, pid as u64));
        let mut verifier = CompositeVerifier::new(cfg.vps.weights);
        let outcome = refine(model, &task.prompt, Some(&task.truth), cfg.iterations, &opts, &mut verifier, &mut rng)
            .map_err(|f| f.error)?;
        let base_report = CompositeVerifier::new(cfg.vps.weights).verify(&outcome.baseline, &task.truth, None);
        let baseline_loss = comparable(&base_report);
        let mut rows = vec![Row {
            prompt_id: pid,
            prompt: task.prompt.clone(),
            truth: task.truth.clone(),
            iteration: 0,
            prediction: outcome.baseline.clone(),
            verification: base_report,
            comparable_loss: baseline_loss,
            improved: None,
            entropy: None,
            policy: PolicySummary::default(),
        }];
        for rec in outcome.trace {
            rows.push(Row {
                prompt_id: pid,
                prompt: task.prompt.clone(),
                truth: task.truth.clone(),
                iteration: rec.iteration,
                prediction: rec.prediction,
                comparable_loss: comparable(&rec.verification),
                verification: rec.verification,
                improved: Some(rec.improved),
                entropy: Some(rec.entropy),
                policy: rec.policy,
            });
        }
        let final_loss = rows.last().map_or(baseline_loss, |r| r.comparable_loss);
        out.push(PromptResult {
            rows,
            baseline_loss,
            final_loss,
        });
    }
    Ok(out)
}

pub fn summarize(results: &[PromptResult]) -> Summary {
    let n = results.len().max(1) as f64;
    let refined: Vec<&Row> = results.iter().flat_map(|p| &p.rows).filter(|r| r.iteration > 0).collect();
    let m = refined.len().max(1) as f64;
    Summary {
        prompts: results.len(),
        mean_baseline_loss: results.iter().map(|p| p.baseline_loss).sum::<f64>() / n,
        mean_final_loss: results.iter().map(|p| p.final_loss).sum::<f64>() / n,
        improvement_rate: results.iter().filter(|p| p.final_loss < p.baseline_loss).count() as f64 / n,
        mean_sigma: refined.iter().map(|r| r.policy.sigma).sum::<f64>() / m,
        mean_rank: refined.iter().map(|r| r.policy.rank).sum::<f64>() / m,
        mean_gamma: refined.iter().map(|r| r.policy.gamma).sum::<f64>() / m,
    }
}

pub const TSV_HEADER: &str = "kind\tprompt_id\tprompt\ttruth\titeration\tprediction\tloss\tnumeric\tunit\talgebraic\t\
self_consistency\timproved\tentropy\tsigma\trank\tgamma\ttopk\tbaseline_loss\timprovement_rate";

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('\t', "\\t").replace('\n', "\\n")
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(|| "-".to_string(), |v| v.to_string())
}

pub fn render_tsv(results: &[PromptResult], summary: &Summary) -> String {
    let mut s = String::new();
    s.push_str(TSV_HEADER);
    s.push('\n');
    for p in results {
        for r in &p.rows {
            let l = |o| opt(r.verification.loss(o));
            let _ = writeln!(
                s,
                "row\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t-",
                r.prompt_id,
                escape(&r.prompt),
                escape(&r.truth),
                r.iteration,
                escape(&r.prediction),
                r.comparable_loss,
                l(Objective::Numeric),
                l(Objective::Unit),
                l(Objective::Algebraic),
                l(Objective::SelfConsistency),
                opt(r.improved),
                opt(r.entropy),
                r.policy.sigma,
                r.policy.rank,
                r.policy.gamma,
                r.policy.topk,
                p.baseline_loss,
            );
        }
    }
    let _ = writeln!(
        s,
        "summary\t-\t-\t-\t-\t-\t{}\t-\t-\t-\t-\t-\t-\t{}\t{}\t{}\t-\t{}\t{}",
        summary.mean_final_loss,
        summary.mean_sigma,
        summary.mean_rank,
        summary.mean_gamma,
        summary.mean_baseline_loss,
        summary.improvement_rate,
    );
    s
}

pub fn render_jsonl(results: &[PromptResult], summary: &Summary) -> String {
    let mut s = String::new();
    for p in results {
        for r in &p.rows {
            let v = json!({"kind": "row", "baseline_loss": p.baseline_loss, "row": r});
            s.push_str(&v.to_string());
            s.push('\n');
        }
    }
    s.push_str(&json!({"kind": "summary", "summary": summary}).to_string());
    s.push('\n');
    s
}

/// The JSON-lines path written next to `tsv`.
pub fn jsonl_path(tsv: &Path) -> PathBuf {
    tsv.with_extension("jsonl")
}

pub(crate) fn write_pair(tsv_path: &Path, tsv: &str, jsonl: &str) -> Result<()> {
    if let Some(dir) = tsv_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(tsv_path, tsv)?;
    fs::write(jsonl_path(tsv_path), jsonl)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub tasks: Vec<Task>,
    pub results: Vec<PromptResult>,
    pub summary: Summary,
    pub train_loss: Option<f64>,
    pub output: PathBuf,
}

/// Runs the full experiment and writes `cfg.output` plus its JSON-lines twin.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let (mut base, train_loss) = build_model(cfg)?;
    let tasks = select_tasks(&mut base, cfg)?;
    let mut model = patch_for(&base, cfg);
    let results = run_tasks(&mut model, &tasks, cfg, 0)?;
    let summary = summarize(&results);
    write_pair(&cfg.output, &render_tsv(&results, &summary), &render_jsonl(&results, &summary))?;
    log::info!(
        "{} prompts: baseline loss {:.4}, final loss {:.4}, improvement rate {:.2}",
        summary.prompts,
        summary.mean_baseline_loss,
        summary.mean_final_loss,
        summary.improvement_rate
    );
    Ok(ExperimentReport {
        tasks,
        results,
        summary,
        train_loss,
        output: cfg.output.clone(),
    })
}
