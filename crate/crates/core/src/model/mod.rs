//! A small seeded decoder-only transformer.
//!
//! Pre-norm blocks with causal multi-head attention (`q_proj`, `k_proj`,
//! `v_proj`, `o_proj`) and a gated MLP (`up_proj`, `gate_proj`,
//! `down_proj`, combined as `up ⊙ silu(gate)`). Positions are fixed
//! sinusoids. Every projection can be swapped for a [`VpsLayer`] in place.

mod train;
pub mod vocab;

use std::sync::Arc;

use serde::Serialize;

use crate::config::VpsConfig;
use crate::error::{Result, VpsError};
use crate::layer::{base_forward, LinearLayer, VpsLayer};
use crate::linalg::{entropy, softmax, top_k_indices, Matrix, SeededRng};
use crate::selector::{input_scores, GradSignal};

pub use train::{addition_corpus, corpus_loss, train_tiny, Example};

/// Projection names in block order, matching common checkpoint layouts.
pub const PROJ_NAMES: [&str; 7] = ["q_proj", "k_proj", "v_proj", "o_proj", "up_proj", "down_proj", "gate_proj"];

const Q: usize = 0;
const K: usize = 1;
const V: usize = 2;
const O: usize = 3;
const UP: usize = 4;
const DOWN: usize = 5;
const GATE: usize = 6;

pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub max_seq: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 64,
            d_model: 64,
            n_heads: 4,
            n_layers: 2,
            d_ff: 128,
            max_seq: 64,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(VpsError::Argument(m));
        if self.vocab_size < vocab::USED_IDS {
            return bad(format!("vocab_size must be >= {}", vocab::USED_IDS));
        }
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return bad(format!("d_model {} not divisible by n_heads {}", self.d_model, self.n_heads));
        }
        if self.n_layers == 0 || self.d_ff == 0 || self.max_seq == 0 {
            return bad("n_layers, d_ff and max_seq must be positive".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gain: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerNorm {
    fn new(d: usize) -> Self {
        Self {
            gain: vec![1.0; d],
            bias: vec![0.0; d],
        }
    }

    pub fn forward(&self, x: &Matrix) -> Matrix {
        let d = x.cols();
        let mut out = Matrix::zeros(x.rows(), d);
        for i in 0..x.rows() {
            let row = x.row(i);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let rstd = 1.0 / (var + LN_EPS).sqrt();
            for (j, o) in out.row_mut(i).iter_mut().enumerate() {
                *o = (row[j] - mean) * rstd * self.gain[j] + self.bias[j];
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub enum Proj {
    Plain(LinearLayer),
    Vps(VpsLayer),
}

impl Proj {
    pub fn base(&self) -> &LinearLayer {
        match self {
            Proj::Plain(l) => l,
            Proj::Vps(v) => v.base(),
        }
    }

    pub fn as_vps(&self) -> Option<&VpsLayer> {
        match self {
            Proj::Vps(v) => Some(v),
            Proj::Plain(_) => None,
        }
    }

    pub fn as_vps_mut(&mut self) -> Option<&mut VpsLayer> {
        match self {
            Proj::Vps(v) => Some(v),
            Proj::Plain(_) => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Block {
    pub ln1: LayerNorm,
    pub ln2: LayerNorm,
    pub projs: Vec<Proj>,
}

impl Block {
    pub fn proj(&self, name: &str) -> Option<&Proj> {
        PROJ_NAMES.iter().position(|&n| n == name).map(|i| &self.projs[i])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HookRecord {
    pub layer: String,
    pub input: Matrix,
    /// Base (unperturbed) output of the layer.
    pub output: Matrix,
    pub step: usize,
}

/// Append-only record of VPS layer activations, one entry per wrapped layer
/// per forward pass.
#[derive(Debug, Clone, Default)]
pub struct HookLog {
    records: Vec<HookRecord>,
    step: usize,
}

impl HookLog {
    pub fn records(&self) -> &[HookRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn clear(&mut self) {
        self.records.clear();
    }

    /// Records from forward pass `step`.
    pub fn step(&self, step: usize) -> impl Iterator<Item = &HookRecord> {
        self.records.iter().filter(move |r| r.step == step)
    }
}

/// Per-forward internals exposed for tests and diagnostics.
#[derive(Debug, Clone, Default)]
pub struct ForwardTrace {
    /// `[layer][head]`, each `T × T`.
    pub attention: Vec<Vec<Matrix>>,
    /// Input to the attention projections of each layer.
    pub attn_inputs: Vec<Matrix>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DecodeMode {
    Greedy,
    Temperature(f64),
}

#[derive(Debug, Clone)]
pub struct TransformerModel {
    cfg: ModelConfig,
    pub(crate) embed: Matrix,
    pub(crate) blocks: Vec<Block>,
    pub(crate) ln_f: LayerNorm,
    pub(crate) head: LinearLayer,
    hooks: Option<HookLog>,
}

pub fn positional_encoding(t: usize, d: usize) -> Matrix {
    Matrix::from_fn(t, d, |pos, j| {
        let i = (j / 2) as f64;
        let angle = pos as f64 / 10000f64.powf(2.0 * i / d as f64);
        if j % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

fn silu(g: f64) -> f64 {
    g / (1.0 + (-g).exp())
}

fn causal_attention(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    n_heads: usize,
    mut trace: Option<&mut Vec<Matrix>>,
) -> Matrix {
    let (t, d) = q.shape();
    let dk = d / n_heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let mut ctx = Matrix::zeros(t, d);
    for h in 0..n_heads {
        let off = h * dk;
        let mut probs = Matrix::zeros(t, t);
        for i in 0..t {
            let qi = &q.row(i)[off..off + dk];
            let scores: Vec<f64> = (0..=i)
                .map(|j| qi.iter().zip(&k.row(j)[off..off + dk]).map(|(a, b)| a * b).sum::<f64>() * scale)
                .collect();
            let p = softmax(&scores);
            let out = &mut ctx.row_mut(i)[off..off + dk];
            for (j, pj) in p.iter().enumerate() {
                probs.set(i, j, *pj);
                for (o, vj) in out.iter_mut().zip(&v.row(j)[off..off + dk]) {
                    *o += pj * vj;
                }
            }
        }
        if let Some(tr) = trace.as_deref_mut() {
            tr.push(probs);
        }
    }
    ctx
}

impl TransformerModel {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = SeededRng::new(cfg.seed);
        let d = cfg.d_model;
        let scale = 1.0 / (d as f64).sqrt();
        let embed = Matrix::random_normal(cfg.vocab_size, d, scale, &mut rng);
        let mut blocks = Vec::with_capacity(cfg.n_layers);
        for _ in 0..cfg.n_layers {
            let projs = PROJ_NAMES
                .iter()
                .map(|&name| {
                    let (rows, cols) = match name {
                        "up_proj" | "gate_proj" => (cfg.d_ff, d),
                        "down_proj" => (d, cfg.d_ff),
                        _ => (d, d),
                    };
                    LinearLayer::new(Matrix::random_normal(rows, cols, scale, &mut rng), None).map(Proj::Plain)
                })
                .collect::<Result<Vec<_>>>()?;
            blocks.push(Block {
                ln1: LayerNorm::new(d),
                ln2: LayerNorm::new(d),
                projs,
            });
        }
        let head = LinearLayer::new(Matrix::random_normal(cfg.vocab_size, d, scale, &mut rng), None)?;
        Ok(Self {
            cfg,
            embed,
            blocks,
            ln_f: LayerNorm::new(d),
            head,
            hooks: None,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn layer_name(block: usize, proj: &str) -> String {
        format!("layers.{block}.{proj}")
    }

    /// FNV-1a over the bit patterns of every weight.
    pub fn weights_checksum(&self) -> u64 {
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |vals: &[f64]| {
            for v in vals {
                for b in v.to_bits().to_le_bytes() {
                    hash ^= u64::from(b);
                    hash = hash.wrapping_mul(0x0100_0000_01b3);
                }
            }
        };
        feed(self.embed.data());
        for b in &self.blocks {
            feed(&b.ln1.gain);
            feed(&b.ln1.bias);
            feed(&b.ln2.gain);
            feed(&b.ln2.bias);
            for p in &b.projs {
                feed(p.base().weight().data());
            }
        }
        feed(&self.ln_f.gain);
        feed(&self.ln_f.bias);
        feed(self.head.weight().data());
        hash
    }

    pub fn is_patched(&self) -> bool {
        self.blocks.iter().flat_map(|b| &b.projs).any(|p| matches!(p, Proj::Vps(_)))
    }

    fn check_tokens(&self, tokens: &[usize]) -> Result<()> {
        if tokens.is_empty() || tokens.len() > self.cfg.max_seq {
            return Err(VpsError::Argument(format!(
                "sequence length {} outside [1, {}]",
                tokens.len(),
                self.cfg.max_seq
            )));
        }
        if let Some(&t) = tokens.iter().find(|&&t| t >= self.cfg.vocab_size) {
            return Err(VpsError::Argument(format!("token id {t} >= vocab size {}", self.cfg.vocab_size)));
        }
        Ok(())
    }

    pub(crate) fn embed_tokens(&self, tokens: &[usize]) -> Matrix {
        let pe = positional_encoding(tokens.len(), self.cfg.d_model);
        Matrix::from_fn(tokens.len(), self.cfg.d_model, |i, j| self.embed.get(tokens[i], j) + pe.get(i, j))
    }

    /// Logits, `seq_len × vocab`.
    pub fn forward_logits(&mut self, tokens: &[usize]) -> Result<Matrix> {
        self.forward_inner(tokens, None)
    }

    pub fn forward_traced(&mut self, tokens: &[usize]) -> Result<(Matrix, ForwardTrace)> {
        let mut trace = ForwardTrace::default();
        let logits = self.forward_inner(tokens, Some(&mut trace))?;
        Ok((logits, trace))
    }

    fn forward_inner(&mut self, tokens: &[usize], mut trace: Option<&mut ForwardTrace>) -> Result<Matrix> {
        self.check_tokens(tokens)?;
        let mut x = self.embed_tokens(tokens);
        let n_heads = self.cfg.n_heads;
        let step = self.hooks.as_ref().map_or(0, |h| h.step);
        for block in self.blocks.iter_mut() {
            let a = block.ln1.forward(&x);
            let (q, k) = qk_forward(block, &a, self.hooks.as_mut(), step)?;
            let v = proj_forward(&mut block.projs[V], &a, self.hooks.as_mut(), step)?;
            let heads = trace.as_deref_mut().map(|t| {
                t.attn_inputs.push(a.clone());
                t.attention.push(Vec::new());
                t.attention.last_mut().unwrap()
            });
            let ctx = causal_attention(&q, &k, &v, n_heads, heads);
            let o = proj_forward(&mut block.projs[O], &ctx, self.hooks.as_mut(), step)?;
            x = x.add(&o)?;

            let m = block.ln2.forward(&x);
            let up = proj_forward(&mut block.projs[UP], &m, self.hooks.as_mut(), step)?;
            let gate = proj_forward(&mut block.projs[GATE], &m, self.hooks.as_mut(), step)?;
            let act = Matrix::from_fn(up.rows(), up.cols(), |i, j| up.get(i, j) * silu(gate.get(i, j)));
            let down = proj_forward(&mut block.projs[DOWN], &act, self.hooks.as_mut(), step)?;
            x = x.add(&down)?;
        }
        if let Some(h) = self.hooks.as_mut() {
            h.step += 1;
        }
        let z = self.ln_f.forward(&x);
        base_forward(&z, &self.head)
    }

    /// Entropy of the next-token distribution after `tokens`.
    pub fn next_token_entropy(&mut self, tokens: &[usize]) -> Result<f64> {
        let logits = self.forward_logits(tokens)?;
        Ok(entropy(&softmax(logits.row(logits.rows() - 1))))
    }

    /// Gap between the two largest final-position logits.
    pub fn confidence_margin(&mut self, tokens: &[usize]) -> Result<f64> {
        let logits = self.forward_logits(tokens)?;
        let last = logits.row(logits.rows() - 1);
        let top = top_k_indices(last, 2)?;
        Ok(last[top[0]] - last[top[1]])
    }

    /// Generates up to `max_new` tokens, stopping after the terminator
    /// (which is not returned).
    pub fn generate(
        &mut self,
        prompt: &[usize],
        max_new: usize,
        mode: DecodeMode,
        rng: &mut SeededRng,
    ) -> Result<Vec<usize>> {
        if prompt.is_empty() || prompt.len() + max_new > self.cfg.max_seq {
            return Err(VpsError::Argument(format!(
                "prompt of {} tokens plus {max_new} new exceeds max_seq {}",
                prompt.len(),
                self.cfg.max_seq
            )));
        }
        if let DecodeMode::Temperature(t) = mode {
            if !(t > 0.0) {
                return Err(VpsError::Argument(format!("temperature must be positive, got {t}")));
            }
        }
        let mut seq = prompt.to_vec();
        let mut out = Vec::new();
        for _ in 0..max_new {
            let logits = self.forward_logits(&seq)?;
            let last = logits.row(logits.rows() - 1);
            let next = match mode {
                DecodeMode::Greedy => top_k_indices(last, 1)?[0],
                DecodeMode::Temperature(t) => {
                    let scaled: Vec<f64> = last.iter().map(|v| v / t).collect();
                    sample(&softmax(&scaled), rng)
                }
            };
            if next == vocab::EOS {
                break;
            }
            out.push(next);
            seq.push(next);
        }
        Ok(out)
    }

    /// Wraps every plain projection whose full name ends with one of
    /// `patterns`. Returns how many layers were wrapped.
    pub fn patch(&mut self, patterns: &[&str], cfg: Arc<VpsConfig>) -> usize {
        let mut patched = 0;
        let mut hits = vec![0usize; patterns.len()];
        for (bi, block) in self.blocks.iter_mut().enumerate() {
            for (pi, proj) in block.projs.iter_mut().enumerate() {
                let name = Self::layer_name(bi, PROJ_NAMES[pi]);
                let Some(pat) = patterns.iter().position(|p| name.ends_with(p)) else {
                    continue;
                };
                hits[pat] += 1;
                if let Proj::Plain(base) = proj {
                    *proj = Proj::Vps(VpsLayer::new(name, base.clone(), Arc::clone(&cfg)));
                    patched += 1;
                }
            }
        }
        for (p, n) in patterns.iter().zip(hits) {
            if n == 0 {
                log::warn!("patch pattern '{p}' matched no layer");
            }
        }
        patched
    }

    /// Peers `q_proj` with `k_proj` in every block where both are wrapped
    /// and coupling is enabled. Returns the number of pairs.
    pub fn couple_qk(&mut self) -> usize {
        let mut pairs = 0;
        for (bi, block) in self.blocks.iter_mut().enumerate() {
            let (qs, ks) = block.projs.split_at_mut(K);
            let (Proj::Vps(q), Proj::Vps(k)) = (&mut qs[Q], &mut ks[0]) else {
                continue;
            };
            if !(q.config().qk_coupling && k.config().qk_coupling) {
                continue;
            }
            q.peer = Some(Self::layer_name(bi, PROJ_NAMES[K]));
            k.peer = Some(Self::layer_name(bi, PROJ_NAMES[Q]));
            pairs += 1;
        }
        pairs
    }

    pub fn vps_layer(&self, name: &str) -> Option<&VpsLayer> {
        self.vps_layers().find(|l| l.name() == name)
    }

    pub fn vps_layers(&self) -> impl Iterator<Item = &VpsLayer> {
        self.blocks.iter().flat_map(|b| &b.projs).filter_map(Proj::as_vps)
    }

    pub fn vps_layers_mut(&mut self) -> impl Iterator<Item = &mut VpsLayer> {
        self.blocks.iter_mut().flat_map(|b| &mut b.projs).filter_map(Proj::as_vps_mut)
    }

    pub fn attach_hooks(&mut self) -> &mut HookLog {
        self.hooks.get_or_insert_with(HookLog::default)
    }

    pub fn hooks(&self) -> Option<&HookLog> {
        self.hooks.as_ref()
    }

    pub fn hooks_mut(&mut self) -> Option<&mut HookLog> {
        self.hooks.as_mut()
    }

    pub fn set_entropy(&mut self, ent: Option<f64>) {
        self.vps_layers_mut().for_each(|l| l.policy.last_entropy = ent);
    }

    pub fn record_improvement(&mut self, improved: bool) {
        self.vps_layers_mut().for_each(|l| l.policy.update_history(improved));
    }

    pub fn set_grad_signal(&mut self, grad: GradSignal) {
        self.vps_layers_mut().for_each(|l| l.grad = grad);
    }

    pub fn reset_vps_state(&mut self) {
        self.vps_layers_mut().for_each(VpsLayer::reset);
    }
}

fn record(hooks: Option<&mut HookLog>, layer: &str, input: &Matrix, output: &Matrix, step: usize) {
    if let Some(h) = hooks {
        h.records.push(HookRecord {
            layer: layer.to_string(),
            input: input.clone(),
            output: output.clone(),
            step,
        });
    }
}

fn proj_forward(
    proj: &mut Proj,
    x: &Matrix,
    hooks: Option<&mut HookLog>,
    step: usize,
) -> Result<Matrix> {
    match proj {
        Proj::Plain(l) => base_forward(x, l),
        Proj::Vps(l) => {
            let (h, pol) = l.decide(x)?;
            record(hooks, l.name(), x, &h, step);
            l.complete(x, h, pol, None)
        }
    }
}

/// Query and key projections. A coupled pair shares one input selection:
/// top-k of the summed input scores at the smaller of the two `k`. Each
/// layer keeps its own output selection.
fn qk_forward(
    block: &mut Block,
    a: &Matrix,
    mut hooks: Option<&mut HookLog>,
    step: usize,
) -> Result<(Matrix, Matrix)> {
    let (qs, ks) = block.projs.split_at_mut(K);
    match (&mut qs[Q], &mut ks[0]) {
        (Proj::Vps(q), Proj::Vps(k)) if q.peer().is_some() && k.peer().is_some() => {
            let (hq, pq) = q.decide(a)?;
            let (hk, pk) = k.decide(a)?;
            record(hooks.as_deref_mut(), q.name(), a, &hq, step);
            record(hooks.as_deref_mut(), k.name(), a, &hk, step);
            let shared_k = pq.k.min(pk.k);
            let mut scores = input_scores(a);
            for (s, t) in scores.iter_mut().zip(input_scores(a)) {
                *s += t;
            }
            let shared = top_k_indices(&scores, shared_k)?;
            let mut pq = pq;
            let mut pk = pk;
            pq.k = shared_k;
            pk.k = shared_k;
            pq.r = pq.r.min(shared_k);
            pk.r = pk.r.min(shared_k);
            let yq = q.complete(a, hq, pq, Some(&shared))?;
            let yk = k.complete(a, hk, pk, Some(&shared))?;
            Ok((yq, yk))
        }
        (q, k) => {
            let yq = proj_forward(q, a, hooks.as_deref_mut(), step)?;
            let yk = proj_forward(k, a, hooks, step)?;
            Ok((yq, yk))
        }
    }
}

fn sample(p: &[f64], rng: &mut SeededRng) -> usize {
    let u = rng.uniform();
    let mut acc = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    // Rounding left u above the total mass; take the last non-zero entry.
    p.iter().rposition(|&v| v > 0.0).unwrap_or(p.len() - 1)
}

#[cfg(test)]
mod tests;
