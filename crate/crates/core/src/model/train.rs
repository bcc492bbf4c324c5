//! Full-batch SGD with hand-written backpropagation for the unpatched model.

use super::{positional_encoding, silu, vocab, LayerNorm, Proj, TransformerModel, DOWN, GATE, K, LN_EPS, O, Q, UP, V};
use crate::error::{Result, VpsError};
use crate::linalg::{softmax, Matrix};

/// One prompt/answer pair; the answer excludes the terminator.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub prompt: String,
    pub answer: String,
}

impl Example {
    /// Prompt + answer + terminator, and the index of the first target.
    fn tokens(&self) -> Result<(Vec<usize>, usize)> {
        let mut toks = vocab::encode(&self.prompt)?;
        let start = toks.len();
        toks.extend(vocab::encode(&self.answer)?);
        toks.push(vocab::EOS);
        Ok((toks, start))
    }
}

/// Every `a+b=` with single-digit operands.
pub fn addition_corpus() -> Vec<Example> {
    (0..10)
        .flat_map(|a| {
            (0..10).map(move |b| Example {
                prompt: format!("{a}+{b}="),
                answer: (a + b).to_string(),
            })
        })
        .collect()
}

struct LnCache {
    xhat: Matrix,
    rstd: Vec<f64>,
}

fn ln_forward(ln: &LayerNorm, x: &Matrix) -> (Matrix, LnCache) {
    let (t, d) = x.shape();
    let mut xhat = Matrix::zeros(t, d);
    let mut rstd = Vec::with_capacity(t);
    for i in 0..t {
        let row = x.row(i);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
        let r = 1.0 / (var + LN_EPS).sqrt();
        for (o, v) in xhat.row_mut(i).iter_mut().zip(row) {
            *o = (v - mean) * r;
        }
        rstd.push(r);
    }
    let y = Matrix::from_fn(t, d, |i, j| xhat.get(i, j) * ln.gain[j] + ln.bias[j]);
    (y, LnCache { xhat, rstd })
}

fn ln_backward(ln: &LayerNorm, c: &LnCache, dy: &Matrix, g: &mut LnGrad) -> Matrix {
    let (t, d) = dy.shape();
    let mut dx = Matrix::zeros(t, d);
    for i in 0..t {
        let xh = c.xhat.row(i);
        let dyr = dy.row(i);
        let dxhat: Vec<f64> = (0..d).map(|j| dyr[j] * ln.gain[j]).collect();
        for j in 0..d {
            g.gain[j] += dyr[j] * xh[j];
            g.bias[j] += dyr[j];
        }
        let m1 = dxhat.iter().sum::<f64>() / d as f64;
        let m2 = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
        for (j, o) in dx.row_mut(i).iter_mut().enumerate() {
            *o = c.rstd[i] * (dxhat[j] - m1 - xh[j] * m2);
        }
    }
    dx
}

#[derive(Clone)]
struct LnGrad {
    gain: Vec<f64>,
    bias: Vec<f64>,
}

impl LnGrad {
    fn zeros(d: usize) -> Self {
        Self {
            gain: vec![0.0; d],
            bias: vec![0.0; d],
        }
    }
}

struct BlockGrad {
    ln1: LnGrad,
    ln2: LnGrad,
    projs: Vec<Matrix>,
}

struct Grads {
    embed: Matrix,
    blocks: Vec<BlockGrad>,
    ln_f: LnGrad,
    head: Matrix,
}

impl Grads {
    fn zeros(m: &TransformerModel) -> Self {
        let d = m.cfg.d_model;
        Self {
            embed: Matrix::zeros(m.embed.rows(), d),
            blocks: m
                .blocks
                .iter()
                .map(|b| BlockGrad {
                    ln1: LnGrad::zeros(d),
                    ln2: LnGrad::zeros(d),
                    projs: b.projs.iter().map(|p| {
                        let w = p.base().weight();
                        Matrix::zeros(w.rows(), w.cols())
                    }).collect(),
                })
                .collect(),
            ln_f: LnGrad::zeros(d),
            head: Matrix::zeros(m.head.weight().rows(), d),
        }
    }
}

struct BlockCache {
    ln1: LnCache,
    a: Matrix,
    q: Matrix,
    k: Matrix,
    v: Matrix,
    probs: Vec<Matrix>,
    ctx: Matrix,
    ln2: LnCache,
    m: Matrix,
    up: Matrix,
    gate: Matrix,
    act: Matrix,
}

fn add_into(acc: &mut Matrix, g: &Matrix) {
    for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
        *a += b;
    }
}

fn sigmoid(g: f64) -> f64 {
    1.0 / (1.0 + (-g).exp())
}

/// Loss and gradient contribution of one sequence. Targets are the
/// positions from `start` on; `norm` divides the loss.
fn example_grad(m: &TransformerModel, toks: &[usize], start: usize, norm: f64, g: &mut Grads) -> Result<f64> {
    let t = toks.len();
    let d = m.cfg.d_model;
    let n_heads = m.cfg.n_heads;
    let dk = m.cfg.head_dim();
    let scale = 1.0 / (dk as f64).sqrt();
    let w = |b: usize, p: usize| m.blocks[b].projs[p].base().weight();

    let pe = positional_encoding(t, d);
    let mut x = Matrix::from_fn(t, d, |i, j| m.embed.get(toks[i], j) + pe.get(i, j));
    let mut caches = Vec::with_capacity(m.blocks.len());
    for (bi, block) in m.blocks.iter().enumerate() {
        let (a, ln1) = ln_forward(&block.ln1, &x);
        let q = a.matmul_t(w(bi, Q))?;
        let k = a.matmul_t(w(bi, K))?;
        let v = a.matmul_t(w(bi, V))?;
        let mut ctx = Matrix::zeros(t, d);
        let mut probs = Vec::with_capacity(n_heads);
        for h in 0..n_heads {
            let off = h * dk;
            let mut p = Matrix::zeros(t, t);
            for i in 0..t {
                let s: Vec<f64> = (0..=i)
                    .map(|j| (0..dk).map(|c| q.get(i, off + c) * k.get(j, off + c)).sum::<f64>() * scale)
                    .collect();
                for (j, pj) in softmax(&s).into_iter().enumerate() {
                    p.set(i, j, pj);
                    for c in 0..dk {
                        let cur = ctx.get(i, off + c);
                        ctx.set(i, off + c, cur + pj * v.get(j, off + c));
                    }
                }
            }
            probs.push(p);
        }
        let x1 = x.add(&ctx.matmul_t(w(bi, O))?)?;
        let (mm, ln2) = ln_forward(&block.ln2, &x1);
        let up = mm.matmul_t(w(bi, UP))?;
        let gate = mm.matmul_t(w(bi, GATE))?;
        let act = Matrix::from_fn(t, up.cols(), |i, j| up.get(i, j) * silu(gate.get(i, j)));
        let x2 = x1.add(&act.matmul_t(w(bi, DOWN))?)?;
        caches.push(BlockCache {
            ln1,
            a,
            q,
            k,
            v,
            probs,
            ctx,
            ln2,
            m: mm,
            up,
            gate,
            act,
        });
        x = x2;
    }
    let (z, lnf) = ln_forward(&m.ln_f, &x);
    let logits = z.matmul_t(m.head.weight())?;

    let mut loss = 0.0;
    let mut dlogits = Matrix::zeros(t, logits.cols());
    for pos in start..t {
        let row = pos - 1;
        let p = softmax(logits.row(row));
        let target = toks[pos];
        loss -= p[target].max(f64::MIN_POSITIVE).ln() / norm;
        for (j, o) in dlogits.row_mut(row).iter_mut().enumerate() {
            *o = (p[j] - f64::from(u8::from(j == target))) / norm;
        }
    }

    add_into(&mut g.head, &dlogits.t_matmul(&z)?);
    let dz = dlogits.matmul(m.head.weight())?;
    let mut dx = ln_backward(&m.ln_f, &lnf, &dz, &mut g.ln_f);

    for (bi, c) in caches.iter().enumerate().rev() {
        let block = &m.blocks[bi];
        let bg = &mut g.blocks[bi];
        add_into(&mut bg.projs[DOWN], &dx.t_matmul(&c.act)?);
        let dact = dx.matmul(w(bi, DOWN))?;
        let (rows, cols) = dact.shape();
        let mut du = Matrix::zeros(rows, cols);
        let mut dg = Matrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                let gv = c.gate.get(i, j);
                let s = sigmoid(gv);
                du.set(i, j, dact.get(i, j) * silu(gv));
                dg.set(i, j, dact.get(i, j) * c.up.get(i, j) * s * (1.0 + gv * (1.0 - s)));
            }
        }
        add_into(&mut bg.projs[UP], &du.t_matmul(&c.m)?);
        add_into(&mut bg.projs[GATE], &dg.t_matmul(&c.m)?);
        let dm = du.matmul(w(bi, UP))?.add(&dg.matmul(w(bi, GATE))?)?;
        let dx1 = dx.add(&ln_backward(&block.ln2, &c.ln2, &dm, &mut bg.ln2))?;

        add_into(&mut bg.projs[O], &dx1.t_matmul(&c.ctx)?);
        let dctx = dx1.matmul(w(bi, O))?;
        let mut dq = Matrix::zeros(t, d);
        let mut dkm = Matrix::zeros(t, d);
        let mut dv = Matrix::zeros(t, d);
        for (h, p) in c.probs.iter().enumerate() {
            let off = h * dk;
            for i in 0..t {
                let dp: Vec<f64> = (0..=i)
                    .map(|j| (0..dk).map(|cc| dctx.get(i, off + cc) * c.v.get(j, off + cc)).sum())
                    .collect();
                let dot: f64 = (0..=i).map(|j| dp[j] * p.get(i, j)).sum();
                for j in 0..=i {
                    let pij = p.get(i, j);
                    let ds = pij * (dp[j] - dot) * scale;
                    for cc in 0..dk {
                        let col = off + cc;
                        dv.set(j, col, dv.get(j, col) + pij * dctx.get(i, col));
                        dq.set(i, col, dq.get(i, col) + ds * c.k.get(j, col));
                        dkm.set(j, col, dkm.get(j, col) + ds * c.q.get(i, col));
                    }
                }
            }
        }
        add_into(&mut bg.projs[Q], &dq.t_matmul(&c.a)?);
        add_into(&mut bg.projs[K], &dkm.t_matmul(&c.a)?);
        add_into(&mut bg.projs[V], &dv.t_matmul(&c.a)?);
        let da = dq
            .matmul(w(bi, Q))?
            .add(&dkm.matmul(w(bi, K))?)?
            .add(&dv.matmul(w(bi, V))?)?;
        dx = dx1.add(&ln_backward(&block.ln1, &c.ln1, &da, &mut bg.ln1))?;
    }
    for (i, &tok) in toks.iter().enumerate() {
        for j in 0..d {
            let cur = g.embed.get(tok, j);
            g.embed.set(tok, j, cur + dx.get(i, j));
        }
    }
    Ok(loss)
}

fn prepare(model: &TransformerModel, corpus: &[Example]) -> Result<(Vec<(Vec<usize>, usize)>, f64)> {
    if corpus.is_empty() {
        return Err(VpsError::Argument("training corpus is empty".into()));
    }
    let seqs = corpus.iter().map(Example::tokens).collect::<Result<Vec<_>>>()?;
    for (toks, _) in &seqs {
        model.check_tokens(toks)?;
    }
    let targets: usize = seqs.iter().map(|(t, s)| t.len() - s).sum();
    Ok((seqs, targets as f64))
}

fn loss_and_grads(model: &TransformerModel, seqs: &[(Vec<usize>, usize)], norm: f64) -> Result<(f64, Grads)> {
    let mut g = Grads::zeros(model);
    let mut loss = 0.0;
    for (toks, start) in seqs {
        loss += example_grad(model, toks, *start, norm, &mut g)?;
    }
    Ok((loss, g))
}

/// Mean cross-entropy over answer and terminator tokens.
pub fn corpus_loss(model: &TransformerModel, corpus: &[Example]) -> Result<f64> {
    let (seqs, norm) = prepare(model, corpus)?;
    Ok(loss_and_grads(model, &seqs, norm)?.0)
}

fn sgd(p: &mut [f64], g: &[f64], lr: f64) {
    for (a, b) in p.iter_mut().zip(g) {
        *a -= lr * b;
    }
}

/// Runs `steps` full-batch SGD updates and returns the loss before each
/// update followed by the final loss. Patched models are refused.
pub fn train_tiny(model: &mut TransformerModel, corpus: &[Example], steps: usize, lr: f64) -> Result<Vec<f64>> {
    if model.is_patched() {
        return Err(VpsError::Refused("training a model with wrapped layers would update frozen weights".into()));
    }
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(VpsError::Argument(format!("learning rate must be positive, got {lr}")));
    }
    let (seqs, norm) = prepare(model, corpus)?;
    let mut losses = Vec::with_capacity(steps + 1);
    for _ in 0..steps {
        let (loss, g) = loss_and_grads(model, &seqs, norm)?;
        losses.push(loss);
        apply(model, &g, lr)?;
    }
    losses.push(loss_and_grads(model, &seqs, norm)?.0);
    Ok(losses)
}

fn apply(model: &mut TransformerModel, g: &Grads, lr: f64) -> Result<()> {
    sgd(model.embed.data_mut(), g.embed.data(), lr);
    for (b, bg) in model.blocks.iter_mut().zip(&g.blocks) {
        sgd(&mut b.ln1.gain, &bg.ln1.gain, lr);
        sgd(&mut b.ln1.bias, &bg.ln1.bias, lr);
        sgd(&mut b.ln2.gain, &bg.ln2.gain, lr);
        sgd(&mut b.ln2.bias, &bg.ln2.bias, lr);
        for (p, pg) in b.projs.iter_mut().zip(&bg.projs) {
            let Proj::Plain(l) = p else {
                unreachable!("patched models are refused before training");
            };
            l.set_frozen(false);
            sgd(l.weight_mut()?.data_mut(), pg.data(), lr);
            l.set_frozen(true);
        }
    }
    sgd(&mut model.ln_f.gain, &g.ln_f.gain, lr);
    sgd(&mut model.ln_f.bias, &g.ln_f.bias, lr);
    model.head.set_frozen(false);
    sgd(model.head.weight_mut()?.data_mut(), g.head.data(), lr);
    model.head.set_frozen(true);
    Ok(())
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::config::VpsConfig;
    use crate::model::ModelConfig;

    fn small() -> TransformerModel {
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

    fn corpus() -> Vec<Example> {
        addition_corpus().into_iter().step_by(17).collect()
    }

    /// Central finite difference on one weight entry.
    fn numeric_grad(m: &mut TransformerModel, data: fn(&mut TransformerModel) -> &mut [f64], idx: usize) -> f64 {
        let c = corpus();
        let eps = 1e-5;
        let orig = data(m)[idx];
        data(m)[idx] = orig + eps;
        let lp = corpus_loss(m, &c).unwrap();
        data(m)[idx] = orig - eps;
        let lm = corpus_loss(m, &c).unwrap();
        data(m)[idx] = orig;
        (lp - lm) / (2.0 * eps)
    }

    fn proj_data(m: &mut TransformerModel, b: usize, p: usize) -> &mut [f64] {
        let Proj::Plain(l) = &mut m.blocks[b].projs[p] else { unreachable!() };
        l.frozen_data_mut()
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut m = small();
        // Move off the symmetric init so LN gains and biases get signal.
        train_tiny(&mut m, &corpus(), 3, 0.5).unwrap();
        let (seqs, norm) = prepare(&m, &corpus()).unwrap();
        let (_, g) = loss_and_grads(&m, &seqs, norm).unwrap();

        type Getter = fn(&mut TransformerModel) -> &mut [f64];
        let cases: Vec<(&str, Getter, &[f64])> = vec![
            ("embed", |m| m.embed.data_mut(), g.embed.data()),
            ("head", |m| m.head.frozen_data_mut(), g.head.data()),
            ("ln_f.gain", |m| &mut m.ln_f.gain, &g.ln_f.gain),
            ("ln1.bias", |m| &mut m.blocks[0].ln1.bias, &g.blocks[0].ln1.bias),
            ("ln2.gain", |m| &mut m.blocks[1].ln2.gain, &g.blocks[1].ln2.gain),
            ("q0", |m| proj_data(m, 0, Q), g.blocks[0].projs[Q].data()),
            ("k1", |m| proj_data(m, 1, K), g.blocks[1].projs[K].data()),
            ("v0", |m| proj_data(m, 0, V), g.blocks[0].projs[V].data()),
            ("o1", |m| proj_data(m, 1, O), g.blocks[1].projs[O].data()),
            ("up0", |m| proj_data(m, 0, UP), g.blocks[0].projs[UP].data()),
            ("gate1", |m| proj_data(m, 1, GATE), g.blocks[1].projs[GATE].data()),
            ("down0", |m| proj_data(m, 0, DOWN), g.blocks[0].projs[DOWN].data()),
        ];
        for (name, get, analytic) in cases {
            let n = analytic.len();
            for idx in [0, n / 3, n / 2 + 1, n - 1] {
                let num = numeric_grad(&mut m, get, idx);
                let ana = analytic[idx];
                let tol = 1e-6 + 1e-4 * num.abs().max(ana.abs());
                assert!((num - ana).abs() <= tol, "{name}[{idx}]: numeric {num} analytic {ana}");
            }
        }
    }

    #[test]
    fn loss_decreases() {
        let mut m = small();
        let losses = train_tiny(&mut m, &corpus(), 30, 0.5).unwrap();
        assert!(losses.last().unwrap() < &losses[0], "{losses:?}");
    }

    #[test]
    fn zero_steps_leave_model_unchanged() {
        let mut m = small();
        let before = m.weights_checksum();
        let losses = train_tiny(&mut m, &corpus(), 0, 0.5).unwrap();
        assert_eq!(losses.len(), 1);
        assert_eq!(m.weights_checksum(), before);
    }

    #[test]
    fn refuses_patched_and_bad_input() {
        let mut m = small();
        assert_eq!(m.patch(&["v_proj"], Arc::new(VpsConfig::default())), 2);
        assert!(matches!(train_tiny(&mut m, &corpus(), 1, 0.1), Err(VpsError::Refused(_))));
        let mut m = small();
        assert!(train_tiny(&mut m, &[], 1, 0.1).is_err());
        assert!(train_tiny(&mut m, &corpus(), 1, 0.0).is_err());
    }

    #[test]
    fn loss_matches_forward_logits() {
        let mut m = small();
        let ex = &corpus()[..1];
        let (toks, start) = ex[0].tokens().unwrap();
        let logits = m.forward_logits(&toks).unwrap();
        let mut expect = 0.0;
        for pos in start..toks.len() {
            let p = softmax(logits.row(pos - 1));
            expect -= p[toks[pos]].ln();
        }
        expect /= (toks.len() - start) as f64;
        assert!((corpus_loss(&m, ex).unwrap() - expect).abs() < 1e-12);
    }
}
