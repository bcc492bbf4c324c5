//! Frozen linear layers and the VPS wrapper around them.
//!
//! For input rows `x`, a wrapped layer returns `x Wᵀ (+ b) + γ (x A) Bᵀ`
//! where `A = WᵀV`, `B = WU` come from the selectors and are clipped per
//! column so that `‖A_c‖‖B_c‖ ≤ τ`.

use std::sync::Arc;
use std::time::{Duration, Instant};

use crate::config::{BuilderKind, VpsConfig};
use crate::error::{shape_err, Result, VpsError};
use crate::linalg::{IndexList, Matrix};
use crate::policy::{LayerPolicy, PolicyEngine, PolicyState};
use crate::selector::{self, GradSignal, SelectorPair};

#[derive(Debug, Clone, PartialEq)]
pub struct LinearLayer {
    weight: Matrix,
    bias: Option<Vec<f64>>,
    frozen: bool,
}

impl LinearLayer {
    /// `weight` is `d_out × d_in`.
    pub fn new(weight: Matrix, bias: Option<Vec<f64>>) -> Result<Self> {
        if weight.rows() == 0 || weight.cols() == 0 {
            return Err(VpsError::Argument("linear layer with an empty weight".into()));
        }
        if let Some(b) = &bias {
            if b.len() != weight.rows() {
                return Err(shape_err(
                    "LinearLayer::new",
                    format!("bias length {} for d_out {}", b.len(), weight.rows()),
                ));
            }
        }
        Ok(Self {
            weight,
            bias,
            frozen: true,
        })
    }

    pub fn weight(&self) -> &Matrix {
        &self.weight
    }

    pub fn bias(&self) -> Option<&[f64]> {
        self.bias.as_deref()
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn d_in(&self) -> usize {
        self.weight.cols()
    }

    pub fn d_out(&self) -> usize {
        self.weight.rows()
    }

    /// Mutable access for training; refused once frozen.
    pub(crate) fn weight_mut(&mut self) -> Result<&mut Matrix> {
        if self.frozen {
            return Err(VpsError::Refused("attempted to modify a frozen layer".into()));
        }
        Ok(&mut self.weight)
    }

    pub(crate) fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
    }

    /// Raw weight storage regardless of the frozen flag, for gradient checks.
    #[cfg(test)]
    pub(crate) fn frozen_data_mut(&mut self) -> &mut [f64] {
        self.weight.data_mut()
    }
}

pub fn base_forward(x: &Matrix, layer: &LinearLayer) -> Result<Matrix> {
    if x.cols() != layer.d_in() {
        return Err(shape_err(
            "base_forward",
            format!("input has {} columns, layer expects {}", x.cols(), layer.d_in()),
        ));
    }
    let mut h = x.matmul_t(&layer.weight)?;
    if let Some(b) = &layer.bias {
        for i in 0..h.rows() {
            for (v, bj) in h.row_mut(i).iter_mut().zip(b) {
                *v += bj;
            }
        }
    }
    Ok(h)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LowRankFactors {
    /// `d_in × r`
    pub a: Matrix,
    /// `d_out × r`
    pub b: Matrix,
}

impl LowRankFactors {
    pub fn rank(&self) -> usize {
        self.a.cols()
    }

    /// `A Bᵀ`, the `d_in × d_out` matrix applied to input rows.
    pub fn product(&self) -> Matrix {
        self.a.matmul_t(&self.b).expect("factor ranks agree")
    }
}

/// `A = WᵀV`, `B = WU`.
pub fn derive_factors(layer: &LinearLayer, sel: &SelectorPair) -> Result<LowRankFactors> {
    let w = &layer.weight;
    if sel.u.rows() != layer.d_in() || sel.v.rows() != layer.d_out() || sel.u.cols() != sel.v.cols() {
        return Err(shape_err(
            "derive_factors",
            format!(
                "U {:?}, V {:?} against W {:?}",
                sel.u.shape(),
                sel.v.shape(),
                w.shape()
            ),
        ));
    }
    Ok(LowRankFactors {
        a: w.t_matmul(&sel.v)?,
        b: w.matmul(&sel.u)?,
    })
}

/// Rescales each column pair by `1/√s_c`, `s_c = max(1, ‖A_c‖‖B_c‖/τ)`.
/// Columns already within `τ` are returned untouched.
pub fn spectral_clip(mut f: LowRankFactors, tau: f64) -> LowRankFactors {
    for c in 0..f.rank() {
        let sigma = f.a.col_norm(c) * f.b.col_norm(c);
        let s = (sigma / tau).max(1.0);
        if s > 1.0 {
            let k = s.sqrt();
            for i in 0..f.a.rows() {
                f.a.set(i, c, f.a.get(i, c) / k);
            }
            for i in 0..f.b.rows() {
                f.b.set(i, c, f.b.get(i, c) / k);
            }
        }
    }
    f
}

/// `γ · clamp((x A) Bᵀ)`.
pub fn apply_perturbation(x: &Matrix, f: &LowRankFactors, gamma: f64, clamp: Option<f64>) -> Result<Matrix> {
    if x.cols() != f.a.rows() {
        return Err(shape_err(
            "apply_perturbation",
            format!("input has {} columns, factor A has {} rows", x.cols(), f.a.rows()),
        ));
    }
    let mut delta = x.matmul(&f.a)?.matmul_t(&f.b)?;
    if let Some(c) = clamp {
        delta.data_mut().iter_mut().for_each(|v| *v = v.clamp(-c, c));
    }
    Ok(delta.scale(gamma))
}

/// `ΔW = γ (WU)(VᵀW)`, the `d_out × d_in` matrix with
/// `x ΔWᵀ = γ (x A) Bᵀ` for the unclipped factors.
pub fn effective_delta_weight(layer: &LinearLayer, sel: &SelectorPair, gamma: f64) -> Result<Matrix> {
    let f = derive_factors(layer, sel)?;
    Ok(f.b.matmul_t(&f.a)?.scale(gamma))
}

/// Wall time per stage of one wrapped forward.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PhaseTimes {
    pub base: Duration,
    pub policy: Duration,
    pub scoring: Duration,
    pub topk: Duration,
    pub builder: Duration,
    pub factors: Duration,
    pub perturbation: Duration,
}

impl PhaseTimes {
    /// Everything except the base product.
    pub fn extra(&self) -> Duration {
        self.policy + self.scoring + self.topk + self.builder + self.factors + self.perturbation
    }
}

/// A frozen linear layer plus the per-layer VPS state.
#[derive(Debug, Clone)]
pub struct VpsLayer {
    name: String,
    base: LinearLayer,
    config: Arc<VpsConfig>,
    engine: PolicyEngine,
    pub policy: PolicyState,
    pub grad: GradSignal,
    pub(crate) peer: Option<String>,
    last_selectors: Option<SelectorPair>,
    last_policy: Option<LayerPolicy>,
}

impl VpsLayer {
    pub fn new(name: impl Into<String>, mut base: LinearLayer, config: Arc<VpsConfig>) -> Self {
        base.set_frozen(true);
        Self {
            name: name.into(),
            engine: PolicyEngine::from_config(&config),
            policy: PolicyState::new(config.window_size),
            base,
            config,
            grad: GradSignal::ABSENT,
            peer: None,
            last_selectors: None,
            last_policy: None,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn base(&self) -> &LinearLayer {
        &self.base
    }

    pub fn config(&self) -> &VpsConfig {
        &self.config
    }

    pub fn builder(&self) -> BuilderKind {
        self.config.builder
    }

    pub fn peer(&self) -> Option<&str> {
        self.peer.as_deref()
    }

    pub fn last_selectors(&self) -> Option<&SelectorPair> {
        self.last_selectors.as_ref()
    }

    pub fn last_policy(&self) -> Option<&LayerPolicy> {
        self.last_policy.as_ref()
    }

    pub fn into_base(self) -> LinearLayer {
        self.base
    }

    /// Clears policy history, entropy, gradient signal and cached selectors.
    pub fn reset(&mut self) {
        self.policy.reset();
        self.grad = GradSignal::ABSENT;
        self.last_selectors = None;
        self.last_policy = None;
    }

    /// Base output and the policy decided from it. `k` and `r` are capped
    /// at the layer's dimensions.
    pub fn decide(&self, x: &Matrix) -> Result<(Matrix, LayerPolicy)> {
        let h = base_forward(x, &self.base)?;
        let pol = self.decide_from(&h);
        Ok((h, pol))
    }

    fn decide_from(&self, h: &Matrix) -> LayerPolicy {
        let mut pol = self.engine.decide(h, &self.policy);
        let max_k = self.base.d_in().min(self.base.d_out());
        pol.k = pol.k.min(max_k).max(1);
        pol.r = pol.r.min(pol.k).max(1);
        pol
    }

    /// Second half of the forward, given `decide`'s output.
    pub fn complete(
        &mut self,
        x: &Matrix,
        h: Matrix,
        pol: LayerPolicy,
        shared_in: Option<&IndexList>,
    ) -> Result<Matrix> {
        let sel = selector::build(
            self.config.builder,
            x,
            &h,
            pol.k,
            pol.r,
            self.config.alpha,
            self.grad,
            shared_in,
        )?;
        let factors = spectral_clip(derive_factors(&self.base, &sel)?, self.config.tau);
        self.last_selectors = Some(sel);
        self.last_policy = Some(pol);
        if pol.gamma == 0.0 {
            return Ok(h);
        }
        let delta = apply_perturbation(x, &factors, pol.gamma, self.config.clamp)?;
        h.add(&delta)
    }

    pub fn forward(&mut self, x: &Matrix) -> Result<Matrix> {
        let (h, pol) = self.decide(x)?;
        self.complete(x, h, pol, None)
    }

    /// Same computation as [`forward`](Self::forward), timed per stage.
    pub fn forward_timed(&mut self, x: &Matrix) -> Result<(Matrix, PhaseTimes)> {
        let mut t = PhaseTimes::default();
        let clock = Instant::now();
        let h = base_forward(x, &self.base)?;
        t.base = clock.elapsed();

        let clock = Instant::now();
        let pol = self.decide_from(&h);
        t.policy = clock.elapsed();

        let clock = Instant::now();
        let s_in = selector::input_scores(x);
        let s_out = h.mean_abs_cols();
        t.scoring = clock.elapsed();

        let clock = Instant::now();
        let ins = crate::linalg::top_k_indices(&s_in, pol.k)?;
        let outs = crate::linalg::top_k_indices(&s_out, pol.k)?;
        t.topk = clock.elapsed();

        let clock = Instant::now();
        let sk = selector::sk_from_indices(ins, outs, x.cols(), h.cols(), pol.r)?;
        let use_sc = match self.config.builder {
            BuilderKind::Sk => false,
            BuilderKind::Sc => true,
            BuilderKind::Hybrid => self.grad.present,
        };
        let sel = if use_sc {
            selector::sc_refine(sk, x, &h, self.config.alpha)?
        } else {
            sk
        };
        t.builder = clock.elapsed();

        let clock = Instant::now();
        let factors = spectral_clip(derive_factors(&self.base, &sel)?, self.config.tau);
        t.factors = clock.elapsed();

        let clock = Instant::now();
        let out = if pol.gamma == 0.0 {
            h
        } else {
            let delta = apply_perturbation(x, &factors, pol.gamma, self.config.clamp)?;
            h.add(&delta)?
        };
        t.perturbation = clock.elapsed();

        self.last_selectors = Some(sel);
        self.last_policy = Some(pol);
        Ok((out, t))
    }
}
