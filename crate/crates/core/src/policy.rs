//! Per-call hyperparameter policy.
//!
//! The scale factor `σ ∈ [0, 1]` is built in stages: batch energy of the
//! base output through `1 − e^{−E}`, an optional entropy floor, and a
//! multiplier from the recent improvement rate. `σ` then interpolates rank,
//! gamma and top-k between their bounds.

use std::collections::VecDeque;

use serde::Serialize;

use crate::error::{Result, VpsError};
use crate::linalg::{frobenius_norm_sq, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PolicyBounds {
    pub rank: (usize, usize),
    pub gamma: (f64, f64),
    pub topk: (usize, usize),
}

impl PolicyBounds {
    pub fn validate(&self) -> Result<()> {
        let (r_lo, r_hi) = self.rank;
        let (g_lo, g_hi) = self.gamma;
        let (k_lo, k_hi) = self.topk;
        let fail = |m: String| Err(VpsError::Argument(m));
        if r_lo < 1 || r_lo > r_hi {
            return fail(format!("rank_bounds [{r_lo}, {r_hi}] invalid"));
        }
        if !(0.0 <= g_lo && g_lo <= g_hi && g_hi <= 1.0) {
            return fail(format!("gamma_bounds [{g_lo}, {g_hi}] must satisfy 0 <= lo <= hi <= 1"));
        }
        if k_lo > k_hi {
            return fail(format!("topk_bounds [{k_lo}, {k_hi}] invalid"));
        }
        if k_lo < r_hi {
            return fail(format!("topk_bounds lower end {k_lo} is below rank_bounds upper end {r_hi}"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LayerPolicy {
    pub r: usize,
    pub gamma: f64,
    pub k: usize,
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AdaptiveFlags {
    pub rank: bool,
    pub gamma: bool,
    pub topk: bool,
}

impl AdaptiveFlags {
    pub const ALL: Self = Self {
        rank: true,
        gamma: true,
        topk: true,
    };
    pub const NONE: Self = Self {
        rank: false,
        gamma: false,
        topk: false,
    };
}

/// Mutable per-layer state: the last broadcast entropy and a sliding window
/// of improvement flags.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyState {
    pub last_entropy: Option<f64>,
    history: VecDeque<bool>,
    window_size: usize,
}

impl PolicyState {
    pub fn new(window_size: usize) -> Self {
        Self {
            last_entropy: None,
            history: VecDeque::with_capacity(window_size),
            window_size: window_size.max(1),
        }
    }

    pub fn history(&self) -> impl Iterator<Item = bool> + '_ {
        self.history.iter().copied()
    }

    pub fn window_size(&self) -> usize {
        self.window_size
    }

    /// Mean of the improvement flags in the window, `None` when empty.
    pub fn improvement_rate(&self) -> Option<f64> {
        if self.history.is_empty() {
            return None;
        }
        let hits = self.history.iter().filter(|&&b| b).count();
        Some(hits as f64 / self.history.len() as f64)
    }

    pub fn update_history(&mut self, improved: bool) {
        self.history.push_back(improved);
        while self.history.len() > self.window_size {
            self.history.pop_front();
        }
    }

    pub fn reset(&mut self) {
        self.last_entropy = None;
        self.history.clear();
    }
}

/// `‖H‖²_F / (N · d_out)`.
pub fn batch_energy(h: &Matrix) -> f64 {
    let n = (h.rows() * h.cols()) as f64;
    if n == 0.0 {
        return 0.0;
    }
    frobenius_norm_sq(h) / n
}

pub fn energy_to_scale(e: f64) -> f64 {
    // -expm1(-e) == 1 - exp(-e) without cancellation near zero.
    -(-e).exp_m1()
}

/// `max(σ, min(1, ℋ / divisor))` when an entropy is available.
pub fn apply_entropy_floor(sigma: f64, ent: Option<f64>, divisor: f64) -> f64 {
    match ent {
        Some(h) => sigma.max((h / divisor).min(1.0)),
        None => sigma,
    }
}

/// Scales `σ` by `0.75 + 0.5ρ`, which is the identity at `ρ = 0.5`.
pub fn history_adjust(sigma: f64, state: &PolicyState) -> f64 {
    match state.improvement_rate() {
        None => sigma,
        Some(rho) => (sigma * (0.75 + 0.5 * rho)).clamp(0.0, 1.0),
    }
}

pub fn interpolate(sigma: f64, bounds: &PolicyBounds) -> LayerPolicy {
    let sigma = sigma.clamp(0.0, 1.0);
    let step = |lo: usize, hi: usize| lo + (((hi - lo) as f64) * sigma).floor() as usize;
    let (g_lo, g_hi) = bounds.gamma;
    LayerPolicy {
        r: step(bounds.rank.0, bounds.rank.1),
        gamma: g_lo + (g_hi - g_lo) * sigma,
        k: step(bounds.topk.0, bounds.topk.1),
        sigma,
    }
}

/// Fixed values substituted for parameters whose adaptivity is disabled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedParams {
    pub rank: usize,
    pub gamma: f64,
    pub topk: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyEngine {
    pub bounds: PolicyBounds,
    pub adaptive: AdaptiveFlags,
    pub fixed: FixedParams,
    pub entropy_divisor: f64,
}

impl PolicyEngine {
    pub fn from_config(cfg: &crate::config::VpsConfig) -> Self {
        Self {
            bounds: cfg.bounds(),
            adaptive: cfg.adaptive_flags(),
            fixed: FixedParams {
                rank: cfg.rank,
                gamma: cfg.gamma,
                topk: cfg.topk,
            },
            entropy_divisor: cfg.entropy_divisor,
        }
    }

    pub fn decide(&self, h: &Matrix, state: &PolicyState) -> LayerPolicy {
        let sigma = energy_to_scale(batch_energy(h));
        let sigma = apply_entropy_floor(sigma, state.last_entropy, self.entropy_divisor);
        let sigma = history_adjust(sigma, state);
        let mut pol = interpolate(sigma, &self.bounds);
        if !self.adaptive.rank {
            pol.r = self.fixed.rank;
        }
        if !self.adaptive.gamma {
            pol.gamma = self.fixed.gamma;
        }
        if !self.adaptive.topk {
            pol.k = self.fixed.topk;
        }
        pol
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::VpsConfig;

    fn table_bounds() -> PolicyBounds {
        VpsConfig::default().bounds()
    }

    #[test]
    fn energy_examples() {
        assert_eq!(batch_energy(&Matrix::zeros(2, 3)), 0.0);
        let ones = Matrix::from_fn(2, 2, |_, _| 1.0);
        assert_eq!(batch_energy(&ones), 1.0);
        let h = Matrix::from_fn(3, 2, |i, j| (i as f64) - 0.5 * j as f64);
        let c = 3.0;
        assert!((batch_energy(&h.scale(c)) - c * c * batch_energy(&h)).abs() < 1e-12);
    }

    #[test]
    fn scale_examples() {
        assert_eq!(energy_to_scale(0.0), 0.0);
        assert!((energy_to_scale(1.0) - (1.0 - (-1.0f64).exp())).abs() < 1e-15);
        assert!((energy_to_scale(1.0) - 0.632121).abs() < 1e-6);
        assert!((1.0 - energy_to_scale(50.0)).abs() < 1e-12);
    }

    #[test]
    fn entropy_floor_examples() {
        let ln64 = 64f64.ln();
        assert_eq!(apply_entropy_floor(0.2, Some(ln64), 3.0), 1.0);
        assert_eq!(apply_entropy_floor(0.9, Some(0.3), 3.0), 0.9);
        assert_eq!(apply_entropy_floor(0.05, Some(0.3), 3.0), 0.3 / 3.0);
        assert_eq!(apply_entropy_floor(0.4, None, 3.0), 0.4);
    }

    #[test]
    fn history_examples() {
        let mut s = PolicyState::new(8);
        assert_eq!(history_adjust(0.4, &s), 0.4);
        for f in [true, true, false, false] {
            s.update_history(f);
        }
        assert_eq!(s.improvement_rate(), Some(0.5));
        assert_eq!(history_adjust(0.4, &s), 0.4);
        let mut all = PolicyState::new(4);
        all.update_history(true);
        assert_eq!(history_adjust(0.9, &all), 1.0);
        let mut none = PolicyState::new(4);
        none.update_history(false);
        assert_eq!(history_adjust(0.8, &none), 0.8 * 0.75);
    }

    #[test]
    fn window_eviction() {
        let mut s = PolicyState::new(2);
        s.update_history(true);
        assert_eq!(s.history().count(), 1);
        s.update_history(false);
        s.update_history(true);
        assert_eq!(s.history().collect::<Vec<_>>(), vec![false, true]);
    }

    #[test]
    fn interpolation_examples() {
        let b = table_bounds();
        let p = interpolate(0.0, &b);
        assert_eq!((p.r, p.gamma, p.k), (1, 0.3, 16));
        let s = 0.632121;
        let p = interpolate(s, &b);
        assert_eq!(p.r, 2);
        assert!((p.gamma - 0.61606).abs() < 1e-5);
        assert_eq!(p.k, 16 + (48.0 * s).floor() as usize);
        let p = interpolate(1.0, &b);
        assert_eq!((p.r, p.gamma, p.k), (4, 0.8, 64));
    }

    #[test]
    fn decide_fixed_and_zero() {
        let mut cfg = VpsConfig::default();
        cfg.adaptive_rank = false;
        cfg.adaptive_gamma = false;
        let engine = PolicyEngine::from_config(&cfg);
        let h = Matrix::from_fn(4, 8, |i, j| (i * j) as f64);
        let p = engine.decide(&h, &PolicyState::new(8));
        assert_eq!((p.r, p.gamma, p.k), (2, 0.5, 32));

        let engine = PolicyEngine::from_config(&VpsConfig::default());
        let p = engine.decide(&Matrix::zeros(3, 8), &PolicyState::new(8));
        assert_eq!((p.r, p.gamma, p.k, p.sigma), (1, 0.3, 16, 0.0));
    }

    #[test]
    fn decide_is_repeatable() {
        let engine = PolicyEngine::from_config(&VpsConfig::default());
        let mut s = PolicyState::new(8);
        s.last_entropy = Some(1.2);
        s.update_history(true);
        s.update_history(false);
        s.update_history(true);
        let h = Matrix::from_fn(5, 6, |i, j| ((i + 2 * j) as f64).sin());
        assert_eq!(engine.decide(&h, &s), engine.decide(&h, &s));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn scale_strictly_monotone(a in 0.0f64..30.0, d in 1e-6f64..5.0) {
                prop_assert!(energy_to_scale(a) < energy_to_scale(a + d));
            }

            #[test]
            fn interpolate_in_bounds_and_monotone(s1 in 0.0f64..=1.0, s2 in 0.0f64..=1.0) {
                let b = table_bounds();
                let (lo, hi) = if s1 <= s2 { (s1, s2) } else { (s2, s1) };
                let (p, q) = (interpolate(lo, &b), interpolate(hi, &b));
                for x in [p, q] {
                    prop_assert!((1..=4).contains(&x.r));
                    prop_assert!((0.3..=0.8).contains(&x.gamma));
                    prop_assert!((16..=64).contains(&x.k));
                }
                prop_assert!(p.r <= q.r && p.k <= q.k && p.gamma <= q.gamma);
            }

            #[test]
            fn entropy_floor_never_decreases(s in 0.0f64..=1.0, h in 0.0f64..10.0) {
                let out = apply_entropy_floor(s, Some(h), 3.0);
                prop_assert!(out >= s && out <= 1.0);
            }

            #[test]
            fn decide_respects_bounds(
                scale in 0.0f64..4.0,
                ent in proptest::option::of(0.0f64..6.0),
                flags in proptest::collection::vec(any::<bool>(), 0..12),
            ) {
                let engine = PolicyEngine::from_config(&VpsConfig::default());
                let mut st = PolicyState::new(8);
                st.last_entropy = ent;
                for f in flags { st.update_history(f); }
                let h = Matrix::from_fn(3, 4, |i, j| scale * ((i * 4 + j) as f64 - 5.0));
                let p = engine.decide(&h, &st);
                prop_assert!((1..=4).contains(&p.r));
                prop_assert!((0.3..=0.8).contains(&p.gamma));
                prop_assert!((16..=64).contains(&p.k));
                prop_assert!((0.0..=1.0).contains(&p.sigma));
            }
        }
    }
}
