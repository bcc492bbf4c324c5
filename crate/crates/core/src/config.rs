//! The VPS parameter set shared by every wrapped layer.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Result, VpsError};
use crate::policy::{AdaptiveFlags, PolicyBounds};
use crate::verify::Weights;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BuilderKind {
    Sk,
    Sc,
    Hybrid,
}

impl fmt::Display for BuilderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BuilderKind::Sk => "sk",
            BuilderKind::Sc => "sc",
            BuilderKind::Hybrid => "hybrid",
        })
    }
}

impl FromStr for BuilderKind {
    type Err = VpsError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sk" => Ok(BuilderKind::Sk),
            "sc" => Ok(BuilderKind::Sc),
            "hybrid" => Ok(BuilderKind::Hybrid),
            other => Err(VpsError::Argument(format!("unknown builder '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VpsConfig {
    pub rank: usize,
    pub topk: usize,
    pub gamma: f64,
    pub tau: f64,
    pub builder: BuilderKind,
    pub order: usize,
    pub qk_coupling: bool,
    /// Accepted for compatibility; there is no L-BFGS stage.
    pub lbfgs_enabled: bool,
    pub adaptive_rank: bool,
    pub adaptive_gamma: bool,
    pub alpha: f64,
    pub rank_bounds: (usize, usize),
    pub gamma_bounds: (f64, f64),
    pub topk_bounds: (usize, usize),
    /// Elementwise clamp on the raw perturbation; off when `None`.
    pub clamp: Option<f64>,
    pub entropy_divisor: f64,
    pub weights: Weights,
    pub window_size: usize,
    pub seed: u64,
}

impl Default for VpsConfig {
    fn default() -> Self {
        Self {
            rank: 2,
            topk: 32,
            gamma: 0.5,
            tau: 0.8,
            builder: BuilderKind::Hybrid,
            order: 1,
            qk_coupling: true,
            lbfgs_enabled: true,
            adaptive_rank: true,
            adaptive_gamma: true,
            alpha: 1e-3,
            rank_bounds: (1, 4),
            gamma_bounds: (0.3, 0.8),
            topk_bounds: (16, 64),
            clamp: None,
            entropy_divisor: 3.0,
            weights: Weights::default(),
            window_size: 8,
            seed: 0,
        }
    }
}

impl VpsConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(VpsError::Argument(m));
        if self.order != 1 {
            return bad(format!("order = {} is unsupported (only first-order deltas exist)", self.order));
        }
        if self.rank == 0 || self.topk < self.rank {
            return bad(format!("need 1 <= rank <= topk, got rank {} topk {}", self.rank, self.topk));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma {} outside [0, 1]", self.gamma));
        }
        if !(self.tau > 0.0) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if !(self.alpha >= 0.0) {
            return bad(format!("alpha must be >= 0, got {}", self.alpha));
        }
        if let Some(c) = self.clamp {
            if !(c >= 0.0) {
                return bad(format!("clamp must be >= 0, got {c}"));
            }
        }
        if !(self.entropy_divisor > 0.0) {
            return bad(format!("entropy_divisor must be positive, got {}", self.entropy_divisor));
        }
        if self.window_size == 0 {
            return bad("window_size must be >= 1".into());
        }
        self.bounds().validate()?;
        self.weights.validate()
    }

    pub fn bounds(&self) -> PolicyBounds {
        PolicyBounds {
            rank: self.rank_bounds,
            gamma: self.gamma_bounds,
            topk: self.topk_bounds,
        }
    }

    /// Top-k follows the rank flag: both are structural and `k >= r` must
    /// hold under either setting.
    pub fn adaptive_flags(&self) -> AdaptiveFlags {
        AdaptiveFlags {
            rank: self.adaptive_rank,
            gamma: self.adaptive_gamma,
            topk: self.adaptive_rank,
        }
    }

    /// A config under which every wrapped layer reproduces its base output.
    pub fn disabled() -> Self {
        Self {
            gamma: 0.0,
            gamma_bounds: (0.0, 0.0),
            adaptive_rank: false,
            adaptive_gamma: false,
            ..Self::default()
        }
    }
}
