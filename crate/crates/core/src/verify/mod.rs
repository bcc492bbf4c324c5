//! Composite verification of a generated answer against a reference.
//!
//! Four objectives, each a non-negative loss: numeric squared error, a unit
//! dimension mismatch indicator, an algebraic non-equivalence indicator and
//! the normalised variance across sampled answers. The composite is their
//! weighted sum over the objectives that were evaluated.

pub mod expr;
pub mod numeric;
pub mod units;

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use crate::error::{Result, VpsError};

pub use expr::{algebraic_loss, algebraic_loss_seeded, parse_expr, Expr, DEFAULT_EQUIV_SEED};
pub use numeric::{
    extract_numeric, extract_numeric_with, numeric_loss, self_consistency_loss, ExtractMode, DEFAULT_SC_EPS,
    MISS_PENALTY,
};
pub use units::{parse_quantity, unit_loss, Dims, Quantity};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Numeric,
    Unit,
    Algebraic,
    SelfConsistency,
}

impl Objective {
    pub const ALL: [Objective; 4] = [
        Objective::Numeric,
        Objective::Unit,
        Objective::Algebraic,
        Objective::SelfConsistency,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Objective::Numeric => "numeric",
            Objective::Unit => "unit",
            Objective::Algebraic => "algebraic",
            Objective::SelfConsistency => "self_consistency",
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Weights {
    pub numeric: f64,
    pub unit: f64,
    pub algebraic: f64,
    pub self_consistency: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Self {
            numeric: 1.0,
            unit: 1.0,
            algebraic: 1.0,
            self_consistency: 0.0,
        }
    }
}

impl Weights {
    pub const ZERO: Weights = Weights {
        numeric: 0.0,
        unit: 0.0,
        algebraic: 0.0,
        self_consistency: 0.0,
    };

    /// Defaults with self-consistency switched on, for callers that sample.
    pub fn with_samples() -> Self {
        Self {
            self_consistency: 1.0,
            ..Self::default()
        }
    }

    pub fn get(&self, o: Objective) -> f64 {
        match o {
            Objective::Numeric => self.numeric,
            Objective::Unit => self.unit,
            Objective::Algebraic => self.algebraic,
            Objective::SelfConsistency => self.self_consistency,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for o in Objective::ALL {
            let w = self.get(o);
            if !(w >= 0.0 && w.is_finite()) {
                return Err(VpsError::Argument(format!("weight for {o} must be finite and >= 0, got {w}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    /// Only the objectives that were evaluated.
    pub losses: BTreeMap<Objective, f64>,
    pub weights: Weights,
    pub total: f64,
}

impl VerificationReport {
    pub fn loss(&self, o: Objective) -> Option<f64> {
        self.losses.get(&o).copied()
    }
}

/// Evaluates every objective with positive weight. Self-consistency needs
/// `samples`.
pub fn composite_loss<S: AsRef<str>>(
    pred: &str,
    truth: &str,
    samples: Option<&[S]>,
    weights: &Weights,
) -> VerificationReport {
    let mut losses = BTreeMap::new();
    for o in Objective::ALL {
        if weights.get(o) <= 0.0 {
            continue;
        }
        let loss = match o {
            Objective::Numeric => numeric_loss(pred, truth),
            Objective::Unit => unit_loss(pred, truth),
            Objective::Algebraic => algebraic_loss(pred, truth),
            Objective::SelfConsistency => match samples {
                Some(s) => self_consistency_loss(s, DEFAULT_SC_EPS),
                None => continue,
            },
        };
        losses.insert(o, loss);
    }
    let total = losses.iter().map(|(o, l)| weights.get(*o) * l).sum();
    VerificationReport {
        losses,
        weights: *weights,
        total,
    }
}
