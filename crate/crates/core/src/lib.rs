//! Virtual parameter sharpening: test-time low-rank perturbations of frozen
//! linear layers, built from activation statistics and gated by a
//! verification-driven policy.
//!
//! The pieces compose bottom-up:
//!
//! - [`linalg`]: dense matrices, top-k, ridge solves, seeded RNG
//! - [`selector`]: SK / SC / hybrid selector construction
//! - [`policy`]: adaptive rank, top-k and strength
//! - [`layer`]: the VPS layer wrapping a frozen linear map
//! - [`verify`]: numeric, unit, algebraic and self-consistency losses
//! - [`model`]: a small seeded transformer that can be patched in place
//! - [`harness`]: iterative refinement, experiments, ablation, benchmarks

pub mod config;
pub mod error;
pub mod harness;
pub mod layer;
pub mod linalg;
pub mod model;
pub mod policy;
pub mod selector;
pub mod verify;

pub use config::{BuilderKind, VpsConfig};
pub use error::{Result, VpsError};
pub use layer::{LinearLayer, LowRankFactors, VpsLayer};
pub use linalg::{IndexList, Matrix, SeededRng};
pub use model::{ModelConfig, TransformerModel};
pub use policy::{LayerPolicy, PolicyBounds, PolicyState};
pub use selector::{GradSignal, SelectorPair};
pub use verify::{composite_loss, VerificationReport, Weights};
