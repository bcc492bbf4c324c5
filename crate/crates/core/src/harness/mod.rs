//! Experiment plumbing around the patched toy model.

pub mod ablation;
pub mod bench;
pub mod config;
pub mod experiment;
pub mod refine;

pub use ablation::{grid_cells, run_ablation_grid, AblationReport, Cell, CellResult};
pub use bench::{benchmark_overhead, BenchReport, BenchShape, PredictedFlops};
pub use config::{apply_env_overrides, load_config, parse_config_str, ExperimentConfig};
pub use experiment::{run_experiment, ExperimentReport, Summary, Task};
pub use refine::{refine, CompositeVerifier, IterationRecord, RefineFailure, RefineOptions, RefineOutcome, Verifier};
