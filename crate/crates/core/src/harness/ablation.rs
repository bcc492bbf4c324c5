//! Full cross-product ablation over builder, strength, rank, Q/K coupling
//! and adaptivity.

use std::fmt::Write as _;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use super::config::ExperimentConfig;
use super::experiment::{build_model, patch_for, run_tasks, select_tasks, summarize, write_pair, Summary};
use crate::config::BuilderKind;
use crate::error::Result;

pub const BUILDERS: [BuilderKind; 3] = [BuilderKind::Sk, BuilderKind::Sc, BuilderKind::Hybrid];
pub const GAMMAS: [f64; 3] = [0.3, 0.5, 0.7];
pub const RANKS: [usize; 3] = [1, 2, 4];
pub const COUPLING: [bool; 2] = [true, false];
pub const ADAPTIVE: [bool; 2] = [true, false];

pub const SKIPPED_AXIS_NOTE: &str = "lbfgs\tskipped: out of scope";

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Cell {
    pub index: usize,
    pub builder: BuilderKind,
    pub gamma: f64,
    pub rank: usize,
    pub qk_coupling: bool,
    pub adaptive: bool,
}

/// Every cell in row-major order over the axes as declared above.
pub fn grid_cells() -> Vec<Cell> {
    let mut cells = Vec::with_capacity(108);
    for builder in BUILDERS {
        for gamma in GAMMAS {
            for rank in RANKS {
                for qk_coupling in COUPLING {
                    for adaptive in ADAPTIVE {
                        cells.push(Cell {
                            index: cells.len(),
                            builder,
                            gamma,
                            rank,
                            qk_coupling,
                            adaptive,
                        });
                    }
                }
            }
        }
    }
    cells
}

/// `base` with the cell's axis values. Rank and strength are the fixed
/// values used when adaptivity is off.
pub fn cell_config(base: &ExperimentConfig, cell: &Cell) -> ExperimentConfig {
    let mut cfg = base.clone();
    cfg.vps.builder = cell.builder;
    cfg.vps.gamma = cell.gamma;
    cfg.vps.rank = cell.rank;
    cfg.vps.topk = cfg.vps.topk.max(cell.rank);
    cfg.vps.qk_coupling = cell.qk_coupling;
    cfg.vps.adaptive_rank = cell.adaptive;
    cfg.vps.adaptive_gamma = cell.adaptive;
    cfg
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellResult {
    pub cell: Cell,
    /// `Err` holds the failure message; the grid carries on.
    pub outcome: std::result::Result<Summary, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub cells: Vec<CellResult>,
    pub output: PathBuf,
}

impl AblationReport {
    pub fn completed(&self) -> usize {
        self.cells.iter().filter(|c| c.outcome.is_ok()).count()
    }
}

pub const TSV_HEADER: &str = "cell\tbuilder\tgamma\trank\tqk_coupling\tadaptive\tstatus\tprompts\t\
mean_baseline_loss\tmean_final_loss\timprovement_rate\tmean_sigma\tmean_rank\tmean_gamma";

pub fn render_tsv(cells: &[CellResult]) -> String {
    let mut s = String::new();
    s.push_str(TSV_HEADER);
    s.push('\n');
    for c in cells {
        let k = &c.cell;
        let _ = write!(
            s,
            "{}\t{}\t{}\t{}\t{}\t{}\t",
            k.index, k.builder, k.gamma, k.rank, k.qk_coupling, k.adaptive
        );
        let _ = match &c.outcome {
            Ok(m) => writeln!(
                s,
                "ok\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                m.prompts, m.mean_baseline_loss, m.mean_final_loss, m.improvement_rate, m.mean_sigma, m.mean_rank, m.mean_gamma
            ),
            Err(e) => writeln!(s, "error: {}\t-\t-\t-\t-\t-\t-\t-", e.replace(['\t', '\n'], " ")),
        };
    }
    s.push_str(SKIPPED_AXIS_NOTE);
    s.push('\n');
    s
}

pub fn render_jsonl(cells: &[CellResult]) -> String {
    let mut s = String::new();
    for c in cells {
        let v = match &c.outcome {
            Ok(m) => json!({"cell": c.cell, "status": "ok", "summary": m}),
            Err(e) => json!({"cell": c.cell, "status": "error", "error": e}),
        };
        s.push_str(&v.to_string());
        s.push('\n');
    }
    s.push_str(&json!({"axis": "lbfgs", "status": "skipped: out of scope"}).to_string());
    s.push('\n');
    s
}

/// Trains once, then runs every cell on its own patched copy and RNG
/// stream. Output order is cell order regardless of scheduling.
pub fn run_ablation_grid(base: &ExperimentConfig) -> Result<AblationReport> {
    base.validate()?;
    let (mut model, _) = build_model(base)?;
    let tasks = select_tasks(&mut model, base)?;
    let cells: Vec<CellResult> = grid_cells()
        .into_par_iter()
        .map(|cell| {
            let cfg = cell_config(base, &cell);
            let outcome = cfg
                .validate()
                .and_then(|_| {
                    let mut patched = patch_for(&model, &cfg);
                    run_tasks(&mut patched, &tasks, &cfg, cell.index as u64 + 1)
                })
                .map(|r| summarize(&r))
                .map_err(|e| e.to_string());
            CellResult { cell, outcome }
        })
        .collect();
    write_pair(&base.output, &render_tsv(&cells), &render_jsonl(&cells))?;
    Ok(AblationReport {
        cells,
        output: base.output.clone(),
    })
}
